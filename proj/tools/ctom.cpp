// Copyright 2026 The ctom Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ctom: generate persuasion dialogues and evaluate dialogue corpora and
// persuader models. Run `ctom --help` for the subcommands.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "ctom/ctom.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<int> parallelism;
  std::optional<int> max_attempts;
  std::optional<std::uint64_t> seed;
  std::optional<bool> observer;
  std::optional<int> observer_max_rounds;
  bool capture_prompts = false;
  std::string audit_log;
  std::string prompts_dir;
  std::string prompt_variant;
  bool no_verify = false;
  bool oracle = false;
};

ctom::Config resolve_config(const Overrides& o) {
  ctom::Config c = o.config_path.empty() ? ctom::Config{} : ctom::load_config(o.config_path);
  if (o.parallelism) c.parallelism = *o.parallelism;
  if (o.max_attempts) c.max_attempts = *o.max_attempts;
  if (o.seed) c.seed = *o.seed;
  if (o.observer) c.observer_enabled = *o.observer;
  if (o.observer_max_rounds) c.observer_max_rounds = *o.observer_max_rounds;
  if (o.capture_prompts) c.capture_prompts = true;
  if (!o.audit_log.empty()) c.audit_log = o.audit_log;
  if (!o.prompts_dir.empty()) c.prompts_dir = o.prompts_dir;
  if (!o.prompt_variant.empty()) {
    auto v = ctom::parse_prompt_variant(o.prompt_variant);
    if (!v) throw ctom::ConfigError("--prompt-variant must be verbatim or corrected");
    c.prompt_variant = *v;
  }
  if (o.no_verify) c.verify_checksums = false;
  if (o.oracle) c.ctom_oracle_mode = true;
  ctom::validate_config(c);
  return c;
}

std::set<std::string> parse_metrics(const std::string& csv) {
  std::set<std::string> out;
  std::stringstream ss(csv);
  for (std::string m; std::getline(ss, m, ',');) {
    m = ctom::text::trim(m);
    if (m == "ctom") m = "ctom_eval";
    if (!m.empty()) out.insert(m);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate and evaluate persuasion dialogues with explicit beliefs and desires"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--parallelism", o.parallelism, "Records processed concurrently");
  app.add_option("--max-attempts", o.max_attempts, "Calls per generation step before rejecting a record");
  app.add_option("--seed", o.seed, "Seed for sampling and splits");
  app.add_option("--observer-max-rounds", o.observer_max_rounds, "Observer reviews per reviewed step");
  app.add_flag("--observer,!--no-observer", o.observer, "Enable or disable the observer");
  app.add_flag("--capture-prompts", o.capture_prompts, "Write every prompt to <out>.prompts.jsonl");
  app.add_option("--audit-log", o.audit_log, "Append one line per backend attempt to this file");
  app.add_option("--prompts-dir", o.prompts_dir, "Template directory");
  app.add_option("--prompt-variant", o.prompt_variant, "verbatim (default) or corrected");
  app.add_flag("--no-verify-checksums", o.no_verify, "Skip template checksum verification");
  app.add_flag("--ctom-oracle", o.oracle, "Causal ToM eval uses the recorded mental state");

  std::string input, output, report, counts_path, train_path, test_path, metrics, prompts_path, trace_path, dir;
  bool as_json = false;

  auto* gen_states = app.add_subcommand("gen-states", "Scenarios -> scenario + mental state");
  gen_states->add_option("scenarios", input, "Scenario file")->required()->check(CLI::ExistingFile);
  gen_states->add_option("-o,--out", output, "Output states file (appended, resumable)")->required();

  auto* gen_dialogues = app.add_subcommand("gen-dialogues", "States -> dialogue corpus");
  gen_dialogues->add_option("states", input, "States file")->required()->check(CLI::ExistingFile);
  gen_dialogues->add_option("-o,--out", output, "Output corpus (appended, resumable)")->required();

  auto* eval_dataset = app.add_subcommand("eval-dataset", "Quality, direct prompting and causal ToM metrics");
  eval_dataset->add_option("corpus", input, "Corpus file")->required()->check(CLI::ExistingFile);
  eval_dataset->add_option("-o,--report", report, "JSON report path");
  eval_dataset->add_option("--metrics", metrics,
                           "Comma-separated subset of context_coherence,logical_coherence,helpfulness,"
                           "direct_prompting,ctom");

  auto* eval_fixed = app.add_subcommand("eval-model-fixed", "Persuader model against fixed dialogue prefixes");
  eval_fixed->add_option("corpus", input, "Corpus file")->required()->check(CLI::ExistingFile);
  eval_fixed->add_option("-o,--report", report, "JSON report path");

  auto* eval_dynamic = app.add_subcommand("eval-model-dynamic", "Persuader model against a live persuadee");
  eval_dynamic->add_option("corpus", input, "Corpus or states file")->required()->check(CLI::ExistingFile);
  eval_dynamic->add_option("-o,--report", report, "JSON report path");

  auto* stats = app.add_subcommand("stats", "Records per domain");
  stats->add_option("corpus", input, "Corpus, states or scenario file")->required()->check(CLI::ExistingFile);
  stats->add_flag("--json", as_json, "Machine-readable output");

  auto* split = app.add_subcommand("split", "Stratified train/test split");
  split->add_option("input", input, "Corpus, states or scenario file")->required()->check(CLI::ExistingFile);
  split->add_option("--counts", counts_path, "JSON object of per-domain test counts (default: reference counts)")
      ->check(CLI::ExistingFile);
  split->add_option("--train", train_path, "Train output")->required();
  split->add_option("--test", test_path, "Test output")->required();

  auto* dedupe = app.add_subcommand("dedupe", "Drop repeated scenarios (same background and goal)");
  dedupe->add_option("input", input, "Input file")->required()->check(CLI::ExistingFile);
  dedupe->add_option("-o,--out", output, "Output file")->required();

  auto* audit = app.add_subcommand("audit", "Check captured prompts for persuader/persuadee leaks");
  audit->add_option("corpus", input, "Corpus generated with --capture-prompts")->required()->check(CLI::ExistingFile);
  audit->add_option("--prompts", prompts_path, "Prompt capture (default <corpus>.prompts.jsonl)");
  audit->add_option("--trace", trace_path, "Trace sidecar (default <corpus>.trace.jsonl)");

  auto* prompts = app.add_subcommand("prompts", "Template library maintenance");
  prompts->require_subcommand(1);
  auto* prompts_check = prompts->add_subcommand("check", "Verify template files against the manifest");
  auto* prompts_rehash = prompts->add_subcommand("rehash", "Rewrite manifest checksums from the files");
  for (auto* sub : {prompts_check, prompts_rehash}) sub->add_option("--dir", dir, "Template directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve_config(o);

    if (*stats) {
      ctom::stats(input, std::cout, as_json);
      return 0;
    }
    if (*split) {
      const auto counts = counts_path.empty() ? ctom::reference_test_counts() : ctom::read_counts(counts_path);
      const auto s = ctom::split_file(input, counts, config.seed, train_path, test_path);
      std::cerr << "split: " << s.train.size() << " train, " << s.test.size() << " test\n";
      return 0;
    }
    if (*dedupe) {
      std::cerr << "dedupe: kept " << ctom::dedupe_file(input, output) << "\n";
      return 0;
    }
    if (*audit) {
      const auto findings = ctom::audit_corpus(
          input, prompts_path.empty() ? ctom::sidecar(input, ".prompts.jsonl") : std::filesystem::path(prompts_path),
          trace_path.empty() ? ctom::sidecar(input, ".trace.jsonl") : std::filesystem::path(trace_path));
      for (const auto& f : findings) {
        std::cout << f.dialogue_id << "\t" << f.step << "\t" << f.field << "\t" << f.sentence << "\n";
      }
      std::cerr << "audit: " << findings.size() << " leak(s)\n";
      return findings.empty() ? 0 : 1;
    }
    if (*prompts) {
      const std::filesystem::path d = dir.empty() ? ctom::prompts_dir_of(config) : std::filesystem::path(dir);
      if (*prompts_rehash) {
        ctom::rehash_manifest(d);
        std::cerr << "prompts: manifest updated\n";
        return 0;
      }
      bool ok = true;
      for (const auto& m : ctom::check_manifest(d)) {
        if (m.ok()) continue;
        ok = false;
        std::cout << "mismatch\t" << m.id << "\t" << m.file << "\texpected " << m.expected << "\tactual "
                  << (m.actual.empty() ? "(missing)" : m.actual) << "\n";
      }
      std::cerr << "prompts: " << (ok ? "ok" : "FAILED") << "\n";
      return ok ? 0 : 1;
    }

    auto rt = ctom::make_runtime(config);
    if (*gen_states) {
      ctom::gen_states(rt, input, output);
    } else if (*gen_dialogues) {
      ctom::gen_dialogues(rt, input, output);
    } else if (*eval_dataset) {
      ctom::eval_dataset(rt, input, report, parse_metrics(metrics));
    } else if (*eval_fixed) {
      ctom::eval_model_fixed(rt, input, report);
    } else if (*eval_dynamic) {
      ctom::eval_model_dynamic(rt, input, report);
    }
    return 0;
  } catch (const ctom::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
