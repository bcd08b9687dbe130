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

// Batch commands behind the `ctom` tool. Each takes a Runtime (config,
// prompts, gateways) so tests can inject scripted gateways.
//
// Generation commands are resumable: input scenarios whose key already
// appears in the output file are skipped, counting duplicates. Failed
// records go to `<out>.rejects.jsonl` and are retried on the next run.

#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctom/batch.hpp"
#include "ctom/config.hpp"
#include "ctom/dataset_io.hpp"
#include "ctom/dialogue_engine.hpp"
#include "ctom/errors.hpp"
#include "ctom/evaluator.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/prompt_library.hpp"

namespace ctom {

struct Runtime {
  Config config;
  PromptLibrary prompts;
  GatewaySet gateways;
  /// Progress, warnings and summaries.
  std::ostream* log = &std::cerr;
};

inline std::filesystem::path prompts_dir_of(const Config& c) {
  return c.prompts_dir.empty() ? default_prompts_dir() : std::filesystem::path(c.prompts_dir);
}

inline Runtime make_runtime(Config config, std::shared_ptr<Clock> clock = system_clock()) {
  auto prompts = PromptLibrary::load(prompts_dir_of(config), config.prompt_variant, config.verify_checksums);
  auto gateways = build_gateways(config, std::move(clock));
  return Runtime{std::move(config), std::move(prompts), std::move(gateways)};
}

struct BatchSummary {
  std::size_t inputs = 0;
  std::size_t skipped = 0;
  std::size_t written = 0;
  std::size_t rejected = 0;
  std::size_t warnings = 0;
};

inline std::filesystem::path sidecar(const std::filesystem::path& out, std::string_view suffix) {
  return out.string() + std::string(suffix);
}

namespace detail {

/// Scenario keys already present in an output file, as a multiset.
inline std::multiset<std::string> existing_keys(const std::filesystem::path& out) {
  std::multiset<std::string> keys;
  if (!std::filesystem::exists(out)) return keys;
  for (const auto& [where, j] : read_json_values(read_text_file(out), out.string())) {
    located(where, [&] {
      keys.insert(scenario_key(scenario_from_json(member(j, "scenario", ""))));
      return 0;
    });
  }
  return keys;
}

/// Input indices still to process.
inline std::vector<std::size_t> pending_indices(const std::vector<Scenario>& inputs, std::multiset<std::string> done,
                                                BatchSummary& summary) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto it = done.find(scenario_key(inputs[i]));
    if (it != done.end()) {
      done.erase(it);
      ++summary.skipped;
    } else {
      todo.push_back(i);
    }
  }
  return todo;
}

inline std::string reject_line(std::size_t index, const Scenario& s, const std::string& stage, const std::string& error,
                               const std::string& last_raw) {
  return ojson{{"index", index}, {"tag", s.tag}, {"stage", stage}, {"error", error}, {"last_output", last_raw}}.dump();
}

/// Lazily opened output file.
class LazyWriter {
 public:
  explicit LazyWriter(std::filesystem::path path) : path_(std::move(path)) {}
  void write_line(std::string_view line) {
    if (!writer_) writer_ = std::make_unique<AppendWriter>(path_);
    writer_->write_line(line);
  }

 private:
  std::filesystem::path path_;
  std::unique_ptr<AppendWriter> writer_;
};

/// Per-record outcome of a generation step.
template <class T>
struct Outcome {
  std::optional<T> value;
  std::string stage;
  std::string error;
  std::string last_raw;
  std::vector<std::string> warnings;
  std::vector<CapturedPrompt> prompts;
};

/// Runs `f`; record-level failures become a rejected Outcome. ConfigError
/// stays fatal.
template <class T, class F>
Outcome<T> attempt_record(F&& f) {
  Outcome<T> out;
  try {
    out.value = f(out);
  } catch (const ConfigError&) {
    throw;
  } catch (const GenerationFailed& e) {
    out.stage = e.stage();
    out.error = e.what();
    out.last_raw = e.last_raw();
  } catch (const Error& e) {
    out.stage = "request";
    out.error = e.what();
  }
  return out;
}

inline void report_usage(std::ostream& log, const GatewaySet& gateways) {
  for (const auto& [role, u] : gateways.usage()) {
    if (u.total() == 0) continue;
    log << "  tokens[" << role << "]: prompt=" << u.prompt_tokens << " completion=" << u.completion_tokens << "\n";
  }
}

inline void report_batch(std::ostream& log, std::string_view command, const BatchSummary& s,
                         const GatewaySet& gateways) {
  log << command << ": " << s.inputs << " inputs, " << s.skipped << " already done, " << s.written << " written, "
      << s.rejected << " rejected";
  if (s.warnings) log << ", " << s.warnings << " warnings";
  log << "\n";
  report_usage(log, gateways);
}

inline RequestObserver capture_into(std::vector<CapturedPrompt>* sink, const std::string& dialogue_id) {
  if (!sink) return {};
  return [sink, dialogue_id](const CompletionRequest& r) {
    sink->push_back({dialogue_id, r.request_tag, r.prompt_text()});
  };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generation

/// Scenarios -> states file (scenario + behaviors with beliefs and desires).
inline BatchSummary gen_states(const Runtime& rt, const std::filesystem::path& scenarios_path,
                               const std::filesystem::path& out_path) {
  const auto scenarios = read_scenarios(scenarios_path);
  BatchSummary summary;
  summary.inputs = scenarios.size();
  const auto todo = detail::pending_indices(scenarios, detail::existing_keys(out_path), summary);

  AppendWriter out(out_path);
  detail::LazyWriter rejects(sidecar(out_path, ".rejects.jsonl"));
  detail::LazyWriter prompts_out(sidecar(out_path, ".prompts.jsonl"));
  const auto& gw = rt.gateways.get(roles::mental_state);

  using Result = detail::Outcome<MentalState>;
  run_ordered<Result>(
      todo.size(), rt.config.parallelism,
      [&](std::size_t j) {
        const auto i = todo[j];
        return detail::attempt_record<MentalState>([&](Result& o) {
          MentalStateOptions opts;
          opts.max_attempts = rt.config.max_attempts;
          opts.scope = "item-" + std::to_string(i);
          opts.warnings = &o.warnings;
          opts.on_request = detail::capture_into(rt.config.capture_prompts ? &o.prompts : nullptr, opts.scope);
          return generate_mental_state(rt.prompts, scenarios[i], gw, opts);
        });
      },
      [&](std::size_t j, Result&& r) {
        const auto i = todo[j];
        for (const auto& p : r.prompts) prompts_out.write_line(p.to_json().dump());
        for (const auto& w : r.warnings) *rt.log << "warning: item " << i << ": " << w << "\n";
        summary.warnings += r.warnings.size();
        if (r.value) {
          out.write_line(serialize_state(scenarios[i], *r.value));
          ++summary.written;
        } else {
          rejects.write_line(detail::reject_line(i, scenarios[i], r.stage, r.error, r.last_raw));
          *rt.log << "rejected: item " << i << ": " << r.error << "\n";
          ++summary.rejected;
        }
      });
  detail::report_batch(*rt.log, "gen-states", summary, rt.gateways);
  return summary;
}

/// States file -> dialogue corpus, with a trace sidecar keyed by the
/// record's line number and, when enabled, a prompt-capture sidecar.
inline BatchSummary gen_dialogues(const Runtime& rt, const std::filesystem::path& states_path,
                                  const std::filesystem::path& out_path) {
  const auto states = read_states(states_path);
  std::vector<Scenario> scenarios;
  for (const auto& s : states) scenarios.push_back(s.scenario);
  BatchSummary summary;
  summary.inputs = states.size();
  const auto existing = detail::existing_keys(out_path);
  std::size_t ordinal = existing.size();
  const auto todo = detail::pending_indices(scenarios, existing, summary);

  AppendWriter out(out_path);
  detail::LazyWriter traces(sidecar(out_path, ".trace.jsonl"));
  detail::LazyWriter rejects(sidecar(out_path, ".rejects.jsonl"));
  detail::LazyWriter prompts_out(sidecar(out_path, ".prompts.jsonl"));

  DialogueAgents agents;
  agents.persuader = &rt.gateways.get(roles::persuader);
  agents.persuadee = &rt.gateways.get(roles::persuadee);
  if (rt.config.observer_enabled) agents.observer = &rt.gateways.get(roles::observer);

  using Result = detail::Outcome<DialogueRecord>;
  run_ordered<Result>(
      todo.size(), rt.config.parallelism,
      [&](std::size_t j) {
        const auto i = todo[j];
        return detail::attempt_record<DialogueRecord>([&](Result& o) {
          DialogueOptions opts;
          opts.max_attempts = rt.config.max_attempts;
          opts.observer_max_rounds = rt.config.observer_max_rounds;
          opts.observer_max_attempts = rt.config.observer_max_attempts;
          opts.scope = "item-" + std::to_string(i);
          opts.on_request = detail::capture_into(rt.config.capture_prompts ? &o.prompts : nullptr, "");
          return run_dialogue(rt.prompts, states[i].scenario, states[i].mental_state, agents, opts);
        });
      },
      [&](std::size_t j, Result&& r) {
        const auto i = todo[j];
        if (r.value) {
          const auto id = "record-" + std::to_string(ordinal);
          out.write_line(serialize_record(*r.value));
          traces.write_line(serialize_trace(ordinal, r.value->trace));
          for (auto& p : r.prompts) {
            p.dialogue_id = id;
            prompts_out.write_line(p.to_json().dump());
          }
          for (const auto& e : r.value->trace) {
            if (e.kind == TraceKind::warning) ++summary.warnings;
          }
          ++ordinal;
          ++summary.written;
        } else {
          rejects.write_line(detail::reject_line(i, states[i].scenario, r.stage, r.error, r.last_raw));
          *rt.log << "rejected: item " << i << ": " << r.error << "\n";
          ++summary.rejected;
        }
      });
  detail::report_batch(*rt.log, "gen-dialogues", summary, rt.gateways);
  return summary;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Reads dialogues for evaluation. Unlike read_corpus this accepts any
/// length and records without behaviors (their `truth` stays empty).
inline std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
  std::vector<Transcript> out;
  for (const auto& [where, j] : detail::read_json_values(read_text_file(path), path.string())) {
    out.push_back(detail::located(where, [&] {
      Transcript t;
      const auto& sj = detail::member(j, "scenario", "");
      t.scenario = scenario_from_json(sj);
      if (sj.contains("preventive") && sj.contains("generative")) {
        auto m = mental_state_from_json(sj);
        if (validate_mental_state(m).empty()) t.truth = std::move(m);
      }
      const auto& dialog = detail::member(j, "dialog", "");
      if (!dialog.is_array()) throw SchemaError("dialog", "expected an array");
      for (std::size_t i = 0; i < dialog.size(); ++i) {
        const auto p = "dialog[" + std::to_string(i) + "]";
        if (!dialog[i].is_string()) throw SchemaError(p, "expected a string");
        t.utterances.push_back(parse_dialog_line(dialog[i].get_ref<const std::string&>(), i, p));
      }
      if (t.utterances.empty()) throw InvariantError("dialog is empty");
      if (auto v = validate_utterances(t.utterances); !v.empty()) throw InvariantError(describe(v));
      return t;
    }));
  }
  return out;
}

namespace detail {

inline void write_report(const std::filesystem::path& path, const ojson& report) {
  if (path.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << report.dump(2) << "\n";
}

inline JudgeOptions judge_options(const Runtime& rt, std::size_t i, std::vector<CapturedPrompt>* capture = nullptr) {
  JudgeOptions o;
  o.max_attempts = rt.config.judge_max_attempts;
  o.scope = "item-" + std::to_string(i);
  o.on_request = capture_into(capture, o.scope);
  return o;
}

}  // namespace detail

inline MetricReport eval_dataset(const Runtime& rt, const std::filesystem::path& corpus_path,
                                 const std::filesystem::path& report_path, const std::set<std::string>& metrics = {}) {
  for (const auto& m : metrics) {
    if (std::find(kDatasetMetrics.begin(), kDatasetMetrics.end(), m) == kDatasetMetrics.end()) {
      throw ConfigError("unknown metric '" + m + "'");
    }
  }
  const auto transcripts = read_transcripts(corpus_path);
  const auto& judge = rt.gateways.get(roles::judge);
  std::vector<DatasetRecordResult> results;
  run_ordered<DatasetRecordResult>(
      transcripts.size(), rt.config.parallelism,
      [&](std::size_t i) {
        DatasetEvalOptions o;
        o.judge = detail::judge_options(rt, i);
        o.ctom_oracle_mode = rt.config.ctom_oracle_mode;
        o.metrics = metrics;
        return evaluate_dataset_record(rt.prompts, judge, transcripts[i], i, o);
      },
      [&](std::size_t, DatasetRecordResult&& r) { results.push_back(std::move(r)); });
  auto report = aggregate_dataset(std::move(results));
  detail::write_report(report_path, to_json(report));
  *rt.log << render_table(report, corpus_path.filename().string());
  detail::report_usage(*rt.log, rt.gateways);
  return report;
}

inline FixedReport eval_model_fixed(const Runtime& rt, const std::filesystem::path& corpus_path,
                                    const std::filesystem::path& report_path) {
  const auto transcripts = read_transcripts(corpus_path);
  const auto& model = rt.gateways.get(roles::model);
  const auto& judge = rt.gateways.get(roles::judge);
  std::vector<FixedRecordResult> results;
  run_ordered<FixedRecordResult>(
      transcripts.size(), rt.config.parallelism,
      [&](std::size_t i) {
        ModelEvalOptions o;
        o.judge = detail::judge_options(rt, i);
        o.max_attempts = rt.config.max_attempts;
        return fixed_persuadee_record(rt.prompts, model, judge, transcripts[i], i, o);
      },
      [&](std::size_t, FixedRecordResult&& r) { results.push_back(std::move(r)); });
  auto report = aggregate_fixed(std::move(results));
  detail::write_report(report_path, to_json(report));
  *rt.log << render_table(report, rt.config.role(roles::model).model_id);
  detail::report_usage(*rt.log, rt.gateways);
  return report;
}

inline DynamicReport eval_model_dynamic(const Runtime& rt, const std::filesystem::path& corpus_path,
                                        const std::filesystem::path& report_path) {
  const auto transcripts = read_transcripts(corpus_path);
  const auto& model = rt.gateways.get(roles::model);
  const auto& persuadee = rt.gateways.get(roles::arena_persuadee);
  const auto& judge = rt.gateways.get(roles::judge);
  std::vector<DynamicRecordResult> results;
  run_ordered<DynamicRecordResult>(
      transcripts.size(), rt.config.parallelism,
      [&](std::size_t i) {
        ModelEvalOptions o;
        o.judge = detail::judge_options(rt, i);
        o.max_attempts = rt.config.max_attempts;
        return dynamic_persuadee_record(rt.prompts, model, persuadee, judge, transcripts[i], i, o);
      },
      [&](std::size_t, DynamicRecordResult&& r) { results.push_back(std::move(r)); });
  auto report = aggregate_dynamic(std::move(results));
  detail::write_report(report_path, to_json(report));
  *rt.log << render_table(report, rt.config.role(roles::model).model_id);
  detail::report_usage(*rt.log, rt.gateways);
  return report;
}

// ---------------------------------------------------------------------------
// Corpus utilities

/// Domain counts of any of our files: corpus, states or scenario lists.
inline std::map<std::string, std::size_t> stats(const std::filesystem::path& corpus_path, std::ostream& out,
                                                bool as_json = false) {
  const auto scenarios = read_scenarios(corpus_path);
  const auto counts = domain_stats(scenarios);
  if (as_json) {
    ojson j = {{"records", scenarios.size()}, {"domains", ojson::object()}};
    for (const auto& [d, n] : counts) j["domains"][d] = n;
    out << j.dump(2) << "\n";
  } else {
    out << domain_stats_table(counts, scenarios.size());
  }
  return counts;
}

/// Keeps the first record per scenario key; writes records unchanged.
inline std::size_t dedupe_file(const std::filesystem::path& in, const std::filesystem::path& out_path) {
  std::set<std::string> seen;
  std::vector<std::string> kept;
  for (const auto& [where, j] : detail::read_json_values(read_text_file(in), in.string())) {
    const auto s = detail::located(where, [&] {
      const bool wrapped = j.is_object() && j.contains("scenario");
      return scenario_from_json(wrapped ? j["scenario"] : j, wrapped ? "scenario" : "");
    });
    if (seen.insert(scenario_key(s)).second) kept.push_back(j.dump());
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + out_path.string());
  for (const auto& line : kept) out << line << "\n";
  return kept.size();
}

/// Per-domain test counts from a JSON object file {"Domain": n, ...}.
inline std::map<std::string, std::size_t> read_counts(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_text_file(path));
  std::map<std::string, std::size_t> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number_unsigned()) throw SchemaError(k, "expected a non-negative integer");
    out[k] = v.get<std::size_t>();
  }
  return out;
}

/// Writes the test and train halves of a file, records unchanged.
inline Split split_file(const std::filesystem::path& in, const std::map<std::string, std::size_t>& counts,
                        std::uint64_t seed, const std::filesystem::path& train_path,
                        const std::filesystem::path& test_path) {
  std::vector<Scenario> scenarios;
  std::vector<std::string> lines;
  for (const auto& [where, j] : detail::read_json_values(read_text_file(in), in.string())) {
    scenarios.push_back(detail::located(where, [&] {
      const bool wrapped = j.is_object() && j.contains("scenario");
      return scenario_from_json(wrapped ? j["scenario"] : j, wrapped ? "scenario" : "");
    }));
    lines.push_back(j.dump());
  }
  auto split = stratified_split(scenarios, counts, seed);
  auto write = [&](const std::filesystem::path& p, const std::vector<std::size_t>& idx) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    for (auto i : idx) out << lines[i] << "\n";
  };
  write(train_path, split.train);
  write(test_path, split.test);
  return split;
}

/// Checks a generated corpus against its prompt-capture and trace
/// sidecars. Returns every finding.
inline std::vector<LeakFinding> audit_corpus(const std::filesystem::path& corpus_path,
                                             const std::filesystem::path& prompts_path,
                                             const std::filesystem::path& trace_path) {
  auto records = read_corpus(corpus_path);
  const auto traces = read_traces(trace_path);
  std::map<std::string, std::vector<CapturedPrompt>> by_dialogue;
  for (const auto& [where, j] : detail::read_json_values(read_text_file(prompts_path), prompts_path.string())) {
    auto c = CapturedPrompt::from_json(j);
    by_dialogue[c.dialogue_id].push_back(std::move(c));
  }
  std::vector<LeakFinding> findings;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (auto it = traces.find(i); it != traces.end()) records[i].trace = it->second;
    const auto id = "record-" + std::to_string(i);
    for (auto& f : audit_double_blind(records[i], by_dialogue[id])) findings.push_back(std::move(f));
  }
  return findings;
}

}  // namespace ctom
