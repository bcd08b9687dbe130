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

// Dataset metrics (three quality scores, direct prompting, causal ToM
// verdicts) and the two persuader-model protocols: a fixed persuadee scored
// against the reference turn, and a live persuadee driven by the record's
// mental state.
//
// Per-record functions never throw for judge trouble; they record the
// metric as excluded. Aggregates only count records that produced a value.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctom/agent_call.hpp"
#include "ctom/core_types.hpp"
#include "ctom/dialogue_prompts.hpp"
#include "ctom/errors.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/rouge.hpp"
#include "ctom/text.hpp"

namespace ctom {

// ---------------------------------------------------------------------------
// Causal ToM verdicts

/// Preventive flags are empty when the dialogue has no preventive behavior.
struct CToMFlags {
  std::optional<bool> preventive_belief_altered;
  std::optional<bool> preventive_desire_altered;
  bool generative_belief_addressed = false;
  bool generative_desire_addressed = false;
};

/// Persuaded iff the preventive behavior is absent or one of its reasons was
/// altered, and both generative reasons were addressed.
inline bool combine_ctom(const CToMFlags& f, bool has_preventive) {
  bool preventive_ok = true;
  if (has_preventive) {
    if (!f.preventive_belief_altered || !f.preventive_desire_altered) {
      throw InvariantError("preventive flags are required when a preventive behavior is present");
    }
    preventive_ok = *f.preventive_belief_altered || *f.preventive_desire_altered;
  }
  return preventive_ok && f.generative_belief_addressed && f.generative_desire_addressed;
}

struct CToMVerdict {
  CToMFlags flags;
  bool has_preventive = false;
  bool persuaded = false;

  static CToMVerdict of(const CToMFlags& flags, bool has_preventive) {
    return {flags, has_preventive, combine_ctom(flags, has_preventive)};
  }
};

// ---------------------------------------------------------------------------
// Aggregates

/// Yes/no rate over the records that produced a verdict.
struct Tally {
  std::size_t hits = 0;
  std::size_t denominator = 0;
  std::size_t excluded = 0;

  void add(bool hit) {
    ++denominator;
    if (hit) ++hits;
  }
  /// Percentage in [0, 100]; empty when nothing was counted.
  std::optional<double> percent() const {
    if (denominator == 0) return std::nullopt;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(denominator);
  }
};

/// Mean of the values that were produced. Values are summed in sorted order
/// so the result does not depend on record order.
struct Mean {
  std::vector<double> values;
  std::size_t excluded = 0;

  void add(double v) { values.push_back(v); }
  std::size_t count() const noexcept { return values.size(); }
  std::optional<double> value() const {
    if (values.empty()) return std::nullopt;
    auto sorted = values;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    return sum / static_cast<double>(sorted.size());
  }
};

inline nlohmann::ordered_json to_json(const Tally& t) {
  auto p = t.percent();
  return {{"percent", p ? nlohmann::json(*p) : nlohmann::json(nullptr)},
          {"hits", t.hits},
          {"denominator", t.denominator},
          {"excluded", t.excluded}};
}

inline nlohmann::ordered_json to_json(const Mean& m) {
  auto v = m.value();
  return {{"mean", v ? nlohmann::json(*v) : nlohmann::json(nullptr)}, {"n", m.count()}, {"excluded", m.excluded}};
}

// ---------------------------------------------------------------------------
// Judge plumbing

/// A dialogue to evaluate. `truth` is set when the mental state is known.
struct Transcript {
  Scenario scenario;
  std::vector<Utterance> utterances;
  std::optional<MentalState> truth;

  static Transcript of(const DialogueRecord& r) { return {r.scenario, r.utterances, r.mental_state}; }
};

struct JudgeOptions {
  /// Judge calls per verdict; the default allows one retry.
  int max_attempts = 2;
  std::string scope;
  RequestObserver on_request;
};

/// Reads "Score: k" and checks the scale.
inline int parse_score(std::string_view output, int lo, int hi) {
  static const std::regex kScore(R"(score\s*[:=]\s*\**\s*(-?\d+))", std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(output.begin(), output.end(), m, kScore)) {
    throw ParseError("missing 'Score: <k>' line", std::string(output));
  }
  const int k = std::stoi(m[1].str());
  if (k < lo || k > hi) {
    throw ParseError("score " + std::to_string(k) + " outside " + std::to_string(lo) + ".." + std::to_string(hi),
                     std::string(output));
  }
  return k;
}

/// Reads "Answer: yes" / "Answer: no".
inline bool parse_yes_no(std::string_view output) {
  static const std::regex kAnswer(R"(answer\s*:\s*\**\s*(yes|no)\b)", std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(output.begin(), output.end(), m, kAnswer)) {
    throw ParseError("missing 'Answer: yes/no' line", std::string(output));
  }
  return text::iequals(m[1].str(), "yes");
}

/// One judge verdict with retry. Throws JudgeUnparseable once attempts run
/// out.
template <class Parse>
auto judge_call(const Gateway& judge, const PromptLibrary& prompts, std::string_view tag, std::string prompt,
                const JudgeOptions& options, std::string format, Parse&& parse) {
  RepairOptions repair;
  repair.max_attempts = options.max_attempts;
  repair.stage = "judge." + std::string(tag);
  repair.format = std::move(format);
  repair.on_request = options.on_request;
  try {
    return call_with_repair(judge, make_prompt_request(std::string(tag), std::move(prompt), options.scope), prompts,
                            repair, std::forward<Parse>(parse));
  } catch (const GenerationFailed& e) {
    throw JudgeUnparseable(e.what());
  }
}

namespace detail {

/// Runs `f` and records judge-side failures in `excluded[metric]` instead of
/// throwing. Anything else, e.g. an exhausted test script, propagates.
template <class F>
bool excludable(std::map<std::string, std::string>& excluded, const std::string& metric, F&& f) {
  try {
    f();
    return true;
  } catch (const JudgeUnparseable& e) {
    excluded[metric] = std::string("unparseable: ") + e.what();
  } catch (const GenerationFailed& e) {
    excluded[metric] = std::string("generation failed: ") + e.what();
  } catch (const TransportError& e) {
    excluded[metric] = std::string("transport: ") + e.what();
  } catch (const BackendRefusal& e) {
    excluded[metric] = std::string("refused: ") + e.what();
  }
  return false;
}

}  // namespace detail

inline Slots transcript_slots(const Transcript& t) {
  return {{"background", t.scenario.background},
          {"persuadee", t.scenario.persuadee_name},
          {"persuader", t.scenario.persuader_name},
          {"goal", t.scenario.goal},
          {"dialog", format_dialog(t.utterances)}};
}

inline void require_transcript(const Transcript& t) {
  if (t.utterances.empty()) throw InvariantError("transcript is empty");
}

// ---------------------------------------------------------------------------
// Dataset metrics

enum class QualityMetric { context_coherence, logical_coherence, helpfulness };

inline std::string_view to_string(QualityMetric m) noexcept {
  switch (m) {
    case QualityMetric::context_coherence: return "context_coherence";
    case QualityMetric::logical_coherence: return "logical_coherence";
    case QualityMetric::helpfulness: return "helpfulness";
  }
  return "unknown";
}

inline constexpr int kQualityMin = 1;
inline constexpr int kQualityMax = 5;
inline constexpr int kPersuasiveMin = 1;
inline constexpr int kPersuasiveMax = 10;

inline int judge_quality(const PromptLibrary& prompts, const Gateway& judge, const Transcript& t, QualityMetric metric,
                         const JudgeOptions& options = {}) {
  require_transcript(t);
  std::string_view id;
  switch (metric) {
    case QualityMetric::context_coherence: id = template_ids::judge_context_coherence; break;
    case QualityMetric::logical_coherence: id = template_ids::judge_logical_coherence; break;
    case QualityMetric::helpfulness: id = template_ids::judge_helpfulness; break;
  }
  return judge_call(judge, prompts, to_string(metric), prompts.render(id, transcript_slots(t)), options,
                    "Score: <integer from 1 to 5>",
                    [](const std::string& out) { return parse_score(out, kQualityMin, kQualityMax); });
}

inline constexpr std::string_view kDirectPromptingTag = "direct_prompting";

inline bool direct_prompting(const PromptLibrary& prompts, const Gateway& judge, const Transcript& t,
                             const JudgeOptions& options = {}) {
  require_transcript(t);
  auto slots = transcript_slots(t);
  return judge_call(judge, prompts, kDirectPromptingTag, prompts.render(template_ids::judge_direct_prompting, slots),
                    options, "Answer: yes / no", [](const std::string& out) { return parse_yes_no(out); });
}

inline constexpr std::string_view kCToMInferTag = "ctom_infer";

/// Stage one: the judge reads the transcript alone and writes down the
/// persuadee's mental state.
inline MentalState infer_mental_state(const PromptLibrary& prompts, const Gateway& judge, const Transcript& t,
                                      const JudgeOptions& options = {}) {
  require_transcript(t);
  return judge_call(judge, prompts, kCToMInferTag, prompts.render(template_ids::judge_ctom_infer, transcript_slots(t)),
                    options, "six lines: Preventive, Belief, Desire, Generative, Belief, Desire",
                    [](const std::string& out) { return parse_mental_state_lines(out); });
}

namespace detail {

struct ComponentQuestion {
  std::string_view tag;
  std::string component;
  std::string question;
};

inline bool judge_component(const PromptLibrary& prompts, const Gateway& judge, const Transcript& t,
                            const ComponentQuestion& q, const std::string& statement, const JudgeOptions& options) {
  auto slots = transcript_slots(t);
  slots["component"] = q.component;
  slots["statement"] = statement;
  slots["question"] = q.question;
  return judge_call(judge, prompts, q.tag, prompts.render(template_ids::judge_ctom_component, slots), options,
                    "Answer: yes / no", [](const std::string& out) { return parse_yes_no(out); });
}

}  // namespace detail

struct CToMEvalOptions {
  JudgeOptions judge;
  /// Use the transcript's known mental state instead of inferring one.
  bool oracle_mode = false;
};

/// Infers (or takes) the mental state, asks one yes/no question per
/// component and combines the answers. Throws JudgeUnparseable.
inline CToMVerdict ctom_eval(const PromptLibrary& prompts, const Gateway& judge, const Transcript& t,
                             const CToMEvalOptions& options = {}) {
  require_transcript(t);
  MentalState state;
  if (options.oracle_mode) {
    if (!t.truth) throw InvariantError("oracle mode needs the true mental state");
    state = *t.truth;
  } else {
    state = infer_mental_state(prompts, judge, t, options.judge);
  }
  const auto gen = state.generative.content.value_or("");
  CToMFlags flags;
  if (state.has_preventive()) {
    const auto prev = *state.preventive.content;
    flags.preventive_belief_altered = detail::judge_component(
        prompts, judge, t,
        {"ctom_prev_belief", "belief about what they wanted to do at first (" + prev + ")",
         "Did the persuader change this belief, so that it no longer holds the persuadee back?"},
        *state.preventive.belief, options.judge);
    flags.preventive_desire_altered = detail::judge_component(
        prompts, judge, t,
        {"ctom_prev_desire", "desire behind what they wanted to do at first (" + prev + ")",
         "Did the persuader change this desire, or show that it can be met another way?"},
        *state.preventive.desire, options.judge);
  }
  flags.generative_belief_addressed = detail::judge_component(
      prompts, judge, t,
      {"ctom_gen_belief", "belief about what the persuader wants them to do (" + gen + ")",
       "Did the persuader address this belief?"},
      state.generative.belief.value_or(""), options.judge);
  flags.generative_desire_addressed = detail::judge_component(
      prompts, judge, t,
      {"ctom_gen_desire", "desire about what the persuader wants them to do (" + gen + ")",
       "Did the persuader address this desire?"},
      state.generative.desire.value_or(""), options.judge);
  return CToMVerdict::of(flags, state.has_preventive());
}

inline constexpr std::array<std::string_view, 5> kDatasetMetrics = {
    "context_coherence", "logical_coherence", "helpfulness", "direct_prompting", "ctom_eval"};

struct DatasetEvalOptions {
  JudgeOptions judge;
  bool ctom_oracle_mode = false;
  /// Metrics to run, from kDatasetMetrics; empty runs all of them.
  std::set<std::string> metrics;

  bool wants(std::string_view metric) const { return metrics.empty() || metrics.count(std::string(metric)) > 0; }
};

struct DatasetRecordResult {
  std::size_t index = 0;
  std::map<std::string, int> scores;
  std::optional<bool> direct_prompting;
  std::optional<CToMVerdict> ctom;
  /// Metric name -> reason.
  std::map<std::string, std::string> excluded;
};

inline DatasetRecordResult evaluate_dataset_record(const PromptLibrary& prompts, const Gateway& judge,
                                                   const Transcript& t, std::size_t index,
                                                   const DatasetEvalOptions& options = {}) {
  DatasetRecordResult r;
  r.index = index;
  for (auto metric :
       {QualityMetric::context_coherence, QualityMetric::logical_coherence, QualityMetric::helpfulness}) {
    const std::string name(to_string(metric));
    if (!options.wants(name)) continue;
    detail::excludable(r.excluded, name,
                       [&] { r.scores[name] = judge_quality(prompts, judge, t, metric, options.judge); });
  }
  if (options.wants("direct_prompting")) {
    detail::excludable(r.excluded, "direct_prompting",
                       [&] { r.direct_prompting = direct_prompting(prompts, judge, t, options.judge); });
  }
  if (options.wants("ctom_eval")) {
    detail::excludable(r.excluded, "ctom_eval", [&] {
      r.ctom = ctom_eval(prompts, judge, t, {options.judge, options.ctom_oracle_mode});
    });
  }
  return r;
}

struct MetricReport {
  Mean context_coherence;
  Mean logical_coherence;
  Mean helpfulness;
  Tally direct_prompting;
  Tally ctom_eval;
  std::size_t n = 0;
  std::vector<DatasetRecordResult> records;
};

inline MetricReport aggregate_dataset(std::vector<DatasetRecordResult> records) {
  MetricReport rep;
  rep.n = records.size();
  auto mean_for = [&](Mean& m, const DatasetRecordResult& r, const char* name) {
    if (auto it = r.scores.find(name); it != r.scores.end()) {
      m.add(it->second);
    } else if (r.excluded.count(name)) {
      ++m.excluded;
    }
  };
  for (const auto& r : records) {
    mean_for(rep.context_coherence, r, "context_coherence");
    mean_for(rep.logical_coherence, r, "logical_coherence");
    mean_for(rep.helpfulness, r, "helpfulness");
    if (r.direct_prompting) {
      rep.direct_prompting.add(*r.direct_prompting);
    } else if (r.excluded.count("direct_prompting")) {
      ++rep.direct_prompting.excluded;
    }
    if (r.ctom) {
      rep.ctom_eval.add(r.ctom->persuaded);
    } else if (r.excluded.count("ctom_eval")) {
      ++rep.ctom_eval.excluded;
    }
  }
  rep.records = std::move(records);
  return rep;
}

/// Sequential convenience wrapper; the CLI parallelizes the per-record calls.
inline MetricReport evaluate_dataset(const PromptLibrary& prompts, const Gateway& judge,
                                     const std::vector<Transcript>& transcripts, const DatasetEvalOptions& options = {}) {
  std::vector<DatasetRecordResult> results;
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    auto o = options;
    if (o.judge.scope.empty()) o.judge.scope = "item-" + std::to_string(i);
    results.push_back(evaluate_dataset_record(prompts, judge, transcripts[i], i, o));
  }
  return aggregate_dataset(std::move(results));
}

// ---------------------------------------------------------------------------
// Fixed persuadee

/// Utterances kept as history; the next one is the persuader's
/// third-round turn and serves as the reference.
inline constexpr std::size_t kFixedHistory = 4;
inline constexpr std::string_view kFixedPersuaderTag = "fixed_persuader";
inline constexpr std::string_view kPersuasiveTag = "persuasive";

inline std::string next_turn_prompt(const PromptLibrary& prompts, const Scenario& s,
                                    const std::vector<Utterance>& history) {
  return prompts.render(template_ids::persuader_next_turn, {{"background", s.background},
                                                            {"persuadee", s.persuadee_name},
                                                            {"persuader", s.persuader_name},
                                                            {"goal", s.goal},
                                                            {"dialog", format_dialog(history)}});
}

inline int judge_persuasive(const PromptLibrary& prompts, const Gateway& judge, const Scenario& s,
                            const std::vector<Utterance>& history, const std::string& response,
                            const JudgeOptions& options = {}) {
  auto slots = transcript_slots(Transcript{s, history, std::nullopt});
  slots["response"] = response;
  return judge_call(judge, prompts, kPersuasiveTag, prompts.render(template_ids::judge_persuasive, slots), options,
                    "Score: <integer from 1 to 10>",
                    [](const std::string& out) { return parse_score(out, kPersuasiveMin, kPersuasiveMax); });
}

struct ModelEvalOptions {
  JudgeOptions judge;
  /// Calls allowed for each model-under-test or persuadee turn.
  int max_attempts = 3;
};

struct FixedRecordResult {
  std::size_t index = 0;
  std::string prediction;
  std::string reference;
  std::optional<RougeL> rouge;
  std::optional<int> persuasive;
  std::map<std::string, std::string> excluded;
};

inline FixedRecordResult fixed_persuadee_record(const PromptLibrary& prompts, const Gateway& model,
                                                const Gateway& judge, const Transcript& t, std::size_t index,
                                                const ModelEvalOptions& options = {}) {
  FixedRecordResult r;
  r.index = index;
  if (t.utterances.size() <= kFixedHistory || t.utterances[kFixedHistory].speaker != Speaker::persuader) {
    r.excluded["rouge_l"] = r.excluded["persuasive"] = "record is shorter than the fixed prefix";
    return r;
  }
  const std::vector<Utterance> history(t.utterances.begin(), t.utterances.begin() + kFixedHistory);
  r.reference = t.utterances[kFixedHistory].text;
  detail::excludable(r.excluded, "model", [&] {
    RepairOptions repair;
    repair.max_attempts = options.max_attempts;
    repair.stage = "fixed.model";
    repair.format = "only the persuader's next utterance, as plain text.";
    repair.on_request = options.judge.on_request;
    r.prediction = call_with_repair(
        model,
        make_prompt_request(std::string(kFixedPersuaderTag), next_turn_prompt(prompts, t.scenario, history),
                            options.judge.scope),
        prompts, repair, [](const std::string& out) { return parse_utterance_output(out); });
  });
  if (r.excluded.count("model")) {
    r.excluded["rouge_l"] = r.excluded["persuasive"] = r.excluded["model"];
    return r;
  }
  try {
    r.rouge = rouge_l(r.prediction, r.reference);
  } catch (const EmptyReference& e) {
    r.excluded["rouge_l"] = e.what();
  }
  detail::excludable(r.excluded, "persuasive", [&] {
    r.persuasive = judge_persuasive(prompts, judge, t.scenario, history, r.prediction, options.judge);
  });
  return r;
}

struct FixedReport {
  Mean rouge_l_f1;
  Mean persuasive;
  std::size_t n = 0;
  std::vector<FixedRecordResult> records;
};

inline FixedReport aggregate_fixed(std::vector<FixedRecordResult> records) {
  FixedReport rep;
  rep.n = records.size();
  for (const auto& r : records) {
    if (r.rouge) {
      rep.rouge_l_f1.add(r.rouge->f1);
    } else {
      ++rep.rouge_l_f1.excluded;
    }
    if (r.persuasive) {
      rep.persuasive.add(*r.persuasive);
    } else {
      ++rep.persuasive.excluded;
    }
  }
  rep.records = std::move(records);
  return rep;
}

// ---------------------------------------------------------------------------
// Dynamic persuadee

inline constexpr std::string_view kArenaPersuaderTag = "arena_persuader";

struct DynamicRecordResult {
  std::size_t index = 0;
  std::vector<Utterance> dialogue;
  std::optional<int> persuasive;
  std::optional<bool> preventive_satisfied;
  std::optional<bool> generative_belief_satisfied;
  std::optional<bool> generative_desire_satisfied;
  std::optional<bool> ctom;
  std::map<std::string, std::string> excluded;

  std::optional<bool> generative_satisfied() const {
    if (!generative_belief_satisfied || !generative_desire_satisfied) return std::nullopt;
    return *generative_belief_satisfied && *generative_desire_satisfied;
  }
};

/// Plays the model under test against a persuadee that follows the record's
/// mental state. Same length as a generated dialogue (8 or 6 turns).
inline std::vector<Utterance> run_arena(const PromptLibrary& prompts, const Gateway& persuader_model,
                                        const Gateway& persuadee, const Scenario& s, const MentalState& state,
                                        const ModelEvalOptions& options = {}) {
  std::vector<Utterance> dialogue;
  for (auto k : plan_script(state.has_preventive())) {
    if (is_prediction(k)) continue;
    RepairOptions repair;
    repair.max_attempts = options.max_attempts;
    repair.format = "only the next utterance, as plain text.";
    repair.on_request = options.judge.on_request;
    std::string out;
    auto parse = [](const std::string& o) { return parse_utterance_output(o); };
    if (owner(k) == Speaker::persuader) {
      repair.stage = "arena.persuader";
      out = call_with_repair(persuader_model,
                             make_prompt_request(std::string(kArenaPersuaderTag), next_turn_prompt(prompts, s, dialogue),
                                                 options.judge.scope),
                             prompts, repair, parse);
    } else {
      repair.stage = "arena." + std::string(to_string(k));
      out = call_with_repair(persuadee,
                             make_prompt_request(std::string(to_string(k)),
                                                 assemble_persuadee_prompt(prompts, k, s, state, dialogue),
                                                 options.judge.scope),
                             prompts, repair, parse);
    }
    dialogue.push_back(make_utterance(owner(k), out, dialogue.size()));
  }
  return dialogue;
}

namespace detail {

inline bool judge_satisfaction(const PromptLibrary& prompts, const Gateway& judge, std::string_view id,
                               std::string_view tag, const Scenario& s, const MentalState& state,
                               const std::vector<Utterance>& dialogue, const JudgeOptions& options) {
  Slots slots = {{"persuadee", s.persuadee_name},
                 {"preventive", format_behavior_inline(state.preventive)},
                 {"generative", format_behavior_inline(state.generative)},
                 {"background", s.background},
                 {"goal", s.goal},
                 {"dialog", format_dialog(dialogue)}};
  return judge_call(judge, prompts, tag, prompts.render(id, slots), options, "Answer: yes / no",
                    [](const std::string& out) { return parse_yes_no(out); });
}

}  // namespace detail

/// Runs the arena and judges it. Persuasive scores the final persuader turn
/// given everything said before it.
inline DynamicRecordResult dynamic_persuadee_record(const PromptLibrary& prompts, const Gateway& persuader_model,
                                                    const Gateway& persuadee, const Gateway& judge,
                                                    const Transcript& t, std::size_t index,
                                                    const ModelEvalOptions& options = {}) {
  DynamicRecordResult r;
  r.index = index;
  static constexpr std::array<const char*, 5> kAll = {"persuasive", "preventive_satisfaction",
                                                      "generative_belief_satisfaction",
                                                      "generative_desire_satisfaction", "ctom"};
  if (!t.truth) {
    for (auto m : kAll) r.excluded[m] = "record has no mental state";
    return r;
  }
  const auto& state = *t.truth;
  detail::excludable(r.excluded, "arena", [&] {
    r.dialogue = run_arena(prompts, persuader_model, persuadee, t.scenario, state, options);
  });
  if (r.excluded.count("arena")) {
    for (auto m : kAll) r.excluded[m] = r.excluded["arena"];
    return r;
  }

  std::size_t last = r.dialogue.size();
  while (last > 0 && r.dialogue[last - 1].speaker != Speaker::persuader) --last;
  if (last > 0) {
    const std::vector<Utterance> before(r.dialogue.begin(), r.dialogue.begin() + (last - 1));
    detail::excludable(r.excluded, "persuasive", [&] {
      r.persuasive = judge_persuasive(prompts, judge, t.scenario, before, r.dialogue[last - 1].text, options.judge);
    });
  }
  if (state.has_preventive()) {
    detail::excludable(r.excluded, "preventive_satisfaction", [&] {
      r.preventive_satisfied =
          detail::judge_satisfaction(prompts, judge, template_ids::judge_preventive_satisfaction,
                                     "preventive_satisfaction", t.scenario, state, r.dialogue, options.judge);
    });
  }
  detail::excludable(r.excluded, "generative_belief_satisfaction", [&] {
    r.generative_belief_satisfied =
        detail::judge_satisfaction(prompts, judge, template_ids::judge_generative_belief_satisfaction,
                                   "generative_belief_satisfaction", t.scenario, state, r.dialogue, options.judge);
  });
  detail::excludable(r.excluded, "generative_desire_satisfaction", [&] {
    r.generative_desire_satisfied =
        detail::judge_satisfaction(prompts, judge, template_ids::judge_generative_desire_satisfaction,
                                   "generative_desire_satisfaction", t.scenario, state, r.dialogue, options.judge);
  });

  const bool prevent_known = !state.has_preventive() || r.preventive_satisfied.has_value();
  if (prevent_known && r.generative_belief_satisfied && r.generative_desire_satisfied) {
    // A satisfied preventive counts as both of its reasons being altered.
    CToMFlags flags;
    flags.preventive_belief_altered = r.preventive_satisfied;
    flags.preventive_desire_altered = r.preventive_satisfied;
    flags.generative_belief_addressed = *r.generative_belief_satisfied;
    flags.generative_desire_addressed = *r.generative_desire_satisfied;
    r.ctom = combine_ctom(flags, state.has_preventive());
  } else {
    r.excluded["ctom"] = "a component verdict is missing";
  }
  return r;
}

struct DynamicReport {
  Mean persuasive;
  /// Records without a preventive behavior are left out of this one.
  Tally preventive_satisfaction;
  Tally generative_satisfaction;
  Tally ctom;
  std::size_t n = 0;
  std::vector<DynamicRecordResult> records;
};

inline DynamicReport aggregate_dynamic(std::vector<DynamicRecordResult> records) {
  DynamicReport rep;
  rep.n = records.size();
  for (const auto& r : records) {
    if (r.persuasive) {
      rep.persuasive.add(*r.persuasive);
    } else {
      ++rep.persuasive.excluded;
    }
    if (r.preventive_satisfied) {
      rep.preventive_satisfaction.add(*r.preventive_satisfied);
    } else if (r.excluded.count("preventive_satisfaction")) {
      ++rep.preventive_satisfaction.excluded;
    }
    if (auto g = r.generative_satisfied()) {
      rep.generative_satisfaction.add(*g);
    } else {
      ++rep.generative_satisfaction.excluded;
    }
    if (r.ctom) {
      rep.ctom.add(*r.ctom);
    } else {
      ++rep.ctom.excluded;
    }
  }
  rep.records = std::move(records);
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json to_json(const CToMVerdict& v) {
  auto opt = [](const std::optional<bool>& b) { return b ? nlohmann::json(*b) : nlohmann::json("n/a"); };
  return {{"preventive_belief_altered", opt(v.flags.preventive_belief_altered)},
          {"preventive_desire_altered", opt(v.flags.preventive_desire_altered)},
          {"generative_belief_addressed", v.flags.generative_belief_addressed},
          {"generative_desire_addressed", v.flags.generative_desire_addressed},
          {"persuaded", v.persuaded}};
}

inline nlohmann::ordered_json to_json(const MetricReport& rep) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : rep.records) {
    nlohmann::ordered_json j = {{"index", r.index}};
    for (const auto& [k, v] : r.scores) j[k] = v;
    if (r.direct_prompting) j["direct_prompting"] = *r.direct_prompting;
    if (r.ctom) j["ctom_eval"] = to_json(*r.ctom);
    if (!r.excluded.empty()) j["excluded"] = r.excluded;
    records.push_back(std::move(j));
  }
  return {{"kind", "dataset"},
          {"n", rep.n},
          {"metrics",
           {{"context_coherence", to_json(rep.context_coherence)},
            {"logical_coherence", to_json(rep.logical_coherence)},
            {"helpfulness", to_json(rep.helpfulness)},
            {"direct_prompting", to_json(rep.direct_prompting)},
            {"ctom_eval", to_json(rep.ctom_eval)}}},
          {"records", std::move(records)}};
}

inline nlohmann::ordered_json to_json(const FixedReport& rep) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : rep.records) {
    nlohmann::ordered_json j = {{"index", r.index}, {"prediction", r.prediction}, {"reference", r.reference}};
    if (r.rouge) j["rouge_l"] = {{"precision", r.rouge->precision}, {"recall", r.rouge->recall}, {"f1", r.rouge->f1}};
    if (r.persuasive) j["persuasive"] = *r.persuasive;
    if (!r.excluded.empty()) j["excluded"] = r.excluded;
    records.push_back(std::move(j));
  }
  return {{"kind", "fixed_persuadee"},
          {"n", rep.n},
          {"metrics", {{"rouge_l_f1", to_json(rep.rouge_l_f1)}, {"persuasive", to_json(rep.persuasive)}}},
          {"records", std::move(records)}};
}

inline nlohmann::ordered_json to_json(const DynamicReport& rep) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : rep.records) {
    nlohmann::ordered_json j = {{"index", r.index}};
    nlohmann::ordered_json dialog = nlohmann::ordered_json::array();
    for (const auto& u : r.dialogue) dialog.push_back(std::string(to_string(u.speaker)) + ": " + u.text);
    j["dialog"] = std::move(dialog);
    if (r.persuasive) j["persuasive"] = *r.persuasive;
    if (r.preventive_satisfied) j["preventive_satisfaction"] = *r.preventive_satisfied;
    if (r.generative_belief_satisfied) j["generative_belief_satisfaction"] = *r.generative_belief_satisfied;
    if (r.generative_desire_satisfied) j["generative_desire_satisfaction"] = *r.generative_desire_satisfied;
    if (r.ctom) j["ctom"] = *r.ctom;
    if (!r.excluded.empty()) j["excluded"] = r.excluded;
    records.push_back(std::move(j));
  }
  return {{"kind", "dynamic_persuadee"},
          {"n", rep.n},
          {"metrics",
           {{"persuasive", to_json(rep.persuasive)},
            {"preventive_satisfaction", to_json(rep.preventive_satisfaction)},
            {"generative_satisfaction", to_json(rep.generative_satisfaction)},
            {"ctom", to_json(rep.ctom)}}},
          {"records", std::move(records)}};
}

namespace detail {

inline std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline std::string render_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      os << (i ? " | " : "") << std::setw(static_cast<int>(width[i])) << (i ? std::right : std::left) << cells[i];
    }
    os << "\n";
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& row : rows) line(row);
  return os.str();
}

}  // namespace detail

inline std::string render_table(const MetricReport& rep, const std::string& label) {
  return detail::render_rows(
      {"Dataset", "Context-Coherence", "Logical-Coherence", "Helpfulness", "Direct Prompting", "Causal ToM Eval",
       "Excluded"},
      {{label, detail::cell(rep.context_coherence.value(), 2), detail::cell(rep.logical_coherence.value(), 2),
        detail::cell(rep.helpfulness.value(), 2), detail::cell(rep.direct_prompting.percent(), 2),
        detail::cell(rep.ctom_eval.percent(), 2),
        std::to_string(rep.context_coherence.excluded + rep.logical_coherence.excluded + rep.helpfulness.excluded +
                       rep.direct_prompting.excluded + rep.ctom_eval.excluded)}});
}

inline std::string render_table(const FixedReport& rep, const std::string& label) {
  return detail::render_rows({"Model", "Rouge-L", "Persuasive", "Excluded"},
                             {{label, detail::cell(rep.rouge_l_f1.value(), 4), detail::cell(rep.persuasive.value(), 2),
                               std::to_string(rep.rouge_l_f1.excluded + rep.persuasive.excluded)}});
}

inline std::string render_table(const DynamicReport& rep, const std::string& label) {
  return detail::render_rows(
      {"Model", "Persuasive", "Preventative Satisfaction", "Generative Satisfaction", "CToM", "Excluded"},
      {{label, detail::cell(rep.persuasive.value(), 2), detail::cell(rep.preventive_satisfaction.percent(), 2),
        detail::cell(rep.generative_satisfaction.percent(), 2), detail::cell(rep.ctom.percent(), 2),
        std::to_string(rep.persuasive.excluded + rep.preventive_satisfaction.excluded +
                       rep.generative_satisfaction.excluded + rep.ctom.excluded)}});
}

}  // namespace ctom
