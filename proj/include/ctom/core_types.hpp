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

// Domain model: scenarios, the persuadee's mental state, utterances and
// dialogue records, plus the persuader's inferred copy of the mental state.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctom/errors.hpp"
#include "ctom/text.hpp"

namespace ctom {

enum class Speaker { persuader, persuadee };

inline std::string_view to_string(Speaker s) noexcept {
  return s == Speaker::persuader ? "persuader" : "persuadee";
}

inline std::optional<Speaker> parse_speaker(std::string_view s) noexcept {
  if (s == "persuader") return Speaker::persuader;
  if (s == "persuadee") return Speaker::persuadee;
  return std::nullopt;
}

/// A persuasion setting. Domain order is insignificant.
struct Scenario {
  std::string tag;
  std::string background;
  std::string persuadee_name;
  std::string persuader_name;
  std::string goal;
  std::vector<std::string> domains;

  bool operator==(const Scenario&) const = default;
};

/// Names a broken rule and the field it applies to.
struct Violation {
  std::string field;
  std::string rule;

  bool operator==(const Violation&) const = default;
};

inline std::vector<Violation> validate_scenario(const Scenario& s) {
  std::vector<Violation> out;
  if (text::trim_view(s.background).empty()) out.push_back({"background", "must be non-empty"});
  if (text::trim_view(s.goal).empty()) out.push_back({"goal", "must be non-empty"});
  if (text::trim_view(s.persuadee_name).empty()) out.push_back({"persuadee", "must be non-empty"});
  if (text::trim_view(s.persuader_name).empty()) out.push_back({"persuader", "must be non-empty"});
  if (s.persuadee_name == s.persuader_name) {
    out.push_back({"persuadee", "must differ from persuader"});
  }
  if (s.domains.empty()) out.push_back({"domain", "must list at least one domain"});
  return out;
}

enum class BehaviorRole { preventive, generative };

inline std::string_view to_string(BehaviorRole r) noexcept {
  return r == BehaviorRole::preventive ? "preventive" : "generative";
}

/// One behavior of the persuadee together with the belief and desire
/// attached to it. An absent behavior carries no belief or desire.
struct BehaviorSpec {
  BehaviorRole role = BehaviorRole::generative;
  std::optional<std::string> content;
  std::optional<std::string> belief;
  std::optional<std::string> desire;

  static BehaviorSpec absent(BehaviorRole role) { return BehaviorSpec{role, {}, {}, {}}; }

  bool present() const noexcept { return content.has_value(); }

  bool operator==(const BehaviorSpec&) const = default;
};

struct MentalState {
  BehaviorSpec preventive = BehaviorSpec::absent(BehaviorRole::preventive);
  BehaviorSpec generative = BehaviorSpec::absent(BehaviorRole::generative);

  bool has_preventive() const noexcept { return preventive.present(); }

  bool operator==(const MentalState&) const = default;
};

namespace detail {

inline void validate_statement(const std::optional<std::string>& value, const std::string& field,
                               std::vector<Violation>& out) {
  if (!value) {
    out.push_back({field, "must be present"});
    return;
  }
  if (text::trim_view(*value).empty()) {
    out.push_back({field, "must be non-empty"});
    return;
  }
  // "Exactly one reason" is checked as "exactly one sentence".
  if (text::sentence_count(*value) != 1) out.push_back({field, "must state exactly one reason"});
}

inline void validate_behavior(const BehaviorSpec& b, std::vector<Violation>& out) {
  const std::string prefix(to_string(b.role));
  if (!b.present()) {
    if (b.belief) out.push_back({prefix + ".belief", "must be ABSENT when content is ABSENT"});
    if (b.desire) out.push_back({prefix + ".desire", "must be ABSENT when content is ABSENT"});
    return;
  }
  if (text::trim_view(*b.content).empty() || text::is_none_marker(*b.content)) {
    out.push_back({prefix + ".content", "must be a behavior phrase"});
  }
  validate_statement(b.belief, prefix + ".belief", out);
  validate_statement(b.desire, prefix + ".desire", out);
}

}  // namespace detail

/// Every violated mental-state rule; empty when the state is valid.
inline std::vector<Violation> validate_mental_state(const MentalState& state) {
  std::vector<Violation> out;
  if (state.preventive.role != BehaviorRole::preventive) {
    out.push_back({"preventive.role", "must be preventive"});
  }
  if (state.generative.role != BehaviorRole::generative) {
    out.push_back({"generative.role", "must be generative"});
  }
  detail::validate_behavior(state.preventive, out);
  if (!state.generative.present()) out.push_back({"generative.content", "must be present"});
  detail::validate_behavior(state.generative, out);
  return out;
}

struct Utterance {
  Speaker speaker = Speaker::persuader;
  std::string text;
  std::size_t index = 0;

  bool operator==(const Utterance&) const = default;
};

/// Builds an utterance with surrounding whitespace removed.
inline Utterance make_utterance(Speaker speaker, std::string_view text_value, std::size_t index) {
  return Utterance{speaker, text::trim(text_value), index};
}

enum class TraceKind { prediction, observer_feedback, regeneration, parse_retry, warning, leak_redacted };

inline std::string_view to_string(TraceKind k) noexcept {
  switch (k) {
    case TraceKind::prediction: return "prediction";
    case TraceKind::observer_feedback: return "observer_feedback";
    case TraceKind::regeneration: return "regeneration";
    case TraceKind::parse_retry: return "parse_retry";
    case TraceKind::warning: return "warning";
    case TraceKind::leak_redacted: return "leak_redacted";
  }
  return "unknown";
}

inline std::optional<TraceKind> parse_trace_kind(std::string_view s) noexcept {
  for (auto k : {TraceKind::prediction, TraceKind::observer_feedback, TraceKind::regeneration,
                 TraceKind::parse_retry, TraceKind::warning, TraceKind::leak_redacted}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// What happened during generation, kept for after-the-fact inspection.
/// `fields` carries parsed values, e.g. a prediction's belief.
struct TraceEvent {
  TraceKind kind = TraceKind::warning;
  std::string step;
  int round = 0;
  std::string text;
  std::map<std::string, std::string> fields;

  bool operator==(const TraceEvent&) const = default;
};

struct DialogueRecord {
  Scenario scenario;
  MentalState mental_state;
  std::vector<Utterance> utterances;
  std::vector<TraceEvent> trace;
};

/// Field-by-field equality that ignores the trace.
inline bool structurally_equal(const DialogueRecord& a, const DialogueRecord& b) {
  return a.scenario == b.scenario && a.mental_state == b.mental_state && a.utterances == b.utterances;
}

/// 8 utterances (4 rounds) with a preventive behavior, otherwise 6.
inline std::size_t expected_utterance_count(const MentalState& state) noexcept {
  return state.has_preventive() ? 8 : 6;
}

/// Alternation, indexing and whitespace rules for an utterance list.
inline std::vector<Violation> validate_utterances(const std::vector<Utterance>& utterances) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    const std::string field = "dialog[" + std::to_string(i) + "]";
    const Speaker expected = i % 2 == 0 ? Speaker::persuader : Speaker::persuadee;
    if (u.speaker != expected) out.push_back({field, "speakers must alternate starting with persuader"});
    if (u.index != i) out.push_back({field, "index must equal position"});
    if (u.text.empty()) out.push_back({field, "text must be non-empty"});
    if (text::trim_view(u.text).size() != u.text.size()) {
      out.push_back({field, "text must not have surrounding whitespace"});
    }
  }
  return out;
}

inline std::vector<Violation> validate_record(const DialogueRecord& r) {
  auto out = validate_scenario(r.scenario);
  for (auto& v : validate_mental_state(r.mental_state)) out.push_back(std::move(v));
  for (auto& v : validate_utterances(r.utterances)) out.push_back(std::move(v));
  const auto expected = expected_utterance_count(r.mental_state);
  if (r.utterances.size() != expected) {
    out.push_back({"dialog", "expected " + std::to_string(expected) + " utterances, found " +
                                 std::to_string(r.utterances.size())});
  } else if (r.utterances.back().speaker != Speaker::persuadee) {
    out.push_back({"dialog", "last speaker must be persuadee"});
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.field + " " + v.rule;
  }
  return out;
}

/// The persuader's inferred copy of the persuadee's mental state. Starts
/// empty; each field is filled once, and only observer feedback may revise
/// an already-filled field.
class PersuaderBeliefModel {
 public:
  const std::optional<BehaviorSpec>& predicted_preventive() const noexcept { return preventive_; }
  const std::optional<std::string>& predicted_generative_belief() const noexcept { return gen_belief_; }
  const std::optional<std::string>& predicted_generative_desire() const noexcept { return gen_desire_; }

  bool empty() const noexcept { return !preventive_ && !gen_belief_ && !gen_desire_; }

  void set_preventive(BehaviorSpec spec, bool revision = false) {
    guard(preventive_.has_value(), revision, "predicted_preventive");
    spec.role = BehaviorRole::preventive;
    preventive_ = std::move(spec);
  }
  void set_generative_belief(std::string belief, bool revision = false) {
    guard(gen_belief_.has_value(), revision, "predicted_generative_belief");
    gen_belief_ = std::move(belief);
  }
  void set_generative_desire(std::string desire, bool revision = false) {
    guard(gen_desire_.has_value(), revision, "predicted_generative_desire");
    gen_desire_ = std::move(desire);
  }

 private:
  static void guard(bool filled, bool revision, const char* field) {
    if (filled && !revision) {
      throw InvariantError(std::string(field) + " is already set; only observer feedback may revise it");
    }
  }

  std::optional<BehaviorSpec> preventive_;
  std::optional<std::string> gen_belief_;
  std::optional<std::string> gen_desire_;
};

}  // namespace ctom
