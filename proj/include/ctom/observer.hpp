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

// The observer sees the true mental state, reviews a persuader prediction
// and the response built on it, and either accepts or asks for a revision.

#pragma once

#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "ctom/agent_call.hpp"
#include "ctom/core_types.hpp"
#include "ctom/dialogue_prompts.hpp"
#include "ctom/errors.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/text.hpp"

namespace ctom {

enum class Verdict { accept, revise };

inline std::string_view to_string(Verdict v) noexcept { return v == Verdict::accept ? "accept" : "revise"; }

struct ObserverFeedback {
  Verdict verdict = Verdict::accept;
  /// Empty iff verdict is accept.
  std::string suggestions;

  static ObserverFeedback accept() { return {}; }
  bool operator==(const ObserverFeedback&) const = default;
};

/// An output that says no changes are needed is an accept; anything else is
/// a revise carrying the whole text. Empty output is a ParseError.
inline ObserverFeedback parse_observer_output(std::string_view output) {
  const auto trimmed = text::trim(output);
  if (trimmed.empty()) throw ParseError("empty observer output", std::string(output));
  static const std::regex kAccept(
      R"(\bno\s+(further\s+)?(changes?|modifications?|revisions?|corrections?|adjustments?)\s+(are\s+|is\s+)?(necessary|needed|required)\b)",
      std::regex::icase);
  if (std::regex_search(trimmed, kAccept)) return ObserverFeedback::accept();
  return ObserverFeedback{Verdict::revise, trimmed};
}

inline std::string build_observer_prompt(const PromptLibrary& prompts, const Scenario& s, const MentalState& state,
                                         const std::vector<Utterance>& history, const std::string& prediction,
                                         const std::string& response) {
  return prompts.render(template_ids::observer_review,
                        {{"background", s.background},
                         {"persuadee", s.persuadee_name},
                         {"persuader", s.persuader_name},
                         {"goal", s.goal},
                         {"preventive", format_behavior_inline(state.preventive)},
                         {"generative", format_behavior_inline(state.generative)},
                         {"dialog", format_dialog(history)},
                         {"prediction", prediction},
                         {"response", response}});
}

/// The true belief and desire sentences, i.e. what must never reach the
/// persuader.
inline std::vector<std::pair<std::string, std::string>> secret_statements(const MentalState& state) {
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&](const char* field, const std::optional<std::string>& v) {
    if (v && !text::leak_needle(*v).empty()) out.emplace_back(field, *v);
  };
  add("preventive.belief", state.preventive.belief);
  add("preventive.desire", state.preventive.desire);
  add("generative.belief", state.generative.belief);
  add("generative.desire", state.generative.desire);
  return out;
}

inline constexpr std::string_view kWithheld = "[withheld]";

struct Redaction {
  std::string text;
  /// Fields whose sentence was found and removed.
  std::vector<std::string> fields;
};

/// Replaces every whitespace/case-insensitive occurrence of a true belief or
/// desire sentence in `input` with a placeholder.
inline Redaction redact_secrets(std::string_view input, const MentalState& state) {
  Redaction r{std::string(input), {}};
  for (const auto& [field, sentence] : secret_statements(state)) {
    const auto needle = text::leak_needle(sentence);
    bool hit = false;
    while (true) {
      text::NormalizedText norm(r.text);
      const auto pos = norm.str().find(needle);
      if (pos == std::string::npos) break;
      const auto begin = norm.origin(pos);
      const auto end = norm.origin(pos + needle.size() - 1) + 1;
      r.text.replace(begin, end - begin, kWithheld);
      hit = true;
    }
    if (hit) r.fields.push_back(field);
  }
  return r;
}

struct ReviewOptions {
  /// Calls allowed before failing open.
  int max_attempts = 2;
  std::string scope;
  RequestObserver on_request;
  std::vector<TraceEvent>* trace = nullptr;
  std::string step;
  int round = 1;
};

inline constexpr std::string_view kObserverTag = "observer_review";

/// One observer call. Unparseable output after `max_attempts` calls counts
/// as accept and leaves a warning in the trace. Suggestions come back with
/// any true-state sentence redacted.
inline ObserverFeedback review(const PromptLibrary& prompts, const Gateway& gateway, const Scenario& scenario,
                               const MentalState& state, const std::vector<Utterance>& history,
                               const std::string& prediction, const std::string& response,
                               const ReviewOptions& options = {}) {
  auto push = [&](TraceEvent e) {
    if (options.trace) options.trace->push_back(std::move(e));
  };
  RepairOptions repair;
  repair.max_attempts = options.max_attempts;
  repair.stage = "observer";
  repair.format = "either state that no changes are necessary, or give specific suggestions.";
  repair.on_request = options.on_request;
  repair.trace = options.trace;
  repair.round = options.round;

  std::string raw;
  ObserverFeedback feedback;
  try {
    feedback = call_with_repair(
        gateway,
        make_prompt_request(std::string(kObserverTag),
                            build_observer_prompt(prompts, scenario, state, history, prediction, response),
                            options.scope),
        prompts, repair, [&](const std::string& out) {
          raw = out;
          return parse_observer_output(out);
        });
  } catch (const GenerationFailed& e) {
    push({TraceKind::warning, options.step, options.round, e.what(), {{"reason", "observer output unparseable; accepted"}}});
    return ObserverFeedback::accept();
  }

  if (feedback.verdict == Verdict::revise) {
    auto redacted = redact_secrets(feedback.suggestions, state);
    if (!redacted.fields.empty()) {
      push({TraceKind::leak_redacted, options.step, options.round, redacted.text,
            {{"fields", text::join(redacted.fields, ",")}}});
      feedback.suggestions = std::move(redacted.text);
    }
  }
  push({TraceKind::observer_feedback, options.step, options.round, raw,
        {{"verdict", std::string(to_string(feedback.verdict))}, {"suggestions", feedback.suggestions}}});
  return feedback;
}

/// What the persuader produced in one iteration of a reviewed step.
struct RoundArtifacts {
  Prediction prediction;
  /// Canonical prediction line shown to the observer.
  std::string prediction_line;
  std::string response;
};

/// Passed to the next iteration after a revise verdict.
struct RevisionRequest {
  std::string previous_prediction;
  std::string suggestions;
};

struct LoopResult {
  RoundArtifacts final;
  std::vector<ObserverFeedback> feedback;
  int reviews = 0;
};

/// `attempt(request, round)` predicts and responds; `request` is empty on
/// the first round. `reviewer(artifacts, round)` runs the observer.
using AttemptFn = std::function<RoundArtifacts(const std::optional<RevisionRequest>&, int)>;
using ReviewerFn = std::function<ObserverFeedback(const RoundArtifacts&, int)>;

/// predict -> respond -> review, repeated on revise. Stops at the first
/// accept or after `max_rounds` reviews and keeps the latest artifacts.
inline LoopResult revise_loop(const AttemptFn& attempt, const ReviewerFn& reviewer, int max_rounds) {
  if (max_rounds < 1) throw ConfigError("observer max_rounds must be >= 1");
  LoopResult result;
  std::optional<RevisionRequest> request;
  for (int round = 1; round <= max_rounds; ++round) {
    result.final = attempt(request, round);
    auto fb = reviewer(result.final, round);
    result.feedback.push_back(fb);
    result.reviews = round;
    if (fb.verdict == Verdict::accept) break;
    request = RevisionRequest{result.final.prediction_line, fb.suggestions};
  }
  return result;
}

}  // namespace ctom
