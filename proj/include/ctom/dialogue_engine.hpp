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

// Runs one scripted persuader/persuadee conversation and audits the prompts
// it sent for leaks between the two sides.

#pragma once

#include <optional>
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
#include "ctom/observer.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/text.hpp"

namespace ctom {

/// Gateways per role. The observer is optional.
struct DialogueAgents {
  const Gateway* persuader = nullptr;
  const Gateway* persuadee = nullptr;
  const Gateway* observer = nullptr;
};

struct DialogueOptions {
  /// Calls allowed per step before GenerationFailed.
  int max_attempts = 3;
  int observer_max_rounds = 2;
  int observer_max_attempts = 2;
  /// Prefix for scripted-response keys, e.g. "item-3".
  std::string scope;
  /// Sees every request (prompt capture).
  RequestObserver on_request;
  /// Utterances with more sentences than this get a lint warning.
  std::size_t sentence_limit = 2;
};

/// Which side a request is addressed to, derived from its tag.
enum class Audience { persuader, persuadee, observer, other };

inline Audience audience_of(std::string_view request_tag) {
  if (request_tag == kObserverTag) return Audience::observer;
  if (request_tag.starts_with("persuadee_")) return Audience::persuadee;
  if (request_tag.starts_with("persuader_") || request_tag.starts_with("predict_")) return Audience::persuader;
  return Audience::other;
}

namespace detail {

class DialogueRun {
 public:
  DialogueRun(const PromptLibrary& prompts, const Scenario& scenario, const MentalState& state,
              const DialogueAgents& agents, const DialogueOptions& options)
      : prompts_(prompts),
        state_(state),
        view_(PersuaderView::of(scenario, state)),
        agents_(agents),
        options_(options) {
    record_.scenario = scenario;
    record_.mental_state = state;
  }

  DialogueRecord run() {
    const auto steps = plan_script(state_.has_preventive());
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto k = steps[i];
      if (is_prediction(k)) {
        reviewed_step(k);
        ++i;  // the response step ran inside reviewed_step
      } else if (owner(k) == Speaker::persuadee) {
        speak(k, Speaker::persuadee,
              assemble_persuadee_prompt(prompts_, k, record_.scenario, state_, record_.utterances),
              *agents_.persuadee);
      } else {
        speak(k, Speaker::persuader,
              assemble_persuader_prompt(prompts_, k, view_, record_.utterances, model_), *agents_.persuader);
      }
    }
    if (auto v = validate_record(record_); !v.empty()) {
      throw InvariantError("generated dialogue is malformed: " + describe(v));
    }
    return std::move(record_);
  }

  const PersuaderBeliefModel& belief_model() const noexcept { return model_; }

 private:
  RepairOptions repair(StepKind k, int round, std::string format) {
    RepairOptions r;
    r.max_attempts = options_.max_attempts;
    r.stage = "dialogue." + std::string(to_string(k));
    r.format = std::move(format);
    r.on_request = options_.on_request;
    r.trace = &record_.trace;
    r.round = round;
    return r;
  }

  std::string utterance(StepKind k, const std::string& prompt, const Gateway& gw, int round) {
    return call_with_repair(gw, make_prompt_request(std::string(to_string(k)), prompt, options_.scope), prompts_,
                            repair(k, round, "only the next utterance, as plain text."),
                            [](const std::string& out) { return parse_utterance_output(out); });
  }

  void push_utterance(StepKind k, Speaker who, std::string text_value, int round) {
    if (text::sentence_count(text_value) > options_.sentence_limit) {
      record_.trace.push_back({TraceKind::warning, std::string(to_string(k)), round, text_value,
                               {{"reason", "utterance exceeds the sentence limit"}}});
    }
    record_.utterances.push_back(make_utterance(who, text_value, record_.utterances.size()));
  }

  void speak(StepKind k, Speaker who, const std::string& prompt, const Gateway& gw) {
    push_utterance(k, who, utterance(k, prompt, gw, 0), 0);
  }

  RoundArtifacts attempt(StepKind k, const std::optional<RevisionRequest>& revision, int round) {
    const auto r = response_after(k);
    const std::string extra =
        revision ? suggestions_block(prompts_, revision->previous_prediction, revision->suggestions) : "";

    std::string raw;
    auto prediction = call_with_repair(
        *agents_.persuader,
        make_prompt_request(std::string(to_string(k)),
                            assemble_persuader_prompt(prompts_, k, view_, record_.utterances, model_) + extra,
                            options_.scope),
        prompts_, repair(k, round, prediction_format(k)), [&](const std::string& out) {
          raw = out;
          return parse_prediction(k, out);
        });
    apply_prediction(model_, prediction, round > 1);

    TraceEvent event{TraceKind::prediction, std::string(to_string(k)), round, raw, {}};
    event.fields["line"] = prediction_line(k, view_, model_);
    if (prediction.preventive) {
      if (prediction.preventive->content) event.fields["content"] = *prediction.preventive->content;
      event.fields["belief"] = prediction.preventive->belief.value_or("");
      event.fields["desire"] = prediction.preventive->desire.value_or("");
    }
    if (prediction.generative_belief) event.fields["belief"] = *prediction.generative_belief;
    if (prediction.generative_desire) event.fields["desire"] = *prediction.generative_desire;
    record_.trace.push_back(event);

    auto response =
        utterance(r, assemble_persuader_prompt(prompts_, r, view_, record_.utterances, model_) + extra,
                  *agents_.persuader, round);
    if (round > 1) {
      record_.trace.push_back({TraceKind::regeneration, std::string(to_string(r)), round, response, {}});
    }
    return RoundArtifacts{std::move(prediction), event.fields["line"], std::move(response)};
  }

  void reviewed_step(StepKind k) {
    auto attempt_fn = [&](const std::optional<RevisionRequest>& rev, int round) { return attempt(k, rev, round); };
    RoundArtifacts final;
    if (agents_.observer) {
      ReviewOptions ro;
      ro.max_attempts = options_.observer_max_attempts;
      ro.scope = options_.scope;
      ro.on_request = options_.on_request;
      ro.trace = &record_.trace;
      ro.step = std::string(to_string(k));
      auto reviewer = [&](const RoundArtifacts& a, int round) {
        ro.round = round;
        return review(prompts_, *agents_.observer, record_.scenario, state_, record_.utterances, a.prediction_line,
                      a.response, ro);
      };
      final = revise_loop(attempt_fn, reviewer, options_.observer_max_rounds).final;
    } else {
      final = attempt_fn(std::nullopt, 1);
    }
    push_utterance(response_after(k), Speaker::persuader, std::move(final.response), 0);
  }

  static std::string prediction_format(StepKind k) {
    switch (k) {
      case StepKind::predict_preventive:
        return R"(preventive: {"content": <string>, "belief": <string>, "desire": <string>})";
      case StepKind::predict_gen_belief:
        return R"(generative: {"content": <string>, "belief": <string>, "desire": "Don't know."})";
      default:
        return "generative's desire: <string>";
    }
  }

  const PromptLibrary& prompts_;
  const MentalState& state_;
  PersuaderView view_;
  DialogueAgents agents_;
  DialogueOptions options_;
  PersuaderBeliefModel model_;
  DialogueRecord record_;
};

}  // namespace detail

/// Runs the full script for one scenario. The persuader side only ever sees
/// the PersuaderView, its own predictions and the history.
inline DialogueRecord run_dialogue(const PromptLibrary& prompts, const Scenario& scenario, const MentalState& state,
                                   const DialogueAgents& agents, const DialogueOptions& options = {}) {
  if (!agents.persuader || !agents.persuadee) throw ConfigError("run_dialogue needs persuader and persuadee gateways");
  if (auto v = validate_scenario(scenario); !v.empty()) throw InvariantError("invalid scenario: " + describe(v));
  if (auto v = validate_mental_state(state); !v.empty()) throw InvariantError("invalid mental state: " + describe(v));
  return detail::DialogueRun(prompts, scenario, state, agents, options).run();
}

/// One captured request: which dialogue, which step, the full prompt.
struct CapturedPrompt {
  std::string dialogue_id;
  std::string step;
  std::string prompt;

  nlohmann::ordered_json to_json() const {
    return {{"dialogue", dialogue_id}, {"step", step}, {"prompt", prompt}};
  }
  static CapturedPrompt from_json(const nlohmann::json& j) {
    return {j.at("dialogue").get<std::string>(), j.at("step").get<std::string>(), j.at("prompt").get<std::string>()};
  }
};

struct LeakFinding {
  std::string dialogue_id;
  std::string step;
  /// e.g. "generative.desire" for a persuader leak, "predicted.belief" for
  /// a persuadee leak.
  std::string field;
  std::string sentence;
};

namespace detail {

inline void mask_all(std::string& haystack, const std::string& needle) {
  if (needle.empty()) return;
  for (std::size_t pos; (pos = haystack.find(needle)) != std::string::npos;) {
    haystack.replace(pos, needle.size(), "\x01");
  }
}

/// Masks a value both as plain text and as it appears inside a JSON string.
inline void mask_value(std::string& haystack, const std::string& value) {
  mask_all(haystack, text::normalize(value));
  const auto escaped = nlohmann::json(value).dump();
  mask_all(haystack, text::normalize(std::string_view(escaped).substr(1, escaped.size() - 2)));
}

}  // namespace detail

/// Checks captured prompts of one dialogue in both directions.
///
/// Persuader-facing prompts must not contain a true belief or desire
/// sentence. Text the persuader legitimately holds is masked first: the
/// conversation so far and its own predictions (taken from the trace).
/// Persuadee-facing prompts must not contain the persuader's predictions,
/// after masking the true state and the conversation.
inline std::vector<LeakFinding> audit_double_blind(const DialogueRecord& record,
                                                   const std::vector<CapturedPrompt>& captured) {
  std::vector<std::pair<std::string, std::string>> predicted;
  for (const auto& e : record.trace) {
    if (e.kind != TraceKind::prediction) continue;
    for (const char* key : {"belief", "desire"}) {
      if (auto it = e.fields.find(key); it != e.fields.end() && !text::leak_needle(it->second).empty()) {
        predicted.emplace_back(std::string("predicted.") + key, it->second);
      }
    }
  }
  const auto secrets = secret_statements(record.mental_state);

  std::vector<LeakFinding> findings;
  for (const auto& c : captured) {
    const auto audience = audience_of(c.step);
    if (audience != Audience::persuader && audience != Audience::persuadee) continue;
    std::string hay = text::normalize(c.prompt);
    for (const auto& u : record.utterances) detail::mask_value(hay, u.text);
    if (audience == Audience::persuader) {
      for (const auto& [_, value] : predicted) detail::mask_value(hay, value);
      for (const auto& [field, sentence] : secrets) {
        if (hay.find(text::leak_needle(sentence)) != std::string::npos) {
          findings.push_back({c.dialogue_id, c.step, field, sentence});
        }
      }
    } else {
      for (const auto& [_, sentence] : secrets) detail::mask_value(hay, sentence);
      for (const auto& [field, value] : predicted) {
        if (hay.find(text::leak_needle(value)) != std::string::npos) {
          findings.push_back({c.dialogue_id, c.step, field, value});
        }
      }
    }
  }
  return findings;
}

}  // namespace ctom
