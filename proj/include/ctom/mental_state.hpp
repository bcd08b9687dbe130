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

// Mental-state synthesis: one call picks the preventive and generative
// behaviors, a second call supplies the belief and desire behind each.
// Both outputs use the label-line format:
//
//   Preventive: go outside          (or "none")
//   Belief: Persuadee believes ...  (or "None.")
//   Desire: Persuadee hopes ...     (or "None.")
//   Generative: watch movie
//   Belief: ...
//   Desire: ...

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctom/agent_call.hpp"
#include "ctom/core_types.hpp"
#include "ctom/errors.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/text.hpp"

namespace ctom {

inline constexpr std::string_view kNoneContent = "none";
inline constexpr std::string_view kNoneStatement = "None.";

/// `{"content": "...", "belief": "...", "desire": "..."}` with absent fields
/// written as the none markers.
inline std::string format_behavior_inline(const BehaviorSpec& b) {
  auto q = [](const std::optional<std::string>& v, std::string_view fallback) {
    return nlohmann::json(v ? *v : std::string(fallback)).dump();
  };
  return "{\"content\": " + q(b.content, kNoneContent) + ", \"belief\": " + q(b.belief, kNoneStatement) +
         ", \"desire\": " + q(b.desire, kNoneStatement) + "}";
}

inline std::string content_or_none(const std::optional<std::string>& content) {
  return content ? *content : std::string(kNoneContent);
}

struct BehaviorContents {
  std::optional<std::string> preventive;
  std::string generative;

  bool operator==(const BehaviorContents&) const = default;
};

namespace detail {

enum class Label { preventive, generative, belief, desire };

/// "Label: value", tolerating markdown emphasis and list markers.
inline std::optional<std::pair<Label, std::string>> parse_label_line(std::string_view line) {
  std::string s = text::trim(line);
  std::size_t lead = 0;
  while (lead < s.size() && (s[lead] == '-' || s[lead] == '*' || s[lead] == '#' || s[lead] == '>' ||
                             text::is_space(s[lead]))) {
    ++lead;
  }
  s.erase(0, lead);
  const auto colon = s.find(':');
  if (colon == std::string::npos) return std::nullopt;
  std::string label;
  for (char c : s.substr(0, colon)) {
    if (c != '*') label.push_back(c);
  }
  label = text::normalize(label);
  std::string value(s.substr(colon + 1));
  while (!value.empty() && value.front() == '*') value.erase(0, 1);
  value = text::trim(value);
  if (label == "preventive" || label == "preventative") return std::pair{Label::preventive, value};
  if (label == "generative") return std::pair{Label::generative, value};
  if (label == "belief") return std::pair{Label::belief, value};
  if (label == "desire") return std::pair{Label::desire, value};
  return std::nullopt;
}

inline std::string clean_behavior(std::string_view v) {
  std::string s = text::trim(v);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return text::strip_terminal_punct(s);
}

inline bool verb_like(std::string_view phrase) {
  return !phrase.empty() && std::isalpha(static_cast<unsigned char>(phrase.front())) &&
         !text::is_none_marker(phrase);
}

inline std::string require_statement(const std::string& value, std::string_view field, std::string_view raw) {
  if (value.empty() || text::is_none_marker(value)) {
    throw ParseError(std::string(field) + " must be a statement", std::string(raw));
  }
  if (text::sentence_count(value) != 1) {
    throw ParseError(std::string(field) + " must state exactly one reason", std::string(raw));
  }
  return value;
}

}  // namespace detail

inline std::string build_behavior_prompt(const PromptLibrary& prompts, const Scenario& scenario) {
  return prompts.render(template_ids::mental_state_behaviors, {{"background", scenario.background},
                                                               {"persuadee", scenario.persuadee_name},
                                                               {"persuader", scenario.persuader_name},
                                                               {"goal", scenario.goal}});
}

/// Reads the Preventive and Generative lines. Labels are case-insensitive;
/// a "none" preventive maps to absent.
inline BehaviorContents parse_behavior_output(std::string_view output) {
  std::optional<std::string> preventive_raw;
  std::optional<std::string> generative_raw;
  for (auto line : text::split_lines(output)) {
    auto labeled = detail::parse_label_line(line);
    if (!labeled) continue;
    if (labeled->first == detail::Label::preventive && !preventive_raw) preventive_raw = labeled->second;
    if (labeled->first == detail::Label::generative && !generative_raw) generative_raw = labeled->second;
  }
  if (!preventive_raw) throw ParseError("missing 'Preventive:' line", std::string(output));
  if (!generative_raw) throw ParseError("missing 'Generative:' line", std::string(output));

  BehaviorContents out;
  auto preventive = detail::clean_behavior(*preventive_raw);
  if (preventive.empty()) throw ParseError("empty preventive behavior", std::string(output));
  if (!text::is_none_marker(preventive)) out.preventive = preventive;
  out.generative = detail::clean_behavior(*generative_raw);
  if (!detail::verb_like(out.generative)) {
    throw ParseError("generative behavior must be a verb phrase", std::string(output));
  }
  return out;
}

inline std::string build_belief_desire_prompt(const PromptLibrary& prompts, const Scenario& scenario,
                                              const std::optional<std::string>& preventive_content,
                                              const std::string& generative_content) {
  if (text::trim_view(generative_content).empty()) {
    throw InvariantError("belief/desire prompt needs a generative behavior");
  }
  return prompts.render(template_ids::mental_state_belief_desire,
                        {{"background", scenario.background},
                         {"persuadee", scenario.persuadee_name},
                         {"persuader", scenario.persuader_name},
                         {"goal", scenario.goal},
                         {"preventive", content_or_none(preventive_content)},
                         {"generative", generative_content}});
}

/// Positional parse of the six label lines (preventive block first). Takes
/// the behavior contents from the text itself.
inline MentalState parse_mental_state_lines(std::string_view output) {
  std::vector<std::pair<detail::Label, std::string>> labeled;
  for (auto line : text::split_lines(output)) {
    if (auto l = detail::parse_label_line(line)) labeled.push_back(std::move(*l));
  }
  std::size_t start = 0;
  while (start < labeled.size() && labeled[start].first != detail::Label::preventive) ++start;
  using detail::Label;
  static constexpr std::array<Label, 6> kOrder = {Label::preventive, Label::belief,     Label::desire,
                                                  Label::generative, Label::belief, Label::desire};
  if (labeled.size() - start < kOrder.size()) {
    throw ParseError("expected Preventive/Belief/Desire/Generative/Belief/Desire lines", std::string(output));
  }
  for (std::size_t i = 0; i < kOrder.size(); ++i) {
    if (labeled[start + i].first != kOrder[i]) {
      throw ParseError("label lines out of order at position " + std::to_string(i + 1), std::string(output));
    }
  }
  const auto& v = [&](std::size_t i) -> const std::string& { return labeled[start + i].second; };

  MentalState state;
  const auto preventive = detail::clean_behavior(v(0));
  if (preventive.empty()) throw ParseError("empty preventive behavior", std::string(output));
  if (text::is_none_marker(preventive)) {
    if (!text::is_none_marker(v(1))) throw ParseError("preventive belief must be None", std::string(output));
    if (!text::is_none_marker(v(2))) throw ParseError("preventive desire must be None", std::string(output));
  } else {
    state.preventive.content = preventive;
    state.preventive.belief = detail::require_statement(v(1), "preventive belief", output);
    state.preventive.desire = detail::require_statement(v(2), "preventive desire", output);
  }
  const auto generative = detail::clean_behavior(v(3));
  if (!detail::verb_like(generative)) throw ParseError("generative behavior must be a verb phrase", std::string(output));
  state.generative.content = generative;
  state.generative.belief = detail::require_statement(v(4), "generative belief", output);
  state.generative.desire = detail::require_statement(v(5), "generative desire", output);

  if (auto violations = validate_mental_state(state); !violations.empty()) {
    throw ParseError(describe(violations), std::string(output));
  }
  return state;
}

/// Parses the belief/desire output for known behaviors. The given contents
/// win over whatever the model echoed, but presence must agree.
inline MentalState parse_belief_desire_output(std::string_view output,
                                              const std::optional<std::string>& preventive_content,
                                              const std::string& generative_content) {
  auto state = parse_mental_state_lines(output);
  if (!preventive_content && state.has_preventive()) {
    throw ParseError("preventive is none but the output fills it in", std::string(output));
  }
  if (preventive_content && !state.has_preventive()) {
    throw ParseError("output drops the preventive behavior", std::string(output));
  }
  if (preventive_content) state.preventive.content = *preventive_content;
  state.generative.content = generative_content;
  return state;
}

inline std::string serialize_mental_state_lines(const MentalState& state) {
  const auto& p = state.preventive;
  const auto& g = state.generative;
  std::string out;
  out += "Preventive: " + content_or_none(p.content) + "\n";
  out += "Belief: " + (p.present() ? *p.belief : std::string(kNoneStatement)) + "\n";
  out += "Desire: " + (p.present() ? *p.desire : std::string(kNoneStatement)) + "\n";
  out += "Generative: " + g.content.value_or("") + "\n";
  out += "Belief: " + g.belief.value_or("") + "\n";
  out += "Desire: " + g.desire.value_or("") + "\n";
  return out;
}

/// The generative belief should be framed negatively. There is no reliable
/// check for that, so this only flags beliefs without any negation cue.
inline std::vector<std::string> polarity_warnings(const MentalState& state) {
  static constexpr std::array<std::string_view, 34> kCues = {
      "not",       "no",      "never",   "n't",      "may",      "might",     "could",   "hard",      "difficult",
      "risk",      "worr",    "concern", "expens",   "cost",     "lack",      "unable",  "too",       "afraid",
      "doubt",     "unsure",  "waste",   "boring",   "loss",     "lose",      "closed",  "bad",       "danger",
      "uncertain", "tired",   "fail",    "problem",  "without",  "unsafe",    "less"};
  std::vector<std::string> out;
  if (!state.generative.belief) return out;
  const auto words = text::split_whitespace(text::normalize(*state.generative.belief));
  for (const auto& w : words) {
    for (auto cue : kCues) {
      if (w.find(cue) != std::string::npos) return out;
    }
  }
  out.push_back("generative belief has no negation cue: " + *state.generative.belief);
  return out;
}

struct MentalStateOptions {
  /// Calls allowed per stage, including the first.
  int max_attempts = 3;
  std::string scope;
  RequestObserver on_request;
  /// Receives lint warnings when set.
  std::vector<std::string>* warnings = nullptr;
};

inline constexpr std::string_view kBehaviorTag = "behavior_gen";
inline constexpr std::string_view kBeliefDesireTag = "belief_desire_gen";

/// Runs both generation calls. Throws GenerationFailed once a stage runs out
/// of attempts; every returned state passes validate_mental_state.
inline MentalState generate_mental_state(const PromptLibrary& prompts, const Scenario& scenario,
                                         const Gateway& gateway, const MentalStateOptions& options = {}) {
  if (auto violations = validate_scenario(scenario); !violations.empty()) {
    throw InvariantError("invalid scenario: " + describe(violations));
  }
  RepairOptions behavior_opts;
  behavior_opts.max_attempts = options.max_attempts;
  behavior_opts.stage = "mental_state.behaviors";
  behavior_opts.format = "'Preventive: <verb phrase> OR None' on one line, then 'Generative: <verb phrase>' on the next.";
  behavior_opts.on_request = options.on_request;
  const auto behaviors = call_with_repair(
      gateway, make_prompt_request(std::string(kBehaviorTag), build_behavior_prompt(prompts, scenario), options.scope),
      prompts, behavior_opts, [](const std::string& out) { return parse_behavior_output(out); });

  RepairOptions bd_opts;
  bd_opts.max_attempts = options.max_attempts;
  bd_opts.stage = "mental_state.belief_desire";
  bd_opts.format =
      "six lines in order: Preventive, Belief, Desire, Generative, Belief, Desire; each belief and desire is one "
      "sentence; write None for the belief and desire of a none preventive.";
  bd_opts.on_request = options.on_request;
  auto state = call_with_repair(
      gateway,
      make_prompt_request(std::string(kBeliefDesireTag),
                          build_belief_desire_prompt(prompts, scenario, behaviors.preventive, behaviors.generative),
                          options.scope),
      prompts, bd_opts,
      [&](const std::string& out) { return parse_belief_desire_output(out, behaviors.preventive, behaviors.generative); });

  if (options.warnings) {
    for (auto& w : polarity_warnings(state)) options.warnings->push_back(std::move(w));
  }
  return state;
}

}  // namespace ctom
