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

// The fixed dialogue script and the prompt assembly for each of its steps.
//
// Persuader-side prompts are built from a PersuaderView, which carries the
// scenario and the behavior contents but never the persuadee's true belief
// or desire. Persuadee-side prompts get the full MentalState.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctom/core_types.hpp"
#include "ctom/errors.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/prompt_library.hpp"
#include "ctom/text.hpp"

namespace ctom {

enum class StepKind {
  persuader_open,
  persuadee_reveal_preventive,
  predict_preventive,
  persuader_counter_preventive,
  persuadee_raise_gen_belief,
  predict_gen_belief,
  persuader_address_belief,
  persuadee_raise_gen_desire,
  predict_gen_desire,
  persuader_address_desire,
  persuadee_close,
};

inline std::string_view to_string(StepKind k) noexcept {
  switch (k) {
    case StepKind::persuader_open: return "persuader_open";
    case StepKind::persuadee_reveal_preventive: return "persuadee_reveal_preventive";
    case StepKind::predict_preventive: return "predict_preventive";
    case StepKind::persuader_counter_preventive: return "persuader_counter_preventive";
    case StepKind::persuadee_raise_gen_belief: return "persuadee_raise_gen_belief";
    case StepKind::predict_gen_belief: return "predict_gen_belief";
    case StepKind::persuader_address_belief: return "persuader_address_belief";
    case StepKind::persuadee_raise_gen_desire: return "persuadee_raise_gen_desire";
    case StepKind::predict_gen_desire: return "predict_gen_desire";
    case StepKind::persuader_address_desire: return "persuader_address_desire";
    case StepKind::persuadee_close: return "persuadee_close";
  }
  return "unknown";
}

inline bool is_prediction(StepKind k) noexcept {
  return k == StepKind::predict_preventive || k == StepKind::predict_gen_belief || k == StepKind::predict_gen_desire;
}

/// Who owns the step. Prediction steps run on the persuader side but add no
/// utterance.
inline Speaker owner(StepKind k) noexcept {
  switch (k) {
    case StepKind::persuadee_reveal_preventive:
    case StepKind::persuadee_raise_gen_belief:
    case StepKind::persuadee_raise_gen_desire:
    case StepKind::persuadee_close:
      return Speaker::persuadee;
    default:
      return Speaker::persuader;
  }
}

/// The response step that follows a prediction step.
inline StepKind response_after(StepKind prediction) {
  switch (prediction) {
    case StepKind::predict_preventive: return StepKind::persuader_counter_preventive;
    case StepKind::predict_gen_belief: return StepKind::persuader_address_belief;
    case StepKind::predict_gen_desire: return StepKind::persuader_address_desire;
    default: throw InvariantError(std::string(to_string(prediction)) + " is not a prediction step");
  }
}

/// Step order. Without a preventive behavior the reveal, predict and counter
/// steps are skipped.
inline std::vector<StepKind> plan_script(bool has_preventive) {
  std::vector<StepKind> steps = {StepKind::persuader_open};
  if (has_preventive) {
    steps.insert(steps.end(), {StepKind::persuadee_reveal_preventive, StepKind::predict_preventive,
                               StepKind::persuader_counter_preventive});
  }
  steps.insert(steps.end(),
               {StepKind::persuadee_raise_gen_belief, StepKind::predict_gen_belief, StepKind::persuader_address_belief,
                StepKind::persuadee_raise_gen_desire, StepKind::predict_gen_desire, StepKind::persuader_address_desire,
                StepKind::persuadee_close});
  return steps;
}

inline std::string_view template_for(StepKind k, bool has_preventive) noexcept {
  namespace t = template_ids;
  switch (k) {
    case StepKind::persuader_open: return has_preventive ? t::persuader_open : t::persuader_open_no_preventive;
    case StepKind::persuadee_reveal_preventive: return t::persuadee_reveal_preventive;
    case StepKind::predict_preventive: return t::predict_preventive;
    case StepKind::persuader_counter_preventive: return t::persuader_counter_preventive;
    case StepKind::persuadee_raise_gen_belief: return t::persuadee_raise_gen_belief;
    case StepKind::predict_gen_belief: return t::predict_gen_belief;
    case StepKind::persuader_address_belief: return t::persuader_address_belief;
    case StepKind::persuadee_raise_gen_desire: return t::persuadee_raise_gen_desire;
    case StepKind::predict_gen_desire: return t::predict_gen_desire;
    case StepKind::persuader_address_desire: return t::persuader_address_desire;
    case StepKind::persuadee_close: return t::persuadee_close;
  }
  return {};
}

/// Everything the persuader may know: the public scenario and what each side
/// wants to do, without the reasons behind it.
struct PersuaderView {
  Scenario scenario;
  std::optional<std::string> preventive_content;
  std::string generative_content;

  static PersuaderView of(const Scenario& scenario, const MentalState& state) {
    return PersuaderView{scenario, state.preventive.content, state.generative.content.value_or("")};
  }
};

/// "persuader: ..." lines separated by blank lines.
inline std::string format_dialog(const std::vector<Utterance>& history) {
  std::string out;
  for (const auto& u : history) {
    if (!out.empty()) out += "\n\n";
    out += std::string(to_string(u.speaker)) + ": " + u.text;
  }
  return out;
}

/// Desire placeholder used in a generative prediction made before the
/// persuadee has voiced any desire.
inline constexpr std::string_view kUnknownDesire = "Don't know.";

inline std::string predicted_generative_inline(const PersuaderView& view, const PersuaderBeliefModel& model) {
  BehaviorSpec spec{BehaviorRole::generative, view.generative_content, model.predicted_generative_belief(),
                    std::string(kUnknownDesire)};
  return format_behavior_inline(spec);
}

inline std::string predicted_preventive_line(const PersuaderView& view, const PersuaderBeliefModel& model) {
  auto spec = model.predicted_preventive().value_or(BehaviorSpec::absent(BehaviorRole::preventive));
  if (!spec.content) spec.content = view.preventive_content;
  return "preventive: " + format_behavior_inline(spec);
}

inline std::string predicted_generative_line(const PersuaderView& view, const PersuaderBeliefModel& model) {
  return "generative: " + predicted_generative_inline(view, model);
}

inline std::string predicted_desire_line(const PersuaderBeliefModel& model) {
  return "generative's desire: " + model.predicted_generative_desire().value_or("");
}

/// The canonical text of the prediction made at `k`, as the persuader's
/// belief model currently holds it.
inline std::string prediction_line(StepKind k, const PersuaderView& view, const PersuaderBeliefModel& model) {
  switch (k) {
    case StepKind::predict_preventive: return predicted_preventive_line(view, model);
    case StepKind::predict_gen_belief: return predicted_generative_line(view, model);
    case StepKind::predict_gen_desire: return predicted_desire_line(model);
    default: throw InvariantError(std::string(to_string(k)) + " is not a prediction step");
  }
}

namespace detail {

inline void require_model(bool present, StepKind k, std::string_view field) {
  if (!present) {
    throw InvariantError(std::string(to_string(k)) + " needs " + std::string(field) + " in the belief model");
  }
}

}  // namespace detail

inline Slots persuader_slots(StepKind k, const PersuaderView& view, const std::vector<Utterance>& history,
                             const PersuaderBeliefModel& model) {
  const auto& s = view.scenario;
  const std::string dialog = format_dialog(history);
  switch (k) {
    case StepKind::persuader_open:
      if (view.preventive_content) {
        return {{"background", s.background}, {"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
                {"goal", s.goal},             {"preventive", *view.preventive_content},
                {"generative", view.generative_content}};
      }
      return {{"background", s.background},
              {"persuadee", s.persuadee_name},
              {"persuader", s.persuader_name},
              {"goal", s.goal},
              {"generative", view.generative_content}};
    case StepKind::predict_preventive:
      return {{"background", s.background}, {"persuadee", s.persuadee_name},
              {"persuader", s.persuader_name}, {"goal", s.goal},
              {"preventive", content_or_none(view.preventive_content)}, {"dialog", dialog}};
    case StepKind::persuader_counter_preventive: {
      detail::require_model(model.predicted_preventive().has_value(), k, "a preventive prediction");
      auto spec = *model.predicted_preventive();
      if (!spec.content) spec.content = view.preventive_content;
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"preventive", format_behavior_inline(spec)}, {"generative", view.generative_content},
              {"dialog", dialog}};
    }
    case StepKind::predict_gen_belief:
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"generative", view.generative_content}, {"dialog", dialog}};
    case StepKind::persuader_address_belief:
      detail::require_model(model.predicted_generative_belief().has_value(), k, "a generative belief prediction");
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"generative", predicted_generative_inline(view, model)}, {"dialog", dialog}};
    case StepKind::predict_gen_desire:
      detail::require_model(model.predicted_generative_belief().has_value(), k, "a generative belief prediction");
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"generative", view.generative_content},
              {"generative_belief", predicted_generative_line(view, model)}, {"dialog", dialog}};
    case StepKind::persuader_address_desire:
      detail::require_model(model.predicted_generative_desire().has_value(), k, "a generative desire prediction");
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"generative", view.generative_content},
              {"generative_desire", *model.predicted_generative_desire()}, {"dialog", dialog}};
    default:
      throw InvariantError(std::string(to_string(k)) + " is not a persuader step");
  }
}

inline Slots persuadee_slots(StepKind k, const Scenario& s, const MentalState& state,
                             const std::vector<Utterance>& history) {
  const std::string dialog = format_dialog(history);
  switch (k) {
    case StepKind::persuadee_reveal_preventive:
      return {{"background", s.background},
              {"persuadee", s.persuadee_name},
              {"persuader", s.persuader_name},
              {"goal", s.goal},
              {"preventive", format_behavior_inline(state.preventive)},
              {"generative", format_behavior_inline(state.generative)},
              {"dialog", dialog}};
    case StepKind::persuadee_raise_gen_belief:
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"preventive", format_behavior_inline(state.preventive)},
              {"generative", format_behavior_inline(state.generative)}, {"dialog", dialog}};
    case StepKind::persuadee_raise_gen_desire:
      return {{"persuadee", s.persuadee_name},
              {"persuader", s.persuader_name},
              {"preventive", content_or_none(state.preventive.content)},
              {"preventive_desire", state.preventive.desire.value_or(std::string(kNoneStatement))},
              {"generative", state.generative.content.value_or("")},
              {"generative_desire", state.generative.desire.value_or("")},
              {"dialog", dialog}};
    case StepKind::persuadee_close:
      return {{"persuadee", s.persuadee_name}, {"persuader", s.persuader_name},
              {"generative", state.generative.content.value_or("")}, {"dialog", dialog}};
    default:
      throw InvariantError(std::string(to_string(k)) + " is not a persuadee step");
  }
}

inline std::string assemble_persuader_prompt(const PromptLibrary& prompts, StepKind k, const PersuaderView& view,
                                             const std::vector<Utterance>& history, const PersuaderBeliefModel& model) {
  return prompts.render(template_for(k, view.preventive_content.has_value()),
                        persuader_slots(k, view, history, model));
}

inline std::string assemble_persuadee_prompt(const PromptLibrary& prompts, StepKind k, const Scenario& scenario,
                                             const MentalState& state, const std::vector<Utterance>& history) {
  return prompts.render(template_for(k, state.has_preventive()), persuadee_slots(k, scenario, state, history));
}

/// Block appended to a persuader prompt when the observer asked for a
/// revision.
inline std::string suggestions_block(const PromptLibrary& prompts, const std::string& previous_prediction,
                                     const std::string& suggestions) {
  return prompts.render(template_ids::observer_suggestions,
                        {{"previous_prediction", previous_prediction}, {"suggestions", suggestions}});
}

/// A parsed prediction. Only the fields the step predicts are set.
struct Prediction {
  std::optional<BehaviorSpec> preventive;
  std::optional<std::string> generative_belief;
  std::optional<std::string> generative_desire;
};

namespace detail {

/// The first balanced `{...}` at or after `from`, honoring JSON strings.
inline std::optional<std::string> extract_json_object(std::string_view s, std::size_t from = 0) {
  const auto open = s.find('{', from);
  if (open == std::string_view::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return std::string(s.substr(open, i - open + 1));
    }
  }
  return std::nullopt;
}

/// Position just past `label` (case-insensitive), or npos.
inline std::size_t find_label(std::string_view s, std::string_view label) {
  const auto lowered = text::to_lower(s);
  const auto pos = lowered.find(label);
  return pos == std::string::npos ? pos : pos + label.size();
}

inline nlohmann::json labeled_object(std::string_view output, std::string_view label) {
  auto at = find_label(output, label);
  auto object = extract_json_object(output, at == std::string::npos ? 0 : at);
  if (!object) throw ParseError("no JSON object after '" + std::string(label) + "'", std::string(output));
  try {
    auto j = nlohmann::json::parse(*object);
    if (!j.is_object()) throw ParseError("prediction is not an object", std::string(output));
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed prediction JSON: ") + e.what(), std::string(output));
  }
}

inline std::string required_field(const nlohmann::json& j, const char* key, std::string_view output) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw ParseError(std::string("prediction lacks string field '") + key + "'", std::string(output));
  }
  auto v = text::trim(j[key].get<std::string>());
  if (v.empty()) throw ParseError(std::string("prediction field '") + key + "' is empty", std::string(output));
  return v;
}

}  // namespace detail

/// Parses the output of a prediction step:
///   predict_preventive  `preventive: {"content", "belief", "desire"}`
///   predict_gen_belief  `generative: {"content", "belief", ...}`
///   predict_gen_desire  `generative's desire: <text>`
inline Prediction parse_prediction(StepKind k, std::string_view output) {
  Prediction p;
  switch (k) {
    case StepKind::predict_preventive: {
      auto j = detail::labeled_object(output, "preventive:");
      BehaviorSpec spec = BehaviorSpec::absent(BehaviorRole::preventive);
      if (j.contains("content") && j["content"].is_string()) {
        auto c = text::trim(j["content"].get<std::string>());
        if (!c.empty()) spec.content = c;
      }
      spec.belief = detail::required_field(j, "belief", output);
      spec.desire = detail::required_field(j, "desire", output);
      p.preventive = std::move(spec);
      return p;
    }
    case StepKind::predict_gen_belief: {
      auto j = detail::labeled_object(output, "generative:");
      p.generative_belief = detail::required_field(j, "belief", output);
      return p;
    }
    case StepKind::predict_gen_desire: {
      std::string normalized(output);
      // Curly apostrophes are common in model output.
      for (std::size_t pos; (pos = normalized.find("\xE2\x80\x99")) != std::string::npos;) {
        normalized.replace(pos, 3, "'");
      }
      auto at = detail::find_label(normalized, "generative's desire:");
      if (at == std::string::npos) at = detail::find_label(normalized, "desire:");
      if (at == std::string::npos) throw ParseError("missing \"generative's desire:\" line", std::string(output));
      auto rest = std::string_view(normalized).substr(at);
      auto line = text::trim(rest.substr(0, rest.find('\n')));
      if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = line.substr(1, line.size() - 2);
      if (line.empty()) throw ParseError("empty desire prediction", std::string(output));
      p.generative_desire = line;
      return p;
    }
    default:
      throw InvariantError(std::string(to_string(k)) + " is not a prediction step");
  }
}

/// Writes a prediction into the belief model.
inline void apply_prediction(PersuaderBeliefModel& model, const Prediction& p, bool revision) {
  if (p.preventive) model.set_preventive(*p.preventive, revision);
  if (p.generative_belief) model.set_generative_belief(*p.generative_belief, revision);
  if (p.generative_desire) model.set_generative_desire(*p.generative_desire, revision);
}

/// Cleans an utterance: drops a leading "Output:" or speaker label and
/// surrounding quotes, and folds line breaks. Empty output is a ParseError.
inline std::string parse_utterance_output(std::string_view output) {
  std::string s = text::collapse_whitespace(output);
  for (std::string_view label : {"output:", "response:", "persuader:", "persuadee:"}) {
    if (text::istarts_with(s, label)) s = text::trim(std::string_view(s).substr(label.size()));
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = text::trim(std::string_view(s).substr(1, s.size() - 2));
  if (s.empty()) throw ParseError("empty utterance", std::string(output));
  return s;
}

}  // namespace ctom
