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

// Dialogue script, prediction parsing, observer loop and double-blind audit.

#include <gtest/gtest.h>

#include "ctom/ctom.hpp"
#include "support/fixtures.hpp"

namespace ctom {
namespace {

using testing::make_scenario;
using testing::make_state;
using testing::ObserverMode;
using testing::prompts;
using testing::ScriptedAgents;

// --- script and parsing ----------------------------------------------------

TEST(Script, PlanLengths) {
  EXPECT_EQ(plan_script(true).size(), 11u);
  EXPECT_EQ(plan_script(false).size(), 8u);
  EXPECT_EQ(plan_script(false).front(), StepKind::persuader_open);
  EXPECT_EQ(template_for(StepKind::persuader_open, false), template_ids::persuader_open_no_preventive);
  EXPECT_EQ(template_for(StepKind::persuader_open, true), template_ids::persuader_open);
}

TEST(Script, PersuaderPromptsNeverCarryTrueReasons) {
  const auto s = make_scenario(2);
  const auto m = make_state(2, true);
  const auto view = PersuaderView::of(s, m);
  PersuaderBeliefModel model;
  const auto prompt = assemble_persuader_prompt(prompts(), StepKind::persuader_open, view, {}, model);
  for (const auto& [_, sentence] : secret_statements(m)) {
    EXPECT_EQ(prompt.find(sentence), std::string::npos) << sentence;
  }
  EXPECT_NE(prompt.find(*m.generative.content), std::string::npos);
}

TEST(Parse, PreventivePrediction) {
  const auto p = parse_prediction(StepKind::predict_preventive,
                                  "Sure.\npreventive: {\"content\": \"nap\", \"belief\": \"He is {tired}.\", "
                                  "\"desire\": \"He wants rest.\"} trailing");
  ASSERT_TRUE(p.preventive);
  EXPECT_EQ(*p.preventive->content, "nap");
  EXPECT_EQ(*p.preventive->belief, "He is {tired}.");
  EXPECT_FALSE(p.generative_belief);
  EXPECT_THROW(parse_prediction(StepKind::predict_preventive, "preventive: {\"belief\": \"x\"}"), ParseError);
  EXPECT_THROW(parse_prediction(StepKind::predict_gen_belief, "no object"), ParseError);
}

TEST(Parse, DesirePredictionAcceptsCurlyApostrophe) {
  const auto p = parse_prediction(StepKind::predict_gen_desire, "Generative\xE2\x80\x99s desire: \"To belong.\"\nmore");
  EXPECT_EQ(*p.generative_desire, "To belong.");
  EXPECT_THROW(parse_prediction(StepKind::persuader_open, "x"), InvariantError);
}

TEST(Parse, UtteranceCleanup) {
  EXPECT_EQ(parse_utterance_output("Output: \"Hello\n there\""), "Hello there");
  EXPECT_THROW(parse_utterance_output("  "), ParseError);
}

// --- observer ---------------------------------------------------------------

TEST(Observer, ParseVerdicts) {
  EXPECT_EQ(parse_observer_output("Looks right. No changes are necessary.").verdict, Verdict::accept);
  EXPECT_EQ(parse_observer_output("no further modifications needed").verdict, Verdict::accept);
  const auto fb = parse_observer_output(" Be more specific. ");
  EXPECT_EQ(fb.verdict, Verdict::revise);
  EXPECT_EQ(fb.suggestions, "Be more specific.");
  EXPECT_THROW(parse_observer_output(""), ParseError);
}

TEST(Observer, RedactsTrueSentencesRegardlessOfSpacing) {
  const auto m = make_state(5, true);
  auto shouted = *m.generative.belief;
  for (auto& c : shouted) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  const auto r = redact_secrets("Hint: " + shouted + "  and\n" + *m.preventive.desire + " ok", m);
  EXPECT_EQ(r.text, "Hint: [withheld].  and\n[withheld]. ok");
  EXPECT_EQ(r.fields, (std::vector<std::string>{"preventive.desire", "generative.belief"}));
}

TEST(Observer, UnparseableOutputFailsOpen) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add(std::string(kObserverTag), std::vector<std::string>{"", "  "});
  Gateway gw(backend);
  std::vector<TraceEvent> trace;
  ReviewOptions o;
  o.trace = &trace;
  const auto fb = review(prompts(), gw, make_scenario(1), make_state(1, false), {}, "p", "r", o);
  EXPECT_EQ(fb.verdict, Verdict::accept);
  ASSERT_FALSE(trace.empty());
  EXPECT_EQ(trace.back().kind, TraceKind::warning);
}

TEST(Observer, ReviseLoopPassesSuggestionsAndStops) {
  std::vector<std::optional<RevisionRequest>> seen;
  auto attempt = [&](const std::optional<RevisionRequest>& req, int round) {
    seen.push_back(req);
    return RoundArtifacts{{}, "line " + std::to_string(round), "resp " + std::to_string(round)};
  };
  auto reviewer = [](const RoundArtifacts&, int round) {
    return round < 2 ? ObserverFeedback{Verdict::revise, "fix it"} : ObserverFeedback::accept();
  };
  const auto r = revise_loop(attempt, reviewer, 5);
  EXPECT_EQ(r.reviews, 2);
  EXPECT_EQ(r.final.response, "resp 2");
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_FALSE(seen[0]);
  EXPECT_EQ(seen[1]->previous_prediction, "line 1");
  EXPECT_EQ(seen[1]->suggestions, "fix it");

  const auto capped = revise_loop(attempt, [](const RoundArtifacts&, int) { return ObserverFeedback{Verdict::revise, "no"}; }, 3);
  EXPECT_EQ(capped.reviews, 3);
  EXPECT_EQ(capped.final.response, "resp 3");
  EXPECT_THROW(revise_loop(attempt, reviewer, 0), ConfigError);
}

// --- full dialogues ---------------------------------------------------------

std::size_t count_kind(const DialogueRecord& r, TraceKind k) {
  return static_cast<std::size_t>(
      std::count_if(r.trace.begin(), r.trace.end(), [&](const TraceEvent& e) { return e.kind == k; }));
}

TEST(Dialogue, EightUtterancesWithPreventive) {
  ScriptedAgents sa(ObserverMode::accept);
  const auto m = make_state(1, true);
  sa.book->put("item-1", m);
  DialogueOptions o;
  o.scope = "item-1";
  const auto r = run_dialogue(prompts(), make_scenario(1), m, sa.agents(), o);
  ASSERT_EQ(r.utterances.size(), 8u);
  EXPECT_TRUE(validate_record(r).empty());
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(r.utterances[i].speaker, i % 2 ? Speaker::persuadee : Speaker::persuader);
    EXPECT_EQ(r.utterances[i].index, i);
  }
  EXPECT_NE(r.utterances[1].text.find(*m.preventive.belief), std::string::npos);
  EXPECT_EQ(count_kind(r, TraceKind::prediction), 3u);
  EXPECT_EQ(count_kind(r, TraceKind::observer_feedback), 3u);
}

TEST(Dialogue, SixUtterancesWithoutPreventive) {
  ScriptedAgents sa;
  const auto m = make_state(2, false);
  sa.book->put("item-2", m);
  std::vector<std::string> tags;
  DialogueOptions o;
  o.scope = "item-2";
  o.on_request = [&](const CompletionRequest& req) { tags.push_back(req.request_tag); };
  const auto r = run_dialogue(prompts(), make_scenario(2), m, sa.agents(/*with_observer=*/false), o);
  ASSERT_EQ(r.utterances.size(), 6u);
  EXPECT_EQ(count_kind(r, TraceKind::prediction), 2u);
  EXPECT_EQ(count_kind(r, TraceKind::observer_feedback), 0u);
  EXPECT_EQ(std::count(tags.begin(), tags.end(), "persuadee_reveal_preventive"), 0);
  EXPECT_EQ(std::count(tags.begin(), tags.end(), std::string(kObserverTag)), 0);
}

TEST(Dialogue, RevisionUsesTheRevisedResponse) {
  ScriptedAgents sa(ObserverMode::revise_once);
  const auto m = make_state(3, true);
  sa.book->put("item-3", m);
  DialogueOptions o;
  o.scope = "item-3";
  const auto r = run_dialogue(prompts(), make_scenario(3), m, sa.agents(), o);
  for (std::size_t i : {2u, 4u, 6u}) EXPECT_NE(r.utterances[i].text.find(" 2)"), std::string::npos) << i;
  EXPECT_EQ(count_kind(r, TraceKind::prediction), 6u);
  EXPECT_EQ(count_kind(r, TraceKind::observer_feedback), 6u);
}

TEST(Dialogue, PersistentParseFailureThrows) {
  ScriptedAgents sa;
  sa.backend->on("persuadee_close", [](const CompletionRequest&, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return std::string("   ");
  });
  const auto m = make_state(4, false);
  sa.book->put("item-4", m);
  DialogueOptions o;
  o.scope = "item-4";
  EXPECT_THROW(run_dialogue(prompts(), make_scenario(4), m, sa.agents(), o), GenerationFailed);
}

// --- double-blind audit -----------------------------------------------------

TEST(Audit, CleanRunHasNoFindings) {
  ScriptedAgents sa(ObserverMode::leak_once);
  const auto m = make_state(6, true);
  sa.book->put("item-6", m);
  std::vector<CapturedPrompt> captured;
  DialogueOptions o;
  o.scope = "item-6";
  o.on_request = [&](const CompletionRequest& req) { captured.push_back({"d", req.request_tag, req.prompt_text()}); };
  const auto r = run_dialogue(prompts(), make_scenario(6), m, sa.agents(), o);
  EXPECT_GE(count_kind(r, TraceKind::leak_redacted), 1u);
  EXPECT_TRUE(audit_double_blind(r, captured).empty());
}

TEST(Audit, DetectsPlantedLeaksInBothDirections) {
  ScriptedAgents sa;
  const auto m = make_state(7, true);
  sa.book->put("item-7", m);
  std::vector<CapturedPrompt> captured;
  DialogueOptions o;
  o.scope = "item-7";
  o.on_request = [&](const CompletionRequest& req) { captured.push_back({"d", req.request_tag, req.prompt_text()}); };
  auto r = run_dialogue(prompts(), make_scenario(7), m, sa.agents(), o);

  // A true desire that was never spoken, and a prediction shown to the persuadee.
  r.mental_state.generative.desire = "Persuadee secretly longs for quiet evenings.";
  captured.push_back({"d", "persuader_address_desire", "context: Persuadee secretly longs for quiet  evenings."});
  std::string predicted;
  for (const auto& e : r.trace) {
    if (e.kind == TraceKind::prediction && e.fields.count("belief")) predicted = e.fields.at("belief");
  }
  ASSERT_FALSE(predicted.empty());
  captured.push_back({"d", "persuadee_close", "They think: " + predicted});

  const auto findings = audit_double_blind(r, captured);
  ASSERT_EQ(findings.size(), 2u);
  EXPECT_EQ(findings[0].field, "generative.desire");
  EXPECT_EQ(findings[1].field, "predicted.belief");
}

}  // namespace
}  // namespace ctom
