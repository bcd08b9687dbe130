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

// Evaluator, dataset files, batch runner, commands and config.

#include <gtest/gtest.h>

#include <thread>

#include "ctom/ctom.hpp"
#include "support/fixtures.hpp"

namespace ctom {
namespace {

using testing::make_scenario;
using testing::make_state;
using testing::prompts;
using testing::temp_dir;
using testing::write_file;

std::vector<Utterance> alternating(std::size_t n) {
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(make_utterance(i % 2 ? Speaker::persuadee : Speaker::persuader,
                                 "Turn " + std::to_string(i) + " about the garden.", i));
  }
  return out;
}

Transcript transcript(std::size_t i, bool with_preventive) {
  const auto m = make_state(i, with_preventive);
  return Transcript{make_scenario(i), alternating(expected_utterance_count(m)), m};
}

std::size_t line_count(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) return 0;
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// --- judges -----------------------------------------------------------------

TEST(Judge, ScoreAndAnswerParsing) {
  EXPECT_EQ(parse_score("Reasoning...\nScore: **4**", 1, 5), 4);
  EXPECT_THROW(parse_score("Score: 6", 1, 5), ParseError);
  EXPECT_THROW(parse_score("four", 1, 5), ParseError);
  EXPECT_TRUE(parse_yes_no("Answer: Yes."));
  EXPECT_FALSE(parse_yes_no("answer: no"));
  EXPECT_THROW(parse_yes_no("maybe"), ParseError);
}

TEST(Judge, CombineNeedsPreventiveFlagsWhenPresent) {
  CToMFlags f;
  f.generative_belief_addressed = f.generative_desire_addressed = true;
  EXPECT_TRUE(combine_ctom(f, false));
  EXPECT_THROW(combine_ctom(f, true), InvariantError);
  f.preventive_belief_altered = false;
  f.preventive_desire_altered = false;
  EXPECT_FALSE(combine_ctom(f, true));
  f.preventive_desire_altered = true;
  EXPECT_TRUE(combine_ctom(f, true));
}

TEST(Judge, MeanIsOrderIndependent) {
  Mean a, b;
  for (double v : {0.1, 1e16, -1e16, 0.2}) a.add(v);
  for (double v : {-1e16, 0.2, 0.1, 1e16}) b.add(v);
  EXPECT_EQ(*a.value(), *b.value());
  EXPECT_FALSE(Mean{}.value());
  EXPECT_FALSE(Tally{}.percent());
}

TEST(DatasetEval, UnparseableVerdictsAreExcludedNotScored) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("item-0::helpfulness", std::vector<std::string>{"Score: 4"})
      .add("item-1::helpfulness", std::vector<std::string>{"great dialogue", "Score: 9"})
      .add("item-2::helpfulness", std::vector<std::string>{"Score: 2"});
  Gateway judge(backend);
  DatasetEvalOptions o;
  o.metrics = {"helpfulness"};
  const auto rep = evaluate_dataset(prompts(), judge, {transcript(0, false), transcript(1, false), transcript(2, true)}, o);
  EXPECT_EQ(rep.n, 3u);
  EXPECT_EQ(rep.helpfulness.count(), 2u);
  EXPECT_EQ(rep.helpfulness.excluded, 1u);
  EXPECT_DOUBLE_EQ(*rep.helpfulness.value(), 3.0);
  EXPECT_TRUE(rep.records[1].excluded.count("helpfulness"));
  EXPECT_EQ(rep.context_coherence.count(), 0u);
  EXPECT_EQ(rep.context_coherence.excluded, 0u);
}

TEST(DatasetEval, OracleModeSkipsInference) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("item-0::ctom_gen_belief", std::vector<std::string>{"Answer: yes"})
      .add("item-0::ctom_gen_desire", std::vector<std::string>{"Answer: yes"})
      .add("item-1::ctom_gen_belief", std::vector<std::string>{"Answer: yes"})
      .add("item-1::ctom_gen_desire", std::vector<std::string>{"Answer: no"});
  Gateway judge(backend);
  DatasetEvalOptions o;
  o.metrics = {"ctom_eval"};
  o.ctom_oracle_mode = true;
  const auto rep = evaluate_dataset(prompts(), judge, {transcript(0, false), transcript(1, false)}, o);
  EXPECT_DOUBLE_EQ(*rep.ctom_eval.percent(), 50.0);
  EXPECT_EQ(backend->call_count(), 4u);
  // The statement under test is the recorded one.
  EXPECT_NE(backend->received()[0].prompt_text().find(*make_state(0, false).generative.belief), std::string::npos);
}

TEST(DatasetEval, InferredStateDrivesComponentQuestions) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("ctom_infer", std::vector<std::string>{serialize_mental_state_lines(make_state(9, true))})
      .add("ctom_prev_belief", std::vector<std::string>{"Answer: no"})
      .add("ctom_prev_desire", std::vector<std::string>{"Answer: yes"})
      .add("ctom_gen_belief", std::vector<std::string>{"Answer: yes"})
      .add("ctom_gen_desire", std::vector<std::string>{"Answer: yes"});
  Gateway judge(backend);
  auto t = transcript(1, false);
  t.truth.reset();
  const auto v = ctom_eval(prompts(), judge, t);
  EXPECT_TRUE(v.has_preventive);
  EXPECT_FALSE(*v.flags.preventive_belief_altered);
  EXPECT_TRUE(v.persuaded);
  EXPECT_THROW(ctom_eval(prompts(), judge, t, {{}, /*oracle_mode=*/true}), InvariantError);
}

TEST(ModelEval, FixedPrefixScoresAgainstTheFifthTurn) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add(std::string(kFixedPersuaderTag), std::vector<std::string>{"Output: Turn 4 about the garden."})
      .add(std::string(kPersuasiveTag), std::vector<std::string>{"Score: 7"});
  Gateway gw(backend);
  auto shorty = transcript(1, false);
  shorty.utterances.resize(4);
  std::vector<FixedRecordResult> results = {fixed_persuadee_record(prompts(), gw, gw, transcript(0, true), 0),
                                            fixed_persuadee_record(prompts(), gw, gw, shorty, 1)};
  // Only the first four turns are shown to the model.
  const auto prompt = backend->received()[0].prompt_text();
  EXPECT_NE(prompt.find("Turn 3 about"), std::string::npos);
  EXPECT_EQ(prompt.find("Turn 4 about"), std::string::npos);
  const auto rep = aggregate_fixed(std::move(results));
  EXPECT_DOUBLE_EQ(*rep.rouge_l_f1.value(), 1.0);
  EXPECT_DOUBLE_EQ(*rep.persuasive.value(), 7.0);
  EXPECT_EQ(rep.rouge_l_f1.excluded, 1u);
}

TEST(ModelEval, DynamicArenaCombinesSatisfactionVerdicts) {
  testing::ScriptedAgents persuadee;
  const auto m = make_state(0, true);
  persuadee.book->put("item-0", m);
  auto model = std::make_shared<ScriptedBackend>();
  model->on(std::string(kArenaPersuaderTag), [](const CompletionRequest&, std::size_t n) -> std::optional<ScriptedBackend::Reply> {
    return "Persuader line " + std::to_string(n) + ".";
  });
  auto judge = std::make_shared<ScriptedBackend>();
  judge->add("persuasive", std::vector<std::string>{"Score: 8"})
      .add("preventive_satisfaction", std::vector<std::string>{"Answer: yes"})
      .add("generative_belief_satisfaction", std::vector<std::string>{"Answer: yes"})
      .add("generative_desire_satisfaction", std::vector<std::string>{"Answer: no"});
  Gateway model_gw(model), judge_gw(judge);
  ModelEvalOptions o;
  o.judge.scope = "item-0";
  auto t = transcript(0, true);
  auto r = dynamic_persuadee_record(prompts(), model_gw, *persuadee.gateway, judge_gw, t, 0, o);
  ASSERT_EQ(r.dialogue.size(), 8u);
  EXPECT_EQ(r.dialogue[6].speaker, Speaker::persuader);
  // The final persuader turn is the response under judgment.
  const auto persuasive_prompt = judge->received()[0].prompt_text();
  EXPECT_NE(persuasive_prompt.find(r.dialogue[6].text), std::string::npos);
  EXPECT_EQ(*r.persuasive, 8);
  EXPECT_FALSE(*r.generative_satisfied());
  EXPECT_FALSE(*r.ctom);

  t.truth.reset();
  auto none = dynamic_persuadee_record(prompts(), model_gw, *persuadee.gateway, judge_gw, t, 1, o);
  const auto rep = aggregate_dynamic({r, none});
  EXPECT_DOUBLE_EQ(*rep.preventive_satisfaction.percent(), 100.0);
  EXPECT_DOUBLE_EQ(*rep.ctom.percent(), 0.0);
  EXPECT_EQ(rep.ctom.excluded, 1u);
}

// --- dataset files ----------------------------------------------------------

TEST(DatasetIO, ReferenceRecordRoundTrips) {
  const auto r = parse_record(read_text_file(testing::data_dir() / "vertical_farming_record.json"));
  EXPECT_EQ(r.utterances.size(), 8u);
  EXPECT_TRUE(structurally_equal(parse_record(serialize_record(r)), r));
}

TEST(DatasetIO, ShapeAndRuleErrorsAreDistinguished) {
  auto j = nlohmann::json::parse(serialize_record(DialogueRecord{make_scenario(1), make_state(1, false), alternating(6), {}}));
  EXPECT_NO_THROW(record_from_json(j));
  auto bad_speaker = j;
  bad_speaker["dialog"][0] = "narrator: hi";
  EXPECT_THROW(record_from_json(bad_speaker), SchemaError);
  auto short_dialog = j;
  short_dialog["dialog"].erase(5);
  EXPECT_THROW(record_from_json(short_dialog), InvariantError);
  EXPECT_THROW(parse_record("{not json"), SchemaError);
}

TEST(DatasetIO, CorpusAcceptsArraysAndJsonLines) {
  const auto a = serialize_record(DialogueRecord{make_scenario(1), make_state(1, false), alternating(6), {}});
  const auto b = serialize_record(DialogueRecord{make_scenario(2), make_state(2, true), alternating(8), {}});
  EXPECT_EQ(parse_corpus(a + "\n\n" + b + "\n").size(), 2u);
  EXPECT_EQ(parse_corpus("[" + a + "," + b + "]").size(), 2u);
}

TEST(DatasetIO, TracesRoundTrip) {
  const auto dir = temp_dir("trace");
  const std::vector<TraceEvent> events = {{TraceKind::prediction, "predict_gen_belief", 1, "raw", {{"belief", "b"}}},
                                          {TraceKind::observer_feedback, "predict_gen_belief", 1, "ok", {}}};
  {
    AppendWriter w(dir / "t.jsonl");
    w.write_line(serialize_trace(0, events));
    w.write_line(serialize_trace(3, {}));
  }
  const auto back = read_traces(dir / "t.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at(0), events);
  EXPECT_TRUE(back.at(3).empty());
  std::filesystem::remove_all(dir);
}

TEST(DatasetIO, DedupeIgnoresCaseAndSpacing) {
  auto a = make_scenario(1), b = make_scenario(1), c = make_scenario(2);
  b.background = "  " + text::to_lower(b.background) + " ";
  b.tag = "other tag";
  const auto kept = dedupe_scenarios({a, b, c});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].tag, a.tag);
}

TEST(DatasetIO, SplitFailsWhenADomainIsShort) {
  std::vector<Scenario> s = {make_scenario(0, {"Art"}), make_scenario(1, {"Art"}), make_scenario(2, {"Law", "Art"})};
  EXPECT_THROW(stratified_split(s, {{"Art", 3}}, 1), InsufficientRecords);
  const auto split = stratified_split(s, {{"Art", 2}, {"Law", 1}}, 1);
  EXPECT_EQ(split.test, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(split.train.empty());
  EXPECT_EQ(domain_stats(s).at("Art"), 3u);
}

TEST(DatasetIO, ReferenceCountsTotal) {
  std::size_t total = 0;
  for (const auto& [_, n] : reference_test_counts()) total += n;
  EXPECT_EQ(reference_test_counts().size(), 35u);
  EXPECT_EQ(total, 1099u);
}

// --- batch runner -----------------------------------------------------------

TEST(Batch, ResultsArriveInIndexOrder) {
  std::vector<std::size_t> order;
  run_ordered<std::size_t>(
      40, 4,
      [](std::size_t i) {
        std::this_thread::sleep_for(std::chrono::microseconds((i * 7919) % 500));
        return i * i;
      },
      [&](std::size_t i, std::size_t&& v) {
        EXPECT_EQ(v, i * i);
        order.push_back(i);
      });
  ASSERT_EQ(order.size(), 40u);
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}

TEST(Batch, FirstErrorIsRethrown) {
  std::vector<std::size_t> seen;
  EXPECT_THROW(run_ordered<int>(
                   20, 3,
                   [](std::size_t i) -> int {
                     if (i == 5) throw ParseError("boom", "");
                     return 0;
                   },
                   [&](std::size_t i, int&&) { seen.push_back(i); }),
               ParseError);
  for (auto i : seen) EXPECT_LT(i, 5u);
}

// --- commands ---------------------------------------------------------------

TEST(Commands, GenStatesRejectsAndRetriesOnResume) {
  const auto dir = temp_dir("states");
  {
    std::ofstream f(dir / "scenarios.jsonl");
    for (std::size_t i = 0; i < 4; ++i) f << scenario_to_json(make_scenario(i)).dump() << "\n";
  }
  auto backend = std::make_shared<ScriptedBackend>();
  testing::install_mental_state_script(*backend, [](std::size_t i) { return i % 2 == 0; });
  backend->on("item-3::behavior_gen", [](const CompletionRequest&, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return std::string("I would rather not say.");
  });
  Config config;
  config.parallelism = 2;
  const auto rt = testing::scripted_runtime(backend, config);
  const auto out = dir / "states.jsonl";

  auto s = gen_states(rt, dir / "scenarios.jsonl", out);
  EXPECT_EQ(s.written, 3u);
  EXPECT_EQ(s.rejected, 1u);
  const auto states = read_states(out);
  ASSERT_EQ(states.size(), 3u);
  EXPECT_EQ(states[0].mental_state, make_state(0, true));
  EXPECT_EQ(states[1].mental_state, make_state(1, false));
  const auto rejects = nlohmann::json::parse(read_text_file(sidecar(out, ".rejects.jsonl")));
  EXPECT_EQ(rejects["index"], 3);
  EXPECT_EQ(rejects["last_output"], "I would rather not say.");

  s = gen_states(rt, dir / "scenarios.jsonl", out);
  EXPECT_EQ(s.skipped, 3u);
  EXPECT_EQ(s.rejected, 1u);
  EXPECT_EQ(line_count(out), 3u);
  EXPECT_EQ(line_count(sidecar(out, ".rejects.jsonl")), 2u);
  std::filesystem::remove_all(dir);
}

TEST(Commands, GenDialoguesWritesSidecarsAndPassesAudit) {
  const auto dir = temp_dir("dialogues");
  auto book = std::make_shared<testing::StateBook>();
  testing::write_states(dir / "states.jsonl", 4, book.get());
  auto backend = std::make_shared<ScriptedBackend>();
  testing::install_dialogue_script(*backend, book, testing::ObserverMode::revise_once);
  Config config;
  config.capture_prompts = true;
  config.parallelism = 3;
  const auto rt = testing::scripted_runtime(backend, config);
  const auto out = dir / "corpus.jsonl";

  const auto s = gen_dialogues(rt, dir / "states.jsonl", out);
  EXPECT_EQ(s.written, 4u);
  const auto corpus = read_corpus(out);
  ASSERT_EQ(corpus.size(), 4u);
  EXPECT_EQ(corpus[0].utterances.size(), 8u);
  EXPECT_EQ(corpus[1].utterances.size(), 6u);
  const auto traces = read_traces(sidecar(out, ".trace.jsonl"));
  EXPECT_EQ(traces.size(), 4u);
  EXPECT_FALSE(traces.at(3).empty());
  EXPECT_TRUE(audit_corpus(out, sidecar(out, ".prompts.jsonl"), sidecar(out, ".trace.jsonl")).empty());
  EXPECT_FALSE(std::filesystem::exists(sidecar(out, ".rejects.jsonl")));

  const auto calls = backend->call_count();
  const auto again = gen_dialogues(rt, dir / "states.jsonl", out);
  EXPECT_EQ(again.skipped, 4u);
  EXPECT_EQ(again.written, 0u);
  EXPECT_EQ(backend->call_count(), calls);
  std::filesystem::remove_all(dir);
}

TEST(Commands, DedupeAndSplitFilesKeepRecordsVerbatim) {
  const auto dir = temp_dir("files");
  {
    std::ofstream f(dir / "in.jsonl");
    for (std::size_t i : {0u, 1u, 0u, 2u}) f << scenario_to_json(make_scenario(i, {i == 2 ? "Art" : "Law"})).dump() << "\n";
  }
  EXPECT_EQ(dedupe_file(dir / "in.jsonl", dir / "dedup.jsonl"), 3u);
  const auto split = split_file(dir / "dedup.jsonl", {{"Law", 1}, {"Art", 1}}, 7, dir / "train.jsonl", dir / "test.jsonl");
  EXPECT_EQ(split.test.size(), 2u);
  EXPECT_EQ(line_count(dir / "train.jsonl"), 1u);
  EXPECT_EQ(read_scenarios(dir / "test.jsonl").size(), 2u);
  std::ostringstream os;
  EXPECT_EQ(stats(dir / "dedup.jsonl", os).at("Law"), 2u);
  EXPECT_NE(os.str().find("total_records\t3"), std::string::npos);
  std::filesystem::remove_all(dir);
}

// --- config -----------------------------------------------------------------

TEST(Config, RolesInheritDefaultsButJudgesStayDeterministic) {
  const auto dir = temp_dir("config");
  write_file(dir / "config.json", R"({
    "roles": {
      "default": {"backend": "scripted", "script": "s.json", "temperature": 0.7, "model_id": "m"},
      "judge": {"max_tokens": 64}
    },
    "observer": {"max_rounds": 3},
    "retry": {"attempts": 5}
  })");
  const auto c = load_config(dir / "config.json");
  EXPECT_EQ(*c.role("persuader").temperature, 0.7);
  EXPECT_EQ(c.role("persuader").model_id, "m");
  EXPECT_FALSE(c.role("judge").temperature);
  EXPECT_EQ(c.role("judge").max_tokens, 64);
  EXPECT_FALSE(c.role("observer").temperature);
  EXPECT_EQ(c.role("judge").script, (dir / "s.json").string());
  EXPECT_EQ(c.observer_max_rounds, 3);
  EXPECT_EQ(c.retry_attempts, 5);
  std::filesystem::remove_all(dir);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"parallel": 2})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"parallelism": 0})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"roles": {"default": {"backend": "grpc"}}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"prompt_variant": "fancy"})")), ConfigError);
}

}  // namespace
}  // namespace ctom
