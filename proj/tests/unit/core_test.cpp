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

// Text helpers, core types, prompt library, gateway, mental state, Rouge-L.

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "ctom/ctom.hpp"
#include "support/fixtures.hpp"

namespace ctom {
namespace {

using testing::make_scenario;
using testing::make_state;
using testing::prompts;

// --- text -------------------------------------------------------------------

TEST(Text, NormalizeCollapsesWhitespaceAndCase) {
  EXPECT_EQ(text::normalize("  Hello \n\t World  "), "hello world");
  EXPECT_EQ(text::leak_needle("Persuadee believes X.  "), "persuadee believes x");
}

TEST(Text, SentenceCountIgnoresSingleLetterAbbreviations) {
  EXPECT_EQ(text::sentence_count("One reason."), 1u);
  EXPECT_EQ(text::sentence_count("It is e.g. costly."), 1u);
  EXPECT_EQ(text::sentence_count("First. Second!"), 2u);
  EXPECT_EQ(text::sentence_count("   "), 0u);
}

TEST(Text, NoneMarker) {
  EXPECT_TRUE(text::is_none_marker("None."));
  EXPECT_TRUE(text::is_none_marker(" none "));
  EXPECT_FALSE(text::is_none_marker("nonetheless"));
}

TEST(Text, NormalizedTextMapsBackToOriginal) {
  text::NormalizedText n("  Ab \n  Cd");
  EXPECT_EQ(n.str(), "ab cd");
  EXPECT_EQ(n.origin(0), 2u);
  EXPECT_EQ(n.origin(3), 8u);
}

// --- core types ------------------------------------------------------------

TEST(CoreTypes, ScenarioValidation) {
  auto s = make_scenario(1);
  EXPECT_TRUE(validate_scenario(s).empty());
  s.persuader_name = s.persuadee_name;
  s.domains.clear();
  const auto v = validate_scenario(s);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].field, "persuadee");
  EXPECT_EQ(v[1].field, "domain");
}

TEST(CoreTypes, MentalStateNeedsOneSentenceReasons) {
  auto m = make_state(1, true);
  EXPECT_TRUE(validate_mental_state(m).empty());
  m.generative.belief = "Two reasons. Not one.";
  m.preventive.desire = "";
  const auto v = validate_mental_state(m);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].field, "preventive.desire");
  EXPECT_EQ(v[1].field, "generative.belief");
}

TEST(CoreTypes, AbsentPreventiveMustNotCarryReasons) {
  auto m = make_state(1, false);
  EXPECT_TRUE(validate_mental_state(m).empty());
  m.preventive.belief = "Stray.";
  EXPECT_FALSE(validate_mental_state(m).empty());
}

TEST(CoreTypes, RecordLengthFollowsPreventivePresence) {
  DialogueRecord r{make_scenario(1), make_state(1, false), {}, {}};
  for (std::size_t i = 0; i < 6; ++i) {
    r.utterances.push_back(make_utterance(i % 2 ? Speaker::persuadee : Speaker::persuader, "x", i));
  }
  EXPECT_TRUE(validate_record(r).empty());
  r.mental_state = make_state(1, true);
  EXPECT_FALSE(validate_record(r).empty());
}

TEST(CoreTypes, BeliefModelFieldsAreWriteOnceExceptRevisions) {
  PersuaderBeliefModel m;
  EXPECT_TRUE(m.empty());
  m.set_generative_belief("a");
  EXPECT_THROW(m.set_generative_belief("b"), InvariantError);
  m.set_generative_belief("c", /*revision=*/true);
  EXPECT_EQ(*m.predicted_generative_belief(), "c");
}

// --- prompt library --------------------------------------------------------

TEST(Prompts, ShippedLibraryVerifiesAndIsComplete) {
  const auto& lib = prompts();
  for (auto id : kReferenceTemplateIds) {
    EXPECT_TRUE(lib.contains(id)) << id;
    EXPECT_TRUE(lib.get(id).verbatim) << id;
    EXPECT_EQ(lib.get(id).origin, TemplateOrigin::reference) << id;
  }
  for (auto id : kDerivedTemplateIds) {
    EXPECT_TRUE(lib.contains(id)) << id;
    EXPECT_FALSE(lib.get(id).verbatim) << id;
  }
  for (const auto& c : check_manifest(default_prompts_dir())) EXPECT_TRUE(c.ok()) << c.file;
}

TEST(Prompts, CorrectedVariantSwapsOnlyCorrectedFiles) {
  const auto corrected = PromptLibrary::load(default_prompts_dir(), PromptVariant::corrected);
  EXPECT_NE(corrected.get(template_ids::persuader_counter_preventive).text,
            prompts().get(template_ids::persuader_counter_preventive).text);
  EXPECT_EQ(corrected.get(template_ids::persuader_open).text, prompts().get(template_ids::persuader_open).text);
}

TEST(Prompts, RenderRejectsMissingAndUnknownSlots) {
  EXPECT_EQ(render_text("Hi {{a}} and {{a}}, {{b}}", {{"a", "x"}, {"b", "{{a}}"}}), "Hi x and x, {{a}}");
  EXPECT_THROW(render_text("{{a}}", {}), MissingSlot);
  EXPECT_THROW(render_text("{{a}}", {{"a", "1"}, {"b", "2"}}), UnknownSlot);
  EXPECT_THROW(prompts().get("nope"), UnknownTemplate);
}

TEST(Prompts, ChecksumMismatchIsDetected) {
  const auto dir = testing::temp_dir("prompts");
  std::filesystem::copy(default_prompts_dir(), dir, std::filesystem::copy_options::recursive);
  {
    std::ofstream f(dir / "templates" / "persuadee_close.txt", std::ios::app);
    f << " ";
  }
  EXPECT_THROW(PromptLibrary::load(dir), ChecksumMismatch);
  EXPECT_NO_THROW(PromptLibrary::load(dir, PromptVariant::verbatim, /*verify_checksums=*/false));
  rehash_manifest(dir);
  EXPECT_NO_THROW(PromptLibrary::load(dir));
  std::filesystem::remove_all(dir);
}

TEST(Prompts, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// --- gateway ----------------------------------------------------------------

GatewayOptions fast_retry(int attempts) {
  GatewayOptions o;
  o.retry = RetryPolicy{attempts, std::chrono::milliseconds(100)};
  return o;
}

TEST(Gateway, RetriesTransportErrorsWithExponentialBackoff) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("t", ScriptedBackend::Fault::transport)
      .add("t", ScriptedBackend::Fault::transport)
      .add("t", ScriptedBackend::Reply{std::string("ok")});
  auto clock = std::make_shared<FakeClock>();
  Gateway gw(backend, fast_retry(3), clock);
  EXPECT_EQ(gw.complete(make_prompt_request("t", "p")).text, "ok");

  const auto sleeps = clock->sleeps();
  ASSERT_EQ(sleeps.size(), 2u);
  using std::chrono::milliseconds;
  EXPECT_GE(sleeps[0], milliseconds(100));
  EXPECT_LT(sleeps[0], milliseconds(200));
  EXPECT_GE(sleeps[1], milliseconds(200));
  EXPECT_LT(sleeps[1], milliseconds(400));
  const auto audit = gw.audit_log().entries();
  ASSERT_EQ(audit.size(), 3u);
  EXPECT_EQ(audit[2].attempt, 3);
  EXPECT_EQ(audit[2].outcome, "ok");
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->repeat_last().add("t", ScriptedBackend::Fault::transport);
  Gateway gw(backend, fast_retry(2), std::make_shared<FakeClock>());
  EXPECT_THROW(gw.complete(make_prompt_request("t", "p")), TransportError);
  EXPECT_EQ(backend->call_count(), 2u);
}

TEST(Gateway, RefusalIsNotRetried) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("t", ScriptedBackend::Fault::refusal);
  Gateway gw(backend, fast_retry(5), std::make_shared<FakeClock>());
  EXPECT_THROW(gw.complete(make_prompt_request("t", "p")), BackendRefusal);
  EXPECT_EQ(backend->call_count(), 1u);
}

TEST(Gateway, FillsRoleDefaultsAndKeepsPrompt) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("t", std::vector<std::string>{"ok"});
  GatewayOptions o;
  o.model_id = "m";
  o.temperature = 0.0;
  o.max_tokens = 77;
  Gateway gw(backend, o);
  gw.complete(make_prompt_request("t", "exact prompt"));
  const auto sent = backend->received().at(0);
  EXPECT_EQ(sent.model_id, "m");
  EXPECT_EQ(*sent.temperature, 0.0);
  EXPECT_EQ(*sent.max_tokens, 77);
  EXPECT_EQ(sent.prompt_text(), "exact prompt");
}

TEST(Gateway, ScopedScriptKeysWinOverPlainTags) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("t", std::vector<std::string>{"plain"}).add("item-1::t", std::vector<std::string>{"scoped"});
  Gateway gw(backend);
  EXPECT_EQ(gw.complete(make_prompt_request("t", "p", "item-1")).text, "scoped");
  EXPECT_EQ(gw.complete(make_prompt_request("t", "p", "item-2")).text, "plain");
  EXPECT_THROW(gw.complete(make_prompt_request("t", "p")), ScriptExhausted);
}

TEST(Gateway, RejectsInvalidRequests) {
  Gateway gw(std::make_shared<ScriptedBackend>());
  CompletionRequest r;
  EXPECT_THROW(gw.complete(r), InvariantError);
  r.messages.push_back({ChatRole::assistant, "x"});
  EXPECT_THROW(gw.complete(r), InvariantError);
}

TEST(Gateway, TokenBucketSpacesRequests) {
  auto clock = std::make_shared<FakeClock>();
  TokenBucket bucket(2.0, 2.0, clock);
  for (int i = 0; i < 6; ++i) bucket.acquire();
  // Two tokens up front, then one every half second.
  EXPECT_EQ(clock->now(), std::chrono::seconds(2));
}

TEST(Gateway, HttpBackendRetriesServerErrors) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string auth;
  nlohmann::json last_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      res.set_content("busy", "text/plain");
      return;
    }
    auth = req.get_header_value("Authorization");
    last_body = nlohmann::json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"hello"}}],)"
                    R"("usage":{"prompt_tokens":7,"completion_tokens":2}})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });

  HttpBackendOptions http;
  http.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  http.api_key = "secret-key";
  auto clock = std::make_shared<FakeClock>();
  auto opts = fast_retry(3);
  opts.model_id = "stub-model";
  Gateway gw(std::make_shared<HttpBackend>(http), opts, clock);
  const auto result = gw.complete(make_prompt_request("t", "hi"));
  server.stop();
  t.join();

  EXPECT_EQ(result.text, "hello");
  EXPECT_EQ(result.usage.prompt_tokens, 7);
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(auth, "Bearer secret-key");
  EXPECT_EQ(last_body["model"], "stub-model");
  EXPECT_EQ(last_body["messages"][0]["content"], "hi");
  const auto audit = gw.audit_log().entries();
  ASSERT_EQ(audit.size(), 3u);
  EXPECT_NE(audit[0].outcome.find("503"), std::string::npos);
  EXPECT_EQ(audit[2].outcome, "ok");
  EXPECT_EQ(clock->sleeps().size(), 2u);
}

TEST(Gateway, HttpClientErrorIsARefusal) {
  httplib::Server server;
  server.Post("/chat/completions", [](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  HttpBackendOptions http;
  http.base_url = "http://127.0.0.1:" + std::to_string(port);
  Gateway gw(std::make_shared<HttpBackend>(http), fast_retry(3), std::make_shared<FakeClock>());
  EXPECT_THROW(gw.complete(make_prompt_request("t", "hi")), BackendRefusal);
  server.stop();
  t.join();
  EXPECT_EQ(gw.audit_log().entries().size(), 1u);
}

// --- repair loop ------------------------------------------------------------

TEST(AgentCall, RepairAppendsFormatLineAndGivesUp) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->add("t", std::vector<std::string>{"garbage", "still garbage", "42"});
  Gateway gw(backend);
  RepairOptions o;
  o.max_attempts = 3;
  o.format = "a number";
  std::vector<TraceEvent> trace;
  o.trace = &trace;
  auto parse = [](const std::string& s) {
    if (s != "42") throw ParseError("not a number", s);
    return 42;
  };
  EXPECT_EQ(call_with_repair(gw, make_prompt_request("t", "base"), prompts(), o, parse), 42);
  EXPECT_EQ(trace.size(), 2u);
  const auto sent = backend->received();
  EXPECT_EQ(sent[0].prompt_text(), "base");
  EXPECT_NE(sent[1].prompt_text().find("a number"), std::string::npos);

  backend->add("u", std::vector<std::string>{"x", "y"});
  o.max_attempts = 2;
  try {
    call_with_repair(gw, make_prompt_request("u", "base"), prompts(), o, parse);
    FAIL() << "expected GenerationFailed";
  } catch (const GenerationFailed& e) {
    EXPECT_EQ(e.last_raw(), "y");
  }
}

// --- mental state -----------------------------------------------------------

TEST(MentalState, ParsesBehaviorsWithNonePreventive) {
  const auto b = parse_behavior_output("**Preventive:** None\n- Generative: watch movie.");
  EXPECT_FALSE(b.preventive);
  EXPECT_EQ(b.generative, "watch movie");
  EXPECT_THROW(parse_behavior_output("Generative: x"), ParseError);
}

TEST(MentalState, LinesRoundTrip) {
  for (bool prev : {true, false}) {
    const auto m = make_state(3, prev);
    EXPECT_EQ(parse_mental_state_lines(serialize_mental_state_lines(m)), m);
  }
}

TEST(MentalState, RejectsOutOfOrderOrMultiReasonLines) {
  EXPECT_THROW(parse_mental_state_lines("Preventive: a\nDesire: x.\nBelief: y.\nGenerative: b\nBelief: z.\nDesire: w."),
               ParseError);
  EXPECT_THROW(parse_mental_state_lines("Preventive: a\nBelief: It costs money. It is far.\nDesire: y.\nGenerative: join the garden\nBelief: z.\n"
                                        "Desire: w."),
               ParseError);
}

TEST(MentalState, GenerateRepairsThenSucceeds) {
  auto backend = std::make_shared<ScriptedBackend>();
  const auto m = make_state(4, true);
  backend->add("behavior_gen", std::vector<std::string>{"I think he wants to game.",
                                                         "Preventive: stay home and play video games\n"
                                                         "Generative: join the community garden project"});
  backend->add("belief_desire_gen", std::vector<std::string>{serialize_mental_state_lines(m)});
  Gateway gw(backend);
  EXPECT_EQ(generate_mental_state(prompts(), make_scenario(4), gw), m);
  EXPECT_EQ(backend->call_count(), 3u);
}

TEST(MentalState, PreventivePresenceMustAgreeAcrossCalls) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->repeat_last();
  backend->add("behavior_gen", std::vector<std::string>{"Preventive: none\nGenerative: join the garden"});
  backend->add("belief_desire_gen", std::vector<std::string>{serialize_mental_state_lines(make_state(1, true))});
  Gateway gw(backend);
  MentalStateOptions o;
  o.max_attempts = 2;
  EXPECT_THROW(generate_mental_state(prompts(), make_scenario(1), gw, o), GenerationFailed);
}

TEST(MentalState, PolarityLintFlagsPositiveGenerativeBelief) {
  auto m = make_state(1, false);
  EXPECT_TRUE(polarity_warnings(m).empty());
  m.generative.belief = "Persuadee believes that gardening is great.";
  EXPECT_EQ(polarity_warnings(m).size(), 1u);
}

// --- rouge ------------------------------------------------------------------

TEST(Rouge, KnownValues) {
  const auto r = rouge_l("the cat sat on the mat", "the cat is on the mat");
  EXPECT_DOUBLE_EQ(r.precision, 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.recall, 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.f1, 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(rouge_l("", "a b").f1, 0.0);
  EXPECT_DOUBLE_EQ(rouge_l("Hello, World!", "hello world").f1, 1.0);
  EXPECT_THROW(rouge_l("a", "..."), EmptyReference);
}

TEST(Rouge, LongInputsUseTheHeapPath) {
  std::vector<int> a(300), b(300);
  for (int i = 0; i < 300; ++i) a[i] = b[299 - i] = i;
  EXPECT_EQ(lcs_length(a, b), 1u);
  EXPECT_EQ(lcs_length(a, a), 300u);
}

}  // namespace
}  // namespace ctom
