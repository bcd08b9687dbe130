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

// Shared test fixtures: synthetic scenarios and mental states, and scripted
// responders that play every dialogue role by reading the request.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "ctom/ctom.hpp"

namespace ctom::testing {

inline const std::filesystem::path& data_dir() {
  static const std::filesystem::path dir = CTOM_TEST_DATA_DIR;
  return dir;
}

inline const PromptLibrary& prompts() {
  static const PromptLibrary lib = PromptLibrary::load(default_prompts_dir());
  return lib;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  static std::mt19937_64 rng(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("ctom-" + name + "-" + std::to_string(rng() % 1000000007));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline Scenario make_scenario(std::size_t i, std::vector<std::string> domains = {"Lifestyle"}) {
  const auto n = std::to_string(i);
  Scenario s;
  s.tag = "Synthetic " + n;
  s.background = "Case " + n + ": Mia wants Leo to change how he spends his weekend number " + n + ".";
  s.persuadee_name = "Leo";
  s.persuader_name = "Mia";
  s.goal = "persuade Leo to join the community garden project " + n;
  s.domains = std::move(domains);
  return s;
}

/// Every belief and desire sentence carries the index so that no two
/// states share a sentence.
inline MentalState make_state(std::size_t i, bool with_preventive) {
  const auto n = std::to_string(i);
  MentalState m;
  if (with_preventive) {
    m.preventive = BehaviorSpec{BehaviorRole::preventive, "stay home and play video games",
                                "Persuadee believes that gaming marathon " + n + " is the best way to unwind.",
                                "Persuadee wants to finish campaign level " + n + " this weekend."};
  }
  m.generative = BehaviorSpec{BehaviorRole::generative, "join the community garden project",
                              "Persuadee believes that garden plot " + n + " would take too much effort.",
                              "Persuadee hopes to meet friendly neighbors from block " + n + "."};
  return m;
}

/// Scope -> true mental state, for responders that play the persuadee or
/// the observer.
class StateBook {
 public:
  void put(const std::string& scope, MentalState m) {
    std::lock_guard lock(mu_);
    states_[scope] = std::move(m);
  }
  MentalState get(const std::string& scope) const {
    std::lock_guard lock(mu_);
    auto it = states_.find(scope);
    if (it == states_.end()) throw std::runtime_error("no state for scope '" + scope + "'");
    return it->second;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, MentalState> states_;
};

enum class ObserverMode {
  /// Always "no changes are necessary".
  accept,
  /// Revise the first guess, accept the revised one.
  revise_once,
  /// Never satisfied.
  always_revise,
  /// Like revise_once, but the suggestion quotes the true belief and desire.
  leak_once,
};

inline bool is_revised(const CompletionRequest& r) {
  return r.prompt_text().find("Reviewer suggestions:") != std::string::npos;
}

/// Text of the prompt after `marker`, up to the next blank-line section.
inline std::string section_after(const std::string& prompt, const std::string& marker) {
  auto at = prompt.rfind(marker);
  if (at == std::string::npos) return {};
  return prompt.substr(at + marker.size());
}

/// Installs content-driven responders for every dialogue tag. Persuadee
/// turns repeat their true reasons word for word, which the double-blind
/// audit has to tolerate once they are part of the conversation.
inline void install_dialogue_script(ScriptedBackend& b, std::shared_ptr<const StateBook> book,
                                    ObserverMode mode = ObserverMode::accept) {
  auto guess = [](const CompletionRequest& r) { return is_revised(r) ? std::string("2") : std::string("1"); };
  auto say = [](std::string text) {
    return [text](const CompletionRequest&, std::size_t) -> std::optional<ScriptedBackend::Reply> { return text; };
  };

  b.on("persuader_open", say("Hi Leo, have you thought about the community garden? What are you planning instead?"));
  b.on("predict_preventive", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    const auto g = guess(r);
    return "preventive: {\"content\": \"stay home and play video games\", \"belief\": \"He thinks games relax him "
           "(guess " + g + ").\", \"desire\": \"He wants a quiet weekend (guess " + g + ").\"}";
  });
  b.on("persuader_counter_preventive", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "Gardening can be just as relaxing as games, Leo. (counter " + guess(r) + ")";
  });
  b.on("predict_gen_belief", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "generative: {\"content\": \"join the community garden project\", \"belief\": \"He doubts he has the "
           "time (guess " + guess(r) + ").\", \"desire\": \"Don't know.\"}";
  });
  b.on("persuader_address_belief", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "A plot only needs an hour a week, and we share the tools. (belief " + guess(r) + ")";
  });
  b.on("predict_gen_desire", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "generative's desire: He wants to feel part of something (guess " + guess(r) + ").";
  });
  b.on("persuader_address_desire", [guess](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "You would meet lots of people at the Saturday sessions. (desire " + guess(r) + ")";
  });

  b.on("persuadee_reveal_preventive", [book](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    const auto m = book->get(r.scope);
    return "Honestly, " + *m.preventive.belief + " " + *m.preventive.desire;
  });
  b.on("persuadee_raise_gen_belief", [book](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "I'm not sure. " + *book->get(r.scope).generative.belief;
  });
  b.on("persuadee_raise_gen_desire", [book](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return "Maybe. " + *book->get(r.scope).generative.desire;
  });
  b.on("persuadee_close", say("Alright Mia, I'll give the garden a try."));

  b.on(std::string(kObserverTag), [book, mode](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    const auto guess_text = section_after(r.prompt_text(), "Persuader's guess:");
    const bool second = guess_text.find("(guess 2)") != std::string::npos;
    const std::string accept = "The guess matches the true state. No changes are necessary.";
    switch (mode) {
      case ObserverMode::accept: return accept;
      case ObserverMode::always_revise: return std::string("Focus on one concern only and make it more specific.");
      case ObserverMode::revise_once:
        return second ? accept : std::string("The guess misses the main concern; think about effort and time.");
      case ObserverMode::leak_once: {
        if (second) return accept;
        const auto m = book->get(r.scope);
        return "Wrong. The truth is: " + *m.generative.belief + " Also " + *m.generative.desire +
               (m.has_preventive() ? " And " + *m.preventive.belief : std::string());
      }
    }
    return accept;
  });
}

/// Persuader, persuadee and observer gateways over one scripted backend.
struct ScriptedAgents {
  std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();
  std::shared_ptr<StateBook> book = std::make_shared<StateBook>();
  std::shared_ptr<Gateway> gateway;

  explicit ScriptedAgents(ObserverMode mode = ObserverMode::accept) {
    install_dialogue_script(*backend, book, mode);
    gateway = std::make_shared<Gateway>(backend);
  }

  DialogueAgents agents(bool with_observer = true) const {
    return DialogueAgents{gateway.get(), gateway.get(), with_observer ? gateway.get() : nullptr};
  }
};

/// Responders for the two mental-state calls, driven by the scenario index
/// found in the background ("Case <n>:").
inline void install_mental_state_script(ScriptedBackend& b, std::function<bool(std::size_t)> has_preventive) {
  auto index_of = [](const CompletionRequest& r) {
    const auto p = r.prompt_text();
    const auto at = p.find("Case ");
    return static_cast<std::size_t>(std::stoul(p.substr(at + 5)));
  };
  b.on(std::string(kBehaviorTag), [=](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    const auto m = make_state(index_of(r), has_preventive(index_of(r)));
    return "Preventive: " + content_or_none(m.preventive.content) + "\nGenerative: " + *m.generative.content;
  });
  b.on(std::string(kBeliefDesireTag), [=](const CompletionRequest& r, std::size_t) -> std::optional<ScriptedBackend::Reply> {
    return serialize_mental_state_lines(make_state(index_of(r), has_preventive(index_of(r))));
  });
}

/// A runtime whose roles all use `backend`, without touching the network.
inline Runtime scripted_runtime(std::shared_ptr<Backend> backend, Config config = {}) {
  GatewaySet set;
  auto gw = std::make_shared<Gateway>(std::move(backend));
  for (auto role : kRoles) set.set(role, gw);
  static std::ostringstream sink;
  Runtime rt{std::move(config), prompts(), std::move(set)};
  rt.log = &sink;
  return rt;
}

/// A states file with `n` records; odd indices have no preventive behavior.
inline std::vector<StateRecord> write_states(const std::filesystem::path& path, std::size_t n, StateBook* book) {
  std::vector<StateRecord> out;
  std::ofstream f(path, std::ios::trunc);
  for (std::size_t i = 0; i < n; ++i) {
    StateRecord r{make_scenario(i), make_state(i, i % 2 == 0)};
    f << serialize_state(r.scenario, r.mental_state) << "\n";
    if (book) book->put("item-" + std::to_string(i), r.mental_state);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ctom::testing
