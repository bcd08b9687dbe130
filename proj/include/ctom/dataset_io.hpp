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

// Corpus files and corpus utilities.
//
// A record is a JSON object
//
//   {"scenario": {"tag", "background", "persuadee", "persuader", "goal",
//                 "domain": [...],
//                 "preventive": {"content", "belief", "desire"},
//                 "generative": {"content", "belief", "desire"}},
//    "dialog": ["persuader: ...", "persuadee: ...", ...]}
//
// written one per line. Readers also accept a JSON array of records or a
// single pretty-printed object. Traces go to a sidecar file keyed by record
// index so the main file keeps the plain schema.

#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctom/core_types.hpp"
#include "ctom/errors.hpp"
#include "ctom/mental_state.hpp"
#include "ctom/text.hpp"

namespace ctom {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Serialization

inline ojson behavior_to_json(const BehaviorSpec& b) {
  return {{"content", b.content.value_or(std::string(kNoneContent))},
          {"belief", b.belief.value_or(std::string(kNoneStatement))},
          {"desire", b.desire.value_or(std::string(kNoneStatement))}};
}

/// Scenario object; the behaviors are included when `state` is given.
inline ojson scenario_to_json(const Scenario& s, const MentalState* state = nullptr) {
  ojson j = {{"tag", s.tag},         {"background", s.background}, {"persuadee", s.persuadee_name},
             {"persuader", s.persuader_name}, {"goal", s.goal},       {"domain", s.domains}};
  if (state) {
    j["preventive"] = behavior_to_json(state->preventive);
    j["generative"] = behavior_to_json(state->generative);
  }
  return j;
}

inline ojson record_to_json(const DialogueRecord& r) {
  ojson dialog = ojson::array();
  for (const auto& u : r.utterances) dialog.push_back(std::string(to_string(u.speaker)) + ": " + u.text);
  return {{"scenario", scenario_to_json(r.scenario, &r.mental_state)}, {"dialog", std::move(dialog)}};
}

/// One line, fixed key order, no trailing newline.
inline std::string serialize_record(const DialogueRecord& r) {
  if (auto v = validate_record(r); !v.empty()) throw InvariantError("cannot serialize invalid record: " + describe(v));
  return record_to_json(r).dump();
}

/// A states-file line: the scenario with its behaviors, no dialog.
inline std::string serialize_state(const Scenario& s, const MentalState& state) {
  return ojson{{"scenario", scenario_to_json(s, &state)}}.dump();
}

namespace detail {

inline const nlohmann::json& member(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

inline std::string string_member(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = member(j, key, path);
  const auto p = path.empty() ? std::string(key) : path + "." + key;
  if (!v.is_string()) throw SchemaError(p, "expected a string");
  return v.get<std::string>();
}

inline BehaviorSpec behavior_from_json(const nlohmann::json& j, BehaviorRole role, const std::string& path) {
  const auto content = string_member(j, "content", path);
  const auto belief = string_member(j, "belief", path);
  const auto desire = string_member(j, "desire", path);
  if (text::is_none_marker(content)) {
    if (!text::is_none_marker(belief)) throw InvariantError(path + ".belief must be None when content is none");
    if (!text::is_none_marker(desire)) throw InvariantError(path + ".desire must be None when content is none");
    return BehaviorSpec::absent(role);
  }
  return BehaviorSpec{role, content, belief, desire};
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j, const std::string& path = "scenario") {
  Scenario s;
  s.tag = detail::string_member(j, "tag", path);
  s.background = detail::string_member(j, "background", path);
  s.persuadee_name = detail::string_member(j, "persuadee", path);
  s.persuader_name = detail::string_member(j, "persuader", path);
  s.goal = detail::string_member(j, "goal", path);
  const auto& domains = detail::member(j, "domain", path);
  if (!domains.is_array()) throw SchemaError(path + ".domain", "expected an array");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (!domains[i].is_string()) throw SchemaError(path + ".domain[" + std::to_string(i) + "]", "expected a string");
    s.domains.push_back(domains[i].get<std::string>());
  }
  return s;
}

inline MentalState mental_state_from_json(const nlohmann::json& scenario, const std::string& path = "scenario") {
  MentalState m;
  m.preventive = detail::behavior_from_json(detail::member(scenario, "preventive", path), BehaviorRole::preventive,
                                            path + ".preventive");
  m.generative = detail::behavior_from_json(detail::member(scenario, "generative", path), BehaviorRole::generative,
                                            path + ".generative");
  return m;
}

/// "speaker: text" -> Utterance.
inline Utterance parse_dialog_line(std::string_view line, std::size_t index, const std::string& path) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos) throw SchemaError(path, "expected '<speaker>: <text>'");
  const auto speaker = parse_speaker(text::to_lower(text::trim(line.substr(0, colon))));
  if (!speaker) throw SchemaError(path, "unknown speaker '" + text::trim(line.substr(0, colon)) + "'");
  return make_utterance(*speaker, line.substr(colon + 1), index);
}

/// Builds and validates a record. Throws SchemaError for shape problems
/// and InvariantError for rule violations such as a wrong turn count.
inline DialogueRecord record_from_json(const nlohmann::json& j) {
  DialogueRecord r;
  const auto& scenario = detail::member(j, "scenario", "");
  r.scenario = scenario_from_json(scenario);
  r.mental_state = mental_state_from_json(scenario);
  const auto& dialog = detail::member(j, "dialog", "");
  if (!dialog.is_array()) throw SchemaError("dialog", "expected an array");
  for (std::size_t i = 0; i < dialog.size(); ++i) {
    const auto path = "dialog[" + std::to_string(i) + "]";
    if (!dialog[i].is_string()) throw SchemaError(path, "expected a string");
    r.utterances.push_back(parse_dialog_line(dialog[i].get_ref<const std::string&>(), i, path));
  }
  if (auto v = validate_record(r); !v.empty()) throw InvariantError(describe(v));
  return r;
}

inline DialogueRecord parse_record(std::string_view text_value) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text_value);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("$", std::string("invalid JSON: ") + e.what());
  }
  return record_from_json(j);
}

/// Scenario plus behaviors, as found in a states file.
struct StateRecord {
  Scenario scenario;
  MentalState mental_state;
};

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::string with_location(const std::string& where, const std::string& path) {
  return path.empty() ? where : where + ": " + path;
}

/// Splits a corpus file into JSON values: JSON lines, a JSON array, or one
/// (possibly multi-line) object. `where` describes each value's location.
inline std::vector<std::pair<std::string, nlohmann::json>> read_json_values(const std::string& content,
                                                                            const std::string& name) {
  std::vector<std::pair<std::string, nlohmann::json>> out;
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return out;
  if (content[first] == '[') {
    nlohmann::json arr;
    try {
      arr = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(name, std::string("invalid JSON: ") + e.what());
    }
    for (std::size_t i = 0; i < arr.size(); ++i) out.emplace_back(name + "[" + std::to_string(i) + "]", arr[i]);
    return out;
  }
  // A single pretty-printed object fails line-by-line parsing but parses whole.
  if (!nlohmann::json::accept(content.substr(0, content.find('\n'))) && nlohmann::json::accept(content)) {
    out.emplace_back(name, nlohmann::json::parse(content));
    return out;
  }
  std::size_t line_no = 0;
  for (auto line : text::split_lines(content)) {
    ++line_no;
    if (text::trim_view(line).empty()) continue;
    const auto where = name + ":" + std::to_string(line_no);
    try {
      out.emplace_back(where, nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(where, std::string("invalid JSON: ") + e.what());
    }
  }
  return out;
}

template <class F>
auto located(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const SchemaError& e) {
    throw SchemaError(with_location(where, e.path()), e.what());
  } catch (const InvariantError& e) {
    throw InvariantError(where + ": " + e.what());
  }
}

}  // namespace detail

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<DialogueRecord> parse_corpus(const std::string& content, const std::string& name = "corpus") {
  std::vector<DialogueRecord> out;
  for (const auto& [where, j] : detail::read_json_values(content, name)) {
    out.push_back(detail::located(where, [&] { return record_from_json(j); }));
  }
  return out;
}

inline std::vector<DialogueRecord> read_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_text_file(path), path.string());
}

/// Scenario objects, either bare or wrapped as {"scenario": {...}}. Any
/// behaviors present are ignored.
inline std::vector<Scenario> parse_scenarios(const std::string& content, const std::string& name = "scenarios") {
  std::vector<Scenario> out;
  for (const auto& [where, j] : detail::read_json_values(content, name)) {
    out.push_back(detail::located(where, [&] {
      const bool wrapped = j.is_object() && j.contains("scenario");
      auto s = scenario_from_json(wrapped ? j["scenario"] : j, wrapped ? "scenario" : "");
      if (auto v = validate_scenario(s); !v.empty()) throw InvariantError(describe(v));
      return s;
    }));
  }
  return out;
}

inline std::vector<Scenario> read_scenarios(const std::filesystem::path& path) {
  return parse_scenarios(read_text_file(path), path.string());
}

inline std::vector<StateRecord> parse_states(const std::string& content, const std::string& name = "states") {
  std::vector<StateRecord> out;
  for (const auto& [where, j] : detail::read_json_values(content, name)) {
    out.push_back(detail::located(where, [&] {
      const auto& sj = detail::member(j, "scenario", "");
      StateRecord r{scenario_from_json(sj), mental_state_from_json(sj)};
      auto v = validate_scenario(r.scenario);
      for (auto& x : validate_mental_state(r.mental_state)) v.push_back(std::move(x));
      if (!v.empty()) throw InvariantError(describe(v));
      return r;
    }));
  }
  return out;
}

inline std::vector<StateRecord> read_states(const std::filesystem::path& path) {
  return parse_states(read_text_file(path), path.string());
}

/// Appends whole lines to a file. Safe across threads (mutex) and across
/// processes (flock); each line is written with a single write call.
class AppendWriter {
 public:
  explicit AppendWriter(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open " + path.string() + " for appending");
  }
  AppendWriter(const AppendWriter&) = delete;
  AppendWriter& operator=(const AppendWriter&) = delete;
  ~AppendWriter() {
    if (fd_ >= 0) ::close(fd_);
  }

  void write_line(std::string_view line) {
    std::string buf(line);
    buf.push_back('\n');
    std::lock_guard lock(mu_);
    if (::flock(fd_, LOCK_EX) != 0) throw Error("cannot lock " + path_.string());
    std::size_t done = 0;
    while (done < buf.size()) {
      const auto n = ::write(fd_, buf.data() + done, buf.size() - done);
      if (n < 0) {
        ::flock(fd_, LOCK_UN);
        throw Error("write to " + path_.string() + " failed");
      }
      done += static_cast<std::size_t>(n);
    }
    ::flock(fd_, LOCK_UN);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Trace sidecar

inline ojson trace_event_to_json(const TraceEvent& e) {
  ojson j = {{"kind", std::string(to_string(e.kind))}, {"step", e.step}, {"round", e.round}, {"text", e.text}};
  if (!e.fields.empty()) j["fields"] = e.fields;
  return j;
}

inline TraceEvent trace_event_from_json(const nlohmann::json& j, const std::string& path) {
  TraceEvent e;
  const auto kind = parse_trace_kind(detail::string_member(j, "kind", path));
  if (!kind) throw SchemaError(path + ".kind", "unknown trace kind");
  e.kind = *kind;
  e.step = detail::string_member(j, "step", path);
  e.round = j.value("round", 0);
  e.text = j.value("text", std::string());
  if (j.contains("fields")) e.fields = j["fields"].get<std::map<std::string, std::string>>();
  return e;
}

inline std::string serialize_trace(std::size_t index, const std::vector<TraceEvent>& events) {
  ojson arr = ojson::array();
  for (const auto& e : events) arr.push_back(trace_event_to_json(e));
  return ojson{{"index", index}, {"events", std::move(arr)}}.dump();
}

/// Trace file -> index -> events.
inline std::map<std::size_t, std::vector<TraceEvent>> read_traces(const std::filesystem::path& path) {
  std::map<std::size_t, std::vector<TraceEvent>> out;
  for (const auto& [where, j] : detail::read_json_values(read_text_file(path), path.string())) {
    detail::located(where, [&] {
      const auto index = detail::member(j, "index", "").get<std::size_t>();
      const auto& events = detail::member(j, "events", "");
      auto& dst = out[index];
      for (std::size_t i = 0; i < events.size(); ++i) {
        dst.push_back(trace_event_from_json(events[i], "events[" + std::to_string(i) + "]"));
      }
      return 0;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus utilities

/// Identity of a scenario for dedupe and resume: background and goal,
/// whitespace-collapsed and case-folded.
inline std::string scenario_key(const Scenario& s) {
  return text::normalize(s.background) + '\x1f' + text::normalize(s.goal);
}

/// First occurrence wins; order is preserved.
inline std::vector<Scenario> dedupe_scenarios(const std::vector<Scenario>& scenarios) {
  std::unordered_set<std::string> seen;
  std::vector<Scenario> out;
  for (const auto& s : scenarios) {
    if (seen.insert(scenario_key(s)).second) out.push_back(s);
  }
  return out;
}

/// Records per domain label; a record with two labels counts for both.
inline std::map<std::string, std::size_t> domain_stats(const std::vector<Scenario>& scenarios) {
  std::map<std::string, std::size_t> out;
  for (const auto& s : scenarios) {
    for (const auto& d : std::set<std::string>(s.domains.begin(), s.domains.end())) ++out[d];
  }
  return out;
}

inline std::map<std::string, std::size_t> domain_stats(const std::vector<DialogueRecord>& records) {
  std::vector<Scenario> scenarios;
  scenarios.reserve(records.size());
  for (const auto& r : records) scenarios.push_back(r.scenario);
  return domain_stats(scenarios);
}

/// Tab-separated "domain<TAB>count" rows, largest first, then a total of
/// distinct records.
inline std::string domain_stats_table(const std::map<std::string, std::size_t>& stats, std::size_t records) {
  std::vector<std::pair<std::string, std::size_t>> rows(stats.begin(), stats.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::ostringstream os;
  os << "domain\tcount\n";
  for (const auto& [d, n] : rows) os << d << '\t' << n << '\n';
  os << "total_records\t" << records << '\n';
  return os.str();
}

/// Per-domain test-set sizes of the published 35-domain split.
inline const std::map<std::string, std::size_t>& reference_test_counts() {
  static const std::map<std::string, std::size_t> counts = {
      {"Lifestyle", 71},   {"Ethics", 29},     {"Fashion", 22},       {"Finance", 35},      {"Marketing", 22},
      {"Ecology", 31},     {"Economics", 17},  {"Culture", 28},       {"Safety", 25},       {"Debate", 20},
      {"Charity", 28},     {"Family", 27},     {"Literature", 31},    {"Technology", 55},   {"Health", 48},
      {"Career", 63},      {"Education", 71},  {"Business", 53},      {"Politics", 27},     {"Leisure", 38},
      {"Art", 22},         {"Sport", 28},      {"Law", 20},           {"Philosophy", 24},   {"History", 22},
      {"Craftsmanship", 23}, {"Psychology", 41}, {"Travel", 32},      {"Science", 23},      {"Media", 21},
      {"Innovation", 22},  {"Research", 20},   {"Architecture", 21},  {"Welfare", 20},      {"Negotiation", 19},
  };
  return counts;
}

/// Per-domain record counts of the full published corpus.
inline const std::map<std::string, std::size_t>& reference_domain_totals() {
  static const std::map<std::string, std::size_t> counts = {
      {"Lifestyle", 1097}, {"Ethics", 413},    {"Fashion", 78},       {"Finance", 470},     {"Marketing", 122},
      {"Ecology", 424},    {"Economics", 64},  {"Culture", 277},      {"Safety", 240},      {"Debate", 43},
      {"Charity", 190},    {"Family", 398},    {"Literature", 345},   {"Technology", 675},  {"Health", 628},
      {"Career", 756},     {"Education", 1260}, {"Business", 673},    {"Politics", 246},    {"Leisure", 291},
      {"Art", 361},        {"Sport", 175},     {"Law", 58},           {"Philosophy", 164},  {"History", 93},
      {"Craftsmanship", 107}, {"Psychology", 523}, {"Travel", 403},   {"Science", 289},     {"Media", 188},
      {"Innovation", 90},  {"Research", 93},   {"Architecture", 93},  {"Welfare", 136},     {"Negotiation", 25},
  };
  return counts;
}

/// Uniform integer in [0, bound) from a 64-bit engine. Unlike
/// std::uniform_int_distribution the result is the same on every standard
/// library.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = bound == 0 ? 0 : UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Picks `counts[d]` test records for each domain d. A record belongs to its
/// first listed domain only, so requested counts come out exact. Indices are
/// returned in input order; the choice depends only on the seed.
inline Split stratified_split(const std::vector<Scenario>& scenarios, const std::map<std::string, std::size_t>& counts,
                              std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (!scenarios[i].domains.empty()) pools[scenarios[i].domains.front()].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> in_test(scenarios.size(), false);
  for (const auto& [domain, wanted] : counts) {
    auto pool = pools[domain];
    if (pool.size() < wanted) throw InsufficientRecords(domain, wanted, pool.size());
    // Partial Fisher-Yates: the first `wanted` slots become the sample.
    for (std::size_t i = 0; i < wanted; ++i) {
      const auto j = i + uniform_below(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      in_test[pool[i]] = true;
    }
  }
  Split out;
  for (std::size_t i = 0; i < scenarios.size(); ++i) (in_test[i] ? out.test : out.train).push_back(i);
  return out;
}

inline Split stratified_split(const std::vector<DialogueRecord>& records,
                              const std::map<std::string, std::size_t>& counts, std::uint64_t seed) {
  std::vector<Scenario> scenarios;
  scenarios.reserve(records.size());
  for (const auto& r : records) scenarios.push_back(r.scenario);
  return stratified_split(scenarios, counts, seed);
}

}  // namespace ctom
