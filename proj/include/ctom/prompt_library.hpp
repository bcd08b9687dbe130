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

// Prompt templates loaded from a directory of text files plus a manifest
// that pins each file by SHA-256. Slots are written `{{name}}`.
//
// Directory layout:
//   manifest.json        {"version": 1, "templates": [{id, file, origin,
//                          verbatim, sha256, corrected?: {file, sha256}}]}
//   templates/<id>.txt   reference prompt text (typos kept as published)
//   corrected/<id>.txt   spelling-corrected variants, where they differ
//   derived/<id>.txt     prompts authored for this toolkit

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctom/errors.hpp"

#ifndef CTOM_DEFAULT_PROMPTS_DIR
#define CTOM_DEFAULT_PROMPTS_DIR "prompts"
#endif

namespace ctom {

using Slots = std::map<std::string, std::string, std::less<>>;

namespace template_ids {
inline constexpr std::string_view mental_state_behaviors = "mental_state_behaviors";
inline constexpr std::string_view mental_state_belief_desire = "mental_state_belief_desire";
inline constexpr std::string_view persuader_open = "persuader_open";
inline constexpr std::string_view persuadee_reveal_preventive = "persuadee_reveal_preventive";
inline constexpr std::string_view predict_preventive = "predict_preventive";
inline constexpr std::string_view persuader_counter_preventive = "persuader_counter_preventive";
inline constexpr std::string_view persuadee_raise_gen_belief = "persuadee_raise_gen_belief";
inline constexpr std::string_view predict_gen_belief = "predict_gen_belief";
inline constexpr std::string_view persuader_address_belief = "persuader_address_belief";
inline constexpr std::string_view persuadee_raise_gen_desire = "persuadee_raise_gen_desire";
inline constexpr std::string_view predict_gen_desire = "predict_gen_desire";
inline constexpr std::string_view persuader_address_desire = "persuader_address_desire";
inline constexpr std::string_view persuadee_close = "persuadee_close";
inline constexpr std::string_view observer_review = "observer_review";

inline constexpr std::string_view persuader_open_no_preventive = "persuader_open_no_preventive";
inline constexpr std::string_view observer_suggestions = "observer_suggestions";
inline constexpr std::string_view format_repair = "format_repair";
inline constexpr std::string_view persuader_next_turn = "persuader_next_turn";
inline constexpr std::string_view judge_context_coherence = "judge_context_coherence";
inline constexpr std::string_view judge_logical_coherence = "judge_logical_coherence";
inline constexpr std::string_view judge_helpfulness = "judge_helpfulness";
inline constexpr std::string_view judge_direct_prompting = "judge_direct_prompting";
inline constexpr std::string_view judge_ctom_infer = "judge_ctom_infer";
inline constexpr std::string_view judge_ctom_component = "judge_ctom_component";
inline constexpr std::string_view judge_persuasive = "judge_persuasive";
inline constexpr std::string_view judge_preventive_satisfaction = "judge_preventive_satisfaction";
inline constexpr std::string_view judge_generative_belief_satisfaction = "judge_generative_belief_satisfaction";
inline constexpr std::string_view judge_generative_desire_satisfaction = "judge_generative_desire_satisfaction";
}  // namespace template_ids

/// The reference inventory: eleven conversation steps, two mental-state
/// prompts and the observer prompt. Loading fails if any is missing.
inline constexpr std::array<std::string_view, 14> kReferenceTemplateIds = {
    template_ids::mental_state_behaviors,       template_ids::mental_state_belief_desire,
    template_ids::persuader_open,               template_ids::persuadee_reveal_preventive,
    template_ids::predict_preventive,           template_ids::persuader_counter_preventive,
    template_ids::persuadee_raise_gen_belief,   template_ids::predict_gen_belief,
    template_ids::persuader_address_belief,     template_ids::persuadee_raise_gen_desire,
    template_ids::predict_gen_desire,           template_ids::persuader_address_desire,
    template_ids::persuadee_close,              template_ids::observer_review,
};

/// Templates authored for this toolkit that the pipeline cannot run without.
inline constexpr std::array<std::string_view, 14> kDerivedTemplateIds = {
    template_ids::persuader_open_no_preventive,
    template_ids::observer_suggestions,
    template_ids::format_repair,
    template_ids::persuader_next_turn,
    template_ids::judge_context_coherence,
    template_ids::judge_logical_coherence,
    template_ids::judge_helpfulness,
    template_ids::judge_direct_prompting,
    template_ids::judge_ctom_infer,
    template_ids::judge_ctom_component,
    template_ids::judge_persuasive,
    template_ids::judge_preventive_satisfaction,
    template_ids::judge_generative_belief_satisfaction,
    template_ids::judge_generative_desire_satisfaction,
};

enum class TemplateOrigin { reference, derived };
enum class PromptVariant { verbatim, corrected };

inline std::optional<PromptVariant> parse_prompt_variant(std::string_view s) {
  if (s == "verbatim") return PromptVariant::verbatim;
  if (s == "corrected") return PromptVariant::corrected;
  return std::nullopt;
}

struct PromptTemplate {
  std::string id;
  std::string text;
  TemplateOrigin origin = TemplateOrigin::derived;
  bool verbatim = false;
  std::vector<std::string> slots;
};

/// Slot names in order of first appearance.
inline std::vector<std::string> template_slots(std::string_view text) {
  std::vector<std::string> out;
  std::set<std::string, std::less<>> seen;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    auto end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) break;
    std::string name(text.substr(pos + 2, end - pos - 2));
    if (seen.insert(name).second) out.push_back(name);
    pos = end + 2;
  }
  return out;
}

/// Substitutes every `{{name}}`. Every slot in the text must be supplied and
/// every supplied slot must appear in the text. Substituted values are not
/// re-scanned.
inline std::string render_text(std::string_view text, const Slots& slots, std::string_view id = "<inline>") {
  const auto names = template_slots(text);
  for (const auto& [name, value] : slots) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw UnknownSlot("template '" + std::string(id) + "' has no slot '" + name + "'");
    }
  }
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t pos = 0;
  while (true) {
    auto open = text.find("{{", pos);
    auto close = open == std::string_view::npos ? open : text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    const auto name = text.substr(open + 2, close - open - 2);
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw MissingSlot("template '" + std::string(id) + "' needs slot '" + std::string(name) + "'");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex.append(buf, 2);
  }
  return hex;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path default_prompts_dir() { return CTOM_DEFAULT_PROMPTS_DIR; }

/// Result of comparing one manifest entry with the file on disk.
struct ManifestCheck {
  std::string id;
  std::string file;
  std::string expected;
  std::string actual;
  bool ok() const { return expected == actual; }
};

/// Hashes every file listed in the manifest (both variants).
inline std::vector<ManifestCheck> check_manifest(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::vector<ManifestCheck> out;
  auto check = [&](const std::string& id, const nlohmann::json& entry) {
    const auto file = entry.at("file").get<std::string>();
    out.push_back({id, file, entry.at("sha256").get<std::string>(), sha256_hex(read_file(dir / file))});
  };
  for (const auto& entry : manifest.at("templates")) {
    const auto id = entry.at("id").get<std::string>();
    check(id, entry);
    if (entry.contains("corrected")) check(id, entry.at("corrected"));
  }
  return out;
}

/// Rewrites manifest checksums from the files on disk. For deliberate
/// prompt edits only.
inline void rehash_manifest(const std::filesystem::path& dir) {
  auto manifest = nlohmann::ordered_json::parse(read_file(dir / "manifest.json"));
  for (auto& entry : manifest.at("templates")) {
    entry["sha256"] = sha256_hex(read_file(dir / entry.at("file").get<std::string>()));
    if (entry.contains("corrected")) {
      auto& c = entry["corrected"];
      c["sha256"] = sha256_hex(read_file(dir / c.at("file").get<std::string>()));
    }
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

/// Read-only after construction; safe to share between threads.
class PromptLibrary {
 public:
  /// Loads and verifies a template directory. Throws ChecksumMismatch when a
  /// file differs from its pinned hash (unless `verify_checksums` is off) and
  /// TemplateMissing when the inventory is incomplete.
  static PromptLibrary load(const std::filesystem::path& dir, PromptVariant variant = PromptVariant::verbatim,
                            bool verify_checksums = true) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad prompt manifest in " + dir.string() + ": " + e.what());
    }
    std::map<std::string, PromptTemplate, std::less<>> templates;
    for (const auto& entry : manifest.at("templates")) {
      const auto id = entry.at("id").get<std::string>();
      const nlohmann::json* source = &entry;
      if (variant == PromptVariant::corrected && entry.contains("corrected")) source = &entry.at("corrected");
      const auto file = source->at("file").get<std::string>();
      auto body = read_file(dir / file);
      if (verify_checksums) {
        const auto expected = source->at("sha256").get<std::string>();
        const auto actual = sha256_hex(body);
        if (actual != expected) {
          throw ChecksumMismatch("template '" + id + "' (" + file + ") has sha256 " + actual + ", manifest pins " +
                                 expected);
        }
      }
      PromptTemplate t;
      t.id = id;
      t.origin = entry.value("origin", std::string("derived")) == "reference" ? TemplateOrigin::reference
                                                                             : TemplateOrigin::derived;
      t.verbatim = entry.value("verbatim", false) && source == &entry;
      t.slots = template_slots(body);
      t.text = std::move(body);
      templates.emplace(id, std::move(t));
    }
    PromptLibrary lib(std::move(templates), variant);
    lib.require_inventory();
    return lib;
  }

  /// Builds a library from in-memory templates without inventory checks.
  static PromptLibrary from_templates(std::map<std::string, std::string> texts) {
    std::map<std::string, PromptTemplate, std::less<>> templates;
    for (auto& [id, text] : texts) {
      PromptTemplate t;
      t.id = id;
      t.slots = template_slots(text);
      t.text = std::move(text);
      templates.emplace(id, std::move(t));
    }
    return PromptLibrary(std::move(templates), PromptVariant::verbatim);
  }

  std::string render(std::string_view id, const Slots& slots) const {
    return render_text(get(id).text, slots, id);
  }

  const PromptTemplate& get(std::string_view id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw UnknownTemplate("no template '" + std::string(id) + "'");
    return it->second;
  }

  bool contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }
  std::size_t size() const noexcept { return templates_.size(); }
  PromptVariant variant() const noexcept { return variant_; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, t] : templates_) out.push_back(id);
    return out;
  }

  void require_inventory() const {
    for (auto id : kReferenceTemplateIds) {
      if (!contains(id)) throw TemplateMissing("prompt inventory lacks '" + std::string(id) + "'");
    }
    for (auto id : kDerivedTemplateIds) {
      if (!contains(id)) throw TemplateMissing("prompt inventory lacks '" + std::string(id) + "'");
    }
  }

 private:
  PromptLibrary(std::map<std::string, PromptTemplate, std::less<>> templates, PromptVariant variant)
      : templates_(std::move(templates)), variant_(variant) {}

  std::map<std::string, PromptTemplate, std::less<>> templates_;
  PromptVariant variant_;
};

}  // namespace ctom
