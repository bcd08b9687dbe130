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

// Run configuration, read from a JSON file:
//
//   {
//     "roles": {
//       "default":  {"backend": "http", "base_url": "https://api.openai.com/v1",
//                    "api_key_env": "OPENAI_API_KEY", "model_id": "gpt-4o"},
//       "judge":    {"model_id": "gpt-3.5-turbo", "temperature": 0.0}
//     },
//     "parallelism": 8,
//     "observer": {"enabled": true, "max_rounds": 2},
//     "seed": 7
//   }
//
// Roles missing from "roles" inherit "default". Keys are checked so typos
// fail loudly. API keys are only ever read from the named environment
// variable.

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ctom/errors.hpp"
#include "ctom/http_backend.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/prompt_library.hpp"

namespace ctom {

namespace roles {
inline constexpr std::string_view mental_state = "mental_state";
inline constexpr std::string_view persuader = "persuader";
inline constexpr std::string_view persuadee = "persuadee";
inline constexpr std::string_view observer = "observer";
inline constexpr std::string_view judge = "judge";
/// The persuader model under evaluation.
inline constexpr std::string_view model = "model";
/// The persuadee that plays against `model` in the dynamic protocol.
inline constexpr std::string_view arena_persuadee = "arena_persuadee";
}  // namespace roles

inline constexpr std::array<std::string_view, 7> kRoles = {roles::mental_state, roles::persuader, roles::persuadee,
                                                           roles::observer,     roles::judge,     roles::model,
                                                           roles::arena_persuadee};

inline bool is_judge_role(std::string_view role) { return role == roles::judge || role == roles::observer; }

struct RoleConfig {
  /// "http" or "scripted".
  std::string backend = "http";
  std::string base_url;
  /// Name of the environment variable holding the API key.
  std::string api_key_env;
  std::string model_id = "default";
  std::optional<double> temperature;
  int max_tokens = 1024;
  /// Scripted backend: path to a response script.
  std::string script;
  /// Requests per second; HTTP defaults to 5, scripted to unlimited.
  std::optional<double> rate_limit_rps;
  int timeout_s = 120;
};

struct Config {
  std::map<std::string, RoleConfig, std::less<>> roles;
  int parallelism = 1;
  /// Calls per generation step before the record is rejected.
  int max_attempts = 3;
  int judge_max_attempts = 2;
  /// Transport-level retries inside the gateway.
  int retry_attempts = 3;
  int base_backoff_ms = 500;
  bool observer_enabled = true;
  int observer_max_rounds = 2;
  int observer_max_attempts = 2;
  bool capture_prompts = false;
  std::string audit_log;
  std::uint64_t seed = 0;
  std::string prompts_dir;
  PromptVariant prompt_variant = PromptVariant::verbatim;
  bool verify_checksums = true;
  bool ctom_oracle_mode = false;

  /// The role's settings, falling back to "default" (judges do not inherit
  /// its temperature).
  RoleConfig role(std::string_view name) const {
    if (auto it = roles.find(name); it != roles.end()) return it->second;
    RoleConfig r;
    if (auto it = roles.find("default"); it != roles.end()) r = it->second;
    if (is_judge_role(name)) r.temperature.reset();
    return r;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline RoleConfig role_from_json(const nlohmann::json& j, RoleConfig base, const std::string& where) {
  check_keys(j,
             {"backend", "base_url", "api_key_env", "model_id", "temperature", "max_tokens", "script",
              "rate_limit_rps", "timeout_s"},
             where);
  read_opt(j, "backend", base.backend, where);
  read_opt(j, "base_url", base.base_url, where);
  read_opt(j, "api_key_env", base.api_key_env, where);
  read_opt(j, "model_id", base.model_id, where);
  if (j.contains("temperature")) {
    double t = 0;
    read_opt(j, "temperature", t, where);
    base.temperature = t;
  }
  read_opt(j, "max_tokens", base.max_tokens, where);
  read_opt(j, "script", base.script, where);
  if (j.contains("rate_limit_rps")) {
    double r = 0;
    read_opt(j, "rate_limit_rps", r, where);
    base.rate_limit_rps = r;
  }
  read_opt(j, "timeout_s", base.timeout_s, where);
  if (base.backend != "http" && base.backend != "scripted") {
    throw ConfigError(where + ".backend must be \"http\" or \"scripted\"");
  }
  return base;
}

}  // namespace detail

inline void validate_config(const Config& c) {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(c.parallelism, "parallelism");
  positive(c.max_attempts, "max_attempts");
  positive(c.judge_max_attempts, "judge_max_attempts");
  positive(c.retry_attempts, "retry.attempts");
  positive(c.observer_max_rounds, "observer.max_rounds");
  positive(c.observer_max_attempts, "observer.max_attempts");
  if (c.base_backoff_ms < 0) throw ConfigError("retry.base_backoff_ms must be >= 0");
}

/// Relative script paths are resolved against `base_dir`.
inline Config config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  detail::check_keys(j,
                     {"roles", "parallelism", "max_attempts", "judge_max_attempts", "retry", "observer",
                      "capture_prompts", "audit_log", "seed", "prompts_dir", "prompt_variant", "verify_checksums",
                      "ctom_oracle_mode"},
                     "config");
  Config c;
  if (j.contains("roles")) {
    const auto& r = j["roles"];
    detail::check_keys(r, {"default", "mental_state", "persuader", "persuadee", "observer", "judge", "model",
                           "arena_persuadee"},
                       "roles");
    RoleConfig base;
    if (r.contains("default")) base = detail::role_from_json(r["default"], base, "roles.default");
    c.roles["default"] = base;
    for (const auto& [name, v] : r.items()) {
      if (name == "default") continue;
      // Judges keep their deterministic temperature unless set explicitly.
      RoleConfig inherited = base;
      if (is_judge_role(name)) inherited.temperature.reset();
      c.roles[name] = detail::role_from_json(v, inherited, "roles." + name);
    }
    for (auto& [name, role] : c.roles) {
      if (!role.script.empty() && !base_dir.empty() && std::filesystem::path(role.script).is_relative()) {
        role.script = (base_dir / role.script).string();
      }
    }
  }
  detail::read_opt(j, "parallelism", c.parallelism, "config");
  detail::read_opt(j, "max_attempts", c.max_attempts, "config");
  detail::read_opt(j, "judge_max_attempts", c.judge_max_attempts, "config");
  if (j.contains("retry")) {
    detail::check_keys(j["retry"], {"attempts", "base_backoff_ms"}, "retry");
    detail::read_opt(j["retry"], "attempts", c.retry_attempts, "retry");
    detail::read_opt(j["retry"], "base_backoff_ms", c.base_backoff_ms, "retry");
  }
  if (j.contains("observer")) {
    detail::check_keys(j["observer"], {"enabled", "max_rounds", "max_attempts"}, "observer");
    detail::read_opt(j["observer"], "enabled", c.observer_enabled, "observer");
    detail::read_opt(j["observer"], "max_rounds", c.observer_max_rounds, "observer");
    detail::read_opt(j["observer"], "max_attempts", c.observer_max_attempts, "observer");
  }
  detail::read_opt(j, "capture_prompts", c.capture_prompts, "config");
  detail::read_opt(j, "audit_log", c.audit_log, "config");
  detail::read_opt(j, "seed", c.seed, "config");
  detail::read_opt(j, "prompts_dir", c.prompts_dir, "config");
  if (!c.prompts_dir.empty() && !base_dir.empty() && std::filesystem::path(c.prompts_dir).is_relative()) {
    c.prompts_dir = (base_dir / c.prompts_dir).string();
  }
  if (j.contains("prompt_variant")) {
    std::string v;
    detail::read_opt(j, "prompt_variant", v, "config");
    auto parsed = parse_prompt_variant(v);
    if (!parsed) throw ConfigError("prompt_variant must be \"verbatim\" or \"corrected\"");
    c.prompt_variant = *parsed;
  }
  detail::read_opt(j, "verify_checksums", c.verify_checksums, "config");
  detail::read_opt(j, "ctom_oracle_mode", c.ctom_oracle_mode, "config");
  validate_config(c);
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// One gateway per role, sharing backends where the settings coincide and
/// a single audit log.
class GatewaySet {
 public:
  GatewaySet() = default;

  void set(std::string_view role, std::shared_ptr<Gateway> gateway) { gateways_[std::string(role)] = std::move(gateway); }

  const Gateway& get(std::string_view role) const {
    auto it = gateways_.find(role);
    if (it == gateways_.end()) throw ConfigError("no gateway configured for role '" + std::string(role) + "'");
    return *it->second;
  }
  bool has(std::string_view role) const { return gateways_.find(role) != gateways_.end(); }

  /// Token usage per role.
  std::map<std::string, Usage> usage() const {
    std::map<std::string, Usage> out;
    for (const auto& [role, gw] : gateways_) out[role] = gw->usage();
    return out;
  }

 private:
  std::map<std::string, std::shared_ptr<Gateway>, std::less<>> gateways_;
};

/// Builds gateways for every role from the config. HTTP roles read their
/// key from the environment; scripted roles load their script file (roles
/// naming the same file share one backend).
inline GatewaySet build_gateways(const Config& c, std::shared_ptr<Clock> clock = system_clock()) {
  auto audit = std::make_shared<AuditLog>(c.audit_log);
  std::map<std::string, std::shared_ptr<Backend>> scripted;
  GatewaySet set;
  for (auto role_name : kRoles) {
    const auto role = c.role(role_name);
    std::shared_ptr<Backend> backend;
    double rps = 0;
    if (role.backend == "scripted") {
      auto& b = scripted[role.script];
      if (!b) {
        if (role.script.empty()) {
          b = std::make_shared<ScriptedBackend>();
        } else {
          std::ifstream in(role.script);
          if (!in) throw ConfigError("cannot open script " + role.script);
          try {
            b = ScriptedBackend::from_json(nlohmann::json::parse(in));
          } catch (const nlohmann::json::exception& e) {
            throw ConfigError(role.script + ": " + e.what());
          }
        }
      }
      backend = b;
      rps = role.rate_limit_rps.value_or(0.0);
    } else {
      if (role.base_url.empty()) {
        // Roles never used by a subcommand may stay unconfigured.
        continue;
      }
      HttpBackendOptions http;
      http.base_url = role.base_url;
      if (!role.api_key_env.empty()) {
        const char* key = std::getenv(role.api_key_env.c_str());
        if (!key || !*key) throw ConfigError("environment variable " + role.api_key_env + " is not set");
        http.api_key = key;
      }
      http.timeout = std::chrono::seconds(role.timeout_s);
      backend = std::make_shared<HttpBackend>(http);
      rps = role.rate_limit_rps.value_or(5.0);
    }
    GatewayOptions opts;
    opts.model_id = role.model_id;
    opts.temperature = role.temperature.value_or(is_judge_role(role_name) ? 0.0 : 0.7);
    opts.max_tokens = role.max_tokens;
    opts.retry.max_attempts = c.retry_attempts;
    opts.retry.base_backoff = std::chrono::milliseconds(c.base_backoff_ms);
    opts.rate_limit_rps = rps;
    opts.seed = c.seed;
    set.set(role_name, std::make_shared<Gateway>(backend, opts, clock, audit));
  }
  return set;
}

}  // namespace ctom
