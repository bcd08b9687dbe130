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

// OpenAI-compatible chat-completions backend over cpp-httplib.
// Link against ctom::http (defines CPPHTTPLIB_OPENSSL_SUPPORT).

#pragma once

#include <httplib.h>

#include <chrono>
#include <memory>
#include <string>

#include <json.hpp>

#include "ctom/errors.hpp"
#include "ctom/llm_gateway.hpp"

namespace ctom {

struct HttpBackendOptions {
  /// e.g. "https://api.openai.com/v1"; "/chat/completions" is appended.
  std::string base_url;
  std::string api_key;
  std::chrono::seconds timeout{120};
};

/// Splits "scheme://host[:port][/prefix]" into the origin and path prefix.
inline std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {origin, prefix};
}

/// Statuses worth retrying: timeouts, conflicts, rate limits, server errors.
inline bool is_transient_status(int status) noexcept {
  return status == 408 || status == 409 || status == 429 || status >= 500;
}

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    auto [origin, prefix] = split_base_url(options_.base_url);
    origin_ = std::move(origin);
    path_ = prefix + "/chat/completions";
  }

  CompletionResult send(const CompletionRequest& request) override {
    nlohmann::json body;
    body["model"] = request.model_id;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) {
      body["messages"].push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    }
    if (request.temperature) body["temperature"] = *request.temperature;
    if (request.max_tokens) body["max_tokens"] = *request.max_tokens;

    // A fresh client per call keeps send() reentrant across threads.
    httplib::Client client(origin_);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw TransportError("POST " + origin_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
      const std::string msg = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 512);
      if (is_transient_status(res->status)) throw TransportError(msg);
      throw BackendRefusal(msg, res->status);
    }

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed response body: ") + e.what());
    }
    CompletionResult result;
    result.backend_id = id();
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      result.text = content.is_null() ? std::string() : content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("response lacks choices[0].message.content: ") + e.what());
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      result.usage.prompt_tokens = reply["usage"].value("prompt_tokens", std::int64_t{0});
      result.usage.completion_tokens = reply["usage"].value("completion_tokens", std::int64_t{0});
    } else {
      result.usage.prompt_tokens = estimate_tokens(request.prompt_text());
      result.usage.completion_tokens = estimate_tokens(result.text);
    }
    return result;
  }

  std::string id() const override { return "http:" + origin_; }

 private:
  HttpBackendOptions options_;
  std::string origin_;
  std::string path_;
};

}  // namespace ctom
