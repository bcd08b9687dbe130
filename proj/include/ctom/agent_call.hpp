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

#pragma once

#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "ctom/core_types.hpp"
#include "ctom/errors.hpp"
#include "ctom/llm_gateway.hpp"
#include "ctom/prompt_library.hpp"

namespace ctom {

using RequestObserver = std::function<void(const CompletionRequest&)>;

struct RepairOptions {
  /// Total calls allowed, including the first.
  int max_attempts = 3;
  /// Pipeline stage name reported in GenerationFailed.
  std::string stage;
  /// One-line restatement of the required output format.
  std::string format;
  /// Sees every request before it is sent (prompt capture).
  RequestObserver on_request;
  /// Receives a parse_retry event per rejected output.
  std::vector<TraceEvent>* trace = nullptr;
  int round = 0;
};

/// Calls the model and parses its output. On ParseError the prompt is
/// re-sent with a repair line appended, up to `max_attempts` calls in total;
/// then GenerationFailed carries the last raw output.
template <class Parse>
auto call_with_repair(const Gateway& gateway, CompletionRequest request, const PromptLibrary& prompts,
                      const RepairOptions& options, Parse&& parse)
    -> std::invoke_result_t<Parse&, const std::string&> {
  if (options.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  const std::string original = request.messages.back().content;
  std::string last_raw;
  std::string last_error = "no attempt made";
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    if (attempt > 1) {
      request.messages.back().content =
          original + prompts.render(template_ids::format_repair, {{"format", options.format}});
    }
    if (options.on_request) options.on_request(request);
    auto result = gateway.complete(request);
    last_raw = result.text;
    try {
      return parse(result.text);
    } catch (const ParseError& e) {
      last_error = e.what();
      if (options.trace) {
        options.trace->push_back(
            TraceEvent{TraceKind::parse_retry, request.request_tag, options.round, result.text, {{"error", e.what()}}});
      }
    }
  }
  throw GenerationFailed(options.stage.empty() ? request.request_tag : options.stage,
                         "unparseable after " + std::to_string(options.max_attempts) + " attempt(s): " + last_error,
                         last_raw);
}

}  // namespace ctom
