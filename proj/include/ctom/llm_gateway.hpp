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

// Chat-completion access. A Gateway wraps one Backend (HTTP or scripted)
// with per-role defaults, a retry policy, a token-bucket rate limiter, usage
// counters and an audit log. Gateways are cheap handles over shared state
// and may be used from many threads at once.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <deque>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ctom/errors.hpp"
#include "ctom/text.hpp"

namespace ctom {

enum class ChatRole { system, user, assistant };

inline std::string_view to_string(ChatRole r) noexcept {
  switch (r) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Unset model/temperature/max_tokens are filled from the gateway's role
/// defaults. `request_tag` names the pipeline step; `scope` optionally names
/// the work item (dialogue, record) the request belongs to.
struct CompletionRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::string request_tag;
  std::string scope;

  bool operator==(const CompletionRequest&) const = default;

  /// All message contents joined by blank lines; what a reader of the prompt sees.
  std::string prompt_text() const {
    std::string out;
    for (const auto& m : messages) {
      if (!out.empty()) out += "\n\n";
      out += m.content;
    }
    return out;
  }
};

inline CompletionRequest make_prompt_request(std::string tag, std::string prompt, std::string scope = {}) {
  CompletionRequest r;
  r.messages.push_back({ChatRole::user, std::move(prompt)});
  r.request_tag = std::move(tag);
  r.scope = std::move(scope);
  return r;
}

inline void validate_request(const CompletionRequest& r) {
  if (r.messages.empty()) throw InvariantError("completion request has no messages");
  if (r.messages.front().role == ChatRole::assistant) {
    throw InvariantError("first message must have role system or user");
  }
  for (const auto& m : r.messages) {
    if (m.content.empty()) throw InvariantError("chat message content must be non-empty");
  }
  if (r.temperature && *r.temperature < 0) throw InvariantError("temperature must be >= 0");
  if (r.max_tokens && *r.max_tokens <= 0) throw InvariantError("max_tokens must be positive");
}

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  Usage& operator+=(const Usage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  std::int64_t total() const noexcept { return prompt_tokens + completion_tokens; }
};

struct CompletionResult {
  std::string text;
  Usage usage;
  std::string backend_id;
};

// --- clocks -----------------------------------------------------------------

/// Time source for backoff and rate limiting; replaceable in tests.
class Clock {
 public:
  using duration = std::chrono::nanoseconds;
  virtual ~Clock() = default;
  virtual duration now() = 0;
  virtual void sleep_for(duration d) = 0;
  /// Wall-clock timestamp for audit records.
  virtual std::string timestamp() = 0;
};

class SystemClock final : public Clock {
 public:
  duration now() override { return std::chrono::steady_clock::now().time_since_epoch(); }
  void sleep_for(duration d) override {
    if (d > duration::zero()) std::this_thread::sleep_for(d);
  }
  std::string timestamp() override {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
    return ss.str();
  }
};

/// Manual clock: sleeping advances time instantly and is recorded.
class FakeClock final : public Clock {
 public:
  duration now() override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void sleep_for(duration d) override {
    std::lock_guard lock(mu_);
    sleeps_.push_back(d);
    if (d > duration::zero()) now_ += d;
  }
  std::string timestamp() override {
    std::lock_guard lock(mu_);
    return "t+" + std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(now_).count()) + "ms";
  }
  void advance(duration d) {
    std::lock_guard lock(mu_);
    now_ += d;
  }
  std::vector<duration> sleeps() const {
    std::lock_guard lock(mu_);
    return sleeps_;
  }

 private:
  mutable std::mutex mu_;
  duration now_{0};
  std::vector<duration> sleeps_;
};

inline std::shared_ptr<Clock> system_clock() {
  static auto clock = std::make_shared<SystemClock>();
  return clock;
}

// --- backends ---------------------------------------------------------------

class Backend {
 public:
  virtual ~Backend() = default;
  /// One attempt. Throws TransportError (retryable), BackendRefusal or
  /// ScriptExhausted (not retried).
  virtual CompletionResult send(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
};

/// Rough token estimate for backends that do not report usage.
inline std::int64_t estimate_tokens(std::string_view s) {
  return static_cast<std::int64_t>(text::split_whitespace(s).size());
}

/// Deterministic offline backend. Responses are keyed by request tag and
/// ordinal (the n-th call carrying that key), never by prompt wording.
/// A request with a scope first looks for "<scope>::<tag>", then "<tag>".
class ScriptedBackend final : public Backend {
 public:
  enum class Fault { transport, refusal };
  using Reply = std::variant<std::string, Fault>;
  /// Computes a reply for the `ordinal`-th call on a key; nullopt means
  /// "no response" and surfaces as ScriptExhausted.
  using Responder = std::function<std::optional<Reply>(const CompletionRequest&, std::size_t ordinal)>;

  explicit ScriptedBackend(std::string backend_id = "scripted") : id_(std::move(backend_id)) {}

  /// Appends replies to the queue for `key` (a tag or "<scope>::<tag>").
  ScriptedBackend& add(const std::string& key, Reply reply) {
    std::lock_guard lock(mu_);
    queues_[key].push_back(std::move(reply));
    return *this;
  }
  ScriptedBackend& add(const std::string& key, const std::vector<std::string>& replies) {
    for (const auto& r : replies) add(key, Reply{r});
    return *this;
  }
  ScriptedBackend& on(const std::string& key, Responder responder) {
    std::lock_guard lock(mu_);
    responders_[key] = std::move(responder);
    return *this;
  }
  /// When a queue runs dry, keep returning its last reply.
  ScriptedBackend& repeat_last(bool on = true) {
    std::lock_guard lock(mu_);
    repeat_last_ = on;
    return *this;
  }

  /// Script file form: {"repeat_last": bool, "responses": {key: [reply...]}}
  /// where a reply is a string or {"fault": "transport"|"refusal"}.
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& j, std::string backend_id = "scripted") {
    auto backend = std::make_shared<ScriptedBackend>(std::move(backend_id));
    backend->repeat_last(j.value("repeat_last", false));
    for (const auto& [key, replies] : j.at("responses").items()) {
      for (const auto& r : replies) {
        if (r.is_string()) {
          backend->add(key, Reply{r.get<std::string>()});
        } else {
          const auto fault = r.at("fault").get<std::string>();
          backend->add(key, Reply{fault == "refusal" ? Fault::refusal : Fault::transport});
        }
      }
    }
    return backend;
  }

  CompletionResult send(const CompletionRequest& request) override {
    std::optional<Reply> reply;
    {
      std::lock_guard lock(mu_);
      received_.push_back(request);
      reply = next_reply(request);
    }
    if (!reply) {
      throw ScriptExhausted("no scripted response for tag '" + request.request_tag + "'" +
                            (request.scope.empty() ? "" : " in scope '" + request.scope + "'"));
    }
    if (const auto* fault = std::get_if<Fault>(&*reply)) {
      if (*fault == Fault::refusal) throw BackendRefusal("scripted refusal", 400);
      throw TransportError("scripted transport failure");
    }
    CompletionResult result;
    result.text = std::get<std::string>(*reply);
    result.backend_id = id_;
    result.usage.prompt_tokens = estimate_tokens(request.prompt_text());
    result.usage.completion_tokens = estimate_tokens(result.text);
    return result;
  }

  std::string id() const override { return id_; }

  std::size_t call_count() const {
    std::lock_guard lock(mu_);
    return received_.size();
  }
  std::vector<CompletionRequest> received() const {
    std::lock_guard lock(mu_);
    return received_;
  }

 private:
  std::optional<Reply> next_reply(const CompletionRequest& request) {
    std::vector<std::string> keys;
    if (!request.scope.empty()) keys.push_back(request.scope + "::" + request.request_tag);
    keys.push_back(request.request_tag);
    for (const auto& key : keys) {
      const bool has_queue = queues_.count(key) != 0;
      const bool has_responder = responders_.count(key) != 0;
      if (!has_queue && !has_responder) continue;
      const std::size_t ordinal = ordinals_[key]++;
      if (has_queue) {
        const auto& q = queues_[key];
        if (ordinal < q.size()) return q[ordinal];
        if (!has_responder) {
          if (repeat_last_ && !q.empty()) return q.back();
          return std::nullopt;
        }
      }
      return responders_[key](request, ordinal);
    }
    return std::nullopt;
  }

  std::string id_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<Reply>> queues_;
  std::map<std::string, Responder> responders_;
  std::map<std::string, std::size_t> ordinals_;
  std::vector<CompletionRequest> received_;
  bool repeat_last_ = false;
};

// --- policy -----------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{500};
};

/// One line of the audit log.
struct AuditEntry {
  std::string timestamp;
  std::string request_tag;
  std::string model_id;
  int attempt = 0;
  std::string outcome;

  nlohmann::ordered_json to_json() const {
    return {{"timestamp", timestamp}, {"request_tag", request_tag}, {"model_id", model_id},
            {"attempt", attempt},     {"outcome", outcome}};
  }
};

/// Append-only, internally synchronized. Optionally mirrors entries to a
/// line-delimited file and keeps the exact requests sent.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::string& path, bool keep_requests = false) : keep_requests_(keep_requests) {
    if (!path.empty()) {
      file_.open(path, std::ios::app);
      if (!file_) throw ConfigError("cannot open audit log " + path);
    }
  }

  void set_keep_requests(bool on) {
    std::lock_guard lock(mu_);
    keep_requests_ = on;
  }

  void record(AuditEntry entry, const CompletionRequest& sent) {
    std::lock_guard lock(mu_);
    if (file_.is_open()) {
      file_ << entry.to_json().dump() << '\n';
      file_.flush();
    }
    entries_.push_back(std::move(entry));
    if (keep_requests_) requests_.push_back(sent);
  }

  std::vector<AuditEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }
  std::vector<CompletionRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  mutable std::mutex mu_;
  std::ofstream file_;
  std::vector<AuditEntry> entries_;
  std::vector<CompletionRequest> requests_;
  bool keep_requests_ = false;
};

/// Token bucket: `rate` tokens per second, holding at most `burst`.
/// A non-positive rate disables limiting.
class TokenBucket {
 public:
  TokenBucket(double rate_per_second, double burst, std::shared_ptr<Clock> clock)
      : rate_(rate_per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
        clock_(std::move(clock)) {
    last_ = clock_->now();
  }

  bool unlimited() const noexcept { return rate_ <= 0; }

  /// Blocks until a token is available.
  void acquire() {
    if (unlimited()) return;
    Clock::duration wait{0};
    {
      std::lock_guard lock(mu_);
      refill();
      tokens_ -= 1.0;
      if (tokens_ < 0) {
        wait = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(-tokens_ / rate_));
      }
    }
    clock_->sleep_for(wait);
  }

 private:
  void refill() {
    const auto now = clock_->now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
  }

  double rate_;
  double burst_;
  double tokens_;
  Clock::duration last_{0};
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
};

/// Per-role defaults applied to requests that leave them unset.
struct GatewayOptions {
  std::string model_id = "default";
  double temperature = 0.7;
  int max_tokens = 1024;
  RetryPolicy retry;
  /// Requests per second; <= 0 disables the limiter.
  double rate_limit_rps = 0;
  std::uint64_t seed = 0;
};

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {},
                   std::shared_ptr<Clock> clock = system_clock(), std::shared_ptr<AuditLog> audit = nullptr)
      : backend_(std::move(backend)), options_(std::move(options)), clock_(std::move(clock)),
        audit_(audit ? std::move(audit) : std::make_shared<AuditLog>()),
        limiter_(std::make_shared<TokenBucket>(options_.rate_limit_rps, options_.rate_limit_rps, clock_)),
        shared_(std::make_shared<Shared>(options_.seed)) {
    if (!backend_) throw ConfigError("gateway needs a backend");
    if (options_.retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  }

  /// Same backend, limiter, audit log and counters; different retry policy.
  Gateway with_retry_policy(int max_attempts, std::chrono::milliseconds base_backoff) const {
    if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    Gateway copy = *this;
    copy.options_.retry = RetryPolicy{max_attempts, base_backoff};
    return copy;
  }

  /// Sends the request, retrying transport failures with exponential backoff
  /// and jitter. The request is forwarded unmodified apart from defaults.
  CompletionResult complete(const CompletionRequest& request) const {
    CompletionRequest sent = request;
    if (sent.model_id.empty()) sent.model_id = options_.model_id;
    if (!sent.temperature) sent.temperature = options_.temperature;
    if (!sent.max_tokens) sent.max_tokens = options_.max_tokens;
    validate_request(sent);

    const int max_attempts = options_.retry.max_attempts;
    for (int attempt = 1;; ++attempt) {
      limiter_->acquire();
      try {
        auto result = backend_->send(sent);
        audit(sent, attempt, "ok");
        {
          std::lock_guard lock(shared_->mu);
          shared_->usage += result.usage;
          ++shared_->calls;
        }
        return result;
      } catch (const TransportError& e) {
        audit(sent, attempt, std::string("transport_error: ") + e.what());
        if (attempt >= max_attempts) throw;
      } catch (const BackendRefusal& e) {
        audit(sent, attempt, std::string("refused: ") + e.what());
        throw;
      } catch (const ScriptExhausted& e) {
        audit(sent, attempt, std::string("script_exhausted: ") + e.what());
        throw;
      }
      clock_->sleep_for(backoff(attempt));
    }
  }

  /// Delay before retry number `retry` (1-based): uniform in
  /// [base * 2^(retry-1), base * 2^retry).
  Clock::duration backoff(int retry) const {
    using namespace std::chrono;
    const auto base = duration_cast<Clock::duration>(options_.retry.base_backoff);
    const auto low = base * (std::int64_t{1} << std::min(retry - 1, 30));
    if (low.count() <= 0) return Clock::duration::zero();
    std::lock_guard lock(shared_->mu);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    const auto extra = static_cast<Clock::duration::rep>(jitter(shared_->rng) * static_cast<double>(low.count()));
    return low + Clock::duration(std::min<Clock::duration::rep>(extra, low.count() - 1));
  }

  const GatewayOptions& options() const noexcept { return options_; }
  const AuditLog& audit_log() const noexcept { return *audit_; }
  std::shared_ptr<AuditLog> audit_log_ptr() const noexcept { return audit_; }
  const Backend& backend() const noexcept { return *backend_; }

  Usage usage() const {
    std::lock_guard lock(shared_->mu);
    return shared_->usage;
  }
  /// Successful completions so far.
  std::size_t calls() const {
    std::lock_guard lock(shared_->mu);
    return shared_->calls;
  }

 private:
  struct Shared {
    explicit Shared(std::uint64_t seed) : rng(seed) {}
    std::mutex mu;
    std::mt19937_64 rng;
    Usage usage;
    std::size_t calls = 0;
  };

  void audit(const CompletionRequest& sent, int attempt, std::string outcome) const {
    audit_->record(AuditEntry{clock_->timestamp(), sent.request_tag, sent.model_id, attempt, std::move(outcome)},
                   sent);
  }

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::shared_ptr<Clock> clock_;
  std::shared_ptr<AuditLog> audit_;
  std::shared_ptr<TokenBucket> limiter_;
  std::shared_ptr<Shared> shared_;
};

/// Convenience for tests and offline runs.
inline Gateway scripted_gateway(std::shared_ptr<ScriptedBackend> backend, GatewayOptions options = {}) {
  return Gateway(std::move(backend), std::move(options));
}

}  // namespace ctom
