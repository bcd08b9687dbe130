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

#include <stdexcept>
#include <string>
#include <utility>

namespace ctom {

/// Root of every exception thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model output did not follow the required format.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// --- gateway --------------------------------------------------------------

/// Network failure, timeout, or a retryable HTTP status.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Non-retryable rejection by the backend (4xx other than 408/409/429).
class BackendRefusal : public Error {
 public:
  BackendRefusal(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// The scripted backend has no response for a request. Always a test bug.
class ScriptExhausted : public Error {
 public:
  using Error::Error;
};

// --- generation -----------------------------------------------------------

/// A pipeline stage gave up after exhausting its attempt budget.
class GenerationFailed : public Error {
 public:
  GenerationFailed(std::string stage, const std::string& what, std::string last_raw)
      : Error(stage + ": " + what), stage_(std::move(stage)), last_raw_(std::move(last_raw)) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& last_raw() const noexcept { return last_raw_; }

 private:
  std::string stage_;
  std::string last_raw_;
};

// --- prompts --------------------------------------------------------------

class UnknownTemplate : public Error {
 public:
  using Error::Error;
};

/// A component needs a template the loaded library does not provide.
class TemplateMissing : public Error {
 public:
  using Error::Error;
};

class MissingSlot : public Error {
 public:
  using Error::Error;
};

class UnknownSlot : public Error {
 public:
  using Error::Error;
};

class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

// --- evaluation -----------------------------------------------------------

class JudgeUnparseable : public Error {
 public:
  using Error::Error;
};

class EmptyReference : public Error {
 public:
  using Error::Error;
};

// --- data -----------------------------------------------------------------

/// Malformed serialized data. `path()` names the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Well-formed data that breaks a domain invariant.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class InsufficientRecords : public Error {
 public:
  InsufficientRecords(std::string domain, std::size_t requested, std::size_t available)
      : Error("domain '" + domain + "': requested " + std::to_string(requested) +
              " test records but only " + std::to_string(available) + " available"),
        domain_(std::move(domain)) {}
  const std::string& domain() const noexcept { return domain_; }

 private:
  std::string domain_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctom
