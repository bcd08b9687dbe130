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

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace ctom {

/// Runs `work(i)` for i in [0, n) on up to `parallelism` threads and hands
/// each result to `sink(i, result)` in index order, so output does not
/// depend on scheduling. `sink` calls are serialized. If `work` or `sink`
/// throws, remaining items are abandoned and the first exception is
/// rethrown after all threads stop.
template <class Result>
void run_ordered(std::size_t n, int parallelism, const std::function<Result(std::size_t)>& work,
                 const std::function<void(std::size_t, Result&&)>& sink) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::map<std::size_t, Result> pending;
  std::size_t emit = 0;
  std::exception_ptr error;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        Result r = work(i);
        std::lock_guard lock(mu);
        pending.emplace(i, std::move(r));
        // Flush everything that is now contiguous.
        for (auto it = pending.find(emit); it != pending.end(); it = pending.find(emit)) {
          sink(emit, std::move(it->second));
          pending.erase(it);
          ++emit;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
        return;
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::max(1, parallelism));
  if (threads == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace ctom
