#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mcseg {

// Contract violation: an API was called with arguments that break its
// preconditions (bad shapes, invalid enum combinations, non-scalar loss).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Configuration problem: unparsable or semantically invalid config. CLI exit 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem problem, always carries the offending path. CLI exit 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Semantically impossible request on valid inputs. CLI exit 4.
class SemanticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// Optional runtime checks (finite values, probability ranges). Off by default;
// tests and debug runs flip them on.
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

// Worker threads for internal parallelism. Resolved once from MCSEG_THREADS
// (falls back to min(hardware_concurrency, 4)); overridable for tests.
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [begin, end) on a fixed static partition of the range.
// Every index is processed by exactly one worker, so results are bitwise
// independent of the thread count as long as workers write disjoint data.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace mcseg
