#pragma once

#include <stdexcept>
#include <string>

namespace lsk {

// Precondition / configuration violations. The CLI maps these to exit code 2.
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// File and format problems. The CLI maps these to exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail_contract(const std::string& msg) { throw ContractViolation(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_contract(msg);
}

}  // namespace lsk
