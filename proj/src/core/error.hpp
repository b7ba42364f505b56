#pragma once

#include <stdexcept>
#include <string>

namespace mstage {

// Error categories. The CLI maps these onto its documented exit codes
// (usage 2, config 3, dependency 4, numeric 5, everything else 1).
enum class ErrorKind {
  InvalidArg,  // malformed call / unusable arguments
  Config,      // config schema or contract violation
  Dependency,  // missing or corrupt input artifact
  Numeric,     // non-finite values, diverged training
  Io,          // filesystem failure
  Internal,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace mstage
