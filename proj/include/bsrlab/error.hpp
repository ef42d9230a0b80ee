#pragma once

#include <stdexcept>
#include <string>

namespace bsrlab {

enum class ErrorKind {
  invalid_config,
  arity,
  theory_unsupported,
  inconclusive,
  refine_step,
  no_blowup,
  truncation,
  domain,
  numeric,
  window,
  divergent_moment,
  mode,
  parse,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::arity: return "arity";
    case ErrorKind::theory_unsupported: return "theory-unsupported";
    case ErrorKind::inconclusive: return "inconclusive";
    case ErrorKind::refine_step: return "refine-step";
    case ErrorKind::no_blowup: return "no-blowup";
    case ErrorKind::truncation: return "truncation";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::window: return "window";
    case ErrorKind::divergent_moment: return "divergent-moment";
    case ErrorKind::mode: return "mode";
    case ErrorKind::parse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bsrlab
