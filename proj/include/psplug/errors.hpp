#pragma once

#include <stdexcept>
#include <string>

namespace psplug {

// Error taxonomy used across the library. The CLI maps kinds onto exit
// codes: usage/config -> 1, data/numeric/integrity -> 2, external -> 3.
enum class ErrorKind {
  invalid_input,
  config,
  usage,
  data,
  cache_integrity,
  invalid_profile,
  degenerate_sample,
  degenerate_pair,
  budget_exhausted,
  numeric,
  parse,
  range,
  transport,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::usage:
      case ErrorKind::config:
        return 1;
      case ErrorKind::transport:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
};

struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& m) : Error(ErrorKind::invalid_input, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};
struct CacheIntegrityError : Error {
  explicit CacheIntegrityError(const std::string& m) : Error(ErrorKind::cache_integrity, m) {}
};
struct InvalidProfileError : Error {
  explicit InvalidProfileError(const std::string& m) : Error(ErrorKind::invalid_profile, m) {}
};
struct DegenerateSampleError : Error {
  explicit DegenerateSampleError(const std::string& m) : Error(ErrorKind::degenerate_sample, m) {}
};
struct DegeneratePairError : Error {
  explicit DegeneratePairError(const std::string& m) : Error(ErrorKind::degenerate_pair, m) {}
};
struct BudgetExhaustedError : Error {
  explicit BudgetExhaustedError(const std::string& m) : Error(ErrorKind::budget_exhausted, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorKind::parse, m) {}
};
struct RangeError : Error {
  explicit RangeError(const std::string& m) : Error(ErrorKind::range, m) {}
};
struct TransportError : Error {
  explicit TransportError(const std::string& m) : Error(ErrorKind::transport, m) {}
};

}  // namespace psplug
