#pragma once

#include <stdexcept>
#include <string>

namespace dualrec {

// Failure classes. The CLI maps each class to a distinct exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A metric over an empty case set has no value.
struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

enum class ExitCode : int {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kData = 3,
  kTransport = 4,
  kNumeric = 5,
};

}  // namespace dualrec
