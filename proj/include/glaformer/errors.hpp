#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glaformer {

/// Base for every error raised by the library. `kind()` is a stable,
/// machine-readable category used by the CLI's one-line failure reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define GLAFORMER_DEFINE_ERROR(Name, tag)                         \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  }

// Incompatible tensor shapes.
GLAFORMER_DEFINE_ERROR(DimensionError, "dimension");
// Invalid configuration value (kernel size, fractions, head counts, ...).
GLAFORMER_DEFINE_ERROR(ConfigError, "config");
// Spatial size not divisible by the window size.
GLAFORMER_DEFINE_ERROR(PartitionError, "partition");
// Two rasters that must be co-registered have different dimensions.
GLAFORMER_DEFINE_ERROR(PairingError, "pairing");
// Malformed file container.
GLAFORMER_DEFINE_ERROR(FormatError, "format");
// Well-formed container carrying invalid values.
GLAFORMER_DEFINE_ERROR(DataError, "data");
// API misuse (backward on a non-scalar, missing gradient, ...).
GLAFORMER_DEFINE_ERROR(ContractError, "contract");
// An op produced NaN or Inf.
GLAFORMER_DEFINE_ERROR(NumericError, "numeric");
// Filesystem failure.
GLAFORMER_DEFINE_ERROR(IoError, "io");
// Training aborted (non-finite loss).
GLAFORMER_DEFINE_ERROR(TrainingError, "training");
// Kappa is undefined when the expected agreement equals one.
GLAFORMER_DEFINE_ERROR(UndefinedKappaError, "undefined-kappa");
// Gradient check exceeded its tolerance.
GLAFORMER_DEFINE_ERROR(GradCheckError, "gradcheck");

#undef GLAFORMER_DEFINE_ERROR

}  // namespace glaformer
