#pragma once

#include <stdexcept>
#include <string>

namespace tapool {

enum class ErrorKind {
  Domain,
  Convergence,
  DegenerateRegion,
  Indefinite,
  Feasibility,
  Parse,
  MissingWeight,
  DimensionMismatch,
  PropensityUnderflow,
  Divergence,
  Collinearity,
  RankDeficiency,
  SingularJacobian,
  Singularity,
  Unsupported,
  Precondition,
  Budget,
  Replicates,
  Diagnostics,
  Usage,
  Io,
};

const char* kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(kind_name(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Re-throws an error raised inside a pipeline stage with the stage name prefixed.
[[noreturn]] void rethrow_in_stage(const std::string& stage, const Error& e);

}  // namespace tapool
