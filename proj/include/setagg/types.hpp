#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace setagg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Per-element weights; always the same length as the owning set's row count.
using WeightVector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented precondition (non-finite entries, bad labels,
/// malformed permutations, empty score lists, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A zero-norm vector where a direction is required.
class DegenerateVectorError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Out-of-range scalar parameter (negative temperature, ridge <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A solver or training step produced non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A set of n feature vectors of dimension d sharing one identity label.
/// The unit of aggregation for every method in this library.
struct FeatureSet {
  Matrix features;        // n x d
  std::int64_t identity = 0;
  std::string source_id;

  FeatureSet() = default;
  FeatureSet(Matrix f, std::int64_t id, std::string source = {})
      : features(std::move(f)), identity(id), source_id(std::move(source)) {}

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Enforces the type invariants: n >= 1, d >= 1, finite entries,
  /// identity >= 0. Throws ValidationError on violation.
  void validate() const {
    if (features.rows() < 1 || features.cols() < 1)
      throw ValidationError("FeatureSet requires n >= 1 and d >= 1");
    if (!features.allFinite())
      throw ValidationError("FeatureSet contains non-finite entries");
    if (identity < 0)
      throw ValidationError("FeatureSet identity label must be >= 0");
  }
};

enum class MethodTag : std::uint8_t {
  Sum = 0,
  Attention = 1,
  Vbs = 2,
  Vba = 3,
  Gmp = 4,
  Da = 5,
  Composite = 6,
};

inline const char* to_string(MethodTag tag) {
  switch (tag) {
    case MethodTag::Sum: return "sum";
    case MethodTag::Attention: return "attention";
    case MethodTag::Vbs: return "vbs";
    case MethodTag::Vba: return "vba";
    case MethodTag::Gmp: return "gmp";
    case MethodTag::Da: return "da";
    case MethodTag::Composite: return "composite";
  }
  return "unknown";
}

/// The aggregated representation of one feature set.
struct SetRepresentation {
  Vector vector;
  MethodTag method_tag = MethodTag::Sum;
};

namespace detail {

inline void require_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (!m.allFinite())
    throw ValidationError(std::string(what) + " contains non-finite entries");
}

inline void require_finite(const Eigen::Ref<const Vector>& v, const char* what) {
  if (!v.allFinite())
    throw ValidationError(std::string(what) + " contains non-finite entries");
}

}  // namespace detail

}  // namespace setagg
