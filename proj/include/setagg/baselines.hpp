#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>

#include "setagg/types.hpp"

namespace setagg {

enum class GramSource : std::uint8_t { Entangled, Identity, Variance };

/// Self-similarity matrix G = f f^T.
struct GramMatrix {
  Matrix g;  // n x n, symmetric
  GramSource source = GramSource::Entangled;
};

inline GramMatrix gram(const FeatureSet& set,
                       GramSource source = GramSource::Entangled) {
  GramMatrix out;
  out.g = set.features * set.features.transpose();
  out.source = source;
  return out;
}

inline GramMatrix gram(const Matrix& rows,
                       GramSource source = GramSource::Entangled) {
  GramMatrix out;
  out.g = rows * rows.transpose();
  out.source = source;
  return out;
}

/// Generalized max-pooling weights: solve (G + ridge I) w = 1 so that every
/// element's similarity to the aggregate F = sum_i w_i f_i is ~1.
inline WeightVector gmp_weights(const GramMatrix& gram_matrix, double ridge) {
  if (ridge <= 0.0) throw ParameterError("gmp_weights: ridge must be > 0");
  const Eigen::Index n = gram_matrix.g.rows();
  Matrix a = gram_matrix.g;
  a.diagonal().array() += ridge;
  WeightVector w = a.ldlt().solve(Vector::Ones(n));
  if (!w.allFinite())
    throw NumericError("gmp_weights: solver produced non-finite weights");
  return w;
}

struct DaResult {
  WeightVector weights;
  bool converged = false;
  int iterations = 0;       // update sweeps actually performed
  double final_spread = 0;  // max_i |h_i - 1| at exit, h_i = w_i (G w)_i
};

/// Democratic aggregation weights via modified Sinkhorn scaling.
///
/// Starting from all-ones, each sweep rescales w_i <- w_i / sqrt(h_i) with
/// h_i = w_i (G w)_i, driving every h_i toward the constant 1 so that each
/// element contributes equally to the aggregate. Elements whose h_i is zero
/// or negative skip the sweep. Exhausting the iteration budget is not an
/// error; the best-so-far weights are returned with converged = false.
inline DaResult da_weights(const GramMatrix& gram_matrix, int iterations = 10,
                           double tol = 1e-2) {
  const Eigen::Index n = gram_matrix.g.rows();
  DaResult out;
  out.weights = WeightVector::Ones(n);
  WeightVector best = out.weights;
  double best_spread = std::numeric_limits<double>::infinity();

  for (int sweep = 0; sweep <= iterations; ++sweep) {
    const Vector h =
        out.weights.cwiseProduct(gram_matrix.g * out.weights);
    const double spread = (h.array() - 1.0).abs().maxCoeff();
    if (spread < best_spread) {
      best_spread = spread;
      best = out.weights;
    }
    if (spread <= tol) {
      out.converged = true;
      out.final_spread = spread;
      return out;
    }
    if (sweep == iterations) break;
    for (Eigen::Index i = 0; i < n; ++i)
      if (h[i] > 0.0) out.weights[i] /= std::sqrt(h[i]);
    out.iterations = sweep + 1;
  }
  out.weights = best;
  out.final_spread = best_spread;
  return out;
}

}  // namespace setagg
