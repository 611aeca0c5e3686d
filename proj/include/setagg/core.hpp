#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "setagg/types.hpp"

namespace setagg {

/// F = sum_i w_i f_i. All arithmetic in double precision.
inline SetRepresentation weighted_sum(const FeatureSet& set,
                                      const WeightVector& weights,
                                      MethodTag tag = MethodTag::Sum) {
  if (weights.size() != set.size())
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(set.size()) +
                         " elements");
  detail::require_finite(set.features, "weighted_sum features");
  detail::require_finite(weights, "weighted_sum weights");
  SetRepresentation rep;
  rep.vector = set.features.transpose() * weights;
  rep.method_tag = tag;
  return rep;
}

/// a.b / (|a| |b|), in [-1, 1].
inline double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw DimensionError("cosine_similarity: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  return a.dot(b) / (na * nb);
}

/// The inner product of two weighted sums, together with its expansion into
/// per-pair contributions: the scalar equals the sum of the n x m matrix
/// [wx_i * wy_j * <x_i, y_j>]. Useful for attributing set similarity to
/// element pairs (and to vocabulary-word blocks under VBS weights).
struct CrossSimilarity {
  double total = 0.0;
  Matrix contributions;  // n x m
};

inline CrossSimilarity cross_similarity_decomposition(const FeatureSet& x,
                                                      const FeatureSet& y,
                                                      const WeightVector& wx,
                                                      const WeightVector& wy) {
  if (x.dim() != y.dim())
    throw DimensionError("cross_similarity_decomposition: feature dims differ");
  if (wx.size() != x.size() || wy.size() != y.size())
    throw DimensionError("cross_similarity_decomposition: weight length mismatch");
  CrossSimilarity out;
  const Vector fx = x.features.transpose() * wx;
  const Vector fy = y.features.transpose() * wy;
  out.total = fx.dot(fy);
  out.contributions = wx.asDiagonal() * (x.features * y.features.transpose()) *
                      wy.asDiagonal();
  return out;
}

}  // namespace setagg
