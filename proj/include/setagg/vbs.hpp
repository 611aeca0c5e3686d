#pragma once

#include <cmath>
#include <string>

#include "setagg/rng.hpp"
#include "setagg/types.hpp"

namespace setagg {

/// Default temperature and word count for vocabulary-based burst suppression.
inline constexpr double kDefaultTau = 10.0;
inline constexpr int kDefaultVocabularySize = 32;

/// k visual words over the variance-feature space, one per row.
struct Vocabulary {
  Matrix words;  // k x d_va

  Eigen::Index size() const { return words.rows(); }
  Eigen::Index dim() const { return words.cols(); }
};

/// Random vocabulary, entries i.i.d. N(0, 1/d_va).
inline Vocabulary init_vocabulary(Eigen::Index k, Eigen::Index d_va, Rng& rng) {
  Vocabulary v;
  v.words.resize(k, d_va);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d_va));
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < d_va; ++j)
      v.words(i, j) = rng.normal(0.0, stddev);
  return v;
}

enum class AssignMode : std::uint8_t {
  Soft,  // row softmax at finite temperature
  Hard,  // tau -> infinity limit: one-hot argmax, ties to the lowest word
};

/// Assignment scores at all three stages of the VBS normalization chain.
struct AssignmentMatrix {
  Matrix raw;    // n x k, f_va . words^T
  Matrix inter;  // row-stochastic
  Matrix intra;  // column-stochastic on occupied words
  double tau = kDefaultTau;
  AssignMode mode = AssignMode::Soft;
};

/// Raw assignment: quantize each variance feature against every word.
inline Matrix assign(const Matrix& f_va, const Vocabulary& vocab) {
  if (f_va.cols() != vocab.dim())
    throw DimensionError("assign: feature dim " + std::to_string(f_va.cols()) +
                         " vs vocabulary dim " + std::to_string(vocab.dim()));
  return f_va * vocab.words.transpose();
}

/// Inter-word normalization: per-element softmax over words.
///
/// tau scales the numerical contrast. tau = 0 yields uniform rows
/// (equal-assignment); hard mode is the tau -> infinity limit with one-hot
/// rows, argmax ties broken toward the lowest word index. The product
/// tau * raw is formed before the stabilizing row-max subtraction.
inline Matrix inter_word_normalize(const Matrix& raw, double tau,
                                   AssignMode mode = AssignMode::Soft) {
  const Eigen::Index n = raw.rows();
  const Eigen::Index k = raw.cols();
  Matrix inter(n, k);
  if (mode == AssignMode::Hard) {
    inter.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < k; ++j)
        if (raw(i, j) > raw(i, best)) best = j;
      inter(i, best) = 1.0;
    }
    return inter;
  }
  if (tau < 0.0)
    throw ParameterError("inter_word_normalize: tau must be >= 0");
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd z = tau * raw.row(i);
    z.array() -= z.maxCoeff();
    Eigen::RowVectorXd e = z.array().exp();
    inter.row(i) = e / e.sum();
  }
  return inter;
}

/// Intra-word normalization: L1-normalize each word's column of assignment
/// scores. Columns with (hard-mode) zero mass below 1e-12 stay all-zero.
inline Matrix intra_word_normalize(const Matrix& inter) {
  Matrix intra = inter;
  for (Eigen::Index j = 0; j < inter.cols(); ++j) {
    const double mass = inter.col(j).cwiseAbs().sum();
    if (mass < 1e-12) {
      intra.col(j).setZero();
    } else {
      intra.col(j) /= mass;
    }
  }
  return intra;
}

/// Burst score per element: the row sum of the intra-normalized assignments.
/// Elements quantized into crowded words receive smaller scores.
///
/// A single-element set has no burstiness to measure; it gets the trivial
/// weight 1 in either mode (the raw soft-mode row sum would be k).
inline WeightVector burst_scores(const Matrix& intra) {
  if (intra.rows() == 1) return WeightVector::Ones(1);
  return intra.rowwise().sum();
}

/// All three stages in one pass.
inline AssignmentMatrix vbs_assignment(const Matrix& f_va,
                                       const Vocabulary& vocab,
                                       double tau = kDefaultTau,
                                       AssignMode mode = AssignMode::Soft) {
  AssignmentMatrix a;
  a.tau = tau;
  a.mode = mode;
  a.raw = assign(f_va, vocab);
  a.inter = inter_word_normalize(a.raw, tau, mode);
  a.intra = intra_word_normalize(a.inter);
  return a;
}

/// assign -> inter -> intra -> burst scores. O(nkd).
///
/// normalize_rows applies an L2 row normalization to f_va before
/// quantization; off by default.
inline WeightVector vbs_pipeline(const Matrix& f_va, const Vocabulary& vocab,
                                 double tau = kDefaultTau,
                                 AssignMode mode = AssignMode::Soft,
                                 bool normalize_rows = false) {
  if (!normalize_rows)
    return burst_scores(vbs_assignment(f_va, vocab, tau, mode).intra);
  Matrix rows = f_va;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (norm == 0.0)
      throw DegenerateVectorError("vbs_pipeline: zero-norm variance feature");
    rows.row(i) /= norm;
  }
  return burst_scores(vbs_assignment(rows, vocab, tau, mode).intra);
}

}  // namespace setagg
