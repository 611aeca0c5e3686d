#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "setagg/core.hpp"
#include "setagg/rng.hpp"
#include "setagg/types.hpp"
#include "setagg/vbs.hpp"

namespace setagg {

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ModelDims {
  Eigen::Index d = 0;     // entangled feature dimension
  Eigen::Index d_id = 0;  // identity feature dimension
  Eigen::Index d_va = 0;  // variance feature dimension
  Eigen::Index k = 0;     // vocabulary size
  Eigen::Index c = 0;     // number of identity classes
};

/// Light-weighted set disentanglement model: two affine encoders splitting an
/// entangled feature into identity and variance parts, an affine decoder
/// reconstructing the entangled feature from their concatenation, a quality
/// query over variance features, the burst-suppression vocabulary, and a
/// linear identity classifier. No nonlinearities beyond the sigmoid/softmax
/// attached to the attention and losses.
struct DisentangleModel {
  ModelDims dims;
  double tau = kDefaultTau;

  Matrix enc_id_w;       // d x d_id
  Vector enc_id_b;       // d_id
  Matrix enc_va_w;       // d x d_va
  Vector enc_va_b;       // d_va
  Matrix dec_w;          // (d_id + d_va) x d
  Vector dec_b;          // d
  Vector quality_query;  // d_va
  Vocabulary vocab;      // k x d_va
  Matrix cls_w;          // d_id x c
  Vector cls_b;          // c
};

inline DisentangleModel init_model(const ModelDims& dims, double tau, Rng& rng) {
  if (dims.d < 1 || dims.d_id < 1 || dims.d_va < 1 || dims.k < 1 || dims.c < 1)
    throw ParameterError("init_model: all dimensions must be >= 1");
  DisentangleModel m;
  m.dims = dims;
  m.tau = tau;
  auto gaussian = [&rng](Matrix& w, Eigen::Index rows, Eigen::Index cols,
                         double stddev) {
    w.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.normal(0.0, stddev);
  };
  gaussian(m.enc_id_w, dims.d, dims.d_id, 1.0 / std::sqrt(double(dims.d)));
  m.enc_id_b = Vector::Zero(dims.d_id);
  gaussian(m.enc_va_w, dims.d, dims.d_va, 1.0 / std::sqrt(double(dims.d)));
  m.enc_va_b = Vector::Zero(dims.d_va);
  gaussian(m.dec_w, dims.d_id + dims.d_va, dims.d,
           1.0 / std::sqrt(double(dims.d_id + dims.d_va)));
  m.dec_b = Vector::Zero(dims.d);
  Matrix q;
  gaussian(q, dims.d_va, 1, 1.0 / std::sqrt(double(dims.d_va)));
  m.quality_query = q.col(0);
  m.vocab = init_vocabulary(dims.k, dims.d_va, rng);
  gaussian(m.cls_w, dims.d_id, dims.c, 1.0 / std::sqrt(double(dims.d_id)));
  m.cls_b = Vector::Zero(dims.c);
  return m;
}

inline DisentangleModel init_model(const ModelDims& dims,
                                   double tau = kDefaultTau,
                                   std::uint64_t seed = 42) {
  Rng rng(seed);
  return init_model(dims, tau, rng);
}

/// Gradient (or optimizer-state) tensors, one per trainable model tensor.
struct ModelGradients {
  Matrix enc_id_w;
  Vector enc_id_b;
  Matrix enc_va_w;
  Vector enc_va_b;
  Matrix dec_w;
  Vector dec_b;
  Vector quality_query;
  Matrix vocab_words;
  Matrix cls_w;
  Vector cls_b;
};

inline ModelGradients zeros_like(const DisentangleModel& m) {
  ModelGradients g;
  g.enc_id_w = Matrix::Zero(m.enc_id_w.rows(), m.enc_id_w.cols());
  g.enc_id_b = Vector::Zero(m.enc_id_b.size());
  g.enc_va_w = Matrix::Zero(m.enc_va_w.rows(), m.enc_va_w.cols());
  g.enc_va_b = Vector::Zero(m.enc_va_b.size());
  g.dec_w = Matrix::Zero(m.dec_w.rows(), m.dec_w.cols());
  g.dec_b = Vector::Zero(m.dec_b.size());
  g.quality_query = Vector::Zero(m.quality_query.size());
  g.vocab_words = Matrix::Zero(m.vocab.words.rows(), m.vocab.words.cols());
  g.cls_w = Matrix::Zero(m.cls_w.rows(), m.cls_w.cols());
  g.cls_b = Vector::Zero(m.cls_b.size());
  return g;
}

/// Flat view of one tensor, for the optimizer, serialization, and gradient
/// checking. Vectors are exposed as single-column tensors.
struct TensorView {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  double* data = nullptr;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<Eigen::VectorXd> flat() const { return {data, size()}; }
};

inline std::vector<TensorView> parameter_views(DisentangleModel& m) {
  return {
      {"enc_id_weight", m.enc_id_w.rows(), m.enc_id_w.cols(), m.enc_id_w.data()},
      {"enc_id_bias", m.enc_id_b.size(), 1, m.enc_id_b.data()},
      {"enc_va_weight", m.enc_va_w.rows(), m.enc_va_w.cols(), m.enc_va_w.data()},
      {"enc_va_bias", m.enc_va_b.size(), 1, m.enc_va_b.data()},
      {"dec_weight", m.dec_w.rows(), m.dec_w.cols(), m.dec_w.data()},
      {"dec_bias", m.dec_b.size(), 1, m.dec_b.data()},
      {"quality_query", m.quality_query.size(), 1, m.quality_query.data()},
      {"vocabulary", m.vocab.words.rows(), m.vocab.words.cols(),
       m.vocab.words.data()},
      {"cls_weight", m.cls_w.rows(), m.cls_w.cols(), m.cls_w.data()},
      {"cls_bias", m.cls_b.size(), 1, m.cls_b.data()},
  };
}

inline std::vector<TensorView> gradient_views(ModelGradients& g) {
  return {
      {"enc_id_weight", g.enc_id_w.rows(), g.enc_id_w.cols(), g.enc_id_w.data()},
      {"enc_id_bias", g.enc_id_b.size(), 1, g.enc_id_b.data()},
      {"enc_va_weight", g.enc_va_w.rows(), g.enc_va_w.cols(), g.enc_va_w.data()},
      {"enc_va_bias", g.enc_va_b.size(), 1, g.enc_va_b.data()},
      {"dec_weight", g.dec_w.rows(), g.dec_w.cols(), g.dec_w.data()},
      {"dec_bias", g.dec_b.size(), 1, g.dec_b.data()},
      {"quality_query", g.quality_query.size(), 1, g.quality_query.data()},
      {"vocabulary", g.vocab_words.rows(), g.vocab_words.cols(),
       g.vocab_words.data()},
      {"cls_weight", g.cls_w.rows(), g.cls_w.cols(), g.cls_w.data()},
      {"cls_bias", g.cls_b.size(), 1, g.cls_b.data()},
  };
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct EncodeResult {
  Matrix f_id;  // n x d_id
  Matrix f_va;  // n x d_va
};

inline EncodeResult encode(const DisentangleModel& m, const Matrix& features) {
  if (features.cols() != m.dims.d)
    throw DimensionError("encode: feature dim " +
                         std::to_string(features.cols()) + " vs model d " +
                         std::to_string(m.dims.d));
  EncodeResult out;
  out.f_id = (features * m.enc_id_w).rowwise() + m.enc_id_b.transpose();
  out.f_va = (features * m.enc_va_w).rowwise() + m.enc_va_b.transpose();
  return out;
}

inline EncodeResult encode(const DisentangleModel& m, const FeatureSet& set) {
  return encode(m, set.features);
}

/// Quality score per element: sigmoid(q_va . f_va_i), each in (0, 1).
inline WeightVector quality_scores(const DisentangleModel& m,
                                   const Matrix& f_va) {
  if (f_va.cols() != m.dims.d_va)
    throw DimensionError("quality_scores: variance dim mismatch");
  WeightVector alpha = f_va * m.quality_query;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha[i] = sigmoid(alpha[i]);
  return alpha;
}

/// Decode the concatenation [id_part, va_part] back to the entangled space.
inline Vector reconstruct(const DisentangleModel& m, const Vector& id_part,
                          const Vector& va_part) {
  if (id_part.size() != m.dims.d_id || va_part.size() != m.dims.d_va)
    throw DimensionError("reconstruct: part dims do not match model");
  Vector u(m.dims.d_id + m.dims.d_va);
  u << id_part, va_part;
  return m.dec_w.transpose() * u + m.dec_b;
}

namespace detail {

inline void require_permutation(const std::vector<std::size_t>& p,
                                std::size_t n) {
  if (p.size() != n)
    throw ValidationError("pairing length does not match set size");
  std::vector<bool> seen(n, false);
  for (std::size_t v : p) {
    if (v >= n || seen[v])
      throw ValidationError("pairing is not a permutation");
    seen[v] = true;
  }
}

}  // namespace detail

/// Image-level reconstruction loss with identity features swapped along the
/// given pairing: mean_i ||f_i - Dec([f_ID(pairing[i]), f_VA(i)])||_2.
inline double loss_recons_img(const DisentangleModel& m, const FeatureSet& set,
                              const std::vector<std::size_t>& pairing) {
  detail::require_permutation(pairing, static_cast<std::size_t>(set.size()));
  const EncodeResult enc = encode(m, set);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const Vector rec = reconstruct(m, enc.f_id.row(pairing[i]).transpose(),
                                   enc.f_va.row(i).transpose());
    acc += (set.features.row(i).transpose() - rec).norm();
  }
  return acc / double(set.size());
}

/// Set-level reconstruction loss: the aggregated representation replaces the
/// per-element identity features: mean_i ||f_i - Dec([F, f_VA(i)])||_2.
inline double loss_recons_set(const DisentangleModel& m, const FeatureSet& set,
                              const Vector& representation) {
  if (representation.size() != m.dims.d_id)
    throw DimensionError("loss_recons_set: representation length != d_id");
  const EncodeResult enc = encode(m, set);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const Vector rec =
        reconstruct(m, representation, enc.f_va.row(i).transpose());
    acc += (set.features.row(i).transpose() - rec).norm();
  }
  return acc / double(set.size());
}

/// Softmax cross-entropy of the linear classifier applied to F.
inline double loss_classification(const DisentangleModel& m,
                                  const Vector& representation,
                                  std::int64_t label) {
  if (representation.size() != m.dims.d_id)
    throw DimensionError("loss_classification: representation length != d_id");
  if (label < 0 || label >= m.dims.c)
    throw ValidationError("loss_classification: label out of range");
  const Vector z = m.cls_w.transpose() * representation + m.cls_b;
  const double zmax = z.maxCoeff();
  const double lse = zmax + std::log((z.array() - zmax).exp().sum());
  return lse - z[label];
}

struct ForwardResult {
  Matrix f_id;
  Matrix f_va;
  WeightVector alpha;
  WeightVector beta;
  WeightVector combined;  // alpha .* beta
  AssignmentMatrix assignment;
  Vector representation;  // F = sum_i alpha_i beta_i f_ID(i), length d_id
};

/// Full aggregation pipeline: encode, quality scores, burst scores on the
/// variance features, weighted sum of the identity features.
inline ForwardResult forward_set(const DisentangleModel& m,
                                 const FeatureSet& set) {
  ForwardResult r;
  EncodeResult enc = encode(m, set);
  r.f_id = std::move(enc.f_id);
  r.f_va = std::move(enc.f_va);
  r.alpha = quality_scores(m, r.f_va);
  r.assignment = vbs_assignment(r.f_va, m.vocab, m.tau, AssignMode::Soft);
  r.beta = burst_scores(r.assignment.intra);
  r.combined = r.alpha.cwiseProduct(r.beta);
  r.representation = r.f_id.transpose() * r.combined;
  return r;
}

// ---------------------------------------------------------------------------
// Training objective
// ---------------------------------------------------------------------------

/// One optimization batch: instances with identical row counts and distinct
/// identity labels, plus the identity-swap pairing drawn for this step.
struct TrainingBatch {
  std::vector<FeatureSet> instances;
  std::vector<std::vector<std::size_t>> pairings;
};

/// Draws a seeded random derangement per instance (identity for n = 1).
inline TrainingBatch make_batch(std::vector<FeatureSet> instances, Rng& rng) {
  TrainingBatch batch;
  batch.pairings.reserve(instances.size());
  for (const FeatureSet& inst : instances)
    batch.pairings.push_back(
        rng.derangement(static_cast<std::size_t>(inst.size())));
  batch.instances = std::move(instances);
  return batch;
}

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double img = 0.0;
  double set = 0.0;
};

namespace detail {

/*
  Manual reverse pass for one instance. Loss terms (scaled by 1/B for the
  batch mean):

    L_CE  = cross-entropy(W_cls^T F + b_cls, y)
    L_img = 1/n sum_i || f_i - Dec([f_ID(p(i)), f_VA(i)]) ||_2
    L_set = 1/n sum_i || f_i - Dec([F,         f_VA(i)]) ||_2
    F     = sum_i alpha_i beta_i f_ID(i)

  The unsquared L2 norm has gradient r/||r|| wrt the residual, taken as zero
  when ||r|| = 0. Gradient wrt F accumulates from the classifier and every
  L_set reconstruction before the aggregation is unwound; beta backprop walks
  the column-L1 and row-softmax chains into both f_VA and the vocabulary.
  A single-element instance has beta pinned to 1 so that chain vanishes.
*/
inline LossBreakdown instance_loss(const DisentangleModel& m,
                                   const FeatureSet& inst,
                                   const std::vector<std::size_t>& pairing,
                                   double scale, ModelGradients* g) {
  const Eigen::Index n = inst.size();
  const Eigen::Index d = m.dims.d;
  const Eigen::Index d_id = m.dims.d_id;
  const Eigen::Index d_va = m.dims.d_va;
  require_permutation(pairing, static_cast<std::size_t>(n));
  if (inst.identity < 0 || inst.identity >= m.dims.c)
    throw ValidationError("instance identity label out of classifier range");

  const Matrix& f = inst.features;
  const ForwardResult fw = forward_set(m, inst);
  const Matrix& p_soft = fw.assignment.inter;
  const Matrix& n_intra = fw.assignment.intra;
  const Vector& rep = fw.representation;

  // Classification.
  Vector logits = m.cls_w.transpose() * rep + m.cls_b;
  const double zmax = logits.maxCoeff();
  Vector probs = (logits.array() - zmax).exp();
  probs /= probs.sum();
  const double l_ce = std::log(probs.sum() / probs[inst.identity]) -
                      0.0 +  // probs already normalized; keep the stable form
                      (zmax + std::log((logits.array() - zmax).exp().sum()) -
                       logits[inst.identity]) *
                          0.0;
  // The stable cross-entropy value:
  const double lse = zmax + std::log((logits.array() - zmax).exp().sum());
  const double ce = lse - logits[inst.identity];

  LossBreakdown lb;
  lb.ce = scale * ce;
  (void)l_ce;

  Vector d_rep = Vector::Zero(d_id);
  Matrix df_id = Matrix::Zero(n, d_id);
  Matrix df_va = Matrix::Zero(n, d_va);

  if (g != nullptr) {
    Vector dlogits = probs * scale;
    dlogits[inst.identity] -= scale;
    g->cls_w += rep * dlogits.transpose();
    g->cls_b += dlogits;
    d_rep += m.cls_w * dlogits;
  }

  // Set-level reconstruction (uses F in place of identity features).
  double l_set_acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector u(d_id + d_va);
    u << rep, fw.f_va.row(i).transpose();
    const Vector out = m.dec_w.transpose() * u + m.dec_b;
    const Vector resid = f.row(i).transpose() - out;
    const double norm = resid.norm();
    l_set_acc += norm;
    if (g != nullptr && norm > 0.0) {
      const Vector dout = (-scale / double(n)) * resid / norm;
      g->dec_w += u * dout.transpose();
      g->dec_b += dout;
      const Vector du = m.dec_w * dout;
      d_rep += du.head(d_id);
      df_va.row(i) += du.tail(d_va).transpose();
    }
  }
  lb.set = scale * l_set_acc / double(n);

  // Image-level reconstruction with swapped identity features.
  double l_img_acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(pairing[i]);
    Vector u(d_id + d_va);
    u << fw.f_id.row(j).transpose(), fw.f_va.row(i).transpose();
    const Vector out = m.dec_w.transpose() * u + m.dec_b;
    const Vector resid = f.row(i).transpose() - out;
    const double norm = resid.norm();
    l_img_acc += norm;
    if (g != nullptr && norm > 0.0) {
      const Vector dout = (-scale / double(n)) * resid / norm;
      g->dec_w += u * dout.transpose();
      g->dec_b += dout;
      const Vector du = m.dec_w * dout;
      df_id.row(j) += du.head(d_id).transpose();
      df_va.row(i) += du.tail(d_va).transpose();
    }
  }
  lb.img = scale * l_img_acc / double(n);
  lb.total = lb.ce + lb.img + lb.set;

  if (g == nullptr) return lb;

  // Aggregation: F = f_id^T (alpha .* beta).
  const Vector dw = fw.f_id * d_rep;
  df_id += fw.combined * d_rep.transpose();
  const Vector dalpha = fw.beta.cwiseProduct(dw);
  const Vector dbeta = fw.alpha.cwiseProduct(dw);

  if (n > 1) {
    const Eigen::Index k = m.dims.k;
    // beta_i = sum_j N_ij  =>  dN_ij = dbeta_i.
    // Column L1 backward; columns zeroed in the forward pass stay flat.
    Matrix d_inter(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double mass = p_soft.col(j).sum();
      if (mass < 1e-12) {
        d_inter.col(j).setZero();
        continue;
      }
      const double coldot = dbeta.dot(n_intra.col(j));
      d_inter.col(j) = (dbeta.array() - coldot) / mass;
    }
    // Row softmax backward, then the tau scaling and the quantization.
    Matrix d_assign(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double rowdot = d_inter.row(i).dot(p_soft.row(i));
      d_assign.row(i) =
          p_soft.row(i).cwiseProduct(d_inter.row(i).array().operator-(rowdot)
                                         .matrix());
    }
    d_assign *= m.tau;
    df_va += d_assign * m.vocab.words;
    g->vocab_words += d_assign.transpose() * fw.f_va;
  }

  // Quality attention backward.
  Vector ds(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ds[i] = dalpha[i] * fw.alpha[i] * (1.0 - fw.alpha[i]);
  g->quality_query += fw.f_va.transpose() * ds;
  df_va += ds * m.quality_query.transpose();

  // Encoders.
  g->enc_id_w += f.transpose() * df_id;
  g->enc_id_b += df_id.colwise().sum().transpose();
  g->enc_va_w += f.transpose() * df_va;
  g->enc_va_b += df_va.colwise().sum().transpose();
  (void)d;
  return lb;
}

inline void validate_batch(const TrainingBatch& batch) {
  if (batch.instances.empty())
    throw ValidationError("training batch is empty");
  if (batch.pairings.size() != batch.instances.size())
    throw ValidationError("training batch: one pairing per instance required");
  const Eigen::Index n = batch.instances.front().size();
  for (const FeatureSet& inst : batch.instances)
    if (inst.size() != n)
      throw ValidationError("training batch: instance sizes differ");
}

}  // namespace detail

/// Mean over instances of L_CE + L_recons-img + L_recons-set.
inline LossBreakdown total_loss(const DisentangleModel& m,
                                const TrainingBatch& batch) {
  detail::validate_batch(batch);
  const double scale = 1.0 / double(batch.instances.size());
  LossBreakdown sum;
  for (std::size_t b = 0; b < batch.instances.size(); ++b) {
    const LossBreakdown lb = detail::instance_loss(
        m, batch.instances[b], batch.pairings[b], scale, nullptr);
    sum.total += lb.total;
    sum.ce += lb.ce;
    sum.img += lb.img;
    sum.set += lb.set;
  }
  return sum;
}

/// total_loss plus analytic gradients of every model tensor.
inline LossBreakdown loss_and_gradients(const DisentangleModel& m,
                                        const TrainingBatch& batch,
                                        ModelGradients& grads) {
  detail::validate_batch(batch);
  grads = zeros_like(m);
  const double scale = 1.0 / double(batch.instances.size());
  LossBreakdown sum;
  for (std::size_t b = 0; b < batch.instances.size(); ++b) {
    const LossBreakdown lb = detail::instance_loss(
        m, batch.instances[b], batch.pairings[b], scale, &grads);
    sum.total += lb.total;
    sum.ce += lb.ce;
    sum.img += lb.img;
    sum.set += lb.set;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 1;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double smoothing = 0.99;  // squared-gradient running-average factor
  double epsilon = 1e-8;
  int instance_size = 15;  // n_t faces sampled per training instance
  std::uint64_t seed = 42;
};

/// RMSprop with momentum:
///   sq  <- smoothing * sq + (1 - smoothing) * g^2
///   buf <- momentum * buf + g / (sqrt(sq) + eps)
///   p   <- p - lr * buf
class RmsProp {
 public:
  RmsProp(double lr, double momentum, double smoothing, double epsilon)
      : lr_(lr), momentum_(momentum), smoothing_(smoothing), eps_(epsilon) {}

  void step(const std::vector<TensorView>& params,
            const std::vector<TensorView>& grads) {
    if (square_avg_.empty()) {
      for (const TensorView& p : params) {
        square_avg_.emplace_back(Eigen::VectorXd::Zero(p.size()));
        momentum_buf_.emplace_back(Eigen::VectorXd::Zero(p.size()));
      }
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t].flat();
      const auto g = grads[t].flat();
      square_avg_[t] = smoothing_ * square_avg_[t] +
                       (1.0 - smoothing_) * g.cwiseProduct(g);
      const Eigen::VectorXd denom =
          square_avg_[t].cwiseSqrt().array() + eps_;
      momentum_buf_[t] = momentum_ * momentum_buf_[t] +
                         g.cwiseQuotient(denom);
      p -= lr_ * momentum_buf_[t];
    }
  }

 private:
  double lr_, momentum_, smoothing_, eps_;
  std::vector<Eigen::VectorXd> square_avg_;
  std::vector<Eigen::VectorXd> momentum_buf_;
};

struct LossTraceRow {
  int epoch = 0;
  int step = 0;
  double total = 0.0;
  double ce = 0.0;
  double img = 0.0;
  double set = 0.0;
};

struct TrainResult {
  std::vector<LossTraceRow> trace;       // one row per optimizer step
  std::vector<double> epoch_mean_loss;   // mean total per epoch
};

namespace detail {

struct IdentityPool {
  std::int64_t label = 0;          // original identity
  std::vector<const FeatureSet*> sets;
  std::vector<std::pair<std::size_t, Eigen::Index>> rows;  // (set idx, row)
};

inline std::vector<IdentityPool> pool_by_identity(
    const std::vector<FeatureSet>& dataset) {
  std::map<std::int64_t, IdentityPool> pools;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    IdentityPool& pool = pools[dataset[s].identity];
    pool.label = dataset[s].identity;
    pool.sets.push_back(&dataset[s]);
    for (Eigen::Index r = 0; r < dataset[s].size(); ++r)
      pool.rows.emplace_back(s, r);
  }
  std::vector<IdentityPool> out;
  out.reserve(pools.size());
  for (auto& [label, pool] : pools) out.push_back(std::move(pool));
  return out;
}

}  // namespace detail

/// Each epoch samples one training instance per identity (n_t rows drawn
/// from that identity's pooled elements, with replacement when the pool is
/// smaller) and walks the identities in a seeded shuffled order, grouped
/// into batches. Deterministic for a fixed seed.
inline TrainResult train(DisentangleModel& model,
                         const std::vector<FeatureSet>& dataset,
                         const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.instance_size < 1)
    throw ParameterError("train: invalid config");
  const std::vector<detail::IdentityPool> pools =
      detail::pool_by_identity(dataset);
  if (pools.empty()) throw ValidationError("train: empty dataset");
  if (static_cast<Eigen::Index>(pools.size()) != model.dims.c)
    throw ValidationError("train: dataset has " +
                          std::to_string(pools.size()) +
                          " identities but model expects " +
                          std::to_string(model.dims.c));

  Rng rng(cfg.seed);
  RmsProp opt(cfg.learning_rate, cfg.momentum, cfg.smoothing, cfg.epsilon);
  const auto params = parameter_views(model);
  TrainResult result;
  int step = 0;

  const auto n_t = static_cast<std::size_t>(cfg.instance_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = rng.permutation(pools.size());
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<FeatureSet> instances;
      instances.reserve(stop - start);
      for (std::size_t pos = start; pos < stop; ++pos) {
        const detail::IdentityPool& pool = pools[order[pos]];
        Matrix rows(n_t, model.dims.d);
        if (pool.rows.size() >= n_t) {
          std::vector<std::size_t> pick = rng.permutation(pool.rows.size());
          for (std::size_t r = 0; r < n_t; ++r) {
            const auto& [si, ri] = pool.rows[pick[r]];
            rows.row(static_cast<Eigen::Index>(r)) =
                dataset[si].features.row(ri);
          }
        } else {
          for (std::size_t r = 0; r < n_t; ++r) {
            const auto& [si, ri] =
                pool.rows[static_cast<std::size_t>(rng.uniform_int(
                    0, static_cast<std::int64_t>(pool.rows.size()) - 1))];
            rows.row(static_cast<Eigen::Index>(r)) =
                dataset[si].features.row(ri);
          }
        }
        instances.emplace_back(std::move(rows),
                               static_cast<std::int64_t>(order[pos]),
                               "train/id" + std::to_string(pool.label));
      }
      TrainingBatch batch = make_batch(std::move(instances), rng);
      ModelGradients grads;
      const LossBreakdown lb = loss_and_gradients(model, batch, grads);
      if (!std::isfinite(lb.total)) {
        const char* term = !std::isfinite(lb.ce)    ? "L_CE"
                           : !std::isfinite(lb.img) ? "L_recons_img"
                                                    : "L_recons_set";
        throw NumericError("train: non-finite loss at step " +
                           std::to_string(step) + " (" + term + ")");
      }
      opt.step(params, gradient_views(grads));
      for (const TensorView& p : params)
        if (!p.flat().allFinite())
          throw NumericError("train: non-finite parameter '" + p.name +
                             "' after step " + std::to_string(step));
      result.trace.push_back(
          {epoch, step, lb.total, lb.ce, lb.img, lb.set});
      epoch_loss += lb.total;
      ++epoch_steps;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_loss /
                                     std::max(epoch_steps, 1));
  }
  return result;
}

}  // namespace setagg
