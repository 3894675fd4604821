#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "gluenet/error.hpp"
#include "gluenet/model.hpp"
#include "gluenet/ops.hpp"
#include "gluenet/tensor.hpp"

namespace gluenet {

/// Coefficients of the alignment, adversarial and reconstruction terms.
/// Zeroing a coefficient removes that term (loss ablation).
struct LossWeights {
  double mse = 1.0;
  double adv = 0.0;
  double rec = 1.0;

  static LossWeights with_adversarial() { return {1.0, 0.05, 1.0}; }

  void validate() const {
    require(mse >= 0 && adv >= 0 && rec >= 0, ErrorKind::kConfig,
            "loss weights must be nonnegative");
    require(mse > 0 || adv > 0 || rec > 0, ErrorKind::kConfig,
            "at least one loss weight must be positive");
  }
};

/// One row of the training log.
struct LossReport {
  double mse = 0, adv_d = 0, adv_g = 0, rec = 0, total = 0;
};

inline double total_objective(const LossWeights& w, const LossReport& parts) {
  return w.mse * parts.mse + w.adv * parts.adv_g + w.rec * parts.rec;
}

/// Differentiable counterpart of total_objective over loss tensors.
template <typename T>
Tensor<T> total_objective(Tape<T>& tape, const LossWeights& w, const Tensor<T>& mse,
                          const Tensor<T>& adv_g, const Tensor<T>& rec) {
  Tensor<T> total = ops::scale(tape, mse, static_cast<T>(w.mse));
  total = ops::add(tape, total, ops::scale(tape, adv_g, static_cast<T>(w.adv)));
  return ops::add(tape, total, ops::scale(tape, rec, static_cast<T>(w.rec)));
}

namespace detail {

// Squared error averaged over channels: [.., L, C] -> [.., L].
template <typename T>
Tensor<T> per_token_sq_error(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape() == target.shape(), ErrorKind::kDimension,
          "loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  require(pred.rank() >= 2, ErrorKind::kDimension, "loss: expected token sequences");
  Tensor<T> d = ops::sub(tape, pred, target);
  return ops::mean_axis(tape, ops::mul(tape, d, d), pred.rank() - 1);
}

}  // namespace detail

/// Mean squared error over all elements. Computed as a mean of per-token
/// means so that reweighting with unit weights reproduces it bit-for-bit.
template <typename T>
Tensor<T> mse_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  return ops::mean(tape, detail::per_token_sq_error(tape, pred, target));
}

/// Rescales weights to mean 1 over all L entries.
template <typename T>
std::vector<T> normalize_token_weights(std::span<const T> w) {
  const T total = std::accumulate(w.begin(), w.end(), T(0));
  require(!w.empty() && total > T(0), ErrorKind::kDegenerateWeights,
          "token weights are all zero");
  const T s = static_cast<T>(w.size()) / total;
  std::vector<T> out(w.begin(), w.end());
  for (T& v : out) v *= s;
  return out;
}

/// Token-weighted MSE: mean over tokens of w[j] * (MSE at token j), with w
/// mean-normalized first.
template <typename T>
Tensor<T> reweighted_mse_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                              std::span<const T> weights) {
  const std::size_t l = pred.dim(pred.rank() - 2);
  require(weights.size() == l, ErrorKind::kDimension,
          "token weight vector has " + std::to_string(weights.size()) +
              " entries for " + std::to_string(l) + " tokens");
  const auto w = normalize_token_weights<T>(weights);
  Tensor<T> per_token = detail::per_token_sq_error(tape, pred, target);
  std::vector<T> tiled(per_token.numel());
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = w[i % l];
  Tensor<T> wt(per_token.shape(), std::move(tiled));
  return ops::mean(tape, ops::mul(tape, per_token, wt));
}

/// w[j] = mean over the batch of ||s_j - s_{L-1}||_2. Each record is an
/// L x C row-major block.
template <typename T>
std::vector<T> token_weights(std::span<const T> records, std::size_t count, std::size_t tokens,
                             std::size_t dim) {
  require(count > 0, ErrorKind::kEmptyBatch, "token_weights: empty batch");
  require(records.size() == count * tokens * dim, ErrorKind::kDimension,
          "token_weights: record buffer does not match count x L x C");
  std::vector<double> acc(tokens, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    const T* rec = records.data() + r * tokens * dim;
    const T* last = rec + (tokens - 1) * dim;
    for (std::size_t j = 0; j + 1 < tokens; ++j) {
      double ss = 0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = static_cast<double>(rec[j * dim + c]) - last[c];
        ss += d * d;
      }
      acc[j] += std::sqrt(ss);
    }
  }
  std::vector<T> w(tokens);
  for (std::size_t j = 0; j < tokens; ++j) w[j] = static_cast<T>(acc[j] / static_cast<double>(count));
  w[tokens - 1] = T(0);
  return w;
}

template <typename T>
struct AdversarialLosses {
  Tensor<T> loss_d;
  Tensor<T> loss_g;
};

inline constexpr double kLogitClamp = 30.0;

namespace detail {

template <typename T>
Tensor<T> clamped_logits(Tape<T>& tape, const Discriminator<T>& d, const Tensor<T>& x) {
  require(x.rank() == 3 && x.dim(0) > 0, ErrorKind::kEmptyBatch,
          "adversarial loss: batches must be nonempty [B,L,C]");
  const T lim = static_cast<T>(kLogitClamp);
  return ops::clamp(tape, d.forward(tape, x), -lim, lim);
}

}  // namespace detail

/// -E[log sigmoid(D(real))] - E[log(1 - sigmoid(D(fake)))], with fake
/// detached so no gradient reaches the encoder.
template <typename T>
Tensor<T> discriminator_loss(Tape<T>& tape, const Discriminator<T>& d, const Tensor<T>& real,
                             const Tensor<T>& fake) {
  // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
  Tensor<T> real_logits = detail::clamped_logits(tape, d, real);
  Tensor<T> fake_logits = detail::clamped_logits(tape, d, fake.detach());
  return ops::add(tape, ops::mean(tape, ops::softplus(tape, ops::scale(tape, real_logits, T(-1)))),
                  ops::mean(tape, ops::softplus(tape, fake_logits)));
}

/// Non-saturating generator loss -E[log sigmoid(D(fake))].
template <typename T>
Tensor<T> generator_loss(Tape<T>& tape, const Discriminator<T>& d, const Tensor<T>& fake) {
  Tensor<T> logits = detail::clamped_logits(tape, d, fake);
  return ops::mean(tape, ops::softplus(tape, ops::scale(tape, logits, T(-1))));
}

template <typename T>
AdversarialLosses<T> adversarial_losses(Tape<T>& tape, const Discriminator<T>& d,
                                        const Tensor<T>& real, const Tensor<T>& fake) {
  return {discriminator_loss(tape, d, real, fake), generator_loss(tape, d, fake)};
}

/// MSE between the decoder's reconstruction of `encoded` and the source
/// embedding it came from.
template <typename T>
Tensor<T> reconstruction_loss(Tape<T>& tape, const GlueNetDecoder<T>& dec,
                              const Tensor<T>& encoded, const Tensor<T>& original_source) {
  return mse_loss(tape, dec.forward(tape, encoded), original_source);
}

}  // namespace gluenet
