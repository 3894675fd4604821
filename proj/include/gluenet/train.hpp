#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gluenet/config.hpp"
#include "gluenet/data.hpp"
#include "gluenet/error.hpp"
#include "gluenet/model.hpp"
#include "gluenet/objectives.hpp"
#include "gluenet/optim.hpp"

namespace gluenet {

struct TrainConfig {
  double lr = 1e-4;
  double lr_disc = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t steps = 1000;
  std::uint64_t batch_size = 32;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  bool reweight = false;
  std::string weights_from;  // empty: token weights come from the target store

  void validate() const {
    require(lr > 0 && lr_disc > 0, ErrorKind::kConfig, "learning rates must be positive");
    require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::kConfig,
            "betas must lie in [0, 1)");
    require(eps > 0 && weight_decay >= 0, ErrorKind::kConfig, "eps must be > 0, weight_decay >= 0");
    loss_weights.validate();
  }

  AdamWHyper generator_hyper() const { return {lr, beta1, beta2, eps, weight_decay}; }
  AdamWHyper discriminator_hyper() const { return {lr_disc, beta1, beta2, eps, weight_decay}; }

  std::string to_text() const {
    std::ostringstream os;
    os << "lr = " << format_double(lr) << '\n'
       << "lr_disc = " << format_double(lr_disc) << '\n'
       << "beta1 = " << format_double(beta1) << '\n'
       << "beta2 = " << format_double(beta2) << '\n'
       << "eps = " << format_double(eps) << '\n'
       << "weight_decay = " << format_double(weight_decay) << '\n'
       << "steps = " << steps << '\n'
       << "batch_size = " << batch_size << '\n'
       << "lambda_mse = " << format_double(loss_weights.mse) << '\n'
       << "lambda_adv = " << format_double(loss_weights.adv) << '\n'
       << "lambda_rec = " << format_double(loss_weights.rec) << '\n'
       << "seed = " << seed << '\n'
       << "checkpoint_every = " << checkpoint_every << '\n'
       << "reweight = " << (reweight ? "true" : "false") << '\n'
       << "weights_from = " << weights_from << '\n';
    return os.str();
  }

  static TrainConfig from_key_values(const KeyValues& kv, std::string_view prefix = "") {
    TrainConfig c;
    for (const auto& [full_key, v] : kv) {
      if (!full_key.starts_with(prefix)) continue;
      const std::string k = full_key.substr(prefix.size());
      if (k == "lr") c.lr = parse_double(k, v);
      else if (k == "lr_disc") c.lr_disc = parse_double(k, v);
      else if (k == "beta1") c.beta1 = parse_double(k, v);
      else if (k == "beta2") c.beta2 = parse_double(k, v);
      else if (k == "eps") c.eps = parse_double(k, v);
      else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
      else if (k == "steps") c.steps = parse_uint(k, v);
      else if (k == "batch_size") c.batch_size = parse_uint(k, v);
      else if (k == "lambda_mse") c.loss_weights.mse = parse_double(k, v);
      else if (k == "lambda_adv") c.loss_weights.adv = parse_double(k, v);
      else if (k == "lambda_rec") c.loss_weights.rec = parse_double(k, v);
      else if (k == "seed") c.seed = parse_uint(k, v);
      else if (k == "checkpoint_every") c.checkpoint_every = parse_uint(k, v);
      else if (k == "reweight") c.reweight = parse_bool(k, v);
      else if (k == "weights_from") c.weights_from = v;
      else if (prefix.empty()) fail(ErrorKind::kConfig, "unknown train key '" + k + "'");
    }
    c.validate();
    return c;
  }
};

inline constexpr const char* kLossCsvHeader = "step,mse,adv_d,adv_g,rec,total";

inline void write_loss_row(std::ostream& os, std::uint64_t step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<unsigned long long>(step), r.mse, r.adv_d, r.adv_g, r.rec, r.total);
  os << buf << '\n';
}

/// End-to-end alignment training: encoder M and decoder N share one AdamW
/// state; the discriminator D has its own and is updated first each step
/// when the adversarial weight is positive.
template <typename T = float>
class Trainer {
 public:
  Trainer(const GlueNetConfig& gcfg, const TrainConfig& tcfg, ParallelCorpus corpus)
      : gcfg_(gcfg),
        tcfg_(tcfg),
        corpus_(std::move(corpus)),
        init_rng_(tcfg.seed),
        encoder_(gcfg, init_rng_),
        decoder_(gcfg.mirror(), init_rng_),
        disc_(gcfg, init_rng_),
        batches_(corpus_.size(), tcfg.batch_size, tcfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    tcfg_.validate();
    const auto& s = corpus_.source;
    const auto& t = corpus_.target;
    require(s.tokens == gcfg.token_in && s.dim == gcfg.dim_in, ErrorKind::kDimension,
            "source store is " + std::to_string(s.tokens) + "x" + std::to_string(s.dim) +
                ", config expects " + std::to_string(gcfg.token_in) + "x" + std::to_string(gcfg.dim_in));
    require(t.tokens == gcfg.token_out && t.dim == gcfg.dim_out, ErrorKind::kDimension,
            "target store is " + std::to_string(t.tokens) + "x" + std::to_string(t.dim) +
                ", config expects " + std::to_string(gcfg.token_out) + "x" +
                std::to_string(gcfg.dim_out));
    require(s.count == t.count, ErrorKind::kCountMismatch, "corpus halves differ in count");
  }

  /// Freezes the per-token weights used when reweighting is on.
  void set_token_weights(std::vector<T> w) {
    require(w.size() == gcfg_.token_out, ErrorKind::kDimension,
            "token weight vector length differs from token_out");
    normalize_token_weights<T>(w);  // rejects degenerate vectors up front
    token_weights_ = std::move(w);
  }
  const std::optional<std::vector<T>>& token_weights() const { return token_weights_; }

  /// One optimizer step; returns the step's losses.
  LossReport step() {
    const auto idx = batches_.next();
    const Tensor<T> src = corpus_.source.gather<T>(idx);
    const Tensor<T> tgt = corpus_.target.gather<T>(idx);
    const LossWeights& w = tcfg_.loss_weights;
    LossReport rep;

    if (w.adv > 0) {
      // D-step: the fake batch is produced without recording, so the
      // encoder and decoder receive no gradient here.
      const Tensor<T> fake = encoder_.forward(src);
      Tape<T> tape;
      Tensor<T> loss_d = discriminator_loss(tape, disc_, tgt, fake);
      rep.adv_d = static_cast<double>(loss_d.item());
      guard_finite(rep.adv_d, "adv_d");
      tape.backward(loss_d);
      adamw_step(disc_.params(), disc_state_, tcfg_.discriminator_hyper());
    }

    Tape<T> tape;
    Tensor<T> fake = encoder_.forward(tape, src);
    Tensor<T> mse = tcfg_.reweight ? reweighted_mse_loss<T>(tape, fake, tgt, require_weights())
                                   : mse_loss(tape, fake, tgt);
    Tensor<T> rec = reconstruction_loss(tape, decoder_, fake, src);
    Tensor<T> adv_g = w.adv > 0 ? generator_loss(tape, disc_, fake) : Tensor<T>::scalar(T(0));
    Tensor<T> total = total_objective(tape, w, mse, adv_g, rec);
    rep.mse = static_cast<double>(mse.item());
    rep.rec = static_cast<double>(rec.item());
    rep.adv_g = static_cast<double>(adv_g.item());
    rep.total = static_cast<double>(total.item());
    guard_finite(rep.total, "total");
    tape.backward(total);
    disc_.params().zero_grad();
    adamw_step<T>({ParamGroup<T>{"enc.", &encoder_.params()}, ParamGroup<T>{"dec.", &decoder_.params()}},
                  gen_state_, tcfg_.generator_hyper());
    ++step_;
    last_report_ = rep;
    return rep;
  }

  /// Runs until `total_steps` optimizer steps have been taken, invoking
  /// on_step after each one.
  void run_until(std::uint64_t total_steps,
                 const std::function<void(std::uint64_t, const LossReport&)>& on_step = {}) {
    while (step_ < total_steps) {
      const LossReport r = step();
      if (on_step) on_step(step_, r);
    }
  }

  std::uint64_t step_count() const { return step_; }
  const LossReport& last_report() const { return last_report_; }

  const GlueNetConfig& gluenet_config() const { return gcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  TrainConfig& train_config() { return tcfg_; }
  const ParallelCorpus& corpus() const { return corpus_; }

  GlueNetEncoder<T>& encoder() { return encoder_; }
  GlueNetDecoder<T>& decoder() { return decoder_; }
  Discriminator<T>& discriminator() { return disc_; }
  const GlueNetEncoder<T>& encoder() const { return encoder_; }
  const GlueNetDecoder<T>& decoder() const { return decoder_; }
  const Discriminator<T>& discriminator() const { return disc_; }

  AdamWState<T>& generator_state() { return gen_state_; }
  AdamWState<T>& discriminator_state() { return disc_state_; }
  const AdamWState<T>& generator_state() const { return gen_state_; }
  const AdamWState<T>& discriminator_state() const { return disc_state_; }

  BatchIterator& batches() { return batches_; }
  const BatchIterator& batches() const { return batches_; }
  void set_step_count(std::uint64_t s) { step_ = s; }

 private:
  std::span<const T> require_weights() const {
    require(token_weights_.has_value(), ErrorKind::kConfig,
            "reweighting enabled but no token weights were set");
    return *token_weights_;
  }

  void guard_finite(double v, const char* what) const {
    if (std::isfinite(v)) return;
    std::ostringstream os;
    os << "non-finite " << what << " loss at step " << (step_ + 1) << "; last finite report: mse="
       << last_report_.mse << " adv_d=" << last_report_.adv_d << " adv_g=" << last_report_.adv_g
       << " rec=" << last_report_.rec << " total=" << last_report_.total;
    fail(ErrorKind::kNumeric, os.str());
  }

  GlueNetConfig gcfg_;
  TrainConfig tcfg_;
  ParallelCorpus corpus_;
  std::mt19937_64 init_rng_;
  GlueNetEncoder<T> encoder_;
  GlueNetDecoder<T> decoder_;
  Discriminator<T> disc_;
  BatchIterator batches_;
  AdamWState<T> gen_state_;
  AdamWState<T> disc_state_;
  std::optional<std::vector<T>> token_weights_;
  std::uint64_t step_ = 0;
  LossReport last_report_;
};

/// Trains a fresh decoder against a frozen encoder on the reconstruction
/// loss alone (the decoupled alternative to joint training).
template <typename T>
GlueNetDecoder<T> fit_decoder_posthoc(const GlueNetEncoder<T>& encoder, const ParallelCorpus& corpus,
                                      const TrainConfig& tcfg, std::uint64_t steps) {
  std::mt19937_64 rng(tcfg.seed ^ 0xd1b54a32d192ed03ULL);
  GlueNetDecoder<T> decoder(encoder.config().mirror(), rng);
  BatchIterator batches(corpus.size(), tcfg.batch_size, tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamWState<T> state;
  for (std::uint64_t s = 0; s < steps; ++s) {
    const auto idx = batches.next();
    const Tensor<T> src = corpus.source.gather<T>(idx);
    const Tensor<T> encoded = encoder.forward(src);
    Tape<T> tape;
    Tensor<T> rec = reconstruction_loss(tape, decoder, encoded, src);
    require(std::isfinite(static_cast<double>(rec.item())), ErrorKind::kNumeric,
            "non-finite reconstruction loss at decoder step " + std::to_string(s + 1));
    tape.backward(rec);
    adamw_step(decoder.params(), state, tcfg.generator_hyper());
  }
  return decoder;
}

/// Record-wise forward of the encoder over a whole store; ids are kept.
template <typename T>
EmbeddingStore translate(const GlueNetEncoder<T>& encoder, const EmbeddingStore& store,
                         std::size_t chunk = 64) {
  const auto& cfg = encoder.config();
  require(store.tokens == cfg.token_in && store.dim == cfg.dim_in, ErrorKind::kDimension,
          "store shape " + std::to_string(store.tokens) + "x" + std::to_string(store.dim) +
              " does not match encoder input " + std::to_string(cfg.token_in) + "x" +
              std::to_string(cfg.dim_in));
  EmbeddingStore out{store.count, cfg.token_out, cfg.dim_out, {}, store.ids};
  out.records.reserve(store.count * cfg.token_out * cfg.dim_out);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < store.count; begin += chunk) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(store.count, begin + chunk); ++i) idx.push_back(i);
    const Tensor<T> y = encoder.forward(store.gather<T>(idx));
    for (T v : y.data()) out.records.push_back(static_cast<float>(v));
  }
  return out;
}

struct LoopStability {
  double e1 = 0;  // mean squared error between N(M(x)) and x
  double e2 = 0;  // mean squared error between N(M(N(M(x)))) and N(M(x))
};

/// Closed-loop check: x_hat = N(M(x)), x_hat2 = N(M(x_hat)).
template <typename T>
LoopStability loop_stability_eval(const GlueNetEncoder<T>& encoder, const GlueNetDecoder<T>& decoder,
                                  const EmbeddingStore& store, std::size_t chunk = 64) {
  const auto& cfg = encoder.config();
  require(decoder.config() == cfg.mirror(), ErrorKind::kDimension,
          "decoder is not the mirror of the encoder");
  require(store.tokens == cfg.token_in && store.dim == cfg.dim_in, ErrorKind::kDimension,
          "store shape does not match encoder input");
  require(store.count > 0, ErrorKind::kEmptyBatch, "loop_stability_eval: empty store");
  double s1 = 0, s2 = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < store.count; begin += chunk) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(store.count, begin + chunk); ++i) idx.push_back(i);
    const Tensor<T> x = store.gather<T>(idx);
    const Tensor<T> x1 = decoder.forward(encoder.forward(x));
    const Tensor<T> x2 = decoder.forward(encoder.forward(x1));
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double d1 = static_cast<double>(x1[i]) - static_cast<double>(x[i]);
      const double d2 = static_cast<double>(x2[i]) - static_cast<double>(x1[i]);
      s1 += d1 * d1;
      s2 += d2 * d2;
    }
  }
  const double n = static_cast<double>(store.count * store.record_size());
  return {s1 / n, s2 / n};
}

/// Mean squared error between the encoder's output and a target store.
template <typename T>
double aligned_mse(const GlueNetEncoder<T>& encoder, const EmbeddingStore& source,
                   const EmbeddingStore& target) {
  const EmbeddingStore out = translate(encoder, source);
  require(out.records.size() == target.records.size(), ErrorKind::kDimension,
          "aligned_mse: target store shape differs from encoder output");
  double s = 0;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const double d = static_cast<double>(out.records[i]) - target.records[i];
    s += d * d;
  }
  return s / static_cast<double>(out.records.size());
}

}  // namespace gluenet
