#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gluenet/autograd.hpp"
#include "gluenet/config.hpp"
#include "gluenet/error.hpp"
#include "gluenet/ops.hpp"
#include "gluenet/tensor.hpp"

namespace gluenet {

/// One named parameter slot in a model's layout.
struct ParamSlot {
  std::string name;
  Shape shape;
};

/// Extents of a three-layer MLP: in -> hidden -> hidden -> out.
struct MlpSpec {
  std::size_t in = 0, hidden = 0, out = 0;
  bool layer_norm = true;
};

inline void append_mlp_layout(std::vector<ParamSlot>& out, const std::string& prefix,
                              const MlpSpec& s) {
  const std::size_t widths[4] = {s.in, s.hidden, s.hidden, s.out};
  for (int layer = 0; layer < 3; ++layer) {
    const std::string n = std::to_string(layer + 1);
    out.push_back({prefix + ".w" + n, Shape{widths[layer], widths[layer + 1]}});
    out.push_back({prefix + ".b" + n, Shape{widths[layer + 1]}});
    if (s.layer_norm) {
      out.push_back({prefix + ".ln" + n + ".gamma", Shape{widths[layer + 1]}});
      out.push_back({prefix + ".ln" + n + ".beta", Shape{widths[layer + 1]}});
    }
  }
}

/// Applies Linear-LN-GELU, Linear-LN-GELU, Linear-LN to every row of a
/// rank-2 input. LN layers are skipped when the spec disables them.
template <typename T>
Tensor<T> mlp_forward(Tape<T>& tape, const ParameterStore<T>& params,
                      const std::string& prefix, const MlpSpec& spec,
                      const Tensor<T>& rows) {
  Tensor<T> h = rows;
  for (int layer = 0; layer < 3; ++layer) {
    const std::string n = std::to_string(layer + 1);
    h = ops::matmul(tape, h, params.at(prefix + ".w" + n));
    h = ops::add_bias(tape, h, params.at(prefix + ".b" + n));
    if (spec.layer_norm) {
      h = ops::layer_norm(tape, h, params.at(prefix + ".ln" + n + ".gamma"),
                          params.at(prefix + ".ln" + n + ".beta"));
    }
    if (layer < 2) h = ops::gelu(tape, h);
  }
  return h;
}

/// Mixer block: a token-axis MLP applied to each channel column, then a
/// channel-axis MLP applied to each token row.
struct MixerBlockSpec {
  std::string prefix;
  std::size_t tokens_in = 0, tokens_out = 0, dim_in = 0, dim_out = 0;
  std::size_t token_hidden = 0, dim_hidden = 0;
  bool layer_norm = true;
  bool residual = false;

  MlpSpec token_mlp() const { return {tokens_in, token_hidden, tokens_out, layer_norm}; }
  MlpSpec channel_mlp() const { return {dim_in, dim_hidden, dim_out, layer_norm}; }

  void validate() const {
    if (residual) {
      require(tokens_in == tokens_out && dim_in == dim_out, ErrorKind::kConfig,
              prefix + ": residual block requires matching input/output extents");
    }
  }

  void append_layout(std::vector<ParamSlot>& out) const {
    append_mlp_layout(out, prefix + ".token_mlp", token_mlp());
    append_mlp_layout(out, prefix + ".channel_mlp", channel_mlp());
  }
};

/// Runs one mixer block on a [B, L, C] batch (or a single [L, C] sequence).
template <typename T>
Tensor<T> mixer_block(Tape<T>& tape, const ParameterStore<T>& params,
                      const MixerBlockSpec& spec, const Tensor<T>& x) {
  spec.validate();
  const bool single = x.rank() == 2;
  require(x.rank() == 2 || x.rank() == 3, ErrorKind::kDimension,
          spec.prefix + ": expected [L,C] or [B,L,C] input");
  const std::size_t batch = single ? 1 : x.dim(0);
  const std::size_t l = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  require(l == spec.tokens_in && c == spec.dim_in, ErrorKind::kDimension,
          spec.prefix + ": input " + x.shape().str() + " does not match block " +
              std::to_string(spec.tokens_in) + "x" + std::to_string(spec.dim_in));
  const std::size_t lo = spec.tokens_out, co = spec.dim_out;

  Tensor<T> x3 = single ? ops::reshape(tape, x, Shape{1, l, c}) : x;

  // Token mixing: columns of each sequence become rows of length L.
  Tensor<T> cols = ops::transpose(tape, x3);
  cols = ops::reshape(tape, cols, Shape{batch * c, l});
  Tensor<T> mixed = mlp_forward(tape, params, spec.prefix + ".token_mlp", spec.token_mlp(), cols);
  mixed = ops::reshape(tape, mixed, Shape{batch, c, lo});
  Tensor<T> u = ops::transpose(tape, mixed);
  if (spec.residual) u = ops::add(tape, x3, u);

  // Channel mixing on every token row.
  Tensor<T> rows = ops::reshape(tape, u, Shape{batch * lo, c});
  Tensor<T> out = mlp_forward(tape, params, spec.prefix + ".channel_mlp", spec.channel_mlp(), rows);
  out = ops::reshape(tape, out, Shape{batch, lo, co});
  if (spec.residual) out = ops::add(tape, u, out);

  return single ? ops::reshape(tape, out, Shape{lo, co}) : out;
}

/// Initializes a parameter according to its role: Linear weights uniform in
/// +-sqrt(1/fan_in), biases and LN shifts zero, LN scales one.
template <typename T>
Tensor<T> init_param(const ParamSlot& slot, std::mt19937_64& rng) {
  const auto leaf = slot.name.substr(slot.name.rfind('.') + 1);
  if (leaf.starts_with('w') && slot.shape.rank() == 2) {
    const double bound = std::sqrt(1.0 / static_cast<double>(slot.shape[0]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(slot.shape.numel());
    for (auto& e : v) e = static_cast<T>(dist(rng));
    return Tensor<T>(slot.shape, std::move(v));
  }
  if (leaf == "gamma") return Tensor<T>::filled(slot.shape, T(1));
  return Tensor<T>::zeros(slot.shape);
}

template <typename T>
ParameterStore<T> build_store(const std::vector<ParamSlot>& layout, std::mt19937_64& rng) {
  ParameterStore<T> store;
  for (const auto& slot : layout) store.add(slot.name, init_param<T>(slot, rng));
  return store;
}

/// Checks that a store holds exactly the slots of a layout.
template <typename T>
void check_store(const ParameterStore<T>& store, const std::vector<ParamSlot>& layout,
                 const std::string& what) {
  require(store.size() == layout.size(), ErrorKind::kConfig,
          what + ": expected " + std::to_string(layout.size()) + " parameters, got " +
              std::to_string(store.size()));
  for (const auto& slot : layout) {
    require(store.contains(slot.name), ErrorKind::kConfig,
            what + ": missing parameter " + slot.name);
    require(store.at(slot.name).shape() == slot.shape, ErrorKind::kConfig,
            what + ": parameter " + slot.name + " has shape " +
                store.at(slot.name).shape().str() + ", expected " + slot.shape.str());
  }
}

/// Block sequence of a translator: head (head_repeats conversion blocks,
/// token/channel conversion in the first), body (num_rms residual modules),
/// tail (one residual block, layer norms optional).
inline std::vector<MixerBlockSpec> gluenet_blocks(const GlueNetConfig& cfg) {
  cfg.validate();
  std::vector<MixerBlockSpec> blocks;
  const auto th = cfg.token_hidden(), dh = cfg.dim_hidden();
  for (std::size_t i = 0; i < cfg.head_repeats; ++i) {
    MixerBlockSpec b;
    b.prefix = "head.b" + std::to_string(i);
    b.tokens_in = i == 0 ? cfg.token_in : cfg.token_out;
    b.dim_in = i == 0 ? cfg.dim_in : cfg.dim_out;
    b.tokens_out = cfg.token_out;
    b.dim_out = cfg.dim_out;
    b.token_hidden = th;
    b.dim_hidden = dh;
    b.layer_norm = true;
    // Conversion blocks cannot carry a skip path; a head block that keeps
    // the shape does, otherwise its output norms would erase row scale.
    b.residual = b.tokens_in == b.tokens_out && b.dim_in == b.dim_out;
    blocks.push_back(b);
  }
  for (std::size_t i = 0; i < cfg.num_rms + 1; ++i) {
    const bool tail = i == cfg.num_rms;
    MixerBlockSpec b;
    b.prefix = tail ? std::string("tail") : "body.rm" + std::to_string(i);
    b.tokens_in = b.tokens_out = cfg.token_out;
    b.dim_in = b.dim_out = cfg.dim_out;
    b.token_hidden = th;
    b.dim_hidden = dh;
    b.layer_norm = tail ? cfg.tail_layer_norm : true;
    b.residual = true;
    blocks.push_back(b);
  }
  return blocks;
}

inline std::vector<ParamSlot> gluenet_layout(const GlueNetConfig& cfg) {
  std::vector<ParamSlot> layout;
  for (const auto& b : gluenet_blocks(cfg)) b.append_layout(layout);
  return layout;
}

/// Closed-form number of scalars in a translator built from cfg.
inline std::size_t param_count(const GlueNetConfig& cfg) {
  cfg.validate();
  auto mlp = [](std::size_t in, std::size_t hid, std::size_t out, bool ln) {
    std::size_t n = in * hid + hid + hid * hid + hid + hid * out + out;
    if (ln) n += 2 * (hid + hid + out);
    return n;
  };
  const auto th = cfg.token_hidden(), dh = cfg.dim_hidden();
  auto block = [&](std::size_t li, std::size_t ci, bool ln) {
    return mlp(li, th, cfg.token_out, ln) + mlp(ci, dh, cfg.dim_out, ln);
  };
  const std::size_t square = block(cfg.token_out, cfg.dim_out, true);
  return block(cfg.token_in, cfg.dim_in, true) + (cfg.head_repeats - 1) * square +
         cfg.num_rms * square + block(cfg.token_out, cfg.dim_out, cfg.tail_layer_norm);
}

/// The translator network. Used as encoder M (source -> target space) and,
/// built from the mirrored config, as decoder N.
template <typename T>
class GlueNet {
 public:
  GlueNet(const GlueNetConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), blocks_(gluenet_blocks(cfg)), params_(build_store<T>(gluenet_layout(cfg), rng)) {}

  GlueNet(const GlueNetConfig& cfg, ParameterStore<T> params)
      : cfg_(cfg), blocks_(gluenet_blocks(cfg)), params_(std::move(params)) {
    check_store(params_, gluenet_layout(cfg), "translator");
  }

  const GlueNetConfig& config() const { return cfg_; }
  const std::vector<MixerBlockSpec>& blocks() const { return blocks_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// [L_in, C_in] or [B, L_in, C_in] -> matching [.., L_out, C_out].
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    require(x.rank() >= 2 && x.dim(x.rank() - 2) == cfg_.token_in &&
                x.dim(x.rank() - 1) == cfg_.dim_in,
            ErrorKind::kDimension,
            "translator input " + x.shape().str() + " does not match " +
                std::to_string(cfg_.token_in) + "x" + std::to_string(cfg_.dim_in));
    Tensor<T> h = x;
    for (const auto& b : blocks_) h = mixer_block(tape, params_, b, h);
    return h;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto tape = Tape<T>::disabled();
    return forward(tape, x);
  }

  template <typename U>
  GlueNet<U> cast() const {
    return GlueNet<U>(cfg_, params_.template cast<U>());
  }

 private:
  GlueNetConfig cfg_;
  std::vector<MixerBlockSpec> blocks_;
  ParameterStore<T> params_;
};

template <typename T>
using GlueNetEncoder = GlueNet<T>;
template <typename T>
using GlueNetDecoder = GlueNet<T>;

/// Sequence critic: one residual mixer block at the target shape, mean-pool
/// over tokens, then Linear-GELU-Linear to a single logit.
template <typename T>
class Discriminator {
 public:
  Discriminator(const GlueNetConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg), block_(block_spec(cfg)), params_(build_store<T>(layout(cfg), rng)) {}

  Discriminator(const GlueNetConfig& cfg, ParameterStore<T> params)
      : cfg_(cfg), block_(block_spec(cfg)), params_(std::move(params)) {
    check_store(params_, layout(cfg), "discriminator");
  }

  static MixerBlockSpec block_spec(const GlueNetConfig& cfg) {
    MixerBlockSpec b;
    b.prefix = "mixer";
    b.tokens_in = b.tokens_out = cfg.token_out;
    b.dim_in = b.dim_out = cfg.dim_out;
    b.token_hidden = cfg.token_hidden();
    b.dim_hidden = cfg.dim_hidden();
    b.layer_norm = true;
    b.residual = true;
    return b;
  }

  static std::vector<ParamSlot> layout(const GlueNetConfig& cfg) {
    std::vector<ParamSlot> out;
    block_spec(cfg).append_layout(out);
    const std::size_t c = cfg.dim_out;
    out.push_back({"head.w1", Shape{c, c}});
    out.push_back({"head.b1", Shape{c}});
    out.push_back({"head.w2", Shape{c, 1}});
    out.push_back({"head.b2", Shape{1}});
    return out;
  }

  const GlueNetConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// [B, L_out, C_out] -> [B] logits; a single [L_out, C_out] gives shape {1}.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    require(x.rank() >= 2 && x.dim(x.rank() - 2) == cfg_.token_out &&
                x.dim(x.rank() - 1) == cfg_.dim_out,
            ErrorKind::kDimension,
            "discriminator input " + x.shape().str() + " does not match " +
                std::to_string(cfg_.token_out) + "x" + std::to_string(cfg_.dim_out));
    Tensor<T> x3 = x.rank() == 2 ? ops::reshape(tape, x, Shape{1, x.dim(0), x.dim(1)}) : x;
    const std::size_t batch = x3.dim(0);
    Tensor<T> h = mixer_block(tape, params_, block_, x3);
    h = ops::mean_axis(tape, h, 1);  // [B, C]
    h = ops::matmul(tape, h, params_.at("head.w1"));
    h = ops::add_bias(tape, h, params_.at("head.b1"));
    h = ops::gelu(tape, h);
    h = ops::matmul(tape, h, params_.at("head.w2"));
    h = ops::add_bias(tape, h, params_.at("head.b2"));
    return ops::reshape(tape, h, Shape{batch});
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto tape = Tape<T>::disabled();
    return forward(tape, x);
  }

  template <typename U>
  Discriminator<U> cast() const {
    return Discriminator<U>(cfg_, params_.template cast<U>());
  }

 private:
  GlueNetConfig cfg_;
  MixerBlockSpec block_;
  ParameterStore<T> params_;
};

}  // namespace gluenet
