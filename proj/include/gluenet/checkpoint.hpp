#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gluenet/config.hpp"
#include "gluenet/data.hpp"
#include "gluenet/digest.hpp"
#include "gluenet/error.hpp"
#include "gluenet/train.hpp"

// GGCK layout (all integers little-endian):
//   "GGCK" | u32 version | 32-byte SHA-256 of the canonical GlueNetConfig text
//   | u64 length + config text (gluenet.*, train.*, state.* keys)
//   | u32 count + named tensors (u32 name length, name, u32 rank, u32 extents, f32 data)
//   | u32 count + optimizer buffers, same encoding
//   | RNG block: u64 length + engine text, u64 cursor, u64 n + n x u64 permutation

namespace gluenet {

inline constexpr char kCkptMagic[4] = {'G', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

/// Complete training state of a float Trainer at a step boundary.
struct Checkpoint {
  GlueNetConfig gcfg;
  TrainConfig tcfg;
  std::uint64_t step = 0;
  ParameterStore<float> encoder, decoder, discriminator;
  AdamWState<float> gen_opt, disc_opt;
  BatchIterator::State batches;
  std::optional<std::vector<float>> token_weights;
};

inline Sha256 config_digest(const GlueNetConfig& cfg) { return sha256(cfg.to_text()); }

inline Checkpoint capture(const Trainer<float>& t) {
  Checkpoint c;
  c.gcfg = t.gluenet_config();
  c.tcfg = t.train_config();
  c.step = t.step_count();
  c.encoder = t.encoder().params().clone();
  c.decoder = t.decoder().params().clone();
  c.discriminator = t.discriminator().params().clone();
  c.gen_opt = t.generator_state();
  c.disc_opt = t.discriminator_state();
  c.batches = t.batches().state();
  c.token_weights = t.token_weights();
  return c;
}

namespace detail {

inline void copy_values(const ParameterStore<float>& from, ParameterStore<float>& to,
                        const std::string& what) {
  require(from.size() == to.size(), ErrorKind::kConfig, what + ": parameter count differs");
  for (const auto& [name, src] : from) {
    require(to.contains(name), ErrorKind::kConfig, what + ": unexpected parameter " + name);
    auto& dst = to.at(name);
    require(dst.shape() == src.shape(), ErrorKind::kConfig, what + ": shape differs for " + name);
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    dst.zero_grad();
  }
}

inline void put_tensor(std::string& out, const std::string& name, const Shape& shape,
                       std::span<const float> data) {
  io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  io::put_u32(out, static_cast<std::uint32_t>(shape.rank()));
  for (auto e : shape.extents()) io::put_u32(out, static_cast<std::uint32_t>(e));
  io::put_f32s(out, data);
}

struct NamedBlock {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline NamedBlock get_tensor(io::Reader& r) {
  NamedBlock b;
  const auto name_len = r.u32();
  b.name = std::string(r.bytes(name_len));
  const auto rank = r.u32();
  require(rank >= 1 && rank <= 3, ErrorKind::kBadMagic, "checkpoint tensor " + b.name +
                                                             " has invalid rank");
  std::vector<std::size_t> ext(rank);
  for (auto& e : ext) e = r.u32();
  b.shape = Shape(ext);
  std::uint64_t count = 1;
  for (auto e : ext) count = io::checked_product({count, e}, b.name);
  r.need(io::checked_product({count, sizeof(float)}, b.name));
  b.data.resize(count);
  r.f32s(b.data);
  return b;
}

inline std::vector<NamedBlock> get_tensors(io::Reader& r) {
  const auto n = r.u32();
  std::vector<NamedBlock> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_tensor(r));
  return out;
}

}  // namespace detail

/// Writes every state component; the output is a deterministic function of
/// the checkpoint contents.
inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out;
  out.append(kCkptMagic, 4);
  io::put_u32(out, kCkptVersion);
  const Sha256 digest = config_digest(c.gcfg);
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  std::ostringstream text;
  for (const auto& [k, v] : parse_key_values(c.gcfg.to_text())) text << "gluenet." << k << " = " << v << '\n';
  for (const auto& [k, v] : parse_key_values(c.tcfg.to_text())) text << "train." << k << " = " << v << '\n';
  text << "state.step = " << c.step << '\n'
       << "state.gen_t = " << c.gen_opt.t << '\n'
       << "state.disc_t = " << c.disc_opt.t << '\n';
  const std::string cfg_text = text.str();
  io::put_u64(out, cfg_text.size());
  out.append(cfg_text);

  std::uint32_t n = static_cast<std::uint32_t>(c.encoder.size() + c.decoder.size() +
                                                c.discriminator.size() + (c.token_weights ? 1 : 0));
  io::put_u32(out, n);
  for (const auto& [name, t] : c.encoder) detail::put_tensor(out, "enc." + name, t.shape(), t.data());
  for (const auto& [name, t] : c.decoder) detail::put_tensor(out, "dec." + name, t.shape(), t.data());
  for (const auto& [name, t] : c.discriminator)
    detail::put_tensor(out, "disc." + name, t.shape(), t.data());
  if (c.token_weights)
    detail::put_tensor(out, "state.token_weights", Shape{c.token_weights->size()}, *c.token_weights);

  auto put_moments = [&](const std::string& prefix, const AdamWState<float>& s) {
    for (const auto& [key, m] : s.m) detail::put_tensor(out, prefix + ".m." + key, Shape{m.size()}, m);
    for (const auto& [key, v] : s.v) detail::put_tensor(out, prefix + ".v." + key, Shape{v.size()}, v);
  };
  io::put_u32(out, static_cast<std::uint32_t>(2 * (c.gen_opt.m.size() + c.disc_opt.m.size())));
  put_moments("gen", c.gen_opt);
  put_moments("disc", c.disc_opt);

  io::put_u64(out, c.batches.engine.size());
  out.append(c.batches.engine);
  io::put_u64(out, c.batches.cursor);
  io::put_u64(out, c.batches.permutation.size());
  for (auto p : c.batches.permutation) io::put_u64(out, p);
  return out;
}

struct CheckpointHeader {
  std::uint32_t version = 0;
  Sha256 digest{};
  std::string config_text;
};

inline CheckpointHeader decode_checkpoint_header(io::Reader& r) {
  require(r.bytes(4) == std::string_view(kCkptMagic, 4), ErrorKind::kBadMagic,
          "not a GGCK checkpoint (bad magic)");
  CheckpointHeader h;
  h.version = r.u32();
  require(h.version == kCkptVersion, ErrorKind::kVersion,
          "unsupported checkpoint version " + std::to_string(h.version));
  auto d = r.bytes(32);
  std::memcpy(h.digest.data(), d.data(), 32);
  const auto len = r.u64();
  require(len <= r.remaining(), ErrorKind::kTruncated, "checkpoint config block is truncated");
  h.config_text = std::string(r.bytes(static_cast<std::size_t>(len)));
  return h;
}

/// Decodes a checkpoint. When `expected` is given, its digest must match the
/// stored one.
inline Checkpoint decode_checkpoint(std::string_view bytes,
                                    const std::optional<GlueNetConfig>& expected = std::nullopt,
                                    const std::string& what = "GGCK") {
  io::Reader r(bytes, what);
  const CheckpointHeader h = decode_checkpoint_header(r);
  const KeyValues kv = parse_key_values(h.config_text);
  Checkpoint c;
  c.gcfg = GlueNetConfig::from_key_values(kv, "gluenet.");
  c.tcfg = TrainConfig::from_key_values(kv, "train.");
  require(config_digest(c.gcfg) == h.digest, ErrorKind::kDigest,
          what + ": stored digest does not match the stored configuration");
  if (expected) {
    require(config_digest(*expected) == h.digest, ErrorKind::kDigest,
            what + ": configuration digest mismatch (checkpoint " + to_hex(h.digest) +
                ", requested " + to_hex(config_digest(*expected)) + ")");
  }
  auto state_uint = [&](const std::string& key) {
    auto it = kv.find(key);
    require(it != kv.end(), ErrorKind::kBadMagic, what + ": missing " + key);
    return parse_uint(key, it->second);
  };
  c.step = state_uint("state.step");
  c.gen_opt.t = state_uint("state.gen_t");
  c.disc_opt.t = state_uint("state.disc_t");

  for (auto& b : detail::get_tensors(r)) {
    Tensor<float> t(b.shape, std::move(b.data));
    if (b.name.starts_with("enc.")) c.encoder.add(b.name.substr(4), t);
    else if (b.name.starts_with("dec.")) c.decoder.add(b.name.substr(4), t);
    else if (b.name.starts_with("disc.")) c.discriminator.add(b.name.substr(5), t);
    else if (b.name == "state.token_weights") c.token_weights = t.values();
    else fail(ErrorKind::kBadMagic, what + ": unknown tensor block " + b.name);
  }
  for (auto& b : detail::get_tensors(r)) {
    auto assign = [&](AdamWState<float>& s, std::string_view rest) {
      if (rest.starts_with("m.")) s.m[std::string(rest.substr(2))] = std::move(b.data);
      else if (rest.starts_with("v.")) s.v[std::string(rest.substr(2))] = std::move(b.data);
      else fail(ErrorKind::kBadMagic, what + ": unknown optimizer block " + b.name);
    };
    std::string_view name = b.name;
    if (name.starts_with("gen.")) assign(c.gen_opt, name.substr(4));
    else if (name.starts_with("disc.")) assign(c.disc_opt, name.substr(5));
    else fail(ErrorKind::kBadMagic, what + ": unknown optimizer block " + b.name);
  }
  const auto engine_len = r.u64();
  require(engine_len <= r.remaining(), ErrorKind::kTruncated, what + ": RNG block is truncated");
  c.batches.engine = std::string(r.bytes(static_cast<std::size_t>(engine_len)));
  c.batches.cursor = r.u64();
  const auto perm_len = r.u64();
  require(perm_len <= r.remaining() / 8, ErrorKind::kTruncated, what + ": RNG block is truncated");
  c.batches.permutation.resize(static_cast<std::size_t>(perm_len));
  for (auto& p : c.batches.permutation) p = r.u64();
  require(r.remaining() == 0, ErrorKind::kTruncated,
          what + ": " + std::to_string(r.remaining()) + " trailing bytes after RNG block");

  // Shape checks against the configuration.
  GlueNet<float>(c.gcfg, c.encoder.clone());
  GlueNet<float>(c.gcfg.mirror(), c.decoder.clone());
  Discriminator<float>(c.gcfg, c.discriminator.clone());
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  io::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<GlueNetConfig>& expected = std::nullopt) {
  return decode_checkpoint(io::read_file(path), expected, path);
}

/// Overwrites a trainer's state with a checkpoint's. The trainer must have
/// been built for the same GlueNetConfig.
inline void restore(Trainer<float>& t, const Checkpoint& c) {
  require(config_digest(t.gluenet_config()) == config_digest(c.gcfg), ErrorKind::kDigest,
          "checkpoint configuration differs from the trainer's");
  detail::copy_values(c.encoder, t.encoder().params(), "encoder");
  detail::copy_values(c.decoder, t.decoder().params(), "decoder");
  detail::copy_values(c.discriminator, t.discriminator().params(), "discriminator");
  t.generator_state() = c.gen_opt;
  t.discriminator_state() = c.disc_opt;
  t.batches().restore(c.batches);
  t.set_step_count(c.step);
  if (c.token_weights) t.set_token_weights(*c.token_weights);
}

}  // namespace gluenet
