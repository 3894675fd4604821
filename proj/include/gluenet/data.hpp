#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gluenet/error.hpp"
#include "gluenet/tensor.hpp"

namespace gluenet {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Little-endian byte helpers shared by the GGE and GGCK formats.

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32s(std::string& out, std::span<const float> v) {
  const auto* p = reinterpret_cast<const char*>(v.data());
  out.append(p, v.size() * sizeof(float));
}

/// Bounds-checked reader over an in-memory file image.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) {
      fail(ErrorKind::kTruncated, what_ + ": truncated, expected " + std::to_string(pos_ + n) +
                                      " bytes, file has " + std::to_string(bytes_.size()));
    }
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  void f32s(std::span<float> out) {
    auto s = bytes(out.size() * sizeof(float));
    std::memcpy(out.data(), s.data(), s.size());
  }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorKind::kIo, "read failed: " + path);
  return data;
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot create " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed: " + path);
}

/// a * b * ..., failing with an overflow error instead of wrapping.
inline std::size_t checked_product(std::initializer_list<std::uint64_t> factors,
                                   const std::string& what) {
  std::uint64_t acc = 1;
  for (auto f : factors) {
    if (f != 0 && acc > std::numeric_limits<std::uint64_t>::max() / f) {
      fail(ErrorKind::kOverflow, what + ": size overflows 64 bits");
    }
    acc *= f;
  }
  require(acc <= std::numeric_limits<std::size_t>::max(), ErrorKind::kOverflow,
          what + ": size exceeds addressable memory");
  return static_cast<std::size_t>(acc);
}

}  // namespace io

// ---------------------------------------------------------------------------
// EmbeddingStore and the GGE file format

/// `count` token sequences of shape tokens x dim, record-major.
struct EmbeddingStore {
  std::size_t count = 0;
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::vector<float> records;
  std::optional<std::vector<std::uint64_t>> ids;

  std::size_t record_size() const { return tokens * dim; }

  std::span<const float> record(std::size_t i) const {
    return std::span<const float>(records).subspan(i * record_size(), record_size());
  }

  void validate() const {
    require(tokens >= 1 && dim >= 1, ErrorKind::kDimension, "store extents must be >= 1");
    require(records.size() == count * tokens * dim, ErrorKind::kDimension,
            "store payload does not match count x tokens x dim");
    if (ids) {
      require(ids->size() == count, ErrorKind::kDimension, "id list length differs from count");
      std::unordered_set<std::uint64_t> seen;
      for (auto id : *ids) {
        require(seen.insert(id).second, ErrorKind::kDuplicateId,
                "duplicate record id " + std::to_string(id));
      }
    }
  }

  /// Records at the given indices as a [n, tokens, dim] tensor.
  template <typename T>
  Tensor<T> gather(std::span<const std::size_t> indices) const {
    std::vector<T> v;
    v.reserve(indices.size() * record_size());
    for (auto i : indices) {
      auto r = record(i);
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor<T>(Shape{indices.size(), tokens, dim}, std::move(v));
  }

  template <typename T>
  Tensor<T> all() const {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return gather<T>(idx);
  }

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;
};

inline constexpr char kGgeMagic[4] = {'G', 'G', 'E', 'M'};
inline constexpr std::uint32_t kGgeVersion = 1;
inline constexpr std::size_t kGgeHeaderBytes = 24;

struct GgeHeader {
  std::uint32_t version = 0;
  std::uint32_t count = 0, tokens = 0, dim = 0, flags = 0;
  bool has_ids() const { return flags & 1u; }
};

inline std::string encode_gge(const EmbeddingStore& store) {
  store.validate();
  const auto max32 = std::numeric_limits<std::uint32_t>::max();
  require(store.count <= max32 && store.tokens <= max32 && store.dim <= max32,
          ErrorKind::kOverflow, "store extents exceed 32-bit header fields");
  std::string out;
  out.reserve(kGgeHeaderBytes + (store.ids ? store.count * 8 : 0) + store.records.size() * 4);
  out.append(kGgeMagic, 4);
  io::put_u32(out, kGgeVersion);
  io::put_u32(out, static_cast<std::uint32_t>(store.count));
  io::put_u32(out, static_cast<std::uint32_t>(store.tokens));
  io::put_u32(out, static_cast<std::uint32_t>(store.dim));
  io::put_u32(out, store.ids ? 1u : 0u);
  if (store.ids)
    for (auto id : *store.ids) io::put_u64(out, id);
  io::put_f32s(out, store.records);
  return out;
}

inline GgeHeader decode_gge_header(io::Reader& r) {
  auto magic = r.bytes(4);
  require(magic == std::string_view(kGgeMagic, 4), ErrorKind::kBadMagic,
          "not a GGE file (bad magic)");
  GgeHeader h;
  h.version = r.u32();
  require(h.version == kGgeVersion, ErrorKind::kVersion,
          "unsupported GGE version " + std::to_string(h.version));
  h.count = r.u32();
  h.tokens = r.u32();
  h.dim = r.u32();
  h.flags = r.u32();
  return h;
}

inline EmbeddingStore decode_gge(std::string_view bytes, const std::string& what = "GGE") {
  io::Reader r(bytes, what);
  const GgeHeader h = decode_gge_header(r);
  const std::size_t id_bytes = h.has_ids() ? io::checked_product({h.count, 8}, what) : 0;
  const std::size_t n = io::checked_product({h.count, h.tokens, h.dim}, what);
  const std::size_t payload = io::checked_product({n, 4}, what);
  const std::size_t expected = kGgeHeaderBytes + id_bytes + payload;
  if (bytes.size() != expected) {
    fail(ErrorKind::kTruncated, what + ": length mismatch, expected " + std::to_string(expected) +
                                    " bytes, file has " + std::to_string(bytes.size()));
  }
  EmbeddingStore s;
  s.count = h.count;
  s.tokens = h.tokens;
  s.dim = h.dim;
  if (h.has_ids()) {
    s.ids.emplace(h.count);
    for (auto& id : *s.ids) id = r.u64();
  }
  s.records.resize(n);
  r.f32s(s.records);
  s.validate();
  return s;
}

inline void write_gge(const EmbeddingStore& store, const std::string& path) {
  io::write_file(path, encode_gge(store));
}

inline EmbeddingStore read_gge(const std::string& path) {
  return decode_gge(io::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Parallel corpus

struct ParallelCorpus {
  EmbeddingStore source;
  EmbeddingStore target;

  std::size_t size() const { return source.count; }
};

/// Positional pairing, or an id join when both stores carry ids. The join
/// keeps the source's record order.
inline ParallelCorpus pair(const EmbeddingStore& source, const EmbeddingStore& target) {
  source.validate();
  target.validate();
  if (!(source.ids && target.ids)) {
    require(source.count == target.count, ErrorKind::kCountMismatch,
            "record counts differ: " + std::to_string(source.count) + " vs " +
                std::to_string(target.count));
    return {source, target};
  }
  std::unordered_map<std::uint64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < target.count; ++i) by_id.emplace((*target.ids)[i], i);
  ParallelCorpus out;
  out.source = {0, source.tokens, source.dim, {}, std::vector<std::uint64_t>{}};
  out.target = {0, target.tokens, target.dim, {}, std::vector<std::uint64_t>{}};
  for (std::size_t i = 0; i < source.count; ++i) {
    const auto id = (*source.ids)[i];
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    auto rs = source.record(i);
    auto rt = target.record(it->second);
    out.source.records.insert(out.source.records.end(), rs.begin(), rs.end());
    out.target.records.insert(out.target.records.end(), rt.begin(), rt.end());
    out.source.ids->push_back(id);
    out.target.ids->push_back(id);
    ++out.source.count;
    ++out.target.count;
  }
  require(out.source.count > 0, ErrorKind::kEmptyJoin, "id join produced no pairs");
  return out;
}

inline ParallelCorpus pair(const std::string& source_path, const std::string& target_path) {
  return pair(read_gge(source_path), read_gge(target_path));
}

// ---------------------------------------------------------------------------
// Batching

/// Seeded epoch shuffler. Each epoch is a Fisher-Yates permutation of
/// [0, count); the final partial batch of an epoch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed)
      : count_(count), batch_(batch_size), rng_(seed) {
    require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
    require(count >= 1, ErrorKind::kEmptyBatch, "cannot batch an empty corpus");
  }

  std::vector<std::size_t> next() {
    if (cursor_ >= perm_.size()) start_epoch();
    const std::size_t end = std::min(cursor_ + batch_, perm_.size());
    std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
  }

  std::size_t batches_per_epoch() const { return (count_ + batch_ - 1) / batch_; }

  /// Serializable state: engine text, cursor, current permutation.
  struct State {
    std::string engine;
    std::uint64_t cursor = 0;
    std::vector<std::uint64_t> permutation;
  };

  State state() const {
    std::ostringstream os;
    os << rng_;
    return {os.str(), cursor_, {perm_.begin(), perm_.end()}};
  }

  void restore(const State& s) {
    std::istringstream is(s.engine);
    is >> rng_;
    require(!is.fail(), ErrorKind::kBadMagic, "corrupt batch iterator RNG state");
    perm_.assign(s.permutation.begin(), s.permutation.end());
    require(perm_.empty() || perm_.size() == count_, ErrorKind::kCountMismatch,
            "batch iterator state was saved for a different corpus size");
    cursor_ = static_cast<std::size_t>(s.cursor);
  }

 private:
  void start_epoch() {
    perm_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) perm_[i] = i;
    for (std::size_t i = count_ - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(perm_[i], perm_[pick(rng_)]);
    }
    cursor_ = 0;
  }

  std::size_t count_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic encoder pairs

enum class SyntheticTransform { kOrthogonalRotation, kTokenPermutationRotation, kRandomTwoLayerNet };

inline SyntheticTransform parse_transform(std::string_view name) {
  if (name == "orthogonal-rotation") return SyntheticTransform::kOrthogonalRotation;
  if (name == "token-permutation-plus-rotation") return SyntheticTransform::kTokenPermutationRotation;
  if (name == "random-two-layer-net") return SyntheticTransform::kRandomTwoLayerNet;
  fail(ErrorKind::kConfig, "unknown transform '" + std::string(name) + "'");
}

inline std::string_view to_string(SyntheticTransform t) {
  switch (t) {
    case SyntheticTransform::kOrthogonalRotation: return "orthogonal-rotation";
    case SyntheticTransform::kTokenPermutationRotation: return "token-permutation-plus-rotation";
    case SyntheticTransform::kRandomTwoLayerNet: return "random-two-layer-net";
  }
  return "?";
}

struct SyntheticEncoderSpec {
  std::uint64_t seed = 0;
  std::size_t l_in = 8, c_in = 16, l_out = 8, c_out = 16;
  SyntheticTransform transform = SyntheticTransform::kOrthogonalRotation;
  double noise_sigma = 0.0;

  void validate() const {
    require(l_in >= 1 && c_in >= 1 && l_out >= 1 && c_out >= 1, ErrorKind::kConfig,
            "synthetic extents must be >= 1");
    require(noise_sigma >= 0 && std::isfinite(noise_sigma), ErrorKind::kConfig,
            "noise_sigma must be finite and nonnegative");
    if (transform != SyntheticTransform::kRandomTwoLayerNet) {
      require(c_in == c_out && l_in == l_out, ErrorKind::kConfig,
              std::string(to_string(transform)) + " requires l_in == l_out and c_in == c_out");
    }
  }
};

/// Row-major dense matrix in double precision, used only by the generator.
struct DenseMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
};

/// Orthogonal factor of a Gaussian matrix via modified Gram-Schmidt, with
/// columns signed so the implied R has a positive diagonal.
inline DenseMatrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  DenseMatrix a{n, n, std::vector<double>(n * n)};
  for (auto& e : a.v) e = normal(rng);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += a(i, k) * a(i, j);
      for (std::size_t i = 0; i < n; ++i) a(i, j) -= dot * a(i, k);
    }
    double norm = 0;
    for (std::size_t i = 0; i < n; ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) a(i, j) /= norm;
  }
  return a;
}

/// The fixed map from a source record to its noise-free target record.
class SyntheticMap {
 public:
  SyntheticMap(const SyntheticEncoderSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    spec.validate();
    std::normal_distribution<double> normal;
    switch (spec.transform) {
      case SyntheticTransform::kOrthogonalRotation:
        rotation_ = random_orthogonal(spec.c_in, rng);
        break;
      case SyntheticTransform::kTokenPermutationRotation: {
        rotation_ = random_orthogonal(spec.c_in, rng);
        perm_.resize(spec.l_in);
        for (std::size_t i = 0; i < spec.l_in; ++i) perm_[i] = i;
        for (std::size_t i = spec.l_in - 1; i > 0; --i) {
          std::uniform_int_distribution<std::size_t> pick(0, i);
          std::swap(perm_[i], perm_[pick(rng)]);
        }
        break;
      }
      case SyntheticTransform::kRandomTwoLayerNet: {
        auto gaussian = [&](std::size_t r, std::size_t c, double scale) {
          DenseMatrix m{r, c, std::vector<double>(r * c)};
          for (auto& e : m.v) e = normal(rng) * scale;
          return m;
        };
        token1_ = gaussian(spec.l_out, spec.l_in, 1.0 / std::sqrt(double(spec.l_in)));
        chan1_ = gaussian(spec.c_in, spec.c_out, 1.0 / std::sqrt(double(spec.c_in)));
        token2_ = gaussian(spec.l_out, spec.l_out, 1.0 / std::sqrt(double(spec.l_out)));
        chan2_ = gaussian(spec.c_out, spec.c_out, 2.0 / std::sqrt(double(spec.c_out)));
        break;
      }
    }
  }

  const SyntheticEncoderSpec& spec() const { return spec_; }

  /// Maps one l_in x c_in record to an l_out x c_out record.
  std::vector<double> apply(std::span<const float> src) const {
    const auto& s = spec_;
    std::vector<double> out(s.l_out * s.c_out, 0.0);
    switch (s.transform) {
      case SyntheticTransform::kOrthogonalRotation:
      case SyntheticTransform::kTokenPermutationRotation:
        for (std::size_t t = 0; t < s.l_out; ++t) {
          const std::size_t from = perm_.empty() ? t : perm_[t];
          for (std::size_t j = 0; j < s.c_out; ++j) {
            double acc = 0;
            for (std::size_t i = 0; i < s.c_in; ++i) acc += src[from * s.c_in + i] * rotation_(i, j);
            out[t * s.c_out + j] = acc;
          }
        }
        break;
      case SyntheticTransform::kRandomTwoLayerNet: {
        // H = gelu(T1 X C1), Y = T2 H C2
        auto h = mix(token1_, src, s.l_in, s.c_in, chan1_);
        for (auto& e : h) e = e * 0.5 * (1.0 + std::erf(e / std::sqrt(2.0)));
        std::vector<float> hf(h.begin(), h.end());
        out = mix(token2_, hf, s.l_out, s.c_out, chan2_);
        break;
      }
    }
    return out;
  }

 private:
  static std::vector<double> mix(const DenseMatrix& left, std::span<const float> x,
                                 std::size_t l, std::size_t c, const DenseMatrix& right) {
    std::vector<double> tmp(left.rows * c, 0.0);
    for (std::size_t r = 0; r < left.rows; ++r)
      for (std::size_t k = 0; k < l; ++k)
        for (std::size_t j = 0; j < c; ++j) tmp[r * c + j] += left(r, k) * x[k * c + j];
    std::vector<double> out(left.rows * right.cols, 0.0);
    for (std::size_t r = 0; r < left.rows; ++r)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < right.cols; ++j)
          out[r * right.cols + j] += tmp[r * c + k] * right(k, j);
    return out;
  }

  SyntheticEncoderSpec spec_;
  DenseMatrix rotation_, token1_, chan1_, token2_, chan2_;
  std::vector<std::size_t> perm_;
};

struct SyntheticCorpus {
  ParallelCorpus corpus;
  SyntheticMap map;
};

/// Source records are i.i.d. standard normal; targets are map(source) plus
/// N(0, sigma^2) noise. The map is drawn first, then sources, then noise, all
/// from one engine seeded with spec.seed.
inline SyntheticCorpus gen_synthetic_pair(const SyntheticEncoderSpec& spec, std::size_t count) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticMap map(spec, rng);
  std::normal_distribution<double> normal;
  EmbeddingStore src{count, spec.l_in, spec.c_in, std::vector<float>(count * spec.l_in * spec.c_in), std::nullopt};
  for (auto& e : src.records) e = static_cast<float>(normal(rng));
  EmbeddingStore tgt{count, spec.l_out, spec.c_out, {}, std::nullopt};
  tgt.records.reserve(count * spec.l_out * spec.c_out);
  for (std::size_t r = 0; r < count; ++r) {
    for (double v : map.apply(src.record(r))) {
      const double noise = spec.noise_sigma > 0 ? spec.noise_sigma * normal(rng) : 0.0;
      tgt.records.push_back(static_cast<float>(v + noise));
    }
  }
  return {{std::move(src), std::move(tgt)}, std::move(map)};
}

}  // namespace gluenet
