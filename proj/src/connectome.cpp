// SPDX-License-Identifier: Apache-2.0
#include "conlm/connectome.hpp"

#include <cmath>
#include <numeric>

#include "conlm/binio.hpp"
#include "conlm/rng.hpp"

namespace conlm {

namespace {

constexpr std::uint16_t kConnectomeVersion = 1;

TernaryDist count_dist(const MaskMat& m) {
  double nz = 0, nm = 0, np = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      std::int8_t v = m(r, c);
      if (v == 0)
        ++nz;
      else if (v < 0)
        ++nm;
      else
        ++np;
    }
  const double n = static_cast<double>(m.size());
  return {nz / n, nm / n, np / n};
}

}  // namespace

void Connectome::validate() const {
  if (tensors.empty()) throw ConfigError("Connectome: no tensors");
  if (!(init_scale > 0.0f)) throw ConfigError("Connectome: init_scale must be positive");
  for (const auto& t : tensors) {
    Index alive = 0;
    for (Index r = 0; r < t.mask.rows(); ++r)
      for (Index c = 0; c < t.mask.cols(); ++c) {
        std::int8_t v = t.mask(r, c);
        if (v != -1 && v != 0 && v != 1)
          throw ConfigError("Connectome: tensor '" + t.name + "' has non-ternary entry");
        if (v != 0) ++alive;
      }
    const double recomputed = static_cast<double>(alive) / static_cast<double>(t.mask.size());
    if (recomputed != t.density)
      throw ConfigError("Connectome: tensor '" + t.name + "' density metadata mismatch");
  }
}

double ternary_entropy_bits(const TernaryDist& d) {
  double h = 0.0;
  for (double p : {d.p_zero, d.p_minus, d.p_plus})
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

std::uint64_t compressed_size_estimate_bytes(double entropy_bits, std::uint64_t n_weights) {
  return static_cast<std::uint64_t>(
      std::ceil(entropy_bits * static_cast<double>(n_weights) / 8.0));
}

ConnectomeStats stats(const Connectome& c) {
  ConnectomeStats s;
  double nz = 0, nm = 0, np = 0;
  for (const auto& t : c.tensors) {
    TernaryDist d = count_dist(t.mask);
    s.per_tensor.emplace_back(t.name, d);
    const double n = static_cast<double>(t.mask.size());
    nz += d.p_zero * n;
    nm += d.p_minus * n;
    np += d.p_plus * n;
  }
  const double n = static_cast<double>(c.n_weights());
  s.global = {nz / n, nm / n, np / n};
  s.entropy_bits_per_weight = ternary_entropy_bits(s.global);
  s.estimated_compressed_bytes =
      compressed_size_estimate_bytes(s.entropy_bits_per_weight, static_cast<std::uint64_t>(c.n_weights()));
  return s;
}

Connectome dense_connectome(const ModelConfig& cfg) {
  auto p = TensorSet<float>::zeros(cfg);
  Connectome c;
  c.init_scale = static_cast<float>(cfg.init_std);
  c.generation = 0;
  p.for_each_tensor([&](const std::string& name, const Mat<float>& m) {
    Connectome::Tensor t;
    t.name = name;
    t.mask = MaskMat::Constant(m.rows(), m.cols(), std::int8_t(1));
    t.density = 1.0;
    c.tensors.push_back(std::move(t));
  });
  return c;
}

Connectome random_like(const Connectome& c, std::uint64_t seed) {
  Connectome out;
  out.init_scale = c.init_scale;
  out.generation = c.generation;
  out.tensors.resize(c.tensors.size());
  for (std::size_t ti = 0; ti < c.tensors.size(); ++ti) {
    const auto& src = c.tensors[ti];
    auto& dst = out.tensors[ti];
    dst.name = src.name;
    dst.density = src.density;
    dst.mask = MaskMat::Zero(src.mask.rows(), src.mask.cols());

    const Index n = src.mask.size();
    const Index k = (src.mask != 0).count();
    Rng rng(mix64(seed, static_cast<std::uint64_t>(ti)));

    // Partial Fisher-Yates: first k entries of a virtual shuffle of [0, n).
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
      Index j = i + static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      Index f = idx[static_cast<std::size_t>(i)];
      dst.mask(f / src.mask.cols(), f % src.mask.cols()) =
          rng.next_bool() ? std::int8_t(1) : std::int8_t(-1);
    }
  }
  return out;
}

// File layout: magic "CNTM", version u16, generation u16, init_scale f32,
// tensor count u32; per tensor: name (u32 length + bytes), rows u64, cols u64,
// declared nonzero count u64, then ceil(n/4) payload bytes of 2-bit codes
// packed little-endian within each byte (00 -> 0, 01 -> +1, 10 -> -1, 11
// invalid), row-major, zero-padded to the byte boundary.
void save_connectome(const Connectome& c, const std::string& path) {
  c.validate();
  if (c.generation > 0xFFFF) throw ConfigError("save_connectome: generation exceeds u16");
  BinWriter w(path);
  w.magic("CNTM");
  w.u16(kConnectomeVersion);
  w.u16(static_cast<std::uint16_t>(c.generation));
  w.f32(c.init_scale);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u64(static_cast<std::uint64_t>(t.mask.rows()));
    w.u64(static_cast<std::uint64_t>(t.mask.cols()));
    w.u64(static_cast<std::uint64_t>((t.mask != 0).count()));
    const Index n = t.mask.size();
    std::vector<std::uint8_t> payload(static_cast<std::size_t>((n + 3) / 4), 0);
    for (Index f = 0; f < n; ++f) {
      std::int8_t v = t.mask(f / t.mask.cols(), f % t.mask.cols());
      std::uint8_t code = (v == 0) ? 0u : (v > 0 ? 1u : 2u);
      payload[static_cast<std::size_t>(f / 4)] |= static_cast<std::uint8_t>(code << (2 * (f % 4)));
    }
    w.bytes(payload.data(), payload.size());
  }
  w.close();
}

Connectome load_connectome(const std::string& path) {
  BinReader r(path);
  r.expect_magic("CNTM", "connectome");
  const std::uint16_t version = r.u16();
  if (version != kConnectomeVersion)
    throw IoError("connectome '" + path + "': unsupported version " + std::to_string(version));
  Connectome c;
  c.generation = r.u16();
  c.init_scale = r.f32();
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors == 0) throw IoError("connectome '" + path + "': no tensors");
  c.tensors.resize(n_tensors);
  for (auto& t : c.tensors) {
    t.name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows * cols > (1ull << 40))
      throw IoError("connectome '" + path + "': implausible tensor shape");
    const std::uint64_t declared_nonzero = r.u64();
    const Index n = static_cast<Index>(rows * cols);
    std::vector<std::uint8_t> payload(static_cast<std::size_t>((n + 3) / 4));
    r.bytes(payload.data(), payload.size());

    t.mask = MaskMat::Zero(static_cast<Index>(rows), static_cast<Index>(cols));
    std::uint64_t nonzero = 0;
    for (Index f = 0; f < n; ++f) {
      std::uint8_t code = (payload[static_cast<std::size_t>(f / 4)] >> (2 * (f % 4))) & 3u;
      if (code == 3u)
        throw IoError("connectome '" + path + "': invalid 2-bit code in tensor '" + t.name + "'");
      if (code != 0u) ++nonzero;
      t.mask(f / static_cast<Index>(cols), f % static_cast<Index>(cols)) =
          (code == 0u) ? std::int8_t(0) : (code == 1u ? std::int8_t(1) : std::int8_t(-1));
    }
    // Padding bits beyond n must be zero.
    if (n % 4 != 0) {
      std::uint8_t tail = payload.back();
      if ((tail >> (2 * (n % 4))) != 0)
        throw IoError("connectome '" + path + "': nonzero padding in tensor '" + t.name + "'");
    }
    if (nonzero != declared_nonzero)
      throw IoError("connectome '" + path + "': tensor '" + t.name + "' declares " +
                    std::to_string(declared_nonzero) + " nonzeros but payload has " +
                    std::to_string(nonzero));
    t.density = static_cast<double>(nonzero) / static_cast<double>(n);
  }
  r.expect_eof();
  c.validate();
  return c;
}

}  // namespace conlm
