// SPDX-License-Identifier: Apache-2.0
//
// The ternary wiring mask transmitted between model generations: one array in
// {-1, 0, +1} per weight matrix plus a single initialization scale. Derivation
// prunes the smallest-magnitude alive weights tensor by tensor and keeps only
// the signs of the survivors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conlm/common.hpp"
#include "conlm/model.hpp"

namespace conlm {

struct Connectome {
  struct Tensor {
    std::string name;
    MaskMat mask;
    double density = 0.0;  // recorded nonzero fraction; must equal the recomputed one
  };

  std::vector<Tensor> tensors;
  float init_scale = 0.02f;
  std::uint32_t generation = 0;

  Index n_weights() const {
    Index n = 0;
    for (const auto& t : tensors) n += t.mask.size();
    return n;
  }

  Index n_alive() const {
    Index n = 0;
    for (const auto& t : tensors) n += (t.mask != 0).count();
    return n;
  }

  double global_density() const {
    return static_cast<double>(n_alive()) / static_cast<double>(n_weights());
  }

  std::vector<Index> alive_per_tensor() const {
    std::vector<Index> out;
    out.reserve(tensors.size());
    for (const auto& t : tensors) out.push_back((t.mask != 0).count());
    return out;
  }

  // Ternary entries only, recorded densities exact.
  void validate() const;
};

struct TernaryDist {
  double p_zero = 0.0, p_minus = 0.0, p_plus = 0.0;
};

struct ConnectomeStats {
  TernaryDist global;
  std::vector<std::pair<std::string, TernaryDist>> per_tensor;
  double entropy_bits_per_weight = 0.0;
  std::uint64_t estimated_compressed_bytes = 0;
};

// H = -sum p log2 p over the nonzero-probability symbols; in [0, log2 3].
double ternary_entropy_bits(const TernaryDist& d);

// ceil(entropy_bits * n_weights / 8)
std::uint64_t compressed_size_estimate_bytes(double entropy_bits, std::uint64_t n_weights);

ConnectomeStats stats(const Connectome& c);

// Fully alive mask (every entry +1), generation 0: the starting point of the
// generational loop.
Connectome dense_connectome(const ModelConfig& cfg);

// Matched-density control: same per-tensor nonzero counts at uniformly sampled
// positions, each nonzero independently +-1. Pure function of (c, seed).
Connectome random_like(const Connectome& c, std::uint64_t seed);

void save_connectome(const Connectome& c, const std::string& path);
Connectome load_connectome(const std::string& path);

// Among entries alive in prev, zeroes the floor(prune_fraction * n_alive)
// smallest by |weight| per tensor (ties broken toward the smaller row-major
// flat index); every other alive entry becomes sign(weight), with sign(0) := +1.
// When exempt_embeddings is set, "emb"/"unemb" are sign-refreshed but not pruned.
template <class Scalar>
Connectome derive(const TensorSet<Scalar>& params, const Connectome& prev,
                  double prune_fraction, bool exempt_embeddings = false) {
  if (!(prune_fraction > 0.0 && prune_fraction < 1.0))
    throw ConfigError("derive: prune_fraction must be in (0,1)");
  auto plist = params.tensor_list();
  if (plist.size() != prev.tensors.size())
    throw ShapeError("derive: tensor count mismatch with previous connectome");

  Connectome out;
  out.init_scale = prev.init_scale;
  out.generation = prev.generation + 1;
  out.tensors.resize(prev.tensors.size());

  for (std::size_t ti = 0; ti < plist.size(); ++ti) {
    const auto& [name, wptr] = plist[ti];
    const auto& prev_t = prev.tensors[ti];
    if (name != prev_t.name || wptr->rows() != prev_t.mask.rows() ||
        wptr->cols() != prev_t.mask.cols())
      throw ShapeError("derive: tensor '" + name + "' does not match previous connectome");

    const Mat<Scalar>& w = *wptr;
    const Index n = w.size();
    std::vector<Index> alive;
    alive.reserve(static_cast<std::size_t>(n));
    for (Index f = 0; f < n; ++f) {
      if (prev_t.mask(f / w.cols(), f % w.cols()) != 0) alive.push_back(f);
    }

    const bool exempt = exempt_embeddings && (name == "emb" || name == "unemb");
    const Index n_alive = static_cast<Index>(alive.size());
    const Index k = exempt ? 0
                           : static_cast<Index>(std::floor(prune_fraction * static_cast<double>(n_alive)));

    // k smallest by (|w|, flat index): smaller index pruned first on ties.
    std::vector<Index> order = alive;
    auto cmp = [&](Index a, Index b) {
      Scalar aa = std::abs(w(a / w.cols(), a % w.cols()));
      Scalar ab = std::abs(w(b / w.cols(), b % w.cols()));
      if (aa != ab) return aa < ab;
      return a < b;
    };
    if (k > 0 && k < n_alive) std::nth_element(order.begin(), order.begin() + k, order.end(), cmp);

    MaskMat mask = MaskMat::Zero(w.rows(), w.cols());
    for (Index i = k; i < n_alive; ++i) {
      Index f = order[static_cast<std::size_t>(i)];
      Scalar val = w(f / w.cols(), f % w.cols());
      mask(f / w.cols(), f % w.cols()) = (val < Scalar(0)) ? std::int8_t(-1) : std::int8_t(1);
    }

    auto& ot = out.tensors[ti];
    ot.name = name;
    ot.mask = std::move(mask);
    ot.density = static_cast<double>(n_alive - k) / static_cast<double>(n);
  }
  return out;
}

// Every weight becomes mask * init_scale: an exactly ternary parameter set.
template <class Scalar>
TensorSet<Scalar> to_init(const Connectome& c, const ModelConfig& cfg) {
  TensorSet<Scalar> p = TensorSet<Scalar>::zeros(cfg);
  auto plist = p.tensor_list();
  if (plist.size() != c.tensors.size())
    throw ShapeError("to_init: connectome does not match model config");
  const Scalar scale = static_cast<Scalar>(c.init_scale);
  for (std::size_t ti = 0; ti < plist.size(); ++ti) {
    const auto& ct = c.tensors[ti];
    auto& m = *plist[ti].second;
    if (plist[ti].first != ct.name || m.rows() != ct.mask.rows() || m.cols() != ct.mask.cols())
      throw ShapeError("to_init: tensor '" + plist[ti].first + "' does not match connectome");
    for (Index r = 0; r < m.rows(); ++r)
      for (Index col = 0; col < m.cols(); ++col) {
        std::int8_t v = ct.mask(r, col);
        m(r, col) = (v == 0) ? Scalar(0) : (v > 0 ? scale : -scale);
      }
  }
  return p;
}

// Forces weights at masked (zero) positions to exactly zero.
template <class Scalar>
void apply_mask(TensorSet<Scalar>& p, const Connectome& c) {
  auto plist = p.tensor_list();
  if (plist.size() != c.tensors.size()) throw ShapeError("apply_mask: tensor count mismatch");
  for (std::size_t ti = 0; ti < plist.size(); ++ti) {
    auto& m = *plist[ti].second;
    const auto& mask = c.tensors[ti].mask;
    if (m.rows() != mask.rows() || m.cols() != mask.cols())
      throw ShapeError("apply_mask: shape mismatch for tensor '" + plist[ti].first + "'");
    m.array() = (mask != 0).select(m.array(), Scalar(0));
  }
}

// True when every zero of the mask is exactly zero in p.
template <class Scalar>
bool mask_respected(const TensorSet<Scalar>& p, const Connectome& c) {
  auto plist = p.tensor_list();
  if (plist.size() != c.tensors.size()) return false;
  for (std::size_t ti = 0; ti < plist.size(); ++ti) {
    const auto& m = *plist[ti].second;
    const auto& mask = c.tensors[ti].mask;
    if (m.rows() != mask.rows() || m.cols() != mask.cols()) return false;
    for (Index r = 0; r < m.rows(); ++r)
      for (Index col = 0; col < m.cols(); ++col)
        if (mask(r, col) == 0 && m(r, col) != Scalar(0)) return false;
  }
  return true;
}

}  // namespace conlm
