// SPDX-License-Identifier: Apache-2.0
//
// Bias-free decoder-only transformer: parameter-free RMSNorm, rotary position
// embeddings on queries/keys, pre-norm residual blocks, GELU MLP, untied (or
// optionally tied) unembedding. The model consists solely of 2D weight
// matrices. Forward evaluation, next-token cross-entropy loss and hand-written
// reverse-mode gradients for every matrix live here, templated on the scalar
// so the identical code path runs in float for training and double for
// gradient checks.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "conlm/common.hpp"
#include "conlm/rng.hpp"

namespace conlm {

struct ModelConfig {
  Index n_layers = 2;
  Index d_model = 64;
  Index n_heads = 2;
  Index vocab_size = 258;
  Index max_seq_len = 256;
  double rope_base = 10000.0;
  double rms_eps = 1e-6;
  double init_std = 0.02;
  bool tied_embeddings = false;

  Index head_dim() const { return d_model / n_heads; }
  Index d_ff() const { return 4 * d_model; }

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || vocab_size < 1 || max_seq_len < 1)
      throw ConfigError("ModelConfig: all counts must be >= 1");
    if (d_model % n_heads != 0)
      throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0)
      throw ConfigError("ModelConfig: head dimension must be even (rotary pairs)");
    if (!(rope_base > 0.0) || !(rms_eps > 0.0) || !(init_std > 0.0))
      throw ConfigError("ModelConfig: rope_base, rms_eps, init_std must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

// The named 2D matrices of one model. Shapes derive entirely from ModelConfig.
// The same container is reused for gradients and optimizer moments, which are
// shape-congruent by construction.
template <class Scalar>
struct TensorSet {
  struct Block {
    Mat<Scalar> wq, wk, wv, wo;  // [D,D]
    Mat<Scalar> win;             // [D,4D]
    Mat<Scalar> wout;            // [4D,D]
  };

  ModelConfig config;
  Mat<Scalar> emb;    // [V,D]
  std::vector<Block> blocks;
  Mat<Scalar> unemb;  // [D,V]; empty when config.tied_embeddings

  static TensorSet zeros(const ModelConfig& cfg) {
    cfg.validate();
    TensorSet p;
    p.config = cfg;
    p.emb = Mat<Scalar>::Zero(cfg.vocab_size, cfg.d_model);
    p.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& b : p.blocks) {
      b.wq = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
      b.wk = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
      b.wv = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
      b.wo = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
      b.win = Mat<Scalar>::Zero(cfg.d_model, cfg.d_ff());
      b.wout = Mat<Scalar>::Zero(cfg.d_ff(), cfg.d_model);
    }
    if (!cfg.tied_embeddings) p.unemb = Mat<Scalar>::Zero(cfg.d_model, cfg.vocab_size);
    return p;
  }

  // Every entry drawn i.i.d. from N(0, init_std^2), in fixed tensor order.
  static TensorSet normal_init(const ModelConfig& cfg, std::uint64_t seed) {
    TensorSet p = zeros(cfg);
    Rng rng(seed);
    p.for_each_tensor([&](const std::string&, Mat<Scalar>& m) {
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
          m(r, c) = static_cast<Scalar>(rng.next_normal() * cfg.init_std);
    });
    return p;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    f(std::string("emb"), emb);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string pre = "b" + std::to_string(i) + ".";
      f(pre + "wq", blocks[i].wq);
      f(pre + "wk", blocks[i].wk);
      f(pre + "wv", blocks[i].wv);
      f(pre + "wo", blocks[i].wo);
      f(pre + "win", blocks[i].win);
      f(pre + "wout", blocks[i].wout);
    }
    if (!config.tied_embeddings) f(std::string("unemb"), unemb);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<TensorSet*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<Scalar>& m) { f(name, static_cast<const Mat<Scalar>&>(m)); });
  }

  std::vector<std::pair<std::string, Mat<Scalar>*>> tensor_list() {
    std::vector<std::pair<std::string, Mat<Scalar>*>> out;
    for_each_tensor([&](const std::string& n, Mat<Scalar>& m) { out.emplace_back(n, &m); });
    return out;
  }

  std::vector<std::pair<std::string, const Mat<Scalar>*>> tensor_list() const {
    std::vector<std::pair<std::string, const Mat<Scalar>*>> out;
    for_each_tensor([&](const std::string& n, const Mat<Scalar>& m) { out.emplace_back(n, &m); });
    return out;
  }

  Index n_weights() const {
    Index n = 0;
    for_each_tensor([&](const std::string&, const Mat<Scalar>& m) { n += m.size(); });
    return n;
  }

  bool same_shapes(const TensorSet& o) const {
    auto a = tensor_list();
    auto b = o.tensor_list();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].first != b[i].first) return false;
      if (a[i].second->rows() != b[i].second->rows()) return false;
      if (a[i].second->cols() != b[i].second->cols()) return false;
    }
    return true;
  }

  void set_zero() {
    for_each_tensor([](const std::string&, Mat<Scalar>& m) { m.setZero(); });
  }

  template <class S2>
  TensorSet<S2> cast() const {
    TensorSet<S2> out = TensorSet<S2>::zeros(config);
    auto src = tensor_list();
    auto dst = out.tensor_list();
    for (std::size_t i = 0; i < src.size(); ++i)
      *dst[i].second = src[i].second->template cast<S2>();
    return out;
  }
};

template <class Scalar>
using ParameterSet = TensorSet<Scalar>;
template <class Scalar>
using GradientSet = TensorSet<Scalar>;

// ---------------------------------------------------------------------------
// Elementary pieces
// ---------------------------------------------------------------------------

// y_i = x_i / sqrt(mean_j(x_j^2) + eps). No learned scale.
template <class Scalar>
Vec<Scalar> rmsnorm(const Vec<Scalar>& x, double eps) {
  if (x.size() == 0) throw ConfigError("rmsnorm: empty vector");
  double ms = static_cast<double>(x.squaredNorm()) / static_cast<double>(x.size()) + eps;
  return x * static_cast<Scalar>(1.0 / std::sqrt(ms));
}

template <class Scalar>
Mat<Scalar> rmsnorm_rows(const Mat<Scalar>& x, double eps) {
  Mat<Scalar> y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double ms = static_cast<double>(x.row(r).squaredNorm()) / n + eps;
    y.row(r) = x.row(r) * static_cast<Scalar>(1.0 / std::sqrt(ms));
  }
  return y;
}

// dL/dx given dL/dy for y = rmsnorm(x): dx = dy/r - x * (dy.x) / (n r^3).
template <class Scalar>
void rmsnorm_rows_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy, double eps,
                           Mat<Scalar>& dx_accum) {
  const double n = static_cast<double>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double ms = static_cast<double>(x.row(r).squaredNorm()) / n + eps;
    double rinv = 1.0 / std::sqrt(ms);
    double dot = static_cast<double>(dy.row(r).dot(x.row(r)));
    dx_accum.row(r) += dy.row(r) * static_cast<Scalar>(rinv) -
                       x.row(r) * static_cast<Scalar>(dot * rinv * rinv * rinv / n);
  }
}

// Rotates consecutive pairs (v_{2i}, v_{2i+1}) by angle position*base^(-2i/d).
template <class Scalar>
Vec<Scalar> rope_rotate(const Vec<Scalar>& v, Index position, double base) {
  if (v.size() % 2 != 0) throw ConfigError("rope_rotate: vector length must be even");
  const Index d = v.size();
  Vec<Scalar> out(d);
  for (Index i = 0; i < d / 2; ++i) {
    double theta = static_cast<double>(position) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    double c = std::cos(theta), s = std::sin(theta);
    double a = static_cast<double>(v(2 * i)), b = static_cast<double>(v(2 * i + 1));
    out(2 * i) = static_cast<Scalar>(a * c - b * s);
    out(2 * i + 1) = static_cast<Scalar>(a * s + b * c);
  }
  return out;
}

namespace detail {

// cos/sin table for sequence positions 0..T-1 over one head's pair frequencies.
struct RopeTable {
  // cos_[t*half + i], sin_[t*half + i]
  std::vector<double> cos_, sin_;
  Index half = 0;

  RopeTable(Index t_max, Index head_dim, double base) : half(head_dim / 2) {
    cos_.resize(static_cast<std::size_t>(t_max * half));
    sin_.resize(static_cast<std::size_t>(t_max * half));
    for (Index i = 0; i < half; ++i) {
      double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      for (Index t = 0; t < t_max; ++t) {
        double theta = static_cast<double>(t) * freq;
        cos_[static_cast<std::size_t>(t * half + i)] = std::cos(theta);
        sin_[static_cast<std::size_t>(t * half + i)] = std::sin(theta);
      }
    }
  }
};

// In-place rotation of each row of a [T, head_dim] block; dir=-1 inverts.
template <class Scalar, class Block>
void rope_rows(Block&& blk, const RopeTable& tab, int dir) {
  const Index t_len = blk.rows();
  for (Index t = 0; t < t_len; ++t) {
    for (Index i = 0; i < tab.half; ++i) {
      double c = tab.cos_[static_cast<std::size_t>(t * tab.half + i)];
      double s = dir * tab.sin_[static_cast<std::size_t>(t * tab.half + i)];
      double a = static_cast<double>(blk(t, 2 * i)), b = static_cast<double>(blk(t, 2 * i + 1));
      blk(t, 2 * i) = static_cast<Scalar>(a * c - b * s);
      blk(t, 2 * i + 1) = static_cast<Scalar>(a * s + b * c);
    }
  }
}

inline double gelu_tanh(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
}

inline double gelu_tanh_grad(double x) {
  constexpr double kC = 0.7978845608028654;
  constexpr double kA = 0.044715;
  double u = kC * (x + kA * x * x * x);
  double th = std::tanh(u);
  double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kC * (1.0 + 3.0 * kA * x * x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward / loss / backward
// ---------------------------------------------------------------------------

template <class Scalar>
struct ForwardTrace {
  struct BlockTrace {
    Mat<Scalar> x_in;               // residual stream entering the block
    Mat<Scalar> xn;                 // rmsnorm(x_in)
    Mat<Scalar> q, k, v;            // [T,D]; q,k already rotated
    std::vector<Mat<Scalar>> att;   // per-head causal softmax [T,T]
    Mat<Scalar> attn_out;           // concatenated head outputs, pre-W_o
    Mat<Scalar> x_mid;              // after attention residual
    Mat<Scalar> xn2;                // rmsnorm(x_mid)
    Mat<Scalar> h_pre;              // xn2 * W_in
    Mat<Scalar> h_act;              // gelu(h_pre)
  };

  Mat<Scalar> x0;       // embedding rows [T,D]
  std::vector<BlockTrace> blocks;
  Mat<Scalar> x_last;   // residual stream after the last block
  Mat<Scalar> xn_last;  // final rmsnorm
  Mat<Scalar> logits;   // [T,V]
};

inline void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw ConfigError("forward: empty token sequence");
  if (static_cast<Index>(tokens.size()) > cfg.max_seq_len)
    throw ConfigError("forward: sequence length " + std::to_string(tokens.size()) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (TokenId t : tokens)
    if (static_cast<Index>(t) >= cfg.vocab_size)
      throw ConfigError("forward: token id " + std::to_string(t) + " out of range");
}

// Returns logits [T, vocab]. Logits at position t depend only on tokens <= t.
template <class Scalar>
Mat<Scalar> forward(const TensorSet<Scalar>& p, std::span<const TokenId> tokens,
                    ForwardTrace<Scalar>* trace = nullptr) {
  const ModelConfig& cfg = p.config;
  check_tokens(cfg, tokens);
  const Index t_len = static_cast<Index>(tokens.size());
  const Index d = cfg.d_model;
  const Index hd = cfg.head_dim();
  const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd)));
  detail::RopeTable rope(t_len, hd, cfg.rope_base);

  Mat<Scalar> x(t_len, d);
  for (Index t = 0; t < t_len; ++t) x.row(t) = p.emb.row(static_cast<Index>(tokens[t]));
  if (trace) {
    trace->x0 = x;
    trace->blocks.assign(static_cast<std::size_t>(cfg.n_layers), {});
  }

  for (Index l = 0; l < cfg.n_layers; ++l) {
    const auto& blk = p.blocks[static_cast<std::size_t>(l)];
    auto* bt = trace ? &trace->blocks[static_cast<std::size_t>(l)] : nullptr;

    Mat<Scalar> xn = rmsnorm_rows(x, cfg.rms_eps);
    Mat<Scalar> q = xn * blk.wq;
    Mat<Scalar> k = xn * blk.wk;
    Mat<Scalar> v = xn * blk.wv;
    for (Index h = 0; h < cfg.n_heads; ++h) {
      detail::rope_rows<Scalar>(q.middleCols(h * hd, hd), rope, +1);
      detail::rope_rows<Scalar>(k.middleCols(h * hd, hd), rope, +1);
    }

    Mat<Scalar> attn_out(t_len, d);
    std::vector<Mat<Scalar>> att_heads;
    if (bt) att_heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (Index h = 0; h < cfg.n_heads; ++h) {
      auto qh = q.middleCols(h * hd, hd);
      auto kh = k.middleCols(h * hd, hd);
      auto vh = v.middleCols(h * hd, hd);
      Mat<Scalar> scores = qh * kh.transpose() * att_scale;
      Mat<Scalar> att = Mat<Scalar>::Zero(t_len, t_len);
      for (Index i = 0; i < t_len; ++i) {
        Scalar mx = scores(i, 0);
        for (Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
        double denom = 0.0;
        for (Index j = 0; j <= i; ++j) {
          double e = std::exp(static_cast<double>(scores(i, j) - mx));
          att(i, j) = static_cast<Scalar>(e);
          denom += e;
        }
        att.row(i).head(i + 1) *= static_cast<Scalar>(1.0 / denom);
      }
      attn_out.middleCols(h * hd, hd) = att * vh;
      if (bt) att_heads.push_back(std::move(att));
    }

    Mat<Scalar> x_mid = x + attn_out * blk.wo;
    Mat<Scalar> xn2 = rmsnorm_rows(x_mid, cfg.rms_eps);
    Mat<Scalar> h_pre = xn2 * blk.win;
    Mat<Scalar> h_act(h_pre.rows(), h_pre.cols());
    for (Index r = 0; r < h_pre.rows(); ++r)
      for (Index c = 0; c < h_pre.cols(); ++c)
        h_act(r, c) = static_cast<Scalar>(detail::gelu_tanh(static_cast<double>(h_pre(r, c))));
    Mat<Scalar> x_out = x_mid + h_act * blk.wout;

    if (bt) {
      bt->x_in = std::move(x);
      bt->xn = std::move(xn);
      bt->q = std::move(q);
      bt->k = std::move(k);
      bt->v = std::move(v);
      bt->att = std::move(att_heads);
      bt->attn_out = std::move(attn_out);
      bt->x_mid = std::move(x_mid);
      bt->xn2 = std::move(xn2);
      bt->h_pre = std::move(h_pre);
      bt->h_act = std::move(h_act);
    }
    x = std::move(x_out);
  }

  Mat<Scalar> xn_last = rmsnorm_rows(x, cfg.rms_eps);
  Mat<Scalar> logits = cfg.tied_embeddings ? Mat<Scalar>(xn_last * p.emb.transpose())
                                           : Mat<Scalar>(xn_last * p.unemb);
  if (trace) {
    trace->x_last = std::move(x);
    trace->xn_last = std::move(xn_last);
    trace->logits = logits;
  }
  return logits;
}

// Mean over positions t of -ln p(token_{t+1} | tokens <= t), natural log.
template <class Scalar>
double loss_from_logits(const Mat<Scalar>& logits, std::span<const TokenId> tokens) {
  const Index t_len = static_cast<Index>(tokens.size());
  double nll = 0.0;
  for (Index t = 0; t + 1 < t_len; ++t) {
    double mx = static_cast<double>(logits.row(t).maxCoeff());
    double denom = 0.0;
    for (Index j = 0; j < logits.cols(); ++j)
      denom += std::exp(static_cast<double>(logits(t, j)) - mx);
    double lse = mx + std::log(denom);
    nll += lse - static_cast<double>(logits(t, static_cast<Index>(tokens[t + 1])));
  }
  return nll / static_cast<double>(t_len - 1);
}

template <class Scalar>
double loss(const TensorSet<Scalar>& p, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw ConfigError("loss: sequence must have length >= 2");
  Mat<Scalar> logits = forward(p, tokens);
  return loss_from_logits(logits, tokens);
}

// Adds scale * d(mean loss)/d(param) into grads; returns the mean loss.
template <class Scalar>
double grad_accumulate(const TensorSet<Scalar>& p, std::span<const TokenId> tokens,
                       TensorSet<Scalar>& grads, double scale) {
  if (tokens.size() < 2) throw ConfigError("backward: sequence must have length >= 2");
  if (!p.same_shapes(grads)) throw ShapeError("backward: gradient shapes mismatch");
  const ModelConfig& cfg = p.config;
  ForwardTrace<Scalar> tr;
  forward(p, tokens, &tr);

  const Index t_len = static_cast<Index>(tokens.size());
  const Index d = cfg.d_model;
  const Index hd = cfg.head_dim();
  const Index n_pred = t_len - 1;
  const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd)));
  detail::RopeTable rope(t_len, hd, cfg.rope_base);

  // Softmax cross-entropy: dlogits = (softmax - onehot) * scale / n_pred.
  double total_nll = 0.0;
  Mat<Scalar> dlogits = Mat<Scalar>::Zero(t_len, cfg.vocab_size);
  const Scalar factor = static_cast<Scalar>(scale / static_cast<double>(n_pred));
  for (Index t = 0; t < n_pred; ++t) {
    double mx = static_cast<double>(tr.logits.row(t).maxCoeff());
    double denom = 0.0;
    for (Index j = 0; j < cfg.vocab_size; ++j)
      denom += std::exp(static_cast<double>(tr.logits(t, j)) - mx);
    const Index target = static_cast<Index>(tokens[t + 1]);
    total_nll += mx + std::log(denom) - static_cast<double>(tr.logits(t, target));
    for (Index j = 0; j < cfg.vocab_size; ++j) {
      double pj = std::exp(static_cast<double>(tr.logits(t, j)) - mx) / denom;
      dlogits(t, j) = static_cast<Scalar>(pj) * factor;
    }
    dlogits(t, target) -= factor;
  }

  Mat<Scalar> d_xn_last;
  if (cfg.tied_embeddings) {
    grads.emb.noalias() += dlogits.transpose() * tr.xn_last;
    d_xn_last = dlogits * p.emb;
  } else {
    grads.unemb.noalias() += tr.xn_last.transpose() * dlogits;
    d_xn_last = dlogits * p.unemb.transpose();
  }

  Mat<Scalar> dx = Mat<Scalar>::Zero(t_len, d);
  rmsnorm_rows_backward(tr.x_last, d_xn_last, cfg.rms_eps, dx);

  for (Index l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& blk = p.blocks[static_cast<std::size_t>(l)];
    auto& gblk = grads.blocks[static_cast<std::size_t>(l)];
    const auto& bt = tr.blocks[static_cast<std::size_t>(l)];

    // MLP: x_out = x_mid + gelu(xn2 * win) * wout
    gblk.wout.noalias() += bt.h_act.transpose() * dx;
    Mat<Scalar> d_h_act = dx * blk.wout.transpose();
    Mat<Scalar> d_h_pre(d_h_act.rows(), d_h_act.cols());
    for (Index r = 0; r < d_h_pre.rows(); ++r)
      for (Index c = 0; c < d_h_pre.cols(); ++c)
        d_h_pre(r, c) = d_h_act(r, c) *
                        static_cast<Scalar>(detail::gelu_tanh_grad(static_cast<double>(bt.h_pre(r, c))));
    gblk.win.noalias() += bt.xn2.transpose() * d_h_pre;
    Mat<Scalar> d_xn2 = d_h_pre * blk.win.transpose();
    rmsnorm_rows_backward(bt.x_mid, d_xn2, cfg.rms_eps, dx);  // dx now holds d(x_mid)

    // Attention: x_mid = x_in + attn_out * wo
    gblk.wo.noalias() += bt.attn_out.transpose() * dx;
    Mat<Scalar> d_attn_out = dx * blk.wo.transpose();

    Mat<Scalar> dq = Mat<Scalar>::Zero(t_len, d);
    Mat<Scalar> dk = Mat<Scalar>::Zero(t_len, d);
    Mat<Scalar> dv = Mat<Scalar>::Zero(t_len, d);
    for (Index h = 0; h < cfg.n_heads; ++h) {
      const auto& att = bt.att[static_cast<std::size_t>(h)];
      auto qh = bt.q.middleCols(h * hd, hd);
      auto kh = bt.k.middleCols(h * hd, hd);
      auto vh = bt.v.middleCols(h * hd, hd);
      auto d_oh = d_attn_out.middleCols(h * hd, hd);

      Mat<Scalar> d_att = d_oh * vh.transpose();
      dv.middleCols(h * hd, hd).noalias() += att.transpose() * d_oh;

      // Softmax backward row-wise; masked entries have att == 0, giving 0.
      Mat<Scalar> d_scores(t_len, t_len);
      for (Index i = 0; i < t_len; ++i) {
        double dot = 0.0;
        for (Index j = 0; j <= i; ++j)
          dot += static_cast<double>(d_att(i, j)) * static_cast<double>(att(i, j));
        for (Index j = 0; j < t_len; ++j)
          d_scores(i, j) = (j <= i) ? att(i, j) * (d_att(i, j) - static_cast<Scalar>(dot))
                                    : Scalar(0);
      }
      Mat<Scalar> d_qh = d_scores * kh * att_scale;
      Mat<Scalar> d_kh = d_scores.transpose() * qh * att_scale;
      detail::rope_rows<Scalar>(d_qh, rope, -1);
      detail::rope_rows<Scalar>(d_kh, rope, -1);
      dq.middleCols(h * hd, hd) = d_qh;
      dk.middleCols(h * hd, hd) = d_kh;
    }

    gblk.wq.noalias() += bt.xn.transpose() * dq;
    gblk.wk.noalias() += bt.xn.transpose() * dk;
    gblk.wv.noalias() += bt.xn.transpose() * dv;
    Mat<Scalar> d_xn = dq * blk.wq.transpose();
    d_xn.noalias() += dk * blk.wk.transpose();
    d_xn.noalias() += dv * blk.wv.transpose();
    rmsnorm_rows_backward(bt.x_in, d_xn, cfg.rms_eps, dx);  // dx now holds d(x_in)
  }

  for (Index t = 0; t < t_len; ++t)
    grads.emb.row(static_cast<Index>(tokens[t])) += dx.row(t);

  return total_nll / static_cast<double>(n_pred);
}

// Exact reverse-mode gradient of loss() with respect to every matrix entry.
template <class Scalar>
TensorSet<Scalar> backward(const TensorSet<Scalar>& p, std::span<const TokenId> tokens) {
  TensorSet<Scalar> grads = TensorSet<Scalar>::zeros(p.config);
  grad_accumulate(p, tokens, grads, 1.0);
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint file ("CNFG")
// ---------------------------------------------------------------------------

void save_checkpoint(const TensorSet<float>& params, const std::string& path);
TensorSet<float> load_checkpoint(const std::string& path);

}  // namespace conlm
