// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay and optional connectome masking. Masked
// positions never receive gradient, keep zero moments, and are forced back to
// exactly zero after every step.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "conlm/common.hpp"
#include "conlm/connectome.hpp"
#include "conlm/model.hpp"

namespace conlm {

template <class Scalar>
struct AdamState {
  TensorSet<Scalar> m, v;
  std::int64_t step = 0;

  static AdamState zeros_like(const TensorSet<Scalar>& p) {
    return {TensorSet<Scalar>::zeros(p.config), TensorSet<Scalar>::zeros(p.config), 0};
  }
};

template <class Scalar>
void adamw_step(TensorSet<Scalar>& params, const TensorSet<Scalar>& grads,
                AdamState<Scalar>& state, double lr, double weight_decay, double beta1,
                double beta2, double eps, const Connectome* mask = nullptr) {
  if (!params.same_shapes(grads) || !params.same_shapes(state.m) || !params.same_shapes(state.v))
    throw ShapeError("adamw_step: shape mismatch between params, grads and state");
  auto pl = params.tensor_list();
  auto gl = grads.tensor_list();
  auto ml = state.m.tensor_list();
  auto vl = state.v.tensor_list();
  if (mask && mask->tensors.size() != pl.size())
    throw ShapeError("adamw_step: mask tensor count mismatch");

  state.step += 1;
  const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
  const Scalar inv_corr1 = static_cast<Scalar>(1.0 / corr1);
  const Scalar inv_corr2 = static_cast<Scalar>(1.0 / corr2);
  const Scalar lr_s = static_cast<Scalar>(lr);
  const Scalar wd_s = static_cast<Scalar>(lr * weight_decay);
  const Scalar eps_s = static_cast<Scalar>(eps);

  for (std::size_t ti = 0; ti < pl.size(); ++ti) {
    auto& w = *pl[ti].second;
    const auto& g = *gl[ti].second;
    auto& m = *ml[ti].second;
    auto& v = *vl[ti].second;
    if (!g.allFinite())
      throw NumericError("adamw_step: non-finite gradient in tensor '" + pl[ti].first + "'");

    if (mask) {
      const MaskMat& mk = mask->tensors[ti].mask;
      if (mk.rows() != w.rows() || mk.cols() != w.cols())
        throw ShapeError("adamw_step: mask shape mismatch for tensor '" + pl[ti].first + "'");
      auto alive = (mk != 0);
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g_eff =
          alive.select(g.array(), Scalar(0));
      m.array() = b1 * m.array() + (Scalar(1) - b1) * g_eff;
      v.array() = b2 * v.array() + (Scalar(1) - b2) * g_eff.square();
      w.array() = w.array() - wd_s * w.array() -
                  lr_s * (m.array() * inv_corr1) / ((v.array() * inv_corr2).sqrt() + eps_s);
      w.array() = alive.select(w.array(), Scalar(0));
    } else {
      m.array() = b1 * m.array() + (Scalar(1) - b1) * g.array();
      v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
      w.array() = w.array() - wd_s * w.array() -
                  lr_s * (m.array() * inv_corr1) / ((v.array() * inv_corr2).sqrt() + eps_s);
    }
  }
}

}  // namespace conlm
