// SPDX-License-Identifier: Apache-2.0
#include "conlm/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <Eigen/QR>

#include "conlm/rng.hpp"

namespace conlm {

namespace {

// r with zero-variance pairs mapped to 0; used only inside model selection and
// pooled scoring where a constant prediction simply scores nothing.
double pearson_or_zero(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Index n = x.size();
  if (n < 2) return 0.0;
  const double mx = x.mean(), my = y.mean();
  Eigen::VectorXd xd = x.array() - mx;
  Eigen::VectorXd yd = y.array() - my;
  const double sx = xd.squaredNorm(), sy = yd.squaredNorm();
  if (sx <= 0.0 || sy <= 0.0) return 0.0;
  double r = xd.dot(yd) / std::sqrt(sx * sy);
  return std::clamp(r, -1.0, 1.0);
}

struct Standardizer {
  Eigen::RowVectorXd mu, sd;

  void fit(const Eigen::MatrixXd& x) {
    mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mu;
    const double denom = static_cast<double>(std::max<Index>(x.rows() - 1, 1));
    sd = (centered.array().square().colwise().sum() / denom).sqrt();
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x.rowwise() - mu;
    for (Index c = 0; c < out.cols(); ++c) {
      if (sd(c) > 1e-12)
        out.col(c) /= sd(c);
      else
        out.col(c).setZero();
    }
    return out;
  }
};

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw ConfigError("pearson: length mismatch");
  if (x.size() < 3) throw ConfigError("pearson: need at least 3 points");
  const double mx = x.mean(), my = y.mean();
  Eigen::VectorXd xd = x.array() - mx;
  Eigen::VectorXd yd = y.array() - my;
  const double sx = xd.squaredNorm(), sy = yd.squaredNorm();
  if (sx <= 0.0) throw ZeroVarianceError("pearson: x has zero variance");
  if (sy <= 0.0) throw ZeroVarianceError("pearson: y has zero variance");
  return std::clamp(xd.dot(yd) / std::sqrt(sx * sy), -1.0, 1.0);
}

Eigen::MatrixXd ridge_fit_multi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda) {
  if (x.rows() != y.rows()) throw ShapeError("ridge_fit: row count mismatch");
  if (x.rows() < 1 || x.cols() < 1) throw ConfigError("ridge_fit: empty system");
  if (lambda < 0.0) throw ConfigError("ridge_fit: lambda must be nonnegative");
  const Index n = x.rows(), d = x.cols();
  Eigen::MatrixXd a(n + d, d);
  a.topRows(n) = x;
  a.bottomRows(d) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + d, y.cols());
  b.topRows(n) = y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (lambda == 0.0 && qr.rank() < d)
    throw NumericError("ridge_fit: singular system at lambda = 0");
  return qr.solve(b);
}

Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  return ridge_fit_multi(x, y, lambda).col(0);
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int e = -3; e <= 5; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

AlignmentResult encoding_alignment(const Eigen::MatrixXd& features,
                                   const Eigen::MatrixXd& responses, int k_folds,
                                   const std::vector<double>& lambda_grid, std::string scope) {
  const Index n = features.rows();
  const Index m = responses.cols();
  if (responses.rows() != n) throw ShapeError("encoding_alignment: row count mismatch");
  if (k_folds < 2) throw ConfigError("encoding_alignment: k_folds must be >= 2");
  if (n < k_folds) throw ConfigError("encoding_alignment: fewer rows than folds");
  if (lambda_grid.empty()) throw ConfigError("encoding_alignment: empty lambda grid");

  // Contiguous fold boundaries.
  std::vector<Index> bound(static_cast<std::size_t>(k_folds) + 1);
  for (int f = 0; f <= k_folds; ++f)
    bound[static_cast<std::size_t>(f)] = static_cast<Index>(f) * n / k_folds;
  auto fold_rows = [&](int f) {
    std::vector<Index> rows;
    for (Index r = bound[static_cast<std::size_t>(f)]; r < bound[static_cast<std::size_t>(f) + 1]; ++r)
      rows.push_back(r);
    return rows;
  };

  AlignmentResult res;
  res.scope = std::move(scope);
  res.n_folds = k_folds;
  Eigen::MatrixXd pooled_pred(n, m);

  for (int f = 0; f < k_folds; ++f) {
    const std::vector<Index> test_rows = fold_rows(f);

    // Inner selection: leave one of the remaining folds out.
    double best_score = -std::numeric_limits<double>::infinity();
    double best_lambda = lambda_grid.front();
    for (double lambda : lambda_grid) {
      double score_sum = 0.0;
      int score_n = 0;
      for (int g = 0; g < k_folds; ++g) {
        if (g == f) continue;
        std::vector<Index> fit_rows, val_rows = fold_rows(g);
        for (int h = 0; h < k_folds; ++h) {
          if (h == f || h == g) continue;
          auto rows = fold_rows(h);
          fit_rows.insert(fit_rows.end(), rows.begin(), rows.end());
        }
        if (fit_rows.empty()) continue;
        Standardizer std_;
        Eigen::MatrixXd x_fit = take_rows(features, fit_rows);
        std_.fit(x_fit);
        Eigen::MatrixXd beta = ridge_fit_multi(std_.apply(x_fit), take_rows(responses, fit_rows), lambda);
        Eigen::MatrixXd pred = std_.apply(take_rows(features, val_rows)) * beta;
        Eigen::MatrixXd truth = take_rows(responses, val_rows);
        double mean_r = 0.0;
        for (Index t = 0; t < m; ++t) mean_r += pearson_or_zero(pred.col(t), truth.col(t));
        score_sum += mean_r / static_cast<double>(m);
        ++score_n;
      }
      const double score = score_sum / static_cast<double>(std::max(score_n, 1));
      if (score > best_score) {
        best_score = score;
        best_lambda = lambda;
      }
    }

    // Fit on the full training portion with the chosen lambda.
    std::vector<Index> train_rows;
    for (int h = 0; h < k_folds; ++h) {
      if (h == f) continue;
      auto rows = fold_rows(h);
      train_rows.insert(train_rows.end(), rows.begin(), rows.end());
    }
    // Held-out rows must never appear in the fitting rows.
    for (Index tr : train_rows)
      if (std::find(test_rows.begin(), test_rows.end(), tr) != test_rows.end())
        throw Error("encoding_alignment: fold bookkeeping violated");

    Standardizer std_;
    Eigen::MatrixXd x_train = take_rows(features, train_rows);
    std_.fit(x_train);
    Eigen::MatrixXd beta =
        ridge_fit_multi(std_.apply(x_train), take_rows(responses, train_rows), best_lambda);
    Eigen::MatrixXd pred = std_.apply(take_rows(features, test_rows)) * beta;
    for (std::size_t i = 0; i < test_rows.size(); ++i)
      pooled_pred.row(test_rows[i]) = pred.row(static_cast<Index>(i));
    res.lambda_per_fold.push_back(best_lambda);
  }

  res.per_target_r.resize(m);
  for (Index t = 0; t < m; ++t)
    res.per_target_r(t) = pearson_or_zero(pooled_pred.col(t), responses.col(t));
  res.mean_r = res.per_target_r.mean();
  return res;
}

Index selected_unit_count(Index n_units, double top_percent) {
  if (!(top_percent > 0.0 && top_percent <= 100.0))
    throw ConfigError("selected_unit_count: top_percent must be in (0, 100]");
  const Index count = static_cast<Index>(
      std::llround(static_cast<double>(n_units) * top_percent / 100.0));
  return std::clamp<Index>(count, 1, n_units);
}

double welch_t(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  if (na < 1 || nb < 1) throw ConfigError("welch_t: empty sample");
  const double ma = a.mean(), mb = b.mean();
  const double va = na > 1 ? (a.array() - ma).square().sum() / (na - 1) : 0.0;
  const double vb = nb > 1 ? (b.array() - mb).square().sum() / (nb - 1) : 0.0;
  const double denom = std::sqrt(std::max(va / na + vb / nb, 1e-24));
  return (ma - mb) / denom;
}

std::vector<std::string> make_nonword_stimuli(const std::vector<std::string>& sentences,
                                              std::uint64_t seed) {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    std::string s = sentences[si];
    Rng rng(mix64(seed, si));
    std::size_t i = 0;
    while (i < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[i]))) {
        ++i;
        continue;
      }
      std::size_t begin = i;
      while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      for (std::size_t j = i - 1; j > begin; --j) {
        std::size_t k = begin + rng.next_below(j - begin + 1);
        std::swap(s[j], s[k]);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace conlm
