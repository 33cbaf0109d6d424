/**
 * Copyright (c) 2026 The wavecf Authors.
 *     All rights reserved.
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing,
 *  software distributed under the License is distributed on an "AS
 *  IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either
 *  express or implied.  See the License for the specific language
 *  governing permissions and limitations under the License.
 */

#ifndef WAVECF_MODEL_HPP_
#define WAVECF_MODEL_HPP_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "spectral.hpp"

namespace wavecf {

struct ModelConfig {
  Index layers = 3;
  Index dim = 64;
  double scale_t = 1.0;
  std::uint64_t seed = 0;
  FilterOptions filter;
  bool materialize_wavelets = false;
  double drop_threshold = 1e-7;

  void validate(std::size_t num_users, std::size_t num_items) const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (!(scale_t >= 0)) throw ConfigError("scale_t must be >= 0");
    if (!(drop_threshold >= 0)) throw ConfigError("drop_threshold must be >= 0");
    const auto limit = std::min(num_users, num_items) / 2;
    if (static_cast<std::size_t>(dim) > limit)
      warn("embedding width " + std::to_string(dim) + " exceeds min(users, items)/2 = " +
           std::to_string(limit));
  }
};

/**
 * Learnable parameters. `theta` holds one attenuation weight per retained
 * frequency and layer.
 */
struct ModelParams {
  Matrix x0;  // users x dim
  Matrix y0;  // items x dim
  std::vector<Matrix> w;
  std::vector<Vector> theta;

  Index layers() const { return static_cast<Index>(w.size()); }

  /// Visits every tensor as a flat contiguous view, in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    f(std::string("x0"), std::span<double>(x0.data(), static_cast<std::size_t>(x0.size())));
    f(std::string("y0"), std::span<double>(y0.data(), static_cast<std::size_t>(y0.size())));
    for (std::size_t l = 0; l < w.size(); ++l)
      f("w" + std::to_string(l), std::span<double>(w[l].data(), static_cast<std::size_t>(w[l].size())));
    for (std::size_t l = 0; l < theta.size(); ++l)
      f("theta" + std::to_string(l),
        std::span<double>(theta[l].data(), static_cast<std::size_t>(theta[l].size())));
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, std::span<double> s) {
          f(name, std::span<const double>(s.data(), s.size()));
        });
  }

  ModelParams zeros_like() const {
    ModelParams z;
    z.x0 = Matrix::Zero(x0.rows(), x0.cols());
    z.y0 = Matrix::Zero(y0.rows(), y0.cols());
    for (const auto& m : w) z.w.push_back(Matrix::Zero(m.rows(), m.cols()));
    for (const auto& t : theta) z.theta.push_back(Vector::Zero(t.size()));
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, std::span<const double> s) {
      for (double v : s) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.w.size() != b.w.size() || a.theta.size() != b.theta.size()) return false;
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    if (!same(a.x0, b.x0) || !same(a.y0, b.y0)) return false;
    for (std::size_t l = 0; l < a.w.size(); ++l)
      if (!same(a.w[l], b.w[l]) || !same(a.theta[l], b.theta[l])) return false;
    return true;
  }
};

/**
 * Embeddings ~ N(0, 0.01^2); W Glorot-uniform with bound sqrt(6/(2 dim));
 * theta starts at one.
 */
inline ModelParams init_params(const ModelConfig& cfg, std::size_t num_users,
                               std::size_t num_items, Index num_freq) {
  Rng rng = make_rng(cfg.seed, "init");
  std::normal_distribution<double> normal(0.0, 0.01);
  const double bound = std::sqrt(6.0 / static_cast<double>(cfg.dim + cfg.dim));
  std::uniform_real_distribution<double> glorot(-bound, bound);
  ModelParams p;
  p.x0.resize(static_cast<Index>(num_users), cfg.dim);
  p.y0.resize(static_cast<Index>(num_items), cfg.dim);
  for (Index k = 0; k < p.x0.size(); ++k) p.x0.data()[k] = normal(rng);
  for (Index k = 0; k < p.y0.size(); ++k) p.y0.data()[k] = normal(rng);
  for (Index l = 0; l < cfg.layers; ++l) {
    Matrix w(cfg.dim, cfg.dim);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = glorot(rng);
    p.w.push_back(std::move(w));
    p.theta.push_back(Vector::Ones(num_freq));
  }
  return p;
}

/**
 * The layer operator Psi_t diag(shifted * H) Psi_t^{-1}, applied through the
 * retained eigenbasis. In the fused form all diagonal factors collapse into
 * one Q-vector between Phi^T and Phi; in the materialized form the
 * thresholded sparse wavelet matrices wrap an inner Phi diag Phi^T.
 */
class SpectralPropagator {
 public:
  SpectralPropagator(const SpectralDecomposition& decomp, const AdaptiveFilter& filter,
                     const WaveletPair* wavelets = nullptr)
      : decomp_(&decomp), filter_(&filter), wavelets_(wavelets) {
    gain_ = wavelets_ ? Vector::Ones(decomp.q())
                      : Vector(filter.response.cwiseProduct(filter.inverse_response));
  }

  const SpectralDecomposition& decomp() const { return *decomp_; }
  const AdaptiveFilter& filter() const { return *filter_; }
  bool materialized() const { return wavelets_ != nullptr; }
  Index num_nodes() const { return decomp_->n(); }
  Index num_freq() const { return decomp_->q(); }

  /// H = sigmoid(g_t * theta).
  Vector attenuation(const Vector& theta) const {
    return filter_->response.cwiseProduct(theta).unaryExpr([](double z) { return sigmoid(z); });
  }

  /// Diagonal placed between Phi^T and Phi for a given H.
  Vector diagonal(const Vector& h) const {
    return decomp_->shifted.cwiseProduct(h).cwiseProduct(gain_);
  }

  /// d(diagonal)/d(theta), elementwise.
  Vector diagonal_theta_jacobian(const Vector& h) const {
    return decomp_->shifted.cwiseProduct(gain_)
        .cwiseProduct(filter_->response)
        .cwiseProduct(h.cwiseProduct((1.0 - h.array()).matrix()));
  }

  /// Operator applied to `a`; `spectral_in` receives Phi^T (inner input).
  Matrix apply(const Matrix& a, const Vector& diag, Matrix& spectral_in) const {
    const Matrix& phi = decomp_->phi;
    if (wavelets_) {
      Matrix inner = wavelets_->psi_inv * a;
      spectral_in = phi.transpose() * inner;
      Matrix out = phi * (diag.asDiagonal() * spectral_in);
      return wavelets_->psi * out;
    }
    spectral_in = phi.transpose() * a;
    return phi * (diag.asDiagonal() * spectral_in);
  }

  /// Adjoint pass. Returns the gradient with respect to `a`; accumulates
  /// the gradient with respect to `diag`.
  Matrix adjoint(const Matrix& d_out, const Vector& diag, const Matrix& spectral_in,
                 Vector& d_diag) const {
    const Matrix& phi = decomp_->phi;
    Matrix d_inner = wavelets_ ? Matrix(phi.transpose() * (wavelets_->psi * d_out))
                               : Matrix(phi.transpose() * d_out);
    d_diag = d_inner.cwiseProduct(spectral_in).rowwise().sum();
    Matrix d_a = phi * (diag.asDiagonal() * d_inner);
    if (wavelets_) return wavelets_->psi_inv * d_a;
    return d_a;
  }

 private:
  const SpectralDecomposition* decomp_;
  const AdaptiveFilter* filter_;
  const WaveletPair* wavelets_;
  Vector gain_;
};

/// Activations of every layer plus the concatenated user/item embeddings.
struct ForwardTrace {
  std::size_t num_users = 0;
  Index dim = 0;
  std::vector<Matrix> z;            // layers+1 stacked activations, N x dim
  std::vector<Matrix> spectral_in;  // per layer, Q x dim
  std::vector<Vector> h;            // per layer attenuation H
  std::vector<Vector> diag;         // per layer fused diagonal
  Matrix users;                     // M x (1+L) dim
  Matrix items;                     // K x (1+L) dim

  Index layers() const { return static_cast<Index>(z.size()) - 1; }
};

inline Matrix stack_embeddings(const ModelParams& p) {
  Matrix z(p.x0.rows() + p.y0.rows(), p.x0.cols());
  z.topRows(p.x0.rows()) = p.x0;
  z.bottomRows(p.y0.rows()) = p.y0;
  return z;
}

/// sigmoid(Psi_t shifted H Psi_t^{-1} Z W) for one layer.
inline Matrix propagate_layer(const Matrix& z, Index layer, const ModelParams& params,
                              const SpectralPropagator& prop, Matrix* spectral_in = nullptr,
                              Vector* h_out = nullptr, Vector* diag_out = nullptr) {
  const auto l = static_cast<std::size_t>(layer);
  if (z.rows() != prop.num_nodes()) throw ConfigError("layer input has wrong node count");
  if (l >= params.w.size()) throw ConfigError("layer index out of range");
  if (z.cols() != params.w[l].rows()) throw ConfigError("layer input has wrong width");
  if (params.theta[l].size() != prop.num_freq())
    throw ConfigError("attenuation weights do not match the retained spectrum");
  Vector h = prop.attenuation(params.theta[l]);
  Vector diag = prop.diagonal(h);
  Matrix sin;
  Matrix pre = prop.apply(z * params.w[l], diag, sin);
  Matrix out = pre.unaryExpr([](double v) { return sigmoid(v); });
  if (spectral_in) *spectral_in = std::move(sin);
  if (h_out) *h_out = std::move(h);
  if (diag_out) *diag_out = std::move(diag);
  return out;
}

inline ForwardTrace forward(const ModelParams& params, const SpectralPropagator& prop) {
  ForwardTrace tr;
  tr.num_users = static_cast<std::size_t>(params.x0.rows());
  tr.dim = params.x0.cols();
  tr.z.push_back(stack_embeddings(params));
  for (Index l = 0; l < params.layers(); ++l) {
    Matrix sin;
    Vector h, diag;
    Matrix next = propagate_layer(tr.z.back(), l, params, prop, &sin, &h, &diag);
    tr.z.push_back(std::move(next));
    tr.spectral_in.push_back(std::move(sin));
    tr.h.push_back(std::move(h));
    tr.diag.push_back(std::move(diag));
  }
  const Index m = params.x0.rows(), k = params.y0.rows(), p = tr.dim;
  const Index width = p * static_cast<Index>(tr.z.size());
  tr.users.resize(m, width);
  tr.items.resize(k, width);
  for (std::size_t l = 0; l < tr.z.size(); ++l) {
    tr.users.middleCols(static_cast<Index>(l) * p, p) = tr.z[l].topRows(m);
    tr.items.middleCols(static_cast<Index>(l) * p, p) = tr.z[l].bottomRows(k);
  }
  return tr;
}

/// Predicted preference x_u . y_i.
inline double score(const ForwardTrace& tr, std::uint32_t u, std::uint32_t i) {
  return tr.users.row(u).dot(tr.items.row(i));
}

/// Scores of one user against every item, without forming the full matrix.
inline void score_row(const ForwardTrace& tr, std::uint32_t u, std::span<double> out) {
  Eigen::Map<Vector> dst(out.data(), static_cast<Index>(out.size()));
  dst.noalias() = tr.items * tr.users.row(u).transpose();
}

/// Scorer callable over concatenated embeddings.
struct EmbeddingScorer {
  const ForwardTrace* trace;
  void operator()(std::uint32_t u, std::span<double> out) const { score_row(*trace, u, out); }
};

}  // namespace wavecf

#endif  // WAVECF_MODEL_HPP_
