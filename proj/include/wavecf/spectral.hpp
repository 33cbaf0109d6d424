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

#ifndef WAVECF_SPECTRAL_HPP_
#define WAVECF_SPECTRAL_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "core.hpp"
#include "graph.hpp"
#include "lanczos.hpp"

namespace wavecf {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Retained low-frequency eigenpairs of the normalized Laplacian.
struct SpectralDecomposition {
  Vector lambdas;    // ascending
  Vector shifted;    // 1 + lambda
  Matrix phi;        // N x Q
  Vector residuals;  // ||L phi_i - lambda_i phi_i||

  Index q() const { return lambdas.size(); }
  Index n() const { return phi.rows(); }
};

/// min(N, max(64, ceil(0.02 N))).
inline Index default_num_eigen(Index n) {
  const auto frac = static_cast<Index>(std::ceil(0.02 * static_cast<double>(n)));
  return std::min(n, std::max<Index>(64, frac));
}

inline SpectralDecomposition eigensolve(const BipartiteLaplacian& lap, Index q,
                                        const LanczosOptions& opt = {}) {
  auto r = lanczos_smallest(lap.laplacian, lap.size(), q, opt);
  SpectralDecomposition d;
  d.lambdas = std::move(r.values);
  d.shifted = d.lambdas.array() + 1.0;
  d.phi = std::move(r.vectors);
  d.residuals = std::move(r.residuals);
  return d;
}

// ---------------------------------------------------------------------------
// Box-Cox

inline double boxcox(double x, double kappa) {
  if (kappa == 0.0) return std::log(x);
  if (std::abs(kappa) < 1e-3) return std::expm1(kappa * std::log(x)) / kappa;
  return (std::pow(x, kappa) - 1.0) / kappa;
}

/**
 * Profile log-likelihood of the Box-Cox parameter for positive data x:
 *   -(n/2) log(var(y)) + (kappa - 1) sum log x,   var with divisor n.
 */
inline double boxcox_loglik(const Vector& x, double kappa) {
  const auto n = static_cast<double>(x.size());
  Vector y = x.unaryExpr([kappa](double v) { return boxcox(v, kappa); });
  const double mean = y.mean();
  const double var = (y.array() - mean).square().sum() / n;
  if (!(var > 0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * n * std::log(var) + (kappa - 1.0) * x.array().log().sum();
}

struct BoxCoxResult {
  double kappa = 1.0;
  Vector transformed;
  double mean = 0.0;
  double stddev = 0.0;  // sample, divisor Q - 1
  double sum = 0.0;
  double loglik = 0.0;
  bool degenerate = false;
};

inline constexpr double kKappaMin = -5.0;
inline constexpr double kKappaMax = 5.0;

inline BoxCoxResult boxcox_with_kappa(const Vector& x, double kappa, bool degenerate = false) {
  BoxCoxResult r;
  r.kappa = kappa;
  r.degenerate = degenerate;
  r.transformed = x.unaryExpr([kappa](double v) { return boxcox(v, kappa); });
  const auto n = static_cast<double>(x.size());
  r.sum = r.transformed.sum();
  r.mean = r.sum / n;
  r.stddev = degenerate ? 0.0
                        : std::sqrt((r.transformed.array() - r.mean).square().sum() / (n - 1.0));
  r.loglik = boxcox_loglik(x, kappa);
  return r;
}

/**
 * Maximum-likelihood Box-Cox fit over kappa in [-5, 5]: a 0.01 grid locates
 * the peak, golden-section search refines it to 1e-7.
 */
inline BoxCoxResult boxcox_fit(const Vector& x) {
  if (x.size() < 2) throw ConfigError("Box-Cox fit needs at least two values");
  if ((x.array() <= 0).any()) throw NumericalError("Box-Cox input must be strictly positive");
  if (x.maxCoeff() - x.minCoeff() <= 1e-12 * x.maxCoeff()) {
    warn("Box-Cox input is constant; using kappa = 1");
    return boxcox_with_kappa(x, 1.0, true);
  }
  auto ll = [&](double k) { return boxcox_loglik(x, k); };

  constexpr double step = 0.01;
  const int steps = static_cast<int>(std::lround((kKappaMax - kKappaMin) / step));
  double best_k = kKappaMin, best_ll = ll(kKappaMin);
  for (int s = 1; s <= steps; ++s) {
    const double k = kKappaMin + step * s;
    const double v = ll(k);
    if (v > best_ll) {
      best_ll = v;
      best_k = k;
    }
  }
  double lo = std::max(kKappaMin, best_k - step);
  double hi = std::min(kKappaMax, best_k + step);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo), d = lo + inv_phi * (hi - lo);
  double fc = ll(c), fd = ll(d);
  while (hi - lo > 1e-7) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = ll(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = ll(d);
    }
  }
  const double refined = 0.5 * (lo + hi);
  if (ll(refined) > best_ll) best_k = refined;
  return boxcox_with_kappa(x, best_k);
}

// ---------------------------------------------------------------------------
// Adaptive transfer function

/// Which eigenvalue form sits inside the exponent.
enum class ExponentBase {
  power,   // shifted^kappa, as in the printed transfer function
  boxcox,  // the Box-Cox value itself
};

/// How the inverse wavelet response is formed.
enum class InverseMode {
  reciprocal,     // 1 / g_t: the true inverse on the retained eigenspace
  negated_scale,  // g_{-t}: substitute -t into the band multipliers
};

/**
 * Frequency band of a Box-Cox value: 0 below the mean, then one band per
 * standard deviation up to two. Band edges belong to the upper band.
 */
inline int transfer_band(const BoxCoxResult& bc, double transformed) {
  if (transformed < bc.mean) return 0;
  if (transformed < bc.mean + bc.stddev) return 1;
  if (transformed < bc.mean + 2.0 * bc.stddev) return 2;
  return 3;
}

inline double band_multiplier(const BoxCoxResult& bc, int band, double t) {
  const double c = bc.sum;
  if (band == 0) return 1.0 + 2.0 * t / c;
  return 1.0 + (band + 2) * t / c + bc.stddev;
}

inline double exponent_base(const BoxCoxResult& bc, double shifted, double transformed,
                            ExponentBase mode) {
  if (mode == ExponentBase::boxcox) return transformed;
  return bc.kappa == 0.0 ? 1.0 : std::pow(shifted, bc.kappa);
}

/// g_t for one eigenvalue.
inline double transfer(const BoxCoxResult& bc, double shifted, double transformed, double t,
                       ExponentBase mode = ExponentBase::power) {
  const int band = transfer_band(bc, transformed);
  return std::exp(-exponent_base(bc, shifted, transformed, mode) * band_multiplier(bc, band, t));
}

struct FilterOptions {
  ExponentBase exponent = ExponentBase::power;
  InverseMode inverse = InverseMode::reciprocal;
};

/// Diagonal responses G_t and its inverse counterpart over the retained spectrum.
struct AdaptiveFilter {
  double t = 0.0;
  Vector response;
  Vector inverse_response;
  std::vector<int> band;
};

inline AdaptiveFilter make_filter(const SpectralDecomposition& decomp, const BoxCoxResult& bc,
                                  double t, const FilterOptions& opt = {}) {
  if (!(bc.sum > 0)) throw NumericalError("transfer function needs a positive Box-Cox sum");
  const Index q = decomp.q();
  AdaptiveFilter f;
  f.t = t;
  f.response.resize(q);
  f.inverse_response.resize(q);
  f.band.resize(static_cast<std::size_t>(q));
  for (Index i = 0; i < q; ++i) {
    const double s = decomp.shifted[i], y = bc.transformed[i];
    const double base = exponent_base(bc, s, y, opt.exponent);
    const int band = transfer_band(bc, y);
    f.band[static_cast<std::size_t>(i)] = band;
    f.response[i] = std::exp(-base * band_multiplier(bc, band, t));
    f.inverse_response[i] = opt.inverse == InverseMode::reciprocal
                                ? std::exp(base * band_multiplier(bc, band, t))
                                : std::exp(-base * band_multiplier(bc, band, -t));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Wavelet bases

/// Phi diag(g) Phi^T, dense. For small graphs and checks.
inline Matrix dense_wavelet(const SpectralDecomposition& decomp, const Vector& response) {
  return decomp.phi * response.asDiagonal() * decomp.phi.transpose();
}

/// Phi diag(g) Phi^T with entries of magnitude below `drop` removed.
inline SparseMatrix sparse_wavelet(const SpectralDecomposition& decomp, const Vector& response,
                                   double drop) {
  const Index n = decomp.n();
  const Matrix scaled = decomp.phi * response.asDiagonal();
  std::vector<Eigen::Triplet<double>> trips;
  for (Index j = 0; j < n; ++j) {
    // Lower triangle of column j, mirrored for exact symmetry.
    Vector col = decomp.phi.bottomRows(n - j) * scaled.row(j).transpose();
    for (Index k = 0; k < col.size(); ++k) {
      const double v = col[k];
      if (!(std::abs(v) >= drop)) continue;
      const Index i = j + k;
      trips.emplace_back(i, j, v);
      if (i != j) trips.emplace_back(j, i, v);
    }
  }
  SparseMatrix s(n, n);
  s.setFromTriplets(trips.begin(), trips.end());
  s.makeCompressed();
  return s;
}

struct WaveletPair {
  SparseMatrix psi;      // Psi_t
  SparseMatrix psi_inv;  // inverse-side basis
  double drop_threshold = 1e-7;
};

inline WaveletPair build_wavelet_pair(const SpectralDecomposition& decomp,
                                      const AdaptiveFilter& filter, double drop_threshold = 1e-7) {
  return {sparse_wavelet(decomp, filter.response, drop_threshold),
          sparse_wavelet(decomp, filter.inverse_response, drop_threshold), drop_threshold};
}

inline WaveletPair build_wavelet_pair(const SpectralDecomposition& decomp, const BoxCoxResult& bc,
                                      double t, double drop_threshold = 1e-7,
                                      const FilterOptions& opt = {}) {
  return build_wavelet_pair(decomp, make_filter(decomp, bc, t, opt), drop_threshold);
}

// ---------------------------------------------------------------------------
// Spectral cache: everything training needs from the eigensolve, keyed by
// the content hash of the dataset the graph was built from.

struct SpectralCache {
  std::uint64_t dataset_hash = 0;
  std::uint64_t seed = 0;
  double tol = 0.0;
  Index block_size = 4;
  double scale_t = 1.0;
  double drop_threshold = 1e-7;
  std::size_t num_users = 0;
  SpectralDecomposition decomp;
  BoxCoxResult boxcox;
};

inline constexpr std::string_view kSpectralMagic = "wavelet-cf-spectral";
inline constexpr int kSpectralVersion = 1;

inline void write_spectral_cache(std::ostream& out, const SpectralCache& c) {
  const auto& d = c.decomp;
  out << kSpectralMagic << " v" << kSpectralVersion << '\n'
      << "dataset " << hex64(c.dataset_hash) << '\n'
      << "n " << d.n() << '\n'
      << "q " << d.q() << '\n'
      << "users " << c.num_users << '\n'
      << "seed " << c.seed << '\n'
      << "tol " << format_double(c.tol) << '\n'
      << "block " << c.block_size << '\n'
      << "scale_t " << format_double(c.scale_t) << '\n'
      << "drop_threshold " << format_double(c.drop_threshold) << '\n'
      << "kappa " << format_double(c.boxcox.kappa) << ' ' << (c.boxcox.degenerate ? 1 : 0) << '\n';
  auto row = [&](std::string_view name, const Vector& v) {
    out << name;
    for (Index i = 0; i < v.size(); ++i) out << ' ' << format_double(v[i]);
    out << '\n';
  };
  row("lambdas", d.lambdas);
  row("residuals", d.residuals);
  out << "phi\n";
  for (Index r = 0; r < d.n(); ++r) {
    for (Index k = 0; k < d.q(); ++k) {
      if (k) out << ' ';
      out << format_double(d.phi(r, k));
    }
    out << '\n';
  }
  out << "end\n";
}

inline SpectralCache read_spectral_cache(std::istream& in) {
  auto bad = [](const std::string& why) { return DataError("spectral cache: " + why); };
  std::string line, key;
  if (!std::getline(in, line)) throw bad("empty file");
  {
    std::istringstream h(line);
    std::string magic, version;
    h >> magic >> version;
    if (magic != kSpectralMagic) throw bad("not a spectral cache");
    if (version != "v" + std::to_string(kSpectralVersion))
      throw bad("unsupported version '" + version + "'");
  }
  auto field = [&](std::string_view name) {
    if (!std::getline(in, line)) throw bad("truncated");
    std::istringstream is(line);
    is >> key;
    if (key != name) throw bad("expected field '" + std::string(name) + "'");
    std::string rest;
    std::getline(is, rest);
    if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
    return rest;
  };
  // strtod rather than operator>>, which rejects subnormals.
  auto parse_into = [&](const std::string& s, double* out, Index count) {
    const char* p = s.c_str();
    for (Index i = 0; i < count; ++i) {
      char* end = nullptr;
      out[i] = std::strtod(p, &end);
      if (end == p) throw bad("truncated numeric row");
      p = end;
    }
  };
  auto parse_vec = [&](const std::string& s, Index count) {
    Vector v(count);
    parse_into(s, v.data(), count);
    return v;
  };
  SpectralCache c;
  c.dataset_hash = std::stoull(field("dataset"), nullptr, 16);
  const Index n = std::stol(field("n"));
  const Index q = std::stol(field("q"));
  c.num_users = std::stoul(field("users"));
  c.seed = std::stoull(field("seed"));
  c.tol = std::stod(field("tol"));
  c.block_size = std::stol(field("block"));
  c.scale_t = std::stod(field("scale_t"));
  c.drop_threshold = std::stod(field("drop_threshold"));
  double kappa = 1.0;
  int degenerate = 0;
  {
    std::istringstream is(field("kappa"));
    is >> kappa >> degenerate;
  }
  c.decomp.lambdas = parse_vec(field("lambdas"), q);
  c.decomp.residuals = parse_vec(field("residuals"), q);
  c.decomp.shifted = c.decomp.lambdas.array() + 1.0;
  field("phi");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(n, q);
  for (Index r = 0; r < n; ++r) {
    if (!std::getline(in, line)) throw bad("truncated eigenvector block");
    parse_into(line, rows.row(r).data(), q);
  }
  c.decomp.phi = rows;
  if (!std::getline(in, line) || line != "end") throw bad("missing end marker");
  c.boxcox = boxcox_with_kappa(c.decomp.shifted, kappa, degenerate != 0);
  return c;
}

inline void save_spectral_cache(const std::string& path, const SpectralCache& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_spectral_cache(out, c);
}

inline SpectralCache load_spectral_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  return read_spectral_cache(in);
}

}  // namespace wavecf

#endif  // WAVECF_SPECTRAL_HPP_
