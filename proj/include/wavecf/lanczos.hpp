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

#ifndef WAVECF_LANCZOS_HPP_
#define WAVECF_LANCZOS_HPP_

#include <algorithm>
#include <cstdint>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "core.hpp"

namespace wavecf {

struct LanczosOptions {
  Index block_size = 4;
  Index max_basis = 0;  // 0: min(n, max(2q + 2b, q + 40))
  double tol = 1e-9;    // residual norm ||A y - theta y|| per wanted pair
  int max_restarts = 1000;
  std::uint64_t seed = 0;
};

struct LanczosResult {
  Vector values;     // ascending
  Matrix vectors;    // n x q, orthonormal columns
  Vector residuals;  // ||A y_i - theta_i y_i||
  int restarts = 0;
  Index matvecs = 0;
};

namespace detail {

/**
 * Orthonormalizes the columns of `p` against `basis` and each other using
 * two passes of classical Gram-Schmidt. A column that collapses (the block
 * spans an invariant subspace) is replaced by a fresh random direction.
 */
inline void orthonormalize_block(Matrix& p, const Eigen::Ref<const Matrix>& basis,
                                 Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = p.rows();
  for (Index c = 0; c < p.cols(); ++c) {
    for (int attempt = 0;; ++attempt) {
      const double before = p.col(c).norm();
      for (int pass = 0; pass < 2; ++pass) {
        if (basis.cols() > 0) p.col(c) -= basis * (basis.transpose() * p.col(c));
        if (c > 0) p.col(c) -= p.leftCols(c) * (p.leftCols(c).transpose() * p.col(c));
      }
      const double after = p.col(c).norm();
      if (after > 1e-10 * std::max(before, 1e-300) && after > 1e-300) {
        p.col(c) /= after;
        break;
      }
      if (attempt > 8) throw NumericalError("Lanczos: unable to extend the Krylov basis");
      for (Index r = 0; r < n; ++r) p(r, c) = normal(rng);
    }
  }
}

// Deterministic sign: the entry of largest magnitude is positive.
inline void normalize_signs(Matrix& v) {
  for (Index c = 0; c < v.cols(); ++c) {
    Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) = -v.col(c);
  }
}

}  // namespace detail

/**
 * Smallest `q` eigenpairs of a symmetric operator using only block
 * products `op.apply(X, Y)` (Y = A X).
 *
 * Block Lanczos with full reorthogonalization and thick restarts: the
 * Rayleigh quotient T = V^T A V is kept explicitly alongside A V, so a
 * restart just rotates both onto the leading Ritz vectors. Once the basis
 * spans the whole space the Ritz pairs are exact, which makes q = n
 * a dense solve in disguise. Blocks recover eigenvalue multiplicities up to
 * the block size; breakdown re-seeds with random directions, which covers
 * the rest.
 */
template <class Operator>
LanczosResult lanczos_smallest(const Operator& op, Index n, Index q,
                               const LanczosOptions& opt = {}) {
  if (q < 1 || q > n) throw ConfigError("eigenpair count must lie in [1, n]");
  if (!(opt.tol > 0)) throw ConfigError("eigensolver tolerance must be positive");
  const Index b = std::max<Index>(1, std::min(opt.block_size, n));
  // Basis size is a multiple of the block size below n so that every
  // expansion appends a whole block and the Krylov relation survives restarts.
  Index mmax = opt.max_basis > 0 ? opt.max_basis : std::max(2 * q + 2 * b, q + 40);
  mmax = std::max(mmax, q + b);
  mmax = std::min(n, (mmax + b - 1) / b * b);

  Rng rng = make_rng(opt.seed, "lanczos");
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix v(n, mmax), av(n, mmax), t = Matrix::Zero(mmax, mmax);
  Matrix p(n, b);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < b; ++c) p(r, c) = normal(rng);
  detail::orthonormalize_block(p, v.leftCols(0), rng);

  LanczosResult res;
  Index j = 0;
  Matrix ap;
  while (true) {
    while (j < mmax) {
      const Index bs = std::min<Index>(p.cols(), mmax - j);
      v.middleCols(j, bs) = p.leftCols(bs);
      op.apply(v.middleCols(j, bs), ap);
      res.matvecs += bs;
      av.middleCols(j, bs) = ap;
      Matrix coupling = v.leftCols(j + bs).transpose() * ap;
      t.block(0, j, j + bs, bs) = coupling;
      t.block(j, 0, bs, j) = coupling.topRows(j).transpose();
      auto diag = t.block(j, j, bs, bs);
      Matrix sym = 0.5 * (diag + diag.transpose());
      diag = sym;
      j += bs;
      if (j < n) {
        p = ap.leftCols(std::min<Index>(ap.cols(), n - j));
        detail::orthonormalize_block(p, v.leftCols(j), rng);
      }
    }

    Eigen::SelfAdjointEigenSolver<Matrix> es(t.topLeftCorner(j, j));
    if (es.info() != Eigen::Success) throw NumericalError("Lanczos: projected eigenproblem failed");
    const Vector& theta = es.eigenvalues();
    const Matrix& s = es.eigenvectors();

    Matrix ritz = v.leftCols(j) * s.leftCols(q);
    Matrix aritz = av.leftCols(j) * s.leftCols(q);
    Vector resid(q);
    for (Index i = 0; i < q; ++i) resid[i] = (aritz.col(i) - theta[i] * ritz.col(i)).norm();

    const bool complete = j == n;
    if (complete || resid.maxCoeff() <= opt.tol) {
      res.values = theta.head(q);
      res.vectors = std::move(ritz);
      res.residuals = std::move(resid);
      detail::normalize_signs(res.vectors);
      return res;
    }
    if (res.restarts >= opt.max_restarts) {
      std::ostringstream os;
      os << "Lanczos did not converge after " << res.restarts
         << " restarts; residual norms:";
      for (Index i = 0; i < q; ++i) os << ' ' << resid[i];
      throw NumericalError(os.str());
    }
    ++res.restarts;

    const Index room = std::max(b, (mmax - q) / 2 / b * b);
    const Index keep = mmax - room;
    Matrix vk = v.leftCols(j) * s.leftCols(keep);
    Matrix avk = av.leftCols(j) * s.leftCols(keep);
    v.leftCols(keep) = vk;
    av.leftCols(keep) = avk;
    t.setZero();
    t.topLeftCorner(keep, keep).diagonal() = theta.head(keep);
    j = keep;
  }
}

}  // namespace wavecf

#endif  // WAVECF_LANCZOS_HPP_
