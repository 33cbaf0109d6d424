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

#ifndef WAVECF_GRAPH_HPP_
#define WAVECF_GRAPH_HPP_

#include <algorithm>
#include <cmath>
#include <ostream>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "ingest.hpp"

namespace wavecf {

/**
 * Symmetric sparse matrix holding only the upper triangle (row <= col) in
 * compressed rows. (i,j) and (j,i) share one stored value, so symmetry is
 * exact.
 */
class SparseSymMatrix {
 public:
  struct Entry {
    Index row;
    Index col;
    double value;
  };

  SparseSymMatrix() = default;

  /// Entries may name either triangle; duplicates are summed.
  SparseSymMatrix(Index n, std::vector<Entry> entries) : n_(n) {
    for (auto& e : entries) {
      if (e.row < 0 || e.col < 0 || e.row >= n || e.col >= n)
        throw DataError("sparse entry out of range");
      if (e.row > e.col) std::swap(e.row, e.col);
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (!cols_.empty() && k > 0 && entries[k].row == entries[k - 1].row &&
          entries[k].col == entries[k - 1].col) {
        vals_.back() += entries[k].value;
        continue;
      }
      cols_.push_back(entries[k].col);
      vals_.push_back(entries[k].value);
      ++row_ptr_[static_cast<std::size_t>(entries[k].row) + 1];
    }
    for (Index r = 0; r < n; ++r) row_ptr_[r + 1] += row_ptr_[r];
  }

  Index size() const { return n_; }

  /// Stored (upper-triangle) entry count.
  std::size_t stored() const { return vals_.size(); }

  /// Entry count of the full matrix, both triangles.
  std::size_t full_nnz() const {
    std::size_t diag = 0;
    for (Index r = 0; r < n_; ++r)
      for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        if (cols_[k] == r) ++diag;
    return 2 * vals_.size() - diag;
  }

  double at(Index i, Index j) const {
    if (i > j) std::swap(i, j);
    auto b = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
    auto e = cols_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
    auto it = std::lower_bound(b, e, j);
    if (it == e || *it != j) return 0.0;
    return vals_[static_cast<std::size_t>(it - cols_.begin())];
  }

  template <class F>
  void for_each_upper(F&& f) const {
    for (Index r = 0; r < n_; ++r)
      for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) f(r, cols_[k], vals_[k]);
  }

  /// Y = S X for a block of column vectors.
  void apply(const Matrix& x, Matrix& y) const {
    y.setZero(n_, x.cols());
    for (Index r = 0; r < n_; ++r) {
      for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        const Index c = cols_[k];
        const double v = vals_[k];
        y.row(r).noalias() += v * x.row(c);
        if (c != r) y.row(c).noalias() += v * x.row(r);
      }
    }
  }

  Matrix apply(const Matrix& x) const {
    Matrix y;
    apply(x, y);
    return y;
  }

  Matrix to_dense() const {
    Matrix d = Matrix::Zero(n_, n_);
    for_each_upper([&](Index r, Index c, double v) {
      d(r, c) = v;
      d(c, r) = v;
    });
    return d;
  }

 private:
  Index n_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<Index> cols_;
  std::vector<double> vals_;
};

/// Block adjacency [[0, R], [R^T, 0]]; user u is node u, item i is node M+i.
inline SparseSymMatrix build_adjacency(const InteractionSet& data) {
  if (data.pairs.empty()) throw DataError("cannot build a graph from an empty dataset");
  const auto m = static_cast<Index>(data.num_users);
  std::vector<SparseSymMatrix::Entry> entries;
  entries.reserve(data.pairs.size());
  for (const auto& p : data.pairs)
    entries.push_back({static_cast<Index>(p.user), m + static_cast<Index>(p.item), 1.0});
  return SparseSymMatrix(m + static_cast<Index>(data.num_items), std::move(entries));
}

/// What to do with a node of degree zero.
enum class IsolatedNodes {
  reject,    // throw DataError naming the node
  identity,  // keep L_ii = 1 with no off-diagonal entries
};

struct BipartiteLaplacian {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  SparseSymMatrix laplacian;
  Vector degree;
  std::size_t isolated = 0;

  Index size() const { return static_cast<Index>(num_users + num_items); }
};

/// L = I - D^{-1/2} A D^{-1/2}.
inline BipartiteLaplacian build_laplacian(const SparseSymMatrix& adjacency,
                                          std::size_t num_users,
                                          IsolatedNodes policy = IsolatedNodes::reject) {
  const Index n = adjacency.size();
  if (static_cast<Index>(num_users) > n) throw DataError("user count exceeds graph size");
  BipartiteLaplacian out;
  out.num_users = num_users;
  out.num_items = static_cast<std::size_t>(n) - num_users;
  out.degree = Vector::Zero(n);
  adjacency.for_each_upper([&](Index r, Index c, double v) {
    out.degree[r] += v;
    if (c != r) out.degree[c] += v;
  });
  for (Index v = 0; v < n; ++v) {
    if (out.degree[v] > 0) continue;
    if (policy == IsolatedNodes::reject) {
      const bool is_user = v < static_cast<Index>(num_users);
      throw DataError("node " + std::to_string(v) + " (" + (is_user ? "user " : "item ") +
                      std::to_string(is_user ? v : v - static_cast<Index>(num_users)) +
                      ") has degree zero");
    }
    ++out.isolated;
  }
  Vector inv_sqrt(n);
  for (Index v = 0; v < n; ++v)
    inv_sqrt[v] = out.degree[v] > 0 ? 1.0 / std::sqrt(out.degree[v]) : 0.0;

  std::vector<SparseSymMatrix::Entry> entries;
  entries.reserve(adjacency.stored() + static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) entries.push_back({v, v, 1.0});
  adjacency.for_each_upper([&](Index r, Index c, double a) {
    entries.push_back({r, c, -a * inv_sqrt[r] * inv_sqrt[c]});
  });
  out.laplacian = SparseSymMatrix(n, std::move(entries));
  return out;
}

inline BipartiteLaplacian build_laplacian(const InteractionSet& data,
                                          IsolatedNodes policy = IsolatedNodes::reject) {
  return build_laplacian(build_adjacency(data), data.num_users, policy);
}

/// Coordinate text export, one "i j value" line per entry of the full matrix.
inline void export_coordinates(std::ostream& out, const SparseSymMatrix& s) {
  std::vector<SparseSymMatrix::Entry> all;
  s.for_each_upper([&](Index r, Index c, double v) {
    all.push_back({r, c, v});
    if (r != c) all.push_back({c, r, v});
  });
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  for (const auto& e : all) out << e.row << ' ' << e.col << ' ' << format_double(e.value) << '\n';
}

}  // namespace wavecf

#endif  // WAVECF_GRAPH_HPP_
