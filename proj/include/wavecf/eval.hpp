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

#ifndef WAVECF_EVAL_HPP_
#define WAVECF_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "core.hpp"
#include "ingest.hpp"

namespace wavecf {

struct RankedList {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> items;  // best first
};

/**
 * Top-k items by descending score with `masked` (sorted) removed. Ties go to
 * the smaller item index.
 */
inline RankedList topk(std::uint32_t user, std::span<const double> scores,
                       std::span<const std::uint32_t> masked, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  RankedList out;
  out.user = user;
  std::vector<std::uint32_t> pool;
  pool.reserve(scores.size());
  auto mit = masked.begin();
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    while (mit != masked.end() && *mit < i) ++mit;
    if (mit != masked.end() && *mit == i) continue;
    pool.push_back(i);
  }
  const std::size_t take = std::min(k, pool.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                    better);
  pool.resize(take);
  out.items = std::move(pool);
  return out;
}

namespace detail {
inline bool in_sorted(std::span<const std::uint32_t> s, std::uint32_t v) {
  return std::binary_search(s.begin(), s.end(), v);
}
}  // namespace detail

/// Hits in the first `k` positions over |test|. `test` must be sorted and non-empty.
inline double recall_at_k(const RankedList& list, std::span<const std::uint32_t> test,
                          std::size_t k = std::numeric_limits<std::size_t>::max()) {
  if (test.empty()) throw DataError("recall undefined for an empty test set");
  const std::size_t n = std::min(k, list.items.size());
  std::size_t hits = 0;
  for (std::size_t p = 0; p < n; ++p) hits += detail::in_sorted(test, list.items[p]);
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

/// Binary-relevance DCG over the ideal DCG of min(k, |test|) leading hits.
inline double ndcg_at_k(const RankedList& list, std::span<const std::uint32_t> test,
                        std::size_t k = std::numeric_limits<std::size_t>::max()) {
  if (test.empty()) throw DataError("NDCG undefined for an empty test set");
  const std::size_t n = std::min(k, list.items.size());
  double dcg = 0.0;
  for (std::size_t p = 0; p < n; ++p)
    if (detail::in_sorted(test, list.items[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  const std::size_t ideal = std::min(k, test.size());
  double idcg = 0.0;
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

/// Train-interaction-count boundaries; {25, 50, 100} gives four groups.
struct CohortSpec {
  std::vector<std::size_t> bounds{25, 50, 100};

  std::size_t groups() const { return bounds.size() + 1; }
  std::size_t lower(std::size_t g) const { return g == 0 ? 0 : bounds[g - 1]; }
  std::size_t upper(std::size_t g) const {
    return g < bounds.size() ? bounds[g] : std::numeric_limits<std::size_t>::max();
  }
  std::size_t group_of(std::size_t count) const {
    return static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), count) -
                                    bounds.begin());
  }
  std::string label(std::size_t g) const {
    const std::string lo = std::to_string(lower(g));
    return "[" + lo + "," + (g < bounds.size() ? std::to_string(upper(g)) + ")" : "inf)");
  }
};

struct CohortMetrics {
  std::string label;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

struct KMetrics {
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::vector<double> user_recall;  // aligned with MetricReport::users
  std::vector<double> user_ndcg;
  std::vector<CohortMetrics> cohorts;
};

struct MetricReport {
  std::vector<std::uint32_t> users;       // test users with >= 1 test item
  std::vector<std::size_t> train_counts;  // per eligible user
  std::vector<KMetrics> by_k;

  const KMetrics& at(std::size_t k) const {
    for (const auto& m : by_k)
      if (m.k == k) return m;
    throw ConfigError("k = " + std::to_string(k) + " was not evaluated");
  }
};

/**
 * Ranks every eligible test user's unseen items with `scorer(u, out)` and
 * averages Recall@k and NDCG@k. Train positives are masked. Per-user work is
 * split over `threads` workers writing disjoint slots, so the result does
 * not depend on the thread count.
 */
template <class Scorer>
MetricReport evaluate(const Scorer& scorer, const InteractionSet& train, const InteractionSet& test,
                      std::vector<std::size_t> ks, const CohortSpec& cohorts = {},
                      unsigned threads = 1) {
  if (ks.empty()) throw ConfigError("no cutoffs requested");
  for (auto k : ks)
    if (k < 1) throw ConfigError("k must be >= 1");
  if (train.num_items != test.num_items || train.num_users != test.num_users)
    throw DataError("train and test sets do not share an index space");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const std::size_t kmax = ks.back();

  auto seen = train.items_by_user();
  auto held = test.items_by_user();
  MetricReport rep;
  for (std::uint32_t u = 0; u < held.size(); ++u) {
    if (held[u].empty()) continue;
    rep.users.push_back(u);
    rep.train_counts.push_back(seen[u].size());
  }
  if (rep.users.empty()) throw DataError("no test users with held-out items");

  const std::size_t n = rep.users.size();
  for (auto k : ks) {
    KMetrics m;
    m.k = k;
    m.user_recall.assign(n, 0.0);
    m.user_ndcg.assign(n, 0.0);
    rep.by_k.push_back(std::move(m));
  }

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(train.num_items);
    for (std::size_t idx = begin; idx < end; ++idx) {
      const auto u = rep.users[idx];
      scorer(u, std::span<double>(scores));
      auto list = topk(u, scores, seen[u], kmax);
      for (auto& m : rep.by_k) {
        m.user_recall[idx] = recall_at_k(list, held[u], m.k);
        m.user_ndcg[idx] = ndcg_at_k(list, held[u], m.k);
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back(work, n * t / threads, n * (t + 1) / threads);
    for (auto& th : pool) th.join();
  }

  for (auto& m : rep.by_k) {
    m.cohorts.resize(cohorts.groups());
    for (std::size_t g = 0; g < cohorts.groups(); ++g) m.cohorts[g].label = cohorts.label(g);
    for (std::size_t idx = 0; idx < n; ++idx) {
      m.recall += m.user_recall[idx];
      m.ndcg += m.user_ndcg[idx];
      auto& c = m.cohorts[cohorts.group_of(rep.train_counts[idx])];
      c.recall += m.user_recall[idx];
      c.ndcg += m.user_ndcg[idx];
      ++c.users;
    }
    m.recall /= static_cast<double>(n);
    m.ndcg /= static_cast<double>(n);
    for (auto& c : m.cohorts) {
      if (c.users == 0) continue;
      c.recall /= static_cast<double>(c.users);
      c.ndcg /= static_cast<double>(c.users);
    }
  }
  return rep;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Aligned plain-text table: one row per (k, cohort), "all" first.
inline void write_report_table(std::ostream& out, const MetricReport& rep) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %-12s %10s %10s %8s\n", "k", "cohort", "recall", "ndcg",
                "users");
  out << buf;
  for (const auto& m : rep.by_k) {
    std::snprintf(buf, sizeof buf, "%-6zu %-12s %10.4f %10.4f %8zu\n", m.k, "all", m.recall,
                  m.ndcg, rep.users.size());
    out << buf;
    for (const auto& c : m.cohorts) {
      std::snprintf(buf, sizeof buf, "%-6zu %-12s %10.4f %10.4f %8zu\n", m.k, c.label.c_str(),
                    c.recall, c.ndcg, c.users);
      out << buf;
    }
  }
}

/// Machine-readable "metric k cohort value count" lines.
inline void write_report_lines(std::ostream& out, const MetricReport& rep) {
  for (const auto& m : rep.by_k) {
    out << "recall " << m.k << " all " << format_double(m.recall) << ' ' << rep.users.size() << '\n';
    out << "ndcg " << m.k << " all " << format_double(m.ndcg) << ' ' << rep.users.size() << '\n';
    for (const auto& c : m.cohorts) {
      out << "recall " << m.k << ' ' << c.label << ' ' << format_double(c.recall) << ' ' << c.users
          << '\n';
      out << "ndcg " << m.k << ' ' << c.label << ' ' << format_double(c.ndcg) << ' ' << c.users
          << '\n';
    }
  }
}

/// Per-k CSV for plotting metric curves.
inline void write_report_csv(std::ostream& out, const MetricReport& rep) {
  out << "k,recall,ndcg,users\n";
  for (const auto& m : rep.by_k)
    out << m.k << ',' << format_double(m.recall) << ',' << format_double(m.ndcg) << ','
        << rep.users.size() << '\n';
}

struct ColdStartRow {
  std::size_t cap = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t train_pairs = 0;
};

/**
 * Re-splits `data` once per cap with the training side limited to `cap`
 * items per user, then hands each split to `train_and_evaluate`, which must
 * return a report containing k = 20. The uncapped split and every capped one
 * share the same test side because they share the seed.
 */
template <class TrainEval>
std::vector<ColdStartRow> cold_start_suite(const InteractionSet& data,
                                           std::span<const std::size_t> caps,
                                           const SplitSpec& base, TrainEval&& train_and_evaluate,
                                           std::size_t k = 20) {
  std::vector<ColdStartRow> rows;
  for (auto cap : caps) {
    if (cap < 1) throw ConfigError("cold-start caps must be positive");
    SplitSpec spec = base;
    spec.per_user_cap = cap;
    Split s = split(data, spec);
    MetricReport rep = train_and_evaluate(s);
    const auto& m = rep.at(k);
    rows.push_back({cap, m.recall, m.ndcg, s.train.nnz()});
  }
  return rows;
}

inline void write_cold_start_table(std::ostream& out, const std::vector<ColdStartRow>& rows,
                                   std::size_t k = 20) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-6s %12s %12s %12s\n", "cap", ("recall@" + std::to_string(k)).c_str(),
                ("ndcg@" + std::to_string(k)).c_str(), "train_pairs");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-6zu %12.4f %12.4f %12zu\n", r.cap, r.recall, r.ndcg,
                  r.train_pairs);
    out << buf;
  }
}

}  // namespace wavecf

#endif  // WAVECF_EVAL_HPP_
