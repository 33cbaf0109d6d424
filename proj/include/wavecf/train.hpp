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

#ifndef WAVECF_TRAIN_HPP_
#define WAVECF_TRAIN_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "core.hpp"
#include "eval.hpp"
#include "ingest.hpp"
#include "model.hpp"

namespace wavecf {

struct Triple {
  std::uint32_t u;
  std::uint32_t i;  // observed
  std::uint32_t j;  // unobserved
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 1024;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double eta = 1e-4;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  std::size_t monitor_k = 20;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0))
      throw ConfigError("learning_rate must be positive (a zero rate never moves the parameters)");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("adam_eps must be positive");
    if (!(eta >= 0)) throw ConfigError("eta must be >= 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      throw ConfigError("validation_fraction must lie in [0, 1)");
    if (monitor_k < 1) throw ConfigError("monitor_k must be >= 1");
  }
};

/**
 * Uniform BPR triples: a training pair drawn uniformly, then an unobserved
 * item for that user by rejection sampling. Users who have seen the whole
 * catalog have no negatives and are skipped.
 */
class TripleSampler {
 public:
  explicit TripleSampler(const InteractionSet& train)
      : pairs_(train.pairs), num_items_(train.num_items), positives_(train.items_by_user()) {
    if (pairs_.empty()) throw DataError("no training pairs to sample from");
    for (std::size_t u = 0; u < positives_.size(); ++u) {
      if (!positives_[u].empty() && positives_[u].size() >= num_items_) ++saturated_;
    }
    if (saturated_ > 0)
      warn(std::to_string(saturated_) + " user(s) interacted with every item; skipped in sampling");
    std::size_t usable = 0;
    for (const auto& p : pairs_) usable += positives_[p.user].size() < num_items_;
    if (usable == 0) throw DataError("no user has an unobserved item to sample");
  }

  std::uint32_t negative(std::uint32_t u, Rng& rng) {
    const auto& pos = positives_[u];
    std::uniform_int_distribution<std::uint32_t> item(0, static_cast<std::uint32_t>(num_items_ - 1));
    while (true) {
      const auto j = item(rng);
      ++attempts_;
      if (!std::binary_search(pos.begin(), pos.end(), j)) {
        ++accepted_;
        return j;
      }
    }
  }

  std::vector<Triple> sample(std::size_t count, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, pairs_.size() - 1);
    std::vector<Triple> out;
    out.reserve(count);
    while (out.size() < count) {
      const auto& p = pairs_[pick(rng)];
      if (positives_[p.user].size() >= num_items_) continue;
      out.push_back({p.user, p.item, negative(p.user, rng)});
    }
    return out;
  }

  std::size_t attempts() const { return attempts_; }
  std::size_t accepted() const { return accepted_; }
  std::size_t saturated_users() const { return saturated_; }

 private:
  std::vector<Interaction> pairs_;
  std::size_t num_items_;
  std::vector<std::vector<std::uint32_t>> positives_;
  std::size_t saturated_ = 0;
  std::size_t attempts_ = 0;
  std::size_t accepted_ = 0;
};

inline std::vector<Triple> sample_triples(const InteractionSet& train, std::size_t count, Rng& rng) {
  TripleSampler s(train);
  return s.sample(count, rng);
}

namespace detail {

template <class F>
void for_distinct(std::span<const Triple> batch, F&& on_user, bool items) {
  std::unordered_set<std::uint32_t> seen;
  for (const auto& t : batch) {
    const auto key = items ? t.i : t.u;
    if (seen.insert(key).second) on_user(key);
  }
}

}  // namespace detail

/**
 * Regularized BPR over one batch:
 *   sum -log sigmoid(x_u . (y_i - y_j)) + eta/2 (sum ||x_u||^2 + sum ||y_i||^2)
 * with the penalty over the batch's distinct users and observed items.
 */
inline double bpr_loss(const ForwardTrace& tr, std::span<const Triple> batch, double eta) {
  if (batch.empty()) throw ConfigError("empty batch");
  double loss = 0.0;
  for (const auto& t : batch) {
    const double z = tr.users.row(t.u).dot(tr.items.row(t.i) - tr.items.row(t.j));
    loss += softplus(-z);
  }
  double reg = 0.0;
  detail::for_distinct(batch, [&](std::uint32_t u) { reg += tr.users.row(u).squaredNorm(); }, false);
  detail::for_distinct(batch, [&](std::uint32_t i) { reg += tr.items.row(i).squaredNorm(); }, true);
  return loss + 0.5 * eta * reg;
}

/// Loss gradient with respect to the concatenated embeddings.
struct EmbeddingGradients {
  Matrix users;
  Matrix items;
};

inline EmbeddingGradients embedding_gradients(const ForwardTrace& tr, std::span<const Triple> batch,
                                              double eta) {
  EmbeddingGradients g{Matrix::Zero(tr.users.rows(), tr.users.cols()),
                       Matrix::Zero(tr.items.rows(), tr.items.cols())};
  for (const auto& t : batch) {
    const auto xu = tr.users.row(t.u);
    const Eigen::RowVectorXd diff = tr.items.row(t.i) - tr.items.row(t.j);
    const double z = xu.dot(diff);
    const double coef = 1.0 - sigmoid(z);  // -(d/dz) log sigmoid(z)
    g.users.row(t.u) -= coef * diff;
    g.items.row(t.i) -= coef * xu;
    g.items.row(t.j) += coef * xu;
  }
  detail::for_distinct(batch, [&](std::uint32_t u) { g.users.row(u) += eta * tr.users.row(u); }, false);
  detail::for_distinct(batch, [&](std::uint32_t i) { g.items.row(i) += eta * tr.items.row(i); }, true);
  return g;
}

/**
 * Reverse-mode gradient of the batch loss for every parameter, through the
 * concatenation, the logistic activations, the spectral operator (its own
 * adjoint), W and theta.
 */
inline ModelParams backward(const ForwardTrace& tr, std::span<const Triple> batch,
                            const ModelParams& params, const SpectralPropagator& prop, double eta) {
  const EmbeddingGradients eg = embedding_gradients(tr, batch, eta);
  const Index m = params.x0.rows(), k = params.y0.rows(), p = tr.dim;
  const Index layers = tr.layers();
  auto slice = [&](Index l) {
    Matrix d(m + k, p);
    d.topRows(m) = eg.users.middleCols(l * p, p);
    d.bottomRows(k) = eg.items.middleCols(l * p, p);
    return d;
  };

  ModelParams grad = params.zeros_like();
  Matrix dz = slice(layers);
  for (Index l = layers - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const Matrix& out = tr.z[ul + 1];
    Matrix dpre = dz.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
    Vector d_diag;
    Matrix da = prop.adjoint(dpre, tr.diag[ul], tr.spectral_in[ul], d_diag);
    grad.w[ul] = tr.z[ul].transpose() * da;
    grad.theta[ul] = d_diag.cwiseProduct(prop.diagonal_theta_jacobian(tr.h[ul]));
    dz = da * params.w[ul].transpose() + slice(l);
  }
  grad.x0 = dz.topRows(m);
  grad.y0 = dz.bottomRows(k);
  if (!grad.all_finite()) throw NumericalError("non-finite gradient");
  return grad;
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamState like(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// Adam with bias correction.
inline void adam_step(ModelParams& params, const ModelParams& grad, AdamState& st,
                      const TrainConfig& cfg) {
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  std::vector<std::span<double>> ps, ms, vs;
  std::vector<std::span<const double>> gs;
  params.for_each_tensor([&](const std::string&, std::span<double> s) { ps.push_back(s); });
  st.m.for_each_tensor([&](const std::string&, std::span<double> s) { ms.push_back(s); });
  st.v.for_each_tensor([&](const std::string&, std::span<double> s) { vs.push_back(s); });
  grad.for_each_tensor([&](const std::string&, std::span<const double> s) { gs.push_back(s); });
  if (ps.size() != gs.size()) throw ConfigError("gradient does not match parameter layout");
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (ps[t].size() != gs[t].size()) throw ConfigError("gradient shape mismatch");
    for (std::size_t k = 0; k < ps[t].size(); ++k) {
      const double g = gs[t][k];
      ms[t][k] = cfg.beta1 * ms[t][k] + (1.0 - cfg.beta1) * g;
      vs[t][k] = cfg.beta2 * vs[t][k] + (1.0 - cfg.beta2) * g * g;
      ps[t][k] -= cfg.learning_rate * (ms[t][k] / c1) / (std::sqrt(vs[t][k] / c2) + cfg.eps);
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per triple
  double val_recall = 0.0;
  double val_ndcg = 0.0;
  double elapsed_ms = 0.0;
};

/// Everything needed to continue an interrupted fit.
struct FitState {
  ModelParams params;
  AdamState adam;
  ModelParams best;
  std::size_t epoch = 0;  // completed epochs
  std::size_t best_epoch = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  bool finished = false;
  std::vector<EpochRecord> log;
};

/// Training users' items held back for early stopping, split per user.
inline Split validation_partition(const InteractionSet& train, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return {train, with_pairs(train, {}, train.seed)};
  SplitSpec s;
  s.train_fraction = 1.0 - fraction;
  s.seed = seed;
  Split out = split(train, s, "validation");
  out.train.seed = train.seed;
  out.test.seed = train.seed;
  return out;
}

/**
 * Mini-batch BPR training with Adam. Each epoch draws one triple per
 * training pair. With a non-empty validation set, Recall@monitor_k is
 * checked after every epoch; the best parameters are kept and training
 * stops once more than `patience` consecutive epochs fail to improve.
 * Without validation every epoch counts as the best.
 */
inline FitState fit(const InteractionSet& train, const InteractionSet& validation,
                    const SpectralPropagator& prop, const ModelConfig& mcfg, const TrainConfig& tcfg,
                    const std::function<void(const FitState&)>& on_epoch = {},
                    std::optional<FitState> resume = std::nullopt) {
  mcfg.validate(train.num_users, train.num_items);
  tcfg.validate();
  if (static_cast<Index>(train.num_users + train.num_items) != prop.num_nodes())
    throw DataError("spectral decomposition does not match the training graph");

  FitState st;
  if (resume) {
    st = std::move(*resume);
  } else {
    st.params = init_params(mcfg, train.num_users, train.num_items, prop.num_freq());
    st.adam = AdamState::like(st.params);
    st.best = st.params;
  }
  TripleSampler sampler(train);
  const bool monitor = validation.nnz() > 0;

  while (!st.finished && st.epoch < tcfg.max_epochs) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng = make_rng(tcfg.seed, "sample", st.epoch);
    auto triples = sampler.sample(train.nnz(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < triples.size(); b += tcfg.batch_size) {
      std::span<const Triple> batch(triples.data() + b, std::min(tcfg.batch_size, triples.size() - b));
      ForwardTrace tr = forward(st.params, prop);
      total += bpr_loss(tr, batch, tcfg.eta);
      ModelParams g = backward(tr, batch, st.params, prop, tcfg.eta);
      adam_step(st.params, g, st.adam, tcfg);
    }
    if (!std::isfinite(total)) throw NumericalError("training loss diverged");
    ++st.epoch;

    EpochRecord rec;
    rec.epoch = st.epoch;
    rec.loss = total / static_cast<double>(triples.size());
    if (monitor) {
      ForwardTrace tr = forward(st.params, prop);
      auto rep = evaluate(EmbeddingScorer{&tr}, train, validation, {tcfg.monitor_k}, CohortSpec{{}},
                          tcfg.threads);
      rec.val_recall = rep.by_k[0].recall;
      rec.val_ndcg = rep.by_k[0].ndcg;
      if (rec.val_recall > st.best_val) {
        st.best_val = rec.val_recall;
        st.best_epoch = st.epoch;
        st.best = st.params;
        st.since_best = 0;
      } else if (++st.since_best > tcfg.patience) {
        st.finished = true;
      }
    } else {
      st.best = st.params;
      st.best_epoch = st.epoch;
    }
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    st.log.push_back(rec);
    if (st.epoch >= tcfg.max_epochs) st.finished = true;
    if (on_epoch) on_epoch(st);
  }
  st.finished = true;
  return st;
}

}  // namespace wavecf

#endif  // WAVECF_TRAIN_HPP_
