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

#ifndef WAVECF_PIPELINE_HPP_
#define WAVECF_PIPELINE_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "eval.hpp"
#include "graph.hpp"
#include "ingest.hpp"
#include "model.hpp"
#include "spectral.hpp"
#include "train.hpp"

namespace wavecf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files

struct RunPaths {
  fs::path dir;
  fs::path dataset;
  fs::path spectral;
  fs::path checkpoint;
  fs::path log;
  fs::path runs;  // per grid point checkpoints and resume state
};

inline RunPaths run_paths(const RunConfig& cfg) {
  const fs::path d(cfg.workdir);
  return {d, d / "dataset.wcf", d / "spectral.wcf", d / "checkpoint.wcf", d / "train.log", d / "runs"};
}

inline void guard_overwrite(const fs::path& p, bool force) {
  if (fs::exists(p) && !force)
    throw ConfigError("refusing to overwrite '" + p.string() + "' (pass --force or set force=true)");
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    body(out);
    out.flush();
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Ingestion

inline InteractionSet ingest_dataset(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ConfigError("input is not set (use --input or input=PATH)");
  auto raw = load_interactions(cfg.input, cfg.delimiter);
  auto data = filter_by_activity(raw, cfg.min_user, cfg.min_item);
  data.seed = cfg.seed;
  return data;
}

inline double sparsity_percent(const InteractionSet& d) {
  const double cells = static_cast<double>(d.num_users) * static_cast<double>(d.num_items);
  return 100.0 * (1.0 - static_cast<double>(d.nnz()) / cells);
}

inline void write_dataset_summary(std::ostream& out, const InteractionSet& d, std::string_view name) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %14s %10s %10s %12s\n", "dataset", "interactions", "users",
                "items", "sparsity(%)");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-16.16s %14zu %10zu %10zu %12.2f\n", std::string(name).c_str(),
                d.nnz(), d.num_users, d.num_items, sparsity_percent(d));
  out << buf;
  out << d.num_users << " users, " << d.num_items << " items\n";
  out << "hash " << hex64(content_hash(d)) << '\n';
}

// ---------------------------------------------------------------------------
// Splits

/// Train/test split plus the validation slice carved out of train.
struct PreparedData {
  Split split;    // train / test
  Split holdout;  // fit / validation, both inside split.train
};

inline PreparedData prepare(const InteractionSet& data, const RunConfig& cfg) {
  PreparedData p;
  p.split = split(data, cfg.split_spec());
  p.holdout = validation_partition(p.split.train, cfg.validation_fraction, cfg.seed);
  return p;
}

inline PreparedData prepare(Split s, const RunConfig& cfg) {
  PreparedData p;
  p.split = std::move(s);
  p.holdout = validation_partition(p.split.train, cfg.validation_fraction, cfg.seed);
  return p;
}

// ---------------------------------------------------------------------------
// Spectral stage

inline Index resolve_num_eigen(const RunConfig& cfg, Index n) {
  Index q = cfg.num_eigen == 0 ? default_num_eigen(n) : cfg.num_eigen;
  if (q > n) {
    warn("num_eigen = " + std::to_string(q) + " exceeds the graph size; clamped to " +
         std::to_string(n));
    q = n;
  }
  return q;
}

/// Eigensolve and Box-Cox fit for the graph built from `graph`.
inline SpectralCache compute_spectral(const InteractionSet& graph, const RunConfig& cfg) {
  auto lap = build_laplacian(graph, IsolatedNodes::identity);
  if (lap.isolated > 0)
    warn(std::to_string(lap.isolated) +
         " node(s) have no training interactions and keep an isolated Laplacian row");
  const Index q = resolve_num_eigen(cfg, lap.size());
  LanczosOptions opt;
  opt.block_size = cfg.eigen_block;
  opt.tol = cfg.eigen_tol;
  opt.seed = cfg.seed;
  SpectralCache c;
  c.dataset_hash = content_hash(graph);
  c.seed = cfg.seed;
  c.tol = cfg.eigen_tol;
  c.block_size = cfg.eigen_block;
  c.scale_t = cfg.scale_t;
  c.drop_threshold = cfg.drop_threshold;
  c.num_users = graph.num_users;
  c.decomp = eigensolve(lap, q, opt);
  c.boxcox = boxcox_fit(c.decomp.shifted);
  return c;
}

inline std::string spectral_cache_text(const SpectralCache& c) {
  std::ostringstream os;
  write_spectral_cache(os, c);
  return os.str();
}

inline bool cache_matches(const SpectralCache& c, std::uint64_t graph_hash, const RunConfig& cfg,
                          Index q) {
  return c.dataset_hash == graph_hash && c.seed == cfg.seed && c.tol == cfg.eigen_tol &&
         c.block_size == cfg.eigen_block && c.decomp.q() == q;
}

struct SpectralStage {
  SpectralCache cache;
  bool cache_hit = false;
};

/**
 * Loads the cached decomposition when it was computed for the same graph
 * and solver settings; otherwise computes and stores a fresh one. A stale
 * cache is only replaced with `force`.
 */
inline SpectralStage run_spectral(const PreparedData& prep, const RunConfig& cfg,
                                  const RunPaths& paths) {
  const InteractionSet& graph = prep.holdout.train;
  const Index n = static_cast<Index>(graph.num_users + graph.num_items);
  const Index q = resolve_num_eigen(cfg, n);
  const auto h = content_hash(graph);
  if (fs::exists(paths.spectral)) {
    std::optional<SpectralCache> old;
    try {
      old = load_spectral_cache(paths.spectral.string());
    } catch (const DataError& e) {
      if (!cfg.force) throw;
    }
    if (old && cache_matches(*old, h, cfg, q)) return {std::move(*old), true};
    guard_overwrite(paths.spectral, cfg.force);
  }
  SpectralStage s{compute_spectral(graph, cfg), false};
  write_file(paths.spectral, [&](std::ostream& o) { write_spectral_cache(o, s.cache); });
  return s;
}

inline void write_spectral_summary(std::ostream& out, const SpectralCache& c) {
  const auto& d = c.decomp;
  const auto& bc = c.boxcox;
  out << "nodes " << d.n() << '\n'
      << "Q " << d.q() << '\n'
      << "lambda_range [" << format_double(d.lambdas.minCoeff()) << ", "
      << format_double(d.lambdas.maxCoeff()) << "]\n"
      << "max_residual " << format_double(d.residuals.maxCoeff()) << '\n'
      << "kappa " << format_double(bc.kappa) << (bc.degenerate ? " (degenerate input)" : "") << '\n'
      << "mu " << format_double(bc.mean) << '\n'
      << "sigma " << format_double(bc.stddev) << '\n'
      << "c " << format_double(bc.sum) << '\n';
}

// ---------------------------------------------------------------------------
// Model assembly

/// Filter, optional sparse wavelets and the propagator for one scale t.
class SpectralModel {
 public:
  SpectralModel(const SpectralCache& cache, double t, const ModelConfig& mcfg)
      : filter_(make_filter(cache.decomp, cache.boxcox, t, mcfg.filter)) {
    if (mcfg.materialize_wavelets)
      wavelets_ = build_wavelet_pair(cache.decomp, filter_, mcfg.drop_threshold);
    prop_.emplace(cache.decomp, filter_, wavelets_ ? &*wavelets_ : nullptr);
  }
  SpectralModel(const SpectralModel&) = delete;
  SpectralModel& operator=(const SpectralModel&) = delete;

  const AdaptiveFilter& filter() const { return filter_; }
  const SpectralPropagator& propagator() const { return *prop_; }

 private:
  AdaptiveFilter filter_;
  std::optional<WaveletPair> wavelets_;
  std::optional<SpectralPropagator> prop_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointMagic = "wavelet-cf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t dataset_hash = 0;
  std::uint64_t spectral_hash = 0;
  std::vector<std::pair<std::string, std::string>> config;
  double learning_rate = 0.0;
  double scale_t = 0.0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  ModelParams params;             // selected parameters
  std::optional<FitState> state;  // present while training is unfinished
};

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

inline void write_params(std::ostream& out, std::string_view label, const ModelParams& p) {
  out << "params " << label << ' ' << p.w.size() << '\n';
  write_tensor(out, "x0", p.x0);
  write_tensor(out, "y0", p.y0);
  for (std::size_t l = 0; l < p.w.size(); ++l) write_tensor(out, "w" + std::to_string(l), p.w[l]);
  for (std::size_t l = 0; l < p.theta.size(); ++l)
    write_tensor(out, "theta" + std::to_string(l), Matrix(p.theta[l]));
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next() {
    if (!std::getline(in_, line_)) throw DataError("checkpoint: truncated at line " + std::to_string(n_ + 1));
    ++n_;
    return line_;
  }

  /// Reads "key rest" and returns rest.
  std::string field(std::string_view key) {
    std::string l = next();
    if (l.compare(0, key.size(), key) != 0 || (l.size() > key.size() && l[key.size()] != ' '))
      throw error("expected '" + std::string(key) + "'");
    return l.size() > key.size() ? l.substr(key.size() + 1) : std::string();
  }

  DataError error(const std::string& why) const {
    return DataError("checkpoint line " + std::to_string(n_) + ": " + why);
  }

 private:
  std::istream& in_;
  std::string line_;
  std::size_t n_ = 0;
};

inline void parse_reals(LineReader& r, const std::string& s, double* out, Index count) {
  const char* p = s.c_str();
  for (Index i = 0; i < count; ++i) {
    char* end = nullptr;
    out[i] = std::strtod(p, &end);
    if (end == p) throw r.error("short numeric row");
    p = end;
  }
}

inline Matrix read_tensor(LineReader& r, const std::string& name) {
  std::istringstream is(r.field(name));
  Index rows = -1, cols = -1;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0) throw r.error("bad shape for " + name);
  Matrix m(rows, cols);
  std::vector<double> buf(static_cast<std::size_t>(cols));
  for (Index i = 0; i < rows; ++i) {
    parse_reals(r, r.next(), buf.data(), cols);
    for (Index c = 0; c < cols; ++c) m(i, c) = buf[static_cast<std::size_t>(c)];
  }
  return m;
}

inline ModelParams read_params(LineReader& r, std::string_view label) {
  std::istringstream is(r.field("params"));
  std::string got;
  std::size_t layers = 0;
  if (!(is >> got >> layers) || got != label) throw r.error("expected params block '" + std::string(label) + "'");
  ModelParams p;
  p.x0 = read_tensor(r, "x0");
  p.y0 = read_tensor(r, "y0");
  for (std::size_t l = 0; l < layers; ++l) p.w.push_back(read_tensor(r, "w" + std::to_string(l)));
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix t = read_tensor(r, "theta" + std::to_string(l));
    if (t.cols() != 1) throw r.error("theta must be a column");
    p.theta.push_back(t.col(0));
  }
  return p;
}

inline double parse_double(LineReader& r, const std::string& s) {
  double v = 0;
  parse_reals(r, s, &v, 1);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out << kCheckpointMagic << " v" << kCheckpointVersion << '\n'
      << "dataset " << hex64(c.dataset_hash) << '\n'
      << "spectral " << hex64(c.spectral_hash) << '\n'
      << "config " << c.config.size() << '\n';
  for (const auto& [k, v] : c.config) out << k << '=' << v << '\n';
  out << "learning_rate " << format_double(c.learning_rate) << '\n'
      << "scale_t " << format_double(c.scale_t) << '\n'
      << "best_epoch " << c.best_epoch << '\n'
      << "best_val " << format_double(c.best_val) << '\n';
  detail::write_params(out, "selected", c.params);
  if (c.state) {
    const FitState& s = *c.state;
    out << "state " << s.epoch << ' ' << s.best_epoch << ' ' << s.since_best << ' '
        << (s.finished ? 1 : 0) << ' ' << s.adam.step << ' ' << format_double(s.best_val) << '\n'
        << "log " << s.log.size() << '\n';
    for (const auto& e : s.log)
      out << e.epoch << ' ' << format_double(e.loss) << ' ' << format_double(e.val_recall) << ' '
          << format_double(e.val_ndcg) << '\n';
    detail::write_params(out, "current", s.params);
    detail::write_params(out, "adam_m", s.adam.m);
    detail::write_params(out, "adam_v", s.adam.v);
  } else {
    out << "state none\n";
  }
  out << "end\n";
}

inline std::string checkpoint_text(const Checkpoint& c) {
  std::ostringstream os;
  write_checkpoint(os, c);
  return os.str();
}

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::LineReader r(in);
  {
    std::istringstream h(r.next());
    std::string magic, version;
    h >> magic >> version;
    if (magic != kCheckpointMagic) throw DataError("not a wavelet-cf checkpoint");
    if (version != "v" + std::to_string(kCheckpointVersion))
      throw DataError("unsupported checkpoint version '" + version + "'");
  }
  Checkpoint c;
  c.dataset_hash = std::stoull(r.field("dataset"), nullptr, 16);
  c.spectral_hash = std::stoull(r.field("spectral"), nullptr, 16);
  const std::size_t nconf = std::stoul(r.field("config"));
  for (std::size_t i = 0; i < nconf; ++i) {
    std::string l = r.next();
    auto eq = l.find('=');
    if (eq == std::string::npos) throw r.error("expected key=value");
    c.config.emplace_back(l.substr(0, eq), l.substr(eq + 1));
  }
  c.learning_rate = detail::parse_double(r, r.field("learning_rate"));
  c.scale_t = detail::parse_double(r, r.field("scale_t"));
  c.best_epoch = std::stoul(r.field("best_epoch"));
  c.best_val = detail::parse_double(r, r.field("best_val"));
  c.params = detail::read_params(r, "selected");
  std::string st = r.field("state");
  if (st != "none") {
    FitState s;
    std::istringstream is(st);
    int finished = 0;
    std::string best_val;
    if (!(is >> s.epoch >> s.best_epoch >> s.since_best >> finished >> s.adam.step >> best_val))
      throw r.error("malformed state line");
    s.finished = finished != 0;
    s.best_val = detail::parse_double(r, best_val);
    const std::size_t nlog = std::stoul(r.field("log"));
    for (std::size_t i = 0; i < nlog; ++i) {
      double v[4];
      detail::parse_reals(r, r.next(), v, 4);
      s.log.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], 0.0});
    }
    s.best = c.params;
    s.params = detail::read_params(r, "current");
    s.adam.m = detail::read_params(r, "adam_m");
    s.adam.v = detail::read_params(r, "adam_v");
    c.state = std::move(s);
  }
  if (r.next() != "end") throw r.error("missing end marker");
  return c;
}

inline Checkpoint load_checkpoint(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + p.string() + "'");
  try {
    return read_checkpoint(in);
  } catch (const DataError& e) {
    throw DataError(p.string() + ": " + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(p.string() + ": malformed checkpoint (" + e.what() + ")");
  }
}

inline std::vector<std::pair<std::string, std::string>> provenance(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : RunConfig::keys())
    if (!RunConfig::runtime_key(k)) out.emplace_back(k, cfg.get(k));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct GridPoint {
  double learning_rate = 0.0;
  double scale_t = 0.0;
};

/// Every (learning rate, t) combination, learning rate outermost.
inline std::vector<GridPoint> grid_points(const RunConfig& cfg) {
  const auto lrs = cfg.grid_learning_rate.empty() ? std::vector<double>{cfg.learning_rate}
                                                  : cfg.grid_learning_rate;
  const auto ts = cfg.grid_scale.empty() ? std::vector<double>{cfg.scale_t} : cfg.grid_scale;
  std::vector<GridPoint> out;
  for (double lr : lrs)
    for (double t : ts) out.push_back({lr, t});
  return out;
}

inline void write_log_header(std::ostream& log, const RunConfig& cfg) {
  log << "# batch_size=" << cfg.batch_size << " layers=" << cfg.layers << " dim=" << cfg.dim
      << " eta=" << format_double(cfg.eta) << " max_epochs=" << cfg.max_epochs
      << " patience=" << cfg.patience << " validation_fraction=" << format_double(cfg.validation_fraction)
      << " seed=" << cfg.seed << '\n';
}

inline void write_epoch_line(std::ostream& log, const EpochRecord& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu %.6f %.6f %.6f %.1f\n", e.epoch, e.loss, e.val_recall,
                e.val_ndcg, e.elapsed_ms);
  log << buf;
  log.flush();
}

/// One fit at a fixed grid point.
inline FitState train_model(const PreparedData& prep, const SpectralCache& cache,
                            const RunConfig& cfg, GridPoint gp, std::ostream* log = nullptr,
                            const std::function<void(const FitState&)>& on_epoch = {},
                            std::optional<FitState> resume = std::nullopt) {
  if (cache.dataset_hash != content_hash(prep.holdout.train))
    throw DataError("spectral cache was computed for a different training graph");
  ModelConfig mcfg = cfg.model();
  mcfg.scale_t = gp.scale_t;
  TrainConfig tcfg = cfg.train();
  tcfg.learning_rate = gp.learning_rate;
  SpectralModel model(cache, gp.scale_t, mcfg);
  if (log) *log << "epoch loss val_recall@20 val_ndcg@20 elapsed_ms\n";
  auto cb = [&](const FitState& s) {
    if (log) write_epoch_line(*log, s.log.back());
    if (on_epoch) on_epoch(s);
  };
  return fit(prep.holdout.train, prep.holdout.test, model.propagator(), mcfg, tcfg, cb,
             std::move(resume));
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, std::uint64_t dataset_hash,
                                  std::uint64_t spectral_hash, GridPoint gp, const FitState& s,
                                  bool with_state) {
  Checkpoint c;
  c.dataset_hash = dataset_hash;
  c.spectral_hash = spectral_hash;
  c.config = provenance(cfg);
  c.learning_rate = gp.learning_rate;
  c.scale_t = gp.scale_t;
  c.best_epoch = s.best_epoch;
  c.best_val = s.best_val;
  c.params = s.best;
  if (with_state) c.state = s;
  return c;
}

struct GridRun {
  GridPoint point;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  bool reused = false;
};

struct TrainSummary {
  std::vector<GridRun> runs;
  std::size_t selected = 0;
  Checkpoint checkpoint;
};

inline void write_grid_plan(std::ostream& out, const std::vector<GridPoint>& grid) {
  for (std::size_t r = 0; r < grid.size(); ++r)
    out << "grid run " << (r + 1) << '/' << grid.size()
        << " learning_rate=" << format_double(grid[r].learning_rate)
        << " scale_t=" << format_double(grid[r].scale_t) << '\n';
}

/**
 * Trains every grid point (a single point without grid lists), keeping a
 * checkpoint per point under runs/ and resuming an interrupted point from
 * its last finished epoch. The point with the best validation Recall@20 is
 * written as the run checkpoint.
 */
inline TrainSummary run_train(const RunConfig& cfg, const RunPaths& paths, std::ostream& out) {
  const InteractionSet data = load_canonical(paths.dataset.string());
  const auto dhash = content_hash(data);
  const PreparedData prep = prepare(data, cfg);
  if (!fs::exists(paths.spectral))
    throw DataError("no spectral cache at '" + paths.spectral.string() + "'; run the spectral command first");
  const std::string cache_text = read_file(paths.spectral);
  std::istringstream cache_in(cache_text);
  const SpectralCache cache = read_spectral_cache(cache_in);
  if (cache.dataset_hash != content_hash(prep.holdout.train))
    throw DataError("spectral cache does not match the current split; rerun the spectral command");
  const auto shash = fnv1a(cache_text);
  guard_overwrite(paths.checkpoint, cfg.force);

  const auto grid = grid_points(cfg);
  fs::create_directories(paths.runs);
  std::ofstream log(paths.log, std::ios::app);
  if (!log) throw DataError("cannot write '" + paths.log.string() + "'");
  write_log_header(log, cfg);
  write_log_header(out, cfg);
  write_grid_plan(log, grid);

  TrainSummary sum;
  const auto conf = provenance(cfg);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    const GridPoint gp = grid[r];
    const fs::path done = paths.runs / ("run-" + std::to_string(r + 1) + ".wcf");
    const fs::path partial = paths.runs / ("run-" + std::to_string(r + 1) + ".partial.wcf");
    auto matches = [&](const Checkpoint& c) {
      return c.dataset_hash == dhash && c.spectral_hash == shash && c.config == conf &&
             c.learning_rate == gp.learning_rate && c.scale_t == gp.scale_t;
    };
    std::ostringstream head;
    head << "grid run " << (r + 1) << '/' << grid.size()
         << " learning_rate=" << format_double(gp.learning_rate)
         << " scale_t=" << format_double(gp.scale_t);
    if (fs::exists(done)) {
      Checkpoint c = load_checkpoint(done);
      if (matches(c)) {
        log << head.str() << " finished earlier\n";
        out << head.str() << " finished earlier\n";
        sum.runs.push_back({gp, c.best_val, c.best_epoch, true});
        continue;
      }
    }
    std::optional<FitState> resume;
    if (fs::exists(partial)) {
      Checkpoint c = load_checkpoint(partial);
      if (matches(c) && c.state) {
        resume = std::move(c.state);
        log << head.str() << " resuming after epoch " << resume->epoch << '\n';
        out << head.str() << " resuming after epoch " << resume->epoch << '\n';
      }
    }
    if (!resume) {
      log << head.str() << '\n';
      out << head.str() << '\n';
    }
    auto save_partial = [&](const FitState& s) {
      const Checkpoint c = make_checkpoint(cfg, dhash, shash, gp, s, true);
      write_file(partial, [&](std::ostream& o) { write_checkpoint(o, c); });
    };
    FitState s = train_model(prep, cache, cfg, gp, &log, save_partial, std::move(resume));
    const Checkpoint c = make_checkpoint(cfg, dhash, shash, gp, s, false);
    write_file(done, [&](std::ostream& o) { write_checkpoint(o, c); });
    fs::remove(partial);
    out << "  best_epoch " << s.best_epoch << " val_recall@20 " << fixed(s.best_val) << " epochs "
        << s.epoch << '\n';
    sum.runs.push_back({gp, s.best_val, s.best_epoch, false});
  }

  for (std::size_t r = 1; r < sum.runs.size(); ++r)
    if (sum.runs[r].best_val > sum.runs[sum.selected].best_val) sum.selected = r;
  const fs::path chosen = paths.runs / ("run-" + std::to_string(sum.selected + 1) + ".wcf");
  sum.checkpoint = load_checkpoint(chosen);
  write_file(paths.checkpoint, [&](std::ostream& o) { write_checkpoint(o, sum.checkpoint); });
  const auto& best = sum.runs[sum.selected];
  std::ostringstream tail;
  tail << "selected learning_rate=" << format_double(best.point.learning_rate)
       << " scale_t=" << format_double(best.point.scale_t)
       << " val_recall@20=" << fixed(best.best_val) << '\n';
  log << tail.str();
  out << tail.str();
  return sum;
}

// ---------------------------------------------------------------------------
// Loading a trained run

/**
 * Everything evaluation and recommendation need: the dataset, the split the
 * checkpoint was trained on, the spectral cache and the forward pass of the
 * selected parameters. The configuration recorded in the checkpoint wins
 * over the caller's for every key that shaped the model.
 */
struct LoadedRun {
  RunConfig config;
  InteractionSet data;
  PreparedData prep;
  SpectralCache cache;
  Checkpoint checkpoint;
  std::uint64_t dataset_hash = 0;
  std::unique_ptr<SpectralModel> model;
  ForwardTrace trace;
};

inline std::unique_ptr<LoadedRun> load_run(const RunConfig& cfg, const RunPaths& paths) {
  auto run = std::make_unique<LoadedRun>();
  run->checkpoint = load_checkpoint(paths.checkpoint);
  run->data = load_canonical(paths.dataset.string());
  run->dataset_hash = content_hash(run->data);
  if (run->dataset_hash != run->checkpoint.dataset_hash)
    throw DataError("checkpoint was trained on dataset " + hex64(run->checkpoint.dataset_hash) +
                    " but '" + paths.dataset.string() + "' has hash " + hex64(run->dataset_hash) +
                    "; refusing to evaluate");
  const std::string cache_text = read_file(paths.spectral);
  if (fnv1a(cache_text) != run->checkpoint.spectral_hash)
    throw DataError("spectral cache changed since the checkpoint was trained; refusing to evaluate");
  std::istringstream cache_in(cache_text);
  run->cache = read_spectral_cache(cache_in);

  run->config = cfg;
  for (const auto& [k, v] : run->checkpoint.config)
    if (k != "k_values" && k != "cohort_bounds") run->config.set(k, v);
  run->config.validate();
  run->prep = prepare(run->data, run->config);

  ModelConfig mcfg = run->config.model();
  mcfg.scale_t = run->checkpoint.scale_t;
  run->model = std::make_unique<SpectralModel>(run->cache, run->checkpoint.scale_t, mcfg);
  run->trace = forward(run->checkpoint.params, run->model->propagator());
  return run;
}

inline MetricReport evaluate_run(const LoadedRun& run) {
  return evaluate(EmbeddingScorer{&run.trace}, run.prep.split.train, run.prep.split.test,
                  run.config.k_values, run.config.cohorts(), run.config.threads);
}

inline void write_report(std::ostream& out, const LoadedRun& run, const MetricReport& rep) {
  const auto& d = run.data;
  out << "# wavecf evaluation report\n"
      << "# dataset " << hex64(run.dataset_hash) << " users " << d.num_users << " items "
      << d.num_items << " interactions " << d.nnz() << '\n'
      << "# split per-user: each user's items are partitioned separately, train_fraction="
      << run.config.get("train_fraction") << '\n'
      << "# selected learning_rate=" << format_double(run.checkpoint.learning_rate)
      << " scale_t=" << format_double(run.checkpoint.scale_t)
      << " best_epoch=" << run.checkpoint.best_epoch << '\n';
  run.config.echo(out, "# config ");
  out << '\n';
  write_report_table(out, rep);
  out << '\n';
  write_report_lines(out, rep);
}

// ---------------------------------------------------------------------------
// Recommendation

struct Recommendation {
  std::string user;
  std::vector<std::string> items;
  std::vector<double> scores;
  std::string error;  // non-empty when the user could not be served
};

inline std::vector<Recommendation> recommend(const LoadedRun& run, const std::vector<std::string>& users,
                                             std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto seen = run.prep.split.train.items_by_user();
  std::vector<double> scores(run.data.num_items);
  std::vector<Recommendation> out;
  for (const auto& id : users) {
    Recommendation rec;
    rec.user = id;
    auto it = run.data.user_index.find(id);
    if (it == run.data.user_index.end()) {
      rec.error = "unknown user";
      out.push_back(std::move(rec));
      continue;
    }
    const auto u = it->second;
    score_row(run.trace, u, scores);
    auto list = topk(u, scores, seen[u], k);
    for (auto i : list.items) {
      rec.items.push_back(run.data.item_ids[i]);
      rec.scores.push_back(scores[i]);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cold start

/**
 * Retrains from scratch on each capped split (own validation slice and
 * spectral decomposition) and evaluates Recall@20/NDCG@20 on the shared
 * test side.
 */
inline std::vector<ColdStartRow> run_cold_start(const InteractionSet& data, const RunConfig& cfg,
                                                std::span<const std::size_t> caps,
                                                std::ostream* log = nullptr) {
  auto train_eval = [&](const Split& s) {
    PreparedData prep = prepare(s, cfg);
    SpectralCache cache = compute_spectral(prep.holdout.train, cfg);
    FitState st = train_model(prep, cache, cfg, {cfg.learning_rate, cfg.scale_t}, log);
    ModelConfig mcfg = cfg.model();
    SpectralModel model(cache, cfg.scale_t, mcfg);
    ForwardTrace tr = forward(st.best, model.propagator());
    return evaluate(EmbeddingScorer{&tr}, prep.split.train, prep.split.test, {20}, cfg.cohorts(),
                    cfg.threads);
  };
  return cold_start_suite(data, caps, cfg.split_spec(), train_eval, 20);
}

}  // namespace wavecf

#endif  // WAVECF_PIPELINE_HPP_
