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

// wavecf command-line driver.
//
//   wavecf ingest     --input ratings.tsv --workdir run
//   wavecf spectral   --workdir run
//   wavecf train      --workdir run
//   wavecf evaluate   --workdir run --set k_values=5,10,20
//   wavecf recommend  --workdir run --user 17 --user 42 -k 10
//   wavecf cold-start --workdir run --caps 3,5,7,9,12
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wavecf/config.hpp"
#include "wavecf/pipeline.hpp"
#include "wavecf/synthetic.hpp"

namespace {

using namespace wavecf;

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::string workdir;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_file, "key=value configuration file");
  cmd->add_option("-s,--set", o.sets, "override one key (key=value); repeatable");
  cmd->add_option("-w,--workdir", o.workdir, "directory holding dataset, caches and checkpoints");
  cmd->add_flag("-f,--force", o.force, "allow overwriting existing outputs");
  cmd->add_flag("-q,--quiet", o.quiet, "suppress warnings on stderr");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) apply_config_file(cfg, o.config_file);
  apply_environment(cfg);
  apply_overrides(cfg, o.sets);
  if (!o.workdir.empty()) cfg.workdir = o.workdir;
  if (o.force) cfg.force = true;
  quiet_warnings() = o.quiet;
  cfg.validate();
  return cfg;
}

void write_output(const std::string& path, bool force, const std::function<void(std::ostream&)>& body) {
  guard_overwrite(path, force);
  write_file(path, body);
}

int cmd_ingest(const RunConfig& cfg, const std::string& name) {
  const RunPaths paths = run_paths(cfg);
  guard_overwrite(paths.dataset, cfg.force);
  InteractionSet data = ingest_dataset(cfg);
  write_file(paths.dataset, [&](std::ostream& o) { write_canonical(o, data); });
  write_dataset_summary(std::cout, data,
                        name.empty() ? fs::path(cfg.input).stem().string() : name);
  std::cout << "wrote " << paths.dataset.string() << '\n';
  return kOk;
}

int cmd_spectral(const RunConfig& cfg, const std::string& export_path) {
  const RunPaths paths = run_paths(cfg);
  const InteractionSet data = load_canonical(paths.dataset.string());
  const PreparedData prep = prepare(data, cfg);
  const SpectralStage s = run_spectral(prep, cfg, paths);
  std::cout << (s.cache_hit ? "cache hit: " : "computed: ") << paths.spectral.string() << '\n';
  write_spectral_summary(std::cout, s.cache);
  if (!export_path.empty()) {
    const auto lap = build_laplacian(prep.holdout.train, IsolatedNodes::identity);
    write_output(export_path, cfg.force, [&](std::ostream& o) { export_coordinates(o, lap.laplacian); });
    std::cout << "laplacian written to " << export_path << '\n';
  }
  return kOk;
}

int cmd_train(const RunConfig& cfg, bool plan_only) {
  if (plan_only) {
    std::cout << "batch_size=" << cfg.batch_size << " layers=" << cfg.layers << " dim=" << cfg.dim
              << '\n';
    write_grid_plan(std::cout, grid_points(cfg));
    return kOk;
  }
  const RunPaths paths = run_paths(cfg);
  run_train(cfg, paths, std::cout);
  std::cout << "checkpoint " << paths.checkpoint.string() << '\n';
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& output, const std::string& csv) {
  const RunPaths paths = run_paths(cfg);
  auto run = load_run(cfg, paths);
  const MetricReport rep = evaluate_run(*run);
  write_report(std::cout, *run, rep);
  if (!output.empty())
    write_output(output, cfg.force, [&](std::ostream& o) { write_report(o, *run, rep); });
  if (!csv.empty())
    write_output(csv, cfg.force, [&](std::ostream& o) { write_report_csv(o, rep); });
  return kOk;
}

int cmd_recommend(const RunConfig& cfg, const std::vector<std::string>& users, std::size_t k) {
  if (users.empty()) throw ConfigError("recommend needs at least one --user");
  const RunPaths paths = run_paths(cfg);
  auto run = load_run(cfg, paths);
  std::size_t served = 0;
  for (const auto& r : recommend(*run, users, k)) {
    if (!r.error.empty()) {
      std::cout << r.user << "\terror: " << r.error << '\n';
      std::cerr << "[wavecf] " << r.user << ": " << r.error << '\n';
      continue;
    }
    ++served;
    std::cout << r.user;
    for (std::size_t n = 0; n < r.items.size(); ++n)
      std::cout << '\t' << r.items[n] << ':' << format_double(r.scores[n]);
    std::cout << '\n';
  }
  return served > 0 ? kOk : kData;
}

int cmd_cold_start(const RunConfig& cfg, const std::vector<std::size_t>& caps, const std::string& output) {
  const RunPaths paths = run_paths(cfg);
  const InteractionSet data = load_canonical(paths.dataset.string());
  if (!output.empty()) guard_overwrite(output, cfg.force);
  auto rows = run_cold_start(data, cfg, caps, nullptr);
  write_cold_start_table(std::cout, rows);
  if (!output.empty())
    write_file(output, [&](std::ostream& o) { write_cold_start_table(o, rows); });
  return kOk;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& output, bool force) {
  const InteractionSet d = make_synthetic(spec);
  if (output.empty() || output == "-") {
    write_interactions_tsv(std::cout, d);
  } else {
    write_output(output, force, [&](std::ostream& o) { write_interactions_tsv(o, d); });
    std::cerr << "[wavecf] wrote " << d.nnz() << " interactions to " << output << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavecf: adaptive spectral graph-wavelet collaborative filtering"};
  app.require_subcommand(1);

  CommonOptions o_ingest, o_spectral, o_train, o_eval, o_rec, o_cold;

  auto* ingest = app.add_subcommand("ingest", "filter an interaction log and store the canonical dataset");
  add_common(ingest, o_ingest);
  std::string input, name;
  ingest->add_option("-i,--input", input, "interaction log (user item [rating] [timestamp])");
  ingest->add_option("--name", name, "dataset label for the summary table");

  auto* spectral = app.add_subcommand("spectral", "eigendecomposition and Box-Cox fit of the training graph");
  add_common(spectral, o_spectral);
  std::string export_path;
  spectral->add_option("--export-laplacian", export_path, "write the Laplacian as 'i j value' lines");

  auto* train = app.add_subcommand("train", "train (or grid-search) and write the checkpoint");
  add_common(train, o_train);
  bool plan_only = false;
  train->add_flag("--plan", plan_only, "list the grid runs without training");

  auto* eval = app.add_subcommand("evaluate", "Recall@k and NDCG@k on the test split");
  add_common(eval, o_eval);
  std::string report_path, csv_path;
  eval->add_option("-o,--output", report_path, "also write the report to this file");
  eval->add_option("--csv", csv_path, "per-k CSV");

  auto* rec = app.add_subcommand("recommend", "top-k items for users given by external id");
  add_common(rec, o_rec);
  std::vector<std::string> users;
  std::size_t k = 20;
  rec->add_option("-u,--user", users, "external user id; repeatable")->required();
  rec->add_option("-k", k, "list length")->check(CLI::PositiveNumber);

  auto* cold = app.add_subcommand("cold-start", "retrain with per-user training caps");
  add_common(cold, o_cold);
  std::vector<std::size_t> caps{3, 5, 7, 9, 12};
  std::string cold_out;
  cold->add_option("--caps", caps, "per-user training caps")->delimiter(',');
  cold->add_option("-o,--output", cold_out, "also write the table to this file");

  auto* synth = app.add_subcommand("synth", "write a clustered synthetic interaction log");
  SyntheticSpec spec;
  std::string synth_out;
  bool synth_force = false;
  synth->add_option("--users", spec.users);
  synth->add_option("--items", spec.items);
  synth->add_option("--clusters", spec.clusters);
  synth->add_option("--min-per-user", spec.min_per_user);
  synth->add_option("--max-per-user", spec.max_per_user);
  synth->add_option("--window", spec.window);
  synth->add_option("--noise", spec.noise);
  synth->add_option("--seed", spec.seed);
  synth->add_option("-o,--output", synth_out, "output path, '-' for stdout");
  synth->add_flag("-f,--force", synth_force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*ingest) {
      RunConfig cfg = resolve(o_ingest);
      if (!input.empty()) cfg.input = input;
      return cmd_ingest(cfg, name);
    }
    if (*spectral) return cmd_spectral(resolve(o_spectral), export_path);
    if (*train) return cmd_train(resolve(o_train), plan_only);
    if (*eval) return cmd_evaluate(resolve(o_eval), report_path, csv_path);
    if (*rec) return cmd_recommend(resolve(o_rec), users, k);
    if (*cold) return cmd_cold_start(resolve(o_cold), caps, cold_out);
    if (*synth) return cmd_synth(spec, synth_out, synth_force);
  } catch (const ConfigError& e) {
    std::cerr << "[wavecf] config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "[wavecf] data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "[wavecf] numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "[wavecf] data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "[wavecf] internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
