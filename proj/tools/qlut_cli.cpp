// Command-line front end: run one scenario, sweep a parameter axis, or
// build/inspect correction table files from a JSON config.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qlut/lut.hpp"
#include "qlut/scenario.hpp"

namespace {

using qlut::RunConfig;
using qlut::RunReport;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string estimator;
  bool no_dither = false;
  bool materialize = false;
};

void add_common_flags(CLI::App* cmd, std::string& config, Overrides& ov,
                      int& workers) {
  cmd->add_option("--config", config, "scenario config (JSON)")->required();
  cmd->add_option("--seed", ov.seed, "override the config seed");
  cmd->add_option("--out", ov.out, "output directory");
  cmd->add_option("--workers", workers, "worker thread count")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--estimator", ov.estimator,
                  "run a single estimator kind (mmse, ml, map, lmmse)");
  cmd->add_flag("--no-dither", ov.no_dither, "requantize without dither");
  cmd->add_flag("--materialize", ov.materialize,
                "build the full table up front");
}

// Overrides change both the config and its report echo, so the echoed
// config still reproduces the run.
RunConfig load_with_overrides(const std::string& path, const Overrides& ov) {
  RunConfig cfg = qlut::load_config(path);
  if (ov.seed) {
    cfg.seed = *ov.seed;
    cfg.echo["seed"] = *ov.seed;
  }
  if (!ov.out.empty()) {
    cfg.out_dir = ov.out;
    cfg.echo["out"] = ov.out;
  }
  if (!ov.estimator.empty()) {
    qlut::EstimatorConfig est = cfg.estimators.front();
    est.kind = qlut::estimator_kind_from_string(ov.estimator);
    cfg.estimators = {est};
    cfg.echo["estimator"] = {{"kind", ov.estimator}};
  }
  if (ov.no_dither) {
    cfg.dither = false;
    cfg.echo["lut"]["dither"] = false;
  }
  if (ov.materialize) {
    cfg.lut_mode = qlut::LutMode::materialized;
    cfg.echo["lut"]["mode"] = "materialized";
  }
  if (cfg.out_dir.empty()) cfg.out_dir = "out";
  return cfg;
}

void print_summary(const qlut::PointReport& pt, const std::string& prefix) {
  if (!pt.error.empty()) {
    std::cout << prefix << "f=" << pt.frequency << " error: " << pt.error
              << '\n';
    return;
  }
  for (const qlut::StageReport& st : pt.stages) {
    std::cout << prefix << "f=" << pt.frequency << ' ' << st.name;
    const qlut::MetricsReport& m = st.metrics;
    if (m.mse_db) std::printf(" mse=%.2f", *m.mse_db);
    if (m.sfdr_dbc) std::printf(" sfdr=%.2f", *m.sfdr_dbc);
    if (m.evm_rms_db) std::printf(" evm=%.2f", *m.evm_rms_db);
    if (m.cfo_ratio_db) std::printf(" cfo_ratio=%.2f", *m.cfo_ratio_db);
    if (st.fallback_samples > 0)
      std::cout << " fallback=" << st.fallback_samples;
    std::cout << '\n';
  }
}

int finish_run(const RunConfig& cfg, const RunReport& report, double seconds) {
  qlut::emit_outputs(report, cfg.out_dir);
  {
    std::ofstream log(std::filesystem::path(cfg.out_dir) / "run.log",
                      std::ios::app);
    log << "wall_clock_seconds " << seconds << '\n';
  }
  for (const qlut::PointReport& pt : report.points) print_summary(pt, "  ");
  for (const qlut::SweepRow& row : report.rows) {
    if (!row.error.empty()) {
      std::cout << "  " << report.sweep_axis << "=" << row.value
                << " error: " << row.error << '\n';
      continue;
    }
    for (const qlut::PointReport& pt : row.points)
      print_summary(pt, "  " + report.sweep_axis + "=" +
                            std::to_string(row.value) + " ");
  }
  std::cout << "report: "
            << (std::filesystem::path(cfg.out_dir) / "report.json").string()
            << '\n';
  return 0;
}

int cmd_run(const std::string& config, const Overrides& ov, int workers,
            bool sweep) {
  RunConfig cfg = load_with_overrides(config, ov);
  auto start = std::chrono::steady_clock::now();
  RunReport report = sweep ? qlut::sweep_scenario(cfg, workers)
                           : qlut::run_scenario(cfg, workers);
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return finish_run(cfg, report, seconds);
}

int cmd_build_lut(const std::string& config, const Overrides& ov, int workers) {
  RunConfig cfg = load_with_overrides(config, ov);
  if (cfg.model.window < 1)
    throw std::invalid_argument("build-lut: config window must be >= 1");
  std::string path = cfg.lut_file.empty()
                         ? (std::filesystem::path(cfg.out_dir) / "table.lut")
                               .string()
                         : cfg.lut_file;
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path().empty()
          ? "."
          : std::filesystem::path(path).parent_path().string());
  qlut::Lut lut(cfg.model, cfg.estimators.front(), cfg.lut_mode, workers);
  lut.save(path);
  std::cout << "table: " << path << "\nhash: " << std::hex << lut.hash()
            << std::dec << "\nentries: " << lut.size() << " / "
            << lut.capacity() << "\nfallback entries: " << lut.fallback_count()
            << '\n';
  return 0;
}

int cmd_inspect_lut(const std::string& file) {
  qlut::LutFileInfo info = qlut::lut_file_info(file);
  std::cout << "bits: " << info.bits << "\nwindow: " << info.window
            << "\nestimator: " << qlut::to_string(info.kind)
            << "\nmode: " << qlut::to_string(info.mode) << "\nhash: "
            << std::hex << info.hash << std::dec << "\nentries: " << info.count
            << " / " << info.capacity
            << "\nfallback entries: " << info.fallbacks << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized-signal recovery scenario runner"};
  app.require_subcommand(1);

  std::string run_config, sweep_config, build_config, inspect_file;
  Overrides run_ov, sweep_ov, build_ov;
  int run_workers = 1, sweep_workers = 1, build_workers = 1;

  CLI::App* run = app.add_subcommand("run", "run one scenario");
  add_common_flags(run, run_config, run_ov, run_workers);

  CLI::App* sweep = app.add_subcommand("sweep", "sweep a parameter axis");
  add_common_flags(sweep, sweep_config, sweep_ov, sweep_workers);

  CLI::App* build = app.add_subcommand("build-lut", "build and save a table");
  add_common_flags(build, build_config, build_ov, build_workers);

  CLI::App* inspect =
      app.add_subcommand("inspect-lut", "describe a saved table file");
  inspect->add_option("file", inspect_file, "table file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_config, run_ov, run_workers, false);
    if (sweep->parsed())
      return cmd_run(sweep_config, sweep_ov, sweep_workers, true);
    if (build->parsed())
      return cmd_build_lut(build_config, build_ov, build_workers);
    if (inspect->parsed()) return cmd_inspect_lut(inspect_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
