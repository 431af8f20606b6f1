// Command-line front end: run, validate, plot and report experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clta/errors.hpp"
#include "clta/experiment/config.hpp"
#include "clta/experiment/plots.hpp"
#include "clta/experiment/results.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationFailed = 1;
constexpr int kRunFailed = 2;

namespace fs = std::filesystem;
using namespace clta;

int print_validation_error(const ValidationError& e) {
  std::cerr << "invalid config: " << e.what() << "\n";
  return kValidationFailed;
}

int cmd_validate(const fs::path& config_path, bool dump) {
  try {
    const auto cfg = exp::load_config(config_path);
    if (dump) std::cout << exp::dump_config(cfg);
    std::cout << "ok: " << exp::expand_variants(cfg).size() << " configuration(s) x " << cfg.seeds.size()
              << " seed(s)\n";
    return kOk;
  } catch (const ValidationError& e) {
    return print_validation_error(e);
  } catch (const Error& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kValidationFailed;
  }
}

void print_report(const exp::ResultsTable& table) {
  std::printf("%-36s %3s %19s %19s %19s %19s\n", "config", "n", "acc_inc", "acc_final", "forg_inc", "forg_final");
  for (const auto& a : table.aggregates) {
    auto cell = [](double m, double s) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.4f +- %.4f", m, s);
      return std::string(buf);
    };
    std::printf("%-36s %3zu %19s %19s %19s %19s\n", a.config_id.c_str(), a.n, cell(a.acc_inc_mean, a.acc_inc_std).c_str(),
                cell(a.acc_final_mean, a.acc_final_std).c_str(), cell(a.forg_inc_mean, a.forg_inc_std).c_str(),
                cell(a.forg_final_mean, a.forg_final_std).c_str());
  }
  for (const auto& r : table.rows) {
    if (!r.ok) std::printf("FAILED %s seed %llu: %s\n", r.config_id.c_str(), static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
}

int cmd_run(const fs::path& config_path, bool quiet, bool plots) {
  exp::ExperimentConfig cfg;
  try {
    cfg = exp::load_config(config_path);
  } catch (const ValidationError& e) {
    return print_validation_error(e);
  } catch (const Error& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kValidationFailed;
  }
  try {
    const auto dir = exp::output_directory(cfg);
    auto progress = [quiet](std::size_t done, std::size_t total, const exp::ResultRow& row) {
      if (quiet) return;
      std::cerr << "[" << done << "/" << total << "] " << row.config_id << " seed " << row.seed << ": "
                << (row.ok ? "acc_inc " + exp::format_number(row.acc_inc) : "failed: " + row.error) << "\n";
    };
    const auto table = exp::run_experiment(cfg, progress);
    exp::write_results(table, dir);
    {
      std::ofstream out(dir / "config.cfg");
      out << exp::dump_config(cfg);
    }
    if (plots) {
      const auto report = exp::emit_plots(table, dir / "plots");
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    }
    if (!quiet) print_report(table);
    std::cout << "results written to " << dir.string() << "\n";
    return table.all_ok() ? kOk : kRunFailed;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kRunFailed;
  }
}

int cmd_plot(const fs::path& run_dir, const fs::path& out_dir) {
  try {
    const auto table = exp::read_results(run_dir);
    const auto report = exp::emit_plots(table, out_dir.empty() ? run_dir / "plots" : out_dir);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& p : report.written) std::cout << p.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "plot failed: " << e.what() << "\n";
    return kRunFailed;
  }
}

int cmd_report(const fs::path& run_dir) {
  try {
    print_report(exp::read_results(run_dir));
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "report failed: " << e.what() << "\n";
    return kRunFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental distillation experiments"};
  app.require_subcommand(1);

  fs::path run_config;
  bool quiet = false, no_plots = false;
  auto* run = app.add_subcommand("run", "Run every configuration and seed of an experiment");
  run->add_option("config", run_config, "Experiment config file")->required();
  run->add_flag("-q,--quiet", quiet, "Only print the output location");
  run->add_flag("--no-plots", no_plots, "Skip SVG plots");

  fs::path validate_config;
  bool dump = false;
  auto* validate = app.add_subcommand("validate", "Check a config and print the normalized form");
  validate->add_option("config", validate_config, "Experiment config file")->required();
  validate->add_flag("--dump", dump, "Print every key with its effective value");

  fs::path plot_dir, plot_out;
  auto* plot = app.add_subcommand("plot", "Render SVG plots from a finished run");
  plot->add_option("run_dir", plot_dir, "Run output directory")->required();
  plot->add_option("-o,--out", plot_out, "Directory for the SVG files (default: <run_dir>/plots)");

  fs::path report_dir;
  auto* report = app.add_subcommand("report", "Print the aggregate table of a finished run");
  report->add_option("run_dir", report_dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidationFailed;
  }

  if (*run) return cmd_run(run_config, quiet, !no_plots);
  if (*validate) return cmd_validate(validate_config, dump);
  if (*plot) return cmd_plot(plot_dir, plot_out);
  if (*report) return cmd_report(report_dir);
  return kValidationFailed;
}
