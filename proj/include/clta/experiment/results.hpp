#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clta/experiment/config.hpp"
#include "clta/harness/trainer.hpp"
#include "clta/metrics/metrics.hpp"

namespace clta::exp {

struct ResultRow {
  std::string config_id;
  std::string strategy;  // sweep coordinates, for plotting
  int severity = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;  // set when the run failed
  double acc_inc = 0.0, acc_final = 0.0, forg_inc = 0.0, forg_final = 0.0;
  double wall_s = 0.0;
  std::vector<double> a_k;
  std::optional<cil::RunResult> run;  // full traces when available
};

struct AggregateRow {
  std::string config_id;
  std::size_t n = 0;  // successful seeds
  double acc_inc_mean = 0.0, acc_inc_std = 0.0;
  double acc_final_mean = 0.0, acc_final_std = 0.0;
  double forg_inc_mean = 0.0, forg_inc_std = 0.0;
  double forg_final_mean = 0.0, forg_final_std = 0.0;
  double wall_s_mean = 0.0, wall_s_std = 0.0;
  std::vector<double> a_k_mean, a_k_std;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
  std::vector<AggregateRow> aggregates;

  bool all_ok() const;
};

// Sample mean and standard deviation (n - 1 denominator; 0 when n == 1).
std::pair<double, double> mean_std(const std::vector<double>& values);

// Fills a row's metric columns from an accuracy matrix.
void fill_metrics(ResultRow& row, const metrics::AccuracyMatrix& m);
// One aggregate per config id (first-appearance order) over successful rows.
std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows);

// Called after each finished run with (done, total, row).
using ProgressFn = std::function<void(std::size_t, std::size_t, const ResultRow&)>;

// Runs every (variant, seed) job, `threads` at a time; rows come back in
// (variant, seed) order regardless of completion order. A failing run
// becomes a row with ok = false.
ResultsTable run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// 6-significant-digit CSV / JSON number formatting.
std::string format_number(double v);

std::string results_csv(const ResultsTable& table);
std::string aggregate_csv(const ResultsTable& table);
std::string results_json(const ResultsTable& table);

// results.csv, aggregate.csv and results.json under `dir`.
void write_results(const ResultsTable& table, const std::filesystem::path& dir);
ResultsTable read_results(const std::filesystem::path& dir);

// Output directory of a config, honoring the CLTA_OUTPUT_ROOT override.
std::filesystem::path output_directory(const ExperimentConfig& cfg);

}  // namespace clta::exp
