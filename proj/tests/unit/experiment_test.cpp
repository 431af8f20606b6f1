#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <stdlib.h>

#include <gtest/gtest.h>

#include "clta/errors.hpp"
#include "clta/experiment/config.hpp"
#include "clta/experiment/plots.hpp"
#include "clta/experiment/results.hpp"
#include "generators.hpp"

using namespace clta;
using exp::ExperimentConfig;

namespace {

// Small enough to run in well under a second per seed.
const char* kTinyConfig = R"(# tiny shifted stream
[experiment]
id = tiny
seeds = 1, 2
timing = false

[dataset]
tasks = 2
sample_shape = 8
samples_per_class = 20
shift = 0.1

[model]
hidden = 8

[kd]
lambda = 1

[train]
epochs = 2
batch_size = 16

[diagnostics]
cka_samples = 16
)";

std::string field_of(const std::string& text, const std::string& key) {
  try {
    exp::parse_config(text);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "";
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

// Coordinates of every polyline, in document order.
std::vector<std::vector<std::pair<double, double>>> polylines(const std::string& svg) {
  std::vector<std::vector<std::pair<double, double>>> out;
  const std::regex re("<polyline[^>]*points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    std::vector<std::pair<double, double>> pts;
    std::istringstream in((*it)[1].str());
    std::string pair;
    while (in >> pair) {
      const auto comma = pair.find(',');
      pts.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
    }
    out.push_back(std::move(pts));
  }
  return out;
}

exp::ResultRow hand_row(std::string id, std::uint64_t seed, std::vector<std::vector<double>> a) {
  exp::ResultRow r;
  r.config_id = std::move(id);
  r.seed = seed;
  exp::fill_metrics(r, metrics::AccuracyMatrix::from_rows(std::move(a)));
  return r;
}

}  // namespace

TEST(Config, MinimalConfigDefaultsAndRoundTrips) {
  const auto cfg = exp::parse_config("[experiment]\nseeds = 3\n");
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(cfg.run.kd.temperature, 2.0);
  EXPECT_EQ(cfg.run.train.batch_size, 128u);
  const auto dump = exp::dump_config(cfg);
  EXPECT_EQ(exp::dump_config(exp::parse_config(dump)), dump);
}

TEST(Config, EveryKeyRoundTrips) {
  const auto cfg = exp::parse_config(kTinyConfig);
  const auto dump = exp::dump_config(cfg);
  for (const auto& key : exp::config_keys()) {
    const auto leaf = key.substr(key.find('.') + 1);
    EXPECT_NE(dump.find("\n" + leaf + " ="), std::string::npos) << key;
  }
  const auto again = exp::parse_config(dump);
  EXPECT_EQ(exp::dump_config(again), dump);
  EXPECT_EQ(again.run.kd.lambda, 1.0);
  EXPECT_EQ(again.dataset.synthetic.shift, 0.1);
  EXPECT_FALSE(again.record_timing);
}

TEST(Config, NonDefaultValuesSurviveRoundTrip) {
  const auto cfg = exp::parse_config(R"(
[experiment]
seeds = 5, 6, 7
threads = 3
[dataset]
sample_shape = 3, 8, 8
[model]
arch = cnn
norm = gn
channels = 4, 8, 8
[kd]
variant = ancl
lambda_aux = 0.3
[teacher]
strategy = p_bn
lr = 0.001
ta_forward = running
[train]
lr_decay_epochs = 5, 9
epochs = 12
grad_clip = 100
[sweep]
strategies = frozen, ta
severities = 0, 1, 5
)");
  const auto back = exp::parse_config(exp::dump_config(cfg));
  EXPECT_EQ(back.model.arch, exp::ModelConfig::Arch::Cnn);
  EXPECT_EQ(back.model.norm, nn::NormKind::Group);
  EXPECT_EQ(back.run.kd.lambda_aux, 0.3);
  EXPECT_EQ(back.run.strategy.ta_forward, nn::AdaptForward::RunningStats);
  EXPECT_EQ(back.run.train.grad_clip, 100.0);
  EXPECT_EQ(back.run.train.lr_decay_epochs, (std::vector<std::size_t>{5, 9}));
  EXPECT_EQ(exp::expand_variants(back).size(), 6u);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_of("[experiment]\nseeds = 1\n[kd]\nlambda = -1\n", "kd.lambda"), "kd.lambda");
  EXPECT_EQ(field_of("[experiment]\nseeds = 1\n[kd]\ntemperature = 0\n", ""), "kd.temperature");
  EXPECT_EQ(field_of("[experiment]\nseeds = 1\n[teacher]\nstrategy = ct_fm\nlr = 0\n", ""), "teacher.lr");
  EXPECT_EQ(field_of("[experiment]\nseeds = 1\n[dataset]\nkind = idx\ntrain_images = /no/such/file\n", ""),
            "dataset.train_images");
  EXPECT_EQ(field_of("[kd]\nlambda = 1\n", ""), "experiment.seeds");
}

TEST(Config, TypoIsUnknownKeyWithLine) {
  try {
    exp::parse_config("[experiment]\nseeds = 1\n[kd]\ntemparature = 2\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "kd.temparature");
    const std::string what = e.what();
    EXPECT_NE(what.find("unknown key"), std::string::npos);
    EXPECT_NE(what.find("line 4"), std::string::npos);
  }
}

TEST(Config, SyntaxErrorCarriesLine) {
  try {
    exp::parse_config("[experiment]\nseeds = 1\nnot a pair\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(exp::parse_config("[experiment]\nseeds = x\n"), ValidationError);
  EXPECT_THROW(exp::parse_config("[experiment\nseeds = 1\n"), ValidationError);
}

TEST(Results, FormatsSixSignificantDigits) {
  EXPECT_EQ(exp::format_number(0.725), "0.725");
  EXPECT_EQ(exp::format_number(1.0 / 3.0), "0.333333");
  EXPECT_EQ(exp::format_number(0.0), "0");
  EXPECT_EQ(exp::format_number(1234567.0), "1.23457e+06");
}

TEST(Results, CsvFixtureFromHandMetrics) {
  exp::ResultsTable table;
  table.rows.push_back(hand_row("base", 1, {{0.8}, {0.6, 0.7}}));
  table.aggregates = exp::aggregate(table.rows);
  EXPECT_EQ(exp::results_csv(table),
            "config_id,seed,acc_inc,acc_final,forg_inc,forg_final,wall_s,a_k_1,a_k_2\n"
            "base,1,0.725,0.65,0.2,0.2,0,0.8,0.65\n");
  EXPECT_EQ(exp::aggregate_csv(table),
            "config_id,n,acc_inc_mean,acc_inc_std,acc_final_mean,acc_final_std,forg_inc_mean,forg_inc_std,"
            "forg_final_mean,forg_final_std,wall_s_mean,wall_s_std,a_k_1_mean,a_k_1_std,a_k_2_mean,a_k_2_std\n"
            "base,1,0.725,0,0.65,0,0.2,0,0.2,0,0,0,0.8,0,0.65,0\n");
}

TEST(Results, AggregatesMatchIndependentRecomputation) {
  testkit::Gen g(8);
  std::vector<exp::ResultRow> rows;
  for (std::uint64_t s = 0; s < 7; ++s) {
    rows.push_back(hand_row(s % 2 ? "a" : "b", s, testkit::random_accuracy_rows(g, 3)));
  }
  rows[3].ok = false;
  const auto aggs = exp::aggregate(rows);
  ASSERT_EQ(aggs.size(), 2u);
  EXPECT_EQ(aggs[0].config_id, "b");
  for (const auto& agg : aggs) {
    std::vector<double> xs;
    for (const auto& r : rows) {
      if (r.config_id == agg.config_id && r.ok) xs.push_back(r.acc_inc);
    }
    ASSERT_EQ(agg.n, xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    EXPECT_EQ(agg.acc_inc_mean, mean);
    EXPECT_EQ(agg.acc_inc_std, std::sqrt(ss / static_cast<double>(xs.size() - 1)));
  }
}

TEST(Results, MeanStd) {
  EXPECT_EQ(exp::mean_std({2.0}), (std::pair{2.0, 0.0}));
  const auto [m, s] = exp::mean_std({1.0, 3.0});
  EXPECT_EQ(m, 2.0);
  EXPECT_DOUBLE_EQ(s, std::sqrt(2.0));
}

TEST(Experiment, RunsWritesAndReadsBack) {
  auto cfg = exp::parse_config(kTinyConfig);
  const auto dir = std::filesystem::temp_directory_path() / "clta_experiment_test";
  std::filesystem::remove_all(dir);
  const auto table = exp::run_experiment(cfg);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_TRUE(table.all_ok());
  EXPECT_EQ(table.rows[0].a_k.size(), 2u);
  EXPECT_EQ(table.rows[0].wall_s, 0.0);
  exp::write_results(table, dir);
  const auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto csv = read(dir / "results.csv");
  EXPECT_EQ(csv, exp::results_csv(table));
  EXPECT_EQ(csv.back(), '\n');
  const auto back = exp::read_results(dir);
  EXPECT_EQ(exp::results_csv(back), csv);
  EXPECT_EQ(exp::aggregate_csv(back), exp::aggregate_csv(table));
  ASSERT_TRUE(back.rows[1].run.has_value());
  EXPECT_EQ(back.rows[1].run->tasks.size(), 2u);
  // Rewriting identical tables gives identical bytes.
  exp::write_results(back, dir / "again");
  EXPECT_EQ(read(dir / "again" / "results.json"), read(dir / "results.json"));
  std::filesystem::remove_all(dir);
}

TEST(Experiment, ConcurrentEqualsSequential) {
  auto cfg = exp::parse_config(kTinyConfig);
  cfg.seeds = {1, 2, 3, 4};
  const auto sequential = exp::run_experiment(cfg);
  cfg.threads = 3;
  const auto concurrent = exp::run_experiment(cfg);
  EXPECT_EQ(exp::results_csv(sequential), exp::results_csv(concurrent));
  EXPECT_EQ(exp::results_json(sequential), exp::results_json(concurrent));
}

TEST(Experiment, RepeatedSeedGivesZeroSpread) {
  auto cfg = exp::parse_config(kTinyConfig);
  cfg.seeds = {9, 9};
  const auto table = exp::run_experiment(cfg);
  EXPECT_EQ(table.rows[0].a_k, table.rows[1].a_k);
  EXPECT_EQ(table.aggregates[0].acc_inc_std, 0.0);
  EXPECT_EQ(table.aggregates[0].forg_final_std, 0.0);
}

TEST(Experiment, SingleTaskForgetsNothing) {
  auto cfg = exp::parse_config(kTinyConfig);
  cfg.dataset.synthetic.n_tasks = 1;
  cfg.split.scheme.count = 1;
  cfg.seeds = {1};
  const auto table = exp::run_experiment(cfg);
  ASSERT_TRUE(table.all_ok());
  EXPECT_EQ(table.rows[0].forg_inc, 0.0);
  EXPECT_EQ(table.rows[0].forg_final, 0.0);
}

TEST(Experiment, FailedRunBecomesRow) {
  // The files exist, so validation passes; parsing fails once the run starts.
  const auto dir = std::filesystem::temp_directory_path() / "clta_bad_idx";
  std::filesystem::create_directories(dir);
  for (const char* name : {"img", "lbl"}) std::ofstream(dir / name) << "not an idx file";
  auto cfg = exp::parse_config(kTinyConfig);
  cfg.dataset.kind = exp::DatasetConfig::Kind::Idx;
  cfg.dataset.train_images = cfg.dataset.test_images = dir / "img";
  cfg.dataset.train_labels = cfg.dataset.test_labels = dir / "lbl";
  const auto table = exp::run_experiment(cfg);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_FALSE(table.all_ok());
  EXPECT_FALSE(table.rows[0].error.empty());
  EXPECT_TRUE(std::isnan(table.rows[0].acc_inc));
  EXPECT_EQ(table.aggregates[0].n, 0u);
  EXPECT_NE(exp::results_json(table).find("\"error\""), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, ModelMatchesInputs) {
  exp::ModelConfig mlp;
  const auto m = exp::build_model(mlp, {1, 4, 4}, 1);
  EXPECT_EQ(m.num_heads(), 0u);
  EXPECT_EQ(m.input_shape, (ad::Shape{1, 4, 4}));
  exp::ModelConfig cnn;
  cnn.arch = exp::ModelConfig::Arch::Cnn;
  EXPECT_EQ(exp::build_model(cnn, {3, 8, 8}, 1).feature_dim, 32u);
}

TEST(Plots, ConstantTraceIsHorizontal) {
  exp::LineChart chart{"t", "x", "y", {{"flat", {{1, 0.5}, {2, 0.5}, {3, 0.5}, {4, 0.5}}}}};
  const auto lines = polylines(exp::render_svg(chart));
  ASSERT_EQ(lines.size(), 1u);
  ASSERT_EQ(lines[0].size(), 4u);
  for (const auto& p : lines[0]) EXPECT_EQ(p.second, lines[0][0].second);
}

TEST(Plots, TwoPointTrace) {
  exp::LineChart chart{"t", "x", "y", {{"s", {{0, 1}, {1, 2}}}}};
  const auto svg = exp::render_svg(chart);
  EXPECT_EQ(count_of(svg, "<polyline"), 1u);
  const auto lines = polylines(svg);
  EXPECT_EQ(lines[0].size(), 2u);
  EXPECT_LT(lines[0][1].second, lines[0][0].second);  // larger y is drawn higher
  EXPECT_EQ(svg, exp::render_svg(chart));
}

TEST(Plots, EscapesText) {
  exp::LineChart chart{"a<b & c", "x", "y", {{"s\"q", {{0, 1}, {1, 2}}}}};
  const auto svg = exp::render_svg(chart);
  EXPECT_NE(svg.find("a&lt;b &amp; c"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
}

TEST(Plots, SeveritySweepChart) {
  exp::ResultsTable table;
  for (const char* strategy : {"frozen", "ta"}) {
    for (int severity : {1, 3, 5}) {
      auto r = hand_row(std::string(strategy) + "_s" + std::to_string(severity), 1, {{0.9}, {0.5, 0.6}});
      r.strategy = strategy;
      r.severity = severity;
      table.rows.push_back(r);
    }
  }
  table.aggregates = exp::aggregate(table.rows);
  const auto dir = std::filesystem::temp_directory_path() / "clta_plot_test";
  std::filesystem::remove_all(dir);
  const auto report = exp::emit_plots(table, dir);
  std::ifstream in(dir / "severity.svg");
  const std::string svg(std::istreambuf_iterator<char>(in), {});
  const auto lines = polylines(svg);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0].size(), 3u);
  EXPECT_EQ(lines[1].size(), 3u);
  // No traces were attached, so every loss plot is skipped with a warning.
  EXPECT_EQ(report.warnings.size(), 6u);
  EXPECT_NE(report.warnings[0].find("no loss traces"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, OutputRootOverride) {
  auto cfg = exp::parse_config("[experiment]\nid = x\noutput_dir = out\nseeds = 1\n");
  ::unsetenv("CLTA_OUTPUT_ROOT");
  EXPECT_EQ(exp::output_directory(cfg), std::filesystem::path("out") / "x");
  ::setenv("CLTA_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  EXPECT_EQ(exp::output_directory(cfg), std::filesystem::path("/tmp/elsewhere") / "x");
  ::unsetenv("CLTA_OUTPUT_ROOT");
}
