#include "clta/experiment/results.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "clta/errors.hpp"

namespace clta::exp {

using nlohmann::json;

bool ResultsTable::all_ok() const {
  for (const auto& r : rows) {
    if (!r.ok) return false;
  }
  return true;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size() - 1))};
}

void fill_metrics(ResultRow& row, const metrics::AccuracyMatrix& m) {
  const auto report = metrics::summarize(m);
  row.acc_inc = report.accuracy.acc_inc;
  row.acc_final = report.accuracy.acc_final;
  row.forg_inc = report.forgetting.forg_inc;
  row.forg_final = report.forgetting.forg_final;
  row.a_k = report.accuracy.per_task;
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
  std::vector<AggregateRow> out;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.config_id) == order.end()) order.push_back(r.config_id);
  }
  for (const auto& id : order) {
    AggregateRow agg;
    agg.config_id = id;
    std::vector<double> acc_inc, acc_final, forg_inc, forg_final, wall;
    std::vector<std::vector<double>> a_k;
    for (const auto& r : rows) {
      if (r.config_id != id || !r.ok) continue;
      acc_inc.push_back(r.acc_inc);
      acc_final.push_back(r.acc_final);
      forg_inc.push_back(r.forg_inc);
      forg_final.push_back(r.forg_final);
      wall.push_back(r.wall_s);
      if (a_k.size() < r.a_k.size()) a_k.resize(r.a_k.size());
      for (std::size_t k = 0; k < r.a_k.size(); ++k) a_k[k].push_back(r.a_k[k]);
    }
    agg.n = acc_inc.size();
    std::tie(agg.acc_inc_mean, agg.acc_inc_std) = mean_std(acc_inc);
    std::tie(agg.acc_final_mean, agg.acc_final_std) = mean_std(acc_final);
    std::tie(agg.forg_inc_mean, agg.forg_inc_std) = mean_std(forg_inc);
    std::tie(agg.forg_final_mean, agg.forg_final_std) = mean_std(forg_final);
    std::tie(agg.wall_s_mean, agg.wall_s_std) = mean_std(wall);
    for (const auto& col : a_k) {
      auto [m, s] = mean_std(col);
      agg.a_k_mean.push_back(m);
      agg.a_k_std.push_back(s);
    }
    out.push_back(std::move(agg));
  }
  return out;
}

namespace {

struct Job {
  const Variant* variant;
  std::uint64_t seed;
};

ResultRow execute(const ExperimentConfig& cfg, const Variant& variant, std::uint64_t seed) {
  ResultRow row;
  row.config_id = variant.config_id;
  row.strategy = variant.strategy_label;
  row.severity = variant.severity;
  row.seed = seed;
  try {
    auto stream = build_task_stream(cfg, variant.severity, seed);
    auto model = build_model(cfg.model, stream.tasks.front().train.sample_shape, seed);
    cil::RunConfig run = cfg.run;
    run.strategy.kind = variant.strategy;
    auto result = cil::run_stream(stream, std::move(model), run, seed);
    if (!cfg.record_timing) result.wall_seconds = 0.0;
    fill_metrics(row, result.accuracy);
    row.wall_s = result.wall_seconds;
    row.run = std::move(result);
  } catch (const std::exception& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.ok = false;
    row.error = e.what();
    row.acc_inc = row.acc_final = row.forg_inc = row.forg_final = row.wall_s = nan;
    row.a_k.clear();
  }
  return row;
}

}  // namespace

ResultsTable run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const auto variants = expand_variants(cfg);
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    for (auto s : cfg.seeds) jobs.push_back({&v, s});
  }
  std::vector<ResultRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      rows[i] = execute(cfg, *jobs[i].variant, jobs[i].seed);
      const std::size_t finished = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(finished, jobs.size(), rows[i]);
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(cfg.threads, std::max<std::size_t>(jobs.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  ResultsTable table;
  table.rows = std::move(rows);
  table.aggregates = aggregate(table.rows);
  return table;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

std::size_t max_tasks(const ResultsTable& table) {
  std::size_t n = 0;
  for (const auto& r : table.rows) n = std::max(n, r.a_k.size());
  for (const auto& a : table.aggregates) n = std::max(n, a.a_k_mean.size());
  return n;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::strtod(format_number(v).c_str(), nullptr);
}

json numbers(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(number(v));
  return out;
}

double from_json(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::vector<double> vector_from_json(const json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(from_json(v));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string results_csv(const ResultsTable& table) {
  const std::size_t n = max_tasks(table);
  std::string out = "config_id,seed,acc_inc,acc_final,forg_inc,forg_final,wall_s";
  for (std::size_t k = 1; k <= n; ++k) out += ",a_k_" + std::to_string(k);
  out += "\n";
  for (const auto& r : table.rows) {
    out += csv_field(r.config_id) + "," + std::to_string(r.seed);
    for (double v : {r.acc_inc, r.acc_final, r.forg_inc, r.forg_final, r.wall_s}) out += "," + format_number(v);
    for (std::size_t k = 0; k < n; ++k) out += "," + (k < r.a_k.size() ? format_number(r.a_k[k]) : std::string());
    out += "\n";
  }
  return out;
}

std::string aggregate_csv(const ResultsTable& table) {
  const std::size_t n = max_tasks(table);
  std::string out = "config_id,n";
  for (const char* m : {"acc_inc", "acc_final", "forg_inc", "forg_final", "wall_s"}) {
    out += std::string(",") + m + "_mean," + m + "_std";
  }
  for (std::size_t k = 1; k <= n; ++k) {
    out += ",a_k_" + std::to_string(k) + "_mean,a_k_" + std::to_string(k) + "_std";
  }
  out += "\n";
  for (const auto& a : table.aggregates) {
    out += csv_field(a.config_id) + "," + std::to_string(a.n);
    for (double v : {a.acc_inc_mean, a.acc_inc_std, a.acc_final_mean, a.acc_final_std, a.forg_inc_mean,
                     a.forg_inc_std, a.forg_final_mean, a.forg_final_std, a.wall_s_mean, a.wall_s_std}) {
      out += "," + format_number(v);
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (k < a.a_k_mean.size()) {
        out += "," + format_number(a.a_k_mean[k]) + "," + format_number(a.a_k_std[k]);
      } else {
        out += ",,";
      }
    }
    out += "\n";
  }
  return out;
}

std::string results_json(const ResultsTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json row{{"config_id", r.config_id},
             {"strategy", r.strategy},
             {"severity", r.severity},
             {"seed", r.seed},
             {"status", r.ok ? "ok" : "failed"},
             {"acc_inc", number(r.acc_inc)},
             {"acc_final", number(r.acc_final)},
             {"forg_inc", number(r.forg_inc)},
             {"forg_final", number(r.forg_final)},
             {"wall_s", number(r.wall_s)},
             {"a_k", numbers(r.a_k)}};
    if (!r.ok) row["error"] = r.error;
    if (r.run) {
      json matrix = json::array();
      for (const auto& mrow : r.run->accuracy.rows()) matrix.push_back(numbers(mrow));
      row["accuracy_matrix"] = matrix;
      json tasks = json::array();
      for (const auto& t : r.run->tasks) {
        tasks.push_back({{"ce", numbers(t.ce)},
                         {"kd", numbers(t.kd)},
                         {"cka", numbers(t.cka)},
                         {"warmup_loss", numbers(t.warmup_loss)}});
      }
      row["tasks"] = tasks;
      json kld = json::array();
      for (const auto& k : r.run->bn_kld) kld.push_back(k ? number(*k) : json(nullptr));
      row["bn_kld"] = kld;
      row["task_confusion"] = r.run->task_confusion;
    }
    rows.push_back(std::move(row));
  }
  json aggs = json::array();
  for (const auto& a : table.aggregates) {
    aggs.push_back({{"config_id", a.config_id},
                    {"n", a.n},
                    {"acc_inc", {number(a.acc_inc_mean), number(a.acc_inc_std)}},
                    {"acc_final", {number(a.acc_final_mean), number(a.acc_final_std)}},
                    {"forg_inc", {number(a.forg_inc_mean), number(a.forg_inc_std)}},
                    {"forg_final", {number(a.forg_final_mean), number(a.forg_final_std)}},
                    {"wall_s", {number(a.wall_s_mean), number(a.wall_s_std)}},
                    {"a_k_mean", numbers(a.a_k_mean)},
                    {"a_k_std", numbers(a.a_k_std)}});
  }
  return json{{"rows", rows}, {"aggregates", aggs}}.dump(2) + "\n";
}

void write_results(const ResultsTable& table, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "results.csv", results_csv(table));
  write_text(dir / "aggregate.csv", aggregate_csv(table));
  write_text(dir / "results.json", results_json(table));
}

ResultsTable read_results(const std::filesystem::path& dir) {
  const auto path = dir / "results.json";
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ResultsTable table;
  try {
    for (const auto& j : doc.at("rows")) {
      ResultRow r;
      r.config_id = j.at("config_id").get<std::string>();
      r.strategy = j.value("strategy", "");
      r.severity = j.value("severity", 0);
      r.seed = j.at("seed").get<std::uint64_t>();
      r.ok = j.at("status").get<std::string>() == "ok";
      r.error = j.value("error", "");
      r.acc_inc = from_json(j.at("acc_inc"));
      r.acc_final = from_json(j.at("acc_final"));
      r.forg_inc = from_json(j.at("forg_inc"));
      r.forg_final = from_json(j.at("forg_final"));
      r.wall_s = from_json(j.at("wall_s"));
      r.a_k = vector_from_json(j.at("a_k"));
      if (j.contains("tasks")) {
        cil::RunResult run;
        run.seed = r.seed;
        std::vector<std::vector<double>> matrix;
        for (const auto& mrow : j.at("accuracy_matrix")) matrix.push_back(vector_from_json(mrow));
        run.accuracy = metrics::AccuracyMatrix::from_rows(std::move(matrix));
        for (const auto& t : j.at("tasks")) {
          cil::TaskTrace trace;
          trace.ce = vector_from_json(t.at("ce"));
          trace.kd = vector_from_json(t.at("kd"));
          trace.cka = vector_from_json(t.at("cka"));
          trace.warmup_loss = vector_from_json(t.at("warmup_loss"));
          run.tasks.push_back(std::move(trace));
        }
        for (const auto& k : j.at("bn_kld")) {
          run.bn_kld.push_back(k.is_null() ? std::nullopt : std::optional<double>(k.get<double>()));
        }
        run.task_confusion = j.at("task_confusion").get<std::vector<std::vector<std::size_t>>>();
        run.wall_seconds = r.wall_s;
        r.run = std::move(run);
      }
      table.rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  table.aggregates = aggregate(table.rows);
  return table;
}

std::filesystem::path output_directory(const ExperimentConfig& cfg) {
  std::filesystem::path root = cfg.output_dir;
  if (const char* env = std::getenv("CLTA_OUTPUT_ROOT"); env && *env) root = env;
  return root / cfg.id;
}

}  // namespace clta::exp
