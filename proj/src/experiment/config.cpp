#include "clta/experiment/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "clta/errors.hpp"
#include "clta/random.hpp"

namespace clta::exp {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || value.empty()) throw ValidationError(key, "expected a non-negative integer, got '" + value + "'");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || value.empty()) throw ValidationError(key, "expected an integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  if (value.empty()) throw ValidationError(key, "expected a number");
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || !std::isfinite(out)) {
    throw ValidationError(key, "expected a finite number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "off" || value == "no" || value == "0") return false;
  throw ValidationError(key, "expected true or false, got '" + value + "'");
}

bool is_none(const std::string& value) { return value == "none" || value.empty(); }

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(value)) out.push_back(parse_size(key, item));
  return out;
}

std::string size_list(const std::vector<std::size_t>& v) {
  return join<std::size_t>(v, [](const std::size_t& x) { return std::to_string(x); });
}

template <class E>
E parse_enum(const std::string& key, const std::string& value, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, e] : table) {
    if (name == value) return e;
  }
  std::string options;
  for (const auto& [name, e] : table) options += (options.empty() ? "" : "|") + name;
  throw ValidationError(key, "expected one of " + options + ", got '" + value + "'");
}

template <class E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, v] : table) {
    if (v == e) return name;
  }
  return "?";
}

using DatasetKind = DatasetConfig::Kind;
const std::vector<std::pair<std::string, DatasetKind>> kDatasetKinds{
    {"synthetic", DatasetKind::Synthetic}, {"idx", DatasetKind::Idx}, {"cifar", DatasetKind::Cifar}};
using SchemeKind = data::SplitScheme::Kind;
const std::vector<std::pair<std::string, SchemeKind>> kSchemes{{"equal", SchemeKind::Equal},
                                                               {"half_first", SchemeKind::HalfFirst}};
using Pattern = CorruptionConfig::Pattern;
const std::vector<std::pair<std::string, Pattern>> kPatterns{{"none", Pattern::None},
                                                             {"every_other", Pattern::EveryOther}};
using Arch = ModelConfig::Arch;
const std::vector<std::pair<std::string, Arch>> kArchs{{"mlp", Arch::Mlp}, {"cnn", Arch::Cnn}};
const std::vector<std::pair<std::string, nn::NormKind>> kNorms{
    {"bn", nn::NormKind::Batch}, {"none", nn::NormKind::None}, {"ln", nn::NormKind::Layer}, {"gn", nn::NormKind::Group}};
const std::vector<std::pair<std::string, nn::HeadInit>> kHeadInits{{"kaiming", nn::HeadInit::KaimingUniform},
                                                                   {"zeros", nn::HeadInit::Zeros}};
const std::vector<std::pair<std::string, nn::AdaptForward>> kAdaptForward{
    {"batch", nn::AdaptForward::BatchStats}, {"running", nn::AdaptForward::RunningStats}};

distill::KDVariant parse_variant(const std::string& key, const std::string& value) {
  if (auto v = distill::parse_kd_variant(value)) return *v;
  throw ValidationError(key, "expected one of none|gkd|tkd|mkd|ancl, got '" + value + "'");
}

distill::StrategyKind parse_strategy(const std::string& key, const std::string& value) {
  if (auto v = distill::parse_strategy_kind(value)) return *v;
  throw ValidationError(key, "expected one of frozen|ta|ct_fm|ct_bn|p_fm|p_bn|fixbn, got '" + value + "'");
}

std::string optional_u64(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : "none"; }
std::string optional_double(const std::optional<double>& v) { return v ? format_double(*v) : "none"; }

struct KeyDef {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<KeyDef> table{
      {"experiment.id", [](C& c, S, S v) { c.id = v; }, [](const C& c) { return c.id; }},
      {"experiment.output_dir", [](C& c, S, S v) { c.output_dir = v; },
       [](const C& c) { return c.output_dir.string(); }},
      {"experiment.seeds",
       [](C& c, S k, S v) {
         c.seeds.clear();
         for (const auto& item : split_list(v)) c.seeds.push_back(parse_u64(k, item));
       },
       [](const C& c) {
         return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
       }},
      {"experiment.threads", [](C& c, S k, S v) { c.threads = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.threads); }},
      {"experiment.timing", [](C& c, S k, S v) { c.record_timing = parse_bool(k, v); },
       [](const C& c) { return std::string(c.record_timing ? "true" : "false"); }},

      {"dataset.kind", [](C& c, S k, S v) { c.dataset.kind = parse_enum(k, v, kDatasetKinds); },
       [](const C& c) { return enum_name(c.dataset.kind, kDatasetKinds); }},
      {"dataset.seed", [](C& c, S k, S v) { c.dataset.seed = is_none(v) ? std::nullopt : std::optional(parse_u64(k, v)); },
       [](const C& c) { return optional_u64(c.dataset.seed); }},
      {"dataset.tasks", [](C& c, S k, S v) { c.dataset.synthetic.n_tasks = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.n_tasks); }},
      {"dataset.classes_per_task", [](C& c, S k, S v) { c.dataset.synthetic.classes_per_task = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.classes_per_task); }},
      {"dataset.sample_shape", [](C& c, S k, S v) { c.dataset.synthetic.sample_shape = parse_size_list(k, v); },
       [](const C& c) { return size_list(c.dataset.synthetic.sample_shape); }},
      {"dataset.samples_per_class", [](C& c, S k, S v) { c.dataset.synthetic.samples_per_class = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.samples_per_class); }},
      {"dataset.shift", [](C& c, S k, S v) { c.dataset.synthetic.shift = parse_double(k, v); },
       [](const C& c) { return format_double(c.dataset.synthetic.shift); }},
      {"dataset.noise_std", [](C& c, S k, S v) { c.dataset.synthetic.noise_std = parse_double(k, v); },
       [](const C& c) { return format_double(c.dataset.synthetic.noise_std); }},
      {"dataset.center_low", [](C& c, S k, S v) { c.dataset.synthetic.center_low = parse_double(k, v); },
       [](const C& c) { return format_double(c.dataset.synthetic.center_low); }},
      {"dataset.center_high", [](C& c, S k, S v) { c.dataset.synthetic.center_high = parse_double(k, v); },
       [](const C& c) { return format_double(c.dataset.synthetic.center_high); }},
      {"dataset.train_fraction", [](C& c, S k, S v) { c.dataset.synthetic.train_fraction = parse_double(k, v); },
       [](const C& c) { return format_double(c.dataset.synthetic.train_fraction); }},
      {"dataset.train_images", [](C& c, S, S v) { c.dataset.train_images = v; },
       [](const C& c) { return c.dataset.train_images.string(); }},
      {"dataset.train_labels", [](C& c, S, S v) { c.dataset.train_labels = v; },
       [](const C& c) { return c.dataset.train_labels.string(); }},
      {"dataset.test_images", [](C& c, S, S v) { c.dataset.test_images = v; },
       [](const C& c) { return c.dataset.test_images.string(); }},
      {"dataset.test_labels", [](C& c, S, S v) { c.dataset.test_labels = v; },
       [](const C& c) { return c.dataset.test_labels.string(); }},
      {"dataset.train_file", [](C& c, S, S v) { c.dataset.train_file = v; },
       [](const C& c) { return c.dataset.train_file.string(); }},
      {"dataset.test_file", [](C& c, S, S v) { c.dataset.test_file = v; },
       [](const C& c) { return c.dataset.test_file.string(); }},

      {"split.scheme", [](C& c, S k, S v) { c.split.scheme.kind = parse_enum(k, v, kSchemes); },
       [](const C& c) { return enum_name(c.split.scheme.kind, kSchemes); }},
      {"split.tasks", [](C& c, S k, S v) { c.split.scheme.count = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.split.scheme.count); }},
      {"split.order_seed",
       [](C& c, S k, S v) { c.split.order_seed = is_none(v) ? std::nullopt : std::optional(parse_u64(k, v)); },
       [](const C& c) { return optional_u64(c.split.order_seed); }},

      {"corruption.pattern", [](C& c, S k, S v) { c.corruption.pattern = parse_enum(k, v, kPatterns); },
       [](const C& c) { return enum_name(c.corruption.pattern, kPatterns); }},
      {"corruption.severity", [](C& c, S k, S v) { c.corruption.spec.severity = parse_int(k, v); },
       [](const C& c) { return std::to_string(c.corruption.spec.severity); }},
      {"corruption.sigmas",
       [](C& c, S k, S v) {
         const auto items = split_list(v);
         if (items.size() != 5) throw ValidationError(k, "expected five comma-separated values");
         for (std::size_t i = 0; i < 5; ++i) c.corruption.spec.sigmas[i] = parse_double(k, items[i]);
       },
       [](const C& c) {
         std::vector<double> v(c.corruption.spec.sigmas.begin(), c.corruption.spec.sigmas.end());
         return join<double>(v, [](const double& x) { return format_double(x); });
       }},

      {"model.arch", [](C& c, S k, S v) { c.model.arch = parse_enum(k, v, kArchs); },
       [](const C& c) { return enum_name(c.model.arch, kArchs); }},
      {"model.norm", [](C& c, S k, S v) { c.model.norm = parse_enum(k, v, kNorms); },
       [](const C& c) { return enum_name(c.model.norm, kNorms); }},
      {"model.groups", [](C& c, S k, S v) { c.model.groups = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.model.groups); }},
      {"model.hidden", [](C& c, S k, S v) { c.model.hidden = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.model.hidden); }},
      {"model.channels", [](C& c, S k, S v) { c.model.channels = parse_size_list(k, v); },
       [](const C& c) { return size_list(c.model.channels); }},
      {"model.bn_momentum", [](C& c, S k, S v) { c.model.bn_momentum = parse_double(k, v); },
       [](const C& c) { return format_double(c.model.bn_momentum); }},
      {"model.head_init", [](C& c, S k, S v) { c.run.head_init = parse_enum(k, v, kHeadInits); },
       [](const C& c) { return enum_name(c.run.head_init, kHeadInits); }},

      {"kd.variant", [](C& c, S k, S v) { c.run.kd.variant = parse_variant(k, v); },
       [](const C& c) { return std::string(distill::to_string(c.run.kd.variant)); }},
      {"kd.temperature", [](C& c, S k, S v) { c.run.kd.temperature = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.kd.temperature); }},
      {"kd.lambda", [](C& c, S k, S v) { c.run.kd.lambda = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.kd.lambda); }},
      {"kd.lambda_aux",
       [](C& c, S k, S v) { c.run.kd.lambda_aux = is_none(v) ? std::nullopt : std::optional(parse_double(k, v)); },
       [](const C& c) { return optional_double(c.run.kd.lambda_aux); }},

      {"teacher.strategy", [](C& c, S k, S v) { c.run.strategy.kind = parse_strategy(k, v); },
       [](const C& c) { return std::string(distill::to_string(c.run.strategy.kind)); }},
      {"teacher.lr", [](C& c, S k, S v) { c.run.strategy.teacher_lr = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.strategy.teacher_lr); }},
      {"teacher.pretrain_epochs", [](C& c, S k, S v) { c.run.strategy.pretrain_epochs = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.strategy.pretrain_epochs); }},
      {"teacher.ta_forward", [](C& c, S k, S v) { c.run.strategy.ta_forward = parse_enum(k, v, kAdaptForward); },
       [](const C& c) { return enum_name(c.run.strategy.ta_forward, kAdaptForward); }},

      {"train.epochs", [](C& c, S k, S v) { c.run.train.epochs = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.train.epochs); }},
      {"train.batch_size", [](C& c, S k, S v) { c.run.train.batch_size = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.train.batch_size); }},
      {"train.base_lr", [](C& c, S k, S v) { c.run.train.base_lr = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.train.base_lr); }},
      {"train.lr_decay_epochs",
       [](C& c, S k, S v) { c.run.train.lr_decay_epochs = v == "auto" ? std::vector<std::size_t>{} : parse_size_list(k, v); },
       [](const C& c) {
         return c.run.train.lr_decay_epochs.empty() ? std::string("auto") : size_list(c.run.train.lr_decay_epochs);
       }},
      {"train.lr_decay_factor", [](C& c, S k, S v) { c.run.train.lr_decay_factor = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.train.lr_decay_factor); }},
      {"train.momentum", [](C& c, S k, S v) { c.run.train.momentum = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.train.momentum); }},
      {"train.weight_decay", [](C& c, S k, S v) { c.run.train.weight_decay = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.train.weight_decay); }},
      {"train.grad_clip",
       [](C& c, S k, S v) { c.run.train.grad_clip = is_none(v) ? std::nullopt : std::optional(parse_double(k, v)); },
       [](const C& c) { return optional_double(c.run.train.grad_clip); }},

      {"warmup.enabled", [](C& c, S k, S v) { c.run.warmup.enabled = parse_bool(k, v); },
       [](const C& c) { return std::string(c.run.warmup.enabled ? "true" : "false"); }},
      {"warmup.max_lr", [](C& c, S k, S v) { c.run.warmup.max_lr = parse_double(k, v); },
       [](const C& c) { return format_double(c.run.warmup.max_lr); }},
      {"warmup.ramp_epochs", [](C& c, S k, S v) { c.run.warmup.ramp_epochs = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.warmup.ramp_epochs); }},
      {"warmup.max_epochs", [](C& c, S k, S v) { c.run.warmup.max_epochs = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.warmup.max_epochs); }},
      {"warmup.patience", [](C& c, S k, S v) { c.run.warmup.early_stop_patience = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.warmup.early_stop_patience); }},

      {"diagnostics.cka", [](C& c, S k, S v) { c.run.track_cka = parse_bool(k, v); },
       [](const C& c) { return std::string(c.run.track_cka ? "true" : "false"); }},
      {"diagnostics.cka_samples", [](C& c, S k, S v) { c.run.cka_samples = parse_size(k, v); },
       [](const C& c) { return std::to_string(c.run.cka_samples); }},

      {"sweep.strategies",
       [](C& c, S k, S v) {
         c.sweep.strategies.clear();
         for (const auto& item : split_list(v)) c.sweep.strategies.push_back(parse_strategy(k, item));
       },
       [](const C& c) {
         return join<distill::StrategyKind>(c.sweep.strategies,
                                            [](const distill::StrategyKind& s) { return std::string(distill::to_string(s)); });
       }},
      {"sweep.severities",
       [](C& c, S k, S v) {
         c.sweep.severities.clear();
         for (const auto& item : split_list(v)) c.sweep.severities.push_back(parse_int(k, item));
       },
       [](const C& c) { return join<int>(c.sweep.severities, [](const int& s) { return std::to_string(s); }); }},
  };
  return table;
}

const KeyDef* find_key(std::string_view name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ValidationError(where, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where, "expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ValidationError(where, "missing key");
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    const auto* def = find_key(key);
    if (!def) throw ValidationError(key, "unknown key (" + where + ")");
    if (!seen.insert(key).second) throw ValidationError(key, "given twice (" + where + ")");
    def->set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& def : key_table()) {
    const auto dot = def.name.find('.');
    const std::string sec = def.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += def.name.substr(dot + 1) + " = " + def.get(cfg) + "\n";
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (id.empty()) throw ValidationError("experiment.id", "must not be empty");
  if (seeds.empty()) throw ValidationError("experiment.seeds", "at least one seed is required");
  if (threads == 0) throw ValidationError("experiment.threads", "must be >= 1");
  run.validate();

  auto require_file = [](const char* key, const std::filesystem::path& p) {
    if (p.empty()) throw ValidationError(key, "path required");
    if (!std::filesystem::exists(p)) throw ValidationError(key, "file not found: " + p.string());
  };
  switch (dataset.kind) {
    case DatasetConfig::Kind::Synthetic:
      try {
        dataset.synthetic.validate();
      } catch (const ParameterError& e) {
        throw ValidationError("dataset", e.what());
      }
      break;
    case DatasetConfig::Kind::Idx:
      require_file("dataset.train_images", dataset.train_images);
      require_file("dataset.train_labels", dataset.train_labels);
      require_file("dataset.test_images", dataset.test_images);
      require_file("dataset.test_labels", dataset.test_labels);
      break;
    case DatasetConfig::Kind::Cifar:
      require_file("dataset.train_file", dataset.train_file);
      require_file("dataset.test_file", dataset.test_file);
      break;
  }
  if (split.scheme.count == 0) throw ValidationError("split.tasks", "must be >= 1");

  auto check_severity = [](const char* key, int s) {
    if (s < 0 || s > 5) throw ValidationError(key, "must be in 0..5");
  };
  check_severity("corruption.severity", corruption.spec.severity);
  for (int s : sweep.severities) check_severity("sweep.severities", s);
  for (std::size_t i = 0; i < corruption.spec.sigmas.size(); ++i) {
    if (!(corruption.spec.sigmas[i] > 0.0)) throw ValidationError("corruption.sigmas", "must be > 0");
    if (i > 0 && !(corruption.spec.sigmas[i] > corruption.spec.sigmas[i - 1])) {
      throw ValidationError("corruption.sigmas", "must be strictly increasing");
    }
  }

  if (model.hidden == 0) throw ValidationError("model.hidden", "must be >= 1");
  if (model.channels.empty()) throw ValidationError("model.channels", "need at least one block");
  if (!(model.bn_momentum > 0.0 && model.bn_momentum <= 1.0)) throw ValidationError("model.bn_momentum", "must lie in (0, 1]");
  if (model.norm == nn::NormKind::Group) {
    if (model.groups == 0) throw ValidationError("model.groups", "must be >= 1");
    const auto width_ok = [&](std::size_t w) { return w % model.groups == 0; };
    const bool ok = model.arch == ModelConfig::Arch::Mlp ? width_ok(model.hidden)
                                                        : std::all_of(model.channels.begin(), model.channels.end(), width_ok);
    if (!ok) throw ValidationError("model.groups", "must divide every normalized width");
  }
  if (model.arch == ModelConfig::Arch::Cnn && dataset.kind == DatasetConfig::Kind::Synthetic &&
      dataset.synthetic.sample_shape.size() != 3) {
    throw ValidationError("model.arch", "cnn needs image samples (dataset.sample_shape = c, h, w)");
  }
  for (auto s : sweep.strategies) {
    distill::TeacherStrategy probe = run.strategy;
    probe.kind = s;
    probe.validate();
  }
}

std::vector<Variant> expand_variants(const ExperimentConfig& cfg) {
  std::vector<distill::StrategyKind> strategies = cfg.sweep.strategies;
  if (strategies.empty()) strategies.push_back(cfg.run.strategy.kind);
  std::vector<int> severities = cfg.sweep.severities;
  if (severities.empty()) severities.push_back(cfg.corruption.spec.severity);
  std::vector<Variant> out;
  for (auto s : strategies) {
    for (int sev : severities) {
      Variant v;
      v.strategy = s;
      v.severity = sev;
      v.strategy_label = std::string(distill::to_string(s));
      v.config_id = cfg.sweep.active() ? cfg.id + "/" + v.strategy_label + "/sev" + std::to_string(sev) : cfg.id;
      out.push_back(std::move(v));
    }
  }
  return out;
}

data::TaskStream build_task_stream(const ExperimentConfig& cfg, int severity, std::uint64_t seed) {
  const std::uint64_t data_seed = cfg.dataset.seed.value_or(seed);
  data::TaskStream stream;
  switch (cfg.dataset.kind) {
    case DatasetConfig::Kind::Synthetic:
      stream = data::synthetic_stream(cfg.dataset.synthetic, data_seed);
      break;
    case DatasetConfig::Kind::Idx:
    case DatasetConfig::Kind::Cifar: {
      const bool idx = cfg.dataset.kind == DatasetConfig::Kind::Idx;
      const auto train = idx ? data::load_idx(cfg.dataset.train_images, cfg.dataset.train_labels)
                             : data::load_cifar_binary(cfg.dataset.train_file);
      auto test = idx ? data::load_idx(cfg.dataset.test_images, cfg.dataset.test_labels)
                      : data::load_cifar_binary(cfg.dataset.test_file);
      const std::size_t classes = std::max(train.num_classes, test.num_classes);
      auto train_c = train;
      train_c.num_classes = classes;
      test.num_classes = classes;
      stream = data::build_stream(train_c, test, data::split_classes(classes, cfg.split.scheme, cfg.split.order_seed));
      break;
    }
  }
  if (cfg.corruption.pattern == CorruptionConfig::Pattern::EveryOther && severity > 0) {
    data::CorruptionSpec spec = cfg.corruption.spec;
    spec.severity = severity;
    stream = data::corrupt_every_other(stream, spec, data_seed ^ tag(RngTag::Corruption));
  }
  return stream;
}

nn::IncrementalModel build_model(const ModelConfig& cfg, const ad::Shape& sample_shape, std::uint64_t seed) {
  if (cfg.arch == ModelConfig::Arch::Cnn) {
    nn::CnnSpec spec;
    spec.input_shape = sample_shape;
    spec.channels = cfg.channels;
    spec.norm = cfg.norm;
    spec.groups = cfg.groups;
    spec.bn_momentum = cfg.bn_momentum;
    return nn::build_micro_cnn(spec, seed);
  }
  nn::MlpSpec spec;
  spec.input_dim = ad::element_count(sample_shape);
  spec.hidden = cfg.hidden;
  spec.norm = cfg.norm;
  spec.groups = cfg.groups;
  spec.bn_momentum = cfg.bn_momentum;
  auto model = nn::build_micro_mlp(spec, seed);
  if (sample_shape.size() != 1) {
    model.backbone.insert(model.backbone.begin(), nn::FlattenLayer{});
    model.input_shape = sample_shape;
  }
  return model;
}

}  // namespace clta::exp
