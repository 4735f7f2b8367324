#include "coscl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "coscl/errors.hpp"

namespace coscl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(s);
  while (std::getline(is, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& raw) {
  T out{};
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || ptr != e) throw ConfigError("invalid value '" + raw + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
  throw ConfigError("invalid boolean '" + raw + "' for " + key);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

// Reads keys and records which ones were used so leftovers can be rejected.
class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  const std::string* raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  template <typename T>
  void num(const std::string& key, T& out) {
    if (auto r = raw(key)) out = parse_value<T>(key, *r);
  }
  void flag(const std::string& key, bool& out) {
    if (auto r = raw(key)) out = parse_bool(key, *r);
  }
  void str(const std::string& key, std::string& out) {
    if (auto r = raw(key)) out = *r;
  }
  template <typename T>
  void list(const std::string& key, std::vector<T>& out) {
    if (auto r = raw(key)) {
      out.clear();
      for (const auto& cell : split_list(*r)) out.push_back(parse_value<T>(key, cell));
    }
  }
  void reject_unknown() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!kv.emplace(full, trim(line.substr(eq + 1))).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
    }
  }
  return kv;
}

std::string canonical_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ExperimentConfig::validate() const {
  if (!csv_path) stream.validate();
  ensemble.validate();
  strategy.validate();
  optimizer.validate();
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (workers == 0) throw ConfigError("run.workers must be >= 1");
  if (probes.flatness_radii.empty() || probes.flatness_radii.front() != 0.0) {
    throw ConfigError("probes.flatness_radii must start at 0");
  }
  for (std::size_t i = 1; i < probes.flatness_radii.size(); ++i) {
    if (probes.flatness_radii[i] < probes.flatness_radii[i - 1]) {
      throw ConfigError("probes.flatness_radii must be ascending");
    }
  }
  if (!csv_path && ensemble.learner_template.input_dim != stream.input_dim) {
    throw ConfigError("learner input_dim must equal stream input_dim");
  }
  (void)resolved_learner();
}

std::size_t ExperimentConfig::model_K() const {
  return ensemble.mode == EnsembleMode::kFeatureEnsemble ? ensemble.K : 1;
}

std::size_t ExperimentConfig::member_count() const {
  return ensemble.mode == EnsembleMode::kClassifierEnsemble ? ensemble.K : 1;
}

LearnerConfig ExperimentConfig::resolved_learner() const {
  LearnerConfig tmpl = ensemble.learner_template;
  // Classifier-ensemble members each own a full set of task heads; splitting
  // the feature dimension keeps their total head size equal to one shared head.
  if (ensemble.mode == EnsembleMode::kClassifierEnsemble) {
    tmpl.feature_dim = std::max<std::size_t>(1, tmpl.feature_dim / ensemble.K);
  }
  if (total_budget == 0) return tmpl;
  const std::size_t learners = ensemble.mode == EnsembleMode::kSingle ? 1 : ensemble.K;
  return budget_match(total_budget, learners, tmpl);
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  if (csv_path) {
    kv["stream.csv"] = csv_path->string();
    kv["stream.csv_features"] = [&] {
      std::string s;
      for (std::size_t i = 0; i < csv_schema.feature_columns.size(); ++i) {
        s += (i ? "," : "") + csv_schema.feature_columns[i];
      }
      return s;
    }();
    kv["stream.csv_label"] = csv_schema.label_column;
    kv["stream.csv_task"] = csv_schema.task_column;
    kv["stream.csv_split_seed"] = std::to_string(csv_split_seed);
  } else {
    kv["stream.kind"] = to_string(stream.kind);
    kv["stream.T"] = std::to_string(stream.T);
    kv["stream.classes_per_task"] = std::to_string(stream.classes_per_task);
    kv["stream.n_train"] = std::to_string(stream.n_train);
    kv["stream.n_test"] = std::to_string(stream.n_test);
    kv["stream.input_dim"] = std::to_string(stream.input_dim);
    kv["stream.seed"] = std::to_string(stream.seed);
    kv["stream.difficulty"] = format_double(stream.difficulty);
  }
  kv["stream.shuffle_task_order"] = shuffle_task_order ? "true" : "false";

  kv["ensemble.mode"] = to_string(ensemble.mode);
  kv["ensemble.K"] = std::to_string(ensemble.K);
  kv["ensemble.gate_scale"] = format_double(ensemble.gate_scale);
  kv["ensemble.gamma"] = format_double(ensemble.gamma);
  kv["ensemble.use_gates"] = ensemble.use_gates ? "true" : "false";
  kv["ensemble.use_ec"] = ensemble.use_ec ? "true" : "false";
  kv["ensemble.total_budget"] = std::to_string(total_budget);

  const auto& lt = ensemble.learner_template;
  kv["learner.input_dim"] = std::to_string(lt.input_dim);
  kv["learner.hidden"] = join(lt.hidden_widths);
  kv["learner.feature_dim"] = std::to_string(lt.feature_dim);
  kv["learner.dropout"] = format_double(lt.dropout_rate);

  kv["strategy.kind"] = to_string(strategy.kind);
  kv["strategy.lambda"] = format_double(strategy.lambda);
  kv["strategy.buffer_capacity"] = std::to_string(strategy.buffer_capacity);

  kv["optimizer.kind"] = to_string(optimizer.kind);
  kv["optimizer.lr"] = format_double(optimizer.lr);
  kv["optimizer.batch"] = std::to_string(optimizer.batch);
  kv["optimizer.epochs"] = std::to_string(optimizer.epochs);

  kv["run.seeds"] = join(seeds);
  // workers and output_dir are left out: neither changes any result.
  kv["run.checkpoints"] = checkpoints ? "true" : "false";
  kv["run.fwt_baseline"] = fwt_baseline ? "true" : "false";

  kv["probes.hdiv"] = probes.hdiv ? "true" : "false";
  kv["probes.flatness"] = probes.flatness ? "true" : "false";
  kv["probes.diversity"] = probes.diversity ? "true" : "false";
  kv["probes.flatness_radii"] = join(probes.flatness_radii);
  kv["probes.flatness_directions"] = std::to_string(probes.flatness_directions);
  return kv;
}

ExperimentConfig config_from_key_values(const KeyValues& kv) {
  ExperimentConfig c;
  Reader r(kv);
  std::string s;

  if (auto p = r.raw("stream.csv")) {
    c.csv_path = *p;
    if (auto f = r.raw("stream.csv_features")) c.csv_schema.feature_columns = split_list(*f);
    r.str("stream.csv_label", c.csv_schema.label_column);
    r.str("stream.csv_task", c.csv_schema.task_column);
    r.num("stream.csv_split_seed", c.csv_split_seed);
  }
  if (r.raw("stream.kind")) c.stream.kind = parse_stream_kind(kv.at("stream.kind"));
  r.num("stream.T", c.stream.T);
  r.num("stream.classes_per_task", c.stream.classes_per_task);
  r.num("stream.n_train", c.stream.n_train);
  r.num("stream.n_test", c.stream.n_test);
  r.num("stream.input_dim", c.stream.input_dim);
  r.num("stream.seed", c.stream.seed);
  r.num("stream.difficulty", c.stream.difficulty);
  r.flag("stream.shuffle_task_order", c.shuffle_task_order);

  if (r.raw("ensemble.mode")) c.ensemble.mode = parse_ensemble_mode(kv.at("ensemble.mode"));
  r.num("ensemble.K", c.ensemble.K);
  r.num("ensemble.gate_scale", c.ensemble.gate_scale);
  r.num("ensemble.gamma", c.ensemble.gamma);
  r.flag("ensemble.use_gates", c.ensemble.use_gates);
  r.flag("ensemble.use_ec", c.ensemble.use_ec);
  r.num("ensemble.total_budget", c.total_budget);

  auto& lt = c.ensemble.learner_template;
  lt.input_dim = c.stream.input_dim;
  lt.hidden_widths = {64};
  lt.feature_dim = 32;
  lt.dropout_rate = 0.0;
  r.num("learner.input_dim", lt.input_dim);
  r.list("learner.hidden", lt.hidden_widths);
  r.num("learner.feature_dim", lt.feature_dim);
  r.num("learner.dropout", lt.dropout_rate);

  if (r.raw("strategy.kind")) c.strategy.kind = parse_strategy_kind(kv.at("strategy.kind"));
  r.num("strategy.lambda", c.strategy.lambda);
  r.num("strategy.buffer_capacity", c.strategy.buffer_capacity);

  if (r.raw("optimizer.kind")) c.optimizer.kind = parse_optimizer_kind(kv.at("optimizer.kind"));
  r.num("optimizer.lr", c.optimizer.lr);
  r.num("optimizer.batch", c.optimizer.batch);
  r.num("optimizer.epochs", c.optimizer.epochs);

  r.list("run.seeds", c.seeds);
  r.num("run.workers", c.workers);
  if (auto p = r.raw("run.output_dir")) c.output_dir = *p;
  r.flag("run.checkpoints", c.checkpoints);
  r.flag("run.fwt_baseline", c.fwt_baseline);

  r.flag("probes.hdiv", c.probes.hdiv);
  r.flag("probes.flatness", c.probes.flatness);
  r.flag("probes.diversity", c.probes.diversity);
  r.list("probes.flatness_radii", c.probes.flatness_radii);
  r.num("probes.flatness_directions", c.probes.flatness_directions);

  r.reject_unknown();
  if (c.ensemble.mode == EnsembleMode::kSingle) {
    c.ensemble.K = 1;
    c.ensemble.use_gates = false;
    c.ensemble.use_ec = false;
  }
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) { return config_from_key_values(parse_key_values(text)); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace coscl
