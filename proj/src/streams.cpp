#include "coscl/streams.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "coscl/errors.hpp"
#include "coscl/rng.hpp"

namespace coscl {

namespace {

constexpr std::size_t kModesPerClass = 2;

std::vector<double> random_vertex(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = (rng() & 1) ? 1.0 : -1.0;
  return v;
}

struct Blobs {
  std::vector<std::vector<std::vector<double>>> modes;  // [class][mode][dim]
  double sigma = 1.0;

  std::vector<double> draw(std::size_t cls, Rng& rng) const {
    const auto& mu = modes[cls][uniform_index(rng, modes[cls].size())];
    std::vector<double> x(mu.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = mu[k] + sigma * normal(rng);
    return x;
  }
};

Blobs make_blobs(std::size_t n_classes, std::size_t d, double sigma, Rng& rng) {
  Blobs b;
  b.sigma = sigma;
  b.modes.resize(n_classes);
  for (auto& cls : b.modes) {
    for (std::size_t m = 0; m < kModesPerClass; ++m) cls.push_back(random_vertex(d, rng));
  }
  return b;
}

std::vector<double> moon_point(int cls, double angle, std::size_t d, Rng& rng) {
  const double u = uniform(rng, 0.0, std::numbers::pi);
  double px, py;
  if (cls == 0) {
    px = std::cos(u);
    py = std::sin(u);
  } else {
    px = 1.0 - std::cos(u);
    py = 0.5 - std::sin(u);
  }
  px += 0.1 * normal(rng) - 0.5;
  py += 0.1 * normal(rng) - 0.25;
  std::vector<double> x(d);
  x[0] = std::cos(angle) * px - std::sin(angle) * py;
  x[1] = std::sin(angle) * px + std::cos(angle) * py;
  for (std::size_t k = 2; k < d; ++k) x[k] = 0.1 * normal(rng);
  return x;
}

void fill_task(Task& task, std::size_t n_train, std::size_t n_test, Rng& rng,
               const std::function<std::vector<double>(std::size_t, Rng&)>& draw) {
  for (std::size_t c = 0; c < task.classes.size(); ++c) {
    for (std::size_t n = 0; n < n_train; ++n) task.train.push_back({draw(c, rng), task.classes[c]});
    for (std::size_t n = 0; n < n_test; ++n) task.test.push_back({draw(c, rng), task.classes[c]});
  }
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& cell, T& out) {
  const std::string s = trim(cell);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::size_t Task::input_dim() const {
  if (!train.empty()) return train.front().x.size();
  if (!test.empty()) return test.front().x.size();
  return 0;
}

int Task::local_label(int global_label) const {
  auto it = std::find(classes.begin(), classes.end(), global_label);
  if (it == classes.end()) {
    throw TaskError("class " + std::to_string(global_label) + " is not part of task " + std::to_string(id));
  }
  return static_cast<int>(it - classes.begin());
}

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::kGaussianBlobs:
      return "gaussian_blobs";
    case StreamKind::kRotatedMoons:
      return "rotated_moons";
    case StreamKind::kPermutedFeatures:
      return "permuted_features";
  }
  return "?";
}

StreamKind parse_stream_kind(const std::string& name) {
  if (name == "gaussian_blobs") return StreamKind::kGaussianBlobs;
  if (name == "rotated_moons") return StreamKind::kRotatedMoons;
  if (name == "permuted_features") return StreamKind::kPermutedFeatures;
  throw ConfigError("unknown stream kind '" + name + "'");
}

void StreamSpec::validate() const {
  if (T < 2) throw ConfigError("stream needs T >= 2 tasks");
  if (n_train < 10) throw ConfigError("stream needs n_train >= 10 per class");
  if (n_test < 1) throw ConfigError("stream needs n_test >= 1 per class");
  if (classes_per_task < 2) throw ConfigError("stream needs classes_per_task >= 2");
  if (input_dim < 1) throw ConfigError("stream needs input_dim >= 1");
  if (!std::isfinite(difficulty) || difficulty < 0.0) throw ConfigError("difficulty must be finite and >= 0");
  if (kind == StreamKind::kRotatedMoons) {
    if (classes_per_task != 2) throw ConfigError("rotated_moons has exactly 2 classes per task");
    if (input_dim < 2) throw ConfigError("rotated_moons needs input_dim >= 2");
  }
}

std::vector<Task> generate(const StreamSpec& spec) {
  spec.validate();
  const std::size_t cpt = spec.classes_per_task;
  const std::size_t d = spec.input_dim;
  const auto kind_tag = static_cast<std::uint64_t>(spec.kind);
  std::vector<Task> tasks(spec.T);
  for (std::size_t t = 0; t < spec.T; ++t) {
    tasks[t].id = static_cast<int>(t);
    for (std::size_t c = 0; c < cpt; ++c) tasks[t].classes.push_back(static_cast<int>(t * cpt + c));
  }

  switch (spec.kind) {
    case StreamKind::kGaussianBlobs: {
      Rng lattice(derive_seed({spec.seed, kind_tag, 0xb10bULL}));
      const Blobs blobs = make_blobs(spec.T * cpt, d, 0.35 + 0.5 * spec.difficulty, lattice);
      for (std::size_t t = 0; t < spec.T; ++t) {
        Rng rng(derive_seed({spec.seed, kind_tag, t}));
        fill_task(tasks[t], spec.n_train, spec.n_test, rng,
                  [&](std::size_t c, Rng& r) { return blobs.draw(t * cpt + c, r); });
      }
      break;
    }
    case StreamKind::kRotatedMoons: {
      for (std::size_t t = 0; t < spec.T; ++t) {
        const double angle = static_cast<double>(t) * spec.difficulty * std::numbers::pi / 6.0;
        Rng rng(derive_seed({spec.seed, kind_tag, t}));
        fill_task(tasks[t], spec.n_train, spec.n_test, rng, [&](std::size_t c, Rng& r) {
          return moon_point(static_cast<int>(c), angle, d, r);
        });
      }
      break;
    }
    case StreamKind::kPermutedFeatures: {
      Rng lattice(derive_seed({spec.seed, kind_tag, 0xb10bULL}));
      const Blobs base = make_blobs(cpt, d, 0.5, lattice);
      const auto n_perm = static_cast<std::size_t>(
          std::lround(std::min(1.0, spec.difficulty) * static_cast<double>(d)));
      for (std::size_t t = 0; t < spec.T; ++t) {
        std::vector<std::size_t> perm(d);
        for (std::size_t k = 0; k < d; ++k) perm[k] = k;
        if (t > 0 && n_perm > 1) {
          Rng prng(derive_seed({spec.seed, kind_tag, 0x9e7ULL, t}));
          auto chosen = permutation(d, prng);
          chosen.resize(n_perm);
          std::sort(chosen.begin(), chosen.end());
          auto targets = chosen;
          shuffle(targets, prng);
          for (std::size_t k = 0; k < n_perm; ++k) perm[chosen[k]] = targets[k];
        }
        Rng rng(derive_seed({spec.seed, kind_tag, t}));
        fill_task(tasks[t], spec.n_train, spec.n_test, rng, [&](std::size_t c, Rng& r) {
          auto raw = base.draw(c, r);
          std::vector<double> x(d);
          for (std::size_t k = 0; k < d; ++k) x[k] = raw[perm[k]];
          return x;
        });
      }
      break;
    }
  }
  return tasks;
}

std::vector<Task> ingest_csv(const std::filesystem::path& path, const CsvSchema& schema,
                             std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw SchemaError(path.string() + ": missing header row");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_commas(line);
  for (auto& h : header) h = trim(h);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(path.string() + ": unknown column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column(schema.label_column);
  const std::size_t task_col = column(schema.task_column);
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != label_col && c != task_col) feature_cols.push_back(c);
    }
  } else {
    for (const auto& name : schema.feature_columns) feature_cols.push_back(column(name));
  }
  if (feature_cols.empty()) throw SchemaError(path.string() + ": no feature columns");

  std::map<long long, std::vector<Sample>> by_task;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " cells, found " +
                                    std::to_string(cells.size()));
    }
    Sample s;
    for (auto c : feature_cols) {
      double v;
      if (!parse_number(cells[c], v) || !std::isfinite(v)) {
        throw ParseError(line_no, "non-numeric feature '" + cells[c] + "' in column " + header[c]);
      }
      s.x.push_back(v);
    }
    long long task_id;
    if (!parse_number(cells[label_col], s.label)) {
      throw ParseError(line_no, "non-integer label '" + cells[label_col] + "'");
    }
    if (!parse_number(cells[task_col], task_id)) {
      throw ParseError(line_no, "non-integer task '" + cells[task_col] + "'");
    }
    by_task[task_id].push_back(std::move(s));
  }
  if (by_task.empty()) throw SchemaError(path.string() + ": no data rows");

  std::vector<Task> tasks;
  for (auto& [task_id, samples] : by_task) {
    Task t;
    t.id = static_cast<int>(task_id);
    for (const auto& s : samples) t.classes.push_back(s.label);
    std::sort(t.classes.begin(), t.classes.end());
    t.classes.erase(std::unique(t.classes.begin(), t.classes.end()), t.classes.end());
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(task_id), 0x5917ULL}));
    auto order = permutation(samples.size(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(samples.size())));
    const std::size_t n_train = samples.size() - n_test;
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    // Keep file order within each split.
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    for (auto i : train_idx) t.train.push_back(samples[i]);
    for (auto i : test_idx) t.test.push_back(samples[i]);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

void write_stream_csv(std::span<const Task> tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t d = tasks.empty() ? 0 : tasks.front().input_dim();
  for (std::size_t k = 0; k < d; ++k) out << 'f' << k << ',';
  out << "label,task,split\n";
  char buf[64];
  auto write_rows = [&](const Task& t, const std::vector<Sample>& rows, const char* split) {
    for (const auto& s : rows) {
      for (double v : s.x) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, res.ptr - buf);
        out << ',';
      }
      out << s.label << ',' << t.id << ',' << split << '\n';
    }
  };
  for (const auto& t : tasks) {
    write_rows(t, t.train, "train");
    write_rows(t, t.test, "test");
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Task> shuffle_task_order(std::vector<Task> tasks, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x04deULL}));
  shuffle(tasks, rng);
  return tasks;
}

std::vector<std::size_t> classes_per_task(std::span<const Task> tasks) {
  std::vector<std::size_t> out;
  for (const auto& t : tasks) out.push_back(t.classes.size());
  return out;
}

Batch make_batch(const Task& task, std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("make_batch: no samples");
  const std::size_t d = samples.front().x.size();
  std::vector<double> data;
  data.reserve(samples.size() * d);
  Batch b;
  for (const auto& s : samples) {
    if (s.x.size() != d) throw DimensionError("make_batch: ragged sample widths");
    data.insert(data.end(), s.x.begin(), s.x.end());
    b.labels.push_back(task.local_label(s.label));
  }
  b.x = Tensor::from({samples.size(), d}, std::move(data));
  return b;
}

Batch make_batch(const Task& task, std::span<const Sample> samples, std::span<const std::size_t> indices) {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(samples[i]);
  return make_batch(task, picked);
}

}  // namespace coscl
