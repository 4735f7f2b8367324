#include "coscl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "coscl/config.hpp"
#include "coscl/errors.hpp"

namespace coscl {

namespace {

constexpr const char* kMagic = "coscl-checkpoint";

void write_values(std::ostream& os, std::span<const double> values) {
  char buf[64];
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) os << ' ';
    auto res = std::to_chars(buf, buf + sizeof buf, values[k]);
    os.write(buf, res.ptr - buf);
  }
  os << '\n';
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::istringstream next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(line_ + 1, std::string("checkpoint: truncated before ") + what);
    ++line_;
    return std::istringstream(line);
  }
  std::string next_raw(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(line_ + 1, std::string("checkpoint: truncated before ") + what);
    ++line_;
    return line;
  }
  void expect(std::istringstream& is, const std::string& word) {
    std::string got;
    is >> got;
    if (got != word) fail("expected '" + word + "', found '" + got + "'");
  }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, "checkpoint: " + msg); }

  double number(const std::string& s, const char* what) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(std::string("bad ") + what + " '" + s + "'");
    return v;
  }

  std::vector<double> values(std::size_t n) {
    const std::string line = next_raw("tensor values");
    std::vector<double> out;
    out.reserve(n);
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("bad number");
      out.push_back(v);
      p = ptr;
    }
    if (out.size() != n) fail("expected " + std::to_string(n) + " values, found " + std::to_string(out.size()));
    return out;
  }

 private:
  std::istringstream in_;
  std::size_t line_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kMagic << " 1\n";
  os << "seed " << ckpt.seed << '\n';
  os << "task_boundary " << ckpt.task_boundary << '\n';
  os << "task_order";
  for (int id : ckpt.task_order) os << ' ' << id;
  os << '\n';
  std::size_t n_lines = 0;
  for (char c : ckpt.config_text) n_lines += c == '\n';
  if (!ckpt.config_text.empty() && ckpt.config_text.back() != '\n') ++n_lines;
  os << "config " << n_lines << '\n' << ckpt.config_text;
  if (!ckpt.config_text.empty() && ckpt.config_text.back() != '\n') os << '\n';
  os << "members " << ckpt.members.size() << '\n';
  for (const auto& m : ckpt.members) {
    os << "model " << to_string(m.mode) << ' ' << m.K() << ' ' << m.num_tasks() << ' '
       << format_double(m.gate_scale) << ' ' << (m.use_gates ? 1 : 0) << '\n';
    for (const auto& l : m.learners) {
      const auto& c = l.config;
      os << "learner " << c.input_dim << ' ' << c.feature_dim << ' ' << format_double(c.dropout_rate) << ' '
         << c.init_seed;
      for (auto w : c.hidden_widths) os << ' ' << w;
      os << '\n';
    }
    os << "head_classes";
    for (const auto& h : m.heads) os << ' ' << h.bias.numel();
    os << '\n';
    for (const auto& p : m.parameters()) {
      os << "tensor " << p.dim();
      for (auto d : p.shape()) os << ' ' << d;
      os << '\n';
      write_values(os, p.data());
    }
  }
  if (ckpt.importance) {
    os << "importance " << format_double(ckpt.importance->lambda) << ' ' << ckpt.importance->anchor.size() << '\n';
    write_values(os, ckpt.importance->anchor);
    write_values(os, ckpt.importance->importance);
  }
  os << "end\n";
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& text) {
  LineReader r(text);
  Checkpoint ckpt;
  {
    auto is = r.next("header");
    r.expect(is, kMagic);
    int version = 0;
    is >> version;
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
  }
  {
    auto is = r.next("seed");
    r.expect(is, "seed");
    if (!(is >> ckpt.seed)) r.fail("bad seed");
  }
  {
    auto is = r.next("task_boundary");
    r.expect(is, "task_boundary");
    if (!(is >> ckpt.task_boundary)) r.fail("bad task_boundary");
  }
  {
    auto is = r.next("task_order");
    r.expect(is, "task_order");
    int id;
    while (is >> id) ckpt.task_order.push_back(id);
  }
  {
    auto is = r.next("config");
    r.expect(is, "config");
    std::size_t n = 0;
    if (!(is >> n)) r.fail("bad config line count");
    for (std::size_t i = 0; i < n; ++i) ckpt.config_text += r.next_raw("config line") + "\n";
  }
  std::size_t members = 0;
  {
    auto is = r.next("members");
    r.expect(is, "members");
    if (!(is >> members)) r.fail("bad member count");
  }
  for (std::size_t mi = 0; mi < members; ++mi) {
    EnsembleModel m;
    std::size_t K = 0, T = 0;
    int use_gates = 0;
    {
      auto is = r.next("model");
      r.expect(is, "model");
      std::string mode, scale;
      if (!(is >> mode >> K >> T >> scale >> use_gates)) r.fail("bad model line");
      try {
        m.mode = parse_ensemble_mode(mode);
      } catch (const ConfigError&) {
        r.fail("unknown model mode '" + mode + "'");
      }
      m.gate_scale = r.number(scale, "gate scale");
      m.use_gates = use_gates != 0;
    }
    for (std::size_t i = 0; i < K; ++i) {
      auto is = r.next("learner");
      r.expect(is, "learner");
      LearnerConfig c;
      std::string dropout;
      if (!(is >> c.input_dim >> c.feature_dim >> dropout >> c.init_seed)) r.fail("bad learner line");
      c.dropout_rate = r.number(dropout, "dropout");
      std::size_t w;
      while (is >> w) c.hidden_widths.push_back(w);
      m.learners.push_back(init_learner(c));
    }
    {
      auto is = r.next("head_classes");
      r.expect(is, "head_classes");
      const std::size_t d = m.learners.empty() ? 0 : m.feature_dim();
      for (std::size_t t = 0; t < T; ++t) {
        std::size_t c = 0;
        if (!(is >> c) || c == 0) r.fail("bad head class count");
        m.heads.push_back({Tensor::zeros({d, c}, true), Tensor::zeros({c}, true)});
      }
    }
    m.alphas.assign(T, {});
    for (auto& row : m.alphas) {
      for (std::size_t i = 0; i < K; ++i) row.push_back(Tensor::scalar(0.0, true));
    }
    for (auto p : m.parameters()) {
      auto is = r.next("tensor");
      r.expect(is, "tensor");
      std::size_t ndim = 0;
      is >> ndim;
      Shape shape(ndim);
      for (auto& d : shape) is >> d;
      if (!is || shape != p.shape()) {
        r.fail("tensor shape " + shape_str(shape) + " does not match model layout " + shape_str(p.shape()));
      }
      auto vals = r.values(p.numel());
      std::copy(vals.begin(), vals.end(), p.mutable_data().begin());
    }
    ckpt.members.push_back(std::move(m));
  }
  auto is = r.next("end");
  std::string word;
  is >> word;
  if (word == "importance") {
    ImportanceState s;
    std::string lambda;
    std::size_t n = 0;
    if (!(is >> lambda >> n)) r.fail("bad importance line");
    s.lambda = r.number(lambda, "lambda");
    s.anchor = r.values(n);
    s.importance = r.values(n);
    ckpt.importance = std::move(s);
    is = r.next("end");
    is >> word;
  }
  if (word != "end") r.fail("expected 'end', found '" + word + "'");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(ckpt);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace coscl
