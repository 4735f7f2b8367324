// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "coscl/config.hpp"
#include "coscl/diagnostics.hpp"
#include "coscl/harness.hpp"
#include "coscl/trainer.hpp"
#include "gradcheck.hpp"

using namespace coscl;
namespace fs = std::filesystem;

#ifndef COSCL_SOURCE_DIR
#define COSCL_SOURCE_DIR "."
#endif

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path work_root() {
  const fs::path p = fs::temp_directory_path() / "coscl_acceptance";
  fs::create_directories(p);
  return p;
}

ExperimentConfig acceptance_config(const std::string& name, const fs::path& out) {
  auto c = load_config(fs::path(COSCL_SOURCE_DIR) / "configs" / name);
  c.output_dir = out;
  c.checkpoints = false;
  return c;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t cases = 0, bad = 0;
  double worst_op = 0.0, worst_comp = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& c : gradcheck::op_cases(seed)) {
      ++cases;
      worst_op = std::max(worst_op, c.max_rel_err);
      if (!(c.max_rel_err < 1e-5)) ++bad;
    }
    for (const auto& c : gradcheck::composite_cases(seed)) {
      ++cases;
      worst_comp = std::max(worst_comp, c.max_rel_err);
      if (!(c.max_rel_err < 1e-4)) ++bad;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && cases >= 200 && secs < 60.0,
          fmt("%zu cases, worst op err %.2e, worst composite err %.2e, %zu failing, %.2fs", cases, worst_op,
              worst_comp, bad, secs)};
}

// ---------------------------------------------------------------- 2

std::vector<double> flat_values(std::span<const Tensor> ps) {
  std::vector<double> v;
  for (const auto& p : ps) v.insert(v.end(), p.data().begin(), p.data().end());
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Outcome reduction_equivalence() {
  StreamSpec spec;
  spec.T = 2;
  spec.input_dim = 6;
  spec.seed = 3;
  const auto tasks = generate(spec);  // 100 training rows per task
  const std::vector<std::size_t> cpt{2, 2};

  EnsembleConfig ec;
  ec.K = 1;
  ec.use_gates = false;
  ec.use_ec = false;
  ec.gamma = 0.0;
  ec.learner_template = LearnerConfig{6, {12}, 5, 0.2, 0};
  StrategyConfig sc;
  sc.kind = StrategyKind::kEwc;
  sc.lambda = 50.0;
  OptimizerConfig oc;
  oc.batch = 64;
  oc.epochs = 50;  // two batches per epoch: 100 steps per task
  const std::uint64_t seed = 21;

  EnsembleModel model = EnsembleModel::create(ec, cpt, 7);

  // Standalone path: deep copies of the one learner and the heads, trained
  // with plain cross-entropy plus the EWC penalty over its own parameters.
  Learner learner = model.learners[0];
  for (auto& layer : learner.layers) {
    layer.weight = layer.weight.clone();
    layer.bias = layer.bias.clone();
  }
  learner.mix.weight = learner.mix.weight.clone();
  learner.mix.bias = learner.mix.bias.clone();
  std::vector<Head> heads;
  for (const auto& h : model.heads) heads.push_back({h.weight.clone(), h.bias.clone()});
  std::vector<Tensor> solo_params = learner.parameters();
  for (const auto& h : heads) {
    solo_params.push_back(h.weight);
    solo_params.push_back(h.bias);
  }

  ContinualTrainer trainer(model, ec, sc, oc, seed);
  ImportanceState solo_state;
  solo_state.lambda = sc.lambda;
  std::uint64_t step = 0;
  std::size_t steps_compared = 0, mismatches = 0;

  for (std::size_t head = 0; head < tasks.size(); ++head) {
    const Task& task = tasks[head];
    Optimizer opt = trainer.make_optimizer();
    Optimizer solo_opt(solo_params, oc);
    for (std::size_t epoch = 0; epoch < oc.epochs; ++epoch) {
      for (const auto& rows : epoch_batches(task.train.size(), oc.batch, seed, head, epoch)) {
        const double a = trainer.train_step(opt, task, head, rows);

        const Batch b = make_batch(task, task.train, rows);
        // Penalty graph first, as the trainer builds it: gradient accumulation follows node order.
        Tensor pen;
        if (!solo_state.empty()) pen = penalty(solo_state, solo_params);
        Tensor loss = softmax_cross_entropy(
            apply_head(heads[head], features(learner, b.x, ForwardMode{true, seed, step})), b.labels);
        if (pen.defined()) loss = add(loss, pen);
        solo_opt.zero_grad();
        backward(loss);
        solo_opt.step();
        ++step;

        ++steps_compared;
        const double sb = loss.item();
        std::vector<double> mp = flat_values(model.learners[0].parameters());
        for (const auto& h : model.heads) {
          mp.insert(mp.end(), h.weight.data().begin(), h.weight.data().end());
          mp.insert(mp.end(), h.bias.data().begin(), h.bias.data().end());
        }
        if (std::memcmp(&a, &sb, sizeof a) != 0 || !bit_equal(mp, flat_values(solo_params))) ++mismatches;
      }
    }
    trainer.consolidate(task, head);
    // Fisher at the predicted label, recomputed on the standalone parameters.
    auto fisher = empirical_fisher(solo_params, task.train.size(), [&](std::size_t n) {
      const Batch one = make_batch(task, std::span(&task.train[n], 1));
      Tensor logits = apply_head(heads[head], features(learner, one.x));
      auto row = logits.data();
      const int pred[1] = {static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin())};
      return scale(softmax_cross_entropy(logits, pred), -1.0);
    });
    if (!solo_state.empty()) {
      for (std::size_t k = 0; k < fisher.size(); ++k) fisher[k] += solo_state.importance[k];
    }
    solo_state.importance = std::move(fisher);
    solo_state.anchor = flat_values(solo_params);
  }
  return {mismatches == 0 && steps_compared >= 100,
          fmt("%zu steps (EWC, dropout 0.2, two tasks), %zu loss/parameter mismatches", steps_compared,
              mismatches)};
}

// ---------------------------------------------------------------- 3

Outcome ec_oracle() {
  const std::vector<Tensor> worked{Tensor::from({1, 2}, {0.5, 0.5}), Tensor::from({1, 2}, {0.25, 0.75})};
  const double v = ec_loss(worked).item();
  const double kl12 = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  const double kl21 = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  const double oracle = 0.5 * (kl12 + kl21);
  bool ok = std::abs(v - 0.137326) < 1e-6 && std::abs(v - oracle) < 1e-12;

  Rng rng(77);
  std::size_t negative = 0, zero_distinct = 0, nonzero_identical = 0;
  auto random_dist = [&](std::size_t B, std::size_t C) {
    std::vector<double> d(B * C);
    for (std::size_t r = 0; r < B; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += d[r * C + c] = uniform(rng, 0.01, 1.0);
      for (std::size_t c = 0; c < C; ++c) d[r * C + c] /= s;
    }
    return Tensor::from({B, C}, std::move(d));
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t B = 1 + uniform_index(rng, 4), C = 2 + uniform_index(rng, 6);
    const std::vector<Tensor> pair{random_dist(B, C), random_dist(B, C)};
    const double e = ec_loss(pair).item();
    if (e < 0.0) ++negative;
    double maxdiff = 0.0;
    for (std::size_t k = 0; k < pair[0].numel(); ++k) {
      maxdiff = std::max(maxdiff, std::abs(pair[0].data()[k] - pair[1].data()[k]));
    }
    if (maxdiff > 1e-12 && e <= 1e-12) ++zero_distinct;

    const std::size_t K = 2 + uniform_index(rng, 4);
    const Tensor p = random_dist(B, C);
    const std::vector<Tensor> same(K, p);
    if (std::abs(ec_loss(same).item()) > 1e-12) ++nonzero_identical;
  }
  ok = ok && negative == 0 && zero_distinct == 0 && nonzero_identical == 0;
  return {ok, fmt("worked value %.7f (oracle %.7f); 1000 random pairs: %zu negative, %zu distinct at zero; "
                  "%zu identical sets above 1e-12",
                  v, oracle, negative, zero_distinct, nonzero_identical)};
}

// ---------------------------------------------------------------- 4

TransferMetrics brute_force(const AccuracyMatrix& m) {
  const std::size_t T = m.T();
  TransferMetrics r;
  double s = 0.0;
  for (std::size_t i = 0; i < T; ++i) s += m.A[T - 1][i];
  r.aac = s / static_cast<double>(T);
  s = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) s += m.A[T - 1][i] - m.A[i][i];
  r.bwt = s / static_cast<double>(T - 1);
  if (!m.baseline.empty()) {
    s = 0.0;
    for (std::size_t i = 1; i < T; ++i) s += m.A[i - 1][i] - m.baseline[i];
    r.fwt = s / static_cast<double>(T - 1);
  }
  return r;
}

Outcome metric_oracle() {
  Rng rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    AccuracyMatrix m;
    const std::size_t T = 2 + uniform_index(rng, 14);
    m.A.assign(T, std::vector<double>(T));
    for (auto& row : m.A) {
      for (auto& v : row) v = uniform(rng, 0, 1);
    }
    if (trial % 4 != 0) {
      for (std::size_t i = 0; i < T; ++i) m.baseline.push_back(uniform(rng, 0, 1));
    }
    const auto a = acc_metrics(m), b = brute_force(m);
    if (a.aac != b.aac || a.bwt != b.bwt || a.fwt.has_value() != b.fwt.has_value() || (a.fwt && *a.fwt != *b.fwt)) {
      ++mismatches;
    }
  }
  AccuracyMatrix w;
  w.A = {{0.9, 0.5}, {0.8, 0.7}};
  w.baseline = {0.6, 0.6};
  const auto r = acc_metrics(w);
  const bool worked = std::abs(r.aac - 0.75) < 1e-12 && std::abs(r.bwt + 0.1) < 1e-12 && std::abs(*r.fwt + 0.1) < 1e-12;
  return {mismatches == 0 && worked,
          fmt("1000 random matrices, %zu inexact; worked example AAC %.4f BWT %.4f FWT %.4f", mismatches, r.aac,
              r.bwt, *r.fwt)};
}

// ---------------------------------------------------------------- 5

Outcome directional_replication() {
  const auto t0 = Clock::now();
  const auto root = work_root() / "c5";
  fs::remove_all(root);
  const auto coscl = run_experiment(acceptance_config("acceptance.cfg", root / "coscl"));
  const auto scl = run_experiment(acceptance_config("acceptance_scl.cfg", root / "scl"));
  const double secs = seconds_since(t0);
  const double gap = coscl.aac.mean - scl.aac.mean;
  const bool ok = coscl.failures == 0 && scl.failures == 0 && coscl.aac.n == 5 && scl.aac.n == 5 &&
                  gap > 0.0 && gap > scl.aac.std && secs < 15 * 60.0;
  return {ok, fmt("CoSCL(EWC) AAC %.4f +/- %.4f vs SCL(EWC) %.4f +/- %.4f, gap %.4f vs SCL std %.4f; "
                  "backbone params %zu vs %zu; %.1fs",
                  coscl.aac.mean, coscl.aac.std, scl.aac.mean, scl.aac.std, gap, scl.aac.std,
                  coscl.params_backbone, scl.params_backbone, secs)};
}

// ---------------------------------------------------------------- 6

Outcome ablation_ordering() {
  const auto root = work_root() / "c6";
  fs::remove_all(root);
  auto full_cfg = acceptance_config("acceptance.cfg", root / "full");
  auto fe_cfg = full_cfg;
  fe_cfg.output_dir = root / "fe";
  fe_cfg.ensemble.use_gates = false;
  fe_cfg.ensemble.use_ec = false;
  auto ce_cfg = fe_cfg;
  ce_cfg.output_dir = root / "ce";
  ce_cfg.ensemble.mode = EnsembleMode::kClassifierEnsemble;

  const auto full = run_experiment(full_cfg), fe = run_experiment(fe_cfg), ce = run_experiment(ce_cfg);
  std::size_t ordered = 0;
  for (std::size_t s = 0; s < full.seeds.size(); ++s) {
    const double a = full.seeds[s].metrics.aac, b = fe.seeds[s].metrics.aac, c = ce.seeds[s].metrics.aac;
    if (full.seeds[s].ok && fe.seeds[s].ok && ce.seeds[s].ok && a >= b && b >= c) ++ordered;
  }
  return {ordered >= 4, fmt("mean AAC FE+EC+TG %.4f, FE %.4f, classifier ensemble %.4f; ordering holds in %zu of "
                            "%zu seeds; backbone params %zu / %zu / %zu",
                            full.aac.mean, fe.aac.mean, ce.aac.mean, ordered, full.seeds.size(),
                            full.params_backbone, fe.params_backbone, ce.params_backbone)};
}

// ---------------------------------------------------------------- 7

Outcome divergence_calibration() {
  const std::size_t n = 5000, w = 8;
  auto draw = [&](Rng& rng, double shift0) {
    std::vector<double> v(n * w);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < w; ++c) v[r * w + c] = normal(rng) + (c == 0 ? shift0 : 0.0);
    }
    return Tensor::from({n, w}, std::move(v));
  };
  bool ok = true;
  double worst_same = 0.0, worst_bce = 0.0, min_sep = 2.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(derive_seed({seed, 0xca1bULL}));
    const Tensor a = draw(rng, 0.0), b = draw(rng, 0.0), c = draw(rng, 10.0);
    const auto same = hdiv_probe(a, b, seed), sep = hdiv_probe(a, c, seed);
    worst_same = std::max(worst_same, same.divergence);
    worst_bce = std::max(worst_bce, std::abs(same.test_bce - std::log(2.0)));
    min_sep = std::min(min_sep, sep.divergence);
    ok = ok && same.divergence < 0.15 && std::abs(same.test_bce - std::log(2.0)) < 0.1 && sep.divergence > 1.8;
  }
  return {ok, fmt("5 seeds, %zu rows per side: same-distribution divergence <= %.4f, |BCE - ln 2| <= %.4f; "
                  "10 sigma separation divergence >= %.4f",
                  n, worst_same, worst_bce, min_sep)};
}

// ---------------------------------------------------------------- 8

Outcome flatness_contract() {
  StreamSpec spec;
  spec.T = 3;
  spec.input_dim = 8;
  spec.n_train = 30;
  spec.n_test = 30;
  spec.seed = 4;
  const auto tasks = generate(spec);
  EnsembleConfig ec;
  ec.K = 3;
  ec.learner_template = LearnerConfig{8, {16}, 8, 0.0, 0};
  EnsembleModel m = EnsembleModel::create(ec, classes_per_task(tasks), 12);
  StrategyConfig sc;
  OptimizerConfig oc;
  oc.epochs = 5;
  ContinualTrainer tr(m, ec, sc, oc, 12);
  for (std::size_t t = 0; t < tasks.size(); ++t) tr.train_task(tasks[t], t);

  const auto before = flat_values(m.parameters());
  const double base = stream_test_loss(m, tasks);
  const std::vector<double> radii{0.0, 0.1, 0.5, 1.0};
  const auto r = flatness_probe(m, tasks, radii, 3);
  bool r0_exact = r.base_loss == base;
  for (const auto& c : r.curves) r0_exact = r0_exact && c[0] == base;
  const bool params_same = bit_equal(before, flat_values(m.parameters()));
  const bool ten = r.curves.size() == 10 && kDefaultFlatnessDirections == 10;
  return {r0_exact && params_same && ten,
          fmt("r=0 losses exact: %s; parameters bit-identical: %s; default directions %zu",
              r0_exact ? "yes" : "no", params_same ? "yes" : "no", r.curves.size())};
}

// ---------------------------------------------------------------- 9

Outcome scaling_study() {
  const auto root = work_root() / "c9";
  fs::remove_all(root);
  auto base = acceptance_config("acceptance.cfg", root);
  const std::vector<double> grid{2400, 4800, 9600};
  const auto points = sweep(SweepAxis::kTotalBudget, grid, base);
  bool ok = true;
  std::string detail;
  std::vector<double> gaps;
  for (double b : grid) {
    const SweepPoint *c = nullptr, *s = nullptr;
    for (const auto& p : points) {
      if (p.value != b || !p.feasible || !p.record) continue;
      (p.variant == "coscl" ? c : s) = &p;
    }
    if (!c || !s) {
      ok = false;
      detail += fmt("budget %.0f infeasible; ", b);
      continue;
    }
    const double gap = c->record->aac.mean - s->record->aac.mean;
    gaps.push_back(gap);
    ok = ok && gap >= 0.0 && c->record->aac.n == 5 && s->record->aac.n == 5;
    detail += fmt("budget %.0f: CoSCL %.4f vs SCL %.4f (gap %+.4f); ", b, c->record->aac.mean,
                  s->record->aac.mean, gap);
  }
  if (gaps.size() == grid.size()) {
    const bool grows = gaps[1] >= gaps[0] && gaps[2] >= gaps[1];
    detail += grows ? "gap grows with budget" : "gap does not grow monotonically with budget";
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto root = work_root() / "c10";
  fs::remove_all(root);
  auto cfg = acceptance_config("acceptance.cfg", root / "w1");
  cfg.stream.T = 4;
  cfg.optimizer.epochs = 5;
  cfg.seeds = {1, 2, 3, 4};
  cfg.checkpoints = true;
  cfg.probes.hdiv = cfg.probes.flatness = cfg.probes.diversity = true;
  cfg.probes.flatness_directions = 3;
  run_experiment(cfg, {1, true});
  cfg.output_dir = root / "w1_again";
  run_experiment(cfg, {1, true});
  cfg.output_dir = root / "w3";
  run_experiment(cfg, {3, true});
  for (const char* d : {"w1", "w1_again", "w3"}) {
    for (auto kind : {PlotKind::kCurve, PlotKind::kFlatness, PlotKind::kDiversity}) {
      emit_plotdata(root / d, kind, root / d / "plots");
    }
  }

  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "w1")) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    const auto rel = fs::relative(e.path(), root / "w1");
    ++files;
    const std::string a = slurp(e.path());
    if (a != slurp(root / "w1_again" / rel) || a != slurp(root / "w3" / rel)) ++differ;
  }
  return {differ == 0 && files > 0,
          fmt("%zu result files (JSON, CSV, checkpoints; wall-clock timing.json excluded) compared across "
              "rerun and 3 workers, %zu differ",
              files, differ)};
}

}  // namespace

int main() {
  struct Item {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Item> items{
      {1, "gradient suite", gradient_suite},
      {2, "reduction equivalence", reduction_equivalence},
      {3, "EC loss oracle", ec_oracle},
      {4, "metric oracle", metric_oracle},
      {5, "CoSCL beats SCL at equal budget", directional_replication},
      {6, "ablation ordering", ablation_ordering},
      {7, "divergence probe calibration", divergence_calibration},
      {8, "flatness probe contract", flatness_contract},
      {9, "scaling study", scaling_study},
      {10, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& it : items) {
    Outcome o;
    try {
      o = it.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %d [%s] %s: %s\n", it.id, o.pass ? "PASS" : "FAIL", it.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(items.size()) - failed, items.size());
  return failed == 0 ? 0 : 1;
}
