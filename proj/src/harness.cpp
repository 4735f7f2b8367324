#include "coscl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "coscl/checkpoint.hpp"
#include "coscl/errors.hpp"
#include "coscl/rng.hpp"
#include "coscl/trainer.hpp"

namespace coscl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

LearnerConfig resolve_learner(const ExperimentConfig& cfg, std::size_t input_dim) {
  ExperimentConfig c = cfg;
  c.ensemble.learner_template.input_dim = input_dim;
  return c.resolved_learner();
}

EnsembleConfig model_config(const ExperimentConfig& cfg, std::size_t input_dim) {
  EnsembleConfig ec = cfg.ensemble;
  ec.K = cfg.model_K();
  ec.learner_template = resolve_learner(cfg, input_dim);
  if (cfg.ensemble.mode != EnsembleMode::kFeatureEnsemble) {
    ec.use_gates = false;
    ec.use_ec = false;
  }
  return ec;
}

std::vector<EnsembleModel> make_members(const ExperimentConfig& cfg, const EnsembleConfig& ec,
                                        std::span<const std::size_t> cpt, std::uint64_t seed) {
  std::vector<EnsembleModel> members;
  for (std::size_t j = 0; j < cfg.member_count(); ++j) {
    members.push_back(EnsembleModel::create(ec, cpt, derive_seed({seed, 0x30de1ULL, j})));
  }
  return members;
}

double evaluate(std::span<const EnsembleModel> members, const Task& task, std::size_t head) {
  if (members.size() == 1) return accuracy(members[0], task, head, task.test);
  return accuracy(members, task, head, task.test);
}

std::vector<Sample> all_samples(const Task& t) {
  std::vector<Sample> out = t.train;
  out.insert(out.end(), t.test.begin(), t.test.end());
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    data.insert(data.end(), p.data().begin(), p.data().end());
    rows += p.rows();
  }
  return Tensor::from({rows, parts.front().cols()}, std::move(data));
}

std::string csv_num(double v) { return std::isnan(v) ? "" : format_double(v); }

json num_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double num_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json ms_json(const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

MeanStd ms_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()}; }

}  // namespace

MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double s = 0.0;
  for (double x : xs) s += x;
  out.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

std::vector<Task> load_stream(const ExperimentConfig& cfg) {
  if (cfg.csv_path) return ingest_csv(*cfg.csv_path, cfg.csv_schema, cfg.csv_split_seed);
  return generate(cfg.stream);
}

SeedRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool write_checkpoints) {
  SeedRecord rec;
  rec.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto tasks = load_stream(cfg);
    if (cfg.shuffle_task_order) tasks = shuffle_task_order(std::move(tasks), seed);
    for (const auto& t : tasks) rec.task_order.push_back(t.id);
    const std::size_t T = tasks.size();
    const auto cpt = classes_per_task(tasks);
    const EnsembleConfig ec = model_config(cfg, tasks.front().input_dim());

    auto members = make_members(cfg, ec, cpt, seed);
    std::vector<ContinualTrainer> trainers;
    trainers.reserve(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      trainers.emplace_back(members[j], ec, cfg.strategy, cfg.optimizer, derive_seed({seed, 0x7a1aULL, j}));
    }

    const fs::path ckpt_dir = cfg.output_dir / "checkpoints" / ("seed_" + std::to_string(seed));
    if (write_checkpoints) ensure_dir(ckpt_dir);
    const std::string canonical = cfg.canonical();

    rec.acc = AccuracyMatrix::unmeasured(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < members.size(); ++j) {
        trainers[j].train_task(tasks[t], t);
        trainers[j].consolidate(tasks[t], t);
      }
      if (write_checkpoints) {
        Checkpoint ck;
        ck.seed = seed;
        ck.task_boundary = t;
        ck.task_order = rec.task_order;
        ck.config_text = canonical;
        ck.members = members;
        if (members.size() == 1 && !trainers[0].importance().empty()) ck.importance = trainers[0].importance();
        save_checkpoint(ck, ckpt_dir / ("task_" + std::to_string(t) + ".ckpt"));
      }
      for (std::size_t i = 0; i < T; ++i) rec.acc.A[t][i] = evaluate(members, tasks[i], i);
    }

    if (cfg.fwt_baseline) {
      StrategyConfig plain;
      plain.kind = StrategyKind::kNone;
      for (std::size_t i = 0; i < T; ++i) {
        auto fresh = make_members(cfg, ec, cpt, derive_seed({seed, 0xba5eULL, i}));
        for (std::size_t j = 0; j < fresh.size(); ++j) {
          ContinualTrainer tr(fresh[j], ec, plain, cfg.optimizer, derive_seed({seed, 0xba5eULL, i, j}));
          tr.train_task(tasks[i], i);
        }
        rec.acc.baseline.push_back(evaluate(fresh, tasks[i], i));
      }
    }
    rec.metrics = acc_metrics(rec.acc);

    if (members.size() == 1) {
      const EnsembleModel& m = members.front();
      if (cfg.probes.hdiv) {
        for (std::size_t t = 1; t < T; ++t) {
          Tensor a = joint_features(m, all_samples(tasks[t]), t);
          std::vector<Tensor> prev;
          for (std::size_t p = 0; p < t; ++p) prev.push_back(joint_features(m, all_samples(tasks[p]), p));
          rec.hdiv.push_back({t, hdiv_probe(a, stack_rows(prev), derive_seed({seed, 0x4d1fULL, t}))});
        }
      }
      if (cfg.probes.flatness) {
        rec.flatness = flatness_probe(m, tasks, cfg.probes.flatness_radii, derive_seed({seed, 0xf1a7ULL}),
                                      cfg.probes.flatness_directions);
      }
      if (cfg.probes.diversity) rec.diversity = diversity_matrix(m, tasks);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  RunRecord rr;
  rr.config_hash = cfg.hash();
  rr.canonical_config = cfg.canonical();
  // Sizes are informational; if the stream cannot be loaded every seed fails
  // below with its own recorded error.
  try {
    const auto tasks = load_stream(cfg);
    const auto cpt = classes_per_task(tasks);
    const EnsembleConfig ec = model_config(cfg, tasks.front().input_dim());
    const auto members = make_members(cfg, ec, cpt, 0);
    rr.K = ec.K;
    rr.members = members.size();
    rr.hidden_widths = ec.learner_template.hidden_widths;
    for (const auto& m : members) {
      rr.params_backbone += m.backbone_parameter_count();
      rr.params_total += m.parameter_count();
    }
  } catch (const Error&) {
  }
  if (opts.write_outputs) ensure_dir(cfg.output_dir);

  rr.seeds.resize(cfg.seeds.size());
  const bool ckpt = opts.write_outputs && cfg.checkpoints;
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, cfg.seeds.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) rr.seeds[k] = run_seed(cfg, cfg.seeds[k], ckpt);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < cfg.seeds.size(); k = next++) rr.seeds[k] = run_seed(cfg, cfg.seeds[k], ckpt);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<double> aac, bwt, fwt;
  for (const auto& s : rr.seeds) {
    if (!s.ok) {
      ++rr.failures;
      continue;
    }
    aac.push_back(s.metrics.aac);
    bwt.push_back(s.metrics.bwt);
    if (s.metrics.fwt) fwt.push_back(*s.metrics.fwt);
  }
  rr.aac = mean_std(aac);
  rr.bwt = mean_std(bwt);
  if (!fwt.empty()) rr.fwt = mean_std(fwt);
  if (opts.write_outputs) write_run_outputs(rr, cfg.output_dir);
  return rr;
}

std::string summary_json(const RunRecord& rr) {
  json j;
  j["config_hash"] = rr.config_hash;
  json cfg = json::object();
  for (const auto& [k, v] : parse_key_values(rr.canonical_config)) cfg[k] = v;
  j["config"] = cfg;
  j["model"] = {{"K", rr.K},
                {"members", rr.members},
                {"hidden_widths", rr.hidden_widths},
                {"params_backbone", rr.params_backbone},
                {"params_total", rr.params_total}};
  j["aggregate"] = {{"aac", ms_json(rr.aac)},
                    {"bwt", ms_json(rr.bwt)},
                    {"fwt", rr.fwt ? ms_json(*rr.fwt) : json(nullptr)},
                    {"failures", rr.failures},
                    {"partial", rr.partial()}};
  json seeds = json::array();
  for (const auto& s : rr.seeds) {
    json js;
    js["seed"] = s.seed;
    js["ok"] = s.ok;
    js["error"] = s.error;
    js["task_order"] = s.task_order;
    json acc = json::array();
    for (const auto& row : s.acc.A) {
      json jr = json::array();
      for (double v : row) jr.push_back(num_or_null(v));
      acc.push_back(jr);
    }
    js["accuracy"] = acc;
    json base = json::array();
    for (double v : s.acc.baseline) base.push_back(num_or_null(v));
    js["baseline"] = base;
    js["aac"] = s.ok ? json(s.metrics.aac) : json(nullptr);
    js["bwt"] = s.ok ? json(s.metrics.bwt) : json(nullptr);
    js["fwt"] = s.metrics.fwt ? json(*s.metrics.fwt) : json(nullptr);
    json hd = json::array();
    for (const auto& h : s.hdiv) {
      hd.push_back({{"task", h.task},
                    {"test_bce", h.result.test_bce},
                    {"test_error", h.result.test_error},
                    {"divergence", h.result.divergence}});
    }
    js["hdiv"] = hd;
    if (s.flatness) {
      js["flatness"] = {{"radii", s.flatness->radii},
                        {"curves", s.flatness->curves},
                        {"envelope", s.flatness->envelope},
                        {"base_loss", s.flatness->base_loss}};
    } else {
      js["flatness"] = nullptr;
    }
    js["diversity"] = s.diversity;
    seeds.push_back(js);
  }
  j["seeds"] = seeds;
  return j.dump(2) + "\n";
}

RunRecord load_run_record(const fs::path& dir) {
  const json j = json::parse(read_text(dir / "summary.json"));
  RunRecord rr;
  rr.config_hash = j.at("config_hash").get<std::string>();
  KeyValues kv;
  for (auto it = j.at("config").begin(); it != j.at("config").end(); ++it) kv[it.key()] = it.value().get<std::string>();
  rr.canonical_config = canonical_text(kv);
  const auto& m = j.at("model");
  rr.K = m.at("K").get<std::size_t>();
  rr.members = m.at("members").get<std::size_t>();
  rr.hidden_widths = m.at("hidden_widths").get<std::vector<std::size_t>>();
  rr.params_backbone = m.at("params_backbone").get<std::size_t>();
  rr.params_total = m.at("params_total").get<std::size_t>();
  const auto& agg = j.at("aggregate");
  rr.aac = ms_from(agg.at("aac"));
  rr.bwt = ms_from(agg.at("bwt"));
  if (!agg.at("fwt").is_null()) rr.fwt = ms_from(agg.at("fwt"));
  rr.failures = agg.at("failures").get<std::size_t>();
  for (const auto& js : j.at("seeds")) {
    SeedRecord s;
    s.seed = js.at("seed").get<std::uint64_t>();
    s.ok = js.at("ok").get<bool>();
    s.error = js.at("error").get<std::string>();
    s.task_order = js.at("task_order").get<std::vector<int>>();
    for (const auto& row : js.at("accuracy")) {
      std::vector<double> r;
      for (const auto& v : row) r.push_back(num_from(v));
      s.acc.A.push_back(std::move(r));
    }
    for (const auto& v : js.at("baseline")) s.acc.baseline.push_back(num_from(v));
    if (s.ok) {
      s.metrics.aac = js.at("aac").get<double>();
      s.metrics.bwt = js.at("bwt").get<double>();
    }
    if (!js.at("fwt").is_null()) s.metrics.fwt = js.at("fwt").get<double>();
    for (const auto& h : js.at("hdiv")) {
      s.hdiv.push_back({h.at("task").get<std::size_t>(),
                        {h.at("test_bce").get<double>(), h.at("test_error").get<double>(),
                         h.at("divergence").get<double>()}});
    }
    if (!js.at("flatness").is_null()) {
      const auto& f = js.at("flatness");
      FlatnessResult fr;
      fr.radii = f.at("radii").get<std::vector<double>>();
      fr.curves = f.at("curves").get<std::vector<std::vector<double>>>();
      fr.envelope = f.at("envelope").get<std::vector<double>>();
      fr.base_loss = f.at("base_loss").get<double>();
      s.flatness = std::move(fr);
    }
    s.diversity = js.at("diversity").get<std::vector<std::vector<double>>>();
    rr.seeds.push_back(std::move(s));
  }
  return rr;
}

void write_run_outputs(const RunRecord& rr, const fs::path& dir) {
  ensure_dir(dir);
  write_text(dir / "summary.json", summary_json(rr));

  std::ostringstream acc;
  acc << "seed,trained_task,eval_task,accuracy\n";
  std::ostringstream met;
  met << "seed,aac,bwt,fwt\n";
  std::ostringstream hd, fl, dv;
  hd << "seed,task,test_bce,test_error,divergence\n";
  fl << "seed,direction,radius,loss\n";
  dv << "seed,learner,task,relative_accuracy\n";
  bool any_hdiv = false, any_flat = false, any_div = false;
  json timing = json::array();
  for (const auto& s : rr.seeds) {
    timing.push_back({{"seed", s.seed}, {"ok", s.ok}, {"wall_seconds", s.wall_seconds}});
    if (!s.ok) continue;
    for (std::size_t t = 0; t < s.acc.T(); ++t) {
      for (std::size_t i = 0; i < s.acc.T(); ++i) {
        acc << s.seed << ',' << t << ',' << i << ',' << csv_num(s.acc.A[t][i]) << '\n';
      }
    }
    met << s.seed << ',' << format_double(s.metrics.aac) << ',' << format_double(s.metrics.bwt) << ','
        << (s.metrics.fwt ? format_double(*s.metrics.fwt) : "") << '\n';
    for (const auto& h : s.hdiv) {
      any_hdiv = true;
      hd << s.seed << ',' << h.task << ',' << format_double(h.result.test_bce) << ','
         << format_double(h.result.test_error) << ',' << format_double(h.result.divergence) << '\n';
    }
    if (s.flatness) {
      any_flat = true;
      for (std::size_t d = 0; d < s.flatness->curves.size(); ++d) {
        for (std::size_t r = 0; r < s.flatness->radii.size(); ++r) {
          fl << s.seed << ',' << d << ',' << format_double(s.flatness->radii[r]) << ','
             << format_double(s.flatness->curves[d][r]) << '\n';
        }
      }
    }
    for (std::size_t i = 0; i < s.diversity.size(); ++i) {
      any_div = true;
      for (std::size_t t = 0; t < s.diversity[i].size(); ++t) {
        dv << s.seed << ',' << i << ',' << t << ',' << format_double(s.diversity[i][t]) << '\n';
      }
    }
  }
  met << "mean," << format_double(rr.aac.mean) << ',' << format_double(rr.bwt.mean) << ','
      << (rr.fwt ? format_double(rr.fwt->mean) : "") << '\n';
  met << "std," << format_double(rr.aac.std) << ',' << format_double(rr.bwt.std) << ','
      << (rr.fwt ? format_double(rr.fwt->std) : "") << '\n';
  write_text(dir / "accuracy.csv", acc.str());
  write_text(dir / "metrics.csv", met.str());
  if (any_hdiv) write_text(dir / "hdiv.csv", hd.str());
  if (any_flat) write_text(dir / "flatness.csv", fl.str());
  if (any_div) write_text(dir / "diversity.csv", dv.str());
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

void check_budget_parity(std::size_t params_coscl, std::size_t params_scl, double tolerance) {
  if (params_scl == 0) throw ConfigError("budget parity: reference parameter count is zero");
  const double gap = std::abs(static_cast<double>(params_coscl) - static_cast<double>(params_scl)) /
                     static_cast<double>(params_scl);
  if (gap > tolerance) {
    throw ConfigError("budget parity violated: " + std::to_string(params_coscl) + " vs " +
                      std::to_string(params_scl) + " parameters");
  }
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kKVsWidth:
      return "K_vs_width";
    case SweepAxis::kGamma:
      return "gamma";
    case SweepAxis::kGateScale:
      return "gate_scale";
    case SweepAxis::kTotalBudget:
      return "total_budget";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "K_vs_width") return SweepAxis::kKVsWidth;
  if (name == "gamma") return SweepAxis::kGamma;
  if (name == "gate_scale") return SweepAxis::kGateScale;
  if (name == "total_budget") return SweepAxis::kTotalBudget;
  throw ConfigError("unknown sweep axis '" + name + "'");
}

namespace {

std::size_t backbone_of(const ExperimentConfig& cfg) {
  const LearnerConfig lc = cfg.resolved_learner();
  const std::size_t learners = cfg.ensemble.mode == EnsembleMode::kSingle ? 1 : cfg.ensemble.K;
  return learners * parameter_count(lc);
}

std::size_t as_count(double v, const char* what) {
  if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError(std::string(what) + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<SweepPoint> sweep(SweepAxis axis, std::span<const double> grid, const ExperimentConfig& base,
                              const RunOptions& opts) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  base.validate();
  const fs::path root = base.output_dir / ("sweep_" + to_string(axis));
  std::vector<SweepPoint> points;
  auto run_point = [&](std::size_t k, double value, const std::string& variant,
                       const std::function<ExperimentConfig()>& build) {
    SweepPoint pt;
    pt.value = value;
    pt.variant = variant;
    try {
      ExperimentConfig cfg = build();
      cfg.output_dir = root / ("point_" + std::to_string(k) + "_" + variant);
      cfg.validate();
      pt.record = run_experiment(cfg, opts);
    } catch (const ConfigError& e) {
      pt.feasible = false;
      pt.note = e.what();
    }
    points.push_back(std::move(pt));
  };

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double v = grid[k];
    switch (axis) {
      case SweepAxis::kKVsWidth:
        run_point(k, v, "run", [&] {
          ExperimentConfig cfg = base;
          cfg.ensemble.mode = EnsembleMode::kFeatureEnsemble;
          cfg.ensemble.K = as_count(v, "K");
          cfg.total_budget = base.total_budget ? base.total_budget : parameter_count(base.ensemble.learner_template);
          (void)cfg.resolved_learner();
          return cfg;
        });
        break;
      case SweepAxis::kGamma:
        run_point(k, v, "run", [&] {
          ExperimentConfig cfg = base;
          cfg.ensemble.gamma = v;
          cfg.ensemble.use_ec = true;
          return cfg;
        });
        break;
      case SweepAxis::kGateScale:
        run_point(k, v, "run", [&] {
          ExperimentConfig cfg = base;
          cfg.ensemble.gate_scale = v;
          cfg.ensemble.use_gates = true;
          return cfg;
        });
        break;
      case SweepAxis::kTotalBudget: {
        ExperimentConfig coscl = base;
        coscl.ensemble.mode = EnsembleMode::kFeatureEnsemble;
        ExperimentConfig scl = base;
        scl.ensemble.mode = EnsembleMode::kSingle;
        scl.ensemble.K = 1;
        scl.ensemble.use_gates = false;
        scl.ensemble.use_ec = false;
        std::string parity_error;
        try {
          coscl.total_budget = scl.total_budget = as_count(v, "total_budget");
          check_budget_parity(backbone_of(coscl), backbone_of(scl));
        } catch (const ConfigError& e) {
          parity_error = e.what();
        }
        for (auto* variant : {&coscl, &scl}) {
          const std::string name = variant == &coscl ? "coscl" : "scl";
          run_point(k, v, name, [&] {
            if (!parity_error.empty()) throw ConfigError(parity_error);
            return *variant;
          });
        }
        break;
      }
    }
  }
  if (opts.write_outputs) write_sweep_outputs(points, axis, root);
  return points;
}

void write_sweep_outputs(std::span<const SweepPoint> points, SweepAxis axis, const fs::path& dir) {
  ensure_dir(dir);
  std::ostringstream csv;
  csv << "axis,value,variant,feasible,K,hidden,params_backbone,aac_mean,aac_std,bwt_mean,bwt_std,fwt_mean,"
         "fwt_std,n_ok,partial,note\n";
  json arr = json::array();
  for (const auto& p : points) {
    csv << to_string(axis) << ',' << format_double(p.value) << ',' << p.variant << ','
        << (p.feasible ? "true" : "false") << ',';
    json jp{{"axis", to_string(axis)}, {"value", p.value}, {"variant", p.variant}, {"feasible", p.feasible},
            {"note", p.note}};
    if (p.record) {
      const auto& r = *p.record;
      std::string hidden;
      for (std::size_t i = 0; i < r.hidden_widths.size(); ++i) hidden += (i ? "x" : "") + std::to_string(r.hidden_widths[i]);
      csv << r.K << ',' << hidden << ',' << r.params_backbone << ',' << format_double(r.aac.mean) << ','
          << format_double(r.aac.std) << ',' << format_double(r.bwt.mean) << ',' << format_double(r.bwt.std) << ','
          << (r.fwt ? format_double(r.fwt->mean) : "") << ',' << (r.fwt ? format_double(r.fwt->std) : "") << ','
          << r.aac.n << ',' << (r.partial() ? "true" : "false") << ',';
      jp["summary"] = json::parse(summary_json(r));
    } else {
      csv << ",,,,,,,,,,,";
      jp["summary"] = nullptr;
    }
    std::string note = p.note;
    std::replace(note.begin(), note.end(), ',', ';');
    csv << note << '\n';
    arr.push_back(jp);
  }
  write_text(dir / "sweep.csv", csv.str());
  write_text(dir / "sweep.json", arr.dump(2) + "\n");
}

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "curve") return PlotKind::kCurve;
  if (name == "sweep") return PlotKind::kSweep;
  if (name == "flatness") return PlotKind::kFlatness;
  if (name == "diversity") return PlotKind::kDiversity;
  throw ConfigError("unknown plot kind '" + name + "'");
}

std::vector<fs::path> emit_plotdata(const fs::path& records_dir, PlotKind kind, const fs::path& out_dir) {
  std::vector<fs::path> written;
  if (kind == PlotKind::kSweep) {
    const json arr = json::parse(read_text(records_dir / "sweep.json"));
    if (arr.empty()) throw ContractError("sweep has no points");
    ensure_dir(out_dir);
    std::ostringstream os;
    os << "axis,value,variant,aac_mean,aac_std,bwt_mean,bwt_std,n\n";
    for (const auto& p : arr) {
      if (p.at("summary").is_null()) continue;
      const auto& agg = p.at("summary").at("aggregate");
      os << p.at("axis").get<std::string>() << ',' << format_double(p.at("value").get<double>()) << ','
         << p.at("variant").get<std::string>() << ',' << format_double(agg.at("aac").at("mean").get<double>()) << ','
         << format_double(agg.at("aac").at("std").get<double>()) << ','
         << format_double(agg.at("bwt").at("mean").get<double>()) << ','
         << format_double(agg.at("bwt").at("std").get<double>()) << ','
         << agg.at("aac").at("n").get<std::size_t>() << '\n';
    }
    written.push_back(out_dir / "sweep_curve.csv");
    write_text(written.back(), os.str());
    return written;
  }

  const RunRecord rr = load_run_record(records_dir);
  std::vector<const SeedRecord*> ok;
  for (const auto& s : rr.seeds) {
    if (s.ok) ok.push_back(&s);
  }
  if (ok.empty()) throw ContractError("no successful seed records in " + records_dir.string());
  ensure_dir(out_dir);
  std::ostringstream os;
  switch (kind) {
    case PlotKind::kCurve: {
      // Average accuracy over the tasks seen so far, after each task.
      const std::size_t T = ok.front()->acc.T();
      os << "task,mean_acc,std_acc";
      for (auto* s : ok) os << ",seed_" << s->seed;
      os << '\n';
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> vals;
        for (auto* s : ok) {
          double sum = 0.0;
          for (std::size_t i = 0; i <= t; ++i) sum += s->acc.A[t][i];
          vals.push_back(sum / static_cast<double>(t + 1));
        }
        const MeanStd ms = mean_std(vals);
        os << t + 1 << ',' << format_double(ms.mean) << ',' << format_double(ms.std);
        for (double v : vals) os << ',' << format_double(v);
        os << '\n';
      }
      written.push_back(out_dir / "curve.csv");
      break;
    }
    case PlotKind::kFlatness: {
      os << "seed,direction,radius,loss\n";
      std::ostringstream env;
      env << "seed,radius,envelope\n";
      for (auto* s : ok) {
        if (!s->flatness) continue;
        const auto& f = *s->flatness;
        for (std::size_t d = 0; d < f.curves.size(); ++d) {
          for (std::size_t r = 0; r < f.radii.size(); ++r) {
            os << s->seed << ',' << d << ',' << format_double(f.radii[r]) << ',' << format_double(f.curves[d][r])
               << '\n';
          }
        }
        for (std::size_t r = 0; r < f.radii.size(); ++r) {
          env << s->seed << ',' << format_double(f.radii[r]) << ',' << format_double(f.envelope[r]) << '\n';
        }
      }
      written.push_back(out_dir / "flatness_envelope.csv");
      write_text(written.back(), env.str());
      written.push_back(out_dir / "flatness_curves.csv");
      break;
    }
    case PlotKind::kDiversity: {
      os << "seed,learner,task,relative_accuracy\n";
      for (auto* s : ok) {
        for (std::size_t i = 0; i < s->diversity.size(); ++i) {
          for (std::size_t t = 0; t < s->diversity[i].size(); ++t) {
            os << s->seed << ',' << i << ',' << t << ',' << format_double(s->diversity[i][t]) << '\n';
          }
        }
      }
      written.push_back(out_dir / "diversity_heat.csv");
      break;
    }
    case PlotKind::kSweep:
      break;
  }
  write_text(written.back(), os.str());
  return written;
}

}  // namespace coscl
