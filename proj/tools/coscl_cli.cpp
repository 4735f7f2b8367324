#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "coscl/checkpoint.hpp"
#include "coscl/errors.hpp"
#include "coscl/harness.hpp"
#include "coscl/rng.hpp"

namespace fs = std::filesystem;
using namespace coscl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

ExperimentConfig load_with_root(const fs::path& path) {
  ExperimentConfig cfg = load_config(path);
  if (const char* root = std::getenv(kOutputRootEnv); root && *root && cfg.output_dir.is_relative()) {
    cfg.output_dir = fs::path(root) / cfg.output_dir;
  }
  return cfg;
}

void report(const RunRecord& rr, const fs::path& dir) {
  std::cout << "config " << rr.config_hash << "  K=" << rr.K << " members=" << rr.members
            << " backbone_params=" << rr.params_backbone << '\n';
  std::cout << "AAC " << rr.aac.mean << " +/- " << rr.aac.std << "  BWT " << rr.bwt.mean << " +/- " << rr.bwt.std;
  if (rr.fwt) std::cout << "  FWT " << rr.fwt->mean << " +/- " << rr.fwt->std;
  std::cout << "  (" << rr.aac.n << " seeds)\n";
  for (const auto& s : rr.seeds) {
    if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.error << '\n';
  }
  std::cout << "outputs in " << dir.string() << '\n';
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad grid value '" + item + "'");
    }
  }
  return grid;
}

// Rebuilds the trained stream of a checkpoint and evaluates one probe on it.
nlohmann::json run_probe(const fs::path& ckpt_path, const std::string& kind) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.members.size() != 1) throw ContractError("probes need a single-model checkpoint");
  const ExperimentConfig cfg = parse_config(ck.config_text);
  auto stream = load_stream(cfg);
  std::map<int, Task> by_id;
  for (auto& t : stream) by_id[t.id] = std::move(t);
  std::vector<Task> tasks;
  for (int id : ck.task_order) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ContractError("checkpoint task " + std::to_string(id) + " not in stream");
    tasks.push_back(it->second);
  }
  const std::size_t seen = ck.task_boundary + 1;
  const std::span<const Task> trained(tasks.data(), seen);
  const EnsembleModel& m = ck.members.front();
  nlohmann::json out{{"checkpoint", ckpt_path.string()}, {"seed", ck.seed}, {"task_boundary", ck.task_boundary},
                     {"kind", kind}};
  if (kind == "hdiv") {
    nlohmann::json rows = nlohmann::json::array();
    auto both = [](const Task& t) {
      std::vector<Sample> s = t.train;
      s.insert(s.end(), t.test.begin(), t.test.end());
      return s;
    };
    for (std::size_t t = 1; t < seen; ++t) {
      Tensor a = joint_features(m, both(tasks[t]), t);
      std::vector<double> prev;
      std::size_t rows_prev = 0;
      for (std::size_t p = 0; p < t; ++p) {
        Tensor f = joint_features(m, both(tasks[p]), p);
        prev.insert(prev.end(), f.data().begin(), f.data().end());
        rows_prev += f.rows();
      }
      const auto r = hdiv_probe(a, Tensor::from({rows_prev, a.cols()}, prev), derive_seed({ck.seed, 0x4d1fULL, t}));
      rows.push_back({{"task", t}, {"test_bce", r.test_bce}, {"test_error", r.test_error}, {"divergence", r.divergence}});
    }
    out["hdiv"] = rows;
  } else if (kind == "flatness") {
    const auto f = flatness_probe(m, trained, cfg.probes.flatness_radii, derive_seed({ck.seed, 0xf1a7ULL}),
                                  cfg.probes.flatness_directions);
    out["radii"] = f.radii;
    out["curves"] = f.curves;
    out["envelope"] = f.envelope;
    out["base_loss"] = f.base_loss;
  } else if (kind == "diversity") {
    out["diversity"] = diversity_matrix(m, trained);
  } else {
    throw ConfigError("unknown probe kind '" + kind + "'");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative small continual learners: experiments, sweeps and probes"};
  app.require_subcommand(1);

  std::string config_path, axis_name, grid_text, ckpt_path, probe_kind, records_dir, plot_kind, out_path;
  std::size_t workers = 0;

  auto* run = app.add_subcommand("run", "Train every seed of a config and write its run directory");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--workers", workers, "Parallel seed workers (overrides run.workers)");

  auto* sw = app.add_subcommand("sweep", "Run a config once per grid value along one axis");
  sw->add_option("config", config_path, "Base config file")->required();
  sw->add_option("--axis", axis_name, "K_vs_width | gamma | gate_scale | total_budget")->required();
  sw->add_option("--grid", grid_text, "Comma-separated values")->required();
  sw->add_option("--workers", workers, "Parallel seed workers");

  auto* pr = app.add_subcommand("probe", "Evaluate a diagnostic on a saved checkpoint");
  pr->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
  pr->add_option("--kind", probe_kind, "hdiv | flatness | diversity")->required();
  pr->add_option("--out", out_path, "Write JSON here instead of stdout");

  auto* em = app.add_subcommand("emit", "Write plotting CSVs from a run or sweep directory");
  em->add_option("records", records_dir, "Run or sweep directory")->required();
  em->add_option("--kind", plot_kind, "curve | sweep | flatness | diversity")->required();
  em->add_option("--out", out_path, "Output directory (default: <records>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = load_with_root(config_path);
      RunOptions opts;
      opts.workers = workers ? workers : cfg.workers;
      const RunRecord rr = run_experiment(cfg, opts);
      report(rr, cfg.output_dir);
      if (rr.aac.n == 0) return kExitPartial;
      return rr.partial() ? kExitPartial : kExitOk;
    }
    if (*sw) {
      ExperimentConfig cfg = load_with_root(config_path);
      const SweepAxis axis = parse_sweep_axis(axis_name);
      const auto grid = parse_grid(grid_text);
      RunOptions opts;
      opts.workers = workers ? workers : cfg.workers;
      const auto points = sweep(axis, grid, cfg, opts);
      bool partial = false;
      for (const auto& p : points) {
        std::cout << to_string(axis) << '=' << p.value << ' ' << p.variant << ": ";
        if (!p.record) {
          std::cout << "infeasible (" << p.note << ")\n";
          continue;
        }
        partial = partial || p.record->partial();
        std::cout << "AAC " << p.record->aac.mean << " +/- " << p.record->aac.std << " backbone_params "
                  << p.record->params_backbone << '\n';
      }
      std::cout << "outputs in " << (cfg.output_dir / ("sweep_" + to_string(axis))).string() << '\n';
      return partial ? kExitPartial : kExitOk;
    }
    if (*pr) {
      const auto j = run_probe(ckpt_path, probe_kind);
      if (out_path.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write " + out_path);
        out << j.dump(2) << '\n';
      }
      return kExitOk;
    }
    if (*em) {
      const fs::path out = out_path.empty() ? fs::path(records_dir) / "plots" : fs::path(out_path);
      for (const auto& p : emit_plotdata(records_dir, parse_plot_kind(plot_kind), out)) std::cout << p.string() << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
