#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "coscl/checkpoint.hpp"
#include "coscl/errors.hpp"
#include "coscl/harness.hpp"

namespace py = pybind11;
using namespace coscl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor::from({r, c}, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array samples_x(const std::vector<Sample>& s, std::size_t width) {
  Array out({static_cast<py::ssize_t>(s.size()), static_cast<py::ssize_t>(width)});
  double* p = out.mutable_data();
  for (const auto& row : s) p = std::copy(row.x.begin(), row.x.end(), p);
  return out;
}

py::array_t<int> samples_y(const std::vector<Sample>& s) {
  py::array_t<int> out(static_cast<py::ssize_t>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) out.mutable_data()[i] = s[i].label;
  return out;
}

// Applies key=value overrides through the canonical form; output_dir and
// workers are not part of it and are carried over.
ExperimentConfig with_overrides(const ExperimentConfig& c, const std::map<std::string, std::string>& kv) {
  KeyValues all = c.to_key_values();
  for (const auto& [k, v] : kv) all[k] = v;
  ExperimentConfig out = config_from_key_values(all);
  out.output_dir = c.output_dir;
  out.workers = c.workers;
  return out;
}

py::dict metrics_dict(const TransferMetrics& m) {
  py::dict d;
  d["aac"] = m.aac;
  d["bwt"] = m.bwt;
  d["fwt"] = m.fwt ? py::cast(*m.fwt) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_coscl, mod) {
  mod.doc() = "Cooperative small continual learners";

  auto base = py::register_exception<Error>(mod, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(mod, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(mod, "DimensionError", base.ptr());
  py::register_exception<TaskError>(mod, "TaskError", base.ptr());
  py::register_exception<ContractError>(mod, "ContractError", base.ptr());
  py::register_exception<IoError>(mod, "IoError", base.ptr());
  py::register_exception<ParseError>(mod, "ParseError", base.ptr());
  py::register_exception<SchemaError>(mod, "SchemaError", base.ptr());

  py::class_<ExperimentConfig>(mod, "Config")
      .def_static("from_text", &parse_config, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("with_overrides", &with_overrides, py::arg("overrides"))
      .def_property_readonly("canonical", &ExperimentConfig::canonical)
      .def_property_readonly("hash", &ExperimentConfig::hash)
      .def_property_readonly("K", [](const ExperimentConfig& c) { return c.ensemble.K; })
      .def_property_readonly("T", [](const ExperimentConfig& c) { return c.stream.T; })
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_readwrite("workers", &ExperimentConfig::workers)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("checkpoints", &ExperimentConfig::checkpoints);

  mod.def(
      "_run",
      [](const ExperimentConfig& cfg, std::size_t workers, bool write_outputs) {
        RunRecord rr;
        {
          py::gil_scoped_release release;
          rr = run_experiment(cfg, {workers, write_outputs});
        }
        return summary_json(rr);
      },
      py::arg("config"), py::arg("workers") = 1, py::arg("write_outputs") = true);

  mod.def(
      "_sweep",
      [](const ExperimentConfig& cfg, const std::string& axis, const std::vector<double>& grid, std::size_t workers) {
        std::vector<SweepPoint> pts;
        {
          py::gil_scoped_release release;
          pts = sweep(parse_sweep_axis(axis), grid, cfg, {workers, true});
        }
        py::list out;
        for (const auto& p : pts) {
          py::dict d;
          d["value"] = p.value;
          d["variant"] = p.variant;
          d["feasible"] = p.feasible;
          d["note"] = p.note;
          d["summary"] = p.record ? py::cast(summary_json(*p.record)) : py::none();
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("axis"), py::arg("grid"), py::arg("workers") = 1);

  mod.def(
      "acc_metrics",
      [](const std::vector<std::vector<double>>& A, const std::vector<double>& baseline) {
        return metrics_dict(acc_metrics(AccuracyMatrix{A, baseline}));
      },
      py::arg("A"), py::arg("baseline") = std::vector<double>{},
      "AAC, BWT and (with a baseline) FWT of an accuracy matrix A[trained][evaluated].");

  mod.def(
      "ec_loss",
      [](const std::vector<Array>& probs) {
        std::vector<Tensor> ts;
        for (const auto& p : probs) ts.push_back(to_tensor(p));
        return ec_loss(ts).item();
      },
      py::arg("probs"), "Mean pairwise KL between per-learner probability rows.");

  mod.def(
      "hdiv_probe",
      [](const Array& a, const Array& b, std::uint64_t seed) {
        const auto r = hdiv_probe(to_tensor(a), to_tensor(b), seed);
        py::dict d;
        d["test_bce"] = r.test_bce;
        d["test_error"] = r.test_error;
        d["divergence"] = r.divergence;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("seed") = 0);

  mod.def(
      "load_stream",
      [](const ExperimentConfig& cfg) {
        py::list out;
        for (const auto& t : load_stream(cfg)) {
          py::dict d;
          d["id"] = t.id;
          d["classes"] = t.classes;
          d["train_x"] = samples_x(t.train, t.input_dim());
          d["train_y"] = samples_y(t.train);
          d["test_x"] = samples_x(t.test, t.input_dim());
          d["test_y"] = samples_y(t.test);
          out.append(d);
        }
        return out;
      },
      py::arg("config"));

  py::class_<EnsembleModel>(mod, "Model")
      .def(py::init([](const ExperimentConfig& cfg, const std::vector<std::size_t>& classes_per_task,
                       std::uint64_t seed) {
             EnsembleConfig ec = cfg.ensemble;
             ec.K = cfg.model_K();
             ec.learner_template = cfg.resolved_learner();
             return EnsembleModel::create(ec, classes_per_task, seed);
           }),
           py::arg("config"), py::arg("classes_per_task"), py::arg("seed") = 0)
      .def_property_readonly("K", &EnsembleModel::K)
      .def_property_readonly("num_tasks", &EnsembleModel::num_tasks)
      .def("parameter_count", &EnsembleModel::parameter_count)
      .def("backbone_parameter_count", &EnsembleModel::backbone_parameter_count)
      .def("gates", [](const EnsembleModel& m, std::size_t task) {
        std::vector<double> g;
        for (std::size_t i = 0; i < m.K(); ++i) g.push_back(m.gate_value(task, i));
        return g;
      })
      .def("logits", [](const EnsembleModel& m, const Array& x, std::size_t task) {
        return to_array(forward_joint(m, to_tensor(x), task));
      })
      .def("per_learner_probs", [](const EnsembleModel& m, const Array& x, std::size_t task) {
        py::list out;
        for (const auto& p : forward_per_learner(m, to_tensor(x), task)) out.append(to_array(p));
        return out;
      })
      .def(
          "objective",
          [](const EnsembleModel& m, const Array& x, const std::vector<int>& local_labels, std::size_t task,
             double gamma) { return coscl_objective(m, Batch{to_tensor(x), local_labels}, task, {}, gamma).item(); },
          py::arg("x"), py::arg("labels"), py::arg("task"), py::arg("gamma"),
          "Cross-entropy of the joint prediction plus gamma times the EC term (no strategy penalty).");

  mod.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        const Checkpoint c = load_checkpoint(path);
        py::dict d;
        d["seed"] = c.seed;
        d["task_boundary"] = c.task_boundary;
        d["task_order"] = c.task_order;
        d["config"] = parse_config(c.config_text);
        d["members"] = c.members;
        return d;
      },
      py::arg("path"));

  mod.def(
      "emit_plotdata",
      [](const std::filesystem::path& records, const std::string& kind, const std::filesystem::path& out) {
        return emit_plotdata(records, parse_plot_kind(kind), out);
      },
      py::arg("records"), py::arg("kind"), py::arg("out"));
}
