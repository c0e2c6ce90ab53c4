#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "scn/capsules.hpp"
#include "scn/checkpoint.hpp"
#include "scn/data.hpp"
#include "scn/harness.hpp"
#include "scn/optim.hpp"
#include "scn/siamese.hpp"

namespace py = pybind11;
using namespace scn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

RunConfig make_config(const py::dict& settings) {
  RunConfig cfg;
  for (const auto& [k, v] : settings) {
    std::string value = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    apply_setting(cfg, k.cast<std::string>(), value);
  }
  cfg.validate();
  return cfg;
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["test_loss"] = m.test_loss;
  d["test_accuracy"] = m.test_accuracy;
  d["wall_ms"] = m.wall_ms;
  return d;
}

// A model plus the run config that shapes it.
struct PyModel {
  RunConfig cfg;
  ModelParams params;

  PyModel(const py::dict& settings, std::uint64_t seed) : cfg(make_config(settings)) {
    params = init_model(cfg.encoder(), seed);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : params.learnables()) out.push_back(p.name);
    return out;
  }

  py::dict tensors() const {
    py::dict out;
    for (const auto& p : params.learnables()) out[py::str(p.name)] = to_numpy(*p.tensor);
    for (const auto& p : params.buffers()) out[py::str(p.name)] = to_numpy(*p.tensor);
    return out;
  }

  Array encode_images(const Array& images, bool train, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return to_numpy(encode(to_tensor(images), params, cfg.encoder(), train ? Mode::train : Mode::eval, rng).vec);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Siamese capsule network core";

  // Later registrations are tried first, so the base class goes first.
  const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<CheckpointError>(m, "CheckpointError", base);
  py::register_exception<ImageError>(m, "ImageError", base);

  m.def("squash", [](const Array& s, std::size_t axis) { return to_numpy(squash(to_tensor(s), axis)); },
        py::arg("s"), py::arg("axis") = 1);

  m.def(
      "dynamic_route",
      [](const Array& u_hat, std::size_t iterations, const std::string& activation) {
        RoutingOptions opts;
        opts.iterations = iterations;
        if (activation == "squash") opts.activation = CapsuleActivation::squash;
        else if (activation == "tanh") opts.activation = CapsuleActivation::tanh;
        else throw ConfigError("activation must be squash or tanh, got '" + activation + "'");
        const RoutingResult r = dynamic_route(to_tensor(u_hat), opts);
        py::list history;
        for (const auto& c : r.state.coupling_history) history.append(to_numpy(c));
        return py::make_tuple(to_numpy(r.outputs), history);
      },
      py::arg("u_hat"), py::arg("iterations") = 4, py::arg("activation") = "squash",
      "Routes predictions [N, lower, upper, d]. Returns the outputs and the coupling of every iteration.");

  m.def(
      "concrete_dropout_mask",
      [](const Array& p, const Array& u, double temperature, bool standard) {
        return to_numpy(concrete_dropout_mask(to_tensor(p), to_tensor(u), {temperature, standard}));
      },
      py::arg("p"), py::arg("u"), py::arg("temperature") = 0.1, py::arg("standard") = false);

  m.def(
      "distance",
      [](const Array& a, const Array& b, const std::string& metric) {
        return to_vector(distance(to_tensor(a), to_tensor(b), parse_metric(metric)));
      },
      py::arg("a"), py::arg("b"), py::arg("metric") = "euclidean_sq");

  m.def(
      "contrastive_loss",
      [](const std::vector<double>& d, const std::vector<int>& labels, double margin) {
        return contrastive_loss(Tensor(Shape{d.size()}, d), labels, margin).item();
      },
      py::arg("d"), py::arg("labels"), py::arg("margin") = 2.0);

  m.def(
      "double_margin_loss",
      [](const std::vector<double>& d, const std::vector<int>& labels, double m_n, double m_p) {
        return double_margin_loss(Tensor(Shape{d.size()}, d), labels, m_n, m_p).item();
      },
      py::arg("d"), py::arg("labels"), py::arg("m_n") = 0.2, py::arg("m_p") = 0.5);

  m.def(
      "select_threshold",
      [](const std::vector<double>& d, const std::vector<int>& labels, const std::string& metric) {
        const ThresholdChoice c = select_threshold(d, labels, parse_metric(metric));
        return py::make_tuple(c.threshold, c.accuracy);
      },
      py::arg("d"), py::arg("labels"), py::arg("metric") = "euclidean_sq");

  m.def(
      "amsgrad",
      [](const Array& w0, const std::vector<Array>& grads, double alpha, bool flat_lr) {
        Tensor w = to_tensor(w0);
        Tensor* ps[] = {&w};
        OptimState st;
        AmsGradOptions opts;
        opts.alpha = alpha;
        opts.flat_lr = flat_lr;
        py::list path;
        for (const auto& g : grads) {
          const Tensor gs[] = {to_tensor(g)};
          amsgrad_step(ps, gs, st, opts);
          path.append(to_numpy(w));
        }
        return path;
      },
      py::arg("w"), py::arg("grads"), py::arg("alpha") = 1e-3, py::arg("flat_lr") = false,
      "Applies one AMSGrad step per gradient and returns the weights after each step.");

  m.def("gradcheck", [](std::uint64_t seed) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& e : run_gradcheck_suite(seed)) out.emplace_back(e.layer, e.max_rel_error);
    return out;
  }, py::arg("seed") = 7);
  m.attr("GRADCHECK_TOLERANCE") = kGradcheckTolerance;

  m.def("config_keys", &config_keys);
  m.def("config_echo", [](const py::dict& settings) { return config_echo(make_config(settings)); },
        py::arg("settings") = py::dict());

  m.def(
      "train",
      [](const py::dict& settings) {
        const RunConfig cfg = make_config(settings);
        std::vector<TrainResult> results;
        {
          py::gil_scoped_release release;
          results = cmd_train(cfg);
        }
        py::list folds;
        for (const auto& r : results) {
          py::list rows;
          for (const auto& e : r.epochs) rows.append(metrics_dict(e));
          folds.append(rows);
        }
        return folds;
      },
      py::arg("settings"), "Runs the train command; returns per-epoch metrics for each fold.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const py::dict& settings, const std::filesystem::path& out_dir) {
        const EvalReport r = cmd_eval(checkpoint, make_config(settings), out_dir);
        py::dict d;
        d["loss"] = r.loss;
        d["accuracy"] = r.accuracy;
        d["threshold"] = r.threshold;
        d["overlap"] = r.overlap;
        d["n_pairs"] = r.n_pairs;
        return d;
      },
      py::arg("checkpoint"), py::arg("settings"), py::arg("out_dir"));

  m.def(
      "read_checkpoint",
      [](const std::filesystem::path& path) {
        py::dict out;
        for (const auto& e : read_checkpoint(path)) out[py::str(e.name)] = to_numpy(e.tensor);
        return out;
      },
      py::arg("path"));
  m.def(
      "write_checkpoint",
      [](const std::filesystem::path& path, const py::dict& tensors) {
        std::vector<CheckpointEntry> entries;
        for (const auto& [k, v] : tensors) entries.push_back({k.cast<std::string>(), to_tensor(v.cast<Array>())});
        write_checkpoint(path, entries);
      },
      py::arg("path"), py::arg("tensors"));

  m.def("load_pgm", [](const py::bytes& data) {
    const std::string s = data;
    return to_numpy(load_pgm({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("settings") = py::dict(), py::arg("seed") = 1)
      .def_property_readonly("parameter_count", [](const PyModel& p) { return p.params.parameter_count(); })
      .def_property_readonly("parameter_names", &PyModel::names)
      .def("tensors", &PyModel::tensors)
      .def("encode", &PyModel::encode_images, py::arg("images"), py::arg("train") = false, py::arg("seed") = 0)
      .def("save", [](const PyModel& p, const std::filesystem::path& path) { save_checkpoint(p.params, nullptr, path); })
      .def("load", [](PyModel& p, const std::filesystem::path& path) { load_checkpoint(path, p.params); });
}
