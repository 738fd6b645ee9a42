// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "nvf/checkpoint.hpp"
#include "nvf/cli.hpp"
#include "nvf/config.hpp"
#include "nvf/density.hpp"
#include "nvf/oracle.hpp"

namespace py = pybind11;
using namespace nvf;
using ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) {
    const auto n = static_cast<std::size_t>(a.shape(0));
    return Tensor({n, 1}, std::vector<double>(a.data(), a.data() + n));
  }
  if (a.ndim() != 2) throw std::invalid_argument("expected a 1-D or 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
  Array out({static_cast<py::ssize_t>(t.dim(0)), static_cast<py::ssize_t>(t.dim(1))});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

class Model {
 public:
  explicit Model(checkpoint::Checkpoint ck) : ck_(std::move(ck)) {}

  static Model train(const std::string& config_text) {
    const auto cfg = parse_config(config_text);
    const auto ds = build_dataset(cfg.data);
    auto mc = cfg.model;
    mc.dim = ds.stats.dim();
    Rng rng(cfg.train.seed);
    checkpoint::Checkpoint ck;
    ck.model = std::make_unique<NvfModel>(mc, rng);
    ck.stats = ds.stats;
    ck.config = config_to_json(cfg);
    Model m(std::move(ck));
    {
      py::gil_scoped_release release;
      m.result_ = training::train(*m.ck_.model, cfg.train, ds.train_matrix(), ds.val_matrix(), rng);
    }
    return m;
  }

  static Model load(const std::string& path) { return Model(checkpoint::load(path)); }

  void save(const std::string& path) { checkpoint::save(*ck_.model, ck_.stats, ck_.config, path); }
  py::bytes to_bytes() { return checkpoint::serialize(*ck_.model, ck_.stats, ck_.config); }
  static Model from_bytes(const std::string& bytes) { return Model(checkpoint::deserialize(bytes)); }

  Array log_density(const Array& x, const std::optional<std::string>& estimator, std::optional<std::size_t> k,
                    std::uint64_t seed) {
    auto& model = *ck_.model;
    const auto kind = model.latent().kind;
    std::string name = estimator.value_or("");
    if (name.empty()) name = ck_.config.contains("eval") ? ck_.config["eval"].value("estimator", "") : "";
    const auto e = name.empty() ? density::default_estimator(kind) : density::estimator_from_string(name);
    density::check_estimator(kind, e);
    std::size_t budget = k.value_or(ck_.config.contains("eval") ? ck_.config["eval"].value("k", std::size_t{16}) : 16);
    if (e == density::Estimator::TopK) {
      double space = 1.0;
      for (std::size_t t = 0; t < model.latent().length; ++t) space *= static_cast<double>(model.latent().states);
      if (space < static_cast<double>(budget)) budget = static_cast<std::size_t>(space);
    }
    const auto z = ck_.stats.apply(to_tensor(x));
    Rng rng(seed);
    density::DensityReport report;
    {
      py::gil_scoped_release release;
      report = density::nll_report(model, z, e, budget, ck_.stats.log_jacobian, rng);
    }
    return to_array(report.log_density);
  }

  Array sample(std::size_t n, std::uint64_t seed) {
    if (n == 0) return Array({py::ssize_t{0}, static_cast<py::ssize_t>(ck_.stats.original_dim())});
    Rng rng(seed);
    return to_array(ck_.stats.invert(density::sample(*ck_.model, n, rng)));
  }

  std::string latent() const { return latent::to_string(ck_.model->latent().kind); }
  std::size_t dim() const { return ck_.stats.original_dim(); }
  std::string config() const { return ck_.config.dump(2); }
  std::size_t parameter_count() {
    std::size_t total = 0;
    for (const auto* p : ck_.model->parameters()) total += p->value.size();
    return total;
  }

  py::list metrics() const {
    py::list rows;
    if (!result_) return rows;
    for (const auto& r : result_->metrics) {
      py::dict row;
      row["step"] = r.step;
      row["loss"] = r.loss;
      row["lr"] = r.lr;
      row["val_nll"] = r.val_nll ? py::cast(*r.val_nll) : py::none();
      rows.append(row);
    }
    return rows;
  }

 private:
  checkpoint::Checkpoint ck_;
  std::optional<training::TrainResult> result_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Normalizing variational flows";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<data::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<checkpoint::CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<training::TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);
  py::register_exception<density::IncompatibleEstimator>(m, "IncompatibleEstimator", PyExc_ValueError);

  py::class_<Model>(m, "Model")
      .def_static("train", &Model::train, py::arg("config"), "Train from a JSON config string.")
      .def_static("load", &Model::load, py::arg("path"))
      .def_static("from_bytes", &Model::from_bytes, py::arg("data"))
      .def("save", &Model::save, py::arg("path"))
      .def("to_bytes", &Model::to_bytes)
      .def("log_density", &Model::log_density, py::arg("x"), py::arg("estimator") = py::none(),
           py::arg("k") = py::none(), py::arg("seed") = 0, "Log density per row, in original data units.")
      .def("sample", &Model::sample, py::arg("n"), py::arg("seed") = 0)
      .def_property_readonly("latent", &Model::latent)
      .def_property_readonly("dim", &Model::dim)
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("metrics", &Model::metrics);

  m.def(
      "generate",
      [](const std::string& config_text) { return to_array(build_raw_dataset(parse_config(config_text).data).matrix); },
      py::arg("config"), "Raw rows of the dataset a config describes.");

  m.def(
      "default_config", [](const std::string& config_text) { return config_to_json(parse_config(config_text)).dump(2); },
      py::arg("config") = "{}", "Config with every default filled in.");

  m.def(
      "transport_jacobian",
      [](double mu, double sigma, int which) {
        const auto j = oracle::transport_jacobian(oracle::example1_source(which, mu, sigma),
                                                  oracle::GmmSpec::symmetric(mu, sigma), 0.0);
        py::dict out;
        out["log_value"] = j.log_value;
        out["direct"] = j.direct ? py::cast(*j.direct) : py::none();
        out["closed_form_log"] = oracle::example1_log_jacobian(which, mu, sigma);
        return out;
      },
      py::arg("mu"), py::arg("sigma"), py::arg("case") = 1,
      "Transport Jacobian at 0 for the symmetric two-mode target.");

  m.def(
      "gmm_true_nll",
      [](std::vector<double> weights, std::vector<double> means, std::vector<double> scales) {
        oracle::GmmSpec spec{std::move(weights), std::move(means), std::move(scales)};
        spec.validate();
        return oracle::gmm_true_nll(spec);
      },
      py::arg("weights"), py::arg("means"), py::arg("scales"), "Differential entropy of a 1-D mixture.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a CLI command in process; returns (exit_code, stdout, stderr).");
}
