// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "nvf/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "nvf/checkpoint.hpp"
#include "nvf/config.hpp"
#include "nvf/density.hpp"
#include "nvf/oracle.hpp"

namespace nvf::cli {

using ad::Tensor;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  return f;
}

density::Estimator choose_estimator(const std::string& flag, const nlohmann::json& config,
                                    latent::LatentKind kind) {
  std::string name = flag;
  if (name.empty() && config.contains("eval")) name = config["eval"].value("estimator", "");
  return name.empty() ? density::default_estimator(kind) : density::estimator_from_string(name);
}

std::size_t choose_k(std::optional<std::size_t> flag, const nlohmann::json& config) {
  if (flag) return *flag;
  if (config.contains("eval")) return config["eval"].value("k", std::size_t{16});
  return 16;
}

// Cap the candidate count at the enumerable code space.
std::size_t topk_budget(NvfModel& model, std::size_t k) {
  const auto& s = model.latent();
  double space = 1.0;
  for (std::size_t t = 0; t < s.length; ++t) space *= static_cast<double>(s.states);
  return space < static_cast<double>(k) ? static_cast<std::size_t>(space) : k;
}

int cmd_train(const std::string& config_path, const std::string& out_path, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(config_path);
  const auto ds = build_dataset(cfg.data);
  for (const auto& w : ds.warnings) err << "warning: " << w << '\n';
  auto mc = cfg.model;
  mc.dim = ds.stats.dim();
  Rng rng(cfg.train.seed);
  NvfModel model(mc, rng);
  const auto val = ds.val_matrix();
  training::TrainResult result;
  try {
    result = training::train(model, cfg.train, ds.train_matrix(), val, rng);
  } catch (const training::TrainingAborted& e) {
    err << e.what() << '\n';
    return kTrainingAborted;
  }
  checkpoint::save(model, ds.stats, config_to_json(cfg), out_path);
  auto log = open_out(out_path + ".log");
  training::write_metrics_csv(log, result.metrics);
  const double val_nll = training::validation_nll(model, val) - ds.stats.log_jacobian;
  out << "final validation NLL: " << fmt(val_nll) << " nats (best step " << result.best_step << ", "
      << result.skipped_steps << " skipped steps)\n";
  return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_spec, const std::string& estimator_flag,
             std::optional<std::size_t> k_flag, std::uint64_t seed, const std::string& report_path,
             std::ostream& out) {
  auto ck = checkpoint::load(model_path);
  auto& model = *ck.model;
  const auto e = choose_estimator(estimator_flag, ck.config, model.latent().kind);
  density::check_estimator(model.latent().kind, e);
  auto k = choose_k(k_flag, ck.config);
  if (e == density::Estimator::TopK) k = topk_budget(model, k);

  Tensor x;
  if (data_spec == "train" || data_spec == "val" || data_spec == "test") {
    const auto cfg = config_from_json(ck.config);
    const auto raw = build_raw_dataset(cfg.data);
    const auto split = data::standardize_and_split(raw, cfg.data.fractions, cfg.data.seed);
    const auto& index = data_spec == "train" ? split.train : data_spec == "val" ? split.val : split.test;
    x = ck.stats.apply(raw.rows(index));
  } else {
    x = ck.stats.apply(data::load_csv(data_spec).matrix);
  }
  Rng rng(seed);
  const auto report = density::nll_report(model, x, e, k, ck.stats.log_jacobian, rng);
  auto f = open_out(report_path);
  density::write_report_csv(f, report);
  out << "mean NLL: " << fmt(report.mean_nll) << " nats (estimator=" << density::to_string(e) << ", K=" << k
      << ", n=" << x.dim(0) << ")\n";
  return kOk;
}

int cmd_sample(const std::string& model_path, std::size_t n, std::uint64_t seed, const std::string& out_path,
               std::ostream& out) {
  auto ck = checkpoint::load(model_path);
  auto f = open_out(out_path);
  if (n > 0) {
    Rng rng(seed);
    data::write_matrix_csv(f, ck.stats.invert(density::sample(*ck.model, n, rng)));
  }
  out << "wrote " << n << " samples to " << out_path << '\n';
  return kOk;
}

int cmd_grid(const std::string& model_path, double xmin, double xmax, double ymin, double ymax, std::size_t res,
             std::optional<std::size_t> k_flag, const std::string& out_path, std::ostream& out) {
  auto ck = checkpoint::load(model_path);
  auto& model = *ck.model;
  if (ck.stats.original_dim() != 2 || ck.stats.dim() != 2) {
    throw std::invalid_argument("grid needs a two-dimensional model, this one has d=" +
                                std::to_string(ck.stats.original_dim()));
  }
  if (res == 0) throw std::invalid_argument("--res must be at least 1");
  const auto kind = model.latent().kind;
  const auto e = density::default_estimator(kind);
  if (e == density::Estimator::IwBound) {
    throw density::IncompatibleEstimator("grid needs the exact or topk estimator; the continuous regime has neither");
  }
  const auto k = e == density::Estimator::TopK ? topk_budget(model, choose_k(k_flag, ck.config)) : 1;
  auto coord = [res](double lo, double hi, std::size_t i) {
    return res == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(res - 1);
  };
  Tensor pts = Tensor::zeros({res * res, 2});
  for (std::size_t iy = 0; iy < res; ++iy) {
    for (std::size_t ix = 0; ix < res; ++ix) {
      pts.at(iy * res + ix, 0) = coord(xmin, xmax, ix);
      pts.at(iy * res + ix, 1) = coord(ymin, ymax, iy);
    }
  }
  Rng rng(0);
  const auto lp = density::log_density(model, ck.stats.apply(pts), e, k, rng);
  auto f = open_out(out_path);
  f << "x,y,logp\n";
  for (std::size_t i = 0; i < lp.size(); ++i) {
    f << fmt(pts.at(i, 0)) << ',' << fmt(pts.at(i, 1)) << ',' << fmt(lp[i] + ck.stats.log_jacobian) << '\n';
  }
  out << "wrote " << res << "x" << res << " grid to " << out_path << '\n';
  return kOk;
}

int cmd_oracle(double mu, double sigma, int which, std::ostream& out) {
  if (!(sigma > 0.0)) throw std::invalid_argument("--sigma must be positive");
  const auto source = oracle::example1_source(which, mu, sigma);
  const auto target = oracle::GmmSpec::symmetric(mu, sigma);
  const auto numeric = oracle::transport_jacobian(source, target, 0.0);
  const double closed = oracle::example1_log_jacobian(which, mu, sigma);
  out << "case " << which << ", mu=" << mu << ", sigma=" << sigma << '\n';
  out << "numeric log|dG/dz(0)|:     " << fmt(numeric.log_value) << "  [inverse-CDF transport]\n";
  out << "closed-form log|dG/dz(0)|: " << fmt(closed) << "  [analytic]\n";
  if (numeric.direct) {
    out << "numeric |dG/dz(0)|:        " << fmt(*numeric.direct) << '\n';
    out << "closed-form |dG/dz(0)|:    " << fmt(std::exp(closed)) << '\n';
  } else {
    out << "numeric |dG/dz(0)|:        unrepresentable in double precision (log form only)\n";
  }
  const double rel = std::abs(std::expm1(numeric.log_value - closed));
  const bool agree = rel <= 1e-4;
  out << "relative difference: " << fmt(rel) << (agree ? " (agree)" : " (MISMATCH)") << '\n';
  return agree ? kOk : kOracleMismatch;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nvf: normalizing variational flows"};
  app.require_subcommand(1);

  std::string config_path, out_path, model_path, data_spec, estimator, report_path;
  std::size_t n = 0, res = 100;
  std::optional<std::size_t> k;
  std::uint64_t seed = 0;
  double xmin = -3, xmax = 3, ymin = -3, ymax = 3, mu = 1.0, sigma = 0.5;
  int which = 1;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_path, "Checkpoint path; metrics go to <out>.log")->required();
  train->footer(config_defaults_text());

  auto* eval = app.add_subcommand("eval", "Score data with a trained model");
  eval->add_option("--model", model_path, "Checkpoint")->required();
  eval->add_option("--data", data_spec, "train, val, test (regenerated from the config) or a CSV path")->required();
  eval->add_option("--estimator", estimator, "exact, topk or iw (default: config, then regime default)");
  eval->add_option("--k", k, "Candidates (topk) or importance samples (iw); default from config");
  eval->add_option("--seed", seed, "Seed for the iw estimator");
  eval->add_option("--report", report_path, "Report CSV")->required();

  auto* sample = app.add_subcommand("sample", "Draw samples from a trained model");
  sample->add_option("--model", model_path, "Checkpoint")->required();
  sample->add_option("-n", n, "Number of samples")->required();
  sample->add_option("--seed", seed, "Sampling seed");
  sample->add_option("--out", out_path, "Sample CSV")->required();

  auto* grid = app.add_subcommand("grid", "Export log density on a 2-D grid");
  grid->add_option("--model", model_path, "Checkpoint")->required();
  grid->add_option("--xmin", xmin, "Grid x lower bound")->capture_default_str();
  grid->add_option("--xmax", xmax, "Grid x upper bound")->capture_default_str();
  grid->add_option("--ymin", ymin, "Grid y lower bound")->capture_default_str();
  grid->add_option("--ymax", ymax, "Grid y upper bound")->capture_default_str();
  grid->add_option("--res", res, "Points per axis")->capture_default_str();
  grid->add_option("--k", k, "Candidates for topk; default from config");
  grid->add_option("--out", out_path, "Grid CSV")->required();

  auto* orc = app.add_subcommand("oracle", "Transport Jacobian at 0 for the two-mode example");
  orc->add_option("--mu", mu, "Mode offset")->capture_default_str();
  orc->add_option("--sigma", sigma, "Mode scale")->capture_default_str();
  orc->add_option("--case", which, "1: N(0,1) source, 2: mixture source")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e, out, err);
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_path, out, err);
    if (eval->parsed()) return cmd_eval(model_path, data_spec, estimator, k, seed, report_path, out);
    if (sample->parsed()) return cmd_sample(model_path, n, seed, out_path, out);
    if (grid->parsed()) return cmd_grid(model_path, xmin, xmax, ymin, ymax, res, k, out_path, out);
    if (orc->parsed()) return cmd_oracle(mu, sigma, which, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace nvf::cli
