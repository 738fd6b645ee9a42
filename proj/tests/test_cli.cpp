// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "nvf/cli.hpp"
#include "support.hpp"

using namespace nvf;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::vector<std::vector<double>> read_rows(const std::string& path, bool header) {
  std::ifstream in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  if (header) std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

// Trains a small two-moons model once for the read-only commands.
const std::string& moons_model() {
  static test::TempDir dir("cli_model");
  static const std::string path = [] {
    const auto cfg = dir.file("moons.json");
    write(cfg, R"({"data": {"source": "two_moons", "n": 600, "seed": 1},
                   "model": {"latent": "discrete", "states": 2, "flow_depth": 4, "flow_width": 16},
                   "train": {"steps": 400, "batch_size": 64, "seed": 2}})");
    const auto out = dir.file("moons.nvf");
    REQUIRE(run({"train", "--config", cfg, "--out", out}).code == 0);
    return out;
  }();
  return path;
}

}  // namespace

TEST_CASE("train writes a checkpoint and metrics") {
  test::TempDir dir("cli_train");
  const auto cfg = dir.file("c.json");
  write(cfg, R"({"data": {"source": "gmm1d", "n": 100}, "train": {"steps": 0}})");
  const auto r = run({"train", "--config", cfg, "--out", dir.file("m.nvf")});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "final validation NLL"));
  CHECK(slurp(dir.file("m.nvf")).substr(0, 4) == "NVF1");
  CHECK(contains(slurp(dir.file("m.nvf.log")), "step"));

  write(cfg, R"({"data": {"source": "gmm1d", "n": 100}, "train": {"steps": 5, "eval_every": 2}})");
  CHECK(run({"train", "--config", cfg, "--out", dir.file("m2.nvf")}).code == 0);
  std::istringstream log(slurp(dir.file("m2.nvf.log")));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 6);
}

TEST_CASE("train reports config errors") {
  test::TempDir dir("cli_badcfg");
  const auto cfg = dir.file("bad.json");
  write(cfg, "{\n  \"train\": {\n    \"steps\": 3,\n  }\n}\n");
  const auto r = run({"train", "--config", cfg, "--out", dir.file("m.nvf")});
  CHECK(r.code == 1);
  CHECK(contains(r.err, "line 4"));

  write(cfg, R"({"train": {"stepz": 3}})");
  const auto r2 = run({"train", "--config", cfg, "--out", dir.file("m.nvf")});
  CHECK(r2.code == 1);
  CHECK(contains(r2.err, "stepz"));
  CHECK(run({"train", "--config", dir.file("missing.json"), "--out", dir.file("m.nvf")}).code == 1);
}

TEST_CASE("non-finite training aborts") {
  test::TempDir dir("cli_abort");
  std::string csv = "a,b\n";
  for (int i = 0; i < 40; ++i) csv += std::to_string(i) + ",inf\n";
  write(dir.file("bad.csv"), csv);
  write(dir.file("c.json"), R"({"data": {"source": "csv", "path": ")" + dir.file("bad.csv") +
                                R"("}, "model": {"latent": "none"}, "train": {"steps": 50}})");
  const auto r = run({"train", "--config", dir.file("c.json"), "--out", dir.file("m.nvf")});
  CHECK(r.code == 2);
  CHECK(contains(r.err, "aborted"));
  CHECK_FALSE(std::ifstream(dir.file("m.nvf")).good());
}

TEST_CASE("eval") {
  test::TempDir dir("cli_eval");
  const auto& model = moons_model();
  const auto a = run({"eval", "--model", model, "--data", "test", "--report", dir.file("a.csv")});
  const auto b = run({"eval", "--model", model, "--data", "test", "--report", dir.file("b.csv")});
  CHECK(a.code == 0);
  CHECK(contains(a.out, "estimator=exact"));
  CHECK(slurp(dir.file("a.csv")) == slurp(dir.file("b.csv")));
  const auto rows = read_rows(dir.file("a.csv"), true);
  CHECK(rows.size() == 60);
  double mean = 0.0;
  for (const auto& r : rows) mean -= r.back();
  mean /= static_cast<double>(rows.size());
  // A trained two-moons model beats a standard normal fit by a wide margin.
  CHECK(mean < 2.0);
  CHECK(contains(a.out, "mean NLL: "));

  const auto topk = run({"eval", "--model", model, "--data", "val", "--estimator", "topk", "--k", "2", "--report",
                         dir.file("c.csv")});
  CHECK(topk.code == 1);
  CHECK(contains(topk.err, "use 'exact'"));
  CHECK(run({"eval", "--model", model, "--data", "val", "--estimator", "exact", "--report", dir.file("c.csv")}).code ==
        0);

  write(dir.file("pts.csv"), "x,y\n0,0\n1,0.5\n");
  CHECK(run({"eval", "--model", model, "--data", dir.file("pts.csv"), "--report", dir.file("d.csv")}).code == 0);
  CHECK(read_rows(dir.file("d.csv"), true).size() == 2);

  write(dir.file("narrow.csv"), "x\n0\n1\n");
  CHECK(run({"eval", "--model", model, "--data", dir.file("narrow.csv"), "--report", dir.file("e.csv")}).code == 1);
  CHECK(run({"eval", "--model", dir.file("nope.nvf"), "--data", "test", "--report", dir.file("e.csv")}).code == 1);
}

TEST_CASE("eval rejects exact on a continuous model") {
  test::TempDir dir("cli_cont");
  write(dir.file("c.json"), R"({"data": {"n": 200}, "model": {"latent": "continuous"}, "train": {"steps": 0}})");
  REQUIRE(run({"train", "--config", dir.file("c.json"), "--out", dir.file("m.nvf")}).code == 0);
  const auto r = run({"eval", "--model", dir.file("m.nvf"), "--data", "test", "--estimator", "exact", "--report",
                      dir.file("r.csv")});
  CHECK(r.code == 1);
  CHECK(contains(r.err, "exact"));
  CHECK(run({"eval", "--model", dir.file("m.nvf"), "--data", "test", "--report", dir.file("r.csv")}).code == 0);
  CHECK(run({"grid", "--model", dir.file("m.nvf"), "--out", dir.file("g.csv")}).code == 1);
}

TEST_CASE("sample") {
  test::TempDir dir("cli_sample");
  const auto& model = moons_model();
  CHECK(run({"sample", "--model", model, "-n", "0", "--out", dir.file("empty.csv")}).code == 0);
  CHECK(slurp(dir.file("empty.csv")).empty());

  CHECK(run({"sample", "--model", model, "-n", "1000", "--seed", "5", "--out", dir.file("a.csv")}).code == 0);
  CHECK(run({"sample", "--model", model, "-n", "1000", "--seed", "5", "--out", dir.file("b.csv")}).code == 0);
  CHECK(run({"sample", "--model", model, "-n", "1000", "--seed", "6", "--out", dir.file("c.csv")}).code == 0);
  CHECK(slurp(dir.file("a.csv")) == slurp(dir.file("b.csv")));
  CHECK(slurp(dir.file("a.csv")) != slurp(dir.file("c.csv")));

  const auto rows = read_rows(dir.file("a.csv"), false);
  REQUIRE(rows.size() == 1000);
  // Two moons occupy roughly [-1, 2] x [-0.5, 1]; allow a generous margin.
  std::size_t inside = 0;
  for (const auto& r : rows) {
    REQUIRE(r.size() == 2);
    inside += (r[0] > -1.6 && r[0] < 2.6 && r[1] > -1.1 && r[1] < 1.6) ? 1 : 0;
  }
  CHECK(inside >= 950);
}

TEST_CASE("grid") {
  test::TempDir dir("cli_grid");
  write(dir.file("c.json"), R"({"data": {"source": "gmm2d", "n": 400}, "model": {"latent": "none"}, "train": {"steps": 0}})");
  REQUIRE(run({"train", "--config", dir.file("c.json"), "--out", dir.file("m.nvf")}).code == 0);

  REQUIRE(run({"grid", "--model", dir.file("m.nvf"), "--xmin", "-2", "--xmax", "4", "--ymin", "0", "--ymax", "1",
               "--res", "1", "--out", dir.file("one.csv")})
              .code == 0);
  CHECK(slurp(dir.file("one.csv")).substr(0, 9) == "x,y,logp\n");
  const auto one = read_rows(dir.file("one.csv"), true);
  REQUIRE(one.size() == 1);
  CHECK(one[0][0] == 1.0);
  CHECK(one[0][1] == 0.5);

  REQUIRE(run({"grid", "--model", dir.file("m.nvf"), "--res", "5", "--out", dir.file("five.csv")}).code == 0);
  const auto five = read_rows(dir.file("five.csv"), true);
  REQUIRE(five.size() == 25);
  CHECK(five[0][0] == -3.0);
  CHECK(five[0][1] == -3.0);
  CHECK(five[1][0] == -1.5);
  CHECK(five[24][0] == 3.0);
  CHECK(five[24][1] == 3.0);
  for (const auto& r : five) CHECK(std::isfinite(r[2]));

  CHECK(run({"grid", "--model", dir.file("m.nvf"), "--res", "0", "--out", dir.file("z.csv")}).code == 1);
  write(dir.file("c1.json"), R"({"data": {"source": "gmm1d", "n": 100}, "train": {"steps": 0}})");
  REQUIRE(run({"train", "--config", dir.file("c1.json"), "--out", dir.file("m1.nvf")}).code == 0);
  CHECK(run({"grid", "--model", dir.file("m1.nvf"), "--out", dir.file("z.csv")}).code == 1);
}

TEST_CASE("oracle") {
  const auto a = run({"oracle", "--mu", "1", "--sigma", "0.5", "--case", "1"});
  CHECK(a.code == 0);
  CHECK(contains(a.out, "(agree)"));
  CHECK(contains(a.out, "3.69452"));
  const auto b = run({"oracle", "--mu", "2", "--sigma", "0.1"});
  CHECK(b.code == 0);
  CHECK(contains(b.out, "197.697"));
  CHECK(run({"oracle", "--mu", "0", "--sigma", "1", "--case", "2"}).code == 0);
  CHECK(run({"oracle", "--mu", "1.5", "--sigma", "0.5", "--case", "2"}).code == 0);
  CHECK(run({"oracle", "--sigma", "0"}).code == 1);
  CHECK(run({"oracle", "--case", "3"}).code == 1);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == 1);
  CHECK(run({"fly"}).code == 1);
  CHECK(run({"train"}).code == 1);
  CHECK(run({"sample", "--model", "x.nvf", "-n", "-3", "--out", "y.csv"}).code == 1);
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(contains(help.out, "train"));
}
