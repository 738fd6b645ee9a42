// SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nvf/checkpoint.hpp"
#include "nvf/config.hpp"
#include "nvf/density.hpp"
#include "support.hpp"

using namespace nvf;
using namespace nvf::checkpoint;
using nlohmann::json;

namespace {

struct Parts {
  json header;
  std::string payload;
};

// Independent reader for the container layout.
Parts split(const std::string& bytes) {
  REQUIRE(bytes.size() >= 12);
  REQUIRE(bytes.substr(0, 4) == "NVF1");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[4 + i]);
  return {json::parse(bytes.substr(12, len)), bytes.substr(12 + len)};
}

std::string join(const json& header, const std::string& payload) {
  const std::string h = header.dump();
  std::string out = "NVF1";
  std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  return out + h + payload;
}

std::string error_of(const std::string& bytes) {
  try {
    deserialize(bytes, "probe.nvf");
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

struct Fixture {
  std::unique_ptr<NvfModel> model;
  data::Standardization stats;
  json config;
};

Fixture trained_fixture(latent::LatentSpec spec) {
  Rng rng(3);
  ModelConfig mc;
  mc.dim = 2;
  mc.latent = spec;
  mc.flow_width = 8;
  Fixture f;
  f.model = std::make_unique<NvfModel>(mc, rng);
  test::randomize(f.model->parameters(), rng, 0.2);
  f.stats.mean = {1.0, -2.0, 5.0};
  f.stats.stddev = {0.5, 3.0, 0.0};
  f.stats.kept = {0, 1};
  f.stats.log_jacobian = -std::log(0.5) - std::log(3.0);
  RunConfig rc;
  rc.model = mc;
  f.config = config_to_json(rc);
  return f;
}

}  // namespace

TEST_CASE("file layout") {
  static_assert(std::endian::native == std::endian::little);
  auto f = trained_fixture(latent::LatentSpec::discrete(3));
  const auto bytes = serialize(*f.model, f.stats, f.config);
  const auto parts = split(bytes);
  CHECK(parts.header.at("format_version") == 1);
  CHECK(parts.header.contains("config"));

  const auto params = f.model->parameters();
  const auto& manifest = parts.header.at("manifest");
  REQUIRE(manifest.size() == params.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    CAPTURE(i);
    CHECK(manifest[i].at("name") == params[i]->name);
    CHECK(manifest[i].at("offset").get<std::size_t>() == offset);
    const auto& values = params[i]->value.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      double v;
      std::memcpy(&v, parts.payload.data() + offset + 8 * j, 8);
      CHECK(std::bit_cast<std::uint64_t>(v) == std::bit_cast<std::uint64_t>(values[j]));
    }
    offset += 8 * values.size();
  }
  CHECK(parts.payload.size() == offset);
}

TEST_CASE("round trips are exact") {
  for (auto spec : {latent::LatentSpec::none(), latent::LatentSpec::discrete(3), latent::LatentSpec::continuous(2),
                    latent::LatentSpec::sequential(4, 2, 2)}) {
    CAPTURE(latent::to_string(spec.kind));
    auto f = trained_fixture(spec);
    test::TempDir dir("checkpoint");
    const auto path = dir.file("m.nvf");
    save(*f.model, f.stats, f.config, path);
    auto ck = load(path);
    CHECK(ck.model->snapshot() == f.model->snapshot());
    CHECK(ck.model->latent() == spec);
    CHECK(ck.stats.mean == f.stats.mean);
    CHECK(ck.stats.stddev == f.stats.stddev);
    CHECK(ck.stats.kept == f.stats.kept);
    CHECK(ck.stats.log_jacobian == f.stats.log_jacobian);
    CHECK(ck.config == f.config);

    Rng probe_rng(4);
    const ad::Tensor probe = test::random_tensor({16, 2}, probe_rng);
    const auto e = density::default_estimator(spec.kind);
    Rng a(9), b(9);
    CHECK(density::log_density(*f.model, probe, e, 4, a) == density::log_density(*ck.model, probe, e, 4, b));

    const auto first = serialize(*f.model, f.stats, f.config);
    save(*ck.model, ck.stats, ck.config, dir.file("again.nvf"));
    std::ifstream in(dir.file("again.nvf"), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == first);
    CHECK(serialize(*f.model, f.stats, f.config) == first);
  }
}

TEST_CASE("errors") {
  auto f = trained_fixture(latent::LatentSpec::discrete(2));
  const auto bytes = serialize(*f.model, f.stats, f.config);

  CHECK(contains(error_of("NVF2" + bytes.substr(4)), "bad magic"));
  CHECK(contains(error_of("NV"), "bad magic"));

  const auto trunc = error_of(bytes.substr(0, bytes.size() - 8));
  CHECK(contains(trunc, "truncated"));
  CHECK(contains(trunc, std::to_string(bytes.size() - 8)));
  CHECK(contains(trunc, std::to_string(bytes.size())));
  CHECK(contains(error_of(bytes.substr(0, 20)), "truncated"));
  CHECK(contains(error_of(bytes + "x"), "trailing data"));

  auto parts = split(bytes);
  auto v2 = parts.header;
  v2["format_version"] = 2;
  CHECK(contains(error_of(join(v2, parts.payload)), "format_version 2"));

  auto shifted = parts.header;
  shifted["manifest"][1]["offset"] = shifted["manifest"][1]["offset"].get<std::size_t>() + 8;
  CHECK(contains(error_of(join(shifted, parts.payload)), "manifest inconsistent"));

  auto renamed = parts.header;
  renamed["manifest"][0]["name"] = "bogus";
  CHECK(contains(error_of(join(renamed, parts.payload)), "manifest inconsistent"));

  auto no_manifest = parts.header;
  no_manifest.erase("manifest");
  CHECK_FALSE(error_of(join(no_manifest, parts.payload)).empty());

  CHECK(contains(error_of(std::string("NVF1") + std::string(8, '\x02') + "{"), "truncated"));
  std::string garbage = "NVF1";
  garbage.push_back(1);
  garbage += std::string(7, '\0') + "{";
  CHECK(contains(error_of(garbage), "corrupt header"));

  CHECK_THROWS_AS(load("/nonexistent/dir/m.nvf"), CheckpointError);
  CHECK_THROWS_AS(save(*f.model, f.stats, f.config, "/nonexistent/dir/m.nvf"), CheckpointError);
}
