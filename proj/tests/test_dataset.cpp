#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "ellip/dataset.hpp"
#include "ellip/rng.hpp"
#include "oracles.hpp"

using namespace ellip;
using namespace ellip::data;
namespace fs = std::filesystem;

namespace {

MaterialTable three_point() {
  return {"tri", MaterialRole::Film, {{400.0, 1.5, 0.0}, {600.0, 1.7, 0.2}, {1000.0, 1.6, 1.0}}};
}

SynthesisPlan small_plan(std::size_t films, std::size_t subs, std::size_t lambdas, std::size_t ds) {
  SynthesisPlan p;
  const auto f = builtin_films();
  const auto s = builtin_substrates();
  p.films.assign(f.begin(), f.begin() + static_cast<long>(films));
  p.substrates.assign(s.begin(), s.begin() + static_cast<long>(subs));
  p.lambda_grid = uniform_grid(400.0, 900.0, lambdas);
  p.thickness_levels = uniform_grid(1.0, 96.0, ds);
  p.seed = 42;
  return p;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ellip_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("interpolate_nk: knots, midpoints and linear blends") {
  const MaterialTable t = three_point();
  auto [n, k] = interpolate_nk(t, 600.0);
  CHECK(n == 1.7);
  CHECK(k == 0.2);
  std::tie(n, k) = interpolate_nk(t, 500.0);
  CHECK(n == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(k == doctest::Approx(0.1).epsilon(1e-15));
  // 750 nm: 3/8 of the way from 600 to 1000
  std::tie(n, k) = interpolate_nk(t, 750.0);
  CHECK(n == doctest::Approx(1.7 + 0.375 * (1.6 - 1.7)).epsilon(1e-15));
  CHECK(k == doctest::Approx(0.2 + 0.375 * 0.8).epsilon(1e-15));
  CHECK_THROWS_AS(interpolate_nk(t, 399.0), ExtrapolationError);
  CHECK_THROWS_AS(interpolate_nk(t, 1000.5), ExtrapolationError);
}

TEST_CASE("material tables are validated") {
  MaterialTable bad{"bad", MaterialRole::Film, {{500.0, 1.5, 0.0}}};
  CHECK_THROWS(bad.validate());
  bad.samples = {{500.0, 1.5, 0.0}, {400.0, 1.5, 0.0}};
  CHECK_THROWS(bad.validate());
  bad.samples = {{400.0, -1.5, 0.0}, {500.0, 1.5, 0.0}};
  CHECK_THROWS(bad.validate());
  bad.samples = {{400.0, 1.5, -0.1}, {500.0, 1.5, 0.0}};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("built-in library covers the working range") {
  const auto films = builtin_films();
  const auto subs = builtin_substrates();
  CHECK(films.size() >= 10);
  CHECK(subs.size() >= 2);
  bool any_metal = false;
  for (const auto& t : films) {
    t.validate();
    CHECK(t.lambda_min() <= 380.28);
    CHECK(t.lambda_max() >= 999.87);
    for (const auto& s : t.samples) any_metal = any_metal || s.k > 0.5;
  }
  CHECK(any_metal);
  for (const auto& t : subs) t.validate();
}

TEST_CASE("material CSV ingestion") {
  const fs::path dir = temp_dir("material");
  {
    std::ofstream out(dir / "m.csv");
    out << "lambda_nm,n,k\n400,1.5,0\n700,1.6,0.1\n";
  }
  const MaterialTable t = read_material_csv(dir / "m.csv", "m", MaterialRole::Film);
  REQUIRE(t.samples.size() == 2);
  CHECK(t.samples[1].n == 1.6);
  {
    std::ofstream out(dir / "bad.csv");
    out << "lambda_nm,n,k\n400,1.5,0\n700,abc,0.1\n";
  }
  try {
    read_material_csv(dir / "bad.csv", "bad", MaterialRole::Film);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthesize: cardinality and forward consistency") {
  const SynthesisPlan plan = small_plan(2, 1, 3, 4);
  SynthesisLog log;
  const auto records = synthesize(plan, &log);
  CHECK(records.size() == 24);
  CHECK(log.skipped.empty());
  for (const auto& r : records) {
    optics::ExperimentConfig cfg = plan.cfg;
    cfg.lambda = r.lambda;
    const auto pd = optics::forward(r.stack(), cfg);
    CHECK(pd.psi == r.psi);
    CHECK(pd.delta == r.delta);
  }
}

TEST_CASE("synthesize: result does not depend on the worker count") {
  SynthesisPlan plan = small_plan(3, 2, 5, 4);
  const auto one = synthesize(plan);
  plan.workers = 4;
  const auto four = synthesize(plan);
  REQUIRE(one.size() == four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].film_id == four[i].film_id);
    CHECK(one[i].psi == four[i].psi);
    CHECK(one[i].split == four[i].split);
  }
}

TEST_CASE("synthesize: wavelength outside a table is an error") {
  SynthesisPlan plan = small_plan(1, 1, 2, 2);
  plan.lambda_grid = {300.0, 500.0};
  CHECK_THROWS_AS(synthesize(plan), ExtrapolationError);
}

TEST_CASE("full-scale cardinality") {
  // 98 films x 4 substrates x 20 thicknesses x 1058 wavelengths
  SynthesisPlan plan;
  plan.films.resize(98);
  plan.substrates.resize(4);
  plan.thickness_levels.resize(20);
  plan.lambda_grid.resize(1058);
  CHECK(plan.expected_records() == 8294720);
  CHECK(std::fabs(static_cast<double>(plan.expected_records()) - 8296200.0) / 8296200.0 < 1e-3);
}

TEST_CASE("split_dataset: ratios per combination") {
  std::vector<EllipsometricRecord> recs(10);
  for (auto& r : recs) {
    r.film_id = "A";
    r.substrate_id = "S";
  }
  split_dataset(recs, {0.8, 0.1, 0.1}, 3);
  std::array<int, 3> c{};
  for (const auto& r : recs) c[static_cast<std::size_t>(r.split)]++;
  CHECK(c == std::array<int, 3>{8, 1, 1});

  split_dataset(recs, {1.0, 0.0, 0.0}, 3);
  for (const auto& r : recs) CHECK(r.split == Split::Train);
  CHECK_THROWS(SplitRatios{0.5, 0.2, 0.2}.validate());
}

TEST_CASE("split_dataset: deterministic and within one record of the ratios") {
  auto recs = synthesize(small_plan(3, 2, 7, 5));
  auto again = recs;
  split_dataset(recs, {0.7, 0.2, 0.1}, 99);
  split_dataset(again, {0.7, 0.2, 0.1}, 99);
  std::map<std::string, std::array<double, 3>> counts;
  std::map<std::string, double> totals;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].split == again[i].split);
    const std::string key = recs[i].film_id + "/" + recs[i].substrate_id;
    counts[key][static_cast<std::size_t>(recs[i].split)] += 1;
    totals[key] += 1;
  }
  const double ratios[3] = {0.7, 0.2, 0.1};
  for (const auto& [key, c] : counts)
    for (std::size_t s = 0; s < 3; ++s) CHECK(std::fabs(c[s] - ratios[s] * totals[key]) < 1.0);
}

TEST_CASE("no leakage between splits") {
  const auto recs = synthesize(small_plan(3, 2, 6, 5));
  std::set<std::tuple<std::string, std::string, double, double>> train;
  for (const auto& r : recs)
    if (r.split == Split::Train) train.insert({r.film_id, r.substrate_id, r.lambda, r.d});
  for (const auto& r : recs)
    if (r.split == Split::Test) CHECK(train.count({r.film_id, r.substrate_id, r.lambda, r.d}) == 0);
}

TEST_CASE("compute_norm_stats") {
  std::vector<EllipsometricRecord> recs(2);
  recs[0].d = 0.0;
  recs[1].d = 2.0;
  for (auto& r : recs) {
    r.n2 = 1.5;
    r.split = Split::Train;
  }
  const NormStats s = compute_norm_stats(recs);
  CHECK(s.targets[2].mean == 1.0);
  CHECK(s.targets[2].std == 1.0);
  CHECK_FALSE(s.targets[2].constant);
  CHECK(s.targets[0].constant);
  CHECK(s.targets[0].std == 1.0);

  std::vector<EllipsometricRecord> none(3);
  for (auto& r : none) r.split = Split::Test;
  CHECK_THROWS(compute_norm_stats(none));
}

TEST_CASE("compute_norm_stats matches a two-pass oracle") {
  Rng rng(17);
  std::vector<EllipsometricRecord> recs(130);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto& r = recs[i];
    r.split = i < 100 ? Split::Train : Split::Val;
    r.delta = rng.uniform(-180, 180);
    r.psi = rng.uniform(0, 90);
    r.n3 = rng.uniform(1, 4);
    r.k3 = rng.uniform(0, 1);
    r.lambda = rng.uniform(380, 1000);
    r.n2 = rng.uniform(1, 3);
    r.k2 = rng.uniform(0, 5);
    r.d = rng.uniform(1, 96);
  }
  const NormStats s = compute_norm_stats(recs);
  auto check = [&](auto get, const ColumnStats& c) {
    long double m = 0;
    for (std::size_t i = 0; i < 100; ++i) m += get(recs[i]);
    m /= 100;
    long double v = 0;
    for (std::size_t i = 0; i < 100; ++i) v += (get(recs[i]) - m) * (get(recs[i]) - m);
    const double sd = static_cast<double>(std::sqrt(v / 100));
    CHECK(std::fabs(c.mean - static_cast<double>(m)) <= 1e-12 * std::max(1.0, std::fabs(c.mean)));
    CHECK(std::fabs(c.std - sd) <= 1e-12 * std::max(1.0, sd));
  };
  check([](const EllipsometricRecord& r) { return r.delta; }, s.inputs[0]);
  check([](const EllipsometricRecord& r) { return r.psi; }, s.inputs[1]);
  check([](const EllipsometricRecord& r) { return r.n3; }, s.inputs[2]);
  check([](const EllipsometricRecord& r) { return r.k3; }, s.inputs[3]);
  check([](const EllipsometricRecord& r) { return r.lambda; }, s.inputs[4]);
  check([](const EllipsometricRecord& r) { return r.n2; }, s.targets[0]);
  check([](const EllipsometricRecord& r) { return r.k2; }, s.targets[1]);
  check([](const EllipsometricRecord& r) { return r.d; }, s.targets[2]);
}

TEST_CASE("dataset files round-trip exactly") {
  const fs::path dir = temp_dir("roundtrip");
  const Dataset ds = build_dataset(small_plan(2, 1, 3, 4));
  REQUIRE(ds.records.size() == 24);
  write_dataset(dir / "d.csv", ds);
  CHECK(fs::exists(manifest_path_for(dir / "d.csv")));
  const Dataset back = read_dataset(dir / "d.csv");
  CHECK(back.manifest == ds.manifest);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto &a = ds.records[i], &b = back.records[i];
    CHECK(a.film_id == b.film_id);
    CHECK(a.substrate_id == b.substrate_id);
    CHECK(a.lambda == b.lambda);
    CHECK(a.n2 == b.n2);
    CHECK(a.k2 == b.k2);
    CHECK(a.d == b.d);
    CHECK(a.n3 == b.n3);
    CHECK(a.k3 == b.k3);
    CHECK(a.psi == b.psi);
    CHECK(a.delta == b.delta);
    CHECK(a.split == b.split);
    const auto pd = optics::forward(b.stack(), back.manifest.experiment(b.lambda));
    CHECK(std::fabs(pd.psi - b.psi) < 1e-9);
    CHECK(oracle::angle_diff(pd.delta, b.delta) < 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("empty dataset writes a header-only file") {
  const fs::path dir = temp_dir("empty");
  Dataset ds;
  write_dataset(dir / "e.csv", ds);
  const Dataset back = read_dataset(dir / "e.csv");
  CHECK(back.records.empty());
  CHECK(back.manifest.record_count == 0);
  fs::remove_all(dir);
}

TEST_CASE("malformed dataset rows name their line") {
  const fs::path dir = temp_dir("malformed");
  const Dataset ds = build_dataset(small_plan(1, 1, 2, 2));
  write_dataset(dir / "m.csv", ds);
  std::string text;
  {
    std::ifstream in(dir / "m.csv");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      if (++n == 3) {
        const auto comma = line.find(',', line.find(',') + 1);
        line = line.substr(0, comma + 1) + "oops" + line.substr(line.find(',', comma + 1));
      }
      text += line + "\n";
    }
  }
  {
    std::ofstream out(dir / "m.csv", std::ios::trunc);
    out << text;
  }
  try {
    read_dataset(dir / "m.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  fs::remove_all(dir);
}
