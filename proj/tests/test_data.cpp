#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cpcp/data.hpp"
#include "doctest.h"
#include "oracle_helpers.hpp"

using namespace cpcp;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/cpcp_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("synthetic moments for the standard normal preset") {
  SyntheticSpec spec;
  spec.sigma0 = 1.0;
  spec.sigma1 = 0.0;
  spec.loc_coef = 0.0;
  const std::size_t n = 10000;
  RngStream rng(1, 0);
  const Dataset ds = generate_synthetic(spec, n, rng);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += ds.y(i, 0);
    sq += ds.y(i, 0) * ds.y(i, 0);
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(std::fabs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::fabs(stddev - 1.0) < 0.1);
}

TEST_CASE("median of a symmetric base equals the location exactly") {
  const SyntheticSpec spec = synthetic_preset("default");
  const SyntheticOracle oracle(spec);
  const Vec x = {0.3, 0.7, 0.1, 0.9, 0.5};
  CHECK(oracle.true_quantile(x, 0.5) == oracle.location(x));
  const SyntheticOracle lap(synthetic_preset("laplace"));
  CHECK(lap.true_quantile(x, 0.5) == lap.location(x));
}

TEST_CASE("true density weight at sigma 2") {
  SyntheticSpec spec;
  spec.sigma0 = 0.5;
  spec.sigma1 = 2.0;
  const SyntheticOracle oracle(spec);
  Vec x(5, 0.0);
  x[0] = 0.75;  // sigma = 0.5 + 2 * 0.75 = 2
  CHECK(oracle.scale(x) == doctest::Approx(2.0));
  // f0(z_0.9) / 2, frozen from the high-precision oracle value of f0(z_0.9).
  CHECK(oracle.true_density_weight(x, 0.9) ==
        doctest::Approx(0.1754983319324868 / 2.0).epsilon(1e-12));
  CHECK(oracle.true_density_weight(x, 0.9) == doctest::Approx(0.0877489).epsilon(1e-4));
}

TEST_CASE("oracle consistency: empirical quantile matches the analytic one") {
  const SyntheticSpec spec = synthetic_preset("default");
  const SyntheticOracle oracle(spec);
  const Vec x = {0.4, 0.6, 0.2, 0.8, 0.5};
  const double tau = 0.9;
  const std::size_t n = 1000000;
  RngStream rng(2, 0);
  Vec draws(n);
  const double nu = oracle.location(x);
  const double sg = oracle.scale(x);
  for (std::size_t i = 0; i < n; ++i) draws[i] = nu + sg * rng.next_normal();
  std::nth_element(draws.begin(), draws.begin() + static_cast<std::ptrdiff_t>(n * tau),
                   draws.end());
  const double empirical = draws[static_cast<std::size_t>(n * tau)];
  const double truth = oracle.true_quantile(x, tau);
  // Asymptotic std of the order statistic: sqrt(tau (1 - tau) / n) / f(q).
  const double f_q = oracle.true_density_weight(x, tau);
  const double band = 3.0 * std::sqrt(tau * (1.0 - tau) / static_cast<double>(n)) / f_q;
  CHECK(std::fabs(empirical - truth) < band);
}

TEST_CASE("finite-difference identity: 2 delta over the gap approaches the density") {
  const SyntheticSpec spec = synthetic_preset("default");
  const SyntheticOracle oracle(spec);
  const Vec x = {0.25, 0.5, 0.5, 0.5, 0.5};
  const double tau = 0.9;
  const double target = oracle.true_density_weight(x, tau);
  double prev_err = 1e9;
  for (double delta : {0.05, 0.02, 0.005}) {
    const double gap = oracle.true_quantile(x, tau + delta) - oracle.true_quantile(x, tau - delta);
    const double est = 2.0 * delta / gap;
    const double rel = std::fabs(est - target) / target;
    CHECK(rel < prev_err);
    prev_err = rel;
  }
  CHECK(prev_err < 0.01);  // at delta = 0.005
}

TEST_CASE("box coverage multiplies across independent label dimensions") {
  SyntheticSpec spec;
  spec.label_dim = 2;
  spec.loc_coef = 0.0;
  spec.sigma0 = 1.0;
  spec.sigma1 = 0.0;
  const SyntheticOracle oracle(spec);
  const Vec x(5, 0.5);
  const Vec lower = {-1.0, -2.0};
  const Vec upper = {1.0, 2.0};
  const double expect = (normal_cdf(1.0) - normal_cdf(-1.0)) *
                        (normal_cdf(2.0) - normal_cdf(-2.0));
  CHECK(oracle.box_coverage(x, lower, upper) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(oracle.box_coverage(x, {1.0, -2.0}, {-1.0, 2.0}) == 0.0);  // empty box
}

TEST_CASE("generate_synthetic rejects invalid specs") {
  RngStream rng(3, 0);
  SyntheticSpec bad;
  bad.sigma0 = -1.0;
  bad.sigma1 = 0.0;
  CHECK_THROWS_AS(generate_synthetic(bad, 10, rng), std::invalid_argument);
  SyntheticSpec zero_n = synthetic_preset("default");
  CHECK_THROWS_AS(generate_synthetic(zero_n, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(synthetic_preset("no-such-preset"), std::invalid_argument);
}

TEST_CASE("csv loading parses a small file") {
  TempFile f("small.csv");
  {
    std::ofstream out(f.path);
    out << "a,b,y\n1,2,3\n4,5,6\n7,8,9\n";
  }
  const Dataset ds = load_csv(f.path, {"a", "b"}, {"y"});
  CHECK(ds.x.rows == 3);
  CHECK(ds.x.cols == 2);
  CHECK(ds.y.rows == 3);
  CHECK(ds.y.cols == 1);
  CHECK(ds.x(1, 0) == 4.0);
  CHECK(ds.y(2, 0) == 9.0);
}

TEST_CASE("csv loading error paths") {
  TempFile f("bad.csv");
  {
    std::ofstream out(f.path);
    out << "a,b,y\n";  // header only
  }
  CHECK_THROWS_WITH_AS(load_csv(f.path, {"a"}, {"y"}), doctest::Contains("no data rows"),
                       std::runtime_error);
  {
    std::ofstream out(f.path);
    out << "a,b,y\n1,oops,3\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(f.path, {"b"}, {"y"}), doctest::Contains("row 2"),
                       std::runtime_error);
  {
    std::ofstream out(f.path);
    out << "a,b,y\n1,2,nan\n";
  }
  CHECK_THROWS_AS(load_csv(f.path, {"a"}, {"y"}), std::runtime_error);
  {
    std::ofstream out(f.path);
    out << "a,b,y\n1,2,3\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(f.path, {"missing"}, {"y"}), doctest::Contains("missing"),
                       std::runtime_error);
  CHECK_THROWS_AS(load_csv("/tmp/cpcp_no_such_file.csv", {"a"}, {"y"}), std::runtime_error);
}

TEST_CASE("csv round trip reproduces the matrices exactly") {
  RngStream rng(4, 0);
  Dataset ds;
  ds.x = Matrix(17, 3);
  ds.y = Matrix(17, 2);
  for (auto& v : ds.x.data) v = rng.next_normal() * 1e3;
  for (auto& v : ds.y.data) v = rng.next_normal() * 1e-3;
  TempFile f("roundtrip.csv");
  write_csv(f.path, ds, {"x1", "x2", "x3"}, {"y1", "y2"});
  const Dataset back = load_csv(f.path, {"x1", "x2", "x3"}, {"y1", "y2"});
  CHECK(back.x.data == ds.x.data);
  CHECK(back.y.data == ds.y.data);
}

TEST_CASE("standardizer fits train statistics and inverts exactly") {
  Matrix x(4, 3);
  // Column 0: train values (0, 2); column 1 constant; column 2 arbitrary.
  x.data = {0.0, 5.0, 1.0,
            2.0, 5.0, 3.0,
            9.0, 5.0, -1.0,
            7.0, 5.0, 4.0};
  const std::vector<std::size_t> train_rows = {0, 1};
  const Standardizer st = Standardizer::fit(x, train_rows);
  const Matrix z = st.apply(x);
  CHECK(z(0, 0) == doctest::Approx(-1.0));
  CHECK(z(1, 0) == doctest::Approx(1.0));
  CHECK(z(0, 1) == 5.0);  // constant column passes through
  CHECK(z(1, 1) == 5.0);

  const Matrix back = st.invert(z);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(back.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }

  // Train columns have mean 0 and std 1 after the transform.
  for (std::size_t j = 0; j < 1; ++j) {
    double mean = 0.0;
    for (std::size_t r : train_rows) mean += z(r, j) / 2.0;
    CHECK(std::fabs(mean) < 1e-10);
  }
}

TEST_CASE("split 622 sizes and partition property") {
  RngStream rng(5, 0);
  const DataSplit s10 = split_622(10, rng);
  CHECK(s10.train.size() == 6);
  CHECK(s10.cal.size() == 2);
  CHECK(s10.test.size() == 2);
  const DataSplit s11 = split_622(11, rng);
  CHECK(s11.train.size() == 6);
  CHECK(s11.cal.size() == 2);
  CHECK(s11.test.size() == 3);
  CHECK_THROWS_AS(split_622(9, rng), std::invalid_argument);

  for (std::size_t n : {10u, 37u, 100u, 1003u}) {
    const DataSplit s = split_622(n, rng);
    std::vector<bool> seen(n, false);
    auto mark = [&](const std::vector<std::size_t>& part) {
      for (std::size_t i : part) {
        CHECK(!seen[i]);
        seen[i] = true;
      }
    };
    mark(s.train);
    mark(s.cal);
    mark(s.test);
    CHECK(std::count(seen.begin(), seen.end(), true) == static_cast<std::ptrdiff_t>(n));
  }
}

TEST_CASE("generation and splits are deterministic under fixed seeds") {
  const SyntheticSpec spec = synthetic_preset("default");
  RngStream a(6, 0), b(6, 0);
  const Dataset da = generate_synthetic(spec, 50, a);
  const Dataset db = generate_synthetic(spec, 50, b);
  CHECK(da.x.data == db.x.data);
  CHECK(da.y.data == db.y.data);
  RngStream sa(7, 0), sb(7, 0);
  CHECK(split_622(40, sa).train == split_622(40, sb).train);
}
