#include <doctest.h>

#include <cmath>
#include <vector>

#include "sfda/error.hpp"
#include "sfda/rng.hpp"
#include "sfda/transport.hpp"

using namespace sfda;

namespace {

using V = std::vector<double>;

// Regression constant: time_domain_wd of a 20-sample-period sine against its
// quarter-period shift over 100 samples, from a separate double-precision script.
constexpr double kShiftedSineWd = 1.4721359549995823;

std::vector<double> random_distribution(Rng& rng, std::size_t n, double zero_fraction = 0.0) {
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) {
    x = rng.uniform() < zero_fraction ? 0.0 : rng.uniform();
    total += x;
  }
  if (total == 0.0) {
    v[rng.below(n)] = 1.0;
    return v;
  }
  for (auto& x : v) x /= total;
  return v;
}

std::vector<double> point_mass(std::size_t n, std::size_t at) {
  std::vector<double> v(n, 0.0);
  v[at] = 1.0;
  return v;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Kantorovich dual value sum_k phi_k (p_k - q_k) for the potential whose
// increments are -sign(CDF_k(p) - CDF_k(q)). phi is 1-Lipschitz on the index
// grid, so this value lower-bounds the cost of every feasible plan.
double dual_value(const std::vector<double>& p, const std::vector<double>& q, std::vector<double>* potential) {
  const std::size_t n = p.size();
  std::vector<double> phi(n, 0.0);
  double cp = 0.0, cq = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    cp += p[k];
    cq += q[k];
    phi[k + 1] = phi[k] - sign(cp - cq);
  }
  double value = 0.0;
  for (std::size_t k = 0; k < n; ++k) value += phi[k] * (p[k] - q[k]);
  if (potential) *potential = phi;
  return value;
}

// sum_i |CDF_i(p) - CDF_i(q)| without normalization checks, for finite differences.
double raw_cdf_distance(const std::vector<double>& p, const std::vector<double>& q) {
  double cp = 0.0, cq = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
    total += std::abs(cp - cq);
  }
  return total;
}

double min_cdf_gap(const std::vector<double>& p, const std::vector<double>& q) {
  double cp = 0.0, cq = 0.0, gap = 1e300;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    cp += p[i];
    cq += q[i];
    gap = std::min(gap, std::abs(cp - cq));
  }
  return gap;
}

}  // namespace

TEST_CASE("fwd_distance examples") {
  CHECK(fwd_distance(point_mass(4, 0), point_mass(4, 3)) == 3.0);
  const std::vector<double> p = {0.2, 0.3, 0.1, 0.4};
  CHECK(fwd_distance(p, p) == 0.0);
  CHECK(fwd_distance(V{0.5, 0.5, 0.0}, V{0.0, 0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(fwd_distance(point_mass(4, 0), point_mass(4, 3), 0.5) == 1.5);
}

TEST_CASE("fwd_distance errors") {
  CHECK_THROWS_AS(fwd_distance(V{0.5, 0.5}, V{1.0, 0.0, 0.0}), InvalidArgument);
  CHECK_THROWS_AS(fwd_distance({}, {}), InvalidArgument);
  CHECK_THROWS_AS(fwd_distance(V{0.5, 0.6}, V{0.5, 0.5}), InvalidData);
  CHECK_THROWS_AS(fwd_distance(V{1.5, -0.5}, V{0.5, 0.5}), InvalidData);
  CHECK_NOTHROW(fwd_distance(V{0.5, 0.5 + 5e-7}, V{0.5, 0.5}));
}

TEST_CASE("wd_bruteforce_oracle examples") {
  SUBCASE("point masses three bins apart") {
    const auto r = wd_bruteforce_oracle(point_mass(4, 0), point_mass(4, 3));
    CHECK(r.cost == 3.0);
    CHECK(r.plan.at(0, 3) == 1.0);
    double other = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (!(i == 0 && j == 3)) other += r.plan.at(i, j);
    CHECK(other == 0.0);
  }
  SUBCASE("identical inputs give the diagonal plan") {
    const std::vector<double> p = {0.1, 0.6, 0.3};
    const auto r = wd_bruteforce_oracle(p, p);
    CHECK(r.cost == 0.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(r.plan.at(i, j) == (i == j ? p[i] : 0.0));
  }
  SUBCASE("half-shift") {
    const auto r = wd_bruteforce_oracle(V{0.5, 0.5, 0.0}, V{0.0, 0.5, 0.5});
    CHECK(r.cost == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> phi;
    CHECK(dual_value({0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, &phi) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("oracle plans are feasible and certified optimal by a dual potential") {
  Rng rng(101);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(32);
    const auto p = random_distribution(rng, n, trial % 3 == 0 ? 0.5 : 0.0);
    const auto q = random_distribution(rng, n, trial % 5 == 0 ? 0.5 : 0.0);
    const auto r = wd_bruteforce_oracle(p, q);
    double primal = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(r.plan.at(i, j) >= 0.0);
        row += r.plan.at(i, j);
        primal += r.plan.at(i, j) * std::abs(static_cast<double>(i) - static_cast<double>(j));
      }
      CHECK(std::abs(row - p[i]) <= 1e-9);
    }
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < n; ++i) col += r.plan.at(i, j);
      CHECK(std::abs(col - q[j]) <= 1e-9);
    }
    std::vector<double> phi;
    const double dual = dual_value(p, q, &phi);
    for (std::size_t i = 0; i + 1 < n; ++i) CHECK(std::abs(phi[i + 1] - phi[i]) <= 1.0);
    CHECK(std::abs(primal - r.cost) <= 1e-9);
    CHECK(std::abs(primal - dual) <= 1e-9);
    CHECK(std::abs(fwd_distance(p, q) - r.cost) <= 1e-9);
  }
}

TEST_CASE("metric axioms on random triples") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(31);
    const auto a = random_distribution(rng, n);
    const auto b = random_distribution(rng, n);
    const auto c = random_distribution(rng, n);
    const double ab = fwd_distance(a, b), ba = fwd_distance(b, a);
    CHECK(ab >= 0.0);
    CHECK(ab <= static_cast<double>(n - 1) + 1e-12);
    CHECK(fwd_distance(a, a) == 0.0);
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(fwd_distance(a, c) <= ab + fwd_distance(b, c) + 1e-9);
  }
}

TEST_CASE("translation response: FWD grows with offset, KL does not") {
  const std::size_t n = 12;
  const auto ref = point_mass(n, 0);
  double previous_kl = -1.0;
  for (std::size_t k = 1; k < n; ++k) {
    CHECK(fwd_distance(ref, point_mass(n, k)) == static_cast<double>(k));
    const double kl = kl_divergence(ref, point_mass(n, k));
    if (previous_kl >= 0.0) CHECK(kl == previous_kl);
    previous_kl = kl;
  }
  CHECK(previous_kl == doctest::Approx(-std::log(kKlFloor)));
  // Moving mass m one bin right changes the distance by exactly m.
  std::vector<double> p = {0.0, 0.7, 0.3, 0.0, 0.0};
  const std::vector<double> q = point_mass(5, 0);
  const double before = fwd_distance(p, q);
  p = {0.0, 0.7, 0.0, 0.3, 0.0};
  CHECK(fwd_distance(p, q) - before == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("fwd_gradient examples") {
  const std::vector<double> p = {0.1, 0.4, 0.5};
  const auto same = fwd_gradient(p, p);
  for (double g : same.grad_p) CHECK(g == 0.0);
  for (double g : same.grad_q) CHECK(g == 0.0);
  const auto g = fwd_gradient(V{1.0, 0.0}, V{0.0, 1.0});
  CHECK(g.grad_p == std::vector<double>{1.0, 0.0});
  CHECK(g.grad_q == std::vector<double>{-1.0, 0.0});
  const auto scaled = fwd_gradient(V{1.0, 0.0}, V{0.0, 1.0}, 2.0);
  CHECK(scaled.grad_p == std::vector<double>{2.0, 0.0});
}

TEST_CASE("fwd_gradient matches per-coordinate finite differences of the CDF sum") {
  Rng rng(23);
  int checked = 0;
  while (checked < 200) {
    const auto p = random_distribution(rng, 16);
    const auto q = random_distribution(rng, 16);
    if (min_cdf_gap(p, q) < 1e-4) continue;
    ++checked;
    const auto g = fwd_gradient(p, q);
    const double h = 1e-6;
    for (std::size_t k = 0; k < 16; ++k) {
      auto pp = p, pm = p, qp = q, qm = q;
      pp[k] += h;
      pm[k] -= h;
      qp[k] += h;
      qm[k] -= h;
      const double dp = (raw_cdf_distance(pp, q) - raw_cdf_distance(pm, q)) / (2 * h);
      const double dq = (raw_cdf_distance(p, qp) - raw_cdf_distance(p, qm)) / (2 * h);
      CHECK(std::abs(dp - g.grad_p[k]) <= 1e-4 * std::max(1.0, std::abs(dp)));
      CHECK(std::abs(dq - g.grad_q[k]) <= 1e-4 * std::max(1.0, std::abs(dq)));
    }
  }
}

TEST_CASE("kl_divergence examples") {
  const std::vector<double> p = {0.2, 0.8};
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(V{0.5, 0.5}, V{0.25, 0.75}) ==
        doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-14));
  CHECK(kl_divergence(V{0.5, 0.5}, V{0.25, 0.75}) == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(kl_divergence(V{1.0, 0.0}, V{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(kl_divergence(V{1.0}, V{0.5, 0.5}), InvalidArgument);
}

TEST_CASE("kl_gradient matches the closed-form partials") {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_distribution(rng, 8);
    const auto q = random_distribution(rng, 8);
    const auto g = kl_gradient(p, q);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(g.grad_p[i] == doctest::Approx(std::log(p[i] / q[i]) + 1.0).epsilon(1e-12));
      CHECK(g.grad_q[i] == doctest::Approx(-p[i] / q[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("frequency_ce examples") {
  CHECK(frequency_ce(V{0.25, 0.25, 0.25, 0.25}, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(frequency_ce(V{1.0 - 3e-12, 1e-12, 1e-12, 1e-12}, 0) < 1e-10);
  CHECK(frequency_ce(V{0.7311, 0.2689}, 1) == doctest::Approx(-std::log(0.2689)).epsilon(1e-14));
  CHECK(frequency_ce(V{0.7311, 0.2689}, 1) == doctest::Approx(1.3133).epsilon(1e-4));
  CHECK_THROWS_AS(frequency_ce(V{0.5, 0.5}, 2), InvalidArgument);
}

TEST_CASE("time_domain_wd examples") {
  Rng rng(31);
  std::vector<double> x(50);
  for (auto& v : x) v = rng.normal();
  CHECK(time_domain_wd(TimeSeries(x, 30.0), TimeSeries(x, 30.0)) == 0.0);

  std::vector<double> a(10, 0.0), b(10, 0.0);
  a[0] = 1.0;
  b[9] = 1.0;
  CHECK(time_domain_wd(TimeSeries(a, 30.0), TimeSeries(b, 30.0)) == 9.0);

  // 1.5 Hz at 30 Hz: 20 samples per period, a quarter period is 5 samples.
  std::vector<double> s(100), c(100);
  for (std::size_t i = 0; i < 100; ++i) {
    s[i] = std::sin(2.0 * M_PI * static_cast<double>(i) / 20.0);
    c[i] = std::sin(2.0 * M_PI * static_cast<double>(i + 5) / 20.0);
  }
  const double shifted = time_domain_wd(TimeSeries(s, 30.0), TimeSeries(c, 30.0));
  CHECK(shifted > 0.0);
  // Independent evaluation: rectify, normalize, sum |CDF difference|.
  auto rectified = [](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) total += std::abs(v[i]);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]) / total;
    return out;
  };
  CHECK(shifted == doctest::Approx(raw_cdf_distance(rectified(s), rectified(c))).epsilon(1e-12));
  CHECK(shifted == doctest::Approx(kShiftedSineWd).epsilon(1e-9));

  CHECK_THROWS_AS(time_domain_wd(TimeSeries(a, 30.0), TimeSeries(x, 30.0)), InvalidArgument);
  CHECK_THROWS_AS(time_domain_wd(TimeSeries(a, 30.0), TimeSeries(b, 25.0)), InvalidArgument);
}

TEST_CASE("rectified_distribution maps zero signals to uniform") {
  const auto d = rectified_distribution(std::vector<double>(4, 0.0));
  for (double v : d) CHECK(v == 0.25);
  const auto e = rectified_distribution(std::vector<double>{-1.0, 3.0});
  CHECK(e == std::vector<double>{0.25, 0.75});
}
