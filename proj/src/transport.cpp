#include "sfda/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfda/error.hpp"

namespace sfda {

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidData(std::string(name) + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kNormalizationTolerance)
    throw InvalidData(std::string(name) + " is not normalized (sum = " + std::to_string(total) + ")");
}

int tie_sign(double d) {
  if (std::abs(d) <= kCdfTieTolerance) return 0;
  return d > 0.0 ? 1 : -1;
}

}  // namespace

void check_distribution_pair(std::span<const double> p, std::span<const double> q) {
  if (p.empty()) throw InvalidArgument("distributions must have at least one bin");
  if (p.size() != q.size()) throw InvalidArgument("distribution length mismatch");
  check_distribution(p, "p");
  check_distribution(q, "q");
}

double fwd_distance(std::span<const double> p, std::span<const double> q, double ground_scale) {
  check_distribution_pair(p, q);
  double cdf_p = 0.0;
  double cdf_q = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cdf_p += p[i];
    cdf_q += q[i];
    total += std::abs(cdf_p - cdf_q);
  }
  return ground_scale * total;
}

OracleResult wd_bruteforce_oracle(std::span<const double> p, std::span<const double> q) {
  check_distribution_pair(p, q);
  if (p.size() > 64) throw InvalidArgument("wd_bruteforce_oracle is limited to 64 bins");
  const std::size_t n = p.size();

  OracleResult result;
  TransportPlan& plan = result.plan;
  plan.rows = n;
  plan.cols = n;
  plan.matrix.assign(n * n, 0.0);
  plan.row_marginal.assign(p.begin(), p.end());
  plan.col_marginal.assign(q.begin(), q.end());

  // Monotone (north-west corner) coupling: repeatedly move as much mass as
  // possible from the lowest unfinished source bin to the lowest unfilled
  // target bin. Optimal for any convex cost of |i - j| in one dimension.
  std::vector<double> supply(p.begin(), p.end());
  std::vector<double> demand(q.begin(), q.end());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n && j < n) {
    const double moved = std::min(supply[i], demand[j]);
    plan.at(i, j) += moved;
    supply[i] -= moved;
    demand[j] -= moved;
    if (supply[i] <= demand[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  // Normalization slack (<= kNormalizationTolerance) may leave residue on
  // the last row/column; fold it into the corner so marginals hold.
  for (; i < n; ++i) plan.at(i, n - 1) += supply[i];
  for (; j < n; ++j) plan.at(n - 1, j) += demand[j];

  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double mass = plan.at(a, b);
      if (mass != 0.0) result.cost += mass * std::abs(static_cast<double>(a) - static_cast<double>(b));
    }
  }
  return result;
}

GradPair fwd_gradient(std::span<const double> p, std::span<const double> q, double ground_scale) {
  check_distribution_pair(p, q);
  const std::size_t n = p.size();
  std::vector<int> signs(n);
  double cdf_p = 0.0;
  double cdf_q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cdf_p += p[i];
    cdf_q += q[i];
    signs[i] = tie_sign(cdf_p - cdf_q);
  }
  GradPair g;
  g.grad_p.assign(n, 0.0);
  g.grad_q.assign(n, 0.0);
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    suffix += signs[k];
    g.grad_p[k] = ground_scale * suffix;
    g.grad_q[k] = -ground_scale * suffix;
  }
  return g;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  }
  return total;
}

GradPair kl_gradient(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_gradient length mismatch");
  GradPair g;
  g.grad_p.assign(p.size(), 0.0);
  g.grad_q.assign(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double qf = std::max(q[i], kKlFloor);
    if (p[i] > 0.0) g.grad_p[i] = std::log(p[i] / qf) + 1.0;
    if (q[i] >= kKlFloor) g.grad_q[i] = -p[i] / qf;
  }
  return g;
}

double frequency_ce(std::span<const double> p, std::size_t label_bin) {
  if (label_bin >= p.size()) throw InvalidArgument("frequency_ce label bin out of range");
  return -std::log(std::max(p[label_bin], kKlFloor));
}

std::vector<double> rectified_distribution(std::span<const double> x) {
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::abs(x[i]);
    total += out[i];
  }
  if (total > 0.0) {
    for (double& v : out) v /= total;
  } else {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(x.size()));
  }
  return out;
}

double time_domain_wd(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("time_domain_wd length mismatch");
  if (x.empty()) throw InvalidArgument("time_domain_wd on empty signals");
  return fwd_distance(rectified_distribution(x), rectified_distribution(y));
}

double time_domain_wd(const TimeSeries& x, const TimeSeries& y) {
  if (x.rate() != y.rate()) throw InvalidArgument("time_domain_wd rate mismatch");
  return time_domain_wd(std::span(x.samples()), std::span(y.samples()));
}

GradPair time_domain_wd_gradient(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("time_domain_wd length mismatch");
  const auto p = rectified_distribution(x);
  const auto q = rectified_distribution(y);
  const GradPair inner = fwd_gradient(p, q);

  // Chain through a -> a / sum(a) and a = |x|.
  auto chain = [](std::span<const double> raw, std::span<const double> dist, std::span<const double> g) {
    std::vector<double> out(raw.size(), 0.0);
    double total = 0.0;
    for (double v : raw) total += std::abs(v);
    if (total <= 0.0) return out;
    const double mean_g = std::inner_product(g.begin(), g.end(), dist.begin(), 0.0);
    for (std::size_t j = 0; j < raw.size(); ++j) {
      const double sign = raw[j] > 0.0 ? 1.0 : (raw[j] < 0.0 ? -1.0 : 0.0);
      out[j] = sign * (g[j] - mean_g) / total;
    }
    return out;
  };
  return {chain(x, p, inner.grad_p), chain(y, q, inner.grad_q)};
}

}  // namespace sfda
