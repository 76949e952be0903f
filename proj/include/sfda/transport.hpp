#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfda/spectral.hpp"

namespace sfda {

// Distances between discrete distributions on a shared 1D grid. The ground
// cost is |i - j| in bin units times an optional ground_scale (pass the bin
// resolution to get Hz-valued distances).

// CDF differences smaller than this are treated as ties (sign 0) by the
// subgradient; it absorbs prefix-sum roundoff, notably in the final CDF term
// where both sides equal 1.
inline constexpr double kCdfTieTolerance = 1e-12;

// Probability vectors must sum to 1 within this tolerance.
inline constexpr double kNormalizationTolerance = 1e-6;

inline constexpr double kKlFloor = 1e-12;

struct TransportPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> matrix;  // row-major rows x cols
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;

  double at(std::size_t i, std::size_t j) const { return matrix[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return matrix[i * cols + j]; }
};

struct GradPair {
  std::vector<double> grad_p;
  std::vector<double> grad_q;
};

struct OracleResult {
  double cost = 0.0;
  TransportPlan plan;
};

// Throws InvalidArgument on length mismatch / empty input and InvalidData
// when either vector has negative entries or is not normalized.
void check_distribution_pair(std::span<const double> p, std::span<const double> q);

// Closed-form 1D Wasserstein-1: sum_i |CDF_i(p) - CDF_i(q)|.
double fwd_distance(std::span<const double> p, std::span<const double> q, double ground_scale = 1.0);

// Minimum-cost plan built by the monotone north-west-corner rule, with its
// cost evaluated directly from the plan. Intended as a test oracle (n <= 64).
OracleResult wd_bruteforce_oracle(std::span<const double> p, std::span<const double> q);

// Subgradient of fwd_distance with respect to both arguments:
// grad_p[k] = sum_{i >= k} sign(CDF_i(p) - CDF_i(q)), grad_q = -grad_p.
GradPair fwd_gradient(std::span<const double> p, std::span<const double> q, double ground_scale = 1.0);

// sum_i p_i ln(p_i / max(q_i, kKlFloor)), with 0 ln 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
GradPair kl_gradient(std::span<const double> p, std::span<const double> q);

// -ln p[label_bin] (p floored at kKlFloor).
double frequency_ce(std::span<const double> p, std::size_t label_bin);

// Rectified (|x|), L1-normalized signals compared as distributions over time
// indices with fwd_distance. An all-zero signal maps to the uniform
// distribution.
double time_domain_wd(const TimeSeries& x, const TimeSeries& y);
double time_domain_wd(std::span<const double> x, std::span<const double> y);
// Gradient with respect to the raw (unrectified) samples of x and y.
GradPair time_domain_wd_gradient(std::span<const double> x, std::span<const double> y);

// |x| / sum |x|, uniform when the sum is zero.
std::vector<double> rectified_distribution(std::span<const double> x);

}  // namespace sfda
