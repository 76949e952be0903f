#include "sfda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "sfda/augment.hpp"
#include "sfda/nn/model.hpp"
#include "sfda/nn/ops.hpp"
#include "sfda/pipeline.hpp"
#include "sfda/rng.hpp"
#include "sfda/transport.hpp"

namespace sfda {

namespace {

using nn::Shape;
using nn::Tensor;

constexpr double kStep = 1e-6;
constexpr double kFloorFraction = 1e-3;
constexpr double kAbsoluteFloor = 1e-12;

}  // namespace

double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  const double floor = std::max(kFloorFraction * scale, kAbsoluteFloor);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

bool GradcheckReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed(); });
}

std::string GradcheckReport::format() const {
  std::string out;
  char line[256];
  for (const auto& s : suites) {
    std::snprintf(line, sizeof line, "%-28s cases=%-4zu worst_rel_err=%.3e tol=%.0e %s\n", s.name.c_str(), s.cases,
                  s.worst_rel_error, s.tolerance, s.passed() ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "gradcheck: %zu suites, %s\n", suites.size(), passed() ? "all passed" : "FAILED");
  out += line;
  return out;
}

namespace {

// Scalar probe sum_i w_i * y_i, so every output element contributes.
Tensor project(const Tensor& y, std::vector<double> w) {
  double v = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * y.values()[i];
  return nn::make_result("project", {}, {v}, {y}, [w = std::move(w)](nn::detail::Node& self) {
    auto& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    auto& g = parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

struct Input {
  Shape shape;
  std::vector<double> values;
};

// One seeded instance of an op check: the inputs and a builder mapping input
// tensors to the op output. The builder may capture state (grids) that must
// outlive backward.
struct OpCase {
  std::vector<Input> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> build;
};

using CaseFactory = std::function<OpCase(Rng&)>;

std::vector<double> normals(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

std::vector<double> away_from_zero(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.5);
  return v;
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

double check_op_case(const OpCase& c, Rng& rng, bool perturb) {
  std::vector<Tensor> leaves;
  for (const auto& in : c.inputs) leaves.push_back(nn::leaf(in.shape, in.values));
  const Tensor out = c.build(leaves);
  const std::vector<double> w = normals(rng, out.size());
  nn::backward(project(out, w));

  std::vector<double> analytic;
  for (const auto& leaf : leaves) {
    const auto g = leaf.grad();
    if (g.empty()) {
      analytic.insert(analytic.end(), leaf.size(), 0.0);
    } else {
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
  }
  if (perturb)
    for (double& v : analytic) v *= 1.01;

  nn::NoGradGuard no_grad;
  auto evaluate = [&](std::size_t which, std::size_t index, double delta) {
    std::vector<Tensor> consts;
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
      std::vector<double> vals = c.inputs[k].values;
      if (k == which) vals[index] += delta;
      consts.push_back(nn::constant(c.inputs[k].shape, std::move(vals)));
    }
    const Tensor y = c.build(consts);
    double v = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * y.values()[i];
    return v;
  };
  std::vector<double> numeric;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    for (std::size_t i = 0; i < c.inputs[k].values.size(); ++i) {
      const double h = kStep * std::max(1.0, std::abs(c.inputs[k].values[i]));
      numeric.push_back((evaluate(k, i, h) - evaluate(k, i, -h)) / (2.0 * h));
    }
  }
  return gradient_rel_error(analytic, numeric);
}

struct OpSuite {
  std::string name;
  CaseFactory make;
};

std::vector<OpSuite> op_suites() {
  std::vector<OpSuite> s;
  s.push_back({"add", [](Rng& rng) {
                 const std::size_t n = between(rng, 1, 12);
                 return OpCase{{{{n}, normals(rng, n)}, {{n}, normals(rng, n)}},
                               [](const std::vector<Tensor>& x) { return nn::add(x[0], x[1]); }};
               }});
  s.push_back({"scale", [](Rng& rng) {
                 const std::size_t n = between(rng, 1, 12);
                 const double k = rng.normal(0.0, 2.0);
                 return OpCase{{{{n}, normals(rng, n)}}, [k](const std::vector<Tensor>& x) { return nn::scale(x[0], k); }};
               }});
  s.push_back({"sum", [](Rng& rng) {
                 const std::size_t n = between(rng, 1, 12);
                 return OpCase{{{{n}, normals(rng, n)}}, [](const std::vector<Tensor>& x) { return nn::sum(x[0]); }};
               }});
  s.push_back({"mean", [](Rng& rng) {
                 const std::size_t k = between(rng, 1, 5);
                 OpCase c;
                 for (std::size_t i = 0; i < k; ++i) c.inputs.push_back({{3}, normals(rng, 3)});
                 c.build = [](const std::vector<Tensor>& x) {
                   std::vector<Tensor> scalars;
                   for (const auto& t : x) scalars.push_back(nn::sum(t));
                   return nn::mean(scalars);
                 };
                 return c;
               }});
  s.push_back({"tanh", [](Rng& rng) {
                 const std::size_t n = between(rng, 1, 12);
                 return OpCase{{{{n}, normals(rng, n, 1.5)}}, [](const std::vector<Tensor>& x) { return nn::tanh(x[0]); }};
               }});
  s.push_back({"reshape", [](Rng& rng) {
                 const std::size_t a = between(rng, 1, 4), b = between(rng, 1, 4);
                 return OpCase{{{{a, b}, normals(rng, a * b)}},
                               [a, b](const std::vector<Tensor>& x) { return nn::reshape(x[0], {a * b}); }};
               }});
  s.push_back({"softmax", [](Rng& rng) {
                 const std::size_t n = between(rng, 1, 16);
                 return OpCase{{{{n}, normals(rng, n, 2.0)}}, [](const std::vector<Tensor>& x) { return nn::softmax(x[0]); }};
               }});
  s.push_back({"unit_max", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 16);
                 std::vector<double> v(n);
                 for (auto& x : v) x = rng.uniform(0.1, 1.0);
                 v[rng.below(n)] = 1.5;  // unique maximum
                 return OpCase{{{{n}, v}}, [](const std::vector<Tensor>& x) { return nn::unit_max(x[0]); }};
               }});
  s.push_back({"spatial_pool", [](Rng& rng) {
                 const std::size_t t = between(rng, 2, 5), h = between(rng, 1, 4), w = between(rng, 1, 4);
                 return OpCase{{{{t, h, w, 3}, normals(rng, t * h * w * 3)}, {{h, w}, normals(rng, h * w)}},
                               [](const std::vector<Tensor>& x) { return nn::spatial_pool(x[0], x[1]); }};
               }});
  s.push_back({"conv1d", [](Rng& rng) {
                 const std::size_t t = between(rng, 3, 12), cin = between(rng, 1, 3), cout = between(rng, 1, 3);
                 const std::size_t k = 2 * between(rng, 0, 3) + 1;
                 return OpCase{{{{t, cin}, normals(rng, t * cin)},
                                {{k, cin, cout}, normals(rng, k * cin * cout)},
                                {{cout}, normals(rng, cout)}},
                               [](const std::vector<Tensor>& x) { return nn::conv1d(x[0], x[1], x[2]); }};
               }});
  s.push_back({"standardize", [](Rng& rng) {
                 const std::size_t t = between(rng, 3, 12), c = between(rng, 1, 3);
                 return OpCase{{{{t, c}, normals(rng, t * c)}},
                               [](const std::vector<Tensor>& x) { return nn::standardize(x[0]); }};
               }});
  s.push_back({"resample", [](Rng& rng) {
                 const std::size_t n = between(rng, 4, 24);
                 const double r = rng.uniform(0.6, 1.6);
                 return OpCase{{{{n}, normals(rng, n)}}, [r](const std::vector<Tensor>& x) { return nn::resample(x[0], r); }};
               }});
  s.push_back({"fit_length", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 12);
                 const std::size_t m = between(rng, 1, 16);
                 return OpCase{{{{n}, normals(rng, n)}}, [m](const std::vector<Tensor>& x) { return nn::fit_length(x[0], m); }};
               }});
  s.push_back({"band_power", [](Rng& rng) {
                 const std::size_t n = between(rng, 16, 64);
                 const Window window = rng.uniform() < 0.5 ? Window::Rect : Window::Hann;
                 auto grid = std::make_shared<nn::SpectralGrid>(n, 30.0, default_fft_len(n), HrBand{}, window);
                 return OpCase{{{{n}, normals(rng, n)}},
                               [grid](const std::vector<Tensor>& x) { return nn::band_power(x[0], *grid); }};
               }});
  s.push_back({"fwd_loss", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 24);
                 return OpCase{{{{n}, normals(rng, n, 2.0)}, {{n}, normals(rng, n, 2.0)}},
                               [](const std::vector<Tensor>& x) {
                                 return nn::fwd_loss(nn::softmax(x[0]), nn::softmax(x[1]));
                               }};
               }});
  s.push_back({"kl_loss", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 24);
                 return OpCase{{{{n}, normals(rng, n, 2.0)}, {{n}, normals(rng, n, 2.0)}},
                               [](const std::vector<Tensor>& x) {
                                 return nn::kl_loss(nn::softmax(x[0]), nn::softmax(x[1]));
                               }};
               }});
  s.push_back({"frequency_ce_loss", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 24);
                 const std::size_t bin = rng.below(n);
                 return OpCase{{{{n}, normals(rng, n, 2.0)}}, [bin](const std::vector<Tensor>& x) {
                                 return nn::frequency_ce_loss(nn::softmax(x[0]), bin);
                               }};
               }});
  s.push_back({"neg_pearson", [](Rng& rng) {
                 const std::size_t n = between(rng, 3, 24);
                 return OpCase{{{{n}, normals(rng, n)}, {{n}, normals(rng, n)}},
                               [](const std::vector<Tensor>& x) { return nn::neg_pearson(x[0], x[1]); }};
               }});
  s.push_back({"time_wd_loss", [](Rng& rng) {
                 const std::size_t n = between(rng, 2, 24);
                 return OpCase{{{{n}, away_from_zero(rng, n)}, {{n}, away_from_zero(rng, n)}},
                               [](const std::vector<Tensor>& x) { return nn::time_wd_loss(x[0], x[1]); }};
               }});
  return s;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) {
    x = rng.uniform(0.05, 1.0);
    total += x;
  }
  for (auto& x : v) x /= total;
  return v;
}

// Directional derivatives of fwd_distance along zero-sum directions, which
// keep both arguments on the simplex.
double check_fwd_gradient(Rng& rng, bool perturb) {
  const std::size_t n = between(rng, 2, 32);
  const auto p = random_distribution(rng, n);
  const auto q = random_distribution(rng, n);
  GradPair g = fwd_gradient(p, q);
  if (perturb)
    for (auto* v : {&g.grad_p, &g.grad_q})
      for (double& x : *v) x *= 1.01;
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (std::size_t d = 0; d < 2 * n; ++d) {
    std::vector<double> dp(n), dq(n);
    for (auto* dir : {&dp, &dq}) {
      double mean = 0.0;
      for (auto& x : *dir) {
        x = rng.normal();
        mean += x;
      }
      mean /= static_cast<double>(n);
      for (auto& x : *dir) x -= mean;
    }
    double a = 0.0;
    for (std::size_t i = 0; i < n; ++i) a += g.grad_p[i] * dp[i] + g.grad_q[i] * dq[i];
    const double h = 1e-7;
    auto shifted = [&](double s) {
      std::vector<double> pp = p, qq = q;
      for (std::size_t i = 0; i < n; ++i) {
        pp[i] += s * dp[i];
        qq[i] += s * dq[i];
      }
      return fwd_distance(pp, qq);
    };
    analytic.push_back(a);
    numeric.push_back((shifted(h) - shifted(-h)) / (2.0 * h));
  }
  return gradient_rel_error(analytic, numeric);
}

double check_kl_gradient(Rng& rng, bool perturb) {
  const std::size_t n = between(rng, 2, 32);
  const auto p = random_distribution(rng, n);
  const auto q = random_distribution(rng, n);
  GradPair g = kl_gradient(p, q);
  std::vector<double> analytic = g.grad_p;
  analytic.insert(analytic.end(), g.grad_q.begin(), g.grad_q.end());
  if (perturb)
    for (double& x : analytic) x *= 1.01;
  std::vector<double> numeric;
  for (int which = 0; which < 2; ++which) {
    for (std::size_t i = 0; i < n; ++i) {
      const double h = kStep;
      std::vector<double> a = which == 0 ? p : q;
      auto value = [&](double s) {
        std::vector<double> shifted = a;
        shifted[i] += s;
        return which == 0 ? kl_divergence(shifted, q) : kl_divergence(p, shifted);
      };
      numeric.push_back((value(h) - value(-h)) / (2.0 * h));
    }
  }
  return gradient_rel_error(analytic, numeric);
}

double check_time_wd_gradient(Rng& rng, bool perturb) {
  const std::size_t n = between(rng, 2, 32);
  const auto x = away_from_zero(rng, n);
  const auto y = away_from_zero(rng, n);
  GradPair g = time_domain_wd_gradient(x, y);
  std::vector<double> analytic = g.grad_p;
  analytic.insert(analytic.end(), g.grad_q.begin(), g.grad_q.end());
  if (perturb)
    for (double& v : analytic) v *= 1.01;
  std::vector<double> numeric;
  for (int which = 0; which < 2; ++which) {
    for (std::size_t i = 0; i < n; ++i) {
      const double h = kStep;
      auto value = [&](double s) {
        std::vector<double> a = x, b = y;
        (which == 0 ? a : b)[i] += s;
        return time_domain_wd(a, b);
      };
      numeric.push_back((value(h) - value(-h)) / (2.0 * h));
    }
  }
  return gradient_rel_error(analytic, numeric);
}

// Small (t = 32, 8 x 8) clip with a pulse, so spectra are not flat.
ClipTensor probe_clip(Rng& rng) {
  constexpr std::size_t t = 32, h = 8, w = 8;
  ClipTensor clip(t, h, w, 30.0);
  const double f0 = rng.uniform(0.8, 2.5);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  for (std::size_t k = 0; k < t; ++k) {
    const double pulse = std::sin(6.283185307179586 * f0 * static_cast<double>(k) / 30.0 + phase);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t c = 0; c < 3; ++c)
          clip.at(k, i, j, c) = static_cast<float>(0.5 + 0.05 * pulse * (1.0 + 0.3 * c) + 0.05 * rng.normal());
  }
  return clip;
}

nn::ModelConfig probe_config() { return {8, 8, 5, 4, 6, 4}; }

struct ParamRef {
  nn::Parameter* param;
  std::size_t index;
};

std::vector<ParamRef> pick_coordinates(const std::vector<nn::Parameter*>& params, Rng& rng, std::size_t count) {
  std::vector<ParamRef> all;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) all.push_back({p, i});
  if (count >= all.size()) return all;
  rng.shuffle(all);
  all.resize(count);
  return all;
}

double fd_over(const std::vector<ParamRef>& coords, const std::vector<double>& analytic,
               const std::function<double()>& loss) {
  std::vector<double> numeric;
  for (const auto& c : coords) {
    double& v = c.param->value[c.index];
    const double saved = v;
    const double h = kStep * std::max(1.0, std::abs(saved));
    v = saved + h;
    const double up = loss();
    v = saved - h;
    const double down = loss();
    v = saved;
    numeric.push_back((up - down) / (2.0 * h));
  }
  return gradient_rel_error(analytic, numeric);
}

// forward -> PSD -> softmax -> FWD against a label spectrum.
double check_end_to_end_pretrain(Rng& rng, bool perturb, bool all_coordinates) {
  nn::ModelState model = nn::init_model(probe_config(), rng.next_u64());
  for (auto* p : model.parameters())
    for (double& v : p->value) v += 0.3 * rng.normal();
  const ClipTensor clip = probe_clip(rng);
  const nn::SpectralGrid grid(clip.frames(), clip.frame_rate());
  Tensor label;
  {
    nn::NoGradGuard no_grad;
    label = nn::softmax(nn::unit_max(nn::band_power(nn::constant({clip.frames()}, normals(rng, clip.frames())), grid)));
  }
  auto loss_of = [&](nn::ModelState& m) {
    const Tensor f = nn::forward_tensor(m, clip);
    return nn::fwd_loss(nn::softmax(nn::unit_max(nn::band_power(f, grid))), label);
  };
  nn::zero_grad(model.parameters());
  nn::backward(loss_of(model));
  const auto coords = pick_coordinates(model.parameters(), rng, all_coordinates ? SIZE_MAX : 24);
  std::vector<double> analytic;
  for (const auto& c : coords) analytic.push_back(c.param->grad[c.index] * (perturb ? 1.01 : 1.0));
  return fd_over(coords, analytic, [&] {
    nn::NoGradGuard no_grad;
    return loss_of(model).item();
  });
}

// Three-branch consistency objective through all four parameter groups.
double check_end_to_end_adapt(Rng& rng, bool perturb) {
  nn::ModelState base = nn::init_model(probe_config(), rng.next_u64());
  AdaptedModel model = adapted_from_pretrained(base);
  // Distinct branch weights so the objective is away from its zero.
  for (auto* p : model.parameters())
    for (double& v : p->value) v += 0.3 * rng.normal();
  const ClipTensor clip = probe_clip(rng);
  const nn::SpectralGrid grid(clip.frames(), clip.frame_rate());
  const SpatialAug aug = pick_spatial_aug(rng);
  const double r = rng.uniform(0.66, 0.80);
  nn::zero_grad(model.parameters());
  nn::backward(adaptation_loss(model, clip, aug, r, grid).total);
  const auto coords = pick_coordinates(model.parameters(), rng, 24);
  std::vector<double> analytic;
  for (const auto& c : coords) analytic.push_back(c.param->grad[c.index] * (perturb ? 1.01 : 1.0));
  return fd_over(coords, analytic, [&] {
    nn::NoGradGuard no_grad;
    return adaptation_loss(model, clip, aug, r, grid).total.item();
  });
}

bool selected(const GradcheckOptions& o, const std::string& name) {
  return o.filter.empty() || name.find(o.filter) != std::string::npos;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
  std::vector<std::string> names;
  for (const auto& s : op_suites()) names.push_back(s.name);
  for (const char* n : {"fwd_gradient", "kl_gradient", "time_domain_wd_gradient", "end_to_end_pretrain",
                        "end_to_end_pretrain_full", "end_to_end_adapt"})
    names.emplace_back(n);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  GradcheckReport report;
  const std::uint64_t root = derive_seed(options.seed, "gradcheck");

  auto run = [&](const std::string& name, std::size_t cases, double tol, const std::function<double(Rng&, bool)>& one) {
    if (!selected(options, name)) return;
    Rng rng(derive_seed(root, name));
    SuiteResult result{name, cases, 0.0, tol};
    const bool perturb = options.perturb_suite == name;
    for (std::size_t i = 0; i < cases; ++i) result.worst_rel_error = std::max(result.worst_rel_error, one(rng, perturb));
    report.suites.push_back(result);
  };

  for (const auto& suite : op_suites()) {
    run(suite.name, options.cases, options.op_tolerance,
        [&](Rng& rng, bool perturb) { return check_op_case(suite.make(rng), rng, perturb); });
  }
  run("fwd_gradient", options.cases, options.op_tolerance, check_fwd_gradient);
  run("kl_gradient", options.cases, options.op_tolerance, check_kl_gradient);
  run("time_domain_wd_gradient", options.cases, options.op_tolerance, check_time_wd_gradient);
  run("end_to_end_pretrain", options.cases, options.end_to_end_tolerance,
      [](Rng& rng, bool perturb) { return check_end_to_end_pretrain(rng, perturb, false); });
  run("end_to_end_pretrain_full", 1, options.end_to_end_tolerance,
      [](Rng& rng, bool perturb) { return check_end_to_end_pretrain(rng, perturb, true); });
  run("end_to_end_adapt", options.cases, options.end_to_end_tolerance, check_end_to_end_adapt);
  return report;
}

}  // namespace sfda
