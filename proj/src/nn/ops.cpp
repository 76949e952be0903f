#include "sfda/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sfda/error.hpp"
#include "sfda/log.hpp"
#include "sfda/transport.hpp"

namespace sfda::nn {

namespace {

// Gradient buffer of parent i, or nullptr when it does not need one.
std::vector<double>* parent_grad(detail::Node& self, std::size_t i) {
  auto& parent = *self.parents[i];
  return parent.requires_grad ? &parent.ensure_grad() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank)
    throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_string(a.shape()));
}

Tensor scalar_result(std::string op, double value, std::vector<Tensor> parents,
                     std::function<void(detail::Node&)> backward_fn) {
  return make_result(std::move(op), {}, {value}, std::move(parents), std::move(backward_fn));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  return scalar_result("sum", std::accumulate(v.begin(), v.end(), 0.0), {a}, [](detail::Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (double& x : *g) x += self.grad[0];
  });
}

Tensor mean(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw InvalidArgument("mean of zero tensors");
  double total = 0.0;
  for (const auto& s : scalars) total += s.item();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return scalar_result("mean", total * inv, scalars, [inv](detail::Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (auto* g = parent_grad(self, p)) (*g)[0] += inv * self.grad[0];
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  auto y = out;
  return make_result("tanh", a.shape(), std::move(out), {a}, [y = std::move(y)](detail::Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw InvalidArgument("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor softmax(const Tensor& a) {
  auto probs = sfda::softmax(a.values());
  auto y = probs;
  return make_result("softmax", a.shape(), std::move(probs), {a}, [y = std::move(y)](detail::Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      const double dot = std::inner_product(self.grad.begin(), self.grad.end(), y.begin(), 0.0);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += y[i] * (self.grad[i] - dot);
    }
  });
}

Tensor unit_max(const Tensor& a) {
  const auto v = a.values();
  if (v.empty()) throw InvalidArgument("unit_max on empty tensor");
  const auto it = std::max_element(v.begin(), v.end());
  const double peak = *it;
  const auto arg = static_cast<std::size_t>(it - v.begin());
  std::vector<double> out(v.size(), 0.0);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / peak;
  }
  auto y = out;
  return make_result("unit_max", a.shape(), std::move(out), {a},
                     [y = std::move(y), peak, arg](detail::Node& self) {
                       if (!(peak > 0.0)) return;
                       if (auto* g = parent_grad(self, 0)) {
                         // s_i = a_i / a_arg: direct term plus the max's term.
                         const double dot =
                             std::inner_product(self.grad.begin(), self.grad.end(), y.begin(), 0.0);
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / peak;
                         (*g)[arg] -= dot / peak;
                       }
                     });
}

Tensor clip_tensor(const ClipTensor& clip) {
  std::vector<double> values(clip.data().begin(), clip.data().end());
  return constant({clip.frames(), clip.height(), clip.width(), clip.channels()}, std::move(values));
}

Tensor spatial_pool(const Tensor& clip, const Tensor& weights) {
  require_rank(clip, 4, "spatial_pool");
  require_rank(weights, 2, "spatial_pool");
  const auto& cs = clip.shape();
  const std::size_t t = cs[0], h = cs[1], w = cs[2], c = cs[3];
  if (weights.shape()[0] != h || weights.shape()[1] != w)
    throw InvalidArgument("spatial_pool: weights " + shape_string(weights.shape()) + " do not match clip " +
                          shape_string(cs));
  const std::size_t pixels = h * w;
  const auto x = clip.values();
  const auto wt = weights.values();
  std::vector<double> out(t * c, 0.0);
  for (std::size_t f = 0; f < t; ++f) {
    const double* frame = x.data() + f * pixels * c;
    double* o = out.data() + f * c;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double wp = wt[p];
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] += wp * frame[p * c + ch];
    }
  }
  return make_result("spatial_pool", {t, c}, std::move(out), {clip, weights}, [t, pixels, c](detail::Node& self) {
    const auto& x_val = self.parents[0]->value;
    const auto& w_val = self.parents[1]->value;
    if (auto* gx = parent_grad(self, 0)) {
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t p = 0; p < pixels; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) (*gx)[(f * pixels + p) * c + ch] += w_val[p] * self.grad[f * c + ch];
    }
    if (auto* gw = parent_grad(self, 1)) {
      for (std::size_t f = 0; f < t; ++f) {
        const double* frame = x_val.data() + f * pixels * c;
        const double* go = self.grad.data() + f * c;
        for (std::size_t p = 0; p < pixels; ++p) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) acc += frame[p * c + ch] * go[ch];
          (*gw)[p] += acc;
        }
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank(x, 2, "conv1d");
  require_rank(kernel, 3, "conv1d");
  require_rank(bias, 1, "conv1d");
  const std::size_t t = x.shape()[0], cin = x.shape()[1];
  const std::size_t k = kernel.shape()[0], cout = kernel.shape()[2];
  if (k % 2 == 0) throw InvalidArgument("conv1d: kernel length must be odd");
  if (kernel.shape()[1] != cin || bias.shape()[0] != cout)
    throw InvalidArgument("conv1d: shape mismatch x " + shape_string(x.shape()) + ", kernel " +
                          shape_string(kernel.shape()) + ", bias " + shape_string(bias.shape()));
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto xv = x.values();
  const auto kv = kernel.values();
  const auto bv = bias.values();
  std::vector<double> out(t * cout);
  for (std::size_t n = 0; n < t; ++n) {
    double* o = out.data() + n * cout;
    std::copy(bv.begin(), bv.end(), o);
    for (std::size_t d = 0; d < k; ++d) {
      const auto src = static_cast<std::ptrdiff_t>(n) + static_cast<std::ptrdiff_t>(d) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      const double* xi = xv.data() + static_cast<std::size_t>(src) * cin;
      const double* kd = kv.data() + d * cin * cout;
      for (std::size_t i = 0; i < cin; ++i) {
        const double xval = xi[i];
        const double* krow = kd + i * cout;
        for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += xval * krow[oc];
      }
    }
  }
  return make_result(
      "conv1d", {t, cout}, std::move(out), {x, kernel, bias}, [t, cin, k, cout, half](detail::Node& self) {
        const auto& xv2 = self.parents[0]->value;
        const auto& kv2 = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t n = 0; n < t; ++n) {
          const double* go = self.grad.data() + n * cout;
          if (gb)
            for (std::size_t oc = 0; oc < cout; ++oc) (*gb)[oc] += go[oc];
          for (std::size_t d = 0; d < k; ++d) {
            const auto src = static_cast<std::ptrdiff_t>(n) + static_cast<std::ptrdiff_t>(d) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            const std::size_t s = static_cast<std::size_t>(src);
            for (std::size_t i = 0; i < cin; ++i) {
              const double* krow = kv2.data() + (d * cin + i) * cout;
              double acc = 0.0;
              for (std::size_t oc = 0; oc < cout; ++oc) {
                acc += krow[oc] * go[oc];
                if (gk) (*gk)[(d * cin + i) * cout + oc] += xv2[s * cin + i] * go[oc];
              }
              if (gx) (*gx)[s * cin + i] += acc;
            }
          }
        }
      });
}

Tensor standardize(const Tensor& x, double eps) {
  require_rank(x, 2, "standardize");
  const std::size_t t = x.shape()[0], c = x.shape()[1];
  const auto v = x.values();
  std::vector<double> out(t * c);
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0;
    for (std::size_t n = 0; n < t; ++n) mu += v[n * c + ch];
    mu /= static_cast<double>(t);
    double var = 0.0;
    for (std::size_t n = 0; n < t; ++n) var += (v[n * c + ch] - mu) * (v[n * c + ch] - mu);
    var /= static_cast<double>(t);
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::size_t n = 0; n < t; ++n) out[n * c + ch] = (v[n * c + ch] - mu) * inv_std[ch];
  }
  auto y = out;
  return make_result("standardize", x.shape(), std::move(out), {x},
                     [t, c, y = std::move(y), inv_std = std::move(inv_std)](detail::Node& self) {
                       auto* g = parent_grad(self, 0);
                       if (!g) return;
                       const double inv_t = 1.0 / static_cast<double>(t);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double mean_g = 0.0;
                         double mean_gy = 0.0;
                         for (std::size_t n = 0; n < t; ++n) {
                           mean_g += self.grad[n * c + ch];
                           mean_gy += self.grad[n * c + ch] * y[n * c + ch];
                         }
                         mean_g *= inv_t;
                         mean_gy *= inv_t;
                         for (std::size_t n = 0; n < t; ++n)
                           (*g)[n * c + ch] +=
                               inv_std[ch] * (self.grad[n * c + ch] - mean_g - y[n * c + ch] * mean_gy);
                       }
                     });
}

Tensor resample(const Tensor& x, double r) {
  require_rank(x, 1, "resample");
  auto taps = resample_taps(x.size(), r);
  const auto v = x.values();
  std::vector<double> out(taps.size());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const auto& tap = taps[k];
    out[k] = tap.frac == 0.0 ? v[tap.left] : (1.0 - tap.frac) * v[tap.left] + tap.frac * v[tap.right];
  }
  const std::size_t n_out = taps.size();
  return make_result("resample", {n_out}, std::move(out), {x}, [taps = std::move(taps)](detail::Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t k = 0; k < taps.size(); ++k) {
        (*g)[taps[k].left] += (1.0 - taps[k].frac) * self.grad[k];
        if (taps[k].frac != 0.0) (*g)[taps[k].right] += taps[k].frac * self.grad[k];
      }
    }
  });
}

Tensor fit_length(const Tensor& x, std::size_t n) {
  require_rank(x, 1, "fit_length");
  const std::size_t m = x.size();
  if (m == 0) throw InvalidArgument("fit_length on empty tensor");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.values()[std::min(i, m - 1)];
  return make_result("fit_length", {n}, std::move(out), {x}, [m, n](detail::Node& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < n; ++i) (*g)[std::min(i, m - 1)] += self.grad[i];
  });
}

SpectralGrid::SpectralGrid(std::size_t length, double rate, std::size_t fft_len, HrBand band, Window window)
    : length_(length), rate_(rate), fft_len_(fft_len), bins_(band_bins(fft_len, rate, band)) {
  if (length < 2) throw InvalidArgument("SpectralGrid needs length >= 2");
  if (fft_len < length) throw InvalidArgument("SpectralGrid: fft_len shorter than signal");
  const auto w = window_coefficients(window, length);
  const double w_energy = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
  const std::size_t nb = bins_.count();
  cos_.resize(nb * length);
  sin_.resize(nb * length);
  scale_.resize(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t k = bins_.first + b;
    const bool unpaired = (fft_len % 2 == 0) && k == fft_len / 2;
    scale_[b] = (unpaired ? 1.0 : 2.0) / (rate * w_energy);
    for (std::size_t n = 0; n < length; ++n) {
      // Reduce k*n mod fft_len before scaling to keep the phase accurate.
      const double phase = 2.0 * std::numbers::pi * static_cast<double>((k * n) % fft_len) /
                           static_cast<double>(fft_len);
      cos_[b * length + n] = w[n] * std::cos(phase);
      sin_[b * length + n] = w[n] * std::sin(phase);
    }
  }
}

SpectralGrid::SpectralGrid(std::size_t length, double rate, HrBand band)
    : SpectralGrid(length, rate, default_fft_len(length), band) {}

std::vector<double> SpectralGrid::freqs() const {
  std::vector<double> f(bins());
  for (std::size_t b = 0; b < f.size(); ++b) f[b] = bin_frequency(bins_.first + b, fft_len_, rate_);
  return f;
}

std::size_t SpectralGrid::nearest_bin(double hz) const {
  const double k = std::round(hz / resolution());
  const double clamped = std::clamp(k, static_cast<double>(bins_.first), static_cast<double>(bins_.last));
  return static_cast<std::size_t>(clamped) - bins_.first;
}

Tensor band_power(const Tensor& x, const SpectralGrid& grid) {
  require_rank(x, 1, "band_power");
  const std::size_t n = grid.length();
  if (x.size() != n)
    throw InvalidArgument("band_power: signal length " + std::to_string(x.size()) + " does not match grid length " +
                          std::to_string(n));
  const auto v = x.values();
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = v[i] - mu;
  const std::size_t nb = grid.bins();
  const auto& ct = grid.cos_table();
  const auto& st = grid.sin_table();
  std::vector<double> re(nb), im(nb), out(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const double* cr = ct.data() + b * n;
    const double* sr = st.data() + b * n;
    double a = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      a += centered[i] * cr[i];
      s += centered[i] * sr[i];
    }
    re[b] = a;
    im[b] = s;
    out[b] = grid.scales()[b] * (a * a + s * s);
  }
  return make_result("band_power", {nb}, std::move(out), {x},
                     [&grid, re = std::move(re), im = std::move(im)](detail::Node& self) {
                       auto* g = parent_grad(self, 0);
                       if (!g) return;
                       const std::size_t len = grid.length();
                       std::vector<double> gy(len, 0.0);
                       for (std::size_t b = 0; b < re.size(); ++b) {
                         const double coef = 2.0 * grid.scales()[b] * self.grad[b];
                         const double cr = coef * re[b];
                         const double ci = coef * im[b];
                         const double* crow = grid.cos_table().data() + b * len;
                         const double* srow = grid.sin_table().data() + b * len;
                         for (std::size_t i = 0; i < len; ++i) gy[i] += cr * crow[i] + ci * srow[i];
                       }
                       const double mean_g =
                           std::accumulate(gy.begin(), gy.end(), 0.0) / static_cast<double>(len);
                       for (std::size_t i = 0; i < len; ++i) (*g)[i] += gy[i] - mean_g;
                     });
}

namespace {

Tensor pair_loss(const char* op, const Tensor& p, const Tensor& q, double value, GradPair grads) {
  return scalar_result(op, value, {p, q}, [grads = std::move(grads)](detail::Node& self) {
    const double up = self.grad[0];
    if (auto* gp = parent_grad(self, 0))
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += up * grads.grad_p[i];
    if (auto* gq = parent_grad(self, 1))
      for (std::size_t i = 0; i < gq->size(); ++i) (*gq)[i] += up * grads.grad_q[i];
  });
}

}  // namespace

Tensor fwd_loss(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "fwd_loss");
  const double d = fwd_distance(p.values(), q.values());
  return pair_loss("fwd_loss", p, q, d, fwd_gradient(p.values(), q.values()));
}

Tensor kl_loss(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_loss");
  const double d = kl_divergence(p.values(), q.values());
  return pair_loss("kl_loss", p, q, d, kl_gradient(p.values(), q.values()));
}

Tensor frequency_ce_loss(const Tensor& p, std::size_t label_bin) {
  const double value = frequency_ce(p.values(), label_bin);
  const double prob = p.values()[label_bin];
  return scalar_result("frequency_ce", value, {p}, [label_bin, prob](detail::Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      if (prob >= kKlFloor) (*g)[label_bin] += -self.grad[0] / prob;
    }
  });
}

Tensor neg_pearson(const Tensor& pred, const Tensor& label) {
  require_same_shape(pred, label, "neg_pearson");
  const std::size_t n = pred.size();
  const auto a = pred.values();
  const auto b = label.values();
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  std::vector<double> ca(n), cb(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ca[i] = a[i] - ma;
    cb[i] = b[i] - mb;
    saa += ca[i] * ca[i];
    sbb += cb[i] * cb[i];
    sab += ca[i] * cb[i];
  }
  constexpr double kDegenerate = 1e-20;
  if (saa <= kDegenerate || sbb <= kDegenerate) {
    log_warn("neg_pearson: zero-variance input, correlation treated as 0");
    return scalar_result("neg_pearson", 1.0, {pred, label}, [](detail::Node&) {});
  }
  const double norm_a = std::sqrt(saa), norm_b = std::sqrt(sbb);
  const double r = sab / (norm_a * norm_b);
  return scalar_result("neg_pearson", 1.0 - r, {pred, label},
                       [ca = std::move(ca), cb = std::move(cb), r, saa, sbb, norm_a, norm_b](detail::Node& self) {
                         const double up = self.grad[0];
                         if (auto* g = parent_grad(self, 0))
                           for (std::size_t i = 0; i < g->size(); ++i)
                             (*g)[i] -= up * (cb[i] / (norm_a * norm_b) - r * ca[i] / saa);
                         if (auto* g = parent_grad(self, 1))
                           for (std::size_t i = 0; i < g->size(); ++i)
                             (*g)[i] -= up * (ca[i] / (norm_a * norm_b) - r * cb[i] / sbb);
                       });
}

Tensor time_wd_loss(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "time_wd_loss");
  const double d = time_domain_wd(x.values(), y.values());
  return pair_loss("time_wd_loss", x, y, d, time_domain_wd_gradient(x.values(), y.values()));
}

}  // namespace sfda::nn
