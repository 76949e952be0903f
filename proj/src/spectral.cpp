#include "sfda/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include <fftw3.h>

#include "sfda/error.hpp"

namespace sfda {

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex g_fftw_planner_mutex;

}  // namespace

TimeSeries::TimeSeries(std::vector<double> samples, double rate) : samples_(std::move(samples)), rate_(rate) {
  if (samples_.size() < 2) throw InvalidArgument("TimeSeries needs at least 2 samples");
  if (!(rate_ > 0.0) || !std::isfinite(rate_)) throw InvalidArgument("TimeSeries rate must be positive");
  for (double v : samples_) {
    if (!std::isfinite(v)) throw InvalidData("TimeSeries contains a non-finite sample");
  }
}

void PowerSpectrum::validate() const {
  if (freqs.size() != power.size()) throw InvalidData("PowerSpectrum: freqs/power length mismatch");
  if (!(resolution > 0.0)) throw InvalidData("PowerSpectrum: resolution must be positive");
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (!std::isfinite(power[i]) || power[i] < 0.0) throw InvalidData("PowerSpectrum: invalid power value");
    if (!(freqs[i] > 0.0)) throw InvalidData("PowerSpectrum: frequencies must be positive");
    if (i > 0) {
      const double step = freqs[i] - freqs[i - 1];
      if (std::abs(step - resolution) > 1e-9 * std::max(1.0, resolution) * std::max<double>(1.0, i))
        throw InvalidData("PowerSpectrum: non-uniform frequency grid");
    }
  }
}

std::size_t default_fft_len(std::size_t n) { return std::bit_ceil(std::max<std::size_t>(4 * n, 2)); }

std::vector<double> window_coefficients(Window window, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (window == Window::Hann) {
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

BinRange band_bins(std::size_t fft_len, double rate, HrBand band) {
  if (!(band.lo < band.hi)) throw InvalidArgument("band requires lo < hi");
  const std::size_t nyquist_bin = fft_len / 2;
  std::size_t first = 0;
  std::size_t last = 0;
  bool found = false;
  for (std::size_t k = 1; k <= nyquist_bin; ++k) {
    const double f = bin_frequency(k, fft_len, rate);
    if (f < band.lo || f > band.hi) continue;
    if (!found) first = k;
    last = k;
    found = true;
  }
  if (!found) throw InvalidArgument("band contains no frequency bins");
  return {first, last};
}

PowerSpectrum periodogram_psd(const TimeSeries& x, std::size_t fft_len, Window window) {
  const std::size_t n = x.size();
  if (fft_len < n) throw InvalidArgument("fft_len (" + std::to_string(fft_len) + ") shorter than signal");
  if (fft_len < 2) throw InvalidArgument("fft_len must be at least 2");

  const auto& s = x.samples();
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
  const auto w = window_coefficients(window, n);
  const double w_energy = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);

  const std::size_t n_out = fft_len / 2 + 1;
  double* in = fftw_alloc_real(fft_len);
  fftw_complex* out = fftw_alloc_complex(n_out);
  fftw_plan plan;
  {
    std::lock_guard lock(g_fftw_planner_mutex);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_len), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < fft_len; ++i) in[i] = i < n ? (s[i] - mean) * w[i] : 0.0;
  fftw_execute(plan);

  PowerSpectrum psd;
  psd.resolution = x.rate() / static_cast<double>(fft_len);
  const std::size_t nyquist_bin = fft_len / 2;
  psd.freqs.reserve(nyquist_bin);
  psd.power.reserve(nyquist_bin);
  for (std::size_t k = 1; k <= nyquist_bin; ++k) {
    const double mag2 = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    const bool unpaired = (fft_len % 2 == 0) && k == nyquist_bin;
    const double scale = (unpaired ? 1.0 : 2.0) / (x.rate() * w_energy);
    psd.freqs.push_back(bin_frequency(k, fft_len, x.rate()));
    psd.power.push_back(scale * mag2);
  }
  {
    std::lock_guard lock(g_fftw_planner_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return psd;
}

PowerSpectrum band_restrict(const PowerSpectrum& psd, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("band_restrict requires lo < hi");
  PowerSpectrum out;
  out.resolution = psd.resolution;
  for (std::size_t i = 0; i < psd.size(); ++i) {
    if (psd.freqs[i] >= lo && psd.freqs[i] <= hi) {
      out.freqs.push_back(psd.freqs[i]);
      out.power.push_back(psd.power[i]);
    }
  }
  if (out.freqs.empty()) throw InvalidArgument("band_restrict: band does not overlap the spectrum");
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

SpectralDistribution spectral_softmax(const PowerSpectrum& psd, Prescale prescale) {
  if (psd.size() < 2) throw InvalidArgument("spectral_softmax needs at least 2 bins");
  std::vector<double> scores = psd.power;
  if (prescale == Prescale::UnitMax) {
    const double peak = *std::max_element(scores.begin(), scores.end());
    if (peak > 0.0) {
      for (double& v : scores) v /= peak;
    } else {
      std::fill(scores.begin(), scores.end(), 0.0);
    }
  }
  return {psd.freqs, softmax(scores)};
}

double hr_from_psd(const PowerSpectrum& psd) {
  if (psd.size() == 0) throw InvalidArgument("hr_from_psd on empty spectrum");
  // max_element returns the first maximum, i.e. the lowest frequency on ties.
  const auto it = std::max_element(psd.power.begin(), psd.power.end());
  return 60.0 * psd.freqs[static_cast<std::size_t>(it - psd.power.begin())];
}

PowerSpectrum band_psd(const TimeSeries& x, HrBand band, Window window) {
  return band_restrict(periodogram_psd(x, default_fft_len(x.size()), window), band);
}

double estimate_hr(const TimeSeries& x, HrBand band) { return hr_from_psd(band_psd(x, band)); }

}  // namespace sfda
