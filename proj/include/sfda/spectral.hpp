#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sfda {

// Uniformly sampled real signal. Construction validates the invariants:
// at least two samples, positive rate, finite samples.
class TimeSeries {
 public:
  TimeSeries(std::vector<double> samples, double rate);

  const std::vector<double>& samples() const { return samples_; }
  double rate() const { return rate_; }
  std::size_t size() const { return samples_.size(); }
  double duration() const { return static_cast<double>(samples_.size()) / rate_; }

 private:
  std::vector<double> samples_;
  double rate_;
};

// One-sided power spectrum on a uniform grid of positive frequencies.
struct PowerSpectrum {
  std::vector<double> freqs;  // Hz, ascending, spacing == resolution
  std::vector<double> power;  // unit^2 / Hz, >= 0
  double resolution = 0.0;    // Hz per bin

  std::size_t size() const { return freqs.size(); }
  // Throws InvalidData when the grid or the power values are inconsistent.
  void validate() const;
};

// Probability vector over HR-band bins (softmax of a band-restricted PSD).
struct SpectralDistribution {
  std::vector<double> freqs;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
};

enum class Window { Rect, Hann };
enum class Prescale { UnitMax, None };

struct HrBand {
  double lo = 0.66;  // Hz (~40 bpm)
  double hi = 3.0;   // Hz (180 bpm)
};

// Next power of two >= 4 * n.
std::size_t default_fft_len(std::size_t n);

// Window coefficients of length n (periodic Hann).
std::vector<double> window_coefficients(Window window, std::size_t n);

// Frequency of bin k on an fft_len grid. Shared by every code path that
// builds or filters grids so that band membership decisions agree exactly.
inline double bin_frequency(std::size_t k, std::size_t fft_len, double rate) {
  return static_cast<double>(k) * rate / static_cast<double>(fft_len);
}

// Inclusive range [first, last] of one-sided bins (k >= 1) whose frequency
// lies in [band.lo, band.hi]. Throws InvalidArgument when empty.
struct BinRange {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t count() const { return last - first + 1; }
};
BinRange band_bins(std::size_t fft_len, double rate, HrBand band);

// Mean-centered, zero-padded one-sided periodogram (bins 1..fft_len/2).
PowerSpectrum periodogram_psd(const TimeSeries& x, std::size_t fft_len, Window window = Window::Rect);

// Keeps bins with lo <= f <= hi.
PowerSpectrum band_restrict(const PowerSpectrum& psd, double lo, double hi);
inline PowerSpectrum band_restrict(const PowerSpectrum& psd, HrBand band) {
  return band_restrict(psd, band.lo, band.hi);
}

// softmax(power / max(power)) (or softmax(power) with Prescale::None).
// An all-zero spectrum with UnitMax maps to the uniform distribution.
SpectralDistribution spectral_softmax(const PowerSpectrum& psd, Prescale prescale = Prescale::UnitMax);

// Plain softmax over a vector; shared with the differentiable path.
std::vector<double> softmax(std::span<const double> logits);

// 60 * frequency of the highest bin; ties resolve to the lowest frequency.
double hr_from_psd(const PowerSpectrum& psd);

// Convenience: band-restricted periodogram with the default FFT length.
PowerSpectrum band_psd(const TimeSeries& x, HrBand band = {}, Window window = Window::Rect);

// HR of a signal via its band-restricted default periodogram.
double estimate_hr(const TimeSeries& x, HrBand band = {});

}  // namespace sfda
