#pragma once

#include <cstddef>
#include <vector>

#include "sfda/augment.hpp"
#include "sfda/clip.hpp"
#include "sfda/nn/tensor.hpp"
#include "sfda/spectral.hpp"

namespace sfda::nn {

// Fixed differentiable op set. Every op validates shapes (InvalidArgument)
// and the finiteness of its result (NumericError naming the op).

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const std::vector<Tensor>& scalars);
Tensor tanh(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Softmax over all elements (any shape).
Tensor softmax(const Tensor& a);

// a / max(a); all-zero input maps to zeros (zero gradient).
Tensor unit_max(const Tensor& a);

// Clip as a constant [t, h, w, c] tensor.
Tensor clip_tensor(const ClipTensor& clip);

// [t, h, w, c] x [h, w] -> [t, c]: per-frame weighted pixel average.
Tensor spatial_pool(const Tensor& clip, const Tensor& weights);

// Same-padded cross-correlation: x [t, c_in], kernel [k, c_in, c_out] (k odd),
// bias [c_out] -> [t, c_out].
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Per-column (x - mean) / sqrt(var + eps) over the time axis of [t, c].
Tensor standardize(const Tensor& x, double eps = 1e-8);

// Linear-interpolation resampling FR_r of a 1D tensor.
Tensor resample(const Tensor& x, double r);

// Trim or edge-pad a 1D tensor at the tail to n samples.
Tensor fit_length(const Tensor& x, std::size_t n);

// Precomputed band-restricted DFT for signals of a fixed length. Produces
// the same values as band_restrict(periodogram_psd(...)) but as a linear map
// the tape can differentiate through.
class SpectralGrid {
 public:
  SpectralGrid(std::size_t length, double rate, std::size_t fft_len, HrBand band, Window window = Window::Rect);
  SpectralGrid(std::size_t length, double rate, HrBand band = {});

  std::size_t length() const { return length_; }
  double rate() const { return rate_; }
  std::size_t fft_len() const { return fft_len_; }
  std::size_t bins() const { return bins_.count(); }
  double resolution() const { return rate_ / static_cast<double>(fft_len_); }
  std::vector<double> freqs() const;
  // Bin index (within the band) nearest to a frequency in Hz, clamped.
  std::size_t nearest_bin(double hz) const;

  const std::vector<double>& cos_table() const { return cos_; }
  const std::vector<double>& sin_table() const { return sin_; }
  const std::vector<double>& scales() const { return scale_; }

 private:
  std::size_t length_;
  double rate_;
  std::size_t fft_len_;
  BinRange bins_;
  std::vector<double> cos_;  // bins x length, window folded in
  std::vector<double> sin_;
  std::vector<double> scale_;
};

// 1D [length] -> [bins] band power spectrum (mean-centered). The grid is
// referenced by the recorded backward pass and must outlive it.
Tensor band_power(const Tensor& x, const SpectralGrid& grid);

// Scalar losses on probability vectors; gradients flow into both arguments.
Tensor fwd_loss(const Tensor& p, const Tensor& q);
Tensor kl_loss(const Tensor& p, const Tensor& q);
Tensor frequency_ce_loss(const Tensor& p, std::size_t label_bin);
// 1 - Pearson r; zero-variance input yields 1 with zero gradient.
Tensor neg_pearson(const Tensor& pred, const Tensor& label);
// Time-domain Wasserstein on rectified, normalized signals.
Tensor time_wd_loss(const Tensor& x, const Tensor& y);

}  // namespace sfda::nn
