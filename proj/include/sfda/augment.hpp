#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "sfda/clip.hpp"
#include "sfda/rng.hpp"
#include "sfda/spectral.hpp"

namespace sfda {

// The six frame transforms drawn by the spatial branch.
enum class SpatialAug { Rot0, Rot90, Rot180, Rot270, FlipH, FlipV };

inline constexpr std::array<SpatialAug, 6> kAllSpatialAugs = {
    SpatialAug::Rot0, SpatialAug::Rot90, SpatialAug::Rot180, SpatialAug::Rot270, SpatialAug::FlipH, SpatialAug::FlipV};

std::string_view to_string(SpatialAug aug);

// Applies the same transform to every frame. Rotations are counter-clockwise;
// 90/270 degree rotations require square frames.
ClipTensor spatial_augment(const ClipTensor& clip, SpatialAug aug);

// Uniform draw over the six transforms; advances rng.
SpatialAug pick_spatial_aug(Rng& rng);

// Linear-interpolation tap for one output sample: value = (1 - frac) * x[left] + frac * x[right].
struct InterpTap {
  std::size_t left = 0;
  std::size_t right = 0;
  double frac = 0.0;
};

// round(r * n_in), throwing InvalidArgument when it is below 2.
std::size_t resampled_length(std::size_t n_in, double r);

// Taps of FR_r: output k samples the input at position k / r; positions past
// the last sample extrapolate the final segment (frac > 1).
std::vector<InterpTap> resample_taps(std::size_t n_in, double r);

std::vector<double> resample_linear(const std::vector<double>& x, double r);

// FR_r: output length round(r * len(x)) at the same nominal rate, so a
// component at f0 appears at f0 / r.
TimeSeries frequency_resample(const TimeSeries& x, double r);

// Trims or edge-pads at the tail to exactly n samples.
std::vector<double> fit_length(std::vector<double> x, std::size_t n);

// FR_{1/r}(transform(FR_r(x))), fitted back to len(x).
TimeSeries resample_roundtrip(const TimeSeries& x, double r,
                              const std::function<TimeSeries(const TimeSeries&)>& transform);

// Per-pixel temporal FR_r of a clip; spatial dims unchanged.
ClipTensor resample_clip(const ClipTensor& clip, double r);

}  // namespace sfda
