#include "sfda/augment.hpp"

#include <cmath>
#include <string>

#include "sfda/error.hpp"

namespace sfda {

ClipTensor::ClipTensor(std::size_t frames, std::size_t height, std::size_t width, double frame_rate)
    : ClipTensor(frames, height, width, frame_rate, std::vector<float>(frames * height * width * kChannels, 0.0f)) {}

ClipTensor::ClipTensor(std::size_t frames, std::size_t height, std::size_t width, double frame_rate,
                       std::vector<float> data)
    : frames_(frames), height_(height), width_(width), frame_rate_(frame_rate), data_(std::move(data)) {
  if (frames_ < 2 || height_ < 1 || width_ < 1) throw InvalidArgument("clip needs t >= 2, h >= 1, w >= 1");
  if (!(frame_rate_ > 0.0)) throw InvalidArgument("clip frame rate must be positive");
  if (data_.size() != frames_ * height_ * width_ * kChannels) throw InvalidArgument("clip data size mismatch");
}

void ClipTensor::validate() const {
  for (float v : data_) {
    if (!std::isfinite(v)) throw InvalidData("clip contains a non-finite pixel");
  }
}

std::string_view to_string(SpatialAug aug) {
  switch (aug) {
    case SpatialAug::Rot0: return "rot0";
    case SpatialAug::Rot90: return "rot90";
    case SpatialAug::Rot180: return "rot180";
    case SpatialAug::Rot270: return "rot270";
    case SpatialAug::FlipH: return "flip_h";
    case SpatialAug::FlipV: return "flip_v";
  }
  return "unknown";
}

ClipTensor spatial_augment(const ClipTensor& clip, SpatialAug aug) {
  const std::size_t h = clip.height();
  const std::size_t w = clip.width();
  if ((aug == SpatialAug::Rot90 || aug == SpatialAug::Rot270) && h != w)
    throw InvalidArgument("90/270 degree rotation requires square frames");
  if (aug == SpatialAug::Rot0) return clip;

  ClipTensor out(clip.frames(), h, w, clip.frame_rate());
  // Source pixel for each destination pixel (i, j).
  auto source = [&](std::size_t i, std::size_t j) -> std::pair<std::size_t, std::size_t> {
    switch (aug) {
      case SpatialAug::Rot90: return {j, w - 1 - i};
      case SpatialAug::Rot180: return {h - 1 - i, w - 1 - j};
      case SpatialAug::Rot270: return {h - 1 - j, i};
      case SpatialAug::FlipH: return {i, w - 1 - j};
      case SpatialAug::FlipV: return {h - 1 - i, j};
      case SpatialAug::Rot0: break;
    }
    return {i, j};
  };
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto [si, sj] = source(i, j);
      for (std::size_t t = 0; t < clip.frames(); ++t) {
        for (std::size_t c = 0; c < ClipTensor::kChannels; ++c) out.at(t, i, j, c) = clip.at(t, si, sj, c);
      }
    }
  }
  return out;
}

SpatialAug pick_spatial_aug(Rng& rng) { return kAllSpatialAugs[rng.below(kAllSpatialAugs.size())]; }

std::size_t resampled_length(std::size_t n_in, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("resampling factor must be positive");
  const double n = std::round(r * static_cast<double>(n_in));
  if (n < 2.0) throw InvalidArgument("resampled signal would have fewer than 2 samples");
  return static_cast<std::size_t>(n);
}

std::vector<InterpTap> resample_taps(std::size_t n_in, double r) {
  if (n_in < 2) throw InvalidArgument("resampling needs at least 2 input samples");
  const std::size_t n_out = resampled_length(n_in, r);
  std::vector<InterpTap> taps(n_out);
  // Positions past the last sample extend the final segment linearly.
  const std::size_t last_left = n_in - 2;
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) / r;
    const auto left = std::min(static_cast<std::size_t>(std::floor(pos)), last_left);
    taps[k].left = left;
    taps[k].right = left + 1;
    taps[k].frac = pos - static_cast<double>(left);
  }
  return taps;
}

std::vector<double> resample_linear(const std::vector<double>& x, double r) {
  const auto taps = resample_taps(x.size(), r);
  std::vector<double> out(taps.size());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const auto& tap = taps[k];
    out[k] = tap.frac == 0.0 ? x[tap.left] : (1.0 - tap.frac) * x[tap.left] + tap.frac * x[tap.right];
  }
  return out;
}

TimeSeries frequency_resample(const TimeSeries& x, double r) {
  return TimeSeries(resample_linear(x.samples(), r), x.rate());
}

std::vector<double> fit_length(std::vector<double> x, std::size_t n) {
  if (x.empty()) throw InvalidArgument("fit_length on empty signal");
  x.resize(n, x.back());
  return x;
}

TimeSeries resample_roundtrip(const TimeSeries& x, double r,
                              const std::function<TimeSeries(const TimeSeries&)>& transform) {
  const TimeSeries forward = frequency_resample(x, r);
  const TimeSeries mapped = transform ? transform(forward) : forward;
  const TimeSeries back = frequency_resample(mapped, 1.0 / r);
  return TimeSeries(fit_length(back.samples(), x.size()), x.rate());
}

ClipTensor resample_clip(const ClipTensor& clip, double r) {
  const auto taps = resample_taps(clip.frames(), r);
  ClipTensor out(taps.size(), clip.height(), clip.width(), clip.frame_rate());
  const std::size_t frame = clip.frame_size();
  const auto& src = clip.data();
  auto& dst = out.data();
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const auto& tap = taps[k];
    const float* a = src.data() + tap.left * frame;
    const float* b = src.data() + tap.right * frame;
    float* o = dst.data() + k * frame;
    if (tap.frac == 0.0) {
      std::copy(a, a + frame, o);
      continue;
    }
    for (std::size_t e = 0; e < frame; ++e)
      o[e] = static_cast<float>((1.0 - tap.frac) * static_cast<double>(a[e]) + tap.frac * static_cast<double>(b[e]));
  }
  return out;
}

}  // namespace sfda
