#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "sfda/augment.hpp"
#include "sfda/error.hpp"
#include "sfda/rng.hpp"
#include "sfda/spectral.hpp"
#include "sfda/synth.hpp"

using namespace sfda;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

ClipTensor random_clip(Rng& rng, std::size_t t, std::size_t h, std::size_t w) {
  ClipTensor clip(t, h, w, 30.0);
  for (auto& v : clip.data()) v = static_cast<float>(rng.normal());
  return clip;
}

TimeSeries sinusoid(double hz, std::size_t n, double amp = 1.0, double rate = 30.0) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(kTwoPi * hz * static_cast<double>(i) / rate);
  return TimeSeries(std::move(s), rate);
}

double peak_hz(const TimeSeries& x) {
  const PowerSpectrum psd = band_psd(x, HrBand{0.1, 14.0});
  return hr_from_psd(psd) / 60.0;
}

double resolution_of(const TimeSeries& x) { return x.rate() / static_cast<double>(default_fft_len(x.size())); }

}  // namespace

TEST_CASE("spatial transform group identities") {
  Rng rng(1);
  const ClipTensor clip = random_clip(rng, 3, 5, 5);
  CHECK(spatial_augment(spatial_augment(clip, SpatialAug::Rot90), SpatialAug::Rot90) ==
        spatial_augment(clip, SpatialAug::Rot180));
  CHECK(spatial_augment(spatial_augment(clip, SpatialAug::FlipH), SpatialAug::FlipH) == clip);
  CHECK(spatial_augment(spatial_augment(clip, SpatialAug::FlipV), SpatialAug::FlipV) == clip);
  CHECK(spatial_augment(clip, SpatialAug::Rot0) == clip);
  ClipTensor r = clip;
  for (int i = 0; i < 4; ++i) r = spatial_augment(r, SpatialAug::Rot90);
  CHECK(r == clip);
  CHECK(spatial_augment(spatial_augment(clip, SpatialAug::Rot90), SpatialAug::Rot270) == clip);
}

TEST_CASE("Rot90 is counter-clockwise and flips mirror the named axis") {
  ClipTensor clip(2, 2, 2, 30.0);
  // Frame layout (channel 0): [[1, 2], [3, 4]].
  for (std::size_t t = 0; t < 2; ++t) {
    clip.at(t, 0, 0, 0) = 1;
    clip.at(t, 0, 1, 0) = 2;
    clip.at(t, 1, 0, 0) = 3;
    clip.at(t, 1, 1, 0) = 4;
  }
  const auto rot = spatial_augment(clip, SpatialAug::Rot90);
  CHECK(rot.at(1, 0, 0, 0) == 2);
  CHECK(rot.at(1, 0, 1, 0) == 4);
  CHECK(rot.at(1, 1, 0, 0) == 1);
  CHECK(rot.at(1, 1, 1, 0) == 3);
  const auto fh = spatial_augment(clip, SpatialAug::FlipH);
  CHECK(fh.at(0, 0, 0, 0) == 2);
  CHECK(fh.at(0, 1, 0, 0) == 4);
  const auto fv = spatial_augment(clip, SpatialAug::FlipV);
  CHECK(fv.at(0, 0, 0, 0) == 3);
  CHECK(fv.at(0, 0, 1, 0) == 4);
}

TEST_CASE("spatial transforms permute each frame's pixels and keep metadata") {
  Rng rng(2);
  const ClipTensor clip = random_clip(rng, 4, 6, 6);
  for (SpatialAug aug : kAllSpatialAugs) {
    const ClipTensor out = spatial_augment(clip, aug);
    CHECK(out.frames() == clip.frames());
    CHECK(out.frame_rate() == clip.frame_rate());
    CHECK(out.height() == 6);
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<float> a, b;
        for (std::size_t i = 0; i < 6; ++i)
          for (std::size_t j = 0; j < 6; ++j) {
            a.push_back(clip.at(t, i, j, c));
            b.push_back(out.at(t, i, j, c));
          }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
      }
    }
  }
}

TEST_CASE("quarter rotations need square frames") {
  Rng rng(3);
  const ClipTensor clip = random_clip(rng, 2, 4, 5);
  CHECK_THROWS_AS(spatial_augment(clip, SpatialAug::Rot90), InvalidArgument);
  CHECK_THROWS_AS(spatial_augment(clip, SpatialAug::Rot270), InvalidArgument);
  CHECK_NOTHROW(spatial_augment(clip, SpatialAug::Rot180));
  CHECK_NOTHROW(spatial_augment(clip, SpatialAug::FlipH));
}

TEST_CASE("pick_spatial_aug is uniform and reproducible") {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) CHECK(pick_spatial_aug(a) == pick_spatial_aug(b));
  Rng rng(5);
  std::map<SpatialAug, int> counts;
  for (int i = 0; i < 6000; ++i) ++counts[pick_spatial_aug(rng)];
  REQUIRE(counts.size() == 6);
  for (const auto& [aug, n] : counts) {
    CHECK(n >= 800);
    CHECK(n <= 1200);
  }
}

TEST_CASE("frequency_resample examples") {
  SUBCASE("1.2 Hz at r = 0.75 moves to 1.6 Hz") {
    const TimeSeries out = frequency_resample(sinusoid(1.2, 300), 0.75);
    CHECK(out.size() == 225);
    CHECK(out.rate() == 30.0);
    CHECK(std::abs(peak_hz(out) - 1.6) <= resolution_of(out));
  }
  SUBCASE("r = 1 is the identity") {
    const TimeSeries x = sinusoid(1.3, 100);
    const TimeSeries out = frequency_resample(x, 1.0);
    REQUIRE(out.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(out.samples()[i] - x.samples()[i]) <= 1e-12);
  }
  SUBCASE("1.0 Hz at r = 0.66") {
    const TimeSeries out = frequency_resample(sinusoid(1.0, 300), 0.66);
    CHECK(std::abs(peak_hz(out) - 1.0 / 0.66) <= resolution_of(out));
  }
  SUBCASE("output too short") { CHECK_THROWS_AS(frequency_resample(sinusoid(1.0, 2), 0.5), InvalidArgument); }
}

TEST_CASE("resampler protocol over the adaptation r grid") {
  for (double r : {0.66, 0.70, 0.75, 0.80}) {
    for (double f0 : {0.8, 1.2, 1.6, 2.0}) {
      const TimeSeries out = frequency_resample(sinusoid(f0, 300), r);
      CHECK(std::abs(peak_hz(out) - f0 / r) <= resolution_of(out));
    }
  }
}

TEST_CASE("sample k interpolates the input at k / r") {
  Rng rng(8);
  std::vector<double> s(40);
  for (auto& v : s) v = rng.normal();
  const double r = 0.7;
  const TimeSeries out = frequency_resample(TimeSeries(s, 30.0), r);
  CHECK(out.size() == static_cast<std::size_t>(std::lround(r * 40)));
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double pos = std::min(static_cast<double>(k) / r, 39.0);
    const auto left = static_cast<std::size_t>(std::floor(pos));
    const std::size_t right = std::min<std::size_t>(left + 1, 39);
    const double frac = pos - static_cast<double>(left);
    CHECK(out.samples()[k] == doctest::Approx((1 - frac) * s[left] + frac * s[right]).epsilon(1e-12));
  }
}

TEST_CASE("positions past the last sample extend the final segment") {
  const std::vector<double> ramp = {0.0, 1.0, 2.0, 3.0};
  const TimeSeries out = frequency_resample(TimeSeries(ramp, 30.0), 1.5);
  REQUIRE(out.size() == 6);
  // Sample 5 sits at position 10/3, past the last input sample at 3.
  for (std::size_t k = 0; k < out.size(); ++k)
    CHECK(out.samples()[k] == doctest::Approx(static_cast<double>(k) / 1.5).epsilon(1e-12));
  CHECK_THROWS_AS(frequency_resample(TimeSeries({1.0}, 30.0), 4.0), InvalidArgument);
}

TEST_CASE("frequency_resample is linear") {
  Rng rng(12);
  std::vector<double> x(64), y(64), z(64);
  for (std::size_t i = 0; i < 64; ++i) {
    x[i] = rng.normal();
    y[i] = rng.normal();
    z[i] = 2.5 * x[i] - 0.75 * y[i];
  }
  for (double r : {0.66, 0.73, 0.8, 1.3}) {
    const auto fx = frequency_resample(TimeSeries(x, 30.0), r);
    const auto fy = frequency_resample(TimeSeries(y, 30.0), r);
    const auto fz = frequency_resample(TimeSeries(z, 30.0), r);
    for (std::size_t i = 0; i < fz.size(); ++i)
      CHECK(std::abs(fz.samples()[i] - (2.5 * fx.samples()[i] - 0.75 * fy.samples()[i])) <= 1e-9);
  }
}

TEST_CASE("shifted in-band frequencies stay inside the band plus one bin") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const double f0 = rng.uniform(0.66, 2.0);
    const double r = rng.uniform(0.66, 0.80);
    CHECK(f0 / r < 3.05);
  }
}

TEST_CASE("resample_roundtrip examples") {
  const auto identity = [](const TimeSeries& s) { return s; };
  SUBCASE("identity transform stays within 2% of the amplitude") {
    const double amp = 1.7;
    const TimeSeries x = sinusoid(1.0, 300, amp);
    const TimeSeries back = resample_roundtrip(x, 0.75, identity);
    REQUIRE(back.size() == x.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back.samples()[i] - x.samples()[i]));
    CHECK(worst < 0.02 * amp);
  }
  SUBCASE("r = 1 is exact") {
    const TimeSeries x = sinusoid(1.2, 300);
    CHECK(resample_roundtrip(x, 1.0, identity).samples() == x.samples());
  }
  SUBCASE("doubling transform gives twice the input") {
    const TimeSeries x = sinusoid(1.0, 300);
    const auto twice = [](const TimeSeries& s) {
      std::vector<double> v = s.samples();
      for (auto& e : v) e *= 2.0;
      return TimeSeries(v, s.rate());
    };
    const TimeSeries back = resample_roundtrip(x, 0.7, twice);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back.samples()[i] - 2.0 * x.samples()[i]) < 0.04);
  }
  SUBCASE("length is restored for every r on the grid") {
    for (std::size_t n : {97u, 100u, 301u})
      for (double r : {0.66, 0.7, 0.75, 0.8}) CHECK(resample_roundtrip(sinusoid(1.0, n), r, identity).size() == n);
  }
}

TEST_CASE("roundtrip error stays under the two-stage linear interpolation bound") {
  // Each stage errs by at most amp * (w h)^2 / 8 on a sinusoid; the second
  // stage sees the tone at w / r per sample.
  const auto identity = [](const TimeSeries& s) { return s; };
  for (double f0 : {0.7, 1.0, 1.2, 1.5, 2.0}) {
    for (double r : {0.66, 0.7, 0.75, 0.8}) {
      const double w = kTwoPi * f0 / 30.0;
      const double bound = w * w / 8.0 * (1.0 + 1.0 / (r * r));
      const TimeSeries x = sinusoid(f0, 300);
      const TimeSeries back = resample_roundtrip(x, r, identity);
      double worst = 0.0;
      // The last two samples are extrapolated from the final segment.
      for (std::size_t i = 0; i + 2 < x.size(); ++i)
        worst = std::max(worst, std::abs(back.samples()[i] - x.samples()[i]));
      CHECK(worst <= bound);
    }
  }
}

TEST_CASE("roundtrip error shrinks as the sample count grows") {
  const auto identity = [](const TimeSeries& s) { return s; };
  auto error_at = [&](std::size_t n) {
    // Same 1.2 Hz tone sampled n times over 10 s.
    const double rate = static_cast<double>(n) / 10.0;
    const TimeSeries x = sinusoid(1.2, n, 1.0, rate);
    const TimeSeries back = resample_roundtrip(x, 0.75, identity);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(back.samples()[i] - x.samples()[i]));
    return worst;
  };
  double previous = error_at(150);
  for (std::size_t n : {300u, 600u, 1200u}) {
    const double e = error_at(n);
    CHECK(e < 0.6 * previous);
    previous = e;
  }
}

TEST_CASE("fit_length trims and edge-pads at the tail") {
  CHECK(fit_length({1, 2, 3}, 2) == std::vector<double>{1, 2});
  CHECK(fit_length({1, 2, 3}, 5) == std::vector<double>{1, 2, 3, 3, 3});
  CHECK(fit_length({1, 2}, 2) == std::vector<double>{1, 2});
}

TEST_CASE("resample_clip examples") {
  Rng rng(21);
  SUBCASE("r = 1 is the identity") {
    const ClipTensor clip = random_clip(rng, 10, 3, 3);
    CHECK(resample_clip(clip, 1.0) == clip);
  }
  SUBCASE("constant clip stays constant") {
    ClipTensor clip(20, 2, 2, 30.0);
    for (std::size_t t = 0; t < 20; ++t)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t c = 0; c < 3; ++c) clip.at(t, i, j, c) = static_cast<float>(0.1 * (i + 2 * j + 4 * c));
    const ClipTensor out = resample_clip(clip, 0.7);
    CHECK(out.frames() == 14);
    for (std::size_t t = 0; t < out.frames(); ++t)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(t, i, j, c) == clip.at(0, i, j, c));
  }
  SUBCASE("sinusoidal traces move to f0 / r") {
    const double f0 = 1.2;
    ClipTensor clip(300, 4, 4, 30.0);
    for (std::size_t t = 0; t < 300; ++t)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          for (std::size_t c = 0; c < 3; ++c)
            clip.at(t, i, j, c) = static_cast<float>(0.5 + 0.1 * std::sin(kTwoPi * f0 * static_cast<double>(t) / 30.0 +
                                                                          0.3 * static_cast<double>(i + j)));
    const ClipTensor out = resample_clip(clip, 0.75);
    const TimeSeries pooled = pooled_trace(out, 1);
    CHECK(std::abs(peak_hz(pooled) - f0 / 0.75) <= resolution_of(pooled));
  }
  SUBCASE("too short") {
    const ClipTensor clip = random_clip(rng, 2, 2, 2);
    CHECK_THROWS_AS(resample_clip(clip, 0.5), InvalidArgument);
  }
}
