#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sfda/binary_io.hpp"
#include "sfda/error.hpp"
#include "sfda/spectral.hpp"
#include "sfda/synth.hpp"
#include "sfda/synth_json.hpp"
#include "test_util.hpp"

using namespace sfda;

TEST_CASE("bvp peaks at the requested heart rate") {
  Rng rng(1);
  const BvpWaveform bvp = generate_bvp(10.0, 30.0, 72.0, 0.0, rng);
  CHECK(bvp.signal.size() == 300);
  CHECK(bvp.signal.rate() == 30.0);
  const double bin_bpm = 60.0 * 30.0 / static_cast<double>(default_fft_len(300));
  CHECK(std::abs(estimate_hr(bvp.signal) - 72.0) <= bin_bpm);
  for (double hr : bvp.hr_track) CHECK(hr == 72.0);
  CHECK(bvp.mean_hr() == doctest::Approx(72.0));
  for (double v : bvp.signal.samples()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("bvp is deterministic per seed") {
  Rng a(5), b(5), c(6);
  const auto x = generate_bvp(4.0, 30.0, 80.0, 0.5, a);
  const auto y = generate_bvp(4.0, 30.0, 80.0, 0.5, b);
  const auto z = generate_bvp(4.0, 30.0, 80.0, 0.5, c);
  CHECK(x.signal.samples() == y.signal.samples());
  CHECK(x.signal.samples() != z.signal.samples());
  CHECK(x.hr_track.back() > x.hr_track.front());
}

TEST_CASE("zero gain renders no pulse") {
  DomainSpec spec = default_source_spec();
  spec.gain = 0.0;
  spec.noise_std = 0.0;
  Rng rng(2);
  const auto bvp = generate_bvp(10.0, 30.0, 72.0, 0.0, rng);
  const auto clip = render_clip(bvp, spec, 8, 8, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto trace = pooled_trace(clip.clip, c);
    for (double v : trace.samples()) CHECK(v == doctest::Approx(kBaseColor[c]).epsilon(1e-6));
  }
}

TEST_CASE("uniform map renders the mixed pulse exactly") {
  DomainSpec spec = default_target_spec();
  spec.noise_std = 0.0;
  spec.flicker_amp = 0.0;
  Rng rng(3);
  const auto bvp = generate_bvp(3.0, spec.frame_rate, 70.0, 0.0, rng);
  const auto clip = render_clip(bvp, spec, 4, 4, rng, {.uniform_map = true});
  for (std::size_t c = 0; c < 3; ++c) {
    double mix = 0.0;
    for (std::size_t k = 0; k < 3; ++k) mix += spec.channel_mix[c][k] * kPulseSignature[k];
    const auto trace = pooled_trace(clip.clip, c);
    for (std::size_t t = 0; t < trace.size(); ++t) {
      const double expected = kBaseColor[c] + kPulseAmplitude * spec.gain * mix * bvp.signal.samples()[t];
      CHECK(std::abs(trace.samples()[t] - expected) < 1e-7);
    }
  }
}

TEST_CASE("source clips are recoverable by spatial averaging") {
  const auto clips = make_domain_dataset(default_source_spec(), 40, 10.0, true);
  std::size_t good = 0;
  for (const auto& c : clips) {
    const double est = estimate_hr(pooled_trace(c.clip, 1));
    if (std::abs(est - c.label->mean_hr()) <= 3.0) ++good;
  }
  CHECK(good >= 38);
}

TEST_CASE("datasets: labels, size, determinism") {
  const auto spec = default_source_spec();
  const auto a = make_domain_dataset(spec, 3, 2.0, true);
  const auto b = make_domain_dataset(spec, 3, 2.0, false);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].label.has_value());
    CHECK_FALSE(b[i].label.has_value());
    CHECK(a[i].clip == b[i].clip);
    CHECK(a[i].domain_id == spec.domain_id());
    CHECK(a[i].clip.height() == spec.frame_size);
    CHECK(a[i].clip.frames() == 60);
  }
  CHECK_FALSE(a[0].clip == a[1].clip);
  const auto one = make_domain_dataset(spec, 1, 2.0, true);
  CHECK(one.size() == 1);
  CHECK(one[0].clip == a[0].clip);
  CHECK_THROWS_AS(make_domain_dataset(spec, 0, 2.0, true), InvalidArgument);

  auto other = spec;
  other.seed = 99;
  CHECK_FALSE(make_domain_dataset(other, 1, 2.0, true)[0].clip == a[0].clip);
  CHECK(other.domain_id() != spec.domain_id());
  for (const auto& c : strip_labels(a)) CHECK_FALSE(c.label.has_value());
  CHECK(clips_of(a).size() == 3);
}

TEST_CASE("domain spec validation") {
  auto spec = default_source_spec();
  CHECK_NOTHROW(spec.validate());
  CHECK_NOTHROW(default_target_spec().validate());
  SUBCASE("reversed range") {
    spec.hr_lo_bpm = 100;
    spec.hr_hi_bpm = 90;
  }
  SUBCASE("out of band") { spec.hr_hi_bpm = 200; }
  SUBCASE("nyquist") { spec.frame_rate = 2.0; }
  SUBCASE("negative noise") { spec.noise_std = -1; }
  SUBCASE("mix rows") { spec.channel_mix[1][1] = 0.5; }
  SUBCASE("flicker") { spec.flicker_hz = -1.0; }
  SUBCASE("frame size") { spec.frame_size = 1; }
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("strength map: zero border, unit maximum, rotation") {
  const std::size_t n = 16;
  const auto m = strength_map(n, n);
  CHECK(*std::max_element(m.begin(), m.end()) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(m[i] == 0.0);
    CHECK(m[(n - 1) * n + i] == 0.0);
    CHECK(m[i * n] == 0.0);
    CHECK(m[i * n + n - 1] == 0.0);
  }
  for (double v : m) CHECK(v >= 0.0);
  const auto r = strength_map(n, n, 1);
  CHECK(r != m);
  const auto full = strength_map(n, n, 4);
  for (std::size_t k = 0; k < m.size(); ++k) CHECK(full[k] == doctest::Approx(m[k]));
}

TEST_CASE("rpgc round trip and decode errors") {
  test::TempDir dir("rpgc");
  auto clips = make_domain_dataset(default_source_spec(), 2, 1.0, true);
  save_clip(clips[0], dir / "a.rpgc");
  const auto back = load_clip(dir / "a.rpgc", clips[0].domain_id);
  CHECK(back.clip == clips[0].clip);
  REQUIRE(back.label.has_value());
  CHECK(back.label->signal.samples() == clips[0].label->signal.samples());
  CHECK(back.label->hr_track.empty());

  auto unlabeled = clips[1];
  unlabeled.label.reset();
  CHECK_FALSE(decode_clip(encode_clip(unlabeled)).label.has_value());

  auto bytes = encode_clip(clips[0]);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "RPGC"));
  SUBCASE("crc") {
    bytes[30] ^= 1;
    CHECK_THROWS_AS(decode_clip(bytes), FormatError);
  }
  SUBCASE("magic") {
    std::vector<std::uint8_t> p(bytes.begin(), bytes.end() - 4);
    p[0] = 'Q';
    CHECK_THROWS_AS(decode_clip(io::seal_with_crc(p)), FormatError);
  }
  SUBCASE("version") {
    std::vector<std::uint8_t> p(bytes.begin(), bytes.end() - 4);
    p[4] = 9;
    CHECK_THROWS_AS(decode_clip(io::seal_with_crc(p)), FormatError);
  }
  SUBCASE("truncated") {
    std::vector<std::uint8_t> p(bytes.begin(), bytes.end() - 12);
    CHECK_THROWS_AS(decode_clip(io::seal_with_crc(p)), FormatError);
  }
}

TEST_CASE("dataset directory round trip") {
  test::TempDir dir("dataset");
  const auto spec = default_target_spec();
  const auto clips = make_domain_dataset(spec, 3, 1.0, false);
  save_dataset(clips, spec, 1.0, dir.path());
  const auto manifest = load_manifest(dir.path());
  CHECK(manifest.n_clips == 3);
  CHECK(manifest.files.size() == 3);
  CHECK_FALSE(manifest.labeled);
  CHECK(manifest.domain_id == spec.domain_id());
  CHECK(manifest.spec.domain_id() == spec.domain_id());
  const auto back = load_dataset(dir.path());
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].clip == clips[i].clip);
    CHECK_FALSE(back[i].label.has_value());
    CHECK(back[i].domain_id == spec.domain_id());
  }
  std::filesystem::remove(dir / manifest.files[1]);
  CHECK_THROWS_AS(load_dataset(dir.path()), InvalidData);
}

TEST_CASE("domain spec json is strict and round trips") {
  const auto spec = default_target_spec();
  const DomainSpec back = parse_domain_spec(domain_spec_json(spec), default_source_spec(), "target");
  CHECK(back.domain_id() == spec.domain_id());
  nlohmann::json j = {{"gian", 1.0}};
  CHECK_THROWS_AS(parse_domain_spec(j, spec, "target"), ConfigError);
  j = {{"gain", "loud"}};
  CHECK_THROWS_AS(parse_domain_spec(j, spec, "target"), ConfigError);
  j = {{"gain", 0.5}};
  CHECK(parse_domain_spec(j, spec, "target").gain == 0.5);
}
