#include "sfda/synth.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

#include "sfda/binary_io.hpp"
#include "sfda/error.hpp"
#include "sfda/synth_json.hpp"

namespace sfda {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPhaseNoiseStd = 0.01;  // rad per sample, random walk
constexpr double kMixRowTolerance = 1e-9;
constexpr double kBlobSigma = 0.15;  // fraction of the frame side

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool in_band(double bpm, HrBand band) { return bpm / 60.0 >= band.lo && bpm / 60.0 <= band.hi; }

void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) throw InvalidArgument(std::string("domain spec field '") + field + "' is not finite");
}

}  // namespace

void DomainSpec::validate(HrBand band) const {
  require_finite(hr_lo_bpm, "hr_lo_bpm");
  require_finite(hr_hi_bpm, "hr_hi_bpm");
  require_finite(gain, "gain");
  require_finite(noise_std, "noise_std");
  require_finite(frame_rate, "frame_rate");
  require_finite(flicker_amp, "flicker_amp");
  if (hr_lo_bpm > hr_hi_bpm) throw InvalidArgument("domain '" + name + "': hr range is reversed");
  if (!in_band(hr_lo_bpm, band) || !in_band(hr_hi_bpm, band))
    throw InvalidArgument("domain '" + name + "': hr range leaves the HR band");
  if (frame_rate < 2.0 * hr_hi_bpm / 60.0) throw InvalidArgument("domain '" + name + "': frame rate below Nyquist");
  if (gain < 0.0 || noise_std < 0.0 || flicker_amp < 0.0)
    throw InvalidArgument("domain '" + name + "': gain, noise_std and flicker_amp must be non-negative");
  if (flicker_hz && !(*flicker_hz > 0.0 && std::isfinite(*flicker_hz)))
    throw InvalidArgument("domain '" + name + "': flicker_hz must be positive");
  if (frame_size < 2) throw InvalidArgument("domain '" + name + "': frame_size must be at least 2");
  for (const auto& row : channel_mix) {
    double sum = 0.0;
    for (double v : row) {
      require_finite(v, "channel_mix");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kMixRowTolerance)
      throw InvalidArgument("domain '" + name + "': channel_mix rows must sum to 1");
  }
}

std::string DomainSpec::domain_id() const {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(domain_spec_json(*this).dump())));
  return name + "-" + hex;
}

DomainSpec default_source_spec() {
  DomainSpec spec;
  spec.name = "source";
  spec.seed = 1;
  return spec;
}

DomainSpec default_target_spec() {
  DomainSpec spec;
  spec.name = "target";
  spec.hr_lo_bpm = 55.0;
  spec.hr_hi_bpm = 95.0;
  spec.gain = 0.4;
  spec.noise_std = 0.1;
  spec.channel_mix = {{{0.7, 0.2, 0.1}, {0.15, 0.7, 0.15}, {0.1, 0.3, 0.6}}};
  spec.flicker_hz = 0.25;
  spec.flicker_amp = 0.001;
  spec.seed = 2;
  return spec;
}

double BvpWaveform::mean_hr() const {
  if (hr_track.empty()) return estimate_hr(signal);
  double sum = 0.0;
  for (double v : hr_track) sum += v;
  return sum / static_cast<double>(hr_track.size());
}

BvpWaveform generate_bvp(double duration_s, double rate, double hr0_bpm, double drift_bpm_per_s, Rng& rng,
                         HrBand band) {
  if (!(duration_s > 0.0) || !(rate > 0.0)) throw InvalidArgument("generate_bvp: duration and rate must be positive");
  const double hr_end = hr0_bpm + drift_bpm_per_s * duration_s;
  if (!in_band(hr0_bpm, band) || !in_band(hr_end, band))
    throw InvalidArgument("generate_bvp: heart rate leaves the HR band");
  if (rate < 2.0 * std::max(hr0_bpm, hr_end) / 60.0) throw InvalidArgument("generate_bvp: rate below Nyquist");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  if (n < 2) throw InvalidArgument("generate_bvp: fewer than two samples");

  std::vector<double> samples(n);
  std::vector<double> track(n);
  double phase = rng.uniform(0.0, kTwoPi);
  const double harmonic_offset = rng.uniform(0.0, kTwoPi);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / rate;
    track[k] = hr0_bpm + drift_bpm_per_s * t;
    const double v = std::sin(phase) + kSecondHarmonicAmplitude * std::sin(2.0 * phase + harmonic_offset);
    samples[k] = static_cast<double>(static_cast<float>(v));
    phase += kTwoPi * track[k] / 60.0 / rate + kPhaseNoiseStd * rng.normal();
  }
  return {TimeSeries(std::move(samples), rate), std::move(track)};
}

std::vector<double> strength_map(std::size_t h, std::size_t w, int quarter_turns) {
  if (h < 1 || w < 1) throw InvalidArgument("strength_map: empty frame");
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns % 2 == 1 && h != w) throw InvalidArgument("strength_map: quarter turns need square frames");
  const double hh = static_cast<double>(h);
  const double ww = static_cast<double>(w);
  const double centres[2][2] = {{0.3 * hh, 0.3 * ww}, {0.7 * hh, 0.5 * ww}};
  const double sy = kBlobSigma * hh;
  const double sx = kBlobSigma * ww;

  std::vector<double> base(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (i == 0 || j == 0 || i + 1 == h || j + 1 == w) continue;  // zero border
      const double y = static_cast<double>(i) + 0.5;
      const double x = static_cast<double>(j) + 0.5;
      double v = 0.0;
      for (const auto& c : centres) {
        const double dy = (y - c[0]) / sy;
        const double dx = (x - c[1]) / sx;
        v += std::exp(-0.5 * (dy * dy + dx * dx));
      }
      base[i * w + j] = v;
    }
  }
  double peak = 0.0;
  for (double v : base) peak = std::max(peak, v);
  if (peak > 0.0)
    for (double& v : base) v /= peak;

  std::vector<double> out = base;
  // Counter-clockwise quarter turns, same pixel mapping as the Rot90 augmentation.
  for (int r = 0; r < turns; ++r) {
    std::vector<double> next(h * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) next[i * w + j] = out[j * w + (w - 1 - i)];
    out = std::move(next);
  }
  return out;
}

LabeledClip render_clip(const BvpWaveform& bvp, const DomainSpec& spec, std::size_t h, std::size_t w, Rng& rng,
                        RenderOptions options) {
  if (h != w) throw InvalidArgument("render_clip: frames must be square");
  if (h < 2) throw InvalidArgument("render_clip: frames must be at least 2x2");
  if (bvp.signal.rate() != spec.frame_rate)
    throw InvalidArgument("render_clip: waveform rate differs from the domain frame rate");
  spec.validate();

  const std::vector<double> strength =
      options.uniform_map ? std::vector<double>(h * w, 1.0) : strength_map(h, w, spec.layout_quarter_turns);
  std::array<double, 3> mix{};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 3; ++k) mix[c] += spec.channel_mix[c][k] * kPulseSignature[k];

  const std::size_t t_len = bvp.signal.size();
  const double flicker_phase = rng.uniform(0.0, kTwoPi);
  ClipTensor clip(t_len, h, w, spec.frame_rate);
  const auto& pulse = bvp.signal.samples();
  for (std::size_t t = 0; t < t_len; ++t) {
    double flicker = 0.0;
    if (spec.flicker_hz && spec.flicker_amp > 0.0) {
      const double time = static_cast<double>(t) / spec.frame_rate;
      flicker = spec.flicker_amp * std::sin(kTwoPi * *spec.flicker_hz * time + flicker_phase);
    }
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double pulse_px = kPulseAmplitude * spec.gain * strength[i * w + j] * pulse[t];
        for (std::size_t c = 0; c < 3; ++c) {
          double v = kBaseColor[c] + pulse_px * mix[c] + flicker;
          if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
          clip.at(t, i, j, c) = static_cast<float>(v);
        }
      }
    }
  }
  return {std::move(clip), bvp, spec.domain_id()};
}

std::vector<LabeledClip> make_domain_dataset(const DomainSpec& spec, std::size_t n_clips, double duration_s,
                                             bool labeled) {
  if (n_clips < 1) throw InvalidArgument("make_domain_dataset: n_clips must be at least 1");
  spec.validate();
  const std::uint64_t stream = derive_seed(spec.seed, "clips");
  std::vector<LabeledClip> out;
  out.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    Rng rng(derive_seed(stream, static_cast<std::uint64_t>(i)));
    const double hr = rng.uniform(spec.hr_lo_bpm, spec.hr_hi_bpm);
    BvpWaveform bvp = generate_bvp(duration_s, spec.frame_rate, hr, 0.0, rng);
    LabeledClip clip = render_clip(bvp, spec, spec.frame_size, spec.frame_size, rng);
    if (!labeled) clip.label.reset();
    out.push_back(std::move(clip));
  }
  return out;
}

std::vector<LabeledClip> strip_labels(std::vector<LabeledClip> clips) {
  for (auto& c : clips) c.label.reset();
  return clips;
}

std::vector<ClipTensor> clips_of(const std::vector<LabeledClip>& dataset) {
  std::vector<ClipTensor> out;
  out.reserve(dataset.size());
  for (const auto& c : dataset) out.push_back(c.clip);
  return out;
}

TimeSeries pooled_trace(const ClipTensor& clip, std::size_t channel) {
  if (channel >= ClipTensor::kChannels) throw InvalidArgument("pooled_trace: channel out of range");
  const std::size_t pixels = clip.height() * clip.width();
  std::vector<double> out(clip.frames(), 0.0);
  for (std::size_t t = 0; t < clip.frames(); ++t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < clip.height(); ++i)
      for (std::size_t j = 0; j < clip.width(); ++j) sum += clip.at(t, i, j, channel);
    out[t] = sum / static_cast<double>(pixels);
  }
  return TimeSeries(std::move(out), clip.frame_rate());
}

// ---- .rpgc container ----

std::vector<std::uint8_t> encode_clip(const LabeledClip& clip) {
  const ClipTensor& c = clip.clip;
  io::ByteWriter w;
  w.put_bytes(std::string_view(kClipMagic, 4));
  w.put_u16(kClipVersion);
  w.put_u32(static_cast<std::uint32_t>(c.frames()));
  w.put_u32(static_cast<std::uint32_t>(c.height()));
  w.put_u32(static_cast<std::uint32_t>(c.width()));
  w.put_u32(static_cast<std::uint32_t>(c.channels()));
  w.put_f32(static_cast<float>(c.frame_rate()));
  for (float v : c.data()) w.put_f32(v);
  if (clip.label) {
    const TimeSeries& s = clip.label->signal;
    if (s.size() != c.frames() || s.rate() != c.frame_rate())
      throw InvalidData("encode_clip: label does not match the clip length and rate");
    w.put_u8(1);
    w.put_u32(static_cast<std::uint32_t>(s.size()));
    w.put_f32(static_cast<float>(s.rate()));
    for (double v : s.samples()) w.put_f32(static_cast<float>(v));
  } else {
    w.put_u8(0);
  }
  return io::seal_with_crc(w.take());
}

LabeledClip decode_clip(const std::vector<std::uint8_t>& bytes, const std::string& domain_id) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kClipMagic, 4) != 0)
    throw FormatError("not an RPGC clip (bad magic)");
  io::ByteReader r(io::verify_crc(bytes));
  r.get_string(4);
  const auto version = r.get_u16();
  if (version != kClipVersion) throw FormatError("unsupported clip version " + std::to_string(version));
  const std::size_t t = r.get_u32();
  const std::size_t h = r.get_u32();
  const std::size_t w = r.get_u32();
  const std::size_t c = r.get_u32();
  if (c != ClipTensor::kChannels) throw FormatError("clip has " + std::to_string(c) + " channels, expected 3");
  if (t < 2 || h < 1 || w < 1) throw FormatError("clip has degenerate dimensions");
  const double rate = r.get_f32();
  if (!(rate > 0.0)) throw FormatError("clip frame rate must be positive");
  const std::size_t count = t * h * w * c;
  if (count > r.remaining() / 4) throw FormatError("clip pixel data is truncated");
  std::vector<float> pixels(count);
  for (auto& v : pixels) v = r.get_f32();
  ClipTensor clip(t, h, w, rate, std::move(pixels));
  clip.validate();

  std::optional<BvpWaveform> label;
  const auto flag = r.get_u8();
  if (flag == 1) {
    const std::size_t n = r.get_u32();
    const double label_rate = r.get_f32();
    if (n != t || label_rate != rate) throw FormatError("clip label does not match the clip length and rate");
    if (n > r.remaining() / 4) throw FormatError("clip label is truncated");
    std::vector<double> samples(n);
    for (auto& v : samples) v = r.get_f32();
    label = BvpWaveform{TimeSeries(std::move(samples), label_rate), {}};
  } else if (flag != 0) {
    throw FormatError("clip label flag must be 0 or 1");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after clip payload");
  return {std::move(clip), std::move(label), domain_id};
}

void save_clip(const LabeledClip& clip, const std::filesystem::path& path) { io::write_file(path, encode_clip(clip)); }

LabeledClip load_clip(const std::filesystem::path& path, const std::string& domain_id) {
  return decode_clip(io::read_file(path), domain_id);
}

// ---- JSON ----

nlohmann::json domain_spec_json(const DomainSpec& spec) {
  nlohmann::json mix = nlohmann::json::array();
  for (const auto& row : spec.channel_mix) mix.push_back({row[0], row[1], row[2]});
  return {
      {"name", spec.name},
      {"hr_range", {spec.hr_lo_bpm, spec.hr_hi_bpm}},
      {"gain", spec.gain},
      {"noise_std", spec.noise_std},
      {"channel_mix", mix},
      {"frame_rate", spec.frame_rate},
      {"flicker_hz", spec.flicker_hz ? nlohmann::json(*spec.flicker_hz) : nlohmann::json(nullptr)},
      {"flicker_amp", spec.flicker_amp},
      {"frame_size", spec.frame_size},
      {"layout_quarter_turns", spec.layout_quarter_turns},
      {"seed", spec.seed},
  };
}

DomainSpec parse_domain_spec(const nlohmann::json& j, const DomainSpec& defaults, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + " must be an object");
  DomainSpec spec = defaults;
  for (const auto& [key, value] : j.items()) {
    const std::string where = context + "." + key;
    try {
      if (key == "name") {
        spec.name = value.get<std::string>();
      } else if (key == "hr_range") {
        if (!value.is_array() || value.size() != 2) throw ConfigError(where + " must be [lo, hi]");
        spec.hr_lo_bpm = value[0].get<double>();
        spec.hr_hi_bpm = value[1].get<double>();
      } else if (key == "gain") {
        spec.gain = value.get<double>();
      } else if (key == "noise_std") {
        spec.noise_std = value.get<double>();
      } else if (key == "channel_mix") {
        if (!value.is_array() || value.size() != 3) throw ConfigError(where + " must be a 3x3 array");
        for (std::size_t r = 0; r < 3; ++r) {
          if (!value[r].is_array() || value[r].size() != 3) throw ConfigError(where + " must be a 3x3 array");
          for (std::size_t c = 0; c < 3; ++c) spec.channel_mix[r][c] = value[r][c].get<double>();
        }
      } else if (key == "frame_rate") {
        spec.frame_rate = value.get<double>();
      } else if (key == "flicker_hz") {
        spec.flicker_hz = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      } else if (key == "flicker_amp") {
        spec.flicker_amp = value.get<double>();
      } else if (key == "frame_size") {
        spec.frame_size = value.get<std::size_t>();
      } else if (key == "layout_quarter_turns") {
        spec.layout_quarter_turns = value.get<int>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown key " + where);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return spec;
}

// ---- dataset directories ----

namespace {

constexpr const char* kManifestName = "manifest.json";

std::string clip_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04zu.rpgc", i);
  return buf;
}

}  // namespace

void save_dataset(const std::vector<LabeledClip>& clips, const DomainSpec& spec, double duration_s,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  bool labeled = !clips.empty();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string name = clip_file_name(i);
    save_clip(clips[i], dir / name);
    files.push_back(name);
    labeled = labeled && clips[i].label.has_value();
  }
  const nlohmann::json manifest = {
      {"domain_id", spec.domain_id()},
      {"seed", spec.seed},
      {"spec", domain_spec_json(spec)},
      {"n_clips", clips.size()},
      {"duration_s", duration_s},
      {"labeled", labeled},
      {"files", files},
  };
  io::write_text_file(dir / kManifestName, manifest.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const std::string text = io::read_text_file(dir / kManifestName);
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.domain_id = j.at("domain_id").get<std::string>();
    m.spec = parse_domain_spec(j.at("spec"), DomainSpec{}, "manifest.spec");
    m.n_clips = j.at("n_clips").get<std::size_t>();
    m.duration_s = j.at("duration_s").get<double>();
    m.labeled = j.at("labeled").get<bool>();
    m.files = j.at("files").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (m.files.size() != m.n_clips) throw FormatError("manifest in " + dir.string() + " lists the wrong clip count");
  for (const auto& f : m.files) {
    if (f.find('/') != std::string::npos || f.find("..") != std::string::npos)
      throw FormatError("manifest in " + dir.string() + " names a file outside the dataset: " + f);
  }
  return m;
}

std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir) {
  io::notify_read(dir);
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  const DatasetManifest m = load_manifest(dir);
  std::vector<LabeledClip> out;
  out.reserve(m.files.size());
  for (const auto& f : m.files) out.push_back(load_clip(dir / f, m.domain_id));
  return out;
}

}  // namespace sfda
