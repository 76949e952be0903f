#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfda/clip.hpp"
#include "sfda/rng.hpp"
#include "sfda/spectral.hpp"

namespace sfda {

using ChannelMix = std::array<std::array<double, 3>, 3>;

inline constexpr ChannelMix kIdentityMix = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};

// Per-channel pulse amplitude before channel mixing (green-dominant, as for
// skin reflectance). The rendered pulse in channel c is
// kPulseAmplitude * gain * M * mix_c * bvp with
// mix_c = sum_k channel_mix[c][k] * kPulseSignature[k].
inline constexpr std::array<double, 3> kPulseSignature = {0.45, 1.0, 0.65};
// Pixel excursion of a unit BVP at full strength: the pulse is a ~2% intensity
// modulation, so noise_std and flicker_amp are in the same pixel units.
inline constexpr double kPulseAmplitude = 0.02;
inline constexpr std::array<double, 3> kBaseColor = {0.55, 0.45, 0.40};

inline constexpr double kSecondHarmonicAmplitude = 0.3;

// Synthetic stand-in for a dataset identity.
struct DomainSpec {
  std::string name = "source";
  double hr_lo_bpm = 55.0;
  double hr_hi_bpm = 95.0;
  double gain = 1.0;
  double noise_std = 0.002;  // pixel units
  ChannelMix channel_mix = kIdentityMix;
  double frame_rate = 30.0;
  std::optional<double> flicker_hz;
  double flicker_amp = 0.0;
  std::size_t frame_size = 16;  // square frames
  // Blob centres are placed at fixed fractions of the frame, rotated by this
  // many quarter turns (camera framing).
  int layout_quarter_turns = 0;
  std::uint64_t seed = 1;

  // Throws InvalidArgument when the HR range leaves the band, Nyquist is
  // violated, or the channel mix rows do not sum to 1.
  void validate(HrBand band = {}) const;
  // name + hash of every field.
  std::string domain_id() const;
};

DomainSpec default_source_spec();
DomainSpec default_target_spec();

struct BvpWaveform {
  TimeSeries signal;
  std::vector<double> hr_track;  // bpm per sample; empty when loaded from disk

  double mean_hr() const;
};

struct LabeledClip {
  ClipTensor clip;
  std::optional<BvpWaveform> label;
  std::string domain_id;
};

// Fundamental at the instantaneous HR plus a 0.3-amplitude second harmonic
// with small phase noise. Samples are rounded to single precision so the
// waveform round-trips through .rpgc unchanged.
BvpWaveform generate_bvp(double duration_s, double rate, double hr0_bpm, double drift_bpm_per_s, Rng& rng,
                         HrBand band = {});

// Spatial strength map M (two Gaussian blobs, zero border, max 1), h x w.
std::vector<double> strength_map(std::size_t h, std::size_t w, int quarter_turns = 0);

struct RenderOptions {
  bool uniform_map = false;  // M = 1 everywhere (test hook)
};

LabeledClip render_clip(const BvpWaveform& bvp, const DomainSpec& spec, std::size_t h, std::size_t w, Rng& rng,
                        RenderOptions options = {});

// HRs uniform over spec's range; clip i depends only on (spec, i, duration).
std::vector<LabeledClip> make_domain_dataset(const DomainSpec& spec, std::size_t n_clips, double duration_s,
                                             bool labeled);

std::vector<LabeledClip> strip_labels(std::vector<LabeledClip> clips);
std::vector<ClipTensor> clips_of(const std::vector<LabeledClip>& dataset);

// Uniform spatial average of one channel over every frame.
TimeSeries pooled_trace(const ClipTensor& clip, std::size_t channel);

// .rpgc container:
//   "RPGC" | u16 version (=1) | u32 t, h, w, c | f32 frame_rate |
//   f32 pixels (t-major) | u8 label flag [u32 length | f32 rate | f32 samples] |
//   u32 CRC32 of everything before it.
inline constexpr char kClipMagic[4] = {'R', 'P', 'G', 'C'};
inline constexpr std::uint16_t kClipVersion = 1;

std::vector<std::uint8_t> encode_clip(const LabeledClip& clip);
LabeledClip decode_clip(const std::vector<std::uint8_t>& bytes, const std::string& domain_id = {});

void save_clip(const LabeledClip& clip, const std::filesystem::path& path);
LabeledClip load_clip(const std::filesystem::path& path, const std::string& domain_id = {});

// Directory of clip_NNNN.rpgc files plus manifest.json.
struct DatasetManifest {
  std::string domain_id;
  DomainSpec spec;
  std::size_t n_clips = 0;
  double duration_s = 0.0;
  bool labeled = true;
  std::vector<std::string> files;
};

void save_dataset(const std::vector<LabeledClip>& clips, const DomainSpec& spec, double duration_s,
                  const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);
std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir);

}  // namespace sfda
