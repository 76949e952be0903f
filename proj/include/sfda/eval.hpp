#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfda/pipeline.hpp"
#include "sfda/spectral.hpp"
#include "sfda/synth.hpp"

namespace sfda {

// Per-window HR (bpm) over non-overlapping windows by default; a trailing
// partial window is dropped. Throws InvalidArgument when the signal is
// shorter than one window.
std::vector<double> windowed_hr(const TimeSeries& signal, double window_s = 30.0, double hop_s = 30.0,
                                HrBand band = {});

struct MetricsReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> pearson_r;  // absent on zero variance
  std::size_t n_windows = 0;
  std::vector<std::pair<double, double>> per_window;  // (predicted, label) bpm
};

MetricsReport compute_metrics(const std::vector<double>& preds, const std::vector<double>& labels);

// Windows of every clip pooled into one report. Labels come from the
// windowed PSD peak of the ground-truth waveform.
using SignalPredictor = std::function<TimeSeries(const ClipTensor&)>;
MetricsReport evaluate(const SignalPredictor& predict, const std::vector<LabeledClip>& clips, double window_s);
MetricsReport evaluate(const nn::ModelState& model, const std::vector<LabeledClip>& clips, double window_s);
MetricsReport evaluate(const AdaptedModel& model, const std::vector<LabeledClip>& clips, double window_s);

// Mean over clips of fwd_distance between the softmax spectra of prediction
// and label, in bpm of transport.
double mean_spectral_fwd(const SignalPredictor& predict, const std::vector<LabeledClip>& clips);

// One experiment method: a pretraining loss plus an optional adaptation.
struct Method {
  std::string name;
  PretrainLoss pretrain_loss = PretrainLoss::Fwd;
  std::optional<ConsistencyLoss> adapt_loss;  // absent: no adaptation
  std::optional<std::size_t> num_target_clips;
};

// no-adapt, no-adapt-kl, sfda-fwd, sfda-kl, sfda-time-wd, sfda-fwd-oneshot,
// sfda-fwd-negpearson, no-adapt-ce, sfda-ce.
Method method_by_name(const std::string& name);
std::vector<std::string> known_methods();

struct ExperimentSpec {
  std::vector<DomainSpec> sources = {default_source_spec()};
  std::vector<DomainSpec> targets = {default_target_spec()};
  std::vector<std::string> methods = {"no-adapt", "sfda-fwd"};
  std::vector<std::uint64_t> seeds = {0};
  std::size_t n_source_clips = 40;
  std::size_t n_target_clips = 20;
  double duration_s = 10.0;
  double window_s = 10.0;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  // When set, pretrained models are read from
  // <dir>/pretrained-<source>-<loss>-seed<seed>.sfda instead of trained.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t threads = 1;
};

struct ExperimentRow {
  std::string source;
  std::string target;
  std::string method;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double spectral_fwd_bpm = 0.0;  // mean_spectral_fwd of the evaluated model
};

// Seeded sub-streams per cell: the datasets, pretraining and adaptation of
// seed s derive from s only, so rows are identical however cells are
// scheduled.
std::vector<ExperimentRow> run_experiment(const ExperimentSpec& spec);

std::filesystem::path pretrained_checkpoint_path(const std::filesystem::path& dir, const std::string& source,
                                                 PretrainLoss loss, std::uint64_t seed);

// Per-seed dataset spec: the domain's own seed mixed with the run seed.
DomainSpec seeded_spec(const DomainSpec& spec, std::uint64_t run_seed);

inline constexpr const char* kReportHeader = "source,target,method,seed,n_windows,mae_bpm,rmse_bpm,pearson_r";
std::string format_report(const std::vector<ExperimentRow>& rows);

}  // namespace sfda
