#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfda/augment.hpp"
#include "sfda/clip.hpp"
#include "sfda/nn/checkpoint.hpp"
#include "sfda/nn/model.hpp"
#include "sfda/nn/ops.hpp"
#include "sfda/spectral.hpp"
#include "sfda/synth.hpp"

namespace sfda {

enum class PretrainLoss { Fwd, FwdNegPearson, Kl, FrequencyCe };
enum class ConsistencyLoss { Fwd, Kl, TimeWd };

std::string_view to_string(PretrainLoss loss);
std::string_view to_string(ConsistencyLoss loss);
PretrainLoss parse_pretrain_loss(std::string_view name);
ConsistencyLoss parse_consistency_loss(std::string_view name);

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 3e-3;
  double weight_decay = 0.01;
  PretrainLoss loss = PretrainLoss::Fwd;
  std::uint64_t seed = 0;

  // epochs == 0 is allowed and returns the initialization.
  void validate() const;
};

struct AdaptConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 3e-3;
  double weight_decay = 0.01;
  double r_lo = 0.66;
  double r_hi = 0.80;
  std::optional<std::size_t> num_target_clips;  // first n clips; 1 = one-shot
  ConsistencyLoss loss = ConsistencyLoss::Fwd;
  std::uint64_t seed = 0;
  // Test hooks: pin the per-step draws (r may be 1 here, bypassing r_hi < 1).
  std::optional<SpatialAug> forced_aug;
  std::optional<double> forced_r;

  void validate() const;
};

// The four adapted parameter groups sharing one optimizer step counter.
struct AdaptedModel {
  nn::ModelConfig config;
  nn::Encoder encoder;          // E, middle branch
  nn::Encoder spatial_encoder;  // E_s
  nn::Encoder temporal_encoder; // E_t
  nn::Decoder decoder;          // D, shared
  std::uint64_t step_count = 0;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
};

// Independent copies of the pretrained encoder in all three branches; fresh
// optimizer moments.
AdaptedModel adapted_from_pretrained(const nn::ModelState& pretrained);

// The middle branch as a plain model (for evaluation and comparisons).
nn::ModelState middle_branch(const AdaptedModel& model);

struct BranchOutputs {
  TimeSeries f;
  TimeSeries f_s;
  TimeSeries f_t;
  SpectralDistribution F;
  SpectralDistribution F_s;
  SpectralDistribution F_t;
};

// Frozen evaluation of the three branches for one clip and one draw.
BranchOutputs branch_outputs(const AdaptedModel& model, const ClipTensor& clip, SpatialAug aug, double r);

// Consistency objective of BranchOutputs (FWD unless loss says otherwise).
struct ConsistencyTerms {
  double spatial = 0.0;
  double temporal = 0.0;
  double total() const { return spatial + temporal; }
};
ConsistencyTerms consistency_terms(const BranchOutputs& out, ConsistencyLoss loss = ConsistencyLoss::Fwd);

// Taped per-clip adaptation objective (spatial term + temporal term) on the
// shared grid; gradients reach all four parameter groups.
struct AdaptationLoss {
  nn::Tensor spatial;
  nn::Tensor temporal;
  nn::Tensor total;
};
AdaptationLoss adaptation_loss(AdaptedModel& model, const ClipTensor& clip, SpatialAug aug, double r,
                               const nn::SpectralGrid& grid, ConsistencyLoss loss = ConsistencyLoss::Fwd);

double neg_pearson_loss(const TimeSeries& pred, const TimeSeries& label);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string aug;
  double r = 1.0;
  double loss = 0.0;
  double spatial_term = 0.0;
  double temporal_term = 0.0;
};

struct PretrainResult {
  nn::ModelState model;
  std::vector<EpochRecord> log;
};

struct AdaptResult {
  AdaptedModel model;
  std::vector<StepRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;
using StepCallback = std::function<void(const StepRecord&)>;

// Supervised spectral pretraining on labeled source clips. Throws InvalidData
// when a clip has no label.
PretrainResult pretrain(const std::vector<LabeledClip>& source, const PretrainConfig& cfg,
                        const nn::ModelConfig& arch = {}, const EpochCallback& on_epoch = {});

// Source-free three-branch adaptation. The input surface carries clips only,
// so target labels are unreachable.
AdaptResult adapt(const nn::ModelState& pretrained, std::span<const ClipTensor> target, const AdaptConfig& cfg,
                  const StepCallback& on_step = {});
AdaptResult adapt(const nn::ModelState& pretrained, const std::vector<LabeledClip>& target, const AdaptConfig& cfg,
                  const StepCallback& on_step = {});

struct Inference {
  TimeSeries signal;
  double hr_bpm = 0.0;
};

// Middle branch only: D(E(clip)) and its band-restricted PSD peak.
Inference infer(const AdaptedModel& model, const ClipTensor& clip);
Inference infer(const nn::ModelState& model, const ClipTensor& clip);

// Adapted checkpoint: prefixes "E.", "E_s.", "E_t.", "D." plus "step_count".
std::vector<nn::NamedTensor> adapted_tensors(const AdaptedModel& model);
AdaptedModel adapted_from_tensors(const std::vector<nn::NamedTensor>& tensors);
void save_adapted(const AdaptedModel& model, const std::filesystem::path& path);
AdaptedModel load_adapted(const std::filesystem::path& path);

}  // namespace sfda
