#include "sfda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfda/error.hpp"
#include "sfda/log.hpp"
#include "sfda/nn/ops.hpp"
#include "sfda/transport.hpp"

namespace sfda {

using nn::Tensor;

std::string_view to_string(PretrainLoss loss) {
  switch (loss) {
    case PretrainLoss::Fwd: return "fwd";
    case PretrainLoss::FwdNegPearson: return "fwd+negpearson";
    case PretrainLoss::Kl: return "kl";
    case PretrainLoss::FrequencyCe: return "ce";
  }
  return "?";
}

std::string_view to_string(ConsistencyLoss loss) {
  switch (loss) {
    case ConsistencyLoss::Fwd: return "fwd";
    case ConsistencyLoss::Kl: return "kl";
    case ConsistencyLoss::TimeWd: return "time_wd";
  }
  return "?";
}

PretrainLoss parse_pretrain_loss(std::string_view name) {
  for (auto loss : {PretrainLoss::Fwd, PretrainLoss::FwdNegPearson, PretrainLoss::Kl, PretrainLoss::FrequencyCe})
    if (to_string(loss) == name) return loss;
  throw ConfigError("unknown pretraining loss '" + std::string(name) + "' (fwd, fwd+negpearson, kl, ce)");
}

ConsistencyLoss parse_consistency_loss(std::string_view name) {
  for (auto loss : {ConsistencyLoss::Fwd, ConsistencyLoss::Kl, ConsistencyLoss::TimeWd})
    if (to_string(loss) == name) return loss;
  throw ConfigError("unknown adaptation loss '" + std::string(name) + "' (fwd, kl, time_wd)");
}

void PretrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("pretrain batch_size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("pretrain lr must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("pretrain weight_decay must be non-negative");
}

void AdaptConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("adapt batch_size must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("adapt lr must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("adapt weight_decay must be non-negative");
  if (!(r_lo > 0.0 && r_lo <= r_hi && r_hi < 1.0)) throw InvalidArgument("adapt r range must satisfy 0 < lo <= hi < 1");
  if (num_target_clips && *num_target_clips < 1) throw InvalidArgument("adapt num_target_clips must be at least 1");
  if (forced_r && !(*forced_r > 0.0 && *forced_r <= 1.0)) throw InvalidArgument("forced r must lie in (0, 1]");
}

std::vector<nn::Parameter*> AdaptedModel::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto* group : {&encoder, &spatial_encoder, &temporal_encoder})
    for (auto* p : group->parameters()) out.push_back(p);
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

std::vector<const nn::Parameter*> AdaptedModel::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto* group : {&encoder, &spatial_encoder, &temporal_encoder})
    for (const auto* p : group->parameters()) out.push_back(p);
  for (const auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

namespace {

void reset_optimizer_state(std::vector<nn::Parameter*> params) {
  for (auto* p : params) {
    p->adam_m.assign(p->size(), 0.0);
    p->adam_v.assign(p->size(), 0.0);
    p->zero_grad();
  }
}

}  // namespace

AdaptedModel adapted_from_pretrained(const nn::ModelState& pretrained) {
  AdaptedModel m;
  m.config = pretrained.config;
  m.encoder = pretrained.encoder;
  m.spatial_encoder = pretrained.encoder;
  m.temporal_encoder = pretrained.encoder;
  m.decoder = pretrained.decoder;
  for (auto* e : {&m.encoder, &m.spatial_encoder, &m.temporal_encoder}) e->forward_count.reset();
  reset_optimizer_state(m.parameters());
  return m;
}

nn::ModelState middle_branch(const AdaptedModel& model) {
  nn::ModelState out;
  out.config = model.config;
  out.encoder = model.encoder;
  out.decoder = model.decoder;
  out.step_count = model.step_count;
  return out;
}

namespace {

Tensor spectrum(const Tensor& signal, const nn::SpectralGrid& grid) {
  return nn::softmax(nn::unit_max(nn::band_power(signal, grid)));
}

struct BranchTensors {
  Tensor f;
  Tensor f_s;
  Tensor f_t;
};

// Shared by the taped training step and the frozen diagnostics; the encoder
// constness selects trainable or frozen parameter binding.
template <typename Model>
BranchTensors run_branches(Model& m, const ClipTensor& clip, SpatialAug aug, double r) {
  nn::check_clip_matches(m.config, clip);
  const std::size_t length = clip.frames();
  BranchTensors out;
  out.f = nn::decode(m.decoder, nn::encode(m.encoder, nn::clip_tensor(clip)));
  out.f_s = nn::decode(m.decoder, nn::encode(m.spatial_encoder, nn::clip_tensor(spatial_augment(clip, aug))));
  const Tensor stretched = nn::decode(m.decoder, nn::encode(m.temporal_encoder, nn::clip_tensor(resample_clip(clip, r))));
  out.f_t = nn::fit_length(nn::resample(stretched, 1.0 / r), length);
  return out;
}

struct LossTerms {
  Tensor spatial;
  Tensor temporal;
};

LossTerms consistency(const BranchTensors& b, const nn::SpectralGrid& grid, ConsistencyLoss loss) {
  switch (loss) {
    case ConsistencyLoss::Fwd: {
      const Tensor F = spectrum(b.f, grid);
      return {nn::fwd_loss(F, spectrum(b.f_s, grid)), nn::fwd_loss(F, spectrum(b.f_t, grid))};
    }
    case ConsistencyLoss::Kl: {
      const Tensor F = spectrum(b.f, grid);
      return {nn::kl_loss(F, spectrum(b.f_s, grid)), nn::kl_loss(F, spectrum(b.f_t, grid))};
    }
    case ConsistencyLoss::TimeWd:
      return {nn::time_wd_loss(b.f, b.f_s), nn::time_wd_loss(b.f, b.f_t)};
  }
  throw InvalidArgument("unknown consistency loss");
}

TimeSeries to_series(const Tensor& t, double rate) {
  return TimeSeries(std::vector<double>(t.values().begin(), t.values().end()), rate);
}

SpectralDistribution to_distribution(const Tensor& t, const nn::SpectralGrid& grid) {
  return {grid.freqs(), std::vector<double>(t.values().begin(), t.values().end())};
}

void check_uniform_clips(std::span<const ClipTensor> clips, const char* what) {
  for (const auto& c : clips) {
    if (c.frames() != clips.front().frames() || c.height() != clips.front().height() ||
        c.width() != clips.front().width() || c.frame_rate() != clips.front().frame_rate())
      throw InvalidArgument(std::string(what) + " clips must share dimensions and frame rate");
  }
}

std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  return order;
}

}  // namespace

BranchOutputs branch_outputs(const AdaptedModel& model, const ClipTensor& clip, SpatialAug aug, double r) {
  nn::NoGradGuard no_grad;
  const BranchTensors b = run_branches(model, clip, aug, r);
  const nn::SpectralGrid grid(clip.frames(), clip.frame_rate());
  const double rate = clip.frame_rate();
  return {to_series(b.f, rate),
          to_series(b.f_s, rate),
          to_series(b.f_t, rate),
          to_distribution(spectrum(b.f, grid), grid),
          to_distribution(spectrum(b.f_s, grid), grid),
          to_distribution(spectrum(b.f_t, grid), grid)};
}

ConsistencyTerms consistency_terms(const BranchOutputs& out, ConsistencyLoss loss) {
  if (out.F.freqs != out.F_s.freqs || out.F.freqs != out.F_t.freqs)
    throw InvalidState("branch spectra are on different frequency grids");
  switch (loss) {
    case ConsistencyLoss::Fwd:
      return {fwd_distance(out.F.probs, out.F_s.probs), fwd_distance(out.F.probs, out.F_t.probs)};
    case ConsistencyLoss::Kl:
      return {kl_divergence(out.F.probs, out.F_s.probs), kl_divergence(out.F.probs, out.F_t.probs)};
    case ConsistencyLoss::TimeWd:
      return {time_domain_wd(out.f, out.f_s), time_domain_wd(out.f, out.f_t)};
  }
  throw InvalidArgument("unknown consistency loss");
}

AdaptationLoss adaptation_loss(AdaptedModel& model, const ClipTensor& clip, SpatialAug aug, double r,
                               const nn::SpectralGrid& grid, ConsistencyLoss loss) {
  if (grid.length() != clip.frames() || grid.rate() != clip.frame_rate())
    throw InvalidArgument("adaptation_loss: grid does not match the clip");
  const LossTerms terms = consistency(run_branches(model, clip, aug, r), grid, loss);
  return {terms.spatial, terms.temporal, nn::add(terms.spatial, terms.temporal)};
}

double neg_pearson_loss(const TimeSeries& pred, const TimeSeries& label) {
  if (pred.size() != label.size()) throw InvalidArgument("neg_pearson_loss: length mismatch");
  nn::NoGradGuard no_grad;
  return nn::neg_pearson(nn::constant({pred.size()}, pred.samples()), nn::constant({label.size()}, label.samples()))
      .item();
}

PretrainResult pretrain(const std::vector<LabeledClip>& source, const PretrainConfig& cfg,
                        const nn::ModelConfig& arch, const EpochCallback& on_epoch) {
  cfg.validate();
  if (source.empty()) throw InvalidArgument("pretrain: empty source dataset");
  const std::vector<ClipTensor> clips = clips_of(source);
  check_uniform_clips(clips, "source");
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (!source[i].label) throw InvalidData("pretrain: source clip " + std::to_string(i) + " has no label");
    const auto& s = source[i].label->signal;
    if (s.size() != clips[i].frames() || s.rate() != clips[i].frame_rate())
      throw InvalidData("pretrain: label of source clip " + std::to_string(i) + " does not match the clip");
  }

  nn::ModelConfig config = arch;
  config.height = clips.front().height();
  config.width = clips.front().width();
  PretrainResult result{nn::init_model(config, derive_seed(cfg.seed, "init")), {}};
  nn::ModelState& model = result.model;

  const nn::SpectralGrid grid(clips.front().frames(), clips.front().frame_rate());
  std::vector<Tensor> label_signal;
  std::vector<Tensor> label_dist;
  std::vector<std::size_t> label_bin;
  {
    nn::NoGradGuard no_grad;
    for (const auto& c : source) {
      const auto& s = c.label->signal.samples();
      label_signal.push_back(nn::constant({s.size()}, s));
      const Tensor power = nn::band_power(label_signal.back(), grid);
      const auto v = power.values();
      label_bin.push_back(static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()));
      label_dist.push_back(nn::softmax(nn::unit_max(power)));
    }
  }

  const nn::AdamWConfig opt{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  Rng order_rng(derive_seed(cfg.seed, "shuffle"));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(clips.size(), order_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> losses;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const Tensor f = nn::forward_tensor(model, clips[i]);
        Tensor loss;
        switch (cfg.loss) {
          case PretrainLoss::Fwd:
            loss = nn::fwd_loss(spectrum(f, grid), label_dist[i]);
            break;
          case PretrainLoss::FwdNegPearson:
            loss = nn::add(nn::fwd_loss(spectrum(f, grid), label_dist[i]), nn::neg_pearson(f, label_signal[i]));
            break;
          case PretrainLoss::Kl:
            loss = nn::kl_loss(label_dist[i], spectrum(f, grid));
            break;
          case PretrainLoss::FrequencyCe:
            loss = nn::frequency_ce_loss(spectrum(f, grid), label_bin[i]);
            break;
        }
        losses.push_back(loss);
      }
      const Tensor batch_loss = nn::mean(losses);
      epoch_loss += batch_loss.item() * static_cast<double>(stop - start);
      nn::backward(batch_loss);
      nn::adamw_step(model, opt);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(clips.size())};
    log_info("pretrain epoch " + std::to_string(epoch) + " " + std::string(to_string(cfg.loss)) + " loss " +
             std::to_string(rec.mean_loss));
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

AdaptResult adapt(const nn::ModelState& pretrained, std::span<const ClipTensor> target, const AdaptConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  if (target.empty()) throw InvalidArgument("adapt: empty target dataset");
  if (cfg.num_target_clips) {
    if (*cfg.num_target_clips > target.size())
      throw InvalidArgument("adapt: num_target_clips exceeds the " + std::to_string(target.size()) +
                            " available target clips");
    target = target.first(*cfg.num_target_clips);
  }
  check_uniform_clips(target, "target");
  for (const auto& c : target) nn::check_clip_matches(pretrained.config, c);

  AdaptResult result{adapted_from_pretrained(pretrained), {}};
  AdaptedModel& model = result.model;
  const nn::SpectralGrid grid(target.front().frames(), target.front().frame_rate());
  const nn::AdamWConfig opt{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  Rng order_rng(derive_seed(cfg.seed, "shuffle"));
  Rng draw_rng(derive_seed(cfg.seed, "draws"));

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_order(target.size(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      // One spatial augmentation and one r per step, shared by the batch.
      const SpatialAug drawn_aug = pick_spatial_aug(draw_rng);
      const double drawn_r = draw_rng.uniform(cfg.r_lo, cfg.r_hi);
      const SpatialAug aug = cfg.forced_aug.value_or(drawn_aug);
      const double r = cfg.forced_r.value_or(drawn_r);

      std::vector<Tensor> losses;
      double spatial = 0.0;
      double temporal = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const AdaptationLoss terms = adaptation_loss(model, target[order[b]], aug, r, grid, cfg.loss);
        spatial += terms.spatial.item();
        temporal += terms.temporal.item();
        losses.push_back(terms.total);
      }
      const Tensor batch_loss = nn::mean(losses);
      const double n = static_cast<double>(stop - start);
      StepRecord rec{step, epoch, std::string(to_string(aug)), r, batch_loss.item(), spatial / n, temporal / n};
      nn::backward(batch_loss);
      nn::adamw_step(model.parameters(), model.step_count, opt);
      result.log.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return result;
}

AdaptResult adapt(const nn::ModelState& pretrained, const std::vector<LabeledClip>& target, const AdaptConfig& cfg,
                  const StepCallback& on_step) {
  const std::vector<ClipTensor> clips = clips_of(target);
  return adapt(pretrained, std::span<const ClipTensor>(clips), cfg, on_step);
}

Inference infer(const nn::ModelState& model, const ClipTensor& clip) {
  TimeSeries signal = nn::forward(model, clip);
  const double hr = estimate_hr(signal);
  return {std::move(signal), hr};
}

Inference infer(const AdaptedModel& model, const ClipTensor& clip) {
  nn::check_clip_matches(model.config, clip);
  nn::NoGradGuard no_grad;
  const Tensor out = nn::decode(model.decoder, nn::encode(model.encoder, nn::clip_tensor(clip)));
  TimeSeries signal = to_series(out, clip.frame_rate());
  const double hr = estimate_hr(signal);
  return {std::move(signal), hr};
}

std::vector<nn::NamedTensor> adapted_tensors(const AdaptedModel& model) {
  std::vector<nn::NamedTensor> out;
  nn::append_parameters(out, "E.", model.encoder.parameters());
  nn::append_parameters(out, "E_s.", model.spatial_encoder.parameters());
  nn::append_parameters(out, "E_t.", model.temporal_encoder.parameters());
  nn::append_parameters(out, "D.", model.decoder.parameters());
  out.push_back(nn::scalar_tensor("step_count", static_cast<double>(model.step_count)));
  return out;
}

AdaptedModel adapted_from_tensors(const std::vector<nn::NamedTensor>& tensors) {
  AdaptedModel m;
  m.config = nn::infer_model_config(tensors, "E.", "D.");
  m.encoder = nn::load_encoder(tensors, "E.");
  m.spatial_encoder = nn::load_encoder(tensors, "E_s.");
  m.temporal_encoder = nn::load_encoder(tensors, "E_t.");
  m.decoder = nn::load_decoder(tensors, "D.");
  m.step_count = static_cast<std::uint64_t>(nn::scalar_value(tensors, "step_count"));
  return m;
}

void save_adapted(const AdaptedModel& model, const std::filesystem::path& path) {
  nn::save_tensors(path, adapted_tensors(model));
}

AdaptedModel load_adapted(const std::filesystem::path& path) { return adapted_from_tensors(nn::load_tensors(path)); }

}  // namespace sfda
