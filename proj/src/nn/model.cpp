#include "sfda/nn/model.hpp"

#include <cmath>

#include "sfda/error.hpp"
#include "sfda/nn/ops.hpp"

namespace sfda::nn {

namespace {

Conv1dParams make_conv(const std::string& prefix, std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
  Conv1dParams conv{Parameter(prefix + ".kernel", {k, cin, cout}), Parameter(prefix + ".bias", {cout})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * cin));
  for (double& v : conv.kernel.value) v = to_float_grid(rng.uniform(-bound, bound));
  for (double& v : conv.bias.value) v = to_float_grid(rng.uniform(-bound, bound));
  return conv;
}

// Binds a parameter either as a trainable leaf or as a frozen constant.
Tensor bind(Parameter& p) { return parameter(p); }
Tensor bind(const Parameter& p) { return frozen(p); }

template <typename Enc>
Tensor encode_impl(Enc& encoder, const Tensor& clip) {
  encoder.forward_count.bump();
  const Tensor weights = softmax(bind(encoder.spatial_logits));
  Tensor x = spatial_pool(clip, weights);
  x = standardize(x);
  x = tanh(conv1d(x, bind(encoder.conv1.kernel), bind(encoder.conv1.bias)));
  return tanh(conv1d(x, bind(encoder.conv2.kernel), bind(encoder.conv2.bias)));
}

template <typename Dec>
Tensor decode_impl(Dec& decoder, const Tensor& features) {
  Tensor x = tanh(conv1d(features, bind(decoder.conv1.kernel), bind(decoder.conv1.bias)));
  x = conv1d(x, bind(decoder.conv2.kernel), bind(decoder.conv2.bias));
  return reshape(x, {x.shape()[0]});
}

}  // namespace

std::vector<Parameter*> Encoder::parameters() {
  return {&spatial_logits, &conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias};
}
std::vector<const Parameter*> Encoder::parameters() const {
  return {&spatial_logits, &conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias};
}

std::vector<double> Encoder::spatial_weights() const { return sfda::softmax(spatial_logits.value); }

std::vector<Parameter*> Decoder::parameters() { return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias}; }
std::vector<const Parameter*> Decoder::parameters() const {
  return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias};
}

std::vector<Parameter*> ModelState::parameters() {
  auto out = encoder.parameters();
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}
std::vector<const Parameter*> ModelState::parameters() const {
  auto out = encoder.parameters();
  for (const auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

Encoder make_encoder(const ModelConfig& config, Rng& rng) {
  Encoder enc;
  // Zero logits give a uniform attention map.
  enc.spatial_logits = Parameter("spatial_logits", {config.height, config.width});
  enc.conv1 = make_conv("conv1", config.kernel, ClipTensor::kChannels, config.enc_channels1, rng);
  enc.conv2 = make_conv("conv2", config.kernel, config.enc_channels1, config.enc_channels2, rng);
  return enc;
}

Decoder make_decoder(const ModelConfig& config, Rng& rng) {
  Decoder dec;
  dec.conv1 = make_conv("conv1", config.kernel, config.enc_channels2, config.dec_channels, rng);
  dec.conv2 = make_conv("conv2", config.kernel, config.dec_channels, 1, rng);
  return dec;
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.kernel % 2 == 0) throw InvalidArgument("model kernel length must be odd");
  if (config.height == 0 || config.width == 0) throw InvalidArgument("model frame dims must be positive");
  Rng rng(seed);
  ModelState model;
  model.config = config;
  model.encoder = make_encoder(config, rng);
  model.decoder = make_decoder(config, rng);
  return model;
}

std::size_t parameter_count(const std::vector<const Parameter*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

Tensor encode(Encoder& encoder, const Tensor& clip) { return encode_impl(encoder, clip); }
Tensor encode(const Encoder& encoder, const Tensor& clip) { return encode_impl(encoder, clip); }
Tensor decode(Decoder& decoder, const Tensor& features) { return decode_impl(decoder, features); }
Tensor decode(const Decoder& decoder, const Tensor& features) { return decode_impl(decoder, features); }

void check_clip_matches(const ModelConfig& config, const ClipTensor& clip) {
  if (clip.height() != config.height || clip.width() != config.width)
    throw InvalidArgument("clip frames are " + std::to_string(clip.height()) + "x" + std::to_string(clip.width()) +
                          " but the model expects " + std::to_string(config.height) + "x" +
                          std::to_string(config.width));
}

Tensor forward_tensor(ModelState& model, const ClipTensor& clip) {
  check_clip_matches(model.config, clip);
  return decode(model.decoder, encode(model.encoder, clip_tensor(clip)));
}

TimeSeries forward(const ModelState& model, const ClipTensor& clip) {
  check_clip_matches(model.config, clip);
  NoGradGuard no_grad;
  const Tensor out = decode(model.decoder, encode(model.encoder, clip_tensor(clip)));
  return TimeSeries(std::vector<double>(out.values().begin(), out.values().end()), clip.frame_rate());
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

void adamw_step(const std::vector<Parameter*>& params, std::uint64_t& step_count, const AdamWConfig& cfg) {
  for (const auto* p : params) {
    if (!p->has_grad) throw InvalidState("adamw_step: parameter '" + p->name + "' has no gradient");
  }
  const std::uint64_t step = step_count + 1;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto* p : params) {
    if (p->adam_m.size() != p->size()) p->adam_m.assign(p->size(), 0.0);
    if (p->adam_v.size() != p->size()) p->adam_v.assign(p->size(), 0.0);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      double theta = p->value[i] * (1.0 - cfg.lr * cfg.weight_decay);
      const double m = cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      theta -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      p->value[i] = to_float_grid(theta);
      p->adam_m[i] = to_float_grid(m);
      p->adam_v[i] = to_float_grid(v);
    }
    p->zero_grad();
  }
  step_count = step;
}

void adamw_step(ModelState& model, const AdamWConfig& cfg) { adamw_step(model.parameters(), model.step_count, cfg); }

}  // namespace sfda::nn
