#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfda/clip.hpp"
#include "sfda/nn/tensor.hpp"
#include "sfda/rng.hpp"
#include "sfda/spectral.hpp"

namespace sfda::nn {

struct ModelConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t kernel = 9;
  std::size_t enc_channels1 = 8;
  std::size_t enc_channels2 = 16;
  std::size_t dec_channels = 8;

  bool operator==(const ModelConfig&) const = default;
};

// Copyable atomic counter used to audit which sub-networks a code path runs.
class AccessCounter {
 public:
  AccessCounter() = default;
  AccessCounter(const AccessCounter& other) : count_(other.count_.load()) {}
  AccessCounter& operator=(const AccessCounter& other) {
    count_ = other.count_.load();
    return *this;
  }
  void bump() const { ++count_; }
  std::size_t value() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  mutable std::atomic<std::size_t> count_{0};
};

struct Conv1dParams {
  Parameter kernel;  // [k, c_in, c_out]
  Parameter bias;    // [c_out]
};

// Spatial attention map followed by a two-layer temporal conv stack.
struct Encoder {
  Parameter spatial_logits;  // [h, w]; weights = softmax over all pixels
  Conv1dParams conv1;
  Conv1dParams conv2;
  AccessCounter forward_count;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<double> spatial_weights() const;
};

struct Decoder {
  Conv1dParams conv1;
  Conv1dParams conv2;  // final linear layer, one output channel

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Pretrained network H = D o E with optimizer state.
struct ModelState {
  ModelConfig config;
  Encoder encoder;
  Decoder decoder;
  std::uint64_t step_count = 0;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

Encoder make_encoder(const ModelConfig& config, Rng& rng);
Decoder make_decoder(const ModelConfig& config, Rng& rng);
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

std::size_t parameter_count(const std::vector<const Parameter*>& params);

// Clip [t, h, w, 3] -> features [t, enc_channels2]. The non-const overloads
// record gradients into the parameters; the const ones run frozen.
Tensor encode(Encoder& encoder, const Tensor& clip);
Tensor encode(const Encoder& encoder, const Tensor& clip);
// Features [t, enc_channels2] -> signal [t].
Tensor decode(Decoder& decoder, const Tensor& features);
Tensor decode(const Decoder& decoder, const Tensor& features);

// f = D(E(clip)) as a taped tensor.
Tensor forward_tensor(ModelState& model, const ClipTensor& clip);
// Frozen forward returning a TimeSeries at the clip frame rate.
TimeSeries forward(const ModelState& model, const ClipTensor& clip);

void check_clip_matches(const ModelConfig& config, const ClipTensor& clip);

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over a parameter group. step_count is the
// group's shared step counter and is incremented once. Gradients are
// cleared afterwards. Throws InvalidState if any parameter has no gradient.
void adamw_step(const std::vector<Parameter*>& params, std::uint64_t& step_count, const AdamWConfig& cfg);
void adamw_step(ModelState& model, const AdamWConfig& cfg);

void zero_grad(const std::vector<Parameter*>& params);

// Rounds to the nearest float; parameters and moments are kept on the
// single-precision grid.
inline double to_float_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace sfda::nn
