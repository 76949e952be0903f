#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfda/nn/model.hpp"

namespace sfda::nn {

// Checkpoint container:
//   "SFDA" | u16 version (=1) | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 data |
//   u32 CRC32 of everything before it.
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'D', 'A'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// Parameters are stored as "<prefix><name>", optimizer moments as
// "<prefix><name>.adam_m" / ".adam_v".
void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix,
                       const std::vector<const Parameter*>& params);
// Fills params from tensors with the given prefix. Moments are optional
// (zero when absent). Throws FormatError on missing tensors or shape mismatch.
void restore_parameters(const std::vector<NamedTensor>& tensors, const std::string& prefix,
                        const std::vector<Parameter*>& params);

NamedTensor scalar_tensor(const std::string& name, double value);
double scalar_value(const std::vector<NamedTensor>& tensors, const std::string& name);
bool has_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

// Shapes of the stored tensors under prefix determine the architecture.
ModelConfig infer_model_config(const std::vector<NamedTensor>& tensors, const std::string& encoder_prefix,
                               const std::string& decoder_prefix);

// Pretrained model: prefixes "encoder." and "decoder.", plus "step_count".
std::vector<NamedTensor> model_tensors(const ModelState& model);
ModelState model_from_tensors(const std::vector<NamedTensor>& tensors);

void checkpoint_save(const ModelState& model, const std::filesystem::path& path);
ModelState checkpoint_load(const std::filesystem::path& path);

// Independent copy of the encoder stored under prefix.
Encoder load_encoder(const std::vector<NamedTensor>& tensors, const std::string& prefix);
Decoder load_decoder(const std::vector<NamedTensor>& tensors, const std::string& prefix);

}  // namespace sfda::nn
