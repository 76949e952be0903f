#include "sfda/nn/checkpoint.hpp"

#include <algorithm>
#include <cstring>

#include "sfda/binary_io.hpp"
#include "sfda/error.hpp"

namespace sfda::nn {

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put_u16(kCheckpointVersion);
  w.put_u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.data.size() != shape_size(t.shape)) throw InvalidArgument("tensor '" + t.name + "' data/shape mismatch");
    if (t.shape.size() > 255) throw InvalidArgument("tensor rank too large");
    w.put_u32(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put_u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.put_f32(v);
  }
  return io::seal_with_crc(w.take());
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not an SFDA checkpoint (bad magic)");
  io::ByteReader r(io::verify_crc(bytes));
  r.get_string(4);
  const auto version = r.get_u16();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get_u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string(r.get_u32());
    const auto rank = r.get_u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.get_u32());
    const std::size_t n = shape_size(t.shape);
    if (n > r.remaining() / 4) throw FormatError("tensor '" + t.name + "' exceeds payload");
    t.data.resize(n);
    for (auto& v : t.data) v = r.get_f32();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  io::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

namespace {

std::vector<float> to_floats(const std::vector<double>& v) {
  std::vector<float> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return out;
}

const NamedTensor* find(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void copy_into(const NamedTensor& t, const Shape& shape, std::vector<double>& dst) {
  if (t.shape != shape)
    throw FormatError("tensor '" + t.name + "' has shape " + shape_string(t.shape) + ", expected " +
                      shape_string(shape));
  dst.assign(t.data.begin(), t.data.end());
}

const NamedTensor& require(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const auto* t = find(tensors, name);
  if (!t) throw FormatError("checkpoint is missing tensor '" + name + "'");
  return *t;
}

}  // namespace

void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix,
                       const std::vector<const Parameter*>& params) {
  for (const auto* p : params) {
    out.push_back({prefix + p->name, p->shape, to_floats(p->value)});
    out.push_back({prefix + p->name + ".adam_m", p->shape, to_floats(p->adam_m)});
    out.push_back({prefix + p->name + ".adam_v", p->shape, to_floats(p->adam_v)});
  }
}

void restore_parameters(const std::vector<NamedTensor>& tensors, const std::string& prefix,
                        const std::vector<Parameter*>& params) {
  for (auto* p : params) {
    copy_into(require(tensors, prefix + p->name), p->shape, p->value);
    if (const auto* m = find(tensors, prefix + p->name + ".adam_m")) {
      copy_into(*m, p->shape, p->adam_m);
    } else {
      p->adam_m.assign(p->size(), 0.0);
    }
    if (const auto* v = find(tensors, prefix + p->name + ".adam_v")) {
      copy_into(*v, p->shape, p->adam_v);
    } else {
      p->adam_v.assign(p->size(), 0.0);
    }
    p->zero_grad();
  }
}

NamedTensor scalar_tensor(const std::string& name, double value) {
  return {name, {}, {static_cast<float>(value)}};
}

bool has_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  return find(tensors, name) != nullptr;
}

double scalar_value(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const auto& t = require(tensors, name);
  if (t.data.size() != 1) throw FormatError("tensor '" + name + "' is not a scalar");
  return t.data[0];
}

ModelConfig infer_model_config(const std::vector<NamedTensor>& tensors, const std::string& encoder_prefix,
                               const std::string& decoder_prefix) {
  const auto& logits = require(tensors, encoder_prefix + "spatial_logits");
  const auto& k1 = require(tensors, encoder_prefix + "conv1.kernel");
  const auto& k2 = require(tensors, encoder_prefix + "conv2.kernel");
  const auto& k3 = require(tensors, decoder_prefix + "conv1.kernel");
  if (logits.shape.size() != 2 || k1.shape.size() != 3 || k2.shape.size() != 3 || k3.shape.size() != 3)
    throw FormatError("checkpoint tensors have unexpected rank");
  ModelConfig cfg;
  cfg.height = logits.shape[0];
  cfg.width = logits.shape[1];
  cfg.kernel = k1.shape[0];
  cfg.enc_channels1 = k1.shape[2];
  cfg.enc_channels2 = k2.shape[2];
  cfg.dec_channels = k3.shape[2];
  return cfg;
}

namespace {

Encoder empty_encoder(const ModelConfig& cfg) {
  Rng rng(0);
  return make_encoder(cfg, rng);
}

Decoder empty_decoder(const ModelConfig& cfg) {
  Rng rng(0);
  return make_decoder(cfg, rng);
}

}  // namespace

Encoder load_encoder(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const auto& logits = require(tensors, prefix + "spatial_logits");
  const auto& k1 = require(tensors, prefix + "conv1.kernel");
  const auto& k2 = require(tensors, prefix + "conv2.kernel");
  if (logits.shape.size() != 2 || k1.shape.size() != 3 || k2.shape.size() != 3)
    throw FormatError("encoder tensors have unexpected rank");
  ModelConfig cfg;
  cfg.height = logits.shape[0];
  cfg.width = logits.shape[1];
  cfg.kernel = k1.shape[0];
  cfg.enc_channels1 = k1.shape[2];
  cfg.enc_channels2 = k2.shape[2];
  Encoder enc = empty_encoder(cfg);
  restore_parameters(tensors, prefix, enc.parameters());
  return enc;
}

Decoder load_decoder(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const auto& k3 = require(tensors, prefix + "conv1.kernel");
  const auto& k4 = require(tensors, prefix + "conv2.kernel");
  if (k3.shape.size() != 3 || k4.shape.size() != 3) throw FormatError("decoder tensors have unexpected rank");
  ModelConfig cfg;
  cfg.kernel = k3.shape[0];
  cfg.enc_channels2 = k3.shape[1];
  cfg.dec_channels = k3.shape[2];
  Decoder dec = empty_decoder(cfg);
  restore_parameters(tensors, prefix, dec.parameters());
  return dec;
}

std::vector<NamedTensor> model_tensors(const ModelState& model) {
  std::vector<NamedTensor> out;
  append_parameters(out, "encoder.", model.encoder.parameters());
  append_parameters(out, "decoder.", model.decoder.parameters());
  out.push_back(scalar_tensor("step_count", static_cast<double>(model.step_count)));
  return out;
}

ModelState model_from_tensors(const std::vector<NamedTensor>& tensors) {
  ModelState model;
  model.config = infer_model_config(tensors, "encoder.", "decoder.");
  model.encoder = load_encoder(tensors, "encoder.");
  model.decoder = load_decoder(tensors, "decoder.");
  model.step_count = static_cast<std::uint64_t>(scalar_value(tensors, "step_count"));
  return model;
}

void checkpoint_save(const ModelState& model, const std::filesystem::path& path) {
  save_tensors(path, model_tensors(model));
}

ModelState checkpoint_load(const std::filesystem::path& path) { return model_from_tensors(load_tensors(path)); }

}  // namespace sfda::nn
