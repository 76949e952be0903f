#pragma once

#include <cstddef>
#include <vector>

namespace sfda {

// t x h x w x c video clip, time-major then row, column, channel.
// Pixel data is stored in single precision, matching the .rpgc container.
class ClipTensor {
 public:
  static constexpr std::size_t kChannels = 3;

  ClipTensor(std::size_t frames, std::size_t height, std::size_t width, double frame_rate);
  ClipTensor(std::size_t frames, std::size_t height, std::size_t width, double frame_rate, std::vector<float> data);

  std::size_t frames() const { return frames_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return kChannels; }
  double frame_rate() const { return frame_rate_; }
  std::size_t frame_size() const { return height_ * width_ * kChannels; }

  std::size_t index(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const {
    return ((t * height_ + i) * width_ + j) * kChannels + c;
  }
  float at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) const { return data_[index(t, i, j, c)]; }
  float& at(std::size_t t, std::size_t i, std::size_t j, std::size_t c) { return data_[index(t, i, j, c)]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  // Throws InvalidArgument on bad dims and InvalidData on non-finite pixels.
  void validate() const;

  bool operator==(const ClipTensor&) const = default;

 private:
  std::size_t frames_;
  std::size_t height_;
  std::size_t width_;
  double frame_rate_;
  std::vector<float> data_;
};

}  // namespace sfda
