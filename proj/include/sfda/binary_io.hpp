#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sfda::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian byte sink.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { bytes_.push_back(v); }
  void put_u16(std::uint16_t v);
  void put_u32(std::uint32_t v);
  void put_f32(float v);
  void put_bytes(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Little-endian cursor over a byte buffer; throws FormatError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t get_u8();
  std::uint16_t get_u16();
  std::uint32_t get_u32();
  float get_f32();
  std::string get_string(std::size_t length);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Appends CRC32 of the payload; the container layouts end with that trailer.
std::vector<std::uint8_t> seal_with_crc(std::vector<std::uint8_t> payload);

// Verifies and strips the trailing CRC32. Throws FormatError on mismatch.
std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> file_bytes);

// All container and manifest reads go through these two functions so that
// file access can be audited (see ReadObserver).
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Process-wide hook notified with the path of every read_file/read_text_file
// call and every directory listing done by the dataset loader. Installed by
// tests and the CLI audit; scoped by ReadObserverGuard.
using ReadObserver = std::function<void(const std::filesystem::path&)>;

void notify_read(const std::filesystem::path& path);

class ReadObserverGuard {
 public:
  explicit ReadObserverGuard(ReadObserver observer);
  ~ReadObserverGuard();
  ReadObserverGuard(const ReadObserverGuard&) = delete;
  ReadObserverGuard& operator=(const ReadObserverGuard&) = delete;

 private:
  ReadObserver previous_;
};

}  // namespace sfda::io
