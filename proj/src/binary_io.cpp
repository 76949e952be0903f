#include "sfda/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

#include <zlib.h>

#include "sfda/error.hpp"

namespace sfda::io {

namespace {

std::mutex g_observer_mutex;
ReadObserver g_observer;

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large buffers.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::put_u16(std::uint16_t v) {
  put_u8(static_cast<std::uint8_t>(v & 0xff));
  put_u8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::put_u32(std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) put_u8(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw FormatError("truncated binary payload");
}

std::uint8_t ByteReader::get_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::get_u16() {
  need(2);
  const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::get_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

std::string ByteReader::get_string(std::size_t length) {
  need(length);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), length);
  pos_ += length;
  return s;
}

std::vector<std::uint8_t> seal_with_crc(std::vector<std::uint8_t> payload) {
  const std::uint32_t crc = crc32(payload);
  for (int shift = 0; shift < 32; shift += 8) payload.push_back(static_cast<std::uint8_t>((crc >> shift) & 0xff));
  return payload;
}

std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> file_bytes) {
  if (file_bytes.size() < 4) throw FormatError("file too short for CRC trailer");
  const auto payload = file_bytes.first(file_bytes.size() - 4);
  ByteReader trailer(file_bytes.last(4));
  if (trailer.get_u32() != crc32(payload)) throw FormatError("CRC32 mismatch");
  return payload;
}

void notify_read(const std::filesystem::path& path) {
  ReadObserver observer;
  {
    std::lock_guard lock(g_observer_mutex);
    observer = g_observer;
  }
  if (observer) observer(path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  notify_read(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ReadObserverGuard::ReadObserverGuard(ReadObserver observer) {
  std::lock_guard lock(g_observer_mutex);
  previous_ = std::move(g_observer);
  g_observer = std::move(observer);
}

ReadObserverGuard::~ReadObserverGuard() {
  std::lock_guard lock(g_observer_mutex);
  g_observer = std::move(previous_);
}

}  // namespace sfda::io
