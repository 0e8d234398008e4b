#include "dmanus/wire.hpp"

#include <array>
#include <cstring>

namespace dmanus::wire {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t n = 0; n < 256; ++n) {
    std::uint32_t c = n;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[n] = c;
  }
  return table;
}

const std::array<std::uint32_t, 256> kCrcTable = make_crc_table();

void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::uint8_t b : data) c = kCrcTable[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void encode_frame_into(const skin::FluxFrame& frame, std::uint8_t* out) {
  out[0] = kMagic0;
  out[1] = kMagic1;
  out[2] = kVersion;
  put_u32(out + 3, frame.seq);
  put_u64(out + 7, frame.timestamp_ns);
  std::uint8_t* p = out + kHeaderSize;
  for (double v : frame.values) {
    const float narrowed = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &narrowed, 4);
    put_u32(p, bits);
    p += 4;
  }
  put_u32(out + kHeaderSize + kPayloadSize,
          crc32({out, kHeaderSize + kPayloadSize}));
}

std::vector<std::uint8_t> encode_frame(const skin::FluxFrame& frame) {
  std::vector<std::uint8_t> bytes(kFrameSize);
  encode_frame_into(frame, bytes.data());
  return bytes;
}

skin::FluxFrame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameSize) throw Truncated();
  if (bytes[0] != kMagic0 || bytes[1] != kMagic1) throw BadMagic();
  if (bytes[2] != kVersion) throw BadVersion();
  const std::uint32_t stored = get_u32(bytes.data() + kHeaderSize + kPayloadSize);
  if (crc32(bytes.first(kHeaderSize + kPayloadSize)) != stored) throw BadCrc();

  skin::FluxFrame frame;
  frame.seq = get_u32(bytes.data() + 3);
  frame.timestamp_ns = get_u64(bytes.data() + 7);
  const std::uint8_t* p = bytes.data() + kHeaderSize;
  for (auto& v : frame.values) {
    const std::uint32_t bits = get_u32(p);
    float narrowed;
    std::memcpy(&narrowed, &bits, 4);
    v = static_cast<double>(narrowed);
    p += 4;
  }
  return frame;
}

}  // namespace dmanus::wire
