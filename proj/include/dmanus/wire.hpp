#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dmanus/skin.hpp"

namespace dmanus::wire {

// WireFrame layout, all little-endian:
//   magic 0x44 0x4D | version u8 = 1 | seq u32 | timestamp_ns u64 |
//   168 x f32 payload (site-id order, xyz) | crc32 over all preceding bytes
inline constexpr std::size_t kHeaderSize = 2 + 1 + 4 + 8;
inline constexpr std::size_t kPayloadSize = skin::kFluxDim * 4;
inline constexpr std::size_t kFrameSize = kHeaderSize + kPayloadSize + 4;
static_assert(kFrameSize == 691);

inline constexpr std::uint8_t kMagic0 = 0x44;  // 'D'
inline constexpr std::uint8_t kMagic1 = 0x4D;  // 'M'
inline constexpr std::uint8_t kVersion = 1;

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagic : DecodeError {
  BadMagic() : DecodeError("bad frame magic") {}
};
struct BadVersion : DecodeError {
  BadVersion() : DecodeError("unsupported frame version") {}
};
struct BadCrc : DecodeError {
  BadCrc() : DecodeError("frame crc mismatch") {}
};
struct Truncated : DecodeError {
  Truncated() : DecodeError("truncated frame") {}
};

// CRC-32, IEEE polynomial (reflected 0xEDB88320), init/xorout 0xFFFFFFFF.
std::uint32_t crc32(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> encode_frame(const skin::FluxFrame& frame);
void encode_frame_into(const skin::FluxFrame& frame, std::uint8_t* out);

// Decodes the first frame of `bytes`. Throws Truncated / BadMagic /
// BadVersion / BadCrc.
skin::FluxFrame decode_frame(std::span<const std::uint8_t> bytes);

}  // namespace dmanus::wire
