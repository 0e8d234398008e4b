#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "dmanus/rng.hpp"
#include "dmanus/wire.hpp"

using namespace dmanus;
using namespace dmanus::wire;

namespace {

skin::FluxFrame random_frame(Rng& rng) {
  skin::FluxFrame f;
  f.seq = static_cast<std::uint32_t>(rng.next_u64());
  f.timestamp_ns = rng.next_u64();
  for (auto& v : f.values) v = skin::wire_quantize(rng.uniform(-500.0, 500.0));
  return f;
}

std::vector<std::uint8_t> golden_bytes() {
  std::ifstream in(std::string(DMANUS_SOURCE_DIR) + "/data/golden/zero_frame.bin",
                   std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("crc32 matches the reference vector") {
  const char* s = "123456789";
  CHECK(crc32({reinterpret_cast<const std::uint8_t*>(s), 9}) == 0xCBF43926u);
}

TEST_CASE("golden zero frame matches the committed oracle bytes") {
  skin::FluxFrame zero;  // seq 0, ts 0, all-zero payload
  const auto encoded = encode_frame(zero);
  REQUIRE(encoded.size() == 691);

  const auto golden = golden_bytes();
  REQUIRE(golden.size() == 691);
  CHECK(encoded == golden);

  // trailer holds the externally computed CRC 0x0C0DF8E1
  const std::uint32_t crc = static_cast<std::uint32_t>(encoded[687]) |
                            static_cast<std::uint32_t>(encoded[688]) << 8 |
                            static_cast<std::uint32_t>(encoded[689]) << 16 |
                            static_cast<std::uint32_t>(encoded[690]) << 24;
  CHECK(crc == 0x0C0DF8E1u);

  CHECK(decode_frame(golden) == zero);
}

TEST_CASE("round trip is bit-exact over random frames") {
  Rng rng(2024);
  for (int i = 0; i < 20000; ++i) {
    const skin::FluxFrame f = random_frame(rng);
    const auto bytes = encode_frame(f);
    REQUIRE(bytes.size() == kFrameSize);
    CHECK(decode_frame(bytes) == f);
  }
}

TEST_CASE("payload injectivity: one flux value changes the bytes") {
  Rng rng(5);
  skin::FluxFrame a = random_frame(rng);
  skin::FluxFrame b = a;
  b.values[77] += 1.0;
  CHECK(encode_frame(a) != encode_frame(b));
}

TEST_CASE("single payload bit flips are caught by the crc") {
  Rng rng(6);
  const auto bytes = encode_frame(random_frame(rng));
  for (int bit : {0, 3, 7}) {
    auto corrupted = bytes;
    corrupted[kHeaderSize + 100] ^= static_cast<std::uint8_t>(1u << bit);
    CHECK_THROWS_AS(decode_frame(corrupted), BadCrc);
  }
}

TEST_CASE("decode errors are distinguishable") {
  Rng rng(7);
  const auto bytes = encode_frame(random_frame(rng));

  auto truncated = bytes;
  truncated.resize(690);
  CHECK_THROWS_AS(decode_frame(truncated), Truncated);

  auto bad_magic = bytes;
  bad_magic[0] = 0x00;
  CHECK_THROWS_AS(decode_frame(bad_magic), BadMagic);

  // version byte patched and the crc re-sealed: only the version is wrong
  auto bad_version = bytes;
  bad_version[2] = 9;
  const std::uint32_t crc =
      crc32({bad_version.data(), kHeaderSize + kPayloadSize});
  for (int i = 0; i < 4; ++i)
    bad_version[kHeaderSize + kPayloadSize + i] =
        static_cast<std::uint8_t>(crc >> (8 * i));
  CHECK_THROWS_AS(decode_frame(bad_version), BadVersion);

  auto bad_crc = bytes;
  bad_crc[wire::kFrameSize - 1] ^= 0xFF;
  CHECK_THROWS_AS(decode_frame(bad_crc), BadCrc);
}

TEST_CASE("every single-byte corruption is rejected") {
  Rng rng(8);
  const auto bytes = encode_frame(random_frame(rng));
  for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
    auto corrupted = bytes;
    corrupted[pos] ^= 0x5A;
    CHECK_THROWS_AS(decode_frame(corrupted), DecodeError);
  }
}
