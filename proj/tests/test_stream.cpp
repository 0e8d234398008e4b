#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <thread>

#include "dmanus/rng.hpp"
#include "dmanus/stream.hpp"
#include "dmanus/wire.hpp"

using namespace dmanus;
using namespace dmanus::stream;

namespace {

std::vector<skin::FluxFrame> make_frames(int n) {
  std::vector<skin::FluxFrame> frames(n);
  Rng rng(17);
  for (auto& f : frames)
    for (auto& v : f.values) v = skin::wire_quantize(rng.uniform(-10, 10));
  return frames;
}

// yields frames but stalls hard on one of them
class StallingSource : public FrameSource {
 public:
  StallingSource(int stall_at, std::chrono::milliseconds pause)
      : stall_at_(stall_at), pause_(pause) {}
  std::optional<skin::FluxFrame> next() override {
    if (count_++ == stall_at_) std::this_thread::sleep_for(pause_);
    return skin::FluxFrame{};
  }

 private:
  int stall_at_;
  std::chrono::milliseconds pause_;
  int count_ = 0;
};

std::string temp_path(const char* name) {
  return std::string(DMANUS_BINARY_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("config accepts only the supported rates") {
  StreamConfig cfg;
  for (int rate : {10, 20, 30}) {
    cfg.rate_hz = rate;
    CHECK_NOTHROW(cfg.validate());
  }
  cfg.rate_hz = 25;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("serve emits strictly increasing gap-free seq at the configured rate") {
  StreamConfig cfg;
  cfg.rate_hz = 30;
  cfg.max_frames = 30;
  StreamServer server(std::make_unique<VectorSource>(make_frames(40)), cfg);
  auto consumer = server.subscribe();
  server.start();

  std::vector<std::uint32_t> seqs;
  while (auto f = consumer->next()) seqs.push_back(f->seq);
  server.stop();

  REQUIRE(seqs.size() == 30);
  for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(seqs[i] == i);
}

TEST_CASE("rate arithmetic: 10 Hz for one second gives 10 frames") {
  StreamConfig cfg;
  cfg.rate_hz = 10;
  cfg.max_frames = 10;
  StreamServer server(std::make_unique<VectorSource>(make_frames(20)), cfg);
  auto consumer = server.subscribe();
  const auto start = std::chrono::steady_clock::now();
  server.start();
  int count = 0;
  while (auto f = consumer->next()) ++count;
  const auto elapsed = std::chrono::steady_clock::now() - start;
  server.stop();
  CHECK(count == 10);
  CHECK(std::chrono::duration<double>(elapsed).count() > 0.8);
}

TEST_CASE("late consumers join mid-stream with no replay") {
  StreamConfig cfg;
  cfg.rate_hz = 30;
  cfg.max_frames = 24;
  StreamServer server(std::make_unique<VectorSource>(make_frames(30)), cfg);
  auto early = server.subscribe();
  server.start();

  // wait until a few frames went out, then join
  while (server.emitted() < 6) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  auto late = server.subscribe();

  std::vector<std::uint32_t> early_seqs, late_seqs;
  while (auto f = early->next()) early_seqs.push_back(f->seq);
  while (auto f = late->next()) late_seqs.push_back(f->seq);
  server.stop();

  REQUIRE(early_seqs.size() == 24);
  for (std::size_t i = 1; i < early_seqs.size(); ++i)
    CHECK(early_seqs[i] == early_seqs[i - 1] + 1);

  REQUIRE(!late_seqs.empty());
  CHECK(late_seqs.front() >= 6);  // no replay of missed frames
  for (std::size_t i = 1; i < late_seqs.size(); ++i)
    CHECK(late_seqs[i] == late_seqs[i - 1] + 1);
  CHECK(late_seqs.back() == 23);
}

TEST_CASE("a source stalled for more than 5 periods stops the stream") {
  StreamConfig cfg;
  cfg.rate_hz = 30;
  cfg.max_frames = 30;
  // 8 periods at 30 Hz
  StreamServer server(
      std::make_unique<StallingSource>(3, std::chrono::milliseconds(8 * 33)),
      cfg);
  auto consumer = server.subscribe();
  server.start();
  int received = 0;
  try {
    while (auto f = consumer->next()) ++received;
    FAIL("expected SourceStalled");
  } catch (const SourceStalled&) {
    CHECK(received == 3);
  }
  server.stop();
}

TEST_CASE("record_to_file writes concatenated wire frames") {
  const std::string path = temp_path("recorded.bin");

  SUBCASE("zero frames yields an empty file") {
    StreamConfig cfg;
    cfg.rate_hz = 30;
    cfg.max_frames = 3;
    StreamServer server(std::make_unique<VectorSource>(make_frames(5)), cfg);
    auto consumer = server.subscribe();
    server.start();
    CHECK(record_to_file(*consumer, path, 0) == 0);
    server.stop();
    std::ifstream in(path, std::ios::binary);
    in.seekg(0, std::ios::end);
    CHECK(in.tellg() == 0);
  }

  SUBCASE("live capture reads back bit-exactly") {
    const auto frames = make_frames(12);
    StreamConfig cfg;
    cfg.rate_hz = 30;
    cfg.max_frames = 12;
    StreamServer server(std::make_unique<VectorSource>(frames), cfg);
    auto consumer = server.subscribe();
    server.start();
    CHECK(record_to_file(*consumer, path, 12) == 12);
    server.stop();

    const auto back = read_frame_file(path);
    REQUIRE(back.size() == 12);
    for (int i = 0; i < 12; ++i) {
      CHECK(back[i].values == frames[i].values);
      CHECK(back[i].seq == static_cast<std::uint32_t>(i));
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("300 recorded frames occupy exactly 207300 bytes") {
  const std::string path = temp_path("sized.bin");
  VectorSource source(make_frames(300));
  CHECK(record_source_to_file(source, path, 300) == 300);
  std::ifstream in(path, std::ios::binary);
  in.seekg(0, std::ios::end);
  CHECK(in.tellg() == 300 * 691);
  std::remove(path.c_str());
}

TEST_CASE("tcp transport carries raw wire frames to two clients") {
  StreamConfig cfg;
  cfg.rate_hz = 30;
  cfg.transport = Transport::Tcp;
  cfg.max_frames = 20;
  StreamServer server(std::make_unique<VectorSource>(make_frames(25)), cfg);
  REQUIRE(server.port() > 0);

  auto connect_client = [&]() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(server.port()));
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    return fd;
  };

  const int a = connect_client();
  while (server.client_count() < 1)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  server.start();
  int b = -1;

  auto drain = [&](int fd) {
    std::vector<std::uint8_t> buf;
    std::uint8_t chunk[4096];
    for (;;) {
      const ssize_t n = ::read(fd, chunk, sizeof(chunk));
      if (n <= 0) break;
      buf.insert(buf.end(), chunk, chunk + n);
    }
    std::vector<std::uint32_t> seqs;
    for (std::size_t off = 0; off + wire::kFrameSize <= buf.size();
         off += wire::kFrameSize) {
      const auto frame = wire::decode_frame(
          std::span(buf.data() + off, wire::kFrameSize));
      seqs.push_back(frame.seq);
    }
    return seqs;
  };

  // second client connects mid-stream
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  b = connect_client();

  const auto seqs_a = drain(a);
  const auto seqs_b = drain(b);
  ::close(a);
  ::close(b);
  server.stop();

  REQUIRE(!seqs_a.empty());
  CHECK(seqs_a.front() == 0);
  for (std::size_t i = 1; i < seqs_a.size(); ++i)
    CHECK(seqs_a[i] == seqs_a[i - 1] + 1);
  CHECK(seqs_a.back() == 19);

  REQUIRE(!seqs_b.empty());
  CHECK(seqs_b.front() > 0);  // joined late, no replay
  for (std::size_t i = 1; i < seqs_b.size(); ++i)
    CHECK(seqs_b[i] == seqs_b[i - 1] + 1);
}

TEST_CASE("simulated source streams 30 Hz for 10 s as 300 frames") {
  // full-length check of the published collection recipe
  dataset::SimSetup sim = dataset::SimSetup::standard(1.0);
  hand::SynthObject obj;
  obj.name = "loofah";
  obj.compliance = 0.2;
  obj.texture_amplitude = 0.3;
  obj.texture_wavelength = 9.0;
  hand::BabbleConfig bc;
  bc.seed = 10;
  StreamConfig cfg;
  cfg.rate_hz = 30;
  cfg.max_frames = 300;
  StreamServer server(
      std::make_unique<SimFrameSource>(std::move(sim), obj, bc), cfg);
  auto consumer = server.subscribe();
  const auto start = std::chrono::steady_clock::now();
  server.start();
  std::vector<std::uint32_t> seqs;
  while (auto f = consumer->next()) seqs.push_back(f->seq);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  server.stop();
  REQUIRE(seqs.size() == 300);
  CHECK(seqs.front() == 0);
  CHECK(seqs.back() == 299);
  CHECK(std::chrono::duration<double>(elapsed).count() > 9.5);
}
