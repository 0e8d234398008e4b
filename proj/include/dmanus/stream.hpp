#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dmanus/dataset.hpp"
#include "dmanus/skin.hpp"

namespace dmanus::stream {

enum class Transport : std::uint8_t { InProcess = 0, Tcp = 1, File = 2 };

struct StreamConfig {
  int rate_hz = 30;  // {10, 20, 30}
  Transport transport = Transport::InProcess;
  int tcp_port = 0;        // 0 picks an ephemeral port
  std::int64_t max_frames = -1;  // emit this many then end; -1 = unbounded

  void validate() const;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // nullopt ends the stream.
  virtual std::optional<skin::FluxFrame> next() = 0;
};

// Replays a fixed frame list; test and file tooling helper.
class VectorSource : public FrameSource {
 public:
  explicit VectorSource(std::vector<skin::FluxFrame> frames)
      : frames_(std::move(frames)) {}
  std::optional<skin::FluxFrame> next() override {
    if (index_ >= frames_.size()) return std::nullopt;
    return frames_[index_++];
  }

 private:
  std::vector<skin::FluxFrame> frames_;
  std::size_t index_ = 0;
};

// Live simulator source: babble interaction with one object, frames stamped
// with synthetic timestamps (seq / rate).
class SimFrameSource : public FrameSource {
 public:
  SimFrameSource(dataset::SimSetup sim, hand::SynthObject obj,
                 hand::BabbleConfig cfg);
  std::optional<skin::FluxFrame> next() override;

 private:
  dataset::SimSetup sim_;
  hand::SynthObject obj_;
  hand::BabbleConfig cfg_;
  hand::JointState joints_;
  int t_ = 0;
};

// Fan-out server: owns the source on one thread, emits at the configured
// rate with strictly increasing seq. Late subscribers see frames from their
// join point; there is no replay. A source that underruns its slot by more
// than 5 periods stops the stream with SourceStalled.
class StreamServer {
 public:
  class Consumer {
   public:
    // Blocks for the next frame; nullopt when the stream ended cleanly.
    // Throws SourceStalled if the server stalled.
    std::optional<skin::FluxFrame> next();

   private:
    friend class StreamServer;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<skin::FluxFrame> queue_;
    bool done_ = false;
    bool stalled_ = false;
  };

  StreamServer(std::unique_ptr<FrameSource> source, StreamConfig cfg);
  ~StreamServer();

  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;

  void start();
  void stop();

  std::shared_ptr<Consumer> subscribe();

  // Tcp transport only: bound port.
  int port() const { return port_; }

  // Tcp transport only: clients registered so far.
  int client_count() const;

  // Frames emitted so far.
  std::uint32_t emitted() const;

 private:
  void run();
  void accept_loop();

  std::unique_ptr<FrameSource> source_;
  StreamConfig cfg_;
  std::thread worker_;
  std::thread acceptor_;
  mutable std::mutex mutex_;
  std::vector<std::weak_ptr<Consumer>> consumers_;
  std::vector<int> clients_;
  bool running_ = false;
  bool stop_requested_ = false;
  std::uint32_t emitted_ = 0;
  int listen_fd_ = -1;
  int port_ = 0;
};

// Pulls n_frames from a consumer and appends their wire encoding to path.
// Returns the number of frames written (may be fewer if the stream ended).
std::size_t record_to_file(StreamServer::Consumer& consumer,
                           const std::string& path, std::size_t n_frames);

// Non-realtime capture: drains a source directly into concatenated
// WireFrames. Deterministic, used by the CLI record command.
std::size_t record_source_to_file(FrameSource& source, const std::string& path,
                                  std::size_t n_frames);

// Reads back a file of concatenated WireFrames.
std::vector<skin::FluxFrame> read_frame_file(const std::string& path);

}  // namespace dmanus::stream
