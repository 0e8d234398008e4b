#include "dmanus/stream.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <fstream>

#include "dmanus/errors.hpp"
#include "dmanus/rng.hpp"
#include "dmanus/wire.hpp"

namespace dmanus::stream {

namespace {
using Clock = std::chrono::steady_clock;
}

void StreamConfig::validate() const {
  if (rate_hz != 10 && rate_hz != 20 && rate_hz != 30)
    throw ConfigError("stream rate_hz must be one of 10, 20, 30");
}

SimFrameSource::SimFrameSource(dataset::SimSetup sim, hand::SynthObject obj,
                               hand::BabbleConfig cfg)
    : sim_(std::move(sim)), obj_(std::move(obj)), cfg_(cfg) {
  cfg_.validate();
  hand::BabbleConfig rest = cfg_;
  rest.amplitude = 0.0;
  rest.noise_sigma = 0.0;
  joints_ = hand::babble_policy(rest, 0);
}

std::optional<skin::FluxFrame> SimFrameSource::next() {
  const double dt = 1.0 / cfg_.rate_hz;
  const hand::JointState target =
      hand::babble_policy(cfg_, t_ % cfg_.frame_count());
  joints_ = hand::simulate_step(joints_, target, dt);
  const auto deform = hand::contact_model(obj_, joints_, t_ * dt, sim_.layout,
                                          sim_.grid);
  skin::FluxFrame frame =
      skin::skin_response(sim_.layout, sim_.grid, deform, sim_.rest_accum);
  Rng salt(cfg_.seed);
  frame = skin::add_sensor_noise(frame, sim_.noise_sigma,
                                 salt.next_u64() ^ (0x9E3779B97F4A7C15ULL *
                                                    (static_cast<std::uint64_t>(t_) + 1)));
  frame.seq = static_cast<std::uint32_t>(t_);
  frame.timestamp_ns = static_cast<std::uint64_t>(t_) * 1000000000ULL /
                       static_cast<std::uint64_t>(cfg_.rate_hz);
  ++t_;
  return frame;
}

std::optional<skin::FluxFrame> StreamServer::Consumer::next() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !queue_.empty() || done_ || stalled_; });
  if (!queue_.empty()) {
    skin::FluxFrame f = queue_.front();
    queue_.pop_front();
    return f;
  }
  if (stalled_) throw SourceStalled("frame source underran by > 5 periods");
  return std::nullopt;
}

StreamServer::StreamServer(std::unique_ptr<FrameSource> source,
                           StreamConfig cfg)
    : source_(std::move(source)), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.transport == Transport::Tcp) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw IoError("socket() failed");
    int yes = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.tcp_port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 8) != 0) {
      ::close(listen_fd_);
      throw IoError("bind/listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    // accept from construction so clients can register before frames flow
    acceptor_ = std::thread([this] { accept_loop(); });
  }
}

StreamServer::~StreamServer() { stop(); }

void StreamServer::start() {
  std::lock_guard lock(mutex_);
  if (running_) return;
  running_ = true;
  stop_requested_ = false;
  worker_ = std::thread([this] { run(); });
}

void StreamServer::stop() {
  {
    std::lock_guard lock(mutex_);
    if (!running_ && !acceptor_.joinable()) return;
    stop_requested_ = true;
  }
  if (worker_.joinable()) worker_.join();
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lock(mutex_);
  for (int fd : clients_) ::close(fd);
  clients_.clear();
  running_ = false;
}

std::shared_ptr<StreamServer::Consumer> StreamServer::subscribe() {
  auto consumer = std::make_shared<Consumer>();
  std::lock_guard lock(mutex_);
  consumers_.push_back(consumer);
  return consumer;
}

std::uint32_t StreamServer::emitted() const {
  std::lock_guard lock(mutex_);
  return emitted_;
}

int StreamServer::client_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<int>(clients_.size());
}

void StreamServer::run() {
  const auto period = std::chrono::nanoseconds(1000000000LL / cfg_.rate_hz);
  const auto start = Clock::now();
  std::array<std::uint8_t, wire::kFrameSize> bytes;
  bool ended = false;
  bool stalled = false;

  for (std::int64_t i = 0; cfg_.max_frames < 0 || i < cfg_.max_frames; ++i) {
    const auto deadline = start + i * period;
    std::this_thread::sleep_until(deadline);
    {
      std::lock_guard lock(mutex_);
      if (stop_requested_) break;
    }
    auto frame = source_->next();
    if (!frame) {
      ended = true;
      break;
    }
    if (Clock::now() - deadline > 5 * period) {
      stalled = true;
      break;
    }
    frame->seq = static_cast<std::uint32_t>(i);
    frame->timestamp_ns =
        static_cast<std::uint64_t>(i) * 1000000000ULL / cfg_.rate_hz;
    wire::encode_frame_into(*frame, bytes.data());

    std::lock_guard lock(mutex_);
    emitted_ = static_cast<std::uint32_t>(i + 1);
    for (auto it = consumers_.begin(); it != consumers_.end();) {
      if (auto c = it->lock()) {
        {
          std::lock_guard clock_(c->mutex_);
          c->queue_.push_back(*frame);
        }
        c->cv_.notify_one();
        ++it;
      } else {
        it = consumers_.erase(it);
      }
    }
    for (auto it = clients_.begin(); it != clients_.end();) {
      const ssize_t sent = ::send(*it, bytes.data(), bytes.size(), MSG_NOSIGNAL);
      if (sent != static_cast<ssize_t>(bytes.size())) {
        ::close(*it);
        it = clients_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::lock_guard lock(mutex_);
  for (auto& weak : consumers_) {
    if (auto c = weak.lock()) {
      {
        std::lock_guard clock_(c->mutex_);
        c->done_ = !stalled;
        c->stalled_ = stalled;
      }
      c->cv_.notify_all();
    }
  }
  for (int fd : clients_) ::close(fd);
  clients_.clear();
  (void)ended;
}

void StreamServer::accept_loop() {
  for (;;) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, 50);
    {
      std::lock_guard lock(mutex_);
      if (stop_requested_) return;
    }
    if (listen_fd_ < 0) return;
    if (r <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;
    std::lock_guard lock(mutex_);
    clients_.push_back(fd);
  }
}

std::size_t record_to_file(StreamServer::Consumer& consumer,
                           const std::string& path, std::size_t n_frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  std::size_t written = 0;
  while (written < n_frames) {
    auto frame = consumer.next();
    if (!frame) break;
    const auto bytes = wire::encode_frame(*frame);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    ++written;
  }
  if (!out) throw IoError("write failed: " + path);
  return written;
}

std::size_t record_source_to_file(FrameSource& source, const std::string& path,
                                  std::size_t n_frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  std::size_t written = 0;
  while (written < n_frames) {
    auto frame = source.next();
    if (!frame) break;
    const auto bytes = wire::encode_frame(*frame);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    ++written;
  }
  if (!out) throw IoError("write failed: " + path);
  return written;
}

std::vector<skin::FluxFrame> read_frame_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<skin::FluxFrame> frames;
  std::vector<std::uint8_t> buf(wire::kFrameSize);
  for (;;) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (in.gcount() == 0) break;
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
      throw wire::Truncated();
    frames.push_back(wire::decode_frame(buf));
  }
  return frames;
}

}  // namespace dmanus::stream
