#include "pphh/netsim.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

namespace pphh::net {

NetworkProfile profile(const std::string& name) {
  if (name == "LAN") return {"LAN", 1.0, 1e9};
  if (name == "WAN") return {"WAN", 40.0, 1e8};
  throw ChannelError("unknown network profile: " + name);
}

NetworkProfile custom_profile(double rtt_ms, double bandwidth_bps) {
  if (rtt_ms < 0) throw ChannelError("rtt must be >= 0");
  if (!(bandwidth_bps > 0) || !std::isfinite(bandwidth_bps))
    throw ChannelError("bandwidth must be finite positive");
  return {"custom", rtt_ms, bandwidth_bps};
}

double serialization_s(uint64_t bytes, const NetworkProfile& p) {
  return static_cast<double>(bytes) * 8.0 / p.bandwidth_bps;
}

std::vector<uint8_t> Channel::exchange(MsgKind kind, std::span<const uint8_t> payload) {
  uint64_t out_bytes = payload.size() + kHeaderBytes;
  if (mode_ == ClockMode::kReal) {
    // sender-side shaping: serialization plus half the RTT
    double s = profile_.rtt_ms / 2000.0 + serialization_s(out_bytes, profile_);
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  }
  send_raw(kind, payload);
  auto [k, data] = recv_raw();
  if (k != kind) throw ChannelError("exchange kind mismatch");
  counters_.bytes_sent += out_bytes;
  counters_.bytes_received += data.size() + kHeaderBytes;
  counters_.messages_sent += 1;
  counters_.rounds += 1;
  // round time: one RTT plus serialization of both directions
  sim_elapsed_s_ += profile_.rtt_ms / 1000.0 +
                    serialization_s(out_bytes, profile_) +
                    serialization_s(data.size() + kHeaderBytes, profile_);
  return data;
}

void Channel::send(MsgKind kind, std::span<const uint8_t> payload) {
  uint64_t out_bytes = payload.size() + kHeaderBytes;
  if (mode_ == ClockMode::kReal) {
    double s = profile_.rtt_ms / 2000.0 + serialization_s(out_bytes, profile_);
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  }
  send_raw(kind, payload);
  counters_.bytes_sent += out_bytes;
  counters_.messages_sent += 1;
  counters_.rounds += 1;  // one-way push counted as a round (Table-2 style accounting)
  sim_elapsed_s_ += profile_.rtt_ms / 2000.0 + serialization_s(out_bytes, profile_);
}

std::vector<uint8_t> Channel::receive(MsgKind expect) {
  auto [k, data] = recv_raw();
  if (k != expect) throw ChannelError("receive kind mismatch");
  counters_.bytes_received += data.size() + kHeaderBytes;
  return data;
}

std::vector<uint8_t> Channel::exchange_words(MsgKind kind, std::span<const uint64_t> words) {
  return exchange(kind, as_bytes(words));
}

void Channel::send_words(MsgKind kind, std::span<const uint64_t> words) { send(kind, as_bytes(words)); }

std::pair<std::unique_ptr<InProcChannel>, std::unique_ptr<InProcChannel>> InProcChannel::make_pair() {
  auto a = std::make_shared<Mailbox>();
  auto b = std::make_shared<Mailbox>();
  return {std::make_unique<InProcChannel>(a, b), std::make_unique<InProcChannel>(b, a)};
}

void InProcChannel::send_raw(MsgKind kind, std::span<const uint8_t> payload) {
  std::lock_guard lk(outbox_->mu);
  outbox_->q.emplace(kind, std::vector<uint8_t>(payload.begin(), payload.end()));
  outbox_->cv.notify_one();
}

std::pair<MsgKind, std::vector<uint8_t>> InProcChannel::recv_raw() {
  std::unique_lock lk(inbox_->mu);
  inbox_->cv.wait(lk, [&] { return !inbox_->q.empty(); });
  auto msg = std::move(inbox_->q.front());
  inbox_->q.pop();
  return msg;
}

// ---- sockets ----

static void write_all(int fd, const uint8_t* p, size_t n) {
  while (n > 0) {
    ssize_t w = ::write(fd, p, n);
    if (w <= 0) throw ChannelError("socket write failed");
    p += w;
    n -= static_cast<size_t>(w);
  }
}

static void read_all(int fd, uint8_t* p, size_t n) {
  while (n > 0) {
    ssize_t r = ::read(fd, p, n);
    if (r <= 0) throw ChannelError("socket closed");
    p += r;
    n -= static_cast<size_t>(r);
  }
}

std::unique_ptr<SocketChannel> SocketChannel::listen_one(uint16_t port) {
  int srv = ::socket(AF_INET, SOCK_STREAM, 0);
  if (srv < 0) throw ChannelError("socket() failed");
  int one = 1;
  ::setsockopt(srv, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(srv);
    throw ChannelError("bind failed on port " + std::to_string(port));
  }
  ::listen(srv, 1);
  int fd = ::accept(srv, nullptr, nullptr);
  ::close(srv);
  if (fd < 0) throw ChannelError("accept failed");
  int nd = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &nd, sizeof(nd));
  return std::unique_ptr<SocketChannel>(new SocketChannel(fd));
}

std::unique_ptr<SocketChannel> SocketChannel::connect(const std::string& host, uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  for (int attempt = 0; attempt < 200; ++attempt) {
    // a socket that failed connect(2) is not reusable; make a fresh one
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ChannelError("socket() failed");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      int nd = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &nd, sizeof(nd));
      return std::unique_ptr<SocketChannel>(new SocketChannel(fd));
    }
    ::close(fd);
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  throw ChannelError("connect failed to " + host + ":" + std::to_string(port));
}

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketChannel::send_raw(MsgKind kind, std::span<const uint8_t> payload) {
  uint8_t hdr[6];
  uint32_t len = static_cast<uint32_t>(payload.size());
  uint16_t k = static_cast<uint16_t>(kind);
  std::memcpy(hdr, &len, 4);
  std::memcpy(hdr + 4, &k, 2);
  write_all(fd_, hdr, 6);
  if (!payload.empty()) write_all(fd_, payload.data(), payload.size());
}

std::pair<MsgKind, std::vector<uint8_t>> SocketChannel::recv_raw() {
  uint8_t hdr[6];
  read_all(fd_, hdr, 6);
  uint32_t len;
  uint16_t k;
  std::memcpy(&len, hdr, 4);
  std::memcpy(&k, hdr + 4, 2);
  std::vector<uint8_t> payload(len);
  if (len) read_all(fd_, payload.data(), len);
  return {static_cast<MsgKind>(k), std::move(payload)};
}

// Symmetric exchange over sockets: pump the outgoing stream in slices while
// polling for incoming data, so two parties writing large payloads at once
// cannot fill both socket buffers and deadlock.
std::vector<uint8_t> SocketChannel::exchange(MsgKind kind, std::span<const uint8_t> payload) {
  uint64_t out_bytes = payload.size() + kHeaderBytes;
  if (mode_ == ClockMode::kReal) {
    double s = profile_.rtt_ms / 2000.0 + serialization_s(out_bytes, profile_);
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  }

  uint8_t hdr[6];
  uint32_t len = static_cast<uint32_t>(payload.size());
  uint16_t kk = static_cast<uint16_t>(kind);
  std::memcpy(hdr, &len, 4);
  std::memcpy(hdr + 4, &kk, 2);

  std::vector<uint8_t> out(6 + payload.size());
  std::memcpy(out.data(), hdr, 6);
  if (!payload.empty()) std::memcpy(out.data() + 6, payload.data(), payload.size());

  size_t sent = 0;
  std::vector<uint8_t> in;
  size_t got = 0;
  bool have_hdr = false;
  uint32_t in_len = 0;
  uint16_t in_kind = 0;
  std::vector<uint8_t> in_hdr(6);

  while (sent < out.size() || !have_hdr || got < in_len) {
    if (sent < out.size()) {
      size_t chunk = std::min<size_t>(out.size() - sent, 1 << 16);
      ssize_t w = ::send(fd_, out.data() + sent, chunk, MSG_DONTWAIT);
      if (w > 0) sent += static_cast<size_t>(w);
      else if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK) throw ChannelError("socket send failed");
    }
    if (!have_hdr) {
      ssize_t r = ::recv(fd_, in_hdr.data() + got, 6 - got, MSG_DONTWAIT);
      if (r > 0) got += static_cast<size_t>(r);
      else if (r == 0) throw ChannelError("socket closed");
      if (got == 6) {
        std::memcpy(&in_len, in_hdr.data(), 4);
        std::memcpy(&in_kind, in_hdr.data() + 4, 2);
        in.resize(in_len);
        got = 0;
        have_hdr = true;
        if (in_len == 0) break;
      }
    } else if (got < in_len) {
      ssize_t r = ::recv(fd_, in.data() + got, in_len - got, MSG_DONTWAIT);
      if (r > 0) got += static_cast<size_t>(r);
      else if (r == 0) throw ChannelError("socket closed");
    }
  }
  // drain any remaining outgoing bytes (payload fully received first)
  while (sent < out.size()) {
    ssize_t w = ::write(fd_, out.data() + sent, out.size() - sent);
    if (w <= 0) throw ChannelError("socket write failed");
    sent += static_cast<size_t>(w);
  }
  if (static_cast<MsgKind>(in_kind) != kind) throw ChannelError("exchange kind mismatch");

  counters_.bytes_sent += out_bytes;
  counters_.bytes_received += in_len + kHeaderBytes;
  counters_.messages_sent += 1;
  counters_.rounds += 1;
  sim_elapsed_s_ += profile_.rtt_ms / 1000.0 + serialization_s(out_bytes, profile_) +
                    serialization_s(in_len + kHeaderBytes, profile_);
  return in;
}

}  // namespace pphh::net
