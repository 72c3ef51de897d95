#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pphh::net {

struct ChannelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NetworkProfile {
  std::string name;
  double rtt_ms = 0.0;
  double bandwidth_bps = 1e9;
};

// LAN = (1 ms, 1 Gbps), WAN = (40 ms, 100 Mbps).
NetworkProfile profile(const std::string& name);
NetworkProfile custom_profile(double rtt_ms, double bandwidth_bps);

enum class ClockMode { kSimulated, kReal };

// Wire format: 4-byte little-endian payload length, 2-byte message kind,
// payload of packed 64-bit little-endian ring elements.
inline constexpr uint64_t kHeaderBytes = 6;

enum class MsgKind : uint16_t {
  kOpen = 1,        // masked ring elements (Beaver epsilon/delta, x+r, reveals)
  kBitPlanes = 2,   // packed bit planes for the borrow circuit
  kShare = 3,       // share submission from a non-computational party
  kReveal = 4,      // output shares sent back for reconstruction
  kEmbedding = 5,   // plaintext public embeddings (float32 payload)
  kControl = 6,
};

struct Counters {
  uint64_t bytes_sent = 0;
  uint64_t bytes_received = 0;
  uint64_t messages_sent = 0;
  uint64_t rounds = 0;
};

// One endpoint of a party-to-party link. exchange() is the synchronized
// round primitive; send()/receive() are one-way pushes (still counted as a
// round, mirroring how the plaintext-embedding push is accounted).
class Channel {
 public:
  virtual ~Channel() = default;

  virtual std::vector<uint8_t> exchange(MsgKind kind, std::span<const uint8_t> payload);
  void send(MsgKind kind, std::span<const uint8_t> payload);
  std::vector<uint8_t> receive(MsgKind expect);

  std::vector<uint8_t> exchange_words(MsgKind kind, std::span<const uint64_t> words);
  void send_words(MsgKind kind, std::span<const uint64_t> words);

  const Counters& counters() const { return counters_; }
  double sim_elapsed_s() const { return sim_elapsed_s_; }

  void set_profile(const NetworkProfile& p) { profile_ = p; }
  void set_mode(ClockMode m) { mode_ = m; }
  const NetworkProfile& link_profile() const { return profile_; }

 protected:
  virtual void send_raw(MsgKind kind, std::span<const uint8_t> payload) = 0;
  virtual std::pair<MsgKind, std::vector<uint8_t>> recv_raw() = 0;

  NetworkProfile profile_ = profile("LAN");
  ClockMode mode_ = ClockMode::kSimulated;
  Counters counters_;
  double sim_elapsed_s_ = 0.0;
};

// In-process rendezvous channel; the two endpoints live in one process and
// exchange through mailboxes. Used by tests and the in-memory benchmark mode.
struct Mailbox {
  std::mutex mu;
  std::condition_variable cv;
  std::queue<std::pair<MsgKind, std::vector<uint8_t>>> q;
};

class InProcChannel : public Channel {
 public:
  InProcChannel(std::shared_ptr<Mailbox> inbox, std::shared_ptr<Mailbox> outbox)
      : inbox_(std::move(inbox)), outbox_(std::move(outbox)) {}

  static std::pair<std::unique_ptr<InProcChannel>, std::unique_ptr<InProcChannel>> make_pair();

 protected:
  void send_raw(MsgKind kind, std::span<const uint8_t> payload) override;
  std::pair<MsgKind, std::vector<uint8_t>> recv_raw() override;

 private:
  std::shared_ptr<Mailbox> inbox_, outbox_;
};

// TCP loopback channel speaking the documented wire format. Sends are pumped
// in slices interleaved with reads so large symmetric exchanges cannot
// deadlock on socket buffers.
class SocketChannel : public Channel {
 public:
  static std::unique_ptr<SocketChannel> listen_one(uint16_t port);
  static std::unique_ptr<SocketChannel> connect(const std::string& host, uint16_t port);
  ~SocketChannel() override;

  std::vector<uint8_t> exchange(MsgKind kind, std::span<const uint8_t> payload) override;

 protected:
  void send_raw(MsgKind kind, std::span<const uint8_t> payload) override;
  std::pair<MsgKind, std::vector<uint8_t>> recv_raw() override;

 private:
  explicit SocketChannel(int fd) : fd_(fd) {}
  int fd_ = -1;
};

inline std::span<const uint8_t> as_bytes(std::span<const uint64_t> w) {
  return {reinterpret_cast<const uint8_t*>(w.data()), w.size() * 8};
}

inline std::vector<uint64_t> to_words(const std::vector<uint8_t>& b) {
  std::vector<uint64_t> w(b.size() / 8);
  std::memcpy(w.data(), b.data(), w.size() * 8);
  return w;
}

double serialization_s(uint64_t bytes, const NetworkProfile& p);

}  // namespace pphh::net
