#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <thread>

#include "pphh/netsim.hpp"

using namespace pphh::net;

TEST_CASE("profiles") {
  auto wan = profile("WAN");
  CHECK(wan.rtt_ms == 40.0);
  CHECK(wan.bandwidth_bps == 1e8);
  auto lan = profile("LAN");
  CHECK(lan.rtt_ms == 1.0);
  CHECK(lan.bandwidth_bps == 1e9);
  CHECK_THROWS_AS(profile("MOON"), ChannelError);
  CHECK_THROWS_AS(custom_profile(0.0, std::numeric_limits<double>::infinity()), ChannelError);
  CHECK_THROWS_AS(custom_profile(0.0, 0.0), ChannelError);
}

static void run_pair(Channel& a, Channel& b, int n_rounds, size_t payload) {
  std::thread t([&] {
    std::vector<uint8_t> buf(payload, 0xBB);
    for (int i = 0; i < n_rounds; ++i) b.exchange(MsgKind::kOpen, buf);
  });
  std::vector<uint8_t> buf(payload, 0xAA);
  for (int i = 0; i < n_rounds; ++i) a.exchange(MsgKind::kOpen, buf);
  t.join();
}

TEST_CASE("simulated round time formula") {
  auto [a, b] = InProcChannel::make_pair();
  a->set_profile(profile("WAN"));
  b->set_profile(profile("WAN"));

  // empty payloads: one round = one RTT (plus negligible header serialization)
  run_pair(*a, *b, 1, 0);
  CHECK(a->sim_elapsed_s() == doctest::Approx(0.040 + 2 * 6 * 8.0 / 1e8));

  // closed form for n sequential exchanges
  auto [c, d] = InProcChannel::make_pair();
  c->set_profile(profile("WAN"));
  d->set_profile(profile("WAN"));
  int n = 17;
  size_t payload = 12345;
  run_pair(*c, *d, n, payload);
  double expect = n * (0.040 + 2 * (payload + 6) * 8.0 / 1e8);
  CHECK(c->sim_elapsed_s() == doctest::Approx(expect).epsilon(1e-9));
  CHECK(c->counters().rounds == static_cast<uint64_t>(n));
  CHECK(c->counters().bytes_sent == static_cast<uint64_t>(n) * (payload + 6));
}

TEST_CASE("one-way send accounting") {
  auto [a, b] = InProcChannel::make_pair();
  a->set_profile(profile("LAN"));
  // 2.3 MB on LAN: 0.5 ms latency + ~18.4 ms serialization
  std::vector<uint8_t> big(2300000, 1);
  a->send(MsgKind::kEmbedding, big);
  b->receive(MsgKind::kEmbedding);
  CHECK(a->sim_elapsed_s() == doctest::Approx(0.0005 + (2300000.0 + 6) * 8.0 / 1e9).epsilon(1e-6));
  CHECK(a->counters().rounds == 1);  // plaintext push counted as a round
}

TEST_CASE("serialization arithmetic") {
  // 1e8 bytes one way on 100 Mbps = 8 s
  CHECK(serialization_s(100000000, profile("WAN")) == doctest::Approx(8.0));
}

TEST_CASE("counters identical across modes, only time differs") {
  Counters sim_counters, real_counters;
  double sim_time = 0;
  {
    auto [a, b] = InProcChannel::make_pair();
    a->set_profile(profile("LAN"));
    b->set_profile(profile("LAN"));
    run_pair(*a, *b, 5, 1000);
    sim_counters = a->counters();
    sim_time = a->sim_elapsed_s();
  }
  {
    auto [a, b] = InProcChannel::make_pair();
    a->set_profile(profile("LAN"));
    b->set_profile(profile("LAN"));
    a->set_mode(ClockMode::kReal);
    b->set_mode(ClockMode::kReal);
    run_pair(*a, *b, 5, 1000);
    real_counters = a->counters();
  }
  CHECK(sim_counters.bytes_sent == real_counters.bytes_sent);
  CHECK(sim_counters.rounds == real_counters.rounds);
  CHECK(sim_time > 0);
}

TEST_CASE("real mode shaping approximates the closed form") {
  // 40 empty LAN rounds: expected ~40 ms wall (1 ms RTT each)
  auto [a, b] = InProcChannel::make_pair();
  for (auto* ch : {a.get(), b.get()}) {
    ch->set_profile(profile("LAN"));
    ch->set_mode(ClockMode::kReal);
  }
  auto t0 = std::chrono::steady_clock::now();
  run_pair(*a, *b, 40, 0);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double predicted = a->sim_elapsed_s();
  CHECK(wall >= predicted * 0.85);
  CHECK(wall <= predicted * 1.6 + 0.05);  // scheduler slack on loaded machines
}

TEST_CASE("wan at least 10x slower than lan when round-dominated") {
  auto [a, b] = InProcChannel::make_pair();
  a->set_profile(profile("LAN"));
  b->set_profile(profile("LAN"));
  run_pair(*a, *b, 20, 64);
  auto [c, d] = InProcChannel::make_pair();
  c->set_profile(profile("WAN"));
  d->set_profile(profile("WAN"));
  run_pair(*c, *d, 20, 64);
  CHECK(c->sim_elapsed_s() >= 10 * a->sim_elapsed_s());
}

TEST_CASE("counter additivity across channels") {
  auto [a, b] = InProcChannel::make_pair();
  auto [c, d] = InProcChannel::make_pair();
  run_pair(*a, *b, 3, 100);
  run_pair(*c, *d, 4, 200);
  uint64_t merged = a->counters().bytes_sent + c->counters().bytes_sent;
  CHECK(merged == 3 * 106 + 4 * 206);
}
