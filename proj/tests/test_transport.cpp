#include <gtest/gtest.h>

#include <thread>

#include "hetmpc/profiles.hpp"
#include "hetmpc/tcp.hpp"
#include "hetmpc/transport.hpp"

using namespace hetmpc;

namespace {

std::vector<RingElement> elems(std::initializer_list<u64> vs, int k) {
  std::vector<RingElement> out;
  for (u64 v : vs) out.emplace_back(v, k);
  return out;
}

}  // namespace

TEST(Frame, HeaderLayout) {
  Message m = make_element_msg(PartyId::P2, PartyId::P3, Phase::Online, MsgType::MulOnM2,
                               0x01020304, elems({0xAA}, 8), 8);
  auto f = frame_message(m);
  ASSERT_EQ(f.size(), kFrameHeaderBytes + 1);
  EXPECT_EQ(f[0], 1u);  // payload length, little endian
  EXPECT_EQ(f[1], 0u);
  EXPECT_EQ(f[4], static_cast<u8>(Phase::Online));
  EXPECT_EQ(f[5], static_cast<u8>(MsgType::MulOnM2));
  EXPECT_EQ(f[6], 0x04);
  EXPECT_EQ(f[9], 0x01);
  EXPECT_EQ(f[10], 0xAA);
}

TEST(Sim, DeliversInOrderAndMeters) {
  SimNetwork net;
  auto& p1 = net.endpoint(PartyId::P1);
  auto& p3 = net.endpoint(PartyId::P3);

  std::thread t([&] {
    p1.send(make_element_msg(PartyId::P1, PartyId::P3, Phase::Offline, MsgType::MulOffM1, 0,
                             elems({1, 2, 3}, 64), 64));
    p1.send(make_element_msg(PartyId::P1, PartyId::P3, Phase::Offline, MsgType::MulOffM1, 0,
                             elems({4}, 64), 64));
  });
  Message a = p3.recv(PartyId::P1);
  Message b = p3.recv(PartyId::P1);
  t.join();

  EXPECT_EQ(decode_elements(a.payload, 64, 3)[2].v, 3u);
  EXPECT_EQ(decode_elements(b.payload, 64, 1)[0].v, 4u);

  const auto& ch = net.board.channel(PartyId::P1, PartyId::P3);
  EXPECT_EQ(ch.total[0].elements, 4u);
  EXPECT_EQ(ch.total[0].messages, 2u);
  EXPECT_EQ(ch.total[0].bytes, 2 * kFrameHeaderBytes + 4 * 8);
  EXPECT_EQ(ch.total[0].rounds(), 1u);  // same step id
  EXPECT_EQ(ch.mul_elements(Phase::Offline), 4u);
  EXPECT_EQ(net.board.channel(PartyId::P3, PartyId::P1).total[0].messages, 0u);
}

TEST(Sim, RoundsCountDistinctSteps) {
  SimNetwork net;
  auto& p2 = net.endpoint(PartyId::P2);
  auto& p3 = net.endpoint(PartyId::P3);
  std::thread t([&] {
    for (u32 layer = 1; layer <= 5; ++layer) {
      p2.send(make_element_msg(PartyId::P2, PartyId::P3, Phase::Online, MsgType::MulOnM2, layer,
                               elems({layer, layer}, 8), 8));
    }
  });
  for (int i = 0; i < 5; ++i) p3.recv(PartyId::P2);
  t.join();
  const auto& ch = net.board.channel(PartyId::P2, PartyId::P3);
  EXPECT_EQ(ch.total[1].rounds(), 5u);
  EXPECT_EQ(ch.mul_rounds(Phase::Online), 5u);
  EXPECT_EQ(ch.total[1].elements, 10u);
}

TEST(Sim, VirtualClockAddsLatencyAndSerialization) {
  NetProfile np;
  np.channels[{PartyId::P1, PartyId::P3}] = {100.0, 10.0};  // 100ms, 10 bytes/ms
  SimNetwork net(np);
  auto& p1 = net.endpoint(PartyId::P1);
  auto& p3 = net.endpoint(PartyId::P3);

  std::thread t([&] {
    // 10 header + 80 payload = 90 bytes → 9ms serialization + 100ms latency.
    std::vector<RingElement> v(10, RingElement(7, 64));
    p1.send(make_element_msg(PartyId::P1, PartyId::P3, Phase::Online, MsgType::Share, 1, v, 64));
  });
  p3.recv(PartyId::P1);
  t.join();
  EXPECT_DOUBLE_EQ(p3.clock_ms, 109.0);
  EXPECT_DOUBLE_EQ(p1.clock_ms, 0.0);  // sends are asynchronous

  // A reply on the untouched reverse channel arrives instantly relative to
  // the receiver's clock.
  std::thread t2([&] {
    p3.send(make_element_msg(PartyId::P3, PartyId::P1, Phase::Online, MsgType::Share, 2,
                             elems({1}, 64), 64));
  });
  p1.recv(PartyId::P3);
  t2.join();
  EXPECT_DOUBLE_EQ(p1.clock_ms, 109.0);  // inherits sender's clock via arrival
}

TEST(Sim, BandwidthSerializesBackToBackSends) {
  NetProfile np;
  np.fallback = {0.0, 1.0};  // 1 byte per ms everywhere
  SimNetwork net(np);
  auto& p1 = net.endpoint(PartyId::P1);
  auto& p2 = net.endpoint(PartyId::P2);
  std::thread t([&] {
    for (int i = 0; i < 3; ++i)
      p1.send(make_element_msg(PartyId::P1, PartyId::P2, Phase::Online, MsgType::Share, 1,
                               elems({u64(i)}, 8), 8));
  });
  Message last;
  for (int i = 0; i < 3; ++i) last = p2.recv(PartyId::P1);
  t.join();
  // Three 11-byte frames share the link: the last finishes at 33ms.
  EXPECT_DOUBLE_EQ(p2.clock_ms, 33.0);
}

TEST(Transport, RecvExpectRejectsWrongType) {
  SimNetwork net;
  auto& p1 = net.endpoint(PartyId::P1);
  auto& p2 = net.endpoint(PartyId::P2);
  std::thread t([&] {
    p1.send(make_element_msg(PartyId::P1, PartyId::P2, Phase::Online, MsgType::Share, 3,
                             elems({1}, 8), 8));
  });
  EXPECT_THROW(p2.recv_expect(PartyId::P1, MsgType::MulOnM2, 3), ProtocolAbort);
  t.join();
}

TEST(Profile, ParsesJsonAndFallsBack) {
  auto np = net_profile_from_json(nlohmann::json::parse(R"({
    "default": {"latency_ms": 5},
    "channels": {
      "P1->P3": {"latency_ms": 150, "bandwidth_bytes_per_ms": 2.5},
      "P4->P1": {"bandwidth_bytes_per_ms": 7}
    }
  })"));
  EXPECT_DOUBLE_EQ(np.get(PartyId::P1, PartyId::P3).latency_ms, 150.0);
  EXPECT_DOUBLE_EQ(np.get(PartyId::P1, PartyId::P3).bandwidth_bytes_per_ms, 2.5);
  EXPECT_DOUBLE_EQ(np.get(PartyId::P4, PartyId::P1).latency_ms, 5.0);\
  EXPECT_DOUBLE_EQ(np.get(PartyId::P2, PartyId::P3).latency_ms, 5.0);
  EXPECT_THROW(net_profile_from_json(nlohmann::json::parse(R"({"channels": {"P9->P1": {}}})")),
               UsageError);
}

TEST(Tcp, ThreePartiesExchange) {
  const u16 base = 42110;
  std::vector<PartyId> parties = {PartyId::P1, PartyId::P2, PartyId::P3};
  std::vector<std::thread> threads;
  std::array<u64, 3> got{};

  for (int i = 0; i < 3; ++i) {
    threads.emplace_back([&, i] {
      PartyId me = static_cast<PartyId>(i);
      TcpParty t(me, parties, base);
      PartyId next = static_cast<PartyId>((i + 1) % 3);
      PartyId prev = static_cast<PartyId>((i + 2) % 3);
      t.send(make_element_msg(me, next, Phase::Online, MsgType::Share, 1,
                              {RingElement(10 + u64(i), 64)}, 64));
      Message m = t.recv_expect(prev, MsgType::Share, 1);
      got[i] = decode_elements(m.payload, 64, 1)[0].v;
      // Sender-side metering covers exactly this party's one send.
      EXPECT_EQ(t.board.channel(me, next).total[1].messages, 1u);
      EXPECT_EQ(t.board.channel(me, next).total[1].elements, 1u);
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(got[0], 12u);  // from P3
  EXPECT_EQ(got[1], 10u);  // from P1
  EXPECT_EQ(got[2], 11u);  // from P2
}

TEST(Tcp, LargePayloadRoundTrip) {
  const u16 base = 42120;
  std::vector<PartyId> parties = {PartyId::P1, PartyId::P2};
  std::vector<RingElement> big(5000, RingElement(0x1122334455667788ull, 64));
  std::thread a([&] {
    TcpParty t(PartyId::P1, parties, base);
    t.send(make_element_msg(PartyId::P1, PartyId::P2, Phase::Offline, MsgType::ShareMask, 0, big, 64));
    // Wait for the echo so the socket stays open long enough.
    Message m = t.recv(PartyId::P2);
    EXPECT_EQ(m.payload.size(), 1u);
  });
  std::thread b([&] {
    TcpParty t(PartyId::P2, parties, base);
    Message m = t.recv_expect(PartyId::P1, MsgType::ShareMask, 0);
    auto v = decode_elements(m.payload, 64, 5000);
    EXPECT_EQ(v.back().v, 0x1122334455667788ull);
    t.send(make_element_msg(PartyId::P2, PartyId::P1, Phase::Offline, MsgType::Digest, 0,
                            {RingElement(1, 8)}, 8));
  });
  a.join();
  b.join();
}
