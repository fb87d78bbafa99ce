#include <gtest/gtest.h>

#include <array>

#include "hetmpc/god.hpp"

using namespace hetmpc;

namespace {

constexpr u32 kAnyStep = 0xffffffffu;

// Misbehaving transport: in the first attempt it adds one to a payload byte
// of the chosen message kind (value tampering the checkpoints catch); in
// recovery attempts it truncates the chosen kind, which the receiver's size
// check rejects on the spot.
struct Saboteur : Transport {
  Transport& inner;
  u32 attempt;
  MsgType bump, trunc;
  bool persistent;
  u32 bump_step;

  Saboteur(Transport& t, u32 at, MsgType b, MsgType tr, bool keep, u32 step = kAnyStep)
      : inner(t), attempt(at), bump(b), trunc(tr), persistent(keep), bump_step(step) {}
  PartyId me() const override { return inner.me(); }
  void send(Message m) override {
    if (attempt == 0 && m.type == bump && !m.payload.empty() &&
        (bump_step == kAnyStep || m.step == bump_step))
      m.payload[0] += 1;
    if (attempt > 0 && persistent && m.type == trunc && !m.payload.empty()) m.payload.pop_back();
    inner.send(std::move(m));
  }
  Message recv(PartyId from) override { return inner.recv(from); }
};

Circuit recovery_circuit() {
  return parse_circuit(
      "in a P1\nin b P2\nin c P3\nin d P4\n"
      "mul m1 a b\nmul m2 m1 c\nadd s m2 d\nmul m3 m2 s\n"
      "out m3 ALL\n");
}

Circuit mul_chain16(u32 g) {
  std::string src = "ring 16\nin a P1\nin b P2\nmul m0 a b\n";
  for (u32 i = 1; i < g; ++i)
    src += "mul m" + std::to_string(i) + " m" + std::to_string(i - 1) + " b\n";
  src += "out m" + std::to_string(g - 1) + " ALL\n";
  return parse_circuit(src);
}

}  // namespace

TEST(Recovery, HonestRunNeedsNoResets) {
  RandomCircuitSpec spec;
  spec.seed = 5150;
  spec.body_gates = 60;
  spec.max_depth = 7;
  spec.k = 32;
  spec.owners = {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4};
  Circuit c = random_circuit(spec);
  std::vector<u64> flat;
  std::mt19937_64 gen(8);
  for (size_t i = 0; i < c.inputs.size(); ++i) flat.push_back(gen());
  auto expect = evaluate_cleartext(c, flat);

  std::array<SimNetwork, 5> nets;
  Engine4::Options opts;
  opts.checkpoint_interval = 2;
  auto outcomes = god_run(c, split_inputs(c, flat), nets, 99, opts);
  for (auto& [p, g] : outcomes) {
    ASSERT_TRUE(g.ok()) << party_name(p) << ": " << g.error;
    EXPECT_EQ(g.resets, 0u);
    EXPECT_FALSE(g.recovered);
    for (size_t i = 0; i < c.outputs.size(); ++i)
      EXPECT_EQ(g.outputs.at(c.outputs[i]), expect[i]) << party_name(p);
  }
}

// The elimination walk is P4, P1, P2, P3; a culprit that keeps misbehaving
// in every attempt is reached after exactly that many resets, and everyone
// (the culprit included) still ends with the correct output.
TEST(Recovery, PersistentCulpritIsWalkedOutInOrder) {
  struct Scenario {
    PartyId culprit;
    MsgType bump, trunc;
    u32 resets;
  };
  const std::vector<Scenario> scenarios = {
      {PartyId::P4, MsgType::MulOffO4, MsgType::MulOffM1, 1},
      {PartyId::P1, MsgType::OpenMask, MsgType::OpenMask, 2},
      {PartyId::P2, MsgType::MulOnM2, MsgType::MulOnM2, 3},
      {PartyId::P3, MsgType::MulOnM3, MsgType::MulOnM3, 4},
  };
  Circuit c = recovery_circuit();
  auto expect = evaluate_cleartext(c, {3, 5, 7, 9});

  for (const auto& sc : scenarios) {
    std::array<SimNetwork, 5> nets;
    GodWrap wrap = [&](u32 attempt, PartyId me, Transport& raw) -> std::unique_ptr<Transport> {
      if (me != sc.culprit) return nullptr;
      return std::make_unique<Saboteur>(raw, attempt, sc.bump, sc.trunc, true);
    };
    auto outcomes = god_run(c, split_inputs(c, {3, 5, 7, 9}), nets, 7000 + sc.resets, {}, wrap);
    for (auto& [p, g] : outcomes) {
      ASSERT_TRUE(g.ok()) << party_name(sc.culprit) << " scenario, " << party_name(p) << ": "
                          << g.error;
      EXPECT_EQ(g.resets, sc.resets) << party_name(p);
      EXPECT_TRUE(g.recovered);
      EXPECT_EQ(g.outputs.at(c.outputs[0]), expect[0])
          << party_name(sc.culprit) << " scenario, output at " << party_name(p);
    }
  }
}

// A one-shot fault costs one reset: the first configuration drops P4, which
// is honest here, and the status round plus delivery still hand P4 its
// outputs.
TEST(Recovery, OneShotFaultCostsOneResetAndStillDeliversEverywhere) {
  Circuit c = recovery_circuit();
  auto expect = evaluate_cleartext(c, {3, 5, 7, 9});
  std::array<SimNetwork, 5> nets;
  GodWrap wrap = [](u32 attempt, PartyId me, Transport& raw) -> std::unique_ptr<Transport> {
    if (me != PartyId::P2) return nullptr;
    return std::make_unique<Saboteur>(raw, attempt, MsgType::MulOnM2, MsgType::MulOnM2, false);
  };
  auto outcomes = god_run(c, split_inputs(c, {3, 5, 7, 9}), nets, 31337, {}, wrap);
  for (auto& [p, g] : outcomes) {
    ASSERT_TRUE(g.ok()) << party_name(p) << ": " << g.error;
    EXPECT_EQ(g.resets, 1u) << party_name(p);
    EXPECT_TRUE(g.recovered);
    EXPECT_EQ(g.outputs.at(c.outputs[0]), expect[0]) << party_name(p);
  }
}

// Tampering late in a deep circuit: the continuation resumes from the last
// verified checkpoint instead of replaying the whole run, and the refreshed
// masks keep the rebuilt three-party state consistent.
TEST(Recovery, LateFaultResumesFromMidCircuitSnapshot) {
  Circuit c = mul_chain16(9);
  auto expect = evaluate_cleartext(c, {3, 7});
  std::array<SimNetwork, 5> nets;
  Engine4::Options opts;
  opts.checkpoint_interval = 2;
  GodWrap wrap = [](u32 attempt, PartyId me, Transport& raw) -> std::unique_ptr<Transport> {
    if (me != PartyId::P2) return nullptr;
    return std::make_unique<Saboteur>(raw, attempt, MsgType::MulOnM2, MsgType::MulOnM2, true, 7);
  };
  auto outcomes = god_run(c, split_inputs(c, {3, 7}), nets, 4242, opts, wrap);
  for (auto& [p, g] : outcomes) {
    ASSERT_TRUE(g.ok()) << party_name(p) << ": " << g.error;
    EXPECT_EQ(g.resets, 3u) << party_name(p);
    EXPECT_EQ(g.outputs.at(c.outputs[0]), expect[0]) << party_name(p);
  }
}

TEST(Recovery, RejectsFairOpeningCombination) {
  Circuit c = recovery_circuit();
  std::array<SimNetwork, 5> nets;
  KeyedRandomness rng(1, PartyId::P1);
  Engine4::Options opts;
  opts.fair = true;
  EXPECT_THROW(god_party(c, PartyId::P1, {{0, 3}}, nets, rng, opts), UsageError);
}
