// Acceptance suite: one criterion per test, each ending in a single
// "[CRITERION n] PASS/FAIL" line. Tolerances are pinned here in code; every
// count is exact unless a bound is stated next to the assertion.

#include <gtest/gtest.h>

#include <chrono>
#include <mutex>
#include <random>

#include "hetmpc/harness.hpp"
#include "hetmpc/roles.hpp"

using namespace hetmpc;

namespace {

void report(int n, bool ok) {
  std::printf("[CRITERION %d] %s\n", n, ok ? "PASS" : "FAIL");
}

Circuit mul_chain(u32 g, int k) {
  std::string src = "ring " + std::to_string(k) + "\nin a P1\nin b P2\nmul m0 a b\n";
  for (u32 i = 1; i < g; ++i)
    src += "mul m" + std::to_string(i) + " m" + std::to_string(i - 1) + " b\n";
  src += "out m" + std::to_string(g - 1) + " ALL\n";
  return parse_circuit(src);
}

// Input stride coprime to ten spreads wire reuse across role triples; a
// multiple of six gates keeps the rotation fractions exact.
Circuit wide_mul_circuit(u32 muls, int k) {
  std::string src = "ring " + std::to_string(k) + "\n";
  for (int i = 0; i < 10; ++i)
    src += "in x" + std::to_string(i) + " P" + std::to_string(i % 3 + 1) + "\n";
  for (u32 i = 0; i < muls; ++i)
    src += "mul p" + std::to_string(i) + " x" + std::to_string(i % 10) + " x" +
           std::to_string((i * 7) % 10) + "\n";
  src += "out p" + std::to_string(muls - 1) + " ALL\n";
  return parse_circuit(src);
}

std::vector<u64> flat_inputs(const Circuit& c, std::mt19937_64& gen) {
  std::vector<u64> flat;
  for (size_t i = 0; i < c.inputs.size(); ++i) flat.push_back(gen());
  return flat;
}

void expect_oracle(const Circuit& c, const std::vector<u64>& flat,
                   const std::map<PartyId, PartyRun>& results, int n_parties,
                   const std::string& label) {
  auto expect = evaluate_cleartext(c, flat);
  for (const auto& [p, r] : results) ASSERT_TRUE(r.ok()) << label << " " << party_name(p) << ": " << r.error;
  for (int i = 0; i < n_parties; ++i) {
    const auto& r = results.at(static_cast<PartyId>(i));
    for (size_t o = 0; o < c.outputs.size(); ++o)
      ASSERT_EQ(r.outputs.at(c.outputs[o]), expect[o])
          << label << " " << party_name(static_cast<PartyId>(i)) << " output " << o;
  }
}

struct Tap : Transport {
  Transport& inner;
  std::vector<Message>& log;
  std::mutex& mu;

  Tap(Transport& t, std::vector<Message>& l, std::mutex& m) : inner(t), log(l), mu(m) {}
  PartyId me() const override { return inner.me(); }
  void send(Message m) override {
    m.from = me();
    {
      std::lock_guard<std::mutex> lk(mu);
      log.push_back(m);
    }
    inner.send(std::move(m));
  }
  Message recv(PartyId from) override { return inner.recv(from); }
};

u64 first_elem(const std::vector<Message>& log, PartyId from, PartyId to, MsgType t, int k) {
  for (const auto& m : log)
    if (m.from == from && m.to == to && m.type == t) return decode_elements(m.payload, k, 1)[0].v;
  ADD_FAILURE() << "no message " << party_name(from) << "->" << party_name(to);
  return ~u64{0};
}

nlohmann::json base_scenario(const std::string& circuit_text, const char* mode,
                             const char* corrupted, u64 seed) {
  nlohmann::json j;
  j["circuit_text"] = circuit_text;
  j["mode"] = mode;
  j["corrupted"] = corrupted;
  j["seed"] = seed;
  return j;
}

const std::array<PartyId, 3> kEvaluators = {PartyId::P1, PartyId::P2, PartyId::P3};
const std::array<PartyId, 4> kParties = {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4};

}  // namespace

// 1. Every protocol mode agrees with the cleartext oracle on 200 seeded
//    random circuits per ring in {1, 64}, inside a 60 second budget.
TEST(Acceptance, C1ProtocolsMatchTheCleartextOracle) {
  const int kCircuits = 200;  // per ring, each circuit run under all 4 modes
  const double kBudgetSeconds = 60.0;
  auto t0 = std::chrono::steady_clock::now();

  for (int ring : {1, 64}) {
    for (int i = 0; i < kCircuits && !HasFatalFailure(); ++i) {
      RandomCircuitSpec spec;
      spec.seed = static_cast<u64>(ring) * 100000 + i;
      spec.body_gates = 24 + (i % 8) * 12;
      spec.k = ring;
      spec.owners = {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::Outsider};
      Circuit c = random_circuit(spec);
      std::mt19937_64 gen(spec.seed ^ 0x5eed5eed);
      auto flat = flat_inputs(c, gen);
      auto inputs = split_inputs(c, flat);
      const std::string label = "ring " + std::to_string(ring) + " seed " + std::to_string(i);

      {
        SimNetwork net;
        expect_oracle(c, flat, run3(c, inputs, net, spec.seed), 3, label + " 3pc");
      }
      {
        SimNetwork net;
        expect_oracle(c, flat, run4(c, inputs, net, spec.seed), 4, label + " 4pc");
      }
      {
        SimNetwork net;
        expect_oracle(c, flat, run_rotated(c, inputs, net, spec.seed), 4, label + " rotate");
      }
      {
        auto out = run_permuted3(c, inputs, spec.seed);
        for (size_t inst = 0; inst < out.instances.size(); ++inst)
          expect_oracle(c, flat, out.instances[inst], 3,
                        label + " perm instance " + std::to_string(inst));
      }
    }
  }

  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, kBudgetSeconds);
  report(1, !HasFailure());
}

// 2. Three-party per-gate budget: offline one element on C(P1->P3) only,
//    online one element each way between the evaluators only, and local
//    multiplications exactly 2 offline (all at P1) plus 3 online.
TEST(Acceptance, C2ThreePartyPerGateBudget) {
  struct Shape {
    Circuit c;
    const char* label;
  };
  const u64 G = 60;
  Shape shapes[] = {{mul_chain(G, 64), "chain64"}, {wide_mul_circuit(G, 1), "wide1"}};

  for (auto& [c, label] : shapes) {
    ASSERT_EQ(c.mul_count, G);
    SimNetwork net;
    std::mt19937_64 gen(7);
    auto flat = flat_inputs(c, gen);
    auto results = run3(c, split_inputs(c, flat), net, 7);
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << label << " " << r.error;

    for (PartyId from : kEvaluators)
      for (PartyId to : kEvaluators) {
        if (from == to) continue;
        const auto& ch = net.board.channel(from, to);
        u64 off = from == PartyId::P1 && to == PartyId::P3 ? G : 0;
        u64 on = (from == PartyId::P2 && to == PartyId::P3) ||
                         (from == PartyId::P3 && to == PartyId::P2)
                     ? G
                     : 0;
        EXPECT_EQ(ch.mul_elements(Phase::Offline), off) << label << " " << channel_name({from, to});
        EXPECT_EQ(ch.mul_elements(Phase::Online), on) << label << " " << channel_name({from, to});
      }

    EXPECT_EQ(results[PartyId::P1].mul_offline, 2 * G) << label;
    EXPECT_EQ(results[PartyId::P1].mul_online, 0u) << label;
    EXPECT_EQ(results[PartyId::P2].mul_offline + results[PartyId::P3].mul_offline, 0u) << label;
    EXPECT_EQ(results[PartyId::P2].mul_online + results[PartyId::P3].mul_online, 3 * G) << label;
  }
  report(2, !HasFailure());
}

// 3. Four-party per-gate budget: two offline elements (o1 on C(P1->P3), o4
//    on C(P4->P1)), three online (m2, m3 and the deferred m3'), and zero
//    multiplication elements on the seven unused directions.
TEST(Acceptance, C3FourPartyPerGateBudget) {
  struct Shape {
    Circuit c;
    const char* label;
  };
  const u64 G = 60;
  Shape shapes[] = {{mul_chain(G, 64), "chain64"}, {wide_mul_circuit(G, 1), "wide1"}};

  for (auto& [c, label] : shapes) {
    SimNetwork net;
    std::mt19937_64 gen(8);
    auto flat = flat_inputs(c, gen);
    auto results = run4(c, split_inputs(c, flat), net, 8);
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << label << " " << r.error;

    const auto& b = net.board;
    EXPECT_EQ(b.channel(PartyId::P1, PartyId::P3).type_elements(Phase::Offline, MsgType::MulOffO1),
              G)
        << label;
    EXPECT_EQ(b.channel(PartyId::P4, PartyId::P1).type_elements(Phase::Offline, MsgType::MulOffO4),
              G)
        << label;
    EXPECT_EQ(b.channel(PartyId::P2, PartyId::P3).type_elements(Phase::Online, MsgType::MulOnM2),
              G)
        << label;
    EXPECT_EQ(b.channel(PartyId::P3, PartyId::P2).type_elements(Phase::Online, MsgType::MulOnM3),
              G)
        << label;
    EXPECT_EQ(b.channel(PartyId::P3, PartyId::P1).type_elements(Phase::Online, MsgType::MulOnM3p),
              G)
        << label;

    u64 total_off = 0, total_on = 0, silent = 0;
    for (PartyId from : kParties)
      for (PartyId to : kParties) {
        if (from == to) continue;
        const auto& ch = b.channel(from, to);
        total_off += ch.mul_elements(Phase::Offline);
        total_on += ch.mul_elements(Phase::Online);
        silent += ch.mul_elements(Phase::Offline) + ch.mul_elements(Phase::Online) == 0;
      }
    EXPECT_EQ(total_off, 2 * G) << label;
    EXPECT_EQ(total_on, 3 * G) << label;
    EXPECT_EQ(silent, 7u) << label;
  }
  report(3, !HasFailure());
}

// 4. Round profile: one offline round per active offline channel, online
//    rounds between the evaluators equal to the multiplication depth, and
//    the deferred stream toward P1 batched into at most one round per
//    checkpoint.
TEST(Acceptance, C4RoundProfile) {
  const u64 G = 40;
  const u32 kInterval = 7;
  Circuit c = mul_chain(G, 64);
  ASSERT_EQ(c.depth, G);

  {
    SimNetwork net;
    std::mt19937_64 gen(9);
    auto results = run3(c, split_inputs(c, flat_inputs(c, gen)), net, 9);
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;
    EXPECT_EQ(net.board.channel(PartyId::P1, PartyId::P3).mul_rounds(Phase::Offline), 1u);
    EXPECT_EQ(net.board.channel(PartyId::P2, PartyId::P3).mul_rounds(Phase::Online), G);
    EXPECT_EQ(net.board.channel(PartyId::P3, PartyId::P2).mul_rounds(Phase::Online), G);
  }
  {
    SimNetwork net;
    std::mt19937_64 gen(10);
    Engine4::Options opts;
    opts.checkpoint_interval = kInterval;
    auto results = run4(c, split_inputs(c, flat_inputs(c, gen)), net, 10, opts);
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;
    const auto& b = net.board;
    EXPECT_EQ(b.channel(PartyId::P1, PartyId::P3).mul_rounds(Phase::Offline), 1u);
    EXPECT_EQ(b.channel(PartyId::P4, PartyId::P1).mul_rounds(Phase::Offline), 1u);
    EXPECT_EQ(b.channel(PartyId::P2, PartyId::P3).mul_rounds(Phase::Online), G);
    EXPECT_EQ(b.channel(PartyId::P3, PartyId::P2).mul_rounds(Phase::Online), G);

    const PhaseMetrics* lazy =
        b.channel(PartyId::P3, PartyId::P1).type_metrics(Phase::Online, MsgType::MulOnM3p);
    ASSERT_NE(lazy, nullptr);
    EXPECT_GE(lazy->rounds(), 1u);
    EXPECT_LE(lazy->rounds(), static_cast<u64>(G) / kInterval + 1);  // checkpoints + final flush
  }
  report(4, !HasFailure());
}

// 5. Homogenization over a 600-multiplication circuit: the six-instance
//    permutation schedule gives every directed evaluator channel half an
//    element per gate per instance; the 24-instance four-party schedule
//    gives every directed channel 5/12; gate rotation gives evaluator
//    channels 2/3 (one sixth offline, one half online) and the dealer's
//    downlinks one third.
TEST(Acceptance, C5HomogenizationFractions) {
  const u64 G = 600;
  Circuit c = wide_mul_circuit(G, 1);
  ASSERT_EQ(c.mul_count, G);
  std::mt19937_64 gen(11);
  auto flat = flat_inputs(c, gen);
  auto inputs = split_inputs(c, flat);

  {
    auto out = run_permuted3(c, inputs, 21);
    for (PartyId from : kEvaluators)
      for (PartyId to : kEvaluators) {
        if (from == to) continue;
        const auto& ch = out.channels.at({from, to});
        // (G + 2G) over 6 instances = 1/2 element per gate per instance.
        EXPECT_EQ(ch.mul_elements(Phase::Offline), G) << channel_name({from, to});
        EXPECT_EQ(ch.mul_elements(Phase::Online), 2 * G) << channel_name({from, to});
      }
  }
  {
    auto out = run_permuted4(c, inputs, 22);
    for (PartyId from : kParties)
      for (PartyId to : kParties) {
        if (from == to) continue;
        const auto& ch = out.channels.at({from, to});
        // (4G + 6G) over 24 instances = 5/12 element per gate per instance.
        EXPECT_EQ(ch.mul_elements(Phase::Offline), 4 * G) << channel_name({from, to});
        EXPECT_EQ(ch.mul_elements(Phase::Online), 6 * G) << channel_name({from, to});
      }
  }
  {
    SimNetwork net;
    auto results = run_rotated(c, inputs, net, 23);
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;
    for (PartyId from : kEvaluators)
      for (PartyId to : kEvaluators) {
        if (from == to) continue;
        const auto& ch = net.board.channel(from, to);
        EXPECT_EQ(ch.mul_elements(Phase::Offline), G / 6) << channel_name({from, to});
        EXPECT_EQ(ch.mul_elements(Phase::Online), G / 2) << channel_name({from, to});
      }
    for (PartyId e : kEvaluators) {
      EXPECT_EQ(net.board.channel(PartyId::P4, e).mul_elements(Phase::Offline), G / 3);
      EXPECT_EQ(net.board.channel(PartyId::P4, e).mul_elements(Phase::Online), 0u);
      EXPECT_EQ(net.board.channel(e, PartyId::P4).mul_elements(Phase::Offline), 0u);
      EXPECT_EQ(net.board.channel(e, PartyId::P4).mul_elements(Phase::Online), 0u);
    }
  }
  report(5, !HasFailure());
}

// 6. Exhaustive single-tamper sweep: every multiplication message kind,
//    shifted by one at each of twenty gates by its canonical sender, aborts
//    every honest party before any output is released; one hundred honest
//    runs release outputs with zero aborts.
TEST(Acceptance, C6TamperSweepAndFalseAbortRate) {
  const u32 kGates = 20;
  std::string text = "ring 16\nin a P1\nin b P2\nmul m0 a b\n";
  for (u32 i = 1; i < kGates; ++i)
    text += "mul m" + std::to_string(i) + " m" + std::to_string(i - 1) + " b\n";
  text += "out m" + std::to_string(kGates - 1) + " ALL\n";

  struct Case {
    const char* type;
    const char* culprit;
  };
  const Case cases[] = {
      {"o1", "P1"}, {"o4", "P4"}, {"m2", "P2"}, {"m3", "P3"}, {"m3p", "P3"}};

  int aborts = 0, sweeps = 0;
  for (const Case& cs : cases) {
    for (u32 g = 2; g < kGates + 2; ++g) {  // gate ids of the multiplications
      nlohmann::json j = base_scenario(text, "4pc", cs.culprit, 400 + g);
      j["inputs"] = {{"a", 3}, {"b", 5}};
      j["rules"] = {{{"type", cs.type}, {"gate", g}, {"delta", 1}}};
      auto oc = run_scenario(parse_scenario(j));
      ++sweeps;
      bool caught = oc.kind == "abort" && oc.unanimous && oc.outputs.empty();
      aborts += caught;
      EXPECT_TRUE(caught) << cs.type << " at gate " << g << " ended in " << oc.kind;
    }
  }
  EXPECT_EQ(sweeps, 100);
  EXPECT_EQ(aborts, sweeps);  // 100% detection

  Circuit c = parse_circuit(text);
  int false_aborts = 0;
  for (u64 seed = 1; seed <= 100; ++seed) {
    SimNetwork net;
    Engine4::Options opts;
    opts.checkpoint_interval = 1 + seed % 10;
    std::mt19937_64 gen(seed);
    auto flat = flat_inputs(c, gen);
    auto results = run4(c, split_inputs(c, flat), net, seed, opts);
    auto expect = evaluate_cleartext(c, flat);
    for (auto& [p, r] : results) {
      false_aborts += !r.ok();
      if (r.ok() && p != PartyId::Outsider)
        EXPECT_EQ(r.outputs.at(c.outputs[0]), expect[0]) << "seed " << seed;
    }
  }
  EXPECT_EQ(false_aborts, 0);
  report(6, !HasFailure());
}

// 7. Fair opening scenarios settle unanimously, and an abort injected in
//    the relay round, where no exclusion token can back it, is ignored:
//    everyone still receives the output.
TEST(Acceptance, C7FairOpeningScenarios) {
  const std::string text =
      "ring 16\nin a P1\nin b P2\nmul m0 a b\nmul m1 m0 b\nout m1 ALL\n";
  Circuit c = parse_circuit(text);
  auto oracle = evaluate_cleartext(c, {3, 5});

  auto run_case = [&](nlohmann::json j, const char* kind, const char* label) {
    j["inputs"] = {{"a", 3}, {"b", 5}};
    auto oc = run_scenario(parse_scenario(j));
    EXPECT_EQ(oc.kind, kind) << label;
    EXPECT_TRUE(oc.unanimous) << label;
    if (std::string(kind) == "output")
      EXPECT_EQ(oc.outputs.at(c.outputs[0]), oracle[0]) << label;
  };

  // Honest baseline.
  run_case(base_scenario(text, "fair", "P4", 50), "output", "honest");
  // Authenticated first-round walkout stops everyone.
  {
    auto j = base_scenario(text, "fair", "P4", 51);
    j["rules"] = {{{"type", "abort"}, {"round", 1}}};
    run_case(j, "abort", "round-1 walkout");
  }
  // Unauthenticated second-round abort is ignored: all-output.
  {
    auto j = base_scenario(text, "fair", "P4", 52);
    j["rules"] = {{{"type", "abort"}, {"round", 2}}};
    run_case(j, "output", "round-2 walkout");
  }
  // A tampered reveal loses to the honest holder's matching copy.
  {
    auto j = base_scenario(text, "fair", "P4", 53);
    j["rules"] = {{{"type", "x_reveal"}}};
    run_case(j, "output", "reveal tamper");
  }
  // Disagreeing commitments abort before anything is revealed.
  {
    auto j = base_scenario(text, "fair", "P4", 54);
    j["rules"] = {{{"type", "digest"}}};
    run_case(j, "abort", "commitment tamper");
  }
  report(7, !HasFailure());
}

// 8. Guaranteed delivery: each party in turn cheats persistently, in the
//    first run and in every rerun; the elimination walk reaches it within
//    four resets and every party finishes with the oracle output.
TEST(Acceptance, C8GuaranteedDeliveryAgainstPersistentCheats) {
  const std::string text =
      "in a P1\nin b P2\nin c P3\nin d P4\n"
      "mul m1 a b\nmul m2 m1 c\nadd s m2 d\nmul m3 m2 s\nout m3 ALL\n";
  Circuit c = parse_circuit(text);
  auto oracle = evaluate_cleartext(c, {3, 5, 7, 9});

  struct Case {
    const char* culprit;
    nlohmann::json rules;
  };
  const Case cases[] = {
      {"P1", {{{"type", "x_reveal"}, {"attempt", "all"}}}},
      {"P2", {{{"type", "m2"}, {"attempt", "all"}}}},
      {"P3", {{{"type", "m3"}, {"attempt", "all"}}}},
      {"P4",
       {{{"type", "o4"}, {"attempt", "first"}},
        {{"type", "m1"}, {"mutation", "drop"}, {"attempt", "recovery"}}}},
  };

  for (const Case& cs : cases) {
    auto j = base_scenario(text, "god", cs.culprit, 60);
    j["inputs"] = {{"a", 3}, {"b", 5}, {"c", 7}, {"d", 9}};
    j["rules"] = cs.rules;
    auto oc = run_scenario(parse_scenario(j));
    EXPECT_EQ(oc.kind, "god-output") << cs.culprit;
    EXPECT_TRUE(oc.unanimous) << cs.culprit;
    EXPECT_LE(oc.resets, 4u) << cs.culprit;
    for (const auto& [p, g] : oc.god)
      EXPECT_EQ(g.outputs.at(c.outputs[0]), oracle[0]) << cs.culprit << " " << party_name(p);
  }
  report(8, !HasFailure());
}

// 9. Sharing costs: one online element when a computing party deals an
//    input, two when an outsider does.
TEST(Acceptance, C9SharingCostsPerDealer) {
  Circuit c = parse_circuit(
      "in w P1\nin x P2\nin y P3\nin z O\n"
      "add s1 w x\nadd s2 s1 y\nadd s3 s2 z\nout s3 ALL\n");
  SimNetwork net;
  auto results = run3(c, split_inputs(c, {1, 2, 3, 4}), net, 31);
  for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;

  auto sent = [&](PartyId dealer) {
    u64 n = 0;
    for (PartyId to : kEvaluators)
      n += net.board.channel(dealer, to).type_elements(Phase::Online, MsgType::Share);
    return n;
  };
  EXPECT_EQ(sent(PartyId::P1), 1u);
  EXPECT_EQ(sent(PartyId::P2), 1u);
  EXPECT_EQ(sent(PartyId::P3), 1u);
  EXPECT_EQ(sent(PartyId::Outsider), 2u);
  report(9, !HasFailure());
}

// 10. The mod-8 worked example (a=3, b=5 under the listed masks) is first
//     reproduced with plain integer arithmetic, then the engines run with
//     those masks scripted and must put the same values on the wire.
TEST(Acceptance, C10WorkedExampleBruteForceThenOnTheWire) {
  const int a = 3, b = 5;
  auto m8 = [](int v) { return ((v % 8) + 8) % 8; };

  // Three-party formulas, masks x=(2,6), y=(1,4), pad r12=7, output z=(3,5).
  {
    const int x2 = 2, x3 = 6, y2 = 1, y3 = 4, r12 = 7, z2 = 3, z3 = 5;
    int a2 = m8(a + x2), a3 = m8(a + x3), b2 = m8(b + y2), b3 = m8(b + y3);
    int x1 = m8(x2 - x3), y1 = m8(y2 - y3);
    int m1 = m8(x3 * y3 - x1 * y1 + r12);
    int m2 = m8(a3 * y2 + b3 * x2 + r12 - z2);
    int m3 = m8(a2 * b2 + m1 + z3);
    ASSERT_EQ(m1, 3);
    ASSERT_EQ(m2, 7);
    ASSERT_EQ(m3, 6);
    ASSERT_EQ(m8(m3 - (a3 * y2 + b3 * x2 + r12)), m8(a * b + z3));  // P2's share
    ASSERT_EQ(m8(a2 * b2 + m1 - m2), m8(a * b + z2));               // P3's share

    Circuit c = parse_circuit("ring 8\nin a O\nin b O\nmul p a b\nout p ALL\n");
    SimNetwork net;
    std::vector<Message> log;
    std::mutex mu;
    auto results = run_parties(parties3(c), [&](PartyId p, MulMeter& meter) {
      ScriptedRandomness rng;
      rng.set(kset::op1, purpose::MaskX2, 0, 2);
      rng.set(kset::op1, purpose::MaskX3, 0, 6);
      rng.set(kset::op1, purpose::MaskX2, 1, 1);
      rng.set(kset::op1, purpose::MaskX3, 1, 4);
      rng.set(kset::p12, purpose::MulPad, 2, 7);
      rng.set(kset::p12, purpose::MaskX2, 2, 3);
      rng.set(kset::p13, purpose::MaskX3, 2, 5);
      Tap tap(net.endpoint(p), log, mu);
      Engine3 eng(c, tap, rng);
      auto out = eng.run(p == PartyId::Outsider ? std::map<u32, u64>{{0, 3}, {1, 5}}
                                                : std::map<u32, u64>{});
      meter = eng.meter;
      return out;
    });
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;
    for (PartyId p : kEvaluators) EXPECT_EQ(results[p].outputs.at(3), 15u);
    EXPECT_EQ(first_elem(log, PartyId::P1, PartyId::P3, MsgType::MulOffM1, 8) % 8, u64(m1));
    EXPECT_EQ(first_elem(log, PartyId::P2, PartyId::P3, MsgType::MulOnM2, 8) % 8, u64(m2));
    EXPECT_EQ(first_elem(log, PartyId::P3, PartyId::P2, MsgType::MulOnM3, 8) % 8, u64(m3));
  }

  // Four-party formulas, pads r124=7, r234=3 on top of the same masks.
  {
    const int x2 = 2, x3 = 6, y2 = 1, y3 = 4;
    const int r124 = 7, r234 = 3, z2 = 3, z3 = 5;
    int x1 = m8(x2 - x3), y1 = m8(y2 - y3);
    int a2 = m8(a + x2), a3 = m8(a + x3), b2 = m8(b + y2), b3 = m8(b + y3);
    int o1 = m8(-x1 * y1 - r124);
    int o4 = m8(x2 * y2 - x3 * y3 - r234);
    int m2 = m8(a3 * b3 + x2 * y2 + r124 + z2);
    int m3 = m8(a2 * b2 + o1 + x3 * y3 + z3);
    int m3p = m8((a2 - x3) * (b2 - y3) + r234 + z3);
    ASSERT_EQ(o1, 5);
    ASSERT_EQ(o4, 7);
    ASSERT_EQ(m2, 5);
    ASSERT_EQ(m3, 0);
    ASSERT_EQ(m3p, 6);
    // Both routes to P2's output share agree with the padded product.
    ASSERT_EQ(m8(m3 - a3 * y2 - b3 * x2 + r124), m8(a * b + z3));
    ASSERT_EQ(m8(m2 - a2 * y3 - b2 * x3 + o1), m8(a * b + z2));
    ASSERT_EQ(m8(m3p - a3 * y1 - b3 * x1 + o4 - 2 * x1 * y1), m8(a * b + z3));

    Circuit c = parse_circuit("ring 8\nin a P1\nin b P2\nmul p a b\nout p ALL\n");
    SimNetwork net;
    std::vector<Message> log;
    std::mutex mu;
    auto results = run_parties(parties4(c), [&](PartyId p, MulMeter& meter) {
      ScriptedRandomness rng;
      rng.set(MaskTripleSeeds::k124, purpose::WireMask, 0, 2);
      rng.set(MaskTripleSeeds::k134, purpose::WireMask, 0, 6);
      rng.set(MaskTripleSeeds::k124, purpose::WireMask, 1, 1);
      rng.set(MaskTripleSeeds::k134, purpose::WireMask, 1, 4);
      rng.set(MaskTripleSeeds::k124, purpose::WireMask, 2, 3);
      rng.set(MaskTripleSeeds::k134, purpose::WireMask, 2, 5);
      rng.set(MaskTripleSeeds::k124, purpose::MulPad, 2, 7);
      rng.set(MaskTripleSeeds::k234, purpose::MulPad, 2, 3);
      Tap tap(net.endpoint(p), log, mu);
      Engine4 eng(c, tap, rng);
      std::map<u32, u64> in;
      if (p == PartyId::P1) in[0] = 3;
      if (p == PartyId::P2) in[1] = 5;
      auto out = eng.run(in);
      meter = eng.meter;
      return out;
    });
    for (auto& [p, r] : results) ASSERT_TRUE(r.ok()) << r.error;
    for (PartyId p : kParties) EXPECT_EQ(results[p].outputs.at(3), 15u);
    EXPECT_EQ(first_elem(log, PartyId::P1, PartyId::P3, MsgType::MulOffO1, 8) % 8, u64(o1));
    EXPECT_EQ(first_elem(log, PartyId::P4, PartyId::P1, MsgType::MulOffO4, 8) % 8, u64(o4));
    EXPECT_EQ(first_elem(log, PartyId::P2, PartyId::P3, MsgType::MulOnM2, 8) % 8, u64(m2));
    EXPECT_EQ(first_elem(log, PartyId::P3, PartyId::P2, MsgType::MulOnM3, 8) % 8, u64(m3));
    EXPECT_EQ(first_elem(log, PartyId::P3, PartyId::P1, MsgType::MulOnM3p, 8) % 8, u64(m3p));
  }
  report(10, !HasFailure());
}
