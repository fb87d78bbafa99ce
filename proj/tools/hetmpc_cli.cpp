// Command-line front end.
//
//   hetmpc run <circuit>     evaluate a circuit under one of the protocols
//   hetmpc eval <circuit>    cleartext reference evaluation
//   hetmpc bench             measured per-gate costs vs. the design budget
//   hetmpc attack <json>     replay an adversarial scenario file
//
// Exit codes: 0 success, 1 usage or configuration error, 2 protocol abort.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hetmpc/harness.hpp"
#include "hetmpc/profiles.hpp"
#include "hetmpc/roles.hpp"
#include "hetmpc/tcp.hpp"

namespace hetmpc {
namespace {

Circuit load_circuit(const std::string& path, bool bristol, int ring_override) {
  std::ifstream f(path);
  if (!f.good()) throw UsageError("cannot open circuit " + path);
  Circuit c = bristol ? parse_bristol(f) : parse_circuit(f);
  if (ring_override) {
    if (!valid_width(ring_override))
      throw UsageError("unsupported ring width " + std::to_string(ring_override));
    c.k = ring_override;
  }
  return c;
}

PartyId parse_party(const std::string& s) {
  for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4, PartyId::Outsider})
    if (party_name(p) == s) return p;
  throw UsageError("unknown party '" + s + "'");
}

// Inputs come as a JSON object keyed by gate name, inline or as @file;
// anything not named is drawn from the seed, one value per unnamed gate.
nlohmann::json parse_inputs_arg(const std::string& arg) {
  if (arg.empty()) return nlohmann::json::object();
  nlohmann::json j;
  try {
    if (arg[0] == '@') {
      std::ifstream f(arg.substr(1));
      if (!f.good()) throw UsageError("cannot open inputs file " + arg.substr(1));
      f >> j;
    } else {
      j = nlohmann::json::parse(arg);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad inputs JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw UsageError("inputs must be a JSON object of name: value");
  return j;
}

std::vector<u64> resolve_inputs(const Circuit& c, const nlohmann::json& named, u64 seed) {
  for (auto it = named.begin(); it != named.end(); ++it) {
    bool known = false;
    for (u32 id : c.inputs) known |= c.gate(id).name == it.key();
    if (!known) throw UsageError("'" + it.key() + "' is not an input of this circuit");
  }
  std::mt19937_64 gen(seed);
  std::vector<u64> flat;
  for (u32 id : c.inputs) {
    const Gate& g = c.gate(id);
    flat.push_back(named.contains(g.name) ? named[g.name].get<u64>() : gen());
  }
  return flat;
}

void print_outputs(const Circuit& c, PartyId p, const std::map<u32, u64>& outputs) {
  std::printf("%s:", party_name(p).c_str());
  for (const auto& [id, v] : outputs)
    std::printf(" %s=%" PRIu64, c.gate(id).name.c_str(), v);
  std::printf("\n");
}

// Per-channel traffic with each channel's slice of the phase's
// multiplication elements, which is where the homogenization fractions
// show up.
void print_traffic(const ChannelTotals& channels) {
  u64 mul_total[2] = {0, 0};
  for (const auto& [key, cm] : channels)
    for (int ph = 0; ph < 2; ++ph) mul_total[ph] += cm.mul_elements(static_cast<Phase>(ph));

  std::printf("%-8s %-8s %9s %10s %9s %7s %10s\n", "channel", "phase", "elements", "bytes",
              "messages", "rounds", "mul share");
  for (const auto& [key, cm] : channels) {
    for (int ph = 0; ph < 2; ++ph) {
      const PhaseMetrics& pm = cm.total[ph];
      if (pm.messages == 0) continue;
      std::printf("%-8s %-8s %9" PRIu64 " %10" PRIu64 " %9" PRIu64 " %7" PRIu64,
                  channel_name(key).c_str(), ph == 0 ? "offline" : "online", pm.elements,
                  pm.bytes, pm.messages, pm.rounds());
      u64 mul = cm.mul_elements(static_cast<Phase>(ph));
      if (mul && mul_total[ph])
        std::printf(" %9.1f%%", 100.0 * static_cast<double>(mul) / static_cast<double>(mul_total[ph]));
      std::printf("\n");
    }
  }
}

ChannelTotals totals_of(const MetricsBoard& board) {
  ChannelTotals t;
  merge_into(t, board);
  return t;
}

struct RunConfig {
  std::string circuit;
  bool bristol = false;
  std::string proto = "4pc";
  int ring = 0;
  std::string transport = "sim";
  std::string profile;
  std::string homogenize = "off";
  u64 seed = 1;
  u32 checkpoint_interval = 10;
  bool god = false;
  bool fair = false;
  std::string inputs;
  std::string party;
  u16 listen = 7000;
  std::vector<std::string> connect;
};

int exit_code_for(const std::map<PartyId, PartyRun>& runs) {
  for (const auto& [p, r] : runs) {
    if (r.aborted) {
      std::fprintf(stderr, "abort at %s: %s\n", party_name(p).c_str(), r.error.c_str());
      return 2;
    }
    if (!r.error.empty()) {
      std::fprintf(stderr, "error at %s: %s\n", party_name(p).c_str(), r.error.c_str());
      return 1;
    }
  }
  return 0;
}

int run_over_tcp(const RunConfig& cfg, const Circuit& c, const PartyInputs& inputs) {
  if (cfg.profile.empty())
    throw UsageError("transport tcp needs --profile with the agreed link parameters");
  net_profile_from_file(cfg.profile);  // all parties must share a readable profile
  if (cfg.party.empty()) throw UsageError("transport tcp needs --party");
  if (cfg.god) throw UsageError("--god reruns need the simulated transport");
  if (cfg.homogenize != "off")
    throw UsageError("role schedules need the simulated transport");

  PartyId me = parse_party(cfg.party);
  std::map<PartyId, std::string> hosts;
  for (const std::string& s : cfg.connect) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--connect wants P=host, got '" + s + "'");
    hosts[parse_party(s.substr(0, eq))] = s.substr(eq + 1);
  }

  const auto parties = cfg.proto == "3pc" ? parties3(c) : parties4(c);
  if (std::find(parties.begin(), parties.end(), me) == parties.end())
    throw UsageError(party_name(me) + " has no role in this run");
  TcpParty link(me, parties, cfg.listen, hosts);
  KeyedRandomness rng(cfg.seed, me);

  auto it = inputs.find(me);
  const auto my_inputs = it == inputs.end() ? std::map<u32, u64>{} : it->second;
  std::map<u32, u64> out;
  if (cfg.proto == "3pc") {
    Engine3 eng(c, link, rng);
    out = eng.run(my_inputs);
  } else {
    Engine4::Options opts;
    opts.checkpoint_interval = cfg.checkpoint_interval;
    opts.fair = cfg.fair;
    Engine4 eng(c, link, rng, opts);
    out = eng.run(my_inputs);
  }
  print_outputs(c, me, out);
  std::printf("traffic sent by %s:\n", party_name(me).c_str());
  print_traffic(totals_of(link.board));
  return 0;
}

int cmd_run(const RunConfig& cfg) {
  if (cfg.proto != "3pc" && cfg.proto != "4pc")
    throw UsageError("--proto must be 3pc or 4pc");
  if (cfg.homogenize != "off" && cfg.homogenize != "perm" && cfg.homogenize != "rotate")
    throw UsageError("--homogenize must be off, perm or rotate");
  if (cfg.transport != "sim" && cfg.transport != "tcp")
    throw UsageError("--transport must be sim or tcp");
  if (cfg.proto == "3pc" && (cfg.god || cfg.fair))
    throw UsageError("fair opening and guaranteed delivery need the four-party protocol");
  if (cfg.proto == "3pc" && cfg.homogenize == "rotate")
    throw UsageError("gate rotation needs the four-party protocol");
  if (cfg.god && cfg.fair) throw UsageError("choose one of --god and --fair");
  if ((cfg.god || cfg.fair) && cfg.homogenize != "off")
    throw UsageError("role schedules run with the plain abort engine");

  Circuit c = load_circuit(cfg.circuit, cfg.bristol, cfg.ring);
  auto flat = resolve_inputs(c, parse_inputs_arg(cfg.inputs), cfg.seed);
  auto inputs = split_inputs(c, flat);
  Engine4::Options opts;
  opts.checkpoint_interval = cfg.checkpoint_interval;
  opts.fair = cfg.fair;

  if (cfg.transport == "tcp") return run_over_tcp(cfg, c, inputs);
  NetProfile profile;
  if (!cfg.profile.empty()) profile = net_profile_from_file(cfg.profile);

  if (cfg.god) {
    std::array<SimNetwork, 5> nets{SimNetwork(profile), SimNetwork(profile), SimNetwork(profile),
                                   SimNetwork(profile), SimNetwork(profile)};
    auto runs = god_run(c, inputs, nets, cfg.seed, opts);
    int code = 0;
    ChannelTotals channels;
    for (auto& net : nets) merge_into(channels, net.board);
    for (const auto& [p, g] : runs) {
      if (!g.ok()) {
        std::fprintf(stderr, "error at %s: %s\n", party_name(p).c_str(), g.error.c_str());
        code = 1;
        continue;
      }
      print_outputs(c, p, g.outputs);
      if (g.resets)
        std::printf("  recovered after %u reset%s\n", g.resets, g.resets == 1 ? "" : "s");
    }
    print_traffic(channels);
    return code;
  }

  if (cfg.homogenize == "perm") {
    auto outcome = cfg.proto == "3pc" ? run_permuted3(c, inputs, cfg.seed)
                                      : run_permuted4(c, inputs, cfg.seed, opts);
    for (const auto& runs : outcome.instances)
      if (int code = exit_code_for(runs)) return code;
    std::printf("%zu schedule instances, identical outputs:\n", outcome.instances.size());
    for (const auto& [p, r] : outcome.instances.front())
      if (!r.outputs.empty()) print_outputs(c, p, r.outputs);
    print_traffic(outcome.channels);
    return 0;
  }

  SimNetwork net(profile);
  std::map<PartyId, PartyRun> runs;
  if (cfg.homogenize == "rotate")
    runs = run_rotated(c, inputs, net, cfg.seed, opts);
  else if (cfg.proto == "3pc")
    runs = run3(c, inputs, net, cfg.seed);
  else
    runs = run4(c, inputs, net, cfg.seed, opts);

  if (int code = exit_code_for(runs)) return code;
  for (const auto& [p, r] : runs)
    if (!r.outputs.empty()) print_outputs(c, p, r.outputs);
  for (const auto& [p, r] : runs)
    std::printf("%s: %.2f ms simulated, local muls %" PRIu64 " offline / %" PRIu64
                " online / %" PRIu64 " verify\n",
                party_name(p).c_str(), r.clock_ms, r.mul_offline, r.mul_online, r.mul_verify);
  print_traffic(totals_of(net.board));
  return 0;
}

int cmd_eval(const std::string& circuit, bool bristol, int ring, const std::string& inputs,
             u64 seed) {
  Circuit c = load_circuit(circuit, bristol, ring);
  auto flat = resolve_inputs(c, parse_inputs_arg(inputs), seed);
  auto vals = evaluate_cleartext(c, flat);
  for (size_t i = 0; i < c.outputs.size(); ++i)
    std::printf("%s=%" PRIu64 "\n", c.gate(c.outputs[i]).name.c_str(), vals[i]);
  return 0;
}

// ---- bench ----------------------------------------------------------------
//
// Runs a multiplication chain and a sharing-only circuit and compares the
// measured per-gate communication and computation against the constants the
// protocols were designed to hit.

struct BenchRow {
  std::string metric;
  double measured = 0;
  double expected = 0;
  bool at_most = false;  // pass when measured <= expected
};

bool print_rows(const std::vector<BenchRow>& rows) {
  bool all_ok = true;
  for (const BenchRow& r : rows) {
    bool ok = r.at_most ? r.measured <= r.expected : r.measured == r.expected;
    all_ok &= ok;
    std::printf("  %-38s %10.2f %s%9.2f   %s\n", r.metric.c_str(), r.measured,
                r.at_most ? "<=" : "  ", r.expected, ok ? "PASS" : "FAIL");
  }
  return all_ok;
}

Circuit mul_chain(u32 gates, int k) {
  std::ostringstream os;
  os << "ring " << k << "\nin a P1\nin b P2\n";
  std::string prev = "a";
  for (u32 i = 0; i < gates; ++i) {
    os << "mul m" << i << " " << prev << " b\n";
    prev = "m" + std::to_string(i);
  }
  os << "out " << prev << " ALL\n";
  return parse_circuit(os.str());
}

u64 active_channels(const ChannelTotals& t, Phase ph) {
  u64 n = 0;
  for (const auto& [key, cm] : t) n += cm.mul_elements(ph) > 0;
  return n;
}

bool bench3(u32 gates, int k, u64 seed) {
  Circuit c = mul_chain(gates, k);
  SimNetwork net;
  auto runs = run3(c, split_inputs(c, resolve_inputs(c, {}, seed)), net, seed);
  for (const auto& [p, r] : runs)
    if (!r.ok()) throw std::runtime_error("bench run failed: " + r.error);

  const double g = gates;
  ChannelTotals t = totals_of(net.board);
  u64 mul_off = 0, mul_on = 0, local_off = 0, local_on = 0;
  for (const auto& [key, cm] : t) {
    mul_off += cm.mul_elements(Phase::Offline);
    mul_on += cm.mul_elements(Phase::Online);
  }
  for (const auto& [p, r] : runs) {
    local_off += r.mul_offline;
    local_on += r.mul_online;
  }

  std::printf("3-party multiplication, %u gates, ring %d\n", gates, k);
  std::vector<BenchRow> rows = {
      {"offline elements / gate", mul_off / g, 1},
      {"online elements / gate", mul_on / g, 2},
      {"offline local muls / gate", local_off / g, 2},
      {"online local muls / gate", local_on / g, 3},
      {"active channels offline (of 6)", double(active_channels(t, Phase::Offline)), 1},
      {"active channels online (of 6)", double(active_channels(t, Phase::Online)), 2},
      {"offline rounds P1->P3", double(net.board.channel(PartyId::P1, PartyId::P3)
                                           .mul_rounds(Phase::Offline)),
       1},
      {"online rounds P2->P3", double(net.board.channel(PartyId::P2, PartyId::P3)
                                          .mul_rounds(Phase::Online)),
       double(c.depth)},
  };
  return print_rows(rows);
}

bool bench4(u32 gates, int k, u64 seed, u32 interval) {
  Circuit c = mul_chain(gates, k);
  SimNetwork net;
  Engine4::Options opts;
  opts.checkpoint_interval = interval;
  auto runs = run4(c, split_inputs(c, resolve_inputs(c, {}, seed)), net, seed, opts);
  for (const auto& [p, r] : runs)
    if (!r.ok()) throw std::runtime_error("bench run failed: " + r.error);

  const double g = gates;
  ChannelTotals t = totals_of(net.board);
  u64 mul_off = 0, mul_on = 0;
  for (const auto& [key, cm] : t) {
    mul_off += cm.mul_elements(Phase::Offline);
    mul_on += cm.mul_elements(Phase::Online);
  }
  u64 silent = 0;
  for (PartyId a : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4})
    for (PartyId b : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4}) {
      if (a == b) continue;
      const ChannelMetrics& cm = net.board.channel(a, b);
      silent += cm.mul_elements(Phase::Offline) + cm.mul_elements(Phase::Online) == 0;
    }

  std::printf("4-party multiplication, %u gates, ring %d, checkpoints every %u layers\n", gates,
              k, interval);
  std::vector<BenchRow> rows = {
      {"offline elements / gate", mul_off / g, 2},
      {"online elements / gate", mul_on / g, 3},
      {"silent channels (of 12)", double(silent), 7},
      {"online rounds P2->P3", double(net.board.channel(PartyId::P2, PartyId::P3)
                                          .mul_rounds(Phase::Online)),
       double(c.depth)},
      {"deferred stream rounds P3->P1", double(net.board.channel(PartyId::P3, PartyId::P1)
                                                   .mul_rounds(Phase::Online)),
       double(c.depth / interval + 1), true},
  };
  return print_rows(rows);
}

bool bench_sharing(u64 seed) {
  Circuit c = parse_circuit(
      "in w P1\nin x P2\nin y P3\nin z O\n"
      "add s1 w x\nadd s2 s1 y\nadd s3 s2 z\nout s3 ALL\n");
  SimNetwork net;
  auto runs = run3(c, split_inputs(c, resolve_inputs(c, {}, seed)), net, seed);
  for (const auto& [p, r] : runs)
    if (!r.ok()) throw std::runtime_error("bench run failed: " + r.error);

  auto sent = [&](PartyId dealer) {
    u64 n = 0;
    for (PartyId to : {PartyId::P1, PartyId::P2, PartyId::P3})
      n += net.board.channel(dealer, to).type_elements(Phase::Online, MsgType::Share);
    return double(n);
  };
  std::printf("3-party sharing, one input per dealer\n");
  std::vector<BenchRow> rows = {
      {"dealer P1 online elements", sent(PartyId::P1), 1},
      {"dealer P2 online elements", sent(PartyId::P2), 1},
      {"dealer P3 online elements", sent(PartyId::P3), 1},
      {"dealer O online elements", sent(PartyId::Outsider), 2},
  };
  return print_rows(rows);
}

int cmd_bench(const std::string& proto, u32 gates, int k, u64 seed, u32 interval) {
  bool ok = true;
  if (proto == "3pc" || proto == "all") {
    ok &= bench3(gates, k, seed);
    ok &= bench_sharing(seed);
  }
  if (proto == "4pc" || proto == "all") ok &= bench4(gates, k, seed, interval);
  if (proto != "3pc" && proto != "4pc" && proto != "all")
    throw UsageError("--proto must be 3pc, 4pc or all");
  std::printf("%s\n", ok ? "all rows PASS" : "some rows FAIL");
  return ok ? 0 : 2;
}

int cmd_attack(const std::string& path) {
  Scenario sc = scenario_from_file(path);
  std::printf("scenario %s: mode %s, corrupted %s, %zu rule%s\n", path.c_str(), sc.mode.c_str(),
              party_name(sc.corrupted).c_str(), sc.rules.size(), sc.rules.size() == 1 ? "" : "s");
  ScenarioOutcome oc = run_scenario(sc);
  std::printf("outcome: %s%s\n", oc.kind.c_str(), oc.unanimous ? "" : " (parties disagree)");
  if (oc.resets)
    std::printf("recovered after %u reset%s\n", oc.resets, oc.resets == 1 ? "" : "s");
  for (const auto& [id, v] : oc.outputs)
    std::printf("output %s=%" PRIu64 "\n", sc.circuit.gate(id).name.c_str(), v);
  for (const std::string& f : oc.fired) std::printf("detected %s\n", f.c_str());
  for (const auto& [p, r] : oc.runs) {
    if (r.ok()) continue;
    std::printf("%s %s: %s\n", party_name(p).c_str(), r.aborted ? "aborted" : "failed",
                r.error.c_str());
  }
  return oc.kind == "output" || oc.kind == "god-output" ? 0 : 2;
}

}  // namespace
}  // namespace hetmpc

int main(int argc, char** argv) {
  using namespace hetmpc;

  CLI::App app{"replicated-sharing MPC over Z_2^k with heterogeneous channel budgets"};
  app.require_subcommand(1);

  RunConfig rc;
  CLI::App* run = app.add_subcommand("run", "evaluate a circuit under the protocol");
  run->add_option("circuit", rc.circuit, "circuit file")->required();
  run->add_flag("--bristol", rc.bristol, "circuit is in Bristol fashion format");
  run->add_option("--proto", rc.proto, "3pc or 4pc (default 4pc)");
  run->add_option("--ring", rc.ring, "override the circuit's ring width");
  run->add_option("--transport", rc.transport, "sim or tcp (default sim)");
  run->add_option("--profile", rc.profile, "network profile JSON");
  run->add_option("--homogenize", rc.homogenize, "off, perm or rotate (default off)");
  run->add_option("--seed", rc.seed, "seed for shared randomness and unnamed inputs");
  run->add_option("--checkpoint-interval", rc.checkpoint_interval,
                  "multiplication layers between checkpoints");
  run->add_flag("--god", rc.god, "rerun with the culprit replaced until output is delivered");
  run->add_flag("--fair", rc.fair, "fair opening: either everyone learns outputs or nobody");
  run->add_option("--inputs", rc.inputs, "JSON object of name: value, or @file");
  run->add_option("--party", rc.party, "which party this process plays (tcp)");
  run->add_option("--listen", rc.listen, "base port; each party listens on base + index (tcp)");
  run->add_option("--connect", rc.connect, "P=host address of a higher-indexed peer (tcp)");

  std::string ev_circuit, ev_inputs;
  bool ev_bristol = false;
  int ev_ring = 0;
  u64 ev_seed = 1;
  CLI::App* ev = app.add_subcommand("eval", "cleartext reference evaluation");
  ev->add_option("circuit", ev_circuit, "circuit file")->required();
  ev->add_flag("--bristol", ev_bristol, "circuit is in Bristol fashion format");
  ev->add_option("--ring", ev_ring, "override the circuit's ring width");
  ev->add_option("--inputs", ev_inputs, "JSON object of name: value, or @file");
  ev->add_option("--seed", ev_seed, "seed for unnamed inputs");

  std::string bn_proto = "all";
  u32 bn_gates = 64, bn_interval = 10;
  int bn_ring = 64;
  u64 bn_seed = 1;
  CLI::App* bn = app.add_subcommand("bench", "per-gate costs vs. the design budget");
  bn->add_option("--proto", bn_proto, "3pc, 4pc or all (default all)");
  bn->add_option("--gates", bn_gates, "multiplication chain length");
  bn->add_option("--ring", bn_ring, "ring width for the bench circuits");
  bn->add_option("--seed", bn_seed, "randomness seed");
  bn->add_option("--checkpoint-interval", bn_interval, "layers between checkpoints");

  std::string at_path;
  CLI::App* at = app.add_subcommand("attack", "replay an adversarial scenario file");
  at->add_option("scenario", at_path, "scenario JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return cmd_run(rc);
    if (ev->parsed()) return cmd_eval(ev_circuit, ev_bristol, ev_ring, ev_inputs, ev_seed);
    if (bn->parsed()) return cmd_bench(bn_proto, bn_gates, bn_ring, bn_seed, bn_interval);
    if (at->parsed()) return cmd_attack(at_path);
  } catch (const ProtocolAbort& e) {
    std::fprintf(stderr, "abort: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
