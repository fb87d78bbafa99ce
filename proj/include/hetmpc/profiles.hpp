#pragma once

#include <fstream>

#include <json.hpp>

#include "hetmpc/transport.hpp"

namespace hetmpc {

// Network profiles come in as JSON:
//   {"default": {"latency_ms": 20, "bandwidth_bytes_per_ms": 1000},
//    "channels": {"P1->P3": {"latency_ms": 150, ...}, ...}}
// Channels not mentioned anywhere get a zero-latency, unlimited link.
inline NetProfile net_profile_from_json(const nlohmann::json& j) {
  auto link = [](const nlohmann::json& je, LinkParams lp) {
    if (je.contains("latency_ms")) lp.latency_ms = je["latency_ms"].get<double>();
    if (je.contains("bandwidth_bytes_per_ms"))
      lp.bandwidth_bytes_per_ms = je["bandwidth_bytes_per_ms"].get<double>();
    return lp;
  };
  auto party = [](const std::string& s) -> PartyId {
    for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4, PartyId::Outsider})
      if (party_name(p) == s) return p;
    throw UsageError("bad party name '" + s + "' in profile");
  };

  NetProfile np;
  if (j.contains("default")) np.fallback = link(j["default"], LinkParams{});
  if (j.contains("channels")) {
    // Listed channels inherit whatever the default leaves unspecified.
    for (auto& [key, val] : j["channels"].items()) {
      auto sep = key.find("->");
      if (sep == std::string::npos) throw UsageError("bad channel key '" + key + "'");
      np.channels[{party(key.substr(0, sep)), party(key.substr(sep + 2))}] = link(val, np.fallback);
    }
  }
  return np;
}

inline NetProfile net_profile_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw UsageError("cannot open profile " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad profile JSON: " + std::string(e.what()));
  }
  return net_profile_from_json(j);
}

}  // namespace hetmpc
