#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>

#include "hetmpc/metrics.hpp"

namespace hetmpc {

// Raised when a consistency check fails or a peer announces an abort; the
// CLI maps it to its own exit code.
struct ProtocolAbort : std::runtime_error {
  explicit ProtocolAbort(const std::string& what) : std::runtime_error(what) {}
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual PartyId me() const = 0;
  virtual void send(Message m) = 0;
  // Blocks for the next in-order message on the from->me channel.
  virtual Message recv(PartyId from) = 0;

  // Most receives know exactly what must arrive next; anything else is a
  // protocol break worth aborting on.
  Message recv_expect(PartyId from, MsgType type, u32 step) {
    Message m = recv(from);
    if (m.type != type || m.step != step)
      throw ProtocolAbort("unexpected message from " + party_name(from) + ": type " +
                          std::to_string(static_cast<int>(m.type)) + " step " +
                          std::to_string(m.step));
    return m;
  }
};

struct LinkParams {
  double latency_ms = 0;
  double bandwidth_bytes_per_ms = 0;  // 0 means unlimited
};

struct NetProfile {
  std::map<ChannelKey, LinkParams> channels;
  LinkParams fallback;

  LinkParams get(PartyId from, PartyId to) const {
    auto it = channels.find({from, to});
    return it == channels.end() ? fallback : it->second;
  }
};

// In-process network: one queue per directed channel, parties on their own
// threads, and a per-party virtual clock driven by link latency and
// serialization time. Wall time never enters the model; the clock is what
// the bench reports.
class SimNetwork {
 public:
  explicit SimNetwork(NetProfile profile = {}) : profile_(std::move(profile)) {}

  class Endpoint : public Transport {
   public:
    Endpoint(SimNetwork* net, PartyId me) : net_(net), me_(me) {}
    PartyId me() const override { return me_; }

    void send(Message m) override {
      m.from = me_;
      net_->board.record(m);
      net_->deliver(std::move(m), clock_ms);
    }

    Message recv(PartyId from) override {
      Message m = net_->take(from, me_);
      if (m.sim_arrival > clock_ms) clock_ms = m.sim_arrival;
      return m;
    }

    double clock_ms = 0;

   private:
    SimNetwork* net_;
    PartyId me_;
  };

  Endpoint& endpoint(PartyId p) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& ep = endpoints_[p];
    if (!ep) ep = std::make_unique<Endpoint>(this, p);
    return *ep;
  }

  MetricsBoard board;

 private:
  struct Channel {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Message> q;
    double free_at = 0;  // when the link finishes serializing earlier sends
  };

  Channel& channel(PartyId from, PartyId to) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& ch = channels_[{from, to}];
    if (!ch) ch = std::make_unique<Channel>();
    return *ch;
  }

  void deliver(Message m, double departure) {
    LinkParams lp = profile_.get(m.from, m.to);
    Channel& ch = channel(m.from, m.to);
    std::lock_guard<std::mutex> lk(ch.mu);
    double start = std::max(departure, ch.free_at);
    double ser = lp.bandwidth_bytes_per_ms > 0
                     ? static_cast<double>(m.wire_size()) / lp.bandwidth_bytes_per_ms
                     : 0;
    ch.free_at = start + ser;
    m.sim_arrival = start + ser + lp.latency_ms;
    ch.q.push_back(std::move(m));
    ch.cv.notify_all();
  }

  Message take(PartyId from, PartyId to) {
    Channel& ch = channel(from, to);
    std::unique_lock<std::mutex> lk(ch.mu);
    if (!ch.cv.wait_for(lk, std::chrono::seconds(30), [&] { return !ch.q.empty(); }))
      throw std::runtime_error("recv timeout on " + channel_name({from, to}));
    Message m = std::move(ch.q.front());
    ch.q.pop_front();
    return m;
  }

  NetProfile profile_;
  std::mutex mu_;
  std::map<PartyId, std::unique_ptr<Endpoint>> endpoints_;
  std::map<ChannelKey, std::unique_ptr<Channel>> channels_;
};

}  // namespace hetmpc
