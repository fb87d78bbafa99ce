#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "hetmpc/transport.hpp"

namespace hetmpc {

// Socket backend. Every party listens on base_port + its index and opens
// connections toward higher-indexed peers, so each pair shares one duplex
// connection. A one-byte hello identifies the dialing party.
class TcpParty : public Transport {
 public:
  TcpParty(PartyId me, const std::vector<PartyId>& parties, u16 base_port,
           const std::map<PartyId, std::string>& hosts = {})
      : me_(me) {
    auto host_of = [&](PartyId p) {
      auto it = hosts.find(p);
      return it == hosts.end() ? std::string("127.0.0.1") : it->second;
    };
    int n_accept = 0;
    for (PartyId p : parties)
      if (party_index(p) < party_index(me_)) ++n_accept;

    if (n_accept > 0) {
      listen_fd_ = socket(AF_INET, SOCK_STREAM, 0);
      if (listen_fd_ < 0) throw std::runtime_error("socket failed");
      int one = 1;
      setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
      addr.sin_port = htons(static_cast<u16>(base_port + party_index(me_)));
      if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw std::runtime_error("bind failed: " + std::string(strerror(errno)));
      if (listen(listen_fd_, 8) != 0) throw std::runtime_error("listen failed");
    }

    for (PartyId p : parties) {
      if (party_index(p) <= party_index(me_)) continue;
      int fd = dial(host_of(p), static_cast<u16>(base_port + party_index(p)));
      u8 hello = static_cast<u8>(party_index(me_));
      if (write(fd, &hello, 1) != 1) throw std::runtime_error("handshake write failed");
      set_nodelay(fd);
      fds_[p] = fd;
    }
    for (int i = 0; i < n_accept; ++i) {
      wait_readable(listen_fd_, "accept");
      int fd = accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) throw std::runtime_error("accept failed");
      u8 hello = 0;
      read_exact(fd, &hello, 1);
      set_nodelay(fd);
      fds_[static_cast<PartyId>(hello)] = fd;
    }
    if (listen_fd_ >= 0) {
      close(listen_fd_);
      listen_fd_ = -1;
    }
  }

  ~TcpParty() override {
    for (auto& [p, fd] : fds_) close(fd);
    if (listen_fd_ >= 0) close(listen_fd_);
  }
  TcpParty(const TcpParty&) = delete;
  TcpParty& operator=(const TcpParty&) = delete;

  PartyId me() const override { return me_; }

  void send(Message m) override {
    m.from = me_;
    board.record(m);
    std::vector<u8> frame = frame_message(m);
    int fd = fd_for(m.to);
    size_t off = 0;
    while (off < frame.size()) {
      ssize_t n = write(fd, frame.data() + off, frame.size() - off);
      if (n <= 0) throw std::runtime_error("send failed to " + party_name(m.to));
      off += static_cast<size_t>(n);
    }
  }

  Message recv(PartyId from) override {
    int fd = fd_for(from);
    u8 hdr[kFrameHeaderBytes];
    read_exact(fd, hdr, sizeof hdr);
    Message m;
    m.from = from;
    m.to = me_;
    u32 len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<u32>(hdr[i]) << (8 * i);
    m.phase = static_cast<Phase>(hdr[4]);
    m.type = static_cast<MsgType>(hdr[5]);
    for (int i = 0; i < 4; ++i) m.step |= static_cast<u32>(hdr[6 + i]) << (8 * i);
    m.payload.resize(len);
    if (len) read_exact(fd, m.payload.data(), len);
    return m;
  }

  MetricsBoard board;  // this party's sent traffic

 private:
  int fd_for(PartyId p) const {
    auto it = fds_.find(p);
    if (it == fds_.end()) throw UsageError("no connection to " + party_name(p));
    return it->second;
  }

  static void set_nodelay(int fd) {
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  static void wait_readable(int fd, const char* what) {
    pollfd p{fd, POLLIN, 0};
    int r = poll(&p, 1, 30000);
    if (r <= 0) throw std::runtime_error(std::string(what) + " timed out");
  }

  static void read_exact(int fd, u8* buf, size_t len) {
    size_t off = 0;
    while (off < len) {
      wait_readable(fd, "recv");
      ssize_t n = read(fd, buf + off, len - off);
      if (n <= 0) throw std::runtime_error("connection closed");
      off += static_cast<size_t>(n);
    }
  }

  static int dial(const std::string& host, u16 port) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      int fd = socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw std::runtime_error("socket failed");
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_port = htons(port);
      if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw UsageError("bad host address " + host);
      if (connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) return fd;
      close(fd);
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
    }
    throw std::runtime_error("could not connect to " + host + ":" + std::to_string(port));
  }

  PartyId me_;
  int listen_fd_ = -1;
  std::map<PartyId, int> fds_;
};

}  // namespace hetmpc
