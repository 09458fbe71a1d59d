#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pegring/executor/executor.hpp"

namespace pegring::bridge {

struct BridgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One decoded client line. Exactly one of `command` / `error` is meaningful.
struct ParsedCommand {
  std::string cmd;                                 // the "cmd" field when present
  std::optional<std::string> id;                   // echoed back verbatim (as JSON text)
  std::optional<executor::SupervisorCommand> command;
  std::string error;
};

ParsedCommand parse_command(std::string_view line);

/// Reply lines for a parsed command: {"type":"ack",...} or {"type":"error",...}.
std::string reply_line(const ParsedCommand& p);

/// Newline-delimited JSON over TCP on 127.0.0.1. One I/O thread multiplexes the
/// listening socket and every client; the executor thread only touches the queues.
class BridgeServer : public executor::Supervisor {
 public:
  /// port 0 picks a free port; see port().
  explicit BridgeServer(std::uint16_t port, bool realtime = true);
  ~BridgeServer() override;
  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  std::uint16_t port() const { return port_; }
  std::size_t clients() const;
  bool wait_for_client(std::chrono::milliseconds timeout) const;
  /// Blocks until every queued line has been written (or the timeout passes).
  bool flush(std::chrono::milliseconds timeout) const;
  void stop();

  void publish(const std::string& json_line) override;
  std::vector<executor::SupervisorCommand> poll() override;
  bool realtime() const override { return realtime_; }

 private:
  struct Client {
    int fd = -1;
    std::string in;
    std::string out;
  };

  void loop();
  void wake() const;

  int listen_fd_ = -1;
  int wake_[2] = {-1, -1};
  std::uint16_t port_ = 0;
  bool realtime_ = true;
  std::atomic<bool> running_{true};
  mutable std::mutex mu_;
  std::vector<Client> clients_;
  std::deque<executor::SupervisorCommand> commands_;
  std::string last_state_;
  std::thread thread_;
};

}  // namespace pegring::bridge
