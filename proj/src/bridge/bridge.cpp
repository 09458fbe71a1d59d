#include "pegring/bridge/bridge.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "json.hpp"

namespace pegring::bridge {

using json = nlohmann::json;
using executor::SupervisorCommand;

namespace {

// a client that stops reading is cut off rather than buffered forever
constexpr std::size_t kMaxPending = 16u << 20;
constexpr std::size_t kMaxLine = 64u << 10;

planner::Color color_arg(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw BridgeError(std::string("missing string field \"") + key + "\"");
  const auto c = planner::parse_color(j[key].get<std::string>());
  if (!c) throw BridgeError("unknown color \"" + j[key].get<std::string>() + "\"");
  return *c;
}

SupervisorCommand disturbance(world::DisturbanceKind kind) {
  SupervisorCommand c;
  c.kind = SupervisorCommand::Kind::disturbance;
  c.disturbance.kind = kind;
  return c;
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

}  // namespace

ParsedCommand parse_command(std::string_view line) {
  ParsedCommand p;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    p.error = "malformed JSON";
    return p;
  }
  if (!j.is_object()) {
    p.error = "expected a JSON object";
    return p;
  }
  if (j.contains("id")) p.id = j["id"].dump();
  if (!j.contains("cmd") || !j["cmd"].is_string()) {
    p.error = "missing string field \"cmd\"";
    return p;
  }
  p.cmd = j["cmd"].get<std::string>();
  try {
    SupervisorCommand c;
    if (p.cmd == "pause") {
      c.kind = SupervisorCommand::Kind::pause;
    } else if (p.cmd == "resume") {
      c.kind = SupervisorCommand::Kind::resume;
    } else if (p.cmd == "set_speed") {
      if (!j.contains("speed") || !j["speed"].is_number()) throw BridgeError("missing number field \"speed\"");
      c.kind = SupervisorCommand::Kind::set_speed;
      c.speed = j["speed"].get<double>();
      if (!(c.speed > 0) || c.speed > 1000) throw BridgeError("speed must be in (0, 1000]");
    } else if (p.cmd == "move_ring") {
      c = disturbance(world::DisturbanceKind::move_ring);
      c.disturbance.color = color_arg(j, "ring");
      const auto& pos = j.contains("position") ? j["position"] : json();
      if (!pos.is_array() || pos.size() < 2 || pos.size() > 3)
        throw BridgeError("\"position\" must be [x, y] or [x, y, z]");
      for (std::size_t k = 0; k < pos.size(); ++k) {
        if (!pos[k].is_number()) throw BridgeError("\"position\" must hold numbers");
        c.disturbance.position[static_cast<Eigen::Index>(k)] = pos[k].get<double>();
      }
    } else if (p.cmd == "drop_ring" || p.cmd == "hide_ring" || p.cmd == "reveal_ring") {
      c = disturbance(*world::parse_disturbance_kind(p.cmd));
      c.disturbance.color = color_arg(j, "ring");
    } else if (p.cmd == "occupy_peg") {
      c = disturbance(world::DisturbanceKind::occupy_peg);
      c.disturbance.color = color_arg(j, "peg");
      c.disturbance.by = color_arg(j, "ring");
    } else if (p.cmd == "grasp_failure") {
      c = disturbance(world::DisturbanceKind::grasp_failure);
      if (!j.contains("arm") || !j["arm"].is_string()) throw BridgeError("missing string field \"arm\"");
      const auto arm = planner::parse_arm(j["arm"].get<std::string>());
      if (!arm) throw BridgeError("unknown arm \"" + j["arm"].get<std::string>() + "\"");
      c.disturbance.arm = *arm;
    } else {
      throw BridgeError("unknown command \"" + p.cmd + "\"");
    }
    p.command = c;
  } catch (const BridgeError& e) {
    p.error = e.what();
  }
  return p;
}

std::string reply_line(const ParsedCommand& p) {
  json j;
  if (p.command) {
    j = {{"type", "ack"}, {"cmd", p.cmd}};
  } else {
    j = {{"type", "error"}, {"message", p.error}};
    if (!p.cmd.empty()) j["cmd"] = p.cmd;
  }
  if (p.id) j["id"] = json::parse(*p.id);
  return j.dump();
}

BridgeServer::BridgeServer(std::uint16_t port, bool realtime) : realtime_(realtime) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw BridgeError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 8) < 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw BridgeError("cannot listen on port " + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  set_nonblocking(listen_fd_);
  if (::pipe(wake_) < 0) {
    ::close(listen_fd_);
    throw BridgeError(std::string("pipe: ") + std::strerror(errno));
  }
  set_nonblocking(wake_[0]);
  set_nonblocking(wake_[1]);
  thread_ = std::thread([this] { loop(); });
}

BridgeServer::~BridgeServer() { stop(); }

void BridgeServer::stop() {
  if (!running_.exchange(false)) return;
  wake();
  if (thread_.joinable()) thread_.join();
  for (auto& c : clients_) ::close(c.fd);
  clients_.clear();
  ::close(listen_fd_);
  ::close(wake_[0]);
  ::close(wake_[1]);
}

void BridgeServer::wake() const {
  const char b = 1;
  [[maybe_unused]] const auto n = ::write(wake_[1], &b, 1);
}

std::size_t BridgeServer::clients() const {
  std::lock_guard lock(mu_);
  return clients_.size();
}

bool BridgeServer::wait_for_client(std::chrono::milliseconds timeout) const {
  const auto until = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < until) {
    if (clients() > 0) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return clients() > 0;
}

bool BridgeServer::flush(std::chrono::milliseconds timeout) const {
  const auto until = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    {
      std::lock_guard lock(mu_);
      bool empty = true;
      for (const auto& c : clients_) empty = empty && c.out.empty();
      if (empty) return true;
    }
    if (std::chrono::steady_clock::now() >= until) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

void BridgeServer::publish(const std::string& json_line) {
  {
    std::lock_guard lock(mu_);
    if (json_line.rfind("{\"", 0) == 0 && json_line.find("\"type\":\"state\"") != std::string::npos)
      last_state_ = json_line;
    for (auto& c : clients_) {
      c.out += json_line;
      c.out += '\n';
    }
  }
  wake();
}

std::vector<SupervisorCommand> BridgeServer::poll() {
  std::lock_guard lock(mu_);
  std::vector<SupervisorCommand> out(commands_.begin(), commands_.end());
  commands_.clear();
  return out;
}

void BridgeServer::loop() {
  std::vector<pollfd> fds;
  char buf[4096];
  while (running_) {
    fds.clear();
    fds.push_back({listen_fd_, POLLIN, 0});
    fds.push_back({wake_[0], POLLIN, 0});
    {
      std::lock_guard lock(mu_);
      for (const auto& c : clients_)
        fds.push_back({c.fd, static_cast<short>(POLLIN | (c.out.empty() ? 0 : POLLOUT)), 0});
    }
    if (::poll(fds.data(), fds.size(), 100) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[1].revents & POLLIN)
      while (::read(wake_[0], buf, sizeof buf) > 0) {
      }

    std::lock_guard lock(mu_);
    std::vector<int> dead;
    for (std::size_t k = 2; k < fds.size(); ++k) {
      auto it = std::find_if(clients_.begin(), clients_.end(), [&](const Client& c) { return c.fd == fds[k].fd; });
      if (it == clients_.end()) continue;
      auto& c = *it;
      const auto ev = fds[k].revents;
      if (ev & (POLLERR | POLLNVAL)) {
        dead.push_back(c.fd);
        continue;
      }
      if (ev & (POLLIN | POLLHUP)) {
        const auto n = ::recv(c.fd, buf, sizeof buf, 0);
        if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK)) {
          dead.push_back(c.fd);
          continue;
        }
        if (n > 0) c.in.append(buf, static_cast<std::size_t>(n));
        for (auto nl = c.in.find('\n'); nl != std::string::npos; nl = c.in.find('\n')) {
          std::string line = c.in.substr(0, nl);
          c.in.erase(0, nl + 1);
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (line.empty()) continue;
          const auto parsed = parse_command(line);
          if (parsed.command) commands_.push_back(*parsed.command);
          c.out += reply_line(parsed);
          c.out += '\n';
        }
        if (c.in.size() > kMaxLine) {
          c.in.clear();
          c.out += json{{"type", "error"}, {"message", "line too long"}}.dump();
          c.out += '\n';
        }
      }
      if (!c.out.empty()) {
        const auto n = ::send(c.fd, c.out.data(), c.out.size(), MSG_NOSIGNAL);
        if (n > 0) c.out.erase(0, static_cast<std::size_t>(n));
        else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK) dead.push_back(c.fd);
      }
      if (c.out.size() > kMaxPending) dead.push_back(c.fd);
    }
    for (int fd : dead) {
      auto it = std::find_if(clients_.begin(), clients_.end(), [&](const Client& c) { return c.fd == fd; });
      if (it == clients_.end()) continue;
      ::close(fd);
      clients_.erase(it);
    }
    if (fds[0].revents & POLLIN)
      for (int fd; (fd = ::accept(listen_fd_, nullptr, nullptr)) >= 0;) {
        set_nonblocking(fd);
        Client c;
        c.fd = fd;
        // a late joiner sees the scene straight away
        if (!last_state_.empty()) c.out = last_state_ + '\n';
        clients_.push_back(std::move(c));
      }
  }
}

}  // namespace pegring::bridge
