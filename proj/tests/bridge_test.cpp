#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <future>

#include "doctest.h"
#include "json.hpp"
#include "pegring/bridge/bridge.hpp"

using namespace pegring;
using json = nlohmann::json;
using executor::SupervisorCommand;

namespace {

// minimal blocking line client
class Client {
 public:
  explicit Client(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  }
  ~Client() { ::close(fd_); }

  void send(const std::string& line) { raw(line + "\n"); }

  void raw(const std::string& data) {
    REQUIRE(::send(fd_, data.data(), data.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(data.size()));
  }

  std::optional<std::string> line(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000)) {
    const auto until = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buf_.find('\n'); nl != std::string::npos) {
        auto out = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return out;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
      char tmp[4096];
      const auto n = ::recv(fd_, tmp, sizeof tmp, 0);
      if (n <= 0) return std::nullopt;
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }

  // next line whose type matches
  std::optional<json> next(const std::string& type) {
    while (auto l = line()) {
      auto j = json::parse(*l);
      if (j.value("type", "") == type) return j;
    }
    return std::nullopt;
  }

 private:
  int fd_ = -1;
  std::string buf_;
};

}  // namespace

TEST_CASE("command parsing") {
  SUBCASE("every command kind") {
    auto p = bridge::parse_command(R"({"cmd":"move_ring","ring":"red","position":[0.01,-0.02]})");
    REQUIRE(p.command);
    CHECK(p.command->kind == SupervisorCommand::Kind::disturbance);
    CHECK(p.command->disturbance.kind == world::DisturbanceKind::move_ring);
    CHECK(p.command->disturbance.position.isApprox(Eigen::Vector3d(0.01, -0.02, 0)));

    p = bridge::parse_command(R"({"cmd":"drop_ring","ring":"blue"})");
    REQUIRE(p.command);
    CHECK(p.command->disturbance.kind == world::DisturbanceKind::drop_ring);
    CHECK(p.command->disturbance.color == planner::Color::blue);

    p = bridge::parse_command(R"({"cmd":"hide_ring","ring":"green"})");
    CHECK(p.command->disturbance.kind == world::DisturbanceKind::hide_ring);
    p = bridge::parse_command(R"({"cmd":"reveal_ring","ring":"green"})");
    CHECK(p.command->disturbance.kind == world::DisturbanceKind::reveal_ring);

    p = bridge::parse_command(R"({"cmd":"occupy_peg","peg":"yellow","ring":"red"})");
    REQUIRE(p.command);
    CHECK(p.command->disturbance.color == planner::Color::yellow);
    CHECK(p.command->disturbance.by == planner::Color::red);

    p = bridge::parse_command(R"({"cmd":"grasp_failure","arm":"psm2"})");
    REQUIRE(p.command);
    CHECK(p.command->disturbance.arm == planner::Arm::psm2);

    CHECK(bridge::parse_command(R"({"cmd":"pause"})").command->kind == SupervisorCommand::Kind::pause);
    CHECK(bridge::parse_command(R"({"cmd":"resume"})").command->kind == SupervisorCommand::Kind::resume);
    p = bridge::parse_command(R"({"cmd":"set_speed","speed":2.5})");
    CHECK(p.command->kind == SupervisorCommand::Kind::set_speed);
    CHECK(p.command->speed == 2.5);
  }
  SUBCASE("rejections") {
    for (const char* bad : {"not json", "[1,2]", R"({"ring":"red"})", R"({"cmd":"frobnicate"})",
                            R"({"cmd":"drop_ring"})", R"({"cmd":"drop_ring","ring":"purple"})",
                            R"({"cmd":"move_ring","ring":"red","position":[1]})",
                            R"({"cmd":"move_ring","ring":"red","position":["a","b"]})",
                            R"({"cmd":"set_speed","speed":0})", R"({"cmd":"set_speed"})",
                            R"({"cmd":"grasp_failure","arm":"psm3"})"}) {
      CAPTURE(bad);
      const auto p = bridge::parse_command(bad);
      CHECK_FALSE(p.command);
      CHECK_FALSE(p.error.empty());
      CHECK(json::parse(bridge::reply_line(p))["type"] == "error");
    }
  }
  SUBCASE("replies echo the id byte for byte") {
    CHECK(bridge::reply_line(bridge::parse_command(R"({"cmd":"pause","id":7})")) ==
          R"({"cmd":"pause","id":7,"type":"ack"})");
    CHECK(bridge::reply_line(bridge::parse_command(R"({"cmd":"nope","id":"x"})")) ==
          R"({"cmd":"nope","id":"x","message":"unknown command \"nope\"","type":"error"})");
  }
}

TEST_CASE("server framing") {
  bridge::BridgeServer server(0, false);
  REQUIRE(server.port() != 0);
  server.publish(R"({"time":0,"type":"state"})");
  Client c(server.port());
  REQUIRE(server.wait_for_client(std::chrono::milliseconds(2000)));
  // the cached state reaches a late joiner
  CHECK(c.line() == R"({"time":0,"type":"state"})");
  server.publish(R"({"type":"event","text":"x"})");
  CHECK(c.line() == R"({"type":"event","text":"x"})");

  // two commands in one packet, one split across packets, CRLF tolerated
  c.raw(R"({"cmd":"pause"})" "\n" R"({"cmd":"bogus"})" "\r\n");
  c.raw(R"({"cmd":"set_speed",)");
  c.raw(R"("speed":3})" "\n");
  CHECK(json::parse(*c.line())["type"] == "ack");
  CHECK(json::parse(*c.line())["type"] == "error");
  CHECK(json::parse(*c.line())["cmd"] == "set_speed");
  const auto cmds = server.poll();
  REQUIRE(cmds.size() == 2);
  CHECK(cmds[0].kind == SupervisorCommand::Kind::pause);
  CHECK(cmds[1].speed == 3.0);
  CHECK(server.poll().empty());
}

TEST_CASE("a dropped ring from the supervisor triggers failure, explanation and a new plan") {
  bridge::BridgeServer server(0, true);
  executor::ExecutorConfig cfg;
  executor::Executor ex(*world::builtin_scenario("C"), cfg, executor::learn_default_models());
  ex.set_supervisor(&server);
  Client c(server.port());
  REQUIRE(server.wait_for_client(std::chrono::milliseconds(2000)));
  c.send(R"({"cmd":"set_speed","speed":20})");
  auto done = std::async(std::launch::async, [&] { return ex.run(); });

  const auto state = c.next("state");
  REQUIRE(state);
  CHECK((*state)["arms"].size() == 2);
  CHECK((*state)["rings"].size() == 4);
  std::vector<std::string> keys;
  for (const auto& [k, v] : state->items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"arms", "pegs", "rings", "tick", "time", "type"});

  // wait until red is carried, then knock it out of the gripper
  for (;;) {
    const auto a = c.next("action");
    REQUIRE(a);
    if ((*a)["action"] == "move(psm1,peg,red)" && (*a)["status"] == "start") break;
  }
  c.send(R"({"cmd":"drop_ring","ring":"red","id":1})");
  const auto failure = c.next("failure");
  REQUIRE(failure);
  CHECK((*failure)["reason"] == "ring_fallen");
  const auto why = c.next("explanation");
  REQUIRE(why);
  CHECK(why->at("text").get<std::string>().find("[branch:") != std::string::npos);
  const auto plan = c.next("plan");
  REQUIRE(plan);
  CHECK((*plan)["trigger"] == "ring_fallen");
  CHECK((*plan)["steps"][0]["action"] == "move(psm1,ring,red)");

  const auto report = c.next("report");
  REQUIRE(report);
  CHECK((*report)["report"]["goal_satisfied"] == true);
  const auto r = done.get();
  CHECK(r.report.goal_satisfied);
  CHECK(r.report.replans == 1);
}
