#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <functional>
#include <optional>

#include "lidarsim/service.hpp"
#include "test_util.hpp"

using namespace lidarsim;
using namespace testutil;
using namespace std::chrono_literals;

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Received {
  bool binary = false;
  std::string data;
  Envelope env;  // text only
};

/// Minimal blocking client; every read has a deadline.
class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver r(ioc_);
    ws_.next_layer().connect(r.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
  }

  void send(const std::string& type, const nlohmann::json& payload, std::optional<std::uint64_t> seq = {}) {
    const std::uint64_t s = seq ? *seq : ++seq_;
    if (seq) seq_ = *seq;
    ws_.text(true);
    ws_.write(net::buffer(encode_envelope({type, s, 0.0, payload.is_null() ? nlohmann::json::object() : payload})));
  }

  void send_binary(const std::string& bytes) {
    ws_.binary(true);
    ws_.write(net::buffer(bytes));
  }

  /// Next message, or nullopt on timeout or close.
  std::optional<Received> read(std::chrono::milliseconds timeout = 5000ms) {
    beast::flat_buffer buf;
    bool done = false;
    beast::error_code result;
    ws_.async_read(buf, [&](beast::error_code ec, std::size_t) {
      done = true;
      result = ec;
    });
    ioc_.restart();
    ioc_.run_for(timeout);
    if (!done) {
      beast::get_lowest_layer(ws_).cancel();
      ioc_.restart();
      ioc_.run();
      return std::nullopt;
    }
    if (result) {
      closed_ = true;
      return std::nullopt;
    }
    Received m;
    m.binary = ws_.got_binary();
    m.data = beast::buffers_to_string(buf.data());
    if (!m.binary) m.env = decode_envelope(m.data);
    return m;
  }

  /// Skips messages until one of `type` satisfies pred.
  std::optional<Envelope> wait_for(const std::string& type,
                                   const std::function<bool(const Envelope&)>& pred = nullptr,
                                   std::chrono::milliseconds timeout = 10000ms) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
      auto m = read(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()));
      if (!m) return std::nullopt;
      if (m->binary) {
        ++clouds;
        last_cloud = m->data;
        continue;
      }
      check_seq(m->env.seq);
      if (m->env.type == type && (!pred || pred(m->env))) return m->env;
    }
    return std::nullopt;
  }

  std::optional<std::string> wait_cloud(std::chrono::milliseconds timeout = 10000ms) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
      auto m = read(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()));
      if (!m) return std::nullopt;
      if (m->binary) return m->data;
    }
    return std::nullopt;
  }

  /// Reads until the server closes; true if it did.
  bool wait_closed(std::chrono::milliseconds timeout = 5000ms) {
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (!closed_ && std::chrono::steady_clock::now() < end)
      if (!read(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()))) break;
    return closed_;
  }

  Envelope hello(const std::string& role) {
    send("hello", {{"role", role}});
    auto h = wait_for("hello");
    EXPECT_TRUE(h);
    return h ? *h : Envelope{};
  }

  int clouds = 0;
  std::string last_cloud;
  bool seq_ok = true;

 private:
  void check_seq(std::uint64_t s) {
    if (last_seq_ && s <= *last_seq_) seq_ok = false;
    last_seq_ = s;
  }

  net::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
  std::uint64_t seq_ = 0;
  std::optional<std::uint64_t> last_seq_;
  bool closed_ = false;
};

RunConfig depot_config() {
  RunConfig cfg;
  cfg.scene_path = scene_file("depot");
  cfg.lidar = *builtin_lidar("avia");
  return cfg;
}

ServiceOptions quick_options(const fs::path& rec = {}) {
  ServiceOptions o;
  o.port = 0;
  o.speed = 4.0;
  if (!rec.empty()) o.record_dir = rec;
  return o;
}

std::string error_code(const Envelope& e) { return e.payload.value("code", std::string()); }

}  // namespace

TEST(Service, ParseListen) {
  EXPECT_EQ(parse_listen("127.0.0.1:9000"), (std::pair<std::string, unsigned short>{"127.0.0.1", 9000}));
  EXPECT_EQ(parse_listen(":9000").first, "0.0.0.0");
  EXPECT_EQ(parse_listen("9000").second, 9000);
  EXPECT_THROW(parse_listen("host:99999"), ParseError);
  EXPECT_THROW(parse_listen("host:x"), ParseError);
}

TEST(Service, BoundedQueueBlocksInsteadOfDropping) {
  BoundedQueue<int> q(2);
  q.push(1);
  q.push(2);
  std::thread producer([&] { q.push(3); });
  std::this_thread::sleep_for(50ms);
  EXPECT_EQ(q.size(), 2u);
  EXPECT_EQ(*q.try_pop(), 1);
  producer.join();
  EXPECT_EQ(*q.try_pop(), 2);
  EXPECT_EQ(*q.try_pop(), 3);
  EXPECT_FALSE(q.try_pop());
}

TEST(Service, HelloThenSceneThenState) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = svc.start();
  EXPECT_GT(port, 0);
  Client c(port);
  const auto h = c.hello("controller");
  EXPECT_EQ(h.payload["protocol"], "lidarsim-ws/1");
  EXPECT_EQ(h.payload["role"], "controller");
  EXPECT_EQ(h.payload["cloud_cap"], 20000);
  const auto s = c.wait_for("scene_summary");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->payload["name"], "depot");
  const auto st = c.wait_for("state");
  ASSERT_TRUE(st);
  EXPECT_EQ(st->payload["running"], false);
  EXPECT_TRUE(c.seq_ok);
}

TEST(Service, ForwardKeyIncreasesLinearVelocity) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  Client c(svc.start());
  c.hello("controller");
  c.send("cmd_teleop", {{"key", "w"}});
  const auto ack = c.wait_for("state", [](const Envelope& e) { return e.payload["ack_seq"] == 2; });
  ASSERT_TRUE(ack);
  EXPECT_DOUBLE_EQ(ack->payload["twist"]["v"].get<double>(), 0.05);
  c.send("cmd_teleop", {{"key", "ArrowUp"}});
  const auto ack2 = c.wait_for("state", [](const Envelope& e) { return e.payload["ack_seq"] == 3; });
  ASSERT_TRUE(ack2);
  EXPECT_DOUBLE_EQ(ack2->payload["twist"]["v"].get<double>(), 0.1);
  c.send("cmd_run", {{"action", "start"}});
  const auto moving = c.wait_for("state", [](const Envelope& e) { return e.payload["pose"]["x"].get<double>() > 0.01; });
  ASSERT_TRUE(moving);
  EXPECT_DOUBLE_EQ(moving->payload["executed"]["v"].get<double>(), 0.1);
  // unmapped keys are reported without disconnecting
  c.send("cmd_teleop", {{"key", "q"}});
  const auto err = c.wait_for("error");
  ASSERT_TRUE(err);
  EXPECT_EQ(error_code(*err), "unmapped_key");
  c.send("cmd_teleop", {{"v", 0.0}, {"w", 0.0}});
  EXPECT_TRUE(c.wait_for("state", [](const Envelope& e) { return e.payload["ack_seq"] == 6; }));
  EXPECT_TRUE(c.seq_ok);
}

TEST(Service, SingleController) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = svc.start();
  Client a(port);
  a.hello("controller");
  Client b(port);
  b.send("hello", {{"role", "controller"}});
  const auto e = b.wait_for("error");
  ASSERT_TRUE(e);
  EXPECT_EQ(error_code(*e), "controller_exists");
  EXPECT_TRUE(b.wait_closed());
  // an observer is fine, but may not command
  Client o(port);
  o.hello("observer");
  o.send("cmd_teleop", {{"key", "w"}});
  const auto e2 = o.wait_for("error");
  ASSERT_TRUE(e2);
  EXPECT_EQ(error_code(*e2), "not_controller");
  EXPECT_TRUE(o.wait_closed());
  // the first controller is unaffected
  a.send("cmd_teleop", {{"key", "w"}});
  EXPECT_TRUE(a.wait_for("state", [](const Envelope& m) { return m.payload["ack_seq"] == 2; }));
}

TEST(Service, ControllerSlotIsFreedOnDisconnect) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = svc.start();
  {
    Client a(port);
    a.hello("controller");
  }
  bool claimed = false;
  for (int attempt = 0; attempt < 50 && !claimed; ++attempt) {
    Client b(port);
    b.send("hello", {{"role", "controller"}});
    auto m = b.read();
    while (m && m->binary) m = b.read();
    claimed = m && m->env.type == "hello";
    if (!claimed) std::this_thread::sleep_for(20ms);
  }
  EXPECT_TRUE(claimed);
}

TEST(Service, ProtocolErrors) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = svc.start();
  {
    Client c(port);
    c.send("cmd_run", {{"action", "start"}});
    const auto e = c.wait_for("error");
    ASSERT_TRUE(e);
    EXPECT_EQ(error_code(*e), "hello_required");
  }
  {
    Client c(port);
    c.send("hello", {{"role", "admin"}});
    EXPECT_EQ(error_code(*c.wait_for("error")), "bad_role");
  }
  {
    Client c(port);
    c.hello("observer");
    c.send("teleport", {}, 1);  // hello already used seq 1
    EXPECT_EQ(error_code(*c.wait_for("error")), "bad_seq");
    EXPECT_TRUE(c.wait_closed());
  }
  {
    Client c(port);
    c.hello("observer");
    c.send("teleport", {});
    EXPECT_EQ(error_code(*c.wait_for("error")), "unknown_type");
  }
  {
    Client c(port);
    c.hello("observer");
    c.send_binary("MSWE");
    EXPECT_EQ(error_code(*c.wait_for("error")), "protocol_violation");
  }
  {
    Client c(port);
    c.hello("controller");
    c.send("cmd_waypoints", {{"points", "nope"}});
    EXPECT_EQ(error_code(*c.wait_for("error")), "bad_payload");
    c.send("cmd_run", {{"action", "start"}});  // still connected
    EXPECT_TRUE(c.wait_for("state", [](const Envelope& m) { return m.payload["running"] == true; }));
  }
}

TEST(Service, WaypointsProduceDensePathForAllClients) {
  Service svc(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = svc.start();
  Client c(port), o(port);
  c.hello("controller");
  o.hello("observer");
  c.send("cmd_waypoints", {{"points", {{0, 0}, {1, 0}, {2, 1}, {2, 2}}}});
  const auto p = c.wait_for("path");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->payload["samples"].size(), 5000u);
  const auto po = o.wait_for("path");
  ASSERT_TRUE(po);
  EXPECT_EQ(po->payload["samples"], p->payload["samples"]);
  const auto st = c.wait_for("state", [](const Envelope& e) { return e.payload["mode"] == "track"; });
  ASSERT_TRUE(st);
  EXPECT_EQ(st->payload["tracker"]["samples"], 5000);
  // a late joiner gets the current path
  Client late(port);
  late.hello("observer");
  EXPECT_TRUE(late.wait_for("path"));
}

TEST(Service, CloudsStreamWithinCap) {
  auto cfg = depot_config();
  cfg.lidar = *builtin_lidar("hap");  // 45200 points per frame before reduction
  auto opt = quick_options();
  opt.start_running = true;
  Service svc(cfg, load_scene(scene_file("depot")), opt);
  Client o(svc.start());
  o.hello("observer");
  const auto bytes = o.wait_cloud();
  ASSERT_TRUE(bytes);
  const auto m = decode_cloud_message(*bytes);
  EXPECT_LE(m.frame.points.size(), kWireCloudCap);
  EXPECT_GT(m.frame.points.size(), 1000u);
}

TEST(Service, RecordWritesABundle) {
  const fs::path rec = temp_dir("rec");
  auto opt = quick_options(rec);
  opt.speed = 0;  // unpaced
  Service svc(depot_config(), load_scene(scene_file("depot")), opt);
  Client c(svc.start());
  c.hello("controller");
  c.send("cmd_run", {{"action", "record"}});
  ASSERT_TRUE(c.wait_for("state", [](const Envelope& e) { return e.payload["recording"] == true; }));
  c.send("cmd_teleop", {{"v", 0.2}, {"w", 0.1}});
  c.send("cmd_run", {{"action", "start"}});
  ASSERT_TRUE(c.wait_for("state", [](const Envelope& e) { return e.payload["frames"].get<int>() >= 5; }, 60000ms));
  c.send("cmd_run", {{"action", "pause"}});
  c.send("cmd_run", {{"action", "record"}});
  ASSERT_TRUE(c.wait_for("state", [](const Envelope& e) { return e.payload["recording"] == false; }));
  const auto dirs = svc.recordings();
  ASSERT_EQ(dirs.size(), 1u);
  EXPECT_EQ(dirs[0].filename(), "session-001");
  const auto b = read_bundle(dirs[0]);
  EXPECT_GE(b.frames.size(), 5u);
  EXPECT_EQ(b.imu.size(), b.ground_truth.size());
  EXPECT_FALSE(b.commands.empty());
  EXPECT_EQ(b.commands.front().twist, (PlanarTwist{0.2, 0.1}));
}

TEST(Service, BindFailureIsAnIoError) {
  Service a(depot_config(), load_scene(scene_file("depot")), quick_options());
  const auto port = a.start();
  auto opt = quick_options();
  opt.port = port;
  Service b(depot_config(), load_scene(scene_file("depot")), opt);
  EXPECT_THROW(b.start(), IoError);
}
