#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"
#include "lidarsim/config.hpp"
#include "lidarsim/engine.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/scene.hpp"
#include "lidarsim/sequence_store.hpp"
#include "lidarsim/wire.hpp"

namespace lidarsim {

/// Ordered queue with a capacity bound. push() blocks while full, so nothing
/// pushed is ever lost.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(std::max<std::size_t>(1, capacity)) {}

  /// Returns false if the queue was closed.
  bool push(T v) {
    std::unique_lock lk(m_);
    not_full_.wait(lk, [&] { return closed_ || q_.size() < cap_; });
    if (closed_) return false;
    q_.push_back(std::move(v));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> try_pop() {
    std::lock_guard lk(m_);
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

  /// Waits until an item is available, the deadline passes, or close().
  bool wait_nonempty_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lk(m_);
    return not_empty_.wait_until(lk, deadline, [&] { return closed_ || !q_.empty(); }) && !q_.empty();
  }

  void close() {
    std::lock_guard lk(m_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lk(m_);
    return q_.size();
  }

 private:
  mutable std::mutex m_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double speed = 1.0;          // simulated seconds per wall second; <= 0 runs unpaced
  bool start_running = false;
  std::filesystem::path record_dir = "recordings";
  unsigned workers = 1;
  double cloud_voxel = 0.05;
  std::size_t cloud_cap = kWireCloudCap;
  std::size_t command_capacity = 1024;
  std::size_t outbox_limit = 64;
  double state_rate = 20.0;  // Hz
};

/// Parses "host:port" (host optional).
inline std::pair<std::string, unsigned short> parse_listen(const std::string& s) {
  const auto colon = s.rfind(':');
  std::string host = colon == std::string::npos ? "127.0.0.1" : s.substr(0, colon);
  const std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  if (host.empty()) host = "0.0.0.0";
  try {
    std::size_t used = 0;
    const unsigned long p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::out_of_range(port);
    return {host, static_cast<unsigned short>(p)};
  } catch (const std::exception&) {
    throw ParseError("bad listen address '" + s + "' (expected host:port)");
  }
}

class Service;

namespace detail {

namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
namespace net = boost::asio;
using tcp = boost::asio::ip::tcp;

enum class Role { none, controller, observer };

/// One outgoing message; seq is stamped when it is actually written so it
/// stays strictly increasing per connection even after replacements.
struct Outgoing {
  std::string type;
  nlohmann::json payload;
  double t_sim = 0.0;
  std::shared_ptr<const PointCloudFrame> cloud;  // binary when set
  bool droppable = false;                        // telemetry: newest wins per type
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Service& svc) : ws_(std::move(socket)), svc_(svc) {}

  void start();
  void send(Outgoing msg);       // thread-safe
  void fail_and_close(const std::string& code, const std::string& message);  // io thread
  Role role() const { return role_; }
  std::uint64_t id() const { return id_; }
  void set_id(std::uint64_t id) { id_ = id; }
  std::size_t dropped() const { return dropped_; }

 private:
  void on_accept(beast::error_code ec);
  void do_read();
  void on_read(beast::error_code ec, std::size_t);
  void handle_text(const std::string& text);
  void enqueue(Outgoing msg);
  void write_next();
  void on_write(beast::error_code ec, std::size_t);
  void shutdown();

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  Service& svc_;
  Role role_ = Role::none;
  std::uint64_t id_ = 0;
  std::optional<std::uint64_t> last_in_seq_;
  std::uint64_t out_seq_ = 0;
  std::deque<Outgoing> outbox_;
  std::string writing_bytes_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
  std::size_t dropped_ = 0;
};

}  // namespace detail

/// Interactive session server: one engine thread owns the Simulation, one
/// I/O thread runs all sockets. They share only the command queue (clients
/// to engine) and posted telemetry (engine to clients).
class Service {
 public:
  Service(RunConfig cfg, ScenePtr scene, ServiceOptions opt = {})
      : base_cfg_(std::move(cfg)), scene_(std::move(scene)), opt_(std::move(opt)), commands_(opt_.command_capacity) {
    base_cfg_.validate();
    scene_summary_ = scene_summary_payload(*scene_);
  }

  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts both threads; returns the bound port.
  unsigned short start() {
    namespace net = boost::asio;
    using tcp = net::ip::tcp;
    boost::system::error_code ec;
    const auto addr = net::ip::make_address(opt_.address, ec);
    if (ec) throw IoError("bad bind address '" + opt_.address + "': " + ec.message());
    const tcp::endpoint ep(addr, opt_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
    reset_simulation();
    running_ = opt_.start_running;
    do_accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    engine_thread_ = std::thread([this] { engine_loop(); });
    return port_;
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    commands_.close();
    if (engine_thread_.joinable()) engine_thread_.join();
    boost::asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      ioc_.stop();
    });
    if (io_thread_.joinable()) io_thread_.join();
  }

  unsigned short port() const { return port_; }
  /// Bundles finalized by `record` so far.
  std::vector<std::filesystem::path> recordings() const {
    std::lock_guard lk(rec_mutex_);
    return recordings_;
  }

 private:
  friend class detail::WsSession;
  using SessionPtr = std::shared_ptr<detail::WsSession>;

  struct Inbound {
    std::weak_ptr<detail::WsSession> from;
    Envelope msg;
    bool join = false;  // fresh client wants the current snapshot
  };

  // ---- I/O thread ---------------------------------------------------------

  void do_accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, boost::asio::ip::tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto s = std::make_shared<detail::WsSession>(std::move(socket), *this);
      {
        std::lock_guard lk(sessions_mutex_);
        s->set_id(++next_session_id_);
        sessions_.push_back(s);
      }
      s->start();
      do_accept();
    });
  }

  bool claim_controller(const SessionPtr& s) {
    std::lock_guard lk(sessions_mutex_);
    if (auto cur = controller_.lock(); cur && cur != s) return false;
    controller_ = s;
    return true;
  }

  void session_closed(const detail::WsSession* s) {
    std::lock_guard lk(sessions_mutex_);
    if (controller_.lock().get() == s) controller_.reset();
    std::erase_if(sessions_, [&](const std::weak_ptr<detail::WsSession>& w) {
      auto p = w.lock();
      return !p || p.get() == s;
    });
  }

  void submit(Inbound in) { commands_.push(std::move(in)); }

  const nlohmann::json& scene_summary() const { return scene_summary_; }

  // ---- engine thread ------------------------------------------------------

  void broadcast(const detail::Outgoing& msg) {
    std::vector<SessionPtr> targets;
    {
      std::lock_guard lk(sessions_mutex_);
      for (auto& w : sessions_)
        if (auto p = w.lock(); p && p->role() != detail::Role::none) targets.push_back(p);
    }
    for (auto& t : targets) t->send(msg);
  }

  void send_error(const std::weak_ptr<detail::WsSession>& to, const std::string& code, const std::string& message) {
    if (auto p = to.lock()) {
      const auto e = error_message(code, message);
      p->send({e.type, e.payload, sim_->sim_time(), nullptr, false});
    }
  }

  detail::Outgoing state_message() const {
    const SessionStatus st{running_, writer_ != nullptr, ack_seq_};
    return {"state", state_payload(*sim_, st), sim_->sim_time(), nullptr, true};
  }

  void reset_simulation() {
    finish_recording();
    SimulationOptions so;
    so.workers = opt_.workers;
    so.frame_sink = [this](std::int64_t index, const PointCloudFrame& frame) { on_frame(index, frame); };
    sim_ = std::make_unique<Simulation>(base_cfg_, scene_, std::move(so));
    sim_->set_unbounded();
    sim_->set_track_continuous(true);
  }

  void on_frame(std::int64_t index, const PointCloudFrame& frame) {
    if (writer_) writer_->write_frame(index, frame);  // full resolution
    auto wire = std::make_shared<const PointCloudFrame>(prepare_wire_cloud(frame, opt_.cloud_voxel, opt_.cloud_cap));
    broadcast({"cloud", {}, frame.t0, wire, true});
  }

  void start_recording() {
    reset_simulation();
    std::filesystem::create_directories(opt_.record_dir);
    for (int i = 1;; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "session-%03d", i);
      const auto dir = opt_.record_dir / name;
      if (!std::filesystem::exists(dir)) {
        writer_ = std::make_unique<BundleWriter>(dir);
        break;
      }
    }
  }

  void finish_recording() {
    if (!writer_ || !sim_) return;
    RunConfig cfg = sim_->config();
    cfg.duration = std::max(cfg.base_dt, sim_->sim_time());
    const auto& s = sim_->streams();
    writer_->finish({run_config_to_json(cfg), cfg.seed}, ground_truth_poses(s.ground_truth), s.imu, s.commands,
                    s.tracking);
    {
      std::lock_guard lk(rec_mutex_);
      recordings_.push_back(writer_->dir());
    }
    writer_.reset();
  }

  void handle(Inbound& in) {
    if (in.join) {
      if (auto p = in.from.lock()) {
        if (const auto* tr = sim_->tracker()) p->send({"path", path_payload(tr->path()), sim_->sim_time(), nullptr, false});
        p->send(state_message());
      }
      return;
    }
    const auto& m = in.msg;
    const auto& pl = m.payload;
    try {
      if (m.type == "cmd_teleop") {
        if (pl.contains("key")) {
          if (!pl["key"].is_string()) throw ParseError("cmd_teleop.key must be a string");
          if (!sim_->apply_key(pl["key"].get<std::string>())) {
            send_error(in.from, "unmapped_key", "key '" + pl["key"].get<std::string>() + "' is not mapped");
            return;
          }
        } else if (pl.contains("v") && pl.contains("w") && pl["v"].is_number() && pl["w"].is_number()) {
          sim_->set_teleop_twist({pl["v"].get<double>(), pl["w"].get<double>()});
        } else {
          throw ParseError("cmd_teleop needs {key} or {v, w}");
        }
      } else if (m.type == "cmd_waypoints") {
        if (!pl.contains("points")) throw ParseError("cmd_waypoints needs 'points'");
        const auto pts = detail::parse_points(pl["points"], "cmd_waypoints.points");
        const auto& path = sim_->set_path(pts);
        broadcast({"path", path_payload(path), sim_->sim_time(), nullptr, false});
      } else if (m.type == "cmd_run") {
        const std::string action = pl.value("action", std::string());
        if (action == "start") {
          running_ = true;
        } else if (action == "pause") {
          running_ = false;
        } else if (action == "reset") {
          reset_simulation();
          running_ = false;
        } else if (action == "record") {
          if (writer_) {
            finish_recording();
          } else {
            start_recording();
          }
        } else {
          throw ParseError("cmd_run.action must be start, pause, reset or record");
        }
      }
    } catch (const Error& e) {
      send_error(in.from, "bad_payload", e.what());
      return;
    } catch (const nlohmann::json::exception& e) {
      send_error(in.from, "bad_payload", e.what());
      return;
    }
    ack_seq_ = m.seq;
    broadcast(state_message());  // acknowledgement
  }

  void engine_loop() {
    using clock = std::chrono::steady_clock;
    const auto state_period = std::chrono::duration<double>(1.0 / opt_.state_rate);
    const auto tick_period = std::chrono::duration<double>(opt_.speed > 0 ? base_cfg_.base_dt / opt_.speed : 0.0);
    const std::int64_t ticks_per_state =
        std::max<std::int64_t>(1, std::llround(1.0 / (opt_.state_rate * base_cfg_.base_dt)));
    auto next_tick = clock::now();
    auto next_state = clock::now();
    while (!stopped_) {
      while (auto in = commands_.try_pop()) handle(*in);
      if (running_) {
        sim_->tick();
        if (sim_->tick_count() % ticks_per_state == 0) {
          broadcast(state_message());
          next_state = clock::now() + std::chrono::duration_cast<clock::duration>(state_period);
        }
        if (opt_.speed > 0) {
          next_tick += std::chrono::duration_cast<clock::duration>(tick_period);
          const auto now = clock::now();
          if (next_tick < now - std::chrono::milliseconds(200)) next_tick = now;  // don't chase a backlog
          std::this_thread::sleep_until(next_tick);
        }
      } else {
        commands_.wait_nonempty_until(next_state);
        if (clock::now() >= next_state) {
          broadcast(state_message());
          next_state = clock::now() + std::chrono::duration_cast<clock::duration>(state_period);
        }
        next_tick = clock::now();
      }
    }
    while (auto in = commands_.try_pop()) {
    }
    finish_recording();
  }

  RunConfig base_cfg_;
  ScenePtr scene_;
  ServiceOptions opt_;
  nlohmann::json scene_summary_;

  boost::asio::io_context ioc_;
  boost::asio::ip::tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;
  std::thread io_thread_, engine_thread_;
  std::atomic<bool> stopped_{false};

  std::mutex sessions_mutex_;
  std::vector<std::weak_ptr<detail::WsSession>> sessions_;
  std::weak_ptr<detail::WsSession> controller_;
  std::uint64_t next_session_id_ = 0;

  BoundedQueue<Inbound> commands_;

  // engine-thread state
  std::unique_ptr<Simulation> sim_;
  std::unique_ptr<BundleWriter> writer_;
  bool running_ = false;
  std::uint64_t ack_seq_ = 0;

  mutable std::mutex rec_mutex_;
  std::vector<std::filesystem::path> recordings_;
};

namespace detail {

inline void WsSession::start() {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
}

inline void WsSession::on_accept(beast::error_code ec) {
  if (ec) return shutdown();
  do_read();
}

inline void WsSession::do_read() {
  ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
}

inline void WsSession::on_read(beast::error_code ec, std::size_t) {
  if (ec) return shutdown();
  if (closing_) return;
  if (!ws_.got_text()) {
    buffer_.consume(buffer_.size());
    return fail_and_close("protocol_violation", "binary messages are not accepted from clients");
  }
  const std::string text = beast::buffers_to_string(buffer_.data());
  buffer_.consume(buffer_.size());
  handle_text(text);
  if (!closing_) do_read();
}

inline void WsSession::handle_text(const std::string& text) {
  Envelope e;
  try {
    e = decode_envelope(text);
  } catch (const ParseError& err) {
    return fail_and_close("bad_message", err.what());
  }
  if (last_in_seq_ && e.seq <= *last_in_seq_)
    return fail_and_close("bad_seq", "seq " + std::to_string(e.seq) + " is not greater than " +
                                         std::to_string(*last_in_seq_));
  last_in_seq_ = e.seq;

  if (role_ == Role::none) {
    if (e.type != "hello") return fail_and_close("hello_required", "first message must be hello");
    const std::string want = e.payload.value("role", std::string("observer"));
    if (want != "controller" && want != "observer")
      return fail_and_close("bad_role", "role must be controller or observer");
    if (want == "controller" && !svc_.claim_controller(shared_from_this()))
      return fail_and_close("controller_exists", "another client already controls this session");
    role_ = want == "controller" ? Role::controller : Role::observer;
    enqueue({"hello",
             {{"protocol", kWireProtocol},
              {"role", want},
              {"server", std::string(kToolName) + " " + kToolVersion},
              {"base_dt", svc_.base_cfg_.base_dt},
              {"cloud_cap", svc_.opt_.cloud_cap}},
             0.0,
             nullptr,
             false});
    enqueue({"scene_summary", svc_.scene_summary(), 0.0, nullptr, false});
    svc_.submit({weak_from_this(), {}, true});
    return;
  }
  if (e.type == "hello") return fail_and_close("protocol_violation", "duplicate hello");
  if (e.type == "cmd_teleop" || e.type == "cmd_waypoints" || e.type == "cmd_run") {
    if (role_ != Role::controller) return fail_and_close("not_controller", "observers cannot send commands");
    svc_.submit({weak_from_this(), std::move(e), false});
    return;
  }
  fail_and_close("unknown_type", "unknown message type '" + e.type + "'");
}

inline void WsSession::send(Outgoing msg) {
  net::post(ws_.get_executor(), [self = shared_from_this(), m = std::move(msg)]() mutable { self->enqueue(std::move(m)); });
}

inline void WsSession::enqueue(Outgoing msg) {
  if (closed_ || (closing_ && msg.type != "error")) return;
  if (msg.droppable) {
    // The front entry may be in flight; only replace queued ones.
    for (std::size_t i = writing_ ? 1 : 0; i < outbox_.size(); ++i) {
      if (outbox_[i].type == msg.type) {
        outbox_[i] = std::move(msg);
        ++dropped_;
        return;
      }
    }
    if (outbox_.size() >= svc_.opt_.outbox_limit) {
      ++dropped_;
      return;
    }
  }
  outbox_.push_back(std::move(msg));
  if (!writing_) write_next();
}

inline void WsSession::write_next() {
  if (outbox_.empty()) {
    writing_ = false;
    if (closing_ && !closed_) {
      closed_ = true;
      ws_.async_close(websocket::close_code::policy_error,
                      [self = shared_from_this()](beast::error_code) { self->shutdown(); });
    }
    return;
  }
  writing_ = true;
  Outgoing& m = outbox_.front();
  const std::uint64_t seq = ++out_seq_;
  if (m.cloud) {
    writing_bytes_ = encode_cloud_message(seq, m.t_sim, *m.cloud);
    ws_.binary(true);
  } else {
    writing_bytes_ = encode_envelope({m.type, seq, m.t_sim, m.payload});
    ws_.text(true);
  }
  ws_.async_write(net::buffer(writing_bytes_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
}

inline void WsSession::on_write(beast::error_code ec, std::size_t) {
  if (ec) return shutdown();
  outbox_.pop_front();
  write_next();
}

inline void WsSession::fail_and_close(const std::string& code, const std::string& message) {
  const auto e = error_message(code, message);
  enqueue({e.type, e.payload, 0.0, nullptr, false});
  closing_ = true;
  // drop queued telemetry so the error goes out promptly
  std::erase_if(outbox_, [&](const Outgoing& o) { return o.droppable && !(writing_ && &o == &outbox_.front()); });
  if (!writing_) write_next();
}

inline void WsSession::shutdown() {
  closed_ = true;
  svc_.session_closed(this);
  beast::error_code ec;
  beast::get_lowest_layer(ws_).socket().close(ec);
}

}  // namespace detail

}  // namespace lidarsim
