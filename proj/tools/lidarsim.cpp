// lidarsim command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lidarsim/config.hpp"
#include "lidarsim/engine.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/evaluator.hpp"
#include "lidarsim/normals.hpp"
#include "lidarsim/report.hpp"
#include "lidarsim/scene.hpp"
#include "lidarsim/sequence_store.hpp"
#include "lidarsim/service.hpp"

namespace fs = std::filesystem;
using namespace lidarsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

std::atomic<bool> g_stop{false};

unsigned worker_count() {
  if (const char* env = std::getenv("LIDARSIM_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
    std::fprintf(stderr, "warning: ignoring LIDARSIM_THREADS='%s'\n", env);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct SimArgs {
  std::string config, out, mode, path, commands;
  std::uint64_t seed = 0;
  double duration = 0.0;
  bool seed_set = false;
};

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::fprintf(stderr, "warning: %s\n", s.c_str());
}

struct RecordedRun {
  RunSummary summary;
  nlohmann::json manifest;
};

/// Runs cfg to completion, streaming frames into a new bundle at out.
RecordedRun record_run(const RunConfig& cfg, const fs::path& out) {
  const ScenePtr scene = load_scene(cfg.scene_path);
  std::unique_ptr<BundleWriter> writer;
  SimulationOptions so;
  so.workers = worker_count();
  so.frame_sink = [&writer](std::int64_t i, const PointCloudFrame& f) { writer->write_frame(i, f); };
  Simulation sim(cfg, scene, std::move(so));
  print_warnings(sim.warnings());
  writer = std::make_unique<BundleWriter>(out);
  RecordedRun r;
  r.summary = sim.run();
  const auto& s = sim.streams();
  r.manifest = writer->finish({run_config_to_json(sim.config()), cfg.seed}, ground_truth_poses(s.ground_truth), s.imu,
                              s.commands, s.tracking);
  return r;
}

void print_run(const RecordedRun& r, const fs::path& out) {
  std::printf("bundle:        %s\n", out.string().c_str());
  std::printf("sim time:      %.3f s (%lld ticks)\n", r.summary.sim_time, static_cast<long long>(r.summary.ticks));
  std::printf("frames:        %lld\n", static_cast<long long>(r.summary.frames));
  std::printf("imu samples:   %zu\n", r.summary.imu_samples);
  std::printf("ground truth:  %zu poses, path length %.3f m\n", r.summary.ground_truth_samples, r.summary.distance);
  std::printf("digest:        %s\n", bundle_digest(out).c_str());
}

int cmd_sim(const SimArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  cfg.imu.seed = cfg.seed;
  if (a.duration > 0.0) cfg.duration = a.duration;
  if (!a.mode.empty()) cfg.control.mode = parse_control_mode(a.mode);
  if (!a.path.empty()) cfg.control.path = load_path_file(a.path);
  if (!a.commands.empty()) cfg.control.commands = load_command_log(a.commands);
  const RecordedRun r = record_run(cfg, a.out);
  print_run(r, a.out);
  if (r.summary.timed_out) {
    std::fprintf(stderr, "error: tracker did not finish within %.3f s (bundle kept for inspection)\n", cfg.duration);
    return kExitFailure;
  }
  if (cfg.control.mode == ControlMode::track) std::printf("tracker:       finished\n");
  return kExitOk;
}

/// Re-runs a recorded bundle from its manifest config and command log.
int cmd_replay(const std::string& bundle, const std::string& out) {
  std::vector<std::string> warnings;
  const auto manifest = read_manifest(bundle, &warnings);
  print_warnings(warnings);
  if (!manifest.contains("config")) throw ValidationError(bundle + ": manifest has no config");
  RunConfig cfg = parse_run_config(manifest["config"], fs::path(bundle), bundle + "/manifest.json:config");
  const auto& streams = manifest["streams"];
  if (!streams.contains("commands")) throw ValidationError(bundle + ": bundle has no command log to replay");
  cfg.control.mode = ControlMode::scripted;
  cfg.control.commands = load_command_log(fs::path(bundle) / streams["commands"]["file"].get<std::string>());
  cfg.duration = static_cast<double>(manifest["counts"]["ground_truth"].get<std::int64_t>()) * cfg.base_dt;
  const RecordedRun r = record_run(cfg, out);
  print_run(r, out);
  bool same = true;
  for (const char* key : {"ground_truth", "imu", "clouds"}) {
    const bool eq = r.manifest["streams"][key]["sha256"] == streams[key]["sha256"];
    std::printf("%-14s %s\n", (std::string(key) + ":").c_str(), eq ? "identical" : "DIFFERS");
    same = same && eq;
  }
  if (!same) {
    std::fprintf(stderr, "error: replay diverged from the recording\n");
    return kExitFailure;
  }
  return kExitOk;
}

struct ServeArgs {
  std::string config, listen = "127.0.0.1:8765", record_dir = "recordings";
  double speed = 1.0;
  bool start = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_serve(const ServeArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  cfg.imu.seed = cfg.seed;
  const auto [host, port] = parse_listen(a.listen);
  ServiceOptions so;
  so.address = host;
  so.port = port;
  so.speed = a.speed;
  so.start_running = a.start;
  so.record_dir = a.record_dir;
  so.workers = worker_count();
  Service svc(cfg, load_scene(cfg.scene_path), so);
  const auto bound = svc.start();
  std::printf("listening on ws://%s:%u (protocol %s)\n", host.c_str(), static_cast<unsigned>(bound), kWireProtocol);
  std::fflush(stdout);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.stop();
  for (const auto& r : svc.recordings()) std::printf("recorded %s\n", r.string().c_str());
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

void print_stats(const char* label, const ErrorStats& s, const char* unit) {
  std::printf("%s (%s, %zu pairs)\n", label, unit, s.count);
  std::printf("  rmse    %.6f\n  mean    %.6f\n  median  %.6f\n  std     %.6f\n  min     %.6f\n  max     %.6f\n",
              s.rmse, s.mean, s.median, s.std, s.min, s.max);
}

/// A bundle directory stands for its ground truth.
Trajectory load_trajectory(const fs::path& p) {
  if (fs::is_directory(p)) {
    if (!fs::exists(p / "manifest.json")) throw IoError(p.string() + " is a directory but not a sequence bundle");
    return load_tum(p / "ground_truth.txt");
  }
  return load_tum(p);
}

struct EvalArgs {
  std::string est, ref, est_dir, out, meta, align = "none";
  double max_dt = 0.01;
  bool rotational = false;
  std::size_t delta = 1;
  double delta_seconds = 0.0;
};

MetricResult run_metric(const std::string& metric, const Trajectory& est, const Trajectory& ref, const EvalArgs& a) {
  if (metric == "ape") {
    ApeOptions o;
    o.align = parse_align_mode(a.align);
    o.max_dt = a.max_dt;
    o.rotational = a.rotational;
    return ape(est, ref, o);
  }
  RpeOptions o;
  o.delta_steps = a.delta;
  if (a.delta_seconds > 0.0) o.delta_seconds = a.delta_seconds;
  o.max_dt = a.max_dt;
  o.rotational = a.rotational;
  return rpe(est, ref, o);
}

fs::path find_reference(const fs::path& ref, const std::string& sequence) {
  if (!fs::is_directory(ref) || fs::exists(ref / "manifest.json")) return ref;
  for (const fs::path& c : {ref / (sequence + ".txt"), ref / (sequence + ".tum"), ref / sequence})
    if (fs::exists(c)) return c;
  throw IoError("no reference for sequence '" + sequence + "' under " + ref.string());
}

int cmd_eval_single(const std::string& metric, const EvalArgs& a) {
  const Trajectory est = load_trajectory(a.est);
  const Trajectory ref = load_trajectory(a.ref);
  const MetricResult r = run_metric(metric, est, ref, a);
  std::printf("%s  %s\n", metric == "ape" ? "APE" : "RPE", r.settings.c_str());
  print_stats("translation", r.stats, "m");
  if (r.rotation_stats) print_stats("rotation", *r.rotation_stats, "rad");
  if (r.alignment)
    std::printf("alignment scale %.9f, translation (%.6f, %.6f, %.6f)\n", r.alignment->scale,
                r.alignment->translation.x(), r.alignment->translation.y(), r.alignment->translation.z());
  if (!a.out.empty()) {
    const auto f = write_metric_report(r, a.out, metric == "ape" ? &est : nullptr, metric == "ape" ? &ref : nullptr);
    std::printf("wrote %s, %s%s%s\n", f.json.string().c_str(), f.csv.string().c_str(),
                f.overlay.empty() ? "" : ", ", f.overlay.string().c_str());
  }
  return kExitOk;
}

/// Every trajectory file in est_dir is one result. `seq__alg.txt` names the
/// sequence and algorithm; otherwise the file stem is the sequence and the
/// directory name the algorithm.
int cmd_eval_batch(const std::string& metric, const EvalArgs& a) {
  std::map<std::string, std::pair<std::string, std::string>> meta;
  if (!a.meta.empty()) {
    const auto j = detail::parse_json_text(detail::read_text_file(a.meta, "meta file"), a.meta);
    for (const auto& [seq, v] : j.items())
      meta[seq] = {v.value("control", std::string("-")), v.value("feature", std::string("-"))};
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.est_dir))
    if (e.is_regular_file() && e.path().extension() != ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no estimate files in " + a.est_dir);
  const std::string dir_name = fs::path(a.est_dir).lexically_normal().filename().string();

  std::vector<SummaryEntry> rows;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto sep = stem.find("__");
    SummaryEntry row;
    row.sequence = sep == std::string::npos ? stem : stem.substr(0, sep);
    row.algorithm = sep == std::string::npos ? (dir_name.empty() ? "estimate" : dir_name) : stem.substr(sep + 2);
    const auto m = meta.find(row.sequence);
    row.control = m == meta.end() ? "-" : m->second.first;
    row.feature = m == meta.end() ? "-" : m->second.second;
    const Trajectory est = load_trajectory(f);
    const Trajectory ref = load_trajectory(find_reference(a.ref, row.sequence));
    const MetricResult r = run_metric(metric, est, ref, a);
    row.stats = r.stats;
    rows.push_back(row);
    if (!a.out.empty()) write_metric_report(r, fs::path(a.out) / stem, &est, &ref);
  }
  const std::string table = summary_table(rows);
  std::fputs(table.c_str(), stdout);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    detail::write_file_atomic(fs::path(a.out) / "summary.txt", table);
    detail::write_file_atomic(fs::path(a.out) / "summary.csv", summary_csv(rows));
  }
  return kExitOk;
}

struct NormalsArgs {
  std::string est, ref, out;
  std::size_t k = 5;
  double radius = 1.0;
};

int cmd_eval_normals(const NormalsArgs& a) {
  const auto frames = load_normal_csv(a.est);
  std::ifstream in(a.ref);
  if (!in) throw IoError("cannot open ground-truth cloud " + a.ref);
  const auto gt = parse_xyz(in, a.ref);
  const auto r = plane_normal_error(frames, gt, {a.k, a.radius});
  double total = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    total += r.frame_error[i];
    evaluated += r.evaluated[i];
  }
  std::printf("plane-normal error  k=%zu radius=%.3f m\n", a.k, a.radius);
  std::printf("  frames     %zu\n  evaluated  %zu points\n  skipped    %zu points\n", r.t.size(), evaluated,
              r.total_skipped());
  std::printf("  total      %.9g\n  per point  %.9g\n", total, evaluated ? total / static_cast<double>(evaluated) : 0.0);
  if (!a.out.empty()) {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    detail::write_file_atomic(a.out, normals_csv(r));
    std::printf("wrote %s\n", a.out.c_str());
  }
  return kExitOk;
}

// ---- scene ------------------------------------------------------------------

int cmd_scene_validate(const std::string& path) {
  const SceneDocument doc = read_scene_document(path);
  std::printf("scene '%s' (%s)\n", doc.name.c_str(), path.c_str());
  std::size_t tris = 0, movers = 0;
  for (const auto& o : doc.objects) {
    std::printf("  %-16s %-8s", o.id.c_str(), to_string(o.geometry.kind));
    if (o.geometry.kind == PrimitiveKind::mesh) std::printf(" %zu triangles", o.geometry.triangles.size());
    if (o.geometry.unbounded()) std::printf(" unbounded");
    if (o.motion) std::printf(" mover (%zu waypoints%s)", o.motion->waypoints.size(), o.motion->loop ? ", loop" : "");
    std::printf("\n");
    tris += o.geometry.kind == PrimitiveKind::mesh ? o.geometry.triangles.size() : 0;
    movers += o.motion ? 1 : 0;
  }
  std::printf("objects: %zu  triangles: %zu  movers: %zu\n", doc.objects.size(), tris, movers);
  if (doc.violations.empty()) {
    std::printf("valid\n");
    return kExitOk;
  }
  std::printf("%zu violation(s):\n", doc.violations.size());
  for (const auto& v : doc.violations) std::printf("  %s\n", v.c_str());
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lidarsim: LIDAR-inertial robot simulator and trajectory evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("sim", "run a simulation and record a sequence bundle");
  sim_cmd->add_option("--config", sim.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim.out, "output bundle directory (must be new or empty)")->required();
  auto* seed_opt = sim_cmd->add_option("--seed", sim.seed, "random seed (default: config value, else 0)");
  sim_cmd->add_option("--duration", sim.duration, "sim time in s (track mode: tracker timeout)")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--mode", sim.mode, "control mode override")
      ->check(CLI::IsMember({"teleop", "track", "scripted"}));
  sim_cmd->add_option("--path", sim.path, "waypoint file for track mode")->check(CLI::ExistingFile);
  sim_cmd->add_option("--commands", sim.commands, "command log (t v w) for scripted mode")->check(CLI::ExistingFile);

  std::string replay_bundle, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "re-render a bundle's command log into a new bundle");
  replay_cmd->add_option("--bundle", replay_bundle, "recorded bundle")->required()->check(CLI::ExistingDirectory);
  replay_cmd->add_option("--out", replay_out, "output bundle directory")->required();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "interactive WebSocket session");
  serve_cmd->add_option("--config", serve.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--listen", serve.listen, "bind address host:port")->capture_default_str();
  serve_cmd->add_option("--speed", serve.speed, "sim seconds per wall second (0 = as fast as possible)")->capture_default_str();
  serve_cmd->add_option("--record-dir", serve.record_dir, "where `record` sessions are written")->capture_default_str();
  serve_cmd->add_flag("--start", serve.start, "start running immediately");
  serve_cmd->add_option("--seed", serve.seed, "random seed");

  auto* eval_cmd = app.add_subcommand("eval", "trajectory and map evaluation");
  eval_cmd->require_subcommand(1);
  EvalArgs ev;
  auto add_traj_opts = [&ev](CLI::App* c) {
    auto* est = c->add_option("--est", ev.est, "estimated trajectory (TUM) or bundle");
    auto* dir = c->add_option("--est-dir", ev.est_dir, "batch: directory of estimates")->check(CLI::ExistingDirectory);
    est->excludes(dir);
    c->add_option("--ref", ev.ref, "reference trajectory, bundle, or (batch) directory")->required();
    c->add_option("--max-dt", ev.max_dt, "association tolerance in s")->capture_default_str()->check(CLI::NonNegativeNumber);
    c->add_flag("--rotation", ev.rotational, "also report rotational error");
    c->add_option("--out", ev.out, "report prefix (single) or directory (batch)");
    c->add_option("--meta", ev.meta, "batch: JSON {sequence: {control, feature}}")->check(CLI::ExistingFile);
  };
  auto* ape_cmd = eval_cmd->add_subcommand("ape", "absolute pose error");
  add_traj_opts(ape_cmd);
  ape_cmd->add_option("--align", ev.align, "alignment")->capture_default_str()->check(CLI::IsMember({"none", "se3", "sim3"}));
  auto* rpe_cmd = eval_cmd->add_subcommand("rpe", "relative pose error");
  add_traj_opts(rpe_cmd);
  rpe_cmd->add_option("--delta", ev.delta, "pair offset in poses")->capture_default_str()->check(CLI::PositiveNumber);
  rpe_cmd->add_option("--delta-seconds", ev.delta_seconds, "pair offset in seconds (overrides --delta)")
      ->check(CLI::PositiveNumber);

  NormalsArgs nv;
  auto* normals_cmd = eval_cmd->add_subcommand("normals", "plane-normal error of an estimated normal set");
  normals_cmd->add_option("--est", nv.est, "normal CSV t,px,py,pz,nx,ny,nz")->required()->check(CLI::ExistingFile);
  normals_cmd->add_option("--ref", nv.ref, "ground-truth cloud (x y z rows)")->required()->check(CLI::ExistingFile);
  normals_cmd->add_option("--k", nv.k, "neighbours")->capture_default_str()->check(CLI::Range(3, 1000));
  normals_cmd->add_option("--radius", nv.radius, "neighbour radius in m")->capture_default_str()->check(CLI::PositiveNumber);
  normals_cmd->add_option("--out", nv.out, "per-frame CSV");

  std::string scene_path;
  auto* scene_cmd = app.add_subcommand("scene", "scene utilities");
  scene_cmd->require_subcommand(1);
  auto* validate_cmd = scene_cmd->add_subcommand("validate", "check a scene file");
  validate_cmd->add_option("--scene", scene_path, "scene file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim_cmd) {
      sim.seed_set = seed_opt->count() > 0;
      return cmd_sim(sim);
    }
    if (*replay_cmd) return cmd_replay(replay_bundle, replay_out);
    if (*serve_cmd) {
      serve.seed_set = serve_cmd->count("--seed") > 0;
      return cmd_serve(serve);
    }
    if (*ape_cmd || *rpe_cmd) {
      const std::string metric = *ape_cmd ? "ape" : "rpe";
      if (ev.est.empty() == ev.est_dir.empty()) {
        std::fprintf(stderr, "error: give exactly one of --est or --est-dir\n");
        return kExitUsage;
      }
      return ev.est_dir.empty() ? cmd_eval_single(metric, ev) : cmd_eval_batch(metric, ev);
    }
    if (*normals_cmd) return cmd_eval_normals(nv);
    if (*validate_cmd) return cmd_scene_validate(scene_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
