// dknav — command-line front end for the docking-navigation toolkit.
//
// Subcommands:
//   propagate     --tle <file> --duration <s> --dt <s>
//   gen-traj      --config <json> | --defaults
//   build-dataset --config <json>
//   split         --root <dir> --seed <n>
//   train         --root <dir> --split <json> [--config <json>]
//   eval          --checkpoint <file> --sequence <dir> [--emit-csv <file>]
//                 [--emit-svg <file>] [--downscale <n>]
//   calibrate     --samples <csv>
//
// Global flags: --seed, --out-dir, --verbose.  Every output file lands under
// --out-dir; each successful run prints a one-line summary on stdout.  Exit
// codes: 0 success, 1 usage error, 2 data/validation error (single-line
// diagnostic on stderr).
//
// Config files are JSON objects mirroring the typed config structs field for
// field; unknown keys are rejected.  Precedence: command-line flag > config
// file value > built-in default (--seed replaces the seed a config file would
// supply; explicit per-sequence seeds in a build-dataset sequence list are
// left untouched).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dknav/calib.hpp"
#include "dknav/dataset_io.hpp"
#include "dknav/errors.hpp"
#include "dknav/imaging.hpp"
#include "dknav/neuralnet.hpp"
#include "dknav/orbit.hpp"
#include "dknav/pose_core.hpp"
#include "dknav/trajgen.hpp"
#include "internal/file_io.hpp"

namespace {

using nlohmann::json;

// Post-parse usage problems (flag combinations CLI11 cannot express).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
  bool verbose = false;
};

void vlog(const GlobalOpts& g, const std::string& line) {
  if (g.verbose) std::cerr << "dknav: " << line << "\n";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Joins a user-supplied output name onto --out-dir, refusing paths that
// would escape it (every output must stay inside --out-dir).
std::string out_path(const GlobalOpts& g, const std::string& name, const char* flag) {
  namespace fs = std::filesystem;
  fs::path p(name);
  if (p.is_absolute()) throw UsageError(std::string(flag) + " must be relative to --out-dir");
  for (const auto& part : p)
    if (part == "..") throw UsageError(std::string(flag) + " must not contain \"..\"");
  fs::path full = fs::path(g.out_dir) / p;
  fs::create_directories(full.parent_path().empty() ? fs::path(".") : full.parent_path());
  return full.string();
}

// ---------------------------------------------------------------------------
// JSON config mirrors.  Every loader rejects unknown keys so a typo in a
// config file fails loudly instead of silently falling back to a default.

json parse_json_file(const std::string& path) {
  const std::string text = dknav::internal::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw dknav::MalformedFile(path + ": " + e.what());
  }
}

void require_keys(const json& j, const std::string& what,
                  std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw dknav::ConfigInvalid(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) throw dknav::ConfigInvalid(what + ": unknown key \"" + it.key() + "\"");
  }
}

template <typename T>
T get_or(const json& j, const std::string& what, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw dknav::ConfigInvalid(what + ": bad value for \"" + key + "\"");
  }
}

std::array<double, 2> get_pair(const json& j, const std::string& what, const char* key,
                               std::array<double, 2> fallback) {
  if (!j.contains(key)) return fallback;
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
    throw dknav::ConfigInvalid(what + ": \"" + key + "\" must be a [lo, hi] number pair");
  return {a[0].get<double>(), a[1].get<double>()};
}

dknav::TrajectoryConfig trajectory_from_json(const json& j, const std::string& what) {
  require_keys(j, what,
               {"seed", "rate_hz", "start_range_m", "handover_range_m", "dock_range_m",
                "waypoint_radius_m", "acquisition_speed_ms", "forced_speed_ms", "perturb_prob",
                "perturb_vel_ms", "perturb_pos_m", "perturb_att_deg", "align_time_s", "gains",
                "slew_fraction", "mode", "static_offset_pos_m", "static_offset_att_deg"});
  dknav::TrajectoryConfig c;
  c.seed = get_or<std::uint64_t>(j, what, "seed", c.seed);
  c.rate_hz = get_or<double>(j, what, "rate_hz", c.rate_hz);
  c.start_range_m = get_or<double>(j, what, "start_range_m", c.start_range_m);
  c.handover_range_m = get_or<double>(j, what, "handover_range_m", c.handover_range_m);
  c.dock_range_m = get_or<double>(j, what, "dock_range_m", c.dock_range_m);
  c.waypoint_radius_m = get_pair(j, what, "waypoint_radius_m", c.waypoint_radius_m);
  c.acquisition_speed_ms = get_pair(j, what, "acquisition_speed_ms", c.acquisition_speed_ms);
  c.forced_speed_ms = get_or<double>(j, what, "forced_speed_ms", c.forced_speed_ms);
  c.perturb_prob = get_or<double>(j, what, "perturb_prob", c.perturb_prob);
  c.perturb_vel_ms = get_or<double>(j, what, "perturb_vel_ms", c.perturb_vel_ms);
  c.perturb_pos_m = get_or<double>(j, what, "perturb_pos_m", c.perturb_pos_m);
  c.perturb_att_deg = get_or<double>(j, what, "perturb_att_deg", c.perturb_att_deg);
  c.align_time_s = get_or<double>(j, what, "align_time_s", c.align_time_s);
  if (j.contains("gains")) {
    require_keys(j.at("gains"), what + ".gains", {"kp", "ki"});
    c.gains.kp = get_or<double>(j.at("gains"), what + ".gains", "kp", c.gains.kp);
    c.gains.ki = get_or<double>(j.at("gains"), what + ".gains", "ki", c.gains.ki);
  }
  c.slew_fraction = get_or<double>(j, what, "slew_fraction", c.slew_fraction);
  if (j.contains("mode")) {
    const std::string m = get_or<std::string>(j, what, "mode", "nominal");
    if (m == "nominal")
      c.mode = dknav::TrajectoryConfig::Mode::nominal;
    else if (m == "static_misalignment")
      c.mode = dknav::TrajectoryConfig::Mode::static_misalignment;
    else
      throw dknav::ConfigInvalid(what + ": mode must be \"nominal\" or \"static_misalignment\"");
  }
  c.static_offset_pos_m = get_or<double>(j, what, "static_offset_pos_m", c.static_offset_pos_m);
  c.static_offset_att_deg =
      get_or<double>(j, what, "static_offset_att_deg", c.static_offset_att_deg);
  return c;
}

dknav::RenderSettings render_from_json(const json& j, const std::string& what) {
  require_keys(j, what, {"background", "sun_direction", "sun_elevation_deg", "ambient", "seed"});
  dknav::RenderSettings r;
  if (j.contains("background")) {
    const std::string b = get_or<std::string>(j, what, "background", "space");
    if (b == "space")
      r.background = dknav::Background::space;
    else if (b == "clutter")
      r.background = dknav::Background::clutter;
    else if (b == "texture")
      r.background = dknav::Background::texture;
    else
      throw dknav::ConfigInvalid(what +
                                 ": background must be \"space\", \"clutter\" or \"texture\"");
  }
  if (j.contains("sun_direction") && j.contains("sun_elevation_deg"))
    throw dknav::ConfigInvalid(what + ": give sun_direction or sun_elevation_deg, not both");
  if (j.contains("sun_direction")) {
    const json& a = j.at("sun_direction");
    if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() ||
        !a[2].is_number())
      throw dknav::ConfigInvalid(what + ": sun_direction must be a 3-element number array");
    dknav::Vec3 v{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    if (v.norm() < 1e-12)
      throw dknav::ConfigInvalid(what + ": sun_direction must be a nonzero vector");
    r.sun_direction = v.normalized();
  } else if (j.contains("sun_elevation_deg")) {
    r.sun_direction =
        dknav::sun_from_elevation_deg(get_or<double>(j, what, "sun_elevation_deg", 90.0));
  }
  r.ambient = get_or<double>(j, what, "ambient", r.ambient);
  r.seed = get_or<std::uint64_t>(j, what, "seed", r.seed);
  return r;
}

dknav::SequenceBuildConfig sequence_from_json(const json& j, const std::string& what) {
  require_keys(j, what,
               {"id", "role", "trajectory", "render", "width", "height", "hfov_deg", "vfov_deg"});
  dknav::SequenceBuildConfig c;
  c.id = get_or<std::string>(j, what, "id", "");
  if (c.id.empty()) throw dknav::ConfigInvalid(what + ": \"id\" is required");
  if (j.contains("role")) {
    try {
      c.role = dknav::role_from_string(get_or<std::string>(j, what, "role", "automatic"));
    } catch (const dknav::MalformedFile&) {
      throw dknav::ConfigInvalid(what +
                                 ": role must be automatic, train, val or test");
    }
  }
  if (j.contains("trajectory"))
    c.trajectory = trajectory_from_json(j.at("trajectory"), what + ".trajectory");
  if (j.contains("render")) c.render = render_from_json(j.at("render"), what + ".render");
  c.width = get_or<int>(j, what, "width", c.width);
  c.height = get_or<int>(j, what, "height", c.height);
  c.hfov_deg = get_or<double>(j, what, "hfov_deg", c.hfov_deg);
  c.vfov_deg = get_or<double>(j, what, "vfov_deg", c.vfov_deg);
  return c;
}

std::vector<dknav::SequenceBuildConfig> dataset_from_json(const json& j, const GlobalOpts& g) {
  const std::string what = "dataset config";
  require_keys(j, what, {"preset", "seed", "sequences"});
  const bool has_preset = j.contains("preset");
  const bool has_list = j.contains("sequences");
  if (has_preset == has_list)
    throw dknav::ConfigInvalid(what + ": give exactly one of \"preset\" and \"sequences\"");
  if (has_preset) {
    std::uint64_t seed = get_or<std::uint64_t>(j, what, "seed", 0);
    if (g.seed_given) seed = g.seed;
    const std::string p = get_or<std::string>(j, what, "preset", "");
    if (p == "mini") return dknav::mini_build_configs(seed);
    if (p == "table1") return dknav::table1_build_configs(seed);
    throw dknav::ConfigInvalid(what + ": preset must be \"mini\" or \"table1\"");
  }
  if (j.contains("seed"))
    throw dknav::ConfigInvalid(what + ": \"seed\" applies to presets only");
  const json& list = j.at("sequences");
  if (!list.is_array() || list.empty())
    throw dknav::ConfigInvalid(what + ": \"sequences\" must be a non-empty array");
  std::vector<dknav::SequenceBuildConfig> configs;
  for (std::size_t i = 0; i < list.size(); ++i)
    configs.push_back(sequence_from_json(list[i], "sequences[" + std::to_string(i) + "]"));
  return configs;
}

dknav::NetworkConfig network_from_json(const json& j, const std::string& what) {
  require_keys(j, what, {"blocks", "base_channels", "in_channels", "leaky_slope", "dropout_p"});
  dknav::NetworkConfig n;
  n.blocks = get_or<int>(j, what, "blocks", n.blocks);
  n.base_channels = get_or<int>(j, what, "base_channels", n.base_channels);
  n.in_channels = get_or<int>(j, what, "in_channels", n.in_channels);
  n.leaky_slope = get_or<double>(j, what, "leaky_slope", n.leaky_slope);
  n.dropout_p = get_or<double>(j, what, "dropout_p", n.dropout_p);
  return n;
}

dknav::TrainConfig train_from_json(const json& j) {
  const std::string what = "train config";
  require_keys(j, what,
               {"epochs", "batch_size", "lr_max", "cycles", "dropout_p", "seed", "downscale",
                "augment", "network"});
  dknav::TrainConfig c;
  c.epochs = get_or<int>(j, what, "epochs", c.epochs);
  c.batch_size = get_or<int>(j, what, "batch_size", c.batch_size);
  c.lr_max = get_or<double>(j, what, "lr_max", c.lr_max);
  c.cycles = get_or<int>(j, what, "cycles", c.cycles);
  c.dropout_p = get_or<double>(j, what, "dropout_p", c.dropout_p);
  c.seed = get_or<std::uint64_t>(j, what, "seed", c.seed);
  c.downscale = get_or<int>(j, what, "downscale", c.downscale);
  c.augment = get_or<bool>(j, what, "augment", c.augment);
  if (j.contains("network")) c.network = network_from_json(j.at("network"), what + ".network");
  return c;
}

// ---------------------------------------------------------------------------
// SVG line chart: error-vs-time panels for eval output.  Self-contained
// writer producing a static two-panel figure (position error on top,
// attitude error below) with dashed markers at phase changes.

struct Panel {
  double x0, y0, w, h;  // plot box in SVG coordinates
};

void append_panel(std::string& svg, const Panel& p,
                  const std::vector<std::pair<double, double>>& pts,
                  const std::vector<double>& phase_marks, const std::string& title,
                  const char* colour) {
  double xmin = pts.front().first, xmax = pts.back().first;
  if (xmax <= xmin) xmax = xmin + 1.0;
  double ymax = 0.0;
  for (const auto& q : pts) ymax = std::max(ymax, q.second);
  if (ymax <= 0.0) ymax = 1.0;
  ymax *= 1.05;
  const auto X = [&](double t) { return p.x0 + (t - xmin) / (xmax - xmin) * p.w; };
  const auto Y = [&](double v) { return p.y0 + p.h - v / ymax * p.h; };

  svg += "<text x=\"" + fmt("%.1f", p.x0) + "\" y=\"" + fmt("%.1f", p.y0 - 8) +
         "\" font-size=\"13\" fill=\"#333\">" + title + "</text>\n";
  // Horizontal grid with value labels.
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    const double y = Y(v);
    svg += "<line x1=\"" + fmt("%.1f", p.x0) + "\" y1=\"" + fmt("%.1f", y) + "\" x2=\"" +
           fmt("%.1f", p.x0 + p.w) + "\" y2=\"" + fmt("%.1f", y) +
           "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt("%.1f", p.x0 - 6) + "\" y=\"" + fmt("%.1f", y + 4) +
           "\" font-size=\"11\" fill=\"#555\" text-anchor=\"end\">" + fmt("%.3g", v) +
           "</text>\n";
  }
  // Time ticks.
  for (int i = 0; i <= 5; ++i) {
    const double t = xmin + (xmax - xmin) * i / 5.0;
    const double x = X(t);
    svg += "<line x1=\"" + fmt("%.1f", x) + "\" y1=\"" + fmt("%.1f", p.y0 + p.h) + "\" x2=\"" +
           fmt("%.1f", x) + "\" y2=\"" + fmt("%.1f", p.y0 + p.h + 4) +
           "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.1f", p.y0 + p.h + 16) +
           "\" font-size=\"11\" fill=\"#555\" text-anchor=\"middle\">" + fmt("%.4g", t) +
           "</text>\n";
  }
  for (double t : phase_marks) {
    const double x = X(t);
    svg += "<line x1=\"" + fmt("%.1f", x) + "\" y1=\"" + fmt("%.1f", p.y0) + "\" x2=\"" +
           fmt("%.1f", x) + "\" y2=\"" + fmt("%.1f", p.y0 + p.h) +
           "\" stroke=\"#999\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  }
  svg += "<rect x=\"" + fmt("%.1f", p.x0) + "\" y=\"" + fmt("%.1f", p.y0) + "\" width=\"" +
         fmt("%.1f", p.w) + "\" height=\"" + fmt("%.1f", p.h) +
         "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  svg += "<polyline fill=\"none\" stroke=\"";
  svg += colour;
  svg += "\" stroke-width=\"1.5\" points=\"";
  for (const auto& q : pts)
    svg += fmt("%.2f", X(q.first)) + "," + fmt("%.2f", Y(std::max(0.0, q.second))) + " ";
  svg += "\"/>\n";
}

void write_error_svg(const std::string& path, const dknav::EvalResult& result) {
  const auto& frames = result.frames;
  std::vector<std::pair<double, double>> pos, att;
  std::vector<double> marks;
  pos.reserve(frames.size());
  att.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    pos.emplace_back(frames[i].t_s, frames[i].dt_m);
    att.emplace_back(frames[i].t_s, frames[i].dq_deg);
    if (i > 0 && frames[i].phase != frames[i - 1].phase) marks.push_back(frames[i].t_s);
  }
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"640\" "
         "viewBox=\"0 0 960 640\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"960\" height=\"640\" fill=\"#ffffff\"/>\n";
  append_panel(svg, Panel{70, 40, 860, 240}, pos, marks, "position error (m) vs time (s)",
               "#1f77b4");
  append_panel(svg, Panel{70, 360, 860, 240}, att, marks, "attitude error (deg) vs time (s)",
               "#d62728");
  svg += "</svg>\n";
  dknav::internal::write_file_atomic(path, svg);
}

// ---------------------------------------------------------------------------
// Subcommand bodies.

struct PropagateOpts {
  std::string tle;
  double duration = 0.0;
  double dt = 0.0;
};

void run_propagate(const GlobalOpts& g, const PropagateOpts& o) {
  const auto tles = dknav::read_tle_file(o.tle);
  if (tles.empty()) throw dknav::MalformedFile(o.tle + ": no TLE entries");
  const dknav::TwoLineElements& e = tles.front();
  vlog(g, "propagating catalog " + std::to_string(e.catalog_number) + " from epoch " +
              e.epoch.iso8601());
  const dknav::StateVector s0 = dknav::tle_to_state(e);
  const auto states = dknav::propagate(s0, dknav::SpacecraftProperties{}, o.dt, o.duration);
  write_ephemeris_csv(out_path(g, "orbit.csv", "output"), states);
  std::cout << "propagate: catalog " << e.catalog_number << " epoch " << e.epoch.iso8601()
            << ", " << states.size() << " states over " << fmt("%.6g", o.duration)
            << " s (dt=" << fmt("%.6g", o.dt) << " s) -> orbit.csv\n";
}

struct GenTrajOpts {
  std::string config;
  bool defaults = false;
};

void run_gen_traj(const GlobalOpts& g, const GenTrajOpts& o) {
  dknav::TrajectoryConfig cfg;
  if (!o.defaults) cfg = trajectory_from_json(parse_json_file(o.config), "trajectory config");
  if (g.seed_given) cfg.seed = g.seed;
  dknav::GenerationStats stats;
  const auto samples = dknav::generate(cfg, &stats);
  write_trajectory_jsonl(out_path(g, "trajectory.jsonl", "output"), samples);
  const auto bounds = dknav::phase_boundaries(samples);
  std::cout << "gen-traj: " << samples.size() << " samples over "
            << fmt("%.6g", samples.back().t_s) << " s (phase frames "
            << bounds[0].second - bounds[0].first << "/" << bounds[1].second - bounds[1].first
            << "/" << bounds[2].second - bounds[2].first << ", " << stats.perturb_events
            << " perturbation events) -> trajectory.jsonl\n";
}

struct BuildDatasetOpts {
  std::string config;
};

void run_build_dataset(const GlobalOpts& g, const BuildDatasetOpts& o) {
  const auto configs = dataset_from_json(parse_json_file(o.config), g);
  std::filesystem::create_directories(g.out_dir);
  vlog(g, "building " + std::to_string(configs.size()) + " sequences under " + g.out_dir);
  const auto records = dknav::build_dataset(g.out_dir, configs);
  std::size_t frames = 0;
  for (const auto& r : records) frames += r.frames.size();
  std::cout << "build-dataset: " << records.size() << " sequences, " << frames << " frames -> "
            << g.out_dir << "\n";
}

struct SplitOpts {
  std::string root;
};

void run_split(const GlobalOpts& g, const SplitOpts& o) {
  const auto records = dknav::load_dataset(o.root);
  const auto plan = dknav::split(records, g.seed);
  write_split(out_path(g, "split.json", "output"), plan);
  const long long train_n = plan.train_frames(), val_n = plan.val_frames();
  const double frac = (train_n + val_n) > 0
                          ? 100.0 * static_cast<double>(val_n) /
                                static_cast<double>(train_n + val_n)
                          : 0.0;
  std::cout << "split: " << train_n << " train / " << val_n << " val frames (val "
            << fmt("%.1f", frac) << "%) -> split.json\n";
}

struct TrainOpts {
  std::string root;
  std::string split;
  std::string config;
};

void run_train(const GlobalOpts& g, const TrainOpts& o) {
  const auto records = dknav::load_dataset(o.root);
  const auto plan = dknav::read_split(o.split);
  dknav::TrainConfig cfg;
  if (!o.config.empty()) cfg = train_from_json(parse_json_file(o.config));
  if (g.seed_given) cfg.seed = g.seed;
  vlog(g, "training " + std::to_string(cfg.epochs) + " epochs on " +
              std::to_string(plan.train_frames()) + " train / " +
              std::to_string(plan.val_frames()) + " val frames");
  const auto result = dknav::train(records, plan, cfg);
  save_checkpoint(out_path(g, "model.ckpt", "output"), result.params);
  write_metrics_csv(out_path(g, "metrics.csv", "output"), result.log);
  for (const auto& m : result.log)
    vlog(g, "epoch " + std::to_string(m.epoch) + " " + m.split + " loss " +
                fmt("%.6g", m.loss) + " dt " + fmt("%.4g", m.mean_dt_m) + " m dq " +
                fmt("%.4g", m.mean_dq_deg) + " deg");
  double final_loss = 0.0;
  std::string final_split = "train";
  for (const auto& m : result.log)
    if (m.epoch == result.best_epoch) {
      final_loss = m.loss;
      final_split = m.split;  // prefers "val" when present: val rows follow train rows
    }
  std::cout << "train: " << cfg.epochs << " epochs, best epoch " << result.best_epoch << " ("
            << final_split << " loss " << fmt("%.6g", final_loss)
            << ") -> model.ckpt, metrics.csv\n";
}

struct EvalOpts {
  std::string checkpoint;
  std::string sequence;
  std::string emit_csv = "eval.csv";
  std::string emit_svg;
  int downscale = 4;
};

void run_eval(const GlobalOpts& g, const EvalOpts& o) {
  const dknav::NetworkParams params = dknav::load_checkpoint(o.checkpoint);
  const dknav::SequenceRecord record = dknav::load_sequence(o.sequence);
  vlog(g, "evaluating " + record.id + " (" + std::to_string(record.frames.size()) + " frames)");
  const auto result = dknav::evaluate(params, record, dknav::EvalThresholds{}, o.downscale);
  write_eval_csv(out_path(g, o.emit_csv, "--emit-csv"), result);
  std::string extra;
  if (!o.emit_svg.empty()) {
    write_error_svg(out_path(g, o.emit_svg, "--emit-svg"), result);
    extra = ", " + o.emit_svg;
  }
  const auto& s = result.summary;
  std::cout << "eval: " << record.id << ", " << result.frames.size() << " frames, median dt "
            << fmt("%.4g", s.median_dt_m) << " m, median dq " << fmt("%.4g", s.median_dq_deg)
            << " deg, median range-normalised dt " << fmt("%.4g", 100.0 * s.median_dtr_frac)
            << "%, position compliance " << fmt("%.1f", 100.0 * s.pos_compliance)
            << "%, attitude compliance " << fmt("%.1f", 100.0 * s.att_compliance) << "% -> "
            << o.emit_csv << extra << "\n";
}

struct CalibrateOpts {
  std::string samples;
};

void run_calibrate(const GlobalOpts& g, const CalibrateOpts& o) {
  const auto samples = dknav::read_calib_csv(o.samples);
  const auto result = dknav::solve_statics(samples);
  write_calib_json(out_path(g, "calib.json", "output"), result);
  write_tbc_stream_csv(out_path(g, "tbc_stream.csv", "output"), result, samples);
  std::cout << "calibrate: " << samples.size() << " samples, rms rotation residual "
            << fmt("%.4g", result.rms_rotation_residual_deg) << " deg, rms translation residual "
            << fmt("%.4g", result.rms_translation_residual_m)
            << " m -> calib.json, tbc_stream.csv\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-based docking navigation toolkit", "dknav"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  GlobalOpts g;
  auto* seed_opt =
      app.add_option("--seed", g.seed, "Seed overriding the config-file / default seed");
  app.add_option("--out-dir", g.out_dir, "Directory receiving every output file")
      ->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Progress log lines on standard error");

  PropagateOpts po;
  auto* c_prop = app.add_subcommand("propagate", "Propagate the first TLE of a file with RK4");
  c_prop->fallthrough();
  c_prop->add_option("--tle", po.tle, "TLE file")->required();
  c_prop->add_option("--duration", po.duration, "Propagation span, seconds")
      ->required()
      ->check(CLI::PositiveNumber);
  c_prop->add_option("--dt", po.dt, "Integrator step, seconds")
      ->required()
      ->check(CLI::PositiveNumber);

  GenTrajOpts go;
  auto* c_gen = app.add_subcommand("gen-traj", "Generate a docking-approach trajectory");
  c_gen->fallthrough();
  auto* gen_src = c_gen->add_option_group("source", "Trajectory configuration source");
  gen_src->add_option("--config", go.config, "Trajectory config JSON");
  gen_src->add_flag("--defaults", go.defaults, "Use the built-in default configuration");
  gen_src->require_option(1);

  BuildDatasetOpts bo;
  auto* c_build = app.add_subcommand("build-dataset", "Render an image-sequence dataset");
  c_build->fallthrough();
  c_build->add_option("--config", bo.config, "Dataset config JSON (preset or sequence list)")
      ->required();

  SplitOpts so;
  auto* c_split = app.add_subcommand("split", "Partition a dataset into train/val slices");
  c_split->fallthrough();
  c_split->add_option("--root", so.root, "Dataset root directory")->required();

  TrainOpts to;
  auto* c_train = app.add_subcommand("train", "Train the pose-regression network");
  c_train->fallthrough();
  c_train->add_option("--root", to.root, "Dataset root directory")->required();
  c_train->add_option("--split", to.split, "Split plan JSON from `split`")->required();
  c_train->add_option("--config", to.config, "Train config JSON (defaults when omitted)");

  EvalOpts eo;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on one sequence");
  c_eval->fallthrough();
  c_eval->add_option("--checkpoint", eo.checkpoint, "Checkpoint file from `train`")->required();
  c_eval->add_option("--sequence", eo.sequence, "Sequence directory (holds index.jsonl)")
      ->required();
  c_eval->add_option("--emit-csv", eo.emit_csv, "Per-frame error CSV, relative to --out-dir")
      ->capture_default_str();
  c_eval->add_option("--emit-svg", eo.emit_svg, "Error-vs-time SVG chart, relative to --out-dir");
  c_eval->add_option("--downscale", eo.downscale, "Image downscale factor (match training)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  CalibrateOpts co;
  auto* c_cal = app.add_subcommand("calibrate", "Solve camera/fixture mounting from mocap logs");
  c_cal->fallthrough();
  c_cal->add_option("--samples", co.samples, "Calibration sample CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    std::filesystem::create_directories(g.out_dir);
    if (c_prop->parsed()) run_propagate(g, po);
    if (c_gen->parsed()) run_gen_traj(g, go);
    if (c_build->parsed()) run_build_dataset(g, bo);
    if (c_split->parsed()) run_split(g, so);
    if (c_train->parsed()) run_train(g, to);
    if (c_eval->parsed()) run_eval(g, eo);
    if (c_cal->parsed()) run_calibrate(g, co);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "dknav: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "dknav: error: " << one_line(e.what()) << "\n";
    return 2;
  }
}
