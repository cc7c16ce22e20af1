#include "dknav/trajgen.hpp"

#include <cmath>
#include <sstream>

#include "dknav/rng.hpp"
#include "internal/file_io.hpp"
#include "json.hpp"

namespace dknav {

namespace {

using ordered_json = nlohmann::ordered_json;

void validate(const TrajectoryConfig& c) {
  const auto fail = [](const char* msg) { throw ConfigInvalid(msg); };
  if (!(c.rate_hz > 0)) fail("rate_hz must be positive");
  if (!(c.dock_range_m > 0)) fail("dock_range_m must be positive");
  if (!(c.dock_range_m < c.handover_range_m)) fail("dock range must lie inside handover range");
  if (!(c.handover_range_m < c.start_range_m)) fail("handover range must lie inside start range");
  if (!(c.waypoint_radius_m[0] > 0) || !(c.waypoint_radius_m[0] <= c.waypoint_radius_m[1]))
    fail("waypoint radius band must be positive and ordered");
  if (!(c.acquisition_speed_ms[0] > 0) ||
      !(c.acquisition_speed_ms[0] <= c.acquisition_speed_ms[1]))
    fail("acquisition speed band must be positive and ordered");
  if (!(c.forced_speed_ms > 0)) fail("forced_speed_ms must be positive");
  if (c.perturb_prob < 0 || c.perturb_prob > 1) fail("perturb_prob must lie in [0, 1]");
  if (c.perturb_vel_ms < 0 || c.perturb_pos_m < 0 || c.perturb_att_deg < 0)
    fail("perturbation half-widths must be non-negative");
  if (c.align_time_s < 0) fail("align_time_s must be non-negative");
  if (!(c.gains.kp > 0) || c.gains.ki < 0) fail("PI gains must be kp > 0, ki >= 0");
  if (!(c.slew_fraction > 0)) fail("slew_fraction must be positive");
  if (c.static_offset_pos_m < 0 || c.static_offset_att_deg < 0)
    fail("static offsets must be non-negative");
}

// Discrete PI tracker with an output rate limit.  The integrator only
// accumulates while the output is unsaturated (anti-windup), so a capped
// ramp toward a fresh setpoint cannot build up overshoot.
struct PiChannel {
  double state = 0.0;
  double integ = 0.0;
  double setpoint = 0.0;

  double step(const PiGains& g, double slew_cap) {
    const double e = setpoint - state;
    const double integ_next = integ + e;
    double delta = g.kp * e + g.ki * integ_next;
    if (std::abs(delta) > slew_cap) {
      delta = std::copysign(slew_cap, delta);
    } else {
      integ = integ_next;
    }
    state += delta;
    return state;
  }
};

UnitQuaternion attitude_from_euler_deg(double ex, double ey, double ez) {
  return UnitQuaternion::from_axis_angle({0, 0, 1}, deg2rad(ez)) *
         UnitQuaternion::from_axis_angle({0, 1, 0}, deg2rad(ey)) *
         UnitQuaternion::from_axis_angle({1, 0, 0}, deg2rad(ex));
}

Pose make_pose(double x, double y, double range, double ex, double ey, double ez) {
  return {attitude_from_euler_deg(ex, ey, ez), {x, y, range}};
}

}  // namespace

std::vector<RelativeSample> generate(const TrajectoryConfig& cfg, GenerationStats* stats) {
  validate(cfg);
  const double dt = 1.0 / cfg.rate_hz;

  Rng rng_acq(derive_seed(cfg.seed, 1));
  Rng rng_events(derive_seed(cfg.seed, 2));
  Rng rng_static(derive_seed(cfg.seed, 3));

  std::vector<RelativeSample> out;
  long long k = 0;
  const auto emit = [&](int phase, const Pose& pose) {
    // k / rate, not k * dt: division keeps t_i bit-identical to the
    // canonical i/rate timestamps the dataset loader validates against.
    out.push_back({static_cast<double>(k) / cfg.rate_hz, phase, pose});
    ++k;
  };

  // --- phase 1: two waypoint legs ending on the docking axis ---
  const double r1 = rng_acq.uniform(cfg.waypoint_radius_m[0], cfg.waypoint_radius_m[1]);
  const double az1 = rng_acq.uniform(0.0, 2.0 * kPi);
  const double r2 = rng_acq.uniform(cfg.waypoint_radius_m[0], cfg.waypoint_radius_m[1]);
  // The second azimuth stays within a quarter turn of the first so that leg
  // lengths (and with them the sequence duration) stay tightly banded.
  const double az2 = az1 + rng_acq.uniform(-kPi / 4.0, kPi / 4.0);
  const double s1 = rng_acq.uniform(cfg.acquisition_speed_ms[0], cfg.acquisition_speed_ms[1]);
  const double s2 = rng_acq.uniform(cfg.acquisition_speed_ms[0], cfg.acquisition_speed_ms[1]);

  const double w1x = r1 * std::cos(az1), w1y = r1 * std::sin(az1);
  const double w2x = r2 * std::cos(az2), w2y = r2 * std::sin(az2);
  const double len1 = std::hypot(w2x - w1x, w2y - w1y);
  const double len2 = std::hypot(w2x, w2y);
  const double t_leg1 = len1 / s1;
  const double t_total = t_leg1 + len2 / s2;

  for (;;) {
    const double t = static_cast<double>(k) * dt;
    if (t >= t_total) break;
    double x, y;
    if (t < t_leg1) {
      const double f = t / t_leg1;
      x = w1x + (w2x - w1x) * f;
      y = w1y + (w2y - w1y) * f;
    } else {
      const double f = (t - t_leg1) * s2 / len2;
      x = w2x * (1.0 - f);
      y = w2y * (1.0 - f);
    }
    emit(1, make_pose(x, y, cfg.start_range_m, 0, 0, 0));
  }
  // Arrival sample, snapped onto the axis.
  emit(1, make_pose(0, 0, cfg.start_range_m, 0, 0, 0));

  // --- phase 2: forced translation with PI-tracked setpoint errors ---
  const bool static_mode = cfg.mode == TrajectoryConfig::Mode::static_misalignment;
  const double pos_width = static_mode ? cfg.static_offset_pos_m : cfg.perturb_pos_m;
  const double att_width = static_mode ? cfg.static_offset_att_deg : cfg.perturb_att_deg;
  const double cap_pos = cfg.slew_fraction * pos_width;
  const double cap_att = cfg.slew_fraction * att_width;
  const double cap_vel = cfg.slew_fraction * std::max(cfg.perturb_vel_ms, 1e-9);

  PiChannel chx, chy, chex, chey, chez, chv;
  chv.state = chv.setpoint = cfg.forced_speed_ms;

  if (static_mode) {
    chx.setpoint = rng_static.uniform(-cfg.static_offset_pos_m, cfg.static_offset_pos_m);
    chy.setpoint = rng_static.uniform(-cfg.static_offset_pos_m, cfg.static_offset_pos_m);
    chex.setpoint = rng_static.uniform(-cfg.static_offset_att_deg, cfg.static_offset_att_deg);
    chey.setpoint = rng_static.uniform(-cfg.static_offset_att_deg, cfg.static_offset_att_deg);
    chez.setpoint = rng_static.uniform(-cfg.static_offset_att_deg, cfg.static_offset_att_deg);
  }

  double range = cfg.start_range_m;
  for (;;) {
    if (!static_mode && rng_events.bernoulli(cfg.perturb_prob)) {
      chx.setpoint = rng_events.uniform(-cfg.perturb_pos_m, cfg.perturb_pos_m);
      chy.setpoint = rng_events.uniform(-cfg.perturb_pos_m, cfg.perturb_pos_m);
      chex.setpoint = rng_events.uniform(-cfg.perturb_att_deg, cfg.perturb_att_deg);
      chey.setpoint = rng_events.uniform(-cfg.perturb_att_deg, cfg.perturb_att_deg);
      chez.setpoint = rng_events.uniform(-cfg.perturb_att_deg, cfg.perturb_att_deg);
      chv.setpoint = cfg.forced_speed_ms + rng_events.uniform(-cfg.perturb_vel_ms, cfg.perturb_vel_ms);
      if (stats) ++stats->perturb_events;
    }
    const double x = chx.step(cfg.gains, cap_pos);
    const double y = chy.step(cfg.gains, cap_pos);
    const double ex = chex.step(cfg.gains, cap_att);
    const double ey = chey.step(cfg.gains, cap_att);
    const double ez = chez.step(cfg.gains, cap_att);
    const double v = chv.step(cfg.gains, cap_vel);
    range -= v * dt;
    if (stats) ++stats->phase2_steps;
    emit(2, make_pose(x, y, range, ex, ey, ez));
    if (range <= cfg.handover_range_m) break;
  }

  // --- phase 3: alignment at constant range, then the aligned closing leg ---
  const long long n_align = std::llround(cfg.align_time_s * cfg.rate_hz);
  const double x0 = chx.state, y0 = chy.state;
  const double ex0 = chex.state, ey0 = chey.state, ez0 = chez.state;
  for (long long i = 1; i <= n_align; ++i) {
    const double f = 1.0 - static_cast<double>(i) / static_cast<double>(n_align);
    emit(3, make_pose(x0 * f, y0 * f, range, ex0 * f, ey0 * f, ez0 * f));
  }
  while (range > cfg.dock_range_m + 1e-12) {
    range -= cfg.forced_speed_ms * dt;
    emit(3, make_pose(0, 0, range, 0, 0, 0));
  }

  return out;
}

std::array<std::pair<std::size_t, std::size_t>, 3> phase_boundaries(
    const std::vector<RelativeSample>& samples) {
  std::array<std::pair<std::size_t, std::size_t>, 3> ranges{};
  int current = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int p = samples[i].phase;
    if (p < 1 || p > 3) throw NonMonotonicPhases("phase label outside 1..3");
    if (p < current) throw NonMonotonicPhases("phase labels must be non-decreasing");
    if (p > current) {
      current = p;
      ranges[static_cast<std::size_t>(p - 1)].first = i;
    }
    ranges[static_cast<std::size_t>(p - 1)].second = i + 1;
  }
  // Phases that never occur collapse to an empty range at their successor's
  // start (or the end of the series).
  for (int p = 2; p >= 0; --p) {
    auto& r = ranges[static_cast<std::size_t>(p)];
    if (r.second == 0) {
      const std::size_t anchor =
          p == 2 ? samples.size() : ranges[static_cast<std::size_t>(p + 1)].first;
      r.first = r.second = anchor;
    }
  }
  return ranges;
}

void write_trajectory_jsonl(const std::string& path,
                            const std::vector<RelativeSample>& samples) {
  std::string content;
  content.reserve(samples.size() * 96);
  for (const auto& s : samples) {
    ordered_json j;
    j["t"] = s.t_s;
    j["phase"] = s.phase;
    j["pose"] = s.pose.to_array();
    content += j.dump();
    content += '\n';
  }
  internal::write_file_atomic(path, content);
}

std::vector<RelativeSample> read_trajectory_jsonl(const std::string& path) {
  std::istringstream in(internal::read_file(path));
  std::vector<RelativeSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("t") || !j.contains("phase") || !j.contains("pose") ||
        !j["pose"].is_array() || j["pose"].size() != 7) {
      throw MalformedFile(path + ":" + std::to_string(lineno) +
                          ": expected {t, phase, pose[7]}");
    }
    RelativeSample s;
    s.t_s = j["t"].get<double>();
    s.phase = j["phase"].get<int>();
    std::array<double, 7> a{};
    for (int i = 0; i < 7; ++i) a[static_cast<std::size_t>(i)] = j["pose"][static_cast<std::size_t>(i)].get<double>();
    s.pose = Pose::from_array(a);
    if (!out.empty() && s.t_s <= out.back().t_s) {
      throw MalformedFile(path + ": timestamps must strictly increase");
    }
    out.push_back(s);
  }
  if (out.empty()) throw MalformedFile(path + ": no samples");
  return out;
}

}  // namespace dknav
