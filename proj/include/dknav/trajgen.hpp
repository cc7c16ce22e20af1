#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dknav/errors.hpp"
#include "dknav/pose_core.hpp"

// Relative docking-approach trajectories.
//
// Pose convention for every sample: the pose maps target-frame points into
// the chaser camera frame, translation = (cross_x, cross_y, range) in metres
// with the range measured along the docking axis, rotation = the attitude
// misalignment (identity when perfectly aligned).
//
// Profile, at a fixed sample rate:
//   phase 1  target acquisition: lateral waypoint legs at constant range;
//   phase 2  forced translation from the start range to the handover range
//            at a nominal closing speed, with randomly timed perturbation
//            events whose setpoints a discrete PI loop chases;
//   phase 3  alignment (residual offsets ramped out at constant range)
//            followed by the final aligned closing leg to the dock range.

namespace dknav {

class ConfigInvalid : public Error {
 public:
  using Error::Error;
};

class NonMonotonicPhases : public Error {
 public:
  using Error::Error;
};

struct PiGains {
  double kp = 0.8;
  double ki = 0.1;
};

struct TrajectoryConfig {
  std::uint64_t seed = 0;
  double rate_hz = 10.0;

  double start_range_m = 10.0;
  double handover_range_m = 3.0;
  double dock_range_m = 0.05;

  // Phase 1: waypoints drawn on an annulus around the docking axis.
  std::array<double, 2> waypoint_radius_m{1.0, 2.0};
  std::array<double, 2> acquisition_speed_ms{0.09, 0.12};

  // Phase 2/3.
  double forced_speed_ms = 0.03;
  double perturb_prob = 0.10;      // per-step probability of a new setpoint
  double perturb_vel_ms = 0.002;   // closing-speed setpoint half-width
  double perturb_pos_m = 0.01;     // cross-track setpoint half-width
  double perturb_att_deg = 0.1;    // per-axis attitude setpoint half-width
  double align_time_s = 10.0;

  PiGains gains;
  // Translation/attitude channel outputs are rate-limited to half the
  // corresponding setpoint half-width per step, so a fresh setpoint can
  // never cause a jump on the order of the full perturbation width.
  double slew_fraction = 0.5;

  // Alternative phase-2 behaviour: one constant misalignment held for the
  // whole phase instead of randomly timed events.
  enum class Mode { nominal, static_misalignment };
  Mode mode = Mode::nominal;
  double static_offset_pos_m = 0.05;
  double static_offset_att_deg = 0.5;
};

struct RelativeSample {
  double t_s = 0.0;
  int phase = 1;
  Pose pose;
};

// Optional counters filled in by generate(); used to validate the empirical
// event rate against perturb_prob.
struct GenerationStats {
  long long phase2_steps = 0;
  long long perturb_events = 0;
};

std::vector<RelativeSample> generate(const TrajectoryConfig& cfg,
                                     GenerationStats* stats = nullptr);

// Half-open sample index ranges [begin, end) for phases 1..3; a phase that
// never occurs gets an empty range.  Throws NonMonotonicPhases if the phase
// labels ever decrease or skip backwards.
std::array<std::pair<std::size_t, std::size_t>, 3> phase_boundaries(
    const std::vector<RelativeSample>& samples);

// One JSON object per line: {"t": ..., "phase": ..., "pose": [7]}.
void write_trajectory_jsonl(const std::string& path,
                            const std::vector<RelativeSample>& samples);
std::vector<RelativeSample> read_trajectory_jsonl(const std::string& path);

}  // namespace dknav
