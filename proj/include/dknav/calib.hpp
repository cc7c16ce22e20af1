#pragma once

#include <string>
#include <vector>

#include "dknav/errors.hpp"
#include "dknav/pose_core.hpp"

// Recovery of the two static rigid transforms that tie a motion-capture
// system to a camera/target pair.
//
// Frames: o = mocap world, i = marker rig on the camera platform, s = marker
// rig on the target, c = camera, b = target body.  Each observation k pairs
// the mocap poses T_oi(k), T_os(k) with an independently measured target
// pose in the camera frame, T_cb(k).  Writing A_k = T_oi(k)^-1 * T_os(k),
// X = T_ic and Y = T_sb, every sample satisfies
//
//   A_k * Y = X * B_k,     B_k = T_cb(k)
//
// (both sides equal T_ib(k)).  This is the classic robot-world/hand-eye
// problem; it is solved linearly: the rotation equations are Kronecker-
// vectorized into a homogeneous system whose one-dimensional null space
// (given sufficient rotational excitation) yields both rotations up to a
// common scale fixed by det = +1, each then projected onto SO(3); the
// translations follow from a small linear least-squares system.

namespace dknav {

class TooFewSamples : public Error {
 public:
  using Error::Error;
};

class InsufficientExcitation : public Error {
 public:
  using Error::Error;
};

// One simultaneous observation of both marker rigs and the camera-frame
// target pose.  `t` carries the sample's timestamp (the CSV `k` column).
struct CalibSample {
  double t = 0.0;
  Pose t_oi;  // camera-platform rig in mocap world coordinates
  Pose t_os;  // target rig in mocap world coordinates
  Pose t_cb;  // target body observed in the camera frame
};

struct CalibResult {
  Pose t_ic;  // camera-rig markers -> camera
  Pose t_sb;  // target markers -> target body
  double rms_rotation_residual_deg = 0.0;
  double rms_translation_residual_m = 0.0;
};

// Solves for the statics.  Preconditions: at least 3 samples
// (TooFewSamples) whose relative rig rotations reach 5 degrees about at
// least two independent axes (InsufficientExcitation otherwise).
CalibResult solve_statics(const std::vector<CalibSample>& samples);

// RMS rotation (degrees) and translation (metres) residuals of the
// candidate statics over the samples: the deviation from identity of
// A_k * Y * (X * B_k)^-1 per sample.
std::pair<double, double> calibration_residuals(const std::vector<CalibSample>& samples,
                                                const Pose& t_ic, const Pose& t_sb);

// Calibrated ground truth for one observation:
//   T_bc = T_ic^-1 * T_oi^-1 * T_os * T_sb.
Pose apply_calibration(const CalibResult& result, const Pose& t_oi, const Pose& t_os);

// CSV row per sample: `k,T_oi(7),T_os(7),T_cb(7)` with each pose serialized
// as [tx, ty, tz, qx, qy, qz, qw].  A header line is written and tolerated
// on read; k must be strictly increasing.
std::vector<CalibSample> read_calib_csv(const std::string& path);
void write_calib_csv(const std::string& path, const std::vector<CalibSample>& samples);

// JSON round trip of a solver result (statics + residuals).
void write_calib_json(const std::string& path, const CalibResult& result);
CalibResult read_calib_json(const std::string& path);

// Calibrated ground-truth stream: one `t,T_bc(7)` row per sample, with T_bc
// produced by apply_calibration on the sample's mocap poses.
void write_tbc_stream_csv(const std::string& path, const CalibResult& result,
                          const std::vector<CalibSample>& samples);

}  // namespace dknav
