#pragma once

#include <array>

#include "dknav/errors.hpp"
#include "dknav/vec.hpp"

// Rigid-body pose types and error metrics shared by the trajectory
// generator, the renderer, the regressor and the calibration solver.
//
// Conventions, used everywhere without exception:
//   * quaternions are scalar-last [x, y, z, w], Hamilton product;
//   * a Pose (R, t) maps a point expressed in its source frame to the
//     destination frame as  p_dst = R * p_src + t;
//   * the 6D rotation encoding is the first two columns of the DCM,
//     flattened column-major: [r00, r10, r20, r01, r11, r21].

namespace dknav {

// Thrown when a 6D rotation encoding cannot be orthonormalized.
class DegenerateRotation : public Error {
 public:
  using Error::Error;
};

// Thrown by range_normalized_error when the true range is zero.
class ZeroRange : public Error {
 public:
  using Error::Error;
};

struct UnitQuaternion {
  double x = 0.0, y = 0.0, z = 0.0, w = 1.0;

  static UnitQuaternion identity() { return {}; }
  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle_rad);

  UnitQuaternion conjugate() const { return {-x, -y, -z, w}; }
  double norm() const;
  UnitQuaternion normalized() const;

  // Hamilton product; composition order matches DCM products:
  // quat_to_dcm(a * b) == quat_to_dcm(a) * quat_to_dcm(b).
  UnitQuaternion operator*(const UnitQuaternion& o) const;

  Vec3 rotate(const Vec3& v) const;
};

using Dcm = Mat3;

struct Rot6D {
  // First two DCM columns, column-major.
  std::array<double, 6> v{1, 0, 0, 0, 1, 0};
};

// Gram-Schmidt back-mapping from the 6D encoding to a proper rotation.
// Throws DegenerateRotation when the first column has near-zero norm or the
// two columns are near-collinear (residual norm below 1e-12 after
// orthogonalization).
Dcm rot6d_to_dcm(const Rot6D& r);

Rot6D dcm_to_rot6d(const Dcm& m);

Dcm quat_to_dcm(const UnitQuaternion& q);

// Shepperd's method: numerically stable for all rotations.
UnitQuaternion dcm_to_quat(const Dcm& m);

// True when m is orthonormal with determinant +1 within tol.
bool is_rotation(const Mat3& m, double tol = 1e-9);

struct Pose {
  UnitQuaternion rotation;
  Vec3 translation;  // metres

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  Pose inverse() const;

  // (a * b).apply(p) == a.apply(b.apply(p))
  Pose operator*(const Pose& o) const;

  // Flat layout [tx, ty, tz, qx, qy, qz, qw]; shared by every file format.
  std::array<double, 7> to_array() const;
  static Pose from_array(const std::array<double, 7>& a);
};

// Euclidean distance between estimated and true translation, metres.
double position_error(const Vec3& t_hat, const Vec3& t_true);

// Geodesic attitude error in degrees, invariant to the quaternion double
// cover: 2*acos(clamp(|scalar part of q_hat^-1 * q_true|, 0, 1)).
double attitude_error_deg(const UnitQuaternion& q_hat, const UnitQuaternion& q_true);

// position_error divided by the true range; throws ZeroRange when the true
// translation norm is below 1e-12.
double range_normalized_error(const Vec3& t_hat, const Vec3& t_true);

constexpr double kPi = 3.14159265358979323846;
constexpr double deg2rad(double d) { return d * kPi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace dknav
