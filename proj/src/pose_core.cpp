#include "dknav/pose_core.hpp"

#include <algorithm>
#include <cmath>

namespace dknav {

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle_rad) {
  const Vec3 a = axis.normalized();
  const double half = 0.5 * angle_rad;
  const double s = std::sin(half);
  return {a.x * s, a.y * s, a.z * s, std::cos(half)};
}

double UnitQuaternion::norm() const {
  return std::sqrt(x * x + y * y + z * z + w * w);
}

UnitQuaternion UnitQuaternion::normalized() const {
  const double n = norm();
  return {x / n, y / n, z / n, w / n};
}

UnitQuaternion UnitQuaternion::operator*(const UnitQuaternion& o) const {
  return {w * o.x + x * o.w + y * o.z - z * o.y,
          w * o.y - x * o.z + y * o.w + z * o.x,
          w * o.z + x * o.y - y * o.x + z * o.w,
          w * o.w - x * o.x - y * o.y - z * o.z};
}

Vec3 UnitQuaternion::rotate(const Vec3& v) const {
  // v' = v + 2*w*(q_v x v) + 2*(q_v x (q_v x v))
  const Vec3 qv{x, y, z};
  const Vec3 t = qv.cross(v) * 2.0;
  return v + t * w + qv.cross(t);
}

Dcm rot6d_to_dcm(const Rot6D& r) {
  const Vec3 a{r.v[0], r.v[1], r.v[2]};
  const Vec3 b{r.v[3], r.v[4], r.v[5]};
  constexpr double kTol = 1e-12;

  const double na = a.norm();
  if (na < kTol) {
    throw DegenerateRotation("6D rotation: first column has near-zero norm");
  }
  const Vec3 c0 = a / na;

  const Vec3 b_perp = b - c0 * c0.dot(b);
  const double nb = b_perp.norm();
  if (nb < kTol) {
    throw DegenerateRotation("6D rotation: columns are near-collinear");
  }
  const Vec3 c1 = b_perp / nb;
  const Vec3 c2 = c0.cross(c1);
  return Mat3::from_cols(c0, c1, c2);
}

Rot6D dcm_to_rot6d(const Dcm& m) {
  Rot6D r;
  r.v = {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
  return r;
}

Dcm quat_to_dcm(const UnitQuaternion& q) {
  const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  return Mat3{{1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
               2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
               2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)}};
}

UnitQuaternion dcm_to_quat(const Dcm& m) {
  // Shepperd: pick the largest of {trace, m00, m11, m22} to avoid
  // cancellation near 180-degree rotations.
  const double tr = m(0, 0) + m(1, 1) + m(2, 2);
  UnitQuaternion q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q.x = 0.25 * s;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q.y = 0.25 * s;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q.z = 0.25 * s;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
  }
  return q.normalized();
}

bool is_rotation(const Mat3& m, double tol) {
  const Mat3 should_be_identity = m * m.transposed();
  if (should_be_identity.max_abs_diff(Mat3::identity()) > tol) return false;
  return std::abs(m.det() - 1.0) <= tol;
}

Pose Pose::inverse() const {
  const UnitQuaternion qi = rotation.conjugate();
  return {qi, -qi.rotate(translation)};
}

Pose Pose::operator*(const Pose& o) const {
  return {(rotation * o.rotation).normalized(), rotation.rotate(o.translation) + translation};
}

std::array<double, 7> Pose::to_array() const {
  return {translation.x, translation.y, translation.z,
          rotation.x, rotation.y, rotation.z, rotation.w};
}

Pose Pose::from_array(const std::array<double, 7>& a) {
  Pose p;
  p.translation = {a[0], a[1], a[2]};
  p.rotation = {a[3], a[4], a[5], a[6]};
  // Keep already-unit quaternions bit-exact; fix up genuinely drifted ones.
  if (std::abs(p.rotation.norm() - 1.0) > 1e-9) {
    p.rotation = p.rotation.normalized();
  }
  return p;
}

double position_error(const Vec3& t_hat, const Vec3& t_true) {
  return (t_hat - t_true).norm();
}

double attitude_error_deg(const UnitQuaternion& q_hat, const UnitQuaternion& q_true) {
  const UnitQuaternion d = q_hat.conjugate() * q_true;
  const double c = std::clamp(std::abs(d.w) / d.norm(), 0.0, 1.0);
  return rad2deg(2.0 * std::acos(c));
}

double range_normalized_error(const Vec3& t_hat, const Vec3& t_true) {
  const double range = t_true.norm();
  if (range < 1e-12) {
    throw ZeroRange("range-normalized error undefined at zero true range");
  }
  return position_error(t_hat, t_true) / range;
}

}  // namespace dknav
