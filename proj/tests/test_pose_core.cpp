#include "dknav/pose_core.hpp"

#include <cmath>

#include "dknav/rng.hpp"
#include "doctest.h"

using namespace dknav;

namespace {

UnitQuaternion random_quat(Rng& rng) {
  UnitQuaternion q{rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian()};
  return q.normalized();
}

Vec3 random_vec(Rng& rng, double scale = 1.0) {
  return {rng.gaussian() * scale, rng.gaussian() * scale, rng.gaussian() * scale};
}

// Independent oracle for the geodesic attitude metric: build the error
// rotation explicitly from an axis-angle displacement and confirm the metric
// reports that angle.
UnitQuaternion perturb(const UnitQuaternion& q, const Vec3& axis, double angle_rad) {
  return UnitQuaternion::from_axis_angle(axis, angle_rad) * q;
}

}  // namespace

TEST_CASE("6D encoding of the identity maps back to the identity") {
  const Dcm m = rot6d_to_dcm(Rot6D{});
  CHECK(m.max_abs_diff(Mat3::identity()) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("6D back-mapping is invariant to column scaling") {
  Rot6D r;
  r.v = {2, 0, 0, 0, 3, 0};
  const Dcm m = rot6d_to_dcm(r);
  CHECK(m.max_abs_diff(Mat3::identity()) < 1e-12);
}

TEST_CASE("degenerate 6D encodings are rejected") {
  Rot6D zero_first;
  zero_first.v = {0, 0, 0, 0, 1, 0};
  CHECK_THROWS_AS(rot6d_to_dcm(zero_first), DegenerateRotation);

  Rot6D collinear;
  collinear.v = {1, 0, 0, 2, 0, 0};
  CHECK_THROWS_AS(rot6d_to_dcm(collinear), DegenerateRotation);

  Rot6D tiny;
  tiny.v = {1e-13, 0, 0, 0, 1e-13, 0};
  CHECK_THROWS_AS(rot6d_to_dcm(tiny), DegenerateRotation);
}

TEST_CASE("6D encoding of a 90-degree yaw") {
  const Dcm rz90 = quat_to_dcm(UnitQuaternion::from_axis_angle({0, 0, 1}, deg2rad(90)));
  const Rot6D r = dcm_to_rot6d(rz90);
  const std::array<double, 6> expect{0, 1, 0, -1, 0, 0};
  for (int i = 0; i < 6; ++i) CHECK(r.v[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("6D back-mapping always yields a proper rotation and round-trips") {
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    // Arbitrary (well-conditioned with probability 1) 6D vectors.
    Rot6D raw;
    for (auto& x : raw.v) x = rng.gaussian();
    const Dcm m = rot6d_to_dcm(raw);
    REQUIRE(is_rotation(m, 1e-9));

    // Round trip: encoding an actual rotation and mapping back is exact.
    const Dcm m2 = rot6d_to_dcm(dcm_to_rot6d(m));
    CHECK(m.max_abs_diff(m2) < 1e-12);

    // Scale invariance with random positive scales per column.
    Rot6D scaled = dcm_to_rot6d(m);
    const double s0 = rng.uniform(0.1, 10.0), s1 = rng.uniform(0.1, 10.0);
    for (int k = 0; k < 3; ++k) {
      scaled.v[k] *= s0;
      scaled.v[3 + k] *= s1;
    }
    CHECK(m.max_abs_diff(rot6d_to_dcm(scaled)) < 1e-9);
  }
}

TEST_CASE("Gram-Schmidt ignores the component of column two along column one") {
  Rng rng(102);
  for (int i = 0; i < 100; ++i) {
    const Dcm m = quat_to_dcm(random_quat(rng));
    Rot6D r = dcm_to_rot6d(m);
    const double alpha = rng.uniform(-5.0, 5.0);
    for (int k = 0; k < 3; ++k) r.v[3 + k] += alpha * r.v[k];
    CHECK(m.max_abs_diff(rot6d_to_dcm(r)) < 1e-9);
  }
}

TEST_CASE("quaternion/DCM conversions agree and round-trip") {
  Rng rng(103);
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q = random_quat(rng);
    const Dcm m = quat_to_dcm(q);
    REQUIRE(is_rotation(m, 1e-12));

    // Rotation action agrees between representations.
    const Vec3 v = random_vec(rng);
    const Vec3 via_q = q.rotate(v);
    const Vec3 via_m = m * v;
    CHECK((via_q - via_m).norm() < 1e-12);

    // Round trip up to the double-cover sign.
    const UnitQuaternion q2 = dcm_to_quat(m);
    const double sign = (q.x * q2.x + q.y * q2.y + q.z * q2.z + q.w * q2.w) < 0 ? -1.0 : 1.0;
    CHECK(std::abs(q.x - sign * q2.x) < 1e-12);
    CHECK(std::abs(q.y - sign * q2.y) < 1e-12);
    CHECK(std::abs(q.z - sign * q2.z) < 1e-12);
    CHECK(std::abs(q.w - sign * q2.w) < 1e-12);

    // Product homomorphism.
    const UnitQuaternion p = random_quat(rng);
    CHECK(quat_to_dcm(q * p).max_abs_diff(quat_to_dcm(q) * quat_to_dcm(p)) < 1e-12);
  }
}

TEST_CASE("dcm_to_quat is stable near 180-degree rotations") {
  Rng rng(104);
  for (int i = 0; i < 200; ++i) {
    const Vec3 axis = random_vec(rng).normalized();
    const double angle = kPi - rng.uniform(0.0, 1e-6);
    const UnitQuaternion q = UnitQuaternion::from_axis_angle(axis, angle);
    const UnitQuaternion q2 = dcm_to_quat(quat_to_dcm(q));
    CHECK(attitude_error_deg(q2, q) < 1e-6);
  }
}

TEST_CASE("attitude error: exact values and invariances") {
  const UnitQuaternion id = UnitQuaternion::identity();
  CHECK(attitude_error_deg(id, id) == doctest::Approx(0.0));

  // Double cover: q and -q are the same rotation.
  const UnitQuaternion q = UnitQuaternion::from_axis_angle({1, 2, 3}, 0.7);
  const UnitQuaternion qneg{-q.x, -q.y, -q.z, -q.w};
  CHECK(attitude_error_deg(q, qneg) == doctest::Approx(0.0).epsilon(1e-9));

  const UnitQuaternion yaw10 = UnitQuaternion::from_axis_angle({0, 0, 1}, deg2rad(10));
  CHECK(attitude_error_deg(yaw10, id) == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(attitude_error_deg(id, yaw10) == doctest::Approx(10.0).epsilon(1e-9));

  Rng rng(105);
  for (int i = 0; i < 500; ++i) {
    const UnitQuaternion base = random_quat(rng);
    const double angle = rng.uniform(0.0, kPi * 0.999);
    const Vec3 axis = random_vec(rng).normalized();
    const UnitQuaternion moved = perturb(base, axis, angle);
    CHECK(attitude_error_deg(moved, base) == doctest::Approx(rad2deg(angle)).epsilon(1e-7));
    // Symmetry and sign invariance.
    CHECK(attitude_error_deg(base, moved) ==
          doctest::Approx(attitude_error_deg(moved, base)).epsilon(1e-9));
    const UnitQuaternion flipped{-moved.x, -moved.y, -moved.z, -moved.w};
    CHECK(attitude_error_deg(flipped, base) ==
          doctest::Approx(attitude_error_deg(moved, base)).epsilon(1e-9));
  }
}

TEST_CASE("attitude error is clamped at the antipode, never NaN") {
  const UnitQuaternion q = UnitQuaternion::from_axis_angle({0, 1, 0}, kPi);
  const double e = attitude_error_deg(q, UnitQuaternion::identity());
  CHECK(std::isfinite(e));
  CHECK(e == doctest::Approx(180.0).epsilon(1e-9));
}

TEST_CASE("position and range-normalized errors") {
  CHECK(position_error({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(position_error({2.1, 0, 0}, {2, 0, 0}) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(range_normalized_error({2.1, 0, 0}, {2, 0, 0}) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_THROWS_AS(range_normalized_error({0.1, 0, 0}, {0, 0, 0}), ZeroRange);
}

TEST_CASE("pose composition, inverse and point action are consistent") {
  Rng rng(106);
  for (int i = 0; i < 500; ++i) {
    Pose a{random_quat(rng), random_vec(rng, 3.0)};
    Pose b{random_quat(rng), random_vec(rng, 3.0)};
    const Vec3 p = random_vec(rng, 5.0);

    const Vec3 composed = (a * b).apply(p);
    const Vec3 sequential = a.apply(b.apply(p));
    CHECK((composed - sequential).norm() < 1e-9);

    const Pose ident = a * a.inverse();
    CHECK(attitude_error_deg(ident.rotation, UnitQuaternion::identity()) < 1e-9);
    CHECK(ident.translation.norm() < 1e-9);

    const Vec3 back = a.inverse().apply(a.apply(p));
    CHECK((back - p).norm() < 1e-9);
  }
}

TEST_CASE("pose flat serialization is [tx ty tz qx qy qz qw] and round-trips") {
  Pose p{UnitQuaternion::from_axis_angle({0, 0, 1}, deg2rad(90)), {1, 2, 3}};
  const auto a = p.to_array();
  CHECK(a[0] == doctest::Approx(1.0));
  CHECK(a[1] == doctest::Approx(2.0));
  CHECK(a[2] == doctest::Approx(3.0));
  CHECK(a[3] == doctest::Approx(0.0));
  CHECK(a[4] == doctest::Approx(0.0));
  CHECK(a[5] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(a[6] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));

  const Pose q = Pose::from_array(a);
  CHECK(attitude_error_deg(q.rotation, p.rotation) < 1e-9);
  CHECK((q.translation - p.translation).norm() < 1e-12);
}
