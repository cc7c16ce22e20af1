#include "dknav/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "dknav/rng.hpp"

using namespace dknav;

namespace {

Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
}

CameraIntrinsics test_intrinsics() { return intrinsics_from_fov(744, 480, 65.6, 44.7); }

bool images_equal(const Image& a, const Image& b) {
  return a.width == b.width && a.height == b.height && a.rgb == b.rgb;
}

Image solid(int w, int h, std::uint8_t v) { return Image::filled(w, h, v, v, v); }

}  // namespace

TEST_CASE("intrinsics from field of view match the tangent formula") {
  const CameraIntrinsics in = test_intrinsics();
  CHECK(in.width == 744);
  CHECK(in.height == 480);
  CHECK(in.fx == doctest::Approx(577.2310084375284).epsilon(1e-12));
  CHECK(in.fy == doctest::Approx(583.7289818773806).epsilon(1e-12));
  CHECK(in.cx == doctest::Approx(372.0));
  CHECK(in.cy == doctest::Approx(240.0));

  // A symmetric 90-degree lens has focal length = half the sensor size.
  const CameraIntrinsics sq = intrinsics_from_fov(200, 200, 90.0, 90.0);
  CHECK(sq.fx == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(sq.fy == doctest::Approx(100.0).epsilon(1e-12));

  CHECK_THROWS_AS(intrinsics_from_fov(0, 480, 60, 40), BadFov);
  CHECK_THROWS_AS(intrinsics_from_fov(744, -1, 60, 40), BadFov);
  CHECK_THROWS_AS(intrinsics_from_fov(744, 480, 0.0, 40), BadFov);
  CHECK_THROWS_AS(intrinsics_from_fov(744, 480, 60, 180.0), BadFov);
  CHECK_THROWS_AS(intrinsics_from_fov(744, 480, -10.0, 40), BadFov);
}

TEST_CASE("projection places points by similar triangles") {
  CameraIntrinsics in;
  in.width = 744;
  in.height = 480;
  in.fx = 500;
  in.fy = 600;
  in.cx = 372;
  in.cy = 240;

  const Pose pose{UnitQuaternion::identity(), {0, 0, 2}};
  const auto px = project(in, pose, {0.1, -0.05, 0});
  REQUIRE(px.has_value());
  CHECK((*px)[0] == doctest::Approx(500.0 * 0.05 + 372.0).epsilon(1e-12));  // 397
  CHECK((*px)[1] == doctest::Approx(600.0 * -0.025 + 240.0).epsilon(1e-12));  // 225

  // The optical axis hits the principal point.
  const auto centre = project(in, pose, {0, 0, 0});
  REQUIRE(centre.has_value());
  CHECK((*centre)[0] == doctest::Approx(372.0));
  CHECK((*centre)[1] == doctest::Approx(240.0));

  // Points at or behind the camera plane do not project.
  CHECK(!project(in, pose, {0, 0, -2}).has_value());
  CHECK(!project(in, pose, {0, 0, -2.5}).has_value());

  // Doubling the distance halves the offset from the principal point.
  const Pose far_pose{UnitQuaternion::identity(), {0, 0, 4}};
  const auto near_px = project(in, pose, {0.2, 0.0, 0.0});
  const auto far_px = project(in, far_pose, {0.2, 0.0, 0.0});
  REQUIRE(near_px.has_value());
  REQUIRE(far_px.has_value());
  CHECK((*near_px)[0] - 372.0 == doctest::Approx(2.0 * ((*far_px)[0] - 372.0)).epsilon(1e-12));
}

TEST_CASE("gradient noise vanishes on the lattice and stays bounded") {
  for (const std::uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
    for (int ix = -3; ix <= 3; ++ix) {
      for (int iy = -3; iy <= 3; ++iy) {
        CHECK(perlin2d(ix, iy, seed) == doctest::Approx(0.0).epsilon(1e-12));
      }
    }
  }

  Rng rng(42);
  double max_abs = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.uniform(-20.0, 20.0);
    const double y = rng.uniform(-20.0, 20.0);
    const double v = perlin2d(x, y, 99);
    CHECK(std::abs(v) <= 1.0);
    max_abs = std::max(max_abs, std::abs(v));
    // Deterministic for identical arguments.
    CHECK(perlin2d(x, y, 99) == v);
  }
  // The field actually uses a good part of its range.
  CHECK(max_abs > 0.5);

  // Smoothness: a small step moves the value by at most a few times the step.
  Rng rng2(43);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng2.uniform(-5.0, 5.0), y = rng2.uniform(-5.0, 5.0);
    const double h = 1e-3;
    CHECK(std::abs(perlin2d(x + h, y, 5) - perlin2d(x, y, 5)) < 6.0 * h);
    CHECK(std::abs(perlin2d(x, y + h, 5) - perlin2d(x, y, 5)) < 6.0 * h);
  }

  // Different seeds give different fields.
  CHECK(perlin2d(0.4, 0.7, 1) != perlin2d(0.4, 0.7, 2));
}

TEST_CASE("berthing fixture geometry is well-formed") {
  const FixtureModel m = make_berthing_fixture();
  CHECK(m.vertices.size() > 50);
  CHECK(m.faces.size() > 80);

  for (const Face& f : m.faces) {
    for (int idx : f.v) {
      CHECK(idx >= 0);
      CHECK(idx < static_cast<int>(m.vertices.size()));
    }
    for (double a : f.albedo) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }

  // Everything fits in the advertised 0.30 m envelope, detail toward -z.
  for (const Vec3& v : m.vertices) {
    CHECK(std::abs(v.x) <= 0.15 + 1e-12);
    CHECK(std::abs(v.y) <= 0.15 + 1e-12);
    CHECK(v.z >= -0.06 - 1e-12);
    CHECK(v.z <= 0.035 + 1e-12);
  }

  // Faces lying in the front plane must present their outward normal toward
  // the camera side (-z): winding is (b - a) x (c - a) pointing inward.
  int front_faces = 0;
  for (const Face& f : m.faces) {
    const Vec3& a = m.vertices[static_cast<std::size_t>(f.v[0])];
    const Vec3& b = m.vertices[static_cast<std::size_t>(f.v[1])];
    const Vec3& c = m.vertices[static_cast<std::size_t>(f.v[2])];
    if (std::abs(a.z) < 1e-9 && std::abs(b.z) < 1e-9 && std::abs(c.z) < 1e-9) {
      const Vec3 n = (b - a).cross(c - a);
      CHECK(n.z > 0.0);  // outward normal -n points toward -z
      ++front_faces;
    }
  }
  CHECK(front_faces >= 32);

  // Required named keypoints.
  std::set<std::string> names;
  for (const auto& [name, p] : m.keypoints) names.insert(name);
  for (const char* want : {"centre", "petal_tip_0", "petal_tip_1", "petal_tip_2", "corner_pp",
                           "corner_nn", "rim_x", "stripe_end"}) {
    CHECK(names.count(want) == 1);
  }
  for (const auto& [name, p] : m.keypoints) {
    if (name.rfind("petal_tip_", 0) == 0) CHECK(p.z == doctest::Approx(-0.06));
  }
}

TEST_CASE("sun direction from elevation angle") {
  const Vec3 head_on = sun_from_elevation_deg(90.0);
  CHECK(head_on.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(head_on.y == 0.0);
  CHECK(head_on.z == doctest::Approx(-1.0));

  const Vec3 grazing = sun_from_elevation_deg(0.0);
  CHECK(grazing.x == doctest::Approx(1.0));
  CHECK(grazing.z == doctest::Approx(0.0));

  const Vec3 mid = sun_from_elevation_deg(45.0);
  CHECK(mid.x == doctest::Approx(std::sqrt(0.5)));
  CHECK(mid.z == doctest::Approx(-std::sqrt(0.5)));
  CHECK(mid.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rendering shades known fixture points by the Lambert rule") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();
  const Pose head_on{UnitQuaternion::identity(), {0, 0, 1}};

  RenderSettings settings;
  settings.sun_direction = sun_from_elevation_deg(90.0);

  const Image img = render(in, head_on, model, settings);
  REQUIRE(img.width == 744);
  REQUIRE(img.height == 480);

  // Bare plate point (0, 0.12, 0): full illumination, albedo (.55,.55,.57).
  const auto plate_px = project(in, head_on, {0.0, 0.12, 0.0});
  REQUIRE(plate_px.has_value());
  const int pu = static_cast<int>((*plate_px)[0]);
  const int pv = static_cast<int>((*plate_px)[1]);
  CHECK(static_cast<int>(img.at(pu, pv, 0)) == 140);
  CHECK(static_cast<int>(img.at(pu, pv, 1)) == 140);
  CHECK(static_cast<int>(img.at(pu, pv, 2)) == 145);

  // Cavity bottom at the image centre: darker albedo (.26,.26,.28).
  CHECK(static_cast<int>(img.at(372, 240, 0)) == 66);
  CHECK(static_cast<int>(img.at(372, 240, 2)) == 71);

  // Image corners show empty space.
  CHECK(static_cast<int>(img.at(0, 0, 0)) == 0);
  CHECK(static_cast<int>(img.at(743, 479, 1)) == 0);

  // Grazing sun leaves the front plane with ambient light only.
  RenderSettings grazing = settings;
  grazing.sun_direction = sun_from_elevation_deg(0.0);
  const Image dark = render(in, head_on, model, grazing);
  CHECK(static_cast<int>(dark.at(pu, pv, 0)) == 21);
  CHECK(static_cast<int>(dark.at(pu, pv, 2)) == 22);

  // All keypoints project inside the frame from this viewpoint.
  for (const auto& [name, p] : model.keypoints) {
    const auto px = project(in, head_on, p);
    REQUIRE(px.has_value());
    CHECK((*px)[0] > 0.0);
    CHECK((*px)[0] < 744.0);
    CHECK((*px)[1] > 0.0);
    CHECK((*px)[1] < 480.0);
  }

  // The roll stripe breaks symmetry: the image is not 180-degree symmetric.
  int diff = 0;
  for (int y = 0; y < img.height && diff == 0; ++y) {
    for (int x = 0; x < img.width && diff == 0; ++x) {
      for (int c = 0; c < 3; ++c) {
        if (img.at(x, y, c) != img.at(img.width - 1 - x, img.height - 1 - y, c)) {
          ++diff;
          break;
        }
      }
    }
  }
  CHECK(diff > 0);
}

TEST_CASE("rendering is deterministic and handles off-axis and invisible poses") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();

  RenderSettings settings;
  settings.background = Background::clutter;
  settings.seed = 77;
  settings.sun_direction = sun_from_elevation_deg(55.0);

  const Pose pose{UnitQuaternion::from_axis_angle({0, 1, 0}, deg2rad(8.0)), {0.5, 0.3, 2.0}};
  const Image a = render(in, pose, model, settings);
  const Image b = render(in, pose, model, settings);
  CHECK(images_equal(a, b));

  // The fixture centre lands where projection says and is lit.
  const auto centre = project(in, pose, {0, 0, 0});
  REQUIRE(centre.has_value());
  const int cu = static_cast<int>((*centre)[0]), cv = static_cast<int>((*centre)[1]);
  CHECK(static_cast<int>(a.at(cu, cv, 0)) > 5);

  // Different clutter seeds change the background.
  RenderSettings other = settings;
  other.seed = 78;
  CHECK(!images_equal(a, render(in, pose, model, other)));

  // Texture background differs from empty space and is reproducible.
  RenderSettings tex;
  tex.background = Background::texture;
  tex.seed = 3;
  const Image t1 = render(in, pose, model, tex);
  CHECK(images_equal(t1, render(in, pose, model, tex)));
  RenderSettings space;
  const Image s1 = render(in, pose, model, space);
  CHECK(!images_equal(t1, s1));

  // A fixture entirely behind the camera cannot be rendered.
  const Pose behind{UnitQuaternion::identity(), {0, 0, -1}};
  CHECK_THROWS_AS(render(in, behind, model, settings), FixtureNotVisible);

  // Very close poses still render: the near plane clips the plate.
  const Pose close_in{UnitQuaternion::identity(), {0, 0, 0.12}};
  const Image c = render(in, close_in, model, space);
  CHECK(static_cast<int>(c.at(372, 240, 0)) > 0);
}

TEST_CASE("photometric parameters draw each effect about half the time") {
  int n_bright = 0, n_contrast = 0, n_colour = 0, n_noise = 0, n_blur = 0;
  const int trials = 2000;
  PhotometricStrength strength;
  for (int i = 0; i < trials; ++i) {
    Rng rng(derive_seed(1000, static_cast<std::uint64_t>(i)));
    const PhotometricParams p = draw_photometric(rng, strength);
    n_bright += p.do_brightness;
    n_contrast += p.do_contrast;
    n_colour += p.do_colour;
    n_noise += p.do_noise;
    n_blur += p.do_blur;
    if (p.do_brightness) CHECK(std::abs(p.brightness) <= strength.brightness);
    if (p.do_contrast) CHECK(std::abs(p.contrast - 1.0) <= strength.contrast);
    if (p.do_colour) {
      for (double g : p.gain) CHECK(std::abs(g - 1.0) <= strength.colour);
    }
    if (p.do_noise) CHECK(p.noise_sigma == strength.noise_sigma);
    if (p.do_blur) CHECK(p.blur_radius == strength.blur_radius);
  }
  for (int n : {n_bright, n_contrast, n_colour, n_noise, n_blur}) {
    CHECK(n > static_cast<int>(0.4 * trials));
    CHECK(n < static_cast<int>(0.6 * trials));
  }
}

TEST_CASE("photometric pipeline applies exact arithmetic per stage") {
  Rng rng(1);

  // Brightness: pure addition with clamping.
  {
    Image im = solid(2, 2, 100);
    im.at(1, 1, 0) = 240;
    PhotometricParams p;
    p.do_brightness = true;
    p.brightness = 30.0;
    const Image out = apply_photometric(im, p, rng);
    CHECK(static_cast<int>(out.at(0, 0, 0)) == 130);
    CHECK(static_cast<int>(out.at(1, 1, 0)) == 255);  // clamped
  }

  // Contrast: affine stretch about mid-grey 127.5.
  {
    Image im = solid(1, 1, 100);
    PhotometricParams p;
    p.do_contrast = true;
    p.contrast = 0.5;
    const Image out = apply_photometric(im, p, rng);
    CHECK(static_cast<int>(out.at(0, 0, 0)) == 114);  // (100-127.5)*0.5+127.5 = 113.75
  }

  // Colour: per-channel gains.
  {
    Image im = solid(1, 1, 100);
    PhotometricParams p;
    p.do_colour = true;
    p.gain = {1.1, 1.0, 0.9};
    const Image out = apply_photometric(im, p, rng);
    CHECK(static_cast<int>(out.at(0, 0, 0)) == 110);
    CHECK(static_cast<int>(out.at(0, 0, 1)) == 100);
    CHECK(static_cast<int>(out.at(0, 0, 2)) == 90);
  }

  // Contrast runs before brightness (the order is observable).
  {
    Image im = solid(1, 1, 101);
    PhotometricParams p;
    p.do_contrast = true;
    p.contrast = 1.5;
    p.do_brightness = true;
    p.brightness = 10.0;
    const Image out = apply_photometric(im, p, rng);
    // (101-127.5)*1.5 + 127.5 + 10 = 97.75 -> 98; the reversed order gives 103.
    CHECK(static_cast<int>(out.at(0, 0, 0)) == 98);
  }

  // Box blur spreads an impulse evenly with edge replication.
  {
    Image im = solid(3, 3, 0);
    im.at(1, 1, 0) = 90;
    im.at(1, 1, 1) = 90;
    im.at(1, 1, 2) = 90;
    PhotometricParams p;
    p.do_blur = true;
    p.blur_radius = 1;
    const Image out = apply_photometric(im, p, rng);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) CHECK(static_cast<int>(out.at(x, y, 0)) == 10);
  }

  // Noise perturbs pixels using the supplied generator.
  {
    Image im = solid(16, 16, 128);
    PhotometricParams p;
    p.do_noise = true;
    p.noise_sigma = 8.0;
    Rng noise_rng(7);
    const Image out = apply_photometric(im, p, noise_rng);
    int changed = 0;
    double mean = 0.0;
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
      changed += out.rgb[i] != im.rgb[i];
      mean += out.rgb[i];
    }
    mean /= static_cast<double>(out.rgb.size());
    CHECK(changed > 500);
    CHECK(std::abs(mean - 128.0) < 2.0);
  }
}

TEST_CASE("zero-strength photometric augmentation is the identity") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();
  const Pose pose{UnitQuaternion::identity(), {0, 0, 1.5}};
  RenderSettings settings;
  settings.sun_direction = sun_from_elevation_deg(60.0);
  const Image img = render(in, pose, model, settings);

  const PhotometricStrength zero{0.0, 0.0, 0.0, 0.0, 0};
  CHECK(images_equal(augment_photometric(img, 5, zero), img));

  // Full-strength augmentation: deterministic per seed, varies across seeds.
  const PhotometricStrength strength;
  const Image a1 = augment_photometric(img, 11, strength);
  const Image a2 = augment_photometric(img, 11, strength);
  CHECK(images_equal(a1, a2));
  bool any_diff = false;
  for (std::uint64_t s = 12; s < 17 && !any_diff; ++s) {
    any_diff = !images_equal(a1, augment_photometric(img, s, strength));
  }
  CHECK(any_diff);
}

TEST_CASE("zero-limit pose warp is an exact identity") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();
  const Pose pose{UnitQuaternion::from_axis_angle({1, 0, 0}, deg2rad(4.0)), {0.1, -0.05, 1.8}};
  RenderSettings settings;
  settings.sun_direction = sun_from_elevation_deg(45.0);
  const Image img = render(in, pose, model, settings);

  const WarpLimits zero{0.0, 0.0, 0.0};
  const WarpResult w = augment_pose_warp(img, pose, in, 123, zero);
  CHECK(images_equal(w.image, img));
  CHECK(w.pose.rotation.x == pose.rotation.x);
  CHECK(w.pose.rotation.y == pose.rotation.y);
  CHECK(w.pose.rotation.z == pose.rotation.z);
  CHECK(w.pose.rotation.w == pose.rotation.w);
  CHECK(w.pose.translation.x == pose.translation.x);
  CHECK(w.pose.translation.y == pose.translation.y);
  CHECK(w.pose.translation.z == pose.translation.z);
  CHECK(w.homography.max_abs_diff(Mat3::identity()) < 1e-9);
}

TEST_CASE("pure in-plane rotation homography matches the conjugation formula") {
  const CameraIntrinsics in = test_intrinsics();
  const Pose pose{UnitQuaternion::identity(), {0, 0, 2}};
  const double theta = deg2rad(7.0);
  const Mat3 h = warp_homography(in, pose, rot_z(theta), {0, 0, 0});

  const Mat3 k{{in.fx, 0, in.cx, 0, in.fy, in.cy, 0, 0, 1}};
  const Mat3 k_inv{{1 / in.fx, 0, -in.cx / in.fx, 0, 1 / in.fy, -in.cy / in.fy, 0, 0, 1}};
  const Mat3 expected = k * rot_z(theta) * k_inv;
  CHECK(h.max_abs_diff(expected) < 1e-9);

  // The principal point is a fixed point of a boresight roll.
  const Vec3 mapped = h * Vec3{in.cx, in.cy, 1.0};
  CHECK(mapped.x / mapped.z == doctest::Approx(in.cx).epsilon(1e-12));
  CHECK(mapped.y / mapped.z == doctest::Approx(in.cy).epsilon(1e-12));

  // A plane through the camera is rejected.
  const Pose edge_on{UnitQuaternion::from_axis_angle({1, 0, 0}, deg2rad(90.0)), {0, 0, 2}};
  CHECK_THROWS_AS(warp_homography(in, edge_on, rot_z(0.1), {0, 0, 0}), PlaneBehindCamera);
  const Pose too_close{UnitQuaternion::identity(), {0, 0, 0.04}};
  CHECK_THROWS_AS(warp_homography(in, too_close, rot_z(0.1), {0, 0, 0}), PlaneBehindCamera);
}

TEST_CASE("warped pose labels track the virtual camera motion") {
  const CameraIntrinsics in = test_intrinsics();
  const Image img = solid(8, 6, 50);
  Rng rng(321);
  for (int trial = 0; trial < 200; ++trial) {
    const double range = rng.uniform(1.0, 6.0);
    const Vec3 axis =
        Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()}.normalized();
    const Pose pose{UnitQuaternion::from_axis_angle(axis, deg2rad(rng.uniform(0.0, 10.0))),
                    {rng.uniform(-0.1, 0.1) * range, rng.uniform(-0.1, 0.1) * range, range}};
    const WarpResult w =
        augment_pose_warp(img, pose, in, static_cast<std::uint64_t>(trial), WarpLimits{});

    // Rotation part: R_new = R_delta * R_old for some small R_delta.
    const Mat3 r_old = quat_to_dcm(pose.rotation);
    const Mat3 r_new = quat_to_dcm(w.pose.rotation);
    const Mat3 r_delta = r_new * r_old.transposed();
    // R_delta is a proper rotation within limits (5 deg roll + 3+3 deg tilt).
    const double trace = r_delta(0, 0) + r_delta(1, 1) + r_delta(2, 2);
    const double angle = rad2deg(std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0)));
    CHECK(angle <= 7.5);

    // Translation: t_new = R_delta t_old + t_delta with t_delta.z == 0.
    const Vec3 t_delta = w.pose.translation - r_delta * pose.translation;
    CHECK(std::abs(t_delta.z) < 1e-9);
    // Shift stays within the 5 px budget at the plane depth.
    CHECK(std::abs(t_delta.x) <= 5.0 * range / in.fx + 1e-9);
    CHECK(std::abs(t_delta.y) <= 5.0 * range / in.fy + 1e-9);
  }
}

TEST_CASE("homography and pose label agree at the fixture keypoints") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();
  const Image img = solid(8, 6, 50);

  Rng rng(777);
  double worst_plane = 0.0, worst_any = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double range = rng.uniform(1.0, 6.0);
    const Vec3 axis =
        Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()}.normalized();
    const Pose pose{UnitQuaternion::from_axis_angle(axis, deg2rad(rng.uniform(0.0, 10.0))),
                    {rng.uniform(-0.08, 0.08) * range, rng.uniform(-0.08, 0.08) * range, range}};

    const WarpResult w =
        augment_pose_warp(img, pose, in, static_cast<std::uint64_t>(trial), WarpLimits{});

    for (const auto& [name, point] : model.keypoints) {
      const auto before = project(in, pose, point);
      const auto after = project(in, w.pose, point);
      if (!before || !after) continue;
      const Vec3 mapped = w.homography * Vec3{(*before)[0], (*before)[1], 1.0};
      const double mu = mapped.x / mapped.z, mv = mapped.y / mapped.z;
      const double err = std::hypot(mu - (*after)[0], mv - (*after)[1]);
      const bool on_plane = std::abs(point.z) < 1e-12;
      if (on_plane) {
        worst_plane = std::max(worst_plane, err);
      }
      worst_any = std::max(worst_any, err);
      ++checked;
    }
  }
  CHECK(checked > 10000);
  // Points on the fixture face plane follow the homography exactly; raised
  // detail (petal tips 6 cm proud) picks up bounded parallax.
  CHECK(worst_plane < 0.05);
  CHECK(worst_any < 0.5);
}

TEST_CASE("warped imagery is deterministic and visually plausible") {
  const CameraIntrinsics in = test_intrinsics();
  const FixtureModel model = make_berthing_fixture();
  const Pose pose{UnitQuaternion::identity(), {0, 0, 1.5}};
  RenderSettings settings;
  settings.sun_direction = sun_from_elevation_deg(70.0);
  const Image img = render(in, pose, model, settings);

  const WarpResult w1 = augment_pose_warp(img, pose, in, 9001, WarpLimits{});
  const WarpResult w2 = augment_pose_warp(img, pose, in, 9001, WarpLimits{});
  CHECK(images_equal(w1.image, w2.image));
  CHECK(w1.pose.rotation.x == w2.pose.rotation.x);
  CHECK(w1.pose.translation.z == w2.pose.translation.z);

  // Different seeds produce different warps.
  const WarpResult w3 = augment_pose_warp(img, pose, in, 9002, WarpLimits{});
  CHECK(!images_equal(w1.image, w3.image));

  // The warped image still contains the fixture: its centre region is lit.
  const auto centre = project(in, w1.pose, {0, 0, 0});
  REQUIRE(centre.has_value());
  const int cu = static_cast<int>((*centre)[0]), cv = static_cast<int>((*centre)[1]);
  CHECK(static_cast<int>(w1.image.at(cu, cv, 0)) > 5);
}

TEST_CASE("box downscale averages blocks exactly") {
  Image im;
  im.width = 4;
  im.height = 2;
  im.rgb.resize(24);
  for (int i = 0; i < 24; ++i) im.rgb[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);

  const Image out = downscale_box(im, 2);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 1);
  // Block (0,0): pixels (0,0),(1,0),(0,1),(1,1) channel 0 -> values 0,3,12,15.
  CHECK(static_cast<int>(out.at(0, 0, 0)) == 8);   // (0+3+12+15)/4 = 7.5 -> 8
  CHECK(static_cast<int>(out.at(0, 0, 1)) == 9);   // (1+4+13+16)/4 = 8.5 -> 9
  CHECK(static_cast<int>(out.at(1, 0, 0)) == 14);  // (6+9+18+21)/4 = 13.5 -> 14

  CHECK_THROWS_AS(downscale_box(im, 3), Error);
  const Image pass = downscale_box(im, 1);
  CHECK(images_equal(pass, im));
}

TEST_CASE("PPM files round-trip and malformed files are rejected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dknav_imaging_test";
  fs::create_directories(dir);

  Image im;
  im.width = 31;
  im.height = 17;
  im.rgb.resize(static_cast<std::size_t>(31) * 17 * 3);
  Rng rng(5);
  for (auto& b : im.rgb) b = static_cast<std::uint8_t>(rng.below(256));

  const std::string path = (dir / "round_trip.ppm").string();
  write_ppm(path, im);
  const Image back = read_ppm(path);
  CHECK(images_equal(back, im));
  const auto [w, h] = read_ppm_size(path);
  CHECK(w == 31);
  CHECK(h == 17);

  // Comments in the header are legal PPM.
  {
    const std::string p = (dir / "comment.ppm").string();
    std::ofstream f(p, std::ios::binary);
    f << "P6\n# a comment\n2 1\n255\n";
    f.write("\x01\x02\x03\x04\x05\x06", 6);
    f.close();
    const Image c = read_ppm(p);
    CHECK(c.width == 2);
    CHECK(c.height == 1);
    CHECK(static_cast<int>(c.at(1, 0, 2)) == 6);
  }

  const auto write_raw = [&](const char* name, const std::string& content) {
    const std::string p = (dir / name).string();
    std::ofstream f(p, std::ios::binary);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    return p;
  };
  CHECK_THROWS_AS(read_ppm(write_raw("wrong_magic.ppm", "P5\n2 1\n255\n......")), MalformedFile);
  CHECK_THROWS_AS(read_ppm(write_raw("truncated.ppm", "P6\n2 2\n255\n....")), MalformedFile);
  CHECK_THROWS_AS(read_ppm(write_raw("depth.ppm", "P6\n2 1\n65535\n......")), MalformedFile);
  CHECK_THROWS_AS(read_ppm(write_raw("garbage.ppm", "hello world")), MalformedFile);
  CHECK_THROWS_AS(read_ppm_size(write_raw("empty.ppm", "")), MalformedFile);
  CHECK_THROWS_AS(read_ppm((dir / "missing.ppm").string()), IoFailure);

  fs::remove_all(dir);
}
