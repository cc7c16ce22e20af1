#include "dknav/trajgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dknav/rng.hpp"
#include "doctest.h"

using namespace dknav;

namespace {

// Small-angle attitude components in degrees (rotation-vector approximation,
// exact enough below a degree).
std::array<double, 3> attitude_components_deg(const UnitQuaternion& q) {
  const double s = q.w < 0 ? -1.0 : 1.0;
  return {rad2deg(2.0 * s * q.x), rad2deg(2.0 * s * q.y), rad2deg(2.0 * s * q.z)};
}

double cross_track(const RelativeSample& s) {
  return std::hypot(s.pose.translation.x, s.pose.translation.y);
}

double range_of(const RelativeSample& s) { return s.pose.translation.z; }

}  // namespace

TEST_CASE("quiet phase 2 closes from start to handover at the forced speed") {
  TrajectoryConfig cfg;
  cfg.seed = 42;
  cfg.perturb_prob = 0.0;
  const auto samples = generate(cfg);
  const auto bounds = phase_boundaries(samples);

  // (10 - 3) m at 0.03 m/s is 233.3 s of forced translation.
  const double dur2 =
      static_cast<double>(bounds[1].second - bounds[1].first) / cfg.rate_hz;
  CHECK(dur2 == doctest::Approx(233.3).epsilon(0.002));

  // No perturbations: the approach stays on the axis, perfectly aligned.
  for (std::size_t i = bounds[1].first; i < bounds[1].second; ++i) {
    CHECK(cross_track(samples[i]) < 1e-12);
    CHECK(attitude_error_deg(samples[i].pose.rotation, UnitQuaternion::identity()) < 1e-12);
  }
  // Closing speed between consecutive phase-2 samples is the forced speed.
  const double dr = range_of(samples[bounds[1].first + 1]) - range_of(samples[bounds[1].first]);
  CHECK(dr == doctest::Approx(-0.003).epsilon(1e-9));
}

TEST_CASE("phase structure: contiguous, ordered, correct geometry at the seams") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
    TrajectoryConfig cfg;
    cfg.seed = seed;
    const auto samples = generate(cfg);
    const auto b = phase_boundaries(samples);

    REQUIRE(b[0].first == 0);
    REQUIRE(b[0].second == b[1].first);
    REQUIRE(b[1].second == b[2].first);
    REQUIRE(b[2].second == samples.size());

    // Phase 1 holds the start range and begins on the waypoint annulus.
    CHECK(cross_track(samples[0]) >= cfg.waypoint_radius_m[0] - 1e-9);
    CHECK(cross_track(samples[0]) <= cfg.waypoint_radius_m[1] + 1e-9);
    for (std::size_t i = b[0].first; i < b[0].second; ++i) {
      CHECK(range_of(samples[i]) == doctest::Approx(cfg.start_range_m));
      CHECK(cross_track(samples[i]) <= cfg.waypoint_radius_m[1] + 1e-9);
      CHECK(attitude_error_deg(samples[i].pose.rotation, UnitQuaternion::identity()) < 1e-12);
    }
    // Phase 1 ends back on the docking axis.
    CHECK(cross_track(samples[b[0].second - 1]) < 1e-12);

    // Alignment: the first align_time seconds of phase 3 hold the range.
    const auto n_align = static_cast<std::size_t>(std::llround(cfg.align_time_s * cfg.rate_hz));
    REQUIRE(b[2].second - b[2].first > n_align);
    const double hold = range_of(samples[b[2].first - 1]);
    for (std::size_t i = b[2].first; i < b[2].first + n_align; ++i) {
      CHECK(range_of(samples[i]) == doctest::Approx(hold));
    }
    // After alignment the state is exactly on-axis and aligned, and stays so.
    for (std::size_t i = b[2].first + n_align; i < b[2].second; ++i) {
      CHECK(cross_track(samples[i]) < 1e-12);
      CHECK(attitude_error_deg(samples[i].pose.rotation, UnitQuaternion::identity()) < 1e-12);
    }

    // Range is non-increasing over the whole sequence and ends within one
    // step of the dock range.
    for (std::size_t i = 1; i < samples.size(); ++i) {
      CHECK(range_of(samples[i]) <= range_of(samples[i - 1]) + 1e-12);
    }
    const double final_range = range_of(samples.back());
    CHECK(final_range <= cfg.dock_range_m + 1e-9);
    CHECK(final_range > cfg.dock_range_m - cfg.forced_speed_ms / cfg.rate_hz - 1e-9);

    // Timestamps tick at the sample rate from zero.
    CHECK(samples[0].t_s == doctest::Approx(0.0));
    for (std::size_t i = 1; i < samples.size(); ++i) {
      CHECK(samples[i].t_s - samples[i - 1].t_s == doctest::Approx(0.1).epsilon(1e-9));
    }
  }
}

TEST_CASE("sequence duration stays inside the 3.5 to 6.5 minute band") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TrajectoryConfig cfg;
    cfg.seed = seed;
    const auto samples = generate(cfg);
    const double minutes = samples.back().t_s / 60.0;
    CHECK(minutes >= 3.5);
    CHECK(minutes <= 6.5);
    // Acquisition alone stays under 45 seconds.
    const auto b = phase_boundaries(samples);
    CHECK(static_cast<double>(b[0].second) / cfg.rate_hz <= 45.0);
  }
}

TEST_CASE("perturbed approach: bounded states, bounded steps, correct event rate") {
  GenerationStats total;
  double worst_step = 0.0, worst_att_step = 0.0, worst_cross = 0.0, worst_att = 0.0;

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TrajectoryConfig cfg;
    cfg.seed = seed;
    GenerationStats stats;
    const auto samples = generate(cfg, &stats);
    total.phase2_steps += stats.phase2_steps;
    total.perturb_events += stats.perturb_events;

    const auto b = phase_boundaries(samples);
    for (std::size_t i = b[1].first; i < b[1].second; ++i) {
      worst_cross = std::max({worst_cross, std::abs(samples[i].pose.translation.x),
                              std::abs(samples[i].pose.translation.y)});
      const auto att = attitude_components_deg(samples[i].pose.rotation);
      for (double a : att) worst_att = std::max(worst_att, std::abs(a));
    }
    for (std::size_t i = 1; i < samples.size(); ++i) {
      worst_step = std::max(worst_step,
                            (samples[i].pose.translation - samples[i - 1].pose.translation).norm());
      worst_att_step = std::max(worst_att_step, attitude_error_deg(samples[i].pose.rotation,
                                                                   samples[i - 1].pose.rotation));
    }
  }

  REQUIRE(total.phase2_steps > 100000);
  const double freq = static_cast<double>(total.perturb_events) /
                      static_cast<double>(total.phase2_steps);
  CHECK(freq > 0.09);
  CHECK(freq < 0.11);

  // PI-tracked states stay within 1.5x the setpoint half-widths.
  CHECK(worst_cross <= 1.5 * 0.01);
  CHECK(worst_att <= 1.5 * 0.1);

  // No sample-to-sample translation jump beyond the fastest commanded motion
  // (phase-1 speed of 0.12 m/s at 10 Hz).
  CHECK(worst_step <= 0.012 + 1e-9);
  CHECK(worst_att_step <= 0.25);
}

TEST_CASE("static misalignment mode holds one offset, then phase 3 corrects it") {
  TrajectoryConfig cfg;
  cfg.seed = 7;
  cfg.mode = TrajectoryConfig::Mode::static_misalignment;
  const auto samples = generate(cfg);
  const auto b = phase_boundaries(samples);

  // By mid-phase the PI ramp-in has settled: the offset is constant.
  const std::size_t mid = (b[1].first + b[1].second) / 2;
  const Vec3 offset{samples[mid].pose.translation.x, samples[mid].pose.translation.y, 0};
  const UnitQuaternion att = samples[mid].pose.rotation;
  CHECK(offset.norm() <= std::sqrt(2.0) * cfg.static_offset_pos_m * 1.5);
  for (std::size_t i = mid; i < b[1].second; ++i) {
    CHECK(std::abs(samples[i].pose.translation.x - offset.x) < 1e-9);
    CHECK(std::abs(samples[i].pose.translation.y - offset.y) < 1e-9);
    CHECK(attitude_error_deg(samples[i].pose.rotation, att) < 1e-9);
  }
  // The offset is actually applied (not the trivial zero).
  CHECK(offset.norm() > 1e-4);
  // And the final state is aligned and on-axis.
  CHECK(cross_track(samples.back()) < 1e-12);
  CHECK(attitude_error_deg(samples.back().pose.rotation, UnitQuaternion::identity()) < 1e-12);
}

TEST_CASE("same seed, same trajectory; different seed, different trajectory") {
  TrajectoryConfig cfg;
  cfg.seed = 1234;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].t_s == b[i].t_s);
    CHECK(a[i].phase == b[i].phase);
    CHECK(a[i].pose.to_array() == b[i].pose.to_array());
  }
  cfg.seed = 1235;
  const auto c = generate(cfg);
  CHECK((c.size() != a.size() || c[0].pose.translation.x != a[0].pose.translation.x));
}

TEST_CASE("configuration validation") {
  const auto expect_invalid = [](auto mutate) {
    TrajectoryConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(generate(cfg), ConfigInvalid);
  };
  expect_invalid([](TrajectoryConfig& c) { c.rate_hz = 0; });
  expect_invalid([](TrajectoryConfig& c) { c.dock_range_m = -0.1; });
  expect_invalid([](TrajectoryConfig& c) { c.handover_range_m = c.start_range_m + 1; });
  expect_invalid([](TrajectoryConfig& c) { c.dock_range_m = c.handover_range_m + 1; });
  expect_invalid([](TrajectoryConfig& c) { c.waypoint_radius_m = {2.0, 1.0}; });
  expect_invalid([](TrajectoryConfig& c) { c.acquisition_speed_ms = {0.0, 0.1}; });
  expect_invalid([](TrajectoryConfig& c) { c.forced_speed_ms = 0.0; });
  expect_invalid([](TrajectoryConfig& c) { c.perturb_prob = 1.5; });
  expect_invalid([](TrajectoryConfig& c) { c.align_time_s = -1.0; });
  expect_invalid([](TrajectoryConfig& c) { c.gains.kp = 0.0; });
}

TEST_CASE("phase boundary scanning rejects out-of-order labels") {
  std::vector<RelativeSample> bad(3);
  bad[0].phase = 2;
  bad[1].phase = 1;
  bad[2].phase = 3;
  CHECK_THROWS_AS(phase_boundaries(bad), NonMonotonicPhases);

  std::vector<RelativeSample> weird(1);
  weird[0].phase = 7;
  CHECK_THROWS_AS(phase_boundaries(weird), NonMonotonicPhases);

  // A series that skips phase 1 entirely still yields consistent ranges.
  std::vector<RelativeSample> skip(4);
  skip[0].phase = 2;
  skip[1].phase = 2;
  skip[2].phase = 3;
  skip[3].phase = 3;
  const auto b = phase_boundaries(skip);
  CHECK(b[0].first == b[0].second);
  CHECK(b[1] == std::make_pair<std::size_t, std::size_t>(0, 2));
  CHECK(b[2] == std::make_pair<std::size_t, std::size_t>(2, 4));
}

TEST_CASE("trajectory JSONL round trip is exact; malformed input is rejected") {
  TrajectoryConfig cfg;
  cfg.seed = 5;
  const auto samples = generate(cfg);
  const std::string path = "traj_io_test.jsonl";
  write_trajectory_jsonl(path, samples);

  const auto back = read_trajectory_jsonl(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); i += 7) {
    CHECK(back[i].t_s == samples[i].t_s);
    CHECK(back[i].phase == samples[i].phase);
    CHECK(back[i].pose.to_array() == samples[i].pose.to_array());
  }

  // Writing twice produces byte-identical files.
  const std::string path2 = "traj_io_test_2.jsonl";
  write_trajectory_jsonl(path2, samples);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  CHECK(!c1.empty());

  {
    std::ofstream bad("traj_bad_test.jsonl");
    bad << "{\"t\": 0.0, \"phase\": 1}\n";
  }
  CHECK_THROWS_AS(read_trajectory_jsonl("traj_bad_test.jsonl"), MalformedFile);
  {
    std::ofstream bad("traj_bad_test.jsonl");
    bad << "not json at all\n";
  }
  CHECK_THROWS_AS(read_trajectory_jsonl("traj_bad_test.jsonl"), MalformedFile);
  {
    // Timestamps must strictly increase.
    std::ofstream bad("traj_bad_test.jsonl");
    bad << "{\"t\": 0.0, \"phase\": 1, \"pose\": [0,0,10,0,0,0,1]}\n";
    bad << "{\"t\": 0.0, \"phase\": 1, \"pose\": [0,0,10,0,0,0,1]}\n";
  }
  CHECK_THROWS_AS(read_trajectory_jsonl("traj_bad_test.jsonl"), MalformedFile);

  std::remove(path.c_str());
  std::remove(path2.c_str());
  std::remove("traj_bad_test.jsonl");
}
