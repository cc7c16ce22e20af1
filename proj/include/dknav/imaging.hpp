#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dknav/errors.hpp"
#include "dknav/pose_core.hpp"
#include "dknav/rng.hpp"

// Proxy camera imagery of a procedural berthing fixture.
//
// Camera model: pinhole, +x right, +y down, +z through the image into the
// scene; pixel (0,0) is the top-left corner and projections land in
// continuous pixel coordinates where integer+0.5 is a pixel centre.
//
// Target frame: the fixture's berthing face lies in the z=0 plane with its
// camera-facing detail extending toward -z, so a pose with identity rotation
// and translation (0, 0, range) is a head-on view from `range` metres.

namespace dknav {

class BadFov : public Error {
 public:
  using Error::Error;
};

class FixtureNotVisible : public Error {
 public:
  using Error::Error;
};

class PlaneBehindCamera : public Error {
 public:
  using Error::Error;
};

struct CameraIntrinsics {
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
};

// Builds intrinsics from total field-of-view angles; throws BadFov unless
// both angles are inside (0, 180) degrees and the dimensions are positive.
CameraIntrinsics intrinsics_from_fov(int width, int height, double hfov_deg, double vfov_deg);

// Projects a target-frame point through a target->camera pose.  Returns
// nullopt when the point is at or behind the camera plane; projections
// outside the image bounds are returned as-is.
std::optional<std::array<double, 2>> project(const CameraIntrinsics& intr, const Pose& pose,
                                             const Vec3& point_target);

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  static Image filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  std::uint8_t& at(int x, int y, int c) {
    return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                    static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)];
  }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                    static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)];
  }
};

struct Face {
  std::array<int, 3> v;             // vertex indices, CCW seen from outside
  std::array<double, 3> albedo;     // linear RGB reflectance in [0, 1]
};

struct FixtureModel {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  // Named reference points: fixture centre, petal tips, plate corners, rim.
  std::vector<std::pair<std::string, Vec3>> keypoints;
};

// 0.30 m square berthing fixture: base plate, central conical cavity, three
// guide petals, corner markers and one roll-index stripe (so no discrete
// rotation maps the fixture onto itself).
FixtureModel make_berthing_fixture();

enum class Background { space, clutter, texture };

struct RenderSettings {
  Background background = Background::space;
  // Unit vector toward the Sun, expressed in the target frame.
  Vec3 sun_direction{0.0, 0.0, -1.0};
  double ambient = 0.15;
  std::uint64_t seed = 0;  // drives procedural backgrounds only
};

// Sun direction for an elevation angle measured from the fixture face plane;
// 90 degrees is head-on illumination, >90 tilts past the zenith.
Vec3 sun_from_elevation_deg(double elevation_deg);

// Painter's-algorithm rasterization with near-plane clipping and Lambertian
// shading.  Throws FixtureNotVisible when every vertex is behind the camera.
Image render(const CameraIntrinsics& intr, const Pose& pose, const FixtureModel& model,
             const RenderSettings& settings);

// Classic gradient lattice noise: zero at integer lattice points, values in
// [-1, 1], C1-smooth.  Same (x, y, seed) always gives the same value.
double perlin2d(double x, double y, std::uint64_t seed);

// --- photometric augmentation ---

struct PhotometricStrength {
  double brightness = 32.0;    // additive half-width, 8-bit counts
  double contrast = 0.4;       // multiplicative half-width around mid-grey
  double colour = 0.15;        // per-channel gain half-width
  double noise_sigma = 8.0;    // Gaussian pixel noise, 8-bit counts
  int blur_radius = 1;         // box blur radius when the blur fires
};

struct PhotometricParams {
  bool do_brightness = false, do_contrast = false, do_colour = false, do_noise = false,
       do_blur = false;
  double brightness = 0.0;
  double contrast = 1.0;
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  double noise_sigma = 0.0;
  int blur_radius = 0;
};

// Each sub-augmentation fires independently with probability one half.
PhotometricParams draw_photometric(Rng& rng, const PhotometricStrength& strength);

// Applies colour gains, contrast, brightness, Gaussian noise and box blur in
// that order; noise consumes draws from `rng`.
Image apply_photometric(const Image& img, const PhotometricParams& params, Rng& rng);

// draw + apply with a dedicated generator seeded from `seed`.
Image augment_photometric(const Image& img, std::uint64_t seed,
                          const PhotometricStrength& strength);

// --- pose-consistent warp augmentation ---

struct WarpLimits {
  double shift_px = 5.0;      // in-plane pixel shift half-width
  double inplane_deg = 5.0;   // roll about the boresight
  double offplane_deg = 3.0;  // pitch/yaw half-width
};

struct WarpResult {
  Image image;
  Pose pose;  // label consistent with the warped image
  Mat3 homography;
};

// Applies a virtual camera rotation plus a parallel-to-plane shift as a
// plane-induced homography of the fixture's z=0 plane, and updates the pose
// label to match.  Throws PlaneBehindCamera when the fixture plane passes
// through or behind the camera.
WarpResult augment_pose_warp(const Image& img, const Pose& pose, const CameraIntrinsics& intr,
                             std::uint64_t seed, const WarpLimits& limits);

// The homography used above, exposed for consistency checks:
// K (R_delta + t_delta n^T / d) K^-1 mapping old pixels to new pixels.
Mat3 warp_homography(const CameraIntrinsics& intr, const Pose& pose, const Mat3& r_delta,
                     const Vec3& t_delta);

// Box-average downscale by an integer factor that must divide both
// dimensions exactly.
Image downscale_box(const Image& img, int factor);

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
// Reads only the header and returns {width, height}.
std::pair<int, int> read_ppm_size(const std::string& path);

}  // namespace dknav
