#include "dknav/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "internal/file_io.hpp"

namespace dknav {

namespace {

constexpr double kZNear = 0.01;  // metres

Mat3 rot_axis(int axis, double t) {
  const double c = std::cos(t), s = std::sin(t);
  switch (axis) {
    case 0: return Mat3{{1, 0, 0, 0, c, -s, 0, s, c}};
    case 1: return Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}};
    default: return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::llround(std::clamp(v, 0.0, 255.0)));
}

// Fills a convex polygon given in continuous pixel coordinates.  A pixel is
// covered when its centre lies inside.
void fill_convex(Image& img, const std::vector<std::array<double, 2>>& poly,
                 const std::array<std::uint8_t, 3>& colour) {
  if (poly.size() < 3) return;

  double area2 = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    area2 += a[0] * b[1] - b[0] * a[1];
  }
  const double orient = area2 >= 0.0 ? 1.0 : -1.0;

  double min_u = poly[0][0], max_u = poly[0][0], min_v = poly[0][1], max_v = poly[0][1];
  for (const auto& p : poly) {
    min_u = std::min(min_u, p[0]);
    max_u = std::max(max_u, p[0]);
    min_v = std::min(min_v, p[1]);
    max_v = std::max(max_v, p[1]);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(min_u - 0.5)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(max_u)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_v - 0.5)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(max_v)));

  for (int y = y0; y <= y1; ++y) {
    const double pv = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double pu = x + 0.5;
      bool inside = true;
      for (std::size_t i = 0; i < poly.size() && inside; ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        const double cross = (b[0] - a[0]) * (pv - a[1]) - (b[1] - a[1]) * (pu - a[0]);
        inside = cross * orient >= -1e-9;
      }
      if (inside) {
        img.at(x, y, 0) = colour[0];
        img.at(x, y, 1) = colour[1];
        img.at(x, y, 2) = colour[2];
      }
    }
  }
}

// Sutherland-Hodgman clip of a camera-space triangle against z >= kZNear.
std::vector<Vec3> clip_near(const std::array<Vec3, 3>& tri) {
  std::vector<Vec3> out;
  out.reserve(4);
  for (int i = 0; i < 3; ++i) {
    const Vec3& cur = tri[static_cast<std::size_t>(i)];
    const Vec3& prev = tri[static_cast<std::size_t>((i + 2) % 3)];
    const bool cur_in = cur.z >= kZNear;
    const bool prev_in = prev.z >= kZNear;
    if (cur_in != prev_in) {
      const double f = (kZNear - prev.z) / (cur.z - prev.z);
      out.push_back(prev + (cur - prev) * f);
    }
    if (cur_in) out.push_back(cur);
  }
  return out;
}

std::array<double, 2> to_pixel(const CameraIntrinsics& intr, const Vec3& p) {
  return {intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy};
}

// --- procedural backgrounds ---

void fill_texture_background(Image& img, std::uint64_t seed) {
  const double base_cells = 6.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = 0.0, amp = 1.0, norm = 0.0;
      for (int octave = 0; octave < 4; ++octave) {
        const double f = base_cells * static_cast<double>(1 << octave) / img.width;
        v += amp * perlin2d(x * f, y * f, seed + static_cast<std::uint64_t>(octave));
        norm += amp;
        amp *= 0.5;
      }
      const std::uint8_t g = to_byte(128.0 + 110.0 * v / norm);
      img.at(x, y, 0) = g;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = g;
    }
  }
}

void fill_clutter_background(Image& img, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xBACD));
  const double w = img.width, h = img.height;
  for (int shape = 0; shape < 40; ++shape) {
    const double grey = rng.uniform(25.0, 215.0);
    std::array<double, 3> tint{grey, grey, grey};
    if (shape % 5 == 4) {  // the occasional blue-ish panel
      tint[0] *= 0.55;
      tint[1] *= 0.7;
      tint[2] = std::min(255.0, tint[2] * 1.25);
    }
    const std::array<std::uint8_t, 3> colour{to_byte(tint[0]), to_byte(tint[1]), to_byte(tint[2])};
    const double cu = rng.uniform(0.0, w), cv = rng.uniform(0.0, h);
    if (rng.bernoulli(0.5)) {
      const double hw = rng.uniform(0.02, 0.22) * w / 2.0;
      const double hh = rng.uniform(0.02, 0.22) * h / 2.0;
      fill_convex(img, {{cu - hw, cv - hh}, {cu + hw, cv - hh}, {cu + hw, cv + hh}, {cu - hw, cv + hh}},
                  colour);
    } else {
      std::vector<std::array<double, 2>> tri;
      for (int k = 0; k < 3; ++k) {
        const double ang = rng.uniform(0.0, 2.0 * kPi);
        const double rad = rng.uniform(0.03, 0.16) * w;
        tri.push_back({cu + rad * std::cos(ang), cv + rad * std::sin(ang)});
      }
      fill_convex(img, tri, colour);
    }
  }
}

}  // namespace

CameraIntrinsics intrinsics_from_fov(int width, int height, double hfov_deg, double vfov_deg) {
  if (width <= 0 || height <= 0) throw BadFov("image dimensions must be positive");
  if (!(hfov_deg > 0.0) || hfov_deg >= 180.0 || !(vfov_deg > 0.0) || vfov_deg >= 180.0) {
    throw BadFov("field of view must lie strictly between 0 and 180 degrees");
  }
  CameraIntrinsics in;
  in.width = width;
  in.height = height;
  in.fx = width / (2.0 * std::tan(deg2rad(hfov_deg) / 2.0));
  in.fy = height / (2.0 * std::tan(deg2rad(vfov_deg) / 2.0));
  in.cx = width / 2.0;
  in.cy = height / 2.0;
  return in;
}

std::optional<std::array<double, 2>> project(const CameraIntrinsics& intr, const Pose& pose,
                                             const Vec3& point_target) {
  const Vec3 p = pose.apply(point_target);
  if (p.z <= 0.0) return std::nullopt;
  return to_pixel(intr, p);
}

Image Image::filled(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
  }
  return img;
}

FixtureModel make_berthing_fixture() {
  FixtureModel m;
  const auto vert = [&](double x, double y, double z) {
    m.vertices.push_back({x, y, z});
    return static_cast<int>(m.vertices.size() - 1);
  };
  const auto tri = [&](int a, int b, int c, std::array<double, 3> albedo) {
    m.faces.push_back({{a, b, c}, albedo});
  };
  const auto quad = [&](int a, int b, int c, int d, std::array<double, 3> albedo) {
    tri(a, b, c, albedo);
    tri(a, c, d, albedo);
  };

  constexpr double kHalf = 0.15;        // plate half-width
  constexpr double kBack = 0.02;        // plate thickness (+z is away from camera)
  constexpr double kCavR = 0.05;        // cavity rim radius
  constexpr double kCavR2 = 0.015;      // cavity throat radius
  constexpr double kCavZ = 0.035;       // cavity depth
  constexpr int kSeg = 16;
  const std::array<double, 3> plate_albedo{0.55, 0.55, 0.57};
  const std::array<double, 3> cavity_albedo{0.26, 0.26, 0.28};
  const std::array<double, 3> side_albedo{0.42, 0.42, 0.44};
  const std::array<double, 3> petal_albedo{0.85, 0.82, 0.74};
  const std::array<double, 3> stripe_albedo{0.90, 0.50, 0.12};
  const std::array<double, 3> white_albedo{0.95, 0.95, 0.95};
  const std::array<double, 3> black_albedo{0.05, 0.05, 0.05};

  // Plate front: an annular fan between the cavity rim and the square edge.
  // Winding is chosen so face normals point toward -z (the camera side).
  std::vector<int> rim, edge;
  for (int s = 0; s < kSeg; ++s) {
    const double ang = 2.0 * kPi * s / kSeg;
    const double cx = std::cos(ang), sy = std::sin(ang);
    rim.push_back(vert(kCavR * cx, kCavR * sy, 0.0));
    const double scale = kHalf / std::max(std::abs(cx), std::abs(sy));
    edge.push_back(vert(scale * cx, scale * sy, 0.0));
  }
  for (int s = 0; s < kSeg; ++s) {
    const int t = (s + 1) % kSeg;
    quad(rim[s], edge[s], edge[t], rim[t], plate_albedo);
  }

  // Cavity: conical wall down to the throat, then a flat bottom.
  std::vector<int> throat;
  for (int s = 0; s < kSeg; ++s) {
    const double ang = 2.0 * kPi * s / kSeg;
    throat.push_back(vert(kCavR2 * std::cos(ang), kCavR2 * std::sin(ang), kCavZ));
  }
  for (int s = 0; s < kSeg; ++s) {
    const int t = (s + 1) % kSeg;
    quad(rim[s], rim[t], throat[t], throat[s], cavity_albedo);
  }
  const int bottom_centre = vert(0, 0, kCavZ);
  for (int s = 0; s < kSeg; ++s) {
    tri(throat[s], throat[(s + 1) % kSeg], bottom_centre, cavity_albedo);
  }

  // Plate side walls.
  {
    const int a = vert(-kHalf, -kHalf, 0), b = vert(kHalf, -kHalf, 0);
    const int c = vert(kHalf, kHalf, 0), d = vert(-kHalf, kHalf, 0);
    const int ab = vert(-kHalf, -kHalf, kBack), bb = vert(kHalf, -kHalf, kBack);
    const int cb = vert(kHalf, kHalf, kBack), db = vert(-kHalf, kHalf, kBack);
    quad(a, b, bb, ab, side_albedo);
    quad(b, c, cb, bb, side_albedo);
    quad(c, d, db, cb, side_albedo);
    quad(d, a, ab, db, side_albedo);
  }

  // Corner markers: one black, three white, so the marker pattern alone
  // pins down the roll angle.
  {
    constexpr double kOff = 0.105, kMark = 0.025, kZ = -0.002;
    const std::array<std::pair<double, double>, 4> centres{
        {{kOff, kOff}, {-kOff, kOff}, {-kOff, -kOff}, {kOff, -kOff}}};
    for (int i = 0; i < 4; ++i) {
      const auto [mx, my] = centres[static_cast<std::size_t>(i)];
      const int a = vert(mx - kMark, my - kMark, kZ), b = vert(mx + kMark, my - kMark, kZ);
      const int c = vert(mx + kMark, my + kMark, kZ), d = vert(mx - kMark, my + kMark, kZ);
      quad(a, d, c, b, i == 0 ? black_albedo : white_albedo);
    }
  }

  // Guide petals: three wedges around the cavity with tips toward the camera.
  for (int p = 0; p < 3; ++p) {
    const double ang = deg2rad(90.0 + 120.0 * p);
    const Vec3 radial{std::cos(ang), std::sin(ang), 0};
    const Vec3 tangent{-std::sin(ang), std::cos(ang), 0};
    const Vec3 b1 = radial * 0.060 + tangent * 0.020;
    const Vec3 b2 = radial * 0.060 - tangent * 0.020;
    const Vec3 b3 = radial * 0.105 - tangent * 0.020;
    const Vec3 b4 = radial * 0.105 + tangent * 0.020;
    const Vec3 apex = radial * 0.0825 + Vec3{0, 0, -0.06};
    const int i1 = vert(b1.x, b1.y, -0.001), i2 = vert(b2.x, b2.y, -0.001);
    const int i3 = vert(b3.x, b3.y, -0.001), i4 = vert(b4.x, b4.y, -0.001);
    const int ia = vert(apex.x, apex.y, apex.z);
    tri(i1, ia, i2, petal_albedo);
    tri(i2, ia, i3, petal_albedo);
    tri(i3, ia, i4, petal_albedo);
    tri(i4, ia, i1, petal_albedo);
    m.keypoints.emplace_back("petal_tip_" + std::to_string(p), apex);
  }

  // Roll-index stripe along +x.
  {
    constexpr double kZ = -0.0015, kHw = 0.012;
    const int a = vert(0.055, -kHw, kZ), b = vert(0.145, -kHw, kZ);
    const int c = vert(0.145, kHw, kZ), d = vert(0.055, kHw, kZ);
    quad(a, d, c, b, stripe_albedo);
  }

  m.keypoints.emplace_back("centre", Vec3{0, 0, 0});
  m.keypoints.emplace_back("corner_pp", Vec3{kHalf, kHalf, 0});
  m.keypoints.emplace_back("corner_np", Vec3{-kHalf, kHalf, 0});
  m.keypoints.emplace_back("corner_nn", Vec3{-kHalf, -kHalf, 0});
  m.keypoints.emplace_back("corner_pn", Vec3{kHalf, -kHalf, 0});
  m.keypoints.emplace_back("rim_x", Vec3{kCavR, 0, 0});
  m.keypoints.emplace_back("rim_y", Vec3{0, kCavR, 0});
  m.keypoints.emplace_back("stripe_end", Vec3{0.145, 0, -0.0015});
  return m;
}

Vec3 sun_from_elevation_deg(double elevation_deg) {
  const double e = deg2rad(elevation_deg);
  return {std::cos(e), 0.0, -std::sin(e)};
}

Image render(const CameraIntrinsics& intr, const Pose& pose, const FixtureModel& model,
             const RenderSettings& settings) {
  Image img = Image::filled(intr.width, intr.height, 0, 0, 0);
  switch (settings.background) {
    case Background::space: break;
    case Background::texture: fill_texture_background(img, settings.seed); break;
    case Background::clutter: fill_clutter_background(img, settings.seed); break;
  }

  std::vector<Vec3> cam(model.vertices.size());
  bool any_in_front = false;
  for (std::size_t i = 0; i < model.vertices.size(); ++i) {
    cam[i] = pose.apply(model.vertices[i]);
    any_in_front = any_in_front || cam[i].z > kZNear;
  }
  if (!any_in_front) {
    throw FixtureNotVisible("every fixture vertex is behind the camera");
  }

  struct DrawableFace {
    double depth;
    std::size_t index;
    std::vector<std::array<double, 2>> poly;
    std::array<std::uint8_t, 3> colour;
  };
  std::vector<DrawableFace> drawables;
  drawables.reserve(model.faces.size());

  for (std::size_t fi = 0; fi < model.faces.size(); ++fi) {
    const Face& f = model.faces[fi];
    const std::array<Vec3, 3> tri_cam{cam[static_cast<std::size_t>(f.v[0])],
                                      cam[static_cast<std::size_t>(f.v[1])],
                                      cam[static_cast<std::size_t>(f.v[2])]};
    const auto clipped = clip_near(tri_cam);
    if (clipped.size() < 3) continue;

    std::vector<std::array<double, 2>> poly;
    poly.reserve(clipped.size());
    double depth = 0.0;
    for (const Vec3& p : clipped) {
      poly.push_back(to_pixel(intr, p));
      depth += p.z;
    }
    depth /= static_cast<double>(clipped.size());

    // Lambertian shading with the face normal from the target-frame
    // geometry; the sun direction is given in the same frame.
    const Vec3& a = model.vertices[static_cast<std::size_t>(f.v[0])];
    const Vec3& b = model.vertices[static_cast<std::size_t>(f.v[1])];
    const Vec3& c = model.vertices[static_cast<std::size_t>(f.v[2])];
    // CCW seen from outside with the camera on -z means the outward normal
    // is along -cross(b - a, c - a).
    Vec3 n = (b - a).cross(c - a);
    const double nn = n.norm();
    double diffuse = 0.0;
    if (nn > 1e-15) {
      n = n * (-1.0 / nn);
      diffuse = std::max(0.0, n.dot(settings.sun_direction.normalized()));
    }
    const double light = settings.ambient + (1.0 - settings.ambient) * diffuse;
    drawables.push_back({depth, fi, std::move(poly),
                         {to_byte(255.0 * f.albedo[0] * light),
                          to_byte(255.0 * f.albedo[1] * light),
                          to_byte(255.0 * f.albedo[2] * light)}});
  }

  std::stable_sort(drawables.begin(), drawables.end(), [](const DrawableFace& a, const DrawableFace& b) {
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.index < b.index;
  });
  for (const auto& d : drawables) fill_convex(img, d.poly, d.colour);
  return img;
}

double perlin2d(double x, double y, std::uint64_t seed) {
  const auto gradient = [seed](long long ix, long long iy) {
    const std::uint64_t h =
        derive_seed(derive_seed(seed, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
    const double angle = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 * kPi;
    return std::array<double, 2>{std::cos(angle), std::sin(angle)};
  };
  const auto fade = [](double t) { return ((6.0 * t - 15.0) * t + 10.0) * t * t * t; };

  const long long x0 = static_cast<long long>(std::floor(x));
  const long long y0 = static_cast<long long>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);

  const auto corner = [&](long long gx, long long gy, double dx, double dy) {
    const auto g = gradient(gx, gy);
    return g[0] * dx + g[1] * dy;
  };
  const double d00 = corner(x0, y0, fx, fy);
  const double d10 = corner(x0 + 1, y0, fx - 1.0, fy);
  const double d01 = corner(x0, y0 + 1, fx, fy - 1.0);
  const double d11 = corner(x0 + 1, y0 + 1, fx - 1.0, fy - 1.0);

  const double u = fade(fx), v = fade(fy);
  const double top = d00 + u * (d10 - d00);
  const double bot = d01 + u * (d11 - d01);
  // Unit gradients bound the raw value by sqrt(2)/2; rescale to [-1, 1].
  return (top + v * (bot - top)) * std::sqrt(2.0);
}

PhotometricParams draw_photometric(Rng& rng, const PhotometricStrength& strength) {
  PhotometricParams p;
  p.do_brightness = rng.bernoulli(0.5);
  if (p.do_brightness) p.brightness = rng.uniform(-strength.brightness, strength.brightness);
  p.do_contrast = rng.bernoulli(0.5);
  if (p.do_contrast) p.contrast = 1.0 + rng.uniform(-strength.contrast, strength.contrast);
  p.do_colour = rng.bernoulli(0.5);
  if (p.do_colour) {
    for (auto& g : p.gain) g = 1.0 + rng.uniform(-strength.colour, strength.colour);
  }
  p.do_noise = rng.bernoulli(0.5);
  if (p.do_noise) p.noise_sigma = strength.noise_sigma;
  p.do_blur = rng.bernoulli(0.5);
  if (p.do_blur) p.blur_radius = strength.blur_radius;
  return p;
}

Image apply_photometric(const Image& img, const PhotometricParams& params, Rng& rng) {
  const std::size_t n = img.rgb.size();
  std::vector<double> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<double>(img.rgb[i]);

  if (params.do_colour) {
    for (std::size_t i = 0; i < n; i += 3) {
      buf[i] *= params.gain[0];
      buf[i + 1] *= params.gain[1];
      buf[i + 2] *= params.gain[2];
    }
  }
  if (params.do_contrast) {
    for (auto& v : buf) v = (v - 127.5) * params.contrast + 127.5;
  }
  if (params.do_brightness) {
    for (auto& v : buf) v += params.brightness;
  }
  if (params.do_noise && params.noise_sigma > 0.0) {
    for (auto& v : buf) v += rng.gaussian() * params.noise_sigma;
  }
  for (auto& v : buf) v = std::clamp(v, 0.0, 255.0);

  if (params.do_blur && params.blur_radius > 0) {
    const int r = params.blur_radius;
    const int w = img.width, h = img.height;
    std::vector<double> tmp(n);
    const auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k)
            acc += buf[3 * (static_cast<std::size_t>(y) * w + clampi(x + k, 0, w - 1)) +
                       static_cast<std::size_t>(c)];
          tmp[3 * (static_cast<std::size_t>(y) * w + x) + static_cast<std::size_t>(c)] =
              acc / (2 * r + 1);
        }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int k = -r; k <= r; ++k)
            acc += tmp[3 * (static_cast<std::size_t>(clampi(y + k, 0, h - 1)) * w + x) +
                       static_cast<std::size_t>(c)];
          buf[3 * (static_cast<std::size_t>(y) * w + x) + static_cast<std::size_t>(c)] =
              acc / (2 * r + 1);
        }
  }

  Image out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.rgb[i] = to_byte(buf[i]);
  return out;
}

Image augment_photometric(const Image& img, std::uint64_t seed,
                          const PhotometricStrength& strength) {
  Rng rng(derive_seed(seed, 0x9007));
  const PhotometricParams params = draw_photometric(rng, strength);
  return apply_photometric(img, params, rng);
}

Mat3 warp_homography(const CameraIntrinsics& intr, const Pose& pose, const Mat3& r_delta,
                     const Vec3& t_delta) {
  Vec3 n = quat_to_dcm(pose.rotation).col(2);
  double d = n.dot(pose.translation);
  if (d < 0.0) {
    n = -n;
    d = -d;
  }
  if (d < 0.05) {
    throw PlaneBehindCamera("fixture plane passes through or behind the camera");
  }

  Mat3 outer = Mat3::zero();
  outer(0, 0) = t_delta.x * n.x; outer(0, 1) = t_delta.x * n.y; outer(0, 2) = t_delta.x * n.z;
  outer(1, 0) = t_delta.y * n.x; outer(1, 1) = t_delta.y * n.y; outer(1, 2) = t_delta.y * n.z;
  outer(2, 0) = t_delta.z * n.x; outer(2, 1) = t_delta.z * n.y; outer(2, 2) = t_delta.z * n.z;

  const Mat3 k{{intr.fx, 0, intr.cx, 0, intr.fy, intr.cy, 0, 0, 1}};
  const Mat3 k_inv{{1.0 / intr.fx, 0, -intr.cx / intr.fx, 0, 1.0 / intr.fy, -intr.cy / intr.fy,
                    0, 0, 1}};
  return k * (r_delta + outer * (1.0 / d)) * k_inv;
}

WarpResult augment_pose_warp(const Image& img, const Pose& pose, const CameraIntrinsics& intr,
                             std::uint64_t seed, const WarpLimits& limits) {
  Rng rng(derive_seed(seed, 0xA406));
  const double rz = deg2rad(rng.uniform(-limits.inplane_deg, limits.inplane_deg));
  const double rx = deg2rad(rng.uniform(-limits.offplane_deg, limits.offplane_deg));
  const double ry = deg2rad(rng.uniform(-limits.offplane_deg, limits.offplane_deg));
  const double du = rng.uniform(-limits.shift_px, limits.shift_px);
  const double dv = rng.uniform(-limits.shift_px, limits.shift_px);

  const Mat3 r_delta = rot_axis(2, rz) * rot_axis(1, ry) * rot_axis(0, rx);

  // Shift parallel to the fixture plane, scaled so it lands as (du, dv)
  // pixels at the plane's depth along the boresight.
  Vec3 n = quat_to_dcm(pose.rotation).col(2);
  double d = n.dot(pose.translation);
  if (d < 0.0) d = -d;
  const Vec3 t_delta{du * d / intr.fx, dv * d / intr.fy, 0.0};

  const Mat3 h = warp_homography(intr, pose, r_delta, t_delta);
  const Mat3 h_inv = h.inverse();

  WarpResult out;
  out.homography = h;
  out.pose = {(dcm_to_quat(r_delta) * pose.rotation).normalized(),
              r_delta * pose.translation + t_delta};

  out.image.width = img.width;
  out.image.height = img.height;
  out.image.rgb.assign(img.rgb.size(), 0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Vec3 q{x + 0.5, y + 0.5, 1.0};
      const Vec3 s = h_inv * q;
      if (std::abs(s.z) < 1e-12) continue;
      const double sx = s.x / s.z - 0.5;
      const double sy = s.y / s.z - 0.5;
      const int ix0 = static_cast<int>(std::floor(sx));
      const int iy0 = static_cast<int>(std::floor(sy));
      if (ix0 < -1 || ix0 > img.width - 1 || iy0 < -1 || iy0 > img.height - 1) continue;
      const double fx = sx - ix0, fy = sy - iy0;
      const int x0c = std::max(ix0, 0), x1c = std::min(ix0 + 1, img.width - 1);
      const int y0c = std::max(iy0, 0), y1c = std::min(iy0 + 1, img.height - 1);
      for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(x0c, y0c, c), v10 = img.at(x1c, y0c, c);
        const double v01 = img.at(x0c, y1c, c), v11 = img.at(x1c, y1c, c);
        const double v = (v00 * (1 - fx) + v10 * fx) * (1 - fy) +
                         (v01 * (1 - fx) + v11 * fx) * fy;
        out.image.at(x, y, c) = to_byte(v);
      }
    }
  }
  return out;
}

Image downscale_box(const Image& img, int factor) {
  if (factor <= 0 || img.width % factor != 0 || img.height % factor != 0) {
    throw Error("downscale factor must divide both image dimensions");
  }
  Image out;
  out.width = img.width / factor;
  out.height = img.height / factor;
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = to_byte(acc * inv);
      }
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  std::string content = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                        "\n255\n";
  content.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  internal::write_file_atomic(path, content);
}

namespace {

// Reads the P6 header; returns the offset where pixel data starts.
std::size_t parse_ppm_header(const std::string& content, const std::string& path, int& w, int& h) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    for (;;) {
      while (pos < content.size() && std::isspace(static_cast<unsigned char>(content[pos]))) ++pos;
      if (pos < content.size() && content[pos] == '#') {
        while (pos < content.size() && content[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_int = [&]() {
    skip_space();
    std::size_t start = pos;
    while (pos < content.size() && std::isdigit(static_cast<unsigned char>(content[pos]))) ++pos;
    if (pos == start || pos - start > 9) throw MalformedFile(path + ": bad PPM header");
    return std::stoi(content.substr(start, pos - start));
  };

  if (content.size() < 2 || content[0] != 'P' || content[1] != '6') {
    throw MalformedFile(path + ": not a binary PPM (P6) file");
  }
  pos = 2;
  w = read_int();
  h = read_int();
  const int maxval = read_int();
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw MalformedFile(path + ": unsupported PPM geometry or depth");
  }
  if (pos >= content.size() || !std::isspace(static_cast<unsigned char>(content[pos]))) {
    throw MalformedFile(path + ": bad PPM header");
  }
  return pos + 1;
}

}  // namespace

Image read_ppm(const std::string& path) {
  const std::string content = internal::read_file(path);
  int w = 0, h = 0;
  const std::size_t data = parse_ppm_header(content, path, w, h);
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (content.size() - data < need) {
    throw MalformedFile(path + ": truncated PPM pixel data");
  }
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.assign(content.begin() + static_cast<std::ptrdiff_t>(data),
                 content.begin() + static_cast<std::ptrdiff_t>(data + need));
  return img;
}

std::pair<int, int> read_ppm_size(const std::string& path) {
  // Header fits comfortably in the first kilobyte.
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open: " + path);
  std::string head(1024, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  int w = 0, h = 0;
  parse_ppm_header(head, path, w, h);
  return {w, h};
}

}  // namespace dknav
