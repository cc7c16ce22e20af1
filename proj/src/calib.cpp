#include "dknav/calib.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <utility>

#include "internal/file_io.hpp"
#include "json.hpp"

namespace dknav {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kMinExcitationDeg = 5.0;

Eigen::Matrix3d to_eigen(const Dcm& m) {
  Eigen::Matrix3d out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m(r, c);
  return out;
}

Dcm from_eigen(const Eigen::Matrix3d& m) {
  Dcm out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m(r, c);
  return out;
}

// Nearest rotation in the Frobenius sense, with the determinant forced to +1.
Eigen::Matrix3d polar_project(const Eigen::Matrix3d& m) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  s(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * s * svd.matrixV().transpose();
}

double rotation_angle_deg(const UnitQuaternion& q) {
  return attitude_error_deg(q, UnitQuaternion::identity());
}

// Relative rig motions A_k = T_oi^-1 * T_os.
std::vector<Pose> rig_motions(const std::vector<CalibSample>& samples) {
  std::vector<Pose> a;
  a.reserve(samples.size());
  for (const CalibSample& s : samples) a.push_back(s.t_oi.inverse() * s.t_os);
  return a;
}

// The linear system determines both rotations only when the relative rig
// motion rotates far enough about two genuinely different axes.
void check_excitation(const std::vector<Pose>& a) {
  std::vector<Vec3> axes;
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (std::size_t k = j + 1; k < a.size(); ++k) {
      const UnitQuaternion rel = (a[j].inverse() * a[k]).rotation;
      if (rotation_angle_deg(rel) < kMinExcitationDeg) continue;
      const double s = std::sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z);
      if (s < 1e-12) continue;
      axes.push_back(Vec3{rel.x / s, rel.y / s, rel.z / s});
    }
  }
  if (axes.empty()) {
    throw InsufficientExcitation(
        "relative rig rotations never reach " + std::to_string(kMinExcitationDeg) + " degrees");
  }
  const double min_cross = std::sin(kMinExcitationDeg * kPi / 180.0);
  for (std::size_t j = 0; j < axes.size(); ++j) {
    for (std::size_t k = j + 1; k < axes.size(); ++k) {
      if (axes[j].cross(axes[k]).norm() >= min_cross) return;
    }
  }
  throw InsufficientExcitation("relative rig rotations are all about one axis");
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_pose(std::string& out, const Pose& p) {
  for (const double v : p.to_array()) {
    out += ',';
    out += format_g17(v);
  }
}

}  // namespace

CalibResult solve_statics(const std::vector<CalibSample>& samples) {
  if (samples.size() < 3) {
    throw TooFewSamples("calibration needs at least 3 samples, got " +
                        std::to_string(samples.size()));
  }
  const std::vector<Pose> a = rig_motions(samples);
  check_excitation(a);

  // Rotations: stack, for every sample, the 9 scalar equations of
  //   R_A * R_Y = R_X * R_B
  // as M_k * [vec(R_X); vec(R_Y)] = 0 with column-major vec, where
  //   M_k = [ -(R_B^T kron I3) | (I3 kron R_A) ].
  // The 18x18 normal matrix's smallest eigenvector spans the null space.
  Eigen::Matrix<double, 18, 18> g = Eigen::Matrix<double, 18, 18>::Zero();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Eigen::Matrix3d ra = to_eigen(quat_to_dcm(a[k].rotation));
    const Eigen::Matrix3d rb = to_eigen(quat_to_dcm(samples[k].t_cb.rotation));
    Eigen::Matrix<double, 9, 18> m = Eigen::Matrix<double, 9, 18>::Zero();
    for (int bi = 0; bi < 3; ++bi) {
      for (int bj = 0; bj < 3; ++bj) {
        // (R_B^T kron I3) block (bi, bj) = R_B(bj, bi) * I3.
        m.block<3, 3>(3 * bi, 3 * bj) =
            -rb(bj, bi) * Eigen::Matrix3d::Identity();
      }
      // (I3 kron R_A) is block-diagonal.
      m.block<3, 3>(3 * bi, 9 + 3 * bi) = ra;
    }
    g += m.transpose() * m;
  }

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 18, 18>> eig(g);
  const Eigen::Matrix<double, 18, 1> w = eig.eigenvectors().col(0);

  Eigen::Matrix3d mx, my;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 3; ++r) {
      mx(r, c) = w(3 * c + r);
      my(r, c) = w(9 + 3 * c + r);
    }
  }

  // The null vector carries an arbitrary common scale (and sign); a true
  // rotation times lambda has determinant lambda^3.
  const double dx = mx.determinant();
  const double dy = my.determinant();
  if (std::abs(dx) < 1e-9 || std::abs(dy) < 1e-9) {
    throw InsufficientExcitation("rotation system is rank-deficient");
  }
  mx /= std::cbrt(dx);
  my /= std::cbrt(dy);

  const Eigen::Matrix3d rx = polar_project(mx);
  const Eigen::Matrix3d ry = polar_project(my);

  // Translations: R_X t_B + t_X - R_A t_Y = t_A per sample, linear in
  // u = [t_X; t_Y].
  Eigen::MatrixXd jac(3 * static_cast<int>(samples.size()), 6);
  Eigen::VectorXd rhs(3 * static_cast<int>(samples.size()));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Eigen::Matrix3d ra = to_eigen(quat_to_dcm(a[k].rotation));
    const Vec3& tb = samples[k].t_cb.translation;
    const Vec3& ta = a[k].translation;
    const Eigen::Vector3d rxb = rx * Eigen::Vector3d(tb.x, tb.y, tb.z);
    const int row = 3 * static_cast<int>(k);
    jac.block<3, 3>(row, 0) = Eigen::Matrix3d::Identity();
    jac.block<3, 3>(row, 3) = -ra;
    rhs.segment<3>(row) = Eigen::Vector3d(ta.x, ta.y, ta.z) - rxb;
  }
  const Eigen::Matrix<double, 6, 1> u = jac.colPivHouseholderQr().solve(rhs);

  CalibResult result;
  result.t_ic.rotation = dcm_to_quat(from_eigen(rx));
  result.t_ic.translation = Vec3{u(0), u(1), u(2)};
  result.t_sb.rotation = dcm_to_quat(from_eigen(ry));
  result.t_sb.translation = Vec3{u(3), u(4), u(5)};

  const auto residuals = calibration_residuals(samples, result.t_ic, result.t_sb);
  result.rms_rotation_residual_deg = residuals.first;
  result.rms_translation_residual_m = residuals.second;
  return result;
}

std::pair<double, double> calibration_residuals(const std::vector<CalibSample>& samples,
                                                const Pose& t_ic, const Pose& t_sb) {
  if (samples.empty()) return {0.0, 0.0};
  double rot_sq = 0.0, trans_sq = 0.0;
  for (const CalibSample& s : samples) {
    const Pose a = s.t_oi.inverse() * s.t_os;
    const Pose d = (a * t_sb) * (t_ic * s.t_cb).inverse();
    const double ang = rotation_angle_deg(d.rotation);
    const double tn = d.translation.norm();
    rot_sq += ang * ang;
    trans_sq += tn * tn;
  }
  const double n = static_cast<double>(samples.size());
  return {std::sqrt(rot_sq / n), std::sqrt(trans_sq / n)};
}

Pose apply_calibration(const CalibResult& result, const Pose& t_oi, const Pose& t_os) {
  return result.t_ic.inverse() * t_oi.inverse() * t_os * result.t_sb;
}

std::vector<CalibSample> read_calib_csv(const std::string& path) {
  const std::string content = internal::read_file(path);
  std::vector<CalibSample> samples;
  std::istringstream stream(content);
  std::string line;
  std::size_t line_no = 0;
  bool have_prev_t = false;
  double prev_t = 0.0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (line_no == 1 && !fields.empty()) {
      // Tolerate a header row.
      char* end = nullptr;
      std::strtod(fields[0].c_str(), &end);
      if (end == fields[0].c_str()) continue;
    }
    if (fields.size() != 22) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": expected 22 fields, got " +
                          std::to_string(fields.size()));
    }

    CalibSample s;
    try {
      std::size_t pos = 0;
      s.t = std::stod(fields[0], &pos);
      if (pos != fields[0].size()) throw std::invalid_argument(fields[0]);
      const auto parse_pose = [&](int offset) {
        std::array<double, 7> arr;
        for (int i = 0; i < 7; ++i) {
          const std::string& f = fields[static_cast<std::size_t>(offset + i)];
          std::size_t end = 0;
          arr[static_cast<std::size_t>(i)] = std::stod(f, &end);
          if (end != f.size()) throw std::invalid_argument(f);
        }
        return Pose::from_array(arr);
      };
      s.t_oi = parse_pose(1);
      s.t_os = parse_pose(8);
      s.t_cb = parse_pose(15);
    } catch (const std::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": bad sample: " + e.what());
    }
    if (have_prev_t && s.t <= prev_t) {
      throw MalformedFile(path + ":" + std::to_string(line_no) +
                          ": sample times must be strictly increasing");
    }
    prev_t = s.t;
    have_prev_t = true;
    samples.push_back(s);
  }
  return samples;
}

void write_calib_csv(const std::string& path, const std::vector<CalibSample>& samples) {
  std::string out =
      "k,oi_tx,oi_ty,oi_tz,oi_qx,oi_qy,oi_qz,oi_qw"
      ",os_tx,os_ty,os_tz,os_qx,os_qy,os_qz,os_qw"
      ",cb_tx,cb_ty,cb_tz,cb_qx,cb_qy,cb_qz,cb_qw\n";
  for (const CalibSample& s : samples) {
    out += format_g17(s.t);
    append_pose(out, s.t_oi);
    append_pose(out, s.t_os);
    append_pose(out, s.t_cb);
    out += '\n';
  }
  internal::write_file_atomic(path, out);
}

void write_calib_json(const std::string& path, const CalibResult& result) {
  ordered_json j;
  j["t_ic"] = result.t_ic.to_array();
  j["t_sb"] = result.t_sb.to_array();
  j["rms_rotation_residual_deg"] = result.rms_rotation_residual_deg;
  j["rms_translation_residual_m"] = result.rms_translation_residual_m;
  internal::write_file_atomic(path, j.dump(2) + "\n");
}

CalibResult read_calib_json(const std::string& path) {
  const std::string content = internal::read_file(path);
  CalibResult result;
  try {
    const ordered_json j = ordered_json::parse(content);
    result.t_ic = Pose::from_array(j.at("t_ic").get<std::array<double, 7>>());
    result.t_sb = Pose::from_array(j.at("t_sb").get<std::array<double, 7>>());
    result.rms_rotation_residual_deg = j.at("rms_rotation_residual_deg").get<double>();
    result.rms_translation_residual_m = j.at("rms_translation_residual_m").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": " + e.what());
  }
  if (result.rms_rotation_residual_deg < 0.0 || result.rms_translation_residual_m < 0.0) {
    throw MalformedFile(path + ": residuals must be non-negative");
  }
  return result;
}

void write_tbc_stream_csv(const std::string& path, const CalibResult& result,
                          const std::vector<CalibSample>& samples) {
  std::string out = "t,tx,ty,tz,qx,qy,qz,qw\n";
  for (const CalibSample& s : samples) {
    out += format_g17(s.t);
    append_pose(out, apply_calibration(result, s.t_oi, s.t_os));
    out += '\n';
  }
  internal::write_file_atomic(path, out);
}

}  // namespace dknav
