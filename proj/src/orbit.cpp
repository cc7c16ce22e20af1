#include "dknav/orbit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "dknav/pose_core.hpp"

namespace dknav {

namespace {

// --- civil calendar <-> day count (proleptic Gregorian, days since epoch) ---

long long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

void civil_from_days(long long z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long long yr = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y = static_cast<int>(yr + (m <= 2));
}

long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// --- TLE field helpers (1-indexed inclusive column ranges) ---

std::string field(const std::string& line, int c0, int c1) {
  return line.substr(static_cast<std::size_t>(c0 - 1), static_cast<std::size_t>(c1 - c0 + 1));
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

double parse_tle_double(const std::string& raw, const char* what) {
  const std::string s = trimmed(raw);
  if (s.empty()) throw TleFormatError(std::string("empty TLE field: ") + what);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    throw TleFormatError(std::string("malformed TLE field ") + what + ": '" + raw + "'");
  }
  return v;
}

long parse_tle_int(const std::string& raw, const char* what) {
  const std::string s = trimmed(raw);
  if (s.empty()) throw TleFormatError(std::string("empty TLE field: ") + what);
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) {
    throw TleFormatError(std::string("malformed TLE field ") + what + ": '" + raw + "'");
  }
  return v;
}

// Packed decimal "sNNNNNsE" with implied leading "0." on the mantissa.
double parse_packed_decimal(const std::string& raw, const char* what) {
  const std::string s = trimmed(raw);
  if (s.size() < 3) throw TleFormatError(std::string("malformed packed field ") + what);
  double sign = 1.0;
  std::size_t i = 0;
  if (s[i] == '+' || s[i] == '-') {
    if (s[i] == '-') sign = -1.0;
    ++i;
  }
  const std::size_t exp_pos = s.size() - 2;
  if (i > exp_pos) throw TleFormatError(std::string("malformed packed field ") + what);
  const std::string mantissa_digits = s.substr(i, exp_pos - i);
  for (char c : mantissa_digits) {
    if (c < '0' || c > '9')
      throw TleFormatError(std::string("malformed packed field ") + what + ": '" + raw + "'");
  }
  const char exp_sign = s[exp_pos];
  const char exp_digit = s[exp_pos + 1];
  if ((exp_sign != '+' && exp_sign != '-') || exp_digit < '0' || exp_digit > '9') {
    throw TleFormatError(std::string("malformed packed field ") + what + ": '" + raw + "'");
  }
  const double mantissa =
      mantissa_digits.empty()
          ? 0.0
          : std::stod("0." + mantissa_digits);
  const int exponent = (exp_sign == '-' ? -1 : 1) * (exp_digit - '0');
  return sign * mantissa * std::pow(10.0, exponent);
}

std::string render_packed_decimal(double v) {
  char out[16];
  if (v == 0.0) return " 00000+0";
  const char sign = v < 0 ? '-' : ' ';
  const double a = std::abs(v);
  int exponent = static_cast<int>(std::floor(std::log10(a))) + 1;
  long long digits = std::llround(a / std::pow(10.0, exponent) * 1e5);
  if (digits >= 100000) {  // rounding carried into an extra digit
    digits /= 10;
    ++exponent;
  }
  if (exponent > 9 || exponent < -9) {
    throw TleFormatError("value out of range for packed TLE field");
  }
  std::snprintf(out, sizeof(out), "%c%05d%c%d", sign, static_cast<int>(digits), exponent < 0 ? '-' : '+',
                std::abs(exponent));
  return out;
}

void check_line(const std::string& line, char number, const char* name) {
  if (line.size() < 69) {
    throw TleFormatError(std::string(name) + " is shorter than 69 columns");
  }
  if (line[0] != number) {
    throw TleFormatError(std::string(name) + " does not start with the expected line number");
  }
  const int expected = line[68] - '0';
  if (expected < 0 || expected > 9 || tle_checksum(line) != expected) {
    throw ChecksumMismatch(std::string("checksum mismatch on ") + name);
  }
}

Mat3 rot_x(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return Mat3{{1, 0, 0, 0, c, -s, 0, s, c}};
}

Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
}

}  // namespace

// --- UtcInstant ---

UtcInstant UtcInstant::from_ymd(int year, int month, int day, double second_of_day) {
  const long long days = days_from_civil(year, static_cast<unsigned>(month),
                                         static_cast<unsigned>(day));
  return {static_cast<double>(days) * 86400.0 + second_of_day};
}

UtcInstant UtcInstant::from_year_doy(int year, double day_of_year) {
  const long long jan1 = days_from_civil(year, 1, 1);
  return {(static_cast<double>(jan1) + (day_of_year - 1.0)) * 86400.0};
}

std::string UtcInstant::iso8601() const {
  const long long total_ms = std::llround(unix_s * 1000.0);
  const long long days = floor_div(total_ms, 86400000);
  long long msod = total_ms - days * 86400000;
  int y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  const int hh = static_cast<int>(msod / 3600000);
  msod %= 3600000;
  const int mi = static_cast<int>(msod / 60000);
  msod %= 60000;
  const int ss = static_cast<int>(msod / 1000);
  const int ms = static_cast<int>(msod % 1000);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", y, mo, d, hh, mi, ss, ms);
  return buf;
}

int UtcInstant::year() const {
  const long long days = floor_div(static_cast<long long>(std::floor(unix_s)), 86400);
  int y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  return y;
}

double UtcInstant::day_of_year() const {
  const long long jan1 = days_from_civil(year(), 1, 1);
  return unix_s / 86400.0 - static_cast<double>(jan1) + 1.0;
}

// --- TLE ---

double TwoLineElements::semi_major_axis_km() const {
  const double n = mean_motion_rev_day * 2.0 * kPi / 86400.0;
  return std::cbrt(earth::kMuKm3S2 / (n * n));
}

int tle_checksum(const std::string& line) {
  int sum = 0;
  const std::size_t n = std::min<std::size_t>(line.size(), 68);
  for (std::size_t i = 0; i < n; ++i) {
    const char c = line[i];
    if (c >= '0' && c <= '9') sum += c - '0';
    else if (c == '-') sum += 1;
  }
  return sum % 10;
}

TwoLineElements parse_tle(const std::string& line1, const std::string& line2) {
  check_line(line1, '1', "line 1");
  check_line(line2, '2', "line 2");

  TwoLineElements e;
  e.catalog_number = static_cast<int>(parse_tle_int(field(line1, 3, 7), "catalog number"));
  const int cat2 = static_cast<int>(parse_tle_int(field(line2, 3, 7), "catalog number"));
  if (cat2 != e.catalog_number) {
    throw TleFormatError("catalog numbers differ between lines");
  }
  e.intl_designator = trimmed(field(line1, 10, 17));

  const int yy = static_cast<int>(parse_tle_int(field(line1, 19, 20), "epoch year"));
  const double doy = parse_tle_double(field(line1, 21, 32), "epoch day");
  const int year = yy < 57 ? 2000 + yy : 1900 + yy;
  e.epoch = UtcInstant::from_year_doy(year, doy);

  e.bstar = parse_packed_decimal(field(line1, 54, 61), "bstar");
  e.element_set_number = static_cast<int>(parse_tle_int(field(line1, 65, 68), "element set number"));

  e.inclination_deg = parse_tle_double(field(line2, 9, 16), "inclination");
  e.raan_deg = parse_tle_double(field(line2, 18, 25), "raan");
  e.eccentricity = parse_tle_double("0." + trimmed(field(line2, 27, 33)), "eccentricity");
  e.arg_perigee_deg = parse_tle_double(field(line2, 35, 42), "argument of perigee");
  e.mean_anomaly_deg = parse_tle_double(field(line2, 44, 51), "mean anomaly");
  e.mean_motion_rev_day = parse_tle_double(field(line2, 53, 63), "mean motion");
  e.rev_number = static_cast<int>(parse_tle_int(field(line2, 64, 68), "rev number"));

  if (e.eccentricity < 0.0 || e.eccentricity >= 1.0) {
    throw TleFormatError("eccentricity outside [0, 1)");
  }
  if (e.mean_motion_rev_day <= 0.0) {
    throw TleFormatError("mean motion must be positive");
  }
  return e;
}

std::pair<std::string, std::string> render_tle(const TwoLineElements& e) {
  const int year = e.epoch.year();
  const double doy = e.epoch.day_of_year();
  char l1[96], l2[96];
  std::snprintf(l1, sizeof(l1), "1 %05dU %-8s %02d%012.8f  .00000000  00000+0 %s 0 %4d0",
                e.catalog_number, e.intl_designator.c_str(), year % 100, doy,
                render_packed_decimal(e.bstar).c_str(), e.element_set_number % 10000);
  std::string line1(l1);
  line1[68] = static_cast<char>('0' + tle_checksum(line1));

  std::snprintf(l2, sizeof(l2), "2 %05d %8.4f %8.4f %07lld %8.4f %8.4f %11.8f%5d0",
                e.catalog_number, e.inclination_deg, e.raan_deg,
                std::llround(e.eccentricity * 1e7), e.arg_perigee_deg, e.mean_anomaly_deg,
                e.mean_motion_rev_day, e.rev_number % 100000);
  std::string line2(l2);
  line2[68] = static_cast<char>('0' + tle_checksum(line2));
  return {line1, line2};
}

std::vector<TwoLineElements> read_tle_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open TLE file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    lines.push_back(line);
  }
  std::vector<TwoLineElements> out;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    if (lines[i].rfind("1 ", 0) == 0 && lines[i + 1].rfind("2 ", 0) == 0) {
      out.push_back(parse_tle(lines[i], lines[i + 1]));
      ++i;
    }
  }
  if (out.empty()) throw TleFormatError("no element sets found in " + path);
  return out;
}

// --- dynamics ---

double solve_kepler(double mean_anomaly_rad, double eccentricity) {
  // Reduce to (-pi, pi]; the solution shifts by the same multiple of 2*pi.
  const double two_pi = 2.0 * kPi;
  const double k = std::round(mean_anomaly_rad / two_pi);
  const double M = mean_anomaly_rad - k * two_pi;

  // Danby's starter keeps Newton globally convergent for e < 1.
  double E = M + 0.85 * eccentricity * (std::sin(M) >= 0.0 ? 1.0 : -1.0);
  for (int i = 0; i < 50; ++i) {
    const double f = E - eccentricity * std::sin(E) - M;
    const double fp = 1.0 - eccentricity * std::cos(E);
    const double step = f / fp;
    E -= step;
    if (std::abs(step) < 1e-12) return E + k * two_pi;
  }
  throw KeplerNonConvergence("Kepler iteration did not converge");
}

StateVector tle_to_state(const TwoLineElements& e) {
  const double a = e.semi_major_axis_km();
  const double ecc = e.eccentricity;
  const double M = deg2rad(e.mean_anomaly_deg);
  const double E = solve_kepler(M, ecc);

  const double cosE = std::cos(E), sinE = std::sin(E);
  const double r = a * (1.0 - ecc * cosE);
  const double beta = std::sqrt(1.0 - ecc * ecc);
  const double nu = std::atan2(beta * sinE, cosE - ecc);

  const Vec3 r_pf{r * std::cos(nu), r * std::sin(nu), 0.0};
  const double vscale = std::sqrt(earth::kMuKm3S2 * a) / r;
  const Vec3 v_pf{-vscale * sinE, vscale * beta * cosE, 0.0};

  const Mat3 to_eci = rot_z(deg2rad(e.raan_deg)) * rot_x(deg2rad(e.inclination_deg)) *
                      rot_z(deg2rad(e.arg_perigee_deg));
  return {e.epoch, to_eci * r_pf, to_eci * v_pf};
}

Vec3 acceleration(const StateVector& s, const SpacecraftProperties& sc, const ForceModel& model) {
  const Vec3 r = s.position_km;
  const double rn = r.norm();
  if (rn < earth::kRadiusKm) {
    throw BelowSurface("state is below the Earth's surface");
  }

  Vec3 a = r * (-earth::kMuKm3S2 / (rn * rn * rn));

  if (model.j2) {
    const double zr = r.z / rn;
    const double zr2 = zr * zr;
    const double re_r = earth::kRadiusKm / rn;
    const double k = -1.5 * earth::kJ2 * (earth::kMuKm3S2 / (rn * rn)) * re_r * re_r;
    a += Vec3{k * (r.x / rn) * (1.0 - 5.0 * zr2),
              k * (r.y / rn) * (1.0 - 5.0 * zr2),
              k * (r.z / rn) * (3.0 - 5.0 * zr2)};
  }

  if (model.drag) {
    const double h = rn - earth::kRadiusKm;
    const double rho = earth::kAtmRho0KgM3 *
                       std::exp(-(h - earth::kAtmH0Km) / earth::kAtmScaleHeightKm);
    // Atmosphere co-rotates with the Earth: v_rel = v - omega x r.
    const Vec3 omega{0.0, 0.0, earth::kOmegaRadS};
    const Vec3 v_rel = s.velocity_km_s - omega.cross(r);
    const double vr = v_rel.norm();
    // 0.5 * rho[kg/m^3] * (Cd*A/m)[m^2/kg] * v^2 with v in km/s gives m/s^2
    // scaled by 1e6; dividing by 1e3 converts to km/s^2, hence the 500.
    const double coeff = 500.0 * rho * sc.drag_coefficient * sc.drag_area_m2 / sc.mass_kg;
    a -= v_rel * (coeff * vr);
  }

  return a;
}

std::vector<StateVector> propagate(const StateVector& s0, const SpacecraftProperties& sc,
                                   double dt_s, double duration_s, const ForceModel& model) {
  if (dt_s <= 0.0 || duration_s <= 0.0) {
    throw Error("propagation step and duration must be positive");
  }
  const long long steps = std::llround(duration_s / dt_s);
  if (steps < 1) throw Error("propagation duration is shorter than one step");

  std::vector<StateVector> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  out.push_back(s0);

  Vec3 r = s0.position_km, v = s0.velocity_km_s;
  for (long long i = 0; i < steps; ++i) {
    const UtcInstant t = s0.epoch + static_cast<double>(i) * dt_s;
    const auto acc = [&](const Vec3& rr, const Vec3& vv, double tau) {
      return acceleration({t + tau, rr, vv}, sc, model);
    };

    const Vec3 k1r = v;
    const Vec3 k1v = acc(r, v, 0.0);
    const Vec3 k2r = v + k1v * (dt_s / 2);
    const Vec3 k2v = acc(r + k1r * (dt_s / 2), v + k1v * (dt_s / 2), dt_s / 2);
    const Vec3 k3r = v + k2v * (dt_s / 2);
    const Vec3 k3v = acc(r + k2r * (dt_s / 2), v + k2v * (dt_s / 2), dt_s / 2);
    const Vec3 k4r = v + k3v * dt_s;
    const Vec3 k4v = acc(r + k3r * dt_s, v + k3v * dt_s, dt_s);

    r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (dt_s / 6.0);
    v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt_s / 6.0);
    out.push_back({s0.epoch + static_cast<double>(i + 1) * dt_s, r, v});
  }
  return out;
}

Vec3 sun_direction_eci(const UtcInstant& t) {
  const int y = t.year();
  if (y < 1950 || y > 2100) {
    throw EpochOutOfRange("solar ephemeris is only valid between 1950 and 2100");
  }
  // Low-precision solar position (Meeus-style truncated series), mean equinox
  // of date; adequate for lighting direction (~0.01 deg).
  const double T = (t.julian_date() - 2451545.0) / 36525.0;
  const double L0 = deg2rad(std::fmod(280.46646 + 36000.76983 * T + 0.0003032 * T * T, 360.0));
  const double M = deg2rad(std::fmod(357.52911 + 35999.05029 * T - 0.0001537 * T * T, 360.0));
  const double C = deg2rad((1.914602 - 0.004817 * T - 0.000014 * T * T) * std::sin(M) +
                           (0.019993 - 0.000101 * T) * std::sin(2.0 * M) +
                           0.000289 * std::sin(3.0 * M));
  const double lambda = L0 + C;  // true ecliptic longitude
  const double eps = deg2rad(23.439291111 - 0.013004167 * T);
  return Vec3{std::cos(lambda), std::sin(lambda) * std::cos(eps),
              std::sin(lambda) * std::sin(eps)}
      .normalized();
}

Mat3 lvlh_from_eci(const StateVector& s) {
  const Vec3 z = -s.position_km.normalized();
  const Vec3 h = s.position_km.cross(s.velocity_km_s);
  const Vec3 y = -h.normalized();
  const Vec3 x = y.cross(z);
  return Mat3::from_rows(x, y, z);
}

KeplerianElements elements_from_state(const StateVector& s) {
  const Vec3 r = s.position_km, v = s.velocity_km_s;
  const double rn = r.norm();
  const Vec3 h = r.cross(v);
  const Vec3 node = Vec3{0, 0, 1}.cross(h);

  KeplerianElements el;
  const double energy = 0.5 * v.squared_norm() - earth::kMuKm3S2 / rn;
  el.a_km = -earth::kMuKm3S2 / (2.0 * energy);

  const Vec3 e_vec = (r * (v.squared_norm() - earth::kMuKm3S2 / rn) - v * r.dot(v)) *
                     (1.0 / earth::kMuKm3S2);
  el.e = e_vec.norm();
  el.i_rad = std::acos(std::clamp(h.z / h.norm(), -1.0, 1.0));

  const double nn = node.norm();
  if (nn > 1e-12) {
    el.raan_rad = std::atan2(node.y, node.x);
    if (el.raan_rad < 0) el.raan_rad += 2 * kPi;
  }
  if (el.e > 1e-12 && nn > 1e-12) {
    el.argp_rad = std::acos(std::clamp(node.dot(e_vec) / (nn * el.e), -1.0, 1.0));
    if (e_vec.z < 0) el.argp_rad = 2 * kPi - el.argp_rad;
  }
  if (el.e > 1e-12) {
    el.true_anom_rad = std::acos(std::clamp(e_vec.dot(r) / (el.e * rn), -1.0, 1.0));
    if (r.dot(v) < 0) el.true_anom_rad = 2 * kPi - el.true_anom_rad;
  } else {
    el.true_anom_rad = std::atan2(r.dot(h.cross(node).normalized()), r.dot(node.normalized()));
  }
  return el;
}

void write_ephemeris_csv(const std::string& path, const std::vector<StateVector>& states) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  out << "epoch_iso8601,rx_km,ry_km,rz_km,vx_kms,vy_kms,vz_kms\n";
  char buf[256];
  for (const auto& s : states) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.9f,%.9f,%.9f\n",
                  s.epoch.iso8601().c_str(), s.position_km.x, s.position_km.y, s.position_km.z,
                  s.velocity_km_s.x, s.velocity_km_s.y, s.velocity_km_s.z);
    out << buf;
  }
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace dknav
