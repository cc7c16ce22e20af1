#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dknav/errors.hpp"
#include "dknav/vec.hpp"

// Absolute-orbit side of the toolkit: TLE ingest, Keplerian element
// conversion, numerical propagation with J2 and exponential-atmosphere drag,
// a low-precision solar ephemeris and the LVLH frame used for nadir pointing.
//
// Units: km, km/s, km/s^2, radians internally (degrees only at interfaces
// that mirror the TLE format), seconds for time.

namespace dknav {

class TleFormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumMismatch : public TleFormatError {
 public:
  using TleFormatError::TleFormatError;
};

class KeplerNonConvergence : public Error {
 public:
  using Error::Error;
};

class BelowSurface : public Error {
 public:
  using Error::Error;
};

class EpochOutOfRange : public Error {
 public:
  using Error::Error;
};

namespace earth {
constexpr double kMuKm3S2 = 398600.4418;       // gravitational parameter
constexpr double kRadiusKm = 6378.137;         // equatorial radius
constexpr double kJ2 = 1.08262668e-3;          // oblateness coefficient
constexpr double kOmegaRadS = 7.2921159e-5;    // rotation rate
// Exponential atmosphere anchored at 700 km altitude.
constexpr double kAtmRho0KgM3 = 3.614e-13;
constexpr double kAtmH0Km = 700.0;
constexpr double kAtmScaleHeightKm = 88.667;
}  // namespace earth

// UTC instant as seconds since 1970-01-01T00:00:00Z (leap seconds ignored;
// the toolkit needs millisecond-level consistency, not absolute UT1).
struct UtcInstant {
  double unix_s = 0.0;

  static UtcInstant from_ymd(int year, int month, int day, double second_of_day = 0.0);
  // TLE convention: fractional day-of-year, 1.0 == Jan 1 00:00:00.
  static UtcInstant from_year_doy(int year, double day_of_year);

  double julian_date() const { return unix_s / 86400.0 + 2440587.5; }
  UtcInstant operator+(double seconds) const { return {unix_s + seconds}; }
  double operator-(const UtcInstant& o) const { return unix_s - o.unix_s; }

  // e.g. "2024-03-20T12:00:00.000Z"
  std::string iso8601() const;

  int year() const;
  // Fractional day-of-year in the TLE convention.
  double day_of_year() const;
};

struct TwoLineElements {
  int catalog_number = 0;
  std::string intl_designator;  // columns 10-17 of line 1, trimmed
  UtcInstant epoch;
  double inclination_deg = 0.0;
  double raan_deg = 0.0;
  double eccentricity = 0.0;
  double arg_perigee_deg = 0.0;
  double mean_anomaly_deg = 0.0;
  double mean_motion_rev_day = 0.0;
  double bstar = 0.0;  // 1/earth-radii, packed-decimal field
  int element_set_number = 0;
  int rev_number = 0;

  double semi_major_axis_km() const;
};

// Modulo-10 checksum over the first 68 columns: digits count as their value,
// '-' counts as 1, everything else as 0.
int tle_checksum(const std::string& line);

// Strict fixed-column parse of a two-line element set.  Throws
// ChecksumMismatch or TleFormatError.
TwoLineElements parse_tle(const std::string& line1, const std::string& line2);

// Inverse of parse_tle; checksums are recomputed.  parse_tle(render_tle(e))
// reproduces e to field precision.
std::pair<std::string, std::string> render_tle(const TwoLineElements& e);

// Reads a TLE file, skipping blank lines and name/header lines.
std::vector<TwoLineElements> read_tle_file(const std::string& path);

struct StateVector {
  UtcInstant epoch;
  Vec3 position_km;
  Vec3 velocity_km_s;
};

struct SpacecraftProperties {
  double mass_kg = 420.0;
  double drag_area_m2 = 1.8;
  double drag_coefficient = 2.2;
};

// Individual force-model switches; defaults cover the full model.  Tests use
// reduced models to check conservation laws term by term.
struct ForceModel {
  bool j2 = true;
  bool drag = true;
};

// Solves E - e*sin(E) = M by Newton iteration, tolerance 1e-12, at most 50
// iterations.  Angles in radians; returns E in (-pi, pi] + 2k*pi of M.
double solve_kepler(double mean_anomaly_rad, double eccentricity);

// Treats the TLE mean elements as osculating Keplerian elements at epoch and
// converts them to an ECI state vector.
StateVector tle_to_state(const TwoLineElements& e);

// Total acceleration in km/s^2: two-body gravity, J2 oblateness and drag
// against an exponential atmosphere co-rotating with the Earth.  Throws
// BelowSurface when the position is inside the Earth.
Vec3 acceleration(const StateVector& s, const SpacecraftProperties& sc,
                  const ForceModel& model = {});

// Fixed-step RK4.  Returns round(duration/dt)+1 states including the initial
// one; dt and duration must be positive.
std::vector<StateVector> propagate(const StateVector& s0, const SpacecraftProperties& sc,
                                   double dt_s, double duration_s,
                                   const ForceModel& model = {});

// Unit vector from Earth centre to the Sun in ECI, low-precision analytic
// ephemeris (valid 1950-2100, else EpochOutOfRange).  Accuracy ~0.01 deg.
Vec3 sun_direction_eci(const UtcInstant& t);

// Rotation ECI->LVLH as a DCM whose rows are the LVLH basis vectors in ECI:
// z = -r_hat (nadir), y = -h_hat (negative orbit normal), x = y cross z
// (close to the velocity direction for near-circular orbits).
Mat3 lvlh_from_eci(const StateVector& s);

// Osculating Keplerian elements recovered from a state vector; used to track
// secular drifts.  Returns {a_km, e, i_rad, raan_rad, argp_rad, true_anom_rad}.
struct KeplerianElements {
  double a_km = 0, e = 0, i_rad = 0, raan_rad = 0, argp_rad = 0, true_anom_rad = 0;
};
KeplerianElements elements_from_state(const StateVector& s);

// CSV with header epoch_iso8601,rx_km,ry_km,rz_km,vx_kms,vy_kms,vz_kms.
void write_ephemeris_csv(const std::string& path, const std::vector<StateVector>& states);

}  // namespace dknav
