#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "spatial_cpf/error.hpp"

namespace spatial_cpf::geodesy {

struct ItmCoord {
  double easting = 0.0;
  double northing = 0.0;
};

struct GeoCoord {
  double latitude = 0.0;   // degrees
  double longitude = 0.0;  // degrees
};

/// Transverse Mercator parameters on an ellipsoid.
struct TmProjection {
  double semi_major_axis = 6378137.0;
  double inverse_flattening = 298.257222101;
  double lat_origin = 53.5;
  double lon_origin = -8.0;
  double scale_factor = 0.99982;
  double false_easting = 600000.0;
  double false_northing = 750000.0;

  /// Irish Transverse Mercator (EPSG:2157) on GRS80.
  static constexpr TmProjection itm() { return {}; }

  void validate() const {
    if (!(scale_factor > 0.9 && scale_factor < 1.1)) {
      throw ParameterError("scale_factor must lie in (0.9, 1.1)");
    }
    if (!(inverse_flattening > 0.0) || !(semi_major_axis > 0.0)) {
      throw ParameterError("ellipsoid axis and inverse flattening must be positive");
    }
  }
};

namespace detail {

inline constexpr int kOrder = 6;
inline constexpr double kDeg = std::numbers::pi / 180.0;

// Series coefficients of the Krüger expansion in the third flattening n,
// truncated at n^6.
struct KruegerSeries {
  double e = 0.0;        // first eccentricity
  double rect_a = 0.0;   // rectifying radius A
  std::array<double, kOrder + 1> alpha{};  // forward, 1-based
  std::array<double, kOrder + 1> beta{};   // inverse, 1-based
  double xi0 = 0.0;      // xi of the latitude of origin on the central meridian

  explicit KruegerSeries(const TmProjection& p) {
    const double f = 1.0 / p.inverse_flattening;
    const double n = f / (2.0 - f);
    const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
    e = std::sqrt(f * (2.0 - f));
    rect_a = p.semi_major_axis / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);

    alpha[1] = n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 +
               7891 * n6 / 37800;
    alpha[2] = 13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 -
               1983433 * n6 / 1935360;
    alpha[3] = 61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440;
    alpha[4] = 49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600;
    alpha[5] = 34729 * n5 / 80640 - 3418889 * n6 / 1995840;
    alpha[6] = 212378941 * n6 / 319334400;

    beta[1] = n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800;
    beta[2] = n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720;
    beta[3] = 17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720;
    beta[4] = 4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600;
    beta[5] = 4583 * n5 / 161280 - 108847 * n6 / 3991680;
    beta[6] = 20648693 * n6 / 638668800;

    const double tau0 = conformal_tan(std::tan(p.lat_origin * kDeg));
    xi0 = std::atan(tau0);
    for (int j = 1; j <= kOrder; ++j) xi0 += alpha[j] * std::sin(2 * j * std::atan(tau0));
  }

  // tan(conformal latitude) from tan(geodetic latitude).
  double conformal_tan(double tau) const {
    const double s = std::hypot(1.0, tau);
    const double sig = std::sinh(e * std::atanh(e * tau / s));
    return tau * std::hypot(1.0, sig) - sig * s;
  }

  // Inverse of conformal_tan by Newton iteration; converges to machine
  // precision in at most a few steps for terrestrial latitudes.
  double geodetic_tan(double taup) const {
    const double e2m = 1.0 - e * e;
    double tau = taup / e2m;
    for (int it = 0; it < 8; ++it) {
      const double taupa = conformal_tan(tau);
      const double dtau = (taup - taupa) * (1.0 + e2m * tau * tau) /
                          (e2m * std::hypot(1.0, tau) * std::hypot(1.0, taupa));
      tau += dtau;
      if (!(std::abs(dtau) >= 1e-15 * std::max(1.0, std::abs(tau)))) break;
    }
    return tau;
  }
};

}  // namespace detail

/// Geographic (WGS84 / ETRS89 treated as identical) to projected coordinates.
inline ItmCoord wgs84_to_itm(const GeoCoord& c, const TmProjection& p = TmProjection::itm()) {
  if (!(std::isfinite(c.latitude) && std::isfinite(c.longitude)) ||
      !(c.latitude > 45.0 && c.latitude < 60.0) || !(c.longitude > -15.0 && c.longitude < 0.0)) {
    throw DomainError("geographic coordinate (" + std::to_string(c.latitude) + ", " +
                      std::to_string(c.longitude) +
                      ") outside the projection window lat (45, 60), lon (-15, 0)");
  }
  p.validate();
  const detail::KruegerSeries s(p);
  const double lam = (c.longitude - p.lon_origin) * detail::kDeg;
  const double taup = s.conformal_tan(std::tan(c.latitude * detail::kDeg));
  const double xip = std::atan2(taup, std::cos(lam));
  const double etap = std::asinh(std::sin(lam) / std::hypot(taup, std::cos(lam)));
  double xi = xip;
  double eta = etap;
  for (int j = 1; j <= detail::kOrder; ++j) {
    xi += s.alpha[j] * std::sin(2 * j * xip) * std::cosh(2 * j * etap);
    eta += s.alpha[j] * std::cos(2 * j * xip) * std::sinh(2 * j * etap);
  }
  const double k0a = p.scale_factor * s.rect_a;
  return {p.false_easting + k0a * eta, p.false_northing + k0a * (xi - s.xi0)};
}

/// Projected to geographic coordinates.
inline GeoCoord itm_to_wgs84(const ItmCoord& c, const TmProjection& p = TmProjection::itm()) {
  if (!(std::isfinite(c.easting) && std::isfinite(c.northing)) ||
      !(c.easting >= 0.0 && c.easting <= 1.2e6) || !(c.northing >= 0.0 && c.northing <= 1.5e6)) {
    throw DomainError("ITM coordinate (" + std::to_string(c.easting) + ", " +
                      std::to_string(c.northing) + ") outside the sanity bounds for Ireland");
  }
  p.validate();
  const detail::KruegerSeries s(p);
  const double k0a = p.scale_factor * s.rect_a;
  const double xi = (c.northing - p.false_northing) / k0a + s.xi0;
  const double eta = (c.easting - p.false_easting) / k0a;
  double xip = xi;
  double etap = eta;
  for (int j = 1; j <= detail::kOrder; ++j) {
    xip -= s.beta[j] * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
    etap -= s.beta[j] * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
  }
  const double taup = std::sin(xip) / std::hypot(std::sinh(etap), std::cos(xip));
  const double lam = std::atan2(std::sinh(etap), std::cos(xip));
  const double tau = s.geodetic_tan(taup);
  return {std::atan(tau) / detail::kDeg, p.lon_origin + lam / detail::kDeg};
}

}  // namespace spatial_cpf::geodesy
