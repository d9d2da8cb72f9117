#include "geotoken/spherical_encoding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geotoken/errors.hpp"

namespace geotoken::encoding {

namespace {

constexpr double kHalfPi = kPi / 2.0;
// deg * pi / 180 can overshoot pi/2 by an ulp for 90 degrees.
constexpr double kLatitudeSlack = 1e-12;

void require_even_dim(std::size_t dim, const char* what) {
  if (dim == 0 || dim % 2 != 0) {
    throw InvalidDimensionError(std::string(what) + ": dimension must be even and positive, got " +
                                std::to_string(dim));
  }
}

}  // namespace

double degrees_to_radians(double deg) { return deg * kPi / 180.0; }

double wrap_angle(double rad) {
  if (rad >= -kPi && rad < kPi) return rad;
  double wrapped = std::fmod(rad + kPi, 2.0 * kPi);
  if (wrapped < 0.0) wrapped += 2.0 * kPi;
  wrapped -= kPi;
  // fmod can land exactly on +pi after the shift.
  if (wrapped >= kPi) wrapped -= 2.0 * kPi;
  return wrapped;
}

GeoAngles::GeoAngles(double lat_phi, double lon_theta) {
  if (!std::isfinite(lat_phi) || !std::isfinite(lon_theta)) {
    throw DomainError("GeoAngles: non-finite angle");
  }
  if (std::abs(lat_phi) > kHalfPi + kLatitudeSlack) {
    throw DomainError("GeoAngles: latitude " + std::to_string(lat_phi) + " rad outside [-pi/2, pi/2]");
  }
  lat_phi_ = std::clamp(lat_phi, -kHalfPi, kHalfPi);
  lon_theta_ = wrap_angle(lon_theta);
}

GeoAngles GeoAngles::from_degrees(double lat_deg, double lon_deg) {
  return GeoAngles(degrees_to_radians(lat_deg), degrees_to_radians(lon_deg));
}

RotationBlock3 RotationBlock3::identity() { return RotationBlock3({1, 0, 0, 0, 1, 0, 0, 0, 1}); }

RotationBlock3 RotationBlock3::transposed() const {
  const auto& m = m_;
  return RotationBlock3({m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]});
}

RotationBlock3 RotationBlock3::operator*(const RotationBlock3& rhs) const {
  std::array<double, 9> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += (*this)(i, k) * rhs(k, j);
      out[i * 3 + j] = acc;
    }
  }
  return RotationBlock3(out);
}

double RotationBlock3::determinant() const {
  const auto& m = m_;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void RotationBlock3::apply(std::span<const double> in, std::span<double> out) const {
  const double x = in[0], y = in[1], z = in[2];
  out[0] = m_[0] * x + m_[1] * y + m_[2] * z;
  out[1] = m_[3] * x + m_[4] * y + m_[5] * z;
  out[2] = m_[6] * x + m_[7] * y + m_[8] * z;
}

void RotationBlock3::apply_transpose(std::span<const double> in, std::span<double> out) const {
  const double x = in[0], y = in[1], z = in[2];
  out[0] = m_[0] * x + m_[3] * y + m_[6] * z;
  out[1] = m_[1] * x + m_[4] * y + m_[7] * z;
  out[2] = m_[2] * x + m_[5] * y + m_[8] * z;
}

std::vector<double> sinusoidal_encoding(std::size_t pos, std::size_t dim) {
  require_even_dim(dim, "sinusoidal_encoding");
  std::vector<double> out(dim);
  const auto p = static_cast<double>(pos);
  for (std::size_t t = 0; 2 * t < dim; ++t) {
    const double angle = p / std::pow(10000.0, static_cast<double>(2 * t) / static_cast<double>(dim));
    out[2 * t] = std::sin(angle);
    out[2 * t + 1] = std::cos(angle);
  }
  return out;
}

RopeFrequencies RopeFrequencies::for_dim(std::size_t dim) {
  require_even_dim(dim, "rope_frequencies");
  std::vector<double> thetas(dim / 2);
  for (std::size_t i = 1; i <= dim / 2; ++i) {
    const double exponent = -static_cast<double>(2 * i - 1) / static_cast<double>(dim);
    thetas[i - 1] = std::pow(10000.0, exponent);
  }
  return RopeFrequencies(std::move(thetas));
}

RopeFrequencies RopeFrequencies::from_thetas(std::vector<double> thetas) {
  if (thetas.empty()) throw InvalidDimensionError("RopeFrequencies: no angles");
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (!(thetas[i] > 0.0) || (i > 0 && !(thetas[i] < thetas[i - 1]))) {
      throw DomainError("RopeFrequencies: angles must be positive and strictly decreasing");
    }
  }
  return RopeFrequencies(std::move(thetas));
}

std::vector<double> rope_rotate(std::span<const double> x, std::size_t m,
                                const RopeFrequencies& freqs) {
  if (x.size() != freqs.dim()) {
    throw InvalidDimensionError("rope_rotate: vector has " + std::to_string(x.size()) +
                                " entries, frequencies expect " + std::to_string(freqs.dim()));
  }
  std::vector<double> out(x.size());
  const auto pos = static_cast<double>(m);
  for (std::size_t t = 0; t < freqs.thetas().size(); ++t) {
    const double angle = pos * freqs.thetas()[t];
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = x[2 * t], b = x[2 * t + 1];
    out[2 * t] = c * a - s * b;
    out[2 * t + 1] = s * a + c * b;
  }
  return out;
}

RotationBlock3 euler_rotation(double phi, double psi, double theta) {
  phi = wrap_angle(phi);
  psi = wrap_angle(psi);
  theta = wrap_angle(theta);
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double cp = std::cos(psi), sp = std::sin(psi);
  const double ct = std::cos(theta), st = std::sin(theta);
  return RotationBlock3({
      cp * ct, -cf * st + sf * sp * ct, sf * st + cf * sp * ct,  //
      cp * st, cf * ct + sf * sp * st, -sf * ct + cf * sp * st,  //
      -sp, sf * cp, cf * cp,
  });
}

RotationBlock3 spherical_block(const GeoAngles& angles) {
  // Same closed form as euler_rotation(phi, 0, theta); the printed
  // block-diagonal variant's row-2 signs are not orthogonal, so the blocks
  // are always taken from this matrix.
  return euler_rotation(angles.lat_phi(), 0.0, angles.lon_theta());
}

GeoRotary::GeoRotary(std::size_t dim) : dim_(dim) {
  if (dim == 0 || dim % 3 != 0) {
    throw InvalidDimensionError("GeoRotary: dimension must be a positive multiple of 3, got " +
                                std::to_string(dim));
  }
}

void GeoRotary::check(std::span<const double> x, std::span<double> out) const {
  if (x.size() != dim_ || out.size() != dim_) {
    throw InvalidDimensionError("GeoRotary: expected " + std::to_string(dim_) + " entries, got " +
                                std::to_string(x.size()));
  }
}

void GeoRotary::apply(std::span<const double> x, const RotationBlock3& block,
                      std::span<double> out) const {
  check(x, out);
  for (std::size_t i = 0; i < dim_; i += 3) block.apply(x.subspan(i, 3), out.subspan(i, 3));
}

void GeoRotary::apply_transpose(std::span<const double> x, const RotationBlock3& block,
                                std::span<double> out) const {
  check(x, out);
  for (std::size_t i = 0; i < dim_; i += 3) block.apply_transpose(x.subspan(i, 3), out.subspan(i, 3));
}

std::vector<double> apply_geo_rotation(std::span<const double> x, const GeoAngles& angles,
                                       const GeoRotary& rot) {
  std::vector<double> out(x.size());
  rot.apply(x, spherical_block(angles), out);
  return out;
}

double geo_attention_score(std::span<const double> q, std::span<const double> k,
                           const GeoAngles& aq, const GeoAngles& ak, const GeoRotary& rot) {
  if (q.size() != k.size()) {
    throw InvalidDimensionError("geo_attention_score: query and key lengths differ");
  }
  const auto rq = apply_geo_rotation(q, aq, rot);
  const auto rk = apply_geo_rotation(k, ak, rot);
  double acc = 0.0;
  for (std::size_t i = 0; i < rq.size(); ++i) acc += rq[i] * rk[i];
  return acc;
}

}  // namespace geotoken::encoding
