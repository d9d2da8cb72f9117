#pragma once

// Position encodings: the classic sinusoidal table, 1-D rotary encoding, and
// the spherical rotary encoding that rotates each consecutive triple of an
// embedding by Rz(longitude) * Rx(latitude).

#include <array>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace geotoken::encoding {

inline constexpr double kPi = std::numbers::pi;

double degrees_to_radians(double deg);

// Wraps an angle in radians into [-pi, pi).
double wrap_angle(double rad);

/// A point on the sphere, in radians. `lat_phi` drives the x-axis rotation,
/// `lon_theta` the z-axis rotation.
class GeoAngles {
 public:
  GeoAngles() = default;

  /// Throws DomainError if |lat| exceeds pi/2 (beyond rounding slack).
  /// Longitude is wrapped into [-pi, pi).
  GeoAngles(double lat_phi, double lon_theta);

  static GeoAngles from_degrees(double lat_deg, double lon_deg);

  double lat_phi() const { return lat_phi_; }
  double lon_theta() const { return lon_theta_; }

  friend bool operator==(const GeoAngles&, const GeoAngles&) = default;

 private:
  double lat_phi_ = 0.0;
  double lon_theta_ = 0.0;
};

/// Row-major 3x3 matrix; orthonormal with det +1 when produced by
/// euler_rotation() or spherical_block().
class RotationBlock3 {
 public:
  RotationBlock3() = default;
  explicit RotationBlock3(const std::array<double, 9>& m) : m_(m) {}

  static RotationBlock3 identity();

  double operator()(std::size_t row, std::size_t col) const { return m_[row * 3 + col]; }
  const std::array<double, 9>& values() const { return m_; }

  RotationBlock3 transposed() const;
  RotationBlock3 operator*(const RotationBlock3& rhs) const;
  double determinant() const;

  // out = M * in, for 3-element spans.
  void apply(std::span<const double> in, std::span<double> out) const;
  // out = M^T * in.
  void apply_transpose(std::span<const double> in, std::span<double> out) const;

  friend bool operator==(const RotationBlock3&, const RotationBlock3&) = default;

 private:
  std::array<double, 9> m_{};
};

// ---------------------------------------------------------------------------
// Reference encoders

/// Absolute sinusoidal encoding: entry 2t is sin(pos / 10000^(2t/dim)),
/// entry 2t+1 the matching cosine.
std::vector<double> sinusoidal_encoding(std::size_t pos, std::size_t dim);

/// Per-pair rotary angles theta_i = 10000^(-(2i-1)/dim), i = 1..dim/2.
class RopeFrequencies {
 public:
  static RopeFrequencies for_dim(std::size_t dim);
  /// Custom angles; must be positive and strictly decreasing.
  static RopeFrequencies from_thetas(std::vector<double> thetas);

  std::size_t dim() const { return 2 * thetas_.size(); }
  const std::vector<double>& thetas() const { return thetas_; }

 private:
  explicit RopeFrequencies(std::vector<double> thetas) : thetas_(std::move(thetas)) {}
  std::vector<double> thetas_;
};

inline RopeFrequencies rope_frequencies(std::size_t dim) { return RopeFrequencies::for_dim(dim); }

/// Rotates each pair (x[2t], x[2t+1]) by m * thetas[t].
std::vector<double> rope_rotate(std::span<const double> x, std::size_t m,
                                const RopeFrequencies& freqs);

// ---------------------------------------------------------------------------
// Spherical rotary encoding

/// Full Euler rotation with phi, psi, theta about the x, y, z axes.
RotationBlock3 euler_rotation(double phi, double psi, double theta);

/// Euler rotation with psi = 0, i.e. Rz(lon) * Rx(lat).
RotationBlock3 spherical_block(const GeoAngles& angles);

/// Block-diagonal spherical rotation for an embedding of `dim` coordinates.
class GeoRotary {
 public:
  /// Throws InvalidDimensionError unless dim is a positive multiple of 3.
  explicit GeoRotary(std::size_t dim);

  std::size_t dim() const { return dim_; }

  /// Rotates every consecutive triple of `x` by spherical_block(angles) in
  /// O(dim). `out` may alias `x`.
  void apply(std::span<const double> x, const RotationBlock3& block, std::span<double> out) const;
  void apply_transpose(std::span<const double> x, const RotationBlock3& block,
                       std::span<double> out) const;

 private:
  void check(std::span<const double> x, std::span<double> out) const;
  std::size_t dim_;
};

std::vector<double> apply_geo_rotation(std::span<const double> x, const GeoAngles& angles,
                                       const GeoRotary& rot);

/// <R(aq) q, R(ak) k>.
double geo_attention_score(std::span<const double> q, std::span<const double> k,
                           const GeoAngles& aq, const GeoAngles& ak, const GeoRotary& rot);

}  // namespace geotoken::encoding
