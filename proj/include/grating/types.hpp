// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace grating
{

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using CVec2 = Eigen::Vector2cd;
using CVec3 = Eigen::Vector3cd;
using CMat3 = Eigen::Matrix3cd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr cplx kI{0.0, 1.0};

// Integer lattice index n = (n1, n2) of a quasi-periodic mode.
struct ModeIndex
{
  int n1 = 0;
  int n2 = 0;

  auto operator<=>(const ModeIndex &) const = default;
  ModeIndex operator-() const { return {-n1, -n2}; }
};

// Bloch phase alpha = (alpha1, alpha2). Period is fixed to 2*pi in both directions.
struct QuasiMomentum
{
  Vec2 alpha = Vec2::Zero();

  // alpha~ = -alpha; applying it twice returns the original.
  QuasiMomentum conjugate() const { return {-alpha}; }
  bool operator==(const QuasiMomentum &o) const { return alpha == o.alpha; }
};

// Sequential or OpenMP-parallel execution of data-parallel kernels. Both produce
// bitwise-identical results; the serial path is the reference.
enum class Execution
{
  serial,
  parallel
};

inline CVec3 to_complex(const Vec3 &v)
{
  return v.cast<cplx>();
}

// Non-conjugating bilinear dot product a . b.
inline cplx bilinear_dot(const CVec3 &a, const CVec3 &b)
{
  return a(0) * b(0) + a(1) * b(1) + a(2) * b(2);
}

// Non-conjugating cross product; Eigen's cross() conjugates complex results.
inline CVec3 cross(const CVec3 &a, const CVec3 &b)
{
  return {a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0)};
}

}  // namespace grating
