// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <variant>
#include <vector>

#include "grating/types.hpp"

namespace grating
{

// |beta_n| below this fraction of k is treated as a Wood anomaly.
inline constexpr double kWoodThreshold = 1e-8;

// Absolute floor used in relative residuals.
inline constexpr double kResidualFloor = 1e-30;

Vec2 alpha_n(const QuasiMomentum &momentum, ModeIndex n);

// Vertical wavenumber of a vacuum mode. Re >= 0, Im >= 0, exactly one of them nonzero.
class VerticalWavenumber
{
public:
  explicit VerticalWavenumber(cplx value) : value_(value) {}
  cplx value() const { return value_; }
  bool propagating() const { return value_.imag() == 0.0; }
  operator cplx() const { return value_; }

private:
  cplx value_;
};

// beta = sqrt(k^2 - |a|^2) or i sqrt(|a|^2 - k^2). Throws WoodAnomaly when |beta| < 1e-8 k.
VerticalWavenumber beta_n(double k, const Vec2 &alpha_n);

// Branch of sqrt(k2 - |a|^2) with Im >= 0 (and Re >= 0 when purely real) for a possibly
// lossy medium. For real k2 this coincides with beta_n.
cplx vertical_wavenumber(cplx k2, double alpha_sq);

// Vertical wavenumber in a medium with k^2 = k2, with the Wood check of beta_n.
cplx beta_in_medium(cplx k2, const Vec2 &alpha_n);

// Square truncation {n : max(|n1|, |n2|) <= order}, stored n2-major so that modes
// sharing n2 are contiguous.
class Truncation
{
public:
  explicit Truncation(int order);

  int order() const { return order_; }
  std::size_t size() const { return modes_.size(); }
  const std::vector<ModeIndex> &modes() const & { return modes_; }
  // By value on temporaries, so `for (auto n : Truncation(N).modes())` is safe.
  std::vector<ModeIndex> modes() && { return std::move(modes_); }
  bool contains(ModeIndex n) const;
  std::size_t index(ModeIndex n) const;

  // Modes ordered by increasing |n| (ties lexicographic), the summation order for series.
  std::vector<ModeIndex> by_increasing_norm() const;

private:
  int order_;
  std::vector<ModeIndex> modes_;
};

enum class Direction
{
  upward,
  downward
};

// Truncated Rayleigh series sum_n E_n exp(i alpha_n . x +/- i beta_n x3) in vacuum of
// wavenumber k. Upward fields are valid for x3 >= reference_height, downward ones for
// x3 <= reference_height.
struct RayleighField
{
  QuasiMomentum momentum;
  double k = 1.0;
  Direction direction = Direction::upward;
  std::map<ModeIndex, CVec3> coeffs;
  double reference_height = 0.0;

  // (alpha_n; +/- beta_n) for this field's direction.
  CVec3 wavevector(ModeIndex n) const;
};

// Tangential trace sum_n E_n exp(i alpha_n . x') on the plane x3 = height; e3 . E_n = 0.
struct TangentialTrace
{
  QuasiMomentum momentum;
  double height = 0.0;
  std::map<ModeIndex, CVec3> coeffs;

  // Stores (v1, v2, 0).
  void set(ModeIndex n, cplx v1, cplx v2) { coeffs[n] = CVec3(v1, v2, cplx(0.0)); }
  TangentialTrace &operator+=(const TangentialTrace &o);
  TangentialTrace &operator*=(cplx s);
};

struct PlaneOrder
{
  ModeIndex m;
  CVec3 p = CVec3::Zero();
};

struct DipoleSource
{
  Vec3 y0 = Vec3::Zero();
  Vec3 r = Vec3::Zero();
};

// Incidence int_{Gamma_h} G0(x, y) r(y) ds(y) for a band-limited tangential density
// r = sum_n r_n exp(i alpha_n . y') on x3 = height.
struct SuperpositionSource
{
  double height = 0.0;
  std::map<ModeIndex, CVec3> density;
};

using IncidentSpec = std::variant<PlaneOrder, DipoleSource, SuperpositionSource>;

// d = (cos t1 cos t2, cos t1 sin t2, -sin t1) and the matching momentum alpha = k (d1, d2).
Vec3 classical_direction(double theta1, double theta2);
QuasiMomentum momentum_from_angles(double k, double theta1, double theta2);

// curl curl[p exp(i alpha_m . x - i beta_m x3)] / k^2 as a single-mode downward field:
// p_m = p - [(alpha_m; -beta_m) . p / k^2] (alpha_m; -beta_m).
RayleighField incident_plane_field(ModeIndex m, const CVec3 &p, double k,
                                   const QuasiMomentum &momentum);

CVec3 rayleigh_evaluate(const RayleighField &field, const Vec3 &x);
CVec3 rayleigh_curl_evaluate(const RayleighField &field, const Vec3 &x);

// e3 x E and (curl E)_T of a Rayleigh field on the plane x3 = h.
TangentialTrace tangential_trace(const RayleighField &field, double h);
TangentialTrace curl_tangential_trace(const RayleighField &field, double h);

enum class SobolevFlavor
{
  plain,
  div,
  curl
};

double modal_sobolev_norm(const TangentialTrace &trace, double s, SobolevFlavor flavor);

// max_n |alpha_n . E_n +/- beta_n E_n3| / max(|E_n|, floor).
double divergence_residual(const RayleighField &field);

}  // namespace grating
