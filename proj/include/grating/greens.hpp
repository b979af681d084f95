// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "grating/lattice_modes.hpp"
#include "grating/types.hpp"

namespace grating
{

// Parameters of the quasi-periodic Green's function
//   G0(x, y) = 1/(8 pi^2) sum_n exp(i alpha_n . (x - y) + i beta_n |x3 - y3|) / (i beta_n).
// k may be complex (lossy medium); beta_n then takes the Im >= 0 branch.
struct GreenParams
{
  cplx k{1.0, 0.0};
  QuasiMomentum momentum;
  int truncation = 30;
  // The spectral series is only evaluated with |x3 - y3| >= plane_tolerance.
  double plane_tolerance = 1e-2;
};

// Kahan-Babuska compensated complex accumulator.
class CompensatedSum
{
public:
  void add(cplx v);
  cplx value() const { return {re_ + cre_, im_ + cim_}; }

private:
  static void step(double &sum, double &comp, double v);
  double re_ = 0.0, im_ = 0.0, cre_ = 0.0, cim_ = 0.0;
};

// Precomputed spectral data (alpha_n, beta_n) in order of increasing |n|.
class QuasiPeriodicGreen
{
public:
  explicit QuasiPeriodicGreen(const GreenParams &params);

  const GreenParams &params() const { return params_; }

  cplx scalar(const Vec3 &x, const Vec3 &y) const;
  CMat3 dyadic(const Vec3 &x, const Vec3 &y) const;

  // a(x - y) = G0(x, y) - S(x, y) where S = -exp(ik|x - y|)/(4 pi |x - y|) is the
  // singular part carried by this normalization of the series. Finite at x = y.
  cplx smooth_part(const Vec3 &x, const Vec3 &y) const;

  cplx beta(std::size_t i) const { return beta_[i]; }
  const std::vector<ModeIndex> &modes() const { return modes_; }

private:
  void check_off_plane(const Vec3 &x, const Vec3 &y) const;

  GreenParams params_;
  std::vector<ModeIndex> modes_;
  std::vector<Vec2> alpha_;
  std::vector<cplx> beta_;
};

cplx scalar_green(const Vec3 &x, const Vec3 &y, const GreenParams &params);
cplx scalar_green_smooth_part(const Vec3 &x, const Vec3 &y, const GreenParams &params);
// -exp(ik|x - y|)/(4 pi |x - y|); scalar_green = singular part + smooth part.
cplx scalar_green_singular_part(const Vec3 &x, const Vec3 &y, cplx k);

// G(x, y) = G0 I + k^-2 grad_x div_x (G0 I), summed term by term.
CMat3 dyadic_green(const Vec3 &x, const Vec3 &y, const GreenParams &params);

std::vector<cplx> scalar_green_batch(std::span<const Vec3> xs, const Vec3 &y,
                                     const GreenParams &params,
                                     Execution exec = Execution::parallel);
std::vector<CMat3> dyadic_green_batch(std::span<const Vec3> xs, const Vec3 &y,
                                      const GreenParams &params,
                                      Execution exec = Execution::parallel);

// Modal amplitudes of the dipole field G(., y) r on the source plane x3 = y3:
//   x3 > y3: sum_n up_n exp(i alpha_n . x' + i beta_n (x3 - y3)),
//   x3 < y3: sum_n down_n exp(i alpha_n . x' - i beta_n (x3 - y3)).
struct DipoleModeAmplitude
{
  ModeIndex n;
  cplx beta;
  CVec3 up;
  CVec3 down;
};

DipoleModeAmplitude dipole_mode_amplitude(ModeIndex n, const Vec3 &y, const Vec3 &r,
                                          cplx k, const QuasiMomentum &momentum);

}  // namespace grating
