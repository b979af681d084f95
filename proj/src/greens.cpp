// SPDX-License-Identifier: Apache-2.0
#include "grating/greens.hpp"

#include <array>
#include <cmath>

#include "grating/errors.hpp"

namespace grating
{

namespace
{

constexpr double kInvEightPiSq = 1.0 / (8.0 * kPi * kPi);

// Modified-Helmholtz wavenumbers whose spectral terms are subtracted in the smooth-part
// evaluation; four moments of the large-|n| expansion are matched.
constexpr std::array<double, 4> kKummerKappa = {0.75, 1.25, 1.75, 2.25};

// Image shells |m|_inf <= kImageShells for the real-space modified-Helmholtz sums;
// exp(-0.75 * 2 pi * 10) ~ 3e-21.
constexpr int kImageShells = 10;

std::array<cplx, 4> kummer_weights(cplx k)
{
  // sum_j c_j (kappa_j^2)^p = (-k^2)^p, p = 0..3.
  Eigen::Matrix4cd v;
  Eigen::Vector4cd rhs;
  const cplx t0 = -k * k;
  for (int p = 0; p < 4; ++p)
  {
    for (int j = 0; j < 4; ++j)
    {
      v(p, j) = std::pow(kKummerKappa[j] * kKummerKappa[j], p);
    }
    rhs(p) = std::pow(t0, p);
  }
  const Eigen::Vector4cd c = v.partialPivLu().solve(rhs);
  return {c(0), c(1), c(2), c(3)};
}

// (exp(ikR) - exp(-kappa R)) / (4 pi R), continuous at R = 0.
cplx regularized_difference(cplx k, double kappa, double r)
{
  if (r < 1e-9)
  {
    return (kI * k + kappa) / (4.0 * kPi);
  }
  return (std::exp(kI * k * r) - std::exp(-kappa * r)) / (4.0 * kPi * r);
}

}  // namespace

void CompensatedSum::step(double &sum, double &comp, double v)
{
  const double t = sum + v;
  if (std::abs(sum) >= std::abs(v))
  {
    comp += (sum - t) + v;
  }
  else
  {
    comp += (v - t) + sum;
  }
  sum = t;
}

void CompensatedSum::add(cplx v)
{
  step(re_, cre_, v.real());
  step(im_, cim_, v.imag());
}

QuasiPeriodicGreen::QuasiPeriodicGreen(const GreenParams &params) : params_(params)
{
  if (params.truncation < 0)
  {
    throw InvalidArgument("Green's function truncation must be non-negative");
  }
  modes_ = Truncation(params.truncation).by_increasing_norm();
  alpha_.reserve(modes_.size());
  beta_.reserve(modes_.size());
  const cplx k2 = params.k * params.k;
  for (const auto n : modes_)
  {
    const Vec2 a = alpha_n(params.momentum, n);
    alpha_.push_back(a);
    beta_.push_back(beta_in_medium(k2, a));
  }
}

void QuasiPeriodicGreen::check_off_plane(const Vec3 &x, const Vec3 &y) const
{
  if (std::abs(x(2) - y(2)) < params_.plane_tolerance)
  {
    throw SourcePlane("spectral Green's series evaluated within " +
                      std::to_string(params_.plane_tolerance) + " of the source plane");
  }
}

cplx QuasiPeriodicGreen::scalar(const Vec3 &x, const Vec3 &y) const
{
  check_off_plane(x, y);
  const Vec3 d = x - y;
  const double dz = std::abs(d(2));
  CompensatedSum sum;
  for (std::size_t i = 0; i < modes_.size(); ++i)
  {
    const cplx b = beta_[i];
    const double ph = alpha_[i](0) * d(0) + alpha_[i](1) * d(1);
    sum.add(std::exp(kI * (ph + b * dz)) / (kI * b));
  }
  return kInvEightPiSq * sum.value();
}

CMat3 QuasiPeriodicGreen::dyadic(const Vec3 &x, const Vec3 &y) const
{
  check_off_plane(x, y);
  const Vec3 d = x - y;
  const double sign = d(2) > 0.0 ? 1.0 : -1.0;
  const cplx k2 = params_.k * params_.k;
  std::array<CompensatedSum, 9> sums;
  for (std::size_t i = 0; i < modes_.size(); ++i)
  {
    const cplx b = beta_[i];
    const CVec3 kv(alpha_[i](0), alpha_[i](1), sign * b);
    const cplx g = std::exp(kI * (alpha_[i](0) * d(0) + alpha_[i](1) * d(1) + b * std::abs(d(2)))) /
                   (kI * b);
    for (int r = 0; r < 3; ++r)
    {
      for (int c = 0; c < 3; ++c)
      {
        const cplx proj = (r == c ? 1.0 : 0.0) - kv(r) * kv(c) / k2;
        sums[3 * r + c].add(g * proj);
      }
    }
  }
  CMat3 out;
  for (int r = 0; r < 3; ++r)
  {
    for (int c = 0; c < 3; ++c)
    {
      out(r, c) = kInvEightPiSq * sums[3 * r + c].value();
    }
  }
  return out;
}

cplx QuasiPeriodicGreen::smooth_part(const Vec3 &x, const Vec3 &y) const
{
  const cplx k = params_.k;
  const auto c = kummer_weights(k);
  const Vec3 d = x - y;
  const double dz = std::abs(d(2));

  // Spectral remainder: G0 minus the weighted modified-Helmholtz series; terms decay
  // like |alpha_n|^-9 on the source plane.
  CompensatedSum spectral;
  for (std::size_t i = 0; i < modes_.size(); ++i)
  {
    const double a2 = alpha_[i].squaredNorm();
    cplx term = std::exp(kI * beta_[i] * dz) / (kI * beta_[i]);
    for (std::size_t j = 0; j < c.size(); ++j)
    {
      const double s = std::sqrt(a2 + kKummerKappa[j] * kKummerKappa[j]);
      term += c[j] * std::exp(-s * dz) / s;
    }
    const double ph = alpha_[i](0) * d(0) + alpha_[i](1) * d(1);
    spectral.add(term * std::exp(kI * ph));
  }

  // Closed form of the subtracted series: minus the image sums of exp(-kappa R)/(4 pi R).
  CompensatedSum images;
  const Vec2 &alpha = params_.momentum.alpha;
  for (int m2 = -kImageShells; m2 <= kImageShells; ++m2)
  {
    for (int m1 = -kImageShells; m1 <= kImageShells; ++m1)
    {
      if (m1 == 0 && m2 == 0)
      {
        continue;
      }
      const Vec3 shift(2.0 * kPi * m1, 2.0 * kPi * m2, 0.0);
      const double r = (d - shift).norm();
      const cplx bloch = std::exp(kI * (2.0 * kPi * (alpha(0) * m1 + alpha(1) * m2)));
      cplx acc = 0.0;
      for (std::size_t j = 0; j < c.size(); ++j)
      {
        acc += c[j] * std::exp(-kKummerKappa[j] * r);
      }
      images.add(-bloch * acc / (4.0 * kPi * r));
    }
  }

  // The m = 0 image combined with +exp(ikR)/(4 pi R); sum_j c_j = 1.
  const double r0 = d.norm();
  cplx local = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j)
  {
    local += c[j] * regularized_difference(k, kKummerKappa[j], r0);
  }
  return kInvEightPiSq * spectral.value() + images.value() + local;
}

cplx scalar_green(const Vec3 &x, const Vec3 &y, const GreenParams &params)
{
  return QuasiPeriodicGreen(params).scalar(x, y);
}

cplx scalar_green_smooth_part(const Vec3 &x, const Vec3 &y, const GreenParams &params)
{
  return QuasiPeriodicGreen(params).smooth_part(x, y);
}

cplx scalar_green_singular_part(const Vec3 &x, const Vec3 &y, cplx k)
{
  const double r = (x - y).norm();
  if (r == 0.0)
  {
    throw SourcePlane("singular part evaluated at the source point");
  }
  return -std::exp(kI * k * r) / (4.0 * kPi * r);
}

CMat3 dyadic_green(const Vec3 &x, const Vec3 &y, const GreenParams &params)
{
  return QuasiPeriodicGreen(params).dyadic(x, y);
}

std::vector<cplx> scalar_green_batch(std::span<const Vec3> xs, const Vec3 &y,
                                     const GreenParams &params, Execution exec)
{
  const QuasiPeriodicGreen green(params);
  std::vector<cplx> out(xs.size());
  const auto count = static_cast<std::ptrdiff_t>(xs.size());
  if (exec == Execution::parallel)
  {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      out[i] = green.scalar(xs[i], y);
    }
  }
  else
  {
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      out[i] = green.scalar(xs[i], y);
    }
  }
  return out;
}

std::vector<CMat3> dyadic_green_batch(std::span<const Vec3> xs, const Vec3 &y,
                                      const GreenParams &params, Execution exec)
{
  const QuasiPeriodicGreen green(params);
  std::vector<CMat3> out(xs.size());
  const auto count = static_cast<std::ptrdiff_t>(xs.size());
  if (exec == Execution::parallel)
  {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      out[i] = green.dyadic(xs[i], y);
    }
  }
  else
  {
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      out[i] = green.dyadic(xs[i], y);
    }
  }
  return out;
}

DipoleModeAmplitude dipole_mode_amplitude(ModeIndex n, const Vec3 &y, const Vec3 &r, cplx k,
                                          const QuasiMomentum &momentum)
{
  const Vec2 a = alpha_n(momentum, n);
  const cplx k2 = k * k;
  const cplx b = beta_in_medium(k2, a);
  const cplx g = kInvEightPiSq / (kI * b) * std::exp(-kI * (a(0) * y(0) + a(1) * y(1)));
  const CVec3 rc = to_complex(r);
  const CVec3 kup(a(0), a(1), b);
  const CVec3 kdown(a(0), a(1), -b);
  DipoleModeAmplitude out;
  out.n = n;
  out.beta = b;
  out.up = g * (rc - kup * (bilinear_dot(kup, rc) / k2));
  out.down = g * (rc - kdown * (bilinear_dot(kdown, rc) / k2));
  return out;
}

}  // namespace grating
