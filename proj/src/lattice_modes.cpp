// SPDX-License-Identifier: Apache-2.0
#include "grating/lattice_modes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "grating/errors.hpp"

namespace grating
{

Vec2 alpha_n(const QuasiMomentum &momentum, ModeIndex n)
{
  return {momentum.alpha(0) + n.n1, momentum.alpha(1) + n.n2};
}

VerticalWavenumber beta_n(double k, const Vec2 &a)
{
  if (!(k > 0.0))
  {
    throw InvalidArgument("beta_n: wavenumber must be positive");
  }
  const double a2 = a.squaredNorm();
  const double k2 = k * k;
  const cplx beta = a2 <= k2 ? cplx(std::sqrt(k2 - a2), 0.0) : cplx(0.0, std::sqrt(a2 - k2));
  if (std::abs(beta) < kWoodThreshold * k)
  {
    throw WoodAnomaly("Wood anomaly: |beta| = " + std::to_string(std::abs(beta)) +
                      " for |alpha_n| = " + std::to_string(std::sqrt(a2)));
  }
  return VerticalWavenumber(beta);
}

cplx vertical_wavenumber(cplx k2, double alpha_sq)
{
  const cplx z = k2 - alpha_sq;
  if (z.imag() == 0.0)
  {
    return z.real() >= 0.0 ? cplx(std::sqrt(z.real()), 0.0) : cplx(0.0, std::sqrt(-z.real()));
  }
  cplx w = std::sqrt(z);
  if (w.imag() < 0.0)
  {
    w = -w;
  }
  return w;
}

cplx beta_in_medium(cplx k2, const Vec2 &a)
{
  if (k2.imag() == 0.0 && k2.real() > 0.0)
  {
    return beta_n(std::sqrt(k2.real()), a).value();
  }
  const cplx beta = vertical_wavenumber(k2, a.squaredNorm());
  if (std::abs(beta) < kWoodThreshold * std::sqrt(std::abs(k2)))
  {
    throw WoodAnomaly("vertical wavenumber vanishes in medium");
  }
  return beta;
}

Truncation::Truncation(int order) : order_(order)
{
  if (order < 0)
  {
    throw InvalidArgument("truncation order must be non-negative");
  }
  modes_.reserve(static_cast<std::size_t>((2 * order + 1) * (2 * order + 1)));
  for (int n2 = -order; n2 <= order; ++n2)
  {
    for (int n1 = -order; n1 <= order; ++n1)
    {
      modes_.push_back({n1, n2});
    }
  }
}

bool Truncation::contains(ModeIndex n) const
{
  return std::abs(n.n1) <= order_ && std::abs(n.n2) <= order_;
}

std::size_t Truncation::index(ModeIndex n) const
{
  if (!contains(n))
  {
    throw InvalidArgument("mode outside truncation");
  }
  const int width = 2 * order_ + 1;
  return static_cast<std::size_t>((n.n2 + order_) * width + (n.n1 + order_));
}

std::vector<ModeIndex> Truncation::by_increasing_norm() const
{
  auto sorted = modes_;
  std::stable_sort(sorted.begin(), sorted.end(), [](ModeIndex a, ModeIndex b) {
    const int na = a.n1 * a.n1 + a.n2 * a.n2;
    const int nb = b.n1 * b.n1 + b.n2 * b.n2;
    return na != nb ? na < nb : a < b;
  });
  return sorted;
}

CVec3 RayleighField::wavevector(ModeIndex n) const
{
  const Vec2 a = alpha_n(momentum, n);
  const cplx beta = beta_n(k, a);
  const cplx sign = direction == Direction::upward ? 1.0 : -1.0;
  return {a(0), a(1), sign * beta};
}

TangentialTrace &TangentialTrace::operator+=(const TangentialTrace &o)
{
  for (const auto &[n, v] : o.coeffs)
  {
    auto it = coeffs.find(n);
    if (it == coeffs.end())
    {
      coeffs.emplace(n, v);
    }
    else
    {
      it->second += v;
    }
  }
  return *this;
}

TangentialTrace &TangentialTrace::operator*=(cplx s)
{
  for (auto &[n, v] : coeffs)
  {
    v *= s;
  }
  return *this;
}

Vec3 classical_direction(double theta1, double theta2)
{
  return {std::cos(theta1) * std::cos(theta2), std::cos(theta1) * std::sin(theta2),
          -std::sin(theta1)};
}

QuasiMomentum momentum_from_angles(double k, double theta1, double theta2)
{
  const Vec3 d = classical_direction(theta1, theta2);
  return {Vec2(k * d(0), k * d(1))};
}

RayleighField incident_plane_field(ModeIndex m, const CVec3 &p, double k,
                                   const QuasiMomentum &momentum)
{
  if (p.norm() == 0.0)
  {
    throw InvalidArgument("plane-order incidence needs a nonzero polarization");
  }
  RayleighField field;
  field.momentum = momentum;
  field.k = k;
  field.direction = Direction::downward;
  field.reference_height = std::numeric_limits<double>::infinity();
  const CVec3 kvec = field.wavevector(m);
  const CVec3 pm = p - (bilinear_dot(kvec, p) / (k * k)) * kvec;
  field.coeffs.emplace(m, pm);
  return field;
}

namespace
{

void check_half_space(const RayleighField &field, double x3)
{
  const bool ok = field.direction == Direction::upward ? x3 >= field.reference_height
                                                       : x3 <= field.reference_height;
  if (!ok)
  {
    throw WrongHalfSpace("Rayleigh field evaluated outside its half-space at x3 = " +
                         std::to_string(x3));
  }
}

cplx phase(const CVec3 &kvec, const Vec3 &x)
{
  return std::exp(kI * (kvec(0) * x(0) + kvec(1) * x(1) + kvec(2) * x(2)));
}

}  // namespace

CVec3 rayleigh_evaluate(const RayleighField &field, const Vec3 &x)
{
  check_half_space(field, x(2));
  CVec3 sum = CVec3::Zero();
  for (const auto &[n, e] : field.coeffs)
  {
    sum += e * phase(field.wavevector(n), x);
  }
  return sum;
}

CVec3 rayleigh_curl_evaluate(const RayleighField &field, const Vec3 &x)
{
  check_half_space(field, x(2));
  CVec3 sum = CVec3::Zero();
  for (const auto &[n, e] : field.coeffs)
  {
    const CVec3 kvec = field.wavevector(n);
    sum += (kI * cross(kvec, e)) * phase(kvec, x);
  }
  return sum;
}

TangentialTrace tangential_trace(const RayleighField &field, double h)
{
  check_half_space(field, h);
  TangentialTrace trace{field.momentum, h, {}};
  for (const auto &[n, e] : field.coeffs)
  {
    const CVec3 kvec = field.wavevector(n);
    const CVec3 v = e * std::exp(kI * kvec(2) * h);
    trace.set(n, -v(1), v(0));
  }
  return trace;
}

TangentialTrace curl_tangential_trace(const RayleighField &field, double h)
{
  check_half_space(field, h);
  TangentialTrace trace{field.momentum, h, {}};
  for (const auto &[n, e] : field.coeffs)
  {
    const CVec3 kvec = field.wavevector(n);
    const CVec3 f = (kI * cross(kvec, e)) * std::exp(kI * kvec(2) * h);
    trace.set(n, f(0), f(1));
  }
  return trace;
}

double modal_sobolev_norm(const TangentialTrace &trace, double s, SobolevFlavor flavor)
{
  double sum = 0.0;
  for (const auto &[n, e] : trace.coeffs)
  {
    const Vec2 a = alpha_n(trace.momentum, n);
    const CVec3 a3(a(0), a(1), 0.0);
    double term = e.squaredNorm();
    if (flavor == SobolevFlavor::div)
    {
      term += std::norm(bilinear_dot(e, a3));
    }
    else if (flavor == SobolevFlavor::curl)
    {
      term += cross(e, a3).squaredNorm();
    }
    sum += std::pow(1.0 + a.squaredNorm(), s) * term;
  }
  return std::sqrt(sum);
}

double divergence_residual(const RayleighField &field)
{
  double worst = 0.0;
  for (const auto &[n, e] : field.coeffs)
  {
    const double res = std::abs(bilinear_dot(field.wavevector(n), e));
    worst = std::max(worst, res / std::max(e.norm(), kResidualFloor));
  }
  return worst;
}

}  // namespace grating
