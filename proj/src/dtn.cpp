// SPDX-License-Identifier: Apache-2.0
#include "grating/dtn.hpp"

#include <cmath>

#include "grating/errors.hpp"

namespace grating
{

DtnOperator::DtnOperator(double k, QuasiMomentum momentum, double h, int truncation)
    : k_(k), momentum_(momentum), h_(h), truncation_(truncation)
{
  if (!(k > 0.0))
  {
    throw InvalidArgument("DtN wavenumber must be positive");
  }
}

Eigen::Matrix2cd DtnOperator::block(ModeIndex n) const
{
  // E_T = (g2, -g1), E3 = -(a . E_T) / beta, R g = i (K x E)_T with K = (a; beta).
  const Vec2 a = alpha_n(momentum_, n);
  const cplx b = beta_n(k_, a);
  const double ax = a(0), ay = a(1);
  // [Ex; Ey] = J [g1; g2]
  Eigen::Matrix2cd j;
  j << 0.0, 1.0, -1.0, 0.0;
  // F_T = i [[-ax ay / b, -(ay^2 / b + b)], [b + ax^2 / b, ax ay / b]] E_T
  Eigen::Matrix2cd m;
  m << -ax * ay / b, -(ay * ay / b + b), b + ax * ax / b, ax * ay / b;
  return kI * m * j;
}

void DtnOperator::check(const TangentialTrace &trace) const
{
  if (!(trace.momentum == momentum_) || std::abs(trace.height - h_) > 1e-12 * (1.0 + std::abs(h_)))
  {
    throw InvalidArgument("trace momentum or height does not match the DtN operator");
  }
}

TangentialTrace DtnOperator::apply(const TangentialTrace &trace) const
{
  check(trace);
  TangentialTrace out{momentum_, h_, {}};
  for (const auto &[n, g] : trace.coeffs)
  {
    const CVec2 v = block(n) * CVec2(g(0), g(1));
    out.set(n, v(0), v(1));
  }
  return out;
}

cplx DtnOperator::quadratic_form(const TangentialTrace &trace) const
{
  check(trace);
  cplx sum = 0.0;
  for (const auto &[n, g] : trace.coeffs)
  {
    const CVec2 gt(g(0), g(1));
    const CVec2 v = block(n) * gt;
    sum += v(0) * std::conj(gt(0)) + v(1) * std::conj(gt(1));
  }
  return 4.0 * kPi * kPi * sum;
}

TangentialTrace dtn_apply(const DtnOperator &op, const TangentialTrace &trace)
{
  return op.apply(trace);
}

cplx dtn_quadratic_form(const DtnOperator &op, const TangentialTrace &trace)
{
  return op.quadratic_form(trace);
}

}  // namespace grating
