// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "grating/lattice_modes.hpp"

namespace grating
{

// Modal Dirichlet-to-Neumann map on Gamma_h = {x3 = h}: maps e3 x E of the outgoing
// solution above h to (e3 x curl E) x e3. Block-diagonal with one 2x2 block per mode.
class DtnOperator
{
public:
  DtnOperator(double k, QuasiMomentum momentum, double h, int truncation);

  double k() const { return k_; }
  const QuasiMomentum &momentum() const { return momentum_; }
  double height() const { return h_; }
  int truncation() const { return truncation_; }

  // Block acting on (g1, g2) of the trace coefficient g_n = e3 x E_n.
  Eigen::Matrix2cd block(ModeIndex n) const;

  TangentialTrace apply(const TangentialTrace &trace) const;

  // (2 pi)^2 sum_n (R g)_n . conj(g_n), the Parseval form of int_{Gamma_h} R g . conj(g).
  cplx quadratic_form(const TangentialTrace &trace) const;

private:
  void check(const TangentialTrace &trace) const;

  double k_;
  QuasiMomentum momentum_;
  double h_;
  int truncation_;
};

TangentialTrace dtn_apply(const DtnOperator &op, const TangentialTrace &trace);
cplx dtn_quadratic_form(const DtnOperator &op, const TangentialTrace &trace);

}  // namespace grating
