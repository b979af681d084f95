// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>

#include "grating/forward_solver.hpp"

// Reference solvers for plane-order incidence built directly from the first-order
// Maxwell system psi' = M psi, psi = (E1, E2, F1, F2) with F = curl E. They share no
// code with the library solver beyond the public config types.
namespace oracle
{

using grating::CVec3;
using grating::ModeIndex;

// Upward scattered coefficients (referenced at x3 = 0) of the modes coupled to m.
using Coefficients = std::map<ModeIndex, CVec3>;

// Global Pade(2,2) finite-difference discretization on `intervals` steps over [c, b].
Coefficients fd_plane_response(const grating::GratingConfig &config,
                               const grating::MaterialProfile &material,
                               const grating::PlaneOrder &incidence, int intervals = 512);

// Per-layer eigenmode amplitudes with every interface condition in one dense system.
Coefficients monolithic_plane_response(const grating::GratingConfig &config,
                                       const grating::MaterialProfile &material,
                                       const grating::PlaneOrder &incidence);

// max_n |a_n - b_n| / max_n |b_n| over the modes in b.
double coefficient_error(const Coefficients &a, const Coefficients &b);

}  // namespace oracle
