// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "grating/forward_solver.hpp"

namespace grating
{

inline constexpr double kReciprocityFloor = 1e-14;

// |a - b| / max(|a|, |b|); zero when both sides are below the floor.
double reciprocity_error(cplx a, cplx b, double floor = kReciprocityFloor);

struct TruncationPoint
{
  int truncation = 0;
  double rel_error = 0.0;
};

struct ReciprocityReport
{
  cplx lhs;
  cplx rhs;
  double rel_error = 0.0;
  GratingConfig config;
  Vec3 y0 = Vec3::Zero();
  Vec3 r = Vec3::Zero();
  CVec3 p = CVec3::Zero();
  ModeIndex m;
  std::vector<TruncationPoint> sweep;
};

struct InteriorOptions
{
  // Negative control: evaluate the right-hand side without the 1/lambda0 factor.
  bool drop_lambda0 = false;
  SolveOptions solve;
};

// r . E(y0; m) against (8 pi^2 i / lambda0) beta~_{-m} E~_{-m}(y0) . p for a layer with
// constant k1^2 = k0^2 q and y0 inside it.
ReciprocityReport verify_interior(const GratingConfig &config, cplx k1, const Vec3 &y0,
                                  const Vec3 &r, const CVec3 &p, ModeIndex m,
                                  const InteriorOptions &options = {});

// r . E^s(y0; m) against 8 pi^2 i beta~_{-m} E~^s_{-m}(y0) . p for y0 in b < x3 < h.
ReciprocityReport verify_exterior(const GratingConfig &config, const MaterialProfile &material,
                                  const Vec3 &y0, const Vec3 &r, const CVec3 &p, ModeIndex m,
                                  const SolveOptions &options = {});

// Reruns `run` at each truncation order.
std::vector<TruncationPoint> truncation_sweep(
    const std::function<ReciprocityReport(int truncation)> &run,
    const std::vector<int> &orders = {4, 6, 8, 12});

enum class ReciprocityKind
{
  interior,
  exterior
};

// Cartesian sweep over boundary x lambda0 x p x r x m, reported in that nesting order.
struct ReciprocitySweep
{
  ReciprocityKind kind = ReciprocityKind::interior;
  GratingConfig base;
  cplx k1{1.0, 0.0};
  MaterialProfile material;
  Vec3 y0 = Vec3::Zero();
  std::vector<BoundaryCondition> boundaries;
  std::vector<double> lambdas;
  std::vector<CVec3> polarizations;
  std::vector<Vec3> dipoles;
  std::vector<ModeIndex> orders;
};

// The standard acceptance sweep: {PEC, impedance 0.5} x {1, 1.7} x {e1, e2, e3}^2 x
// {(0,0), (1,0), (0,-1)}.
ReciprocitySweep standard_sweep(ReciprocityKind kind, const GratingConfig &base);

std::vector<ReciprocityReport> run_sweep(const ReciprocitySweep &sweep,
                                         Execution exec = Execution::parallel);

}  // namespace grating
