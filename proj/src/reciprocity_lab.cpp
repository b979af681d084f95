// SPDX-License-Identifier: Apache-2.0
#include "grating/reciprocity_lab.hpp"

#include <algorithm>
#include <exception>

#include "grating/errors.hpp"

namespace grating
{

double reciprocity_error(cplx a, cplx b, double floor)
{
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < floor)
  {
    return 0.0;
  }
  return std::abs(a - b) / scale;
}

namespace
{

cplx rhs_factor(const GratingConfig &config, ModeIndex m)
{
  // beta~_{-m} at alpha~ = -alpha equals beta_m.
  const Vec2 a = alpha_n(config.momentum.conjugate(), -m);
  return 8.0 * kPi * kPi * kI * beta_n(config.k0, a).value();
}

ReciprocityReport make_report(const GratingConfig &config, const Vec3 &y0, const Vec3 &r,
                              const CVec3 &p, ModeIndex m, cplx lhs, cplx rhs)
{
  ReciprocityReport rep;
  rep.lhs = lhs;
  rep.rhs = rhs;
  rep.rel_error = reciprocity_error(lhs, rhs);
  rep.config = config;
  rep.y0 = y0;
  rep.r = r;
  rep.p = p;
  rep.m = m;
  return rep;
}

}  // namespace

ReciprocityReport verify_interior(const GratingConfig &config, cplx k1, const Vec3 &y0,
                                  const Vec3 &r, const CVec3 &p, ModeIndex m,
                                  const InteriorOptions &options)
{
  if (!(y0(2) > config.c && y0(2) < config.b))
  {
    throw InvalidArgument("interior reciprocity needs c < y3 < b");
  }
  const cplx q = k1 * k1 / (config.k0 * config.k0);
  const auto material = MaterialProfile::homogeneous(config.b - config.c, q);

  const Solution forward = solve(config, material, PlaneOrder{m, p}, options.solve);
  const cplx lhs = bilinear_dot(to_complex(r), forward.field(y0));

  const Solution dual =
      solve_dipole(config, material, y0, r, config.momentum.conjugate(), options.solve);
  const CVec3 e = dual.scattered_up().coeffs.at(-m);
  cplx rhs = rhs_factor(config, m) * bilinear_dot(e, p);
  if (!options.drop_lambda0)
  {
    rhs /= config.lambda0;
  }
  return make_report(config, y0, r, p, m, lhs, rhs);
}

ReciprocityReport verify_exterior(const GratingConfig &config, const MaterialProfile &material,
                                  const Vec3 &y0, const Vec3 &r, const CVec3 &p, ModeIndex m,
                                  const SolveOptions &options)
{
  if (!(y0(2) > config.b && y0(2) < config.h))
  {
    throw InvalidArgument("exterior reciprocity needs b < y3 < h");
  }
  const Solution forward = solve(config, material, PlaneOrder{m, p}, options);
  const cplx lhs = bilinear_dot(to_complex(r), forward.scattered_field(y0));

  const Solution dual = solve_dipole(config, material, y0, r, config.momentum.conjugate(), options);
  const CVec3 e = dual.scattered_up().coeffs.at(-m);
  const cplx rhs = rhs_factor(config, m) * bilinear_dot(e, p);
  return make_report(config, y0, r, p, m, lhs, rhs);
}

std::vector<TruncationPoint> truncation_sweep(
    const std::function<ReciprocityReport(int)> &run, const std::vector<int> &orders)
{
  std::vector<TruncationPoint> out;
  out.reserve(orders.size());
  for (const int n : orders)
  {
    out.push_back({n, run(n).rel_error});
  }
  return out;
}

ReciprocitySweep standard_sweep(ReciprocityKind kind, const GratingConfig &base)
{
  ReciprocitySweep s;
  s.kind = kind;
  s.base = base;
  s.boundaries = {BoundaryCondition::pec(), BoundaryCondition::impedance(0.5)};
  s.lambdas = {1.0, 1.7};
  s.polarizations = {CVec3(1, 0, 0), CVec3(0, 1, 0), CVec3(0, 0, 1)};
  s.dipoles = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  s.orders = {{0, 0}, {1, 0}, {0, -1}};
  return s;
}

std::vector<ReciprocityReport> run_sweep(const ReciprocitySweep &sweep, Execution exec)
{
  struct Tuple
  {
    BoundaryCondition bc;
    double lambda0;
    CVec3 p;
    Vec3 r;
    ModeIndex m;
  };
  std::vector<Tuple> tuples;
  for (const auto &bc : sweep.boundaries)
  {
    for (const double l : sweep.lambdas)
    {
      for (const auto &p : sweep.polarizations)
      {
        for (const auto &r : sweep.dipoles)
        {
          for (const auto m : sweep.orders)
          {
            tuples.push_back({bc, l, p, r, m});
          }
        }
      }
    }
  }
  std::vector<ReciprocityReport> out(tuples.size());
  std::vector<std::exception_ptr> failures(tuples.size());
  SolveOptions inner;
  inner.exec = Execution::serial;
  auto work = [&](std::ptrdiff_t i) {
    try
    {
      const Tuple &t = tuples[static_cast<std::size_t>(i)];
      GratingConfig cfg = sweep.base;
      cfg.boundary = t.bc;
      cfg.lambda0 = t.lambda0;
      if (sweep.kind == ReciprocityKind::interior)
      {
        InteriorOptions opts;
        opts.solve = inner;
        out[static_cast<std::size_t>(i)] =
            verify_interior(cfg, sweep.k1, sweep.y0, t.r, t.p, t.m, opts);
      }
      else
      {
        out[static_cast<std::size_t>(i)] =
            verify_exterior(cfg, sweep.material, sweep.y0, t.r, t.p, t.m, inner);
      }
    }
    catch (...)
    {
      failures[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  const auto count = static_cast<std::ptrdiff_t>(tuples.size());
  if (exec == Execution::parallel)
  {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      work(i);
    }
  }
  else
  {
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      work(i);
    }
  }
  for (const auto &f : failures)
  {
    if (f)
    {
      std::rethrow_exception(f);
    }
  }
  return out;
}

}  // namespace grating
