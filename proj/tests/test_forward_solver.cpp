// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "grating/errors.hpp"
#include "grating/forward_solver.hpp"
#include "grating/greens.hpp"
#include "support.hpp"

using namespace grating;
using support::base_config;

namespace
{

GratingConfig mirror_config()
{
  GratingConfig cfg = base_config(3);
  cfg.momentum = momentum_from_angles(cfg.k0, 0.7, 0.3);
  return cfg;
}

double max_coeff(const RayleighField &f)
{
  double m = 0.0;
  for (const auto &[n, e] : f.coeffs)
  {
    m = std::max(m, e.norm());
  }
  return m;
}

void check_residuals(const Solution &sol)
{
  const auto r = residuals(sol);
  CHECK(r.transmission_tangential <= 1e-9);
  CHECK(r.transmission_curl <= 1e-9);
  CHECK(r.boundary <= (sol.config().boundary.kind == BoundaryKind::pec ? 1e-9 : 1e-8));
  CHECK(r.dtn <= 1e-9);
  CHECK(r.divergence <= 1e-10);
}

}  // namespace

TEST_CASE("material conversions")
{
  CHECK(refractive_index_from_materials(1.0, 0.0, 2.0, 1.0) == cplx(1.0, 0.0));
  const cplx q = refractive_index_from_materials(2.0, 3.0, 3.0, 1.0);
  CHECK(q == cplx(2.0, 1.0));
  CHECK(q.imag() >= 0.0);
  CHECK(wavenumber_from_materials(1.0, 1.0, 1.0) == doctest::Approx(1.0));
  CHECK(wavenumber_from_materials(4.0, 1.0, 0.5) == doctest::Approx(1.0));
  CHECK(wavenumber_from_materials(4.0, 1.0, 1.0) ==
        doctest::Approx(2.0 * wavenumber_from_materials(4.0, 1.0, 0.5)));
  CHECK_THROWS_AS(refractive_index_from_materials(1.0, -1.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("config and material validation")
{
  GratingConfig cfg = base_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.c = 2.0;
  cfg.lambda0 = -1.0;
  try
  {
    cfg.validate();
    FAIL("expected ConstraintError");
  }
  catch (const ConstraintError &e)
  {
    const std::string msg = e.what();
    CHECK(msg.find("c") != std::string::npos);
    CHECK(msg.find("lambda0") != std::string::npos);
  }
  cfg = base_config();
  cfg.boundary = BoundaryCondition::impedance(0.0);
  CHECK_THROWS_AS(cfg.validate(), ConstraintError);

  CHECK_THROWS_AS(MaterialProfile::homogeneous(1.0, cplx(1e-4, 0.0)).validate(1.0), ConstraintError);
  CHECK_THROWS_AS(MaterialProfile::homogeneous(1.0, cplx(2.0, -0.1)).validate(1.0), ConstraintError);
  CHECK_NOTHROW(MaterialProfile::homogeneous(1.0, cplx(2.0, -0.1)).validate(1.0, 1e-3, false));
  CHECK_THROWS_AS(MaterialProfile::stack({{0.4, 2.0}, {0.4, 2.0}}).validate(1.0), ConstraintError);
  CHECK_THROWS_AS(solve(base_config(), MaterialProfile::stack({{0.5, 2.0}}),
                        PlaneOrder{{0, 0}, CVec3(1, 0, 0)}),
                  ConstraintError);
  const auto f = support::fourier_profile();
  CHECK(std::abs(f.as_fourier().value(0.0) - cplx(2.6, 0.1)) < 1e-15);
  CHECK(f.conjugated().as_fourier().coeffs.at(0) == cplx(2.0, -0.1));
  CHECK_FALSE(f.constant_value().has_value());
  CHECK(MaterialProfile::stack({{0.5, 2.0}, {0.5, 2.0}}).constant_value() == cplx(2.0));
}

TEST_CASE("vacuum over PEC reproduces the mirror solution")
{
  GratingConfig cfg = mirror_config();
  const auto mat = MaterialProfile::homogeneous(1.0, 1.0);
  for (const ModeIndex m : {ModeIndex{0, 0}, ModeIndex{1, 0}, ModeIndex{0, -1}})
  {
    const CVec3 p(0.3, cplx(0.2, -0.4), 0.5);
    const auto sol = solve(cfg, mat, PlaneOrder{m, p});
    const auto inc = incident_plane_field(m, p, cfg.k0, cfg.momentum);
    const CVec3 pm = inc.coeffs.at(m);
    const Vec2 a = alpha_n(cfg.momentum, m);
    const cplx beta = beta_n(cfg.k0, a);
    // Image: tangential components flip on x3 = c, the normal one follows from div E = 0.
    const cplx ph = std::exp(-2.0 * kI * beta * cfg.c);
    CVec3 r(-pm(0) * ph, -pm(1) * ph, 0.0);
    r(2) = -(a(0) * r(0) + a(1) * r(1)) / beta;
    const CVec3 got = sol.scattered_up().coeffs.at(m);
    CHECK((got - r).norm() <= 1e-10 * r.norm());
    double others = 0.0;
    for (const auto &[n, e] : sol.scattered_up().coeffs)
    {
      if (n != m)
      {
        others = std::max(others, e.norm());
      }
    }
    CHECK(others == 0.0);
    check_residuals(sol);
  }
  const auto sol = solve(cfg, mat, PlaneOrder{{0, 0}, CVec3(0.0, 1.0, 0.0)});
  const auto rep = energy_report(sol);
  for (const auto &o : rep.orders)
  {
    if (o.n == ModeIndex{0, 0})
    {
      CHECK(o.efficiency == doctest::Approx(1.0).epsilon(1e-10));
    }
    else
    {
      CHECK(o.efficiency <= 1e-10);
    }
  }
}

TEST_CASE("zero incidence gives the zero solution")
{
  const GratingConfig cfg = base_config();
  const auto mat = support::three_layer_stack();
  const auto s1 = solve(cfg, mat, SuperpositionSource{1.2, {}});
  CHECK(max_coeff(s1.scattered_up()) == 0.0);
  const auto s2 = solve_dipole(cfg, mat, Vec3(0.1, 0.2, 1.2), Vec3::Zero());
  CHECK(max_coeff(s2.scattered_up()) == 0.0);
  CHECK(s2.field(Vec3(0.3, 0.1, 0.5)).norm() == 0.0);
  CHECK_THROWS_AS(solve(cfg, mat, PlaneOrder{{0, 0}, CVec3::Zero()}), InvalidArgument);
  const auto tr = near_field_trace(s1, 1.4);
  for (const auto &[n, v] : tr.coeffs)
  {
    CHECK(v.norm() == 0.0);
  }
}

TEST_CASE("residuals of the interface, bottom and DtN conditions")
{
  for (const auto bc : {BoundaryCondition::pec(), BoundaryCondition::impedance(0.5)})
  {
    for (const double l0 : {1.0, 1.7})
    {
      GratingConfig cfg = base_config(5);
      cfg.boundary = bc;
      cfg.lambda0 = l0;
      for (const auto &mat : {support::three_layer_stack(), support::fourier_profile()})
      {
        check_residuals(solve(cfg, mat, PlaneOrder{{1, 0}, CVec3(0.2, 1.0, cplx(0.0, 0.3))}));
        check_residuals(solve(cfg, mat, SuperpositionSource{1.3, {{{0, 1}, CVec3(1, 0.5, 0)}}}));
        check_residuals(solve_dipole(cfg, mat, Vec3(0.3, 0.2, 1.25), Vec3(0, 1, 1)));
      }
      check_residuals(solve_dipole(cfg, MaterialProfile::homogeneous(1.0, cplx(2.0, 0.3)),
                                   Vec3(0.3, 0.2, 0.4), Vec3(1, 0, 1)));
    }
  }
}

TEST_CASE("pointwise transmission across the interface")
{
  GratingConfig cfg = base_config(4);
  cfg.lambda0 = 1.7;
  const auto sol = solve(cfg, support::fourier_profile(), PlaneOrder{{0, 0}, CVec3(1, 0, 0)});
  const double eps = 1e-7;
  const Vec3 up(0.4, -0.8, cfg.b + eps), dn(0.4, -0.8, cfg.b - eps);
  const CVec3 ea = sol.field(up), eb = sol.field(dn);
  CHECK(std::abs(ea(0) - eb(0)) + std::abs(ea(1) - eb(1)) <= 1e-6 * ea.norm());
  const CVec3 fa = sol.curl_field(up), fb = sol.curl_field(dn);
  CHECK(std::abs(fa(0) - cfg.lambda0 * fb(0)) + std::abs(fa(1) - cfg.lambda0 * fb(1)) <=
        1e-6 * fa.norm());
  CHECK_THROWS_AS(sol.field(Vec3(0, 0, cfg.c - 0.1)), InvalidArgument);
}

TEST_CASE("energy balance")
{
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t)
  {
    GratingConfig cfg = base_config(2);
    cfg.lambda0 = 0.5 + 0.3 * t;
    const auto lossless = support::random_stack(rng, 1.0, true);
    const PlaneOrder inc{{0, 0}, support::random_polarization(rng)};
    CHECK(energy_report(solve(cfg, lossless, inc)).total == doctest::Approx(1.0).epsilon(1e-8));
    const auto lossy = support::random_stack(rng, 1.0, false);
    CHECK(energy_report(solve(cfg, lossy, inc)).total < 1.0);
    cfg.boundary = BoundaryCondition::impedance(0.7);
    CHECK(energy_report(solve(cfg, lossless, inc)).total < 1.0);
  }
  GratingConfig cfg = base_config(2);
  const auto coupled = MaterialProfile::fourier(Axis::x2, {{0, 2.0}, {1, 0.4}, {-1, 0.4}});
  CHECK(energy_report(solve(cfg, coupled, PlaneOrder{{0, 0}, CVec3(1, 1, 0)})).total ==
        doctest::Approx(1.0).epsilon(1e-8));
  CHECK_THROWS_AS(energy_report(solve(cfg, coupled, PlaneOrder{{2, 0}, CVec3(1, 1, 0)})),
                  EvanescentIncidence);
}

TEST_CASE("solve is linear in the incidence")
{
  const GratingConfig cfg = base_config(3);
  const auto mat = support::fourier_profile();
  const CVec3 p1(1, 0, 0.2), p2(cplx(0, 1), 0.5, 0);
  const cplx s(0.3, -1.2);
  const auto a = solve(cfg, mat, PlaneOrder{{0, 1}, p1});
  const auto b = solve(cfg, mat, PlaneOrder{{0, 1}, p2});
  const auto c = solve(cfg, mat, PlaneOrder{{0, 1}, p1 + s * p2});
  double err = 0.0;
  for (const auto &[n, e] : c.scattered_up().coeffs)
  {
    err = std::max(err, (e - a.scattered_up().coeffs.at(n) - s * b.scattered_up().coeffs.at(n)).norm());
  }
  CHECK(err <= 1e-13 * max_coeff(c.scattered_up()));
}

TEST_CASE("dipole over PEC in vacuum matches the image dipole")
{
  GratingConfig cfg = base_config(4);
  const auto vac = MaterialProfile::homogeneous(1.0, 1.0);
  const Vec3 y(0.3, -0.2, 0.45), r(0.4, -0.7, 0.6);
  const auto sol = solve_dipole(cfg, vac, y, r);
  const Vec3 yi(y(0), y(1), 2.0 * cfg.c - y(2));
  const Vec3 ri(-r(0), -r(1), r(2));
  double err = 0.0, scale = 0.0;
  for (const auto &[n, e] : sol.scattered_up().coeffs)
  {
    const auto d = dipole_mode_amplitude(n, y, r, cfg.k0, cfg.momentum);
    const auto im = dipole_mode_amplitude(n, yi, ri, cfg.k0, cfg.momentum);
    const CVec3 want = d.up * std::exp(-kI * d.beta * y(2)) + im.up * std::exp(-kI * im.beta * yi(2));
    err = std::max(err, (e - want).norm());
    scale = std::max(scale, want.norm());
  }
  CHECK(err <= 1e-10 * scale);
  // PEC residual of the total field.
  const ModalSlice bot = sol.modal(cfg.c);
  double worst = 0.0, ref = 0.0;
  for (const auto &e : bot.e)
  {
    worst = std::max(worst, std::hypot(std::abs(e(0)), std::abs(e(1))));
    ref = std::max(ref, e.norm());
  }
  CHECK(worst <= 1e-8 * ref);
}

TEST_CASE("exterior dipole: scattered part excludes the free dipole")
{
  GratingConfig cfg = base_config(4);
  const auto vac = MaterialProfile::homogeneous(1.0, 1.0);
  const Vec3 y(0.3, -0.2, 1.3), r(0.0, 1.0, 0.5);
  const auto sol = solve_dipole(cfg, vac, y, r);
  const Vec3 yi(y(0), y(1), 2.0 * cfg.c - y(2));
  const Vec3 ri(-r(0), -r(1), r(2));
  double err = 0.0, scale = 0.0;
  for (const auto &[n, e] : sol.scattered_up().coeffs)
  {
    const auto im = dipole_mode_amplitude(n, yi, ri, cfg.k0, cfg.momentum);
    const CVec3 want = im.up * std::exp(-kI * im.beta * yi(2));
    err = std::max(err, (e - want).norm());
    scale = std::max(scale, want.norm());
  }
  CHECK(err <= 1e-10 * scale);
}

TEST_CASE("dipole error paths")
{
  const GratingConfig cfg = base_config(2);
  CHECK_THROWS_AS(solve_dipole(cfg, support::three_layer_stack(), Vec3(0, 0, 0.5), Vec3(1, 0, 0)),
                  UnsupportedCombination);
  CHECK_THROWS_AS(solve_dipole(cfg, support::three_layer_stack(), Vec3(0, 0, 1.0), Vec3(1, 0, 0)),
                  SourceOnInterface);
  CHECK_THROWS_AS(solve_dipole(cfg, MaterialProfile::stack({{0.5, 2.0}, {0.5, 2.0}}),
                               Vec3(0, 0, 0.5), Vec3(1, 0, 0)),
                  SourceOnInterface);
  CHECK_THROWS_AS(solve(cfg, support::three_layer_stack(), SuperpositionSource{0.9, {}}),
                  InvalidArgument);
  CHECK_THROWS_AS(solve(cfg, support::three_layer_stack(), PlaneOrder{{3, 0}, CVec3(1, 0, 0)}),
                  InvalidArgument);
  GratingConfig wood = cfg;
  wood.k0 = 1.0;
  wood.momentum = QuasiMomentum{};
  CHECK_THROWS_AS(solve(wood, support::three_layer_stack(), PlaneOrder{{0, 0}, CVec3(1, 0, 0)}),
                  WoodAnomaly);
}

TEST_CASE("superposition incidence matches quadrature of the dyadic Green's function")
{
  GratingConfig cfg = base_config(3);
  cfg.h = 3.0;
  const double height = 2.5;
  const ModeIndex n{1, -1};
  const CVec3 rn(0.4, cplx(0.0, -0.3), 0.0);
  const auto sol = solve(cfg, support::three_layer_stack(), SuperpositionSource{height, {{n, rn}}});
  const Vec3 x(0.3, 0.7, 1.2);
  const CVec3 incident = sol.field(x) - sol.scattered_field(x);

  GreenParams gp;
  gp.k = cfg.k0;
  gp.momentum = cfg.momentum;
  gp.truncation = 30;
  const int m = 32;
  const double dy = 2.0 * kPi / m;
  const Vec2 an = alpha_n(cfg.momentum, n);
  CVec3 quad = CVec3::Zero();
  for (int i = 0; i < m; ++i)
  {
    for (int j = 0; j < m; ++j)
    {
      const Vec3 y(i * dy, j * dy, height);
      const CVec3 ry = rn * std::exp(kI * (an(0) * y(0) + an(1) * y(1)));
      quad += dyadic_green(x, y, gp) * ry * (dy * dy);
    }
  }
  CHECK((incident - quad).norm() <= 1e-10 * quad.norm());
  check_residuals(sol);
}

TEST_CASE("near-field trace agrees with a grid DFT of the field")
{
  GratingConfig cfg = base_config(3);
  const auto sol = solve(cfg, support::fourier_profile(), PlaneOrder{{0, 0}, CVec3(1, 0.3, 0)});
  const double h = 1.4;
  const auto tr = near_field_trace(sol, h, TraceKind::scattered);
  const auto total = near_field_trace(sol, h);
  CHECK_THROWS_AS(near_field_trace(sol, cfg.b), HeightBelowInterface);
  const int m = 16;
  const double d = 2.0 * kPi / m;
  double err = 0.0, scale = 0.0;
  for (const auto &[n, v] : tr.coeffs)
  {
    CHECK(v(2) == cplx(0.0));
    CHECK(total.coeffs.at(n)(2) == cplx(0.0));
    const Vec2 a = alpha_n(cfg.momentum, n);
    CVec3 acc = CVec3::Zero();
    for (int i = 0; i < m; ++i)
    {
      for (int j = 0; j < m; ++j)
      {
        const Vec3 x(i * d, j * d, h);
        const CVec3 e = rayleigh_evaluate(sol.scattered_up(), x);
        acc += CVec3(-e(1), e(0), 0.0) * std::exp(-kI * (a(0) * x(0) + a(1) * x(1)));
      }
    }
    acc /= double(m * m);
    err = std::max(err, (acc - v).norm());
    scale = std::max(scale, v.norm());
  }
  CHECK(err <= 1e-12 * scale);
}

TEST_CASE("serial and parallel solves are bitwise identical")
{
  GratingConfig cfg = base_config(4);
  cfg.boundary = BoundaryCondition::impedance(0.5);
  SolveOptions ser, par;
  ser.exec = Execution::serial;
  par.exec = Execution::parallel;
  for (const auto &mat : {support::three_layer_stack(), support::fourier_profile()})
  {
    const auto a = solve_dipole(cfg, mat, Vec3(0.1, 0.2, 1.3), Vec3(1, 1, 0), std::nullopt, ser);
    const auto b = solve_dipole(cfg, mat, Vec3(0.1, 0.2, 1.3), Vec3(1, 1, 0), std::nullopt, par);
    bool same = true;
    for (const auto &[n, e] : a.scattered_up().coeffs)
    {
      same = same && e == b.scattered_up().coeffs.at(n);
    }
    CHECK(same);
  }
}

TEST_CASE("solver reports its conditioning")
{
  const auto sol = solve(base_config(3), support::three_layer_stack(), PlaneOrder{{0, 0}, CVec3(1, 0, 0)});
  CHECK(sol.diagnostics().min_rcond > 1e-14);
  CHECK(sol.diagnostics().min_rcond <= 1.0);
  CHECK(sol.diagnostics().groups_solved >= 1);
}
