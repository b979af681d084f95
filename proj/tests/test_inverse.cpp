// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "grating/errors.hpp"
#include "grating/inverse.hpp"
#include "support.hpp"

using namespace grating;
using support::base_config;

namespace
{

const std::vector<int> kAllPolarizations = {1, 2, 3};

GratingConfig impedance_truth()
{
  GratingConfig cfg = base_config(3);
  cfg.boundary = BoundaryCondition::impedance(0.8);
  return cfg;
}

MaterialProfile layer(const GratingConfig &cfg, cplx q = 2.0)
{
  return MaterialProfile::homogeneous(cfg.b - cfg.c, q);
}

double trace_diff_norm(const TangentialTrace &a, const TangentialTrace &b)
{
  double s = 0.0;
  for (const auto &[n, v] : a.coeffs)
  {
    s += (v - b.coeffs.at(n)).squaredNorm();
  }
  return std::sqrt(s);
}

double trace_norm(const TangentialTrace &a)
{
  double s = 0.0;
  for (const auto &[n, v] : a.coeffs)
  {
    s += v.squaredNorm();
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("orders_within enumerates the square")
{
  CHECK(orders_within(0).size() == 1);
  CHECK(orders_within(1).size() == 9);
  CHECK(orders_within(2).size() == 25);
}

TEST_CASE("synthetic data: determinism, noise level and empty order set")
{
  const auto cfg = impedance_truth();
  const auto mat = layer(cfg);
  const auto orders = orders_within(1);
  const auto a = synthesize_data(cfg, mat, orders, kAllPolarizations, 0.0, 1);
  const auto b = synthesize_data(cfg, mat, orders, kAllPolarizations, 0.0, 99);
  CHECK(a.entries.size() == 27);
  CHECK(dataset_distance(a, b) == 0.0);

  const auto n1 = synthesize_data(cfg, mat, orders, kAllPolarizations, 0.01, 5);
  const auto n2 = synthesize_data(cfg, mat, orders, kAllPolarizations, 0.01, 5);
  CHECK(dataset_distance(n1, n2) == 0.0);
  CHECK(n1.noise.level == 0.01);
  CHECK(n1.noise.seed == 5);

  int inside = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed)
  {
    const auto noisy = synthesize_data(cfg, mat, orders, kAllPolarizations, 0.01, seed);
    for (const auto &[key, t] : a.entries)
    {
      const double rel = trace_diff_norm(noisy.entries.at(key), t) / trace_norm(t);
      inside += rel >= 0.001 && rel <= 0.05;
      ++total;
    }
  }
  CHECK(inside >= 0.99 * total);

  const auto empty = synthesize_data(cfg, mat, {}, kAllPolarizations, 0.01, 3);
  CHECK(empty.entries.empty());
  CHECK(dataset_norm(empty) == 0.0);
}

TEST_CASE("serial and parallel synthesis agree")
{
  const auto cfg = impedance_truth();
  const auto a = synthesize_data(cfg, layer(cfg), orders_within(1), {1, 2}, 0.02, 4, Execution::serial);
  const auto b = synthesize_data(cfg, layer(cfg), orders_within(1), {1, 2}, 0.02, 4, Execution::parallel);
  CHECK(dataset_distance(a, b) == 0.0);
}

TEST_CASE("impedance inversion: fixed point at the truth")
{
  const auto cfg = impedance_truth();
  const auto data = synthesize_data(cfg, layer(cfg), orders_within(1), kAllPolarizations);
  const auto res = invert_impedance_depth(data, cfg, 2.0, 0.0, 0.8);
  CHECK(res.converged);
  CHECK(res.accepted_steps == 0);
  CHECK(res.final_residual() <= 1e-12 * res.data_norm);
}

TEST_CASE("impedance inversion recovers depth and impedance from noiseless data")
{
  const auto cfg = impedance_truth();
  const auto data = synthesize_data(cfg, layer(cfg), orders_within(1), kAllPolarizations);
  const auto res = invert_impedance_depth(data, cfg, 2.0, -0.3, 2.0);
  CHECK(res.converged);
  // c = 0 is measured against the layer thickness.
  CHECK(std::abs(res.value("c") - 0.0) / (cfg.b - cfg.c) <= 1e-3);
  CHECK(std::abs(res.value("rho") - 0.8) / 0.8 <= 1e-3);
  CHECK(res.final_residual() <= 1e-8 * res.data_norm);
  for (std::size_t i = 0; i + 1 < res.residual_history.size(); ++i)
  {
    CHECK(res.residual_history[i + 1] <= res.residual_history[i]);
  }
  CHECK(res.jacobian_condition.size() == res.regularization.size());
}

TEST_CASE("impedance inversion with noisy data and the discrepancy stop")
{
  const auto cfg = impedance_truth();
  const auto data = synthesize_data(cfg, layer(cfg), orders_within(1), kAllPolarizations, 0.01, 11);
  GaussNewtonOptions opts;
  opts.noise_level = 0.01;
  const auto res = invert_impedance_depth(data, cfg, 2.0, -0.3, 2.0, opts);
  CHECK(res.converged);
  CHECK(std::abs(res.value("c")) / (cfg.b - cfg.c) <= 0.05);
  CHECK(std::abs(res.value("rho") - 0.8) / 0.8 <= 0.05);
}

TEST_CASE("refractive inversion: constant layer")
{
  GratingConfig cfg = base_config(3);
  const cplx truth(2.0, 0.1);
  const auto data = synthesize_data(cfg, layer(cfg, truth), orders_within(1), kAllPolarizations);
  const auto res = invert_refractive_profile(data, cfg, StackParametrization{1, {}}, {cplx(1.5, 0.0)});
  CHECK(res.converged);
  const auto q = complex_estimate(res);
  REQUIRE(q.size() == 1);
  CHECK(std::abs(q[0] - truth) / std::abs(truth) <= 1e-4);

  const auto fixed = invert_refractive_profile(data, cfg, StackParametrization{1, {}}, {truth});
  CHECK(fixed.converged);
  CHECK(fixed.accepted_steps == 0);
}

TEST_CASE("refractive inversion: three-layer stack")
{
  GratingConfig cfg = base_config(3);
  const auto truth = support::three_layer_stack();
  const auto data = synthesize_data(cfg, truth, orders_within(2), kAllPolarizations);
  const StackParametrization param{3, {0.3, 0.4, 0.3}};
  const auto res = invert_refractive_profile(data, cfg, param, {1.5, 1.5, 1.5});
  CHECK(res.converged);
  const auto q = complex_estimate(res);
  const auto &layers = truth.as_stack().layers;
  REQUIRE(q.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
  {
    CHECK(std::abs(q[i] - layers[i].q) / std::abs(layers[i].q) <= 0.01);
  }
  for (std::size_t i = 0; i + 1 < res.residual_history.size(); ++i)
  {
    CHECK(res.residual_history[i + 1] <= res.residual_history[i]);
  }
}

TEST_CASE("refractive inversion: Fourier parametrization")
{
  GratingConfig cfg = base_config(3);
  const auto truth = support::fourier_profile();
  const auto data = synthesize_data(cfg, truth, orders_within(1), kAllPolarizations);
  const FourierParametrization param{Axis::x1, {-1, 0, 1}};
  // Start strictly inside Im q > 0; on the bound every harmonic direction is infeasible.
  const auto res = invert_refractive_profile(data, cfg, param, {0.0, cplx(1.5, 0.05), 0.0});
  CHECK(res.converged);
  const auto q = complex_estimate(res);
  CHECK(std::abs(q[1] - cplx(2.0, 0.1)) <= 1e-4);
  CHECK(std::abs(q[0] - 0.3) <= 1e-4);
  CHECK(std::abs(q[2] - 0.3) <= 1e-4);
}

TEST_CASE("parameter perturbations are distinguishable in the data")
{
  const auto cfg = impedance_truth();
  const auto orders = orders_within(1);
  const auto base = synthesize_data(cfg, layer(cfg), orders, kAllPolarizations);

  GratingConfig rho = cfg;
  rho.boundary = BoundaryCondition::impedance(0.9);
  CHECK(dataset_distance(base, synthesize_data(rho, layer(rho), orders, kAllPolarizations)) >= 1e-6);

  GratingConfig depth = cfg;
  depth.c = -0.05;
  CHECK(dataset_distance(base, synthesize_data(depth, layer(depth), orders, kAllPolarizations)) >= 1e-6);

  CHECK(dataset_distance(base, synthesize_data(cfg, layer(cfg, 2.1), orders, kAllPolarizations)) >= 1e-6);
}

TEST_CASE("orthogonality relation")
{
  GratingConfig cfg = base_config(3);
  const PlaneOrder p1{{0, 0}, CVec3(1, 0, 0)};
  const PlaneOrder p2{{1, 0}, CVec3(0, 1, 0)};
  const auto q = support::fourier_profile();
  CHECK(orthogonality_residual(q, q, cfg, p1, p2) == cplx(0.0));

  const auto other = MaterialProfile::homogeneous(1.0, cplx(2.0, 0.1));
  const cplx r = orthogonality_residual(q, other, cfg, p1, p2);
  CHECK(std::abs(r) >= 10.0 * 1e-8);

  // Scaling the first probe scales the residual.
  const PlaneOrder p1s{{0, 0}, CVec3(2.5, 0, 0)};
  const cplx rs = orthogonality_residual(q, other, cfg, p1s, p2);
  CHECK(std::abs(rs - 2.5 * r) <= 1e-12 * std::abs(rs));

  GratingConfig imp = cfg;
  imp.boundary = BoundaryCondition::impedance(0.5);
  CHECK_THROWS_AS(orthogonality_residual(q, other, imp, p1, p2), InvalidArgument);
}

TEST_CASE("blow-up indicator grows toward the boundary and stays bounded away from it")
{
  GratingConfig cfg = base_config(3);
  cfg.boundary = BoundaryCondition::impedance(0.8);
  const cplx k1 = cfg.k0 * std::sqrt(2.0);
  std::vector<double> depths;
  for (int i = 0; i <= 10; ++i)
  {
    depths.push_back(cfg.c + 0.1 * std::pow(0.1, i / 10.0));
  }
  depths.push_back(cfg.c + 0.2);
  depths.push_back(cfg.c + 0.5);
  depths.push_back(cfg.c + 0.8);
  const auto curve = blowup_indicator(cfg, k1, depths, Vec3(0, 0, 1));
  REQUIRE(curve.size() == depths.size());
  int increasing = 0;
  for (int i = 0; i < 10; ++i)
  {
    increasing += curve[static_cast<std::size_t>(i + 1)].value > curve[static_cast<std::size_t>(i)].value;
  }
  CHECK(increasing >= 9);
  const double at_001 = curve[10].value;
  const double at_02 = curve[11].value;
  CHECK(curve[10].offset == doctest::Approx(0.01));
  CHECK(at_001 >= 10.0 * at_02);
  for (std::size_t i = 12; i < curve.size(); ++i)
  {
    CHECK(std::isfinite(curve[i].value));
    CHECK(curve[i].value <= at_02);
  }
}

TEST_CASE("inverse error paths")
{
  const auto cfg = impedance_truth();
  const auto data = synthesize_data(cfg, layer(cfg), {{0, 0}}, {1});
  CHECK_THROWS_AS(invert_impedance_depth(data, cfg, 2.0, 0.0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(invert_impedance_depth(data, cfg, 2.0, 1.5, 0.8), InvalidArgument);
  CHECK_THROWS_AS(invert_refractive_profile(data, cfg, StackParametrization{}, {2.0}), InvalidArgument);
  GratingConfig pec = base_config(3);
  CHECK_THROWS_AS(invert_refractive_profile(data, pec, StackParametrization{}, {2.0, 1.0}), InvalidArgument);

  const auto fdata = synthesize_data(pec, support::fourier_profile(), {{0, 0}}, kAllPolarizations);
  CHECK_THROWS_AS(invert_refractive_profile(fdata, pec, FourierParametrization{Axis::x1, {-1, 0, 1}},
                                            {0.0, 1.5, 0.0}),
                  DegenerateJacobian);

  GaussNewtonOptions opts;
  opts.max_iterations = 1;
  opts.residual_tolerance = 0.0;
  opts.step_tolerance = 0.0;
  const auto full = synthesize_data(cfg, layer(cfg), orders_within(1), kAllPolarizations);
  CHECK_THROWS_AS(invert_impedance_depth(full, cfg, 2.0, -0.3, 2.0, opts), NonConvergence);
}

TEST_CASE("impedance estimate error grows at most linearly with noise")
{
  const auto cfg = impedance_truth();
  const auto orders = orders_within(1);
  auto median_error = [&](double level) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 7; ++seed)
    {
      const auto data = synthesize_data(cfg, layer(cfg), orders, kAllPolarizations, level, seed);
      const auto res = invert_impedance_depth(data, cfg, 2.0, -0.3, 2.0);
      errs.push_back(std::max(std::abs(res.value("c")) / (cfg.b - cfg.c), std::abs(res.value("rho") - 0.8) / 0.8));
    }
    std::nth_element(errs.begin(), errs.begin() + 3, errs.end());
    return errs[3];
  };
  const double lo = median_error(0.005);
  const double hi = median_error(0.02);
  CHECK(std::log(hi / lo) / std::log(4.0) <= 1.3);
}

TEST_CASE("noisy data with a lossless truth layer on the Im q = 0 bound")
{
  GratingConfig cfg = base_config(3);
  const auto truth = support::three_layer_stack();
  const StackParametrization param{3, {0.3, 0.4, 0.3}};
  // With this seed the unconstrained step for the outer layers points to Im q < 0.
  const auto data = synthesize_data(cfg, truth, orders_within(2), kAllPolarizations, 0.01, 3);
  const auto res = invert_refractive_profile(data, cfg, param, {1.5, 1.5, 1.5});
  CHECK(res.converged);
  const auto q = complex_estimate(res);
  for (std::size_t i = 0; i < 3; ++i)
  {
    CHECK(q[i].imag() >= 0.0);
    CHECK(std::abs(q[i] - truth.as_stack().layers[i].q) / std::abs(truth.as_stack().layers[i].q) <= 0.05);
  }
}
