// SPDX-License-Identifier: Apache-2.0
#include "grating/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <boost/math/quadrature/gauss.hpp>

#include "grating/errors.hpp"

namespace grating
{

namespace
{

template <class F>
void for_each_index(std::ptrdiff_t count, Execution exec, F &&work)
{
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(count));
  auto guarded = [&](std::ptrdiff_t i) {
    try
    {
      work(i);
    }
    catch (...)
    {
      failures[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  if (exec == Execution::parallel)
  {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      guarded(i);
    }
  }
  else
  {
    for (std::ptrdiff_t i = 0; i < count; ++i)
    {
      guarded(i);
    }
  }
  for (const auto &f : failures)
  {
    if (f)
    {
      std::rethrow_exception(f);
    }
  }
}

CVec3 unit(int l)
{
  if (l < 1 || l > 3)
  {
    throw InvalidArgument("polarization index must be 1, 2 or 3");
  }
  CVec3 e = CVec3::Zero();
  e(l - 1) = 1.0;
  return e;
}

double trace_norm(const TangentialTrace &t)
{
  double s = 0.0;
  for (const auto &[n, v] : t.coeffs)
  {
    s += v.squaredNorm();
  }
  return std::sqrt(s);
}

}  // namespace

std::vector<ModeIndex> orders_within(int radius)
{
  return Truncation(radius).modes();
}

NearFieldDataset synthesize_data(const GratingConfig &config, const MaterialProfile &material,
                                 const std::vector<ModeIndex> &orders,
                                 const std::vector<int> &polarizations, double noise_level,
                                 std::uint64_t seed, Execution exec)
{
  if (!(noise_level >= 0.0))
  {
    throw InvalidArgument("noise level must be non-negative");
  }
  NearFieldDataset data;
  data.h = config.h;
  data.momentum = config.momentum;
  data.truncation = config.truncation;
  data.noise = {noise_level, seed};

  std::vector<DataKey> keys;
  for (const auto m : orders)
  {
    for (const int l : polarizations)
    {
      unit(l);
      keys.push_back({m, l});
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  std::vector<TangentialTrace> traces(keys.size());
  SolveOptions inner;
  inner.exec = Execution::serial;
  for_each_index(static_cast<std::ptrdiff_t>(keys.size()), exec, [&](std::ptrdiff_t i) {
    const DataKey &k = keys[static_cast<std::size_t>(i)];
    const Solution sol = solve(config, material, PlaneOrder{k.m, unit(k.l)}, inner);
    traces[static_cast<std::size_t>(i)] = near_field_trace(sol, config.h, TraceKind::scattered);
  });

  // Noise is drawn sequentially in key and mode order so it depends on the seed only.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < keys.size(); ++i)
  {
    TangentialTrace &t = traces[i];
    if (noise_level > 0.0)
    {
      // 2 complex components per mode, each with E|z|^2 = sigma^2.
      const double sigma =
          noise_level * trace_norm(t) / std::sqrt(2.0 * static_cast<double>(t.coeffs.size()));
      for (auto &[n, v] : t.coeffs)
      {
        for (int c = 0; c < 2; ++c)
        {
          const double re = normal(rng);
          const double im = normal(rng);
          v(c) += sigma * cplx(re, im) / std::sqrt(2.0);
        }
      }
    }
    data.entries.emplace(keys[i], std::move(t));
  }
  return data;
}

Eigen::VectorXd stacked_misfit(const NearFieldDataset &model, const NearFieldDataset &data)
{
  if (model.entries.size() != data.entries.size())
  {
    throw InvalidArgument("datasets have different incident families");
  }
  std::vector<double> out;
  for (auto it = data.entries.begin(), jt = model.entries.begin(); it != data.entries.end();
       ++it, ++jt)
  {
    if (!(it->first == jt->first))
    {
      throw InvalidArgument("datasets have different incident families");
    }
    const TangentialTrace &d = it->second;
    const TangentialTrace &m = jt->second;
    for (const auto &[n, dv] : d.coeffs)
    {
      const auto mv = m.coeffs.find(n);
      const CVec3 diff = (mv == m.coeffs.end() ? CVec3::Zero().eval() : mv->second) - dv;
      const Vec2 a = alpha_n(data.momentum, n);
      const double w = std::sqrt(1.0 / std::sqrt(1.0 + a.squaredNorm()));
      const cplx div = a(0) * diff(0) + a(1) * diff(1);
      for (const cplx z : {diff(0), diff(1), div})
      {
        out.push_back(w * z.real());
        out.push_back(w * z.imag());
      }
    }
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

double dataset_norm(const NearFieldDataset &data)
{
  NearFieldDataset zero = data;
  for (auto &[k, t] : zero.entries)
  {
    t.coeffs.clear();
  }
  return stacked_misfit(zero, data).norm();
}

double dataset_distance(const NearFieldDataset &a, const NearFieldDataset &b)
{
  return stacked_misfit(a, b).norm();
}

double InversionResult::value(const std::string &name) const
{
  for (std::size_t i = 0; i < names.size(); ++i)
  {
    if (names[i] == name)
    {
      return estimate(static_cast<Eigen::Index>(i));
    }
  }
  throw InvalidArgument("no parameter named " + name);
}

namespace
{

struct LeastSquaresProblem
{
  std::vector<std::string> names;
  // Residual at theta; `exec` is the execution policy for the forward solves inside.
  std::function<Eigen::VectorXd(const Eigen::VectorXd &, Execution)> residual;
  std::function<Eigen::VectorXd(const Eigen::VectorXd &)> project;
  double data_norm = 0.0;
};

// Coordinates whose +step or -step leaves the admissible set.
struct ActiveBounds
{
  std::vector<bool> upper;
  std::vector<bool> lower;
};

Eigen::MatrixXd fd_jacobian(const LeastSquaresProblem &prob, const Eigen::VectorXd &theta,
                            const Eigen::VectorXd &r0, const GaussNewtonOptions &opt,
                            ActiveBounds &bounds)
{
  const auto p = theta.size();
  std::vector<Eigen::VectorXd> plus(static_cast<std::size_t>(p)), minus(static_cast<std::size_t>(p));
  std::vector<double> hp(static_cast<std::size_t>(p)), hm(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j)
  {
    const double step = opt.fd_step * std::max(std::abs(theta(j)), 1.0);
    Eigen::VectorXd tp = theta, tm = theta;
    tp(j) += step;
    tm(j) -= step;
    // One-sided differences on an active bound.
    hp[static_cast<std::size_t>(j)] = prob.project(tp) == tp ? step : 0.0;
    hm[static_cast<std::size_t>(j)] = prob.project(tm) == tm ? step : 0.0;
    if (hp[static_cast<std::size_t>(j)] == 0.0 && hm[static_cast<std::size_t>(j)] == 0.0)
    {
      throw DegenerateJacobian("parameter " + prob.names[static_cast<std::size_t>(j)] +
                               " is pinned between bounds");
    }
  }
  for_each_index(2 * p, opt.exec, [&](std::ptrdiff_t k) {
    const Eigen::Index j = k / 2;
    const bool is_plus = k % 2 == 0;
    const double h = is_plus ? hp[static_cast<std::size_t>(j)] : hm[static_cast<std::size_t>(j)];
    if (h == 0.0)
    {
      return;
    }
    Eigen::VectorXd t = theta;
    t(j) += is_plus ? h : -h;
    (is_plus ? plus : minus)[static_cast<std::size_t>(j)] = prob.residual(t, Execution::serial);
  });
  bounds.upper.assign(static_cast<std::size_t>(p), false);
  bounds.lower.assign(static_cast<std::size_t>(p), false);
  Eigen::MatrixXd jac(r0.size(), p);
  for (Eigen::Index j = 0; j < p; ++j)
  {
    const auto ju = static_cast<std::size_t>(j);
    bounds.upper[ju] = hp[ju] == 0.0;
    bounds.lower[ju] = hm[ju] == 0.0;
    const Eigen::VectorXd &rp = hp[ju] > 0.0 ? plus[ju] : r0;
    const Eigen::VectorXd &rm = hm[ju] > 0.0 ? minus[ju] : r0;
    jac.col(j) = (rp - rm) / (hp[ju] + hm[ju]);
  }
  return jac;
}

InversionResult gauss_newton(const LeastSquaresProblem &prob, Eigen::VectorXd theta,
                             const GaussNewtonOptions &opt)
{
  InversionResult res;
  res.names = prob.names;
  res.data_norm = prob.data_norm;
  theta = prob.project(theta);
  Eigen::VectorXd r = prob.residual(theta, opt.exec);
  double cost = r.norm();
  res.residual_history.push_back(cost);

  auto small_enough = [&](double c) {
    if (c <= opt.residual_tolerance * prob.data_norm)
    {
      return true;
    }
    return opt.noise_level.has_value() &&
           c <= opt.discrepancy_tau * *opt.noise_level * prob.data_norm;
  };

  for (int it = 0; it < opt.max_iterations; ++it)
  {
    if (small_enough(cost))
    {
      res.converged = true;
      break;
    }
    res.iterations = it + 1;
    ActiveBounds bounds;
    const Eigen::MatrixXd jac = fd_jacobian(prob, theta, r, opt, bounds);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    const auto &sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    if (!(smax > 0.0) || smin <= 1e-14 * smax)
    {
      throw DegenerateJacobian("finite-difference Jacobian is rank deficient");
    }
    res.jacobian_condition.push_back(smax / smin);
    const auto p = theta.size();
    const double mu = opt.tikhonov * jac.squaredNorm() / static_cast<double>(p);
    res.regularization.push_back(mu);
    const Eigen::MatrixXd normal =
        jac.transpose() * jac + mu * Eigen::MatrixXd::Identity(p, p);
    Eigen::VectorXd grad = jac.transpose() * r;
    Eigen::VectorXd delta = -normal.ldlt().solve(grad);

    // Hold coordinates on an active bound whose step points outward, then re-solve the rest.
    std::vector<bool> held(static_cast<std::size_t>(p), false);
    for (bool changed = true; changed;)
    {
      changed = false;
      for (Eigen::Index j = 0; j < p; ++j)
      {
        const auto ju = static_cast<std::size_t>(j);
        if (!held[ju] && ((bounds.upper[ju] && delta(j) > 0.0) || (bounds.lower[ju] && delta(j) < 0.0)))
        {
          held[ju] = true;
          changed = true;
        }
      }
      if (!changed)
      {
        break;
      }
      std::vector<Eigen::Index> free;
      for (Eigen::Index j = 0; j < p; ++j)
      {
        if (!held[static_cast<std::size_t>(j)])
        {
          free.push_back(j);
        }
      }
      delta.setZero();
      grad.setZero();
      if (free.empty())
      {
        break;
      }
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd sub(nf, nf);
      Eigen::VectorXd g(nf);
      for (Eigen::Index a = 0; a < nf; ++a)
      {
        g(a) = jac.col(free[static_cast<std::size_t>(a)]).dot(r);
        for (Eigen::Index b = 0; b < nf; ++b)
        {
          sub(a, b) = normal(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
        }
      }
      const Eigen::VectorXd d = -sub.ldlt().solve(g);
      for (Eigen::Index a = 0; a < nf; ++a)
      {
        delta(free[static_cast<std::size_t>(a)]) = d(a);
        grad(free[static_cast<std::size_t>(a)]) = g(a);
      }
    }
    if (delta.isZero(0.0))
    {
      // Every descent direction leaves the admissible set.
      res.converged = true;
      break;
    }

    bool accepted = false;
    bool projected_every_try = true;
    double t = 1.0;
    Eigen::VectorXd cand;
    Eigen::VectorXd rc;
    for (int k = 0; k <= opt.max_backtracks; ++k, t *= 0.5)
    {
      const Eigen::VectorXd raw = theta + t * delta;
      cand = prob.project(raw);
      projected_every_try = projected_every_try && cand != raw;
      rc = prob.residual(cand, opt.exec);
      if (rc.norm() < cost)
      {
        accepted = true;
        break;
      }
    }
    if (!accepted)
    {
      // Stationary to rounding: no descent left along the Gauss-Newton direction.
      // Also stationary when the predicted reduction is below what the residual resolves.
      const double predicted = -grad.dot(delta);
      if (grad.norm() <= 1e-8 * jac.norm() * std::max(cost, kResidualFloor) ||
          delta.norm() <= opt.step_tolerance * (1.0 + theta.norm()) ||
          predicted <= 1e-10 * cost * cost)
      {
        res.converged = true;
        break;
      }
      if (projected_every_try)
      {
        throw ConstraintProjectionLoop(
            "projection onto the admissible set repeatedly failed to reduce the misfit");
      }
      throw NonConvergence("line search failed to reduce the misfit");
    }
    const double step = (cand - theta).norm();
    theta = cand;
    r = rc;
    cost = rc.norm();
    res.residual_history.push_back(cost);
    ++res.accepted_steps;
    if (step <= opt.step_tolerance * (1.0 + theta.norm()))
    {
      res.converged = true;
      break;
    }
  }
  if (!res.converged && small_enough(cost))
  {
    res.converged = true;
  }
  res.estimate = theta;
  if (!res.converged)
  {
    throw NonConvergence("Gauss-Newton did not converge in " +
                         std::to_string(opt.max_iterations) + " iterations");
  }
  return res;
}

// Model evaluation for exactly the dataset's (m, l) keys.
NearFieldDataset model_data(const GratingConfig &cfg, const MaterialProfile &mat,
                            const NearFieldDataset &data, Execution exec)
{
  NearFieldDataset out;
  out.h = data.h;
  out.momentum = data.momentum;
  out.truncation = data.truncation;
  std::vector<DataKey> keys;
  for (const auto &[k, t] : data.entries)
  {
    keys.push_back(k);
  }
  std::vector<TangentialTrace> traces(keys.size());
  SolveOptions inner;
  inner.exec = Execution::serial;
  for_each_index(static_cast<std::ptrdiff_t>(keys.size()), exec, [&](std::ptrdiff_t i) {
    const DataKey &k = keys[static_cast<std::size_t>(i)];
    const Solution sol = solve(cfg, mat, PlaneOrder{k.m, unit(k.l)}, inner);
    traces[static_cast<std::size_t>(i)] = near_field_trace(sol, data.h, TraceKind::scattered);
  });
  for (std::size_t i = 0; i < keys.size(); ++i)
  {
    out.entries.emplace(keys[i], std::move(traces[i]));
  }
  return out;
}

GratingConfig config_for(const NearFieldDataset &data, const GratingConfig &known)
{
  GratingConfig cfg = known;
  cfg.h = data.h;
  cfg.momentum = data.momentum;
  cfg.truncation = data.truncation;
  return cfg;
}

}  // namespace

InversionResult invert_impedance_depth(const NearFieldDataset &data, const GratingConfig &known,
                                       cplx q, double c0, double rho0,
                                       const GaussNewtonOptions &options)
{
  if (!(rho0 > 0.0) || !(c0 < known.b))
  {
    throw InvalidArgument("initial guess needs rho0 > 0 and c0 < b");
  }
  const GratingConfig base = config_for(data, known);
  const double ceiling = base.b - 1e-3 * std::max(1.0, std::abs(base.b - c0));
  LeastSquaresProblem prob;
  prob.names = {"c", "rho"};
  prob.data_norm = dataset_norm(data);
  prob.project = [ceiling](const Eigen::VectorXd &t) {
    Eigen::VectorXd out = t;
    out(0) = std::min(out(0), ceiling);
    out(1) = std::max(out(1), 1e-8);
    return out;
  };
  prob.residual = [&](const Eigen::VectorXd &t, Execution exec) {
    GratingConfig cfg = base;
    cfg.c = t(0);
    cfg.boundary = BoundaryCondition::impedance(t(1));
    const auto mat = MaterialProfile::homogeneous(cfg.b - cfg.c, q);
    return stacked_misfit(model_data(cfg, mat, data, exec), data);
  };
  return gauss_newton(prob, Eigen::Vector2d(c0, rho0), options);
}

std::size_t parameter_count(const ProfileParametrization &param)
{
  if (const auto *s = std::get_if<StackParametrization>(&param))
  {
    return static_cast<std::size_t>(s->layers);
  }
  return std::get<FourierParametrization>(param).harmonics.size();
}

MaterialProfile profile_from_parameters(const ProfileParametrization &param,
                                        const std::vector<cplx> &values, double thickness)
{
  if (values.size() != parameter_count(param))
  {
    throw InvalidArgument("parameter count does not match the parametrization");
  }
  if (const auto *s = std::get_if<StackParametrization>(&param))
  {
    if (s->layers <= 0)
    {
      throw InvalidArgument("stack parametrization needs at least one layer");
    }
    std::vector<double> t = s->thicknesses;
    if (t.empty())
    {
      t.assign(static_cast<std::size_t>(s->layers), thickness / s->layers);
    }
    if (t.size() != values.size())
    {
      throw InvalidArgument("thickness count does not match the layer count");
    }
    std::vector<StackLayer> layers;
    for (std::size_t i = 0; i < t.size(); ++i)
    {
      layers.push_back({t[i], values[i]});
    }
    return MaterialProfile::stack(std::move(layers));
  }
  const auto &f = std::get<FourierParametrization>(param);
  std::map<int, cplx> coeffs;
  for (std::size_t i = 0; i < f.harmonics.size(); ++i)
  {
    coeffs[f.harmonics[i]] += values[i];
  }
  return MaterialProfile::fourier(f.axis, std::move(coeffs));
}

std::vector<cplx> complex_estimate(const InversionResult &result)
{
  std::vector<cplx> out;
  for (Eigen::Index i = 0; i + 1 < result.estimate.size(); i += 2)
  {
    out.emplace_back(result.estimate(i), result.estimate(i + 1));
  }
  return out;
}

InversionResult invert_refractive_profile(const NearFieldDataset &data, const GratingConfig &known,
                                          const ProfileParametrization &param,
                                          const std::vector<cplx> &init,
                                          const GaussNewtonOptions &options)
{
  if (known.boundary.kind != BoundaryKind::pec)
  {
    throw InvalidArgument("refractive-profile inversion assumes a PEC bottom");
  }
  const std::size_t count = parameter_count(param);
  if (init.size() != count)
  {
    throw InvalidArgument("initial guess has the wrong number of components");
  }
  const GratingConfig base = config_for(data, known);
  const double thickness = base.b - base.c;
  const double gamma = options.coercivity;

  LeastSquaresProblem prob;
  for (std::size_t i = 0; i < count; ++i)
  {
    prob.names.push_back("q" + std::to_string(i) + ".re");
    prob.names.push_back("q" + std::to_string(i) + ".im");
  }
  if (static_cast<Eigen::Index>(2 * count) > stacked_misfit(data, data).size())
  {
    throw InvalidArgument("more parameters than data");
  }
  prob.data_norm = dataset_norm(data);

  auto values_of = [count](const Eigen::VectorXd &t) {
    std::vector<cplx> v(count);
    for (std::size_t i = 0; i < count; ++i)
    {
      v[i] = cplx(t(static_cast<Eigen::Index>(2 * i)), t(static_cast<Eigen::Index>(2 * i + 1)));
    }
    return v;
  };

  if (std::holds_alternative<StackParametrization>(param))
  {
    prob.project = [gamma](const Eigen::VectorXd &t) {
      Eigen::VectorXd out = t;
      for (Eigen::Index i = 0; i + 1 < out.size(); i += 2)
      {
        out(i) = std::max(out(i), gamma);
        out(i + 1) = std::max(out(i + 1), 0.0);
      }
      return out;
    };
  }
  else
  {
    // Shift the mean term until min Re q >= gamma and min Im q >= 0 on a sample grid.
    const auto f = std::get<FourierParametrization>(param);
    const auto zero = std::find(f.harmonics.begin(), f.harmonics.end(), 0);
    const auto zero_pos = zero - f.harmonics.begin();
    prob.project = [=](const Eigen::VectorXd &t) {
      Eigen::VectorXd out = t;
      if (zero == f.harmonics.end())
      {
        return out;
      }
      const std::vector<cplx> v = values_of(out);
      Fourier1D prof{f.axis, {}};
      for (std::size_t i = 0; i < v.size(); ++i)
      {
        prof.coeffs[f.harmonics[i]] += v[i];
      }
      double min_re = std::numeric_limits<double>::infinity();
      double min_im = std::numeric_limits<double>::infinity();
      for (int s = 0; s < 256; ++s)
      {
        const cplx q = prof.value(2.0 * kPi * s / 256.0);
        min_re = std::min(min_re, q.real());
        min_im = std::min(min_im, q.imag());
      }
      if (min_re < gamma)
      {
        out(2 * zero_pos) += gamma - min_re;
      }
      if (min_im < 0.0)
      {
        out(2 * zero_pos + 1) -= min_im;
      }
      return out;
    };
  }
  prob.residual = [&](const Eigen::VectorXd &t, Execution exec) {
    const auto mat = profile_from_parameters(param, values_of(t), thickness);
    return stacked_misfit(model_data(base, mat, data, exec), data);
  };

  Eigen::VectorXd theta(static_cast<Eigen::Index>(2 * count));
  for (std::size_t i = 0; i < count; ++i)
  {
    theta(static_cast<Eigen::Index>(2 * i)) = init[i].real();
    theta(static_cast<Eigen::Index>(2 * i + 1)) = init[i].imag();
  }
  return gauss_newton(prob, theta, options);
}

namespace
{

// q at height z as a map harmonic -> coefficient along the modulation axis.
std::map<int, cplx> harmonics_at(const MaterialProfile &mat, double z, double c)
{
  if (mat.is_stack())
  {
    double top = c;
    const auto &layers = mat.as_stack().layers;
    for (const auto &l : layers)
    {
      top += l.thickness;
      if (z < top)
      {
        return {{0, l.q}};
      }
    }
    return {{0, layers.back().q}};
  }
  return mat.as_fourier().coeffs;
}

std::vector<double> breakpoints(const MaterialProfile &mat, double c)
{
  std::vector<double> out;
  if (mat.is_stack())
  {
    double z = c;
    const auto &layers = mat.as_stack().layers;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    {
      z += layers[i].thickness;
      out.push_back(z);
    }
  }
  return out;
}

template <int N>
cplx gauss_legendre(const std::function<cplx(double)> &f, double a, double b)
{
  using rule = boost::math::quadrature::gauss<double, N>;
  const auto &x = rule::abscissa();
  const auto &w = rule::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  cplx sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    if (x[i] == 0.0)
    {
      sum += w[i] * f(mid);
      continue;
    }
    sum += w[i] * (f(mid + half * x[i]) + f(mid - half * x[i]));
  }
  return half * sum;
}

}  // namespace

cplx orthogonality_residual(const MaterialProfile &q1, const MaterialProfile &q2,
                            const GratingConfig &config, const PlaneOrder &probe1,
                            const PlaneOrder &probe2, const OrthogonalityOptions &options)
{
  if (config.boundary.kind != BoundaryKind::pec)
  {
    throw InvalidArgument("orthogonality relation is stated for a PEC bottom");
  }
  const Solution s1 = solve(config, q1, probe1, options.solve);
  SolveOptions adjoint = options.solve;
  adjoint.allow_active_media = true;
  const Solution s2 = solve(config, q2.conjugated(), probe2, adjoint);
  const Truncation &tr = s1.truncation();
  const auto &modes = tr.modes();
  const Axis axis = !q1.is_stack()   ? q1.as_fourier().axis
                    : !q2.is_stack() ? q2.as_fourier().axis
                                     : Axis::x1;
  if (!q1.is_stack() && !q2.is_stack() && q1.as_fourier().axis != q2.as_fourier().axis)
  {
    throw UnsupportedCombination("profiles modulated along different axes");
  }

  std::vector<double> cuts = {config.c, config.b};
  for (const auto *m : {&q1, &q2})
  {
    const auto b = breakpoints(*m, config.c);
    cuts.insert(cuts.end(), b.begin(), b.end());
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             cuts.end());

  auto integrand_for = [&](double mid) {
    std::map<int, cplx> dq = harmonics_at(q1, mid, config.c);
    for (const auto &[j, v] : harmonics_at(q2, mid, config.c))
    {
      dq[j] -= v;
    }
    return [&, dq](double z) {
      const ModalSlice e1 = s1.modal(z, Side::below);
      const ModalSlice e2 = s2.modal(z, Side::below);
      cplx sum = 0.0;
      for (std::size_t i = 0; i < modes.size(); ++i)
      {
        CVec3 conv = CVec3::Zero();
        for (const auto &[j, v] : dq)
        {
          if (v == cplx(0.0))
          {
            continue;
          }
          ModeIndex src = modes[i];
          (axis == Axis::x1 ? src.n1 : src.n2) -= j;
          if (tr.contains(src))
          {
            conv += v * e1.e[tr.index(src)];
          }
        }
        sum += bilinear_dot(conv, e2.e[i].conjugate());
      }
      return 4.0 * kPi * kPi * sum;
    };
  };

  cplx coarse = 0.0;
  cplx fine = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
  {
    const double a = cuts[k];
    const double b = cuts[k + 1];
    const auto f = integrand_for(0.5 * (a + b));
    coarse += gauss_legendre<24>(f, a, b);
    fine += gauss_legendre<48>(f, a, b);
  }
  const double err = std::abs(fine - coarse);
  if (err > options.tolerance * std::max(std::abs(fine), kResidualFloor) && err > 0.0)
  {
    throw QuadratureNonconvergence("vertical quadrature estimate " + std::to_string(err) +
                                   " exceeds tolerance");
  }
  return fine;
}

std::vector<IndicatorPoint> blowup_indicator(const GratingConfig &config, cplx k1,
                                             const std::vector<double> &depths, const Vec3 &r,
                                             const BlowupOptions &options)
{
  GratingConfig cfg = config;
  cfg.truncation = options.truncation;
  const cplx q = k1 * k1 / (cfg.k0 * cfg.k0);
  const auto mat = MaterialProfile::homogeneous(cfg.b - cfg.c, q);
  const double plane = options.test_plane.value_or(cfg.c);
  std::vector<IndicatorPoint> out;
  for (const double z3 : depths)
  {
    const Vec3 y0(options.probe_xy(0), options.probe_xy(1), z3);
    const Solution sol = solve_dipole(cfg, mat, y0, r, cfg.momentum.conjugate(), options.solve);
    const ModalSlice tot = sol.modal(plane, Side::above);
    const ModalSlice inc = sol.incident_modal(plane, Side::above);
    double sum = 0.0;
    for (std::size_t i = 0; i < tot.e.size(); ++i)
    {
      const CVec3 e = tot.e[i] - inc.e[i];
      const CVec3 f = tot.f[i] - inc.f[i];
      if (cfg.boundary.kind == BoundaryKind::pec)
      {
        sum += std::norm(e(0)) + std::norm(e(1));
      }
      else
      {
        const cplx ir = kI * cfg.boundary.rho;
        sum += std::norm(-f(1) - ir * e(0)) + std::norm(f(0) - ir * e(1));
      }
    }
    out.push_back({z3, z3 - cfg.c, 2.0 * kPi * std::sqrt(sum)});
  }
  return out;
}

}  // namespace grating
