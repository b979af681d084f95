// SPDX-License-Identifier: Apache-2.0
#include "bvp_oracle.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace oracle
{

namespace
{

using grating::cplx;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
const cplx I{0.0, 1.0};

struct Layer
{
  double thickness;
  Mat q;  // Toeplitz matrix of q on the group
};

struct Problem
{
  std::vector<ModeIndex> modes;
  std::vector<double> a1, a2;
  std::vector<cplx> beta;
  std::vector<Layer> layers;
  Mat vacuum;
  Vec top_rhs;  // 4G rows of the top conditions
  Eigen::Index g = 0;
};

cplx vacuum_beta(double k, double a1, double a2)
{
  const double d = k * k - a1 * a1 - a2 * a2;
  return d >= 0.0 ? cplx(std::sqrt(d), 0.0) : cplx(0.0, std::sqrt(-d));
}

Mat system_matrix(const Problem &p, const Mat &q, double k)
{
  const Eigen::Index g = p.g;
  Mat ax = Mat::Zero(g, g), ay = Mat::Zero(g, g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    ax(i, i) = p.a1[static_cast<std::size_t>(i)];
    ay(i, i) = p.a2[static_cast<std::size_t>(i)];
  }
  const Mat qi = q.inverse();
  const Mat id = Mat::Identity(g, g);
  const double k2 = k * k;
  // E3 = i qi (ax F2 - ay F1) / k^2, F3 = i (ax E2 - ay E1).
  Mat m = Mat::Zero(4 * g, 4 * g);
  m.block(0, 2 * g, g, g) = ax * qi * ay / k2;
  m.block(0, 3 * g, g, g) = id - ax * qi * ax / k2;
  m.block(g, 2 * g, g, g) = -id + ay * qi * ay / k2;
  m.block(g, 3 * g, g, g) = -ay * qi * ax / k2;
  m.block(2 * g, 0, g, g) = ax * ay;
  m.block(2 * g, g, g, g) = k2 * q - ax * ax;
  m.block(3 * g, 0, g, g) = ay * ay - k2 * q;
  m.block(3 * g, g, g, g) = -ay * ax;
  return m;
}

Problem setup(const grating::GratingConfig &cfg, const grating::MaterialProfile &mat,
              const grating::PlaneOrder &inc)
{
  Problem p;
  const int n = cfg.truncation;
  if (mat.is_stack())
  {
    p.modes = {inc.m};
  }
  else if (mat.as_fourier().axis == grating::Axis::x1)
  {
    for (int j = -n; j <= n; ++j)
    {
      p.modes.push_back({j, inc.m.n2});
    }
  }
  else
  {
    for (int j = -n; j <= n; ++j)
    {
      p.modes.push_back({inc.m.n1, j});
    }
  }
  p.g = static_cast<Eigen::Index>(p.modes.size());
  for (const auto &md : p.modes)
  {
    p.a1.push_back(cfg.momentum.alpha(0) + md.n1);
    p.a2.push_back(cfg.momentum.alpha(1) + md.n2);
    p.beta.push_back(vacuum_beta(cfg.k0, p.a1.back(), p.a2.back()));
  }
  if (mat.is_stack())
  {
    for (const auto &l : mat.as_stack().layers)
    {
      p.layers.push_back({l.thickness, Mat::Constant(1, 1, l.q)});
    }
  }
  else
  {
    const auto &f = mat.as_fourier();
    Mat q(p.g, p.g);
    for (Eigen::Index i = 0; i < p.g; ++i)
    {
      for (Eigen::Index j = 0; j < p.g; ++j)
      {
        const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
        const int d = f.axis == grating::Axis::x1 ? p.modes[ui].n1 - p.modes[uj].n1
                                                  : p.modes[ui].n2 - p.modes[uj].n2;
        const auto it = f.coeffs.find(d);
        q(i, j) = it == f.coeffs.end() ? cplx(0.0) : it->second;
      }
    }
    p.layers.push_back({cfg.b - cfg.c, q});
  }

  // Incident downward wave p_m on its own mode, evaluated at x3 = b.
  p.top_rhs = Vec::Zero(4 * p.g);
  for (Eigen::Index i = 0; i < p.g; ++i)
  {
    const auto ui = static_cast<std::size_t>(i);
    if (p.modes[ui] != inc.m)
    {
      continue;
    }
    const grating::CVec3 kv(p.a1[ui], p.a2[ui], -p.beta[ui]);
    const cplx kp = kv(0) * inc.p(0) + kv(1) * inc.p(1) + kv(2) * inc.p(2);
    const grating::CVec3 pm = inc.p - (kp / (cfg.k0 * cfg.k0)) * kv;
    const cplx ph = std::exp(-I * p.beta[ui] * cfg.b);
    const grating::CVec3 e = pm * ph;
    const grating::CVec3 f = I * grating::cross(kv, pm) * ph;
    p.top_rhs(i) = e(0);
    p.top_rhs(p.g + i) = e(1);
    p.top_rhs(2 * p.g + i) = f(0);
    p.top_rhs(3 * p.g + i) = f(1);
  }
  return p;
}

// Bottom condition rows acting on psi at x3 = c.
Mat bottom_rows(const Problem &p, const grating::BoundaryCondition &bc)
{
  const Eigen::Index g = p.g;
  Mat rows = Mat::Zero(2 * g, 4 * g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    if (bc.kind == grating::BoundaryKind::pec)
    {
      rows(i, i) = 1.0;
      rows(g + i, g + i) = 1.0;
    }
    else
    {
      // e3 x F - i rho E_T = 0: (-F2 - i rho E1, F1 - i rho E2).
      rows(i, 3 * g + i) = -1.0;
      rows(i, i) = -I * bc.rho;
      rows(g + i, 2 * g + i) = 1.0;
      rows(g + i, g + i) = -I * bc.rho;
    }
  }
  return rows;
}

// Top rows: [Tpsi | Ts] (psi_b-, S_T) = top_rhs with E_T continuous and F_T(+) = lambda0 F_T(-).
void top_rows(const Problem &p, const grating::GratingConfig &cfg, Mat &tpsi, Mat &ts)
{
  const Eigen::Index g = p.g;
  tpsi = Mat::Zero(4 * g, 4 * g);
  ts = Mat::Zero(4 * g, 2 * g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    const auto ui = static_cast<std::size_t>(i);
    const double a1 = p.a1[ui], a2 = p.a2[ui];
    const cplx b = p.beta[ui];
    const cplx ph = std::exp(I * b * cfg.b);
    tpsi(i, i) = 1.0;
    tpsi(g + i, g + i) = 1.0;
    tpsi(2 * g + i, 2 * g + i) = cfg.lambda0;
    tpsi(3 * g + i, 3 * g + i) = cfg.lambda0;
    ts(i, i) = -ph;
    ts(g + i, g + i) = -ph;
    // S3 = -(a1 S1 + a2 S2) / beta; F = i K x S with K = (a1, a2, beta).
    ts(2 * g + i, i) = -ph * I * (-a2 * a1 / b);
    ts(2 * g + i, g + i) = -ph * I * (-a2 * a2 / b - b);
    ts(3 * g + i, i) = -ph * I * (b + a1 * a1 / b);
    ts(3 * g + i, g + i) = -ph * I * (a1 * a2 / b);
  }
}

Coefficients assemble_result(const Problem &p, const Vec &s)
{
  Coefficients out;
  for (Eigen::Index i = 0; i < p.g; ++i)
  {
    const auto ui = static_cast<std::size_t>(i);
    const cplx s1 = s(i), s2 = s(p.g + i);
    const cplx s3 = -(p.a1[ui] * s1 + p.a2[ui] * s2) / p.beta[ui];
    out[p.modes[ui]] = CVec3(s1, s2, s3);
  }
  return out;
}

}  // namespace

Coefficients fd_plane_response(const grating::GratingConfig &cfg,
                               const grating::MaterialProfile &mat,
                               const grating::PlaneOrder &inc, int intervals)
{
  const Problem p = setup(cfg, mat, inc);
  const Eigen::Index g = p.g, w = 4 * g;
  const double total = cfg.b - cfg.c;

  // Grid aligned with the layer boundaries.
  std::vector<std::pair<double, std::size_t>> steps;
  for (std::size_t l = 0; l < p.layers.size(); ++l)
  {
    const int n = std::max(8, static_cast<int>(std::lround(intervals * p.layers[l].thickness / total)));
    for (int j = 0; j < n; ++j)
    {
      steps.push_back({p.layers[l].thickness / n, l});
    }
  }
  const auto ns = static_cast<Eigen::Index>(steps.size());
  const Eigen::Index unknowns = w * (ns + 1) + 2 * g;

  std::vector<Eigen::Triplet<cplx>> trip;
  Vec rhs = Vec::Zero(unknowns);
  auto put = [&](Eigen::Index r, Eigen::Index c0, const Mat &blk) {
    for (Eigen::Index i = 0; i < blk.rows(); ++i)
    {
      for (Eigen::Index j = 0; j < blk.cols(); ++j)
      {
        if (blk(i, j) != cplx(0.0))
        {
          trip.emplace_back(r + i, c0 + j, blk(i, j));
        }
      }
    }
  };

  Eigen::Index row = 0;
  put(row, 0, bottom_rows(p, cfg.boundary));
  row += 2 * g;
  std::vector<Mat> layer_m;
  for (const auto &l : p.layers)
  {
    layer_m.push_back(system_matrix(p, l.q, cfg.k0));
  }
  const Mat id = Mat::Identity(w, w);
  for (Eigen::Index j = 0; j < ns; ++j)
  {
    const auto &[h, l] = steps[static_cast<std::size_t>(j)];
    const Mat &m = layer_m[l];
    const Mat m2 = m * m;
    put(row, w * (j + 1), id - 0.5 * h * m + (h * h / 12.0) * m2);
    put(row, w * j, -(id + 0.5 * h * m + (h * h / 12.0) * m2));
    row += w;
  }
  Mat tpsi, ts;
  top_rows(p, cfg, tpsi, ts);
  put(row, w * ns, tpsi);
  put(row, w * (ns + 1), ts);
  rhs.segment(row, w) = p.top_rhs;

  Eigen::SparseMatrix<cplx> a(unknowns, unknowns);
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<cplx>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success)
  {
    throw std::runtime_error("finite-difference oracle: factorization failed");
  }
  const Vec x = lu.solve(rhs);
  return assemble_result(p, x.tail(2 * g));
}

Coefficients monolithic_plane_response(const grating::GratingConfig &cfg,
                                       const grating::MaterialProfile &mat,
                                       const grating::PlaneOrder &inc)
{
  const Problem p = setup(cfg, mat, inc);
  const Eigen::Index g = p.g, w = 4 * g;
  const auto nl = static_cast<Eigen::Index>(p.layers.size());
  const Eigen::Index unknowns = w * nl + 2 * g;

  // psi at the bottom and top of each layer as linear maps of its amplitudes; modes
  // decaying upward are referenced at the layer bottom, the rest at the top.
  std::vector<Mat> at_bot, at_top;
  for (const auto &l : p.layers)
  {
    Eigen::ComplexEigenSolver<Mat> es(system_matrix(p, l.q, cfg.k0));
    const Vec lam = es.eigenvalues();
    const Mat v = es.eigenvectors();
    Mat bot = v, top = v;
    for (Eigen::Index j = 0; j < w; ++j)
    {
      if (lam(j).real() < 0.0)
      {
        top.col(j) *= std::exp(lam(j) * l.thickness);
      }
      else
      {
        bot.col(j) *= std::exp(-lam(j) * l.thickness);
      }
    }
    at_bot.push_back(bot);
    at_top.push_back(top);
  }

  Mat a = Mat::Zero(unknowns, unknowns);
  Vec rhs = Vec::Zero(unknowns);
  Eigen::Index row = 0;
  a.block(row, 0, 2 * g, w) = bottom_rows(p, cfg.boundary) * at_bot[0];
  row += 2 * g;
  for (Eigen::Index l = 0; l + 1 < nl; ++l)
  {
    a.block(row, w * l, w, w) = at_top[static_cast<std::size_t>(l)];
    a.block(row, w * (l + 1), w, w) = -at_bot[static_cast<std::size_t>(l + 1)];
    row += w;
  }
  Mat tpsi, ts;
  top_rows(p, cfg, tpsi, ts);
  a.block(row, w * (nl - 1), w, w) = tpsi * at_top.back();
  a.block(row, w * nl, w, 2 * g) = ts;
  rhs.segment(row, w) = p.top_rhs;

  const Vec x = a.fullPivLu().solve(rhs);
  return assemble_result(p, x.tail(2 * g));
}

double coefficient_error(const Coefficients &a, const Coefficients &b)
{
  double scale = 0.0, err = 0.0;
  for (const auto &[n, v] : b)
  {
    scale = std::max(scale, v.norm());
    const auto it = a.find(n);
    const CVec3 got = it == a.end() ? CVec3::Zero() : it->second;
    err = std::max(err, (got - v).norm());
  }
  return scale == 0.0 ? err : err / scale;
}

}  // namespace oracle
