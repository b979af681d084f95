// SPDX-License-Identifier: Apache-2.0
#include "grating/forward_solver.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "grating/dtn.hpp"
#include "grating/errors.hpp"
#include "grating/greens.hpp"

namespace grating
{

cplx refractive_index_from_materials(double epsilon, double sigma, double omega, double epsilon0)
{
  if (!(epsilon > 0.0) || !(sigma >= 0.0) || !(omega > 0.0) || !(epsilon0 > 0.0))
  {
    throw InvalidArgument("material constants must be positive (sigma >= 0)");
  }
  return cplx(epsilon, sigma / omega) / epsilon0;
}

double wavenumber_from_materials(double epsilon0, double mu, double omega)
{
  if (!(epsilon0 > 0.0) || !(mu > 0.0) || !(omega > 0.0))
  {
    throw InvalidArgument("material constants must be positive");
  }
  return std::sqrt(epsilon0 * mu) * omega;
}

void GratingConfig::validate() const
{
  std::vector<std::string> bad;
  auto finite = [](double v) { return std::isfinite(v); };
  if (!(k0 > 0.0) || !finite(k0))
  {
    bad.emplace_back("k0 must be positive");
  }
  if (!(lambda0 > 0.0) || !finite(lambda0))
  {
    bad.emplace_back("lambda0 must be positive");
  }
  if (!finite(b) || !finite(c) || !finite(h) || !(c < b) || !(b < h))
  {
    bad.emplace_back("heights must satisfy c < b < h");
  }
  if (boundary.kind == BoundaryKind::impedance && !(boundary.rho > 0.0 && finite(boundary.rho)))
  {
    bad.emplace_back("impedance rho must be positive");
  }
  if (truncation < 0)
  {
    bad.emplace_back("truncation must be non-negative");
  }
  if (!momentum.alpha.allFinite())
  {
    bad.emplace_back("momentum must be finite");
  }
  if (!bad.empty())
  {
    std::string msg = "invalid grating configuration:";
    for (const auto &s : bad)
    {
      msg += " " + s + ";";
    }
    throw ConstraintError(msg);
  }
}

cplx Fourier1D::value(double t) const
{
  cplx v = 0.0;
  for (const auto &[j, q] : coeffs)
  {
    v += q * std::exp(kI * (static_cast<double>(j) * t));
  }
  return v;
}

MaterialProfile MaterialProfile::homogeneous(double thickness, cplx q)
{
  return MaterialProfile(Stack{{StackLayer{thickness, q}}});
}

MaterialProfile MaterialProfile::stack(std::vector<StackLayer> layers)
{
  return MaterialProfile(Stack{std::move(layers)});
}

MaterialProfile MaterialProfile::fourier(Axis axis, std::map<int, cplx> coeffs)
{
  return MaterialProfile(Fourier1D{axis, std::move(coeffs)});
}

MaterialProfile MaterialProfile::staircase(const std::function<cplx(double)> &profile, double c,
                                           double b, int layers)
{
  if (layers <= 0 || !(b > c))
  {
    throw InvalidArgument("staircase needs a positive layer count and b > c");
  }
  const double t = (b - c) / layers;
  std::vector<StackLayer> out;
  out.reserve(static_cast<std::size_t>(layers));
  for (int i = 0; i < layers; ++i)
  {
    out.push_back({t, profile(c + (i + 0.5) * t)});
  }
  return stack(std::move(out));
}

std::optional<cplx> MaterialProfile::constant_value() const
{
  if (is_stack())
  {
    const auto &layers = as_stack().layers;
    if (layers.empty())
    {
      return std::nullopt;
    }
    const cplx q = layers.front().q;
    for (const auto &l : layers)
    {
      if (l.q != q)
      {
        return std::nullopt;
      }
    }
    return q;
  }
  const auto &f = as_fourier();
  cplx q0 = 0.0;
  for (const auto &[j, q] : f.coeffs)
  {
    if (j == 0)
    {
      q0 = q;
    }
    else if (q != cplx(0.0))
    {
      return std::nullopt;
    }
  }
  return q0;
}

MaterialProfile MaterialProfile::conjugated() const
{
  if (is_stack())
  {
    Stack s = as_stack();
    for (auto &l : s.layers)
    {
      l.q = std::conj(l.q);
    }
    return MaterialProfile(std::move(s));
  }
  Fourier1D f = as_fourier();
  // conj(q(t)) = sum_j conj(q_{-j}) exp(i j t)
  std::map<int, cplx> out;
  for (const auto &[j, q] : f.coeffs)
  {
    out[-j] = std::conj(q);
  }
  f.coeffs = std::move(out);
  return MaterialProfile(std::move(f));
}

void MaterialProfile::validate(double thickness, double gamma, bool require_passive) const
{
  std::vector<std::string> bad;
  auto check_q = [&](cplx q, const std::string &where) {
    if (!std::isfinite(q.real()) || !std::isfinite(q.imag()))
    {
      bad.push_back("non-finite q " + where);
    }
    else
    {
      if (q.real() < gamma)
      {
        bad.push_back("Re q < " + std::to_string(gamma) + " " + where);
      }
      if (require_passive && q.imag() < 0.0)
      {
        bad.push_back("Im q < 0 " + where);
      }
    }
  };
  if (is_stack())
  {
    const auto &layers = as_stack().layers;
    if (layers.empty())
    {
      bad.emplace_back("stack has no layers");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i)
    {
      if (!(layers[i].thickness > 0.0))
      {
        bad.push_back("layer " + std::to_string(i) + " has non-positive thickness");
      }
      total += layers[i].thickness;
      check_q(layers[i].q, "in layer " + std::to_string(i));
    }
    if (!layers.empty() && std::abs(total - thickness) > 1e-9 * std::max(1.0, thickness))
    {
      bad.push_back("layer thicknesses sum to " + std::to_string(total) + ", expected " +
                    std::to_string(thickness));
    }
  }
  else
  {
    const auto &f = as_fourier();
    if (f.coeffs.empty())
    {
      bad.emplace_back("Fourier profile has no coefficients");
    }
    int jmax = 0;
    for (const auto &[j, q] : f.coeffs)
    {
      jmax = std::max(jmax, std::abs(j));
    }
    const int samples = std::max(256, 16 * jmax);
    for (int s = 0; s < samples && bad.size() < 4; ++s)
    {
      const double t = 2.0 * kPi * s / samples;
      check_q(f.value(t), "at t = " + std::to_string(t));
    }
  }
  if (!bad.empty())
  {
    std::string msg = "invalid material profile:";
    for (const auto &s : bad)
    {
      msg += " " + s + ";";
    }
    throw ConstraintError(msg);
  }
}

namespace detail
{

using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

struct Medium
{
  bool modulated = false;
  cplx q{1.0, 0.0};
  double weight = 1.0;
};

struct Slab
{
  double z_bot = 0.0;
  double z_top = 0.0;  // +inf for the top region
  std::size_t medium = 0;
};

// Eigenbasis of one medium for one mode group of size G. Columns are 2G upward modes
// exp(i gam_up (z - z_bot)) and 2G downward modes exp(-i gam_dn (z - z_ref)).
// Rows of e and f are the x, y and z blocks; psi = (Ex, Ey, w Fx, w Fy).
struct SlabBasis
{
  Vec gam_up, gam_dn;
  Mat e_up, e_dn, f_up, f_dn;
  Mat psi_up, psi_dn;
};

struct Group
{
  std::vector<std::size_t> members;
  std::vector<Vec2> alpha;
  bool solved = false;
  std::vector<std::shared_ptr<const SlabBasis>> basis;  // per medium
  std::vector<Vec> u, d;                                 // per slab, top region last
};

enum class SourceKind
{
  plane,
  superposition,
  dipole_interior,
  dipole_exterior
};

struct SolutionData
{
  GratingConfig config;
  MaterialProfile material;
  IncidentSpec incidence;
  Truncation truncation{0};
  SolveDiagnostics diagnostics;
  RayleighField scattered;

  std::vector<Medium> media;
  std::vector<Slab> slabs;
  std::vector<Group> groups;
  std::vector<std::size_t> group_of;  // truncation index -> group

  SourceKind source = SourceKind::plane;
  RayleighField incident_down;  // plane and superposition
  double source_height = 0.0;   // superposition and dipoles
  cplx source_k{1.0, 0.0};
  std::vector<DipoleModeAmplitude> dipole;                  // per truncation index
  std::vector<CVec3> super_up, super_down;                  // superposition amplitudes on its plane
  std::vector<cplx> super_beta;
};

}  // namespace detail

namespace
{

using detail::Group;
using detail::Mat;
using detail::Medium;
using detail::SlabBasis;
using detail::SolutionData;
using detail::SourceKind;
using detail::Vec;

constexpr double kInterfaceTolerance = 1e-9;

std::shared_ptr<const SlabBasis> homogeneous_basis(const std::vector<Vec2> &alpha, double k0,
                                                   const Medium &medium)
{
  const auto g = static_cast<Eigen::Index>(alpha.size());
  const cplx k2 = k0 * k0 * medium.q;
  auto basis = std::make_shared<SlabBasis>();
  basis->gam_up.resize(2 * g);
  basis->gam_dn.resize(2 * g);
  for (auto *m : {&basis->e_up, &basis->e_dn, &basis->f_up, &basis->f_dn})
  {
    m->setZero(3 * g, 2 * g);
  }
  for (Eigen::Index i = 0; i < g; ++i)
  {
    const Vec2 &a = alpha[static_cast<std::size_t>(i)];
    const cplx gam = beta_in_medium(k2, a);
    const double an = a.norm();
    const CVec3 s = an > 1e-12 ? CVec3(-a(1) / an, a(0) / an, 0.0) : CVec3(0.0, 1.0, 0.0);
    basis->gam_up(i) = basis->gam_up(g + i) = gam;
    basis->gam_dn(i) = basis->gam_dn(g + i) = gam;
    for (int dir = 0; dir < 2; ++dir)
    {
      const CVec3 kv(a(0), a(1), dir == 0 ? gam : -gam);
      CVec3 p = cross(kv, s);
      p /= p.norm();
      Mat &e = dir == 0 ? basis->e_up : basis->e_dn;
      Mat &f = dir == 0 ? basis->f_up : basis->f_dn;
      const CVec3 fs = kI * cross(kv, s);
      const CVec3 fp = kI * cross(kv, p);
      for (Eigen::Index r = 0; r < 3; ++r)
      {
        e(r * g + i, i) = s(r);
        e(r * g + i, g + i) = p(r);
        f(r * g + i, i) = fs(r);
        f(r * g + i, g + i) = fp(r);
      }
    }
  }
  auto psi = [&](const Mat &e, const Mat &f) {
    Mat out(4 * g, 2 * g);
    out << e.topRows(2 * g), medium.weight * f.topRows(2 * g);
    return out;
  };
  basis->psi_up = psi(basis->e_up, basis->f_up);
  basis->psi_dn = psi(basis->e_dn, basis->f_dn);
  return basis;
}

cplx fourier_coeff(const Fourier1D &f, int j)
{
  const auto it = f.coeffs.find(j);
  return it == f.coeffs.end() ? cplx(0.0) : it->second;
}

struct ClassifiedMode
{
  cplx gamma;
  Eigen::Index column;
};

std::shared_ptr<const SlabBasis> modulated_basis(const std::vector<Vec2> &alpha,
                                                 const std::vector<int> &along, double k0,
                                                 const Fourier1D &profile, double w)
{
  const auto g = static_cast<Eigen::Index>(alpha.size());
  Mat q(g, g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    for (Eigen::Index j = 0; j < g; ++j)
    {
      q(i, j) = fourier_coeff(profile, along[static_cast<std::size_t>(i)] -
                                           along[static_cast<std::size_t>(j)]);
    }
  }
  Eigen::PartialPivLU<Mat> qlu(q);
  if (qlu.rcond() < 1e-14)
  {
    throw SingularSystem("Toeplitz matrix of q is singular", qlu.rcond());
  }
  const Mat qi = qlu.inverse();
  Mat ax = Mat::Zero(g, g), ay = Mat::Zero(g, g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    ax(i, i) = alpha[static_cast<std::size_t>(i)](0);
    ay(i, i) = alpha[static_cast<std::size_t>(i)](1);
  }
  const double k2 = k0 * k0;
  const Mat id = Mat::Identity(g, g);
  Mat m(4 * g, 4 * g);
  m.block(0, 0, g, g).setZero();
  m.block(0, g, g, g).setZero();
  m.block(0, 2 * g, g, g) = ax * qi * ay / (w * k2);
  m.block(0, 3 * g, g, g) = id / w - ax * qi * ax / (w * k2);
  m.block(g, 0, g, g).setZero();
  m.block(g, g, g, g).setZero();
  m.block(g, 2 * g, g, g) = -id / w + ay * qi * ay / (w * k2);
  m.block(g, 3 * g, g, g) = -ay * qi * ax / (w * k2);
  m.block(2 * g, 0, g, g) = w * ax * ay;
  m.block(2 * g, g, g, g) = w * (k2 * q - ax * ax);
  m.block(2 * g, 2 * g, 2 * g, 2 * g).setZero();
  m.block(3 * g, 0, g, g) = w * (ay * ay - k2 * q);
  m.block(3 * g, g, g, g) = -w * ay * ax;

  Eigen::ComplexEigenSolver<Mat> es(m);
  if (es.info() != Eigen::Success)
  {
    throw SingularSystem("eigen-decomposition of the modulated slab failed", 0.0);
  }
  const Vec lam = es.eigenvalues();
  const Mat vec = es.eigenvectors();

  // lambda = i gamma; up-going when Im gamma > 0, ties (propagating) broken by Re gamma > 0.
  const double scale = k0 + alpha.front().norm() + alpha.back().norm() + 1.0;
  std::vector<ClassifiedMode> up, down;
  for (Eigen::Index j = 0; j < lam.size(); ++j)
  {
    const cplx gamma = -kI * lam(j);
    const bool tie = std::abs(gamma.imag()) <= 1e-10 * scale;
    const bool is_up = tie ? gamma.real() > 0.0 : gamma.imag() > 0.0;
    (is_up ? up : down).push_back({gamma, j});
  }
  if (up.size() != down.size())
  {
    throw SingularSystem("modulated slab has an unbalanced up/down mode split", 0.0);
  }
  auto order = [](const ClassifiedMode &a, const ClassifiedMode &b) {
    if (a.gamma.imag() != b.gamma.imag())
    {
      return a.gamma.imag() < b.gamma.imag();
    }
    return a.gamma.real() < b.gamma.real();
  };
  std::sort(up.begin(), up.end(), order);
  for (auto &d : down)
  {
    d.gamma = -d.gamma;
  }
  std::sort(down.begin(), down.end(), order);

  auto basis = std::make_shared<SlabBasis>();
  basis->gam_up.resize(2 * g);
  basis->gam_dn.resize(2 * g);
  basis->psi_up.resize(4 * g, 2 * g);
  basis->psi_dn.resize(4 * g, 2 * g);
  for (Eigen::Index j = 0; j < 2 * g; ++j)
  {
    basis->gam_up(j) = up[static_cast<std::size_t>(j)].gamma;
    basis->gam_dn(j) = down[static_cast<std::size_t>(j)].gamma;
    basis->psi_up.col(j) = vec.col(up[static_cast<std::size_t>(j)].column);
    basis->psi_dn.col(j) = vec.col(down[static_cast<std::size_t>(j)].column);
  }
  auto fields = [&](const Mat &psi, Mat &e, Mat &f) {
    const Mat ex = psi.middleRows(0, g), ey = psi.middleRows(g, g);
    const Mat fx = psi.middleRows(2 * g, g) / w, fy = psi.middleRows(3 * g, g) / w;
    e.resize(3 * g, 2 * g);
    f.resize(3 * g, 2 * g);
    e << ex, ey, (kI / k2) * (qi * (ax * fy - ay * fx));
    f << fx, fy, kI * (ax * ey - ay * ex);
  };
  fields(basis->psi_up, basis->e_up, basis->f_up);
  fields(basis->psi_dn, basis->e_dn, basis->f_dn);
  return basis;
}

Vec phase_vector(const Vec &gam, double dz)
{
  Vec out(gam.size());
  for (Eigen::Index i = 0; i < gam.size(); ++i)
  {
    out(i) = std::exp(kI * gam(i) * dz);
  }
  return out;
}

struct GroupProblem
{
  const SolutionData *data = nullptr;
  Group *group = nullptr;
  std::vector<Vec> jumps;  // at the top of slab s, empty if none
  Vec d_inc;
  double rcond_floor = 1e-14;
};

// Bottom rows B psi = 0 for the boundary condition at x3 = c.
Mat bottom_rows(const GratingConfig &config, Eigen::Index g, double w)
{
  Mat b = Mat::Zero(2 * g, 4 * g);
  const Mat id = Mat::Identity(g, g);
  if (config.boundary.kind == BoundaryKind::pec)
  {
    b.block(0, 0, g, g) = id;
    b.block(g, g, g, g) = id;
  }
  else
  {
    // (-Fy - i rho Ex, Fx - i rho Ey) = 0 with F = H / w.
    const cplx ir = kI * config.boundary.rho;
    b.block(0, 0, g, g) = -ir * id;
    b.block(0, 3 * g, g, g) = -id / w;
    b.block(g, g, g, g) = -ir * id;
    b.block(g, 2 * g, g, g) = id / w;
  }
  return b;
}

double solve_group(GroupProblem &prob)
{
  const SolutionData &data = *prob.data;
  Group &grp = *prob.group;
  const auto g = static_cast<Eigen::Index>(grp.members.size());
  const std::size_t s_count = data.slabs.size() - 1;  // finite slabs
  double min_rcond = 1.0;

  auto basis_of = [&](std::size_t s) -> const SlabBasis & {
    return *grp.basis[data.slabs[s].medium];
  };
  auto thick = [&](std::size_t s) { return data.slabs[s].z_top - data.slabs[s].z_bot; };

  std::vector<Mat> gamma(s_count + 1), trans(s_count);
  std::vector<Vec> gvec(s_count + 1), tvec(s_count);

  {
    const SlabBasis &b0 = basis_of(0);
    const Mat brow = bottom_rows(data.config, g, data.media[data.slabs[0].medium].weight);
    Eigen::PartialPivLU<Mat> lu(brow * b0.psi_up);
    min_rcond = std::min(min_rcond, lu.rcond());
    if (lu.rcond() < prob.rcond_floor)
    {
      throw SingularSystem("bottom boundary system is singular", lu.rcond());
    }
    gamma[0] = -lu.solve(brow * b0.psi_dn);
    gvec[0] = Vec::Zero(2 * g);
  }

  for (std::size_t s = 0; s < s_count; ++s)
  {
    const SlabBasis &cur = basis_of(s);
    const SlabBasis &next = basis_of(s + 1);
    const double t = thick(s);
    const Vec pu = phase_vector(cur.gam_up, t);
    const Vec pd = phase_vector(cur.gam_dn, t);
    const Mat a = cur.psi_up * pu.asDiagonal() * gamma[s] * pd.asDiagonal() + cur.psi_dn;
    const Vec av = cur.psi_up * pu.asDiagonal() * gvec[s];
    Mat c(4 * g, 4 * g);
    c << a, -next.psi_up;
    Eigen::PartialPivLU<Mat> lu(c);
    min_rcond = std::min(min_rcond, lu.rcond());
    if (lu.rcond() < prob.rcond_floor)
    {
      throw SingularSystem("interface system at x3 = " + std::to_string(data.slabs[s].z_top) +
                               " is singular",
                           lu.rcond());
    }
    const Mat x = lu.solve(next.psi_dn);
    Vec rhs = -av;
    if (prob.jumps[s].size() != 0)
    {
      rhs -= prob.jumps[s];
    }
    const Vec xv = lu.solve(rhs);
    trans[s] = x.topRows(2 * g);
    gamma[s + 1] = x.bottomRows(2 * g);
    tvec[s] = xv.head(2 * g);
    gvec[s + 1] = xv.tail(2 * g);
  }

  grp.u.assign(s_count + 1, Vec());
  grp.d.assign(s_count + 1, Vec());
  grp.d[s_count] = prob.d_inc;
  grp.u[s_count] = gamma[s_count] * prob.d_inc + gvec[s_count];
  Vec dhat = prob.d_inc;
  for (std::size_t s = s_count; s-- > 0;)
  {
    grp.d[s] = trans[s] * dhat + tvec[s];
    dhat = phase_vector(basis_of(s).gam_dn, thick(s)).asDiagonal() * grp.d[s];
    grp.u[s] = gamma[s] * dhat + gvec[s];
  }
  grp.solved = true;
  return min_rcond;
}

// Amplitudes (in the basis of `basis`) of a field with given E vectors per group member,
// using the tangential components of the downward (or upward) columns.
Vec tangential_amplitudes(const Mat &e, Eigen::Index g, const std::vector<CVec3> &ev)
{
  Vec out = Vec::Zero(2 * g);
  for (Eigen::Index i = 0; i < g; ++i)
  {
    const CVec3 &v = ev[static_cast<std::size_t>(i)];
    if (v.isZero(0.0))
    {
      continue;
    }
    Eigen::Matrix2cd m;
    m << e(i, i), e(i, g + i), e(g + i, i), e(g + i, g + i);
    const Eigen::Vector2cd c = m.partialPivLu().solve(Eigen::Vector2cd(v(0), v(1)));
    out(i) = c(0);
    out(g + i) = c(1);
  }
  return out;
}

std::size_t slab_index(const SolutionData &data, double z, Side side)
{
  const double tol = kInterfaceTolerance * std::max(1.0, std::abs(data.config.b - data.config.c));
  if (z < data.config.c - tol)
  {
    throw InvalidArgument("field evaluated below the bottom plane x3 = c");
  }
  const std::size_t n = data.slabs.size();
  for (std::size_t s = 0; s < n; ++s)
  {
    const auto &sl = data.slabs[s];
    if (s + 1 == n)
    {
      return s;
    }
    if (z < sl.z_top - tol)
    {
      return s;
    }
    if (std::abs(z - sl.z_top) <= tol)
    {
      return side == Side::below ? s : s + 1;
    }
  }
  return n - 1;
}

void add_dipole_jumps(SolutionData &data, std::vector<GroupProblem> &problems,
                      std::size_t interface_slab, const DipoleSource &src)
{
  const auto &modes = data.truncation.modes();
  const double w = data.media[data.slabs[interface_slab].medium].weight;
  data.dipole.resize(modes.size());
  for (std::size_t i = 0; i < modes.size(); ++i)
  {
    data.dipole[i] = dipole_mode_amplitude(modes[i], src.y0, src.r, data.source_k,
                                           data.config.momentum);
  }
  for (auto &prob : problems)
  {
    const Group &grp = *prob.group;
    const auto g = static_cast<Eigen::Index>(grp.members.size());
    Vec j = Vec::Zero(4 * g);
    for (Eigen::Index i = 0; i < g; ++i)
    {
      const auto &amp = data.dipole[grp.members[static_cast<std::size_t>(i)]];
      const Vec2 &a = grp.alpha[static_cast<std::size_t>(i)];
      const CVec3 kup(a(0), a(1), amp.beta), kdn(a(0), a(1), -amp.beta);
      const CVec3 de = amp.up - amp.down;
      const CVec3 df = kI * (cross(kup, amp.up) - cross(kdn, amp.down));
      j(i) = de(0);
      j(g + i) = de(1);
      j(2 * g + i) = w * df(0);
      j(3 * g + i) = w * df(1);
    }
    prob.jumps[interface_slab] = j;
  }
}

ModalSlice zero_slice(std::size_t n)
{
  return {std::vector<CVec3>(n, CVec3::Zero()), std::vector<CVec3>(n, CVec3::Zero())};
}

ModalSlice evaluate_incident(const SolutionData &data, double z, Side side);

ModalSlice evaluate_modal(const SolutionData &data, double z, Side side)
{
  const std::size_t n = data.truncation.size();
  ModalSlice out = zero_slice(n);
  const std::size_t s = slab_index(data, z, side);
  const auto &sl = data.slabs[s];
  const bool top = s + 1 == data.slabs.size();
  const double z_ref_down = sl.z_top;
  for (const auto &grp : data.groups)
  {
    if (!grp.solved)
    {
      continue;
    }
    const SlabBasis &b = *grp.basis[sl.medium];
    const auto g = static_cast<Eigen::Index>(grp.members.size());
    const Vec cu = phase_vector(b.gam_up, z - sl.z_bot).asDiagonal() * grp.u[s];
    Vec e = b.e_up * cu;
    Vec f = b.f_up * cu;
    if (!top)
    {
      const Vec cd = phase_vector(b.gam_dn, -(z - z_ref_down)).asDiagonal() * grp.d[s];
      e += b.e_dn * cd;
      f += b.f_dn * cd;
    }
    for (Eigen::Index i = 0; i < g; ++i)
    {
      const std::size_t idx = grp.members[static_cast<std::size_t>(i)];
      out.e[idx] = CVec3(e(i), e(g + i), e(2 * g + i));
      out.f[idx] = CVec3(f(i), f(g + i), f(2 * g + i));
    }
  }
  // Above the slabs the downward part is exactly the free incident field.
  if (top && (data.source == SourceKind::plane || data.source == SourceKind::superposition))
  {
    const ModalSlice inc = evaluate_incident(data, z, side);
    for (std::size_t i = 0; i < n; ++i)
    {
      out.e[i] += inc.e[i];
      out.f[i] += inc.f[i];
    }
  }
  return out;
}

ModalSlice evaluate_incident(const SolutionData &data, double z, Side side)
{
  const std::size_t n = data.truncation.size();
  ModalSlice out = zero_slice(n);
  const auto &cfg = data.config;
  const auto &modes = data.truncation.modes();
  const double tol = kInterfaceTolerance * std::max(1.0, std::abs(cfg.b - cfg.c));
  const bool in_vacuum = z > cfg.b + tol || (std::abs(z - cfg.b) <= tol && side == Side::above);
  switch (data.source)
  {
  case SourceKind::plane:
    if (in_vacuum)
    {
      for (const auto &[m, p] : data.incident_down.coeffs)
      {
        const CVec3 kv = data.incident_down.wavevector(m);
        const cplx ph = std::exp(kI * kv(2) * z);
        const std::size_t idx = data.truncation.index(m);
        out.e[idx] = p * ph;
        out.f[idx] = kI * cross(kv, p) * ph;
      }
    }
    break;
  case SourceKind::superposition:
    if (in_vacuum)
    {
      const bool above = z > data.source_height || (z == data.source_height && side == Side::above);
      for (std::size_t i = 0; i < n; ++i)
      {
        const Vec2 a = alpha_n(cfg.momentum, modes[i]);
        const cplx b = data.super_beta[i];
        const CVec3 kv(a(0), a(1), above ? b : -b);
        const CVec3 &amp = above ? data.super_up[i] : data.super_down[i];
        const cplx ph = std::exp(kI * kv(2) * (z - data.source_height));
        out.e[i] = amp * ph;
        out.f[i] = kI * cross(kv, amp) * ph;
      }
    }
    break;
  case SourceKind::dipole_interior:
  case SourceKind::dipole_exterior:
  {
    const bool region = data.source == SourceKind::dipole_interior
                            ? (z <= cfg.b + tol && !(std::abs(z - cfg.b) <= tol && side == Side::above))
                            : in_vacuum;
    if (!region)
    {
      break;
    }
    const bool above =
        z > data.source_height || (z == data.source_height && side == Side::above);
    for (std::size_t i = 0; i < n; ++i)
    {
      const auto &amp = data.dipole[i];
      const Vec2 a = alpha_n(cfg.momentum, modes[i]);
      const CVec3 kv(a(0), a(1), above ? amp.beta : -amp.beta);
      const CVec3 &v = above ? amp.up : amp.down;
      const cplx ph = std::exp(kI * kv(2) * (z - data.source_height));
      out.e[i] = v * ph;
      out.f[i] = kI * cross(kv, v) * ph;
    }
    break;
  }
  }
  return out;
}

CVec3 sum_modes(const SolutionData &data, const std::vector<CVec3> &coeffs, const Vec3 &x)
{
  CVec3 sum = CVec3::Zero();
  const auto &modes = data.truncation.modes();
  for (std::size_t i = 0; i < modes.size(); ++i)
  {
    if (coeffs[i].isZero(0.0))
    {
      continue;
    }
    const Vec2 a = alpha_n(data.config.momentum, modes[i]);
    sum += coeffs[i] * std::exp(kI * (a(0) * x(0) + a(1) * x(1)));
  }
  return sum;
}

std::shared_ptr<SolutionData> run_solver(const GratingConfig &config,
                                         const MaterialProfile &material,
                                         const IncidentSpec &incidence,
                                         const SolveOptions &options)
{
  config.validate();
  material.validate(config.b - config.c, kDefaultCoercivity, !options.allow_active_media);

  auto data = std::make_shared<SolutionData>();
  data->config = config;
  data->material = material;
  data->incidence = incidence;
  data->truncation = Truncation(config.truncation);
  const auto &modes = data->truncation.modes();
  const std::size_t n = modes.size();
  const double tol = kInterfaceTolerance * std::max(1.0, config.b - config.c);
  // The truncation must be Wood-free, excited or not.
  for (const auto &m : modes)
  {
    beta_n(config.k0, alpha_n(config.momentum, m));
  }

  // Media and slabs, bottom to top; the vacuum medium is last.
  std::vector<double> cuts;  // finite slab tops
  std::vector<std::size_t> slab_medium;
  if (material.is_stack())
  {
    double z = config.c;
    for (const auto &layer : material.as_stack().layers)
    {
      data->media.push_back({false, layer.q, config.lambda0});
      z += layer.thickness;
      cuts.push_back(z);
      slab_medium.push_back(data->media.size() - 1);
    }
    cuts.back() = config.b;
  }
  else
  {
    const auto cv = material.constant_value();
    data->media.push_back({!cv.has_value(), cv.value_or(cplx(1.0)), config.lambda0});
    cuts.push_back(config.b);
    slab_medium.push_back(0);
  }
  data->media.push_back({false, cplx(1.0), 1.0});
  const std::size_t vacuum = data->media.size() - 1;

  std::optional<std::size_t> jump_slab;
  const DipoleSource *dipole = std::get_if<DipoleSource>(&incidence);
  if (dipole != nullptr)
  {
    const double y3 = dipole->y0(2);
    if (!dipole->y0.allFinite() || !dipole->r.allFinite())
    {
      throw InvalidArgument("dipole position and polarization must be finite");
    }
    auto on_interface = [&](double z) { return std::abs(y3 - z) <= tol; };
    if (on_interface(config.c) || on_interface(config.b) ||
        std::any_of(cuts.begin(), cuts.end(), on_interface))
    {
      throw SourceOnInterface("dipole source lies on a layer interface");
    }
    if (y3 < config.c)
    {
      throw InvalidArgument("dipole source below the bottom plane");
    }
    data->source_height = y3;
    if (y3 < config.b)
    {
      const auto q = material.constant_value();
      if (!q.has_value())
      {
        throw UnsupportedCombination("interior dipole sources need a constant material");
      }
      data->source = SourceKind::dipole_interior;
      data->source_k = config.k0 * std::sqrt(*q);
      const auto pos = std::upper_bound(cuts.begin(), cuts.end(), y3) - cuts.begin();
      cuts.insert(cuts.begin() + pos, y3);
      slab_medium.insert(slab_medium.begin() + pos, slab_medium[static_cast<std::size_t>(pos)]);
      jump_slab = static_cast<std::size_t>(pos);
    }
    else
    {
      data->source = SourceKind::dipole_exterior;
      data->source_k = config.k0;
      cuts.push_back(y3);
      slab_medium.push_back(vacuum);
      jump_slab = cuts.size() - 1;
    }
  }
  else if (const auto *sup = std::get_if<SuperpositionSource>(&incidence))
  {
    if (!(sup->height > config.b + tol))
    {
      throw InvalidArgument("superposition source plane must lie above x3 = b");
    }
    data->source = SourceKind::superposition;
    data->source_height = sup->height;
  }
  else
  {
    data->source = SourceKind::plane;
  }

  double z = config.c;
  for (std::size_t s = 0; s < cuts.size(); ++s)
  {
    data->slabs.push_back({z, cuts[s], slab_medium[s]});
    z = cuts[s];
  }
  data->slabs.push_back({z, std::numeric_limits<double>::infinity(), vacuum});

  // Mode groups: single modes for stacks, lines along the modulation axis for Fourier1D.
  data->group_of.assign(n, 0);
  const bool coupled = data->media.front().modulated;
  const Axis axis = coupled ? material.as_fourier().axis : Axis::x1;
  const int width = 2 * config.truncation + 1;
  if (coupled)
  {
    data->groups.resize(static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < n; ++i)
    {
      const int other = axis == Axis::x1 ? modes[i].n2 : modes[i].n1;
      const auto gi = static_cast<std::size_t>(other + config.truncation);
      data->groups[gi].members.push_back(i);
      data->group_of[i] = gi;
    }
  }
  else
  {
    data->groups.resize(n);
    for (std::size_t i = 0; i < n; ++i)
    {
      data->groups[i].members.push_back(i);
      data->group_of[i] = i;
    }
  }
  for (auto &grp : data->groups)
  {
    for (const auto idx : grp.members)
    {
      grp.alpha.push_back(alpha_n(config.momentum, modes[idx]));
    }
  }

  // Which groups carry excitation.
  std::vector<char> active(data->groups.size(), 0);
  std::vector<std::vector<CVec3>> top_field(data->groups.size());
  const double z_top0 = data->slabs.back().z_bot;
  if (const auto *plane = std::get_if<PlaneOrder>(&incidence))
  {
    if (!data->truncation.contains(plane->m))
    {
      throw InvalidArgument("incident order outside the truncation");
    }
    data->incident_down = incident_plane_field(plane->m, plane->p, config.k0, config.momentum);
    const std::size_t idx = data->truncation.index(plane->m);
    const std::size_t gi = data->group_of[idx];
    active[gi] = 1;
    auto &tf = top_field[gi];
    tf.assign(data->groups[gi].members.size(), CVec3::Zero());
    const auto pos = std::find(data->groups[gi].members.begin(), data->groups[gi].members.end(), idx) -
                     data->groups[gi].members.begin();
    const CVec3 kv = data->incident_down.wavevector(plane->m);
    tf[static_cast<std::size_t>(pos)] =
        data->incident_down.coeffs.at(plane->m) * std::exp(kI * kv(2) * z_top0);
  }
  else if (const auto *sup = std::get_if<SuperpositionSource>(&incidence))
  {
    data->super_up.assign(n, CVec3::Zero());
    data->super_down.assign(n, CVec3::Zero());
    data->super_beta.assign(n, cplx(1.0));
    const double k2 = config.k0 * config.k0;
    for (std::size_t i = 0; i < n; ++i)
    {
      data->super_beta[i] = beta_n(config.k0, alpha_n(config.momentum, modes[i])).value();
    }
    for (const auto &[m, r] : sup->density)
    {
      if (!data->truncation.contains(m))
      {
        continue;
      }
      const std::size_t i = data->truncation.index(m);
      const Vec2 a = alpha_n(config.momentum, m);
      const cplx b = data->super_beta[i];
      // (2 pi)^2 from integrating exp(-i alpha_n . y') over one period.
      const cplx amp = 4.0 * kPi * kPi / (8.0 * kPi * kPi * kI * b);
      const CVec3 kup(a(0), a(1), b), kdn(a(0), a(1), -b);
      data->super_up[i] = amp * (r - kup * (bilinear_dot(kup, r) / k2));
      data->super_down[i] = amp * (r - kdn * (bilinear_dot(kdn, r) / k2));
      const std::size_t gi = data->group_of[i];
      active[gi] = 1;
    }
    for (std::size_t gi = 0; gi < data->groups.size(); ++gi)
    {
      if (!active[gi])
      {
        continue;
      }
      auto &tf = top_field[gi];
      for (const auto idx : data->groups[gi].members)
      {
        tf.push_back(data->super_down[idx] *
                     std::exp(-kI * data->super_beta[idx] * (z_top0 - sup->height)));
      }
    }
  }
  else
  {
    std::fill(active.begin(), active.end(), 1);
  }

  std::vector<GroupProblem> problems;
  for (std::size_t gi = 0; gi < data->groups.size(); ++gi)
  {
    if (!active[gi])
    {
      continue;
    }
    GroupProblem prob;
    prob.data = data.get();
    prob.group = &data->groups[gi];
    prob.jumps.assign(data->slabs.size() - 1, Vec());
    prob.rcond_floor = options.rcond_floor;
    problems.push_back(std::move(prob));
  }
  if (jump_slab.has_value())
  {
    add_dipole_jumps(*data, problems, *jump_slab, *dipole);
  }

  const auto count = static_cast<std::ptrdiff_t>(problems.size());
  std::vector<double> rconds(problems.size(), 1.0);
  std::vector<std::exception_ptr> failures(problems.size());
  auto work = [&](std::ptrdiff_t p) {
    try
    {
      auto &prob = problems[static_cast<std::size_t>(p)];
      Group &grp = *prob.group;
      grp.basis.resize(data->media.size());
      for (std::size_t mi = 0; mi < data->media.size(); ++mi)
      {
        const Medium &med = data->media[mi];
        grp.basis[mi] = med.modulated
                            ? modulated_basis(grp.alpha,
                                              [&] {
                                                std::vector<int> along;
                                                for (const auto idx : grp.members)
                                                {
                                                  along.push_back(axis == Axis::x1
                                                                      ? modes[idx].n1
                                                                      : modes[idx].n2);
                                                }
                                                return along;
                                              }(),
                                              config.k0, material.as_fourier(), med.weight)
                            : homogeneous_basis(grp.alpha, config.k0, med);
      }
      const auto g = static_cast<Eigen::Index>(grp.members.size());
      const std::size_t gi = data->group_of[grp.members.front()];
      prob.d_inc = top_field[gi].empty()
                       ? Vec(Vec::Zero(2 * g))
                       : tangential_amplitudes(grp.basis[vacuum]->e_dn, g, top_field[gi]);
      rconds[static_cast<std::size_t>(p)] = solve_group(prob);
    }
    catch (...)
    {
      failures[static_cast<std::size_t>(p)] = std::current_exception();
    }
  };
  if (options.exec == Execution::parallel)
  {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t p = 0; p < count; ++p)
    {
      work(p);
    }
  }
  else
  {
    for (std::ptrdiff_t p = 0; p < count; ++p)
    {
      work(p);
    }
  }
  for (const auto &f : failures)
  {
    if (f)
    {
      std::rethrow_exception(f);
    }
  }
  data->diagnostics.groups_solved = problems.size();
  data->diagnostics.min_rcond =
      rconds.empty() ? 1.0 : *std::min_element(rconds.begin(), rconds.end());

  // Upward coefficients above b, referenced at x3 = 0.
  RayleighField &sc = data->scattered;
  sc.momentum = config.momentum;
  sc.k = config.k0;
  sc.direction = Direction::upward;
  sc.reference_height = config.b;
  for (const auto &grp : data->groups)
  {
    if (!grp.solved)
    {
      continue;
    }
    const SlabBasis &b = *grp.basis[vacuum];
    const auto g = static_cast<Eigen::Index>(grp.members.size());
    const Vec e = b.e_up * grp.u.back();
    for (Eigen::Index i = 0; i < g; ++i)
    {
      const std::size_t idx = grp.members[static_cast<std::size_t>(i)];
      const cplx beta = b.gam_up(i);
      CVec3 v(e(i), e(g + i), e(2 * g + i));
      if (data->source == SourceKind::dipole_exterior)
      {
        v -= data->dipole[idx].up;
      }
      sc.coeffs.emplace(modes[idx], v * std::exp(-kI * beta * z_top0));
    }
  }
  return data;
}

double slice_norm(const std::vector<CVec3> &v, bool tangential)
{
  double s = 0.0;
  for (const auto &x : v)
  {
    s += tangential ? std::norm(x(0)) + std::norm(x(1)) : x.squaredNorm();
  }
  return std::sqrt(s);
}

}  // namespace

Solution::Solution(std::shared_ptr<const detail::SolutionData> data) : data_(std::move(data)) {}

const GratingConfig &Solution::config() const { return data_->config; }
const MaterialProfile &Solution::material() const { return data_->material; }
const IncidentSpec &Solution::incidence() const { return data_->incidence; }
const Truncation &Solution::truncation() const { return data_->truncation; }
const SolveDiagnostics &Solution::diagnostics() const { return data_->diagnostics; }
const RayleighField &Solution::scattered_up() const { return data_->scattered; }

ModalSlice Solution::modal(double z, Side side) const
{
  return evaluate_modal(*data_, z, side);
}

ModalSlice Solution::incident_modal(double z, Side side) const
{
  return evaluate_incident(*data_, z, side);
}

CVec3 Solution::field(const Vec3 &x) const
{
  return sum_modes(*data_, modal(x(2)).e, x);
}

CVec3 Solution::curl_field(const Vec3 &x) const
{
  return sum_modes(*data_, modal(x(2)).f, x);
}

CVec3 Solution::scattered_field(const Vec3 &x) const
{
  ModalSlice tot = modal(x(2));
  const ModalSlice inc = incident_modal(x(2));
  for (std::size_t i = 0; i < tot.e.size(); ++i)
  {
    tot.e[i] -= inc.e[i];
  }
  return sum_modes(*data_, tot.e, x);
}

Solution solve(const GratingConfig &config, const MaterialProfile &material,
               const IncidentSpec &incidence, const SolveOptions &options)
{
  return Solution(run_solver(config, material, incidence, options));
}

Solution solve_dipole(const GratingConfig &config, const MaterialProfile &material,
                      const Vec3 &y0, const Vec3 &r, std::optional<QuasiMomentum> momentum,
                      const SolveOptions &options)
{
  GratingConfig cfg = config;
  if (momentum.has_value())
  {
    cfg.momentum = *momentum;
  }
  return solve(cfg, material, DipoleSource{y0, r}, options);
}

TangentialTrace near_field_trace(const Solution &sol, double h, TraceKind kind)
{
  const auto &cfg = sol.config();
  if (!(h > cfg.b))
  {
    throw HeightBelowInterface("near-field plane must lie strictly above x3 = b");
  }
  ModalSlice s = sol.modal(h);
  if (kind == TraceKind::scattered)
  {
    const ModalSlice inc = sol.incident_modal(h);
    for (std::size_t i = 0; i < s.e.size(); ++i)
    {
      s.e[i] -= inc.e[i];
    }
  }
  TangentialTrace trace{cfg.momentum, h, {}};
  const auto &modes = sol.truncation().modes();
  for (std::size_t i = 0; i < modes.size(); ++i)
  {
    trace.set(modes[i], -s.e[i](1), s.e[i](0));
  }
  return trace;
}

EnergyReport energy_report(const Solution &sol)
{
  const auto *plane = std::get_if<PlaneOrder>(&sol.incidence());
  if (plane == nullptr)
  {
    throw InvalidArgument("energy report needs plane-order incidence");
  }
  const auto &cfg = sol.config();
  const VerticalWavenumber bm = beta_n(cfg.k0, alpha_n(cfg.momentum, plane->m));
  if (!bm.propagating())
  {
    throw EvanescentIncidence("incident order is evanescent; no incident flux");
  }
  const RayleighField inc = incident_plane_field(plane->m, plane->p, cfg.k0, cfg.momentum);
  const double flux = bm.value().real() * inc.coeffs.at(plane->m).squaredNorm();
  EnergyReport rep;
  for (const auto &[n, e] : sol.scattered_up().coeffs)
  {
    const VerticalWavenumber b = beta_n(cfg.k0, alpha_n(cfg.momentum, n));
    if (!b.propagating())
    {
      continue;
    }
    const double eff = b.value().real() * e.squaredNorm() / flux;
    rep.orders.push_back({n, eff});
  }
  std::sort(rep.orders.begin(), rep.orders.end(),
            [](const ModeEfficiency &a, const ModeEfficiency &b) { return a.n < b.n; });
  double total = 0.0;
  for (const auto &o : rep.orders)
  {
    total += o.efficiency;
  }
  rep.total = total;
  return rep;
}

ResidualReport residuals(const Solution &sol)
{
  const auto &cfg = sol.config();
  ResidualReport rep;
  const std::size_t n = sol.truncation().size();
  auto rel = [](double num, double den) { return num / std::max(den, kResidualFloor); };

  {
    const ModalSlice above = sol.modal(cfg.b, Side::above);
    const ModalSlice below = sol.modal(cfg.b, Side::below);
    std::vector<CVec3> de(n), df(n);
    for (std::size_t i = 0; i < n; ++i)
    {
      de[i] = above.e[i] - below.e[i];
      df[i] = above.f[i] - cfg.lambda0 * below.f[i];
    }
    rep.transmission_tangential = rel(slice_norm(de, true), slice_norm(above.e, true));
    rep.transmission_curl = rel(slice_norm(df, true), slice_norm(above.f, true));
  }
  {
    const ModalSlice bot = sol.modal(cfg.c, Side::above);
    std::vector<CVec3> res(n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
    {
      const CVec3 &e = bot.e[i];
      const CVec3 &f = bot.f[i];
      if (cfg.boundary.kind == BoundaryKind::pec)
      {
        res[i] = CVec3(e(0), e(1), 0.0);
      }
      else
      {
        const cplx ir = kI * cfg.boundary.rho;
        res[i] = CVec3(-f(1) - ir * e(0), f(0) - ir * e(1), 0.0);
      }
      scale += e.squaredNorm() + f.squaredNorm() / (cfg.k0 * cfg.k0);
    }
    const double s = std::sqrt(scale);
    rep.boundary = rel(slice_norm(res, true),
                       cfg.boundary.kind == BoundaryKind::pec ? s : s * std::max(1.0, cfg.k0));
  }
  {
    // Scattered field on Gamma_h against the DtN map of its own trace.
    const ModalSlice tot = sol.modal(cfg.h);
    const ModalSlice inc = sol.incident_modal(cfg.h);
    TangentialTrace g{cfg.momentum, cfg.h, {}};
    const auto &modes = sol.truncation().modes();
    std::vector<CVec3> fs(n);
    for (std::size_t i = 0; i < n; ++i)
    {
      const CVec3 e = tot.e[i] - inc.e[i];
      fs[i] = tot.f[i] - inc.f[i];
      g.set(modes[i], -e(1), e(0));
    }
    const DtnOperator op(cfg.k0, cfg.momentum, cfg.h, cfg.truncation);
    const TangentialTrace rg = op.apply(g);
    std::vector<CVec3> res(n);
    for (std::size_t i = 0; i < n; ++i)
    {
      // (e3 x curl E) x e3 = curl E tangential.
      const CVec3 &r = rg.coeffs.at(modes[i]);
      res[i] = CVec3(fs[i](0) - r(0), fs[i](1) - r(1), 0.0);
    }
    rep.dtn = rel(slice_norm(res, true), slice_norm(fs, true));
  }
  rep.divergence = divergence_residual(sol.scattered_up());
  return rep;
}

}  // namespace grating
