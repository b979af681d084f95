// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "grating/lattice_modes.hpp"
#include "grating/types.hpp"

namespace grating
{

// q(x) = (epsilon + i sigma / omega) / epsilon0.
cplx refractive_index_from_materials(double epsilon, double sigma, double omega, double epsilon0);

// k0 = sqrt(epsilon0 mu) omega.
double wavenumber_from_materials(double epsilon0, double mu, double omega);

enum class BoundaryKind
{
  pec,
  impedance
};

// Condition on the bottom plane x3 = c with normal e3 pointing into the layer:
// PEC: e3 x E = 0; impedance: e3 x curl E - i rho (e3 x E) x e3 = 0.
struct BoundaryCondition
{
  BoundaryKind kind = BoundaryKind::pec;
  double rho = 0.0;

  static BoundaryCondition pec() { return {BoundaryKind::pec, 0.0}; }
  static BoundaryCondition impedance(double rho) { return {BoundaryKind::impedance, rho}; }
  bool operator==(const BoundaryCondition &) const = default;
};

// Flat doubly periodic grating: bottom plane x3 = c, interface x3 = b, DtN plane x3 = h.
struct GratingConfig
{
  double k0 = 1.0;
  double lambda0 = 1.0;
  double b = 1.0;
  double c = 0.0;
  double h = 1.5;
  BoundaryCondition boundary;
  QuasiMomentum momentum;
  int truncation = 8;

  // Throws ConstraintError naming every violated constraint.
  void validate() const;
};

inline constexpr double kDefaultCoercivity = 1e-3;

struct StackLayer
{
  double thickness = 0.0;
  cplx q{1.0, 0.0};
};

// Piecewise constant q(x3); layers are listed from the bottom plane upward.
struct Stack
{
  std::vector<StackLayer> layers;
};

enum class Axis
{
  x1,
  x2
};

// q(x_axis) = sum_j coeffs[j] exp(i j x_axis), constant in x3 across the whole layer.
struct Fourier1D
{
  Axis axis = Axis::x1;
  std::map<int, cplx> coeffs;

  cplx value(double t) const;
};

class MaterialProfile
{
public:
  MaterialProfile() = default;
  explicit MaterialProfile(Stack s) : variant_(std::move(s)) {}
  explicit MaterialProfile(Fourier1D f) : variant_(std::move(f)) {}

  static MaterialProfile homogeneous(double thickness, cplx q);
  static MaterialProfile stack(std::vector<StackLayer> layers);
  static MaterialProfile fourier(Axis axis, std::map<int, cplx> coeffs);
  // Midpoint staircase of a continuous profile q(x3) on [c, b].
  static MaterialProfile staircase(const std::function<cplx(double)> &profile, double c,
                                   double b, int layers = 64);

  const std::variant<Stack, Fourier1D> &variant() const { return variant_; }
  bool is_stack() const { return std::holds_alternative<Stack>(variant_); }
  const Stack &as_stack() const { return std::get<Stack>(variant_); }
  const Fourier1D &as_fourier() const { return std::get<Fourier1D>(variant_); }

  // Constant q over the whole layer, if so.
  std::optional<cplx> constant_value() const;
  MaterialProfile conjugated() const;

  // Re q >= gamma, Im q >= 0 (unless require_passive is false), stack thicknesses summing
  // to the layer thickness.
  void validate(double thickness, double gamma = kDefaultCoercivity,
                bool require_passive = true) const;

private:
  std::variant<Stack, Fourier1D> variant_;
};

// Modal coefficients of E and curl E on a plane, indexed like Truncation::modes().
struct ModalSlice
{
  std::vector<CVec3> e;
  std::vector<CVec3> f;
};

enum class Side
{
  below,
  above
};

struct SolveOptions
{
  Execution exec = Execution::parallel;
  // Interface systems with a reciprocal condition estimate below this raise SingularSystem.
  double rcond_floor = 1e-14;
  // Accept Im q < 0, as needed for the conjugated adjoint problem.
  bool allow_active_media = false;
};

struct SolveDiagnostics
{
  double min_rcond = 1.0;
  std::size_t groups_solved = 0;
};

namespace detail
{
struct SolutionData;
}

class Solution
{
public:
  explicit Solution(std::shared_ptr<const detail::SolutionData> data);

  const GratingConfig &config() const;
  const MaterialProfile &material() const;
  const IncidentSpec &incidence() const;
  const Truncation &truncation() const;
  const SolveDiagnostics &diagnostics() const;

  // Upward Rayleigh coefficients (referenced at x3 = 0) of the field above x3 = b minus
  // the free incident field: E^s for plane or superposition incidence, the total field
  // for a dipole below b, and E~ - G~0 r for a dipole above b.
  const RayleighField &scattered_up() const;

  // Total field and its curl at a point with x3 >= c.
  CVec3 field(const Vec3 &x) const;
  CVec3 curl_field(const Vec3 &x) const;
  // Total minus the free incident field inside the incident field's region.
  CVec3 scattered_field(const Vec3 &x) const;

  ModalSlice modal(double z, Side side = Side::above) const;
  ModalSlice incident_modal(double z, Side side = Side::above) const;

private:
  std::shared_ptr<const detail::SolutionData> data_;
};

Solution solve(const GratingConfig &config, const MaterialProfile &material,
               const IncidentSpec &incidence, const SolveOptions &options = {});

// Dipole incidence at momentum `momentum` (alpha~ = -alpha in the reciprocity relations).
// Interior sources (c < y3 < b) need a constant material; exterior sources sit in b < y3 < h.
Solution solve_dipole(const GratingConfig &config, const MaterialProfile &material,
                      const Vec3 &y0, const Vec3 &r,
                      std::optional<QuasiMomentum> momentum = std::nullopt,
                      const SolveOptions &options = {});

enum class TraceKind
{
  total,
  scattered
};

// e3 x E on the plane x3 = h > b.
TangentialTrace near_field_trace(const Solution &sol, double h,
                                 TraceKind kind = TraceKind::total);

struct ModeEfficiency
{
  ModeIndex n;
  double efficiency = 0.0;
};

struct EnergyReport
{
  std::vector<ModeEfficiency> orders;
  double total = 0.0;
};

// Reflected power per propagating order, normalized by the incident vertical flux.
EnergyReport energy_report(const Solution &sol);

// Modal relative residuals of the interface, boundary and DtN conditions.
struct ResidualReport
{
  double transmission_tangential = 0.0;
  double transmission_curl = 0.0;
  double boundary = 0.0;
  double dtn = 0.0;
  double divergence = 0.0;
};

ResidualReport residuals(const Solution &sol);

}  // namespace grating
