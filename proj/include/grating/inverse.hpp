// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "grating/forward_solver.hpp"

namespace grating
{

// Incident order m with polarization e_l, l in {1, 2, 3}.
struct DataKey
{
  ModeIndex m;
  int l = 1;

  auto operator<=>(const DataKey &) const = default;
};

struct NoiseInfo
{
  double level = 0.0;
  std::uint64_t seed = 0;
};

// e3 x E^s on x3 = h for each incident (m, e_l).
struct NearFieldDataset
{
  double h = 0.0;
  QuasiMomentum momentum;
  int truncation = 0;
  std::map<DataKey, TangentialTrace> entries;
  NoiseInfo noise;
};

// Complex Gaussian noise on every trace coefficient of the truncation, with standard
// deviation chosen so that the expected perturbation norm is `noise_level` times the
// entry's trace norm.
NearFieldDataset synthesize_data(const GratingConfig &config, const MaterialProfile &material,
                                 const std::vector<ModeIndex> &orders,
                                 const std::vector<int> &polarizations, double noise_level = 0.0,
                                 std::uint64_t seed = 0, Execution exec = Execution::parallel);

// Orders with max(|m1|, |m2|) <= radius.
std::vector<ModeIndex> orders_within(int radius);

// Stacked modal H^{-1/2}(div) misfit: per mode sqrt(w_n) (g1, g2, alpha_n . g), real and
// imaginary parts, w_n = (1 + |alpha_n|^2)^{-1/2}.
Eigen::VectorXd stacked_misfit(const NearFieldDataset &model, const NearFieldDataset &data);
double dataset_norm(const NearFieldDataset &data);
double dataset_distance(const NearFieldDataset &a, const NearFieldDataset &b);

struct GaussNewtonOptions
{
  int max_iterations = 50;
  // Step damping mu = tikhonov * trace(J^T J) / dim; it regularizes the step only.
  double tikhonov = 1e-6;
  // Declared relative noise level enables the discrepancy stop ||r|| <= tau * level * ||d||.
  std::optional<double> noise_level;
  double discrepancy_tau = 1.1;
  double fd_step = 1e-5;
  // Converged when ||r|| <= residual_tolerance * ||d|| or the step is this small relative to theta.
  double residual_tolerance = 1e-12;
  double step_tolerance = 1e-10;
  int max_backtracks = 30;
  double coercivity = kDefaultCoercivity;
  Execution exec = Execution::parallel;
};

struct InversionResult
{
  std::vector<std::string> names;
  Eigen::VectorXd estimate;
  std::vector<double> residual_history;  // ||r|| at the start and after each accepted step
  std::vector<double> jacobian_condition;
  std::vector<double> regularization;
  bool converged = false;
  int accepted_steps = 0;
  int iterations = 0;
  double data_norm = 0.0;

  double final_residual() const { return residual_history.empty() ? 0.0 : residual_history.back(); }
  double value(const std::string &name) const;
};

// Recovers (c, rho) for an impedance bottom under a layer of known constant q.
// `known` supplies k0, lambda0, b, momentum; its c and boundary are ignored.
InversionResult invert_impedance_depth(const NearFieldDataset &data, const GratingConfig &known,
                                       cplx q, double c0, double rho0,
                                       const GaussNewtonOptions &options = {});

// Stack of layers with known thicknesses (bottom to top); empty means equal thicknesses.
struct StackParametrization
{
  int layers = 1;
  std::vector<double> thicknesses;
};

// q(x_axis) = sum over the listed harmonics.
struct FourierParametrization
{
  Axis axis = Axis::x1;
  std::vector<int> harmonics{0};
};

using ProfileParametrization = std::variant<StackParametrization, FourierParametrization>;

std::size_t parameter_count(const ProfileParametrization &param);
MaterialProfile profile_from_parameters(const ProfileParametrization &param,
                                        const std::vector<cplx> &values, double thickness);

// Recovers q over a PEC bottom with known c, b, lambda0. `init` holds one complex value per
// layer or harmonic; the real parameter vector is (Re q_0, Im q_0, Re q_1, ...).
InversionResult invert_refractive_profile(const NearFieldDataset &data, const GratingConfig &known,
                                          const ProfileParametrization &param,
                                          const std::vector<cplx> &init,
                                          const GaussNewtonOptions &options = {});

std::vector<cplx> complex_estimate(const InversionResult &result);

struct OrthogonalityOptions
{
  double tolerance = 1e-8;
  SolveOptions solve;
};

// int over one cell of (q1 - q2) E1 . conj(E2), with E1 solving (q1, PEC, probe1) and E2
// solving (conj q2, PEC, probe2), both at the config's momentum.
cplx orthogonality_residual(const MaterialProfile &q1, const MaterialProfile &q2,
                            const GratingConfig &config, const PlaneOrder &probe1,
                            const PlaneOrder &probe2, const OrthogonalityOptions &options = {});

struct IndicatorPoint
{
  double z3 = 0.0;
  double offset = 0.0;
  double value = 0.0;
};

struct BlowupOptions
{
  int truncation = 24;
  // Plane on which the boundary operator is evaluated; defaults to the true c.
  std::optional<double> test_plane;
  Vec2 probe_xy = Vec2::Zero();
  SolveOptions solve;
};

// Modal L^2 norm of the boundary operator applied to E~^s(.; z) on the test plane for
// interior dipoles at the given depths, solved at momentum -alpha.
std::vector<IndicatorPoint> blowup_indicator(const GratingConfig &config, cplx k1,
                                             const std::vector<double> &depths, const Vec3 &r,
                                             const BlowupOptions &options = {});

}  // namespace grating
