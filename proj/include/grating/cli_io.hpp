// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grating/errors.hpp"
#include "grating/forward_solver.hpp"
#include "grating/inverse.hpp"
#include "grating/reciprocity_lab.hpp"

namespace grating
{

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char *kToolVersion = "0.1.0";

struct GreenBlock
{
  std::vector<Vec3> points;
  std::optional<Vec3> source;
  std::optional<cplx> k;  // defaults to k0
  int truncation = 30;
  bool dyadic = false;
};

struct ReciprocityBlock
{
  ReciprocityKind kind = ReciprocityKind::interior;
  std::optional<cplx> k1;  // interior: defaults to k0 sqrt(q) of a constant material
  Vec3 y0 = Vec3(0.3, 0.2, 0.4);
  std::vector<BoundaryCondition> boundaries = {BoundaryCondition::pec(),
                                               BoundaryCondition::impedance(0.5)};
  std::vector<double> lambdas = {1.0, 1.7};
  std::vector<CVec3> polarizations = {CVec3(1, 0, 0), CVec3(0, 1, 0), CVec3(0, 0, 1)};
  std::vector<Vec3> dipoles = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  std::vector<ModeIndex> orders = {{0, 0}, {1, 0}, {0, -1}};
};

enum class InversionTarget
{
  impedance_depth,
  profile
};

// Synthetic closed loop: data come from the run's own grating and material.
struct InvertBlock
{
  InversionTarget target = InversionTarget::impedance_depth;
  int orders_radius = 1;
  std::vector<int> polarizations = {1, 2, 3};
  double noise = 0.0;
  double init_c = -0.3;
  double init_rho = 2.0;
  ProfileParametrization parametrization = StackParametrization{1, {}};
  std::vector<cplx> init_q = {cplx(1.5, 0.0)};
  double tikhonov = 1e-6;
  bool morozov = false;
  int max_iterations = 50;
};

struct IndicatorBlock
{
  std::optional<cplx> k1;
  std::vector<double> depths = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.6, 0.8};
  Vec3 r = Vec3(0.3, 0.2, 1.0);
  int truncation = 24;
  std::optional<double> test_plane;
  Vec2 probe_xy = Vec2::Zero();
};

struct RunConfig
{
  GratingConfig grating;
  MaterialProfile material = MaterialProfile::homogeneous(1.0, 1.0);
  std::vector<IncidentSpec> incidence;
  GreenBlock green;
  ReciprocityBlock reciprocity;
  InvertBlock invert;
  IndicatorBlock indicator;
  std::uint64_t seed = 0;

  // Equal canonical serializations.
  bool operator==(const RunConfig &o) const;
};

// Parses a JSON configuration. SchemaError lists unknown keys and type mismatches with
// their field paths; ConstraintError lists every violated cross-field constraint.
RunConfig parse_config(std::string_view text);
Json serialize(const RunConfig &config);
std::string canonical_text(const RunConfig &config);
// Lower-case hex SHA-256 of the canonical text.
std::string config_digest(const RunConfig &config);

struct ResultRecord
{
  int schema_version = kSchemaVersion;
  std::string command;
  std::string config_digest;
  std::string tool_version = kToolVersion;
  Json payload;
  double wall_seconds = 0.0;

  bool operator==(const ResultRecord &o) const = default;
};

Json record_to_json(const ResultRecord &record);
ResultRecord record_from_json(const Json &j);
std::string record_text(const ResultRecord &record);
ResultRecord parse_record(std::string_view text);
// Payload serialization only, for byte-level determinism checks.
std::string payload_text(const ResultRecord &record);

const std::vector<std::string> &known_commands();

// Dispatches to the owning module; writes the record to `out_path` when given.
ResultRecord run_command(const std::string &command, const RunConfig &config,
                         const std::optional<std::string> &out_path = std::nullopt);

enum class PlotKind
{
  efficiency_vs_order,
  indicator_curve,
  residual_history
};

PlotKind parse_plot_kind(const std::string &name);

// Whitespace-separated table with a '#' header; reals use 17 significant digits.
std::string emit_plot_data(const ResultRecord &record, PlotKind kind);

// Locale-independent scientific formatting with 17 significant digits.
std::string format_real(double v);

enum class ExitCode : int
{
  ok = 0,
  usage = 1,
  config = 2,
  solver = 3,
  nonconvergence = 4,
  io = 5,
  missing_payload = 6
};

ExitCode exit_code_for(const std::exception &e);

class IoError : public Error
{
public:
  using Error::Error;
};

class UsageError : public Error
{
public:
  using Error::Error;
};

}  // namespace grating
