// SPDX-License-Identifier: Apache-2.0
#include "grating/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "grating/greens.hpp"
#include "grating/lattice_modes.hpp"

namespace grating
{

namespace
{

struct Issues
{
  std::vector<std::string> schema;
  std::vector<std::string> constraint;
};

std::string join(const std::string &path, const std::string &key)
{
  return path.empty() ? key : path + "." + key;
}

std::string at_index(const std::string &path, std::size_t i)
{
  return path + "[" + std::to_string(i) + "]";
}

bool expect_object(const Json &j, const std::string &path, std::initializer_list<const char *> keys,
                   Issues &iss)
{
  if (!j.is_object())
  {
    iss.schema.push_back((path.empty() ? std::string("<root>") : path) + ": expected an object");
    return false;
  }
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto &[k, v] : j.items())
  {
    if (!allowed.contains(k))
    {
      iss.schema.push_back(join(path, k) + ": unknown key");
    }
  }
  return true;
}

std::optional<double> as_real(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_number())
  {
    iss.schema.push_back(path + ": expected a number");
    return std::nullopt;
  }
  return v.get<double>();
}

std::optional<long long> as_int(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_number_integer())
  {
    iss.schema.push_back(path + ": expected an integer");
    return std::nullopt;
  }
  return v.get<long long>();
}

std::optional<cplx> as_complex(const Json &v, const std::string &path, Issues &iss)
{
  if (v.is_number())
  {
    return cplx(v.get<double>(), 0.0);
  }
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
  {
    return cplx(v[0].get<double>(), v[1].get<double>());
  }
  iss.schema.push_back(path + ": expected a number or [re, im]");
  return std::nullopt;
}

std::optional<Vec3> as_vec3(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_array() || v.size() != 3 ||
      !std::all_of(v.begin(), v.end(), [](const Json &x) { return x.is_number(); }))
  {
    iss.schema.push_back(path + ": expected [x, y, z]");
    return std::nullopt;
  }
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

std::optional<Vec2> as_vec2(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
  {
    iss.schema.push_back(path + ": expected [a1, a2]");
    return std::nullopt;
  }
  return Vec2(v[0].get<double>(), v[1].get<double>());
}

std::optional<CVec3> as_cvec3(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_array() || v.size() != 3)
  {
    iss.schema.push_back(path + ": expected three complex components");
    return std::nullopt;
  }
  CVec3 out;
  for (std::size_t i = 0; i < 3; ++i)
  {
    const auto c = as_complex(v[i], at_index(path, i), iss);
    if (!c)
    {
      return std::nullopt;
    }
    out(static_cast<Eigen::Index>(i)) = *c;
  }
  return out;
}

std::optional<ModeIndex> as_mode(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
  {
    iss.schema.push_back(path + ": expected integer pair [n1, n2]");
    return std::nullopt;
  }
  return ModeIndex{v[0].get<int>(), v[1].get<int>()};
}

std::optional<std::string> as_string(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_string())
  {
    iss.schema.push_back(path + ": expected a string");
    return std::nullopt;
  }
  return v.get<std::string>();
}

std::optional<bool> as_bool(const Json &v, const std::string &path, Issues &iss)
{
  if (!v.is_boolean())
  {
    iss.schema.push_back(path + ": expected a boolean");
    return std::nullopt;
  }
  return v.get<bool>();
}

template <class T, class F>
void read(const Json &obj, const char *key, const std::string &path, Issues &iss, T &dst,
          F &&conv)
{
  if (!obj.contains(key))
  {
    return;
  }
  if (auto v = conv(obj.at(key), join(path, key), iss))
  {
    dst = static_cast<T>(*v);
  }
}

template <class T, class F>
void read_list(const Json &obj, const char *key, const std::string &path, Issues &iss,
               std::vector<T> &dst, F &&conv)
{
  if (!obj.contains(key))
  {
    return;
  }
  const Json &arr = obj.at(key);
  const std::string p = join(path, key);
  if (!arr.is_array())
  {
    iss.schema.push_back(p + ": expected an array");
    return;
  }
  std::vector<T> out;
  for (std::size_t i = 0; i < arr.size(); ++i)
  {
    if (auto v = conv(arr[i], at_index(p, i), iss))
    {
      out.push_back(static_cast<T>(*v));
    }
  }
  dst = std::move(out);
}

std::optional<BoundaryCondition> as_boundary(const Json &v, const std::string &path, Issues &iss)
{
  if (!expect_object(v, path, {"kind", "rho"}, iss))
  {
    return std::nullopt;
  }
  std::string kind = "pec";
  read(v, "kind", path, iss, kind, as_string);
  if (kind == "pec")
  {
    if (v.contains("rho"))
    {
      iss.schema.push_back(join(path, "rho") + ": only valid for an impedance boundary");
    }
    return BoundaryCondition::pec();
  }
  if (kind == "impedance")
  {
    double rho = 0.0;
    if (!v.contains("rho"))
    {
      iss.constraint.push_back(join(path, "rho") + ": required for an impedance boundary");
    }
    read(v, "rho", path, iss, rho, as_real);
    return BoundaryCondition::impedance(rho);
  }
  if (kind == "mixed")
  {
    iss.constraint.push_back(join(path, "kind") +
                             ": mixed PEC/impedance partitions are not supported");
    return std::nullopt;
  }
  iss.schema.push_back(join(path, "kind") + ": expected \"pec\" or \"impedance\"");
  return std::nullopt;
}

std::optional<MaterialProfile> as_material(const Json &v, const std::string &path, double thickness,
                                           Issues &iss)
{
  if (!expect_object(v, path, {"kind", "q", "layers", "axis", "coeffs"}, iss))
  {
    return std::nullopt;
  }
  std::string kind = "homogeneous";
  read(v, "kind", path, iss, kind, as_string);
  if (kind == "homogeneous")
  {
    cplx q = 1.0;
    read(v, "q", path, iss, q, as_complex);
    return MaterialProfile::homogeneous(thickness, q);
  }
  if (kind == "stack")
  {
    std::vector<StackLayer> layers;
    read_list(v, "layers", path, iss, layers,
              [](const Json &l, const std::string &p, Issues &is) -> std::optional<StackLayer> {
                if (!expect_object(l, p, {"thickness", "q"}, is))
                {
                  return std::nullopt;
                }
                StackLayer layer;
                read(l, "thickness", p, is, layer.thickness, as_real);
                read(l, "q", p, is, layer.q, as_complex);
                return layer;
              });
    return MaterialProfile::stack(std::move(layers));
  }
  if (kind == "fourier")
  {
    std::string axis = "x1";
    read(v, "axis", path, iss, axis, as_string);
    if (axis != "x1" && axis != "x2")
    {
      iss.schema.push_back(join(path, "axis") + ": expected \"x1\" or \"x2\"");
    }
    std::vector<std::pair<int, cplx>> coeffs;
    read_list(v, "coeffs", path, iss, coeffs,
              [](const Json &c, const std::string &p,
                 Issues &is) -> std::optional<std::pair<int, cplx>> {
                if (!expect_object(c, p, {"j", "q"}, is))
                {
                  return std::nullopt;
                }
                long long j = 0;
                cplx q = 0.0;
                read(c, "j", p, is, j, as_int);
                read(c, "q", p, is, q, as_complex);
                return std::pair<int, cplx>{static_cast<int>(j), q};
              });
    std::map<int, cplx> m;
    for (const auto &[j, q] : coeffs)
    {
      m[j] += q;
    }
    return MaterialProfile::fourier(axis == "x2" ? Axis::x2 : Axis::x1, std::move(m));
  }
  iss.schema.push_back(join(path, "kind") + ": expected homogeneous, stack or fourier");
  return std::nullopt;
}

std::optional<IncidentSpec> as_incidence(const Json &v, const std::string &path, Issues &iss)
{
  if (!expect_object(v, path, {"kind", "m", "p", "y0", "r", "height", "density"}, iss))
  {
    return std::nullopt;
  }
  std::string kind;
  if (!v.contains("kind"))
  {
    iss.schema.push_back(join(path, "kind") + ": required");
    return std::nullopt;
  }
  read(v, "kind", path, iss, kind, as_string);
  if (kind == "plane")
  {
    PlaneOrder p;
    read(v, "m", path, iss, p.m, as_mode);
    read(v, "p", path, iss, p.p, as_cvec3);
    return p;
  }
  if (kind == "dipole")
  {
    DipoleSource d;
    read(v, "y0", path, iss, d.y0, as_vec3);
    read(v, "r", path, iss, d.r, as_vec3);
    return d;
  }
  if (kind == "superposition")
  {
    SuperpositionSource s;
    read(v, "height", path, iss, s.height, as_real);
    std::vector<std::pair<ModeIndex, CVec3>> dens;
    read_list(v, "density", path, iss, dens,
              [](const Json &e, const std::string &p,
                 Issues &is) -> std::optional<std::pair<ModeIndex, CVec3>> {
                if (!expect_object(e, p, {"n", "r"}, is))
                {
                  return std::nullopt;
                }
                std::pair<ModeIndex, CVec3> out{ModeIndex{}, CVec3::Zero()};
                read(e, "n", p, is, out.first, as_mode);
                read(e, "r", p, is, out.second, as_cvec3);
                return out;
              });
    for (const auto &[n, r] : dens)
    {
      s.density[n] += r;
    }
    return s;
  }
  iss.schema.push_back(join(path, "kind") + ": expected plane, dipole or superposition");
  return std::nullopt;
}

void parse_green(const Json &v, const std::string &path, GreenBlock &g, Issues &iss)
{
  if (!expect_object(v, path, {"points", "source", "k", "truncation", "dyadic"}, iss))
  {
    return;
  }
  read_list(v, "points", path, iss, g.points, as_vec3);
  if (v.contains("source"))
  {
    g.source = as_vec3(v.at("source"), join(path, "source"), iss);
  }
  if (v.contains("k"))
  {
    g.k = as_complex(v.at("k"), join(path, "k"), iss);
  }
  read(v, "truncation", path, iss, g.truncation, as_int);
  read(v, "dyadic", path, iss, g.dyadic, as_bool);
}

void parse_reciprocity(const Json &v, const std::string &path, ReciprocityBlock &r, Issues &iss)
{
  if (!expect_object(v, path,
                     {"kind", "k1", "y0", "boundaries", "lambdas", "polarizations", "dipoles",
                      "orders"},
                     iss))
  {
    return;
  }
  std::string kind = "interior";
  read(v, "kind", path, iss, kind, as_string);
  if (kind == "interior" || kind == "exterior")
  {
    r.kind = kind == "interior" ? ReciprocityKind::interior : ReciprocityKind::exterior;
  }
  else
  {
    iss.schema.push_back(join(path, "kind") + ": expected interior or exterior");
  }
  if (v.contains("k1"))
  {
    r.k1 = as_complex(v.at("k1"), join(path, "k1"), iss);
  }
  read(v, "y0", path, iss, r.y0, as_vec3);
  read_list(v, "boundaries", path, iss, r.boundaries, as_boundary);
  read_list(v, "lambdas", path, iss, r.lambdas, as_real);
  read_list(v, "polarizations", path, iss, r.polarizations, as_cvec3);
  read_list(v, "dipoles", path, iss, r.dipoles, as_vec3);
  read_list(v, "orders", path, iss, r.orders, as_mode);
}

void parse_invert(const Json &v, const std::string &path, InvertBlock &b, Issues &iss)
{
  if (!expect_object(v, path,
                     {"target", "orders_radius", "polarizations", "noise", "init_c", "init_rho",
                      "parametrization", "init_q", "tikhonov", "morozov", "max_iterations"},
                     iss))
  {
    return;
  }
  std::string target = "impedance_depth";
  read(v, "target", path, iss, target, as_string);
  if (target == "impedance_depth" || target == "profile")
  {
    b.target = target == "profile" ? InversionTarget::profile : InversionTarget::impedance_depth;
  }
  else
  {
    iss.schema.push_back(join(path, "target") + ": expected impedance_depth or profile");
  }
  read(v, "orders_radius", path, iss, b.orders_radius, as_int);
  read_list(v, "polarizations", path, iss, b.polarizations, as_int);
  read(v, "noise", path, iss, b.noise, as_real);
  read(v, "init_c", path, iss, b.init_c, as_real);
  read(v, "init_rho", path, iss, b.init_rho, as_real);
  read_list(v, "init_q", path, iss, b.init_q, as_complex);
  read(v, "tikhonov", path, iss, b.tikhonov, as_real);
  read(v, "morozov", path, iss, b.morozov, as_bool);
  read(v, "max_iterations", path, iss, b.max_iterations, as_int);
  if (v.contains("parametrization"))
  {
    const Json &p = v.at("parametrization");
    const std::string pp = join(path, "parametrization");
    if (expect_object(p, pp, {"kind", "layers", "thicknesses", "axis", "harmonics"}, iss))
    {
      std::string kind = "stack";
      read(p, "kind", pp, iss, kind, as_string);
      if (kind == "stack")
      {
        StackParametrization s;
        read(p, "layers", pp, iss, s.layers, as_int);
        read_list(p, "thicknesses", pp, iss, s.thicknesses, as_real);
        b.parametrization = s;
      }
      else if (kind == "fourier")
      {
        FourierParametrization f;
        std::string axis = "x1";
        read(p, "axis", pp, iss, axis, as_string);
        f.axis = axis == "x2" ? Axis::x2 : Axis::x1;
        read_list(p, "harmonics", pp, iss, f.harmonics, as_int);
        b.parametrization = f;
      }
      else
      {
        iss.schema.push_back(join(pp, "kind") + ": expected stack or fourier");
      }
    }
  }
}

void parse_indicator(const Json &v, const std::string &path, IndicatorBlock &b, Issues &iss)
{
  if (!expect_object(v, path, {"k1", "depths", "r", "truncation", "test_plane", "probe_xy"}, iss))
  {
    return;
  }
  if (v.contains("k1"))
  {
    b.k1 = as_complex(v.at("k1"), join(path, "k1"), iss);
  }
  read_list(v, "depths", path, iss, b.depths, as_real);
  read(v, "r", path, iss, b.r, as_vec3);
  read(v, "truncation", path, iss, b.truncation, as_int);
  if (v.contains("test_plane"))
  {
    b.test_plane = as_real(v.at("test_plane"), join(path, "test_plane"), iss);
  }
  read(v, "probe_xy", path, iss, b.probe_xy, as_vec2);
}

void check_constraints(const RunConfig &rc, Issues &iss)
{
  const auto &g = rc.grating;
  if (!(g.k0 > 0.0))
  {
    iss.constraint.emplace_back("k0: must be positive");
  }
  if (!(g.lambda0 > 0.0))
  {
    iss.constraint.emplace_back("lambda0: must be positive");
  }
  if (!(g.c < g.b))
  {
    iss.constraint.emplace_back("geometry.c, geometry.b: require c < b");
  }
  if (!(g.b < g.h))
  {
    iss.constraint.emplace_back("geometry.b, geometry.h: require b < h");
  }
  if (g.boundary.kind == BoundaryKind::impedance && !(g.boundary.rho > 0.0))
  {
    iss.constraint.emplace_back("boundary.rho: must be positive");
  }
  if (g.truncation < 0)
  {
    iss.constraint.emplace_back("truncation: must be non-negative");
  }
  if (g.c < g.b)
  {
    try
    {
      rc.material.validate(g.b - g.c);
    }
    catch (const ConstraintError &e)
    {
      iss.constraint.push_back(std::string("material: ") + e.what());
    }
  }
  for (std::size_t i = 0; i < rc.incidence.size(); ++i)
  {
    const std::string p = at_index("incidence", i);
    if (const auto *pl = std::get_if<PlaneOrder>(&rc.incidence[i]))
    {
      if (std::max(std::abs(pl->m.n1), std::abs(pl->m.n2)) > g.truncation)
      {
        iss.constraint.push_back(p + ".m: outside the truncation");
      }
      if (pl->p.norm() == 0.0)
      {
        iss.constraint.push_back(p + ".p: must be nonzero");
      }
    }
    else if (const auto *sp = std::get_if<SuperpositionSource>(&rc.incidence[i]))
    {
      if (!(sp->height > g.b))
      {
        iss.constraint.push_back(p + ".height: must exceed geometry.b");
      }
    }
    else if (const auto *dp = std::get_if<DipoleSource>(&rc.incidence[i]))
    {
      if (!(dp->y0(2) > g.c))
      {
        iss.constraint.push_back(p + ".y0: must lie above geometry.c");
      }
    }
  }
  if (rc.green.truncation < 0)
  {
    iss.constraint.emplace_back("green.truncation: must be non-negative");
  }
  for (std::size_t i = 0; i < rc.reciprocity.lambdas.size(); ++i)
  {
    if (!(rc.reciprocity.lambdas[i] > 0.0))
    {
      iss.constraint.push_back(at_index("reciprocity.lambdas", i) + ": must be positive");
    }
  }
  for (std::size_t i = 0; i < rc.reciprocity.boundaries.size(); ++i)
  {
    const auto &bc = rc.reciprocity.boundaries[i];
    if (bc.kind == BoundaryKind::impedance && !(bc.rho > 0.0))
    {
      iss.constraint.push_back(at_index("reciprocity.boundaries", i) + ".rho: must be positive");
    }
  }
  const auto &inv = rc.invert;
  if (inv.orders_radius < 0 || inv.orders_radius > g.truncation)
  {
    iss.constraint.emplace_back("invert.orders_radius: must lie in [0, truncation]");
  }
  if (!(inv.noise >= 0.0))
  {
    iss.constraint.emplace_back("invert.noise: must be non-negative");
  }
  if (!(inv.init_rho > 0.0))
  {
    iss.constraint.emplace_back("invert.init_rho: must be positive");
  }
  if (!(inv.init_c < g.b))
  {
    iss.constraint.emplace_back("invert.init_c, geometry.b: require init_c < b");
  }
  for (std::size_t i = 0; i < inv.polarizations.size(); ++i)
  {
    if (inv.polarizations[i] < 1 || inv.polarizations[i] > 3)
    {
      iss.constraint.push_back(at_index("invert.polarizations", i) + ": must be 1, 2 or 3");
    }
  }
  if (inv.init_q.size() != parameter_count(inv.parametrization))
  {
    iss.constraint.emplace_back("invert.init_q: one value per parameter required");
  }
  if (!(inv.tikhonov >= 0.0))
  {
    iss.constraint.emplace_back("invert.tikhonov: must be non-negative");
  }
  if (inv.max_iterations <= 0)
  {
    iss.constraint.emplace_back("invert.max_iterations: must be positive");
  }
  for (std::size_t i = 0; i < rc.indicator.depths.size(); ++i)
  {
    const double z = rc.indicator.depths[i];
    if (!(z > 0.0 && g.c + z < g.b))
    {
      iss.constraint.push_back(at_index("indicator.depths", i) +
                               ": offsets must satisfy 0 < offset < b - c");
    }
  }
  if (rc.indicator.truncation < 0)
  {
    iss.constraint.emplace_back("indicator.truncation: must be non-negative");
  }
}

[[noreturn]] void raise(const std::vector<std::string> &list, bool schema)
{
  std::string msg = schema ? "configuration schema errors:" : "configuration constraint errors:";
  for (const auto &s : list)
  {
    msg += "\n  " + s;
  }
  if (schema)
  {
    throw SchemaError(msg);
  }
  throw ConstraintError(msg);
}

Json complex_json(cplx z)
{
  return Json::array({z.real(), z.imag()});
}

Json cvec3_json(const CVec3 &v)
{
  return Json::array({complex_json(v(0)), complex_json(v(1)), complex_json(v(2))});
}

Json vec3_json(const Vec3 &v)
{
  return Json::array({v(0), v(1), v(2)});
}

Json mode_json(ModeIndex n)
{
  return Json::array({n.n1, n.n2});
}

Json boundary_json(const BoundaryCondition &bc)
{
  if (bc.kind == BoundaryKind::pec)
  {
    return Json{{"kind", "pec"}};
  }
  return Json{{"kind", "impedance"}, {"rho", bc.rho}};
}

Json material_json(const MaterialProfile &m)
{
  if (m.is_stack())
  {
    Json layers = Json::array();
    for (const auto &l : m.as_stack().layers)
    {
      layers.push_back(Json{{"thickness", l.thickness}, {"q", complex_json(l.q)}});
    }
    return Json{{"kind", "stack"}, {"layers", layers}};
  }
  const auto &f = m.as_fourier();
  Json coeffs = Json::array();
  for (const auto &[j, q] : f.coeffs)
  {
    coeffs.push_back(Json{{"j", j}, {"q", complex_json(q)}});
  }
  return Json{{"kind", "fourier"}, {"axis", f.axis == Axis::x1 ? "x1" : "x2"}, {"coeffs", coeffs}};
}

Json incidence_json(const IncidentSpec &inc)
{
  if (const auto *p = std::get_if<PlaneOrder>(&inc))
  {
    return Json{{"kind", "plane"}, {"m", mode_json(p->m)}, {"p", cvec3_json(p->p)}};
  }
  if (const auto *d = std::get_if<DipoleSource>(&inc))
  {
    return Json{{"kind", "dipole"}, {"y0", vec3_json(d->y0)}, {"r", vec3_json(d->r)}};
  }
  const auto &s = std::get<SuperpositionSource>(inc);
  Json dens = Json::array();
  for (const auto &[n, r] : s.density)
  {
    dens.push_back(Json{{"n", mode_json(n)}, {"r", cvec3_json(r)}});
  }
  return Json{{"kind", "superposition"}, {"height", s.height}, {"density", dens}};
}

}  // namespace

RunConfig parse_config(std::string_view text)
{
  Json root;
  try
  {
    root = Json::parse(text);
  }
  catch (const Json::parse_error &e)
  {
    throw SchemaError(std::string("configuration is not valid JSON: ") + e.what());
  }
  Issues iss;
  RunConfig rc;
  if (!expect_object(root, "",
                     {"schema_version", "k0", "lambda0", "geometry", "boundary", "momentum",
                      "angles", "truncation", "material", "incidence", "green", "reciprocity",
                      "invert", "indicator", "seed"},
                     iss))
  {
    raise(iss.schema, true);
  }
  if (root.contains("schema_version"))
  {
    long long v = kSchemaVersion;
    read(root, "schema_version", "", iss, v, as_int);
    if (v != kSchemaVersion)
    {
      iss.schema.push_back("schema_version: unsupported version " + std::to_string(v));
    }
  }
  auto &g = rc.grating;
  read(root, "k0", "", iss, g.k0, as_real);
  read(root, "lambda0", "", iss, g.lambda0, as_real);
  if (root.contains("geometry"))
  {
    const Json &geo = root.at("geometry");
    if (expect_object(geo, "geometry", {"b", "c", "h", "profile"}, iss))
    {
      read(geo, "b", "geometry", iss, g.b, as_real);
      read(geo, "c", "geometry", iss, g.c, as_real);
      read(geo, "h", "geometry", iss, g.h, as_real);
      std::string profile = "flat";
      read(geo, "profile", "geometry", iss, profile, as_string);
      if (profile != "flat")
      {
        iss.constraint.emplace_back("geometry.profile: only flat interfaces are supported");
      }
    }
  }
  if (root.contains("boundary"))
  {
    if (auto bc = as_boundary(root.at("boundary"), "boundary", iss))
    {
      g.boundary = *bc;
    }
  }
  if (root.contains("momentum") && root.contains("angles"))
  {
    iss.schema.emplace_back("momentum, angles: give at most one");
  }
  read(root, "momentum", "", iss, g.momentum.alpha, as_vec2);
  if (root.contains("angles"))
  {
    const Json &a = root.at("angles");
    if (expect_object(a, "angles", {"theta1", "theta2"}, iss))
    {
      double t1 = 0.0, t2 = 0.0;
      read(a, "theta1", "angles", iss, t1, as_real);
      read(a, "theta2", "angles", iss, t2, as_real);
      if (g.k0 > 0.0)
      {
        g.momentum = momentum_from_angles(g.k0, t1, t2);
      }
    }
  }
  read(root, "truncation", "", iss, g.truncation, as_int);
  const double thickness = g.b - g.c;
  if (root.contains("material"))
  {
    if (auto m = as_material(root.at("material"), "material", thickness, iss))
    {
      rc.material = *m;
    }
  }
  else
  {
    rc.material = MaterialProfile::homogeneous(thickness, 1.0);
  }
  read_list(root, "incidence", "", iss, rc.incidence, as_incidence);
  if (root.contains("green"))
  {
    parse_green(root.at("green"), "green", rc.green, iss);
  }
  if (root.contains("reciprocity"))
  {
    parse_reciprocity(root.at("reciprocity"), "reciprocity", rc.reciprocity, iss);
  }
  if (root.contains("invert"))
  {
    parse_invert(root.at("invert"), "invert", rc.invert, iss);
  }
  if (root.contains("indicator"))
  {
    parse_indicator(root.at("indicator"), "indicator", rc.indicator, iss);
  }
  if (root.contains("seed"))
  {
    const Json &s = root.at("seed");
    if (s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0))
    {
      rc.seed = s.get<std::uint64_t>();
    }
    else
    {
      iss.schema.emplace_back("seed: expected a non-negative integer");
    }
  }
  if (!iss.schema.empty())
  {
    raise(iss.schema, true);
  }
  check_constraints(rc, iss);
  if (!iss.constraint.empty())
  {
    raise(iss.constraint, false);
  }
  return rc;
}

Json serialize(const RunConfig &rc)
{
  const auto &g = rc.grating;
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["k0"] = g.k0;
  j["lambda0"] = g.lambda0;
  j["geometry"] = Json{{"b", g.b}, {"c", g.c}, {"h", g.h}, {"profile", "flat"}};
  j["boundary"] = boundary_json(g.boundary);
  j["momentum"] = Json::array({g.momentum.alpha(0), g.momentum.alpha(1)});
  j["truncation"] = g.truncation;
  j["material"] = material_json(rc.material);
  j["incidence"] = Json::array();
  for (const auto &inc : rc.incidence)
  {
    j["incidence"].push_back(incidence_json(inc));
  }

  Json green{{"truncation", rc.green.truncation}, {"dyadic", rc.green.dyadic}};
  green["points"] = Json::array();
  for (const auto &p : rc.green.points)
  {
    green["points"].push_back(vec3_json(p));
  }
  if (rc.green.source)
  {
    green["source"] = vec3_json(*rc.green.source);
  }
  if (rc.green.k)
  {
    green["k"] = complex_json(*rc.green.k);
  }
  j["green"] = green;

  const auto &r = rc.reciprocity;
  Json rec{{"kind", r.kind == ReciprocityKind::interior ? "interior" : "exterior"},
           {"y0", vec3_json(r.y0)}};
  if (r.k1)
  {
    rec["k1"] = complex_json(*r.k1);
  }
  rec["boundaries"] = Json::array();
  for (const auto &bc : r.boundaries)
  {
    rec["boundaries"].push_back(boundary_json(bc));
  }
  rec["lambdas"] = r.lambdas;
  rec["polarizations"] = Json::array();
  for (const auto &p : r.polarizations)
  {
    rec["polarizations"].push_back(cvec3_json(p));
  }
  rec["dipoles"] = Json::array();
  for (const auto &d : r.dipoles)
  {
    rec["dipoles"].push_back(vec3_json(d));
  }
  rec["orders"] = Json::array();
  for (const auto &m : r.orders)
  {
    rec["orders"].push_back(mode_json(m));
  }
  j["reciprocity"] = rec;

  const auto &inv = rc.invert;
  Json ij{{"target", inv.target == InversionTarget::profile ? "profile" : "impedance_depth"},
          {"orders_radius", inv.orders_radius},
          {"polarizations", inv.polarizations},
          {"noise", inv.noise},
          {"init_c", inv.init_c},
          {"init_rho", inv.init_rho},
          {"tikhonov", inv.tikhonov},
          {"morozov", inv.morozov},
          {"max_iterations", inv.max_iterations}};
  if (const auto *s = std::get_if<StackParametrization>(&inv.parametrization))
  {
    ij["parametrization"] =
        Json{{"kind", "stack"}, {"layers", s->layers}, {"thicknesses", s->thicknesses}};
  }
  else
  {
    const auto &f = std::get<FourierParametrization>(inv.parametrization);
    ij["parametrization"] = Json{{"kind", "fourier"},
                                 {"axis", f.axis == Axis::x1 ? "x1" : "x2"},
                                 {"harmonics", f.harmonics}};
  }
  ij["init_q"] = Json::array();
  for (const auto &q : inv.init_q)
  {
    ij["init_q"].push_back(complex_json(q));
  }
  j["invert"] = ij;

  const auto &ind = rc.indicator;
  Json dj{{"depths", ind.depths},
          {"r", vec3_json(ind.r)},
          {"truncation", ind.truncation},
          {"probe_xy", Json::array({ind.probe_xy(0), ind.probe_xy(1)})}};
  if (ind.k1)
  {
    dj["k1"] = complex_json(*ind.k1);
  }
  if (ind.test_plane)
  {
    dj["test_plane"] = *ind.test_plane;
  }
  j["indicator"] = dj;
  j["seed"] = rc.seed;
  return j;
}

bool RunConfig::operator==(const RunConfig &o) const
{
  return serialize(*this) == serialize(o);
}

std::string canonical_text(const RunConfig &config)
{
  return serialize(config).dump();
}

std::string config_digest(const RunConfig &config)
{
  const std::string text = canonical_text(config);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
  {
    throw IoError("SHA-256 digest failed");
  }
  static const char *hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i)
  {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

Json record_to_json(const ResultRecord &r)
{
  return Json{{"schema_version", r.schema_version},
              {"command", r.command},
              {"config_digest", r.config_digest},
              {"tool_version", r.tool_version},
              {"payload", r.payload},
              {"timing", Json{{"wall_seconds", r.wall_seconds}}}};
}

ResultRecord record_from_json(const Json &j)
{
  try
  {
    ResultRecord r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kSchemaVersion)
    {
      throw SchemaError("unsupported result schema version " + std::to_string(r.schema_version));
    }
    r.command = j.at("command").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.tool_version = j.at("tool_version").get<std::string>();
    r.payload = j.at("payload");
    r.wall_seconds = j.at("timing").at("wall_seconds").get<double>();
    return r;
  }
  catch (const Json::exception &e)
  {
    throw SchemaError(std::string("malformed result record: ") + e.what());
  }
}

std::string record_text(const ResultRecord &record)
{
  return record_to_json(record).dump(2) + "\n";
}

ResultRecord parse_record(std::string_view text)
{
  try
  {
    return record_from_json(Json::parse(text));
  }
  catch (const Json::parse_error &e)
  {
    throw SchemaError(std::string("result record is not valid JSON: ") + e.what());
  }
}

std::string payload_text(const ResultRecord &record)
{
  return record.payload.dump();
}

const std::vector<std::string> &known_commands()
{
  static const std::vector<std::string> cmds = {"modes",       "green",  "solve",
                                                "reciprocity", "invert", "indicator"};
  return cmds;
}

namespace
{

Json modes_payload(const RunConfig &rc)
{
  const auto &g = rc.grating;
  Json rows = Json::array();
  for (const auto n : Truncation(g.truncation).modes())
  {
    const Vec2 a = alpha_n(g.momentum, n);
    const VerticalWavenumber b = beta_n(g.k0, a);
    rows.push_back(Json{{"n", mode_json(n)},
                        {"alpha", Json::array({a(0), a(1)})},
                        {"beta", complex_json(b.value())},
                        {"propagating", b.propagating()}});
  }
  return Json{{"modes", rows}};
}

Json green_payload(const RunConfig &rc)
{
  if (!rc.green.source || rc.green.points.empty())
  {
    throw InvalidArgument("green command needs green.source and green.points");
  }
  GreenParams params;
  params.k = rc.green.k.value_or(cplx(rc.grating.k0));
  params.momentum = rc.grating.momentum;
  params.truncation = rc.green.truncation;
  const auto values = scalar_green_batch(rc.green.points, *rc.green.source, params);
  std::vector<CMat3> dyads;
  if (rc.green.dyadic)
  {
    dyads = dyadic_green_batch(rc.green.points, *rc.green.source, params);
  }
  Json rows = Json::array();
  for (std::size_t i = 0; i < values.size(); ++i)
  {
    Json row{{"x", vec3_json(rc.green.points[i])}, {"G", complex_json(values[i])}};
    if (rc.green.dyadic)
    {
      Json m = Json::array();
      for (int r = 0; r < 3; ++r)
      {
        m.push_back(cvec3_json(dyads[i].row(r).transpose()));
      }
      row["dyadic"] = m;
    }
    rows.push_back(row);
  }
  return Json{{"source", vec3_json(*rc.green.source)}, {"values", rows}};
}

Json solve_payload(const RunConfig &rc)
{
  if (rc.incidence.empty())
  {
    throw InvalidArgument("solve command needs at least one incidence entry");
  }
  Json results = Json::array();
  for (const auto &inc : rc.incidence)
  {
    const Solution sol = solve(rc.grating, rc.material, inc);
    Json coeffs = Json::array();
    for (const auto &[n, e] : sol.scattered_up().coeffs)
    {
      coeffs.push_back(Json{{"n", mode_json(n)}, {"E", cvec3_json(e)}});
    }
    Json entry{{"incidence", incidence_json(inc)}, {"coefficients", coeffs}};
    const auto *plane = std::get_if<PlaneOrder>(&inc);
    if (plane != nullptr &&
        beta_n(rc.grating.k0, alpha_n(rc.grating.momentum, plane->m)).propagating())
    {
      const EnergyReport er = energy_report(sol);
      Json eff = Json::array();
      for (const auto &o : er.orders)
      {
        eff.push_back(Json{{"n", mode_json(o.n)}, {"value", o.efficiency}});
      }
      entry["efficiency"] = eff;
      entry["efficiency_total"] = er.total;
    }
    const ResidualReport res = residuals(sol);
    entry["residuals"] = Json{{"transmission_tangential", res.transmission_tangential},
                              {"transmission_curl", res.transmission_curl},
                              {"boundary", res.boundary},
                              {"dtn", res.dtn},
                              {"divergence", res.divergence}};
    entry["min_rcond"] = sol.diagnostics().min_rcond;
    results.push_back(entry);
  }
  return Json{{"results", results}};
}

std::optional<cplx> layer_wavenumber(const RunConfig &rc)
{
  const auto q = rc.material.constant_value();
  if (!q)
  {
    return std::nullopt;
  }
  return rc.grating.k0 * std::sqrt(*q);
}

Json reciprocity_payload(const RunConfig &rc)
{
  const auto &b = rc.reciprocity;
  ReciprocitySweep sweep;
  sweep.kind = b.kind;
  sweep.base = rc.grating;
  sweep.material = rc.material;
  sweep.y0 = b.y0;
  sweep.boundaries = b.boundaries;
  sweep.lambdas = b.lambdas;
  sweep.polarizations = b.polarizations;
  sweep.dipoles = b.dipoles;
  sweep.orders = b.orders;
  if (b.kind == ReciprocityKind::interior)
  {
    const auto k1 = b.k1 ? b.k1 : layer_wavenumber(rc);
    if (!k1)
    {
      throw UnsupportedCombination("interior reciprocity needs reciprocity.k1 or a constant material");
    }
    sweep.k1 = *k1;
  }
  const auto reports = run_sweep(sweep);
  Json rows = Json::array();
  double worst = 0.0;
  for (const auto &r : reports)
  {
    worst = std::max(worst, r.rel_error);
    rows.push_back(Json{{"boundary", boundary_json(r.config.boundary)},
                        {"lambda0", r.config.lambda0},
                        {"p", cvec3_json(r.p)},
                        {"r", vec3_json(r.r)},
                        {"m", mode_json(r.m)},
                        {"lhs", complex_json(r.lhs)},
                        {"rhs", complex_json(r.rhs)},
                        {"rel_error", r.rel_error}});
  }
  return Json{{"kind", b.kind == ReciprocityKind::interior ? "interior" : "exterior"},
              {"reports", rows},
              {"max_rel_error", worst}};
}

Json invert_payload(const RunConfig &rc)
{
  const auto &b = rc.invert;
  const auto orders = orders_within(b.orders_radius);
  const NearFieldDataset data =
      synthesize_data(rc.grating, rc.material, orders, b.polarizations, b.noise, rc.seed);
  GaussNewtonOptions opts;
  opts.tikhonov = b.tikhonov;
  opts.max_iterations = b.max_iterations;
  if (b.morozov && b.noise > 0.0)
  {
    opts.noise_level = b.noise;
  }
  InversionResult res;
  Json truth;
  if (b.target == InversionTarget::impedance_depth)
  {
    const auto q = rc.material.constant_value();
    if (rc.grating.boundary.kind != BoundaryKind::impedance || !q)
    {
      throw UnsupportedCombination(
          "impedance/depth inversion needs an impedance boundary and a constant material");
    }
    res = invert_impedance_depth(data, rc.grating, *q, b.init_c, b.init_rho, opts);
    truth = Json::array({rc.grating.c, rc.grating.boundary.rho});
  }
  else
  {
    if (rc.grating.boundary.kind != BoundaryKind::pec)
    {
      throw UnsupportedCombination("profile inversion needs a PEC boundary");
    }
    res = invert_refractive_profile(data, rc.grating, b.parametrization, b.init_q, opts);
    truth = material_json(rc.material);
  }
  Json est = Json::array();
  for (Eigen::Index i = 0; i < res.estimate.size(); ++i)
  {
    est.push_back(res.estimate(i));
  }
  return Json{{"target", b.target == InversionTarget::profile ? "profile" : "impedance_depth"},
              {"names", res.names},
              {"estimate", est},
              {"truth", truth},
              {"residual_history", res.residual_history},
              {"jacobian_condition", res.jacobian_condition},
              {"regularization", res.regularization},
              {"converged", res.converged},
              {"accepted_steps", res.accepted_steps},
              {"iterations", res.iterations},
              {"data_norm", res.data_norm},
              {"noise", Json{{"level", b.noise}, {"seed", rc.seed}}}};
}

Json indicator_payload(const RunConfig &rc)
{
  const auto &b = rc.indicator;
  const auto k1 = b.k1 ? b.k1 : layer_wavenumber(rc);
  if (!k1)
  {
    throw UnsupportedCombination("indicator needs indicator.k1 or a constant material");
  }
  BlowupOptions opts;
  opts.truncation = b.truncation;
  opts.test_plane = b.test_plane;
  opts.probe_xy = b.probe_xy;
  std::vector<double> depths;
  for (const double off : b.depths)
  {
    depths.push_back(rc.grating.c + off);
  }
  const auto curve = blowup_indicator(rc.grating, *k1, depths, b.r, opts);
  Json rows = Json::array();
  for (const auto &p : curve)
  {
    rows.push_back(Json{{"z3", p.z3}, {"offset", p.offset}, {"value", p.value}});
  }
  return Json{{"curve", rows}, {"truncation", b.truncation}};
}

}  // namespace

ResultRecord run_command(const std::string &command, const RunConfig &config,
                         const std::optional<std::string> &out_path)
{
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec;
  rec.command = command;
  rec.config_digest = config_digest(config);
  if (command == "modes")
  {
    rec.payload = modes_payload(config);
  }
  else if (command == "green")
  {
    rec.payload = green_payload(config);
  }
  else if (command == "solve")
  {
    rec.payload = solve_payload(config);
  }
  else if (command == "reciprocity")
  {
    rec.payload = reciprocity_payload(config);
  }
  else if (command == "invert")
  {
    rec.payload = invert_payload(config);
  }
  else if (command == "indicator")
  {
    rec.payload = indicator_payload(config);
  }
  else
  {
    throw UsageError("unknown command '" + command + "'");
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out_path)
  {
    std::ofstream out(*out_path, std::ios::binary);
    if (!out)
    {
      throw IoError("cannot open " + *out_path + " for writing");
    }
    out << record_text(rec);
    if (!out)
    {
      throw IoError("failed writing " + *out_path);
    }
  }
  return rec;
}

PlotKind parse_plot_kind(const std::string &name)
{
  if (name == "efficiency_vs_order")
  {
    return PlotKind::efficiency_vs_order;
  }
  if (name == "indicator_curve")
  {
    return PlotKind::indicator_curve;
  }
  if (name == "residual_history")
  {
    return PlotKind::residual_history;
  }
  throw UsageError("unknown plot kind '" + name + "'");
}

std::string format_real(double v)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific, 16);
  return std::string(buf, res.ptr);
}

std::string emit_plot_data(const ResultRecord &record, PlotKind kind)
{
  std::ostringstream out;
  const Json &p = record.payload;
  auto missing = [&](const char *what) {
    throw MissingPayload(std::string("record '") + record.command + "' has no " + what);
  };
  switch (kind)
  {
  case PlotKind::efficiency_vs_order:
  {
    if (!p.is_object() || !p.contains("results"))
    {
      missing("efficiency table");
    }
    out << "# incidence n1 n2 efficiency\n";
    std::size_t idx = 0;
    for (const auto &entry : p.at("results"))
    {
      if (entry.contains("efficiency"))
      {
        for (const auto &row : entry.at("efficiency"))
        {
          out << idx << ' ' << row.at("n")[0].get<int>() << ' ' << row.at("n")[1].get<int>()
              << ' ' << format_real(row.at("value").get<double>()) << '\n';
        }
      }
      ++idx;
    }
    break;
  }
  case PlotKind::indicator_curve:
  {
    if (!p.is_object() || !p.contains("curve"))
    {
      missing("indicator curve");
    }
    std::vector<std::pair<double, double>> rows;
    for (const auto &row : p.at("curve"))
    {
      rows.emplace_back(row.at("z3").get<double>(), row.at("value").get<double>());
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto &a, const auto &b) { return a.first < b.first; });
    out << "# z3 indicator\n";
    for (const auto &[z, v] : rows)
    {
      out << format_real(z) << ' ' << format_real(v) << '\n';
    }
    break;
  }
  case PlotKind::residual_history:
  {
    if (!p.is_object() || !p.contains("residual_history"))
    {
      missing("residual history");
    }
    out << "# iteration residual\n";
    std::size_t i = 0;
    for (const auto &v : p.at("residual_history"))
    {
      out << i++ << ' ' << format_real(v.get<double>()) << '\n';
    }
    break;
  }
  }
  return out.str();
}

ExitCode exit_code_for(const std::exception &e)
{
  if (dynamic_cast<const UsageError *>(&e) != nullptr)
  {
    return ExitCode::usage;
  }
  if (dynamic_cast<const SchemaError *>(&e) != nullptr ||
      dynamic_cast<const ConstraintError *>(&e) != nullptr ||
      dynamic_cast<const InvalidArgument *>(&e) != nullptr)
  {
    return ExitCode::config;
  }
  if (dynamic_cast<const NonConvergence *>(&e) != nullptr ||
      dynamic_cast<const ConstraintProjectionLoop *>(&e) != nullptr ||
      dynamic_cast<const DegenerateJacobian *>(&e) != nullptr ||
      dynamic_cast<const QuadratureNonconvergence *>(&e) != nullptr)
  {
    return ExitCode::nonconvergence;
  }
  if (dynamic_cast<const IoError *>(&e) != nullptr)
  {
    return ExitCode::io;
  }
  if (dynamic_cast<const MissingPayload *>(&e) != nullptr)
  {
    return ExitCode::missing_payload;
  }
  return ExitCode::solver;
}

}  // namespace grating
