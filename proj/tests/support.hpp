// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "grating/forward_solver.hpp"

namespace support
{

using namespace grating;

inline GratingConfig base_config(int truncation = 3)
{
  GratingConfig cfg;
  cfg.k0 = 1.3;
  cfg.lambda0 = 1.0;
  cfg.c = 0.0;
  cfg.b = 1.0;
  cfg.h = 1.5;
  cfg.momentum.alpha = Vec2(0.31, -0.17);
  cfg.truncation = truncation;
  return cfg;
}

inline MaterialProfile three_layer_stack()
{
  return MaterialProfile::stack({{0.3, 2.0}, {0.4, cplx(3.0, 0.2)}, {0.3, 1.5}});
}

inline MaterialProfile fourier_profile()
{
  return MaterialProfile::fourier(Axis::x1,
                                  {{0, cplx(2.0, 0.1)}, {1, cplx(0.3, 0.0)}, {-1, cplx(0.3, 0.0)}});
}

// Random stack on [c, b] with 1 to 4 layers; lossless when `lossless`.
inline MaterialProfile random_stack(std::mt19937_64 &rng, double thickness, bool lossless)
{
  std::uniform_int_distribution<int> nl(1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = nl(rng);
  std::vector<double> w(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (auto &x : w)
  {
    x = 0.3 + u(rng);
    sum += x;
  }
  std::vector<StackLayer> layers;
  double used = 0.0;
  for (int i = 0; i < n; ++i)
  {
    const double t = i + 1 == n ? thickness - used : thickness * w[static_cast<std::size_t>(i)] / sum;
    used += t;
    const double re = 1.0 + 3.0 * u(rng);
    const double im = lossless ? 0.0 : 0.05 + 0.3 * u(rng);
    layers.push_back({t, cplx(re, im)});
  }
  return MaterialProfile::stack(std::move(layers));
}

inline CVec3 random_polarization(std::mt19937_64 &rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  return CVec3(cplx(n(rng), n(rng)), cplx(n(rng), n(rng)), cplx(n(rng), n(rng)));
}

}  // namespace support
