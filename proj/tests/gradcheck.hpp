#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "udml/autodiff.hpp"

namespace udml::test {

using ad::Tensor;

inline Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(ad::shape_numel(shape));
  for (auto& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

// Values bounded away from zero, so kinks (relu) stay out of the difference stencil.
inline Tensor away_from_zero(ad::Shape shape, std::uint64_t seed) {
  auto t = random_tensor(std::move(shape), seed, 0.1, 1.0);
  std::mt19937_64 rng(seed + 1);
  for (auto& v : t.mutable_data()) {
    if (rng() & 1u) v = -v;
  }
  return t;
}

inline double relative_error(double a, double b) {
  const double diff = std::abs(a - b);
  if (diff < 1e-9) return 0.0;
  return diff / std::max({std::abs(a), std::abs(b), 1e-7});
}

// Compares tape gradients of the scalar `f(inputs)` with central differences.
// Returns the worst relative error over all input coordinates.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                        double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  {
    ad::Tape tape;
    tape.backward(f(inputs));
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        ad::NoGradGuard guard;
        data[i] = saved + h;
        plus = f(inputs).item();
        data[i] = saved - h;
        minus = f(inputs).item();
      }
      data[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace udml::test
