#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ncgm/tensor.hpp"

namespace ncgm::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Contracts any output to a scalar with fixed random weights so every output
/// entry contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const auto w = random_tensor(out.shape(), rng, false);
  return sum(mul(out, w));
}

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences against reverse mode. Relative error uses
/// max(|analytic|, |numeric|, floor) as the denominator. A coordinate above
/// `retry_above` is re-measured with h/10, since a ReLU kink closer than h
/// to the point corrupts the wider difference but not the narrower one.
inline GradReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor>& inputs,
                            double h = 1e-6, double floor = 1e-3, std::size_t max_coords = 0,
                            std::uint64_t coord_seed = 7, double retry_above = 1e-5) {
  const auto loss = f(inputs);
  const auto g = grad(loss);
  GradReport rep;
  std::mt19937_64 rng(coord_seed);
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    const auto analytic = g.of(x);
    std::vector<std::size_t> coords(x.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (auto i : coords) {
      auto d = x.mutable_data();
      const double orig = d[i];
      const double a = analytic.at(i);
      auto rel_error = [&](double step) {
        d[i] = orig + step;
        const double up = f(inputs).item();
        d[i] = orig - step;
        const double down = f(inputs).item();
        d[i] = orig;
        const double numeric = (up - down) / (2 * step);
        return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      };
      double err = rel_error(h);
      if (err > retry_above) err = std::min(err, rel_error(h / 10));
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace ncgm::testing
