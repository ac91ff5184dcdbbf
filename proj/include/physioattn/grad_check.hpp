#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "physioattn/nn.hpp"
#include "physioattn/tensor.hpp"

namespace physioattn {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t near_zero = 0;  // elements where both gradients are below the absolute floor
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::vector<GradCheckEntry> checked;
  std::vector<std::string> excluded;  // frozen parameters
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, for every trainable parameter in `params`. Elements whose
/// analytic and numeric gradients are both below `zero_floor` in magnitude
/// count as matching.
template <class F>
GradCheckReport grad_check(F&& f, const std::vector<Parameter<double>>& params, double step = 1e-5,
                           double zero_floor = 1e-8) {
  GradCheckReport report;
  std::vector<Parameter<double>> live;
  for (const auto& p : params) {
    if (p.trainable()) {
      live.push_back(p);
    } else {
      report.excluded.push_back(p.name);
    }
  }
  for (auto& p : live) p.zero_grad();
  Tensor<double> y = f();
  if (y.size() != 1) throw ShapeError("grad_check requires a scalar function, got shape " + to_string(y.shape()));
  backward(y);
  for (auto& p : live) {
    const std::vector<double> analytic = p.grad();
    GradCheckEntry entry{p.name, 0.0};
    auto& v = p.value.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      double fp, fm;
      {
        NoGradGuard guard;
        v[i] = saved + step;
        fp = f().item();
        v[i] = saved - step;
        fm = f().item();
      }
      v[i] = saved;
      const double numeric = (fp - fm) / (2 * step);
      if (std::abs(analytic[i]) < zero_floor && std::abs(numeric) < zero_floor) {
        ++entry.near_zero;
        continue;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.checked.push_back(entry);
  }
  return report;
}

}  // namespace physioattn
