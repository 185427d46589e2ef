#pragma once

#include <functional>
#include <string>

#include "params.hpp"

namespace argus {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  size_t coords_checked = 0;
};

// Central-difference gradient check over every trainable parameter in the
// store. loss_fn(store, grads_or_null) must rebuild its graph from the store
// contents on every call and fill analytic gradients when asked.
//
// rel err = |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
// Runs in double; the forward must be twice continuously differentiable.
template <typename F>
GradcheckReport gradcheck(ParameterStore<double>& store, F&& loss_fn,
                          double eps = 1e-5) {
  GradStore<double> grads;
  double base = loss_fn(store, &grads);
  if (!std::isfinite(base))
    throw NumericError("gradcheck: non-finite base loss");
  for (const auto& [name, g] : grads)
    if (!g.allFinite())
      throw NumericError("gradcheck: non-finite analytic gradient at " + name);

  GradcheckReport rep;
  for (auto& [name, entry] : store) {
    if (entry.frozen) continue;
    Mat<double>& p = entry.tensor;
    auto git = grads.find(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double saved = p(i);
      p(i) = saved + eps;
      double lp = loss_fn(store, nullptr);
      p(i) = saved - eps;
      double lm = loss_fn(store, nullptr);
      p(i) = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericError("gradcheck: non-finite perturbed loss at " + name);
      double numeric = (lp - lm) / (2.0 * eps);
      double analytic = (git != grads.end()) ? git->second(i) : 0.0;
      double rel = std::abs(analytic - numeric) /
                   std::max(1e-12, std::abs(analytic) + std::abs(numeric));
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace argus
