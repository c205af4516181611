#pragma once

// Central-difference gradient verification. The finite-difference side is
// the independent oracle for every analytic gradient in this library, so it
// deliberately shares nothing with Tape::backward: it only re-evaluates the
// forward pass at perturbed parameter values.

#include <functional>

#include "noisymarl/tape.hpp"

namespace noisymarl::autodiff {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;
};

// build_loss records the scalar loss for the current parameter values on a
// fresh tape. Relative error per element: |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
inline GradCheckReport finite_difference_check(ParamSet& params,
                                               const std::function<Var(Tape&)>& build_loss,
                                               double h, double tolerance) {
  if (!(h > 0.0)) fail("finite_difference_check", "h must be positive");

  auto evaluate = [&]() {
    Tape t;
    Var loss = build_loss(t);
    double v = t.value(loss);
    if (!std::isfinite(v)) fail("finite_difference_check", "non-finite function value");
    return v;
  };

  params.zero_grad();
  {
    Tape t;
    Var loss = build_loss(t);
    if (!std::isfinite(t.value(loss)))
      fail("finite_difference_check", "non-finite function value");
    t.backward(loss);
  }
  std::vector<std::vector<double>> analytic(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) analytic[i] = params[i].grad;

  GradCheckReport report;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Parameter& p = params[i];
    GradCheckEntry entry;
    entry.name = p.name;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value.data[k];
      p.value.data[k] = saved + h;
      const double fp = evaluate();
      p.value.data[k] = saved - h;
      const double fm = evaluate();
      p.value.data[k] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[i][k];
      const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(ad - fd) / denom);
    }
    entry.pass = entry.max_rel_err < tolerance;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace noisymarl::autodiff
