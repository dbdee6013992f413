#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sviqa/tensor.hpp"

namespace sviqa {

struct GradCheckOptions {
  double step = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error.
  double floor = 1e-6;
  // Number of entries sampled from x; 0 checks every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::string summary() const;
};

// Compares backward() through f against central differences in x.
// f must rebuild its graph from the current contents of x on every call and
// return a scalar. Failure is reported, never thrown.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Tensor x, double tol,
                                  const GradCheckOptions& opts = {});

}  // namespace sviqa
