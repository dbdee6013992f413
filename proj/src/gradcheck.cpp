#include "sviqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sviqa/rng.hpp"

namespace sviqa {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " max_rel_err=" << max_rel_error << " at " << worst_index
     << " (analytic " << analytic_at_worst << ", numeric " << numeric_at_worst << ") over " << checked
     << " entries";
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, Tensor x, double tol,
                                  const GradCheckOptions& opts) {
  GradCheckReport rep;
  x.clear_grad();
  {
    Tensor loss = f();
    if (loss.requires_grad()) backward(loss);
  }
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.clear_grad();

  std::vector<std::size_t> idx(x.numel());
  std::iota(idx.begin(), idx.end(), 0);
  if (opts.max_entries > 0 && opts.max_entries < idx.size()) {
    Rng rng(opts.seed);
    rng.shuffle(idx);
    idx.resize(opts.max_entries);
    std::sort(idx.begin(), idx.end());
  }

  NoGradGuard guard;
  auto data = x.mutable_data();
  for (std::size_t i : idx) {
    const double orig = data[i];
    data[i] = orig + opts.step;
    const double up = f().item();
    data[i] = orig - opts.step;
    const double down = f().item();
    data[i] = orig;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rep.checked == 0 || !std::isfinite(rel) || rel > rep.max_rel_error) {
      if (std::isfinite(rep.max_rel_error)) {
        rep.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        rep.worst_index = i;
        rep.analytic_at_worst = analytic[i];
        rep.numeric_at_worst = numeric;
      }
    }
    ++rep.checked;
  }
  rep.passed = std::isfinite(rep.max_rel_error) && rep.max_rel_error < tol;
  return rep;
}

}  // namespace sviqa
