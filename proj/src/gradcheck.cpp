// SPDX-License-Identifier: Apache-2.0
#include "tfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tfn {

namespace {

double project(const Tensor& y, const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += weights[i] * y[i];
  return s;
}

}  // namespace

double finite_difference_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                                   const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tape tape;
  std::vector<double> weights;
  {
    TapeScope scope(tape);
    Tensor y = f();
    weights.assign(y.numel(), 1.0);
    if (y.numel() != 1) {
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (auto& w : weights) w = dist(rng);
    }
    tape.backward(y, weights);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    auto g = t.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  tape.clear();

  double worst = 0.0;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto vals = wrt[k].mutable_values();
    std::vector<std::size_t> idx(vals.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries_per_tensor != 0 && idx.size() > opt.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries_per_tensor);
    }
    for (auto i : idx) {
      const double saved = vals[i];
      vals[i] = saved + opt.h;
      const double up = project(f(), weights);
      vals[i] = saved - opt.h;
      const double down = project(f(), weights);
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double gradcheck_random_configs(const ConfigSampler& sample, const KinkPredicate& near_kink,
                                const OpUnderTest& op, int configs, std::uint64_t seed,
                                const GradcheckOptions& opt) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    std::vector<Tensor> inputs = sample(rng);
    int redraws = 0;
    while (near_kink && near_kink(inputs)) {
      if (++redraws > 1000) throw Error("gradcheck: could not sample away from kinks");
      inputs = sample(rng);
    }
    GradcheckOptions o = opt;
    o.seed = opt.seed + static_cast<std::uint64_t>(c);
    worst = std::max(worst, finite_difference_gradcheck([&] { return op(inputs); }, inputs, o));
  }
  return worst;
}

}  // namespace tfn
