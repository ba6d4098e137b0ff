#include "support/gradcheck.hpp"

#include <cmath>
#include <map>

namespace traj::testing {

GradCheck finite_difference_check(ParameterStore& store, const LossBuilder& build, int probes,
                                  uint64_t seed, double h) {
  // Analytic gradients from one backward pass.
  std::map<std::string, Mat> analytic;
  {
    Tape t(/*grad=*/true);
    VarId loss = build(t, store);
    t.backward(loss);
    GradList grads;
    t.accumulate_param_grads(grads);
    for (auto& [name, g] : grads) analytic.emplace(name, std::move(g));
  }
  if (analytic.empty()) throw std::logic_error("gradcheck: loss uses no parameters");

  auto eval = [&]() {
    Tape t(/*grad=*/false);
    return t.scalar(build(t, store));
  };

  std::vector<std::string> names;
  for (const auto& [name, g] : analytic) names.push_back(name);

  Rng rng(seed);
  GradCheck result;
  result.probes = probes;
  for (int p = 0; p < probes; ++p) {
    const std::string& name = names[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(names.size()) - 1))];
    Mat& param = store.get_mutable(name);
    const int idx = static_cast<int>(rng.uniform_int(0, param.size() - 1));

    const double saved = param.d[static_cast<size_t>(idx)];
    param.d[static_cast<size_t>(idx)] = saved + h;
    const double up = eval();
    param.d[static_cast<size_t>(idx)] = saved - h;
    const double down = eval();
    param.d[static_cast<size_t>(idx)] = saved;

    const double fd = (up - down) / (2.0 * h);
    const double an = analytic.at(name).d[static_cast<size_t>(idx)];
    const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-2});
    result.max_rel_err = std::max(result.max_rel_err, rel);
  }
  return result;
}

void randomize_params(ParameterStore& store, uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [name, m] : store.params_mutable()) {
    for (double& v : m.d) v = scale * rng.normal();
  }
}

}  // namespace traj::testing
