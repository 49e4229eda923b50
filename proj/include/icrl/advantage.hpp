#pragma once
#include <cmath>
#include <utility>
#include <vector>

#include "icrl/errors.hpp"

namespace icrl {

struct AdvantageConfig {
  double delta = 1e-4;  // stability constant added to the group std

  void validate() const {
    if (!(delta > 0.0)) throw ConfigError("advantage delta must be positive");
  }
};

// Group-relative advantages: (r_i - mean) / (std + delta) with the population
// standard deviation. Applied to one role's group at a time; solver and
// critic rewards are never normalized together in the full method. delta = 0
// is allowed (exact scale invariance, oracle cross-checks); a constant group
// then yields zeros, the 0/0 limit.
inline std::vector<double> role_advantages(const std::vector<double>& rewards, double delta) {
  if (rewards.empty()) throw InputError("role_advantages: empty group");
  if (!(delta >= 0.0)) throw ConfigError("role_advantages: delta must be non-negative");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out;
  out.reserve(rewards.size());
  if (sd + delta == 0.0) {
    out.assign(rewards.size(), 0.0);
    return out;
  }
  for (double r : rewards) out.push_back((r - mean) / (sd + delta));
  return out;
}

// Ablation baseline: normalize both roles under one shared mean/std. This is
// the deliberately wrong estimator the role-wise variant exists to avoid.
inline std::pair<std::vector<double>, std::vector<double>> pooled_advantages(
    const std::vector<double>& solver_rewards, const std::vector<double>& critic_rewards,
    double delta) {
  if (solver_rewards.empty() && critic_rewards.empty())
    throw InputError("pooled_advantages: both groups empty");
  std::vector<double> all = solver_rewards;
  all.insert(all.end(), critic_rewards.begin(), critic_rewards.end());
  std::vector<double> norm = role_advantages(all, delta);
  std::vector<double> solver(norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(solver_rewards.size()));
  std::vector<double> critic(norm.begin() + static_cast<std::ptrdiff_t>(solver_rewards.size()), norm.end());
  return {std::move(solver), std::move(critic)};
}

}  // namespace icrl
