#pragma once
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "icrl/context.hpp"
#include "icrl/errors.hpp"
#include "icrl/policy.hpp"

namespace icrl {

// One trained token inside an optimization batch. `feats` describes the
// context the current policy is evaluated under: for solver tokens that is
// the critique-free prompt (q, y_<t); for critic tokens the original prompt
// (q, tau). Both behavior log-probs were taken under the rollout snapshot:
// `logp_behavior` in the same evaluation context (the ratio denominator) and
// `logp_sampling` in the context that actually generated the token. The two
// differ only for critique-guided solver tokens, which is exactly when the
// calibration weight departs from 1.
struct TokenTerm {
  Role role = Role::solver;
  bool critique_guided = false;
  double advantage = 0.0;
  Features feats;
  TokenId token = 0;
  double logp_behavior = 0.0;
  double logp_sampling = 0.0;
};

struct OptimizerConfig {
  double epsilon = 0.2;       // ratio clip radius
  double w_max = 2.0;         // calibration weight cap
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.1;
  double adam_eps = 1e-8;
  int epochs = 1;  // optimization epochs per rollout batch

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0,1)");
    if (!(w_max >= 1.0)) throw ConfigError("w_max must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
};

// Calibration weight: probability of the token under the critique-free
// behavior context over its probability under the sampling context. Equals 1
// whenever the token was not critique-guided (identical contexts).
inline double reweight(double logp_free, double logp_cond) {
  if (!std::isfinite(logp_free) || !std::isfinite(logp_cond))
    throw NumericalError("reweight: non-finite log-probability");
  return std::exp(logp_free - logp_cond);
}

// Current-vs-behavior probability ratio under one fixed evaluation context.
inline double importance_ratio(double logp_current, double logp_behavior) {
  if (!std::isfinite(logp_current) || !std::isfinite(logp_behavior))
    throw NumericalError("importance_ratio: non-finite log-probability");
  return std::exp(logp_current - logp_behavior);
}

namespace detail {

// Shared evaluator for the calibrated and plain clipped surrogates. With
// `use_weights` off every token keeps weight 1, which is the single-role
// baseline objective. When `grad_out` is non-null the exact gradient is
// accumulated, treating weights, advantages, and behavior log-probs as
// constants; a clipped token contributes zero gradient.
inline double clipped_surrogate(const PolicyParams& params, std::span<const TokenTerm> batch,
                                const OptimizerConfig& cfg, bool use_weights,
                                std::vector<double>* grad_out) {
  cfg.validate();
  if (batch.empty()) throw InputError("surrogate: empty batch");
  if (grad_out) grad_out->assign(params.W.size(), 0.0);
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenTerm& term = batch[i];
    std::vector<double> lp = detail::log_probs_from(params, term.feats, 1.0);
    const double logp = lp[static_cast<std::size_t>(term.token)];
    const double rho = importance_ratio(logp, term.logp_behavior);
    const double w =
        use_weights ? std::min(reweight(term.logp_behavior, term.logp_sampling), cfg.w_max) : 1.0;
    const double unclipped = rho * term.advantage;
    const double clipped =
        std::clamp(rho, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * term.advantage;
    const double value = w * std::min(unclipped, clipped);
    if (!std::isfinite(value))
      throw NumericalError("surrogate: non-finite contribution at token index " +
                           std::to_string(i));
    total += value;
    if (grad_out && unclipped <= clipped) {
      const double coef = w * term.advantage * rho / n;
      for (int v = 0; v < params.V; ++v) {
        const double g =
            coef * ((v == term.token ? 1.0 : 0.0) - std::exp(lp[static_cast<std::size_t>(v)]));
        for (int f : term.feats.active)
          (*grad_out)[static_cast<std::size_t>(v) * params.F + f] += g;
      }
    }
  }
  return total / n;
}

}  // namespace detail

// Calibrated clipped surrogate: mean over tokens of
//   min(w_t, w_max) * min(rho_t * A, clip(rho_t, 1-eps, 1+eps) * A).
inline double surrogate(const PolicyParams& params, std::span<const TokenTerm> batch,
                        const OptimizerConfig& cfg) {
  return detail::clipped_surrogate(params, batch, cfg, true, nullptr);
}

// Exact gradient of `surrogate` with respect to the weights.
inline std::vector<double> grad_surrogate(const PolicyParams& params,
                                          std::span<const TokenTerm> batch,
                                          const OptimizerConfig& cfg) {
  std::vector<double> grad;
  detail::clipped_surrogate(params, batch, cfg, true, &grad);
  return grad;
}

// Baseline objective: identical to `surrogate` with every weight forced to 1.
inline double grpo_surrogate(const PolicyParams& params, std::span<const TokenTerm> batch,
                             const OptimizerConfig& cfg) {
  return detail::clipped_surrogate(params, batch, cfg, false, nullptr);
}

inline std::vector<double> grad_grpo_surrogate(const PolicyParams& params,
                                               std::span<const TokenTerm> batch,
                                               const OptimizerConfig& cfg) {
  std::vector<double> grad;
  detail::clipped_surrogate(params, batch, cfg, false, &grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Adaptive-moment ascent with decoupled weight decay.

struct AdamState {
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState zeros(const PolicyParams& params) {
    AdamState s;
    s.m.assign(params.W.size(), 0.0);
    s.v.assign(params.W.size(), 0.0);
    return s;
  }
};

inline void optimizer_step(PolicyParams& params, std::span<const double> grad,
                           const OptimizerConfig& cfg, AdamState& state) {
  cfg.validate();
  if (grad.size() != params.W.size() || state.m.size() != params.W.size())
    throw ConfigError("optimizer_step: shape mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericalError("optimizer_step: non-finite gradient");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.W.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.W[i] += cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    params.W[i] -= cfg.learning_rate * cfg.weight_decay * params.W[i];
  }
}

// Optimizer-state sidecar, same textual conventions as policy checkpoints.
inline constexpr const char* kOptStateMagic = "ICRL-OPTSTATE-1";

inline void save_opt_state(const std::string& path, const AdamState& state) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open optimizer state for writing: " + path);
  out << kOptStateMagic << "\n" << state.t << " " << state.m.size() << "\n";
  char buf[40];
  auto dump = [&](const std::vector<double>& xs) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", xs[i]);
      out << buf << (i + 1 == xs.size() ? '\n' : ' ');
    }
  };
  dump(state.m);
  dump(state.v);
}

inline AdamState load_opt_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open optimizer state: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kOptStateMagic) throw ConfigError("bad optimizer-state magic: " + path);
  AdamState s;
  std::size_t n = 0;
  if (!(in >> s.t >> n)) throw ConfigError("bad optimizer-state header: " + path);
  s.m.resize(n);
  s.v.resize(n);
  for (double& x : s.m)
    if (!(in >> x)) throw ConfigError("truncated optimizer state: " + path);
  for (double& x : s.v)
    if (!(in >> x)) throw ConfigError("truncated optimizer state: " + path);
  return s;
}

}  // namespace icrl
