#pragma once
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "icrl/envs.hpp"
#include "icrl/errors.hpp"
#include "icrl/policy.hpp"

namespace icrl {

// Brute-force ground truth on tiny instances: every trajectory the policy can
// produce, with its exact probability. Probabilities live in log space; sums
// are taken in ascending-magnitude order so results do not depend on
// traversal details.

struct OracleTok {
  TokenId id;
  bool trained;
};

struct EnumeratedTrajectory {
  std::vector<OracleTok> stream;  // tokens after the initial observation
  double log_prob = 0.0;
  double reward = 0.0;
};

struct EnumeratedEnsemble {
  PromptContext base;  // conditioning the trajectories were generated under
  std::vector<EnumeratedTrajectory> trajectories;
};

inline double stable_sum(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end(),
            [](double a, double b) { return std::abs(a) < std::abs(b); });
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum;
}

inline double probability_sum(const EnumeratedEnsemble& ensemble) {
  std::vector<double> ps;
  ps.reserve(ensemble.trajectories.size());
  for (const auto& t : ensemble.trajectories) ps.push_back(std::exp(t.log_prob));
  return stable_sum(std::move(ps));
}

namespace detail {

inline void check_enumeration_bound(int branching, int depth) {
  double est = 1.0;
  for (int i = 0; i < depth; ++i) est *= branching;
  if (est > 1e6)
    throw EnumerationBoundError("enumeration would visit about " + std::to_string(est) +
                                " trajectories (limit 1e6)");
}

}  // namespace detail

// Every action sequence of up to `max_actions` tokens against the
// environment, branching over the full vocabulary at each turn. Episodes the
// environment has not ended by the action budget are closed with reward 0,
// the same rule the environment horizon applies.
inline EnumeratedEnsemble enumerate_env(const PolicyParams& params, const Vocabulary& vocab,
                                        const Query& query,
                                        std::optional<std::vector<TokenId>> critique,
                                        int max_actions) {
  if (max_actions < 1) throw ConfigError("enumerate_env: need at least one action");
  detail::check_enumeration_bound(vocab.size(), max_actions);
  Rng rng(0);
  auto [state0, step0] = reset(vocab, query, rng);

  EnumeratedEnsemble ensemble;
  ensemble.base = solver_context(query.description, step0.observation, std::move(critique));

  std::vector<OracleTok> stream;
  std::function<void(const EnvState&, const PromptContext&, double, int)> rec =
      [&](const EnvState& state, const PromptContext& ctx, double logp, int actions) {
        Features feats = featurize_sparse(ctx, vocab, params.m);
        std::vector<double> lp = detail::log_probs_from(params, feats, 1.0);
        for (TokenId v = 0; v < vocab.size(); ++v) {
          PromptContext next_ctx = ctx;
          next_ctx.tail.push_back(v);
          stream.push_back({v, true});
          auto [next_state, st] = step(vocab, query, state, std::span<const TokenId>(&v, 1));
          for (TokenId obs : st.observation) {
            stream.push_back({obs, false});
            next_ctx.tail.push_back(obs);
          }
          const double logp2 = logp + lp[static_cast<std::size_t>(v)];
          if (st.done || actions + 1 >= max_actions) {
            ensemble.trajectories.push_back({stream, logp2, st.done ? st.reward : 0.0});
          } else {
            rec(next_state, next_ctx, logp2, actions + 1);
          }
          stream.resize(stream.size() - 1 - st.observation.size());
        }
      };
  rec(state0, ensemble.base, 0.0, 0);
  return ensemble;
}

// Pure autoregressive enumeration: all V^length continuations of a context,
// no environment involved. Every token is trained.
inline EnumeratedEnsemble enumerate_sequences(const PolicyParams& params, const Vocabulary& vocab,
                                              const PromptContext& base, int length) {
  if (length < 1) throw ConfigError("enumerate_sequences: need positive length");
  detail::check_enumeration_bound(vocab.size(), length);
  EnumeratedEnsemble ensemble;
  ensemble.base = base;
  std::vector<OracleTok> stream;
  std::function<void(const PromptContext&, double, int)> rec = [&](const PromptContext& ctx,
                                                                   double logp, int depth) {
    Features feats = featurize_sparse(ctx, vocab, params.m);
    std::vector<double> lp = detail::log_probs_from(params, feats, 1.0);
    for (TokenId v = 0; v < vocab.size(); ++v) {
      stream.push_back({v, true});
      const double logp2 = logp + lp[static_cast<std::size_t>(v)];
      if (depth + 1 >= length) {
        ensemble.trajectories.push_back({stream, logp2, 0.0});
      } else {
        PromptContext next_ctx = ctx;
        next_ctx.tail.push_back(v);
        rec(next_ctx, logp2, depth + 1);
      }
      stream.pop_back();
    }
  };
  rec(base, 0.0, 0);
  return ensemble;
}

// Exact expected reward: sum over trajectories of p(tau) r(tau).
inline double exact_objective(const EnumeratedEnsemble& ensemble) {
  std::vector<double> terms;
  terms.reserve(ensemble.trajectories.size());
  for (const auto& t : ensemble.trajectories) terms.push_back(std::exp(t.log_prob) * t.reward);
  return stable_sum(std::move(terms));
}

// Exact policy gradient: sum over trajectories of p(tau) r(tau) grad log p(tau),
// where only trained tokens contribute score terms.
inline std::vector<double> exact_gradient(const EnumeratedEnsemble& ensemble,
                                          const PolicyParams& params, const Vocabulary& vocab) {
  std::vector<double> grad(params.W.size(), 0.0);
  for (const auto& traj : ensemble.trajectories) {
    const double coef = std::exp(traj.log_prob) * traj.reward;
    if (coef == 0.0) continue;
    PromptContext ctx = ensemble.base;
    for (const OracleTok& tok : traj.stream) {
      if (tok.trained) {
        Features feats = featurize_sparse(ctx, vocab, params.m);
        std::vector<double> lp = detail::log_probs_from(params, feats, 1.0);
        for (int v = 0; v < params.V; ++v) {
          const double g =
              coef * ((v == tok.id ? 1.0 : 0.0) - std::exp(lp[static_cast<std::size_t>(v)]));
          for (int f : feats.active) grad[static_cast<std::size_t>(v) * params.F + f] += g;
        }
      }
      ctx.tail.push_back(tok.id);
    }
  }
  return grad;
}

// Both sides of the calibration identity for fixed-length generations:
//
//   lhs = sum_tau pi(tau | q, c) W(tau) f(tau),   W(tau) = prod_t w_t
//   rhs = sum_tau pi(tau | q) f(tau)
//
// With uncapped weights the product telescopes and lhs equals rhs exactly;
// passing a finite `w_cap` applies min(w_t, w_cap) inside the product, which
// reintroduces a bias the caller can measure.
inline std::pair<double, double> check_calibration(
    const PolicyParams& params, const Vocabulary& vocab, const std::vector<TokenId>& query_tokens,
    const std::vector<TokenId>& critique, const std::function<double(std::span<const TokenId>)>& f,
    int length, double w_cap = std::numeric_limits<double>::infinity()) {
  detail::check_enumeration_bound(vocab.size(), length);
  PromptContext cond = solver_context(query_tokens, {}, critique);
  PromptContext free_ctx = solver_context(query_tokens, {});
  const double log_cap = std::log(w_cap);

  std::vector<double> lhs_terms, rhs_terms;
  std::vector<TokenId> seq;
  std::function<void(const PromptContext&, const PromptContext&, double, double, double)> rec =
      [&](const PromptContext& c_ctx, const PromptContext& f_ctx, double lp_cond, double lp_free,
          double log_w) {
        Features cf = featurize_sparse(c_ctx, vocab, params.m);
        Features ff = featurize_sparse(f_ctx, vocab, params.m);
        std::vector<double> lc = detail::log_probs_from(params, cf, 1.0);
        std::vector<double> lf = detail::log_probs_from(params, ff, 1.0);
        for (TokenId v = 0; v < vocab.size(); ++v) {
          seq.push_back(v);
          const double step_w = std::min(lf[static_cast<std::size_t>(v)] - lc[static_cast<std::size_t>(v)], log_cap);
          const double lp_cond2 = lp_cond + lc[static_cast<std::size_t>(v)];
          const double lp_free2 = lp_free + lf[static_cast<std::size_t>(v)];
          const double log_w2 = log_w + step_w;
          if (static_cast<int>(seq.size()) == length) {
            const double fx = f(seq);
            lhs_terms.push_back(std::exp(lp_cond2 + log_w2) * fx);
            rhs_terms.push_back(std::exp(lp_free2) * fx);
          } else {
            PromptContext c2 = c_ctx;
            c2.tail.push_back(v);
            PromptContext f2 = f_ctx;
            f2.tail.push_back(v);
            rec(c2, f2, lp_cond2, lp_free2, log_w2);
          }
          seq.pop_back();
        }
      };
  rec(cond, free_ctx, 0.0, 0.0, 0.0);
  return {stable_sum(std::move(lhs_terms)), stable_sum(std::move(rhs_terms))};
}

}  // namespace icrl
