#pragma once
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icrl/advantage.hpp"
#include "icrl/dataset.hpp"
#include "icrl/envs.hpp"
#include "icrl/errors.hpp"
#include "icrl/metrics.hpp"
#include "icrl/objective.hpp"
#include "icrl/oracle.hpp"
#include "icrl/policy.hpp"
#include "icrl/rollout.hpp"

namespace icrl {

enum class Variant { icrl, grpo, no_role_adv, no_reweight };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::icrl: return "icrl";
    case Variant::grpo: return "grpo";
    case Variant::no_role_adv: return "no_role_adv";
    case Variant::no_reweight: return "no_reweight";
  }
  throw ConfigError("unknown variant");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "icrl") return Variant::icrl;
  if (s == "grpo") return Variant::grpo;
  if (s == "no_role_adv") return Variant::no_role_adv;
  if (s == "no_reweight") return Variant::no_reweight;
  throw ConfigError("unknown variant: " + s);
}

struct TrainConfig {
  EnvKind env = EnvKind::keydoor;
  std::uint64_t dataset_seed = 1;
  int train_queries = 32;
  int eval_queries = 64;
  int group_size = 8;       // sessions per query per step
  int max_rounds = 2;       // K
  double temperature = 1.0;
  double eval_temperature = 0.3;
  AdvantageConfig advantage;
  OptimizerConfig opt;
  int steps = 600;
  int batch_queries = 8;
  int eval_every = 25;
  int context_order = 4;
  double init_echo_bias = 2.0;  // strength of the context-echo prior at init
  std::uint64_t seed = 0;
  Variant variant = Variant::icrl;
  std::string rollout_dump;  // optional JSONL path, one session per line
  std::string crash_dir;     // optional: checkpoint here before halting on a numerical fault

  void validate() const {
    if (group_size < 2) throw ConfigError("group size must be >= 2");
    if (max_rounds < 1) throw ConfigError("max rounds must be >= 1");
    if (variant == Variant::grpo && max_rounds != 1)
      throw ConfigError("the grpo baseline runs single attempts; set max rounds to 1");
    if (steps < 1 || batch_queries < 1 || eval_every < 1)
      throw ConfigError("steps, batch size, and eval cadence must be positive");
    if (train_queries < 1 || eval_queries < 1) throw ConfigError("dataset sizes must be positive");
    if (!(temperature > 0.0) || !(eval_temperature > 0.0))
      throw ConfigError("temperatures must be positive");
    if (context_order < 1) throw ConfigError("context order must be >= 1");
    advantage.validate();
    opt.validate();
  }
};

struct TrainResult {
  PolicyParams params;
  AdamState opt_state;
  std::vector<StepMetrics> metrics;
  std::vector<EvalPoint> evals;  // round-1 success on the eval split
};

// Fraction of eval queries solved by round <= k, for k = 1..rounds, running
// the session workflow at the evaluation temperature. Cumulative, so the
// curve is non-decreasing by construction.
inline std::vector<double> evaluate_refinement(const PolicyParams& params, const Vocabulary& vocab,
                                               const std::vector<Query>& eval_set, int rounds,
                                               double temperature, std::uint64_t seed,
                                               const CritiqueProvider& critic = LearnedCritic{}) {
  if (rounds < 1) throw ConfigError("evaluate_refinement: rounds must be >= 1");
  if (eval_set.empty()) throw ConfigError("evaluate_refinement: empty eval set");
  std::vector<int> solved_at(static_cast<std::size_t>(rounds) + 1, 0);
  for (const Query& q : eval_set) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(q.id), 0xE7A1ULL}));
    Session s = run_session(params, vocab, q, rounds, temperature, rng, critic);
    for (int k = 0; k < s.k(); ++k) {
      if (s.rounds[static_cast<std::size_t>(k)].solver.success) {
        solved_at[static_cast<std::size_t>(k) + 1] += 1;
        break;
      }
    }
  }
  std::vector<double> curve(static_cast<std::size_t>(rounds), 0.0);
  int cum = 0;
  for (int k = 1; k <= rounds; ++k) {
    cum += solved_at[static_cast<std::size_t>(k)];
    curve[static_cast<std::size_t>(k) - 1] = static_cast<double>(cum) / eval_set.size();
  }
  return curve;
}

namespace detail {

inline nlohmann::json solver_sample_json(const SolverSample& s, const Vocabulary& vocab) {
  nlohmann::json j;
  j["round"] = s.round;
  if (s.critique_used) {
    j["critique_used"] = nlohmann::json::array();
    for (TokenId t : *s.critique_used) j["critique_used"].push_back(vocab.token(t));
  } else {
    j["critique_used"] = nullptr;
  }
  j["initial_obs"] = nlohmann::json::array();
  for (TokenId t : s.initial_obs) j["initial_obs"].push_back(vocab.token(t));
  j["tokens"] = nlohmann::json::array();
  for (const auto& tok : s.tokens)
    j["tokens"].push_back({{"t", vocab.token(tok.id)}, {"trained", tok.trained}});
  j["logp_sampling"] = s.logp_sampling;
  j["logp_free"] = s.logp_free;
  j["reward"] = s.reward;
  j["success"] = s.success;
  return j;
}

inline nlohmann::json session_json(const Session& s, const Vocabulary& vocab, std::int64_t step,
                                   int session_index) {
  nlohmann::json j;
  j["step"] = step;
  j["query"] = s.query_id;
  j["session"] = session_index;
  j["rounds"] = nlohmann::json::array();
  for (const SessionRound& r : s.rounds) {
    nlohmann::json rj;
    rj["solver"] = solver_sample_json(r.solver, vocab);
    if (r.critic) {
      nlohmann::json cj;
      cj["round"] = r.critic->round;
      cj["tokens"] = nlohmann::json::array();
      for (TokenId t : r.critic->tokens) cj["tokens"].push_back(vocab.token(t));
      cj["logp"] = r.critic->logp;
      cj["reward"] = r.critic->reward;
      rj["critic"] = cj;
    } else {
      rj["critic"] = nullptr;
    }
    j["rounds"].push_back(rj);
  }
  return j;
}

}  // namespace detail

// One full training run per Algorithm-1's outer loop: snapshot the rollout
// policy, collect G sessions per query over a batch of queries, normalize
// advantages role-wise (or per the ablation variant), build token terms, and
// ascend the clipped surrogate. Everything downstream of (config, seed) is
// deterministic.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Query>& train_set,
                         const std::vector<Query>& eval_set,
                         const std::function<void(int, const PolicyParams&)>& on_step = {}) {
  cfg.validate();
  check_disjoint(train_set, eval_set);
  if (train_set.empty()) throw ConfigError("train: empty train set");
  const Vocabulary vocab = make_vocab(cfg.env);
  for (const Query& q : train_set)
    if (q.kind != cfg.env) throw ConfigError("train: dataset kind does not match config");

  TrainResult result;
  result.params = PolicyParams::echo_init(vocab, cfg.context_order, cfg.init_echo_bias);
  result.opt_state = AdamState::zeros(result.params);
  LearnedCritic critic;

  std::ofstream dump;
  if (!cfg.rollout_dump.empty()) {
    dump.open(cfg.rollout_dump);
    if (!dump) throw ConfigError("cannot open rollout dump: " + cfg.rollout_dump);
  }

  const int N = static_cast<int>(train_set.size());
  for (int step = 0; step < cfg.steps; ++step) {
    const PolicyParams snapshot = result.params;

    std::vector<TokenTerm> terms;
    double solver_reward_sum = 0.0;
    int solver_count = 0;
    double critic_reward_sum = 0.0;
    int critic_count = 0;

    for (int j = 0; j < cfg.batch_queries; ++j) {
      const Query& q = train_set[static_cast<std::size_t>((step * cfg.batch_queries + j) % N)];
      std::vector<Session> sessions;
      sessions.reserve(static_cast<std::size_t>(cfg.group_size));
      for (int g = 0; g < cfg.group_size; ++g) {
        Rng rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(g),
                          0x5E55ULL}));
        sessions.push_back(
            run_session(snapshot, vocab, q, cfg.max_rounds, cfg.temperature, rng, critic));
        if (dump.is_open())
          dump << detail::session_json(sessions.back(), vocab, step, g).dump() << "\n";
      }
      QueryGroups groups = collect_groups(sessions);

      std::vector<double> solver_rewards, critic_rewards;
      for (const auto& s : groups.solver) solver_rewards.push_back(s.reward);
      for (const auto& c : groups.critic) critic_rewards.push_back(c.reward);
      solver_count += static_cast<int>(solver_rewards.size());
      for (double r : solver_rewards) solver_reward_sum += r;
      critic_count += static_cast<int>(critic_rewards.size());
      for (double r : critic_rewards) critic_reward_sum += r;

      std::vector<double> adv_solver, adv_critic;
      if (cfg.variant == Variant::no_role_adv) {
        std::tie(adv_solver, adv_critic) =
            pooled_advantages(solver_rewards, critic_rewards, cfg.advantage.delta);
      } else {
        adv_solver = role_advantages(solver_rewards, cfg.advantage.delta);
        if (!critic_rewards.empty())
          adv_critic = role_advantages(critic_rewards, cfg.advantage.delta);
      }
      auto batch_terms =
          build_token_terms(vocab, cfg.context_order, q, groups, adv_solver, adv_critic,
                            cfg.variant == Variant::no_reweight);
      terms.insert(terms.end(), batch_terms.begin(), batch_terms.end());
    }

    StepMetrics m;
    m.step = step;
    m.solver_mean_reward = solver_reward_sum / solver_count;
    if (critic_count > 0) m.critic_mean_reward = critic_reward_sum / critic_count;
    m.solver_samples = solver_count;
    m.critic_samples = critic_count;
    {
      double wsum = 0.0;
      int wn = 0;
      for (const TokenTerm& t : terms) {
        if (t.critique_guided) {
          wsum += std::min(reweight(t.logp_behavior, t.logp_sampling), cfg.opt.w_max);
          ++wn;
        }
      }
      if (wn > 0) m.mean_w = wsum / wn;
    }

    std::vector<double> grad;
    try {
      for (int epoch = 0; epoch < cfg.opt.epochs; ++epoch) {
        grad = cfg.variant == Variant::grpo ? grad_grpo_surrogate(result.params, terms, cfg.opt)
                                            : grad_surrogate(result.params, terms, cfg.opt);
        optimizer_step(result.params, grad, cfg.opt, result.opt_state);
      }
    } catch (const NumericalError& e) {
      if (!cfg.crash_dir.empty()) {
        save_policy(cfg.crash_dir + "/crash.policy", snapshot);
        save_opt_state(cfg.crash_dir + "/crash.optstate", result.opt_state);
      }
      throw NumericalError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
    }

    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    m.grad_norm = std::sqrt(norm2);
    if (!std::isfinite(m.grad_norm)) throw NumericalError("non-finite gradient norm");
    result.metrics.push_back(m);

    if (on_step) on_step(step, result.params);

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      auto curve = evaluate_refinement(result.params, vocab, eval_set, 1, cfg.eval_temperature,
                                       mix_seed({cfg.seed, 0xEEULL, static_cast<std::uint64_t>(step)}));
      result.evals.push_back({step + 1, curve[0]});
    }
  }
  return result;
}

// Generates both splits from the config's dataset seed (ids disjoint by
// construction) and trains.
inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const Vocabulary vocab = make_vocab(cfg.env);
  auto train_set = gen_queries(cfg.env, cfg.train_queries, cfg.dataset_seed, 0, vocab);
  auto eval_set =
      gen_queries(cfg.env, cfg.eval_queries, cfg.dataset_seed, cfg.train_queries, vocab);
  return train(cfg, train_set, eval_set);
}

// ---------------------------------------------------------------------------
// Critic-swap protocol: fix the solver, replace only the critic, run
// two-round sessions, and report the round-2 success rate plus how verbose
// the critic was.

struct SwapResult {
  double round2_success = 0.0;
  std::optional<double> mean_critique_len;  // absent if no round ever failed
};

inline SwapResult critic_swap(const PolicyParams& solver_params, const Vocabulary& vocab,
                              const CritiqueProvider& critic, const std::vector<Query>& eval_set,
                              double temperature, std::uint64_t seed) {
  if (eval_set.empty()) throw ConfigError("critic_swap: empty eval set");
  int successes = 0;
  double len_sum = 0.0;
  int len_n = 0;
  for (const Query& q : eval_set) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(q.id), 0x5AFULL}));
    Session s = run_session(solver_params, vocab, q, 2, temperature, rng, critic);
    bool ok = false;
    for (const SessionRound& r : s.rounds) ok = ok || r.solver.success;
    successes += ok ? 1 : 0;
    for (const SessionRound& r : s.rounds) {
      if (r.critique_payload) {
        len_sum += static_cast<double>(r.critique_payload->size());
        ++len_n;
      }
    }
  }
  SwapResult out;
  out.round2_success = static_cast<double>(successes) / eval_set.size();
  if (len_n > 0) out.mean_critique_len = len_sum / len_n;
  return out;
}

// Two independent single attempts per query (distinct streams, no critique);
// the sampling-noise baseline the null critic is compared against.
inline double fresh_attempt_baseline(const PolicyParams& params, const Vocabulary& vocab,
                                     const std::vector<Query>& eval_set, double temperature,
                                     std::uint64_t seed) {
  int successes = 0;
  for (const Query& q : eval_set) {
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 2 && !ok; ++attempt) {
      Rng rng(mix_seed({seed, static_cast<std::uint64_t>(q.id), attempt, 0xF4E54ULL}));
      SolverSample s =
          sample_trajectory(params, vocab, q, std::nullopt, 1, temperature, rng);
      ok = s.success;
    }
    successes += ok ? 1 : 0;
  }
  return static_cast<double>(successes) / eval_set.size();
}

// ---------------------------------------------------------------------------
// Ablation sweep: identical seeds across variants, final round-1 success per
// (variant, seed).

struct AblateRow {
  Variant variant;
  std::uint64_t seed;
  double final_round1_success;
};

inline std::vector<AblateRow> ablate(const TrainConfig& base,
                                     const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablate: need at least one seed");
  std::vector<AblateRow> rows;
  for (Variant v : {Variant::icrl, Variant::no_role_adv, Variant::no_reweight}) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      TrainResult r = train(cfg);
      rows.push_back({v, seed, r.evals.back().round1_success});
    }
  }
  return rows;
}

inline void write_ablate_csv(const std::string& path, const std::vector<AblateRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open ablation csv for writing: " + path);
  out << "variant,seed,final_round1_success\n";
  char buf[40];
  for (const AblateRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.final_round1_success);
    out << variant_name(r.variant) << "," << r.seed << "," << buf << "\n";
  }
}

}  // namespace icrl
