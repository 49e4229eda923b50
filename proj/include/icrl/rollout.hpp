#pragma once
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icrl/advantage.hpp"
#include "icrl/envs.hpp"
#include "icrl/errors.hpp"
#include "icrl/objective.hpp"
#include "icrl/policy.hpp"

namespace icrl {

// Per-turn response budget for critiques; emission stops at EOS or here.
constexpr int kCritiqueBudget = 16;

// Success means full task reward. Binary tasks hit 1 exactly; the dense
// purchase reward counts as success within a float-noise tolerance.
inline bool is_success(double reward) { return reward >= 1.0 - 1e-9; }

// One solver attempt. `tokens` is the interleaved action/observation stream
// that followed the initial observation; only action tokens are trained.
// Both behavior log-prob lists are recorded per trained token under the
// rollout snapshot: `logp_sampling` in the context that generated the token
// ((q) or (q,c)), `logp_free` in the critique-free context (q, y_<t). They
// coincide whenever no critique was used.
struct SolverSample {
  std::int64_t query_id = 0;
  int round = 1;
  std::optional<std::vector<TokenId>> critique_used;
  std::vector<TokenId> initial_obs;
  struct Tok {
    TokenId id;
    bool trained;
  };
  std::vector<Tok> tokens;
  std::vector<double> logp_sampling;
  std::vector<double> logp_free;
  double reward = 0.0;
  bool success = false;

  bool critique_guided() const { return critique_used && !critique_used->empty(); }

  std::vector<TokenId> trajectory() const {
    std::vector<TokenId> out = initial_obs;
    for (const Tok& t : tokens) out.push_back(t.id);
    return out;
  }
};

// One critique emission: the failed trajectory it conditioned on, the emitted
// tokens (including a terminating EOS when drawn), and the utility reward
// assigned once the revised attempt lands.
struct CriticSample {
  std::int64_t query_id = 0;
  int round = 1;  // index of the failed attempt this critique responds to
  std::vector<TokenId> trajectory;
  std::vector<TokenId> tokens;
  std::vector<double> logp;
  double reward = 0.0;
  int payload_len = 0;  // tokens before EOS
};

struct SessionRound {
  SolverSample solver;
  // Critique issued after this round's failure (feeds the next round).
  std::optional<std::vector<TokenId>> critique_payload;
  std::optional<CriticSample> critic;  // present only for the learned critic
};

struct Session {
  std::int64_t query_id = 0;
  std::vector<SessionRound> rounds;
  int k() const { return static_cast<int>(rounds.size()); }
};

struct QueryGroups {
  std::vector<SolverSample> solver;
  std::vector<CriticSample> critic;
};

// Utility reward for a critique: full credit if the revised attempt succeeds,
// otherwise the change in task reward (nonzero only under dense rewards).
inline double critic_reward(double r_prev, double r_next, bool success_next) {
  if (r_prev < 0.0 || r_prev > 1.0 || r_next < 0.0 || r_next > 1.0)
    throw InputError("critic_reward: task rewards must lie in [0,1]");
  return success_next ? 1.0 : r_next - r_prev;
}

// Teacher-forced log-probs of a sample's trained tokens under the
// critique-free context, walking the full interleaved stream.
inline std::vector<double> rescore_critique_free(const PolicyParams& params,
                                                 const Vocabulary& vocab, const Query& query,
                                                 const SolverSample& sample) {
  if (sample.query_id != query.id)
    throw IntegrityError("rescore: sample does not belong to this query");
  PromptContext ctx = solver_context(query.description, sample.initial_obs);
  std::vector<double> out;
  std::size_t trained = 0;
  for (const auto& tok : sample.tokens) {
    if (!vocab.valid(tok.id)) throw IntegrityError("rescore: token not in vocabulary");
    if (tok.trained) {
      out.push_back(log_prob(params, ctx, vocab, tok.id));
      ++trained;
    }
    ctx.tail.push_back(tok.id);
  }
  if (trained != sample.logp_sampling.size())
    throw IntegrityError("rescore: trained-token count mismatch");
  return out;
}

// ---------------------------------------------------------------------------
// Critic implementations. The learned critic shares the solver's parameters;
// scripted ones exist for the critic-swap evaluation protocol.

struct CritiqueResult {
  std::vector<TokenId> payload;          // tokens handed to the revision prompt
  std::optional<CriticSample> sample;    // trainable record (learned critic only)
};

class CritiqueProvider {
 public:
  virtual ~CritiqueProvider() = default;
  virtual CritiqueResult make(const PolicyParams& params, const Vocabulary& vocab,
                              const Query& query, const SolverSample& failed, double temperature,
                              Rng& rng) const = 0;
};

// Samples a critique from the shared policy under the critic role, reading
// the failed trajectory.
class LearnedCritic final : public CritiqueProvider {
 public:
  CritiqueResult make(const PolicyParams& params, const Vocabulary& vocab, const Query& query,
                      const SolverSample& failed, double temperature, Rng& rng) const override {
    CriticSample cs;
    cs.query_id = query.id;
    cs.round = failed.round;
    cs.trajectory = failed.trajectory();
    PromptContext ctx = critic_context(query.description, cs.trajectory);
    for (int i = 0; i < kCritiqueBudget; ++i) {
      const TokenId tok = sample_token(params, ctx, vocab, temperature, rng);
      cs.tokens.push_back(tok);
      cs.logp.push_back(log_prob(params, ctx, vocab, tok));
      ctx.tail.push_back(tok);
      if (tok == Vocabulary::kEos) break;
    }
    cs.payload_len = static_cast<int>(cs.tokens.size());
    if (!cs.tokens.empty() && cs.tokens.back() == Vocabulary::kEos) cs.payload_len -= 1;
    CritiqueResult out;
    out.payload.assign(cs.tokens.begin(), cs.tokens.begin() + cs.payload_len);
    out.sample = std::move(cs);
    return out;
  }
};

// Ground-truth hint spelled in the environment's own observation and action
// language, shaped like the context that immediately precedes the decisive
// action of a successful episode.
class OracleScriptedCritic final : public CritiqueProvider {
 public:
  CritiqueResult make(const PolicyParams&, const Vocabulary& vocab, const Query& query,
                      const SolverSample&, double, Rng&) const override {
    CritiqueResult out;
    switch (query.kind) {
      case EnvKind::keydoor: {
        const auto& t = std::get<KeyDoorTruth>(query.truth);
        if (t.key_room == 0) {
          // The key is where the episode starts; point back at the room.
          out.payload = {vocab.id("room_0")};
        } else {
          // "Room k-1 was empty": the searched-and-empty observation a sweep
          // sees right before entering the key room.
          out.payload = {vocab.id("no_key_" + std::to_string(t.key_room - 1))};
        }
        break;
      }
      case EnvKind::attrshop: {
        // "Search the instructed type; the listing's match is product t."
        const auto& t = std::get<ShopTruth>(query.truth);
        out.payload = {vocab.id("type_" + std::to_string(t.instruction.type)),
                       vocab.id("prod_" + std::to_string(t.target))};
        break;
      }
      case EnvKind::hopchain: {
        const auto& t = std::get<HopTruth>(query.truth);
        const int mid = t.next[static_cast<std::size_t>(t.start)];
        const int end = t.next[static_cast<std::size_t>(mid)];
        out.payload = {vocab.id("lookup_" + std::to_string(t.start)),
                       vocab.id("ent_" + std::to_string(mid)),
                       vocab.id("lookup_" + std::to_string(mid)),
                       vocab.id("ent_" + std::to_string(end))};
        break;
      }
    }
    return out;
  }
};

// Four uniformly random vocabulary tokens; same shape as the oracle hint.
class NoiseScriptedCritic final : public CritiqueProvider {
 public:
  CritiqueResult make(const PolicyParams&, const Vocabulary& vocab, const Query&,
                      const SolverSample&, double, Rng& rng) const override {
    CritiqueResult out;
    for (int i = 0; i < 4; ++i)
      out.payload.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab.size()))));
    return out;
  }
};

// Empty critique: the revision prompt collapses to a fresh attempt.
class NullCritic final : public CritiqueProvider {
 public:
  CritiqueResult make(const PolicyParams&, const Vocabulary&, const Query&, const SolverSample&,
                      double, Rng&) const override {
    return {};
  }
};

// ---------------------------------------------------------------------------

// One solver attempt against a fresh episode, optionally conditioned on a
// critique. Both behavior log-prob lists are filled before returning, under
// the same parameter snapshot that sampled the actions.
inline SolverSample sample_trajectory(const PolicyParams& params, const Vocabulary& vocab,
                                      const Query& query,
                                      std::optional<std::vector<TokenId>> critique, int round,
                                      double temperature, Rng& rng) {
  SolverSample sample;
  sample.query_id = query.id;
  sample.round = round;
  sample.critique_used = critique;

  auto [state, step0] = reset(vocab, query, rng);
  sample.initial_obs = step0.observation;
  PromptContext ctx = solver_context(query.description, sample.initial_obs, std::move(critique));

  while (!state.done) {
    const TokenId action = sample_token(params, ctx, vocab, temperature, rng);
    sample.logp_sampling.push_back(log_prob(params, ctx, vocab, action));
    sample.tokens.push_back({action, true});
    ctx.tail.push_back(action);
    auto [next, st] = step(vocab, query, state, std::span<const TokenId>(&action, 1));
    state = next;
    for (TokenId obs : st.observation) {
      sample.tokens.push_back({obs, false});
      ctx.tail.push_back(obs);
    }
    if (st.done) {
      sample.reward = st.reward;
      break;
    }
  }
  sample.success = is_success(sample.reward);
  sample.logp_free = rescore_critique_free(params, vocab, query, sample);
  return sample;
}

// One self-improvement session: attempt, critique on failure, revise, for at
// most K rounds. Every quantity the optimizer later needs is recorded here
// under the rollout snapshot, including the critique-free rescoring.
inline Session run_session(const PolicyParams& params_snapshot, const Vocabulary& vocab,
                           const Query& query, int max_rounds, double temperature, Rng& rng,
                           const CritiqueProvider& critic = LearnedCritic{}) {
  if (max_rounds < 1) throw ConfigError("run_session: K must be >= 1");
  Session session;
  session.query_id = query.id;

  SolverSample attempt =
      sample_trajectory(params_snapshot, vocab, query, std::nullopt, 1, temperature, rng);
  session.rounds.push_back({std::move(attempt), std::nullopt, std::nullopt});

  for (int i = 1; i < max_rounds; ++i) {
    SessionRound& prev = session.rounds.back();
    if (prev.solver.success) break;
    CritiqueResult cr =
        critic.make(params_snapshot, vocab, query, prev.solver, temperature, rng);
    SolverSample revised = sample_trajectory(params_snapshot, vocab, query, cr.payload, i + 1,
                                             temperature, rng);
    const double rc = critic_reward(prev.solver.reward, revised.reward, revised.success);
    prev.critique_payload = cr.payload;
    if (cr.sample) {
      cr.sample->reward = rc;
      prev.critic = std::move(cr.sample);
    }
    session.rounds.push_back({std::move(revised), std::nullopt, std::nullopt});
  }
  return session;
}

// Flattens G sessions for one query into role-wise groups, session order
// preserved. |solver| = sum of k_j, |critic| = sum of (k_j - 1) when every
// critique came from the learned critic.
inline QueryGroups collect_groups(std::span<const Session> sessions) {
  QueryGroups groups;
  if (sessions.empty()) return groups;
  const std::int64_t qid = sessions.front().query_id;
  for (const Session& s : sessions) {
    if (s.query_id != qid) throw IntegrityError("collect_groups: sessions mix queries");
    for (const SessionRound& r : s.rounds) {
      groups.solver.push_back(r.solver);
      if (r.critic) groups.critic.push_back(*r.critic);
    }
  }
  return groups;
}

// Expands role-wise groups plus their advantages into per-token optimizer
// terms. Solver tokens are evaluated under the critique-free context, critic
// tokens under their original prompt; observation tokens never appear.
// `force_unit_weights` hard-disables the calibration ratio (ablation).
inline std::vector<TokenTerm> build_token_terms(const Vocabulary& vocab, int context_order,
                                                const Query& query, const QueryGroups& groups,
                                                std::span<const double> solver_advantages,
                                                std::span<const double> critic_advantages,
                                                bool force_unit_weights = false) {
  if (solver_advantages.size() != groups.solver.size() ||
      critic_advantages.size() != groups.critic.size())
    throw IntegrityError("build_token_terms: advantage count mismatch");
  std::vector<TokenTerm> terms;
  for (std::size_t i = 0; i < groups.solver.size(); ++i) {
    const SolverSample& s = groups.solver[i];
    PromptContext ctx = solver_context(query.description, s.initial_obs);
    std::size_t t = 0;
    for (const auto& tok : s.tokens) {
      if (tok.trained) {
        TokenTerm term;
        term.role = Role::solver;
        term.critique_guided = s.critique_guided();
        term.advantage = solver_advantages[i];
        term.feats = featurize_sparse(ctx, vocab, context_order);
        term.token = tok.id;
        term.logp_behavior = s.logp_free[t];
        term.logp_sampling = force_unit_weights ? s.logp_free[t] : s.logp_sampling[t];
        terms.push_back(std::move(term));
        ++t;
      }
      ctx.tail.push_back(tok.id);
    }
  }
  for (std::size_t i = 0; i < groups.critic.size(); ++i) {
    const CriticSample& c = groups.critic[i];
    PromptContext ctx = critic_context(query.description, c.trajectory);
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      TokenTerm term;
      term.role = Role::critic;
      term.critique_guided = false;
      term.advantage = critic_advantages[i];
      term.feats = featurize_sparse(ctx, vocab, context_order);
      term.token = c.tokens[t];
      term.logp_behavior = c.logp[t];
      term.logp_sampling = c.logp[t];
      terms.push_back(std::move(term));
      ctx.tail.push_back(c.tokens[t]);
    }
  }
  return terms;
}

}  // namespace icrl
