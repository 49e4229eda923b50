#pragma once
#include <optional>
#include <vector>

#include "icrl/errors.hpp"
#include "icrl/vocab.hpp"

namespace icrl {

enum class Role { solver, critic };

inline const char* role_name(Role r) { return r == Role::solver ? "solver" : "critic"; }

// Conditioning state for one policy evaluation. The flattened stream is
//
//   solver:  query SEP initial_obs [critique] tail
//   critic:  query SEP failed_trajectory tail
//
// where tail is the generated-so-far continuation (interleaved actions and
// observations for the solver, emitted critique tokens for the critic).
// A critique is spliced in after the episode's initial observation, the way
// a revision prompt places feedback after the task statement, so its final
// tokens sit in the most recent context slots when the first revised action
// is sampled. Removing the critique therefore yields exactly the stream an
// unassisted attempt would have produced.
struct PromptContext {
  Role role = Role::solver;
  std::vector<TokenId> query;
  std::optional<std::vector<TokenId>> critique;           // solver revisions only
  std::optional<std::vector<TokenId>> failed_trajectory;  // critic only
  std::vector<TokenId> initial_obs;                       // first observation segment
  std::vector<TokenId> tail;

  void validate(const Vocabulary& vocab) const {
    if (critique && role != Role::solver)
      throw IntegrityError("critique attached to a non-solver context");
    if (failed_trajectory && role != Role::critic)
      throw IntegrityError("failed trajectory attached to a non-critic context");
    auto check = [&](const std::vector<TokenId>& ts) {
      for (TokenId t : ts)
        if (!vocab.valid(t)) throw InputError("context token not in vocabulary");
    };
    check(query);
    check(initial_obs);
    check(tail);
    if (critique) check(*critique);
    if (failed_trajectory) check(*failed_trajectory);
  }

  std::vector<TokenId> flatten() const {
    std::vector<TokenId> out;
    out.reserve(query.size() + initial_obs.size() + tail.size() + 8);
    out.insert(out.end(), query.begin(), query.end());
    if (!query.empty()) out.push_back(Vocabulary::kSep);
    if (failed_trajectory)
      out.insert(out.end(), failed_trajectory->begin(), failed_trajectory->end());
    out.insert(out.end(), initial_obs.begin(), initial_obs.end());
    if (critique) out.insert(out.end(), critique->begin(), critique->end());
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
  }

  // Same conditioning state with the critique dropped; used for rescoring
  // revised trajectories under the unassisted prompt.
  PromptContext without_critique() const {
    PromptContext c = *this;
    c.critique.reset();
    return c;
  }
};

inline PromptContext solver_context(std::vector<TokenId> query,
                                    std::vector<TokenId> initial_obs,
                                    std::optional<std::vector<TokenId>> critique = std::nullopt) {
  PromptContext ctx;
  ctx.role = Role::solver;
  ctx.query = std::move(query);
  ctx.initial_obs = std::move(initial_obs);
  ctx.critique = std::move(critique);
  return ctx;
}

inline PromptContext critic_context(std::vector<TokenId> query,
                                    std::vector<TokenId> failed_trajectory) {
  PromptContext ctx;
  ctx.role = Role::critic;
  ctx.query = std::move(query);
  ctx.failed_trajectory = std::move(failed_trajectory);
  return ctx;
}

}  // namespace icrl
