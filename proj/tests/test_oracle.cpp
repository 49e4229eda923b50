#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "icrl/advantage.hpp"
#include "icrl/objective.hpp"
#include "icrl/oracle.hpp"
#include "icrl/rollout.hpp"
#include "testutil.hpp"

using namespace icrl;
namespace tu = icrl::testutil;

namespace {

Query keydoor2_query(int key_room, std::int64_t id = 0) {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q;
  q.id = id;
  q.kind = EnvKind::keydoor;
  q.description = {vocab.id("keydoor")};
  q.truth = KeyDoorTruth{2, key_room};
  return q;
}

// Uniform-policy success probability for key room 0, start room 0, H = 3,
// derived by counting sequences over a V-token alphabet:
//   [take, open]                prob V^-2
//   [take, X, open], X != open  (V-1) V^-3   (the key is already held)
//   [X, take, open]             X must stay in room 0 and not be take/open
//                               -> it may be anything except goto_1 and take,
//                               (V-2) V^-3  (open merely wastes the turn)
double keydoor2_uniform_value(int V) {
  const double v = static_cast<double>(V);
  return 1.0 / (v * v) + (v - 1.0) / (v * v * v) + (v - 2.0) / (v * v * v);
}

}  // namespace

TEST_CASE("a deterministic policy concentrates the ensemble on one trajectory", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  PolicyParams p = PolicyParams::zeros(vocab, 4);
  p.at(vocab.id("take"), (p.m - 1) * p.V + vocab.id("room_0")) = 60.0;
  p.at(vocab.id("open"), (p.m - 1) * p.V + vocab.id("have_key")) = 60.0;
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 2);
  double best = -1.0;
  const EnumeratedTrajectory* top = nullptr;
  for (const auto& t : ensemble.trajectories) {
    const double prob = std::exp(t.log_prob);
    if (prob > best) {
      best = prob;
      top = &t;
    }
  }
  REQUIRE(best > 0.9999);
  REQUIRE(top->reward == 1.0);
  REQUIRE(probability_sum(ensemble) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("zero weights spread fixed-length sequences uniformly", "[oracle]") {
  Vocabulary vocab = tu::tiny_vocab(2);
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext base;
  base.query = {1};
  auto ensemble = enumerate_sequences(p, vocab, base, 3);
  const double expect = std::pow(static_cast<double>(vocab.size()), -3.0);
  REQUIRE(ensemble.trajectories.size() ==
          static_cast<std::size_t>(std::pow(vocab.size(), 3)));
  for (const auto& t : ensemble.trajectories)
    REQUIRE(std::exp(t.log_prob) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ensemble probabilities sum to one on random parameters", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    PolicyParams p = tu::random_params(vocab, 3, rng, 0.7);
    Query q = keydoor2_query(static_cast<int>(rng.below(2)), trial);
    auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 3);
    REQUIRE(probability_sum(ensemble) == Catch::Approx(1.0).margin(1e-10));
  }
}

TEST_CASE("the enumeration guard refuses oversized instances", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(3);  // V = 20: 20^6 >> 1e6
  Query q;
  q.kind = EnvKind::keydoor;
  q.description = {vocab.id("keydoor")};
  q.truth = KeyDoorTruth{3, 0};
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  REQUIRE_THROWS_AS(enumerate_env(p, vocab, q, std::nullopt, 6), EnumerationBoundError);
}

TEST_CASE("exact objective: impossible budget gives zero", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(1);
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  // Key in room 1, one action: no sequence can take and open.
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 1);
  REQUIRE(exact_objective(ensemble) == 0.0);
}

TEST_CASE("uniform policy value matches the hand count", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  PolicyParams p = PolicyParams::zeros(vocab, 3);
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 3);
  REQUIRE(exact_objective(ensemble) ==
          Catch::Approx(keydoor2_uniform_value(vocab.size())).margin(1e-12));
}

TEST_CASE("monte-carlo estimate agrees within three sigma", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  Rng prng(7);
  PolicyParams p = tu::random_params(vocab, 3, prng, 0.5);
  const int H = 3;
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, H);
  const double exact = exact_objective(ensemble);

  const int n = 100000;
  Rng rng(99);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Rng env_rng(1);
    auto [state, step0] = reset(vocab, q, env_rng);
    PromptContext ctx = solver_context(q.description, step0.observation);
    double reward = 0.0;
    for (int t = 0; t < H && !state.done; ++t) {
      const TokenId a = sample_token(p, ctx, vocab, 1.0, rng);
      ctx.tail.push_back(a);
      auto [s2, st] = step(vocab, q, state, std::span<const TokenId>(&a, 1));
      state = s2;
      for (TokenId obs : st.observation) ctx.tail.push_back(obs);
      if (st.done) reward = st.reward;
    }
    const double d = reward - mean;
    mean += d / (i + 1);
    m2 += d * (reward - mean);
  }
  const double se = std::sqrt(m2 / (n - 1.0) / n);
  REQUIRE(std::abs(mean - exact) < 3.0 * se + 1e-12);
}

TEST_CASE("constant rewards zero out the exact gradient", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  Rng rng(11);
  PolicyParams p = tu::random_params(vocab, 2, rng, 0.5);
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 2);
  for (auto& t : ensemble.trajectories) t.reward = 0.6;
  for (double g : exact_gradient(ensemble, p, vocab)) REQUIRE(std::abs(g) < 1e-12);
}

TEST_CASE("exact gradient matches finite differences of the exact objective", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  Rng rng(13);
  PolicyParams p = tu::random_params(vocab, 2, rng, 0.4);
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, 2);
  auto grad = exact_gradient(ensemble, p, vocab);
  const double err = tu::max_fd_rel_error(
      p, grad,
      [&](const PolicyParams& pp) {
        return exact_objective(enumerate_env(pp, vocab, q, std::nullopt, 2));
      },
      1e-5, 1e-9);
  REQUIRE(err < 1e-7);
}

TEST_CASE("large-group advantage-weighted estimate aligns with the exact gradient", "[oracle]") {
  Vocabulary vocab = make_keydoor_vocab(2);
  Query q = keydoor2_query(0);
  Rng prng(17);
  PolicyParams p = tu::random_params(vocab, 2, prng, 0.3);
  const int H = 3;
  auto ensemble = enumerate_env(p, vocab, q, std::nullopt, H);
  auto exact = exact_gradient(ensemble, p, vocab);

  // First-epoch group-relative estimate with delta = 0 over G sampled
  // episodes, capped at the same action budget.
  const int G = 4096;
  Rng rng(1234);
  struct Episode {
    std::vector<std::pair<Features, TokenId>> steps;
    double reward = 0.0;
  };
  std::vector<Episode> eps;
  std::vector<double> rewards;
  for (int g = 0; g < G; ++g) {
    Episode ep;
    Rng env_rng(1);
    auto [state, step0] = reset(vocab, q, env_rng);
    PromptContext ctx = solver_context(q.description, step0.observation);
    for (int t = 0; t < H && !state.done; ++t) {
      const TokenId a = sample_token(p, ctx, vocab, 1.0, rng);
      ep.steps.push_back({featurize_sparse(ctx, vocab, p.m), a});
      ctx.tail.push_back(a);
      auto [s2, st] = step(vocab, q, state, std::span<const TokenId>(&a, 1));
      state = s2;
      for (TokenId obs : st.observation) ctx.tail.push_back(obs);
      if (st.done) ep.reward = st.reward;
    }
    rewards.push_back(ep.reward);
    eps.push_back(std::move(ep));
  }
  auto advantages = role_advantages(rewards, 0.0);

  std::vector<TokenTerm> batch;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    for (auto& [feats, tok] : eps[i].steps) {
      TokenTerm term;
      term.advantage = advantages[i];
      term.feats = feats;
      term.token = tok;
      std::vector<double> lp = icrl::detail::log_probs_from(p, feats, 1.0);
      term.logp_behavior = lp[static_cast<std::size_t>(tok)];
      term.logp_sampling = term.logp_behavior;
      batch.push_back(std::move(term));
    }
  }
  OptimizerConfig cfg;
  auto estimate = grad_surrogate(p, batch, cfg);

  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    dot += exact[i] * estimate[i];
    na += exact[i] * exact[i];
    nb += estimate[i] * estimate[i];
  }
  const double cosine = dot / std::sqrt(na * nb);
  REQUIRE(cosine > 0.9);
}

TEST_CASE("uncapped calibration identity holds to 1e-12", "[oracle]") {
  Rng rng(19);
  for (int trial = 0; trial < 5; ++trial) {
    Vocabulary vocab = tu::tiny_vocab(1 + static_cast<int>(rng.below(2)));  // V = 5..6
    PolicyParams p = tu::random_params(vocab, 2, rng, 1.0);
    std::vector<TokenId> query = {static_cast<TokenId>(rng.below(vocab.size()))};
    std::vector<TokenId> critique = {static_cast<TokenId>(rng.below(vocab.size())),
                                     static_cast<TokenId>(rng.below(vocab.size()))};
    auto f = [&](std::span<const TokenId> seq) {
      double acc = 0.0;
      for (TokenId t : seq) acc += static_cast<double>(t) + 1.0;
      return acc / (3.0 * vocab.size());
    };
    auto [lhs, rhs] = check_calibration(p, vocab, query, critique, f, 3);
    REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));
  }
}

TEST_CASE("empty critiques make the identity trivial", "[oracle]") {
  Vocabulary vocab = tu::tiny_vocab(1);
  Rng rng(23);
  PolicyParams p = tu::random_params(vocab, 2, rng, 0.8);
  auto f = [](std::span<const TokenId> seq) { return seq[0] == 2 ? 1.0 : 0.0; };
  auto [lhs, rhs] = check_calibration(p, vocab, {4}, {}, f, 2);
  REQUIRE(lhs == Catch::Approx(rhs).margin(1e-14));
}

TEST_CASE("capping the weights inside the product introduces a bias", "[oracle]") {
  Vocabulary vocab = tu::tiny_vocab(1);
  Rng rng(29);
  PolicyParams p = tu::random_params(vocab, 2, rng, 2.0);
  std::vector<TokenId> critique = {3, 4};
  auto f = [](std::span<const TokenId>) { return 1.0; };
  auto [lhs_unc, rhs] = check_calibration(p, vocab, {2}, critique, f, 3);
  REQUIRE(lhs_unc == Catch::Approx(rhs).margin(1e-12));
  auto [lhs_cap, rhs2] = check_calibration(p, vocab, {2}, critique, f, 3, 2.0);
  REQUIRE(rhs2 == rhs);
  REQUIRE(std::abs(lhs_cap - rhs) > 1e-6);
}
