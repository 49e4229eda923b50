#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "icrl/policy.hpp"
#include "testutil.hpp"

using namespace icrl;
namespace tu = icrl::testutil;

TEST_CASE("featurize pads empty context and sets the role slot", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  PromptContext ctx;  // empty query, empty history
  ctx.role = Role::solver;
  auto phi = featurize(ctx, vocab, 2);
  REQUIRE(phi.size() == static_cast<std::size_t>(2 * vocab.size() + 2));
  for (int i = 0; i < 2 * vocab.size(); ++i) REQUIRE(phi[i] == 0.0);
  REQUIRE(phi[2 * vocab.size()] == 1.0);
  REQUIRE(phi[2 * vocab.size() + 1] == 0.0);
}

TEST_CASE("featurize is deterministic", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(6);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    PromptContext ctx = tu::random_solver_ctx(vocab, rng);
    REQUIRE(featurize(ctx, vocab, 4) == featurize(ctx, vocab, 4));
  }
}

TEST_CASE("role flip touches only the two role dims", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  PromptContext a;
  a.role = Role::solver;
  a.tail = {4, 5, 6};
  PromptContext b = a;
  b.role = Role::critic;
  auto pa = featurize(a, vocab, 3);
  auto pb = featurize(b, vocab, 3);
  const int base = 3 * vocab.size();
  for (int i = 0; i < base; ++i) REQUIRE(pa[i] == pb[i]);
  REQUIRE(pa[base] == 1.0);
  REQUIRE(pa[base + 1] == 0.0);
  REQUIRE(pb[base] == 0.0);
  REQUIRE(pb[base + 1] == 1.0);
}

TEST_CASE("featurize rejects unknown tokens", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  PromptContext ctx;
  ctx.tail = {static_cast<TokenId>(vocab.size())};
  REQUIRE_THROWS_AS(featurize(ctx, vocab, 2), InputError);
}

TEST_CASE("zero weights give the uniform distribution", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  PolicyParams p = PolicyParams::zeros(vocab, 3);
  PromptContext ctx;
  ctx.tail = {4, 5};
  auto dist = token_distribution(p, ctx, vocab, 1.0);
  for (double q : dist.probs) REQUIRE(q == Catch::Approx(1.0 / vocab.size()).margin(1e-15));
}

TEST_CASE("closed-form softmax: logits (ln 2, 0, ...) give 2/(V+1)", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  const int V = vocab.size();
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext ctx;  // empty context: only the solver role dim is active
  p.at(0, 2 * V) = std::log(2.0);
  auto dist = token_distribution(p, ctx, vocab, 1.0);
  REQUIRE(dist.probs[0] == Catch::Approx(2.0 / (V + 1)).epsilon(1e-12));
  for (int v = 1; v < V; ++v)
    REQUIRE(dist.probs[static_cast<std::size_t>(v)] == Catch::Approx(1.0 / (V + 1)).epsilon(1e-12));
}

TEST_CASE("high temperature flattens the distribution", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  Rng rng(11);
  PolicyParams p = tu::random_params(vocab, 3, rng, 1.0);
  for (double& w : p.W) w = std::clamp(w, -1.0, 1.0);
  PromptContext ctx;
  ctx.tail = {4, 6};
  auto dist = token_distribution(p, ctx, vocab, 1e4);
  const auto [mn, mx] = std::minmax_element(dist.probs.begin(), dist.probs.end());
  REQUIRE(*mx - *mn < 1e-3);
}

TEST_CASE("distribution normalizes on random contexts", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(7);
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    PolicyParams p = tu::random_params(vocab, 4, rng, 2.0);
    PromptContext ctx = tu::random_solver_ctx(vocab, rng);
    auto dist = token_distribution(p, ctx, vocab, 0.5 + rng.uniform());
    double sum = 0.0;
    for (double q : dist.probs) {
      REQUIRE(q >= 0.0);
      sum += q;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("log_prob: zero weights give -ln V and exp sums to one", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(6);
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext ctx;
  REQUIRE(log_prob(p, ctx, vocab, 0) == Catch::Approx(-std::log(vocab.size())).epsilon(1e-12));

  Rng rng(17);
  for (int i = 0; i < 20; ++i) {
    PolicyParams q = tu::random_params(vocab, 3, rng, 1.5);
    PromptContext c = tu::random_solver_ctx(vocab, rng);
    double sum = 0.0;
    for (int v = 0; v < vocab.size(); ++v) sum += std::exp(log_prob(q, c, vocab, v));
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("log_prob matches recomputation from token_distribution", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  Rng rng(19);
  for (int i = 0; i < 30; ++i) {
    PolicyParams p = tu::random_params(vocab, 3, rng);
    PromptContext ctx = tu::random_solver_ctx(vocab, rng);
    auto dist = token_distribution(p, ctx, vocab, 1.0);
    for (int v = 0; v < vocab.size(); ++v) {
      REQUIRE(log_prob(p, ctx, vocab, v) ==
              Catch::Approx(std::log(dist.probs[static_cast<std::size_t>(v)])).margin(1e-12));
    }
  }
}

TEST_CASE("grad_log_prob uniform case is (onehot - 1/V) x phi", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  const int V = vocab.size();
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext ctx;
  ctx.tail = {5};
  const TokenId tok = 6;
  auto phi = featurize(ctx, vocab, 2);
  auto grad = grad_log_prob(p, ctx, vocab, tok);
  for (int v = 0; v < V; ++v) {
    const double coef = (v == tok ? 1.0 : 0.0) - 1.0 / V;
    for (int f = 0; f < p.F; ++f)
      REQUIRE(grad[static_cast<std::size_t>(v) * p.F + f] ==
              Catch::Approx(coef * phi[static_cast<std::size_t>(f)]).margin(1e-14));
  }
}

TEST_CASE("score function has zero mean under the policy", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  Rng rng(23);
  PolicyParams p = tu::random_params(vocab, 3, rng);
  PromptContext ctx = tu::random_solver_ctx(vocab, rng);
  auto dist = token_distribution(p, ctx, vocab, 1.0);
  std::vector<double> mean(p.W.size(), 0.0);
  for (int v = 0; v < vocab.size(); ++v) {
    auto g = grad_log_prob(p, ctx, vocab, v);
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += dist.probs[static_cast<std::size_t>(v)] * g[i];
  }
  for (double x : mean) REQUIRE(std::abs(x) < 1e-12);
}

TEST_CASE("grad_log_prob matches central finite differences", "[policy]") {
  Rng rng(29);
  for (int i = 0; i < 100; ++i) {
    Vocabulary vocab = tu::tiny_vocab(2 + static_cast<int>(rng.below(3)));
    const int m = 1 + static_cast<int>(rng.below(3));
    PolicyParams p = tu::random_params(vocab, m, rng);
    PromptContext ctx = tu::random_solver_ctx(vocab, rng);
    const TokenId tok = static_cast<TokenId>(rng.below(vocab.size()));
    auto grad = grad_log_prob(p, ctx, vocab, tok);
    const double err = tu::max_fd_rel_error(
        p, grad, [&](const PolicyParams& q) { return log_prob(q, ctx, vocab, tok); });
    REQUIRE(err < 1e-5);
  }
}

TEST_CASE("sampling: a near-degenerate distribution dominates draws", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext ctx;
  ctx.tail = {4};
  // Push 50 units of logit toward token 5 through every active feature.
  auto feats = featurize_sparse(ctx, vocab, 2);
  for (int i : feats.active) p.at(5, i) = 50.0;
  Rng rng(31);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) hits += sample_token(p, ctx, vocab, 1.0, rng) == 5;
  REQUIRE(hits > 990);
}

TEST_CASE("sampling is reproducible for a fixed seed", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  Rng r1(41), r2(41);
  PolicyParams p = tu::random_params(vocab, 2, r1);
  PolicyParams q = p;
  PromptContext ctx;
  ctx.tail = {4, 7};
  Rng s1(99), s2(99);
  for (int i = 0; i < 50; ++i)
    REQUIRE(sample_token(p, ctx, vocab, 1.0, s1) == sample_token(q, ctx, vocab, 1.0, s2));
}

TEST_CASE("sampling frequencies match the uniform multinomial within 4 sigma", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  const int V = vocab.size();
  PolicyParams p = PolicyParams::zeros(vocab, 2);
  PromptContext ctx;
  Rng rng(43);
  const int n = 10000;
  std::vector<int> counts(static_cast<std::size_t>(V), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_token(p, ctx, vocab, 1.0, rng))];
  const double mean = static_cast<double>(n) / V;
  const double sigma = std::sqrt(n * (1.0 / V) * (1.0 - 1.0 / V));
  for (int c : counts) REQUIRE(std::abs(c - mean) < 4.0 * sigma);
}

TEST_CASE("score_sequence basics", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  Rng rng(47);
  PolicyParams p = tu::random_params(vocab, 2, rng);
  PromptContext prompt;
  prompt.query = {4, 5};

  REQUIRE(score_sequence(p, prompt, vocab, {}).empty());

  const TokenId tok = 6;
  auto single = score_sequence(p, prompt, vocab, std::vector<TokenId>{tok});
  REQUIRE(single.size() == 1);
  REQUIRE(single[0] == log_prob(p, prompt, vocab, tok));
}

TEST_CASE("score_sequence sum equals the enumerated joint log-probability", "[policy]") {
  // Smallest legal vocabulary (the four specials); exhaustive V^3 check.
  Vocabulary vocab = tu::tiny_vocab(0);
  const int V = vocab.size();
  Rng rng(53);
  PolicyParams p = tu::random_params(vocab, 2, rng, 1.0);
  PromptContext prompt;
  prompt.query = {1};

  // Joint probabilities computed independently through token_distribution.
  double total = 0.0;
  for (TokenId a = 0; a < V; ++a) {
    for (TokenId b = 0; b < V; ++b) {
      for (TokenId c = 0; c < V; ++c) {
        PromptContext ctx = prompt;
        double joint = token_distribution(p, ctx, vocab).probs[static_cast<std::size_t>(a)];
        ctx.tail.push_back(a);
        joint *= token_distribution(p, ctx, vocab).probs[static_cast<std::size_t>(b)];
        ctx.tail.push_back(b);
        joint *= token_distribution(p, ctx, vocab).probs[static_cast<std::size_t>(c)];
        total += joint;

        auto lps = score_sequence(p, prompt, vocab, std::vector<TokenId>{a, b, c});
        const double sum = lps[0] + lps[1] + lps[2];
        REQUIRE(sum == Catch::Approx(std::log(joint)).margin(1e-12));
      }
    }
  }
  REQUIRE(total == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("role indicator changes the distribution iff role columns differ", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(4);
  Rng rng(59);
  PolicyParams p = tu::random_params(vocab, 2, rng);
  // Make the two role columns identical.
  for (int v = 0; v < p.V; ++v) p.at(v, p.F - 1) = p.at(v, p.F - 2);
  PromptContext solver;
  solver.tail = {4, 5};
  PromptContext critic = solver;
  critic.role = Role::critic;
  auto ds = token_distribution(p, solver, vocab).probs;
  auto dc = token_distribution(p, critic, vocab).probs;
  for (int v = 0; v < p.V; ++v) REQUIRE(ds[static_cast<std::size_t>(v)] == Catch::Approx(dc[static_cast<std::size_t>(v)]).margin(1e-15));

  p.at(2, p.F - 1) += 0.7;  // now they differ
  auto ds2 = token_distribution(p, solver, vocab).probs;
  auto dc2 = token_distribution(p, critic, vocab).probs;
  REQUIRE(std::abs(ds2[2] - dc2[2]) > 1e-3);
}

TEST_CASE("checkpoint round-trips bit-exactly", "[policy]") {
  Vocabulary vocab = tu::tiny_vocab(5);
  Rng rng(61);
  PolicyParams p = tu::random_params(vocab, 3, rng, 3.0);
  const auto path = std::filesystem::temp_directory_path() / "icrl_policy_test.ckpt";
  save_policy(path.string(), p);
  PolicyParams q = load_policy(path.string());
  REQUIRE(q.V == p.V);
  REQUIRE(q.F == p.F);
  REQUIRE(q.m == p.m);
  REQUIRE(q.W == p.W);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects a bad magic string", "[policy]") {
  const auto path = std::filesystem::temp_directory_path() / "icrl_policy_bad.ckpt";
  {
    std::ofstream out(path);
    out << "NOT-A-CHECKPOINT\n4 10 2\n";
  }
  REQUIRE_THROWS_AS(load_policy(path.string()), ConfigError);
  std::filesystem::remove(path);
}
