#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "icrl/context.hpp"
#include "icrl/errors.hpp"
#include "icrl/rng.hpp"
#include "icrl/vocab.hpp"

namespace icrl {

// Linear-softmax policy over a sliding window of the last m context tokens.
// Feature layout: m blocks of V one-hot slots (block j holds the token m-j
// positions back from the frontier; absent positions stay zero), followed by
// a 2-dim role indicator. Both roles read the same weight matrix; the role
// can only shift logits through those last two columns.
struct PolicyParams {
  int V = 0;  // vocabulary size (rows)
  int F = 0;  // feature count m*V + 2 (columns)
  int m = 0;  // context order
  std::vector<double> W;  // row-major V x F

  static PolicyParams zeros(const Vocabulary& vocab, int context_order) {
    if (context_order < 1) throw ConfigError("context order must be >= 1");
    PolicyParams p;
    p.V = vocab.size();
    p.m = context_order;
    p.F = p.m * p.V + 2;
    p.W.assign(static_cast<std::size_t>(p.V) * p.F, 0.0);
    return p;
  }

  // Weak context-echo prior: every token's logit rises when that token sits
  // in the window. The stand-in for a base model that already follows
  // textual suggestions; without it a fresh policy ignores critiques
  // entirely and the calibration ratio stays pinned at 1 early in training.
  static PolicyParams echo_init(const Vocabulary& vocab, int context_order, double bias) {
    PolicyParams p = zeros(vocab, context_order);
    for (int j = 0; j < p.m; ++j)
      for (int t = 0; t < p.V; ++t) p.at(t, j * p.V + t) = bias;
    return p;
  }

  double& at(int v, int f) { return W[static_cast<std::size_t>(v) * F + f]; }
  double at(int v, int f) const { return W[static_cast<std::size_t>(v) * F + f]; }

  void validate() const {
    if (V < 4 || m < 1 || F != m * V + 2)
      throw ConfigError("inconsistent policy parameter shape");
    if (W.size() != static_cast<std::size_t>(V) * F)
      throw ConfigError("weight storage does not match shape");
    for (double w : W)
      if (!std::isfinite(w)) throw NumericalError("non-finite policy weight");
  }
};

// Sparse view of one feature vector: every active feature has weight 1.
struct Features {
  int V = 0;
  int m = 0;
  std::vector<int> active;  // indices into [0, m*V + 2)

  int dim() const { return m * V + 2; }

  std::vector<double> dense() const {
    std::vector<double> out(static_cast<std::size_t>(dim()), 0.0);
    for (int i : active) out[static_cast<std::size_t>(i)] = 1.0;
    return out;
  }
};

inline Features featurize_sparse(const PromptContext& ctx, const Vocabulary& vocab, int m) {
  ctx.validate(vocab);
  Features f;
  f.V = vocab.size();
  f.m = m;
  const std::vector<TokenId> flat = ctx.flatten();
  const int n = static_cast<int>(flat.size());
  const int take = std::min(m, n);
  // Token n-1 (most recent) lands in the last block, m-1.
  for (int j = 0; j < take; ++j) {
    const TokenId tok = flat[static_cast<std::size_t>(n - 1 - j)];
    const int slot = m - 1 - j;
    f.active.push_back(slot * f.V + tok);
  }
  f.active.push_back(m * f.V + (ctx.role == Role::solver ? 0 : 1));
  std::sort(f.active.begin(), f.active.end());
  return f;
}

// Dense feature vector of length F = m*V + 2.
inline std::vector<double> featurize(const PromptContext& ctx, const Vocabulary& vocab, int m) {
  return featurize_sparse(ctx, vocab, m).dense();
}

struct TokenDistribution {
  std::vector<double> probs;
};

namespace detail {

inline std::vector<double> logits_of(const PolicyParams& params, const Features& feats) {
  if (feats.V != params.V || feats.m != params.m)
    throw IntegrityError("feature shape does not match policy parameters");
  std::vector<double> z(static_cast<std::size_t>(params.V), 0.0);
  for (int i : feats.active) {
    const double* col = params.W.data() + i;
    for (int v = 0; v < params.V; ++v) z[static_cast<std::size_t>(v)] += col[static_cast<std::size_t>(v) * params.F];
  }
  return z;
}

// In-place log-softmax; returns logsumexp of the input.
inline double log_softmax(std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericalError("non-finite logit");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : z) v -= lse;
  return lse;
}

inline std::vector<double> log_probs_from(const PolicyParams& params, const Features& feats,
                                          double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> z = logits_of(params, feats);
  if (temperature != 1.0)
    for (double& v : z) v /= temperature;
  log_softmax(z);
  return z;
}

}  // namespace detail

inline TokenDistribution token_distribution(const PolicyParams& params, const PromptContext& ctx,
                                            const Vocabulary& vocab, double temperature = 1.0) {
  Features feats = featurize_sparse(ctx, vocab, params.m);
  std::vector<double> lp = detail::log_probs_from(params, feats, temperature);
  for (double& v : lp) v = std::exp(v);
  return TokenDistribution{std::move(lp)};
}

inline double log_prob(const PolicyParams& params, const PromptContext& ctx,
                       const Vocabulary& vocab, TokenId token) {
  if (!vocab.valid(token)) throw InputError("log_prob: token not in vocabulary");
  Features feats = featurize_sparse(ctx, vocab, params.m);
  return detail::log_probs_from(params, feats, 1.0)[static_cast<std::size_t>(token)];
}

// Exact score function of the softmax policy: (onehot(token) - probs) (x) phi.
// Returned row-major V x F.
inline std::vector<double> grad_log_prob(const PolicyParams& params, const PromptContext& ctx,
                                         const Vocabulary& vocab, TokenId token) {
  if (!vocab.valid(token)) throw InputError("grad_log_prob: token not in vocabulary");
  Features feats = featurize_sparse(ctx, vocab, params.m);
  std::vector<double> lp = detail::log_probs_from(params, feats, 1.0);
  std::vector<double> grad(static_cast<std::size_t>(params.V) * params.F, 0.0);
  for (int v = 0; v < params.V; ++v) {
    const double coef = (v == token ? 1.0 : 0.0) - std::exp(lp[static_cast<std::size_t>(v)]);
    for (int i : feats.active) grad[static_cast<std::size_t>(v) * params.F + i] = coef;
  }
  return grad;
}

inline TokenId sample_token(const PolicyParams& params, const PromptContext& ctx,
                            const Vocabulary& vocab, double temperature, Rng& rng) {
  TokenDistribution dist = token_distribution(params, ctx, vocab, temperature);
  const double u = rng.uniform();
  double acc = 0.0;
  for (int v = 0; v < params.V; ++v) {
    acc += dist.probs[static_cast<std::size_t>(v)];
    if (u < acc) return static_cast<TokenId>(v);
  }
  return static_cast<TokenId>(params.V - 1);  // guard against acc rounding below 1
}

// Teacher-forced per-token log-probabilities of a fixed continuation. Element
// t conditions on the prompt plus tokens[0..t); the sum is the joint sequence
// log-probability.
inline std::vector<double> score_sequence(const PolicyParams& params, const PromptContext& prompt,
                                          const Vocabulary& vocab, std::span<const TokenId> tokens) {
  PromptContext ctx = prompt;
  std::vector<double> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (!vocab.valid(t)) throw InputError("score_sequence: token not in vocabulary");
    out.push_back(log_prob(params, ctx, vocab, t));
    ctx.tail.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic line, "V F m" line, then V rows of F weights
// printed with max_digits10 so reloads are bit-exact.

inline constexpr const char* kPolicyMagic = "ICRL-POLICY-1";

inline void save_policy(const std::string& path, const PolicyParams& params) {
  params.validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out << kPolicyMagic << "\n" << params.V << " " << params.F << " " << params.m << "\n";
  char buf[40];
  for (int v = 0; v < params.V; ++v) {
    for (int f = 0; f < params.F; ++f) {
      std::snprintf(buf, sizeof buf, "%.17g", params.at(v, f));
      out << buf << (f + 1 == params.F ? '\n' : ' ');
    }
  }
  if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kPolicyMagic)
    throw ConfigError("bad checkpoint magic in " + path + ": " + magic);
  PolicyParams p;
  if (!(in >> p.V >> p.F >> p.m)) throw ConfigError("bad checkpoint header: " + path);
  if (p.V < 4 || p.m < 1 || p.F != p.m * p.V + 2)
    throw ConfigError("inconsistent checkpoint shape: " + path);
  p.W.resize(static_cast<std::size_t>(p.V) * p.F);
  for (double& w : p.W)
    if (!(in >> w)) throw ConfigError("truncated checkpoint: " + path);
  p.validate();
  return p;
}

}  // namespace icrl
