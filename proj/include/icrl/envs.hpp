#pragma once
#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "icrl/errors.hpp"
#include "icrl/rng.hpp"
#include "icrl/vocab.hpp"

namespace icrl {

enum class EnvKind { keydoor, attrshop, hopchain };

inline const char* env_name(EnvKind k) {
  switch (k) {
    case EnvKind::keydoor: return "keydoor";
    case EnvKind::attrshop: return "attrshop";
    case EnvKind::hopchain: return "hopchain";
  }
  throw ConfigError("unknown environment kind");
}

inline EnvKind parse_env(const std::string& s) {
  if (s == "keydoor") return EnvKind::keydoor;
  if (s == "attrshop") return EnvKind::attrshop;
  if (s == "hopchain") return EnvKind::hopchain;
  throw ConfigError("unknown environment kind: " + s);
}

// Episode budgets (actions per attempt). Small enough for exhaustive
// enumeration on test instances, deep enough for multi-step failures.
inline int horizon(EnvKind k) {
  switch (k) {
    case EnvKind::keydoor: return 6;
    case EnvKind::attrshop: return 5;
    case EnvKind::hopchain: return 4;
  }
  throw ConfigError("unknown environment kind");
}

// Instance-size defaults shared by vocab builders and query generators.
constexpr int kKeyDoorRooms = 3;
constexpr int kShopProducts = 4;
constexpr int kShopTypes = 2;
constexpr int kShopAttrs = 4;
constexpr int kShopOpts = 2;
constexpr int kShopMaxPrice = 5;
constexpr int kHopEntities = 5;

// ---------------------------------------------------------------------------
// Hidden truths

struct KeyDoorTruth {
  int rooms = kKeyDoorRooms;
  int key_room = 0;
};

struct ShopInstruction {
  int type = 0;
  std::set<int> atts;
  std::set<int> opts;
  int price_cap = 1;
};

struct ShopPurchase {
  int type = 0;
  std::set<int> atts;
  std::set<int> opts;
  int price = 1;
};

struct ShopProduct {
  int type = 0;
  std::set<int> atts;
  std::set<int> opts;
  int price = 1;
};

struct ShopTruth {
  ShopInstruction instruction;
  std::vector<ShopProduct> catalog;  // size kShopProducts
  int target = 0;                    // index of the fully matching product
};

struct HopTruth {
  std::vector<int> next;  // next[e] = entity reached from e
  int start = 0;
  int answer() const { return next[static_cast<std::size_t>(next[static_cast<std::size_t>(start)])]; }
};

using HiddenTruth = std::variant<KeyDoorTruth, ShopTruth, HopTruth>;

struct Query {
  std::int64_t id = 0;
  EnvKind kind = EnvKind::keydoor;
  std::vector<TokenId> description;
  HiddenTruth truth;
};

// ---------------------------------------------------------------------------
// Vocabularies

inline Vocabulary make_keydoor_vocab(int rooms = kKeyDoorRooms) {
  std::vector<std::string> t;
  t.push_back("keydoor");
  for (int i = 0; i < rooms; ++i) t.push_back("goto_" + std::to_string(i));
  t.push_back("take");
  t.push_back("open");
  for (int i = 0; i < rooms; ++i) t.push_back("room_" + std::to_string(i));
  for (int i = 0; i < rooms; ++i) t.push_back("no_key_" + std::to_string(i));
  t.push_back("have_key");
  t.push_back("locked");
  t.push_back("opened");
  t.push_back("nothing");
  return Vocabulary(t);
}

// Web-style action language: emitting a type token types it into the search
// box, emitting a listed product token clicks its page, buy_i purchases from
// the open page.
inline Vocabulary make_attrshop_vocab() {
  std::vector<std::string> t;
  t.push_back("shop");
  for (int i = 0; i < kShopTypes; ++i) t.push_back("type_" + std::to_string(i));
  for (int i = 0; i < kShopAttrs; ++i) t.push_back("att_" + std::to_string(i));
  for (int i = 0; i < kShopOpts; ++i) t.push_back("opt_" + std::to_string(i));
  for (int i = 1; i <= kShopMaxPrice; ++i) t.push_back("cap_" + std::to_string(i));
  for (int i = 0; i < kShopProducts; ++i) t.push_back("buy_" + std::to_string(i));
  for (int i = 0; i < kShopProducts; ++i) t.push_back("prod_" + std::to_string(i));
  // Product pages verdict the selection against the instruction.
  t.push_back("match_full");
  t.push_back("match_partial");
  t.push_back("match_none");
  t.push_back("price_ok");
  t.push_back("price_high");
  t.push_back("store");
  t.push_back("bought");
  t.push_back("none");
  return Vocabulary(t);
}

inline Vocabulary make_hopchain_vocab(int entities = kHopEntities) {
  std::vector<std::string> t;
  t.push_back("hop");
  for (int i = 0; i < entities; ++i) t.push_back("ent_" + std::to_string(i));
  for (int i = 0; i < entities; ++i) t.push_back("lookup_" + std::to_string(i));
  for (int i = 0; i < entities; ++i) t.push_back("answer_" + std::to_string(i));
  t.push_back("correct");
  t.push_back("wrong");
  t.push_back("none");
  return Vocabulary(t);
}

inline Vocabulary make_vocab(EnvKind kind) {
  Vocabulary v = [&] {
    switch (kind) {
      case EnvKind::keydoor: return make_keydoor_vocab();
      case EnvKind::attrshop: return make_attrshop_vocab();
      case EnvKind::hopchain: return make_hopchain_vocab();
    }
    throw ConfigError("unknown environment kind");
  }();
  if (v.size() < 8) throw ConfigError("environment vocabulary too small");
  return v;
}

// ---------------------------------------------------------------------------
// Purchase reward: type gate times the fraction of satisfied constraints
// (matched attributes, matched options, price within cap) over
// |atts| + |opts| + 1. Success means r == 1 exactly.

inline double shop_reward(const ShopInstruction& instr, const ShopPurchase& purchase) {
  if (instr.price_cap <= 0 || purchase.price <= 0)
    throw InputError("shop_reward: prices must be positive");
  const double r_type = instr.type == purchase.type ? 1.0 : 0.0;
  int matched = 0;
  for (int a : instr.atts) matched += purchase.atts.count(a) ? 1 : 0;
  for (int o : instr.opts) matched += purchase.opts.count(o) ? 1 : 0;
  if (purchase.price <= instr.price_cap) matched += 1;
  const double denom = static_cast<double>(instr.atts.size() + instr.opts.size() + 1);
  return r_type * matched / denom;
}

// ---------------------------------------------------------------------------
// Episode state and transitions. States are small values so enumeration can
// fork them freely; an episode is fully determined by (query, actions).

struct EnvStep {
  std::vector<TokenId> observation;
  bool done = false;
  double reward = 0.0;
};

struct KeyDoorState {
  int room = 0;
  bool have_key = false;
};

struct ShopState {
  std::uint8_t listed = 0;  // bitmask of ids on the current results page
  int selected = -1;        // product page currently open
};

struct HopState {};

struct EnvState {
  std::int64_t query_id = 0;
  int steps = 0;
  bool done = false;
  std::variant<KeyDoorState, ShopState, HopState> inner;
};

namespace detail {

inline const KeyDoorTruth& keydoor_truth(const Query& q) {
  if (const auto* t = std::get_if<KeyDoorTruth>(&q.truth)) return *t;
  throw IntegrityError("query truth does not match keydoor");
}
inline const ShopTruth& shop_truth(const Query& q) {
  if (const auto* t = std::get_if<ShopTruth>(&q.truth)) return *t;
  throw IntegrityError("query truth does not match attrshop");
}
inline const HopTruth& hop_truth(const Query& q) {
  if (const auto* t = std::get_if<HopTruth>(&q.truth)) return *t;
  throw IntegrityError("query truth does not match hopchain");
}

inline ShopPurchase purchase_of(const ShopProduct& p) {
  return ShopPurchase{p.type, p.atts, p.opts, p.price};
}

}  // namespace detail

// Initial observation. KeyDoor announces the available actions and the
// starting room; AttrShop shows the storefront; HopChain repeats only the
// question entity, never the fact chain.
inline std::pair<EnvState, EnvStep> reset(const Vocabulary& vocab, const Query& query, Rng&) {
  EnvState state;
  state.query_id = query.id;
  EnvStep step;
  switch (query.kind) {
    case EnvKind::keydoor: {
      const auto& truth = detail::keydoor_truth(query);
      state.inner = KeyDoorState{};
      for (int i = 0; i < truth.rooms; ++i)
        step.observation.push_back(vocab.id("goto_" + std::to_string(i)));
      step.observation.push_back(vocab.id("take"));
      step.observation.push_back(vocab.id("open"));
      step.observation.push_back(vocab.id("room_0"));
      break;
    }
    case EnvKind::attrshop: {
      detail::shop_truth(query);
      state.inner = ShopState{};
      step.observation.push_back(vocab.id("store"));
      break;
    }
    case EnvKind::hopchain: {
      const auto& truth = detail::hop_truth(query);
      state.inner = HopState{};
      step.observation.push_back(vocab.id("ent_" + std::to_string(truth.start)));
      break;
    }
  }
  return {state, step};
}

// One environment turn. Unrecognized action tokens waste the turn with a
// "nothing happens" observation, text-world style. The horizon check runs
// after the transition: an episode that has not succeeded by H actions ends
// with reward 0.
inline std::pair<EnvState, EnvStep> step(const Vocabulary& vocab, const Query& query,
                                         EnvState state, std::span<const TokenId> action_tokens) {
  if (state.done) throw IntegrityError("step called on a finished episode");
  if (state.query_id != query.id) throw IntegrityError("state does not belong to this query");
  if (action_tokens.empty()) throw InputError("empty action");
  const std::string action =
      action_tokens.size() == 1 ? vocab.token(action_tokens[0]) : std::string("<multi>");

  EnvStep out;
  state.steps += 1;

  switch (query.kind) {
    case EnvKind::keydoor: {
      const auto& truth = detail::keydoor_truth(query);
      auto& kd = std::get<KeyDoorState>(state.inner);
      if (action.rfind("goto_", 0) == 0) {
        const int r = std::stoi(action.substr(5));
        kd.room = r;
        out.observation.push_back(vocab.id("room_" + std::to_string(r)));
      } else if (action == "take" && !kd.have_key) {
        if (kd.room == truth.key_room) {
          kd.have_key = true;
          out.observation.push_back(vocab.id("have_key"));
        } else {
          out.observation.push_back(vocab.id("no_key_" + std::to_string(kd.room)));
        }
      } else if (action == "open") {
        if (kd.have_key) {
          out.observation.push_back(vocab.id("opened"));
          out.done = true;
          out.reward = 1.0;
        } else {
          out.observation.push_back(vocab.id("locked"));
        }
      } else {
        out.observation.push_back(vocab.id("nothing"));
      }
      break;
    }
    case EnvKind::attrshop: {
      const auto& truth = detail::shop_truth(query);
      auto& sh = std::get<ShopState>(state.inner);
      if (action.rfind("type_", 0) == 0) {
        const int ty = std::stoi(action.substr(5));
        sh.listed = 0;
        for (int i = 0; i < static_cast<int>(truth.catalog.size()); ++i) {
          if (truth.catalog[static_cast<std::size_t>(i)].type == ty) {
            out.observation.push_back(vocab.id("prod_" + std::to_string(i)));
            sh.listed |= static_cast<std::uint8_t>(1u << i);
          }
        }
        if (sh.listed == 0) out.observation.push_back(vocab.id("none"));
      } else if (action.rfind("prod_", 0) == 0) {
        // Product pages open from the results listing only.
        const int p = std::stoi(action.substr(5));
        if (!(sh.listed & (1u << p))) {
          out.observation.push_back(vocab.id("none"));
          break;
        }
        const auto& prod = truth.catalog.at(static_cast<std::size_t>(p));
        sh.selected = p;
        out.observation.push_back(vocab.id(prod.price <= truth.instruction.price_cap
                                               ? "price_ok"
                                               : "price_high"));
        int matched = 0;
        for (int a : truth.instruction.atts) matched += prod.atts.count(a) ? 1 : 0;
        for (int o : truth.instruction.opts) matched += prod.opts.count(o) ? 1 : 0;
        const int wanted =
            static_cast<int>(truth.instruction.atts.size() + truth.instruction.opts.size());
        const char* verdict = "match_none";
        if (prod.type == truth.instruction.type && matched == wanted) verdict = "match_full";
        else if (prod.type == truth.instruction.type && matched > 0) verdict = "match_partial";
        out.observation.push_back(vocab.id(verdict));
      } else if (action.rfind("buy_", 0) == 0) {
        const int p = std::stoi(action.substr(4));
        if (p == sh.selected) {
          // Purchases happen from the selected product's page only.
          const auto& prod = truth.catalog.at(static_cast<std::size_t>(p));
          out.observation.push_back(vocab.id("bought"));
          out.done = true;
          out.reward = shop_reward(truth.instruction, detail::purchase_of(prod));
        } else {
          out.observation.push_back(vocab.id("none"));
        }
      } else {
        out.observation.push_back(vocab.id("none"));
      }
      break;
    }
    case EnvKind::hopchain: {
      const auto& truth = detail::hop_truth(query);
      if (action.rfind("lookup_", 0) == 0) {
        const int e = std::stoi(action.substr(7));
        const int f = truth.next.at(static_cast<std::size_t>(e));
        out.observation.push_back(vocab.id("ent_" + std::to_string(f)));
      } else if (action.rfind("answer_", 0) == 0) {
        const int e = std::stoi(action.substr(7));
        out.done = true;
        out.reward = e == truth.answer() ? 1.0 : 0.0;
        out.observation.push_back(vocab.id(out.reward == 1.0 ? "correct" : "wrong"));
      } else {
        out.observation.push_back(vocab.id("none"));
      }
      break;
    }
  }

  if (!out.done && state.steps >= horizon(query.kind)) {
    out.done = true;
    out.reward = 0.0;
  }
  state.done = out.done;
  if (out.reward < 0.0 || out.reward > 1.0) throw IntegrityError("reward out of [0,1]");
  return {state, out};
}

// ---------------------------------------------------------------------------
// Query generation. All randomness flows through one seeded stream so a
// (kind, count, seed, start_id) tuple always yields the same dataset.

inline Query gen_query(EnvKind kind, std::int64_t id, Rng& rng, const Vocabulary& vocab) {
  Query q;
  q.id = id;
  q.kind = kind;
  switch (kind) {
    case EnvKind::keydoor: {
      KeyDoorTruth t;
      t.rooms = kKeyDoorRooms;
      t.key_room = static_cast<int>(rng.below(static_cast<std::uint64_t>(t.rooms)));
      q.description.push_back(vocab.id("keydoor"));
      q.truth = t;
      break;
    }
    case EnvKind::attrshop: {
      ShopTruth t;
      auto& ins = t.instruction;
      ins.type = static_cast<int>(rng.below(kShopTypes));
      const int natt = 1 + static_cast<int>(rng.below(2));  // 1..2 attributes
      while (static_cast<int>(ins.atts.size()) < natt)
        ins.atts.insert(static_cast<int>(rng.below(kShopAttrs)));
      if (rng.uniform() < 0.5) ins.opts.insert(static_cast<int>(rng.below(kShopOpts)));
      ins.price_cap = 2 + static_cast<int>(rng.below(kShopMaxPrice - 1));  // 2..5

      t.catalog.resize(kShopProducts);
      const int target = static_cast<int>(rng.below(kShopProducts));
      const int decoy = (target + 1 + static_cast<int>(rng.below(kShopProducts - 1))) % kShopProducts;
      for (int i = 0; i < kShopProducts; ++i) {
        auto& p = t.catalog[static_cast<std::size_t>(i)];
        if (i == target) {
          // Fully satisfying product: type, all atts/opts, price within cap.
          p.type = ins.type;
          p.atts = ins.atts;
          p.opts = ins.opts;
          p.price = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ins.price_cap)));
        } else if (i == decoy) {
          // Same type, partial match: drop one required attribute.
          p.type = ins.type;
          p.atts = ins.atts;
          p.atts.erase(*p.atts.begin());
          p.opts = ins.opts;
          p.price = 1 + static_cast<int>(rng.below(kShopMaxPrice));
        } else {
          p.type = (ins.type + 1) % kShopTypes;
          const int k = static_cast<int>(rng.below(3));
          for (int j = 0; j < k; ++j) p.atts.insert(static_cast<int>(rng.below(kShopAttrs)));
          if (rng.uniform() < 0.5) p.opts.insert(static_cast<int>(rng.below(kShopOpts)));
          p.price = 1 + static_cast<int>(rng.below(kShopMaxPrice));
        }
      }
      t.target = target;

      q.description.push_back(vocab.id("shop"));
      for (int a : ins.atts) q.description.push_back(vocab.id("att_" + std::to_string(a)));
      for (int o : ins.opts) q.description.push_back(vocab.id("opt_" + std::to_string(o)));
      q.description.push_back(vocab.id("cap_" + std::to_string(ins.price_cap)));
      q.description.push_back(vocab.id("type_" + std::to_string(ins.type)));
      q.truth = t;
      break;
    }
    case EnvKind::hopchain: {
      HopTruth t;
      t.next.resize(kHopEntities);
      for (int i = 0; i < kHopEntities; ++i)
        t.next[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(kHopEntities));
      t.start = static_cast<int>(rng.below(kHopEntities));
      q.description.push_back(vocab.id("hop"));
      q.description.push_back(vocab.id("ent_" + std::to_string(t.start)));
      q.truth = t;
      break;
    }
  }
  return q;
}

inline std::vector<Query> gen_queries(EnvKind kind, int count, std::uint64_t seed,
                                      std::int64_t start_id, const Vocabulary& vocab) {
  std::vector<Query> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(start_id + i), 0xDA7A5E7ULL}));
    out.push_back(gen_query(kind, start_id + i, rng, vocab));
  }
  return out;
}

}  // namespace icrl
