#pragma once
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "icrl/envs.hpp"

namespace icrl {

// Line-delimited query records: {"id", "kind", "description", "hidden_truth"}.
// Descriptions are stored as token strings so files stay readable and survive
// vocabulary reordering.

namespace detail {

inline nlohmann::json truth_to_json(const HiddenTruth& truth) {
  nlohmann::json j;
  if (const auto* kd = std::get_if<KeyDoorTruth>(&truth)) {
    j["rooms"] = kd->rooms;
    j["key_room"] = kd->key_room;
  } else if (const auto* sh = std::get_if<ShopTruth>(&truth)) {
    j["instruction"] = {{"type", sh->instruction.type},
                        {"atts", sh->instruction.atts},
                        {"opts", sh->instruction.opts},
                        {"price_cap", sh->instruction.price_cap}};
    j["target"] = sh->target;
    j["catalog"] = nlohmann::json::array();
    for (const auto& p : sh->catalog)
      j["catalog"].push_back(
          {{"type", p.type}, {"atts", p.atts}, {"opts", p.opts}, {"price", p.price}});
  } else if (const auto* hp = std::get_if<HopTruth>(&truth)) {
    j["next"] = hp->next;
    j["start"] = hp->start;
  }
  return j;
}

inline HiddenTruth truth_from_json(EnvKind kind, const nlohmann::json& j) {
  switch (kind) {
    case EnvKind::keydoor: {
      KeyDoorTruth t;
      t.rooms = j.at("rooms").get<int>();
      t.key_room = j.at("key_room").get<int>();
      return t;
    }
    case EnvKind::attrshop: {
      ShopTruth t;
      const auto& ins = j.at("instruction");
      t.instruction.type = ins.at("type").get<int>();
      t.instruction.atts = ins.at("atts").get<std::set<int>>();
      t.instruction.opts = ins.at("opts").get<std::set<int>>();
      t.instruction.price_cap = ins.at("price_cap").get<int>();
      t.target = j.at("target").get<int>();
      for (const auto& pj : j.at("catalog")) {
        ShopProduct p;
        p.type = pj.at("type").get<int>();
        p.atts = pj.at("atts").get<std::set<int>>();
        p.opts = pj.at("opts").get<std::set<int>>();
        p.price = pj.at("price").get<int>();
        t.catalog.push_back(std::move(p));
      }
      return t;
    }
    case EnvKind::hopchain: {
      HopTruth t;
      t.next = j.at("next").get<std::vector<int>>();
      t.start = j.at("start").get<int>();
      return t;
    }
  }
  throw ConfigError("unknown environment kind in dataset");
}

}  // namespace detail

inline void save_dataset(const std::string& path, const std::vector<Query>& queries,
                         const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open dataset for writing: " + path);
  for (const Query& q : queries) {
    nlohmann::json j;
    j["id"] = q.id;
    j["kind"] = env_name(q.kind);
    j["description"] = nlohmann::json::array();
    for (TokenId t : q.description) j["description"].push_back(vocab.token(t));
    j["hidden_truth"] = detail::truth_to_json(q.truth);
    out << j.dump() << "\n";
  }
}

inline std::vector<Query> load_dataset(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path);
  std::vector<Query> out;
  std::set<std::int64_t> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Query q;
    q.id = j.at("id").get<std::int64_t>();
    q.kind = parse_env(j.at("kind").get<std::string>());
    for (const auto& s : j.at("description")) q.description.push_back(vocab.id(s.get<std::string>()));
    q.truth = detail::truth_from_json(q.kind, j.at("hidden_truth"));
    if (!seen.insert(q.id).second)
      throw IntegrityError("duplicate query id in dataset: " + std::to_string(q.id));
    out.push_back(std::move(q));
  }
  return out;
}

// Train/eval splits must not share query ids.
inline void check_disjoint(const std::vector<Query>& train, const std::vector<Query>& eval) {
  std::set<std::int64_t> ids;
  for (const Query& q : train) ids.insert(q.id);
  for (const Query& q : eval)
    if (ids.count(q.id))
      throw IntegrityError("train/eval datasets share query id " + std::to_string(q.id));
}

}  // namespace icrl
