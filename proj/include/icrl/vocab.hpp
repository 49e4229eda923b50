#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "icrl/errors.hpp"

namespace icrl {

using TokenId = std::int32_t;

// Symbol table shared by the policy and one environment family. The four
// special tokens always occupy the first four ids. Role markers never enter
// the featurized context window (the role rides the two indicator feature
// dims instead); they exist so serialized rollouts can tag which role
// produced a stream.
class Vocabulary {
 public:
  static constexpr TokenId kRoleSolver = 0;
  static constexpr TokenId kRoleCritic = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kEos = 3;

  explicit Vocabulary(const std::vector<std::string>& task_tokens) {
    tokens_ = {"ROLE_SOLVER", "ROLE_CRITIC", "SEP", "EOS"};
    tokens_.insert(tokens_.end(), task_tokens.begin(), task_tokens.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, fresh] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      if (!fresh) throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  const std::string& token(TokenId id) const {
    if (id < 0 || id >= size()) throw InputError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool has(const std::string& s) const { return index_.count(s) != 0; }

  TokenId id(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw InputError("token not in vocabulary: " + s);
    return it->second;
  }

  bool valid(TokenId id) const { return id >= 0 && id < size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace icrl
