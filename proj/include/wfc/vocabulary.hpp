// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace wfc {

using TokenId = std::int32_t;

/// Reserved markup tokens. The first nine strings are used verbatim;
/// END_USER closes user turns and UNK stands in for out-of-vocabulary words.
enum class Special : TokenId {
  start_user = 0,
  end_user,
  start_agent,
  end_agent,
  start_workflow,
  end_workflow,
  start_action,
  end_action,
  start_dialog,
  end_dialogue,
  unk,
};

inline constexpr std::size_t kNumSpecials = 11;

inline constexpr std::array<std::string_view, kNumSpecials> kSpecialTokens = {
    "START_USER",   "END_USER",   "START_AGENT", "END_AGENT",  "START_WORKFLOW", "END_WORKFLOW",
    "START_ACTION", "END_ACTION", "START_DIALOG", "END_DIALOGUE", "UNK",
};

constexpr TokenId id_of(Special s) noexcept { return static_cast<TokenId>(s); }

/// Dense token table: specials at [0, 11), reward tokens REWARD_1..REWARD_K
/// next, then text and action tokens in lexicographic order.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary({}, 0) {}

  /// `words` may repeat and may be unsorted; reserved strings are rejected.
  Vocabulary(std::vector<std::string> words, int num_reward_tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  int num_reward_tokens() const noexcept { return num_reward_tokens_; }

  std::optional<TokenId> find(std::string_view token) const;
  /// Like find(), but maps unknown strings to UNK.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  bool is_special(TokenId id) const noexcept { return id >= 0 && id < static_cast<TokenId>(kNumSpecials); }
  bool is_reward(TokenId id) const noexcept {
    return id >= static_cast<TokenId>(kNumSpecials) &&
           id < static_cast<TokenId>(kNumSpecials) + num_reward_tokens_;
  }
  /// True for ordinary text or action tokens.
  bool is_text(TokenId id) const noexcept {
    return id >= static_cast<TokenId>(kNumSpecials) + num_reward_tokens_ && id < static_cast<TokenId>(size());
  }

  /// Reward token r_k for k in [1, K].
  TokenId reward_token(int k) const;
  /// Inverse of reward_token(); nullopt for non-reward ids.
  std::optional<int> reward_index(TokenId id) const;

  /// Whitespace tokenization; unknown words become UNK.
  std::vector<TokenId> encode_text(std::string_view text) const;
  std::string decode_text(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  static std::string reward_token_string(int k);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && num_reward_tokens_ == other.num_reward_tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  int num_reward_tokens_ = 0;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);
/// Collapses runs of whitespace to single spaces and trims.
std::string normalize_text(std::string_view text);

}  // namespace wfc
