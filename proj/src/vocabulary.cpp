// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/vocabulary.hpp"

#include <algorithm>
#include <set>

#include "wfc/errors.hpp"

namespace wfc {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_reserved(std::string_view w) {
  if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), w) != kSpecialTokens.end()) return true;
  return w.starts_with("REWARD_");
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string Vocabulary::reward_token_string(int k) { return "REWARD_" + std::to_string(k); }

Vocabulary::Vocabulary(std::vector<std::string> words, int num_reward_tokens)
    : num_reward_tokens_(num_reward_tokens) {
  if (num_reward_tokens < 0) throw ValidationError("negative reward token count");
  std::set<std::string> uniq;
  std::vector<std::string> reserved;
  for (auto& w : words) {
    if (is_reserved(w)) {
      reserved.push_back(w);
      continue;
    }
    if (!w.empty()) uniq.insert(std::move(w));
  }
  if (!reserved.empty()) {
    std::sort(reserved.begin(), reserved.end());
    reserved.erase(std::unique(reserved.begin(), reserved.end()), reserved.end());
    throw ValidationError("reserved token strings used as text", reserved);
  }
  tokens_.reserve(kNumSpecials + num_reward_tokens + uniq.size());
  for (auto s : kSpecialTokens) tokens_.emplace_back(s);
  for (int k = 1; k <= num_reward_tokens; ++k) tokens_.push_back(reward_token_string(k));
  for (const auto& w : uniq) tokens_.push_back(w);
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(id_of(Special::unk)); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw SerializationError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::reward_token(int k) const {
  if (k < 1 || k > num_reward_tokens_)
    throw SerializationError("reward token index " + std::to_string(k) + " outside [1, " +
                             std::to_string(num_reward_tokens_) + "]");
  return static_cast<TokenId>(kNumSpecials) + k - 1;
}

std::optional<int> Vocabulary::reward_index(TokenId id) const {
  if (!is_reward(id)) return std::nullopt;
  return id - static_cast<TokenId>(kNumSpecials) + 1;
}

std::vector<TokenId> Vocabulary::encode_text(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode_text(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  std::vector<std::string> words(tokens_.begin() + static_cast<std::ptrdiff_t>(kNumSpecials) + num_reward_tokens_,
                                 tokens_.end());
  return {{"num_reward_tokens", num_reward_tokens_}, {"words", words}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    return Vocabulary(j.at("words").get<std::vector<std::string>>(), j.at("num_reward_tokens").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad vocabulary: ") + e.what());
  }
}

}  // namespace wfc
