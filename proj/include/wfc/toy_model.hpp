// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>

#include "wfc/policy.hpp"

namespace wfc {

/// Log-linear next-token model over six sparse context features:
///
///   logits[v] = bias[v] + sum_s table_s[feature_s(prefix)][v]
///
/// with features last token, second-to-last token, the latest region opener
/// (START_USER, START_AGENT, ...), the latest workflow action (the token after
/// START_WORKFLOW or START_ACTION), the latest reward token, and the pair
/// (reward token, workflow action) so that a reward bin can shift the output
/// differently per action. Absent features contribute nothing. Zero
/// parameters give a uniform distribution; gradients are exact.
class ToyLanguageModel final : public LanguageModel {
 public:
  static constexpr std::size_t kNumSlots = 6;
  enum Slot : std::size_t { last = 0, second_last, region, plan, reward, reward_plan };

  ToyLanguageModel(const Vocabulary& vocab, std::size_t context_limit = 1024);

  std::unique_ptr<LanguageModel> clone() const override;
  std::string backend_name() const override { return "toy-loglinear"; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::size_t context_limit() const override { return context_limit_; }

  std::span<const double> parameters() const override { return params_; }
  std::span<double> mutable_parameters() override { return params_; }

  std::vector<double> logits(std::span<const TokenId> tokens, std::span<const std::size_t> positions) const override;
  void backward(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                std::span<const double> dlogits, std::span<double> grad) const override;

  nlohmann::json to_json() const override;
  static std::unique_ptr<ToyLanguageModel> from_json(const nlohmann::json& j, const Vocabulary& vocab);

  /// Gaussian parameters with standard deviation `scale`.
  void randomize(Rng& rng, double scale);

  /// Offset of table_s[row][0] in the parameter vector. Slots other than
  /// reward_plan are indexed by token id; reward_plan rows are
  /// (k - 1) * V + action token.
  std::size_t table_offset(Slot s, std::int64_t row) const noexcept {
    return vocab_size_ + (std::min<std::size_t>(s, reward_plan) * vocab_size_ + static_cast<std::size_t>(row)) *
                             vocab_size_;
  }

  using Features = std::array<std::int64_t, kNumSlots>;  // row per slot, -1 = absent
  /// Feature values at every position 0..tokens.size().
  std::vector<Features> features(std::span<const TokenId> tokens, std::size_t upto) const;

 private:
  std::size_t vocab_size_;
  std::size_t context_limit_;
  int num_reward_tokens_;
  std::vector<double> params_;
};

/// Zero-initialized toy policy over `vocab`.
PolicyHandle make_toy_policy(std::shared_ptr<const Vocabulary> vocab, PolicyRole role = PolicyRole::trainable,
                             GenerationDefaults defaults = {}, std::size_t context_limit = 1024);

}  // namespace wfc
