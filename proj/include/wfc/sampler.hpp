// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wfc/corpus.hpp"
#include "wfc/errors.hpp"
#include "wfc/policy.hpp"
#include "wfc/scorer.hpp"

namespace wfc {

/// Terminal block reward r(p, b) in [0, 1].
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;
  virtual double reward(const std::string& planned_action, const Block& block) const = 0;
};

class ScorerReward final : public RewardFunction {
 public:
  explicit ScorerReward(const ComplianceScorer& scorer) : scorer_(scorer) {}
  double reward(const std::string& planned_action, const Block& block) const override {
    return wfc::reward(scorer_, planned_action, block);
  }

 private:
  const ComplianceScorer& scorer_;
};

/// Fraction of an action's required keywords present in the block's system
/// utterances. Actions without keywords score 0.
class KeywordReward final : public RewardFunction {
 public:
  explicit KeywordReward(std::map<std::string, std::vector<std::string>> keywords)
      : keywords_(std::move(keywords)) {}
  double reward(const std::string& planned_action, const Block& block) const override;

 private:
  std::map<std::string, std::vector<std::string>> keywords_;
};

/// Dialogue prefix handed to interactive sampling, serialized once for the
/// system policy (its own variant) and once for the user simulator
/// (no_action).
struct SampleContext {
  std::string id;
  std::string domain_id;
  std::vector<TokenId> system_tokens;
  std::vector<TokenId> user_tokens;
  Variant variant = Variant::action_plan;
  PlannedAction planned;
  /// Dialogue turns before the block's first system turn.
  std::vector<Turn> prefix;
  /// Reference utterances of the block, from its first system turn on.
  std::vector<Turn> gold;
};

SampleContext make_sample_context(std::span<const Turn> prefix, const DomainSpec& domain, const Vocabulary& vocab,
                                  Variant variant, PlannedAction planned, std::string id = {});

/// One context per labeled training block that holds a system turn: the
/// dialogue up to (not including) that block's first system utterance.
std::vector<SampleContext> build_sample_contexts(std::span<const Dialogue> dialogues, const DomainSet& domains,
                                                 const Vocabulary& vocab, Variant variant,
                                                 std::optional<Split> split = Split::train);

struct InteractiveOptions {
  /// M: repetitions of (system turn, user turn).
  std::size_t rounds = 3;
  double temperature = 0.5;
  bool greedy = false;
  /// Placed once between the context and the block on the system side.
  std::optional<TokenId> reward_token;
  /// action_plan only: predict the workflow span on the first system turn
  /// instead of using the context's planned action.
  bool predict_plan = false;
  std::optional<std::set<std::string>> known_actions;
  /// Keep a snapshot of the system stream after every utterance.
  bool record_contexts = false;
};

struct SampledBlock {
  std::string context_id;
  Block block;  // generated utterances, planned_action = context's planned action
  std::vector<TokenId> context_tokens;  // system stream before the block
  std::vector<TokenId> block_tokens;    // system stream after it, no reward token
  bool early_stop = false;
  std::optional<std::string> predicted_action;  // when predict_plan
  bool unknown_action = false;
  std::vector<std::vector<TokenId>> system_contexts;  // when record_contexts
};

/// Raised when a context overflows mid-block; carries what was generated.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, SampledBlock partial) : Error(what), partial_(std::move(partial)) {}
  const SampledBlock& partial() const noexcept { return partial_; }

 private:
  SampledBlock partial_;
};

/// Alternates system and user turns for `rounds` rounds starting with the
/// system. The block ends early when the system emits END_DIALOGUE or an
/// action (START_ACTION). `user` must be frozen.
SampledBlock interactive_sample(const PolicyHandle& system, const PolicyHandle& user, const SampleContext& context,
                                const InteractiveOptions& options, std::uint64_t seed);

struct PoolEntry {
  std::string context_id;
  std::vector<TokenId> context_tokens;
  std::vector<TokenId> block_tokens;
  Block block;
  std::string planned_action;
  double reward = 0.0;
  int iteration = 0;
  std::uint64_t seed = 0;
};

class DataPool {
 public:
  void append(PoolEntry e) { entries_.push_back(std::move(e)); }
  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const PoolEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<PoolEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<PoolEntry> entries_;
};

/// Scores each block against its planned action and appends it. Empty or
/// NONE-labeled blocks are dropped with a warning. Returns the number added.
std::size_t score_and_pool(DataPool& pool, std::span<const SampledBlock> samples, const RewardFunction& reward,
                           int iteration, std::span<const std::uint64_t> seeds);

struct RewardSummary {
  std::size_t count = 0;
  /// Quantiles at kSummaryLevels; empty when count == 0.
  std::optional<double> mean;
  std::vector<double> quantiles;
};

inline constexpr std::array<double, 5> kSummaryLevels = {0.0, 0.25, 0.5, 0.75, 1.0};

struct PoolStats {
  RewardSummary overall;
  std::map<int, RewardSummary> per_iteration;
};

/// Linear-interpolation quantile (numpy's default) of unsorted values.
double quantile(std::vector<double> values, double level);
RewardSummary summarize(std::span<const double> rewards);
PoolStats pool_stats(const DataPool& pool);

/// JSON-lines dump {context_tokens, block_utterances, reward, iteration, seed}.
void write_pool(std::ostream& out, const DataPool& pool, const Vocabulary& vocab);

}  // namespace wfc
