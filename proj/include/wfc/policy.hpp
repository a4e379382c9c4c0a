// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfc/corpus.hpp"
#include "wfc/rng.hpp"
#include "wfc/vocabulary.hpp"

namespace wfc {

struct TokenDistribution {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  TokenId argmax() const;
  /// Nonnegative and summing to one within `tol`.
  bool valid(double tol = 1e-9) const;
};

/// Numerically stable softmax of `logits / temperature`.
TokenDistribution softmax(std::span<const double> logits, double temperature = 1.0);

/// Autoregressive backend contract. Position p of a token sequence means
/// "predict tokens[p] from tokens[0, p)"; p == tokens.size() asks for the
/// next token. Implementations must be safe for concurrent const calls.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::unique_ptr<LanguageModel> clone() const = 0;
  virtual std::string backend_name() const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// Longest prefix, exclusive, the model accepts.
  virtual std::size_t context_limit() const = 0;

  virtual std::span<const double> parameters() const = 0;
  virtual std::span<double> mutable_parameters() = 0;

  /// Row-major [positions.size() x vocab_size()] logits. Positions must be
  /// ascending.
  virtual std::vector<double> logits(std::span<const TokenId> tokens, std::span<const std::size_t> positions) const = 0;

  /// Adds d(loss)/d(parameters) into `grad` given d(loss)/d(logits) laid
  /// out like logits().
  virtual void backward(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                        std::span<const double> dlogits, std::span<double> grad) const = 0;

  virtual nlohmann::json to_json() const = 0;
};

enum class PolicyRole { trainable, frozen_reference, user_simulator };

std::string_view to_string(PolicyRole r);

struct GenerationDefaults {
  double temperature = 0.5;
  /// Horizon T: the most tokens one sampled turn may hold.
  std::size_t horizon = 32;
};

/// A model plus its vocabulary and role. Copies share the underlying model;
/// use clone_reference() or copy_policy() for independent parameters.
/// Frozen handles (reference and user simulator) reject mutation.
class PolicyHandle {
 public:
  PolicyHandle(std::shared_ptr<const Vocabulary> vocab, std::shared_ptr<LanguageModel> model, PolicyRole role,
               GenerationDefaults defaults = {});

  const Vocabulary& vocab() const noexcept { return *vocab_; }
  std::shared_ptr<const Vocabulary> shared_vocab() const noexcept { return vocab_; }
  const LanguageModel& model() const noexcept { return *model_; }
  LanguageModel& mutable_model();
  PolicyRole role() const noexcept { return role_; }
  bool frozen() const noexcept { return role_ != PolicyRole::trainable; }
  const GenerationDefaults& defaults() const noexcept { return defaults_; }
  void set_defaults(GenerationDefaults d);

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::shared_ptr<LanguageModel> model_;
  PolicyRole role_;
  GenerationDefaults defaults_;
};

/// Frozen deep copy.
PolicyHandle clone_reference(const PolicyHandle& policy);
/// Deep copy with the given role (trainable by default).
PolicyHandle copy_policy(const PolicyHandle& policy, PolicyRole role = PolicyRole::trainable);

TokenDistribution next_token_distribution(const PolicyHandle& policy, std::span<const TokenId> prefix);

struct TurnOptions {
  double temperature = 0.5;
  bool greedy = false;
  std::size_t max_tokens = 32;
  std::vector<TokenId> stop_tokens;
};

struct TurnSample {
  std::vector<TokenId> tokens;         // content, without the stop token
  std::optional<TokenId> stop_token;   // nullopt when the horizon was hit
};

/// Generates one turn after `context`. Only text tokens and the stop tokens
/// can be drawn; other markup and reward tokens are masked out.
TurnSample sample_turn(const PolicyHandle& policy, std::span<const TokenId> context, const TurnOptions& options,
                       Rng& rng);
TurnSample sample_turn(const PolicyHandle& policy, std::span<const TokenId> context, const TurnOptions& options,
                       std::uint64_t seed);

/// Options for an agent turn: stops at END_AGENT, END_DIALOGUE or an action
/// emission (START_ACTION).
TurnOptions agent_turn_options(const PolicyHandle& policy);
/// Options for a user turn: stops at END_USER or END_DIALOGUE.
TurnOptions user_turn_options(const PolicyHandle& policy);

/// Sum of -log p over the example's target positions (teacher forcing).
double teacher_forced_nll(const PolicyHandle& policy, const LmExample& example);

/// Mean per-token NLL over `examples`; when `grad` is given, also adds its
/// gradient (sized like the parameters).
double mean_token_nll(const PolicyHandle& policy, std::span<const LmExample> examples, std::vector<double>* grad);

struct SftOptions {
  std::size_t epochs = 10;
  double lr = 2e-5;
  /// Examples per gradient step; 0 is full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

struct SftReport {
  /// Mean per-token NLL before training and after each epoch.
  std::vector<double> epoch_nll;
  std::size_t steps = 0;
};

/// Plain gradient descent on the mean per-token NLL.
SftReport sft_train(PolicyHandle& policy, std::span<const LmExample> examples, const SftOptions& options);

struct PlanGeneration {
  std::optional<std::string> predicted_action;  // nullopt: unknown action
  std::vector<TokenId> plan_tokens;             // raw workflow span
  std::vector<TokenId> response;
  bool unknown_action() const noexcept { return !predicted_action.has_value(); }
};

struct PlanOptions {
  /// Ground-truth next action; skips prediction when set.
  std::optional<std::string> oracle_action;
  double temperature = 0.5;
  bool greedy = false;
  std::size_t max_plan_tokens = 4;
  /// When set, a span naming anything else is flagged as unknown.
  std::optional<std::set<std::string>> known_actions;
};

/// Writes START_WORKFLOW, predicts the action span (or uses the oracle), then
/// generates the agent turn conditioned on it. `context` is an open
/// action_plan serialization, optionally ending in a reward token.
PlanGeneration generate_with_plan(const PolicyHandle& policy, std::span<const TokenId> context,
                                  const PlanOptions& options, Rng& rng);

/// Parses a workflow span as one known action identifier.
std::optional<std::string> parse_plan_span(const Vocabulary& vocab, std::span<const TokenId> span,
                                           const std::set<std::string>* known_actions = nullptr);

// Checkpoints -----------------------------------------------------------------

inline constexpr int kPolicyCheckpointVersion = 1;

nlohmann::json policy_to_json(const PolicyHandle& policy);
PolicyHandle policy_from_json(const nlohmann::json& j, PolicyRole role);
void save_policy(const std::filesystem::path& path, const PolicyHandle& policy);
PolicyHandle load_policy(const std::filesystem::path& path, PolicyRole role = PolicyRole::trainable);

}  // namespace wfc
