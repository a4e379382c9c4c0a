// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "wfc/policy.hpp"
#include "wfc/sampler.hpp"

namespace wfc {

struct TrainConfig {
  int num_quantiles = 5;      // K
  double kl_weight = 0.05;    // beta
  std::size_t interactions = 3;  // M
  std::size_t iterations = 10;   // N
  std::size_t steps_per_iteration = 200;
  std::size_t batch_size = 8;
  double temperature = 0.5;
  double lr = 2e-5;
  double gamma = 1.0;  // undiscounted; anything else is rejected
  std::size_t horizon = 32;  // T
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;
};

struct QuantizedEntry {
  std::size_t pool_index;
  int quantile;  // k in [1, K]
  TokenId reward_token;
};

struct Quantization {
  int num_quantiles = 0;
  std::vector<QuantizedEntry> entries;        // in pool order
  std::vector<std::vector<std::size_t>> bins;  // bins[k-1]: indices into entries
  bool has_empty_bins = false;
};

/// Equal-frequency bins by rank: a stable sort by reward (ties keep insertion
/// order), rank i of n goes to bin floor(i*K/n) + 1. With n < K the i-th
/// entry gets bin i + 1 and the remaining bins stay empty.
std::vector<int> quantize_rewards(std::span<const double> rewards, int num_quantiles);
Quantization quantize(const DataPool& pool, int num_quantiles, const Vocabulary& vocab);

/// Probability floor applied to the second argument inside the objective.
inline constexpr double kKlFloor = 1e-12;

/// KL(p || q) = sum_i p_i ln(p_i / q_i). With floor == 0, a zero q_i where
/// p_i > 0 raises InfiniteKlError; otherwise q is floored at `floor`.
double kl_term(const TokenDistribution& p, const TokenDistribution& q, double floor = 0.0);

struct QuarkSample {
  std::span<const TokenId> context;
  std::span<const TokenId> block;
  TokenId reward_token;
};

struct QuarkLoss {
  double loss = 0.0;  // -(1/B) sum [log l_theta(b | c, r_k) - beta sum_t KL_t]
  double nll = 0.0;   // (1/B) sum -log l_theta(b | c, r_k)
  double kl = 0.0;    // (1/B) sum_t KL_t
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// The policy sees (c, r_k, b_<t); the reference sees (c, b_<t). KL is exact
/// over the vocabulary at every block position, reference first. Gradients
/// (when `grad` is given) are for `policy` only.
QuarkLoss quark_loss(const PolicyHandle& policy, const PolicyHandle& reference, std::span<const QuarkSample> batch,
                     double kl_weight, std::vector<double>* grad);

struct IterationReport {
  std::vector<double> loss_trace;
  std::vector<std::size_t> quantile_draws;  // per k
  std::size_t resamples = 0;
  std::vector<std::size_t> bin_sizes;
};

/// Draws k uniformly from [1, K], redrawing while bin k is empty.
int draw_quantile(const Quantization& q, Rng& rng, std::size_t* resamples);

/// `steps_per_iteration` plain gradient steps on batches drawn by k, then
/// an entry uniformly from bin k.
IterationReport train_iteration(PolicyHandle& policy, const PolicyHandle& reference, const DataPool& pool,
                                const Quantization& quantization, const TrainConfig& config, Rng& rng);

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t pool_size = 0;
  RewardSummary pool_rewards;
  RewardSummary sample_rewards;  // this iteration's fresh samples
  IterationReport report;
};

struct TrainOptions {
  bool reset_pool = false;
  bool predict_plan = false;
  std::optional<std::set<std::string>> known_actions;
};

struct QuarkResult {
  PolicyHandle policy;
  std::vector<IterationRecord> history;
  DataPool pool;
};

/// N iterations of sample (conditioned on r_K) -> score -> quantize -> update,
/// starting from a trainable copy of `init`, regularized toward a frozen copy
/// of it.
QuarkResult train(const PolicyHandle& init, const PolicyHandle& user, std::span<const SampleContext> contexts,
                  const RewardFunction& reward, const TrainConfig& config, const TrainOptions& options = {});

/// Mean reward of blocks generated from each context with r_K conditioning
/// (or none when `reward_token` is nullopt).
double mean_generation_reward(const PolicyHandle& policy, const PolicyHandle& user,
                              std::span<const SampleContext> contexts, const RewardFunction& reward,
                              const InteractiveOptions& options, std::uint64_t seed);

/// One JSON object per iteration: {iteration, pool_size, reward_mean,
/// reward_quantiles, loss_trace, sample_reward_mean, quantile_draws,
/// resamples}.
void write_history(std::ostream& out, std::span<const IterationRecord> history);

}  // namespace wfc
