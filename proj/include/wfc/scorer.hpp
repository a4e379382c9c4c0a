// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wfc/corpus.hpp"

namespace wfc {

/// Joins the planned action and the block into one scorer input:
///
///   "<action> || system: <text> || user: <text> ..."
///
/// Only the block is shown, never the surrounding dialogue context.
inline constexpr std::string_view kScorerSeparator = " || ";
std::string scorer_input(std::string_view action, const Block& block);

/// Text-to-scalar encoder behind the scorer; score and gradient must agree.
class ScalarEncoder {
 public:
  virtual ~ScalarEncoder() = default;
  virtual std::unique_ptr<ScalarEncoder> clone() const = 0;
  virtual std::string backend_name() const = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual std::span<double> mutable_parameters() = 0;
  virtual double score(std::string_view input) const = 0;
  /// Adds scale * d(score)/d(parameters) into grad.
  virtual void accumulate_gradient(std::string_view input, double scale, std::span<double> grad) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

/// Linear model over hashed sparse features of the scorer input: each block
/// token on its own, crossed with the action, and crossed with action and
/// speaker. Feature values are averaged over the block's tokens.
class HashedBagEncoder final : public ScalarEncoder {
 public:
  explicit HashedBagEncoder(std::size_t dim = 4096);

  std::unique_ptr<ScalarEncoder> clone() const override;
  std::string backend_name() const override { return "hashed-bag-linear"; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> mutable_parameters() override { return params_; }
  double score(std::string_view input) const override;
  void accumulate_gradient(std::string_view input, double scale, std::span<double> grad) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<HashedBagEncoder> from_json(const nlohmann::json& j);

  std::size_t dim() const noexcept { return dim_; }
  /// Sparse features (index, value); the last parameter is a bias.
  std::vector<std::pair<std::size_t, double>> features(std::string_view input) const;

 private:
  std::size_t dim_;
  std::vector<double> params_;  // dim_ weights + bias
};

/// Compliance reward model r(p, b).
class ComplianceScorer {
 public:
  explicit ComplianceScorer(std::unique_ptr<ScalarEncoder> encoder);
  ComplianceScorer(const ComplianceScorer& other);
  ComplianceScorer& operator=(const ComplianceScorer& other);
  ComplianceScorer(ComplianceScorer&&) noexcept = default;
  ComplianceScorer& operator=(ComplianceScorer&&) noexcept = default;

  const ScalarEncoder& encoder() const noexcept { return *encoder_; }
  ScalarEncoder& mutable_encoder() noexcept { return *encoder_; }

 private:
  std::unique_ptr<ScalarEncoder> encoder_;
};

ComplianceScorer make_toy_scorer(std::size_t dim = 4096);

/// Unbounded scalar; throws InputError for an empty block.
double raw_score(const ComplianceScorer& model, std::string_view action, const Block& block);

/// Logistic function.
double sigmoid(double x);
/// -log(sigmoid(gap)), evaluated without overflow.
double pairwise_loss_from_gap(double gap);
double pairwise_loss(const ComplianceScorer& model, const ComparisonTriplet& t);
/// Mean pairwise loss; adds its gradient into `grad` when given.
double mean_pairwise_loss(const ComplianceScorer& model, std::span<const ComparisonTriplet> triplets,
                          std::vector<double>* grad);

/// sigmoid(raw_score), in (0, 1).
double reward(const ComplianceScorer& model, std::string_view action, const Block& block);

/// Fraction of triplets with r(p, b_w) > r(p, b_l).
double ranking_accuracy(const ComplianceScorer& model, std::span<const ComparisonTriplet> triplets);

struct ScorerTrainOptions {
  std::size_t epochs = 10;
  double lr = 2e-5;
};

struct ScorerTrainReport {
  /// Mean pairwise loss before training and after each epoch.
  std::vector<double> loss_trace;
  double heldout_accuracy = 0.0;  // set when a held-out set is passed
};

/// Full-batch gradient descent on the mean pairwise loss.
ScorerTrainReport train_scorer(ComplianceScorer& model, std::span<const ComparisonTriplet> triplets,
                               const ScorerTrainOptions& options,
                               std::span<const ComparisonTriplet> heldout = {});

inline constexpr int kScorerCheckpointVersion = 1;
void save_scorer(const std::filesystem::path& path, const ComplianceScorer& model);
ComplianceScorer load_scorer(const std::filesystem::path& path);

}  // namespace wfc
