// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "wfc/corpus.hpp"
#include "wfc/errors.hpp"
#include "wfc/sampler.hpp"
#include "wfc/scorer.hpp"

namespace wfc {

// ---------------------------------------------------------------------------
// Similarity and diversity

using PairwiseSimilarity = std::function<double(std::string_view pred, std::string_view target)>;

/// Mean over predictions of the best similarity to any target.
double block_similarity(std::span<const std::string> preds, std::span<const std::string> targets,
                        const PairwiseSimilarity& sim);

/// Token-overlap F1 between two utterances (bag of words with multiplicity).
/// Two empty utterances score 1.
double token_f1(std::string_view pred, std::string_view target);

/// Sentence BLEU up to `max_n`-grams with add-one smoothing on the n > 1
/// precisions and the standard brevity penalty. An empty prediction scores 0.
double sentence_bleu(std::string_view pred, std::string_view target, int max_n = 4);

/// Distinct n-grams over total n-grams, counting n-grams within each
/// utterance only.
double dist_n(std::span<const std::vector<std::string>> utterances, int n);
double dist_n(std::span<const std::string> utterances, int n);

/// Positional exact match; nullopt (an unknown predicted action) never
/// matches.
double workflow_accuracy(std::span<const std::optional<std::string>> predicted, std::span<const std::string> gold);

// ---------------------------------------------------------------------------
// Compliance

struct ScoredItem {
  std::string planned_action;
  Block block;
};

struct ComplianceResult {
  double mean = 0.0;
  std::vector<double> scores;
};

ComplianceResult compliance_eval(std::span<const ScoredItem> items, const RewardFunction& reward);
ComplianceResult compliance_eval(std::span<const ScoredItem> items, const ComplianceScorer& scorer);

// ---------------------------------------------------------------------------
// Reports

struct ModelMetrics {
  std::string model;
  double compliance_mean = 0.0;
  std::map<std::string, double> block_similarity;  // metric name -> value
  double dist3 = 0.0;
  std::optional<double> workflow_accuracy;  // models that predict their plan
  std::size_t items = 0;
  std::size_t unknown_actions = 0;
};

struct MetricReport {
  std::string config_fingerprint;
  std::vector<ModelMetrics> models;

  /// Throws Error when a value is non-finite or out of range.
  void validate() const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  void write_csv(std::ostream& out) const;
};

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fingerprint(std::string_view text);

// ---------------------------------------------------------------------------
// Judge prompts

enum class PromptKind { generation, evaluation };

/// Raised when a template placeholder has no value.
class MissingFieldError : public InputError {
 public:
  explicit MissingFieldError(std::string field)
      : InputError("missing prompt field '" + field + "'"), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Placeholders in template order. generation: s, w, g, example_str, i.
/// evaluation: s, w, g, i, r.
std::vector<std::string> prompt_fields(PromptKind kind);

/// Substitutes `fields` into the fixed judge templates. Extra keys are ignored.
std::string render_judge_prompt(PromptKind kind, const std::map<std::string, std::string>& fields);

/// Leading "0" or "1" after optional whitespace; anything else is nullopt,
/// logged as a warning.
std::optional<int> parse_judge_response(std::string_view response);

class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  /// Must be safe to call from several threads at once. Throws Error on
  /// transport failure or timeout.
  virtual std::string complete(const std::string& prompt) const = 0;
};

/// Runs `command` through /bin/sh once per prompt, writing the prompt to its
/// stdin and reading the reply from its stdout.
class PipeTransport final : public JudgeTransport {
 public:
  PipeTransport(std::string command, std::chrono::milliseconds timeout);
  std::string complete(const std::string& prompt) const override;

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

/// POSTs {"prompt": ...} as JSON to http://host:port/path. Accepts a JSON
/// reply with a "response" string, or plain text.
class HttpTransport final : public JudgeTransport {
 public:
  HttpTransport(std::string host, int port, std::string path, std::chrono::milliseconds timeout);
  std::string complete(const std::string& prompt) const override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

/// Sends every prompt with at most `max_parallel` calls in flight. Failed
/// calls and unparseable replies give nullopt.
std::vector<std::optional<int>> judge_all(const JudgeTransport& transport, std::span<const std::string> prompts,
                                          std::size_t max_parallel = 4);

// ---------------------------------------------------------------------------
// Human annotation export

struct HumanEvalItem {
  std::string id;
  std::string context;
  std::string planned_action;
  std::string block;
};

struct AnnotationSheet {
  std::vector<HumanEvalItem> rows;
  std::string guidelines;

  /// Columns id, context, planned_action, block, compliance, coherence; the
  /// two label columns are left blank for annotators (0 or 1).
  void write_csv(std::ostream& out) const;
};

inline constexpr std::size_t kDefaultHumanEvalCount = 100;

/// Annotator instructions attached to every sheet.
std::string_view human_eval_guidelines();

/// Seeded uniform sample of k items without replacement, in shuffled order.
AnnotationSheet export_human_eval(std::span<const HumanEvalItem> samples, std::size_t k = kDefaultHumanEvalCount,
                                  std::uint64_t seed = 0);

/// RFC 4180 quoting when the field needs it.
std::string csv_field(std::string_view s);

}  // namespace wfc
