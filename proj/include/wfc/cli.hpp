// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wfc/corpus.hpp"
#include "wfc/eval.hpp"
#include "wfc/policy.hpp"
#include "wfc/quark.hpp"
#include "wfc/scorer.hpp"
#include "wfc/synthetic.hpp"

namespace wfc {

/// Experiment settings read from a `key = value` file. Every key can be
/// overridden through the environment as WFC_<KEY> (upper case), and a few
/// through command-line flags. Relative paths are taken from the config
/// file's directory.
struct ExperimentConfig {
  std::filesystem::path corpus;
  std::filesystem::path domains;
  std::filesystem::path work_dir;  // checkpoints, histories and reports

  Variant variant = Variant::action_plan;
  bool oracle_actions = false;
  bool reset_pool = false;
  std::uint64_t seed = 0;

  TrainConfig train;
  SftOptions sft;
  ScorerTrainOptions scorer;
  std::size_t scorer_dim = 4096;
  std::size_t negatives_per_positive = 1;
  std::string reward = "scorer";  // or "keyword"
  std::size_t context_limit = 1024;
  std::size_t human_eval_count = kDefaultHumanEvalCount;
  std::size_t judge_parallel = 4;
  std::chrono::milliseconds judge_timeout{30000};

  /// Effective key/value pairs after defaults, file and overrides.
  std::map<std::string, std::string> values;

  std::filesystem::path artifact(std::string_view name) const { return work_dir / std::string(name); }
  /// Hash of the effective key/value pairs.
  std::string fingerprint() const;
};

/// Artifact file names under work_dir.
namespace artifacts {
inline constexpr std::string_view sft_policy = "sft_policy.json";
inline constexpr std::string_view user_simulator = "user_simulator.json";
inline constexpr std::string_view scorer = "scorer.json";
inline constexpr std::string_view triplets = "triplets.jsonl";
inline constexpr std::string_view quark_policy = "quark_policy.json";
inline constexpr std::string_view quark_history = "quark_history.jsonl";
inline constexpr std::string_view quark_pool = "quark_pool.jsonl";
inline constexpr std::string_view report = "report.json";
inline constexpr std::string_view report_csv = "report.csv";
inline constexpr std::string_view human_eval = "human_eval.csv";
inline constexpr std::string_view human_eval_guidelines = "human_eval_guidelines.txt";
inline constexpr std::string_view judge = "judge.jsonl";
}  // namespace artifacts

std::map<std::string, std::string> default_config_values();

/// Builds a config from `values` (unknown keys are rejected) resolving
/// relative paths against `base_dir`. Throws ConfigError.
ExperimentConfig make_config(const std::map<std::string, std::string>& values, const std::filesystem::path& base_dir);

/// Reads `file`, then applies WFC_* environment variables (when `use_env`),
/// then `overrides`.
ExperimentConfig load_config(const std::filesystem::path& file, const std::map<std::string, std::string>& overrides = {},
                             bool use_env = true);

struct IngestSummary {
  std::size_t dialogues = 0;
  std::size_t blocks = 0;
  std::size_t labeled_blocks = 0;
  std::size_t action_executions = 0;
  std::map<std::string, std::size_t> per_action;
  std::map<std::string, std::size_t> per_split;
};

struct SftSummary {
  SftReport system;
  SftReport user;
  std::size_t vocab_size = 0;
};

IngestSummary cmd_ingest(const ExperimentConfig& cfg, std::ostream& out);
SftSummary cmd_train_sft(const ExperimentConfig& cfg, std::ostream& out);
ScorerTrainReport cmd_train_scorer(const ExperimentConfig& cfg, std::ostream& out);
std::vector<IterationRecord> cmd_train_quark(const ExperimentConfig& cfg, std::ostream& out);
MetricReport cmd_evaluate(const ExperimentConfig& cfg, std::ostream& out);
AnnotationSheet cmd_export_human_eval(const ExperimentConfig& cfg, std::size_t count, std::ostream& out);
/// Renders an evaluation prompt per generated block and, with a transport,
/// collects the judge's labels. Returns the number of parsed labels.
std::size_t cmd_judge(const ExperimentConfig& cfg, const JudgeTransport* transport, std::ostream& out);

/// Writes corpus.jsonl, domains.jsonl and fixture.cfg into `dir`.
void cmd_make_fixture(const std::filesystem::path& dir, const FixtureOptions& options, std::ostream& out);

/// Entry point of the `wfc` tool. Exit codes: 0 success, 1 invalid input or
/// configuration, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Multi-line plain-text rendering of turns ("user: ...", "action: ...").
std::string render_turns(std::span<const Turn> turns);

}  // namespace wfc
