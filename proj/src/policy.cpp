// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "wfc/errors.hpp"
#include "wfc/toy_model.hpp"

namespace wfc {

TokenId TokenDistribution::argmax() const {
  return static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

bool TokenDistribution::valid(double tol) const {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

TokenDistribution softmax(std::span<const double> logits, double temperature) {
  TokenDistribution d;
  d.probs.resize(logits.size());
  if (logits.empty()) return d;
  const double inv_t = 1.0 / temperature;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probs[i] = std::exp((logits[i] - mx) * inv_t);
    sum += d.probs[i];
  }
  for (auto& p : d.probs) p /= sum;
  return d;
}

std::string_view to_string(PolicyRole r) {
  switch (r) {
    case PolicyRole::trainable: return "trainable";
    case PolicyRole::frozen_reference: return "frozen_reference";
    case PolicyRole::user_simulator: return "user_simulator";
  }
  return "?";
}

PolicyHandle::PolicyHandle(std::shared_ptr<const Vocabulary> vocab, std::shared_ptr<LanguageModel> model,
                           PolicyRole role, GenerationDefaults defaults)
    : vocab_(std::move(vocab)), model_(std::move(model)), role_(role), defaults_(defaults) {
  if (!vocab_ || !model_) throw Error("policy needs a vocabulary and a model");
  if (model_->vocab_size() != vocab_->size()) throw Error("model and vocabulary sizes differ");
  set_defaults(defaults);
}

LanguageModel& PolicyHandle::mutable_model() {
  if (frozen()) throw FrozenPolicyError(std::string("policy is ") + std::string(to_string(role_)));
  return *model_;
}

void PolicyHandle::set_defaults(GenerationDefaults d) {
  if (d.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (!(d.temperature > 0.0)) throw ConfigError("temperature must be positive");
  defaults_ = d;
}

PolicyHandle clone_reference(const PolicyHandle& policy) { return copy_policy(policy, PolicyRole::frozen_reference); }

PolicyHandle copy_policy(const PolicyHandle& policy, PolicyRole role) {
  std::shared_ptr<LanguageModel> m = policy.model().clone();
  return PolicyHandle(policy.shared_vocab(), std::move(m), role, policy.defaults());
}

TokenDistribution next_token_distribution(const PolicyHandle& policy, std::span<const TokenId> prefix) {
  const std::size_t pos = prefix.size();
  const auto z = policy.model().logits(prefix, std::span<const std::size_t>(&pos, 1));
  return softmax(z);
}

namespace {

std::vector<std::uint8_t> allowed_mask(const Vocabulary& vocab, std::span<const TokenId> stops) {
  std::vector<std::uint8_t> allowed(vocab.size(), 0);
  for (std::size_t i = 0; i < vocab.size(); ++i) allowed[i] = vocab.is_text(static_cast<TokenId>(i)) ? 1 : 0;
  for (auto s : stops) allowed[static_cast<std::size_t>(s)] = 1;
  return allowed;
}

TokenId draw(std::span<const double> z, std::span<const std::uint8_t> allowed, double temperature, bool greedy,
             Rng& rng) {
  TokenId best = -1;
  double best_z = -INFINITY;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (allowed[i] && z[i] > best_z) best_z = z[i], best = static_cast<TokenId>(i);
  if (best < 0) throw Error("no token is allowed");
  if (greedy) return best;
  std::vector<double> w(z.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!allowed[i]) continue;
    w[i] = std::exp((z[i] - best_z) / temperature);
    sum += w[i];
  }
  double u = rng.uniform() * sum;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!allowed[i]) continue;
    u -= w[i];
    if (u < 0.0) return static_cast<TokenId>(i);
  }
  return best;
}

}  // namespace

TurnSample sample_turn(const PolicyHandle& policy, std::span<const TokenId> context, const TurnOptions& options,
                       Rng& rng) {
  if (!options.greedy && !(options.temperature > 0.0)) throw ConfigError("temperature must be positive");
  const auto allowed = allowed_mask(policy.vocab(), options.stop_tokens);
  std::vector<TokenId> seq(context.begin(), context.end());
  TurnSample out;
  while (out.tokens.size() < options.max_tokens) {
    const std::size_t pos = seq.size();
    const auto z = policy.model().logits(seq, std::span<const std::size_t>(&pos, 1));
    const TokenId t = draw(z, allowed, options.temperature, options.greedy, rng);
    if (std::find(options.stop_tokens.begin(), options.stop_tokens.end(), t) != options.stop_tokens.end()) {
      out.stop_token = t;
      return out;
    }
    out.tokens.push_back(t);
    seq.push_back(t);
  }
  return out;
}

TurnSample sample_turn(const PolicyHandle& policy, std::span<const TokenId> context, const TurnOptions& options,
                       std::uint64_t seed) {
  Rng rng(seed);
  return sample_turn(policy, context, options, rng);
}

TurnOptions agent_turn_options(const PolicyHandle& policy) {
  return TurnOptions{policy.defaults().temperature,
                     false,
                     policy.defaults().horizon,
                     {id_of(Special::end_agent), id_of(Special::end_dialogue), id_of(Special::start_action)}};
}

TurnOptions user_turn_options(const PolicyHandle& policy) {
  return TurnOptions{policy.defaults().temperature,
                     false,
                     policy.defaults().horizon,
                     {id_of(Special::end_user), id_of(Special::end_dialogue)}};
}

namespace {

std::vector<std::size_t> target_positions(const LmExample& ex) {
  if (ex.target.size() != ex.tokens.size()) throw Error("target mask and tokens differ in length");
  std::vector<std::size_t> pos;
  for (std::size_t p = 0; p < ex.tokens.size(); ++p)
    if (ex.target[p]) pos.push_back(p);
  return pos;
}

/// Sum of -log p at the targets; optionally dlogits of that sum times `scale`.
double example_nll(const LanguageModel& model, const LmExample& ex, double scale, std::vector<double>* grad) {
  const auto pos = target_positions(ex);
  if (pos.empty()) return 0.0;
  const std::size_t V = model.vocab_size();
  auto z = model.logits(ex.tokens, pos);
  double nll = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    std::span<double> row(z.data() + i * V, V);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(ex.tokens[pos[i]]);
    nll += log_z - row[y];
    if (grad) {
      for (auto& v : row) v = std::exp(v - log_z) * scale;
      row[y] -= scale;
    }
  }
  if (grad) model.backward(ex.tokens, pos, z, *grad);
  return nll;
}

}  // namespace

double teacher_forced_nll(const PolicyHandle& policy, const LmExample& example) {
  return example_nll(policy.model(), example, 0.0, nullptr);
}

double mean_token_nll(const PolicyHandle& policy, std::span<const LmExample> examples, std::vector<double>* grad) {
  std::size_t total = 0;
  for (const auto& ex : examples) total += ex.num_targets();
  if (total == 0) throw InputError("no target tokens in training examples");
  if (grad) grad->resize(policy.model().parameters().size(), 0.0);
  const double scale = 1.0 / static_cast<double>(total);
  double nll = 0.0;
  for (const auto& ex : examples) nll += example_nll(policy.model(), ex, scale, grad);
  return nll / static_cast<double>(total);
}

SftReport sft_train(PolicyHandle& policy, std::span<const LmExample> examples, const SftOptions& options) {
  if (examples.empty()) throw InputError("empty training corpus");
  auto& model = policy.mutable_model();
  SftReport report;
  report.epoch_nll.push_back(mean_token_nll(policy, examples, nullptr));

  const std::size_t n = examples.size();
  const std::size_t batch = options.batch_size == 0 ? n : std::min(options.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed);
  std::vector<double> grad;
  std::vector<LmExample> chunk;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    if (batch < n) rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(n, start + batch); ++i) chunk.push_back(examples[order[i]]);
      std::size_t targets = 0;
      for (const auto& ex : chunk) targets += ex.num_targets();
      if (targets == 0) continue;
      grad.assign(model.parameters().size(), 0.0);
      mean_token_nll(policy, chunk, &grad);
      auto params = model.mutable_parameters();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= options.lr * grad[i];
      ++report.steps;
    }
    report.epoch_nll.push_back(mean_token_nll(policy, examples, nullptr));
  }
  return report;
}

std::optional<std::string> parse_plan_span(const Vocabulary& vocab, std::span<const TokenId> span,
                                           const std::set<std::string>* known_actions) {
  if (span.size() != 1 || !vocab.is_text(span.front())) return std::nullopt;
  const auto& name = vocab.token(span.front());
  if (known_actions && !known_actions->contains(name)) return std::nullopt;
  return name;
}

PlanGeneration generate_with_plan(const PolicyHandle& policy, std::span<const TokenId> context,
                                  const PlanOptions& options, Rng& rng) {
  const auto& vocab = policy.vocab();
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.push_back(id_of(Special::start_workflow));
  PlanGeneration out;
  if (options.oracle_action) {
    const auto id = vocab.find(*options.oracle_action);
    if (!id || !vocab.is_text(*id)) throw SerializationError("oracle action '" + *options.oracle_action + "' is not in the vocabulary");
    out.plan_tokens = {*id};
    out.predicted_action = options.oracle_action;
  } else {
    TurnOptions plan{options.temperature, options.greedy, options.max_plan_tokens, {id_of(Special::end_workflow)}};
    out.plan_tokens = sample_turn(policy, seq, plan, rng).tokens;
    out.predicted_action =
        parse_plan_span(vocab, out.plan_tokens, options.known_actions ? &*options.known_actions : nullptr);
  }
  seq.insert(seq.end(), out.plan_tokens.begin(), out.plan_tokens.end());
  seq.push_back(id_of(Special::end_workflow));
  seq.push_back(id_of(Special::start_agent));
  auto turn = agent_turn_options(policy);
  turn.temperature = options.temperature;
  turn.greedy = options.greedy;
  out.response = sample_turn(policy, seq, turn, rng).tokens;
  return out;
}

// Checkpoints -----------------------------------------------------------------

nlohmann::json policy_to_json(const PolicyHandle& policy) {
  return {{"format", "wfc-policy"},
          {"version", kPolicyCheckpointVersion},
          {"vocabulary", policy.vocab().to_json()},
          {"defaults", {{"temperature", policy.defaults().temperature}, {"horizon", policy.defaults().horizon}}},
          {"model", policy.model().to_json()}};
}

PolicyHandle policy_from_json(const nlohmann::json& j, PolicyRole role) {
  try {
    if (j.at("format").get<std::string>() != "wfc-policy") throw CheckpointError("not a policy checkpoint");
    if (j.at("version").get<int>() != kPolicyCheckpointVersion)
      throw CheckpointError("unsupported policy checkpoint version " + j.at("version").dump());
    auto vocab = std::make_shared<const Vocabulary>(Vocabulary::from_json(j.at("vocabulary")));
    GenerationDefaults d{j.at("defaults").at("temperature").get<double>(),
                         j.at("defaults").at("horizon").get<std::size_t>()};
    const auto backend = j.at("model").at("backend").get<std::string>();
    if (backend != "toy-loglinear") throw CheckpointError("unknown policy backend '" + backend + "'");
    std::shared_ptr<LanguageModel> model = ToyLanguageModel::from_json(j.at("model"), *vocab);
    return PolicyHandle(std::move(vocab), std::move(model), role, d);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad policy checkpoint: ") + e.what());
  }
}

void save_policy(const std::filesystem::path& path, const PolicyHandle& policy) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << policy_to_json(policy).dump() << '\n';
}

PolicyHandle load_policy(const std::filesystem::path& path, PolicyRole role) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read " + path.string());
  try {
    return policy_from_json(nlohmann::json::parse(in), role);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace wfc
