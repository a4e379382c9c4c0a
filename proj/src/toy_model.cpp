// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/toy_model.hpp"

#include <algorithm>

#include "wfc/errors.hpp"

namespace wfc {

namespace {

bool region_opener(TokenId id) {
  return id == id_of(Special::start_user) || id == id_of(Special::start_agent) ||
         id == id_of(Special::start_workflow) || id == id_of(Special::start_action) ||
         id == id_of(Special::start_dialog);
}

}  // namespace

ToyLanguageModel::ToyLanguageModel(const Vocabulary& vocab, std::size_t context_limit)
    : vocab_size_(vocab.size()),
      context_limit_(context_limit),
      num_reward_tokens_(vocab.num_reward_tokens()),
      params_(vocab_size_ + (5 + static_cast<std::size_t>(num_reward_tokens_)) * vocab_size_ * vocab_size_, 0.0) {
  if (context_limit_ == 0) throw ConfigError("context limit must be positive");
}

std::unique_ptr<LanguageModel> ToyLanguageModel::clone() const { return std::make_unique<ToyLanguageModel>(*this); }

std::vector<ToyLanguageModel::Features> ToyLanguageModel::features(std::span<const TokenId> tokens,
                                                                   std::size_t upto) const {
  const auto first_reward = static_cast<TokenId>(kNumSpecials);
  const auto last_reward = first_reward + num_reward_tokens_;
  const auto first_text = last_reward;
  std::vector<Features> out;
  out.reserve(upto + 1);
  Features f;
  f.fill(-1);
  bool pending_plan = false;
  out.push_back(f);
  for (std::size_t p = 1; p <= upto; ++p) {
    const TokenId x = tokens[p - 1];
    if (x < 0 || static_cast<std::size_t>(x) >= vocab_size_)
      throw SerializationError("token id " + std::to_string(x) + " outside the model vocabulary");
    f[second_last] = f[last];
    f[last] = x;
    if (pending_plan) {
      if (x >= first_text) f[plan] = x;
      pending_plan = false;
    }
    if (x == id_of(Special::start_workflow) || x == id_of(Special::start_action)) pending_plan = true;
    if (region_opener(x)) f[region] = x;
    if (x >= first_reward && x < last_reward) f[reward] = x;
    if (f[reward] >= 0 && f[plan] >= 0)
      f[reward_plan] = (f[reward] - first_reward) * static_cast<std::int64_t>(vocab_size_) + f[plan];
    out.push_back(f);
  }
  return out;
}

std::vector<double> ToyLanguageModel::logits(std::span<const TokenId> tokens,
                                             std::span<const std::size_t> positions) const {
  const std::size_t V = vocab_size_;
  std::vector<double> out(positions.size() * V);
  if (positions.empty()) return out;
  const std::size_t upto = positions.back();
  if (upto > tokens.size()) throw SerializationError("position beyond the token sequence");
  if (upto >= context_limit_) throw ContextOverflowError(upto, context_limit_);
  const auto feats = features(tokens, upto);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    double* z = out.data() + i * V;
    std::copy_n(params_.data(), V, z);
    const auto& f = feats[positions[i]];
    for (std::size_t s = 0; s < kNumSlots; ++s) {
      if (f[s] < 0) continue;
      const double* row = params_.data() + table_offset(static_cast<Slot>(s), f[s]);
      for (std::size_t v = 0; v < V; ++v) z[v] += row[v];
    }
  }
  return out;
}

void ToyLanguageModel::backward(std::span<const TokenId> tokens, std::span<const std::size_t> positions,
                                std::span<const double> dlogits, std::span<double> grad) const {
  const std::size_t V = vocab_size_;
  if (positions.empty()) return;
  if (grad.size() != params_.size()) throw Error("gradient buffer has the wrong size");
  if (positions.back() >= context_limit_) throw ContextOverflowError(positions.back(), context_limit_);
  const auto feats = features(tokens, positions.back());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double* g = dlogits.data() + i * V;
    for (std::size_t v = 0; v < V; ++v) grad[v] += g[v];
    const auto& f = feats[positions[i]];
    for (std::size_t s = 0; s < kNumSlots; ++s) {
      if (f[s] < 0) continue;
      double* row = grad.data() + table_offset(static_cast<Slot>(s), f[s]);
      for (std::size_t v = 0; v < V; ++v) row[v] += g[v];
    }
  }
}

void ToyLanguageModel::randomize(Rng& rng, double scale) {
  for (auto& p : params_) p = scale * rng.normal();
}

nlohmann::json ToyLanguageModel::to_json() const {
  return {{"backend", backend_name()},
          {"vocab_size", vocab_size_},
          {"context_limit", context_limit_},
          {"num_reward_tokens", num_reward_tokens_},
          {"params", params_}};
}

std::unique_ptr<ToyLanguageModel> ToyLanguageModel::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  try {
    if (j.at("backend").get<std::string>() != "toy-loglinear") throw CheckpointError("not a toy-loglinear model");
    if (j.at("vocab_size").get<std::size_t>() != vocab.size() ||
        j.at("num_reward_tokens").get<int>() != vocab.num_reward_tokens())
      throw CheckpointError("model and vocabulary disagree");
    auto m = std::make_unique<ToyLanguageModel>(vocab, j.at("context_limit").get<std::size_t>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != m->params_.size()) throw CheckpointError("parameter count mismatch");
    m->params_ = std::move(params);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad toy model: ") + e.what());
  }
}

PolicyHandle make_toy_policy(std::shared_ptr<const Vocabulary> vocab, PolicyRole role, GenerationDefaults defaults,
                             std::size_t context_limit) {
  auto model = std::make_shared<ToyLanguageModel>(*vocab, context_limit);
  return PolicyHandle(std::move(vocab), std::move(model), role, defaults);
}

}  // namespace wfc
