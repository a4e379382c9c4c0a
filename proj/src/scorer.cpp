// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/scorer.hpp"

#include <cmath>
#include <fstream>

#include "wfc/errors.hpp"

namespace wfc {

std::string scorer_input(std::string_view action, const Block& block) {
  std::string s(action);
  for (const auto& u : block.utterances) {
    s += kScorerSeparator;
    s += to_string(u.speaker);
    s += ": ";
    s += normalize_text(u.text);
  }
  return s;
}

namespace {

std::uint64_t fnv1a(std::string_view a, std::string_view b = {}, std::string_view c = {}) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  feed(a);
  feed(b);
  feed(c);
  return h;
}

}  // namespace

HashedBagEncoder::HashedBagEncoder(std::size_t dim) : dim_(dim), params_(dim + 1, 0.0) {
  if (dim == 0) throw ConfigError("encoder dimension must be positive");
}

std::unique_ptr<ScalarEncoder> HashedBagEncoder::clone() const { return std::make_unique<HashedBagEncoder>(*this); }

std::vector<std::pair<std::size_t, double>> HashedBagEncoder::features(std::string_view input) const {
  const auto words = split_words(input);
  if (words.empty()) throw InputError("empty scorer input");
  const std::string& action = words.front();
  std::string speaker;
  std::vector<std::pair<std::size_t, double>> feats;
  std::size_t count = 0;
  for (std::size_t i = 1; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w == "||") continue;
    if (w.size() > 1 && w.back() == ':' && (w == "system:" || w == "user:")) {
      speaker = w;
      continue;
    }
    ++count;
    feats.emplace_back(fnv1a("u", w) % dim_, 1.0);
    feats.emplace_back(fnv1a("x", action, w) % dim_, 1.0);
    feats.emplace_back(fnv1a(speaker, action, w) % dim_, 1.0);
  }
  if (count > 0)
    for (auto& f : feats) f.second /= static_cast<double>(count);
  feats.emplace_back(dim_, 1.0);
  return feats;
}

double HashedBagEncoder::score(std::string_view input) const {
  double s = 0.0;
  for (const auto& [i, v] : features(input)) s += params_[i] * v;
  return s;
}

void HashedBagEncoder::accumulate_gradient(std::string_view input, double scale, std::span<double> grad) const {
  for (const auto& [i, v] : features(input)) grad[i] += scale * v;
}

nlohmann::json HashedBagEncoder::to_json() const {
  return {{"backend", backend_name()}, {"dim", dim_}, {"params", params_}};
}

std::unique_ptr<HashedBagEncoder> HashedBagEncoder::from_json(const nlohmann::json& j) {
  auto enc = std::make_unique<HashedBagEncoder>(j.at("dim").get<std::size_t>());
  auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != enc->params_.size()) throw CheckpointError("scorer parameter count mismatch");
  enc->params_ = std::move(p);
  return enc;
}

ComplianceScorer::ComplianceScorer(std::unique_ptr<ScalarEncoder> encoder) : encoder_(std::move(encoder)) {
  if (!encoder_) throw Error("scorer needs an encoder");
}

ComplianceScorer::ComplianceScorer(const ComplianceScorer& other) : encoder_(other.encoder_->clone()) {}

ComplianceScorer& ComplianceScorer::operator=(const ComplianceScorer& other) {
  if (this != &other) encoder_ = other.encoder_->clone();
  return *this;
}

ComplianceScorer make_toy_scorer(std::size_t dim) { return ComplianceScorer(std::make_unique<HashedBagEncoder>(dim)); }

double raw_score(const ComplianceScorer& model, std::string_view action, const Block& block) {
  if (block.empty()) throw InputError("cannot score an empty block");
  return model.encoder().score(scorer_input(action, block));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double pairwise_loss_from_gap(double gap) {
  // log(1 + exp(-gap))
  if (gap > 0) return std::log1p(std::exp(-gap));
  return -gap + std::log1p(std::exp(gap));
}

double pairwise_loss(const ComplianceScorer& model, const ComparisonTriplet& t) {
  return pairwise_loss_from_gap(raw_score(model, t.planned_action, t.preferred) -
                                raw_score(model, t.planned_action, t.rejected));
}

double mean_pairwise_loss(const ComplianceScorer& model, std::span<const ComparisonTriplet> triplets,
                          std::vector<double>* grad) {
  if (triplets.empty()) throw InputError("no triplets");
  const auto& enc = model.encoder();
  if (grad) grad->resize(enc.parameters().size(), 0.0);
  const double n = static_cast<double>(triplets.size());
  double total = 0.0;
  for (const auto& t : triplets) {
    const auto in_w = scorer_input(t.planned_action, t.preferred);
    const auto in_l = scorer_input(t.planned_action, t.rejected);
    if (t.preferred.empty() || t.rejected.empty()) throw InputError("cannot score an empty block");
    const double gap = enc.score(in_w) - enc.score(in_l);
    total += pairwise_loss_from_gap(gap);
    if (grad) {
      // d/dgap -log sigmoid(gap) = -sigmoid(-gap)
      const double d = -sigmoid(-gap) / n;
      enc.accumulate_gradient(in_w, d, *grad);
      enc.accumulate_gradient(in_l, -d, *grad);
    }
  }
  return total / n;
}

double reward(const ComplianceScorer& model, std::string_view action, const Block& block) {
  return sigmoid(raw_score(model, action, block));
}

double ranking_accuracy(const ComplianceScorer& model, std::span<const ComparisonTriplet> triplets) {
  if (triplets.empty()) throw InputError("no triplets");
  std::size_t correct = 0;
  for (const auto& t : triplets)
    if (raw_score(model, t.planned_action, t.preferred) > raw_score(model, t.planned_action, t.rejected)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

ScorerTrainReport train_scorer(ComplianceScorer& model, std::span<const ComparisonTriplet> triplets,
                               const ScorerTrainOptions& options, std::span<const ComparisonTriplet> heldout) {
  if (triplets.empty()) throw InputError("empty triplet set");
  ScorerTrainReport report;
  auto& enc = model.mutable_encoder();
  std::vector<double> grad;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    grad.assign(enc.parameters().size(), 0.0);
    report.loss_trace.push_back(mean_pairwise_loss(model, triplets, &grad));
    auto params = enc.mutable_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= options.lr * grad[i];
  }
  report.loss_trace.push_back(mean_pairwise_loss(model, triplets, nullptr));
  if (!heldout.empty()) report.heldout_accuracy = ranking_accuracy(model, heldout);
  return report;
}

void save_scorer(const std::filesystem::path& path, const ComplianceScorer& model) {
  nlohmann::json j = {{"format", "wfc-scorer"},
                      {"version", kScorerCheckpointVersion},
                      {"separator", std::string(kScorerSeparator)},
                      {"encoder", model.encoder().to_json()}};
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << j.dump() << '\n';
}

ComplianceScorer load_scorer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "wfc-scorer") throw CheckpointError("not a scorer checkpoint");
    if (j.at("version").get<int>() != kScorerCheckpointVersion) throw CheckpointError("unsupported scorer version");
    const auto backend = j.at("encoder").at("backend").get<std::string>();
    if (backend != "hashed-bag-linear") throw CheckpointError("unknown scorer backend '" + backend + "'");
    return ComplianceScorer(HashedBagEncoder::from_json(j.at("encoder")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace wfc
