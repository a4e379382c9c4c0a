// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

// Fixtures shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wfc/corpus.hpp"
#include "wfc/rng.hpp"
#include "wfc/toy_model.hpp"
#include "wfc/vocabulary.hpp"

namespace wfc::testing {

inline Turn user(std::string text, int idx = 0) { return {Speaker::user, std::move(text), {}, idx, {}}; }
inline Turn sys(std::string text, int idx = 0) { return {Speaker::system, std::move(text), {}, idx, {}}; }
inline Turn act(std::string name, int idx = 0) { return {Speaker::action, "", std::move(name), idx, {}}; }

inline Dialogue dialogue(std::vector<Turn> turns, std::string id = "d0", std::string domain = "dom") {
  for (std::size_t i = 0; i < turns.size(); ++i) turns[i].turn_index = static_cast<int>(i);
  return {std::move(id), std::move(domain), std::move(turns), Split::train};
}

inline DomainSpec domain(std::vector<std::string> actions = {"A1", "A2", "A3"}) {
  DomainSpec d;
  d.domain_id = "dom";
  d.guideline = "do the steps in order";
  d.standard_sequence = actions;
  d.action_vocabulary = {actions.begin(), actions.end()};
  return d;
}

inline DomainSet domain_set(DomainSpec d = domain()) {
  DomainSet s;
  s.emplace(d.domain_id, std::move(d));
  return s;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> w = {"hello", "there", "account", "refund", "please", "thanks",
                                             "check", "order", "name", "email", "ok", "yes"};
  return w;
}

/// Random dialogue over actions A1..A3 with runs of actions and utterances
/// in any order (including empty and action-only dialogues).
inline Dialogue random_dialogue(Rng& rng, std::size_t max_turns = 14, std::string id = "r") {
  const std::size_t n = 1 + rng.index(max_turns);
  std::vector<Turn> turns;
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = rng.index(3);
    if (kind == 0) {
      turns.push_back(act("A" + std::to_string(1 + rng.index(3))));
    } else {
      std::string text;
      const std::size_t words = 1 + rng.index(4);
      for (std::size_t w = 0; w < words; ++w) {
        if (w) text += ' ';
        text += word_pool()[rng.index(word_pool().size())];
      }
      turns.push_back(kind == 1 ? user(text) : sys(text));
    }
  }
  return dialogue(std::move(turns), std::move(id));
}

inline std::shared_ptr<const Vocabulary> pool_vocab(int reward_tokens = 5) {
  auto words = word_pool();
  for (const char* a : {"A1", "A2", "A3"}) words.emplace_back(a);
  return std::make_shared<const Vocabulary>(words, reward_tokens);
}

/// Toy model with Gaussian parameters.
inline PolicyHandle random_policy(std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed, double scale = 0.5,
                                  PolicyRole role = PolicyRole::trainable) {
  auto model = std::make_shared<ToyLanguageModel>(*vocab);
  Rng rng(seed);
  model->randomize(rng, scale);
  return PolicyHandle(std::move(vocab), std::move(model), role);
}

/// |a - b| relative to the larger magnitude, with an absolute floor so two
/// near-zero values compare as equal.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between `analytic` and a central difference of
/// `loss` over `probes` parameter indices. Parameters are restored.
inline double max_fd_error(std::span<double> params, std::span<const double> analytic,
                           const std::vector<std::size_t>& probes, const std::function<double()>& loss,
                           double eps = 1e-5) {
  double worst = 0.0;
  for (auto i : probes) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = loss();
    params[i] = saved - eps;
    const double down = loss();
    params[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * eps)));
  }
  return worst;
}

/// `count` indices drawn from those where `grad` is nonzero (falling back to
/// any index when too few are).
inline std::vector<std::size_t> gradient_probes(std::span<const double> grad, std::size_t count, Rng& rng) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (grad[i] != 0.0) live.push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < count; ++n)
    out.push_back(live.empty() ? rng.index(grad.size()) : live[rng.index(live.size())]);
  return out;
}

}  // namespace wfc::testing
