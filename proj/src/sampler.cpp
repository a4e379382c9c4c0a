// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "wfc/log.hpp"

namespace wfc {

double KeywordReward::reward(const std::string& planned_action, const Block& block) const {
  auto it = keywords_.find(planned_action);
  if (it == keywords_.end() || it->second.empty()) return 0.0;
  std::set<std::string> words;
  for (const auto& u : block.utterances)
    if (u.speaker == Speaker::system)
      for (auto& w : split_words(u.text)) words.insert(std::move(w));
  std::size_t hit = 0;
  for (const auto& k : it->second)
    if (words.contains(k)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(it->second.size());
}

SampleContext make_sample_context(std::span<const Turn> prefix, const DomainSpec& domain, const Vocabulary& vocab,
                                  Variant variant, PlannedAction planned, std::string id) {
  SampleContext c;
  c.id = std::move(id);
  c.domain_id = domain.domain_id;
  c.variant = variant;
  c.planned = std::move(planned);
  c.system_tokens = serialize(prefix, variant, domain, vocab, {.closed = false}).token_ids;
  c.user_tokens = serialize(prefix, Variant::no_action, domain, vocab, {.closed = false}).token_ids;
  return c;
}

std::vector<SampleContext> build_sample_contexts(std::span<const Dialogue> dialogues, const DomainSet& domains,
                                                 const Vocabulary& vocab, Variant variant, std::optional<Split> split) {
  std::vector<SampleContext> out;
  for (const auto& d : dialogues) {
    if (split && d.split != *split) continue;
    const auto& domain = domains.at(d.domain_id);
    const auto labeled = assign_planned_actions(d);
    const auto blocks = segment_blocks(labeled);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& block = blocks[b];
      if (block.planned_action.is_none()) continue;
      std::size_t first = block.span_begin;
      while (first <= block.span_end && labeled.turns[first].speaker != Speaker::system) ++first;
      if (first > block.span_end) continue;
      std::span<const Turn> prefix(labeled.turns.data(), first);
      auto c = make_sample_context(prefix, domain, vocab, variant, block.planned_action,
                                   d.dialogue_id + "#" + std::to_string(b));
      c.prefix.assign(prefix.begin(), prefix.end());
      c.gold.assign(labeled.turns.begin() + static_cast<std::ptrdiff_t>(first),
                    labeled.turns.begin() + static_cast<std::ptrdiff_t>(block.span_end) + 1);
      out.push_back(std::move(c));
    }
  }
  return out;
}

SampledBlock interactive_sample(const PolicyHandle& system, const PolicyHandle& user, const SampleContext& context,
                                const InteractiveOptions& options, std::uint64_t seed) {
  if (options.rounds < 1) throw ConfigError("interactive sampling needs at least one round");
  if (!user.frozen()) throw FrozenPolicyError("the user simulator must be frozen during sampling");
  const auto& vocab = system.vocab();
  Rng rng(seed);

  SampledBlock out;
  out.context_id = context.id;
  out.context_tokens = context.system_tokens;
  out.block.planned_action = context.planned;
  out.block.dialogue_id = context.id;

  std::vector<TokenId> sys = context.system_tokens;
  if (options.reward_token) sys.push_back(*options.reward_token);
  const std::size_t block_start = sys.size();
  std::vector<TokenId> usr = context.user_tokens;

  const bool plan_markup = context.variant == Variant::action_plan;
  std::vector<TokenId> plan_span;
  if (plan_markup && !options.predict_plan && context.planned.action)
    plan_span = {vocab.id(*context.planned.action)};

  auto agent = agent_turn_options(system);
  agent.temperature = options.temperature;
  agent.greedy = options.greedy;
  auto customer = user_turn_options(user);
  customer.temperature = options.temperature;
  customer.greedy = options.greedy;

  auto add_utterance = [&](Speaker who, const std::vector<TokenId>& tokens) {
    Turn t;
    t.speaker = who;
    t.text = vocab.decode_text(tokens);
    t.turn_index = static_cast<int>(out.block.utterances.size());
    out.block.utterances.push_back(std::move(t));
    out.block.span_end = out.block.utterances.size() - 1;
    if (options.record_contexts) out.system_contexts.push_back(sys);
  };
  auto finish = [&] { out.block_tokens.assign(sys.begin() + static_cast<std::ptrdiff_t>(block_start), sys.end()); };

  try {
    for (std::size_t round = 0; round < options.rounds; ++round) {
      if (plan_markup) {
        if (options.predict_plan && round == 0) {
          sys.push_back(id_of(Special::start_workflow));
          TurnOptions p{options.temperature, options.greedy, 4, {id_of(Special::end_workflow)}};
          plan_span = sample_turn(system, sys, p, rng).tokens;
          out.predicted_action =
              parse_plan_span(vocab, plan_span, options.known_actions ? &*options.known_actions : nullptr);
          out.unknown_action = !out.predicted_action.has_value();
          sys.insert(sys.end(), plan_span.begin(), plan_span.end());
          sys.push_back(id_of(Special::end_workflow));
        } else if (!plan_span.empty()) {
          sys.push_back(id_of(Special::start_workflow));
          sys.insert(sys.end(), plan_span.begin(), plan_span.end());
          sys.push_back(id_of(Special::end_workflow));
        }
      }
      sys.push_back(id_of(Special::start_agent));
      const auto s = sample_turn(system, sys, agent, rng);
      sys.insert(sys.end(), s.tokens.begin(), s.tokens.end());
      sys.push_back(id_of(Special::end_agent));
      usr.push_back(id_of(Special::start_agent));
      usr.insert(usr.end(), s.tokens.begin(), s.tokens.end());
      usr.push_back(id_of(Special::end_agent));
      add_utterance(Speaker::system, s.tokens);
      if (s.stop_token == id_of(Special::end_dialogue) || s.stop_token == id_of(Special::start_action)) {
        out.early_stop = true;
        break;
      }

      usr.push_back(id_of(Special::start_user));
      const auto u = sample_turn(user, usr, customer, rng);
      usr.insert(usr.end(), u.tokens.begin(), u.tokens.end());
      usr.push_back(id_of(Special::end_user));
      sys.push_back(id_of(Special::start_user));
      sys.insert(sys.end(), u.tokens.begin(), u.tokens.end());
      sys.push_back(id_of(Special::end_user));
      add_utterance(Speaker::user, u.tokens);
      if (u.stop_token == id_of(Special::end_dialogue)) {
        out.early_stop = true;
        break;
      }
    }
  } catch (const ContextOverflowError& e) {
    finish();
    throw TruncationError(std::string("block truncated: ") + e.what(), std::move(out));
  }
  finish();
  return out;
}

std::size_t score_and_pool(DataPool& pool, std::span<const SampledBlock> samples, const RewardFunction& reward,
                           int iteration, std::span<const std::uint64_t> seeds) {
  std::size_t added = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.block.empty() || s.block.planned_action.is_none()) {
      log_warning("dropping unscorable block from context '" + s.context_id + "'");
      continue;
    }
    const auto& action = *s.block.planned_action.action;
    const double r = reward.reward(action, s.block);
    if (!std::isfinite(r) || r < 0.0 || r > 1.0) {
      log_warning("dropping block with reward outside [0, 1] from context '" + s.context_id + "'");
      continue;
    }
    pool.append(PoolEntry{s.context_id, s.context_tokens, s.block_tokens, s.block, action, r, iteration,
                          i < seeds.size() ? seeds[i] : 0});
    ++added;
  }
  return added;
}

double quantile(std::vector<double> values, double level) {
  if (values.empty()) throw UndefinedMetricError("quantile of an empty set");
  const double h = (static_cast<double>(values.size()) - 1.0) * level;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (lo + 1 >= values.size() || h == static_cast<double>(lo)) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

RewardSummary summarize(std::span<const double> rewards) {
  RewardSummary s;
  s.count = rewards.size();
  if (rewards.empty()) return s;
  double sum = 0.0;
  for (double r : rewards) sum += r;
  s.mean = sum / static_cast<double>(rewards.size());
  std::vector<double> v(rewards.begin(), rewards.end());
  for (double level : kSummaryLevels) s.quantiles.push_back(quantile(v, level));
  return s;
}

PoolStats pool_stats(const DataPool& pool) {
  PoolStats st;
  std::vector<double> all;
  std::map<int, std::vector<double>> by_iter;
  for (const auto& e : pool.entries()) {
    all.push_back(e.reward);
    by_iter[e.iteration].push_back(e.reward);
  }
  st.overall = summarize(all);
  for (const auto& [it, rs] : by_iter) st.per_iteration[it] = summarize(rs);
  return st;
}

void write_pool(std::ostream& out, const DataPool& pool, const Vocabulary& vocab) {
  for (const auto& e : pool.entries()) {
    std::vector<std::string> ctx;
    ctx.reserve(e.context_tokens.size());
    for (auto id : e.context_tokens) ctx.push_back(vocab.token(id));
    nlohmann::json utts = nlohmann::json::array();
    for (const auto& u : e.block.utterances) utts.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
    nlohmann::json j = {{"context_id", e.context_id}, {"context_tokens", ctx},       {"block_utterances", utts},
                        {"planned_action", e.planned_action}, {"reward", e.reward}, {"iteration", e.iteration},
                        {"seed", e.seed}};
    out << j.dump() << '\n';
  }
}

}  // namespace wfc
