// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "wfc/errors.hpp"
#include "wfc/sampler.hpp"

using namespace wfc;
using namespace wfc::testing;

namespace {

/// Parameter-free model with hand-written next tokens. An agent turn says
/// "ok", or ends the dialogue once `stop_after` agent turns have opened; a
/// user turn says "thanks". Any other word closes the current turn.
class ScriptedModel final : public LanguageModel {
 public:
  ScriptedModel(const Vocabulary& v, std::size_t stop_after) : vocab_(v), stop_after_(stop_after) {}
  std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<ScriptedModel>(*this); }
  std::string backend_name() const override { return "scripted"; }
  std::size_t vocab_size() const override { return vocab_.size(); }
  std::size_t context_limit() const override { return 100000; }
  std::span<const double> parameters() const override { return {}; }
  std::span<double> mutable_parameters() override { return {}; }
  std::vector<double> logits(std::span<const TokenId> tokens, std::span<const std::size_t> positions) const override {
    const std::size_t V = vocab_.size();
    std::vector<double> z(positions.size() * V, 0.0);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto pos = positions[i];
      TokenId want = id_of(Special::end_agent);
      std::size_t opened = 0;
      TokenId region = -1;
      for (std::size_t p = 0; p < pos; ++p) {
        if (tokens[p] == id_of(Special::start_agent)) ++opened, region = tokens[p];
        if (tokens[p] == id_of(Special::start_user)) region = tokens[p];
      }
      const TokenId last = pos ? tokens[pos - 1] : -1;
      if (last == id_of(Special::start_agent))
        want = opened >= stop_after_ ? id_of(Special::end_dialogue) : *vocab_.find("ok");
      else if (last == id_of(Special::start_user))
        want = *vocab_.find("thanks");
      else
        want = region == id_of(Special::start_user) ? id_of(Special::end_user) : id_of(Special::end_agent);
      z[i * V + static_cast<std::size_t>(want)] = 50.0;
    }
    return z;
  }
  void backward(std::span<const TokenId>, std::span<const std::size_t>, std::span<const double>,
                std::span<double>) const override {}
  nlohmann::json to_json() const override { return {{"backend", "scripted"}}; }

 private:
  const Vocabulary& vocab_;
  std::size_t stop_after_;
};

SampleContext simple_context(const Vocabulary& v, std::vector<Turn> prefix, const std::string& action = "A1") {
  return make_sample_context(prefix, domain(), v, Variant::action_plan, PlannedAction{action}, "c");
}

/// Random policies that never end a dialogue or emit an action.
std::pair<PolicyHandle, PolicyHandle> non_stopping_pair(std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed) {
  auto sys = random_policy(vocab, seed, 1.0);
  auto usr = random_policy(vocab, seed + 1, 1.0);
  for (auto id : {id_of(Special::end_dialogue), id_of(Special::start_action)}) {
    sys.mutable_model().mutable_parameters()[static_cast<std::size_t>(id)] = -1e4;
    usr.mutable_model().mutable_parameters()[static_cast<std::size_t>(id)] = -1e4;
  }
  return {sys, copy_policy(usr, PolicyRole::user_simulator)};
}

double sorted_quantile(std::vector<double> v, double level) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * level;
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_CASE("rounds alternate starting with the system") {
  auto vocab = pool_vocab();
  auto [system, simulator] = non_stopping_pair(vocab, 20);
  auto ctx = simple_context(*vocab, {user("hello")});
  for (std::size_t M : {1, 2, 3, 5}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      InteractiveOptions o;
      o.rounds = M;
      auto s = interactive_sample(system, simulator, ctx, o, seed);
      REQUIRE(s.block.utterances.size() == 2 * M);
      CHECK_FALSE(s.early_stop);
      for (std::size_t i = 0; i < s.block.utterances.size(); ++i)
        CHECK(s.block.utterances[i].speaker == (i % 2 == 0 ? Speaker::system : Speaker::user));
      CHECK(s.block.planned_action.label() == "A1");
      CHECK(s.context_tokens == ctx.system_tokens);
    }
  }
}

TEST_CASE("system END_DIALOGUE stops the block early") {
  auto vocab = pool_vocab();
  auto system = PolicyHandle(vocab, std::make_shared<ScriptedModel>(*vocab, 2), PolicyRole::trainable);
  auto simulator = PolicyHandle(vocab, std::make_shared<ScriptedModel>(*vocab, 1000), PolicyRole::user_simulator);
  // The context holds no agent turn yet, so the block's second agent turn is
  // the one that ends the dialogue.
  auto ctx = simple_context(*vocab, {user("hello")});
  InteractiveOptions o;
  o.rounds = 3;
  o.greedy = true;
  auto s = interactive_sample(system, simulator, ctx, o, 0);
  REQUIRE(s.block.utterances.size() == 3);
  CHECK(s.early_stop);
  CHECK(s.block.utterances[0].text == "ok");
  CHECK(s.block.utterances[1].text == "thanks");
  CHECK(s.block.utterances[2].speaker == Speaker::system);
}

TEST_CASE("system contexts grow by concatenation") {
  auto vocab = pool_vocab();
  auto [system, simulator] = non_stopping_pair(vocab, 30);
  auto ctx = simple_context(*vocab, {user("hello")});
  InteractiveOptions o;
  o.rounds = 3;
  o.record_contexts = true;
  o.reward_token = vocab->reward_token(5);
  auto s = interactive_sample(system, simulator, ctx, o, 4);
  REQUIRE(s.system_contexts.size() == 6);
  std::vector<TokenId> prev = ctx.system_tokens;
  for (const auto& c : s.system_contexts) {
    REQUIRE(c.size() > prev.size());
    CHECK(std::equal(prev.begin(), prev.end(), c.begin()));
    prev = c;
  }
  CHECK(s.system_contexts[0][ctx.system_tokens.size()] == vocab->reward_token(5));
  // The stored block stream starts after the reward token.
  CHECK(std::equal(s.block_tokens.begin(), s.block_tokens.end(),
                   prev.begin() + static_cast<std::ptrdiff_t>(ctx.system_tokens.size()) + 1));
  CHECK(std::find(s.block_tokens.begin(), s.block_tokens.end(), vocab->reward_token(5)) == s.block_tokens.end());
}

TEST_CASE("sampling is seeded and needs a frozen user") {
  auto vocab = pool_vocab();
  auto system = random_policy(vocab, 40, 1.0);
  auto simulator = random_policy(vocab, 41, 1.0, PolicyRole::user_simulator);
  auto ctx = simple_context(*vocab, {user("hello")});
  InteractiveOptions o;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto a = interactive_sample(system, simulator, ctx, o, seed);
    auto b = interactive_sample(system, simulator, ctx, o, seed);
    CHECK(a.block.utterances == b.block.utterances);
    CHECK(a.block_tokens == b.block_tokens);
    CHECK(a.early_stop == b.early_stop);
  }
  CHECK_THROWS_AS(interactive_sample(system, system, ctx, o, 0), FrozenPolicyError);
  o.rounds = 0;
  CHECK_THROWS_AS(interactive_sample(system, simulator, ctx, o, 0), ConfigError);
}

TEST_CASE("overflow mid-block keeps the partial block") {
  auto vocab = pool_vocab();
  auto model = std::make_shared<ToyLanguageModel>(*vocab, 16);
  auto system = PolicyHandle(vocab, model, PolicyRole::trainable, {0.5, 4});
  for (auto id : {id_of(Special::end_dialogue), id_of(Special::start_action), id_of(Special::end_agent)})
    system.mutable_model().mutable_parameters()[static_cast<std::size_t>(id)] = -1e4;
  auto simulator = copy_policy(system, PolicyRole::user_simulator);
  auto ctx = simple_context(*vocab, {user("hello")});
  InteractiveOptions o;
  try {
    interactive_sample(system, simulator, ctx, o, 0);
    FAIL("expected truncation");
  } catch (const TruncationError& e) {
    CHECK(e.partial().block.utterances.size() >= 1);
    CHECK(e.partial().block.utterances.front().speaker == Speaker::system);
  }
}

TEST_CASE("predicted plans are parsed and flagged") {
  auto vocab = pool_vocab();
  auto system = make_toy_policy(vocab);
  auto params = system.mutable_model().mutable_parameters();
  // Uniform except a strong preference for "ok", so the plan span is never an action.
  params[static_cast<std::size_t>(*vocab->find("ok"))] = 20.0;
  auto simulator = clone_reference(system);
  auto ctx = simple_context(*vocab, {user("hello")});
  InteractiveOptions o;
  o.predict_plan = true;
  o.known_actions = std::set<std::string>{"A1", "A2", "A3"};
  auto s = interactive_sample(system, simulator, ctx, o, 0);
  CHECK(s.unknown_action);
  CHECK_FALSE(s.predicted_action.has_value());
  CHECK(s.block.planned_action.label() == "A1");
}

TEST_CASE("keyword reward") {
  KeywordReward r({{"A1", {"name", "email"}}, {"A2", {}}});
  Block b;
  b.utterances = {sys("your name please"), user("email")};
  CHECK(r.reward("A1", b) == 0.5);
  b.utterances.push_back(sys("and email"));
  CHECK(r.reward("A1", b) == 1.0);
  CHECK(r.reward("A2", b) == 0.0);
  CHECK(r.reward("A3", b) == 0.0);
}

TEST_CASE("sample contexts cut before each labeled block's first system turn") {
  auto vocab = pool_vocab();
  std::vector<Dialogue> ds = {
      dialogue({user("u0"), sys("s1"), act("A1"), user("u2"), sys("s3"), user("u4"), act("A2"), sys("s5")}),
      dialogue({user("only"), act("A3")}, "d1")};
  auto cs = build_sample_contexts(ds, domain_set(), *vocab, Variant::action_plan);
  REQUIRE(cs.size() == 2);
  CHECK(cs[0].planned.label() == "A1");
  CHECK(cs[0].prefix.size() == 1);
  CHECK(cs[0].gold.size() == 1);
  CHECK(cs[1].planned.label() == "A2");
  CHECK(cs[1].prefix.size() == 4);
  CHECK(cs[1].gold.size() == 2);
  CHECK(cs[1].domain_id == "dom");
  const auto labeled = assign_planned_actions(ds[0]);
  CHECK(cs[1].system_tokens == serialize(std::span<const Turn>(labeled.turns.data(), 4), Variant::action_plan, domain(),
                                         *vocab, {false})
                                   .token_ids);
  CHECK(cs[1].user_tokens ==
        serialize(std::span<const Turn>(ds[0].turns.data(), 4), Variant::no_action, domain(), *vocab, {false}).token_ids);
  ds[0].split = Split::test;
  CHECK(build_sample_contexts(ds, domain_set(), *vocab, Variant::action_plan).empty());
}

TEST_CASE("pooling counts and drops") {
  auto vocab = pool_vocab();
  KeywordReward r(std::map<std::string, std::vector<std::string>>{{"A1", {"ok"}}});
  DataPool pool;
  CHECK(score_and_pool(pool, std::span<const SampledBlock>(), r, 0, {}) == 0);
  CHECK(pool.empty());

  SampledBlock good;
  good.block.planned_action.action = "A1";
  good.block.utterances = {sys("ok then")};
  SampledBlock empty = good;
  empty.block.utterances.clear();
  SampledBlock none = good;
  none.block.planned_action = PlannedAction{};

  const std::size_t contexts = 5, iterations = 3;
  std::size_t drops = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<SampledBlock> batch;
    for (std::size_t c = 0; c < contexts; ++c) {
      const auto kind = (it * contexts + c) % 4;
      batch.push_back(kind == 1 ? empty : kind == 2 ? none : good);
      if (kind == 1 || kind == 2) ++drops;
    }
    score_and_pool(pool, batch, r, static_cast<int>(it), {});
  }
  CHECK(pool.size() == iterations * contexts - drops);
  for (const auto& e : pool.entries()) CHECK(e.reward == 1.0);

  std::ostringstream out;
  write_pool(out, pool, *vocab);
  std::istringstream in(out.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("context_tokens"));
    CHECK(j.contains("block_utterances"));
    CHECK(j.contains("reward"));
    CHECK(j.contains("iteration"));
    CHECK(j.contains("seed"));
    ++lines;
  }
  CHECK(lines == pool.size());
}

TEST_CASE("pool statistics") {
  const std::vector<double> r = {0.2, 0.4, 0.6};
  auto s = summarize(r);
  CHECK(s.count == 3);
  CHECK(*s.mean == doctest::Approx(0.4).epsilon(1e-15));
  const std::vector<double> q = {0.2, 0.3, 0.4, 0.5, 0.6};
  REQUIRE(s.quantiles.size() == q.size());
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(s.quantiles[i] == doctest::Approx(q[i]).epsilon(1e-12));
  auto e = summarize(std::span<const double>());
  CHECK(e.count == 0);
  CHECK_FALSE(e.mean.has_value());
  CHECK(e.quantiles.empty());
  CHECK(pool_stats(DataPool{}).overall.count == 0);

  Rng rng(50);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + rng.index(40));
    for (auto& x : v) x = rng.index(4) == 0 ? 0.5 : rng.uniform();
    auto got = summarize(v);
    for (std::size_t i = 0; i < kSummaryLevels.size(); ++i)
      CHECK(got.quantiles[i] == doctest::Approx(sorted_quantile(v, kSummaryLevels[i])).epsilon(1e-12));
  }

  DataPool pool;
  for (int it = 0; it < 2; ++it)
    for (double x : {0.1, 0.3}) pool.append(PoolEntry{"c", {}, {}, {}, "A1", x + it, it, 0});
  auto st = pool_stats(pool);
  CHECK(st.overall.count == 4);
  CHECK(*st.per_iteration.at(0).mean == doctest::Approx(0.2));
  CHECK(*st.per_iteration.at(1).mean == doctest::Approx(1.2));
}
