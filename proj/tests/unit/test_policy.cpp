// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "support.hpp"
#include "wfc/errors.hpp"
#include "wfc/policy.hpp"
#include "wfc/toy_model.hpp"

using namespace wfc;
using namespace wfc::testing;

namespace {

std::vector<TokenId> random_tokens(const Vocabulary& v, Rng& rng, std::size_t n) {
  std::vector<TokenId> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<TokenId>(rng.index(v.size())));
  return t;
}

LmExample random_example(const Vocabulary& v, Rng& rng, std::size_t n) {
  LmExample ex;
  ex.tokens = random_tokens(v, rng, n);
  for (std::size_t i = 0; i < n; ++i) ex.target.push_back(rng.index(2) ? 1 : 0);
  ex.target.back() = 1;
  return ex;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  Vocabulary v({"zeta", "alpha", "alpha", "mid"}, 3);
  CHECK(v.size() == kNumSpecials + 3 + 3);
  CHECK(v.token(0) == "START_USER");
  CHECK(v.token(id_of(Special::end_dialogue)) == "END_DIALOGUE");
  CHECK(v.reward_token(1) == static_cast<TokenId>(kNumSpecials));
  CHECK(v.token(v.reward_token(3)) == "REWARD_3");
  CHECK(v.reward_index(v.reward_token(2)) == 2);
  CHECK_FALSE(v.reward_index(*v.find("alpha")).has_value());
  CHECK(v.token(*v.find("alpha")) == "alpha");
  CHECK(*v.find("alpha") < *v.find("mid"));
  CHECK(*v.find("mid") < *v.find("zeta"));
  CHECK(v.id("unseen") == id_of(Special::unk));
  CHECK(v.is_text(*v.find("zeta")));
  CHECK_FALSE(v.is_text(v.reward_token(1)));
  CHECK(Vocabulary::from_json(v.to_json()) == v);
  CHECK_THROWS(Vocabulary({"START_USER"}, 1));
  CHECK_THROWS(Vocabulary({"REWARD_1"}, 1));
  CHECK(v.decode_text(v.encode_text("  alpha   mid ")) == "alpha mid");
  CHECK(normalize_text("  a \t b\n") == "a b");
}

TEST_CASE("softmax is a valid distribution") {
  std::vector<double> z = {1000.0, 0.0, -1000.0, 999.0};
  auto d = softmax(z);
  CHECK(d.valid());
  CHECK(d.argmax() == 0);
  CHECK(d[1] >= 0.0);
  auto cold = softmax(std::vector<double>{1.0, 2.0}, 0.5);
  CHECK(cold[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("zero-initialized toy model is uniform") {
  auto vocab = pool_vocab();
  auto p = make_toy_policy(vocab);
  CHECK(p.model().parameters().size() == vocab->size() + (5 + 5) * vocab->size() * vocab->size());
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    auto d = next_token_distribution(p, random_tokens(*vocab, rng, rng.index(12)));
    for (double q : d.probs) CHECK(std::abs(q - 1.0 / static_cast<double>(vocab->size())) < 1e-6);
  }
}

TEST_CASE("distributions are valid and deterministic") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 4, 2.0);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    auto prefix = random_tokens(*vocab, rng, rng.index(30));
    auto a = next_token_distribution(p, prefix);
    auto b = next_token_distribution(p, prefix);
    CHECK(a.valid(1e-9));
    CHECK(a.probs == b.probs);
  }
}

TEST_CASE("prefix at the context limit overflows") {
  auto vocab = pool_vocab();
  auto p = make_toy_policy(vocab, PolicyRole::trainable, {}, 8);
  std::vector<TokenId> prefix(7, *vocab->find("ok"));
  CHECK_NOTHROW(next_token_distribution(p, prefix));
  prefix.push_back(*vocab->find("ok"));
  CHECK_THROWS_AS(next_token_distribution(p, prefix), ContextOverflowError);
}

TEST_CASE("toy logits are bias plus the active table rows") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 8, 1.0);
  const auto& toy = dynamic_cast<const ToyLanguageModel&>(policy.model());
  const auto params = toy.parameters();
  const std::size_t V = vocab->size();
  Rng rng(3);
  auto tokens = random_tokens(*vocab, rng, 25);
  auto feats = toy.features(tokens, tokens.size());
  std::vector<std::size_t> pos(tokens.size() + 1);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  auto z = toy.logits(tokens, pos);
  for (std::size_t p = 0; p < pos.size(); ++p)
    for (std::size_t v = 0; v < V; ++v) {
      double expect = params[v];
      for (std::size_t s = 0; s < ToyLanguageModel::kNumSlots; ++s)
        if (feats[p][s] >= 0)
          expect += params[toy.table_offset(static_cast<ToyLanguageModel::Slot>(s), feats[p][s]) + v];
      CHECK(z[p * V + v] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("toy features track last tokens, region, plan and reward") {
  auto vocab = pool_vocab();
  ToyLanguageModel m(*vocab);
  const auto a2 = *vocab->find("A2"), ok = *vocab->find("ok"), r3 = vocab->reward_token(3);
  std::vector<TokenId> t = {id_of(Special::start_dialog), id_of(Special::start_action), a2,
                            id_of(Special::end_action), r3, id_of(Special::start_agent), ok};
  auto f = m.features(t, t.size()).back();
  CHECK(f[ToyLanguageModel::last] == ok);
  CHECK(f[ToyLanguageModel::second_last] == id_of(Special::start_agent));
  CHECK(f[ToyLanguageModel::region] == id_of(Special::start_agent));
  CHECK(f[ToyLanguageModel::plan] == a2);
  CHECK(f[ToyLanguageModel::reward] == r3);
  CHECK(f[ToyLanguageModel::reward_plan] == 2 * static_cast<std::int64_t>(vocab->size()) + a2);
  auto f0 = m.features(t, 0).front();
  for (auto x : f0) CHECK(x == -1);
}

TEST_CASE("greedy decoding follows the argmax over allowed tokens") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 11, 3.0);
  auto opts = agent_turn_options(p);
  opts.greedy = true;
  opts.max_tokens = 10;
  std::vector<TokenId> ctx = {id_of(Special::start_dialog), id_of(Special::start_agent)};
  auto got = sample_turn(p, ctx, opts, 0);

  std::vector<TokenId> seq = ctx, expect;
  std::optional<TokenId> stop;
  while (expect.size() < opts.max_tokens) {
    auto d = next_token_distribution(p, seq);
    TokenId best = -1;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      const bool ok = vocab->is_text(id) ||
                      std::find(opts.stop_tokens.begin(), opts.stop_tokens.end(), id) != opts.stop_tokens.end();
      if (ok && (best < 0 || d[i] > d[static_cast<std::size_t>(best)])) best = id;
    }
    if (std::find(opts.stop_tokens.begin(), opts.stop_tokens.end(), best) != opts.stop_tokens.end()) {
      stop = best;
      break;
    }
    expect.push_back(best);
    seq.push_back(best);
  }
  CHECK(got.tokens == expect);
  CHECK(got.stop_token == stop);
}

TEST_CASE("seeded sampling reproduces") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 5, 1.0);
  auto opts = user_turn_options(p);
  std::vector<TokenId> ctx = {id_of(Special::start_dialog), id_of(Special::start_user)};
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = sample_turn(p, ctx, opts, s);
    auto b = sample_turn(p, ctx, opts, s);
    CHECK(a.tokens == b.tokens);
    CHECK(a.stop_token == b.stop_token);
    for (auto t : a.tokens) CHECK(vocab->is_text(t));
  }
}

TEST_CASE("a model that never stops runs to the horizon") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 6, 1.0);
  auto opts = agent_turn_options(p);
  auto params = p.mutable_model().mutable_parameters();
  for (auto s : opts.stop_tokens) params[static_cast<std::size_t>(s)] = -1e4;
  for (std::size_t T : {1, 7, 32}) {
    opts.max_tokens = T;
    auto out = sample_turn(p, std::vector<TokenId>{id_of(Special::start_agent)}, opts, 3);
    CHECK(out.tokens.size() == T);
    CHECK_FALSE(out.stop_token.has_value());
  }
}

TEST_CASE("teacher-forced NLL is the sum of per-step log probabilities") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 7, 1.5);
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto ex = random_example(*vocab, rng, 5 + rng.index(20));
    double expect = 0.0;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (!ex.target[i]) continue;
      auto d = next_token_distribution(p, std::span<const TokenId>(ex.tokens.data(), i));
      expect -= std::log(d[static_cast<std::size_t>(ex.tokens[i])]);
    }
    CHECK(teacher_forced_nll(p, ex) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("NLL gradient matches central differences") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 9, 0.5);
  Rng rng(10);
  std::vector<LmExample> exs;
  for (int i = 0; i < 4; ++i) exs.push_back(random_example(*vocab, rng, 12));
  std::vector<double> grad;
  mean_token_nll(p, exs, &grad);
  auto probes = gradient_probes(grad, 100, rng);
  auto params = p.mutable_model().mutable_parameters();
  const double err = max_fd_error(params, grad, probes, [&] { return mean_token_nll(p, exs, nullptr); });
  CHECK(err <= 1e-3);
}

TEST_CASE("SFT memorizes a repeated pair") {
  auto vocab = pool_vocab();
  auto p = make_toy_policy(vocab);
  const std::vector<TokenId> ctx = {id_of(Special::start_dialog), id_of(Special::start_user), *vocab->find("hello"),
                                    id_of(Special::end_user), id_of(Special::start_agent)};
  const std::vector<TokenId> tgt = {*vocab->find("check"), *vocab->find("order"), *vocab->find("please"),
                                    id_of(Special::end_agent)};
  std::vector<LmExample> exs(3, make_pair_example(ctx, tgt));
  auto report = sft_train(p, exs, {200, 1.0, 0, 0});
  CHECK(report.steps == 200);
  CHECK(report.epoch_nll.size() == 201);
  for (std::size_t i = 1; i < report.epoch_nll.size(); ++i) CHECK(report.epoch_nll[i] <= report.epoch_nll[i - 1]);
  CHECK(report.epoch_nll.back() < 0.1);
}

TEST_CASE("SFT with lr 0 leaves parameters untouched") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 12, 0.3);
  const std::vector<double> before(p.model().parameters().begin(), p.model().parameters().end());
  Rng rng(1);
  std::vector<LmExample> exs = {random_example(*vocab, rng, 10), random_example(*vocab, rng, 10)};
  sft_train(p, exs, {5, 0.0, 1, 3});
  CHECK(std::equal(before.begin(), before.end(), p.model().parameters().begin()));
  CHECK_THROWS_AS(sft_train(p, std::span<const LmExample>(), {}), InputError);
}

TEST_CASE("reference clones are independent and frozen") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 13, 1.0);
  auto ref = clone_reference(p);
  CHECK(ref.frozen());
  CHECK_THROWS_AS(ref.mutable_model(), FrozenPolicyError);
  auto ref2 = clone_reference(ref);
  Rng rng(2);
  std::vector<std::vector<TokenId>> prefixes;
  for (int i = 0; i < 10; ++i) prefixes.push_back(random_tokens(*vocab, rng, 10));
  std::vector<TokenDistribution> at_clone;
  for (const auto& pre : prefixes) {
    at_clone.push_back(next_token_distribution(ref, pre));
    CHECK(next_token_distribution(p, pre).probs == at_clone.back().probs);
    CHECK(next_token_distribution(ref2, pre).probs == at_clone.back().probs);
  }
  std::vector<LmExample> exs = {random_example(*vocab, rng, 10)};
  sft_train(p, exs, {20, 1.0, 0, 0});
  for (std::size_t i = 0; i < prefixes.size(); ++i)
    CHECK(next_token_distribution(ref, prefixes[i]).probs == at_clone[i].probs);
  CHECK_FALSE(std::equal(p.model().parameters().begin(), p.model().parameters().end(),
                         ref.model().parameters().begin()));
}

TEST_CASE("plan spans") {
  auto vocab = pool_vocab();
  std::set<std::string> known = {"A1", "A2", "A3"};
  const auto a1 = *vocab->find("A1"), a2 = *vocab->find("A2");
  CHECK(parse_plan_span(*vocab, std::vector<TokenId>{a1}, &known) == "A1");
  CHECK_FALSE(parse_plan_span(*vocab, std::vector<TokenId>{a1, a2}, &known).has_value());
  CHECK_FALSE(parse_plan_span(*vocab, std::vector<TokenId>{}, &known).has_value());
  CHECK_FALSE(parse_plan_span(*vocab, std::vector<TokenId>{*vocab->find("ok")}, &known).has_value());
  CHECK_FALSE(parse_plan_span(*vocab, std::vector<TokenId>{id_of(Special::unk)}).has_value());
}

TEST_CASE("oracle plans bypass prediction") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 14, 1.0);
  Rng rng(0);
  PlanOptions opts;
  opts.oracle_action = "A1";
  std::vector<TokenId> ctx = {id_of(Special::start_dialog)};
  for (int i = 0; i < 20; ++i) {
    auto g = generate_with_plan(p, ctx, opts, rng);
    CHECK(g.predicted_action == "A1");
    CHECK(g.plan_tokens == std::vector<TokenId>{*vocab->find("A1")});
  }
  opts.oracle_action = "not-an-action";
  CHECK_THROWS_AS(generate_with_plan(p, ctx, opts, rng), SerializationError);
}

TEST_CASE("a model trained to copy the last action predicts it") {
  auto vocab = pool_vocab();
  auto dom = domain();
  auto p = make_toy_policy(vocab);
  std::vector<LmExample> exs;
  for (const char* a : {"A1", "A2", "A3"}) {
    auto d = assign_planned_actions(dialogue({user("hello"), act(a), user("thanks"), sys("ok"), act(a)}));
    exs.push_back(make_lm_example(serialize(d, Variant::action_plan, dom, *vocab), Speaker::system));
  }
  sft_train(p, exs, {300, 1.0, 0, 0});
  PlanOptions opts;
  opts.greedy = true;
  opts.known_actions = std::set<std::string>{"A1", "A2", "A3"};
  std::size_t right = 0;
  Rng rng(0);
  for (const char* a : {"A1", "A2", "A3"}) {
    auto d = dialogue({user("hello"), act(a), user("thanks")});
    auto ctx = serialize(d, Variant::action_plan, dom, *vocab, {false});
    auto g = generate_with_plan(p, ctx.token_ids, opts, rng);
    if (g.predicted_action == a) ++right;
  }
  CHECK(right == 3);
}

TEST_CASE("policy checkpoints round-trip") {
  auto vocab = pool_vocab();
  auto p = random_policy(vocab, 15, 1.0);
  p.set_defaults({0.7, 9});
  const auto path = std::filesystem::temp_directory_path() / "wfc_policy_roundtrip.json";
  save_policy(path, p);
  auto q = load_policy(path, PolicyRole::user_simulator);
  std::filesystem::remove(path);
  CHECK(q.role() == PolicyRole::user_simulator);
  CHECK(q.vocab() == p.vocab());
  CHECK(q.defaults().horizon == 9);
  CHECK(q.defaults().temperature == 0.7);
  CHECK(std::equal(p.model().parameters().begin(), p.model().parameters().end(), q.model().parameters().begin(),
                   q.model().parameters().end()));
  CHECK_THROWS_AS(load_policy("/nonexistent/wfc.json"), CheckpointError);
  CHECK_THROWS_AS(p.set_defaults({0.5, 0}), ConfigError);
}
