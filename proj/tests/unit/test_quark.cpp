// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "toy_task.hpp"
#include "wfc/errors.hpp"
#include "wfc/quark.hpp"

using namespace wfc;
using namespace wfc::testing;

namespace {

DataPool pool_of(const std::vector<double>& rewards) {
  DataPool pool;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    PoolEntry e;
    e.context_id = "c" + std::to_string(i);
    e.context_tokens = {id_of(Special::start_dialog)};
    e.block_tokens = {id_of(Special::start_agent), id_of(Special::end_agent)};
    e.planned_action = "A1";
    e.reward = rewards[i];
    pool.append(e);
  }
  return pool;
}

}  // namespace

TEST_CASE("quantize hand cases") {
  CHECK(quantize_rewards(std::vector<double>{0.9, 0.1, 0.5, 0.3, 0.7}, 5) == std::vector<int>{5, 1, 3, 2, 4});
  CHECK(quantize_rewards(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 2) == std::vector<int>{1, 1, 2, 2});
  CHECK(quantize_rewards(std::vector<double>{0.3, 0.1}, 5) == std::vector<int>{2, 1});
  CHECK(quantize_rewards(std::vector<double>{}, 5).empty());
}

TEST_CASE("100 rewards fill five bins of twenty") {
  Rng rng(1);
  std::vector<double> r(100);
  for (auto& x : r) x = rng.uniform();
  auto vocab = pool_vocab();
  auto q = quantize(pool_of(r), 5, *vocab);
  CHECK_FALSE(q.has_empty_bins);
  for (const auto& b : q.bins) CHECK(b.size() == 20);
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[i] < r[j]) CHECK(q.entries[i].quantile <= q.entries[j].quantile);
  for (const auto& e : q.entries) CHECK(e.reward_token == vocab->reward_token(e.quantile));
}

TEST_CASE("quantization matches the rank oracle on random pools") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = 2 + static_cast<int>(rng.index(6));
    std::vector<double> r(1 + rng.index(60));
    // Coarse values so ties are common.
    for (auto& x : r) x = static_cast<double>(rng.index(7)) / 6.0;
    auto k = quantize_rewards(r, K);
    REQUIRE(k == rank_oracle(r, K));
    std::vector<std::size_t> sizes(static_cast<std::size_t>(K), 0);
    for (int v : k) ++sizes[static_cast<std::size_t>(v - 1)];
    if (r.size() >= static_cast<std::size_t>(K)) {
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      CHECK(*hi - *lo <= 1);
    }
  }
}

TEST_CASE("small pools leave flagged empty bins") {
  auto vocab = pool_vocab();
  auto q = quantize(pool_of({0.5, 0.2, 0.9}), 5, *vocab);
  CHECK(q.has_empty_bins);
  CHECK(q.entries[0].quantile == 2);
  CHECK(q.entries[1].quantile == 1);
  CHECK(q.entries[2].quantile == 3);
  CHECK(q.bins[3].empty());
  CHECK_THROWS_AS(quantize(DataPool{}, 5, *vocab), InputError);
}

TEST_CASE("KL values") {
  TokenDistribution p{{0.5, 0.5}}, q{{0.25, 0.75}};
  CHECK(std::abs(kl_term(p, q) - 0.143841) <= 1e-5);
  CHECK(std::abs(kl_term(p, q) - (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0))) <= 1e-12);
  CHECK(std::abs(kl_term(q, p) - 0.130812) <= 1e-5);
  CHECK(kl_term(p, q) != doctest::Approx(kl_term(q, p)));
  CHECK(std::abs(kl_term(p, p)) <= 1e-10);

  TokenDistribution z{{0.0, 1.0}};
  CHECK_THROWS_AS(kl_term(p, z), InfiniteKlError);
  CHECK(std::isfinite(kl_term(p, z, kKlFloor)));
  CHECK(kl_term(z, p) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("KL matches the brute-force sum") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(15);
    auto p = random_distribution(rng, n, trial % 3 == 0);
    auto q = random_distribution(rng, n);
    const double kl = kl_term(p, q);
    CHECK(kl >= 0.0);
    CHECK(kl == doctest::Approx(brute_kl(p, q)).epsilon(1e-12));
    CHECK(kl_term(q, q) <= 1e-10);
  }
}

TEST_CASE("beta 0 reduces to teacher-forced NLL") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 4, 1.0);
  auto ref = clone_reference(random_policy(vocab, 5, 1.0));
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto b = random_quark_batch(*vocab, rng, 1 + rng.index(6));
    auto l = quark_loss(policy, ref, b.view(), 0.0, nullptr);
    CHECK(std::abs(l.loss - batch_nll_oracle(policy, b)) <= 1e-9);
    CHECK(l.used == b.blocks.size());
  }
}

TEST_CASE("the KL term sees the reference without the reward token") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 7, 1.0);
  auto ref = clone_reference(random_policy(vocab, 8, 1.0));
  Rng rng(9);
  const double beta = 0.05;
  for (int trial = 0; trial < 20; ++trial) {
    auto b = random_quark_batch(*vocab, rng, 3);
    auto l = quark_loss(policy, ref, b.view(), beta, nullptr);
    double nll = 0.0, kl = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      auto pc = b.contexts[i];
      pc.push_back(b.rewards[i]);
      auto rc = b.contexts[i];
      nll += teacher_forced_nll(policy, make_pair_example(pc, b.blocks[i]));
      for (auto tok : b.blocks[i]) {
        kl += kl_term(next_token_distribution(ref, rc), next_token_distribution(policy, pc));
        pc.push_back(tok);
        rc.push_back(tok);
      }
    }
    CHECK(l.nll == doctest::Approx(nll / 3).epsilon(1e-10));
    CHECK(l.kl == doctest::Approx(kl / 3).epsilon(1e-10));
    CHECK(l.loss == doctest::Approx((nll + beta * kl) / 3).epsilon(1e-10));
  }
}

TEST_CASE("a reward token the model ignores adds no KL") {
  auto vocab = pool_vocab();
  auto policy = make_toy_policy(vocab);
  Rng rng(10);
  auto& toy = dynamic_cast<ToyLanguageModel&>(policy.mutable_model());
  toy.randomize(rng, 1.0);
  // The inserted reward token shifts the last/second-last features and feeds
  // the reward tables; zero all of those. Region and plan features remain.
  auto params = toy.mutable_parameters();
  const auto begin = toy.table_offset(ToyLanguageModel::last, 0);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(begin),
            params.begin() + static_cast<std::ptrdiff_t>(toy.table_offset(ToyLanguageModel::region, 0)), 0.0);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(toy.table_offset(ToyLanguageModel::reward, 0)), params.end(),
            0.0);
  auto ref = clone_reference(policy);
  Rng brng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto b = random_quark_batch(*vocab, brng, 3);
    // A context ending in a workflow opener would let the reward token take
    // the slot of the plan token.
    for (auto& c : b.contexts) c.push_back(id_of(Special::end_user));
    auto l = quark_loss(policy, ref, b.view(), 0.05, nullptr);
    CHECK(std::abs(l.kl) <= 1e-12);
    double ref_nll = 0.0;
    for (std::size_t i = 0; i < 3; ++i) ref_nll += teacher_forced_nll(ref, make_pair_example(b.contexts[i], b.blocks[i]));
    CHECK(l.nll == doctest::Approx(ref_nll / 3).epsilon(1e-10));
  }
}

TEST_CASE("quark gradient matches central differences") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 11, 0.5);
  auto ref = clone_reference(random_policy(vocab, 12, 0.5));
  Rng rng(13);
  auto b = random_quark_batch(*vocab, rng, 4);
  auto batch = b.view();
  std::vector<double> grad;
  quark_loss(policy, ref, batch, 0.05, &grad);
  auto probes = gradient_probes(grad, 100, rng);
  auto params = policy.mutable_model().mutable_parameters();
  CHECK(max_fd_error(params, grad, probes, [&] { return quark_loss(policy, ref, batch, 0.05, nullptr).loss; }) <= 1e-3);
}

TEST_CASE("empty blocks are skipped") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 14, 0.5);
  auto ref = clone_reference(policy);
  std::vector<TokenId> ctx = {id_of(Special::start_dialog)}, blk = {*vocab->find("ok")}, none;
  std::vector<QuarkSample> batch = {{ctx, blk, vocab->reward_token(1)}, {ctx, none, vocab->reward_token(2)}};
  auto l = quark_loss(policy, ref, batch, 0.05, nullptr);
  CHECK(l.used == 1);
  CHECK(l.skipped == 1);
  std::vector<QuarkSample> one = {batch[0]};
  CHECK(l.loss == quark_loss(policy, ref, one, 0.05, nullptr).loss);
}

TEST_CASE("uniform quantile draws") {
  auto vocab = pool_vocab();
  Rng rng(15);
  std::vector<double> r(50);
  for (auto& x : r) x = rng.uniform();
  auto q = quantize(pool_of(r), 5, *vocab);
  std::vector<std::size_t> counts(5, 0);
  const std::size_t n = 10000;
  std::size_t resamples = 0;
  for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(draw_quantile(q, rng, &resamples) - 1)];
  CHECK(resamples == 0);
  const double mean = n / 5.0, sd = std::sqrt(n * 0.2 * 0.8);
  for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - mean) <= 3 * sd);

  auto sparse = quantize(pool_of({0.1, 0.2}), 5, *vocab);
  resamples = 0;
  for (int i = 0; i < 200; ++i) CHECK(draw_quantile(sparse, rng, &resamples) <= 2);
  CHECK(resamples > 0);
}

TEST_CASE("train_iteration bookkeeping") {
  auto vocab = pool_vocab();
  auto policy = random_policy(vocab, 16, 0.3);
  auto ref = clone_reference(policy);
  Rng rng(17);
  std::vector<double> r(20);
  for (auto& x : r) x = rng.uniform();
  auto pool = pool_of(r);
  auto q = quantize(pool, 5, *vocab);
  const std::vector<double> before(policy.model().parameters().begin(), policy.model().parameters().end());

  TrainConfig cfg;
  cfg.steps_per_iteration = 0;
  auto rep0 = train_iteration(policy, ref, pool, q, cfg, rng);
  CHECK(rep0.loss_trace.empty());
  CHECK(std::equal(before.begin(), before.end(), policy.model().parameters().begin()));

  cfg.steps_per_iteration = 7;
  cfg.batch_size = 3;
  cfg.lr = 0.1;
  auto rep = train_iteration(policy, ref, pool, q, cfg, rng);
  CHECK(rep.loss_trace.size() == 7);
  for (double l : rep.loss_trace) CHECK(std::isfinite(l));
  std::size_t draws = 0;
  for (auto d : rep.quantile_draws) draws += d;
  CHECK(draws == 21);
  CHECK(rep.bin_sizes == std::vector<std::size_t>{4, 4, 4, 4, 4});
  CHECK(std::equal(before.begin(), before.end(), ref.model().parameters().begin()));
  CHECK_FALSE(std::equal(before.begin(), before.end(), policy.model().parameters().begin()));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    CHECK_THROWS_AS(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.num_quantiles = 1; });
  bad([](TrainConfig& t) { t.kl_weight = -0.1; });
  bad([](TrainConfig& t) { t.gamma = 0.9; });
  bad([](TrainConfig& t) { t.interactions = 0; });
  bad([](TrainConfig& t) { t.horizon = 0; });
  bad([](TrainConfig& t) { t.temperature = 0.0; });
}

TEST_CASE("the training loop") {
  ToyTaskOptions o;
  o.fixture.train_dialogues = 20;
  o.fixture.dev_dialogues = 2;
  o.fixture.test_dialogues = 2;
  o.sft_epochs = 60;
  auto task = make_toy_task(o);
  REQUIRE_FALSE(task.contexts.empty());

  TrainConfig cfg;
  cfg.iterations = 0;
  auto none = train(task.warm, task.user, task.contexts, *task.reward, cfg);
  CHECK(none.history.empty());
  CHECK(std::equal(task.warm.model().parameters().begin(), task.warm.model().parameters().end(),
                   none.policy.model().parameters().begin()));

  cfg.iterations = 2;
  cfg.steps_per_iteration = 5;
  cfg.lr = 0.5;
  cfg.seed = 3;
  const std::vector<double> warm(task.warm.model().parameters().begin(), task.warm.model().parameters().end());
  const std::vector<double> user(task.user.model().parameters().begin(), task.user.model().parameters().end());
  auto a = train(task.warm, task.user, task.contexts, *task.reward, cfg);
  auto b = train(task.warm, task.user, task.contexts, *task.reward, cfg);
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[0].pool_size == task.contexts.size());
  CHECK(a.history[1].pool_size == 2 * task.contexts.size());
  CHECK(std::equal(warm.begin(), warm.end(), task.warm.model().parameters().begin()));
  CHECK(std::equal(user.begin(), user.end(), task.user.model().parameters().begin()));
  std::ostringstream ha, hb;
  write_history(ha, a.history);
  write_history(hb, b.history);
  CHECK(ha.str() == hb.str());
  CHECK(std::equal(a.policy.model().parameters().begin(), a.policy.model().parameters().end(),
                   b.policy.model().parameters().begin()));
  std::istringstream lines(ha.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* k : {"iteration", "pool_size", "reward_mean", "reward_quantiles", "loss_trace"})
      CHECK(j.contains(k));
    CHECK(j["loss_trace"].size() == 5);
    ++n;
  }
  CHECK(n == 2);

  TrainOptions reset;
  reset.reset_pool = true;
  auto c = train(task.warm, task.user, task.contexts, *task.reward, cfg, reset);
  CHECK(c.history[1].pool_size == task.contexts.size());

  cfg.num_quantiles = 3;
  CHECK_THROWS_AS(train(task.warm, task.user, task.contexts, *task.reward, cfg), ConfigError);
}
