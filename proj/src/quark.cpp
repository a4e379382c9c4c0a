// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/quark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "wfc/log.hpp"

namespace wfc {

void TrainConfig::validate() const {
  if (num_quantiles < 2) throw ConfigError("number of quantiles must be at least 2");
  if (!(kl_weight >= 0.0)) throw ConfigError("KL weight must be nonnegative");
  if (gamma != 1.0) throw ConfigError("rewards are undiscounted; gamma must be 1");
  if (interactions < 1) throw ConfigError("number of interactions must be at least 1");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

std::vector<int> quantize_rewards(std::span<const double> rewards, int num_quantiles) {
  if (num_quantiles < 1) throw ConfigError("number of quantiles must be positive");
  const std::size_t n = rewards.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] < rewards[b]; });
  const auto K = static_cast<std::size_t>(num_quantiles);
  std::vector<int> k(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t bin = n < K ? rank : rank * K / n;
    k[order[rank]] = static_cast<int>(bin) + 1;
  }
  return k;
}

Quantization quantize(const DataPool& pool, int num_quantiles, const Vocabulary& vocab) {
  if (pool.empty()) throw InputError("cannot quantize an empty pool");
  std::vector<double> rewards;
  rewards.reserve(pool.size());
  for (const auto& e : pool.entries()) rewards.push_back(e.reward);
  const auto ks = quantize_rewards(rewards, num_quantiles);
  Quantization q;
  q.num_quantiles = num_quantiles;
  q.bins.resize(static_cast<std::size_t>(num_quantiles));
  for (std::size_t i = 0; i < ks.size(); ++i) {
    q.entries.push_back({i, ks[i], vocab.reward_token(ks[i])});
    q.bins[static_cast<std::size_t>(ks[i] - 1)].push_back(i);
  }
  for (const auto& b : q.bins) q.has_empty_bins |= b.empty();
  if (q.has_empty_bins)
    log_warning("pool of " + std::to_string(pool.size()) + " entries leaves quantile bins empty");
  return q;
}

double kl_term(const TokenDistribution& p, const TokenDistribution& q, double floor) {
  if (p.size() != q.size()) throw Error("KL between distributions of different sizes");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (pi <= 0.0) continue;
    double qi = q[i];
    if (qi <= floor) {
      if (floor <= 0.0) throw InfiniteKlError("KL is infinite: q is zero where p is positive");
      qi = floor;
    }
    kl += pi * (std::log(pi) - std::log(qi));
  }
  return kl;
}

namespace {

void log_softmax_row(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lz = mx + std::log(sum);
  for (auto& v : row) v -= lz;
}

}  // namespace

QuarkLoss quark_loss(const PolicyHandle& policy, const PolicyHandle& reference, std::span<const QuarkSample> batch,
                     double kl_weight, std::vector<double>* grad) {
  const auto& model = policy.model();
  const auto& ref = reference.model();
  const std::size_t V = model.vocab_size();
  if (ref.vocab_size() != V) throw Error("policy and reference vocabularies differ");
  QuarkLoss out;
  for (const auto& s : batch) {
    if (s.block.empty()) {
      ++out.skipped;
    } else {
      ++out.used;
    }
  }
  if (out.skipped) log_warning("skipping " + std::to_string(out.skipped) + " entries with empty blocks");
  if (out.used == 0) return out;
  if (grad) grad->resize(model.parameters().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(out.used);
  const double log_floor = std::log(kKlFloor);

  std::vector<TokenId> seq_policy, seq_ref;
  std::vector<std::size_t> pos_policy, pos_ref;
  for (const auto& s : batch) {
    if (s.block.empty()) continue;
    const std::size_t c = s.context.size();
    seq_policy.assign(s.context.begin(), s.context.end());
    seq_policy.push_back(s.reward_token);
    seq_policy.insert(seq_policy.end(), s.block.begin(), s.block.end());
    seq_ref.assign(s.context.begin(), s.context.end());
    seq_ref.insert(seq_ref.end(), s.block.begin(), s.block.end());
    pos_policy.resize(s.block.size());
    pos_ref.resize(s.block.size());
    for (std::size_t t = 0; t < s.block.size(); ++t) {
      pos_policy[t] = c + 1 + t;
      pos_ref[t] = c + t;
    }
    auto zq = model.logits(seq_policy, pos_policy);
    auto zp = ref.logits(seq_ref, pos_ref);
    double loglik = 0.0, kl = 0.0;
    for (std::size_t t = 0; t < s.block.size(); ++t) {
      std::span<double> lq(zq.data() + t * V, V);
      std::span<double> lp(zp.data() + t * V, V);
      log_softmax_row(lq);
      log_softmax_row(lp);
      const auto y = static_cast<std::size_t>(s.block[t]);
      loglik += lq[y];
      for (std::size_t v = 0; v < V; ++v) {
        const double p0 = std::exp(lp[v]);
        if (p0 > 0.0) kl += p0 * (lp[v] - std::max(lq[v], log_floor));
      }
      if (grad) {
        // d/dz of [-log q_y + beta * KL(p0 || q)] = (1 + beta) q - e_y - beta p0
        for (std::size_t v = 0; v < V; ++v)
          lq[v] = ((1.0 + kl_weight) * std::exp(lq[v]) - kl_weight * std::exp(lp[v])) * inv_b;
        lq[y] -= inv_b;
      }
    }
    out.nll -= loglik * inv_b;
    out.kl += kl * inv_b;
    if (grad) model.backward(seq_policy, pos_policy, zq, *grad);
  }
  out.loss = out.nll + kl_weight * out.kl;
  return out;
}

int draw_quantile(const Quantization& q, Rng& rng, std::size_t* resamples) {
  if (std::all_of(q.bins.begin(), q.bins.end(), [](const auto& b) { return b.empty(); }))
    throw InputError("all quantile bins are empty");
  for (;;) {
    const int k = static_cast<int>(rng.index(static_cast<std::uint64_t>(q.num_quantiles))) + 1;
    if (!q.bins[static_cast<std::size_t>(k - 1)].empty()) return k;
    if (resamples) ++*resamples;
  }
}

IterationReport train_iteration(PolicyHandle& policy, const PolicyHandle& reference, const DataPool& pool,
                                const Quantization& quantization, const TrainConfig& config, Rng& rng) {
  if (pool.empty()) throw InputError("training iteration on an empty pool");
  IterationReport report;
  report.quantile_draws.assign(static_cast<std::size_t>(quantization.num_quantiles), 0);
  for (const auto& b : quantization.bins) report.bin_sizes.push_back(b.size());
  if (config.steps_per_iteration == 0) return report;

  auto& model = policy.mutable_model();
  std::vector<double> grad;
  std::vector<QuarkSample> batch;
  for (std::size_t step = 0; step < config.steps_per_iteration; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const int k = draw_quantile(quantization, rng, &report.resamples);
      ++report.quantile_draws[static_cast<std::size_t>(k - 1)];
      const auto& bin = quantization.bins[static_cast<std::size_t>(k - 1)];
      const auto& qe = quantization.entries[bin[rng.index(bin.size())]];
      const auto& e = pool[qe.pool_index];
      batch.push_back({e.context_tokens, e.block_tokens, qe.reward_token});
    }
    grad.assign(model.parameters().size(), 0.0);
    const auto l = quark_loss(policy, reference, batch, config.kl_weight, &grad);
    report.loss_trace.push_back(l.loss);
    auto params = model.mutable_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.lr * grad[i];
  }
  if (report.resamples) log_info("redrew " + std::to_string(report.resamples) + " empty quantiles");
  return report;
}

namespace {

std::vector<SampledBlock> sample_all(const PolicyHandle& policy, const PolicyHandle& user,
                                     std::span<const SampleContext> contexts, const InteractiveOptions& opts,
                                     std::uint64_t base_seed, std::uint64_t stream, std::vector<std::uint64_t>& seeds) {
  std::vector<SampledBlock> samples;
  samples.reserve(contexts.size());
  seeds.clear();
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const auto seed = derive_seed(base_seed, stream, j);
    try {
      samples.push_back(interactive_sample(policy, user, contexts[j], opts, seed));
    } catch (const TruncationError& e) {
      log_warning(e.what());
      samples.push_back(e.partial());
    }
    seeds.push_back(seed);
  }
  return samples;
}

}  // namespace

QuarkResult train(const PolicyHandle& init, const PolicyHandle& user, std::span<const SampleContext> contexts,
                  const RewardFunction& reward, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const auto& vocab = init.vocab();
  if (vocab.num_reward_tokens() != config.num_quantiles)
    throw ConfigError("vocabulary has " + std::to_string(vocab.num_reward_tokens()) + " reward tokens but K = " +
                      std::to_string(config.num_quantiles));
  const PolicyHandle reference = clone_reference(init);
  QuarkResult result{copy_policy(init, PolicyRole::trainable), {}, {}};
  if (config.iterations == 0) return result;
  if (contexts.empty()) throw InputError("no dialogue contexts to sample from");

  InteractiveOptions opts;
  opts.rounds = config.interactions;
  opts.temperature = config.temperature;
  opts.reward_token = vocab.reward_token(config.num_quantiles);
  opts.predict_plan = options.predict_plan;
  opts.known_actions = options.known_actions;

  auto defaults = result.policy.defaults();
  defaults.horizon = config.horizon;
  defaults.temperature = config.temperature;
  result.policy.set_defaults(defaults);

  Rng rng(derive_seed(config.seed, 0xA11CE));
  std::vector<std::uint64_t> seeds;
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    if (options.reset_pool) result.pool.clear();
    const auto samples = sample_all(result.policy, user, contexts, opts, config.seed, it, seeds);
    const auto before = result.pool.size();
    score_and_pool(result.pool, samples, reward, static_cast<int>(it), seeds);

    std::vector<double> fresh;
    for (std::size_t i = before; i < result.pool.size(); ++i) fresh.push_back(result.pool[i].reward);

    IterationRecord rec;
    rec.iteration = it;
    rec.pool_size = result.pool.size();
    rec.sample_rewards = summarize(fresh);
    std::vector<double> all;
    for (const auto& e : result.pool.entries()) all.push_back(e.reward);
    rec.pool_rewards = summarize(all);
    if (result.pool.empty()) throw Error("no scorable samples in iteration " + std::to_string(it));
    const auto quantization = quantize(result.pool, config.num_quantiles, vocab);
    rec.report = train_iteration(result.policy, reference, result.pool, quantization, config, rng);
    result.history.push_back(std::move(rec));
  }
  return result;
}

double mean_generation_reward(const PolicyHandle& policy, const PolicyHandle& user,
                              std::span<const SampleContext> contexts, const RewardFunction& reward,
                              const InteractiveOptions& options, std::uint64_t seed) {
  std::vector<std::uint64_t> seeds;
  const auto samples = sample_all(policy, user, contexts, options, seed, 0xE7A1, seeds);
  DataPool pool;
  score_and_pool(pool, samples, reward, 0, seeds);
  if (pool.empty()) throw UndefinedMetricError("no scorable generations");
  double sum = 0.0;
  for (const auto& e : pool.entries()) sum += e.reward;
  return sum / static_cast<double>(pool.size());
}

void write_history(std::ostream& out, std::span<const IterationRecord> history) {
  for (const auto& r : history) {
    nlohmann::json j = {{"iteration", r.iteration},
                        {"pool_size", r.pool_size},
                        {"reward_mean", r.pool_rewards.mean ? nlohmann::json(*r.pool_rewards.mean) : nlohmann::json()},
                        {"reward_quantiles", r.pool_rewards.quantiles},
                        {"loss_trace", r.report.loss_trace},
                        {"sample_reward_mean",
                         r.sample_rewards.mean ? nlohmann::json(*r.sample_rewards.mean) : nlohmann::json()},
                        {"quantile_draws", r.report.quantile_draws},
                        {"resamples", r.report.resamples}};
    out << j.dump() << '\n';
  }
}

}  // namespace wfc
