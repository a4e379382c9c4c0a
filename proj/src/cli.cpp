// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "wfc/log.hpp"
#include "wfc/toy_model.hpp"

namespace wfc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::map<std::string, std::string> default_config_values() {
  return {
      {"corpus", ""},
      {"domains", ""},
      {"work_dir", "work"},
      {"variant", "action_plan"},
      {"oracle_actions", "false"},
      {"reset_pool", "false"},
      {"seed", "0"},
      {"num_quantiles", "5"},
      {"kl_weight", "0.05"},
      {"interactions", "3"},
      {"iterations", "10"},
      {"steps_per_iteration", "200"},
      {"batch_size", "8"},
      {"temperature", "0.5"},
      {"lr", "2e-5"},
      {"gamma", "1"},
      {"horizon", "32"},
      {"sft_epochs", "10"},
      {"sft_lr", "2e-5"},
      {"sft_batch_size", "0"},
      {"scorer_epochs", "10"},
      {"scorer_lr", "2e-5"},
      {"scorer_dim", "4096"},
      {"negatives_per_positive", "1"},
      {"reward", "scorer"},
      {"context_limit", "1024"},
      {"human_eval_count", "100"},
      {"judge_parallel", "4"},
      {"judge_timeout_ms", "30000"},
  };
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string l;
  for (char c : v) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos) {
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

ExperimentConfig make_config(const std::map<std::string, std::string>& values, const fs::path& base_dir) {
  auto merged = default_config_values();
  for (const auto& [k, v] : values) {
    if (!merged.contains(k)) throw ConfigError("unknown config key '" + k + "'");
    merged[k] = v;
  }
  auto get = [&](const char* k) -> const std::string& { return merged.at(k); };
  auto size = [&](const char* k) { return static_cast<std::size_t>(parse_u64(k, get(k))); };
  auto num = [&](const char* k) { return parse_double(k, get(k)); };

  ExperimentConfig c;
  c.values = merged;
  if (get("corpus").empty()) throw ConfigError("config key 'corpus' is required");
  if (get("domains").empty()) throw ConfigError("config key 'domains' is required");
  c.corpus = resolve(base_dir, get("corpus"));
  c.domains = resolve(base_dir, get("domains"));
  c.work_dir = resolve(base_dir, get("work_dir"));
  if (!fs::is_regular_file(c.corpus)) throw ConfigError("corpus file not found: " + c.corpus.string());
  if (!fs::is_regular_file(c.domains)) throw ConfigError("domain file not found: " + c.domains.string());

  try {
    c.variant = variant_from_string(get("variant"));
  } catch (const Error&) {
    throw ConfigError("config key 'variant': unknown variant '" + get("variant") + "'");
  }
  c.oracle_actions = parse_bool("oracle_actions", get("oracle_actions"));
  c.reset_pool = parse_bool("reset_pool", get("reset_pool"));
  c.seed = parse_u64("seed", get("seed"));

  c.train.num_quantiles = static_cast<int>(size("num_quantiles"));
  c.train.kl_weight = num("kl_weight");
  c.train.interactions = size("interactions");
  c.train.iterations = size("iterations");
  c.train.steps_per_iteration = size("steps_per_iteration");
  c.train.batch_size = size("batch_size");
  c.train.temperature = num("temperature");
  c.train.lr = num("lr");
  c.train.gamma = num("gamma");
  c.train.horizon = size("horizon");
  c.train.seed = c.seed;
  c.train.validate();

  c.sft.epochs = size("sft_epochs");
  c.sft.lr = num("sft_lr");
  c.sft.batch_size = size("sft_batch_size");
  c.sft.seed = derive_seed(c.seed, 1);
  if (!(c.sft.lr >= 0.0)) throw ConfigError("config key 'sft_lr' must be nonnegative");

  c.scorer.epochs = size("scorer_epochs");
  c.scorer.lr = num("scorer_lr");
  if (!(c.scorer.lr >= 0.0)) throw ConfigError("config key 'scorer_lr' must be nonnegative");
  c.scorer_dim = size("scorer_dim");
  if (c.scorer_dim == 0) throw ConfigError("config key 'scorer_dim' must be positive");
  c.negatives_per_positive = size("negatives_per_positive");
  if (c.negatives_per_positive == 0) throw ConfigError("config key 'negatives_per_positive' must be positive");

  c.reward = get("reward");
  if (c.reward != "scorer" && c.reward != "keyword")
    throw ConfigError("config key 'reward' must be 'scorer' or 'keyword'");
  c.context_limit = size("context_limit");
  if (c.context_limit == 0) throw ConfigError("config key 'context_limit' must be positive");
  c.human_eval_count = size("human_eval_count");
  c.judge_parallel = std::max<std::size_t>(1, size("judge_parallel"));
  c.judge_timeout = std::chrono::milliseconds(size("judge_timeout_ms"));
  return c;
}

ExperimentConfig load_config(const fs::path& file, const std::map<std::string, std::string>& overrides,
                             bool use_env) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    values[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  if (use_env) {
    for (const auto& [key, _] : default_config_values()) {
      std::string env = "WFC_";
      for (char ch : key) env += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (const char* v = std::getenv(env.c_str())) values[key] = v;
    }
  }
  for (const auto& [k, v] : overrides) values[k] = v;
  return make_config(values, fs::absolute(file).parent_path());
}

std::string ExperimentConfig::fingerprint() const {
  std::string canon;
  for (const auto& [k, v] : values) canon += k + "=" + v + "\n";
  return wfc::fingerprint(canon);
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

struct Data {
  DomainSet domains;
  std::vector<Dialogue> dialogues;
};

Data load_data(const ExperimentConfig& cfg) {
  Data d;
  std::ifstream dom(cfg.domains);
  if (!dom) throw InputError("cannot read " + cfg.domains.string());
  d.domains = parse_domains(dom);
  std::ifstream corp(cfg.corpus);
  if (!corp) throw InputError("cannot read " + cfg.corpus.string());
  d.dialogues = parse_corpus(corp, d.domains);
  if (d.dialogues.empty()) throw InputError("corpus " + cfg.corpus.string() + " has no dialogues");
  return d;
}

std::vector<Dialogue> split_of(const Data& d, Split s) {
  std::vector<Dialogue> out;
  for (const auto& x : d.dialogues)
    if (x.split == s) out.push_back(x);
  return out;
}

std::set<std::string> known_actions(const DomainSet& domains) {
  std::set<std::string> out;
  for (const auto& [id, d] : domains) out.insert(d.action_vocabulary.begin(), d.action_vocabulary.end());
  return out;
}

void ensure_work_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.work_dir, ec);
  if (ec) throw Error("cannot create " + cfg.work_dir.string() + ": " + ec.message());
}

PolicyHandle load_checkpoint(const ExperimentConfig& cfg, std::string_view name, PolicyRole role) {
  const auto path = cfg.artifact(name);
  if (!fs::exists(path)) throw CheckpointError("missing checkpoint " + path.string());
  return load_policy(path, role);
}

ComplianceScorer load_scorer_checkpoint(const ExperimentConfig& cfg) {
  const auto path = cfg.artifact(artifacts::scorer);
  if (!fs::exists(path)) throw CheckpointError("missing scorer checkpoint " + path.string());
  return load_scorer(path);
}

struct RewardSource {
  std::optional<ComplianceScorer> scorer;
  std::unique_ptr<RewardFunction> fn;
};

RewardSource make_reward(const ExperimentConfig& cfg, const Data& data) {
  RewardSource r;
  if (cfg.reward == "keyword") {
    auto kw = keyword_map(data.domains);
    if (kw.empty()) throw ConfigError("reward = keyword needs a 'keywords' map in the domain file");
    r.fn = std::make_unique<KeywordReward>(std::move(kw));
  } else {
    r.scorer = load_scorer_checkpoint(cfg);
    r.fn = std::make_unique<ScorerReward>(*r.scorer);
  }
  return r;
}

bool plans_predicted(const ExperimentConfig& cfg) { return cfg.variant == Variant::action_plan && !cfg.oracle_actions; }

struct Generation {
  std::vector<SampledBlock> samples;
  std::vector<std::optional<std::string>> predicted_plans;  // action_plan only
};

constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::uint64_t kPlanStream = 0x9A1;

Generation generate(const ExperimentConfig& cfg, const PolicyHandle& policy, const PolicyHandle& user,
                    std::span<const SampleContext> contexts, bool reward_conditioned,
                    const std::set<std::string>& known) {
  const auto& vocab = policy.vocab();
  InteractiveOptions io;
  io.rounds = cfg.train.interactions;
  io.temperature = cfg.train.temperature;
  if (reward_conditioned) io.reward_token = vocab.reward_token(vocab.num_reward_tokens());
  io.predict_plan = plans_predicted(cfg);
  io.known_actions = known;
  Generation g;
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const auto& ctx = contexts[j];
    const auto seed = derive_seed(cfg.seed, kEvalStream, j);
    try {
      g.samples.push_back(interactive_sample(policy, user, ctx, io, seed));
    } catch (const TruncationError& e) {
      log_warning(e.what());
      g.samples.push_back(e.partial());
    }
    if (cfg.variant != Variant::action_plan) continue;
    if (io.predict_plan) {
      g.predicted_plans.push_back(g.samples.back().predicted_action);
    } else {
      // Oracle-conditioned generation still gets a separate plan prediction
      // so that workflow accuracy is reported for every model.
      std::vector<TokenId> prefix = ctx.system_tokens;
      if (io.reward_token) prefix.push_back(*io.reward_token);
      PlanOptions po;
      po.temperature = cfg.train.temperature;
      po.known_actions = known;
      Rng rng(derive_seed(cfg.seed, kPlanStream, j));
      g.predicted_plans.push_back(generate_with_plan(policy, prefix, po, rng).predicted_action);
    }
  }
  return g;
}

std::vector<std::string> system_texts(std::span<const Turn> turns) {
  std::vector<std::string> out;
  for (const auto& t : turns)
    if (t.speaker == Speaker::system) out.push_back(normalize_text(t.text));
  return out;
}

ModelMetrics score_model(const std::string& name, std::span<const SampleContext> contexts, const Generation& g,
                         const ComplianceScorer& scorer) {
  ModelMetrics m;
  m.model = name;
  m.items = contexts.size();
  std::vector<ScoredItem> items;
  std::vector<std::string> all_system;
  double bleu = 0.0, f1 = 0.0;
  const PairwiseSimilarity bleu_sim = [](std::string_view a, std::string_view b) { return sentence_bleu(a, b); };
  const PairwiseSimilarity f1_sim = [](std::string_view a, std::string_view b) { return token_f1(a, b); };
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const auto& s = g.samples[j];
    items.push_back({contexts[j].planned.label(), s.block});
    const auto preds = system_texts(s.block.utterances);
    const auto targets = system_texts(contexts[j].gold);
    bleu += block_similarity(preds, targets, bleu_sim);
    f1 += block_similarity(preds, targets, f1_sim);
    all_system.insert(all_system.end(), preds.begin(), preds.end());
  }
  const double n = static_cast<double>(contexts.size());
  m.compliance_mean = compliance_eval(items, scorer).mean;
  m.block_similarity = {{"bleu", bleu / n}, {"f1", f1 / n}};
  m.dist3 = dist_n(all_system, 3);
  if (!g.predicted_plans.empty()) {
    std::vector<std::string> gold;
    for (const auto& c : contexts) gold.push_back(c.planned.label());
    m.workflow_accuracy = workflow_accuracy(g.predicted_plans, gold);
    m.unknown_actions = static_cast<std::size_t>(
        std::count_if(g.predicted_plans.begin(), g.predicted_plans.end(), [](const auto& p) { return !p; }));
  }
  return m;
}

std::vector<SampleContext> test_contexts(const ExperimentConfig& cfg, const Data& data, const Vocabulary& vocab) {
  auto contexts = build_sample_contexts(data.dialogues, data.domains, vocab, cfg.variant, Split::test);
  if (contexts.empty()) throw InputError("the test split has no labeled blocks to evaluate");
  return contexts;
}

/// The optimized policy when one exists, else the warm start.
std::pair<PolicyHandle, bool> best_policy(const ExperimentConfig& cfg) {
  if (fs::exists(cfg.artifact(artifacts::quark_policy)))
    return {load_checkpoint(cfg, artifacts::quark_policy, PolicyRole::frozen_reference), true};
  return {load_checkpoint(cfg, artifacts::sft_policy, PolicyRole::frozen_reference), false};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

std::string render_turns(std::span<const Turn> turns) {
  std::string s;
  for (const auto& t : turns) {
    if (!s.empty()) s += '\n';
    s += to_string(t.speaker);
    s += ": ";
    s += t.speaker == Speaker::action ? t.action_name.value_or("") : t.text;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Commands

IngestSummary cmd_ingest(const ExperimentConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg);
  IngestSummary s;
  s.dialogues = data.dialogues.size();
  for (const auto& d : data.dialogues) {
    ++s.per_split[std::string(to_string(d.split))];
    for (const auto& b : segment_blocks(d)) {
      ++s.blocks;
      if (!b.planned_action.is_none()) ++s.labeled_blocks;
    }
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::action) {
        ++s.action_executions;
        ++s.per_action[*t.action_name];
      }
  }
  out << "dialogues: " << s.dialogues << '\n';
  for (const auto& [k, v] : s.per_split) out << "  " << k << ": " << v << '\n';
  out << "blocks: " << s.blocks << " (" << s.labeled_blocks << " labeled)\n";
  out << "action executions: " << s.action_executions << '\n';
  for (const auto& [k, v] : s.per_action) out << "  " << k << ": " << v << '\n';
  return s;
}

SftSummary cmd_train_sft(const ExperimentConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto train = split_of(data, Split::train);
  if (train.empty()) throw InputError("the corpus has no training dialogues");
  auto vocab = std::make_shared<const Vocabulary>(corpus_words(train, data.domains), cfg.train.num_quantiles);
  const GenerationDefaults defaults{cfg.train.temperature, cfg.train.horizon};

  std::vector<LmExample> sys_ex, user_ex;
  for (const auto& d : train) {
    const auto& dom = data.domains.at(d.domain_id);
    const auto labeled = assign_planned_actions(d);
    sys_ex.push_back(make_lm_example(serialize(labeled, cfg.variant, dom, *vocab), Speaker::system));
    user_ex.push_back(make_lm_example(serialize(labeled, Variant::no_action, dom, *vocab), Speaker::user));
  }
  auto system = make_toy_policy(vocab, PolicyRole::trainable, defaults, cfg.context_limit);
  auto user = make_toy_policy(vocab, PolicyRole::trainable, defaults, cfg.context_limit);
  SftSummary s;
  s.vocab_size = vocab->size();
  s.system = sft_train(system, sys_ex, cfg.sft);
  auto user_opts = cfg.sft;
  user_opts.seed = derive_seed(cfg.seed, 2);
  s.user = sft_train(user, user_ex, user_opts);

  ensure_work_dir(cfg);
  save_policy(cfg.artifact(artifacts::sft_policy), system);
  save_policy(cfg.artifact(artifacts::user_simulator), user);
  out << "vocabulary: " << s.vocab_size << " tokens\n";
  out << "system (" << to_string(cfg.variant) << ") nll: " << s.system.epoch_nll.front() << " -> "
      << s.system.epoch_nll.back() << '\n';
  out << "user simulator (no_action) nll: " << s.user.epoch_nll.front() << " -> " << s.user.epoch_nll.back() << '\n';
  return s;
}

ScorerTrainReport cmd_train_scorer(const ExperimentConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg);
  auto blocks_of = [&](Split sp) {
    std::vector<Block> out;
    for (const auto& d : data.dialogues)
      if (d.split == sp)
        for (auto& b : segment_blocks(d)) out.push_back(std::move(b));
    return out;
  };
  const auto train_blocks = blocks_of(Split::train);
  const auto triplets = build_triplets(train_blocks, cfg.negatives_per_positive, derive_seed(cfg.seed, 3));
  std::vector<ComparisonTriplet> heldout;
  try {
    heldout = build_triplets(blocks_of(Split::dev), 1, derive_seed(cfg.seed, 4));
  } catch (const ConstructionError& e) {
    log_warning(std::string("no held-out triplets: ") + e.what());
  }
  auto scorer = make_toy_scorer(cfg.scorer_dim);
  const auto report = train_scorer(scorer, triplets, cfg.scorer, heldout);

  ensure_work_dir(cfg);
  save_scorer(cfg.artifact(artifacts::scorer), scorer);
  std::ofstream tf(cfg.artifact(artifacts::triplets));
  write_triplets(tf, triplets);
  out << "triplets: " << triplets.size() << " train, " << heldout.size() << " held out\n";
  out << "pairwise loss: " << report.loss_trace.front() << " -> " << report.loss_trace.back() << '\n';
  if (!heldout.empty()) out << "held-out ranking accuracy: " << report.heldout_accuracy << '\n';
  return report;
}

std::vector<IterationRecord> cmd_train_quark(const ExperimentConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto init = load_checkpoint(cfg, artifacts::sft_policy, PolicyRole::trainable);
  const auto user = load_checkpoint(cfg, artifacts::user_simulator, PolicyRole::user_simulator);
  const auto contexts = build_sample_contexts(data.dialogues, data.domains, init.vocab(), cfg.variant, Split::train);
  if (contexts.empty()) throw InputError("the training split has no labeled blocks to sample from");
  const auto reward = make_reward(cfg, data);

  TrainOptions opts;
  opts.reset_pool = cfg.reset_pool;
  opts.predict_plan = plans_predicted(cfg);
  opts.known_actions = known_actions(data.domains);
  auto result = train(init, user, contexts, *reward.fn, cfg.train, opts);

  ensure_work_dir(cfg);
  save_policy(cfg.artifact(artifacts::quark_policy), result.policy);
  std::ostringstream hist, pool;
  write_history(hist, result.history);
  write_pool(pool, result.pool, init.vocab());
  write_file(cfg.artifact(artifacts::quark_history), hist.str());
  write_file(cfg.artifact(artifacts::quark_pool), pool.str());
  out << std::fixed << std::setprecision(4);
  for (const auto& r : result.history) {
    out << "iteration " << r.iteration << ": pool " << r.pool_size << ", pool mean "
        << r.pool_rewards.mean.value_or(0.0) << ", sample mean " << r.sample_rewards.mean.value_or(0.0);
    if (!r.report.loss_trace.empty()) out << ", loss " << r.report.loss_trace.back();
    out << '\n';
  }
  out.unsetf(std::ios::floatfield);
  if (result.history.empty()) out << "no iterations; the warm start was copied unchanged\n";
  return result.history;
}

MetricReport cmd_evaluate(const ExperimentConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto scorer = load_scorer_checkpoint(cfg);
  const auto user = load_checkpoint(cfg, artifacts::user_simulator, PolicyRole::user_simulator);
  const auto warm = load_checkpoint(cfg, artifacts::sft_policy, PolicyRole::frozen_reference);
  const auto contexts = test_contexts(cfg, data, warm.vocab());
  const auto known = known_actions(data.domains);

  MetricReport report;
  report.config_fingerprint = cfg.fingerprint();
  report.models.push_back(
      score_model("warm_start", contexts, generate(cfg, warm, user, contexts, false, known), scorer));
  if (fs::exists(cfg.artifact(artifacts::quark_policy))) {
    const auto tuned = load_checkpoint(cfg, artifacts::quark_policy, PolicyRole::frozen_reference);
    report.models.push_back(score_model("quark", contexts, generate(cfg, tuned, user, contexts, true, known), scorer));
  }
  report.validate();

  ensure_work_dir(cfg);
  write_file(cfg.artifact(artifacts::report), report.to_json().dump(2) + "\n");
  std::ostringstream csv;
  report.write_csv(csv);
  write_file(cfg.artifact(artifacts::report_csv), csv.str());
  out << "evaluated " << contexts.size() << " test blocks\n";
  report.write_csv(out);
  return report;
}

AnnotationSheet cmd_export_human_eval(const ExperimentConfig& cfg, std::size_t count, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto user = load_checkpoint(cfg, artifacts::user_simulator, PolicyRole::user_simulator);
  const auto [policy, tuned] = best_policy(cfg);
  const auto contexts = test_contexts(cfg, data, policy.vocab());
  const auto g = generate(cfg, policy, user, contexts, tuned, known_actions(data.domains));
  std::vector<HumanEvalItem> items;
  for (std::size_t j = 0; j < contexts.size(); ++j)
    items.push_back({contexts[j].id, render_turns(contexts[j].prefix), contexts[j].planned.label(),
                     render_turns(g.samples[j].block.utterances)});
  auto sheet = export_human_eval(items, count, derive_seed(cfg.seed, 5));

  ensure_work_dir(cfg);
  std::ostringstream csv;
  sheet.write_csv(csv);
  write_file(cfg.artifact(artifacts::human_eval), csv.str());
  write_file(cfg.artifact(artifacts::human_eval_guidelines), sheet.guidelines);
  out << "wrote " << sheet.rows.size() << " rows from the " << (tuned ? "quark" : "warm_start") << " model to "
      << cfg.artifact(artifacts::human_eval).string() << '\n';
  return sheet;
}

std::size_t cmd_judge(const ExperimentConfig& cfg, const JudgeTransport* transport, std::ostream& out) {
  const auto data = load_data(cfg);
  const auto user = load_checkpoint(cfg, artifacts::user_simulator, PolicyRole::user_simulator);
  const auto [policy, tuned] = best_policy(cfg);
  const auto contexts = test_contexts(cfg, data, policy.vocab());
  const auto g = generate(cfg, policy, user, contexts, tuned, known_actions(data.domains));
  std::vector<std::string> prompts;
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const auto& dom = data.domains.at(contexts[j].domain_id);
    prompts.push_back(render_judge_prompt(PromptKind::evaluation, {{"s", dom.domain_id},
                                                                   {"w", contexts[j].planned.label()},
                                                                   {"g", dom.guideline},
                                                                   {"i", render_turns(contexts[j].prefix)},
                                                                   {"r", render_turns(g.samples[j].block.utterances)}}));
  }
  std::vector<std::optional<int>> labels(prompts.size());
  if (transport) labels = judge_all(*transport, prompts, cfg.judge_parallel);
  std::ostringstream lines;
  std::size_t parsed = 0;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    nlohmann::json rec = {{"id", contexts[j].id}, {"prompt", prompts[j]}, {"label", nullptr}};
    if (labels[j]) {
      rec["label"] = *labels[j];
      ++parsed;
    }
    lines << rec.dump() << '\n';
  }
  ensure_work_dir(cfg);
  write_file(cfg.artifact(artifacts::judge), lines.str());
  out << "rendered " << prompts.size() << " judge prompts";
  if (transport) out << ", " << parsed << " labeled";
  out << '\n';
  return parsed;
}

void cmd_make_fixture(const fs::path& dir, const FixtureOptions& options, std::ostream& out) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  const auto fx = make_fixture(options);
  std::ostringstream corpus, domains;
  write_corpus(corpus, fx.dialogues);
  write_domains(domains, fx.domains);
  write_file(dir / "corpus.jsonl", corpus.str());
  write_file(dir / "domains.jsonl", domains.str());
  // Learning rates are sized for the toy backends; the library defaults
  // target pretrained models. The keyword reward drives optimization and the
  // trained scorer is left as the independent evaluator.
  write_file(dir / "fixture.cfg",
             "# Synthetic keyword workflow task.\n"
             "corpus = corpus.jsonl\n"
             "domains = domains.jsonl\n"
             "work_dir = work\n"
             "variant = action_plan\n"
             "oracle_actions = true\n"
             "reward = keyword\n"
             "seed = 0\n"
             "sft_epochs = 300\n"
             "sft_lr = 1.0\n"
             "scorer_epochs = 200\n"
             "scorer_lr = 20\n"
             "lr = 0.5\n"
             "iterations = 10\n"
             "steps_per_iteration = 200\n"
             "human_eval_count = 20\n");
  out << "wrote " << fx.dialogues.size() << " dialogues in " << fx.domains.size() << " domains to " << dir.string()
      << '\n';
}

// ---------------------------------------------------------------------------
// Command line

namespace {

std::unique_ptr<JudgeTransport> transport_from_url(const std::string& url, std::chrono::milliseconds timeout) {
  constexpr std::string_view scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("judge URL must start with http://");
  std::string rest = url.substr(scheme.size());
  std::string path = "/";
  if (auto slash = rest.find('/'); slash != std::string::npos) {
    path = rest.substr(slash);
    rest.erase(slash);
  }
  int port = 80;
  if (auto colon = rest.find(':'); colon != std::string::npos) {
    port = static_cast<int>(parse_u64("judge port", rest.substr(colon + 1)));
    rest.erase(colon);
  }
  return std::make_unique<HttpTransport>(rest, port, path, timeout);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate workflow-compliant dialogue policies.", "wfc"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string variant;
  bool oracle = false, reset = false, verbose = false, quiet = false;
  app.add_option("--config", config_path, "Experiment config file (key = value)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--variant", variant, "Context serialization")
      ->check(CLI::IsMember({"no_action", "action_aware", "action_plan", "guideline"}));
  app.add_flag("--oracle-actions", oracle, "Condition generation on the gold next action");
  app.add_flag("--reset-pool", reset, "Empty the data pool at the start of every iteration");
  app.add_flag("-v,--verbose", verbose, "Log progress");
  app.add_flag("-q,--quiet", quiet, "Log errors only");

  auto* ingest = app.add_subcommand("ingest", "Parse and validate the corpus, print counts");
  auto* sft = app.add_subcommand("train-sft", "Warm-start the system policy and the user simulator");
  auto* scorer = app.add_subcommand("train-scorer", "Train the compliance scorer on block triplets");
  auto* quark = app.add_subcommand("train-quark", "Run quantile-conditioned compliance optimization");
  auto* evaluate = app.add_subcommand("evaluate", "Write the metric report for the test split");
  auto* human = app.add_subcommand("export-human-eval", "Write an annotation sheet of generated blocks");
  std::optional<std::size_t> count;
  human->add_option("--count", count, "Rows to sample (default: human_eval_count)");
  auto* judge = app.add_subcommand("judge", "Render judge prompts and optionally collect labels");
  std::string judge_command, judge_url;
  judge->add_option("--command", judge_command, "Shell command reading a prompt on stdin");
  judge->add_option("--url", judge_url, "HTTP endpoint, http://host:port/path");
  auto* fixture = app.add_subcommand("make-fixture", "Write the synthetic workflow corpus");
  std::string fixture_dir;
  FixtureOptions fx;
  fixture->add_option("--out", fixture_dir, "Output directory")->required();
  fixture->add_option("--fixture-seed", fx.seed, "Generator seed");
  fixture->add_option("--train", fx.train_dialogues, "Training dialogues");
  fixture->add_option("--dev", fx.dev_dialogues, "Development dialogues");
  fixture->add_option("--test", fx.test_dialogues, "Test dialogues");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  const auto previous_level = log_level();
  set_log_level(quiet ? LogLevel::error : verbose ? LogLevel::info : LogLevel::warning);
  auto restore = [&] { set_log_level(previous_level); };
  int code = 0;
  try {
    if (fixture->parsed()) {
      cmd_make_fixture(fixture_dir, fx, out);
    } else {
      if (config_path.empty()) throw ConfigError("--config is required");
      std::map<std::string, std::string> overrides;
      if (*seed_opt) overrides["seed"] = std::to_string(seed);
      if (!variant.empty()) overrides["variant"] = variant;
      if (oracle) overrides["oracle_actions"] = "true";
      if (reset) overrides["reset_pool"] = "true";
      const auto cfg = load_config(config_path, overrides);
      if (ingest->parsed()) cmd_ingest(cfg, out);
      if (sft->parsed()) cmd_train_sft(cfg, out);
      if (scorer->parsed()) cmd_train_scorer(cfg, out);
      if (quark->parsed()) cmd_train_quark(cfg, out);
      if (evaluate->parsed()) cmd_evaluate(cfg, out);
      if (human->parsed()) cmd_export_human_eval(cfg, count.value_or(cfg.human_eval_count), out);
      if (judge->parsed()) {
        if (!judge_command.empty() && !judge_url.empty()) throw ConfigError("pass --command or --url, not both");
        std::unique_ptr<JudgeTransport> t;
        if (!judge_command.empty()) t = std::make_unique<PipeTransport>(judge_command, cfg.judge_timeout);
        if (!judge_url.empty()) t = transport_from_url(judge_url, cfg.judge_timeout);
        cmd_judge(cfg, t.get(), out);
      }
    }
  } catch (const InputError& e) {
    err << "wfc: " << e.what() << '\n';
    code = 1;
  } catch (const std::exception& e) {
    err << "wfc: " << e.what() << '\n';
    code = 2;
  }
  restore();
  return code;
}

}  // namespace wfc
