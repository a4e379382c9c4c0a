// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/eval.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <variant>

#include "httplib.h"
#include "wfc/log.hpp"
#include "wfc/rng.hpp"

namespace wfc {

double block_similarity(std::span<const std::string> preds, std::span<const std::string> targets,
                        const PairwiseSimilarity& sim) {
  if (preds.empty() || targets.empty()) throw UndefinedMetricError("block similarity needs predictions and targets");
  double total = 0.0;
  for (const auto& p : preds) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : targets) best = std::max(best, sim(p, t));
    total += best;
  }
  return total / static_cast<double>(preds.size());
}

double token_f1(std::string_view pred, std::string_view target) {
  const auto a = split_words(pred);
  const auto b = split_words(target);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : b) ++counts[w];
  std::size_t overlap = 0;
  for (const auto& w : a) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(a.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

double sentence_bleu(std::string_view pred, std::string_view target, int max_n) {
  if (max_n < 1) throw InputError("BLEU order must be at least 1");
  const auto hyp = split_words(pred);
  const auto ref = split_words(target);
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto h = ngram_counts(hyp, static_cast<std::size_t>(n));
    const auto r = ngram_counts(ref, static_cast<std::size_t>(n));
    double matched = 0.0, total = 0.0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = r.find(g);
      if (it != r.end()) matched += std::min(c, it->second);
    }
    if (n > 1) {
      matched += 1.0;
      total += 1.0;
    }
    if (matched == 0.0) return 0.0;
    log_sum += std::log(matched / total);
  }
  const double c = static_cast<double>(hyp.size());
  const double rlen = static_cast<double>(ref.size());
  const double bp = c >= rlen ? 1.0 : std::exp(1.0 - rlen / c);
  return bp * std::exp(log_sum / max_n);
}

double dist_n(std::span<const std::vector<std::string>> utterances, int n) {
  if (n < 1) throw InputError("dist-n needs n >= 1");
  std::set<std::vector<std::string>> distinct;
  std::size_t total = 0;
  for (const auto& u : utterances) {
    const auto counts = ngram_counts(u, static_cast<std::size_t>(n));
    for (const auto& [g, c] : counts) {
      distinct.insert(g);
      total += static_cast<std::size_t>(c);
    }
  }
  if (total == 0) throw UndefinedMetricError("no " + std::to_string(n) + "-grams to count");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double dist_n(std::span<const std::string> utterances, int n) {
  std::vector<std::vector<std::string>> toks;
  toks.reserve(utterances.size());
  for (const auto& u : utterances) toks.push_back(split_words(u));
  return dist_n(toks, n);
}

double workflow_accuracy(std::span<const std::optional<std::string>> predicted, std::span<const std::string> gold) {
  if (predicted.size() != gold.size())
    throw InputError("workflow accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold actions");
  if (gold.empty()) throw UndefinedMetricError("workflow accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (predicted[i] && *predicted[i] == gold[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

ComplianceResult compliance_eval(std::span<const ScoredItem> items, const RewardFunction& reward) {
  if (items.empty()) throw UndefinedMetricError("compliance of an empty set");
  ComplianceResult out;
  out.scores.reserve(items.size());
  for (const auto& it : items) {
    const double r = reward.reward(it.planned_action, it.block);
    if (!std::isfinite(r) || r < 0.0 || r > 1.0) throw Error("reward outside [0, 1] for '" + it.planned_action + "'");
    out.scores.push_back(r);
  }
  out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) / static_cast<double>(out.scores.size());
  return out;
}

ComplianceResult compliance_eval(std::span<const ScoredItem> items, const ComplianceScorer& scorer) {
  return compliance_eval(items, ScorerReward(scorer));
}

// ---------------------------------------------------------------------------

void MetricReport::validate() const {
  auto check = [](double v, const std::string& what, bool unit) {
    if (!std::isfinite(v)) throw Error("report value '" + what + "' is not finite");
    if (unit && (v < 0.0 || v > 1.0)) throw Error("report value '" + what + "' is outside [0, 1]");
  };
  for (const auto& m : models) {
    check(m.compliance_mean, m.model + ".compliance", true);
    for (const auto& [k, v] : m.block_similarity) check(v, m.model + ".similarity." + k, false);
    check(m.dist3, m.model + ".dist3", true);
    if (m.workflow_accuracy) check(*m.workflow_accuracy, m.model + ".workflow_accuracy", true);
  }
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : models) {
    ms.push_back({{"model", m.model},
                  {"compliance_mean", m.compliance_mean},
                  {"block_similarity", m.block_similarity},
                  {"dist3", m.dist3},
                  {"workflow_accuracy", m.workflow_accuracy ? nlohmann::json(*m.workflow_accuracy) : nlohmann::json()},
                  {"items", m.items},
                  {"unknown_actions", m.unknown_actions}});
  }
  return {{"config_fingerprint", config_fingerprint}, {"models", ms}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  for (const auto& m : j.at("models")) {
    ModelMetrics mm;
    mm.model = m.at("model").get<std::string>();
    mm.compliance_mean = m.at("compliance_mean").get<double>();
    mm.block_similarity = m.at("block_similarity").get<std::map<std::string, double>>();
    mm.dist3 = m.at("dist3").get<double>();
    if (!m.at("workflow_accuracy").is_null()) mm.workflow_accuracy = m.at("workflow_accuracy").get<double>();
    mm.items = m.at("items").get<std::size_t>();
    mm.unknown_actions = m.at("unknown_actions").get<std::size_t>();
    r.models.push_back(std::move(mm));
  }
  return r;
}

void MetricReport::write_csv(std::ostream& out) const {
  std::set<std::string> sims;
  for (const auto& m : models)
    for (const auto& [k, v] : m.block_similarity) sims.insert(k);
  out << "model,compliance";
  for (const auto& s : sims) out << ",block_" << s;
  out << ",dist3,workflow_accuracy,items,unknown_actions\n";
  for (const auto& m : models) {
    out << csv_field(m.model) << ',' << m.compliance_mean;
    for (const auto& s : sims) {
      out << ',';
      if (auto it = m.block_similarity.find(s); it != m.block_similarity.end()) out << it->second;
    }
    out << ',' << m.dist3 << ',';
    if (m.workflow_accuracy) out << *m.workflow_accuracy;
    out << ',' << m.items << ',' << m.unknown_actions << '\n';
  }
}

std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

struct Text {
  const char* s;
};
struct Field {
  const char* name;
};
using Piece = std::variant<Text, Field>;

// The template strings are reproduced byte for byte, spelling included; a
// lone backslash before a capital letter is kept as a literal backslash.
const std::vector<Piece>& pieces(PromptKind kind) {
  static const std::vector<Piece> generation = {
      Text{"You are a cusotmer agent helping a customer with a issue. Read the dialogue context, provided policy "
           "guideline, and generate an agent utterance to help the customer in a way that is compliant to the "
           "guideline. The generated agent turn should be at most 2 utterances, and should be similar in length to "
           "the agent utterances shown in the examples that demonsrtate compliant agent behavior.\n\\Custome "
           "Situation: "},
      Field{"s"},
      Text{"\n\\Policy Action Name: "},
      Field{"w"},
      Text{"\n\\Policy Name Guideline: "},
      Field{"g"},
      Text{"\n\n\\"},
      Field{"example_str"},
      Text{"dialogue Context: "},
      Field{"i"},
      Text{"\n\n\\Agent: "},
  };
  static const std::vector<Piece> evaluation = {
      Text{"Read the provide guideline and assess the extent to which the agent's behavior in the input interaction "
           "aligns with the specified workflow action, considering the name and a concise description of the "
           "workflow provided. 1 = Compliant\n0 = Non-compliant\n\nSubflow: "},
      Field{"s"},
      Text{"\nWorkflow: "},
      Field{"w"},
      Text{"\nDescription: "},
      Field{"g"},
      Text{"\n\n\\Dialogue History:\n"},
      Field{"i"},
      Text{"\n\nInput Interaction:\n"},
      Field{"r"},
      Text{"\n\nAnswer:"},
  };
  return kind == PromptKind::generation ? generation : evaluation;
}

}  // namespace

std::vector<std::string> prompt_fields(PromptKind kind) {
  std::vector<std::string> out;
  for (const auto& p : pieces(kind))
    if (const auto* f = std::get_if<Field>(&p)) out.emplace_back(f->name);
  return out;
}

std::string render_judge_prompt(PromptKind kind, const std::map<std::string, std::string>& fields) {
  std::string out;
  for (const auto& p : pieces(kind)) {
    if (const auto* t = std::get_if<Text>(&p)) {
      out += t->s;
    } else {
      const auto* f = std::get_if<Field>(&p);
      auto it = fields.find(f->name);
      if (it == fields.end()) throw MissingFieldError(f->name);
      out += it->second;
    }
  }
  return out;
}

std::optional<int> parse_judge_response(std::string_view response) {
  std::size_t i = 0;
  while (i < response.size() && std::isspace(static_cast<unsigned char>(response[i]))) ++i;
  if (i < response.size() && (response[i] == '0' || response[i] == '1')) {
    // "10" or "0.7" are not labels
    const bool more = i + 1 < response.size() &&
                      (std::isdigit(static_cast<unsigned char>(response[i + 1])) || response[i + 1] == '.');
    if (!more) return response[i] - '0';
  }
  log_warning("unparseable judge response: '" + std::string(response.substr(0, 40)) + "'");
  return std::nullopt;
}

PipeTransport::PipeTransport(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw ConfigError("judge command is empty");
}

std::string PipeTransport::complete(const std::string& prompt) const {
  int in[2], out[2];
  if (pipe(in) != 0) throw Error("pipe failed");
  if (pipe(out) != 0) {
    close(in[0]);
    close(in[1]);
    throw Error("pipe failed");
  }
  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in[0], in[1], out[0], out[1]}) close(fd);
    throw Error("fork failed");
  }
  if (pid == 0) {
    dup2(in[0], STDIN_FILENO);
    dup2(out[1], STDOUT_FILENO);
    for (int fd : {in[0], in[1], out[0], out[1]}) close(fd);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in[0]);
  close(out[1]);

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::string reply;
  std::size_t written = 0;
  bool writing = true;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd fds[2] = {{out[0], POLLIN, 0}, {writing ? in[1] : -1, POLLOUT, 0}};
    const int n = poll(fds, 2, static_cast<int>(left.count()));
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) break;
    if (writing && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::write(in[1], prompt.data() + written, prompt.size() - written);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 || written == prompt.size()) {
        close(in[1]);
        writing = false;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = ::read(out[0], buf, sizeof buf);
      if (r <= 0) break;
      reply.append(buf, static_cast<std::size_t>(r));
    }
  }
  if (writing) close(in[1]);
  close(out[0]);
  if (timed_out) kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  if (timed_out) throw Error("judge command timed out");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw Error("judge command failed with status " + std::to_string(status));
  return reply;
}

HttpTransport::HttpTransport(std::string host, int port, std::string path, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), path_(std::move(path)), timeout_(timeout) {
  if (host_.empty() || port_ <= 0) throw ConfigError("judge endpoint needs a host and a port");
}

std::string HttpTransport::complete(const std::string& prompt) const {
  httplib::Client client(host_, port_);
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const nlohmann::json body = {{"prompt", prompt}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw Error("judge request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("judge endpoint returned HTTP " + std::to_string(res->status));
  const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
  if (parsed.is_object() && parsed.contains("response") && parsed["response"].is_string())
    return parsed["response"].get<std::string>();
  return res->body;
}

std::vector<std::optional<int>> judge_all(const JudgeTransport& transport, std::span<const std::string> prompts,
                                          std::size_t max_parallel) {
  std::vector<std::optional<int>> out(prompts.size());
  if (prompts.empty()) return out;
  const std::size_t workers = std::clamp<std::size_t>(max_parallel, 1, prompts.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        out[i] = parse_judge_response(transport.complete(prompts[i]));
      } catch (const Error& e) {
        log_warning(std::string("judge call ") + std::to_string(i) + " failed: " + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void AnnotationSheet::write_csv(std::ostream& out) const {
  out << "id,context,planned_action,block,compliance,coherence\n";
  for (const auto& r : rows)
    out << csv_field(r.id) << ',' << csv_field(r.context) << ',' << csv_field(r.planned_action) << ','
        << csv_field(r.block) << ",,\n";
}

std::string_view human_eval_guidelines() {
  return "Label every row with two binary judgments.\n"
         "\n"
         "compliance: write 1 if the agent turns in the block carry out the planned workflow action as the domain "
         "guideline describes it. Write 0 if they skip the action or only partly do what it requires.\n"
         "\n"
         "coherence: write 1 if the agent turns follow naturally from the dialogue context and answer what the "
         "customer said. Write 0 if they are off topic or contradict earlier turns.\n"
         "\n"
         "Judge the two columns independently: a block can be compliant but incoherent, or the reverse.\n";
}

AnnotationSheet export_human_eval(std::span<const HumanEvalItem> samples, std::size_t k, std::uint64_t seed) {
  if (k > samples.size())
    throw InputError("asked for " + std::to_string(k) + " annotation items but only " +
                     std::to_string(samples.size()) + " are available");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  AnnotationSheet sheet;
  sheet.guidelines = human_eval_guidelines();
  for (std::size_t i = 0; i < k; ++i) sheet.rows.push_back(samples[idx[i]]);
  return sheet;
}

}  // namespace wfc
