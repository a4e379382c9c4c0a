// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/synthetic.hpp"

#include <array>
#include <span>

#include "wfc/errors.hpp"
#include "wfc/rng.hpp"

namespace wfc {

namespace {

struct ActionText {
  const char* action;
  std::array<const char*, 2> keywords;
  std::array<const char*, 2> templates;
};

constexpr std::array<ActionText, 4> kActions = {{
    {"verify-identity", {"name", "email"},
     {"could i get your full name and email please", "please confirm your name and the email on file"}},
    {"pull-up-account", {"account", "number"},
     {"let me open your account with that number", "what is your account number so i can look"}},
    {"offer-refund", {"refund", "card"},
     {"i can issue a refund to your card today", "the refund will go back to your card"}},
    {"share-tracking", {"tracking", "order"},
     {"here is the tracking link for your order", "your order tracking code is on its way"}},
}};

constexpr std::array<const char*, 6> kFiller = {
    "okay let me check that for you", "thanks for waiting one moment", "sure i understand",
    "give me a second here", "i see what you mean", "alright bear with me"};

constexpr std::array<const char*, 4> kUserOpen = {"hi i have a problem", "my package never arrived",
                                                  "i was charged twice", "hello something went wrong"};
constexpr std::array<const char*, 6> kUserReply = {"sure go ahead", "okay", "it is john smith", "yes please",
                                                   "thanks a lot", "fine by me"};
constexpr std::array<const char*, 2> kAgentClose = {"is there anything else i can do", "have a great day"};
constexpr std::array<const char*, 2> kUserClose = {"no that is all bye", "nothing else thanks"};

template <std::size_t N>
const char* pick(const std::array<const char*, N>& a, Rng& rng) {
  return a[rng.index(N)];
}

const ActionText& action_text(std::string_view name) {
  for (const auto& a : kActions)
    if (name == a.action) return a;
  throw Error("no synthetic templates for action '" + std::string(name) + "'");
}

DomainSet fixture_domains() {
  DomainSet out;
  auto add = [&](std::string id, std::string guideline, std::vector<std::string> seq) {
    DomainSpec d;
    d.domain_id = id;
    d.guideline = std::move(guideline);
    d.standard_sequence = seq;
    for (const auto& a : seq) {
      d.action_vocabulary.insert(a);
      const auto& t = action_text(a);
      d.keywords[a] = {t.keywords[0], t.keywords[1]};
    }
    out.emplace(std::move(id), std::move(d));
  };
  add("refunds", "Verify the customer, pull up the account, then offer a refund.",
      {"verify-identity", "pull-up-account", "offer-refund"});
  add("shipping", "Verify the customer, then share the tracking details of the order.",
      {"verify-identity", "share-tracking"});
  return out;
}

}  // namespace

Fixture make_fixture(const FixtureOptions& options) {
  Fixture fx;
  fx.domains = fixture_domains();
  Rng rng(options.seed);
  const std::size_t total = options.train_dialogues + options.dev_dialogues + options.test_dialogues;
  for (std::size_t n = 0; n < total; ++n) {
    Dialogue d;
    d.dialogue_id = "syn-" + std::to_string(n);
    d.domain_id = rng.index(3) < 2 ? "refunds" : "shipping";
    d.split = n < options.train_dialogues                          ? Split::train
              : n < options.train_dialogues + options.dev_dialogues ? Split::dev
                                                                     : Split::test;
    auto say = [&](Speaker s, std::string text) {
      Turn t;
      t.speaker = s;
      t.text = std::move(text);
      t.turn_index = static_cast<int>(d.turns.size());
      d.turns.push_back(std::move(t));
    };
    say(Speaker::user, pick(kUserOpen, rng));
    for (const auto& action : fx.domains.at(d.domain_id).standard_sequence) {
      const std::size_t fillers = rng.index(options.max_filler_rounds + 1);
      for (std::size_t f = 0; f < fillers; ++f) {
        say(Speaker::system, pick(kFiller, rng));
        say(Speaker::user, pick(kUserReply, rng));
      }
      const auto& t = action_text(action);
      say(Speaker::system, rng.uniform() < options.compliance_rate ? t.templates[rng.index(2)] : pick(kFiller, rng));
      say(Speaker::user, pick(kUserReply, rng));
      Turn a;
      a.speaker = Speaker::action;
      a.action_name = action;
      a.turn_index = static_cast<int>(d.turns.size());
      d.turns.push_back(std::move(a));
    }
    say(Speaker::system, pick(kAgentClose, rng));
    say(Speaker::user, pick(kUserClose, rng));
    fx.dialogues.push_back(std::move(d));
  }
  return fx;
}

std::map<std::string, std::vector<std::string>> keyword_map(const DomainSet& domains) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [id, d] : domains)
    for (const auto& [a, k] : d.keywords) out[a] = k;
  return out;
}

std::vector<ComparisonTriplet> make_separable_triplets(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  auto block = [&](const char* agent_line) {
    Block b;
    const std::size_t before = rng.index(3);
    for (std::size_t i = 0; i < before; ++i) {
      b.utterances.push_back({Speaker::user, pick(kUserReply, rng), {}, 0, {}});
      b.utterances.push_back({Speaker::system, pick(kFiller, rng), {}, 0, {}});
    }
    b.utterances.push_back({Speaker::user, pick(kUserReply, rng), {}, 0, {}});
    b.utterances.push_back({Speaker::system, agent_line, {}, 0, {}});
    for (std::size_t i = 0; i < b.utterances.size(); ++i) b.utterances[i].turn_index = static_cast<int>(i);
    b.span_end = b.utterances.size() - 1;
    return b;
  };
  std::vector<ComparisonTriplet> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto& p = kActions[rng.index(kActions.size())];
    ComparisonTriplet t;
    t.planned_action = p.action;
    t.preferred = block(p.templates[rng.index(2)]);
    t.preferred.planned_action.action = p.action;
    if (rng.uniform() < 0.5) {
      t.rejected = block(pick(kFiller, rng));
      t.rejected.planned_action.action = p.action;
    } else {
      std::size_t other = rng.index(kActions.size() - 1);
      const auto self = static_cast<std::size_t>(&p - kActions.data());
      if (other >= self) ++other;
      const auto& q = kActions[other];
      t.rejected = block(q.templates[rng.index(2)]);
      t.rejected.planned_action.action = q.action;
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace wfc
