// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#include "wfc/corpus.hpp"

#include <algorithm>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "wfc/errors.hpp"
#include "wfc/rng.hpp"

namespace wfc {

using nlohmann::json;

std::string_view to_string(Speaker s) {
  switch (s) {
    case Speaker::user: return "user";
    case Speaker::system: return "system";
    case Speaker::action: return "action";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

Speaker speaker_from_string(std::string_view s) {
  if (s == "user" || s == "customer") return Speaker::user;
  if (s == "system" || s == "agent") return Speaker::system;
  if (s == "action") return Speaker::action;
  throw InputError("unknown speaker '" + std::string(s) + "'");
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev" || s == "valid" || s == "validation") return Split::dev;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::no_action: return "no_action";
    case Variant::action_aware: return "action_aware";
    case Variant::action_plan: return "action_plan";
    case Variant::guideline: return "guideline";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "no_action") return Variant::no_action;
  if (s == "action_aware") return Variant::action_aware;
  if (s == "action_plan") return Variant::action_plan;
  if (s == "guideline") return Variant::guideline;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

std::vector<json> read_json_records(std::istream& in, bool allow_document) {
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (allow_document) {
    auto doc = json::parse(all, nullptr, /*allow_exceptions=*/false);
    if (!doc.is_discarded()) {
      if (doc.is_array()) return doc.get<std::vector<json>>();
      if (doc.is_object()) return {doc};
    }
  }
  std::vector<json> out;
  std::istringstream lines(all);
  std::string line;
  std::size_t index = 0;
  while (std::getline(lines, line)) {
    if (normalize_text(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(index, e.what());
    }
    ++index;
  }
  return out;
}

std::vector<std::string> string_list(const json& j, const char* key, std::size_t index) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (!v.is_array()) throw ParseError(index, std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ParseError(index, std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string required_string(const json& j, const char* key, std::size_t index) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string())
    throw ParseError(index, std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace

DomainSet parse_domains(std::istream& in) {
  DomainSet out;
  const auto records = read_json_records(in, true);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    DomainSpec d;
    d.domain_id = required_string(r, "domain", i);
    d.guideline = r.contains("guideline") && r.at("guideline").is_string() ? r.at("guideline").get<std::string>() : "";
    d.standard_sequence = string_list(r, "sequence", i);
    for (auto& a : string_list(r, "actions", i)) d.action_vocabulary.insert(std::move(a));
    if (r.contains("keywords")) {
      if (!r.at("keywords").is_object()) throw ParseError(i, "field 'keywords' must be an object");
      for (const auto& [action, words] : r.at("keywords").items()) {
        if (!words.is_array()) throw ParseError(i, "keyword lists must be arrays");
        d.keywords[action] = words.get<std::vector<std::string>>();
      }
    }
    std::vector<std::string> missing;
    for (const auto& a : d.standard_sequence)
      if (!d.action_vocabulary.contains(a)) missing.push_back(a);
    if (!missing.empty())
      throw ValidationError("domain '" + d.domain_id + "' sequence uses actions outside its vocabulary", missing);
    if (d.action_vocabulary.contains("NONE"))
      throw ValidationError("domain '" + d.domain_id + "' uses the reserved action name NONE");
    if (out.contains(d.domain_id)) throw ValidationError("duplicate domain id", {d.domain_id});
    out.emplace(d.domain_id, std::move(d));
  }
  return out;
}

std::vector<Dialogue> parse_corpus(std::istream& in, const DomainSet& domains) {
  const auto records = read_json_records(in, false);
  std::vector<Dialogue> out;
  std::vector<std::string> unknown_actions;
  std::vector<std::string> unknown_domains;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Dialogue d;
    d.dialogue_id = required_string(r, "dialogue_id", i);
    d.domain_id = required_string(r, "domain", i);
    try {
      d.split = split_from_string(required_string(r, "split", i));
    } catch (const ParseError&) {
      throw;
    } catch (const InputError& e) {
      throw ParseError(i, e.what());
    }
    if (!r.contains("turns") || !r.at("turns").is_array() || r.at("turns").empty())
      throw ParseError(i, "field 'turns' must be a nonempty array");
    int index = 0;
    for (const auto& jt : r.at("turns")) {
      Turn t;
      try {
        t.speaker = speaker_from_string(required_string(jt, "speaker", i));
      } catch (const ParseError&) {
        throw;
      } catch (const InputError& e) {
        throw ParseError(i, e.what());
      }
      t.turn_index = index++;
      if (t.speaker == Speaker::action) {
        t.action_name = required_string(jt, "action", i);
        if (jt.contains("text") && jt.at("text").is_string() && !jt.at("text").get<std::string>().empty())
          throw ParseError(i, "action turns carry no text");
      } else {
        t.text = required_string(jt, "text", i);
        if (jt.contains("action")) throw ParseError(i, "utterance turns carry no action");
        // Dialogue acts are plain text inside the system turn.
        const auto acts = string_list(jt, "acts", i);
        if (!acts.empty()) {
          std::string prefix;
          for (const auto& a : acts) prefix += a + " ";
          t.text = prefix + t.text;
        }
        if (normalize_text(t.text).empty()) throw ParseError(i, "utterance text is empty");
      }
      d.turns.push_back(std::move(t));
    }
    auto dom = domains.find(d.domain_id);
    if (dom == domains.end()) {
      unknown_domains.push_back(d.dialogue_id + ":" + d.domain_id);
    } else {
      for (const auto& t : d.turns)
        if (t.action_name && !dom->second.action_vocabulary.contains(*t.action_name))
          unknown_actions.push_back(d.dialogue_id + ":" + *t.action_name);
    }
    out.push_back(std::move(d));
  }
  if (!unknown_domains.empty()) throw ValidationError("dialogues reference unknown domains", unknown_domains);
  if (!unknown_actions.empty()) throw ValidationError("actions not in domain vocabulary", unknown_actions);
  return out;
}

void write_domains(std::ostream& out, const DomainSet& domains) {
  for (const auto& [id, d] : domains) {
    json j = {{"domain", d.domain_id},
              {"guideline", d.guideline},
              {"sequence", d.standard_sequence},
              {"actions", std::vector<std::string>(d.action_vocabulary.begin(), d.action_vocabulary.end())}};
    if (!d.keywords.empty()) j["keywords"] = d.keywords;
    out << j.dump() << '\n';
  }
}

void write_corpus(std::ostream& out, std::span<const Dialogue> dialogues) {
  for (const auto& d : dialogues) {
    json turns = json::array();
    for (const auto& t : d.turns) {
      json jt = {{"speaker", to_string(t.speaker)}};
      if (t.speaker == Speaker::action)
        jt["action"] = *t.action_name;
      else
        jt["text"] = t.text;
      turns.push_back(std::move(jt));
    }
    json j = {{"dialogue_id", d.dialogue_id}, {"domain", d.domain_id}, {"split", to_string(d.split)}, {"turns", turns}};
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Blocks

std::vector<Block> segment_blocks(const Dialogue& d) {
  std::vector<Block> blocks;
  Block cur;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const auto& t = d.turns[i];
    if (t.speaker == Speaker::action) {
      if (!cur.utterances.empty()) {
        cur.planned_action = PlannedAction{t.action_name};
        cur.dialogue_id = d.dialogue_id;
        cur.span_end = i - 1;
        blocks.push_back(std::move(cur));
        cur = Block{};
      }
      continue;
    }
    if (cur.utterances.empty()) cur.span_begin = i;
    cur.utterances.push_back(t);
  }
  if (!cur.utterances.empty()) {
    cur.dialogue_id = d.dialogue_id;
    cur.span_end = d.turns.size() - 1;
    blocks.push_back(std::move(cur));
  }
  return blocks;
}

Dialogue assign_planned_actions(const Dialogue& d) {
  Dialogue out = d;
  for (auto& t : out.turns) t.planned.reset();
  for (const auto& b : segment_blocks(d)) {
    for (std::size_t i = b.span_begin; i <= b.span_end; ++i) {
      auto& t = out.turns[i];
      if (t.speaker == Speaker::system) t.planned = b.planned_action;
    }
  }
  return out;
}

std::vector<ComparisonTriplet> build_triplets(std::span<const Block> blocks, std::size_t negatives_per_positive,
                                              std::uint64_t seed) {
  std::vector<const Block*> labeled;
  std::set<std::string> labels;
  for (const auto& b : blocks) {
    if (b.planned_action.is_none() || b.empty()) continue;
    labeled.push_back(&b);
    labels.insert(*b.planned_action.action);
  }
  if (labels.size() < 2)
    throw ConstructionError("triplet construction needs at least 2 distinct planned actions, found " +
                            std::to_string(labels.size()));

  std::vector<ComparisonTriplet> out;
  out.reserve(labeled.size() * negatives_per_positive);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& label = *labeled[i]->planned_action.action;
    candidates.clear();
    for (std::size_t j = 0; j < labeled.size(); ++j)
      if (*labeled[j]->planned_action.action != label) candidates.push_back(j);

    Rng rng(derive_seed(seed, i));
    std::vector<std::size_t> chosen;
    const std::size_t distinct = std::min(negatives_per_positive, candidates.size());
    for (std::size_t n = 0; n < distinct; ++n) {
      const auto pick = n + rng.index(candidates.size() - n);
      std::swap(candidates[n], candidates[pick]);
      chosen.push_back(candidates[n]);
    }
    while (chosen.size() < negatives_per_positive) chosen.push_back(candidates[rng.index(candidates.size())]);

    for (auto j : chosen) out.push_back(ComparisonTriplet{label, *labeled[i], *labeled[j]});
  }
  return out;
}

namespace {

json utterances_json(const Block& b) {
  json a = json::array();
  for (const auto& t : b.utterances) a.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  return a;
}

Block block_from_json(const json& a, const std::string& action, std::size_t index) {
  Block b;
  b.planned_action = PlannedAction{action};
  if (!a.is_array()) throw ParseError(index, "utterance list must be an array");
  int i = 0;
  for (const auto& u : a) {
    Turn t;
    t.turn_index = i++;
    if (u.is_string()) {
      t.speaker = Speaker::system;
      t.text = u.get<std::string>();
    } else {
      t.speaker = speaker_from_string(required_string(u, "speaker", index));
      t.text = required_string(u, "text", index);
    }
    b.utterances.push_back(std::move(t));
  }
  if (!b.utterances.empty()) b.span_end = b.utterances.size() - 1;
  return b;
}

}  // namespace

void write_triplets(std::ostream& out, std::span<const ComparisonTriplet> triplets) {
  for (const auto& t : triplets) {
    json j = {{"action", t.planned_action},
              {"chosen", utterances_json(t.preferred)},
              {"rejected", utterances_json(t.rejected)}};
    out << j.dump() << '\n';
  }
}

std::vector<ComparisonTriplet> read_triplets(std::istream& in) {
  std::vector<ComparisonTriplet> out;
  const auto records = read_json_records(in, false);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    ComparisonTriplet t;
    t.planned_action = required_string(r, "action", i);
    if (!r.contains("chosen") || !r.contains("rejected")) throw ParseError(i, "missing chosen/rejected");
    t.preferred = block_from_json(r.at("chosen"), t.planned_action, i);
    t.rejected = block_from_json(r.at("rejected"), "", i);
    t.rejected.planned_action = PlannedAction{};
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

class Writer {
 public:
  Writer(SerializedContext& ctx, const Vocabulary& vocab) : ctx_(ctx), vocab_(vocab) {}

  std::size_t open(Special s) {
    ctx_.token_ids.push_back(id_of(s));
    return ctx_.token_ids.size() - 1;
  }
  void close(Special s, Region r, std::size_t begin) {
    ctx_.token_ids.push_back(id_of(s));
    ctx_.marker_spans.push_back({r, begin, ctx_.token_ids.size() - 1});
  }
  void text(std::string_view t) {
    for (auto id : vocab_.encode_text(t)) ctx_.token_ids.push_back(id);
  }
  void word(std::string_view w) { ctx_.token_ids.push_back(vocab_.id(w)); }

 private:
  SerializedContext& ctx_;
  const Vocabulary& vocab_;
};

Region region_opened_by(TokenId id) {
  switch (static_cast<Special>(id)) {
    case Special::start_user: return Region::user;
    case Special::start_agent: return Region::agent;
    case Special::start_workflow: return Region::workflow;
    case Special::start_action: return Region::action;
    default: return Region::dialog;
  }
}

std::optional<Region> region_closed_by(TokenId id) {
  switch (static_cast<Special>(id)) {
    case Special::end_user: return Region::user;
    case Special::end_agent: return Region::agent;
    case Special::end_workflow: return Region::workflow;
    case Special::end_action: return Region::action;
    case Special::end_dialogue: return Region::dialog;
    default: return std::nullopt;
  }
}

bool is_opener(TokenId id) {
  return id == id_of(Special::start_user) || id == id_of(Special::start_agent) ||
         id == id_of(Special::start_workflow) || id == id_of(Special::start_action) ||
         id == id_of(Special::start_dialog);
}

}  // namespace

SerializedContext serialize(std::span<const Turn> turns, Variant variant, const DomainSpec& domain,
                            const Vocabulary& vocab, SerializeOptions options) {
  SerializedContext ctx;
  ctx.variant = variant;
  Writer w(ctx, vocab);
  const auto dialog_begin = w.open(Special::start_dialog);

  if (variant == Variant::guideline) {
    const auto b = w.open(Special::start_workflow);
    for (const auto& a : domain.standard_sequence) w.word(a);
    w.close(Special::end_workflow, Region::workflow, b);
  }

  const bool show_actions = variant == Variant::action_aware || variant == Variant::action_plan;
  for (const auto& t : turns) {
    switch (t.speaker) {
      case Speaker::user: {
        const auto b = w.open(Special::start_user);
        w.text(t.text);
        w.close(Special::end_user, Region::user, b);
        break;
      }
      case Speaker::system: {
        if (variant == Variant::action_plan) {
          if (!t.planned)
            throw SerializationError("action_plan serialization needs planned actions (turn " +
                                     std::to_string(t.turn_index) + ")");
          if (!t.planned->is_none()) {
            const auto b = w.open(Special::start_workflow);
            w.word(*t.planned->action);
            w.close(Special::end_workflow, Region::workflow, b);
          }
        }
        const auto b = w.open(Special::start_agent);
        w.text(t.text);
        w.close(Special::end_agent, Region::agent, b);
        break;
      }
      case Speaker::action: {
        if (!show_actions) break;
        if (!t.action_name) throw SerializationError("action turn without action name");
        const auto b = w.open(Special::start_action);
        w.word(*t.action_name);
        w.close(Special::end_action, Region::action, b);
        break;
      }
    }
  }
  if (options.closed) {
    w.close(Special::end_dialogue, Region::dialog, dialog_begin);
  } else {
    ctx.marker_spans.push_back({Region::dialog, dialog_begin, ctx.token_ids.size()});
  }
  std::sort(ctx.marker_spans.begin(), ctx.marker_spans.end(),
            [](const MarkerSpan& a, const MarkerSpan& b) { return a.begin < b.begin; });
  return ctx;
}

std::vector<MarkerSpan> scan_markers(std::span<const TokenId> tokens, bool allow_open_dialog) {
  std::vector<MarkerSpan> spans;
  std::vector<std::pair<Region, std::size_t>> stack;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto id = tokens[i];
    if (is_opener(id)) {
      stack.emplace_back(region_opened_by(id), i);
    } else if (auto r = region_closed_by(id)) {
      if (stack.empty() || stack.back().first != *r)
        throw SerializationError("unmatched closing marker at position " + std::to_string(i));
      spans.push_back({*r, stack.back().second, i});
      stack.pop_back();
    }
  }
  if (!stack.empty()) {
    if (!(allow_open_dialog && stack.size() == 1 && stack.front().first == Region::dialog))
      throw SerializationError("unclosed marker opened at position " + std::to_string(stack.back().second));
    spans.push_back({Region::dialog, stack.front().second, tokens.size()});
  }
  std::sort(spans.begin(), spans.end(), [](const MarkerSpan& a, const MarkerSpan& b) { return a.begin < b.begin; });
  return spans;
}

DialogueView project(std::span<const Turn> turns, Variant variant, const DomainSpec& domain, bool closed) {
  DialogueView v;
  v.closed = closed;
  if (variant == Variant::guideline) v.guideline_sequence = domain.standard_sequence;
  const bool show_actions = variant == Variant::action_aware || variant == Variant::action_plan;
  for (const auto& t : turns) {
    if (t.speaker == Speaker::action) {
      if (show_actions) v.turns.push_back({Speaker::action, *t.action_name, std::nullopt});
      continue;
    }
    ViewTurn vt{t.speaker, normalize_text(t.text), std::nullopt};
    if (variant == Variant::action_plan && t.speaker == Speaker::system && t.planned) vt.planned = t.planned->action;
    v.turns.push_back(std::move(vt));
  }
  return v;
}

DialogueView deserialize(const SerializedContext& ctx, const Vocabulary& vocab) {
  const auto& tok = ctx.token_ids;
  scan_markers(tok);
  DialogueView v;
  std::size_t i = 0;
  auto expect = [&](Special s) {
    if (i >= tok.size() || tok[i] != id_of(s))
      throw SerializationError("expected " + std::string(kSpecialTokens[static_cast<std::size_t>(s)]) +
                               " at position " + std::to_string(i));
    ++i;
  };
  auto read_until = [&](Special end) {
    std::vector<TokenId> body;
    while (i < tok.size() && tok[i] != id_of(end)) {
      if (vocab.is_special(tok[i]) && tok[i] != id_of(Special::unk))
        throw SerializationError("unexpected marker inside region at position " + std::to_string(i));
      body.push_back(tok[i++]);
    }
    expect(end);
    return body;
  };

  expect(Special::start_dialog);
  if (ctx.variant == Variant::guideline) {
    expect(Special::start_workflow);
    for (auto id : read_until(Special::end_workflow)) v.guideline_sequence.push_back(vocab.token(id));
  }
  std::optional<std::string> pending_plan;
  while (i < tok.size()) {
    const auto id = tok[i];
    if (id == id_of(Special::end_dialogue)) {
      ++i;
      v.closed = true;
      if (i != tok.size()) throw SerializationError("tokens after END_DIALOGUE");
      break;
    }
    if (id == id_of(Special::start_user)) {
      ++i;
      v.turns.push_back({Speaker::user, vocab.decode_text(read_until(Special::end_user)), std::nullopt});
    } else if (id == id_of(Special::start_workflow) && ctx.variant == Variant::action_plan) {
      ++i;
      auto body = read_until(Special::end_workflow);
      if (body.size() != 1) throw SerializationError("workflow span must hold exactly one action");
      pending_plan = vocab.token(body.front());
      if (i >= tok.size() || tok[i] != id_of(Special::start_agent))
        throw SerializationError("workflow span not followed by an agent turn");
    } else if (id == id_of(Special::start_agent)) {
      ++i;
      ViewTurn t{Speaker::system, vocab.decode_text(read_until(Special::end_agent)), std::nullopt};
      t.planned = std::exchange(pending_plan, std::nullopt);
      v.turns.push_back(std::move(t));
    } else if (id == id_of(Special::start_action) &&
               (ctx.variant == Variant::action_aware || ctx.variant == Variant::action_plan)) {
      ++i;
      auto body = read_until(Special::end_action);
      if (body.size() != 1) throw SerializationError("action span must hold exactly one action");
      v.turns.push_back({Speaker::action, vocab.token(body.front()), std::nullopt});
    } else {
      throw SerializationError("unexpected token '" + vocab.token(id) + "' at position " + std::to_string(i));
    }
  }
  return v;
}

std::vector<std::string> corpus_words(std::span<const Dialogue> dialogues, const DomainSet& domains) {
  std::vector<std::string> words;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns)
      for (auto& w : split_words(t.text)) words.push_back(std::move(w));
  for (const auto& [id, dom] : domains) {
    for (const auto& a : dom.action_vocabulary) words.push_back(a);
    for (const auto& a : dom.standard_sequence) words.push_back(a);
  }
  return words;
}

std::size_t LmExample::num_targets() const {
  return static_cast<std::size_t>(std::count(target.begin(), target.end(), std::uint8_t{1}));
}

LmExample make_lm_example(const SerializedContext& ctx, Speaker role) {
  LmExample ex;
  ex.tokens = ctx.token_ids;
  ex.target.assign(ex.tokens.size(), 0);
  const auto& spans = ctx.marker_spans;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const auto& sp = spans[s];
    std::size_t opener = sp.begin;
    if (role == Speaker::system && sp.region == Region::agent) {
      if (ctx.variant == Variant::action_plan && s > 0 && spans[s - 1].region == Region::workflow &&
          spans[s - 1].end + 1 == sp.begin)
        opener = spans[s - 1].begin;
    } else if (!(role == Speaker::user && sp.region == Region::user)) {
      continue;
    }
    for (std::size_t p = opener + 1; p <= sp.end && p < ex.target.size(); ++p) ex.target[p] = 1;
  }
  return ex;
}

LmExample make_pair_example(std::span<const TokenId> context, std::span<const TokenId> target) {
  LmExample ex;
  ex.tokens.assign(context.begin(), context.end());
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  ex.target.assign(context.size(), 0);
  ex.target.resize(ex.tokens.size(), 1);
  return ex;
}

}  // namespace wfc
