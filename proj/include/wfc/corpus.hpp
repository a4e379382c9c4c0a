// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wfc/vocabulary.hpp"

namespace wfc {

enum class Speaker { user, system, action };
enum class Split { train, dev, test };

std::string_view to_string(Speaker s);
std::string_view to_string(Split s);
Speaker speaker_from_string(std::string_view s);
Split split_from_string(std::string_view s);

/// Next workflow action a block works toward. An empty `action` is NONE: the
/// utterances follow the final action execution of the dialogue.
struct PlannedAction {
  std::optional<std::string> action;

  bool is_none() const noexcept { return !action.has_value(); }
  std::string label() const { return action.value_or("NONE"); }
  bool operator==(const PlannedAction&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;                        // empty for action turns
  std::optional<std::string> action_name;  // set iff speaker == action
  int turn_index = 0;
  std::optional<PlannedAction> planned;  // system turns, after assign_planned_actions()

  bool operator==(const Turn&) const = default;
};

struct DomainSpec {
  std::string domain_id;
  std::string guideline;
  std::vector<std::string> standard_sequence;
  std::set<std::string> action_vocabulary;
  /// Optional per-action keyword lists (extension field used by the
  /// synthetic keyword reward).
  std::map<std::string, std::vector<std::string>> keywords;
};

using DomainSet = std::map<std::string, DomainSpec, std::less<>>;

struct Dialogue {
  std::string dialogue_id;
  std::string domain_id;
  std::vector<Turn> turns;
  Split split = Split::train;

  bool operator==(const Dialogue&) const = default;
};

struct Block {
  PlannedAction planned_action;
  std::vector<Turn> utterances;  // user/system only
  std::string dialogue_id;
  std::size_t span_begin = 0;  // positions in Dialogue::turns, inclusive
  std::size_t span_end = 0;

  bool empty() const noexcept { return utterances.empty(); }
};

struct ComparisonTriplet {
  std::string planned_action;
  Block preferred;
  Block rejected;
};

// ---------------------------------------------------------------------------
// Ingestion

DomainSet parse_domains(std::istream& in);
/// One JSON record per non-blank line. Throws ParseError for malformed
/// records and ValidationError listing every action outside its domain.
std::vector<Dialogue> parse_corpus(std::istream& in, const DomainSet& domains);

void write_domains(std::ostream& out, const DomainSet& domains);
void write_corpus(std::ostream& out, std::span<const Dialogue> dialogues);

// ---------------------------------------------------------------------------
// Blocks

/// Splits a dialogue at its action turns. Each block is labeled with the
/// action that follows it; trailing utterances form a NONE block; empty
/// blocks between consecutive actions are not emitted.
std::vector<Block> segment_blocks(const Dialogue& d);

/// Copy of `d` with every system turn labeled by its block's planned action.
Dialogue assign_planned_actions(const Dialogue& d);

/// Triplets (p, b_w, b_l) with label(b_w) = p and label(b_l) != p. NONE and
/// empty blocks are ignored. Negatives are drawn uniformly without
/// replacement from blocks with a different label, with replacement once
/// those are exhausted.
std::vector<ComparisonTriplet> build_triplets(std::span<const Block> blocks, std::size_t negatives_per_positive,
                                              std::uint64_t seed);

void write_triplets(std::ostream& out, std::span<const ComparisonTriplet> triplets);
std::vector<ComparisonTriplet> read_triplets(std::istream& in);

// ---------------------------------------------------------------------------
// Serialization

enum class Variant { no_action, action_aware, action_plan, guideline };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

enum class Region { dialog, user, agent, workflow, action };

struct MarkerSpan {
  Region region;
  std::size_t begin;  // index of the START_* token
  std::size_t end;    // index of the matching END_* token
  bool operator==(const MarkerSpan&) const = default;
};

struct SerializedContext {
  std::vector<TokenId> token_ids;
  Variant variant = Variant::no_action;
  std::vector<MarkerSpan> marker_spans;  // ordered by begin; open dialog spans end at size()
};

struct SerializeOptions {
  /// Emit END_DIALOGUE after the last turn. Contexts handed to a generator
  /// are left open.
  bool closed = true;
};

SerializedContext serialize(std::span<const Turn> turns, Variant variant, const DomainSpec& domain,
                            const Vocabulary& vocab, SerializeOptions options = {});
inline SerializedContext serialize(const Dialogue& d, Variant variant, const DomainSpec& domain,
                                   const Vocabulary& vocab, SerializeOptions options = {}) {
  return serialize(std::span<const Turn>(d.turns), variant, domain, vocab, options);
}

/// Variant-visible projection of a dialogue.
struct ViewTurn {
  Speaker speaker;
  std::string content;  // normalized text, or the action identifier
  std::optional<std::string> planned;  // action_plan only; nullopt also for NONE
  bool operator==(const ViewTurn&) const = default;
};

struct DialogueView {
  std::vector<ViewTurn> turns;
  std::vector<std::string> guideline_sequence;  // guideline variant only
  bool closed = false;
  bool operator==(const DialogueView&) const = default;
};

DialogueView project(std::span<const Turn> turns, Variant variant, const DomainSpec& domain, bool closed = true);
DialogueView deserialize(const SerializedContext& ctx, const Vocabulary& vocab);

/// Checks START_*/END_* pairing and nesting; returns the spans or throws
/// SerializationError.
std::vector<MarkerSpan> scan_markers(std::span<const TokenId> tokens, bool allow_open_dialog = true);

/// All words and action identifiers in a corpus, for building a Vocabulary.
std::vector<std::string> corpus_words(std::span<const Dialogue> dialogues, const DomainSet& domains);

/// A serialized dialogue with a per-token mask selecting the positions a
/// role is trained to produce.
struct LmExample {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> target;  // same length; 1 = scored position
  std::size_t num_targets() const;
};

/// For Speaker::system, scores agent turns (after their first opener token,
/// so the workflow span of action_plan is predicted too). For Speaker::user,
/// scores user turns after START_USER.
LmExample make_lm_example(const SerializedContext& ctx, Speaker role);

/// Context tokens followed by target tokens, only the targets scored.
LmExample make_pair_example(std::span<const TokenId> context, std::span<const TokenId> target);

}  // namespace wfc
