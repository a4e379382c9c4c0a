// Copyright 2026 The wfcomply Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wfc/corpus.hpp"

namespace wfc {

/// Generator for the small keyword workflow task shipped under data/fixture.
/// Two domains share a vocabulary; every workflow action has a few agent
/// templates carrying its keywords, and most agent turns are filler.
struct FixtureOptions {
  std::size_t train_dialogues = 120;
  std::size_t dev_dialogues = 20;
  std::size_t test_dialogues = 20;
  /// Chance that a block's last agent turn before the action is a compliant
  /// template rather than filler.
  double compliance_rate = 0.5;
  std::size_t max_filler_rounds = 1;
  std::uint64_t seed = 7;
};

struct Fixture {
  DomainSet domains;
  std::vector<Dialogue> dialogues;
};

Fixture make_fixture(const FixtureOptions& options = {});

/// Union of the keyword maps of all domains.
std::map<std::string, std::vector<std::string>> keyword_map(const DomainSet& domains);

/// Triplets whose preferred block holds a template of the planned action and
/// whose rejected block holds filler or another action's template.
std::vector<ComparisonTriplet> make_separable_triplets(std::size_t count, std::uint64_t seed);

}  // namespace wfc
