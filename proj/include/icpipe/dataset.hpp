// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icpipe/qa.hpp"
#include "icpipe/util.hpp"

namespace icpipe {

// --- records -------------------------------------------------------------

struct AlpacaRecord {
  std::string instruction;
  std::string input;  // may be empty
  std::string output;

  json to_json() const;  // keys exactly: instruction, input, output
  static AlpacaRecord from_json(const json& j);
  bool operator==(const AlpacaRecord&) const = default;
};

enum class TurnRole { human, gpt };

struct ShareGPTRecord {
  std::vector<std::pair<TurnRole, std::string>> conversations;

  json to_json() const;
  static ShareGPTRecord from_json(const json& j);
  bool operator==(const ShareGPTRecord&) const = default;
};

AlpacaRecord to_alpaca(const QAPair& pair);
ShareGPTRecord to_sharegpt(const std::vector<std::pair<TurnRole, std::string>>& turns);

// --- mixing / splitting --------------------------------------------------

enum class MixUnit { records, tokens };

struct MixSpec {
  int domain_parts = 8;
  int general_parts = 1;
  MixUnit unit = MixUnit::records;
  uint64_t seed = 0;
};

struct MixResult {
  std::vector<json> records;
  size_t domain_taken = 0;
  size_t general_taken = 0;
  bool general_empty_warning = false;
};

MixResult mix_and_shuffle(const std::vector<json>& domain, const std::vector<json>& general,
                          const MixSpec& spec);

std::vector<std::vector<json>> split_dataset(const std::vector<json>& data,
                                             const std::vector<double>& fractions,
                                             uint64_t seed);

// --- training-config manifests -------------------------------------------

// Flat key-value manifest for an external trainer; defaults are the
// published settings for each stage, any key overridable.
json emit_training_config(const std::string& stage, const json& overrides = json::object());

}  // namespace icpipe
