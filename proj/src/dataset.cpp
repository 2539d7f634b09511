// SPDX-License-Identifier: Apache-2.0
#include "icpipe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icpipe/corpus.hpp"
#include "icpipe/error.hpp"
#include "icpipe/rng.hpp"

namespace icpipe {

// --- records -------------------------------------------------------------

json AlpacaRecord::to_json() const {
  return json{{"instruction", instruction}, {"input", input}, {"output", output}};
}

AlpacaRecord AlpacaRecord::from_json(const json& j) {
  AlpacaRecord r;
  r.instruction = j.at("instruction").get<std::string>();
  r.input = j.at("input").get<std::string>();
  r.output = j.at("output").get<std::string>();
  if (r.instruction.empty() || r.output.empty())
    throw PipelineError(Errc::empty_field, "alpaca record with empty instruction or output");
  return r;
}

json ShareGPTRecord::to_json() const {
  json conv = json::array();
  for (const auto& [role, value] : conversations) {
    conv.push_back(json{{"from", role == TurnRole::human ? "human" : "gpt"}, {"value", value}});
  }
  return json{{"conversations", conv}};
}

ShareGPTRecord ShareGPTRecord::from_json(const json& j) {
  std::vector<std::pair<TurnRole, std::string>> turns;
  for (const auto& t : j.at("conversations")) {
    std::string from = t.at("from").get<std::string>();
    if (from != "human" && from != "gpt")
      throw PipelineError(Errc::role_order_violation, "unknown role " + from);
    turns.emplace_back(from == "human" ? TurnRole::human : TurnRole::gpt,
                       t.at("value").get<std::string>());
  }
  return to_sharegpt(turns);
}

AlpacaRecord to_alpaca(const QAPair& pair) {
  if (pair.question.empty() || pair.answer.empty())
    throw PipelineError(Errc::empty_field, "QA pair with empty question or answer");
  return AlpacaRecord{pair.question, "", pair.answer};
}

ShareGPTRecord to_sharegpt(const std::vector<std::pair<TurnRole, std::string>>& turns) {
  if (turns.empty())
    throw PipelineError(Errc::role_order_violation, "conversation has no turns");
  for (size_t i = 0; i < turns.size(); ++i) {
    TurnRole expected = (i % 2 == 0) ? TurnRole::human : TurnRole::gpt;
    if (turns[i].first != expected)
      throw PipelineError(Errc::role_order_violation,
                          "turn " + std::to_string(i) + " breaks human/gpt alternation");
  }
  if (turns.back().first != TurnRole::gpt)
    throw PipelineError(Errc::role_order_violation, "conversation must end with a gpt turn");
  return ShareGPTRecord{turns};
}

// --- mixing --------------------------------------------------------------

namespace {

std::string record_text(const json& rec) {
  std::string out;
  if (rec.is_object()) {
    for (const auto& [k, v] : rec.items()) {
      if (v.is_string()) out += v.get<std::string>() + " ";
      else out += v.dump() + " ";
    }
  } else {
    out = rec.dump();
  }
  return out;
}

}  // namespace

MixResult mix_and_shuffle(const std::vector<json>& domain, const std::vector<json>& general,
                          const MixSpec& spec) {
  if (spec.domain_parts <= 0 || spec.general_parts <= 0)
    throw PipelineError(Errc::config_error, "mix parts must be positive");
  MixResult result;
  if (general.empty()) {
    result.records = domain;
    result.domain_taken = domain.size();
    result.general_empty_warning = true;
    Rng rng(spec.seed);
    rng.shuffle(result.records);
    return result;
  }
  if (spec.unit == MixUnit::records) {
    double k = std::min(static_cast<double>(domain.size()) / spec.domain_parts,
                        static_cast<double>(general.size()) / spec.general_parts);
    result.domain_taken = static_cast<size_t>(std::floor(k * spec.domain_parts));
    result.general_taken = static_cast<size_t>(std::floor(k * spec.general_parts));
  } else {
    // token-weighted: largest prefixes whose approximate token counts fit
    // the ratio on both sides
    std::vector<size_t> dom_tokens{0}, gen_tokens{0};
    for (const auto& r : domain) dom_tokens.push_back(dom_tokens.back() + count_tokens_default(record_text(r)));
    for (const auto& r : general) gen_tokens.push_back(gen_tokens.back() + count_tokens_default(record_text(r)));
    double ratio = static_cast<double>(spec.domain_parts) / spec.general_parts;
    size_t nd = domain.size(), ng = general.size();
    // shrink the side that overshoots its share
    while (nd > 0 && ng > 0 &&
           static_cast<double>(dom_tokens[nd]) > ratio * static_cast<double>(gen_tokens[ng])) {
      --nd;
    }
    result.domain_taken = nd;
    result.general_taken = ng;
  }
  result.records.assign(domain.begin(), domain.begin() + static_cast<long>(result.domain_taken));
  result.records.insert(result.records.end(), general.begin(),
                        general.begin() + static_cast<long>(result.general_taken));
  Rng rng(spec.seed);
  rng.shuffle(result.records);
  return result;
}

std::vector<std::vector<json>> split_dataset(const std::vector<json>& data,
                                             const std::vector<double>& fractions,
                                             uint64_t seed) {
  if (fractions.empty()) throw PipelineError(Errc::bad_fractions, "no fractions given");
  double sum = 0;
  for (double f : fractions) {
    if (f <= 0) throw PipelineError(Errc::bad_fractions, "fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw PipelineError(Errc::bad_fractions, "fractions must sum to 1");

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  // largest-remainder part sizes
  size_t n = data.size();
  std::vector<size_t> sizes(fractions.size());
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t i = 0; i < fractions.size(); ++i) {
    double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<size_t>(std::floor(exact));
    assigned += sizes[i];
    remainders.emplace_back(-(exact - std::floor(exact)), i);
  }
  std::sort(remainders.begin(), remainders.end());
  for (size_t r = 0; assigned < n; ++r, ++assigned) sizes[remainders[r % remainders.size()].second] += 1;

  std::vector<std::vector<json>> parts(fractions.size());
  size_t pos = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    for (size_t j = 0; j < sizes[i]; ++j) parts[i].push_back(data[order[pos++]]);
  }
  return parts;
}

// --- training-config manifests -------------------------------------------

json emit_training_config(const std::string& stage, const json& overrides) {
  json cfg;
  if (stage == "continue_pretrain") {
    cfg = json{{"stage", "continue_pretrain"},
               {"learning_rate", 5e-5},
               {"global_batch_size", 64},
               {"steps", 25512},
               {"epochs", 1},
               {"optimizer", "adamw"}};
  } else if (stage == "sft") {
    cfg = json{{"stage", "sft"},
               {"learning_rate", 5e-6},
               {"global_batch_size", 64},
               {"epochs", 2},
               {"optimizer", "adamw"}};
  } else if (stage == "dpo") {
    cfg = json{{"stage", "dpo"},
               {"learning_rate", 5e-6},
               {"optimizer", "paged_adamw_8bit"},
               {"sequence_length", 1024},
               {"global_batch_size", 32},
               {"warmup", 10},
               {"adapter_alpha", 128},
               {"adapter_rank", 128},
               {"adapter_dropout", 0.05}};
  } else {
    throw PipelineError(Errc::unknown_stage, stage);
  }
  for (const auto& [k, v] : overrides.items()) {
    if (!cfg.contains(k))
      throw PipelineError(Errc::config_error, "unknown training-config key " + k);
    cfg[k] = v;
  }
  return cfg;
}

}  // namespace icpipe
