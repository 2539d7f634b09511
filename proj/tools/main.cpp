// SPDX-License-Identifier: Apache-2.0
//
// icpipe: one binary, one subcommand per pipeline stage.
//   corpus clean | dedup | plan-mix
//   synth run
//   data convert | mix | split | emit-config
//   align split | harvest | pair | review | export
//   rag ingest | query | serve
//   eval score | judge | report
//   validate

#include <atomic>
#include <chrono>
#include <csignal>
#include <functional>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "icpipe/align.hpp"
#include "icpipe/backends.hpp"
#include "icpipe/corpus.hpp"
#include "icpipe/dataset.hpp"
#include "icpipe/error.hpp"
#include "icpipe/evalharness.hpp"
#include "icpipe/rag.hpp"
#include "icpipe/synth.hpp"
#include "icpipe/workspace.hpp"

using namespace icpipe;

namespace {

struct GlobalOpts {
  std::string workspace = "workspace";
  std::string config_path;
  uint64_t seed = 7;
  uint64_t budget = 100000;
  bool force = false;
};

json g_config;  // merged defaults + user file, loaded once in main

Backends make_backends(const json& cfg, const BudgetPtr& budget) {
  const json& b = cfg.at("backends");
  Backends out;
  if (b.at("mode") == "remote") {
    BackendConfig bc = BackendConfig::from_json(b.at("chat"));
    auto chat = std::make_shared<RemoteChatBackend>(bc);
    chat->set_budget(budget);
    auto embed =
        std::make_shared<RemoteEmbedBackend>(bc, b.at("embed_dim").get<size_t>());
    embed->set_budget(budget);
    auto safety = std::make_shared<RemoteSafetyBackend>(bc);
    safety->set_budget(budget);
    out.chat = chat;
    out.embed = embed;
    out.safety = safety;
  } else {
    auto chat = std::make_shared<MockChatBackend>();
    chat->set_budget(budget);
    auto embed = std::make_shared<MockEmbedBackend>(b.at("embed_dim").get<size_t>(),
                                                    b.at("embed_seed").get<uint64_t>());
    embed->set_budget(budget);
    std::vector<std::string> blocklist;
    for (const auto& s : b.at("safety_blocklist")) blocklist.push_back(s.get<std::string>());
    out.chat = chat;
    out.embed = embed;
    out.safety = std::make_shared<MockSafetyBackend>(blocklist);
  }
  return out;
}

// Wraps a stage body in manifest bookkeeping and prints the summary.
int run_stage(const GlobalOpts& g, const std::string& stage,
              const std::map<std::string, std::string>& inputs,
              const std::function<void(RunManifest&)>& body) {
  Workspace ws{g.workspace};
  RunManifest manifest;
  manifest.run_id = new_run_id();
  manifest.stage = stage;
  manifest.inputs = inputs;
  manifest.seed = g.seed;
  manifest.call_budget = g.budget;
  manifest.backend_ref = g_config.at("backends").at("mode").get<std::string>();
  json summary = ws.run_stage(std::move(manifest), body, g.force);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

std::vector<double> parse_fractions(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      out.push_back(std::stod(trim(field)));
    } catch (const std::exception&) {
      throw PipelineError(Errc::config_error, "bad fraction: " + field);
    }
  }
  return out;
}

json parse_overrides(const std::vector<std::string>& kvs) {
  json out = json::object();
  for (const auto& kv : kvs) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw PipelineError(Errc::config_error, "override must be key=value: " + kv);
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    try {
      size_t used = 0;
      double d = std::stod(value, &used);
      if (used == value.size()) {
        if (d == static_cast<double>(static_cast<int64_t>(d)) &&
            value.find_first_of(".eE") == std::string::npos)
          out[key] = static_cast<int64_t>(d);
        else
          out[key] = d;
        continue;
      }
    } catch (const std::exception&) {
    }
    out[key] = value;
  }
  return out;
}

std::vector<CleanDocument> read_clean_docs(const std::string& path) {
  std::vector<CleanDocument> docs;
  for (const auto& j : read_jsonl(path)) docs.push_back(CleanDocument::from_json(j));
  return docs;
}

// Fallback demonstration seeds when no exemplar file is given; synthesis
// requires at least one.
std::vector<QAPair> builtin_exemplars() {
  QAPair a;
  a.question = "What limits the open-loop gain of a single-stage CMOS amplifier?";
  a.answer =
      "The intrinsic gain gm*ro of the transistor: output resistance falls with "
      "channel-length modulation, so short channels cap the achievable gain.";
  a.qa_type = QaType::conceptual;
  a.generator = "A1";
  QAPair b;
  b.question = "Why does increasing clock frequency raise dynamic power quadratically "
               "when the supply also scales up?";
  b.answer =
      "Dynamic power is C*V^2*f; raising f alone is linear, but if V must rise to "
      "meet timing, the V^2 term compounds the increase.";
  b.qa_type = QaType::logical;
  b.generator = "A2";
  return {a, b};
}

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

SynthConfig synth_config_from(const json& cfg, uint64_t seed) {
  const json& s = cfg.at("synth");
  SynthConfig out;
  out.candidates_per_round = s.at("candidates_per_round").get<int>();
  out.exemplar_demos = s.at("exemplar_demos").get<int>();
  out.max_debate_turns_per_side = s.at("max_debate_turns_per_side").get<int>();
  out.inspect_budget_rounds = s.at("inspect_budget_rounds").get<int>();
  out.max_pairs_multi_page = s.at("max_pairs_multi_page").get<int>();
  out.max_pairs_single_page = s.at("max_pairs_single_page").get<int>();
  out.single_page_chars = s.at("single_page_chars").get<size_t>();
  out.retrieval_k = s.at("retrieval_k").get<int>();
  out.min_paragraph_chars = s.at("min_paragraph_chars").get<size_t>();
  out.max_doc_chars_in_prompt = s.at("max_doc_chars_in_prompt").get<size_t>();
  out.seed = seed;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline toolkit for domain corpus curation, QA synthesis, "
               "preference data, retrieval, and evaluation"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--workspace", g.workspace, "Workspace directory");
  app.add_option("--config", g.config_path, "Config file (JSON)");
  app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--budget", g.budget, "Backend call budget");
  app.add_flag("--force", g.force, "Re-run stages that already completed");

  int rc = 0;
  std::function<int()> action;

  // ---- corpus ----
  auto* corpus = app.add_subcommand("corpus", "Corpus curation");
  {
    auto* clean = corpus->add_subcommand("clean", "Clean raw documents from a manifest");
    auto manifest_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    clean->add_option("--manifest", *manifest_path, "Document manifest (JSON lines)")
        ->required();
    clean->add_option("--out", *out_path, "Cleaned documents output (JSON lines)")->required();
    clean->callback([&, manifest_path, out_path] {
      action = [&, manifest_path, out_path] {
        return run_stage(g, "corpus-clean", {{"manifest", *manifest_path}},
                         [&](RunManifest& m) {
                           auto raw = load_manifest(*manifest_path);
                           std::vector<json> rows;
                           for (const auto& doc : raw) {
                             auto [text, report] = clean_text(doc.text);
                             CleanDocument cd{doc.id, text, report};
                             rows.push_back(cd.to_json());
                           }
                           write_jsonl(*out_path, rows);
                           m.outputs["cleaned"] = *out_path;
                         });
      };
    });

    auto* dedup = corpus->add_subcommand("dedup", "Drop exact and near duplicates");
    auto in_path = std::make_shared<std::string>();
    auto dd_out = std::make_shared<std::string>();
    auto report_path = std::make_shared<std::string>();
    dedup->add_option("--in", *in_path, "Cleaned documents (JSON lines)")->required();
    dedup->add_option("--out", *dd_out, "Deduplicated output")->required();
    dedup->add_option("--report", *report_path, "Dedup report (JSON)");
    dedup->callback([&, in_path, dd_out, report_path] {
      action = [&, in_path, dd_out, report_path] {
        return run_stage(g, "corpus-dedup", {{"in", *in_path}}, [&](RunManifest& m) {
          auto docs = read_clean_docs(*in_path);
          const json& d = g_config.at("corpus").at("dedup");
          DedupParams params;
          params.jaccard_threshold = d.at("jaccard_threshold").get<double>();
          params.seed = d.at("seed").get<uint64_t>();
          params.num_permutations = d.at("num_permutations").get<int>();
          params.shingle_size = d.at("shingle_size").get<int>();
          params.bands = d.at("bands").get<int>();
          auto [kept, report] = deduplicate(docs, params);
          std::vector<json> rows;
          for (const auto& doc : kept) rows.push_back(doc.to_json());
          write_jsonl(*dd_out, rows);
          if (!report_path->empty())
            atomic_write_file(*report_path, report.to_json().dump(2) + "\n");
          m.outputs["deduped"] = *dd_out;
        });
      };
    });

    auto* plan = corpus->add_subcommand("plan-mix", "Repeat-and-ratio plan over sources");
    auto sources_path = std::make_shared<std::string>();
    auto plan_out = std::make_shared<std::string>();
    plan->add_option("--sources", *sources_path,
                     "JSON array of {data_type, original_tokens, repeat}")
        ->required();
    plan->add_option("--out", *plan_out, "Plan output (JSON)")->required();
    plan->callback([&, sources_path, plan_out] {
      action = [&, sources_path, plan_out] {
        return run_stage(g, "corpus-plan-mix", {{"sources", *sources_path}},
                         [&](RunManifest& m) {
                           std::vector<MixSource> sources;
                           for (const auto& j : json::parse(read_file(*sources_path))) {
                             sources.push_back({j.at("data_type").get<std::string>(),
                                                j.at("original_tokens").get<double>(),
                                                j.at("repeat").get<int>()});
                           }
                           size_t len = g_config.at("corpus").at("mix")
                                            .at("schedule_length").get<size_t>();
                           auto plan_result = plan_mix(sources, len);
                           atomic_write_file(*plan_out, plan_result.to_json().dump(2) + "\n");
                           m.outputs["plan"] = *plan_out;
                         });
      };
    });
  }

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "QA pair synthesis");
  {
    auto* run = synth->add_subcommand("run", "Synthesize QA pairs from cleaned documents");
    auto docs_path = std::make_shared<std::string>();
    auto qa_out = std::make_shared<std::string>();
    auto exemplars_path = std::make_shared<std::string>();
    auto state_dir = std::make_shared<std::string>();
    run->add_option("--docs", *docs_path, "Cleaned documents (JSON lines)")->required();
    run->add_option("--out", *qa_out, "Accepted QA pairs (JSON lines)")->required();
    run->add_option("--exemplars", *exemplars_path, "Exemplar QA pairs (JSON lines)");
    run->add_option("--state", *state_dir, "Synthesis state directory (for resume)");
    run->callback([&, docs_path, qa_out, exemplars_path, state_dir] {
      action = [&, docs_path, qa_out, exemplars_path, state_dir] {
        return run_stage(g, "synth-run", {{"docs", *docs_path}}, [&](RunManifest& m) {
          auto docs = read_clean_docs(*docs_path);
          auto budget = std::make_shared<CallBudget>(g.budget);
          Backends backends = make_backends(g_config, budget);
          SampleDatabase db;
          if (!exemplars_path->empty())
            db.load_exemplars(*exemplars_path);
          else
            db.set_exemplars(builtin_exemplars());
          SynthConfig cfg = synth_config_from(g_config, g.seed);
          std::filesystem::path state =
              state_dir->empty() ? std::filesystem::path(g.workspace) / "synth_state"
                                 : std::filesystem::path(*state_dir);
          std::vector<json> rows;
          for (const auto& doc : docs) {
            auto pairs = synthesize_document(doc, cfg, *backends.chat, *backends.embed, db,
                                             state / doc.id);
            for (const auto& p : pairs) rows.push_back(p.to_json());
          }
          write_jsonl(*qa_out, rows);
          db.save_accepted(state / "accepted.jsonl");
          m.outputs["qa"] = *qa_out;
          m.outputs["state"] = state.string();
        });
      };
    });
  }

  // ---- data ----
  auto* data = app.add_subcommand("data", "Training data shaping");
  {
    auto* convert = data->add_subcommand("convert", "QA pairs to Alpaca or ShareGPT rows");
    auto in_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>();
    convert->add_option("--in", *in_path, "QA pairs (JSON lines)")->required();
    convert->add_option("--out", *out_path, "Converted output")->required();
    convert->add_option("--format", *format, "alpaca | sharegpt")
        ->required()
        ->check(CLI::IsMember({"alpaca", "sharegpt"}));
    convert->callback([&, in_path, out_path, format] {
      action = [&, in_path, out_path, format] {
        return run_stage(g, "data-convert", {{"in", *in_path}}, [&](RunManifest& m) {
          std::vector<QAPair> pairs;
          for (const auto& j : read_jsonl(*in_path)) pairs.push_back(QAPair::from_json(j));
          std::vector<json> rows;
          if (*format == "alpaca") {
            for (const auto& p : pairs) rows.push_back(to_alpaca(p).to_json());
          } else {
            // one conversation per source document, turns in pair order
            std::vector<std::string> doc_order;
            std::map<std::string, std::vector<const QAPair*>> by_doc;
            for (const auto& p : pairs) {
              if (!by_doc.count(p.source_doc_id)) doc_order.push_back(p.source_doc_id);
              by_doc[p.source_doc_id].push_back(&p);
            }
            for (const auto& doc_id : doc_order) {
              std::vector<std::pair<TurnRole, std::string>> turns;
              for (const auto* p : by_doc[doc_id]) {
                turns.emplace_back(TurnRole::human, p->question);
                turns.emplace_back(TurnRole::gpt, p->answer);
              }
              rows.push_back(to_sharegpt(turns).to_json());
            }
          }
          write_jsonl(*out_path, rows);
          m.outputs["converted"] = *out_path;
        });
      };
    });

    auto* mix = data->add_subcommand("mix", "Blend domain and general records");
    auto domain_path = std::make_shared<std::string>();
    auto general_path = std::make_shared<std::string>();
    auto mix_out = std::make_shared<std::string>();
    mix->add_option("--domain", *domain_path, "Domain records (JSON lines)")->required();
    mix->add_option("--general", *general_path, "General records (JSON lines)")->required();
    mix->add_option("--out", *mix_out, "Mixed output")->required();
    mix->callback([&, domain_path, general_path, mix_out] {
      action = [&, domain_path, general_path, mix_out] {
        return run_stage(g, "data-mix",
                         {{"domain", *domain_path}, {"general", *general_path}},
                         [&](RunManifest& m) {
                           const json& c = g_config.at("data").at("mix");
                           MixSpec spec;
                           spec.domain_parts = c.at("domain_parts").get<int>();
                           spec.general_parts = c.at("general_parts").get<int>();
                           spec.unit = c.at("unit") == "tokens" ? MixUnit::tokens
                                                                : MixUnit::records;
                           spec.seed = c.at("seed").get<uint64_t>();
                           auto result = mix_and_shuffle(read_jsonl(*domain_path),
                                                         read_jsonl(*general_path), spec);
                           if (result.general_empty_warning)
                             std::cerr << "warning: no general records; "
                                          "emitting domain data only\n";
                           write_jsonl(*mix_out, result.records);
                           m.outputs["mixed"] = *mix_out;
                         });
      };
    });

    auto* split = data->add_subcommand("split", "Seeded dataset split");
    auto split_in = std::make_shared<std::string>();
    auto fractions = std::make_shared<std::string>();
    auto out_prefix = std::make_shared<std::string>();
    split->add_option("--in", *split_in, "Records (JSON lines)")->required();
    split->add_option("--fractions", *fractions, "Comma list, sums to 1 (e.g. 0.9,0.1)")
        ->required();
    split->add_option("--out-prefix", *out_prefix, "Outputs <prefix>.partN.jsonl")->required();
    split->callback([&, split_in, fractions, out_prefix] {
      action = [&, split_in, fractions, out_prefix] {
        return run_stage(g, "data-split", {{"in", *split_in}}, [&](RunManifest& m) {
          auto parts = split_dataset(read_jsonl(*split_in), parse_fractions(*fractions),
                                     g.seed);
          for (size_t i = 0; i < parts.size(); ++i) {
            std::string path = *out_prefix + ".part" + std::to_string(i) + ".jsonl";
            write_jsonl(path, parts[i]);
            m.outputs["part" + std::to_string(i)] = path;
          }
        });
      };
    });

    auto* emit = data->add_subcommand("emit-config", "Trainer manifest for a stage");
    auto stage_name = std::make_shared<std::string>();
    auto emit_out = std::make_shared<std::string>();
    auto overrides = std::make_shared<std::vector<std::string>>();
    emit->add_option("--stage", *stage_name, "continue_pretrain | sft | dpo")->required();
    emit->add_option("--out", *emit_out, "Output manifest (JSON)")->required();
    emit->add_option("--set", *overrides, "Override, key=value (repeatable)");
    emit->callback([&, stage_name, emit_out, overrides] {
      action = [&, stage_name, emit_out, overrides] {
        return run_stage(g, "data-emit-config-" + *stage_name, {}, [&](RunManifest& m) {
          json manifest = emit_training_config(*stage_name, parse_overrides(*overrides));
          atomic_write_file(*emit_out, manifest.dump(2) + "\n");
          m.outputs["config"] = *emit_out;
        });
      };
    });
  }

  // ---- align ----
  auto* align = app.add_subcommand("align", "Preference data from adversarial prompts");
  {
    auto* split = align->add_subcommand("split", "Train/test split of adversarial prompts");
    auto in_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    split->add_option("--in", *in_path, "Adversarial prompts (JSON lines)")->required();
    split->add_option("--out", *out_path, "Labeled prompts output")->required();
    split->callback([&, in_path, out_path] {
      action = [&, in_path, out_path] {
        return run_stage(g, "align-split", {{"in", *in_path}}, [&](RunManifest& m) {
          std::vector<AdversarialPrompt> prompts;
          for (const auto& j : read_jsonl(*in_path))
            prompts.push_back(AdversarialPrompt::from_json(j));
          const json& c = g_config.at("align").at("split");
          std::vector<double> fracs;
          for (const auto& f : c.at("fractions")) fracs.push_back(f.get<double>());
          auto labeled = split_adversarial(std::move(prompts), fracs,
                                           c.at("seed").get<uint64_t>());
          std::vector<json> rows;
          for (const auto& p : labeled) rows.push_back(p.to_json());
          write_jsonl(*out_path, rows);
          m.outputs["split"] = *out_path;
        });
      };
    });

    auto* harvest = align->add_subcommand("harvest", "Collect unsafe model responses");
    auto hv_in = std::make_shared<std::string>();
    auto hv_out = std::make_shared<std::string>();
    auto hv_log = std::make_shared<std::string>();
    harvest->add_option("--in", *hv_in, "Labeled prompts (JSON lines)")->required();
    harvest->add_option("--out", *hv_out, "Unsafe harvest output")->required();
    harvest->add_option("--log", *hv_log, "Harvest log (JSON lines)");
    harvest->callback([&, hv_in, hv_out, hv_log] {
      action = [&, hv_in, hv_out, hv_log] {
        return run_stage(g, "align-harvest", {{"in", *hv_in}}, [&](RunManifest& m) {
          std::vector<AdversarialPrompt> train;
          for (const auto& j : read_jsonl(*hv_in)) {
            auto p = AdversarialPrompt::from_json(j);
            if (p.split == "train") train.push_back(std::move(p));
          }
          auto budget = std::make_shared<CallBudget>(g.budget);
          Backends backends = make_backends(g_config, budget);
          auto result = harvest_unsafe(train, *backends.chat, *backends.safety);
          std::vector<json> rows;
          for (const auto& item : result.unsafe_items)
            rows.push_back(json{{"prompt", item.prompt.to_json()},
                                {"response", item.response}});
          write_jsonl(*hv_out, rows);
          if (!hv_log->empty()) write_jsonl(*hv_log, result.log);
          m.outputs["unsafe"] = *hv_out;
        });
      };
    });

    auto* pair = align->add_subcommand("pair", "Refusal/rejection preference records");
    auto pr_in = std::make_shared<std::string>();
    auto pr_out = std::make_shared<std::string>();
    pair->add_option("--in", *pr_in, "Unsafe harvest (JSON lines)")->required();
    pair->add_option("--out", *pr_out, "Preference records output")->required();
    pair->callback([&, pr_in, pr_out] {
      action = [&, pr_in, pr_out] {
        return run_stage(g, "align-pair", {{"in", *pr_in}}, [&](RunManifest& m) {
          std::vector<HarvestItem> items;
          for (const auto& j : read_jsonl(*pr_in))
            items.push_back({AdversarialPrompt::from_json(j.at("prompt")),
                             j.at("response").get<std::string>()});
          auto budget = std::make_shared<CallBudget>(g.budget);
          Backends backends = make_backends(g_config, budget);
          std::vector<json> log;
          auto records =
              build_preference_pairs(items, *backends.chat, *backends.safety, &log);
          std::vector<json> rows;
          for (const auto& r : records) rows.push_back(r.to_json());
          write_jsonl(*pr_out, rows);
          m.outputs["records"] = *pr_out;
        });
      };
    });

    auto* review = align->add_subcommand("review", "Accept or remove preference records");
    auto rv_records = std::make_shared<std::string>();
    auto rv_decisions = std::make_shared<std::string>();
    auto rv_batch = std::make_shared<bool>(false);
    review->add_option("--records", *rv_records, "Preference records (JSON lines)")
        ->required();
    review->add_option("--decisions", *rv_decisions, "Decision journal (JSON lines)")
        ->required();
    review->add_flag("--batch", *rv_batch,
                     "Apply the decision journal without prompting");
    review->callback([&, rv_records, rv_decisions, rv_batch] {
      action = [&, rv_records, rv_decisions, rv_batch] {
        // interactive by nature; no stage manifest, edits records in place
        std::vector<PreferenceRecord> records;
        for (const auto& j : read_jsonl(*rv_records))
          records.push_back(PreferenceRecord::from_json(j));
        if (*rv_batch)
          apply_review_decisions(records, load_decisions(*rv_decisions));
        else
          review_records_interactive(records, std::cin, std::cout, *rv_decisions);
        std::vector<json> rows;
        for (const auto& r : records) rows.push_back(r.to_json());
        write_jsonl(*rv_records, rows);
        size_t pending = 0;
        for (const auto& r : records) pending += r.review_status == "pending";
        std::cout << json{{"records", records.size()}, {"pending", pending}}.dump() << "\n";
        return 0;
      };
    });

    auto* exp = align->add_subcommand("export", "Accepted records as preference triples");
    auto ex_in = std::make_shared<std::string>();
    auto ex_out = std::make_shared<std::string>();
    exp->add_option("--records", *ex_in, "Reviewed records (JSON lines)")->required();
    exp->add_option("--out", *ex_out, "Triples output (JSON lines)")->required();
    exp->callback([&, ex_in, ex_out] {
      action = [&, ex_in, ex_out] {
        return run_stage(g, "align-export", {{"records", *ex_in}}, [&](RunManifest& m) {
          std::vector<PreferenceRecord> records;
          for (const auto& j : read_jsonl(*ex_in))
            records.push_back(PreferenceRecord::from_json(j));
          write_jsonl(*ex_out, export_accepted(records));
          m.outputs["triples"] = *ex_out;
        });
      };
    });
  }

  // ---- rag ----
  auto* rag = app.add_subcommand("rag", "Retrieval over chunked documents");
  {
    auto* ingest = rag->add_subcommand("ingest", "Chunk, embed, and index documents");
    auto docs_path = std::make_shared<std::string>();
    auto index_dir = std::make_shared<std::string>();
    ingest->add_option("--docs", *docs_path, "Documents (JSON lines with id and text)")
        ->required();
    ingest->add_option("--index", *index_dir, "Index directory")->required();
    ingest->callback([&, docs_path, index_dir] {
      action = [&, docs_path, index_dir] {
        return run_stage(g, "rag-ingest", {{"docs", *docs_path}}, [&](RunManifest& m) {
          auto budget = std::make_shared<CallBudget>(g.budget);
          Backends backends = make_backends(g_config, budget);
          const json& r = g_config.at("rag");
          ChunkingParams chunking{r.at("chunk").at("max_chars").get<size_t>(),
                                  r.at("chunk").at("overlap_chars").get<size_t>()};
          GraphParams graph;
          graph.neighbors = r.at("graph").at("neighbors").get<size_t>();
          graph.construction_beam = r.at("graph").at("construction_beam").get<size_t>();
          graph.search_beam = r.at("graph").at("search_beam").get<size_t>();
          graph.exact_fallback_below = r.at("graph").at("exact_fallback_below").get<size_t>();
          VectorIndex index{backends.embed->dimension(), graph};
          size_t added = 0;
          for (const auto& j : read_jsonl(*docs_path)) {
            auto chunks = chunk_document(j.at("id").get<std::string>(),
                                         j.at("text").get<std::string>(), chunking);
            added += ingest_chunks(index, chunks, *backends.embed).chunks_added;
          }
          index.save(*index_dir);
          m.outputs["index"] = *index_dir;
          m.outputs["chunks_added"] = std::to_string(added);
        });
      };
    });

    auto* query = rag->add_subcommand("query", "Answer one question against an index");
    auto q_index = std::make_shared<std::string>();
    auto question = std::make_shared<std::string>();
    auto k = std::make_shared<size_t>(0);
    query->add_option("--index", *q_index, "Index directory")->required();
    query->add_option("--question", *question, "Question text")->required();
    query->add_option("--k", *k, "Passages to retrieve (default from config)");
    query->callback([&, q_index, question, k] {
      action = [&, q_index, question, k] {
        auto budget = std::make_shared<CallBudget>(g.budget);
        Backends backends = make_backends(g_config, budget);
        auto index = VectorIndex::load(*q_index);
        size_t kk = *k ? *k : g_config.at("rag").at("k").get<size_t>();
        auto answer = answer_with_context(
            index, *question, *backends.embed, *backends.chat, kk,
            g_config.at("rag").at("context_char_budget").get<size_t>());
        json passages = json::array();
        for (const auto& hit : answer.passages) {
          json p = hit.chunk.to_json();
          p["score"] = hit.score;
          passages.push_back(p);
        }
        std::cout << json{{"answer", answer.answer}, {"passages", passages}}.dump(2)
                  << "\n";
        return 0;
      };
    });

    auto* serve = rag->add_subcommand("serve", "HTTP query service over an index");
    auto s_index = std::make_shared<std::string>();
    auto port = std::make_shared<int>(8080);
    serve->add_option("--index", *s_index, "Index directory")->required();
    serve->add_option("--port", *port, "Listen port");
    serve->callback([&, s_index, port] {
      action = [&, s_index, port] {
        auto budget = std::make_shared<CallBudget>(g.budget);
        Backends backends = make_backends(g_config, budget);
        auto index = VectorIndex::load(*s_index);
        const json& r = g_config.at("rag");
        ChunkingParams chunking{r.at("chunk").at("max_chars").get<size_t>(),
                                r.at("chunk").at("overlap_chars").get<size_t>()};
        RagService service{index, *backends.embed, *backends.chat, chunking};
        if (!service.start(*port))
          throw PipelineError(Errc::config_error,
                              "could not bind port " + std::to_string(*port));
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        std::cerr << "serving on 127.0.0.1:" << service.port() << "\n";
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        service.stop();
        return 0;
      };
    });
  }

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Benchmark scoring and reports");
  {
    auto* score = eval->add_subcommand("score", "Aspect-score responses");
    auto bench_path = std::make_shared<std::string>();
    auto responses_path = std::make_shared<std::string>();
    auto score_out = std::make_shared<std::string>();
    score->add_option("--bench", *bench_path, "Benchmark items (JSON lines)")->required();
    score->add_option("--responses", *responses_path,
                      "Responses (JSON lines: item_id, system, response)")
        ->required();
    score->add_option("--out", *score_out, "Scores output (JSON lines)")->required();
    score->callback([&, bench_path, responses_path, score_out] {
      action = [&, bench_path, responses_path, score_out] {
        return run_stage(g, "eval-score",
                         {{"bench", *bench_path}, {"responses", *responses_path}},
                         [&](RunManifest& m) {
                           auto bench = load_bench(*bench_path);
                           std::map<std::string, const BenchItem*> by_id;
                           for (const auto& item : bench) by_id[item.id] = &item;
                           auto budget = std::make_shared<CallBudget>(g.budget);
                           Backends backends = make_backends(g_config, budget);
                           std::vector<json> rows;
                           for (const auto& j : read_jsonl(*responses_path)) {
                             auto id = j.at("item_id").get<std::string>();
                             auto it = by_id.find(id);
                             if (it == by_id.end())
                               throw PipelineError(Errc::unknown_item,
                                                   "response for unknown item " + id);
                             auto result = score_response_aspects(
                                 *it->second, j.at("response").get<std::string>(),
                                 *backends.chat);
                             json aspects = json::array();
                             for (const auto& a : result.aspects)
                               aspects.push_back(json{{"aspect", a.aspect},
                                                      {"value", a.value},
                                                      {"rationale", a.rationale}});
                             rows.push_back(json{{"item_id", id},
                                                 {"system", j.at("system")},
                                                 {"combined", result.combined},
                                                 {"aspects", aspects}});
                           }
                           write_jsonl(*score_out, rows);
                           m.outputs["scores"] = *score_out;
                         });
      };
    });

    auto* judge = eval->add_subcommand("judge", "Pairwise referee ranking per item");
    auto j_bench = std::make_shared<std::string>();
    auto j_responses = std::make_shared<std::string>();
    auto j_out = std::make_shared<std::string>();
    judge->add_option("--bench", *j_bench, "Benchmark items (JSON lines)")->required();
    judge->add_option("--responses", *j_responses,
                      "Responses (JSON lines: item_id, system, response)")
        ->required();
    judge->add_option("--out", *j_out, "Verdicts output (JSON lines)")->required();
    judge->callback([&, j_bench, j_responses, j_out] {
      action = [&, j_bench, j_responses, j_out] {
        return run_stage(g, "eval-judge",
                         {{"bench", *j_bench}, {"responses", *j_responses}},
                         [&](RunManifest& m) {
                           auto bench = load_bench(*j_bench);
                           std::map<std::string, const BenchItem*> by_id;
                           for (const auto& item : bench) by_id[item.id] = &item;
                           std::map<std::string, std::map<std::string, std::string>> grouped;
                           for (const auto& j : read_jsonl(*j_responses))
                             grouped[j.at("item_id").get<std::string>()]
                                    [j.at("system").get<std::string>()] =
                                        j.at("response").get<std::string>();
                           auto budget = std::make_shared<CallBudget>(g.budget);
                           Backends backends = make_backends(g_config, budget);
                           int max_turns = g_config.at("eval").at("max_turns").get<int>();
                           std::vector<json> rows;
                           for (const auto& [item_id, responses] : grouped) {
                             if (responses.size() < 2) continue;
                             auto it = by_id.find(item_id);
                             if (it == by_id.end())
                               throw PipelineError(Errc::unknown_item,
                                                   "responses for unknown item " + item_id);
                             auto verdict = referee_rank(*it->second, responses,
                                                         *backends.chat, max_turns);
                             rows.push_back(json{{"item_id", verdict.item_id},
                                                 {"ranking", verdict.ranking},
                                                 {"judge_calls", verdict.judge_calls},
                                                 {"tie_breaks", verdict.tie_breaks},
                                                 {"transcript", verdict.transcript}});
                           }
                           write_jsonl(*j_out, rows);
                           m.outputs["verdicts"] = *j_out;
                         });
      };
    });

    auto* report = eval->add_subcommand("report", "Aggregate and render comparison tables");
    auto r_bench = std::make_shared<std::string>();
    auto r_scores = std::make_shared<std::string>();
    auto r_verdicts = std::make_shared<std::string>();
    auto r_human = std::make_shared<std::string>();
    auto r_out = std::make_shared<std::string>();
    report->add_option("--bench", *r_bench, "Benchmark items (JSON lines)")->required();
    report->add_option("--scores", *r_scores, "Scores from eval score (JSON lines)");
    report->add_option("--verdicts", *r_verdicts, "Verdicts from eval judge (JSON lines)");
    report->add_option("--human", *r_human, "Human scores CSV (item_id,system,rater,score)");
    report->add_option("--out", *r_out, "Report output directory")->required();
    report->callback([&, r_bench, r_scores, r_verdicts, r_human, r_out] {
      action = [&, r_bench, r_scores, r_verdicts, r_human, r_out] {
        return run_stage(g, "eval-report", {{"bench", *r_bench}}, [&](RunManifest& m) {
          auto bench = load_bench(*r_bench);
          std::vector<ItemScore> scores;
          if (!r_scores->empty())
            for (const auto& j : read_jsonl(*r_scores))
              scores.push_back({j.at("item_id").get<std::string>(),
                                j.at("system").get<std::string>(),
                                j.at("combined").get<double>()});
          std::vector<JudgeVerdict> verdicts;
          if (!r_verdicts->empty())
            for (const auto& j : read_jsonl(*r_verdicts)) {
              JudgeVerdict v;
              v.item_id = j.at("item_id").get<std::string>();
              for (const auto& s : j.at("ranking")) v.ranking.push_back(s.get<std::string>());
              verdicts.push_back(std::move(v));
            }
          HumanScores human;
          if (!r_human->empty()) human = ingest_human_scores(*r_human, bench);
          const json& w = g_config.at("eval").at("weights");
          ReportWeights weights{w.at("auto_scoring").get<double>(),
                                w.at("debate").get<double>()};
          auto report_data = aggregate_report(bench, scores, verdicts, human, weights);
          auto rendered = render_report(report_data);
          std::filesystem::create_directories(*r_out);
          atomic_write_file(std::filesystem::path(*r_out) / "report.txt",
                            rendered.table_text);
          for (const auto& [name, csv] : rendered.radar_csvs)
            atomic_write_file(std::filesystem::path(*r_out) / name, csv);
          m.outputs["report"] = *r_out;
        });
      };
    });
  }

  // ---- validate ----
  auto* validate = app.add_subcommand("validate", "Schema-check all workspace artifacts");
  validate->callback([&] {
    action = [&] {
      auto violations = validate_workspace(g.workspace);
      json rows = json::array();
      for (const auto& v : violations)
        rows.push_back(json{{"file", v.file}, {"line", v.line}, {"message", v.message}});
      std::cout << json{{"violations", rows}}.dump(2) << "\n";
      return violations.empty() ? 0 : 1;
    };
  });

  // let global flags appear after the subcommand as well
  std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* cmd) {
    cmd->fallthrough();
    for (CLI::App* sub : cmd->get_subcommands({})) enable_fallthrough(sub);
  };
  for (CLI::App* sub : app.get_subcommands({})) enable_fallthrough(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    g_config = load_config(g.config_path);
    if (action) rc = action();
  } catch (const PipelineError& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return rc;
}
