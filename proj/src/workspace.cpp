// SPDX-License-Identifier: Apache-2.0
#include "icpipe/workspace.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>

#include "icpipe/error.hpp"
#include "icpipe/synth.hpp"

namespace icpipe {

// --- run manifest --------------------------------------------------------

void RunManifest::validate() const {
  if (run_id.empty()) throw PipelineError(Errc::config_error, "manifest needs a run_id");
  if (stage.empty()) throw PipelineError(Errc::config_error, "manifest needs a stage name");
  for (const auto& [name, path] : inputs)
    if (path.empty())
      throw PipelineError(Errc::config_error, "manifest input '" + name + "' has no path");
}

json RunManifest::to_json() const {
  json ji = json::object();
  for (const auto& [k, v] : inputs) ji[k] = v;
  json jo = json::object();
  for (const auto& [k, v] : outputs) jo[k] = v;
  return json{{"run_id", run_id},       {"stage", stage},
              {"inputs", ji},           {"outputs", jo},
              {"seed", seed},           {"call_budget", call_budget},
              {"backend_ref", backend_ref}, {"created_at", created_at},
              {"checkpoints", checkpoints}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  const json ji = j.value("inputs", json::object());
  for (const auto& [k, v] : ji.items()) m.inputs[k] = v.get<std::string>();
  const json jo = j.value("outputs", json::object());
  for (const auto& [k, v] : jo.items()) m.outputs[k] = v.get<std::string>();
  m.seed = j.value("seed", uint64_t{7});
  m.call_budget = j.value("call_budget", uint64_t{100000});
  m.backend_ref = j.value("backend_ref", "mock");
  m.created_at = j.value("created_at", "");
  for (const auto& c : j.value("checkpoints", json::array()))
    m.checkpoints.push_back(c.get<std::string>());
  m.validate();
  return m;
}

std::string iso_timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string new_run_id() {
  auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
  std::random_device rd;
  uint64_t salt = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  return hex64(fnv1a64_u64(salt, static_cast<uint64_t>(ns)));
}

// --- configuration -------------------------------------------------------

json default_config() {
  json c;
  c["backends"] = {{"mode", "mock"},
                   {"chat", {{"endpoint_url", ""},
                             {"model_name", "default"},
                             {"timeout_seconds", 30.0},
                             {"max_retries", 3},
                             {"max_concurrency", 4},
                             {"api_key_env", "ICPIPE_API_KEY"}}},
                   {"embed_dim", 64},
                   {"embed_seed", 7},
                   {"call_budget", 100000},
                   {"safety_blocklist", json::array({"UNSAFE_CONTENT"})}};
  c["corpus"] = {{"clean", {{"tail_fraction", 0.2}, {"header_footer_min_pages", 3}}},
                 {"dedup", {{"jaccard_threshold", 0.85},
                            {"seed", 7},
                            {"num_permutations", 128},
                            {"shingle_size", 5},
                            {"bands", 16}}},
                 {"code", {{"indent_unit", 2}}},
                 {"mix", {{"schedule_length", 10000}}}};
  c["synth"] = {{"candidates_per_round", 5},
                {"exemplar_demos", 3},
                {"max_debate_turns_per_side", 2},
                {"inspect_budget_rounds", 5},
                {"max_pairs_multi_page", 20},
                {"max_pairs_single_page", 6},
                {"single_page_chars", 3000},
                {"retrieval_k", 3},
                {"min_paragraph_chars", 200},
                {"max_doc_chars_in_prompt", 6000},
                {"seed", 7}};
  c["data"] = {{"mix", {{"domain_parts", 8}, {"general_parts", 1}, {"unit", "records"},
                        {"seed", 0}}},
               {"split", {{"fractions", json::array({0.9, 0.1})}, {"seed", 0}}}};
  c["align"] = {{"split", {{"fractions", json::array({0.8, 0.2})}, {"seed", 7}}}};
  c["rag"] = {{"chunk", {{"max_chars", 1200}, {"overlap_chars", 200}}},
              {"graph", {{"neighbors", 16},
                         {"construction_beam", 100},
                         {"search_beam", 64},
                         {"exact_fallback_below", 10000}}},
              {"k", 3},
              {"context_char_budget", 6000}};
  c["eval"] = {{"weights", {{"auto_scoring", 0.7}, {"debate", 0.3}}}, {"max_turns", 1}};
  return c;
}

static void merge_into(json& base, const json& user, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key))
      throw PipelineError(Errc::config_error, "unknown config key: " + here);
    if (base[key].is_object() && value.is_object())
      merge_into(base[key], value, here);
    else
      base[key] = value;
  }
}

json merge_config(const json& defaults, const json& user) {
  json merged = defaults;
  if (!user.is_object())
    throw PipelineError(Errc::config_error, "config root must be an object");
  merge_into(merged, user, "");
  return merged;
}

json load_config(const std::filesystem::path& path) {
  json defaults = default_config();
  if (path.empty() || !std::filesystem::exists(path)) return defaults;
  json user;
  try {
    user = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw PipelineError(Errc::config_error, "bad config file " + path.string() + ": " + e.what());
  }
  return merge_config(defaults, user);
}

// --- workspace -----------------------------------------------------------

Workspace::Workspace(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(manifests_dir());
  std::filesystem::create_directories(logs_dir());
  std::filesystem::create_directories(summaries_dir());
}

Workspace::~Workspace() {
  if (locked_) release_lock();
}

void Workspace::acquire_lock() {
  auto lock_path = root_ / ".lock";
  if (std::filesystem::exists(lock_path))
    throw PipelineError(Errc::config_error,
                        "workspace is locked by another run (" + lock_path.string() +
                            "); remove the stale lock if no run is active");
  write_file(lock_path, iso_timestamp_utc() + "\n");
  locked_ = true;
}

void Workspace::release_lock() {
  std::error_code ec;
  std::filesystem::remove(root_ / ".lock", ec);
  locked_ = false;
}

void Workspace::log_event(const std::string& run_id, json event) {
  event["run_id"] = run_id;
  event["ts"] = iso_timestamp_utc();
  append_jsonl(logs_dir() / (run_id + ".jsonl"), event);
}

void Workspace::save_manifest(const RunManifest& manifest) {
  manifest.validate();
  atomic_write_file(manifests_dir() / (manifest.run_id + ".json"),
                    manifest.to_json().dump(2) + "\n");
}

RunManifest Workspace::load_manifest(const std::string& run_id) const {
  auto path = manifests_dir() / (run_id + ".json");
  if (!std::filesystem::exists(path))
    throw PipelineError(Errc::input_missing, "no manifest for run " + run_id);
  return RunManifest::from_json(json::parse(read_file(path)));
}

void Workspace::checkpoint(RunManifest& manifest, const std::string& name) {
  manifest.checkpoints.push_back(name);
  save_manifest(manifest);
  log_event(manifest.run_id, json{{"event", "checkpoint"}, {"name", name}});
}

bool Workspace::stage_complete(const std::string& stage) const {
  return std::filesystem::exists(summaries_dir() / (stage + ".json"));
}

json Workspace::stage_summary(const std::string& stage) const {
  auto path = summaries_dir() / (stage + ".json");
  if (!std::filesystem::exists(path))
    throw PipelineError(Errc::input_missing, "no summary for stage " + stage);
  return json::parse(read_file(path));
}

json Workspace::run_stage(RunManifest manifest, const std::function<void(RunManifest&)>& body,
                          bool force) {
  manifest.validate();
  if (stage_complete(manifest.stage) && !force) {
    json summary = stage_summary(manifest.stage);
    summary["already_complete"] = true;
    log_event(manifest.run_id, json{{"event", "skipped"}, {"stage", manifest.stage}});
    return summary;
  }
  acquire_lock();
  try {
    if (manifest.created_at.empty()) manifest.created_at = iso_timestamp_utc();
    save_manifest(manifest);
    log_event(manifest.run_id, json{{"event", "stage_start"}, {"stage", manifest.stage}});
    body(manifest);
    json jo = json::object();
    for (const auto& [k, v] : manifest.outputs) jo[k] = v;
    json summary{{"run_id", manifest.run_id},
                 {"stage", manifest.stage},
                 {"status", "ok"},
                 {"outputs", jo},
                 {"completed_at", iso_timestamp_utc()}};
    save_manifest(manifest);
    atomic_write_file(summaries_dir() / (manifest.stage + ".json"), summary.dump(2) + "\n");
    log_event(manifest.run_id, json{{"event", "stage_done"}, {"stage", manifest.stage}});
    release_lock();
    return summary;
  } catch (const std::exception& e) {
    log_event(manifest.run_id,
              json{{"event", "stage_error"}, {"stage", manifest.stage}, {"error", e.what()}});
    release_lock();
    throw;
  }
}

// --- validation ----------------------------------------------------------

static void validate_jsonl_file(const std::filesystem::path& path,
                                std::vector<Violation>& out) {
  std::ifstream in(path);
  std::string line;
  size_t lineno = 0;
  std::vector<json> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      out.push_back({path.string(), lineno, e.what()});
    }
  }
  // chained sample databases additionally verify their hash chain
  if (path.filename() == "accepted.jsonl") {
    try {
      SampleDatabase db;
      db.load_accepted(path);
    } catch (const std::exception& e) {
      out.push_back({path.string(), 0, e.what()});
    }
  }
}

static void check_magic(const std::filesystem::path& path, const char* magic,
                        std::vector<Violation>& out) {
  std::ifstream in(path, std::ios::binary);
  char buf[4] = {0, 0, 0, 0};
  in.read(buf, 4);
  if (in.gcount() != 4 || std::string(buf, 4) != magic)
    out.push_back({path.string(), 0, std::string("bad magic, expected ") + magic});
}

std::vector<Violation> validate_workspace(const std::filesystem::path& root) {
  std::vector<Violation> out;
  if (!std::filesystem::exists(root)) return out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto& path = entry.path();
    auto ext = path.extension().string();
    auto name = path.filename().string();
    if (name == ".lock") continue;
    if (ext == ".jsonl") {
      validate_jsonl_file(path, out);
    } else if (ext == ".json") {
      try {
        json parsed = json::parse(read_file(path));
        if (path.parent_path().filename() == "manifests") RunManifest::from_json(parsed);
      } catch (const std::exception& e) {
        out.push_back({path.string(), 0, e.what()});
      }
    } else if (name == "vectors.bin") {
      check_magic(path, "ICPV", out);
    } else if (name == "graph.bin") {
      check_magic(path, "ICPG", out);
    }
  }
  return out;
}

}  // namespace icpipe
