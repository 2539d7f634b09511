// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icpipe/util.hpp"

namespace icpipe {

// --- run manifest --------------------------------------------------------

struct RunManifest {
  std::string run_id;
  std::string stage;
  std::map<std::string, std::string> inputs;   // logical name -> path
  std::map<std::string, std::string> outputs;  // logical name -> path
  uint64_t seed = 7;
  uint64_t call_budget = 100000;
  std::string backend_ref = "mock";  // "mock" or path to a backend config
  std::string created_at;            // UTC, ISO 8601
  std::vector<std::string> checkpoints;  // completed steps, append-only

  void validate() const;
  json to_json() const;
  static RunManifest from_json(const json& j);
};

std::string iso_timestamp_utc();
std::string new_run_id();

// --- configuration -------------------------------------------------------

// Full default tree: one section per stage, every tunable present.
json default_config();

// Overlays user settings onto the defaults; any key that does not exist in
// the defaults is fatal (named by dotted path).
json merge_config(const json& defaults, const json& user);

// Missing file -> pure defaults.
json load_config(const std::filesystem::path& path);

// --- workspace -----------------------------------------------------------

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);
  ~Workspace();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path manifests_dir() const { return root_ / "manifests"; }
  std::filesystem::path logs_dir() const { return root_ / "logs"; }
  std::filesystem::path summaries_dir() const { return root_ / "summaries"; }

  // single-writer lock file
  void acquire_lock();
  void release_lock();

  // one JSON object per line; run_id and timestamp stamped onto every event
  void log_event(const std::string& run_id, json event);

  void save_manifest(const RunManifest& manifest);
  RunManifest load_manifest(const std::string& run_id) const;
  // records a completed step and persists the manifest immediately
  void checkpoint(RunManifest& manifest, const std::string& name);

  bool stage_complete(const std::string& stage) const;
  json stage_summary(const std::string& stage) const;

  // Runs the stage body unless already complete (then a no-op summary is
  // returned); holds the lock for the duration; writes the summary last.
  json run_stage(RunManifest manifest, const std::function<void(RunManifest&)>& body,
                 bool force = false);

 private:
  std::filesystem::path root_;
  bool locked_ = false;
};

// --- validation ----------------------------------------------------------

struct Violation {
  std::string file;
  size_t line = 0;  // 0 when the problem is file-level
  std::string message;
};

// Schema-checks every persisted file under root; violations are report
// content, never exceptions.
std::vector<Violation> validate_workspace(const std::filesystem::path& root);

}  // namespace icpipe
