// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "icpipe/dataset.hpp"
#include "icpipe/error.hpp"
#include "icpipe/workspace.hpp"
#include "test_helpers.hpp"

using namespace icpipe;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(ICPIPE_BIN) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

// --- configuration -------------------------------------------------------

TEST_CASE("merge_config overlays known keys and names unknown ones by path") {
  json defaults = default_config();
  json merged = merge_config(defaults, json{{"corpus", {{"dedup", {{"bands", 8}}}}}});
  CHECK(merged.at("corpus").at("dedup").at("bands").get<int>() == 8);
  // untouched siblings survive
  CHECK(merged.at("corpus").at("dedup").at("shingle_size").get<int>() == 5);

  try {
    merge_config(defaults, json{{"corpus", {{"dedup", {{"bogus_knob", 1}}}}}});
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::config_error);
    CHECK(std::string(e.what()).find("corpus.dedup.bogus_knob") != std::string::npos);
  }
  CHECK_THROWS_AS(merge_config(defaults, json::array()), PipelineError);
}

TEST_CASE("load_config falls back to pure defaults for a missing file") {
  CHECK(load_config("/nonexistent/config.json") == default_config());

  testutil::TempDir tmp;
  write_file(tmp / "cfg.json", R"({"synth": {"candidates_per_round": 2}})");
  json cfg = load_config(tmp / "cfg.json");
  CHECK(cfg.at("synth").at("candidates_per_round").get<int>() == 2);
  CHECK(cfg.at("synth").at("exemplar_demos").get<int>() == 3);

  write_file(tmp / "broken.json", "{not json");
  CHECK_THROWS_AS(load_config(tmp / "broken.json"), PipelineError);
}

// --- manifests -----------------------------------------------------------

TEST_CASE("run manifests validate and round-trip") {
  RunManifest m;
  m.run_id = "r1";
  m.stage = "corpus-clean";
  m.inputs["manifest"] = "docs.jsonl";
  m.outputs["cleaned"] = "clean.jsonl";
  m.checkpoints = {"loaded", "cleaned"};
  auto back = RunManifest::from_json(m.to_json());
  CHECK(back.run_id == "r1");
  CHECK(back.inputs.at("manifest") == "docs.jsonl");
  CHECK(back.checkpoints.size() == 2);

  RunManifest no_stage;
  no_stage.run_id = "r2";
  CHECK_THROWS_AS(no_stage.validate(), PipelineError);

  CHECK(new_run_id() != new_run_id());
}

// --- workspace stages ----------------------------------------------------

TEST_CASE("run_stage skips completed stages unless forced") {
  testutil::TempDir tmp;
  Workspace ws{tmp.path};
  int body_runs = 0;
  auto make_manifest = [] {
    RunManifest m;
    m.run_id = new_run_id();
    m.stage = "demo-stage";
    return m;
  };
  auto body = [&](RunManifest& m) {
    ++body_runs;
    m.outputs["artifact"] = "out.jsonl";
  };

  json first = ws.run_stage(make_manifest(), body);
  CHECK(body_runs == 1);
  CHECK(first.at("status") == "ok");
  CHECK_FALSE(first.contains("already_complete"));
  CHECK(ws.stage_complete("demo-stage"));

  json second = ws.run_stage(make_manifest(), body);
  CHECK(body_runs == 1);  // no-op
  CHECK(second.at("already_complete").get<bool>());

  json forced = ws.run_stage(make_manifest(), body, /*force=*/true);
  CHECK(body_runs == 2);
  CHECK_FALSE(forced.contains("already_complete"));

  // the lock never outlives the stage
  CHECK_FALSE(std::filesystem::exists(tmp.path / ".lock"));
}

TEST_CASE("a held lock blocks a second run and is released on failure") {
  testutil::TempDir tmp;
  Workspace ws{tmp.path};
  ws.acquire_lock();
  Workspace other{tmp.path};
  CHECK_THROWS_AS(other.acquire_lock(), PipelineError);

  RunManifest m;
  m.run_id = "blocked";
  m.stage = "s1";
  CHECK_THROWS_AS(ws.run_stage(m, [](RunManifest&) {}), PipelineError);
  ws.release_lock();

  // a failing body still releases the lock
  m.stage = "s2";
  CHECK_THROWS_AS(ws.run_stage(m,
                               [](RunManifest&) {
                                 throw PipelineError(Errc::backend_failure, "boom");
                               }),
                  PipelineError);
  CHECK_FALSE(std::filesystem::exists(tmp.path / ".lock"));
  CHECK_FALSE(ws.stage_complete("s2"));
}

TEST_CASE("checkpoints append to the persisted manifest") {
  testutil::TempDir tmp;
  Workspace ws{tmp.path};
  RunManifest m;
  m.run_id = "ckpt-run";
  m.stage = "s";
  ws.save_manifest(m);
  ws.checkpoint(m, "phase-one");
  ws.checkpoint(m, "phase-two");
  auto loaded = ws.load_manifest("ckpt-run");
  CHECK(loaded.checkpoints == std::vector<std::string>{"phase-one", "phase-two"});
  CHECK_THROWS_AS(ws.load_manifest("missing-run"), PipelineError);
}

// --- workspace validation ------------------------------------------------

TEST_CASE("validate_workspace is quiet on a fresh workspace") {
  testutil::TempDir tmp;
  Workspace ws{tmp.path};
  RunManifest m;
  m.run_id = "ok-run";
  m.stage = "s";
  ws.run_stage(m, [&](RunManifest& mm) {
    ws.log_event(mm.run_id, json{{"event", "work"}});
    mm.outputs["x"] = "y";
  });
  CHECK(validate_workspace(tmp.path).empty());
}

TEST_CASE("validate_workspace pinpoints corrupt artifacts") {
  testutil::TempDir tmp;
  Workspace ws{tmp.path};

  write_file(tmp / "rows.jsonl", "{\"ok\": 1}\nthis is not json\n{\"ok\": 2}\n");
  auto violations = validate_workspace(tmp.path);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].line == 2);
  CHECK(violations[0].file.find("rows.jsonl") != std::string::npos);

  // a manifest that fails schema validation
  write_file(ws.manifests_dir() / "bad.json", R"({"run_id": "", "stage": "s"})");
  // a binary index file with a wrong magic
  std::filesystem::create_directories(tmp.path / "index");
  write_file(tmp.path / "index" / "vectors.bin", "XXXXgarbage");
  violations = validate_workspace(tmp.path);
  CHECK(violations.size() == 3);

  // the lock file is exempt
  write_file(tmp / ".lock", "not json either");
  CHECK(validate_workspace(tmp.path).size() == 3);
}

// --- the installed binary ------------------------------------------------

TEST_CASE("the cli writes trainer configs and honors exit-code conventions") {
  testutil::TempDir tmp;
  std::string ws = " --workspace " + (tmp / "ws").string();

  int rc = run_cli("data emit-config --stage sft --out " + (tmp / "sft.json").string() + ws);
  CHECK(rc == 0);
  CHECK(read_file(tmp / "sft.json") == emit_training_config("sft").dump(2) + "\n");

  // overrides flow through
  rc = run_cli("data emit-config --stage dpo --set warmup=25 --out " +
               (tmp / "dpo.json").string() + ws + " --force");
  CHECK(rc == 0);
  CHECK(json::parse(read_file(tmp / "dpo.json")).at("warmup").get<int>() == 25);

  // unknown stage -> configuration exit code
  CHECK(run_cli("data emit-config --stage bogus --out " + (tmp / "x.json").string() + ws) == 2);

  // unparseable command line
  CHECK(run_cli("no-such-subcommand") == 2);

  // unknown config key -> configuration exit code
  write_file(tmp / "bad_cfg.json", R"({"corpus": {"no_such_knob": 1}})");
  CHECK(run_cli("validate --config " + (tmp / "bad_cfg.json").string() + ws) == 2);

  // missing input file -> missing-input exit code
  CHECK(run_cli("data split --in " + (tmp / "absent.jsonl").string() +
                " --fractions 0.9,0.1 --out-prefix " + (tmp / "p").string() + ws) == 3);

  // fractions that do not sum to one -> configuration exit code
  write_jsonl(tmp / "rows.jsonl", {json{{"i", 0}}, json{{"i", 1}}});
  CHECK(run_cli("data split --in " + (tmp / "rows.jsonl").string() +
                " --fractions 0.5,0.4 --out-prefix " + (tmp / "q").string() + ws) == 2);
}

TEST_CASE("the cli validate subcommand reports violations via its exit code") {
  testutil::TempDir tmp;
  std::string ws = " --workspace " + (tmp / "ws").string();
  CHECK(run_cli("validate" + ws) == 0);

  write_file(tmp.path / "ws" / "broken.jsonl", "nope\n");
  CHECK(run_cli("validate" + ws) == 1);
}
