#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "doctest.h"
#include "metafine/campaign.hpp"
#include "metafine/error.hpp"
#include "support.hpp"

using namespace metafine;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metafine_campaign_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// File name -> contents for every trace file.
std::map<std::string, std::string> trace_set(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir / "traces")) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

json base_config(const fs::path& out) {
  return json{{"tasks", {"grasp_cap", "press_button"}},
              {"policies", {"builtin:deterministic_biased?kappa=0.5"}},
              {"perturbations", {{{"kind", "photometric"}, {"levels", {1, 2, 3}}}}},
              {"trials", 3},
              {"seed", 11},
              {"budget", 300},
              {"output", out.string()},
              {"assets", std::string(METAFINE_DATA_DIR) + "/assets"},
              {"task_dir", std::string(METAFINE_DATA_DIR) + "/tasks"}};
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  const fs::path out = scratch("validation");
  json c = base_config(out);
  CHECK(parse_campaign_config(c).trials == 3);

  c = base_config(out);
  c.erase("tasks");
  CHECK(error_of([&] { parse_campaign_config(c); }).find("'tasks'") != std::string::npos);
  c = base_config(out);
  c["trials"] = 0;
  CHECK(error_of([&] { parse_campaign_config(c); }).find("'trials'") != std::string::npos);
  c = base_config(out);
  c["perturbations"][0]["levels"] = {4};
  CHECK(code_of([&] { parse_campaign_config(c); }) == ErrorCode::ConfigInvalid);
  c = base_config(out);
  c["colour"] = "red";
  CHECK(error_of([&] { parse_campaign_config(c); }).find("'colour'") != std::string::npos);
  c = base_config(out);
  c["policies"] = {"builtin:teleport"};
  CHECK(code_of([&] { parse_campaign_config(c); }) == ErrorCode::ConfigInvalid);
  c = base_config(out);
  c["policies"] = {"external:/no/such/policy --serve"};
  CHECK(error_of([&] { parse_campaign_config(c); }).find("/no/such/policy") != std::string::npos);
  c = base_config(out);
  c["interventions"] = {"time_travel"};
  CHECK(code_of([&] { parse_campaign_config(c); }) == ErrorCode::ConfigInvalid);
  c = base_config(out);
  c["nominal"] = false;
  c.erase("perturbations");
  CHECK(code_of([&] { parse_campaign_config(c); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("missing task file is rejected before anything runs") {
  const fs::path out = scratch("missing_task");
  json c = base_config(out);
  c["tasks"] = {"grasp_cap", "fold_laundry"};
  const CampaignConfig cfg = parse_campaign_config(c);
  const std::string msg = error_of([&] { run_campaign(cfg); });
  CHECK(msg.find("fold_laundry") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("sweep-only campaign has one trace per task, level and trial") {
  const fs::path out = scratch("structure");
  json c = base_config(out);
  c["nominal"] = false;
  c["trials"] = 4;
  const CampaignSummary s = run_campaign(parse_campaign_config(c));
  CHECK(s.cells.size() == 6);
  CHECK(s.errors() == 0);
  const auto traces = trace_set(out);
  CHECK(traces.size() == 6);
  int total = 0;
  for (const auto& [name, text] : traces) total += line_count(text);
  CHECK(total == 2 * 3 * 4);
  const json manifest = fixtures::read_json((out / "manifest.json").string());
  CHECK(manifest.at("engine_version") == kEngineVersion);
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  CHECK(manifest.at("cells").size() == 6);
  for (const auto& cell : manifest.at("cells")) CHECK(cell.at("status") == "complete");
}

TEST_CASE("a non-empty output directory requires resume") {
  const fs::path out = scratch("nonempty");
  fs::create_directories(out);
  std::ofstream(out / "stray.txt") << "x";
  CHECK(code_of([&] { run_campaign(parse_campaign_config(base_config(out))); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([&] { run_campaign(parse_campaign_config(base_config(out)), true); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("two runs and two worker counts give byte-identical traces and reports") {
  const fs::path a = scratch("det_a"), b = scratch("det_b"), w = scratch("det_w");
  auto cfg = [](const fs::path& out) {
    json c = base_config(out);
    c["policies"] = {"builtin:deterministic_biased?kappa=0.5", "builtin:stochastic_drift?sigma=0.004&kappa=0.5"};
    return parse_campaign_config(c);
  };
  run_campaign(cfg(a));
  run_campaign(cfg(b));
  CampaignConfig parallel = cfg(w);
  parallel.workers = 3;
  run_campaign(parallel);
  CHECK(trace_set(a) == trace_set(b));
  CHECK(trace_set(a) == trace_set(w));
  emit_report(a);
  emit_report(b);
  emit_report(w);
  CHECK(slurp(a / "report" / "report.json") == slurp(b / "report" / "report.json"));
  CHECK(slurp(a / "report" / "report.json") == slurp(w / "report" / "report.json"));
  CHECK(slurp(a / "report" / "behavior.csv") == slurp(w / "report" / "behavior.csv"));
}

TEST_CASE("interrupted campaign resumes to the same trace set") {
  const fs::path full = scratch("resume_full"), cut = scratch("resume_cut");
  auto cfg = [](const fs::path& out) { return parse_campaign_config(base_config(out)); };
  run_campaign(cfg(full));
  run_campaign(cfg(cut));

  // Simulate a crash in the middle of one cell and before two others started.
  json manifest = fixtures::read_json((cut / "manifest.json").string());
  auto& cells = manifest["cells"];
  const std::string half = cells[1].at("file");
  const std::string text = slurp(cut / "traces" / half);
  std::ofstream(cut / "traces" / half, std::ios::binary | std::ios::trunc) << text.substr(0, text.find('\n') + 1);
  cells[1]["status"] = "pending";
  for (std::size_t i = cells.size() - 2; i < cells.size(); ++i) {
    fs::remove(cut / "traces" / cells[i].at("file").get<std::string>());
    cells[i]["status"] = "pending";
  }
  std::ofstream(cut / "manifest.json", std::ios::trunc) << manifest.dump(2);

  const CampaignSummary s = run_campaign(cfg(cut), true);
  int skipped = 0;
  for (const auto& c : s.cells) skipped += c.status == "skipped";
  CHECK(skipped == static_cast<int>(s.cells.size()) - 3);
  CHECK(trace_set(cut) == trace_set(full));

  json changed = base_config(cut);
  changed["trials"] = 5;
  CHECK(error_of([&] { run_campaign(parse_campaign_config(changed), true); }).find("different configuration") !=
        std::string::npos);
}

TEST_CASE("a failing cell is recorded without disturbing its siblings") {
  const fs::path clean = scratch("iso_clean"), mixed = scratch("iso_mixed");
  json c = base_config(clean);
  c.erase("perturbations");
  run_campaign(parse_campaign_config(c));

  // The cap task has no direction to reverse, so that intervention cell fails.
  c["output"] = mixed.string();
  c["interventions"] = {"directional_reversal"};
  const CampaignSummary s = run_campaign(parse_campaign_config(c));
  REQUIRE(s.errors() >= 1);
  for (const auto& cell : s.cells)
    if (cell.status == "error") {
      CHECK(cell.condition == "intervention:directional_reversal");
      CHECK(cell.error.find("NoSubstitutableSlot") != std::string::npos);
    }
  const auto a = trace_set(clean), b = trace_set(mixed);
  for (const auto& [name, text] : a) CHECK(b.at(name) == text);

  const EmittedReport r = emit_report(mixed);
  CHECK(r.error_cells >= 1);
  const json report = fixtures::read_json((mixed / "report" / "report.json").string());
  bool partial = false;
  for (const auto& cell : report.at("cells"))
    if (cell.at("status") == "partial") partial = !cell.at("errors").empty();
  CHECK(partial);
}

TEST_CASE("report emission writes one csv per curve and refuses empty campaigns") {
  const fs::path out = scratch("report");
  run_campaign(parse_campaign_config(base_config(out)));
  const EmittedReport r = emit_report(out);
  CHECK(r.error_cells == 0);
  int csv = 0;
  for (const auto& e : fs::directory_iterator(out / "report" / "curves")) csv += e.path().extension() == ".csv";
  CHECK(csv == 2);
  const json report = fixtures::read_json((out / "report" / "report.json").string());
  CHECK(report.at("cells").size() == 2);
  for (const auto& cell : report.at("cells")) {
    CHECK(cell.at("perception").at("curves")[0].at("levels").size() == 4);
    CHECK(cell.at("understanding") == "not_evaluated");
  }

  const fs::path empty = scratch("report_empty");
  fs::create_directories(empty / "traces");
  CHECK(code_of([&] { emit_report(empty); }) == ErrorCode::ConfigInvalid);
  std::ofstream(empty / "manifest.json") << R"({"cells": []})";
  CHECK(error_of([&] { emit_report(empty); }).find("no traces") != std::string::npos);
}

TEST_CASE("METAFINE_WORKERS overrides the configured worker count") {
  const fs::path out = scratch("env_workers");
  setenv("METAFINE_WORKERS", "zero", 1);
  CHECK(code_of([&] { run_campaign(parse_campaign_config(base_config(out))); }) == ErrorCode::ConfigInvalid);
  setenv("METAFINE_WORKERS", "2", 1);
  const CampaignSummary s = run_campaign(parse_campaign_config(base_config(scratch("env_workers2"))));
  unsetenv("METAFINE_WORKERS");
  CHECK(s.errors() == 0);
}
