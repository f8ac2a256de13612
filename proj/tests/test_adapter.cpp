#include <filesystem>
#include <functional>

#include "doctest.h"
#include "metafine/adapter.hpp"
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

json doc(const std::string& name) { return fixtures::read_json(std::string(METAFINE_DATA_DIR) + "/adapter/" + name + ".json"); }

AssetLibrary fresh_library() { return fixtures::library(); }

std::vector<std::string> chain_skills(const AdaptResult& r) {
  std::vector<std::string> out;
  for (const auto& s : r.report.chain) out.push_back(s.at("skill").get<std::string>());
  return out;
}

std::string first_flag(const AdaptResult& r) {
  return r.report.flags.empty() ? "" : r.report.flags.front().at("kind").get<std::string>();
}

}  // namespace

TEST_CASE("drawer document maps onto grasp then slide with the library drawer reused") {
  AssetLibrary lib = fresh_library();
  const std::size_t before = lib.records().size();
  const AdaptResult r = adapt(doc("robotwin_open_drawer"), lib, fixtures::registry());
  REQUIRE(r.task);
  CHECK(chain_skills(r) == std::vector<std::string>{"GraspPart", "SlideAlong"});
  CHECK(r.report.chain[0].at("bindings").at("P") == "handle");
  CHECK(r.report.ingestion[0].at("action") == "reused");
  CHECK(r.report.ingestion[0].at("object_id") == "drawer");
  CHECK(r.report.backfills.empty());
  CHECK(r.report.robot.at("arm") == "aloha-agilex");
  CHECK(lib.records().size() == before);
  CHECK(r.task->task_id == "open_drawer");
}

TEST_CASE("adapted drawer task behaves exactly like the native one under the oracle") {
  const RoundtripVerdict v = roundtrip_check(doc("robotwin_open_drawer"), fixtures::task("open_drawer"), fresh_library(),
                                             fixtures::registry(), "builtin:oracle", 10, 2024);
  for (const auto& d : v.differences) MESSAGE(d);
  CHECK(v.equivalent);
  CHECK(v.trials == 10);
  REQUIRE(v.stage_sr_native.size() == 2);
  CHECK(v.stage_sr_native == v.stage_sr_adapted);
  CHECK(v.stage_sr_native[1] == doctest::Approx(100.0));
}

TEST_CASE("every suite fixture with a native twin round-trips equivalently") {
  const std::vector<std::pair<std::string, std::string>> twins{
      {"robotwin_press_button", "press_button"}, {"robotwin_grasp_cap", "grasp_cap"},
      {"maniskill_peg_insertion", "peg_in_hole"}, {"maniskill_turn_knob", "turn_knob"},
      {"libero_sort_cubes", "sort_cubes"},       {"libero_open_lid", "open_lid"}};
  for (const auto& [external, native] : twins) {
    CAPTURE(external);
    const RoundtripVerdict v = roundtrip_check(doc(external), fixtures::task(native), fresh_library(),
                                               fixtures::registry(), "builtin:oracle", 4, 7);
    for (const auto& d : v.differences) MESSAGE(d);
    CHECK(v.equivalent);
  }
}

TEST_CASE("stochastic policy with shared seeds still sees identical trials") {
  const RoundtripVerdict v =
      roundtrip_check(doc("robotwin_open_drawer"), fixtures::task("open_drawer"), fresh_library(), fixtures::registry(),
                      "builtin:stochastic_drift?sigma=0.004&kappa=0.5", 6, 99);
  for (const auto& d : v.differences) MESSAGE(d);
  CHECK(v.equivalent);
}

TEST_CASE("tolerance mismatch is reported by field") {
  json d = doc("robotwin_open_drawer");
  d["goal"][1]["params"] = {{"eps_axis", 0.02}};
  const RoundtripVerdict v = roundtrip_check(d, fixtures::task("open_drawer"), fresh_library(), fixtures::registry(),
                                             "builtin:oracle", 3, 5);
  CHECK_FALSE(v.equivalent);
  const bool names_tolerance = std::any_of(v.differences.begin(), v.differences.end(), [](const std::string& s) {
    return s.find("eps_axis") != std::string::npos;
  });
  CHECK(names_tolerance);
}

TEST_CASE("pouring goal is flagged as a vocabulary extension and produces no task") {
  AssetLibrary lib = fresh_library();
  const std::size_t before = lib.records().size();
  const AdaptResult r = adapt(doc("libero_pour_water"), lib, fixtures::registry());
  CHECK_FALSE(r.task);
  CHECK(first_flag(r) == "vocabulary_extension");
  CHECK(r.report.chain.empty());
  CHECK(lib.records().size() == before);
  const json j = r.report;
  CHECK(j.at("mapped") == false);
  CHECK(code_of([&] {
          roundtrip_check(doc("libero_pour_water"), fixtures::task("open_drawer"), fresh_library(), fixtures::registry(),
                          "builtin:oracle", 1, 1);
        }) == ErrorCode::AdaptFailed);
}

TEST_CASE("new asset missing a sliding direction is backfilled with auto provenance") {
  AssetLibrary lib = fresh_library();
  const AdaptResult r = adapt(doc("maniskill_slide_tray"), lib, fixtures::registry());
  REQUIRE(r.task);
  CHECK(chain_skills(r) == std::vector<std::string>{"GraspPart", "SlideAlong"});
  CHECK(r.report.ingestion[0].at("action") == "registered");
  REQUIRE(r.report.backfills.size() == 1);
  CHECK(r.report.backfills[0].at("kinds") == json::array({"sliding_direction"}));
  CHECK(r.report.backfills[0].at("provenance") == "auto");
  const AssetRecord* tray = lib.find("tray");
  REQUIRE(tray);
  bool has_auto_slide = false;
  for (const auto& c : tray->constraints)
    if (c.kind == ConstraintKind::SlidingDirection) has_auto_slide = c.provenance == "auto";
  CHECK(has_auto_slide);
  // The goal asked for a shorter displacement than the skill default.
  CHECK(r.task->stages[1].params.at("distance") == doctest::Approx(0.05));
  auto oracle = make_policy("builtin:oracle");
  TrialSpec spec;
  spec.task = &*r.task;
  spec.configuration = default_configuration(*r.task);
  spec.seed = 3;
  CHECK(run_trial(spec, lib, *oracle).completed());
}

TEST_CASE("adapter never emits approximate provenance") {
  for (const auto& e : fs::directory_iterator(std::string(METAFINE_DATA_DIR) + "/adapter")) {
    CAPTURE(e.path().filename().string());
    AssetLibrary lib = fresh_library();
    const std::size_t before = lib.records().size();
    const AdaptResult r = adapt(fixtures::read_json(e.path().string()), lib, fixtures::registry());
    CHECK(json(r.report).dump().find("\"approx\"") == std::string::npos);
    for (const auto& [id, rec] : lib.records()) CHECK(json(rec).dump().find("\"approx\"") == std::string::npos);
    CHECK(lib.records().size() >= before);
  }
}

TEST_CASE("library grows monotonically and existing records are untouched") {
  AssetLibrary lib = fresh_library();
  const json drawer_before = lib.get("drawer");
  json d = doc("robotwin_open_drawer");
  // The document omits the sliding direction the library record carries.
  auto& constraints = d["objects"][0]["constraints"];
  json kept = json::array();
  for (const auto& c : constraints)
    if (c.at("kind") != "sliding_direction") kept.push_back(c);
  constraints = kept;
  const AdaptResult r = adapt(d, lib, fixtures::registry());
  REQUIRE(r.task);
  CHECK(json(lib.get("drawer")) == drawer_before);
  // Matching geometry reuses the library drawer along with its own annotations.
  CHECK(r.report.ingestion[0].at("action") == "reused");
  CHECK(r.report.backfills.empty());
  for (const auto& [id, rec] : fixtures::library().records()) CHECK(lib.find(id));
}

TEST_CASE("externalize then adapt is idempotent on the task spec") {
  for (const char* name : {"open_drawer", "peg_in_hole", "sort_cubes", "press_button", "open_lid", "turn_knob"}) {
    CAPTURE(name);
    const TaskSpec native = fixtures::task(name);
    AssetLibrary lib = fresh_library();
    const json external = externalize(native, lib);
    const AdaptResult once = adapt(external, lib, fixtures::registry());
    REQUIRE(once.task);
    CHECK(json(*once.task) == json(native));
    const AdaptResult twice = adapt(externalize(*once.task, lib), lib, fixtures::registry());
    REQUIRE(twice.task);
    CHECK(json(*twice.task) == json(*once.task));
    CHECK(lib.records().size() == fixtures::library().records().size());
  }
}

TEST_CASE("goals that need more than the depth bound are unmappable") {
  // Four pick-and-place goals need eight stages.
  json d = doc("libero_sort_cubes");
  d["goal"].push_back({{"predicate", "moved-to"}, {"args", {"green_block", "right_basket"}}});
  d["goal"].push_back({{"predicate", "moved-to"}, {"args", {"red_block", "left_basket"}}});
  AssetLibrary lib = fresh_library();
  const AdaptResult r = adapt(d, lib, fixtures::registry());
  CHECK_FALSE(r.task);
  CHECK(first_flag(r) == "no_chain");
}

TEST_CASE("malformed documents are schema violations") {
  AssetLibrary lib = fresh_library();
  json d = doc("robotwin_open_drawer");
  d.erase("scene");
  CHECK(code_of([&] { adapt(d, lib, fixtures::registry()); }) == ErrorCode::SchemaViolation);
  d = doc("robotwin_open_drawer");
  d["goal"][1]["args"] = {"cabinet"};
  CHECK(code_of([&] { adapt(d, lib, fixtures::registry()); }) == ErrorCode::SchemaViolation);
  d = doc("robotwin_open_drawer");
  d["goal"][1]["params"] = {{"speed", 2.0}};
  CHECK(code_of([&] { adapt(d, lib, fixtures::registry()); }) == ErrorCode::SchemaViolation);
  d = doc("robotwin_open_drawer");
  d["goal"][1]["args"] = {"wardrobe", "open"};
  const AdaptResult r = adapt(d, lib, fixtures::registry());
  CHECK(first_flag(r) == "unknown_object");
}
