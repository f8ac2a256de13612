#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "doctest.h"
#include "metafine/error.hpp"
#include "support.hpp"

using namespace metafine;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

const char* kSeedTasks[] = {"grasp_cap",    "peg_in_hole", "sort_cubes", "sort_by_color", "open_drawer", "press_button",
                            "flip_switch", "turn_knob",   "open_lid",   "push_cube_left", "flip_box"};

}  // namespace

TEST_CASE("composition graph agrees with pairwise implication") {
  const auto vocab = builtin_vocabulary();
  const CompositionGraph g = derive_composition_graph(vocab);
  CHECK(g.has_edge("GraspPart", "Align"));
  CHECK(g.has_edge("Align", "Insert"));
  CHECK_FALSE(g.has_edge("PressPart", "Insert"));
  std::size_t expected = 0;
  for (const auto& a : vocab)
    for (const auto& b : vocab) {
      const bool edge = implies(a.q, b.p).has_value();
      expected += edge;
      CHECK(g.has_edge(a.skill_id, b.skill_id) == edge);
    }
  CHECK(g.edges.size() == expected);
  CHECK(derive_composition_graph({}).nodes.empty());

  auto shuffled = vocab;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
  CHECK(json(derive_composition_graph(shuffled)).dump() == json(g).dump());
}

TEST_CASE("peg-in-hole instantiates three stages joined by two sequential edges") {
  const TaskSpec t = fixtures::task("peg_in_hole");
  REQUIRE(t.stages.size() == 3);
  CHECK(t.graph_seq == "GraspPart>Align>Insert");
  REQUIRE(t.edges.size() == 2);
  for (const auto& e : t.edges) CHECK(e.kind == EdgeKind::Sequential);
  CHECK(t.instruction == "grasp the head of the peg, then align the peg with the hole block, then insert the peg into "
                         "the hole block");
  for (std::size_t i = 0; i < t.stages.size(); ++i) {
    CHECK(t.acceptance[i].q == t.stages[i].q);
    CHECK(t.acceptance[i].c == t.stages[i].c);
  }
}

TEST_CASE("every seed task traverses only composition-graph edges and survives a JSON round trip") {
  const CompositionGraph g = derive_composition_graph(builtin_vocabulary());
  for (const char* name : kSeedTasks) {
    const TaskSpec t = fixtures::task(name);
    for (const auto& e : t.edges) {
      if (e.kind == EdgeKind::Parallel) continue;
      CHECK(g.has_edge(t.stages[e.from].skill_id, t.stages[e.to].skill_id));
      if (e.kind == EdgeKind::Conditional)
        CHECK(g.has_edge(t.stages[e.from].skill_id, t.stages[e.otherwise].skill_id));
    }
    const TaskSpec back = json(t).get<TaskSpec>();
    CHECK_NOTHROW(validate_task(back, fixtures::registry(), fixtures::library()));
    CHECK(json(back).dump() == json(t).dump());
  }
}

TEST_CASE("conditional sorting branches on the color attribute") {
  const TaskSpec t = fixtures::task("sort_by_color");
  REQUIRE(t.edges.size() == 1);
  CHECK(t.edges[0].kind == EdgeKind::Conditional);
  CHECK(t.instruction ==
        "grasp the body of the green cube, then if the green cube is green move the green cube to the left bin, "
        "otherwise move the green cube to the right bin");
  CHECK(next_stage(t, 0, [](const Atom&) { return true; }) == 1);
  CHECK(next_stage(t, 0, [](const Atom&) { return false; }) == 2);
  CHECK_FALSE(next_stage(t, 1, [](const Atom&) { return true; }).has_value());
}

TEST_CASE("instantiation errors") {
  json req = fixtures::task_request("grasp_cap");
  req["scene"]["objects"].push_back({{"object_id", "plain_block"}, {"position", {0.1, 0.3, 0.0}}});
  req["stages"][0]["bindings"] = {{"O", "plain_block"}, {"P", "part_0"}};
  CHECK(code_of([&] { instantiate_task(req, fixtures::registry(), fixtures::library()); }) ==
        ErrorCode::UnboundSlot);

  json unsupported = fixtures::task_request("grasp_cap");
  unsupported["scene"]["objects"].push_back({{"object_id", "hole_block"}, {"position", {0.1, 0.3, 0.0}}});
  unsupported["stages"][0]["bindings"] = {{"O", "hole_block"}, {"P", "top"}};
  try {
    instantiate_task(unsupported, fixtures::registry(), fixtures::library());
    FAIL("expected UnsupportedSkill");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedSkill);
    CHECK(std::string(e.what()).find("grasp_pose") != std::string::npos);
  }

  json incompatible = fixtures::task_request("peg_in_hole");
  incompatible["stages"].erase(1);
  try {
    instantiate_task(incompatible, fixtures::registry(), fixtures::library());
    FAIL("expected IncompatibleEdge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IncompatibleEdge);
    CHECK(std::string(e.what()).find("aligned(peg,hole_block") != std::string::npos);
  }

  json far = fixtures::task_request("grasp_cap");
  far["scene"]["objects"][0]["position"] = {0.9, 0.0, 0.0};
  CHECK(code_of([&] { instantiate_task(far, fixtures::registry(), fixtures::library()); }) == ErrorCode::UnboundSlot);

  json ghost = fixtures::task_request("grasp_cap");
  ghost["scene"]["objects"][0]["object_id"] = "teapot";
  CHECK(code_of([&] { instantiate_task(ghost, fixtures::registry(), fixtures::library()); }) ==
        ErrorCode::UnknownObject);
}

TEST_CASE("tolerance overrides rebind the stage conditions") {
  json req = fixtures::task_request("peg_in_hole");
  req["stages"][1]["tolerances"] = {{"eps_pos", 0.003}, {"eps_ang", 2.0}, {"eps_clear", 0.002}, {"eps_axis", 5.0}};
  req["stages"][2]["tolerances"] = req["stages"][1]["tolerances"];
  const TaskSpec t = instantiate_task(req, fixtures::registry(), fixtures::library());
  const auto& aligned = *std::find_if(t.stages[1].q.begin(), t.stages[1].q.end(),
                                      [](const Atom& a) { return a.name == "aligned"; });
  CHECK(aligned.params == std::vector<double>{0.003, 2.0});

  json loose = fixtures::task_request("peg_in_hole");
  loose["stages"][1]["tolerances"] = {{"eps_pos", 0.01}, {"eps_ang", 10.0}, {"eps_clear", 0.002}, {"eps_axis", 5.0}};
  CHECK(code_of([&] { instantiate_task(loose, fixtures::registry(), fixtures::library()); }) ==
        ErrorCode::IncompatibleEdge);
}

TEST_CASE("configuration sampling is deterministic, contained and collision free") {
  const TaskSpec t = fixtures::task("sort_cubes");
  const EvalDistribution d = eval_distribution(t);
  const auto a = sample_configurations(d, fixtures::library(), 120, 7);
  const auto b = sample_configurations(d, fixtures::library(), 120, 7);
  REQUIRE(a.size() == 120);
  CHECK(json(a).dump() == json(b).dump());
  CHECK(json(sample_configurations(d, fixtures::library(), 5, 8)).dump() !=
        json(sample_configurations(d, fixtures::library(), 5, 7)).dump());

  for (const auto& c : a) {
    for (const auto& r : d.regions) {
      const Pose& p = c.objects.at(r.object_id);
      for (int k = 0; k < 3; ++k) {
        CHECK(p.position[k] >= r.position_min[k] - 1e-12);
        CHECK(p.position[k] <= r.position_max[k] + 1e-12);
      }
      const double yaw = rad2deg(2.0 * std::atan2(p.orientation.z(), p.orientation.w()));
      CHECK(yaw >= r.yaw_min - 1e-9);
      CHECK(yaw <= r.yaw_max + 1e-9);
    }
    // Pairwise overlap oracle: disc overlap in the plane and height overlap.
    for (auto i = c.objects.begin(); i != c.objects.end(); ++i)
      for (auto j = std::next(i); j != c.objects.end(); ++j) {
        const auto& ai = fixtures::library().get(i->first);
        const auto& aj = fixtures::library().get(j->first);
        const double gap = (i->second.position - j->second.position).head<2>().norm();
        CHECK(gap >= ai.footprint_radius() + aj.footprint_radius());
      }
  }
  CHECK(code_of([&] { sample_configurations(d, fixtures::library(), 0, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("zero-width regions and infeasible regions") {
  json req = fixtures::task_request("sort_cubes");
  for (auto& r : req["scene"]["regions"]) {
    r["position_max"] = r["position_min"];
    r["yaw_range"] = {0.0, 0.0};
  }
  const TaskSpec fixed = instantiate_task(req, fixtures::registry(), fixtures::library());
  const auto configs = sample_configurations(eval_distribution(fixed), fixtures::library(), 10, 3);
  for (const auto& c : configs) {
    json a = c, b = configs[0];
    CHECK(a["objects"].dump() == b["objects"].dump());
  }

  json crowded = fixtures::task_request("sort_cubes");
  crowded["scene"]["regions"][1] = crowded["scene"]["regions"][0];
  crowded["scene"]["regions"][1]["object_id"] = "cube_red";
  crowded["scene"]["regions"][0]["position_max"] = crowded["scene"]["regions"][0]["position_min"];
  crowded["scene"]["regions"][1]["position_max"] = crowded["scene"]["regions"][1]["position_min"];
  const TaskSpec clash = instantiate_task(crowded, fixtures::registry(), fixtures::library());
  CHECK(code_of([&] { sample_configurations(eval_distribution(clash), fixtures::library(), 1, 3); }) ==
        ErrorCode::RegionInfeasible);
}

TEST_CASE("part substitution swaps the instruction, not the scene") {
  const TaskSpec t = fixtures::task("grasp_cap");
  const auto pair = semantic_intervention(t, InterventionKind::PartSubstitution, 1, fixtures::registry(),
                                          fixtures::library());
  CHECK(t.instruction == "grasp the cap of the bottle");
  CHECK(pair.perturbed.instruction == "grasp the body of the bottle");
  CHECK(pair.perturbed.acceptance == t.acceptance);
  CHECK(pair.modified.stages[0].bindings.at("P") == "body");
  CHECK(to_string(pair.modified.acceptance[0].q.back()) == "contact-at(bottle,body)");
  CHECK(json(pair.perturbed)["scene_init"].dump() == json(t)["scene_init"].dump());
  CHECK(json(pair.modified)["scene_init"].dump() == json(t)["scene_init"].dump());
}

TEST_CASE("directional reversal flips the bound direction") {
  const TaskSpec t = fixtures::task("push_cube_left");
  const auto pair = semantic_intervention(t, InterventionKind::DirectionalReversal, 1, fixtures::registry(),
                                          fixtures::library());
  CHECK(pair.perturbed.instruction.find("move the blue cube to the right") != std::string::npos);
  const Atom& moved = pair.modified.acceptance[1].q.front();
  CHECK(moved.name == "moved-to");
  CHECK(moved.args == std::vector<std::string>{"cube_blue", "right"});
  CHECK(pair.perturbed.acceptance == t.acceptance);

  const auto knob = semantic_intervention(fixtures::task("turn_knob"), InterventionKind::DirectionalReversal, 1,
                                          fixtures::registry(), fixtures::library());
  CHECK(knob.new_entity == "counterclockwise");
}

TEST_CASE("property alteration retargets every mention of the object") {
  const TaskSpec t = fixtures::task("sort_by_color");
  const auto pair = semantic_intervention(t, InterventionKind::PropertyAlteration, 1, fixtures::registry(),
                                          fixtures::library());
  CHECK(pair.new_entity == "cube_red");
  for (const auto& s : pair.modified.stages) CHECK(s.bindings.at("O") == "cube_red");
  CHECK(pair.perturbed.stages[0].bindings.at("O") == "cube_green");
  CHECK(pair.perturbed.instruction.find("red cube") != std::string::npos);
}

TEST_CASE("interventions need a substitutable slot") {
  CHECK(code_of([&] {
          semantic_intervention(fixtures::task("push_cube_left"), InterventionKind::PartSubstitution, 1,
                                fixtures::registry(), fixtures::library());
        }) == ErrorCode::NoSubstitutableSlot);
  CHECK(code_of([&] {
          semantic_intervention(fixtures::task("grasp_cap"), InterventionKind::DirectionalReversal, 1,
                                fixtures::registry(), fixtures::library());
        }) == ErrorCode::NoSubstitutableSlot);
}

TEST_CASE("entity names render as noun phrases") {
  CHECK(entity_display("cube_green") == "green cube");
  CHECK(entity_display("bin_left") == "left bin");
  CHECK(entity_display("hole_block") == "hole block");
  CHECK(entity_display("bottle") == "bottle");
}
