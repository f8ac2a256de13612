#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metafine/asset.hpp"
#include "metafine/geometry.hpp"
#include "metafine/skill.hpp"

namespace metafine {

// --- composition graph --------------------------------------------------------

struct CompositionEdge {
  std::string from;
  std::string to;
  Substitution witness;
};

struct CompositionGraph {
  std::vector<std::string> nodes;    // sorted skill ids
  std::vector<CompositionEdge> edges;  // sorted by (from, to)

  bool has_edge(std::string_view from, std::string_view to) const;
};

/// Edge (i, j) iff implies(q_i, p_j). Output ordering does not depend on the
/// input ordering.
CompositionGraph derive_composition_graph(const std::vector<SkillSpec>& vocabulary);

void to_json(json& j, const CompositionGraph& g);

// --- task specs ---------------------------------------------------------------

enum class EdgeKind { Sequential, Conditional, Parallel };

const char* edge_kind_name(EdgeKind k);
EdgeKind edge_kind_from_name(std::string_view name);

/// Sequential: from -> to. Conditional: from -> to when `predicate` holds at
/// the moment `from` passes, else from -> otherwise. Parallel: `constraints`
/// are monitored on every step of host stage `from`.
struct TaskEdge {
  EdgeKind kind = EdgeKind::Sequential;
  int from = 0;
  int to = -1;
  int otherwise = -1;
  std::optional<Atom> predicate;
  Conjunction constraints;

  bool operator==(const TaskEdge&) const = default;
};

using Bindings = std::map<std::string, std::string>;

struct TaskStage {
  std::string skill_id;
  Bindings bindings;           // slot variable -> entity; drives acceptance
  Bindings instruction_slots;  // what the instruction asks for; what policies see
  ToleranceSet tolerances;
  std::map<std::string, double> params;  // per-parameter overrides by key
  Conjunction p, q, c;                   // bound

  bool operator==(const TaskStage&) const = default;
};

struct StageAcceptance {
  int stage = 0;
  Conjunction q;  // evaluated at stage end
  Conjunction c;  // evaluated on every step of the stage

  bool operator==(const StageAcceptance&) const = default;
};

struct PlacementRegion {
  std::string object_id;
  Vec3 position_min = Vec3::Zero();
  Vec3 position_max = Vec3::Zero();
  double yaw_min = 0.0;  // deg
  double yaw_max = 0.0;

  bool operator==(const PlacementRegion& o) const {
    return object_id == o.object_id && position_min == o.position_min && position_max == o.position_max &&
           yaw_min == o.yaw_min && yaw_max == o.yaw_max;
  }
};

struct SceneInit {
  std::vector<std::pair<std::string, Pose>> objects;
  std::map<std::string, double> joints;
  Pose ee_home{Vec3(0.0, 0.0, 0.3), Quat::Identity()};
  std::vector<PlacementRegion> regions;
  std::map<std::string, std::pair<double, double>> joint_ranges;
};

struct TaskSpec {
  std::string task_id;
  std::vector<TaskStage> stages;
  std::vector<TaskEdge> edges;
  std::string instruction;
  std::vector<StageAcceptance> acceptance;
  SceneInit scene_init;
  std::string graph_seq;
};

void to_json(json& j, const TaskSpec& t);
void from_json(const json& j, TaskSpec& t);

/// Re-checks the TaskSpec invariants against the registry and library.
/// Throws IncompatibleEdge, UnsupportedSkill, UnboundSlot or SchemaViolation.
void validate_task(const TaskSpec& task, const SkillRegistry& registry, const AssetLibrary& library);

/// Builds a TaskSpec from a compose request:
///   {task_id, stages:[{skill, bindings, tolerances?, params?}], edges?,
///    tolerances?, scene:{objects:[{object_id, position, yaw|orientation}],
///    joints?, regions?, joint_ranges?, ee_home?}, instruction?}
/// Edges default to a sequential chain.
TaskSpec instantiate_task(const json& request, const SkillRegistry& registry, const AssetLibrary& library);

/// Instruction text generated from each stage's instruction slots.
std::string render_instruction(const TaskSpec& task, const SkillRegistry& registry);

/// Stage that follows `stage` once it passes; `branch` decides conditional
/// edges. Empty when the task is complete.
template <class BranchFn>
std::optional<int> next_stage(const TaskSpec& task, int stage, BranchFn&& branch) {
  for (const auto& e : task.edges) {
    if (e.from != stage) continue;
    if (e.kind == EdgeKind::Sequential) return e.to;
    if (e.kind == EdgeKind::Conditional) return branch(*e.predicate) ? e.to : e.otherwise;
  }
  return std::nullopt;
}

/// Monitored constraints for a stage: skill constraints plus hosted parallel edges.
Conjunction stage_monitors(const TaskSpec& task, int stage);

std::string entity_display(std::string_view entity);

// --- configurations -----------------------------------------------------------

struct Configuration {
  int config_id = 0;
  std::map<std::string, Pose> objects;
  std::map<std::string, double> joints;
};

void to_json(json& j, const Configuration& c);
void from_json(const json& j, Configuration& c);

struct EvalDistribution {
  std::string task_id;
  std::vector<std::pair<std::string, Pose>> fixed;  // objects without a region
  std::vector<PlacementRegion> regions;
  std::map<std::string, double> joints;
  std::map<std::string, std::pair<double, double>> joint_ranges;
};

EvalDistribution eval_distribution(const TaskSpec& task);
Configuration default_configuration(const TaskSpec& task);

/// Two placed objects collide when their footprint discs overlap and their
/// vertical extents overlap.
bool placements_collide(const AssetRecord& a, const Pose& pa, const AssetRecord& b, const Pose& pb);
/// First colliding pair, if any.
std::optional<std::pair<std::string, std::string>> find_collision(const Configuration& config,
                                                                  const AssetLibrary& library);

/// Throws RegionInfeasible after 1000 rejected draws for one configuration.
std::vector<Configuration> sample_configurations(const EvalDistribution& dist, const AssetLibrary& library,
                                                 int count, std::uint64_t seed);

// --- semantic interventions ---------------------------------------------------

enum class InterventionKind { PartSubstitution, DirectionalReversal, PropertyAlteration };

const char* intervention_kind_name(InterventionKind k);
InterventionKind intervention_kind_from_name(std::string_view name);

struct InterventionPair {
  TaskSpec perturbed;  // modified instruction, original acceptance
  TaskSpec modified;   // modified instruction, acceptance rebound to the new target
  int stage = -1;
  std::string slot;
  std::string original_entity;
  std::string new_entity;
};

/// Throws NoSubstitutableSlot.
InterventionPair semantic_intervention(const TaskSpec& task, InterventionKind kind, std::uint64_t seed,
                                       const SkillRegistry& registry, const AssetLibrary& library);

/// Named direction or axis word with an opposite, e.g. left <-> right.
std::optional<std::string> opposite_direction(std::string_view word);

}  // namespace metafine
