#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metafine/asset.hpp"
#include "metafine/skill.hpp"
#include "metafine/task.hpp"

namespace metafine {

constexpr int kAdapterMaxDepth = 6;

/// Stage-by-stage record of one adaptation. `flags` is non-empty exactly when
/// no TaskSpec was produced.
struct AdapterReport {
  std::string task_id;
  std::string suite;
  json robot;                 // recorded, never part of the skill sequence
  json ingestion;             // [{name, object_id, action: reused|registered}]
  json skills;                // {object_id: [supported skill ids]}
  json backfills;             // [{object_id, kinds, provenance}]
  json chain;                 // [{skill, bindings}]
  json flags;                 // [{kind, detail}]
};

struct AdaptResult {
  std::optional<TaskSpec> task;
  AdapterReport report;
};

/// Normalizes an external task document:
///   {task_id, suite, objects:[asset fields with "name" for object_id],
///    robot:{...}, goal:[{predicate, args, params?:{key: value}}],
///    scene:{objects:[{object_id: <name>, position, yaw|orientation}], regions?, joints?, joint_ranges?},
///    tolerances?, instruction?}
/// New or backfilled assets are added to `library`; existing records are never
/// modified. Throws SchemaViolation for malformed documents.
AdaptResult adapt(const json& doc, AssetLibrary& library, const SkillRegistry& registry);

/// Inverse of adapt for sequential tasks: the final stage's postconditions
/// become the goal and every referenced asset is written out in full.
json externalize(const TaskSpec& task, const AssetLibrary& library, const std::string& suite = "metafine");

struct RoundtripVerdict {
  bool equivalent = false;
  std::vector<std::string> differences;  // spec fields and trial outcomes that differ
  std::vector<double> stage_sr_adapted;
  std::vector<double> stage_sr_native;
  int trials = 0;
};

/// Adapts `doc` against a copy of `library` and runs identical seeded trial
/// batches on the result and on `native`. Throws AdaptFailed when the document
/// does not adapt.
RoundtripVerdict roundtrip_check(const json& doc, const TaskSpec& native, const AssetLibrary& library,
                                 const SkillRegistry& registry, const std::string& policy_spec, int trials,
                                 std::uint64_t seed);

void to_json(json& j, const AdapterReport& r);
void to_json(json& j, const RoundtripVerdict& v);

}  // namespace metafine
