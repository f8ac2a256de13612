#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "metafine/geometry.hpp"
#include "metafine/skill.hpp"

namespace metafine {

enum class PartKind { Handle, Cap, Body, Lid, Button, Switch, Face, Custom };

const char* part_kind_name(PartKind k);
PartKind part_kind_from_name(std::string_view name);

/// Axis-aligned box (half-extents) or sphere (radius in extents.x), in the
/// object frame.
struct Region {
  enum class Shape { Box, Sphere };
  Shape shape = Shape::Box;
  Vec3 center = Vec3::Zero();
  Vec3 extents = Vec3::Zero();

  bool contains(const Vec3& p, double margin = 0.0) const;
  /// Half-extents of the axis-aligned bounding box.
  Vec3 half_size() const;
};

struct PartAnnotation {
  std::string part_id;
  Region region;
  PartKind kind = PartKind::Custom;
  std::string provenance = "authored";
};

/// `approach` points from free space toward the part surface.
struct GraspPose {
  std::string part_id;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec3 approach = -Vec3::UnitZ();
  std::string provenance = "authored";
};

enum class ConstraintKind { RotationAxis, HingeAxis, SlidingDirection, ActuationAxis };

const char* constraint_kind_name(ConstraintKind k);
ConstraintKind constraint_kind_from_name(std::string_view name);
AnnotationKind annotation_of(ConstraintKind k);

/// Range is in degrees for revolute kinds and meters for prismatic kinds.
/// An empty part_id refers to the whole object.
struct ManipulationConstraint {
  ConstraintKind kind = ConstraintKind::RotationAxis;
  std::string part_id;
  Vec3 axis = Vec3::UnitZ();
  Vec3 anchor = Vec3::Zero();
  double range_min = 0.0;
  double range_max = 0.0;
  std::string provenance = "authored";

  bool revolute() const { return kind == ConstraintKind::RotationAxis || kind == ConstraintKind::HingeAxis; }
};

/// Box: size = full edge lengths. Cylinder: size = (radius, radius, height),
/// axis along the primitive's local z. Sphere: size.x = radius.
struct ShapePrimitive {
  enum class Kind { Box, Cylinder, Sphere };
  Kind kind = Kind::Box;
  Pose pose;
  Vec3 size = Vec3::Zero();

  /// Object-frame axis-aligned bounds as (min, max).
  std::pair<Vec3, Vec3> bounds() const;
};

struct AssetRecord {
  std::string object_id;
  std::vector<ShapePrimitive> shapes;
  std::vector<PartAnnotation> parts;
  std::vector<GraspPose> grasp_poses;
  std::vector<ManipulationConstraint> constraints;
  std::string color;
  std::vector<std::string> materials;

  const PartAnnotation* find_part(std::string_view part_id) const;
  const ManipulationConstraint* find_constraint(ConstraintKind kind, std::string_view part_id = {}) const;
  std::vector<const GraspPose*> grasps_for(std::string_view part_id) const;
  /// Object-frame axis-aligned bounds over all shape primitives.
  std::pair<Vec3, Vec3> bounds() const;
  /// Radius of the smallest z-aligned cylinder about the object origin that
  /// encloses every primitive's bounds.
  double footprint_radius() const;
};

/// Empty when the record satisfies every invariant.
std::vector<std::string> validate_asset(const AssetRecord& asset);

class AssetLibrary {
 public:
  /// Throws DuplicateObjectId or SchemaViolation.
  void add(AssetRecord record);
  const AssetRecord* find(std::string_view object_id) const;
  const AssetRecord& get(std::string_view object_id) const;
  const std::map<std::string, AssetRecord, std::less<>>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  std::map<std::string, AssetRecord, std::less<>> records_;
};

/// Accepts a directory of *.json files (each one record or an array of
/// records) or a single such file.
AssetLibrary load_library(const std::filesystem::path& path);
/// Writes one `<object_id>.json` per record.
void save_library(const AssetLibrary& library, const std::filesystem::path& dir);
AssetLibrary library_from_json(const json& doc);

struct SupportCheck {
  bool supported = false;
  std::vector<AnnotationKind> missing;
};

std::set<AnnotationKind> annotations_present(const AssetRecord& asset);
SupportCheck supports_skill(const AssetRecord& asset, const SkillSpec& skill);

/// Fills in heuristic proposals for every kind in `needed` that the asset
/// lacks. Proposals carry provenance "auto".
AssetRecord backfill_annotations(const AssetRecord& asset, const std::set<AnnotationKind>& needed);

void to_json(json& j, const Region& r);
void from_json(const json& j, Region& r);
void to_json(json& j, const AssetRecord& a);
void from_json(const json& j, AssetRecord& a);

json vec_json(const Vec3& v);
Vec3 vec_from_json(const json& j);
json pose_json(const Pose& p);
Pose pose_from_json(const json& j);

}  // namespace metafine
