#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "metafine/error.hpp"
#include "support.hpp"

using namespace metafine;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("metafine_test_asset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

const SkillSpec& skill(const std::string& id) { return *fixtures::registry().find(id); }

}  // namespace

TEST_CASE("seed library covers every builtin skill") {
  const auto& lib = fixtures::library();
  CHECK(lib.size() >= 12);
  for (const auto& s : builtin_vocabulary()) {
    int hosts = 0;
    for (const auto& [id, rec] : lib.records()) hosts += supports_skill(rec, s).supported;
    CHECK_MESSAGE(hosts > 0, s.skill_id);
  }
  for (const auto& [id, rec] : lib.records()) CHECK_MESSAGE(validate_asset(rec).empty(), id);
}

TEST_CASE("supports_skill reports missing annotation kinds") {
  const auto& lib = fixtures::library();
  CHECK(supports_skill(lib.get("bottle"), skill("GraspPart")).supported);
  CHECK(supports_skill(lib.get("knob"), skill("RotateAlong")).supported);
  const auto hinge = supports_skill(lib.get("plain_block"), skill("OpenHinge"));
  CHECK_FALSE(hinge.supported);
  CHECK(hinge.missing == std::vector<AnnotationKind>{AnnotationKind::HingeAxis});
}

TEST_CASE("loading rejects malformed records") {
  const fs::path dir = scratch_dir("bad");
  json rec = json(fixtures::library().get("cube_green"));
  rec["parts"][0]["region"]["extents"] = {0.02, 0.0, 0.02};
  std::ofstream(dir / "cube.json") << rec.dump();
  CHECK(code_of([&] { load_library(dir); }) == ErrorCode::SchemaViolation);

  const fs::path dup = scratch_dir("dup");
  const json good = json(fixtures::library().get("cube_green"));
  std::ofstream(dup / "a.json") << good.dump();
  std::ofstream(dup / "b.json") << good.dump();
  CHECK(code_of([&] { load_library(dup); }) == ErrorCode::DuplicateObjectId);

  const fs::path junk = scratch_dir("junk");
  std::ofstream(junk / "x.json") << "{ not json";
  CHECK(code_of([&] { load_library(junk); }) == ErrorCode::SchemaViolation);

  CHECK(code_of([&] { load_library(fs::temp_directory_path() / "metafine_no_such_dir"); }) == ErrorCode::IoFailure);
  CHECK(load_library(scratch_dir("empty")).empty());
}

TEST_CASE("grasp poses must reference an existing part") {
  AssetRecord rec = fixtures::library().get("bottle");
  rec.grasp_poses[0].part_id = "neck";
  CHECK_FALSE(validate_asset(rec).empty());
  AssetLibrary lib;
  CHECK(code_of([&] { lib.add(rec); }) == ErrorCode::SchemaViolation);
}

TEST_CASE("save then load reproduces the library") {
  const fs::path dir = scratch_dir("roundtrip");
  save_library(fixtures::library(), dir);
  const AssetLibrary back = load_library(dir);
  REQUIRE(back.size() == fixtures::library().size());
  for (const auto& [id, rec] : fixtures::library().records()) CHECK(json(back.get(id)).dump() == json(rec).dump());
}

TEST_CASE("region containment matches a coordinate-wise oracle") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    Region r;
    r.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    r.extents = Vec3(rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5));
    const Vec3 p(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    const bool inside = std::abs(p.x() - r.center.x()) <= r.extents.x() &&
                        std::abs(p.y() - r.center.y()) <= r.extents.y() &&
                        std::abs(p.z() - r.center.z()) <= r.extents.z();
    CHECK(r.contains(p) == inside);
  }
}

TEST_CASE("backfill proposes one part per primitive at its centroid") {
  const json raw = fixtures::read_json(std::string(METAFINE_DATA_DIR) + "/assets/step_block.json");
  const AssetRecord filled =
      backfill_annotations(fixtures::library().get("step_block"), {AnnotationKind::PartRegion, AnnotationKind::GraspPose});
  REQUIRE(filled.parts.size() == raw["shapes"].size());
  for (std::size_t i = 0; i < filled.parts.size(); ++i) {
    const auto& shape = raw["shapes"][i];
    const Vec3 expect_center(shape["position"][0], shape["position"][1], shape["position"][2]);
    const Vec3 expect_half = Vec3(shape["size"][0], shape["size"][1], shape["size"][2]) / 2.0;
    CHECK((filled.parts[i].region.center - expect_center).norm() < 1e-12);
    CHECK((filled.parts[i].region.extents - expect_half).norm() < 1e-12);
    CHECK(filled.parts[i].provenance == "auto");
  }
  REQUIRE(filled.grasp_poses.size() == 2);
  // First box is 0.1 x 0.06 x 0.04: the shortest extent is z, so the approach is straight down.
  CHECK((filled.grasp_poses[0].approach - Vec3(0, 0, -1)).norm() < 1e-12);
  CHECK(filled.grasp_poses[0].provenance == "auto");
  CHECK(validate_asset(filled).empty());
}

TEST_CASE("backfill leaves complete assets untouched and refuses spheres") {
  const AssetRecord& bottle = fixtures::library().get("bottle");
  CHECK(json(backfill_annotations(bottle, {AnnotationKind::PartRegion, AnnotationKind::GraspPose})).dump() ==
        json(bottle).dump());
  const AssetRecord& ball = fixtures::library().get("ball");
  CHECK(code_of([&] { backfill_annotations(ball, {AnnotationKind::SlidingDirection}); }) ==
        ErrorCode::UnderconstrainedGeometry);
  CHECK(code_of([&] { backfill_annotations(ball, {AnnotationKind::HingeAxis}); }) ==
        ErrorCode::UnderconstrainedGeometry);
}

TEST_CASE("successful backfill always yields support") {
  for (const auto& [id, rec] : fixtures::library().records()) {
    for (const auto& s : builtin_vocabulary()) {
      const std::set<AnnotationKind> needed(s.required_annotations.begin(), s.required_annotations.end());
      AssetRecord filled;
      try {
        filled = backfill_annotations(rec, needed);
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnderconstrainedGeometry);
        continue;
      }
      CHECK_MESSAGE(supports_skill(filled, s).supported, id << " / " << s.skill_id);
      CHECK_MESSAGE(validate_asset(filled).empty(), id << " / " << s.skill_id);
    }
  }
}
