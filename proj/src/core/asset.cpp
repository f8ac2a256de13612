#include "metafine/asset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "metafine/error.hpp"

namespace metafine {

namespace fs = std::filesystem;

const char* part_kind_name(PartKind k) {
  switch (k) {
    case PartKind::Handle: return "handle";
    case PartKind::Cap: return "cap";
    case PartKind::Body: return "body";
    case PartKind::Lid: return "lid";
    case PartKind::Button: return "button";
    case PartKind::Switch: return "switch";
    case PartKind::Face: return "face";
    case PartKind::Custom: return "custom";
  }
  return "custom";
}

PartKind part_kind_from_name(std::string_view name) {
  for (auto k : {PartKind::Handle, PartKind::Cap, PartKind::Body, PartKind::Lid, PartKind::Button, PartKind::Switch,
                 PartKind::Face, PartKind::Custom})
    if (name == part_kind_name(k)) return k;
  fail(ErrorCode::SchemaViolation, "unknown part kind '" + std::string(name) + "'");
}

const char* constraint_kind_name(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::RotationAxis: return "rotation_axis";
    case ConstraintKind::HingeAxis: return "hinge_axis";
    case ConstraintKind::SlidingDirection: return "sliding_direction";
    case ConstraintKind::ActuationAxis: return "actuation_axis";
  }
  return "?";
}

ConstraintKind constraint_kind_from_name(std::string_view name) {
  for (auto k : {ConstraintKind::RotationAxis, ConstraintKind::HingeAxis, ConstraintKind::SlidingDirection,
                 ConstraintKind::ActuationAxis})
    if (name == constraint_kind_name(k)) return k;
  fail(ErrorCode::SchemaViolation, "unknown constraint kind '" + std::string(name) + "'");
}

AnnotationKind annotation_of(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::RotationAxis: return AnnotationKind::RotationAxis;
    case ConstraintKind::HingeAxis: return AnnotationKind::HingeAxis;
    case ConstraintKind::SlidingDirection: return AnnotationKind::SlidingDirection;
    case ConstraintKind::ActuationAxis: return AnnotationKind::ActuationAxis;
  }
  return AnnotationKind::RotationAxis;
}

bool Region::contains(const Vec3& p, double margin) const {
  const Vec3 d = p - center;
  if (shape == Shape::Sphere) return d.norm() <= extents.x() + margin;
  return std::abs(d.x()) <= extents.x() + margin && std::abs(d.y()) <= extents.y() + margin &&
         std::abs(d.z()) <= extents.z() + margin;
}

Vec3 Region::half_size() const {
  if (shape == Shape::Sphere) return Vec3::Constant(extents.x());
  return extents;
}

std::pair<Vec3, Vec3> ShapePrimitive::bounds() const {
  Vec3 half;
  switch (kind) {
    case Kind::Box: half = size / 2.0; break;
    case Kind::Cylinder: half = Vec3(size.x(), size.x(), size.z() / 2.0); break;
    case Kind::Sphere: half = Vec3::Constant(size.x()); break;
  }
  if (kind == Kind::Sphere) return {pose.position - half, pose.position + half};
  // Bounds of the rotated local box.
  const Eigen::Matrix3d r = pose.orientation.toRotationMatrix().cwiseAbs();
  const Vec3 world_half = r * half;
  return {pose.position - world_half, pose.position + world_half};
}

const PartAnnotation* AssetRecord::find_part(std::string_view part_id) const {
  for (const auto& p : parts)
    if (p.part_id == part_id) return &p;
  return nullptr;
}

const ManipulationConstraint* AssetRecord::find_constraint(ConstraintKind kind, std::string_view part_id) const {
  const ManipulationConstraint* fallback = nullptr;
  for (const auto& c : constraints) {
    if (c.kind != kind) continue;
    if (c.part_id == part_id) return &c;
    if (!fallback) fallback = &c;
  }
  return fallback;
}

std::vector<const GraspPose*> AssetRecord::grasps_for(std::string_view part_id) const {
  std::vector<const GraspPose*> out;
  for (const auto& g : grasp_poses)
    if (g.part_id == part_id) out.push_back(&g);
  return out;
}

std::pair<Vec3, Vec3> AssetRecord::bounds() const {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& s : shapes) {
    auto [a, b] = s.bounds();
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(b);
  }
  if (shapes.empty()) return {Vec3::Zero(), Vec3::Zero()};
  return {lo, hi};
}

double AssetRecord::footprint_radius() const {
  double r = 0.0;
  for (const auto& s : shapes) {
    auto [a, b] = s.bounds();
    for (double x : {a.x(), b.x()})
      for (double y : {a.y(), b.y()}) r = std::max(r, std::hypot(x, y));
  }
  return r;
}

std::vector<std::string> validate_asset(const AssetRecord& a) {
  std::vector<std::string> issues;
  auto add = [&](const std::string& field, const std::string& what) { issues.push_back(field + ": " + what); };
  auto unit = [](const Vec3& v) { return std::abs(v.norm() - 1.0) <= 1e-9; };

  if (a.object_id.empty()) add("object_id", "empty");
  if (a.shapes.empty()) add("shapes", "at least one primitive required");
  for (std::size_t i = 0; i < a.shapes.size(); ++i) {
    const auto& s = a.shapes[i];
    const std::string f = "shapes[" + std::to_string(i) + "]";
    const bool positive = s.kind == ShapePrimitive::Kind::Sphere ? s.size.x() > 0
                          : s.kind == ShapePrimitive::Kind::Cylinder ? s.size.x() > 0 && s.size.z() > 0
                                                                     : (s.size.array() > 0).all();
    if (!positive) add(f + ".size", "must be strictly positive");
    if (std::abs(s.pose.orientation.norm() - 1.0) > 1e-9) add(f + ".orientation", "not a unit quaternion");
  }

  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    const auto& p = a.parts[i];
    const std::string f = "parts[" + std::to_string(i) + "]";
    if (p.part_id.empty()) add(f + ".part_id", "empty");
    if (!ids.insert(p.part_id).second) add(f + ".part_id", "duplicate '" + p.part_id + "'");
    const bool positive = p.region.shape == Region::Shape::Sphere ? p.region.extents.x() > 0
                                                                  : (p.region.extents.array() > 0).all();
    if (!positive) add(f + ".region.extents", "must be strictly positive");
  }
  for (std::size_t i = 0; i < a.grasp_poses.size(); ++i) {
    const auto& g = a.grasp_poses[i];
    const std::string f = "grasp_poses[" + std::to_string(i) + "]";
    if (!ids.count(g.part_id)) add(f + ".part_id", "unknown part '" + g.part_id + "'");
    if (std::abs(g.orientation.norm() - 1.0) > 1e-9) add(f + ".orientation", "not a unit quaternion");
    if (!unit(g.approach)) add(f + ".approach", "not a unit vector");
  }
  for (std::size_t i = 0; i < a.constraints.size(); ++i) {
    const auto& c = a.constraints[i];
    const std::string f = "constraints[" + std::to_string(i) + "]";
    if (!c.part_id.empty() && !ids.count(c.part_id)) add(f + ".part_id", "unknown part '" + c.part_id + "'");
    if (!unit(c.axis)) add(f + ".axis", "not a unit vector");
    if (!(c.range_min < c.range_max)) add(f + ".range", "min must be below max");
  }
  return issues;
}

void AssetLibrary::add(AssetRecord record) {
  const auto issues = validate_asset(record);
  if (!issues.empty()) fail(ErrorCode::SchemaViolation, record.object_id + ": " + issues.front());
  if (records_.count(record.object_id))
    fail(ErrorCode::DuplicateObjectId, "duplicate object_id '" + record.object_id + "'");
  std::string id = record.object_id;
  records_.emplace(std::move(id), std::move(record));
}

const AssetRecord* AssetLibrary::find(std::string_view object_id) const {
  auto it = records_.find(object_id);
  return it == records_.end() ? nullptr : &it->second;
}

const AssetRecord& AssetLibrary::get(std::string_view object_id) const {
  if (const auto* a = find(object_id)) return *a;
  fail(ErrorCode::UnknownObject, "unknown object '" + std::string(object_id) + "'");
}

// --- JSON --------------------------------------------------------------------

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw json::type_error::create(302, "expected a 3-vector", &j);
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

namespace {

json quat_json(const Quat& q) {
  const auto a = quat_wxyz(q);
  return json::array({a[0], a[1], a[2], a[3]});
}

Quat quat_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw json::type_error::create(302, "expected a quaternion [w,x,y,z]", &j);
  return quat_from_wxyz({j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()});
}

const char* shape_kind_name(ShapePrimitive::Kind k) {
  switch (k) {
    case ShapePrimitive::Kind::Box: return "box";
    case ShapePrimitive::Kind::Cylinder: return "cylinder";
    case ShapePrimitive::Kind::Sphere: return "sphere";
  }
  return "box";
}

ShapePrimitive::Kind shape_kind_from_name(const std::string& s) {
  if (s == "box") return ShapePrimitive::Kind::Box;
  if (s == "cylinder") return ShapePrimitive::Kind::Cylinder;
  if (s == "sphere") return ShapePrimitive::Kind::Sphere;
  fail(ErrorCode::SchemaViolation, "unknown shape kind '" + s + "'");
}

}  // namespace

json pose_json(const Pose& p) { return json{{"position", vec_json(p.position)}, {"orientation", quat_json(p.orientation)}}; }

Pose pose_from_json(const json& j) {
  Pose p;
  p.position = vec_from_json(j.at("position"));
  if (j.contains("orientation")) p.orientation = quat_from_json(j.at("orientation"));
  return p;
}

void to_json(json& j, const Region& r) {
  j = json{{"shape", r.shape == Region::Shape::Box ? "box" : "sphere"},
           {"center", vec_json(r.center)},
           {"extents", vec_json(r.extents)}};
}

void from_json(const json& j, Region& r) {
  const std::string shape = j.value("shape", std::string("box"));
  if (shape == "box")
    r.shape = Region::Shape::Box;
  else if (shape == "sphere")
    r.shape = Region::Shape::Sphere;
  else
    fail(ErrorCode::SchemaViolation, "unknown region shape '" + shape + "'");
  r.center = vec_from_json(j.at("center"));
  const json& e = j.at("extents");
  if (e.is_number())
    r.extents = Vec3(e.get<double>(), 0.0, 0.0);
  else
    r.extents = vec_from_json(e);
  if (r.shape == Region::Shape::Sphere) r.extents = Vec3(r.extents.x(), r.extents.x(), r.extents.x());
}

void to_json(json& j, const AssetRecord& a) {
  json shapes = json::array();
  for (const auto& s : a.shapes)
    shapes.push_back({{"kind", shape_kind_name(s.kind)},
                      {"position", vec_json(s.pose.position)},
                      {"orientation", quat_json(s.pose.orientation)},
                      {"size", vec_json(s.size)}});
  json parts = json::array();
  for (const auto& p : a.parts)
    parts.push_back(
        {{"part_id", p.part_id}, {"kind", part_kind_name(p.kind)}, {"region", p.region}, {"provenance", p.provenance}});
  json grasps = json::array();
  for (const auto& g : a.grasp_poses)
    grasps.push_back({{"part_id", g.part_id},
                      {"position", vec_json(g.position)},
                      {"orientation", quat_json(g.orientation)},
                      {"approach", vec_json(g.approach)},
                      {"provenance", g.provenance}});
  json cons = json::array();
  for (const auto& c : a.constraints)
    cons.push_back({{"kind", constraint_kind_name(c.kind)},
                    {"part_id", c.part_id},
                    {"axis", vec_json(c.axis)},
                    {"anchor", vec_json(c.anchor)},
                    {"range", json::array({c.range_min, c.range_max})},
                    {"provenance", c.provenance}});
  j = json{{"object_id", a.object_id}, {"shapes", shapes},      {"parts", parts},
           {"grasp_poses", grasps},    {"constraints", cons},   {"color", a.color},
           {"materials", a.materials}};
}

void from_json(const json& j, AssetRecord& a) {
  a = AssetRecord{};
  a.object_id = j.at("object_id").get<std::string>();
  for (const auto& s : j.at("shapes")) {
    ShapePrimitive p;
    p.kind = shape_kind_from_name(s.at("kind").get<std::string>());
    p.pose.position = s.contains("position") ? vec_from_json(s.at("position")) : Vec3::Zero();
    if (s.contains("orientation")) p.pose.orientation = quat_from_json(s.at("orientation"));
    const json& size = s.at("size");
    p.size = size.is_number() ? Vec3(size.get<double>(), 0, 0) : vec_from_json(size);
    a.shapes.push_back(p);
  }
  for (const auto& p : j.value("parts", json::array())) {
    PartAnnotation part;
    part.part_id = p.at("part_id").get<std::string>();
    part.kind = part_kind_from_name(p.value("kind", std::string("custom")));
    part.region = p.at("region").get<Region>();
    part.provenance = p.value("provenance", std::string("authored"));
    a.parts.push_back(std::move(part));
  }
  for (const auto& g : j.value("grasp_poses", json::array())) {
    GraspPose gp;
    gp.part_id = g.at("part_id").get<std::string>();
    gp.position = vec_from_json(g.at("position"));
    if (g.contains("orientation")) gp.orientation = quat_from_json(g.at("orientation"));
    gp.approach = vec_from_json(g.at("approach"));
    gp.provenance = g.value("provenance", std::string("authored"));
    a.grasp_poses.push_back(std::move(gp));
  }
  for (const auto& c : j.value("constraints", json::array())) {
    ManipulationConstraint mc;
    mc.kind = constraint_kind_from_name(c.at("kind").get<std::string>());
    mc.part_id = c.value("part_id", std::string{});
    mc.axis = vec_from_json(c.at("axis"));
    mc.anchor = c.contains("anchor") ? vec_from_json(c.at("anchor")) : Vec3::Zero();
    const auto& r = c.at("range");
    if (!r.is_array() || r.size() != 2) throw json::type_error::create(302, "range must be [min, max]", &r);
    mc.range_min = r[0].get<double>();
    mc.range_max = r[1].get<double>();
    mc.provenance = c.value("provenance", std::string("authored"));
    a.constraints.push_back(std::move(mc));
  }
  a.color = j.value("color", std::string{});
  a.materials = j.value("materials", std::vector<std::string>{});
}

namespace {

AssetRecord parse_record(const json& j, const std::string& where) {
  const std::string id = j.is_object() ? j.value("object_id", std::string("?")) : std::string("?");
  try {
    return j.get<AssetRecord>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaViolation, where + ": " + id + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::SchemaViolation, where + ": " + id + ": " + e.what());
  }
}

void add_document(AssetLibrary& lib, const json& doc, const std::string& where) {
  if (doc.is_array()) {
    for (const auto& item : doc) lib.add(parse_record(item, where));
  } else {
    lib.add(parse_record(doc, where));
  }
}

}  // namespace

AssetLibrary library_from_json(const json& doc) {
  AssetLibrary lib;
  add_document(lib, doc, "<json>");
  return lib;
}

AssetLibrary load_library(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) fail(ErrorCode::IoFailure, "no such path: " + path.string());

  std::vector<fs::path> files;
  if (fs::is_directory(path, ec)) {
    for (const auto& entry : fs::directory_iterator(path, ec))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    if (ec) fail(ErrorCode::IoFailure, "cannot list " + path.string() + ": " + ec.message());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }

  AssetLibrary lib;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) fail(ErrorCode::IoFailure, "cannot read " + f.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::SchemaViolation, f.filename().string() + ": " + e.what());
    }
    add_document(lib, doc, f.filename().string());
  }
  return lib;
}

void save_library(const AssetLibrary& library, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [id, rec] : library.records()) {
    std::ofstream out(dir / (id + ".json"));
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + (dir / (id + ".json")).string());
    out << json(rec).dump(2) << '\n';
  }
}

// --- skill support -----------------------------------------------------------

std::set<AnnotationKind> annotations_present(const AssetRecord& asset) {
  std::set<AnnotationKind> out;
  if (!asset.parts.empty()) out.insert(AnnotationKind::PartRegion);
  if (!asset.grasp_poses.empty()) out.insert(AnnotationKind::GraspPose);
  for (const auto& c : asset.constraints) out.insert(annotation_of(c.kind));
  return out;
}

SupportCheck supports_skill(const AssetRecord& asset, const SkillSpec& skill) {
  const auto present = annotations_present(asset);
  SupportCheck r;
  for (auto k : skill.required_annotations)
    if (!present.count(k)) r.missing.push_back(k);
  r.supported = r.missing.empty();
  return r;
}

namespace {

int shortest_axis(const Vec3& half) {
  int best = 2;
  for (int i = 1; i >= 0; --i)
    if (half[i] < half[best]) best = i;
  return best;
}

// Dominant symmetry axis of a primitive, in the object frame.
Vec3 symmetry_axis(const AssetRecord& asset, const ShapePrimitive& s) {
  const Eigen::Matrix3d rot = s.pose.orientation.toRotationMatrix();
  switch (s.kind) {
    case ShapePrimitive::Kind::Sphere:
      fail(ErrorCode::UnderconstrainedGeometry, asset.object_id + ": a sphere has no dominant axis");
    case ShapePrimitive::Kind::Cylinder:
      return rot.col(2);
    case ShapePrimitive::Kind::Box: {
      const Vec3& e = s.size;
      constexpr double tol = 1e-9;
      const bool xy = std::abs(e.x() - e.y()) < tol, yz = std::abs(e.y() - e.z()) < tol,
                 xz = std::abs(e.x() - e.z()) < tol;
      if (xy && yz) fail(ErrorCode::UnderconstrainedGeometry, asset.object_id + ": a cube has no dominant axis");
      int axis;
      if (xy)
        axis = 2;
      else if (yz)
        axis = 0;
      else if (xz)
        axis = 1;
      else
        e.maxCoeff(&axis);
      return rot.col(axis);
    }
  }
  return Vec3::UnitZ();
}

}  // namespace

AssetRecord backfill_annotations(const AssetRecord& asset, const std::set<AnnotationKind>& needed) {
  AssetRecord out = asset;
  const auto present = annotations_present(asset);

  const bool want_parts = needed.count(AnnotationKind::PartRegion) || needed.count(AnnotationKind::GraspPose);
  if (want_parts && !present.count(AnnotationKind::PartRegion)) {
    for (std::size_t i = 0; i < out.shapes.size(); ++i) {
      auto [lo, hi] = out.shapes[i].bounds();
      PartAnnotation p;
      p.part_id = "part_" + std::to_string(i);
      p.region.center = (lo + hi) / 2.0;
      p.region.extents = (hi - lo) / 2.0;
      p.provenance = "auto";
      out.parts.push_back(std::move(p));
    }
  }

  if (needed.count(AnnotationKind::GraspPose) && !present.count(AnnotationKind::GraspPose)) {
    for (const auto& s : out.shapes) {
      auto [lo, hi] = s.bounds();
      const Vec3 centroid = s.pose.position;
      const PartAnnotation* host = nullptr;
      for (const auto& p : out.parts)
        if (p.region.contains(centroid, 1e-9)) {
          host = &p;
          break;
        }
      if (!host) continue;
      GraspPose g;
      g.part_id = host->part_id;
      g.position = centroid;
      g.approach = -Vec3::Unit(shortest_axis((hi - lo) / 2.0));
      g.orientation = Quat::FromTwoVectors(-Vec3::UnitZ(), g.approach).normalized();
      g.provenance = "auto";
      out.grasp_poses.push_back(std::move(g));
    }
    if (out.grasp_poses.empty())
      fail(ErrorCode::UnderconstrainedGeometry, asset.object_id + ": no part region contains a primitive centroid");
  }

  const std::pair<AnnotationKind, ConstraintKind> axis_kinds[] = {
      {AnnotationKind::ActuationAxis, ConstraintKind::ActuationAxis},
      {AnnotationKind::HingeAxis, ConstraintKind::HingeAxis},
      {AnnotationKind::SlidingDirection, ConstraintKind::SlidingDirection},
      {AnnotationKind::RotationAxis, ConstraintKind::RotationAxis},
  };
  for (auto [ann, kind] : axis_kinds) {
    if (!needed.count(ann) || present.count(ann)) continue;
    if (out.shapes.empty()) fail(ErrorCode::UnderconstrainedGeometry, asset.object_id + ": no shape primitives");
    const ShapePrimitive& s = out.shapes.front();
    ManipulationConstraint c;
    c.kind = kind;
    c.axis = symmetry_axis(asset, s).normalized();
    c.anchor = s.pose.position;
    c.provenance = "auto";
    switch (kind) {
      case ConstraintKind::RotationAxis: c.range_min = -180.0; c.range_max = 180.0; break;
      case ConstraintKind::HingeAxis: c.range_min = 0.0; c.range_max = 90.0; break;
      case ConstraintKind::SlidingDirection: {
        auto [lo, hi] = s.bounds();
        c.range_min = 0.0;
        c.range_max = std::abs((hi - lo).dot(c.axis));
        break;
      }
      case ConstraintKind::ActuationAxis: c.range_min = 0.0; c.range_max = 0.01; break;
    }
    out.constraints.push_back(std::move(c));
  }
  return out;
}

}  // namespace metafine
