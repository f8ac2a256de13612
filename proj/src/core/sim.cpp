#include "metafine/sim.hpp"

#include <algorithm>
#include <cmath>

#include "metafine/error.hpp"

namespace metafine {

namespace {

constexpr double kWorkspaceXY = 0.6;
constexpr double kWorkspaceZMax = 0.8;
constexpr double kContactMargin = 0.005;
constexpr double kLocationMargin = 0.01;

Vec3 clamp_workspace(const Vec3& p) {
  return {std::clamp(p.x(), -kWorkspaceXY, kWorkspaceXY), std::clamp(p.y(), -kWorkspaceXY, kWorkspaceXY),
          std::clamp(p.z(), 0.0, kWorkspaceZMax)};
}

const ManipulationConstraint* motion_constraint(const AssetRecord& a) {
  for (const auto& c : a.constraints)
    if (c.kind != ConstraintKind::ActuationAxis) return &c;
  return nullptr;
}

void rotate_about(Pose& obj, const Vec3& anchor, const Vec3& axis, double angle_deg) {
  const Quat r(Eigen::AngleAxisd(deg2rad(angle_deg), axis));
  obj.position = anchor + r * (obj.position - anchor);
  obj.orientation = (r * obj.orientation).normalized();
}

}  // namespace

Action Action::from_vectors(const Vec3& t, const Vec3& r, Grip g) {
  Action a;
  a.delta = {t.x(), t.y(), t.z(), r.x(), r.y(), r.z()};
  a.grip = g;
  return a;
}

Action Action::clipped() const {
  Action a = *this;
  for (int i = 0; i < 3; ++i) a.delta[i] = std::clamp(delta[i], -kMaxStepTranslation, kMaxStepTranslation);
  for (int i = 3; i < 6; ++i) a.delta[i] = std::clamp(delta[i], -kMaxStepRotation, kMaxStepRotation);
  return a;
}

const char* perturbation_kind_name(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::None: return "none";
    case PerturbationKind::Geometric: return "geometric";
    case PerturbationKind::Photometric: return "photometric";
  }
  return "none";
}

PerturbationKind perturbation_kind_from_name(std::string_view name) {
  if (name == "none") return PerturbationKind::None;
  if (name == "geometric" || name == "viewpoint") return PerturbationKind::Geometric;
  if (name == "photometric" || name == "lighting") return PerturbationKind::Photometric;
  fail(ErrorCode::InvalidArgument, "unknown perturbation kind '" + std::string(name) + "'");
}

LevelBounds level_bounds(int level) {
  switch (level) {
    case 0: return {0.0, 0.0, 0.0};
    case 1: return {0.03, 3.0, 0.10};
    case 2: return {0.06, 6.0, 0.25};
    case 3: return {0.12, 12.0, 0.40};
    default: fail(ErrorCode::InvalidArgument, "perturbation level must be 0..3, got " + std::to_string(level));
  }
}

double PerturbationSetting::position_sigma() const {
  return kind == PerturbationKind::Photometric ? 0.02 * std::abs(intensity) / 0.40 : 0.0;
}

double PerturbationSetting::rotation_sigma() const {
  return kind == PerturbationKind::Photometric ? 4.0 * std::abs(intensity) / 0.40 : 0.0;
}

std::string PerturbationSetting::label() const {
  if (kind == PerturbationKind::None || level == 0) return "nominal";
  return std::string(perturbation_kind_name(kind)) + ":L" + std::to_string(level);
}

PerturbationSetting make_perturbation(PerturbationKind kind, int level, std::uint64_t seed) {
  const LevelBounds b = level_bounds(level);
  PerturbationSetting s;
  s.kind = kind;
  s.level = level;
  s.seed = seed;
  Rng rng(derive_seed(seed, "perturbation"));
  auto in_ball = [&](double radius) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    if (d.norm() < 1e-12) d = Vec3::UnitX();
    return Vec3(d.normalized() * radius * std::cbrt(rng.uniform()));
  };
  if (kind == PerturbationKind::Geometric && level > 0) {
    s.offset.position = in_ball(b.position);
    s.offset.orientation = rotvec_deg(in_ball(b.rotation));
  } else if (kind == PerturbationKind::Photometric && level > 0) {
    s.intensity = rng.uniform(-b.intensity, b.intensity);
  }
  return s;
}

std::string joint_key(const std::string& object_id, const ManipulationConstraint& c) {
  return c.part_id.empty() ? object_id : object_id + "/" + c.part_id;
}

const char* stage_status_name(StageStatus s) {
  switch (s) {
    case StageStatus::Passed: return "passed";
    case StageStatus::Failed: return "failed";
    case StageStatus::NotReached: return "not_reached";
    case StageStatus::Skipped: return "skipped";
  }
  return "?";
}

StageStatus stage_status_from_name(std::string_view name) {
  for (auto s : {StageStatus::Passed, StageStatus::Failed, StageStatus::NotReached, StageStatus::Skipped})
    if (name == stage_status_name(s)) return s;
  fail(ErrorCode::CorruptTrace, "unknown stage status '" + std::string(name) + "'");
}

const char* terminal_name(Terminal t) {
  switch (t) {
    case Terminal::Completed: return "completed";
    case Terminal::StageFailed: return "stage_failed";
    case Terminal::ConstraintViolated: return "constraint_violated";
    case Terminal::StepBudgetExhausted: return "step_budget_exhausted";
  }
  return "?";
}

Terminal terminal_from_name(std::string_view name) {
  for (auto t : {Terminal::Completed, Terminal::StageFailed, Terminal::ConstraintViolated,
                 Terminal::StepBudgetExhausted})
    if (name == terminal_name(t)) return t;
  fail(ErrorCode::CorruptTrace, "unknown terminal status '" + std::string(name) + "'");
}

// --- scene --------------------------------------------------------------------

WorldState Scene::reset(const Configuration& config) const {
  WorldState w;
  for (const auto& [id, init] : task_->scene_init.objects) {
    if (!library_->find(id)) fail(ErrorCode::UnknownObject, "scene object '" + id + "' is not in the library");
    auto it = config.objects.find(id);
    w.objects[id] = it != config.objects.end() ? it->second : init;
    w.rotation_accum[id] = Vec3::Zero();
  }
  for (const auto& [id, pose] : config.objects)
    if (!w.objects.count(id)) fail(ErrorCode::UnknownObject, "configuration places unknown object '" + id + "'");

  Configuration placed;
  placed.objects = w.objects;
  if (auto clash = find_collision(placed, *library_))
    fail(ErrorCode::CollisionAtInit, "'" + clash->first + "' and '" + clash->second + "' overlap at initialization");

  for (const auto& [id, pose] : w.objects) {
    for (const auto& c : library_->get(id).constraints) {
      const std::string key = joint_key(id, c);
      double v = c.range_min < 0.0 && c.range_max > 0.0 ? 0.0 : c.range_min;
      if (auto it = task_->scene_init.joints.find(key); it != task_->scene_init.joints.end()) v = it->second;
      if (auto it = config.joints.find(key); it != config.joints.end()) v = it->second;
      w.joints[key] = std::clamp(v, c.range_min, c.range_max);
    }
  }
  w.ee = task_->scene_init.ee_home;
  return w;
}

WorldState Scene::step(const WorldState& world, const Action& raw) const {
  const Action a = raw.clipped();
  WorldState w = world;
  w.step += 1;
  const Vec3 t = a.translation();
  const Vec3 omega = a.rotation();

  if (w.attachment) {
    const Attachment& att = *w.attachment;
    Pose& obj = w.objects.at(att.object_id);
    const AssetRecord& asset = library_->get(att.object_id);
    const ManipulationConstraint* c = motion_constraint(asset);
    if (!c) {
      w.ee.position = clamp_workspace(w.ee.position + t);
      w.ee.orientation = (rotvec_deg(omega) * w.ee.orientation).normalized();
      obj = w.ee * att.offset;
      w.rotation_accum[att.object_id] += omega;
    } else {
      const std::string key = joint_key(att.object_id, *c);
      const double j0 = w.joints[key];
      const Vec3 axis = (obj.orientation * c->axis).normalized();
      if (c->kind == ConstraintKind::SlidingDirection) {
        const double j1 = std::clamp(j0 + t.dot(axis), c->range_min, c->range_max);
        obj.position += axis * (j1 - j0);
        w.joints[key] = j1;
      } else {
        const Vec3 anchor = obj.apply(c->anchor);
        double delta_deg = 0.0;
        if (c->kind == ConstraintKind::HingeAxis) {
          const Vec3 r = w.ee.position - anchor;
          const Vec3 r_perp = r - r.dot(axis) * axis;
          const double rho = r_perp.norm();
          if (rho > 1e-6) delta_deg = rad2deg(t.dot(axis.cross(r_perp / rho)) / rho);
        } else {
          delta_deg = omega.dot(axis);
        }
        const double j1 = std::clamp(j0 + delta_deg, c->range_min, c->range_max);
        rotate_about(obj, anchor, axis, j1 - j0);
        w.rotation_accum[att.object_id] += axis * (j1 - j0);
        w.joints[key] = j1;
      }
      w.ee = obj * att.offset.inverse();
    }
  } else {
    const Vec3 before = w.ee.position;
    w.ee.position = clamp_workspace(w.ee.position + t);
    w.ee.orientation = (rotvec_deg(omega) * w.ee.orientation).normalized();
    const Vec3 moved = w.ee.position - before;
    for (const auto& [id, pose] : w.objects) {
      const AssetRecord& asset = library_->get(id);
      for (const auto& c : asset.constraints) {
        if (c.kind != ConstraintKind::ActuationAxis) continue;
        const PartAnnotation* part = asset.find_part(c.part_id);
        if (!part || !part->region.contains(pose.inverse().apply(w.ee.position), kContactMargin)) continue;
        const double push = moved.dot(pose.orientation * c.axis);
        if (push <= 0.0) continue;
        double& j = w.joints[joint_key(id, c)];
        j = std::clamp(j + push, c.range_min, c.range_max);
      }
    }
  }

  if (a.grip == Grip::Open) {
    w.gripper_closed = false;
    w.attachment.reset();
  } else if (a.grip == Grip::Close && !w.gripper_closed) {
    w.gripper_closed = true;
    double best = kGraspReach;
    for (const auto& [id, pose] : w.objects) {
      const AssetRecord& asset = library_->get(id);
      const Vec3 local = pose.inverse().apply(w.ee.position);
      for (const auto& g : asset.grasp_poses) {
        const PartAnnotation* part = asset.find_part(g.part_id);
        if (!part || !part->region.contains(local, kContactMargin)) continue;
        const double d = (local - g.position).norm();
        if (d <= best) {
          best = d;
          w.attachment = Attachment{id, g.part_id, w.ee.inverse() * pose};
        }
      }
    }
  }
  return w;
}

Observation Scene::observe(const WorldState& world, const PerturbationSetting& p, Rng& noise) const {
  Observation o;
  o.step = world.step;
  o.instruction = task_->instruction;
  o.joints = world.joints;
  o.ee = world.ee;
  o.gripper_closed = world.gripper_closed;
  const double sp = p.position_sigma(), sr = p.rotation_sigma();
  for (const auto& [id, pose] : world.objects) {
    Pose seen = pose;
    if (p.kind == PerturbationKind::Geometric) seen = p.offset * pose;
    if (p.kind == PerturbationKind::Photometric && (sp > 0.0 || sr > 0.0)) {
      const Vec3 dp(noise.normal() * sp, noise.normal() * sp, noise.normal() * sp);
      const Vec3 dr(noise.normal() * sr, noise.normal() * sr, noise.normal() * sr);
      seen.position += dp;
      seen.orientation = (rotvec_deg(dr) * seen.orientation).normalized();
    }
    o.poses[id] = seen;
  }
  return o;
}

std::optional<Vec3> Scene::direction_vector(const WorldState& world, const std::string& object,
                                            const std::string& word) const {
  if (word == "left") return Vec3::UnitY();
  if (word == "right") return Vec3(-Vec3::UnitY());
  if (word == "forward") return Vec3::UnitX();
  if (word == "backward") return Vec3(-Vec3::UnitX());
  if (word == "up") return Vec3::UnitZ();
  if (word == "down") return Vec3(-Vec3::UnitZ());
  if (word == "open" || word == "close") {
    const auto* asset = library_->find(object);
    auto it = world.objects.find(object);
    if (!asset || it == world.objects.end()) return std::nullopt;
    const auto* c = asset->find_constraint(ConstraintKind::SlidingDirection);
    if (!c) return std::nullopt;
    const Vec3 axis = (it->second.orientation * c->axis).normalized();
    return word == "open" ? axis : Vec3(-axis);
  }
  return std::nullopt;
}

std::optional<Vec3> Scene::rotation_axis(const WorldState& world, const std::string& object,
                                         const std::string& word) const {
  if (word == "x") return Vec3::UnitX();
  if (word == "y") return Vec3::UnitY();
  if (word == "z") return Vec3::UnitZ();
  if (word == "clockwise" || word == "counterclockwise") {
    Vec3 axis = Vec3::UnitZ();
    const auto* asset = library_->find(object);
    auto it = world.objects.find(object);
    if (asset && it != world.objects.end())
      if (const auto* c = asset->find_constraint(ConstraintKind::RotationAxis))
        axis = (it->second.orientation * c->axis).normalized();
    return word == "counterclockwise" ? axis : Vec3(-axis);
  }
  return std::nullopt;
}

// --- acceptance ---------------------------------------------------------------

std::optional<ReceptacleFrame> receptacle_frame(const AssetLibrary& library, const std::map<std::string, Pose>& poses,
                                                const std::string& ref) {
  const auto* asset = library.find(ref);
  auto it = poses.find(ref);
  if (!asset || it == poses.end() || asset->parts.empty()) return std::nullopt;
  const PartAnnotation* hole = asset->find_part("hole");
  if (!hole) hole = &asset->parts.front();
  const Vec3 half = hole->region.half_size();
  ReceptacleFrame r;
  r.entry = it->second.apply(hole->region.center + Vec3(0, 0, half.z()));
  r.normal = (it->second.orientation * Vec3::UnitZ()).normalized();
  r.radius = std::min(half.x(), half.y());
  return r;
}

std::optional<InsertableFrame> insertable_frame(const AssetLibrary& library, const std::map<std::string, Pose>& poses,
                                                const std::string& obj) {
  const auto* asset = library.find(obj);
  auto it = poses.find(obj);
  if (!asset || it == poses.end()) return std::nullopt;
  auto [lo, hi] = asset->bounds();
  InsertableFrame r;
  r.tip = it->second.apply(Vec3(0.5 * (lo.x() + hi.x()), 0.5 * (lo.y() + hi.y()), lo.z()));
  r.axis = (it->second.orientation * Vec3::UnitZ()).normalized();
  r.radius = 0.5 * std::min(hi.x() - lo.x(), hi.y() - lo.y());
  return r;
}

namespace {

const ManipulationConstraint* constraint_for(const AssetRecord& a, ConstraintKind kind, const std::string& part) {
  for (const auto& c : a.constraints)
    if (c.kind == kind && c.part_id == part) return &c;
  return a.find_constraint(kind);
}

double joint_fraction(const WorldState& w, const std::string& obj, const ManipulationConstraint& c) {
  auto it = w.joints.find(joint_key(obj, c));
  const double j = it == w.joints.end() ? c.range_min : it->second;
  return (j - c.range_min) / (c.range_max - c.range_min);
}

Vec3 accum(const WorldState& w, const std::string& obj) {
  auto it = w.rotation_accum.find(obj);
  return it == w.rotation_accum.end() ? Vec3::Zero() : it->second;
}

}  // namespace

AtomResult evaluate_atom(const Scene& scene, const WorldState& w, const WorldState& start, const Atom& atom) {
  AtomResult r;
  r.atom = to_string(atom);
  r.name = atom.name;
  const auto& args = atom.args;
  const auto& prm = atom.params;
  auto set = [&](bool fine, bool coarse) {
    r.holds = fine;
    r.holds_coarse = coarse || fine;
  };
  auto object_missing = [&](const std::string& id) { return !w.objects.count(id); };

  const std::string& n = atom.name;
  if (n == "hand-free") {
    set(!w.attachment, !w.attachment);
  } else if (n == "reachable") {
    const bool ok = !object_missing(args[0]) && std::abs(w.objects.at(args[0]).position.x()) <= kWorkspaceXY &&
                    std::abs(w.objects.at(args[0]).position.y()) <= kWorkspaceXY;
    set(ok, ok);
  } else if (n == "grasp-stable" || n == "in-hand") {
    const bool ok = w.attachment && w.attachment->object_id == args[0] && (n == "in-hand" || w.gripper_closed);
    set(ok, ok);
  } else if (n == "contact-at") {
    const bool on_object = w.attachment && w.attachment->object_id == args[0];
    set(on_object && w.attachment->part_id == args[1], on_object);
  } else if (n == "aligned") {
    auto rec = receptacle_frame(scene.library(), w.objects, args[1]);
    auto ins = insertable_frame(scene.library(), w.objects, args[0]);
    if (rec && ins) {
      const Vec3 goal = rec->entry + rec->normal * kAlignHeight;
      const double pos = (ins->tip - goal).norm();
      const double ang = angle_between_deg(ins->axis, rec->normal);
      r.measured = {{"position_error", pos}, {"angular_error", ang}};
      const bool ok = pos <= prm[0] && ang <= prm[1];
      set(ok, ok);
    }
  } else if (n == "inserted" || n == "clearance") {
    auto rec = receptacle_frame(scene.library(), w.objects, args[1]);
    auto ins = insertable_frame(scene.library(), w.objects, args[0]);
    if (rec && ins) {
      const Vec3 d = ins->tip - rec->entry;
      const double depth = -d.dot(rec->normal);
      const double lateral = (d - d.dot(rec->normal) * rec->normal).norm();
      r.measured = {{"depth", depth}, {"lateral", lateral}};
      bool ok;
      if (n == "inserted") {
        ok = depth >= prm[0] - prm[1] && lateral <= rec->radius;
      } else {
        const double allowed = rec->radius - ins->radius + prm[0];
        r.measured["allowed"] = allowed;
        ok = depth <= 0.0 || lateral <= allowed;
      }
      set(ok, ok);
    }
  } else if (n == "actuated" || n == "state-of") {
    const auto* asset = scene.library().find(args[0]);
    if (asset) {
      auto passes = [&](const ManipulationConstraint& c) {
        const double f = joint_fraction(w, args[0], c);
        if (n == "actuated") return f >= prm[0] - 1e-9;
        const double state = f >= 1.0 - 1e-9 ? 1.0 : 0.0;
        return std::abs(state - prm[0]) <= 1e-9;
      };
      bool fine = false, coarse = false;
      for (const auto& c : asset->constraints) {
        if (c.kind != ConstraintKind::ActuationAxis) continue;
        const bool ok = passes(c);
        coarse = coarse || ok;
        if (c.part_id == args[1]) {
          fine = ok;
          r.measured[n == "actuated" ? "fraction" : "state"] =
              n == "actuated" ? joint_fraction(w, args[0], c) : (joint_fraction(w, args[0], c) >= 1.0 - 1e-9);
        }
      }
      set(fine, coarse);
    }
  } else if (n == "rotated-by" || n == "axis-compliant") {
    auto axis = scene.rotation_axis(w, args[0], args[1]);
    if (axis && !object_missing(args[0])) {
      const Vec3 delta = accum(w, args[0]) - accum(start, args[0]);
      const double theta = delta.dot(*axis);
      const double off = (delta - theta * *axis).norm();
      r.measured = {{"angle", theta}, {"off_axis", off}};
      if (n == "rotated-by") {
        set(std::abs(theta - prm[0]) <= prm[1] && off <= prm[1],
            std::abs(std::abs(theta) - std::abs(prm[0])) <= prm[1] && off <= prm[1]);
      } else {
        set(off <= prm[0], off <= prm[0]);
      }
    }
  } else if (n == "displaced-along" || n == "on-guide" || n == "moved-to") {
    const auto* dest = scene.library().find(args[1]);
    if (n == "moved-to" && dest && w.objects.count(args[1])) {
      const auto* asset = scene.library().find(args[0]);
      if (asset && !object_missing(args[0]) && !dest->parts.empty()) {
        const PartAnnotation* region = dest->find_part("interior");
        if (!region) region = &dest->parts.front();
        auto [lo, hi] = asset->bounds();
        const Vec3 center = w.objects.at(args[0]).apply((lo + hi) / 2.0);
        const Vec3 local = w.objects.at(args[1]).inverse().apply(center);
        const bool inside = region->region.contains(local, kLocationMargin);
        r.measured = {{"inside", inside ? 1.0 : 0.0}, {"distance_to_center", (local - region->region.center).norm()}};
        set(inside, inside);
      }
    } else {
      auto dir = scene.direction_vector(w, args[0], args[1]);
      if (dir && !object_missing(args[0]) && !object_missing(args[0])) {
        const Vec3 d = w.objects.at(args[0]).position - start.objects.at(args[0]).position;
        const double along = d.dot(*dir);
        if (n == "on-guide") {
          const double lateral = (d - along * *dir).norm();
          r.measured = {{"lateral", lateral}};
          set(lateral <= prm[0], lateral <= prm[0]);
        } else {
          const double ang = d.norm() < 1e-9 ? 180.0 : angle_between_deg(d, *dir);
          r.measured = {{"displacement", along}, {"angle", ang}};
          const bool fine = along >= prm[0] && ang <= prm[1];
          const bool coarse = std::abs(along) >= prm[0] && std::min(ang, 180.0 - ang) <= prm[1];
          set(fine, coarse);
        }
      }
    }
  } else if (n == "hinge-open") {
    const auto* asset = scene.library().find(args[0]);
    const ManipulationConstraint* c = asset ? constraint_for(*asset, ConstraintKind::HingeAxis, args[1]) : nullptr;
    if (c) {
      auto it = w.joints.find(joint_key(args[0], *c));
      const double angle = it == w.joints.end() ? c->range_min : it->second;
      r.measured = {{"angle", angle}};
      set(angle >= prm[0], angle >= prm[0]);
    }
  } else if (n == "has-color") {
    const auto* asset = scene.library().find(args[0]);
    const bool ok = asset && asset->color == args[1];
    set(ok, ok);
  }
  return r;
}

StageVerdict evaluate_stage(const Scene& scene, const WorldState& world, const WorldState& stage_start,
                            const StageAcceptance& acceptance) {
  StageVerdict v;
  v.stage = acceptance.stage;
  v.skill_id = scene.task().stages.at(static_cast<std::size_t>(acceptance.stage)).skill_id;
  v.step = world.step;
  bool all = true, coarse = true;
  for (const auto& atom : acceptance.q) {
    AtomResult r = evaluate_atom(scene, world, stage_start, atom);
    if (!r.holds && v.failing.empty()) v.failing = r.atom;
    all = all && r.holds;
    coarse = coarse && r.holds_coarse;
    v.atoms.push_back(std::move(r));
  }
  v.status = all ? StageStatus::Passed : StageStatus::Failed;
  v.coarse_pass = coarse;
  return v;
}

// --- tracker ------------------------------------------------------------------

AcceptanceTracker::AcceptanceTracker(const Scene& scene, const TaskSpec& acceptance_task)
    : scene_(&scene), task_(&acceptance_task) {}

void AcceptanceTracker::begin(const WorldState& world) {
  current_ = 0;
  stage_start_ = world;
  terminal_.reset();
  verdicts_.clear();
  for (std::size_t i = 0; i < task_->stages.size(); ++i) {
    StageVerdict v;
    v.stage = static_cast<int>(i);
    v.skill_id = task_->stages[i].skill_id;
    verdicts_.push_back(std::move(v));
  }
}

void AcceptanceTracker::close_stage(const WorldState& world, StageStatus status, const StageVerdict& eval) {
  StageVerdict& v = verdicts_[static_cast<std::size_t>(current_)];
  const bool coarse = v.coarse_pass;
  v = eval;
  v.stage = current_;
  v.skill_id = task_->stages[static_cast<std::size_t>(current_)].skill_id;
  v.status = status;
  v.step = world.step;
  v.coarse_pass = coarse || (status == StageStatus::Passed);
}

std::vector<std::string> AcceptanceTracker::update(const WorldState& world) {
  std::vector<std::string> violations;
  if (terminal_) return violations;

  const StageAcceptance& acc = task_->acceptance[static_cast<std::size_t>(current_)];
  bool coarse_monitors = true;
  for (const auto& atom : acc.c) {
    AtomResult r = evaluate_atom(*scene_, world, stage_start_, atom);
    // A contact monitor only binds once the hand holds that object.
    if (atom.name == "contact-at" && !(world.attachment && world.attachment->object_id == atom.args[0]))
      r.holds = r.holds_coarse = true;
    if (!r.holds) violations.push_back(r.atom);
    coarse_monitors = coarse_monitors && r.holds_coarse;
  }
  StageVerdict eval = evaluate_stage(*scene_, world, stage_start_, acc);
  if (eval.coarse_pass && coarse_monitors) verdicts_[static_cast<std::size_t>(current_)].coarse_pass = true;

  if (!violations.empty()) {
    eval.failing = violations.front();
    close_stage(world, StageStatus::Failed, eval);
    terminal_ = Terminal::ConstraintViolated;
    return violations;
  }
  if (eval.status != StageStatus::Passed) return violations;

  close_stage(world, StageStatus::Passed, eval);
  const int finished = current_;
  auto branch = [&](const Atom& pred) { return evaluate_atom(*scene_, world, stage_start_, pred).holds; };
  std::optional<int> next = next_stage(*task_, finished, branch);
  for (const auto& e : task_->edges)
    if (e.kind == EdgeKind::Conditional && e.from == finished && next) {
      const int skipped = *next == e.to ? e.otherwise : e.to;
      verdicts_[static_cast<std::size_t>(skipped)].status = StageStatus::Skipped;
    }
  if (!next) {
    terminal_ = Terminal::Completed;
    return violations;
  }
  current_ = *next;
  stage_start_ = world;

  // Preconditions of the entered stage must hold on entry.
  for (const auto& atom : task_->stages[static_cast<std::size_t>(current_)].p) {
    const AtomResult r = evaluate_atom(*scene_, world, stage_start_, atom);
    if (!r.holds) {
      StageVerdict v = evaluate_stage(*scene_, world, stage_start_, task_->acceptance[static_cast<std::size_t>(current_)]);
      v.failing = "precondition " + r.atom;
      close_stage(world, StageStatus::Failed, v);
      terminal_ = Terminal::StageFailed;
      break;
    }
  }
  return violations;
}

void AcceptanceTracker::finish_budget(const WorldState& world) {
  if (terminal_) return;
  StageVerdict eval =
      evaluate_stage(*scene_, world, stage_start_, task_->acceptance[static_cast<std::size_t>(current_)]);
  close_stage(world, StageStatus::Failed, eval);
  terminal_ = Terminal::StepBudgetExhausted;
}

// --- JSON ---------------------------------------------------------------------

namespace {

json pose7(const Pose& p) {
  const auto q = quat_wxyz(p.orientation);
  return json::array({p.position.x(), p.position.y(), p.position.z(), q[0], q[1], q[2], q[3]});
}

Pose pose_from7(const json& j) {
  if (!j.is_array() || j.size() != 7) throw json::type_error::create(302, "expected [x,y,z,qw,qx,qy,qz]", &j);
  return {Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()),
          quat_from_wxyz({j[3].get<double>(), j[4].get<double>(), j[5].get<double>(), j[6].get<double>()})};
}

json verdicts_json(const std::vector<StageVerdict>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(v);
  return a;
}

std::vector<StageVerdict> verdicts_from(const json& j) {
  std::vector<StageVerdict> out;
  for (const auto& v : j) out.push_back(v.get<StageVerdict>());
  return out;
}

}  // namespace

void to_json(json& j, const PerturbationSetting& p) {
  j = json{{"kind", perturbation_kind_name(p.kind)},
           {"level", p.level},
           {"seed", p.seed},
           {"offset", {{"translation", vec_json(p.offset.position)}, {"rotation", quat_wxyz(p.offset.orientation)}}},
           {"intensity", p.intensity}};
}

void from_json(const json& j, PerturbationSetting& p) {
  p = PerturbationSetting{};
  p.kind = perturbation_kind_from_name(j.at("kind").get<std::string>());
  p.level = j.at("level").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  const auto& off = j.at("offset");
  p.offset.position = vec_from_json(off.at("translation"));
  p.offset.orientation = quat_from_wxyz(off.at("rotation").get<std::array<double, 4>>());
  p.intensity = j.at("intensity").get<double>();
}

void to_json(json& j, const StageVerdict& v) {
  json atoms = json::array();
  for (const auto& a : v.atoms)
    atoms.push_back({{"atom", a.atom},
                     {"name", a.name},
                     {"holds", a.holds},
                     {"holds_coarse", a.holds_coarse},
                     {"measured", a.measured}});
  j = json{{"stage", v.stage},         {"skill_id", v.skill_id},       {"status", stage_status_name(v.status)},
           {"step", v.step},           {"coarse_pass", v.coarse_pass}, {"failing", v.failing},
           {"atoms", atoms}};
}

void from_json(const json& j, StageVerdict& v) {
  v = StageVerdict{};
  v.stage = j.at("stage").get<int>();
  v.skill_id = j.at("skill_id").get<std::string>();
  v.status = stage_status_from_name(j.at("status").get<std::string>());
  v.step = j.at("step").get<int>();
  v.coarse_pass = j.at("coarse_pass").get<bool>();
  v.failing = j.at("failing").get<std::string>();
  for (const auto& a : j.at("atoms"))
    v.atoms.push_back({a.at("atom").get<std::string>(), a.at("name").get<std::string>(), a.at("holds").get<bool>(),
                       a.at("holds_coarse").get<bool>(), a.at("measured").get<std::map<std::string, double>>()});
}

void to_json(json& j, const RolloutTrace& t) {
  json steps = json::array();
  for (const auto& s : t.steps) {
    json action = json::array();
    for (double d : s.action.delta) action.push_back(d);
    action.push_back(static_cast<int>(s.action.grip));
    json rec = {{"action", action}, {"ee", pose7(s.ee)}, {"stage", s.stage}};
    rec["attached"] = s.attached.empty() ? json(nullptr) : json(s.attached);
    if (!s.violations.empty()) rec["violations"] = s.violations;
    steps.push_back(std::move(rec));
  }
  json final_objects = json::object();
  for (const auto& [id, p] : t.final_objects) final_objects[id] = pose7(p);
  j = json{{"schema_version", t.schema_version},
           {"task_id", t.task_id},
           {"policy_id", t.policy_id},
           {"condition", t.condition},
           {"config_id", t.config_id},
           {"configuration", t.configuration},
           {"perturbation", t.perturbation},
           {"seed", t.seed},
           {"stage_count", t.stage_count},
           {"steps", steps},
           {"verdicts", verdicts_json(t.verdicts)},
           {"terminal", terminal_name(t.terminal)},
           {"final_objects", final_objects},
           {"final_joints", t.final_joints}};
  if (t.alt_verdicts) j["alt_verdicts"] = verdicts_json(*t.alt_verdicts);
  if (t.alt_terminal) j["alt_terminal"] = terminal_name(*t.alt_terminal);
}

void from_json(const json& j, RolloutTrace& t) {
  t = RolloutTrace{};
  t.schema_version = j.at("schema_version").get<std::string>();
  t.task_id = j.at("task_id").get<std::string>();
  t.policy_id = j.at("policy_id").get<std::string>();
  t.condition = j.at("condition").get<std::string>();
  t.config_id = j.at("config_id").get<int>();
  t.configuration = j.at("configuration").get<Configuration>();
  t.perturbation = j.at("perturbation").get<PerturbationSetting>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.stage_count = j.at("stage_count").get<int>();
  for (const auto& s : j.at("steps")) {
    StepRecord r;
    const auto& a = s.at("action");
    if (!a.is_array() || a.size() != 7) throw json::type_error::create(302, "action must have 7 entries", &a);
    for (int i = 0; i < 6; ++i) r.action.delta[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)].get<double>();
    r.action.grip = static_cast<Grip>(a[6].get<int>());
    r.ee = pose_from7(s.at("ee"));
    r.stage = s.at("stage").get<int>();
    if (!s.at("attached").is_null()) r.attached = s.at("attached").get<std::string>();
    r.violations = s.value("violations", std::vector<std::string>{});
    t.steps.push_back(std::move(r));
  }
  t.verdicts = verdicts_from(j.at("verdicts"));
  t.terminal = terminal_from_name(j.at("terminal").get<std::string>());
  const json final_objects = j.value("final_objects", json::object());
  for (const auto& [id, p] : final_objects.items()) t.final_objects[id] = pose_from7(p);
  t.final_joints = j.value("final_joints", std::map<std::string, double>{});
  if (j.contains("alt_verdicts")) t.alt_verdicts = verdicts_from(j.at("alt_verdicts"));
  if (j.contains("alt_terminal")) t.alt_terminal = terminal_from_name(j.at("alt_terminal").get<std::string>());
}

}  // namespace metafine
