#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "metafine/error.hpp"
#include "metafine/policy.hpp"

namespace metafine {

namespace {

constexpr double kPreGraspDistance = 0.05;
constexpr double kOracleStep = 0.01;  // m per step
constexpr double kReachTolerance = 2e-4;
constexpr double kRotationDone = 0.5;  // deg
constexpr double kLiftHeight = 0.1;
constexpr double kHingeTarget = 45.0;  // deg
constexpr double kHingeLead = 10.0;    // deg per step

struct StageMemory {
  int phase = 0;
  Vec3 target = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  Quat prev_ee = Quat::Identity();
  Vec3 prev_pos = Vec3::Zero();
  double progress = 0.0;
  int stalled = 0;
  bool initialized = false;
};

struct ScriptStep {
  std::optional<Action> action;
  bool done = false;
};

ScriptStep emit(const Action& a, bool done = false) { return {a, done}; }
ScriptStep finished() { return {std::nullopt, true}; }

double q_param(const TaskStage& stage, std::string_view predicate, std::size_t index, double fallback) {
  for (const auto& atom : stage.q)
    if (atom.name == predicate && index < atom.params.size()) return atom.params[index];
  return fallback;
}

std::string slot(const TaskStage& stage, const std::string& var) {
  auto it = stage.instruction_slots.find(var);
  return it == stage.instruction_slots.end() ? std::string{} : it->second;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string builtin_policy_id(const SyntheticParams& p) {
  const SyntheticParams d;
  std::string id = std::string("builtin:") + policy_family_name(p.family);
  std::vector<std::string> parts;
  if (p.arrest_stage != d.arrest_stage) parts.push_back("arrest_stage=" + std::to_string(p.arrest_stage));
  if (p.bias != d.bias) parts.push_back("bias=" + fmt(p.bias.x()) + "," + fmt(p.bias.y()) + "," + fmt(p.bias.z()));
  if (p.chunk != d.chunk) parts.push_back("chunk=" + std::to_string(p.chunk));
  if (p.kappa != d.kappa) parts.push_back("kappa=" + fmt(p.kappa));
  if (p.sigma != d.sigma) parts.push_back("sigma=" + fmt(p.sigma));
  for (std::size_t i = 0; i < parts.size(); ++i) id += (i ? "&" : "?") + parts[i];
  return id;
}

class ScriptPolicy final : public Policy {
 public:
  explicit ScriptPolicy(SyntheticParams p) : params_(std::move(p)), noise_(0) { check_params(params_); }

  std::string id() const override { return builtin_policy_id(params_); }
  int chunk() const override { return params_.chunk; }

  void reset(const TaskSpec& task, const AssetLibrary& library, std::uint64_t seed) override {
    task_ = task;
    library_ = &library;
    scene_ = std::make_unique<Scene>(task_, library);
    noise_ = Rng(derive_seed(seed, "policy"));
    stage_ = 0;
    finished_ = task_.stages.empty();
    arrested_ = false;
    mem_ = StageMemory{};
    held_.reset();
  }

  std::vector<Action> act(const Observation& obs, const WorldState& truth) override {
    Observation o = obs;
    if (params_.family == PolicyFamily::Oracle) {
      o.poses = truth.objects;
      o.joints = truth.joints;
    }
    std::vector<Action> out;
    for (int k = 0; k < params_.chunk; ++k) {
      const Action a = next_action(o);
      out.push_back(a);
      if (k + 1 < params_.chunk) o = predict(o, a);
    }
    return out;
  }

 private:
  bool oracle() const { return params_.family == PolicyFamily::Oracle; }
  double kappa() const { return oracle() ? 1.0 : params_.kappa; }
  Vec3 bias() const { return oracle() ? Vec3::Zero() : params_.bias; }
  double sigma() const { return params_.family == PolicyFamily::StochasticDrift ? params_.sigma : 0.0; }
  double tolerance() const { return kReachTolerance + 3.0 * sigma(); }

  WorldState belief(const Observation& o) const {
    WorldState w;
    w.objects = o.poses;
    w.joints = o.joints;
    w.ee = o.ee;
    w.gripper_closed = o.gripper_closed;
    w.step = o.step;
    return w;
  }

  /// Open-loop prediction used inside an action chunk.
  Observation predict(const Observation& o, const Action& raw) const {
    const Action a = raw.clipped();
    Observation n = o;
    n.step += 1;
    n.ee.position += a.translation();
    n.ee.orientation = (rotvec_deg(a.rotation()) * n.ee.orientation).normalized();
    if (a.grip == Grip::Close) n.gripper_closed = true;
    if (a.grip == Grip::Open) n.gripper_closed = false;
    if (held_ && n.gripper_closed) {
      auto it = n.poses.find(*held_);
      if (it != n.poses.end()) it->second = n.ee * (o.ee.inverse() * it->second);
    }
    return n;
  }

  Action finalize(Action a) {
    const double s = sigma();
    if (s > 0.0)
      for (int i = 0; i < 3; ++i) a.delta[static_cast<std::size_t>(i)] += noise_.normal() * s;
    return a.clipped();
  }

  /// Servo toward `target` (EE position). Empty once the biased target is reached.
  std::optional<Action> servo(const Observation& o, const Vec3& target, const Vec3& rotation = Vec3::Zero(),
                              bool rotation_done = true) {
    const Vec3 err = target + bias() - o.ee.position;
    const bool moved = (o.ee.position - mem_.prev_pos).norm() > 1e-4;
    mem_.stalled = mem_.initialized && !moved ? mem_.stalled + 1 : 0;
    mem_.prev_pos = o.ee.position;
    mem_.initialized = true;
    if (err.norm() < tolerance() && rotation_done) return std::nullopt;
    if (mem_.stalled >= 3 && rotation_done) return std::nullopt;
    Vec3 t = kappa() * err;
    if (oracle() && t.norm() > kOracleStep) t *= kOracleStep / t.norm();
    return Action::from_vectors(t, kappa() * rotation);
  }

  void next_phase() {
    mem_.phase += 1;
    mem_.stalled = 0;
    mem_.initialized = false;
  }

  /// Rotate about mem_.axis until mem_.progress reaches `angle`.
  std::optional<Action> rotate_toward(const Observation& o, double angle) {
    if (!mem_.initialized) {
      mem_.prev_ee = o.ee.orientation;
      mem_.initialized = true;
    }
    mem_.progress += rotvec_of(o.ee.orientation * mem_.prev_ee.conjugate()).dot(mem_.axis);
    mem_.prev_ee = o.ee.orientation;
    const double remaining = angle - mem_.progress;
    if (std::abs(remaining) < kRotationDone) return std::nullopt;
    return Action::from_vectors(Vec3::Zero(), mem_.axis * (kappa() * remaining));
  }

  Action next_action(const Observation& o) {
    for (int guard = 0; guard < 16 && !finished_ && !arrested_; ++guard) {
      ScriptStep s = run_stage(o);
      if (s.done) advance(o);
      if (s.action) return finalize(*s.action);
    }
    if (arrested_) return Action{};
    return finalize(Action{});
  }

  void advance(const Observation& o) {
    const int done = stage_;
    if (params_.family == PolicyFamily::ArrestAfterStage && done >= params_.arrest_stage) arrested_ = true;
    const WorldState w = belief(o);
    auto branch = [&](const Atom& pred) { return evaluate_atom(*scene_, w, w, pred).holds; };
    auto next = next_stage(task_, done, branch);
    mem_ = StageMemory{};
    if (next)
      stage_ = *next;
    else
      finished_ = true;
  }

  ScriptStep run_stage(const Observation& o) {
    const TaskStage& stage = task_.stages[static_cast<std::size_t>(stage_)];
    const std::string& skill = stage.skill_id;
    if (skill == "GraspPart") return grasp(o, stage);
    if (skill == "PressPart" || skill == "TogglePart") return actuate(o, stage);
    if (skill == "RotateAlong") return rotate(o, stage, q_param(stage, "rotated-by", 0, 90.0), false);
    if (skill == "Flip") return rotate(o, stage, q_param(stage, "rotated-by", 0, 180.0), true);
    if (skill == "SlideAlong") return slide(o, stage);
    if (skill == "OpenHinge") return open_hinge(o, stage);
    if (skill == "Align") return align(o, stage);
    if (skill == "Insert") return insert(o, stage);
    if (skill == "MoveTo") return move_to(o, stage);
    // Skills without a script are treated as already done.
    return finished();
  }

  ScriptStep grasp(const Observation& o, const TaskStage& stage) {
    const std::string obj = slot(stage, "O");
    const std::string part = slot(stage, "P");
    const AssetRecord* asset = library_->find(obj);
    auto pose_it = o.poses.find(obj);
    if (!asset || pose_it == o.poses.end()) return finished();
    const GraspPose* g = nullptr;
    for (const auto& cand : asset->grasp_poses) {
      const bool wanted = params_.family == PolicyFamily::WrongPart ? cand.part_id != part : cand.part_id == part;
      if (wanted) {
        g = &cand;
        break;
      }
    }
    if (!g && !asset->grasp_poses.empty()) g = &asset->grasp_poses.front();
    if (!g) return finished();
    const Pose& pose = pose_it->second;
    const Vec3 point = pose.apply(g->position);
    const Vec3 approach = (pose.orientation * g->approach).normalized();

    switch (mem_.phase) {
      case 0:
        next_phase();
        if (o.gripper_closed) {
          held_.reset();
          return emit(Action::from_vectors(Vec3::Zero(), Vec3::Zero(), Grip::Open));
        }
        [[fallthrough]];
      case 1:
        if (auto a = servo(o, point - approach * kPreGraspDistance)) return emit(*a);
        next_phase();
        [[fallthrough]];
      case 2:
        if (auto a = servo(o, point)) return emit(*a);
        next_phase();
        [[fallthrough]];
      default:
        held_ = obj;
        return emit(Action::from_vectors(Vec3::Zero(), Vec3::Zero(), Grip::Close), true);
    }
  }

  ScriptStep actuate(const Observation& o, const TaskStage& stage) {
    const std::string obj = slot(stage, "O");
    const std::string part = slot(stage, "P");
    const AssetRecord* asset = library_->find(obj);
    auto pose_it = o.poses.find(obj);
    if (!asset || pose_it == o.poses.end()) return finished();
    const ManipulationConstraint* c = nullptr;
    for (const auto& cand : asset->constraints)
      if (cand.kind == ConstraintKind::ActuationAxis && cand.part_id == part) c = &cand;
    const PartAnnotation* region = asset->find_part(part);
    if (!c || !region) return finished();
    const Pose& pose = pose_it->second;
    const Vec3 center = pose.apply(region->region.center);
    const Vec3 axis = (pose.orientation * c->axis).normalized();
    const double travel = c->range_max - c->range_min;

    switch (mem_.phase) {
      case 0:
        if (auto a = servo(o, center - axis * 0.03)) return emit(*a);
        next_phase();
        [[fallthrough]];
      case 1:
        if (auto a = servo(o, center + axis * (travel + 0.01))) return emit(*a);
        next_phase();
        [[fallthrough]];
      default:
        if (auto a = servo(o, center - axis * 0.05)) return emit(*a);
        return finished();
    }
  }

  ScriptStep rotate(const Observation& o, const TaskStage& stage, double angle, bool lift_first) {
    const std::string obj = slot(stage, "O");
    if (mem_.phase == 0) {
      auto axis = scene_->rotation_axis(belief(o), obj, slot(stage, "A"));
      if (!axis) return finished();
      mem_.axis = *axis;
      mem_.target = o.ee.position + Vec3::UnitZ() * kLiftHeight;
      next_phase();
      if (!lift_first) next_phase();
    }
    if (mem_.phase == 1) {
      if (auto a = servo(o, mem_.target)) return emit(*a);
      next_phase();
    }
    if (auto a = rotate_toward(o, angle)) return emit(*a);
    return finished();
  }

  ScriptStep slide(const Observation& o, const TaskStage& stage) {
    if (mem_.phase == 0) {
      auto dir = scene_->direction_vector(belief(o), slot(stage, "O"), slot(stage, "D"));
      if (!dir) return finished();
      mem_.target = o.ee.position + *dir * (q_param(stage, "displaced-along", 0, 0.1) + 0.03);
      next_phase();
    }
    if (auto a = servo(o, mem_.target)) return emit(*a);
    return finished();
  }

  ScriptStep open_hinge(const Observation& o, const TaskStage& stage) {
    const std::string obj = slot(stage, "O");
    const AssetRecord* asset = library_->find(obj);
    auto pose_it = o.poses.find(obj);
    if (!asset || pose_it == o.poses.end()) return finished();
    const ManipulationConstraint* c = asset->find_constraint(ConstraintKind::HingeAxis);
    if (!c) return finished();
    auto j_it = o.joints.find(joint_key(obj, *c));
    const double angle = j_it == o.joints.end() ? 0.0 : j_it->second;
    if (angle >= kHingeTarget - 1.0) return finished();
    const Pose& pose = pose_it->second;
    const Vec3 anchor = pose.apply(c->anchor);
    const Vec3 axis = (pose.orientation * c->axis).normalized();
    const double lead = std::min(kHingeTarget - angle, kHingeLead);
    const Quat r(Eigen::AngleAxisd(deg2rad(lead), axis));
    const Vec3 target = anchor + r * (o.ee.position - anchor);
    if (auto a = servo(o, target)) return emit(*a);
    return finished();
  }

  ScriptStep align(const Observation& o, const TaskStage& stage) {
    const std::string obj = slot(stage, "O");
    auto rec = receptacle_frame(*library_, o.poses, slot(stage, "R"));
    auto ins = insertable_frame(*library_, o.poses, obj);
    if (!rec || !ins) return finished();
    const Vec3 goal = rec->entry + rec->normal * kAlignHeight;
    const Vec3 correction = rotvec_of(Quat::FromTwoVectors(ins->axis, rec->normal));
    const double eps_ang = q_param(stage, "aligned", 1, 5.0);
    const bool upright = correction.norm() < eps_ang / 2.0;
    if (auto a = servo(o, o.ee.position + (goal - ins->tip), upright ? Vec3::Zero() : correction, upright))
      return emit(*a);
    return finished();
  }

  ScriptStep insert(const Observation& o, const TaskStage& stage) {
    auto rec = receptacle_frame(*library_, o.poses, slot(stage, "R"));
    auto ins = insertable_frame(*library_, o.poses, slot(stage, "O"));
    if (!rec || !ins) return finished();
    const double depth = q_param(stage, "inserted", 0, 0.02) + 0.005;
    const Vec3 goal = rec->entry - rec->normal * depth;
    if (auto a = servo(o, o.ee.position + (goal - ins->tip))) return emit(*a);
    return finished();
  }

  ScriptStep move_to(const Observation& o, const TaskStage& stage) {
    const std::string obj = slot(stage, "O");
    const std::string dest = slot(stage, "D");
    const AssetRecord* asset = library_->find(obj);
    auto pose_it = o.poses.find(obj);
    if (!asset || pose_it == o.poses.end()) return finished();
    const AssetRecord* dest_asset = library_->find(dest);
    auto dest_it = o.poses.find(dest);

    if (dest_asset && dest_it != o.poses.end() && !dest_asset->parts.empty()) {
      const PartAnnotation* region = dest_asset->find_part("interior");
      if (!region) region = &dest_asset->parts.front();
      const Vec3 drop = dest_it->second.apply(region->region.center);
      auto [lo, hi] = asset->bounds();
      const Vec3 center = pose_it->second.apply((lo + hi) / 2.0);
      switch (mem_.phase) {
        case 0:
          if (auto a = servo(o, o.ee.position + (drop + Vec3::UnitZ() * 0.08 - center))) return emit(*a);
          next_phase();
          [[fallthrough]];
        case 1:
          if (auto a = servo(o, o.ee.position + (drop - center))) return emit(*a);
          next_phase();
          [[fallthrough]];
        default:
          held_.reset();
          return emit(Action::from_vectors(Vec3::Zero(), Vec3::Zero(), Grip::Open), true);
      }
    }

    if (mem_.phase == 0) {
      auto dir = scene_->direction_vector(belief(o), obj, dest);
      if (!dir) return finished();
      mem_.target = o.ee.position + *dir * (q_param(stage, "moved-to", 0, 0.1) + 0.05);
      next_phase();
    }
    if (mem_.phase == 1) {
      if (auto a = servo(o, mem_.target)) return emit(*a);
      next_phase();
    }
    held_.reset();
    return emit(Action::from_vectors(Vec3::Zero(), Vec3::Zero(), Grip::Open), true);
  }

  SyntheticParams params_;
  TaskSpec task_;
  const AssetLibrary* library_ = nullptr;
  std::unique_ptr<Scene> scene_;
  Rng noise_;
  int stage_ = 0;
  bool finished_ = false;
  bool arrested_ = false;
  StageMemory mem_;
  std::optional<std::string> held_;
};

class ReplayPolicy final : public Policy {
 public:
  ReplayPolicy(std::vector<Action> actions, std::string id) : actions_(std::move(actions)), id_(std::move(id)) {}

  std::string id() const override { return id_; }
  int chunk() const override { return 1; }
  void reset(const TaskSpec&, const AssetLibrary&, std::uint64_t) override { next_ = 0; }
  std::vector<Action> act(const Observation&, const WorldState&) override {
    if (next_ < actions_.size()) return {actions_[next_++]};
    return {Action{}};
  }

 private:
  std::vector<Action> actions_;
  std::string id_;
  std::size_t next_ = 0;
};

double parse_number(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "policy parameter " + key + " is not a number: '" + text + "'");
  }
}

}  // namespace

const char* policy_family_name(PolicyFamily f) {
  switch (f) {
    case PolicyFamily::DeterministicBiased: return "deterministic_biased";
    case PolicyFamily::StochasticDrift: return "stochastic_drift";
    case PolicyFamily::ArrestAfterStage: return "arrest_after_stage";
    case PolicyFamily::Oracle: return "oracle";
    case PolicyFamily::WrongPart: return "wrong_part";
  }
  return "?";
}

PolicyFamily policy_family_from_name(std::string_view name) {
  for (auto f : {PolicyFamily::DeterministicBiased, PolicyFamily::StochasticDrift, PolicyFamily::ArrestAfterStage,
                 PolicyFamily::Oracle, PolicyFamily::WrongPart})
    if (name == policy_family_name(f)) return f;
  fail(ErrorCode::InvalidArgument, "unknown policy family '" + std::string(name) + "'");
}

void check_params(const SyntheticParams& p) {
  if (!(p.kappa > 0.0 && p.kappa <= 1.0)) fail(ErrorCode::InvalidArgument, "kappa must lie in (0, 1]");
  if (!(p.sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "sigma must be non-negative");
  if (p.chunk < 1) fail(ErrorCode::InvalidArgument, "chunk size must be at least 1");
  if (p.arrest_stage < 0) fail(ErrorCode::InvalidArgument, "arrest_stage must be non-negative");
}

std::unique_ptr<Policy> make_builtin_policy(const SyntheticParams& params) {
  return std::make_unique<ScriptPolicy>(params);
}

std::unique_ptr<Policy> make_replay_policy(std::vector<Action> actions, std::string id) {
  return std::make_unique<ReplayPolicy>(std::move(actions), std::move(id));
}

SyntheticParams parse_builtin_spec(std::string_view spec) {
  std::string s(spec);
  if (s.rfind("builtin:", 0) == 0) s = s.substr(8);
  const auto q = s.find('?');
  SyntheticParams p;
  p.family = policy_family_from_name(s.substr(0, q));
  if (q != std::string::npos) {
    std::stringstream ss(s.substr(q + 1));
    std::string item;
    while (std::getline(ss, item, '&')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "policy parameter '" + item + "' lacks a value");
      const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
      if (key == "kappa") {
        p.kappa = parse_number(key, value);
      } else if (key == "sigma") {
        p.sigma = parse_number(key, value);
      } else if (key == "arrest_stage" || key == "stage") {
        p.arrest_stage = static_cast<int>(parse_number(key, value));
      } else if (key == "chunk") {
        p.chunk = static_cast<int>(parse_number(key, value));
      } else if (key == "bias") {
        std::stringstream bs(value);
        std::string c;
        std::vector<double> comps;
        while (std::getline(bs, c, ',')) comps.push_back(parse_number(key, c));
        if (comps.size() != 3) fail(ErrorCode::InvalidArgument, "bias needs three comma-separated components");
        p.bias = Vec3(comps[0], comps[1], comps[2]);
      } else {
        fail(ErrorCode::InvalidArgument, "unknown policy parameter '" + key + "'");
      }
    }
  }
  check_params(p);
  return p;
}

std::string policy_spec_id(std::string_view spec) {
  if (spec.rfind("external:", 0) == 0) return std::string(spec);
  return builtin_policy_id(parse_builtin_spec(spec));
}

std::unique_ptr<Policy> make_policy(std::string_view spec) {
  if (spec.rfind("builtin:", 0) == 0) return make_builtin_policy(parse_builtin_spec(spec));
  if (spec.rfind("external:", 0) == 0) {
    std::stringstream ss{std::string(spec.substr(9))};
    std::vector<std::string> argv;
    std::string word;
    while (ss >> word) argv.push_back(word);
    if (argv.empty()) fail(ErrorCode::InvalidArgument, "external policy needs a command line");
    return spawn_external(argv);
  }
  fail(ErrorCode::InvalidArgument, "policy spec must start with builtin: or external:, got '" + std::string(spec) + "'");
}

}  // namespace metafine
