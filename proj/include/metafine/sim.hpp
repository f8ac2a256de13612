#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metafine/asset.hpp"
#include "metafine/geometry.hpp"
#include "metafine/rng.hpp"
#include "metafine/task.hpp"

namespace metafine {

constexpr double kMaxStepTranslation = 0.05;  // m, per component
constexpr double kMaxStepRotation = 15.0;     // deg, per component
constexpr double kGraspReach = 0.02;          // m
constexpr int kDefaultStepBudget = 400;
inline constexpr const char* kTraceSchemaVersion = "1.0";

struct Attachment {
  std::string object_id;
  std::string part_id;
  Pose offset;  // object pose expressed in the end-effector frame
};

struct WorldState {
  std::map<std::string, Pose> objects;
  std::map<std::string, double> joints;
  std::map<std::string, Vec3> rotation_accum;  // deg, world frame
  Pose ee;
  bool gripper_closed = false;
  std::optional<Attachment> attachment;
  int step = 0;
};

enum class Grip : int { Open = -1, Hold = 0, Close = 1 };

/// Translation in meters, rotation as a world-frame rotation vector in degrees.
struct Action {
  std::array<double, 6> delta{};
  Grip grip = Grip::Hold;

  Vec3 translation() const { return {delta[0], delta[1], delta[2]}; }
  Vec3 rotation() const { return {delta[3], delta[4], delta[5]}; }
  static Action from_vectors(const Vec3& t, const Vec3& r, Grip g = Grip::Hold);
  /// Per-component clip to the step limits.
  Action clipped() const;
};

struct Observation {
  int step = 0;
  std::string instruction;
  std::map<std::string, Pose> poses;
  std::map<std::string, double> joints;
  Pose ee;
  bool gripper_closed = false;
};

enum class PerturbationKind { None, Geometric, Photometric };

const char* perturbation_kind_name(PerturbationKind k);
PerturbationKind perturbation_kind_from_name(std::string_view name);

struct LevelBounds {
  double position = 0.0;   // m
  double rotation = 0.0;   // deg
  double intensity = 0.0;  // ambient offset
};

/// Severity table for levels 0..3.
LevelBounds level_bounds(int level);

struct PerturbationSetting {
  PerturbationKind kind = PerturbationKind::None;
  int level = 0;
  std::uint64_t seed = 0;
  Pose offset;             // geometric: applied to every observed object pose
  double intensity = 0.0;  // photometric

  /// Per-step observation noise standard deviations.
  double position_sigma() const;
  double rotation_sigma() const;
  std::string label() const;
};

/// Samples the frozen offset for one trial.
PerturbationSetting make_perturbation(PerturbationKind kind, int level, std::uint64_t seed);

std::string joint_key(const std::string& object_id, const ManipulationConstraint& c);

/// Entry point and outward axis of a receptacle's hole region.
struct ReceptacleFrame {
  Vec3 entry;
  Vec3 normal;
  double radius = 0.0;
};

/// Tip (bottom center) and long axis of an insertable object.
struct InsertableFrame {
  Vec3 tip;
  Vec3 axis;
  double radius = 0.0;
};

std::optional<ReceptacleFrame> receptacle_frame(const AssetLibrary& library, const std::map<std::string, Pose>& poses,
                                                const std::string& ref);
std::optional<InsertableFrame> insertable_frame(const AssetLibrary& library, const std::map<std::string, Pose>& poses,
                                                const std::string& obj);
/// Height of the pre-insertion pose above the receptacle entry.
constexpr double kAlignHeight = 0.01;

// --- acceptance ---------------------------------------------------------------

struct AtomResult {
  std::string atom;
  std::string name;
  bool holds = false;
  bool holds_coarse = false;
  std::map<std::string, double> measured;
};

enum class StageStatus { Passed, Failed, NotReached, Skipped };
const char* stage_status_name(StageStatus s);
StageStatus stage_status_from_name(std::string_view name);

struct StageVerdict {
  int stage = 0;
  std::string skill_id;
  StageStatus status = StageStatus::NotReached;
  int step = -1;
  bool coarse_pass = false;
  std::string failing;
  std::vector<AtomResult> atoms;
};

enum class Terminal { Completed, StageFailed, ConstraintViolated, StepBudgetExhausted };
const char* terminal_name(Terminal t);
Terminal terminal_from_name(std::string_view name);

class Scene;

/// Evaluates a single atom against the true world state. `stage_start` is the
/// world at the moment the stage began.
AtomResult evaluate_atom(const Scene& scene, const WorldState& world, const WorldState& stage_start, const Atom& atom);

/// Evaluates a stage's bound postconditions against the true world state.
StageVerdict evaluate_stage(const Scene& scene, const WorldState& world, const WorldState& stage_start,
                            const StageAcceptance& acceptance);

// --- scene --------------------------------------------------------------------

/// Immutable view of one task's world model.
class Scene {
 public:
  Scene(const TaskSpec& task, const AssetLibrary& library) : task_(&task), library_(&library) {}

  const TaskSpec& task() const { return *task_; }
  const AssetLibrary& library() const { return *library_; }

  /// Throws UnknownObject or CollisionAtInit.
  WorldState reset(const Configuration& config) const;
  WorldState step(const WorldState& world, const Action& action) const;
  Observation observe(const WorldState& world, const PerturbationSetting& perturbation, Rng& noise) const;

  /// World-frame direction for a named direction; sliding words use the
  /// object's sliding axis.
  std::optional<Vec3> direction_vector(const WorldState& world, const std::string& object,
                                       const std::string& word) const;
  /// Signed world axis for rotation words.
  std::optional<Vec3> rotation_axis(const WorldState& world, const std::string& object,
                                    const std::string& word) const;

 private:
  const TaskSpec* task_;
  const AssetLibrary* library_;
};

/// Tracks stage progression and verdicts for one acceptance view of a rollout.
class AcceptanceTracker {
 public:
  AcceptanceTracker(const Scene& scene, const TaskSpec& acceptance_task);

  void begin(const WorldState& world);
  /// Call after every executed step. Returns fine monitor violations.
  std::vector<std::string> update(const WorldState& world);
  /// Closes the current stage when the step budget runs out.
  void finish_budget(const WorldState& world);

  bool done() const { return terminal_.has_value(); }
  int current_stage() const { return current_; }
  const std::optional<Terminal>& terminal() const { return terminal_; }
  const std::vector<StageVerdict>& verdicts() const { return verdicts_; }

 private:
  void close_stage(const WorldState& world, StageStatus status, const StageVerdict& eval);

  const Scene* scene_;
  const TaskSpec* task_;
  int current_ = 0;
  WorldState stage_start_;
  std::vector<StageVerdict> verdicts_;
  std::optional<Terminal> terminal_;
};

// --- traces -------------------------------------------------------------------

struct StepRecord {
  Action action;
  Pose ee;
  std::string attached;
  int stage = 0;
  std::vector<std::string> violations;
};

struct RolloutTrace {
  std::string schema_version = kTraceSchemaVersion;
  std::string task_id;
  std::string policy_id;
  std::string condition = "nominal";
  int config_id = 0;
  Configuration configuration;
  PerturbationSetting perturbation;
  std::uint64_t seed = 0;
  int stage_count = 0;
  std::vector<StepRecord> steps;
  std::vector<StageVerdict> verdicts;
  Terminal terminal = Terminal::StepBudgetExhausted;
  std::optional<std::vector<StageVerdict>> alt_verdicts;
  std::optional<Terminal> alt_terminal;
  std::map<std::string, Pose> final_objects;
  std::map<std::string, double> final_joints;

  bool completed() const { return terminal == Terminal::Completed; }
};

void to_json(json& j, const RolloutTrace& t);
void from_json(const json& j, RolloutTrace& t);
void to_json(json& j, const PerturbationSetting& p);
void from_json(const json& j, PerturbationSetting& p);
void to_json(json& j, const StageVerdict& v);
void from_json(const json& j, StageVerdict& v);

}  // namespace metafine
