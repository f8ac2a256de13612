#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "metafine/asset.hpp"
#include "metafine/geometry.hpp"
#include "metafine/rng.hpp"
#include "metafine/sim.hpp"
#include "metafine/task.hpp"

namespace metafine {

inline constexpr const char* kProtocolVersion = "1.0";
constexpr int kDefaultActTimeoutMs = 2000;

class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::string id() const = 0;
  virtual int chunk() const = 0;
  /// Called once per trial before the first observation.
  virtual void reset(const TaskSpec& task, const AssetLibrary& library, std::uint64_t seed) = 0;
  /// Returns between 1 and chunk() actions. `truth` is only read by the oracle.
  virtual std::vector<Action> act(const Observation& obs, const WorldState& truth) = 0;
};

enum class PolicyFamily { DeterministicBiased, StochasticDrift, ArrestAfterStage, Oracle, WrongPart };

const char* policy_family_name(PolicyFamily f);
PolicyFamily policy_family_from_name(std::string_view name);

struct SyntheticParams {
  PolicyFamily family = PolicyFamily::DeterministicBiased;
  double kappa = 0.5;
  Vec3 bias = Vec3::Zero();
  double sigma = 0.0;     // m per step, per axis
  int arrest_stage = 0;   // zero-based
  int chunk = 1;

  bool operator==(const SyntheticParams& o) const {
    return family == o.family && kappa == o.kappa && bias == o.bias && sigma == o.sigma &&
           arrest_stage == o.arrest_stage && chunk == o.chunk;
  }
};

/// Throws InvalidArgument when kappa is outside (0, 1], sigma < 0 or chunk < 1.
void check_params(const SyntheticParams& p);

std::unique_ptr<Policy> make_builtin_policy(const SyntheticParams& params);

/// Replays a fixed action list, then emits zero actions.
std::unique_ptr<Policy> make_replay_policy(std::vector<Action> actions, std::string id = "replay");

/// Child process speaking newline-delimited JSON over stdin/stdout.
/// Throws SpawnFailure, HandshakeTimeout or VersionMismatch.
std::unique_ptr<Policy> spawn_external(const std::vector<std::string>& argv, int chunk = 1,
                                       int timeout_ms = kDefaultActTimeoutMs);

/// Parses `builtin:<family>?k=v&...` or `external:<command line>`.
std::unique_ptr<Policy> make_policy(std::string_view spec);
/// Canonical identifier for a policy spec, used to key traces and reports.
std::string policy_spec_id(std::string_view spec);
SyntheticParams parse_builtin_spec(std::string_view spec);

json observation_message(const Observation& obs);
json action_json(const Action& a);
/// Throws PolicyProtocolError.
Action action_from_json(const json& j);

// --- trials -------------------------------------------------------------------

struct TrialSpec {
  const TaskSpec* task = nullptr;               // what the policy is asked to do
  const TaskSpec* alt_acceptance = nullptr;     // optional second scoring of the same rollout
  Configuration configuration;
  PerturbationSetting perturbation;
  std::uint64_t seed = 0;
  int budget = kDefaultStepBudget;
  std::string condition = "nominal";
};

/// Throws InvalidArgument for a budget below one and PolicyProtocolError from
/// external policies.
RolloutTrace run_trial(const TrialSpec& spec, const AssetLibrary& library, Policy& policy);

/// Oracle rollouts on sampled configurations; failures are discarded and
/// resampled. Throws PlannerBudgetExhausted with a per-stage failure histogram.
std::vector<RolloutTrace> generate_demonstrations(const TaskSpec& task, const AssetLibrary& library, int count,
                                                  std::uint64_t seed, int budget = kDefaultStepBudget);

/// Replays the trace's actions in a fresh, unperturbed world.
RolloutTrace replay_trace(const RolloutTrace& trace, const TaskSpec& task, const AssetLibrary& library);

}  // namespace metafine
