#include <algorithm>
#include <map>

#include "metafine/error.hpp"
#include "metafine/policy.hpp"

namespace metafine {

RolloutTrace run_trial(const TrialSpec& spec, const AssetLibrary& library, Policy& policy) {
  if (!spec.task) fail(ErrorCode::InvalidArgument, "trial without a task");
  if (spec.budget < 1) fail(ErrorCode::InvalidArgument, "step budget must be at least 1");
  const TaskSpec& task = *spec.task;
  const Scene scene(task, library);

  RolloutTrace trace;
  trace.task_id = task.task_id;
  trace.policy_id = policy.id();
  trace.condition = spec.condition;
  trace.config_id = spec.configuration.config_id;
  trace.configuration = spec.configuration;
  trace.perturbation = spec.perturbation;
  trace.seed = spec.seed;
  trace.stage_count = static_cast<int>(task.stages.size());

  WorldState world = scene.reset(spec.configuration);
  AcceptanceTracker primary(scene, task);
  primary.begin(world);
  std::optional<AcceptanceTracker> alt;
  if (spec.alt_acceptance) {
    alt.emplace(scene, *spec.alt_acceptance);
    alt->begin(world);
  }
  auto all_done = [&] { return primary.done() && (!alt || alt->done()); };

  policy.reset(task, library, derive_seed(spec.seed, "policy"));
  Rng noise(derive_seed(spec.seed, "observation"));

  while (world.step < spec.budget && !all_done()) {
    const Observation obs = scene.observe(world, spec.perturbation, noise);
    std::vector<Action> chunk = policy.act(obs, world);
    if (chunk.empty()) fail(ErrorCode::PolicyProtocolError, policy.id() + " returned no actions");
    for (const Action& raw : chunk) {
      const Action a = raw.clipped();
      const int stage = primary.current_stage();
      world = scene.step(world, a);
      StepRecord rec;
      rec.action = a;
      rec.ee = world.ee;
      rec.stage = stage;
      if (world.attachment) rec.attached = world.attachment->object_id + "/" + world.attachment->part_id;
      if (!primary.done()) rec.violations = primary.update(world);
      if (alt && !alt->done()) alt->update(world);
      trace.steps.push_back(std::move(rec));
      if (all_done() || world.step >= spec.budget) break;
    }
  }
  primary.finish_budget(world);
  if (alt) alt->finish_budget(world);

  trace.verdicts = primary.verdicts();
  trace.terminal = *primary.terminal();
  if (alt) {
    trace.alt_verdicts = alt->verdicts();
    trace.alt_terminal = *alt->terminal();
  }
  trace.final_objects = world.objects;
  trace.final_joints = world.joints;
  return trace;
}

std::vector<RolloutTrace> generate_demonstrations(const TaskSpec& task, const AssetLibrary& library, int count,
                                                  std::uint64_t seed, int budget) {
  if (count < 0) fail(ErrorCode::InvalidArgument, "demonstration count must be non-negative");
  std::vector<RolloutTrace> out;
  if (count == 0) return out;

  const int attempts = 3 * count + 10;
  const auto configs = sample_configurations(eval_distribution(task), library, attempts, seed);
  SyntheticParams params;
  params.family = PolicyFamily::Oracle;
  auto oracle = make_builtin_policy(params);
  std::map<int, int> failures;
  for (const auto& config : configs) {
    TrialSpec spec;
    spec.task = &task;
    spec.configuration = config;
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(config.config_id));
    spec.budget = budget;
    spec.condition = "demonstration";
    RolloutTrace t = run_trial(spec, library, *oracle);
    if (t.completed()) {
      out.push_back(std::move(t));
      if (static_cast<int>(out.size()) == count) return out;
      continue;
    }
    for (const auto& v : t.verdicts)
      if (v.status == StageStatus::Failed) {
        failures[v.stage] += 1;
        break;
      }
  }
  std::string histogram;
  for (const auto& [stage, n] : failures)
    histogram += (histogram.empty() ? "" : ", ") + std::string("stage ") + std::to_string(stage) + " (" +
                 task.stages[static_cast<std::size_t>(stage)].skill_id + "): " + std::to_string(n);
  fail(ErrorCode::PlannerBudgetExhausted, "only " + std::to_string(out.size()) + " of " + std::to_string(count) +
                                              " demonstrations after " + std::to_string(attempts) +
                                              " attempts; failures by stage: " + histogram);
}

RolloutTrace replay_trace(const RolloutTrace& trace, const TaskSpec& task, const AssetLibrary& library) {
  std::vector<Action> actions;
  for (const auto& s : trace.steps) actions.push_back(s.action);
  auto policy = make_replay_policy(std::move(actions), trace.policy_id);
  TrialSpec spec;
  spec.task = &task;
  spec.configuration = trace.configuration;
  spec.seed = trace.seed;
  spec.budget = std::max<int>(1, static_cast<int>(trace.steps.size()));
  spec.condition = trace.condition;
  return run_trial(spec, library, *policy);
}

}  // namespace metafine
