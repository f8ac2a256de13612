#pragma once

#include <fstream>
#include <string>

#include "metafine/asset.hpp"
#include "metafine/policy.hpp"
#include "metafine/skill.hpp"
#include "metafine/task.hpp"

namespace fixtures {

inline const metafine::AssetLibrary& library() {
  static const metafine::AssetLibrary lib = metafine::load_library(std::string(METAFINE_DATA_DIR) + "/assets");
  return lib;
}

inline const metafine::SkillRegistry& registry() {
  static const metafine::SkillRegistry reg = metafine::SkillRegistry::with_builtins();
  return reg;
}

inline metafine::json read_json(const std::string& path) {
  std::ifstream in(path);
  return metafine::json::parse(in);
}

inline metafine::json task_request(const std::string& name) {
  return read_json(std::string(METAFINE_DATA_DIR) + "/tasks/" + name + ".json");
}

inline metafine::TaskSpec task(const std::string& name) {
  return metafine::instantiate_task(task_request(name), registry(), library());
}

inline metafine::RolloutTrace run(const metafine::TaskSpec& t, const std::string& policy_spec,
                                  const metafine::Configuration& config, std::uint64_t seed,
                                  metafine::PerturbationSetting perturbation = {}, int budget = 400) {
  auto policy = metafine::make_policy(policy_spec);
  metafine::TrialSpec spec;
  spec.task = &t;
  spec.configuration = config;
  spec.perturbation = perturbation;
  spec.seed = seed;
  spec.budget = budget;
  return metafine::run_trial(spec, library(), *policy);
}

}  // namespace fixtures
