#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metafine/diagnostics.hpp"
#include "metafine/sim.hpp"
#include "metafine/task.hpp"

namespace metafine {

constexpr const char* kEngineVersion = "metafine-1.0.0";
constexpr const char* kManifestSchemaVersion = "metafine.manifest/1";

struct SweepSpec {
  PerturbationKind kind = PerturbationKind::Geometric;
  std::vector<int> levels;
};

/// One JSON document. Relative paths resolve against the config file's directory.
///   {tasks: [id | path], policies: [spec], perturbations: [{kind, levels}],
///    interventions: [kind], nominal?, trials, seed, budget, output, workers?, assets?, task_dir?}
struct CampaignConfig {
  std::vector<std::string> tasks;
  std::vector<std::string> policies;
  std::vector<SweepSpec> perturbations;
  std::vector<std::string> interventions;
  bool nominal = true;
  int trials = 20;
  std::uint64_t seed = 0;
  int budget = kDefaultStepBudget;
  std::filesystem::path output;
  int workers = 1;
  std::filesystem::path assets;
  std::filesystem::path task_dir;
};

/// Throws ConfigInvalid naming the offending field.
CampaignConfig parse_campaign_config(const json& doc, const std::filesystem::path& base_dir = {});
CampaignConfig load_campaign_config(const std::filesystem::path& path);
json to_json_config(const CampaignConfig& config);

/// Resolves a task reference: an id under `task_dir`, or a path to a compose
/// request or full TaskSpec. Throws ConfigInvalid.
TaskSpec resolve_task(const std::string& ref, const CampaignConfig& config, const SkillRegistry& registry,
                      const AssetLibrary& library);

struct CellOutcome {
  std::string task;
  std::string policy;
  std::string condition;
  std::string status;  // complete | error | skipped
  int traces = 0;
  std::string error;
};

struct CampaignSummary {
  std::filesystem::path directory;
  std::vector<CellOutcome> cells;
  int errors() const;
};

/// Executes every task x policy x condition cell. The output directory must be
/// empty unless `resume`, in which case complete cells are skipped and partial
/// ones rerun from scratch. METAFINE_WORKERS overrides the worker count.
/// Throws ConfigInvalid before any trial runs; trial errors stay in their cell.
CampaignSummary run_campaign(const CampaignConfig& config, bool resume = false);

struct EmittedReport {
  std::vector<std::filesystem::path> files;
  int error_cells = 0;
};

/// Writes report.json, curve CSVs and behavior.csv under `out_dir` (default
/// <campaign>/report). Throws ConfigInvalid without a manifest and
/// EmptyTraceSet when no traces exist.
EmittedReport emit_report(const std::filesystem::path& campaign, const std::filesystem::path& out_dir = {});

}  // namespace metafine
