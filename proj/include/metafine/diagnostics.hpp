#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metafine/sim.hpp"

namespace metafine {

inline constexpr const char* kReportSchemaVersion = "1.0";
constexpr double kCollapseNorm = 1e-3;
constexpr int kCollapseRun = 20;
constexpr double kDirectionEpsilon = 1e-9;

// --- success rates ------------------------------------------------------------

enum class CriterionKind { Fine, Coarse, Stage, Modified };

struct Criterion {
  CriterionKind kind = CriterionKind::Fine;
  int stage = -1;  // CriterionKind::Stage only

  static Criterion fine() { return {CriterionKind::Fine, -1}; }
  static Criterion coarse() { return {CriterionKind::Coarse, -1}; }
  static Criterion at_stage(int k) { return {CriterionKind::Stage, k}; }
  static Criterion modified() { return {CriterionKind::Modified, -1}; }
};

/// Whether one trace satisfies the criterion. Coarse requires a coarse pass on
/// every stage that was not skipped by a branch.
bool trace_succeeds(const RolloutTrace& trace, const Criterion& criterion);

/// Percent of traces satisfying the criterion. Throws EmptyTraceSet, and
/// MismatchedTraceSets when `modified` is asked of traces without a second scoring.
double success_rate(const std::vector<RolloutTrace>& traces, const Criterion& criterion);

struct GranularityGap {
  double coarse = 0.0;
  double fine = 0.0;
  double delta = 0.0;  // coarse - fine, as measured
  int trials = 0;
};

GranularityGap granularity_gap(const std::vector<RolloutTrace>& traces);

// --- robustness curves ----------------------------------------------------------

struct RobustnessCurve {
  std::string kind;
  std::vector<double> levels;  // levels[0] == 0 is the nominal condition
  std::vector<double> sr;      // percent
  std::vector<int> trials;
};

/// Trapezoid area under SR(level), normalized by the largest level. Throws
/// SingleLevel for fewer than two levels and InvalidArgument for malformed curves.
double ausc(const RobustnessCurve& curve);
/// Convenience for integer levels 0..K-1.
double ausc(const std::vector<double>& sr_by_level);

// --- behavior ---------------------------------------------------------------------

using ActionVector = std::array<double, 6>;

std::vector<ActionVector> action_vectors(const RolloutTrace& trace);
double action_norm(const ActionVector& a);

/// exp(-mean ||a_t - a_{t-1}||) over consecutive pairs; 1.0 for fewer than two actions.
double stability(const std::vector<ActionVector>& actions);
/// Mean cosine between consecutive actions, skipping pairs with a near-zero action.
std::optional<double> directional_consistency(const std::vector<ActionVector>& actions);
/// First step of a run of at least kCollapseRun actions with norm below
/// kCollapseNorm, for traces that did not complete.
std::optional<int> collapse_step(const RolloutTrace& trace);

struct BehaviorProfile {
  std::vector<double> stage_sr;
  double stability = 1.0;  // mean over traces
  std::optional<double> directional_consistency;
  std::vector<double> mean_action_norm;  // per step, over traces that reached it
  int collapsed_traces = 0;
  std::optional<double> median_collapse_step;
  int trials = 0;
};

/// Throws EmptyTraceSet, MismatchedTraceSets when traces disagree on stage count.
BehaviorProfile behavior_profile(const std::vector<RolloutTrace>& traces);

// --- interventions -----------------------------------------------------------------

struct InterventionReport {
  std::string kind;
  double sr_orig = 0.0;
  double sr_pert = 0.0;
  double sr_mod = 0.0;
  double delta_drop = 0.0;     // percentage points
  double relative_drop = 0.0;  // percent of sr_orig
  int trials_orig = 0;
  int trials_pert = 0;
};

InterventionReport intervention_report(double sr_orig, double sr_pert, double sr_mod, std::string kind = {});
/// `perturbed` traces carry the modified-acceptance scoring as their second
/// verdict set. Throws EmptyTraceSet or MismatchedTraceSets.
InterventionReport intervention_report(const std::vector<RolloutTrace>& original,
                                       const std::vector<RolloutTrace>& perturbed, std::string kind = {});

void to_json(json& j, const RobustnessCurve& c);
void to_json(json& j, const GranularityGap& g);
void to_json(json& j, const BehaviorProfile& b);
void to_json(json& j, const InterventionReport& r);

// --- campaign reports ------------------------------------------------------------

/// Reads every traces/*.jsonl file below the campaign directory. Throws
/// CorruptTrace naming the file and line, SchemaVersionMismatch, IoFailure.
/// Traces repeating a (task, policy, condition, config, seed) key are dropped
/// with a warning.
std::vector<RolloutTrace> load_campaign_traces(const std::filesystem::path& dir, std::vector<std::string>* warnings);

struct DiagnosticReport {
  json body;
  std::vector<RobustnessCurve> curves;  // with owning cell in `curve_cells`
  std::vector<std::pair<std::string, std::string>> curve_cells;  // (policy, task)
  std::vector<std::string> behavior_csv_rows;
};

/// Aggregates a campaign directory into one report keyed by (policy, task).
DiagnosticReport assemble_report(const std::filesystem::path& dir);

/// Writes report.json, curves/<policy>__<task>__<kind>.csv and behavior.csv.
std::vector<std::filesystem::path> write_report(const DiagnosticReport& report, const std::filesystem::path& out_dir);

std::string curve_csv(const RobustnessCurve& curve);
/// File-name-safe form of an identifier.
std::string slug(std::string_view id);

}  // namespace metafine
