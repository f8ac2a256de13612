#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metafine/policy.hpp"
#include "metafine/ppi.hpp"

namespace metafine {

/// Where paired "real" outcomes come from.
///   file:<path.csv>                      recorded outcomes, columns config_id,Y
///   wire:<host>:<port>                   HTTP endpoint, POST /outcome
///   surrogate:kind=geometric&level=1&flip=0.2&seed=7
/// The surrogate reruns the simulator on the paired configuration under an
/// independently seeded perturbation, then turns successes into failures with
/// probability `flip`.
struct RealSource {
  enum class Kind { File, Wire, Surrogate };
  Kind kind = Kind::Surrogate;
  std::filesystem::path file;
  std::string host;
  int port = 0;
  PerturbationKind perturbation = PerturbationKind::None;
  int level = 0;
  double flip = 0.0;
  std::uint64_t seed = 0;
  int timeout_ms = 5000;
};

RealSource parse_real_source(std::string_view spec);

struct HybridOptions {
  int n = 20;
  int N = 1000;
  int replications = 1;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  int budget = kDefaultStepBudget;
};

struct ReplicationRow {
  int set = 0;
  std::vector<int> paired_ids;
  double hardware_only = 0.0;  // percent
  CalibratedEstimate ppi;
};

struct HybridResult {
  std::string task_id;
  std::string policy_id;
  CalibratedEstimate estimate;  // first paired set
  std::vector<ReplicationRow> rows;
  // Sample standard deviations across sets, in percent; absent for one set.
  std::optional<double> dispersion_hardware;
  std::optional<double> dispersion_ppi;
};

/// Samples N + R*n configurations, simulates all of them, draws R disjoint paired
/// sets uniformly at random and scores each against the shared unpaired rest.
/// Throws RealSourceUnavailable, BadSplit, and propagates trial errors.
HybridResult run_hybrid_protocol(const TaskSpec& task, const AssetLibrary& library, const std::string& policy_spec,
                                 const HybridOptions& options, const RealSource& source);

void to_json(json& j, const HybridResult& r);

}  // namespace metafine
