#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metafine/rng.hpp"

namespace metafine {

using nlohmann::json;

inline constexpr int kWsrGrid = 1000;
inline constexpr double kWsrBetClip = 0.75;
inline constexpr double kRectifierShare = 0.9;

struct PairedSet {
  std::vector<double> y;  // real or real-proxy outcomes in [0,1]
  std::vector<double> f;  // simulated predictions for the same configurations
  std::vector<int> ids;
};

struct UnpairedSet {
  std::vector<double> f;
  std::vector<int> ids;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return lo <= x && x <= hi; }
};

struct CalibratedEstimate {
  double estimate = 0.0;  // rectifier + sim_mean
  double rectifier = 0.0;
  double sim_mean = 0.0;
  int n = 0;
  int N = 0;
  // Present once an interval was requested.
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<Interval> interval;  // Minkowski sum, before clamping
  std::optional<Interval> rectifier_interval;
  std::optional<Interval> sim_interval;

  /// Interval clamped to [0,1] for reporting.
  std::optional<Interval> reported_interval() const;
};

/// Uniform selection of n paired ids without replacement, order of selection
/// preserved. Throws BadSplit unless 1 <= n < ids.size().
std::pair<std::vector<int>, std::vector<int>> split_paired(const std::vector<int>& ids, int n, std::uint64_t seed);

CalibratedEstimate ppi_estimate(const PairedSet& paired, const UnpairedSet& unpaired);
/// Mean of the paired outcomes, in percent.
double hardware_only_estimate(const PairedSet& paired);

/// Betting confidence interval for the mean of samples bounded in [lo_b, hi_b].
Interval wsr_interval(const std::vector<double>& samples, double lo_b, double hi_b, double level);

/// Point estimate plus rectifier interval at 0.9*alpha and sim-mean interval at
/// 0.1*alpha, combined by Minkowski sum.
CalibratedEstimate ppi_interval(const PairedSet& paired, const UnpairedSet& unpaired, double alpha);

/// Synthetic calibration world: success with probability p_star, predictor equal
/// to the outcome on successes and to beta/(1-p_star) on failures, so its mean
/// exceeds p_star by exactly beta. Negative beta lowers successes instead.
struct SyntheticWorld {
  double p_star = 0.65;
  double beta = 0.0;

  /// One (Y, f) draw.
  std::pair<double, double> draw(Rng& rng) const;
  PairedSet paired(int n, Rng& rng) const;
  UnpairedSet unpaired(int N, Rng& rng) const;
};

void to_json(json& j, const Interval& i);
void to_json(json& j, const CalibratedEstimate& e);

}  // namespace metafine
