#include "metafine/ppi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metafine/error.hpp"

namespace metafine {

namespace {

void check_unit(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!(x >= 0.0 && x <= 1.0)) fail(ErrorCode::InvalidArgument, std::string(what) + " value outside [0,1]");
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

void check_sets(const PairedSet& paired, const UnpairedSet& unpaired) {
  if (paired.y.empty()) fail(ErrorCode::EmptySet, "paired set is empty");
  if (unpaired.f.empty()) fail(ErrorCode::EmptySet, "unpaired set is empty");
  if (paired.y.size() != paired.f.size())
    fail(ErrorCode::InvalidArgument, "paired outcomes and predictions differ in length");
  check_unit(paired.y, "paired outcome");
  check_unit(paired.f, "paired prediction");
  check_unit(unpaired.f, "unpaired prediction");
}

}  // namespace

std::optional<Interval> CalibratedEstimate::reported_interval() const {
  if (!interval) return std::nullopt;
  return Interval{std::clamp(interval->lo, 0.0, 1.0), std::clamp(interval->hi, 0.0, 1.0)};
}

std::pair<std::vector<int>, std::vector<int>> split_paired(const std::vector<int>& ids, int n, std::uint64_t seed) {
  if (n < 1 || static_cast<std::size_t>(n) >= ids.size())
    fail(ErrorCode::BadSplit, "paired size " + std::to_string(n) + " must lie in [1, " +
                                  std::to_string(ids.size() > 0 ? ids.size() - 1 : 0) + "]");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    const std::size_t j = i + rng.below(order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::vector<int> paired;
  std::vector<bool> taken(ids.size(), false);
  for (int i = 0; i < n; ++i) {
    paired.push_back(ids[order[i]]);
    taken[order[i]] = true;
  }
  std::vector<int> unpaired;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!taken[i]) unpaired.push_back(ids[i]);
  return {paired, unpaired};
}

CalibratedEstimate ppi_estimate(const PairedSet& paired, const UnpairedSet& unpaired) {
  check_sets(paired, unpaired);
  CalibratedEstimate e;
  e.n = static_cast<int>(paired.y.size());
  e.N = static_cast<int>(unpaired.f.size());
  double r = 0.0;
  for (std::size_t i = 0; i < paired.y.size(); ++i) r += paired.y[i] - paired.f[i];
  e.rectifier = r / e.n;
  e.sim_mean = mean(unpaired.f);
  e.estimate = e.rectifier + e.sim_mean;
  return e;
}

double hardware_only_estimate(const PairedSet& paired) {
  if (paired.y.empty()) fail(ErrorCode::EmptySet, "paired set is empty");
  check_unit(paired.y, "paired outcome");
  return 100.0 * std::accumulate(paired.y.begin(), paired.y.end(), 0.0) / static_cast<double>(paired.y.size());
}

Interval wsr_interval(const std::vector<double>& samples, double lo_b, double hi_b, double level) {
  if (samples.empty()) fail(ErrorCode::EmptySet, "no samples for the interval");
  if (!(lo_b < hi_b)) fail(ErrorCode::DegenerateBounds, "lower bound must be below upper bound");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidArgument, "level must lie in (0,1)");
  const double span = hi_b - lo_b;
  std::vector<double> x(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i] < lo_b || samples[i] > hi_b) fail(ErrorCode::InvalidArgument, "sample outside its bounds");
    x[i] = (samples[i] - lo_b) / span;
  }

  // Bets depend only on past data, so they are shared by every candidate mean.
  const std::size_t n = x.size();
  std::vector<double> lambda(n);
  const double log_inv = std::log(1.0 / level);
  double sum = 0.0, sq = 0.0;
  for (std::size_t t = 1; t <= n; ++t) {
    const double var = (0.25 + sq) / static_cast<double>(t);
    lambda[t - 1] = std::min(kWsrBetClip, std::sqrt(2.0 * log_inv / (var * static_cast<double>(t))));
    sum += x[t - 1];
    const double mu = (0.5 + sum) / static_cast<double>(t + 1);
    sq += (x[t - 1] - mu) * (x[t - 1] - mu);
  }

  const double threshold = 1.0 / level;
  double lo = 2.0, hi = -1.0;
  for (int j = 0; j < kWsrGrid; ++j) {
    const double m = static_cast<double>(j) / (kWsrGrid - 1);
    double up = 1.0, down = 1.0;
    bool rejected = false;
    for (std::size_t t = 0; t < n; ++t) {
      up *= 1.0 + lambda[t] * (x[t] - m);
      down *= 1.0 - lambda[t] * (x[t] - m);
      if (0.5 * (up + down) >= threshold) {
        rejected = true;
        break;
      }
    }
    if (!rejected) {
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  }
  const double xbar = mean(x);
  if (hi < lo) lo = hi = xbar;
  lo = std::min(lo, xbar);
  hi = std::max(hi, xbar);
  return {lo_b + span * lo, lo_b + span * hi};
}

CalibratedEstimate ppi_interval(const PairedSet& paired, const UnpairedSet& unpaired, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  CalibratedEstimate e = ppi_estimate(paired, unpaired);
  const double delta = kRectifierShare * alpha;
  std::vector<double> r(paired.y.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = paired.y[i] - paired.f[i];
  e.alpha = alpha;
  e.delta = delta;
  e.rectifier_interval = wsr_interval(r, -1.0, 1.0, delta);
  e.sim_interval = wsr_interval(unpaired.f, 0.0, 1.0, alpha - delta);
  e.interval = Interval{e.rectifier_interval->lo + e.sim_interval->lo, e.rectifier_interval->hi + e.sim_interval->hi};
  return e;
}

std::pair<double, double> SyntheticWorld::draw(Rng& rng) const {
  const double y = rng.uniform() < p_star ? 1.0 : 0.0;
  if (beta >= 0.0) return {y, y > 0.5 ? 1.0 : beta / (1.0 - p_star)};
  return {y, y > 0.5 ? 1.0 + beta / p_star : 0.0};
}

PairedSet SyntheticWorld::paired(int n, Rng& rng) const {
  PairedSet s;
  for (int i = 0; i < n; ++i) {
    const auto [y, f] = draw(rng);
    s.y.push_back(y);
    s.f.push_back(f);
    s.ids.push_back(i);
  }
  return s;
}

UnpairedSet SyntheticWorld::unpaired(int N, Rng& rng) const {
  UnpairedSet s;
  for (int i = 0; i < N; ++i) {
    s.f.push_back(draw(rng).second);
    s.ids.push_back(i);
  }
  return s;
}

void to_json(json& j, const Interval& i) { j = json::array({i.lo, i.hi}); }

void to_json(json& j, const CalibratedEstimate& e) {
  j = json{{"estimate", e.estimate}, {"rectifier", e.rectifier}, {"sim_mean", e.sim_mean}, {"n", e.n}, {"N", e.N}};
  if (e.interval) {
    j["alpha"] = *e.alpha;
    j["delta"] = *e.delta;
    j["sim_level"] = *e.alpha - *e.delta;
    j["interval"] = *e.reported_interval();
    j["interval_unclamped"] = *e.interval;
    j["rectifier_interval"] = *e.rectifier_interval;
    j["sim_interval"] = *e.sim_interval;
    j["wsr_grid"] = kWsrGrid;
    j["wsr_bet_clip"] = kWsrBetClip;
  }
}

}  // namespace metafine
