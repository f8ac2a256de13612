#include "metafine/hybrid.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "metafine/diagnostics.hpp"
#include "metafine/error.hpp"

#include "httplib.h"

namespace metafine {

namespace {

[[noreturn]] void unavailable(const std::string& what) { fail(ErrorCode::RealSourceUnavailable, what); }

double parse_number(const std::string& text, const std::string& field) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::InvalidArgument, "real source field '" + field + "' is not a number: " + text);
}

std::map<int, double> read_outcome_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) unavailable("cannot open recorded outcomes " + path.string());
  std::map<int, double> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) unavailable(path.string() + ":" + std::to_string(line_no) + ": expected config_id,Y");
    const std::string id = line.substr(0, comma), y = line.substr(comma + 1);
    if (line_no == 1 && id == "config_id") continue;
    try {
      const double v = parse_number(y, "Y");
      if (v < 0.0 || v > 1.0) throw Error(ErrorCode::InvalidArgument, "Y outside [0,1]");
      out[static_cast<int>(parse_number(id, "config_id"))] = v;
    } catch (const Error& e) {
      unavailable(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

class OutcomeSource {
 public:
  OutcomeSource(const RealSource& src, const TaskSpec& task, const AssetLibrary& library, const std::string& policy_spec,
                const HybridOptions& options)
      : src_(src), task_(task), library_(library), policy_spec_(policy_spec), options_(options) {
    if (src.kind == RealSource::Kind::File) recorded_ = read_outcome_csv(src.file);
  }

  double outcome(const Configuration& config) {
    switch (src_.kind) {
      case RealSource::Kind::File: {
        const auto it = recorded_.find(config.config_id);
        if (it == recorded_.end())
          unavailable("recorded outcomes have no entry for config " + std::to_string(config.config_id));
        return it->second;
      }
      case RealSource::Kind::Wire:
        return query_wire(config);
      case RealSource::Kind::Surrogate:
        return surrogate(config);
    }
    unavailable("unknown real source");
  }

 private:
  double surrogate(const Configuration& config) {
    const auto id = static_cast<std::uint64_t>(config.config_id);
    const std::uint64_t base = derive_seed(src_.seed, "surrogate");
    auto policy = make_policy(policy_spec_);
    TrialSpec spec;
    spec.task = &task_;
    spec.configuration = config;
    spec.seed = derive_seed(base, id);
    spec.budget = options_.budget;
    spec.perturbation = make_perturbation(src_.perturbation, src_.level, derive_seed(base ^ 0x5EEDULL, id));
    const RolloutTrace trace = run_trial(spec, library_, *policy);
    double y = trace_succeeds(trace, Criterion::fine()) ? 1.0 : 0.0;
    Rng coin(derive_seed(base ^ 0xF11FULL, id));
    if (y > 0.5 && coin.uniform() < src_.flip) y = 0.0;
    return y;
  }

  double query_wire(const Configuration& config) {
    httplib::Client client(src_.host, src_.port);
    client.set_connection_timeout(std::chrono::milliseconds(src_.timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(src_.timeout_ms));
    const json body{{"task_id", task_.task_id}, {"policy_id", policy_spec_id(policy_spec_)},
                    {"config_id", config.config_id}, {"configuration", json(config)}};
    const auto res = client.Post("/outcome", body.dump(), "application/json");
    const std::string where = "wire:" + src_.host + ":" + std::to_string(src_.port);
    if (!res) unavailable(where + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) unavailable(where + " answered HTTP " + std::to_string(res->status));
    try {
      const json reply = json::parse(res->body);
      const double y = reply.at("y").get<double>();
      if (y < 0.0 || y > 1.0) unavailable(where + " returned y outside [0,1]");
      return y;
    } catch (const json::exception& e) {
      unavailable(where + " sent a malformed reply: " + e.what());
    }
  }

  const RealSource& src_;
  const TaskSpec& task_;
  const AssetLibrary& library_;
  const std::string& policy_spec_;
  const HybridOptions& options_;
  std::map<int, double> recorded_;
};

double sample_sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

RealSource parse_real_source(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos)
    fail(ErrorCode::InvalidArgument, "real source must start with file:, wire: or surrogate:");
  const std::string scheme(spec.substr(0, colon));
  const std::string rest(spec.substr(colon + 1));
  RealSource src;
  if (scheme == "file") {
    if (rest.empty()) fail(ErrorCode::InvalidArgument, "file: source needs a path");
    src.kind = RealSource::Kind::File;
    src.file = rest;
  } else if (scheme == "wire") {
    const auto c = rest.rfind(':');
    if (c == std::string::npos || c == 0) fail(ErrorCode::InvalidArgument, "wire: source needs host:port");
    src.kind = RealSource::Kind::Wire;
    src.host = rest.substr(0, c);
    src.port = static_cast<int>(parse_number(rest.substr(c + 1), "port"));
  } else if (scheme == "surrogate") {
    src.kind = RealSource::Kind::Surrogate;
    std::stringstream ss(rest);
    std::string kv;
    while (std::getline(ss, kv, '&')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "surrogate parameter without value: " + kv);
      const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      if (k == "kind") {
        src.perturbation = perturbation_kind_from_name(v);
      } else if (k == "level") {
        src.level = static_cast<int>(parse_number(v, k));
        if (src.level < 0 || src.level > 3) fail(ErrorCode::InvalidArgument, "surrogate level must lie in 0..3");
      } else if (k == "flip") {
        src.flip = parse_number(v, k);
        if (src.flip < 0.0 || src.flip > 1.0) fail(ErrorCode::InvalidArgument, "surrogate flip must lie in [0,1]");
      } else if (k == "seed") {
        src.seed = static_cast<std::uint64_t>(parse_number(v, k));
      } else {
        fail(ErrorCode::InvalidArgument, "unknown surrogate parameter '" + k + "'");
      }
    }
  } else {
    fail(ErrorCode::InvalidArgument, "unknown real source scheme '" + scheme + "'");
  }
  return src;
}

HybridResult run_hybrid_protocol(const TaskSpec& task, const AssetLibrary& library, const std::string& policy_spec,
                                 const HybridOptions& options, const RealSource& source) {
  if (options.n < 1 || options.N < 1 || options.replications < 1)
    fail(ErrorCode::BadSplit, "n, N and replications must all be positive");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  const int paired_total = options.n * options.replications;
  const int total = options.N + paired_total;

  const auto configs =
      sample_configurations(eval_distribution(task), library, total, derive_seed(options.seed, "configurations"));
  std::vector<int> ids;
  std::map<int, const Configuration*> by_id;
  for (const auto& c : configs) {
    ids.push_back(c.config_id);
    by_id[c.config_id] = &c;
  }

  std::map<int, double> predicted;
  const std::uint64_t trial_base = derive_seed(options.seed, "trials");
  for (const auto& c : configs) {
    auto policy = make_policy(policy_spec);
    TrialSpec spec;
    spec.task = &task;
    spec.configuration = c;
    spec.seed = derive_seed(trial_base, static_cast<std::uint64_t>(c.config_id));
    spec.budget = options.budget;
    try {
      predicted[c.config_id] = trace_succeeds(run_trial(spec, library, *policy), Criterion::fine()) ? 1.0 : 0.0;
    } catch (const Error& e) {
      fail(e.code(), "simulated trial for config " + std::to_string(c.config_id) + ": " + e.what());
    }
  }

  const auto [paired_ids, unpaired_ids] = split_paired(ids, paired_total, derive_seed(options.seed, "split"));
  UnpairedSet unpaired;
  for (int id : unpaired_ids) {
    unpaired.ids.push_back(id);
    unpaired.f.push_back(predicted.at(id));
  }

  OutcomeSource real(source, task, library, policy_spec, options);
  HybridResult result;
  result.task_id = task.task_id;
  result.policy_id = policy_spec_id(policy_spec);
  std::vector<double> hw, pp;
  for (int r = 0; r < options.replications; ++r) {
    ReplicationRow row;
    row.set = r;
    PairedSet paired;
    for (int i = 0; i < options.n; ++i) {
      const int id = paired_ids[static_cast<std::size_t>(r * options.n + i)];
      paired.ids.push_back(id);
      paired.f.push_back(predicted.at(id));
      paired.y.push_back(real.outcome(*by_id.at(id)));
    }
    row.paired_ids = paired.ids;
    row.hardware_only = hardware_only_estimate(paired);
    row.ppi = ppi_interval(paired, unpaired, options.alpha);
    hw.push_back(row.hardware_only);
    pp.push_back(100.0 * row.ppi.estimate);
    result.rows.push_back(std::move(row));
  }
  result.estimate = result.rows.front().ppi;
  if (options.replications > 1) {
    result.dispersion_hardware = sample_sd(hw);
    result.dispersion_ppi = sample_sd(pp);
  }
  return result;
}

void to_json(json& j, const HybridResult& r) {
  j = r.estimate;
  j["task_id"] = r.task_id;
  j["policy_id"] = r.policy_id;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json e = row.ppi;
    rows.push_back({{"set", row.set},
                    {"paired_ids", row.paired_ids},
                    {"hardware_only", row.hardware_only},
                    {"ppi", 100.0 * row.ppi.estimate},
                    {"estimate", e}});
  }
  j["replications"] = rows;
  j["dispersion_hardware"] = r.dispersion_hardware ? json(*r.dispersion_hardware) : json(nullptr);
  j["dispersion_ppi"] = r.dispersion_ppi ? json(*r.dispersion_ppi) : json(nullptr);
}

}  // namespace metafine
