#include "metafine/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "metafine/error.hpp"

namespace metafine {

namespace fs = std::filesystem;

// --- success rates ------------------------------------------------------------

bool trace_succeeds(const RolloutTrace& trace, const Criterion& criterion) {
  switch (criterion.kind) {
    case CriterionKind::Fine:
      return trace.completed();
    case CriterionKind::Coarse: {
      if (trace.verdicts.empty()) return false;
      bool any = false;
      for (const auto& v : trace.verdicts) {
        if (v.status == StageStatus::Skipped) continue;
        if (!v.coarse_pass) return false;
        any = true;
      }
      return any;
    }
    case CriterionKind::Stage:
      if (criterion.stage < 0 || criterion.stage >= static_cast<int>(trace.verdicts.size()))
        fail(ErrorCode::InvalidArgument, "stage " + std::to_string(criterion.stage) + " is outside the task");
      return trace.verdicts[static_cast<std::size_t>(criterion.stage)].status == StageStatus::Passed;
    case CriterionKind::Modified:
      if (!trace.alt_terminal)
        fail(ErrorCode::MismatchedTraceSets, "trace for config " + std::to_string(trace.config_id) +
                                                 " carries no modified-instruction scoring");
      return *trace.alt_terminal == Terminal::Completed;
  }
  return false;
}

double success_rate(const std::vector<RolloutTrace>& traces, const Criterion& criterion) {
  if (traces.empty()) fail(ErrorCode::EmptyTraceSet, "success rate of an empty trace set");
  int hits = 0;
  for (const auto& t : traces) hits += trace_succeeds(t, criterion);
  return 100.0 * hits / static_cast<double>(traces.size());
}

GranularityGap granularity_gap(const std::vector<RolloutTrace>& traces) {
  GranularityGap g;
  g.coarse = success_rate(traces, Criterion::coarse());
  g.fine = success_rate(traces, Criterion::fine());
  g.delta = g.coarse - g.fine;
  g.trials = static_cast<int>(traces.size());
  return g;
}

// --- robustness curves ----------------------------------------------------------

double ausc(const RobustnessCurve& curve) {
  const std::size_t k = curve.levels.size();
  if (curve.sr.size() != k) fail(ErrorCode::InvalidArgument, "curve has mismatched level and SR counts");
  if (k < 2) fail(ErrorCode::SingleLevel, "AUSC needs at least two levels including the nominal one");
  if (curve.levels.front() != 0.0) fail(ErrorCode::InvalidArgument, "the first curve level must be 0");
  for (std::size_t i = 1; i < k; ++i)
    if (curve.levels[i] < curve.levels[i - 1]) fail(ErrorCode::InvalidArgument, "curve levels must not decrease");
  for (double s : curve.sr)
    if (!(s >= 0.0 && s <= 100.0)) fail(ErrorCode::InvalidArgument, "success rates must lie in [0, 100]");
  const double l_max = curve.levels.back();
  if (l_max <= 0.0) fail(ErrorCode::SingleLevel, "all curve levels are 0");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i)
    area += (curve.sr[i] + curve.sr[i + 1]) * (curve.levels[i + 1] - curve.levels[i]);
  return area / (2.0 * l_max);
}

double ausc(const std::vector<double>& sr_by_level) {
  RobustnessCurve c;
  c.sr = sr_by_level;
  for (std::size_t i = 0; i < sr_by_level.size(); ++i) c.levels.push_back(static_cast<double>(i));
  return ausc(c);
}

// --- behavior ---------------------------------------------------------------------

std::vector<ActionVector> action_vectors(const RolloutTrace& trace) {
  std::vector<ActionVector> out;
  out.reserve(trace.steps.size());
  for (const auto& s : trace.steps) out.push_back(s.action.delta);
  return out;
}

double action_norm(const ActionVector& a) {
  double sq = 0.0;
  for (double v : a) sq += v * v;
  return std::sqrt(sq);
}

double stability(const std::vector<ActionVector>& actions) {
  if (actions.size() < 2) return 1.0;
  double total = 0.0;
  for (std::size_t t = 1; t < actions.size(); ++t) {
    ActionVector d;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = actions[t][i] - actions[t - 1][i];
    total += action_norm(d);
  }
  return std::exp(-total / static_cast<double>(actions.size() - 1));
}

std::optional<double> directional_consistency(const std::vector<ActionVector>& actions) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t t = 1; t < actions.size(); ++t) {
    const double na = action_norm(actions[t - 1]);
    const double nb = action_norm(actions[t]);
    if (na < kDirectionEpsilon || nb < kDirectionEpsilon) continue;
    double dot = 0.0;
    for (std::size_t i = 0; i < 6; ++i) dot += actions[t - 1][i] * actions[t][i];
    total += std::clamp(dot / (na * nb), -1.0, 1.0);
    ++pairs;
  }
  if (pairs == 0) return std::nullopt;
  return total / pairs;
}

std::optional<int> collapse_step(const RolloutTrace& trace) {
  if (trace.completed()) return std::nullopt;
  int run = 0;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    run = action_norm(trace.steps[t].action.delta) < kCollapseNorm ? run + 1 : 0;
    if (run >= kCollapseRun) return static_cast<int>(t) - kCollapseRun + 1;
  }
  return std::nullopt;
}

BehaviorProfile behavior_profile(const std::vector<RolloutTrace>& traces) {
  if (traces.empty()) fail(ErrorCode::EmptyTraceSet, "behavior profile of an empty trace set");
  BehaviorProfile p;
  p.trials = static_cast<int>(traces.size());
  const int stages = traces.front().stage_count;
  for (const auto& t : traces)
    if (t.stage_count != stages || static_cast<int>(t.verdicts.size()) != stages)
      fail(ErrorCode::MismatchedTraceSets, "traces disagree on the number of task stages");
  for (int k = 0; k < stages; ++k) p.stage_sr.push_back(success_rate(traces, Criterion::at_stage(k)));

  double stab = 0.0, dc = 0.0;
  int dc_count = 0;
  std::vector<double> norm_sum;
  std::vector<int> norm_n;
  std::vector<int> collapses;
  for (const auto& t : traces) {
    const auto actions = action_vectors(t);
    stab += stability(actions);
    if (auto c = directional_consistency(actions)) {
      dc += *c;
      ++dc_count;
    }
    if (norm_sum.size() < actions.size()) {
      norm_sum.resize(actions.size(), 0.0);
      norm_n.resize(actions.size(), 0);
    }
    for (std::size_t i = 0; i < actions.size(); ++i) {
      norm_sum[i] += action_norm(actions[i]);
      norm_n[i] += 1;
    }
    if (auto c = collapse_step(t)) collapses.push_back(*c);
  }
  p.stability = stab / static_cast<double>(traces.size());
  if (dc_count > 0) p.directional_consistency = dc / dc_count;
  for (std::size_t i = 0; i < norm_sum.size(); ++i) p.mean_action_norm.push_back(norm_sum[i] / norm_n[i]);
  p.collapsed_traces = static_cast<int>(collapses.size());
  if (!collapses.empty()) {
    std::sort(collapses.begin(), collapses.end());
    const std::size_t m = collapses.size() / 2;
    p.median_collapse_step =
        collapses.size() % 2 ? collapses[m] : 0.5 * (collapses[m - 1] + collapses[m]);
  }
  return p;
}

// --- interventions -----------------------------------------------------------------

InterventionReport intervention_report(double sr_orig, double sr_pert, double sr_mod, std::string kind) {
  for (double s : {sr_orig, sr_pert, sr_mod})
    if (!(s >= 0.0 && s <= 100.0)) fail(ErrorCode::InvalidArgument, "success rates must lie in [0, 100]");
  InterventionReport r;
  r.kind = std::move(kind);
  r.sr_orig = sr_orig;
  r.sr_pert = sr_pert;
  r.sr_mod = sr_mod;
  r.delta_drop = sr_orig - sr_pert;
  r.relative_drop = sr_orig > 0.0 ? 100.0 * r.delta_drop / sr_orig : 0.0;
  return r;
}

InterventionReport intervention_report(const std::vector<RolloutTrace>& original,
                                       const std::vector<RolloutTrace>& perturbed, std::string kind) {
  if (original.empty() || perturbed.empty()) fail(ErrorCode::EmptyTraceSet, "intervention report needs both trace sets");
  const std::string& task = original.front().task_id;
  for (const auto* set : {&original, &perturbed})
    for (const auto& t : *set)
      if (t.task_id != task)
        fail(ErrorCode::MismatchedTraceSets, "traces mix tasks '" + task + "' and '" + t.task_id + "'");
  InterventionReport r = intervention_report(success_rate(original, Criterion::fine()),
                                             success_rate(perturbed, Criterion::fine()),
                                             success_rate(perturbed, Criterion::modified()), std::move(kind));
  r.trials_orig = static_cast<int>(original.size());
  r.trials_pert = static_cast<int>(perturbed.size());
  return r;
}

void to_json(json& j, const RobustnessCurve& c) {
  j = json{{"kind", c.kind}, {"levels", c.levels}, {"sr", c.sr}, {"trials", c.trials}};
  j["ausc"] = c.levels.size() >= 2 ? json(ausc(c)) : json(nullptr);
}

void to_json(json& j, const GranularityGap& g) {
  j = json{{"coarse", g.coarse}, {"fine", g.fine}, {"delta", g.delta}, {"trials", g.trials}};
}

void to_json(json& j, const BehaviorProfile& b) {
  j = json{{"stage_sr", b.stage_sr},
           {"stability", b.stability},
           {"directional_consistency", b.directional_consistency ? json(*b.directional_consistency) : json(nullptr)},
           {"mean_action_norm", b.mean_action_norm},
           {"collapsed_traces", b.collapsed_traces},
           {"median_collapse_step", b.median_collapse_step ? json(*b.median_collapse_step) : json(nullptr)},
           {"trials", b.trials}};
}

void to_json(json& j, const InterventionReport& r) {
  j = json{{"kind", r.kind},
           {"sr_orig", r.sr_orig},
           {"sr_pert", r.sr_pert},
           {"sr_mod", r.sr_mod},
           {"delta_drop", r.delta_drop},
           {"relative_drop", r.relative_drop},
           {"trials_orig", r.trials_orig},
           {"trials_pert", r.trials_pert}};
}

// --- campaign reports ------------------------------------------------------------

namespace {

using TraceKey = std::tuple<std::string, std::string, std::string, int, std::uint64_t>;

TraceKey key_of(const RolloutTrace& t) { return {t.task_id, t.policy_id, t.condition, t.config_id, t.seed}; }

bool trace_less(const RolloutTrace& a, const RolloutTrace& b) { return key_of(a) < key_of(b); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char ch : v) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

constexpr const char* kInterventionPrefix = "intervention:";

}  // namespace

std::vector<RolloutTrace> load_campaign_traces(const fs::path& dir, std::vector<std::string>* warnings) {
  const fs::path trace_dir = dir / "traces";
  if (!fs::is_directory(dir)) fail(ErrorCode::IoFailure, "campaign directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  if (fs::is_directory(trace_dir))
    for (const auto& e : fs::directory_iterator(trace_dir))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<RolloutTrace> out;
  std::set<TraceKey> seen;
  std::string schema;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) fail(ErrorCode::IoFailure, "cannot read '" + f.string() + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      RolloutTrace t;
      try {
        const json j = json::parse(line);
        const std::string version = j.at("schema_version").get<std::string>();
        if (schema.empty()) schema = version;
        if (version != schema || version != kTraceSchemaVersion)
          fail(ErrorCode::SchemaVersionMismatch, f.string() + ":" + std::to_string(line_no) + ": schema version '" +
                                                     version + "' differs from '" + kTraceSchemaVersion + "'");
        t = j.get<RolloutTrace>();
      } catch (const json::exception& e) {
        fail(ErrorCode::CorruptTrace, f.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!seen.insert(key_of(t)).second) {
        if (warnings)
          warnings->push_back("duplicate trace dropped: " + t.task_id + " / " + t.policy_id + " / " + t.condition +
                              " / config " + std::to_string(t.config_id) + " (" + f.filename().string() + ":" +
                              std::to_string(line_no) + ")");
        continue;
      }
      out.push_back(std::move(t));
    }
  }
  std::sort(out.begin(), out.end(), trace_less);
  return out;
}

DiagnosticReport assemble_report(const fs::path& dir) {
  DiagnosticReport report;
  std::vector<std::string> warnings;
  const auto traces = load_campaign_traces(dir, &warnings);

  // (policy, task) -> condition -> traces
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<RolloutTrace>>> cells;
  for (const auto& t : traces) cells[{t.policy_id, t.task_id}][t.condition].push_back(t);

  std::map<std::pair<std::string, std::string>, std::vector<json>> errors;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    json manifest;
    try {
      std::ifstream in(manifest_path);
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::CorruptTrace, manifest_path.string() + ": " + e.what());
    }
    for (const auto& c : manifest.value("cells", json::array())) {
      const std::pair<std::string, std::string> key{c.at("policy").get<std::string>(), c.at("task").get<std::string>()};
      cells[key];
      if (c.value("status", "") == "error")
        errors[key].push_back({{"condition", c.value("condition", "")}, {"error", c.value("error", "")}});
    }
  }
  if (traces.empty()) fail(ErrorCode::EmptyTraceSet, "no traces in '" + (dir / "traces").string() + "'");

  json out_cells = json::array();
  for (const auto& [key, by_condition] : cells) {
    const auto& [policy, task] = key;
    json cell = {{"policy", policy}, {"task", task}};
    auto nominal_it = by_condition.find("nominal");
    const std::vector<RolloutTrace>* nominal = nominal_it == by_condition.end() ? nullptr : &nominal_it->second;

    if (nominal) {
      cell["nominal"] = {{"sr", success_rate(*nominal, Criterion::fine())}, {"trials", nominal->size()}};
      cell["granularity"] = granularity_gap(*nominal);
      cell["behavior"] = behavior_profile(*nominal);
      for (const auto& t : *nominal) {
        const auto actions = action_vectors(t);
        const auto dc = directional_consistency(actions);
        const auto cs = collapse_step(t);
        std::ostringstream row;
        row << csv_field(policy) << ',' << csv_field(task) << ',' << csv_field(t.condition) << ',' << t.config_id << ',' << t.seed << ','
            << t.steps.size() << ',' << terminal_name(t.terminal) << ',' << fmt(stability(actions)) << ','
            << (dc ? fmt(*dc) : "") << ',' << (cs ? std::to_string(*cs) : "");
        report.behavior_csv_rows.push_back(row.str());
      }
    } else {
      cell["nominal"] = "not_evaluated";
      cell["granularity"] = "not_evaluated";
      cell["behavior"] = "not_evaluated";
    }

    // Perception: one curve per perturbation kind present, anchored at the nominal SR.
    std::map<std::string, std::map<int, const std::vector<RolloutTrace>*>> by_kind;
    for (const auto& [condition, ts] : by_condition) {
      const auto& p = ts.front().perturbation;
      if (condition.rfind(kInterventionPrefix, 0) == 0 || p.kind == PerturbationKind::None || p.level == 0) continue;
      by_kind[perturbation_kind_name(p.kind)][p.level] = &ts;
    }
    json curves = json::array();
    for (const auto& [kind, levels] : by_kind) {
      RobustnessCurve c;
      c.kind = kind;
      if (nominal) {
        c.levels.push_back(0.0);
        c.sr.push_back(success_rate(*nominal, Criterion::fine()));
        c.trials.push_back(static_cast<int>(nominal->size()));
      }
      for (const auto& [level, ts] : levels) {
        c.levels.push_back(level);
        c.sr.push_back(success_rate(*ts, Criterion::fine()));
        c.trials.push_back(static_cast<int>(ts->size()));
      }
      curves.push_back(c);
      report.curves.push_back(c);
      report.curve_cells.push_back(key);
    }
    cell["perception"] = curves.empty() ? json("not_evaluated") : json{{"curves", curves}};

    json interventions = json::array();
    for (const auto& [condition, ts] : by_condition) {
      if (condition.rfind(kInterventionPrefix, 0) != 0) continue;
      const std::string kind = condition.substr(std::string(kInterventionPrefix).size());
      if (!nominal) {
        interventions.push_back({{"kind", kind}, {"status", "not_evaluated"}, {"reason", "no nominal traces"}});
        continue;
      }
      interventions.push_back(intervention_report(*nominal, ts, kind));
    }
    cell["understanding"] = interventions.empty() ? json("not_evaluated") : json{{"interventions", interventions}};

    auto err = errors.find(key);
    cell["errors"] = err == errors.end() ? json::array() : json(err->second);
    cell["status"] = by_condition.empty() ? "not_evaluated" : (cell["errors"].empty() ? "evaluated" : "partial");
    out_cells.push_back(std::move(cell));
  }
  report.body = {{"schema_version", kReportSchemaVersion},
                 {"trace_count", traces.size()},
                 {"cells", out_cells},
                 {"warnings", warnings}};
  return report;
}

std::string slug(std::string_view id) {
  std::string out;
  for (char ch : id) {
    const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                      ch == '_' || ch == '.';
    out += keep ? ch : '_';
  }
  return out;
}

std::string curve_csv(const RobustnessCurve& curve) {
  std::string out = "level,sr,n\n";
  for (std::size_t i = 0; i < curve.levels.size(); ++i)
    out += fmt(curve.levels[i]) + "," + fmt(curve.sr[i]) + "," + std::to_string(curve.trials[i]) + "\n";
  return out;
}

std::vector<fs::path> write_report(const DiagnosticReport& report, const fs::path& out_dir) {
  std::vector<fs::path> written;
  std::error_code ec;
  fs::create_directories(out_dir / "curves", ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create '" + (out_dir / "curves").string() + "': " + ec.message());
  auto put = [&](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorCode::IoFailure, "cannot write '" + p.string() + "'");
    out << text;
    written.push_back(p);
  };
  put(out_dir / "report.json", report.body.dump(2) + "\n");
  for (std::size_t i = 0; i < report.curves.size(); ++i) {
    const auto& [policy, task] = report.curve_cells[i];
    put(out_dir / "curves" / (slug(policy) + "__" + slug(task) + "__" + report.curves[i].kind + ".csv"),
        curve_csv(report.curves[i]));
  }
  std::string behavior =
      "policy,task,condition,config_id,seed,steps,terminal,stability,directional_consistency,collapse_step\n";
  for (const auto& row : report.behavior_csv_rows) behavior += row + "\n";
  put(out_dir / "behavior.csv", behavior);
  return written;
}

}  // namespace metafine
