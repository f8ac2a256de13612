#include "metafine/campaign.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "metafine/error.hpp"
#include "metafine/policy.hpp"

namespace metafine {

namespace fs = std::filesystem;

#ifndef METAFINE_DEFAULT_DATA_DIR
#define METAFINE_DEFAULT_DATA_DIR "data"
#endif

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& reason) {
  fail(ErrorCode::ConfigInvalid, "config field '" + field + "': " + reason);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

struct Cell {
  std::size_t task;
  std::string policy;
  std::string condition;
  PerturbationSetting perturbation;  // seed filled per trial
  std::optional<InterventionKind> intervention;
};

std::string cell_file(const std::string& task, const std::string& policy, const std::string& condition) {
  return slug(task) + "__" + slug(policy) + "__" + slug(condition) + ".jsonl";
}

std::string cell_key(const std::string& task, const std::string& policy, const std::string& condition) {
  return task + "\n" + policy + "\n" + condition;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

int worker_count(int configured) {
  if (const char* env = std::getenv("METAFINE_WORKERS"); env && *env) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::ConfigInvalid, std::string("METAFINE_WORKERS must be a positive integer, got '") + env + "'");
  }
  return configured;
}

bool executable_found(const std::string& program) {
  if (program.empty()) return false;
  if (program.find('/') != std::string::npos) return fs::exists(program);
  const char* path = std::getenv("PATH");
  std::istringstream dirs(path ? path : "");
  std::string dir;
  while (std::getline(dirs, dir, ':'))
    if (!dir.empty() && fs::exists(fs::path(dir) / program)) return true;
  return false;
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write '" + tmp.string() + "'");
    out << text;
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot replace '" + p.string() + "': " + ec.message());
}

}  // namespace

int CampaignSummary::errors() const {
  int n = 0;
  for (const auto& c : cells) n += c.status == "error";
  return n;
}

CampaignConfig parse_campaign_config(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) fail(ErrorCode::ConfigInvalid, "campaign config must be a JSON object");
  static const std::set<std::string> known{"tasks",  "policies", "perturbations", "interventions", "trials", "seed",
                                           "budget", "output",   "workers",       "assets",        "task_dir",      "nominal"};
  for (const auto& [k, v] : doc.items())
    if (!known.count(k)) invalid(k, "unknown field");

  CampaignConfig c;
  auto strings = [&](const char* field, bool required) {
    std::vector<std::string> out;
    if (!doc.contains(field)) {
      if (required) invalid(field, "missing");
      return out;
    }
    const json& arr = doc.at(field);
    if (!arr.is_array()) invalid(field, "must be an array of strings");
    for (const auto& e : arr) {
      if (!e.is_string() || e.get<std::string>().empty()) invalid(field, "must be an array of non-empty strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  auto integer = [&](const char* field, long long lo, long long fallback) {
    if (!doc.contains(field)) return fallback;
    const json& v = doc.at(field);
    if (!v.is_number_integer()) invalid(field, "must be an integer");
    const long long x = v.get<long long>();
    if (x < lo) invalid(field, "must be at least " + std::to_string(lo));
    return x;
  };

  c.tasks = strings("tasks", true);
  c.policies = strings("policies", true);
  if (c.tasks.empty()) invalid("tasks", "must name at least one task");
  if (c.policies.empty()) invalid("policies", "must name at least one policy");
  c.interventions = strings("interventions", false);
  for (const auto& k : c.interventions) {
    try {
      intervention_kind_from_name(k);
    } catch (const Error& e) {
      invalid("interventions", e.what());
    }
  }
  if (doc.contains("perturbations")) {
    if (!doc.at("perturbations").is_array()) invalid("perturbations", "must be an array");
    for (const auto& p : doc.at("perturbations")) {
      SweepSpec s;
      try {
        s.kind = perturbation_kind_from_name(p.at("kind").get<std::string>());
        s.levels = p.at("levels").get<std::vector<int>>();
      } catch (const Error& e) {
        invalid("perturbations", e.what());
      } catch (const json::exception& e) {
        invalid("perturbations", std::string("expected {kind, levels}: ") + e.what());
      }
      if (s.kind == PerturbationKind::None) invalid("perturbations", "kind must be geometric or photometric");
      if (s.levels.empty()) invalid("perturbations", "levels must not be empty");
      for (int l : s.levels)
        if (l < 1 || l > 3) invalid("perturbations", "levels must lie in 1..3");
      c.perturbations.push_back(s);
    }
  }
  if (doc.contains("nominal")) {
    if (!doc.at("nominal").is_boolean()) invalid("nominal", "must be true or false");
    c.nominal = doc.at("nominal").get<bool>();
  }
  if (!c.nominal && c.perturbations.empty() && c.interventions.empty())
    invalid("nominal", "false with no perturbations or interventions leaves nothing to run");
  c.trials = static_cast<int>(integer("trials", 1, 20));
  c.seed = static_cast<std::uint64_t>(integer("seed", 0, 0));
  c.budget = static_cast<int>(integer("budget", 1, kDefaultStepBudget));
  c.workers = static_cast<int>(integer("workers", 1, 1));
  if (!doc.contains("output") || !doc.at("output").is_string()) invalid("output", "missing output directory");
  c.output = resolve_path(base_dir, doc.at("output").get<std::string>());
  const fs::path data(METAFINE_DEFAULT_DATA_DIR);
  c.assets = doc.contains("assets") ? resolve_path(base_dir, doc.at("assets").get<std::string>()) : data / "assets";
  c.task_dir = doc.contains("task_dir") ? resolve_path(base_dir, doc.at("task_dir").get<std::string>()) : data / "tasks";

  for (const auto& p : c.policies) {
    try {
      policy_spec_id(p);
      if (p.rfind("external:", 0) == 0) {
        std::istringstream words(p.substr(9));
        std::string program;
        words >> program;
        if (!executable_found(program)) invalid("policies", "cannot find executable '" + program + "'");
      }
    } catch (const Error& e) {
      invalid("policies", e.what());
    }
  }
  std::set<std::string> seen;
  for (const auto& p : c.policies)
    if (!seen.insert(policy_spec_id(p)).second) invalid("policies", "'" + p + "' is listed twice");
  return c;
}

CampaignConfig load_campaign_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigInvalid, "cannot read campaign config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return parse_campaign_config(doc, path.parent_path());
}

json to_json_config(const CampaignConfig& c) {
  json sweeps = json::array();
  for (const auto& s : c.perturbations) sweeps.push_back({{"kind", perturbation_kind_name(s.kind)}, {"levels", s.levels}});
  return json{{"tasks", c.tasks},     {"policies", c.policies}, {"perturbations", sweeps},
              {"interventions", c.interventions}, {"nominal", c.nominal}, {"trials", c.trials},     {"seed", c.seed},
              {"budget", c.budget},   {"assets", c.assets.string()}, {"task_dir", c.task_dir.string()}};
}

TaskSpec resolve_task(const std::string& ref, const CampaignConfig& config, const SkillRegistry& registry,
                      const AssetLibrary& library) {
  fs::path path(ref);
  if (path.extension() != ".json") path = config.task_dir / (ref + ".json");
  std::ifstream in(path);
  if (!in) invalid("tasks", "cannot find task '" + ref + "' (looked for " + path.string() + ")");
  try {
    const json doc = json::parse(in);
    const bool full = doc.contains("stages") && !doc.at("stages").empty() && doc.at("stages")[0].contains("skill_id");
    if (full) {
      TaskSpec t = doc.get<TaskSpec>();
      validate_task(t, registry, library);
      return t;
    }
    return instantiate_task(doc, registry, library);
  } catch (const json::exception& e) {
    invalid("tasks", path.string() + ": " + e.what());
  } catch (const Error& e) {
    invalid("tasks", path.string() + ": " + e.what());
  }
}

CampaignSummary run_campaign(const CampaignConfig& config, bool resume) {
  const int requested_workers = worker_count(config.workers);
  const AssetLibrary library = [&] {
    try {
      return load_library(config.assets);
    } catch (const Error& e) {
      invalid("assets", e.what());
    }
  }();
  const SkillRegistry registry = SkillRegistry::with_builtins();
  std::vector<TaskSpec> tasks;
  std::set<std::string> task_ids;
  for (const auto& ref : config.tasks) {
    tasks.push_back(resolve_task(ref, config, registry, library));
    if (!task_ids.insert(tasks.back().task_id).second) invalid("tasks", "task '" + tasks.back().task_id + "' listed twice");
  }

  const json config_json = to_json_config(config);
  const std::string config_hash = hex64(fnv1a(config_json.dump()));
  const fs::path dir = config.output;
  const fs::path trace_dir = dir / "traces";
  const fs::path manifest_path = dir / "manifest.json";

  json manifest;
  std::set<std::string> done;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!resume) invalid("output", "directory '" + dir.string() + "' is not empty; pass --resume to continue it");
    std::ifstream in(manifest_path);
    if (!in) invalid("output", "cannot resume: no manifest in '" + dir.string() + "'");
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      invalid("output", "corrupt manifest: " + std::string(e.what()));
    }
    if (manifest.value("config_hash", "") != config_hash)
      invalid("output", "cannot resume: manifest was written by a different configuration");
    for (const auto& c : manifest.value("cells", json::array()))
      if (c.value("status", "") == "complete")
        done.insert(cell_key(c.at("task").get<std::string>(), c.at("policy").get<std::string>(),
                             c.at("condition").get<std::string>()));
  }
  std::error_code ec;
  fs::create_directories(trace_dir, ec);
  if (ec) invalid("output", "cannot create '" + trace_dir.string() + "': " + ec.message());

  // Cells in a fixed order: task, policy, then nominal, sweeps, interventions.
  std::vector<Cell> cells;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti)
    for (const auto& policy : config.policies) {
      if (config.nominal) cells.push_back({ti, policy, "nominal", {}, std::nullopt});
      for (const auto& s : config.perturbations)
        for (int level : s.levels) {
          PerturbationSetting p;
          p.kind = s.kind;
          p.level = level;
          cells.push_back({ti, policy, std::string(perturbation_kind_name(s.kind)) + ":L" + std::to_string(level), p,
                           std::nullopt});
        }
      for (const auto& k : config.interventions)
        cells.push_back({ti, policy, "intervention:" + k, {}, intervention_kind_from_name(k)});
    }

  // Every policy and condition sees the same configurations of a task.
  std::vector<std::vector<Configuration>> configs(tasks.size());
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    try {
      configs[ti] = sample_configurations(eval_distribution(tasks[ti]), library, config.trials,
                                          derive_seed(config.seed, "configurations/" + tasks[ti].task_id));
    } catch (const Error& e) {
      invalid("tasks", tasks[ti].task_id + ": " + e.what());
    }
  }

  CampaignSummary summary;
  summary.directory = dir;
  summary.cells.resize(cells.size());
  std::mutex manifest_mutex;
  const std::string created = manifest.is_object() ? manifest.value("created", utc_now()) : utc_now();

  auto write_manifest = [&] {
    json cell_rows = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const CellOutcome& o = summary.cells[i];
      const std::string status =
          o.status == "error" ? "error" : (done.count(cell_key(o.task, o.policy, o.condition)) ? "complete" : "pending");
      json row{{"task", o.task},
               {"policy", o.policy},
               {"condition", o.condition},
               {"file", cell_file(o.task, o.policy, o.condition)},
               {"status", status}};
      if (status == "error") row["error"] = o.error;
      cell_rows.push_back(row);
    }
    json seeds{{"campaign", config.seed}};
    for (const auto& t : tasks) seeds["configurations/" + t.task_id] = derive_seed(config.seed, "configurations/" + t.task_id);
    const json m{{"schema_version", kManifestSchemaVersion},
                 {"engine_version", kEngineVersion},
                 {"trace_schema_version", kTraceSchemaVersion},
                 {"config_hash", config_hash},
                 {"config", config_json},
                 {"seeds", seeds},
                 {"created", created},
                 {"updated", utc_now()},
                 {"cells", cell_rows}};
    write_text(manifest_path, m.dump(2) + "\n");
  };

  for (std::size_t i = 0; i < cells.size(); ++i) {
    summary.cells[i].task = tasks[cells[i].task].task_id;
    summary.cells[i].policy = policy_spec_id(cells[i].policy);
    summary.cells[i].condition = cells[i].condition;
  }
  write_manifest();

  auto run_cell = [&](std::size_t i) {
    const Cell& cell = cells[i];
    CellOutcome& out = summary.cells[i];
    if (done.count(cell_key(out.task, out.policy, out.condition))) {
      out.status = "skipped";
      out.traces = config.trials;
      return;
    }
    const TaskSpec& task = tasks[cell.task];
    const fs::path file = trace_dir / cell_file(out.task, out.policy, out.condition);
    const std::uint64_t cell_seed = derive_seed(config.seed, cell_key(out.task, out.policy, out.condition));
    try {
      std::ofstream trace_out(file, std::ios::binary | std::ios::trunc);
      if (!trace_out) fail(ErrorCode::IoFailure, "cannot write '" + file.string() + "'");
      std::optional<InterventionPair> pair;
      if (cell.intervention)
        pair = semantic_intervention(task, *cell.intervention, derive_seed(config.seed, "intervention/" + task.task_id),
                                     registry, library);
      for (int k = 0; k < config.trials; ++k) {
        auto policy = make_policy(cell.policy);
        TrialSpec spec;
        spec.task = pair ? &pair->perturbed : &task;
        spec.alt_acceptance = pair ? &pair->modified : nullptr;
        spec.configuration = configs[cell.task][static_cast<std::size_t>(k)];
        spec.seed = derive_seed(cell_seed, static_cast<std::uint64_t>(k));
        spec.budget = config.budget;
        spec.condition = cell.condition;
        if (cell.perturbation.kind != PerturbationKind::None)
          spec.perturbation = make_perturbation(cell.perturbation.kind, cell.perturbation.level,
                                                derive_seed(cell_seed ^ 0x9E3779B97F4A7C15ULL, static_cast<std::uint64_t>(k)));
        RolloutTrace trace = run_trial(spec, library, *policy);
        trace.policy_id = out.policy;
        trace_out << json(trace).dump() << '\n';
        trace_out.flush();
        ++out.traces;
      }
      out.status = "complete";
    } catch (const Error& e) {
      out.status = "error";
      out.error = std::string(error_code_name(e.code())) + ": " + e.what();
    } catch (const std::exception& e) {
      out.status = "error";
      out.error = std::string("Internal: ") + e.what();
    }
    std::lock_guard<std::mutex> lock(manifest_mutex);
    if (out.status == "complete") done.insert(cell_key(out.task, out.policy, out.condition));
    write_manifest();
  };

  const int workers = std::max(1, std::min<int>(requested_workers, static_cast<int>(cells.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < cells.size(); i += static_cast<std::size_t>(workers)) run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  return summary;
}

EmittedReport emit_report(const fs::path& campaign, const fs::path& out_dir) {
  if (!fs::exists(campaign / "manifest.json"))
    fail(ErrorCode::ConfigInvalid, "no campaign manifest in '" + campaign.string() + "'");
  const DiagnosticReport report = assemble_report(campaign);
  EmittedReport e;
  e.files = write_report(report, out_dir.empty() ? campaign / "report" : out_dir);
  for (const auto& c : report.body.at("cells"))
    if (!c.at("errors").empty()) ++e.error_cells;
  return e;
}

}  // namespace metafine
