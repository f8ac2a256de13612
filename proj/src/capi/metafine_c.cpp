#include "metafine/metafine_c.h"

#include <cstdlib>
#include <cstring>
#include <optional>
#include <sstream>

#include "metafine/adapter.hpp"
#include "metafine/campaign.hpp"
#include "metafine/diagnostics.hpp"
#include "metafine/error.hpp"
#include "metafine/hybrid.hpp"
#include "metafine/policy.hpp"

#ifndef METAFINE_DEFAULT_DATA_DIR
#define METAFINE_DEFAULT_DATA_DIR "data"
#endif

using namespace metafine;

struct mf_library {
  AssetLibrary lib;
};
struct mf_registry {
  SkillRegistry reg;
};
struct mf_task {
  TaskSpec spec;
};

namespace {

thread_local std::string g_error;
thread_local int g_code = MF_OK;

int set_error(int code, const std::string& msg) {
  g_code = code;
  g_error = msg;
  return code;
}

template <class F>
int guard(F&& f) {
  g_code = MF_OK;
  g_error.clear();
  try {
    return f();
  } catch (const Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(MF_SCHEMA_VIOLATION, e.what());
  } catch (const std::exception& e) {
    return set_error(MF_INTERNAL, e.what());
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

void put(char** out, const json& j) {
  require(out, "output pointer");
  *out = dup(j.dump(2) + "\n");
}

json parse(const char* text, const char* what) {
  require(text, what);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::SchemaViolation, std::string(what) + ": " + e.what());
  }
}

constexpr std::uint64_t kPerturbSalt = 0x9E3779B97F4A7C15ULL;

std::vector<RolloutTrace> run_batch(const TaskSpec& task, const TaskSpec* alt, const AssetLibrary& lib,
                                    const std::string& policy, const std::vector<Configuration>& configs,
                                    std::uint64_t seed, int budget, PerturbationKind kind, int level) {
  std::vector<RolloutTrace> out;
  const std::string condition =
      kind == PerturbationKind::None ? "nominal" : std::string(perturbation_kind_name(kind)) + ":L" + std::to_string(level);
  for (std::size_t k = 0; k < configs.size(); ++k) {
    auto p = make_policy(policy);
    TrialSpec spec;
    spec.task = &task;
    spec.alt_acceptance = alt;
    spec.configuration = configs[k];
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(k));
    spec.budget = budget;
    spec.condition = condition;
    if (kind != PerturbationKind::None)
      spec.perturbation = make_perturbation(kind, level, derive_seed(seed ^ kPerturbSalt, static_cast<std::uint64_t>(k)));
    out.push_back(run_trial(spec, lib, *p));
  }
  return out;
}

std::vector<Configuration> batch_configs(const TaskSpec& task, const AssetLibrary& lib, int trials, std::uint64_t seed) {
  if (trials < 1) fail(ErrorCode::InvalidArgument, "trials must be positive");
  return sample_configurations(eval_distribution(task), lib, trials, derive_seed(seed, "configurations"));
}

std::string jsonl(const std::vector<RolloutTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += json(t).dump() + "\n";
  return out;
}

}  // namespace

extern "C" {

const char* mf_version(void) { return kEngineVersion; }
const char* mf_default_data_dir(void) { return METAFINE_DEFAULT_DATA_DIR; }
const char* mf_last_error(void) { return g_error.c_str(); }
int mf_last_error_code(void) { return g_code; }
const char* mf_error_name(int code) { return error_code_name(static_cast<ErrorCode>(code)); }
void mf_free(char* s) { std::free(s); }

int mf_library_load(const char* path, mf_library** out) {
  return guard([&]() -> int {
    require(path, "path");
    require(out, "output pointer");
    *out = new mf_library{load_library(path)};
    return MF_OK;
  });
}

int mf_library_to_json(const mf_library* lib, char** out_json) {
  return guard([&]() -> int {
    require(lib, "library");
    json arr = json::array();
    for (const auto& [id, rec] : lib->lib.records()) arr.push_back(rec);
    put(out_json, arr);
    return MF_OK;
  });
}

int mf_library_save(const mf_library* lib, const char* dir) {
  return guard([&]() -> int {
    require(lib, "library");
    require(dir, "directory");
    save_library(lib->lib, dir);
    return MF_OK;
  });
}

void mf_library_free(mf_library* lib) { delete lib; }

int mf_validate_assets(const char* path, char** out_json) {
  return guard([&]() -> int {
    require(path, "path");
    try {
      const AssetLibrary lib = load_library(path);
      put(out_json, {{"valid", true}, {"records", lib.size()}, {"errors", json::array()}});
      return MF_OK;
    } catch (const Error& e) {
      put(out_json, {{"valid", false},
                     {"records", 0},
                     {"errors", {{{"code", error_code_name(e.code())}, {"message", e.what()}}}}});
      return set_error(static_cast<int>(e.code()), e.what());
    }
  });
}

int mf_registry_builtin(mf_registry** out) {
  return guard([&]() -> int {
    require(out, "output pointer");
    *out = new mf_registry{SkillRegistry::with_builtins()};
    return MF_OK;
  });
}

int mf_registry_register(mf_registry* reg, const char* skill_json) {
  return guard([&]() -> int {
    require(reg, "registry");
    reg->reg.register_skill(parse(skill_json, "skill").get<SkillSpec>());
    return MF_OK;
  });
}

int mf_registry_graph(const mf_registry* reg, char** out_json) {
  return guard([&]() -> int {
    require(reg, "registry");
    put(out_json, derive_composition_graph(reg->reg.skills()));
    return MF_OK;
  });
}

void mf_registry_free(mf_registry* reg) { delete reg; }

int mf_task_from_json(const mf_registry* reg, const mf_library* lib, const char* text, mf_task** out) {
  return guard([&]() -> int {
    require(reg, "registry");
    require(lib, "library");
    require(out, "output pointer");
    const json doc = parse(text, "task");
    const bool full = doc.contains("stages") && doc.at("stages").is_array() && !doc.at("stages").empty() &&
                      doc.at("stages")[0].contains("skill_id");
    if (full) {
      TaskSpec t = doc.get<TaskSpec>();
      validate_task(t, reg->reg, lib->lib);
      *out = new mf_task{std::move(t)};
    } else {
      *out = new mf_task{instantiate_task(doc, reg->reg, lib->lib)};
    }
    return MF_OK;
  });
}

int mf_task_to_json(const mf_task* task, char** out_json) {
  return guard([&]() -> int {
    require(task, "task");
    put(out_json, task->spec);
    return MF_OK;
  });
}

void mf_task_free(mf_task* task) { delete task; }

int mf_demos(const mf_task* task, const mf_library* lib, int count, uint64_t seed, int budget, char** out_jsonl) {
  return guard([&]() -> int {
    require(task, "task");
    require(lib, "library");
    require(out_jsonl, "output pointer");
    *out_jsonl = dup(jsonl(generate_demonstrations(task->spec, lib->lib, count, seed, budget)));
    return MF_OK;
  });
}

int mf_run(const mf_task* task, const mf_library* lib, const char* policy, const char* perturb, int trials,
           uint64_t seed, int budget, char** out_jsonl) {
  return guard([&]() -> int {
    require(task, "task");
    require(lib, "library");
    require(policy, "policy");
    require(out_jsonl, "output pointer");
    PerturbationKind kind = PerturbationKind::None;
    int level = 0;
    if (perturb && *perturb) {
      const std::string s(perturb);
      const auto colon = s.find(':');
      if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "perturbation must be kind:level, got '" + s + "'");
      kind = perturbation_kind_from_name(s.substr(0, colon));
      try {
        level = std::stoi(s.substr(colon + 1));
      } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, "perturbation level must be an integer, got '" + s.substr(colon + 1) + "'");
      }
      if (level < 0 || level > 3) fail(ErrorCode::InvalidArgument, "perturbation level must lie in 0..3");
      if (level == 0) kind = PerturbationKind::None;
    }
    const auto configs = batch_configs(task->spec, lib->lib, trials, seed);
    *out_jsonl = dup(jsonl(run_batch(task->spec, nullptr, lib->lib, policy, configs, seed, budget, kind, level)));
    return MF_OK;
  });
}

int mf_intervene(const mf_task* task, const mf_registry* reg, const mf_library* lib, const char* kind,
                 const char* policy, int trials, uint64_t seed, int budget, char** out_json) {
  return guard([&]() -> int {
    require(task, "task");
    require(reg, "registry");
    require(lib, "library");
    require(kind, "intervention kind");
    require(policy, "policy");
    const InterventionKind k = intervention_kind_from_name(kind);
    const InterventionPair pair =
        semantic_intervention(task->spec, k, derive_seed(seed, "intervention"), reg->reg, lib->lib);
    const auto configs = batch_configs(task->spec, lib->lib, trials, seed);
    const auto original =
        run_batch(task->spec, nullptr, lib->lib, policy, configs, seed, budget, PerturbationKind::None, 0);
    auto perturbed =
        run_batch(pair.perturbed, &pair.modified, lib->lib, policy, configs, seed, budget, PerturbationKind::None, 0);
    for (auto& t : perturbed) t.condition = std::string("intervention:") + kind;
    put(out_json, {{"task_id", task->spec.task_id},
                   {"policy_id", policy_spec_id(policy)},
                   {"intervention",
                    {{"kind", kind},
                     {"stage", pair.stage},
                     {"slot", pair.slot},
                     {"original_entity", pair.original_entity},
                     {"new_entity", pair.new_entity},
                     {"instruction_original", task->spec.instruction},
                     {"instruction_perturbed", pair.perturbed.instruction}}},
                   {"report", intervention_report(original, perturbed, kind)}});
    return MF_OK;
  });
}

int mf_perturb_sweep(const mf_task* task, const mf_library* lib, const char* policy, const char* kind,
                     const int* levels, int n_levels, int trials, uint64_t seed, int budget, char** out_json) {
  return guard([&]() -> int {
    require(task, "task");
    require(lib, "library");
    require(policy, "policy");
    require(kind, "perturbation kind");
    if (n_levels < 1) fail(ErrorCode::SingleLevel, "a sweep needs at least one perturbed level");
    require(levels, "levels");
    const PerturbationKind k = perturbation_kind_from_name(kind);
    if (k == PerturbationKind::None) fail(ErrorCode::InvalidArgument, "sweep kind must be geometric or photometric");
    const auto configs = batch_configs(task->spec, lib->lib, trials, seed);
    RobustnessCurve curve;
    curve.kind = kind;
    auto add = [&](int level) {
      const auto traces = run_batch(task->spec, nullptr, lib->lib, policy, configs, seed, budget,
                                    level == 0 ? PerturbationKind::None : k, level);
      curve.levels.push_back(level);
      curve.sr.push_back(success_rate(traces, Criterion::fine()));
      curve.trials.push_back(static_cast<int>(traces.size()));
    };
    add(0);
    for (int i = 0; i < n_levels; ++i) {
      if (levels[i] < 1 || levels[i] > 3) fail(ErrorCode::InvalidArgument, "sweep levels must lie in 1..3");
      add(levels[i]);
    }
    put(out_json, {{"task_id", task->spec.task_id},
                   {"policy_id", policy_spec_id(policy)},
                   {"curve", curve},
                   {"ausc", ausc(curve)},
                   {"csv", curve_csv(curve)}});
    return MF_OK;
  });
}

int mf_ppi(const mf_task* task, const mf_library* lib, const char* policy, const char* options_json,
           const char* real_source, char** out_json) {
  return guard([&]() -> int {
    require(task, "task");
    require(lib, "library");
    require(policy, "policy");
    require(real_source, "real source");
    HybridOptions o;
    if (options_json && *options_json) {
      const json j = parse(options_json, "options");
      o.n = j.value("n", o.n);
      o.N = j.value("N", o.N);
      o.alpha = j.value("alpha", o.alpha);
      o.replications = j.value("replications", o.replications);
      o.seed = j.value("seed", o.seed);
      o.budget = j.value("budget", o.budget);
    }
    put(out_json, run_hybrid_protocol(task->spec, lib->lib, policy, o, parse_real_source(real_source)));
    return MF_OK;
  });
}

int mf_adapt(const char* doc_json, mf_library* lib, const mf_registry* reg, char** out_json) {
  return guard([&]() -> int {
    require(lib, "library");
    require(reg, "registry");
    const AdaptResult r = adapt(parse(doc_json, "document"), lib->lib, reg->reg);
    put(out_json, {{"mapped", r.task.has_value()}, {"task", r.task ? json(*r.task) : json(nullptr)}, {"report", r.report}});
    if (!r.task) {
      std::string why = "document is unmappable";
      for (const auto& f : r.report.flags) why += "; " + f.at("kind").get<std::string>() + ": " + f.at("detail").get<std::string>();
      return set_error(MF_UNMAPPABLE, why);
    }
    return MF_OK;
  });
}

int mf_adapt_roundtrip(const char* doc_json, const mf_task* native, const mf_library* lib, const mf_registry* reg,
                       const char* policy, int trials, uint64_t seed, char** out_json) {
  return guard([&]() -> int {
    require(native, "native task");
    require(lib, "library");
    require(reg, "registry");
    require(policy, "policy");
    put(out_json, roundtrip_check(parse(doc_json, "document"), native->spec, lib->lib, reg->reg, policy, trials, seed));
    return MF_OK;
  });
}

int mf_campaign_run(const char* config_path, int resume, char** out_json) {
  return guard([&]() -> int {
    require(config_path, "config path");
    const CampaignSummary s = run_campaign(load_campaign_config(config_path), resume != 0);
    json cells = json::array();
    for (const auto& c : s.cells) {
      json row{{"task", c.task}, {"policy", c.policy}, {"condition", c.condition}, {"status", c.status}, {"traces", c.traces}};
      if (!c.error.empty()) row["error"] = c.error;
      cells.push_back(row);
    }
    put(out_json, {{"directory", s.directory.string()}, {"cells", cells}, {"error_cells", s.errors()}});
    return MF_OK;
  });
}

int mf_report_emit(const char* campaign_dir, const char* out_dir, char** out_json) {
  return guard([&]() -> int {
    require(campaign_dir, "campaign directory");
    const EmittedReport r = emit_report(campaign_dir, out_dir ? out_dir : "");
    json files = json::array();
    for (const auto& f : r.files) files.push_back(f.string());
    put(out_json, {{"files", files}, {"error_cells", r.error_cells}});
    return MF_OK;
  });
}

int mf_ausc(const double* levels, const double* sr, int n, double* out) {
  return guard([&]() -> int {
    require(levels, "levels");
    require(sr, "success rates");
    require(out, "output pointer");
    if (n < 0) fail(ErrorCode::InvalidArgument, "negative level count");
    RobustnessCurve c;
    c.levels.assign(levels, levels + n);
    c.sr.assign(sr, sr + n);
    c.trials.assign(static_cast<std::size_t>(n), 0);
    *out = ausc(c);
    return MF_OK;
  });
}

}  // extern "C"
