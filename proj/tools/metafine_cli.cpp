#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metafine/metafine_c.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailures = 2;

struct CliError {
  int code;
  std::string message;
};

// Throws CliError carrying the library's message.
void check(int rc) {
  if (rc != MF_OK) throw CliError{rc, std::string(mf_error_name(rc)) + ": " + mf_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  mf_free(s);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CliError{MF_IO_FAILURE, "IoFailure: cannot read '" + p.string() + "'"};
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text, bool append = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw CliError{MF_IO_FAILURE, "IoFailure: cannot write '" + p.string() + "'"};
  out << text;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

std::string slug(const std::string& id) {
  std::string s;
  for (char ch : id) s += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.') ? ch : '_';
  return s;
}

struct Session {
  std::string data_dir = mf_default_data_dir();
  std::string assets;
  std::unique_ptr<mf_library, void (*)(mf_library*)> lib{nullptr, mf_library_free};
  std::unique_ptr<mf_registry, void (*)(mf_registry*)> reg{nullptr, mf_registry_free};

  mf_library* library() {
    if (!lib) {
      mf_library* l = nullptr;
      check(mf_library_load((assets.empty() ? data_dir + "/assets" : assets).c_str(), &l));
      lib.reset(l);
    }
    return lib.get();
  }

  mf_registry* registry() {
    if (!reg) {
      mf_registry* r = nullptr;
      check(mf_registry_builtin(&r));
      reg.reset(r);
    }
    return reg.get();
  }

  // A task id under <data>/tasks or a path to a compose request or task spec.
  std::unique_ptr<mf_task, void (*)(mf_task*)> task(const std::string& ref) {
    fs::path p(ref);
    if (p.extension() != ".json") p = fs::path(data_dir) / "tasks" / (ref + ".json");
    if (!fs::exists(p)) throw CliError{MF_CONFIG_INVALID, "ConfigInvalid: no task '" + ref + "' (looked for " + p.string() + ")"};
    mf_task* t = nullptr;
    check(mf_task_from_json(registry(), library(), read_file(p).c_str(), &t));
    return {t, mf_task_free};
  }
};

std::string task_id_of(mf_task* t) {
  char* s = nullptr;
  check(mf_task_to_json(t, &s));
  return json::parse(take(s)).at("task_id").get<std::string>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-grained manipulation evaluation harness"};
  app.require_subcommand(1);
  Session session;
  app.add_option("--data-dir", session.data_dir, "Directory holding assets/ and tasks/");
  app.add_option("--assets", session.assets, "Asset library directory or file (default <data-dir>/assets)");
  app.set_version_flag("--version", std::string(mf_version()));

  int exit_code = kExitOk;

  // validate-assets
  auto* validate = app.add_subcommand("validate-assets", "Check asset records against the schema");
  std::string validate_path;
  validate->add_option("path", validate_path, "Asset directory or file")->required();
  validate->callback([&] {
    char* out = nullptr;
    const int rc = mf_validate_assets(validate_path.c_str(), &out);
    std::cout << take(out);
    if (rc != MF_OK) exit_code = kExitUsage;
  });

  // compose
  auto* compose = app.add_subcommand("compose", "Instantiate a task spec from a compose request");
  std::string compose_in, compose_out;
  compose->add_option("request", compose_in, "Compose request JSON (skills, bindings, scene)")->required();
  compose->add_option("-o,--out", compose_out, "Output file (default stdout)");
  compose->callback([&] {
    auto t = session.task(compose_in);
    char* s = nullptr;
    check(mf_task_to_json(t.get(), &s));
    emit(take(s), compose_out);
  });

  // demos
  auto* demos = app.add_subcommand("demos", "Generate oracle demonstrations");
  std::string demos_task, demos_out;
  int demos_count = 10, demos_budget = 400;
  std::uint64_t demos_seed = 0;
  demos->add_option("--task", demos_task)->required();
  demos->add_option("--count", demos_count)->check(CLI::PositiveNumber);
  demos->add_option("--seed", demos_seed);
  demos->add_option("--budget", demos_budget)->check(CLI::PositiveNumber);
  demos->add_option("-o,--out", demos_out, "JSONL output (default stdout)");
  demos->callback([&] {
    auto t = session.task(demos_task);
    char* s = nullptr;
    check(mf_demos(t.get(), session.library(), demos_count, demos_seed, demos_budget, &s));
    emit(take(s), demos_out);
  });

  // run
  auto* run = app.add_subcommand("run", "Run trials of one policy on one task");
  std::string run_task, run_policy, run_perturb, run_out;
  int run_trials = 20, run_budget = 400;
  std::uint64_t run_seed = 0;
  run->add_option("--task", run_task)->required();
  run->add_option("--policy", run_policy, "builtin:<family>?k=v&... or external:<command>")->required();
  run->add_option("--perturb", run_perturb, "kind:level, e.g. geometric:2");
  run->add_option("--trials", run_trials)->check(CLI::PositiveNumber);
  run->add_option("--seed", run_seed);
  run->add_option("--budget", run_budget)->check(CLI::PositiveNumber);
  run->add_option("--out", run_out, "Campaign directory to append traces to (default stdout)");
  run->callback([&] {
    auto t = session.task(run_task);
    char* s = nullptr;
    check(mf_run(t.get(), session.library(), run_policy.c_str(), run_perturb.empty() ? nullptr : run_perturb.c_str(),
                 run_trials, run_seed, run_budget, &s));
    const std::string traces = take(s);
    if (run_out.empty()) {
      std::cout << traces;
      return;
    }
    const std::string first = traces.substr(0, traces.find('\n'));
    const json head = json::parse(first);
    const fs::path dir(run_out);
    const std::string condition = head.at("condition").get<std::string>();
    write_file(dir / "traces" / (slug(head.at("task_id")) + "__" + slug(head.at("policy_id")) + "__" + slug(condition) + ".jsonl"),
               traces, true);
    if (!fs::exists(dir / "manifest.json"))
      write_file(dir / "manifest.json", json{{"engine_version", mf_version()}, {"cells", json::array()}}.dump(2) + "\n");
    std::cerr << "appended " << run_trials << " traces to " << (dir / "traces").string() << "\n";
  });

  // intervene
  auto* intervene = app.add_subcommand("intervene", "Measure the drop under a semantic intervention");
  std::string iv_task, iv_kind, iv_policy, iv_out;
  int iv_trials = 20, iv_budget = 400;
  std::uint64_t iv_seed = 0;
  intervene->add_option("--task", iv_task)->required();
  intervene->add_option("--kind", iv_kind, "part_substitution | directional_reversal | property_alteration")->required();
  intervene->add_option("--policy", iv_policy)->required();
  intervene->add_option("--trials", iv_trials)->check(CLI::PositiveNumber);
  intervene->add_option("--seed", iv_seed);
  intervene->add_option("--budget", iv_budget)->check(CLI::PositiveNumber);
  intervene->add_option("-o,--out", iv_out);
  intervene->callback([&] {
    auto t = session.task(iv_task);
    char* s = nullptr;
    check(mf_intervene(t.get(), session.registry(), session.library(), iv_kind.c_str(), iv_policy.c_str(), iv_trials,
                       iv_seed, iv_budget, &s));
    emit(take(s), iv_out);
  });

  // perturb-sweep
  auto* sweep = app.add_subcommand("perturb-sweep", "Robustness curve over perturbation levels");
  std::string sw_task, sw_policy, sw_kind = "geometric", sw_out, sw_csv;
  std::vector<int> sw_levels{1, 2, 3};
  int sw_trials = 20, sw_budget = 400;
  std::uint64_t sw_seed = 0;
  sweep->add_option("--task", sw_task)->required();
  sweep->add_option("--policy", sw_policy)->required();
  sweep->add_option("--kind", sw_kind, "geometric | photometric");
  sweep->add_option("--levels", sw_levels)->delimiter(',');
  sweep->add_option("--trials", sw_trials)->check(CLI::PositiveNumber);
  sweep->add_option("--seed", sw_seed);
  sweep->add_option("--budget", sw_budget)->check(CLI::PositiveNumber);
  sweep->add_option("-o,--out", sw_out);
  sweep->add_option("--csv", sw_csv, "Also write the curve as CSV (level,sr,n)");
  sweep->callback([&] {
    auto t = session.task(sw_task);
    char* s = nullptr;
    check(mf_perturb_sweep(t.get(), session.library(), sw_policy.c_str(), sw_kind.c_str(), sw_levels.data(),
                           static_cast<int>(sw_levels.size()), sw_trials, sw_seed, sw_budget, &s));
    const std::string out = take(s);
    if (!sw_csv.empty()) write_file(sw_csv, json::parse(out).at("csv").get<std::string>());
    emit(out, sw_out);
  });

  // ppi
  auto* ppi = app.add_subcommand("ppi", "Hybrid sim-and-real success estimate with a confidence interval");
  std::string ppi_task, ppi_policy, ppi_source = "surrogate:", ppi_out;
  int ppi_n = 20, ppi_N = 1000, ppi_reps = 1, ppi_budget = 400;
  double ppi_alpha = 0.05;
  std::uint64_t ppi_seed = 0;
  ppi->add_option("--task", ppi_task)->required();
  ppi->add_option("--policy", ppi_policy)->required();
  ppi->add_option("--n", ppi_n, "Paired configurations per set")->check(CLI::PositiveNumber);
  ppi->add_option("--N", ppi_N, "Simulation-only configurations")->check(CLI::PositiveNumber);
  ppi->add_option("--alpha", ppi_alpha)->check(CLI::Range(0.0, 1.0));
  ppi->add_option("--replications", ppi_reps, "Disjoint paired sets")->check(CLI::PositiveNumber);
  ppi->add_option("--real-source", ppi_source, "file:<csv> | wire:<host>:<port> | surrogate:kind=..&level=..&flip=..");
  ppi->add_option("--seed", ppi_seed);
  ppi->add_option("--budget", ppi_budget)->check(CLI::PositiveNumber);
  ppi->add_option("-o,--out", ppi_out);
  ppi->callback([&] {
    auto t = session.task(ppi_task);
    const json options{{"n", ppi_n},     {"N", ppi_N},       {"alpha", ppi_alpha},
                       {"replications", ppi_reps}, {"seed", ppi_seed}, {"budget", ppi_budget}};
    char* s = nullptr;
    check(mf_ppi(t.get(), session.library(), ppi_policy.c_str(), options.dump().c_str(), ppi_source.c_str(), &s));
    emit(take(s), ppi_out);
  });

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Normalize external task documents into task specs");
  std::vector<std::string> adapt_docs;
  std::string adapt_out_dir, adapt_save_assets;
  bool adapt_partial = false;
  adapt->add_option("docs", adapt_docs, "External task documents")->required();
  adapt->add_option("--out-dir", adapt_out_dir, "Write <task_id>.task.json and <task_id>.report.json here");
  adapt->add_option("--save-assets", adapt_save_assets, "Write the grown asset library here");
  adapt->add_flag("--allow-partial", adapt_partial, "Exit 0 even when some documents are unmappable");
  adapt->callback([&] {
    int unmappable = 0;
    json summary = json::array();
    for (const auto& doc : adapt_docs) {
      char* s = nullptr;
      const int rc = mf_adapt(read_file(doc).c_str(), session.library(), session.registry(), &s);
      if (rc != MF_OK && rc != MF_UNMAPPABLE) check(rc);
      const json result = json::parse(take(s));
      unmappable += rc == MF_UNMAPPABLE;
      const std::string id = result.at("report").at("task_id");
      if (!adapt_out_dir.empty()) {
        write_file(fs::path(adapt_out_dir) / (id + ".report.json"), result.at("report").dump(2) + "\n");
        if (result.at("mapped")) write_file(fs::path(adapt_out_dir) / (id + ".task.json"), result.at("task").dump(2) + "\n");
      }
      summary.push_back({{"doc", doc}, {"task_id", id}, {"mapped", result.at("mapped")}, {"report", result.at("report")}});
    }
    if (!adapt_save_assets.empty()) check(mf_library_save(session.library(), adapt_save_assets.c_str()));
    std::cout << summary.dump(2) << "\n";
    if (unmappable > 0) {
      std::cerr << unmappable << " of " << adapt_docs.size() << " documents unmappable\n";
      if (!adapt_partial) exit_code = kExitFailures;
    }
  });

  // campaign
  auto* campaign = app.add_subcommand("campaign", "Run a campaign config and emit its report");
  std::string cp_config;
  bool cp_resume = false, cp_partial = false, cp_no_report = false;
  campaign->add_option("config", cp_config, "Campaign config JSON")->required();
  campaign->add_flag("--resume", cp_resume, "Continue an interrupted campaign");
  campaign->add_flag("--allow-partial", cp_partial, "Exit 0 even when some cells failed");
  campaign->add_flag("--no-report", cp_no_report, "Skip report emission");
  campaign->callback([&] {
    char* s = nullptr;
    check(mf_campaign_run(cp_config.c_str(), cp_resume ? 1 : 0, &s));
    const json summary = json::parse(take(s));
    std::cout << summary.dump(2) << "\n";
    if (!cp_no_report) {
      char* r = nullptr;
      check(mf_report_emit(summary.at("directory").get<std::string>().c_str(), nullptr, &r));
      std::cerr << take(r);
    }
    if (summary.at("error_cells").get<int>() > 0 && !cp_partial) exit_code = kExitFailures;
  });

  // report
  auto* report = app.add_subcommand("report", "Aggregate a campaign directory into report.json and CSVs");
  std::string rp_dir, rp_out;
  bool rp_partial = false;
  report->add_option("campaign", rp_dir, "Campaign directory")->required();
  report->add_option("-o,--out", rp_out, "Report directory (default <campaign>/report)");
  report->add_flag("--allow-partial", rp_partial, "Exit 0 even when some cells carry errors");
  report->callback([&] {
    char* s = nullptr;
    check(mf_report_emit(rp_dir.c_str(), rp_out.empty() ? nullptr : rp_out.c_str(), &s));
    const json r = json::parse(take(s));
    std::cout << r.dump(2) << "\n";
    if (r.at("error_cells").get<int>() > 0 && !rp_partial) exit_code = kExitFailures;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code == MF_EMPTY_TRACE_SET ? kExitFailures : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return exit_code;
}
