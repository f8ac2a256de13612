// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "implication_oracle.hpp"
#include "metafine/adapter.hpp"
#include "metafine/campaign.hpp"
#include "metafine/diagnostics.hpp"
#include "metafine/ppi.hpp"
#include "support.hpp"

using namespace metafine;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.note(fmt("runtime %.2fs over the %.0fs limit", secs, budget_s));
  }
  failures += !o.pass;
  std::printf("%s [%2d] %s (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::vector<RolloutTrace> rollouts(const TaskSpec& t, const std::string& policy, int n, std::uint64_t seed,
                                   PerturbationKind kind = PerturbationKind::None, int level = 0) {
  std::vector<RolloutTrace> out;
  const auto configs = sample_configurations(eval_distribution(t), fixtures::library(), n, seed);
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const PerturbationSetting p = make_perturbation(kind, level, derive_seed(seed ^ 0x9E3779B97F4A7C15ULL, k));
    out.push_back(fixtures::run(t, policy, configs[k], derive_seed(seed, k), p));
  }
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

int main() {
  criterion(1, "AUSC on published lighting rows", 1.0, [](Outcome& o) {
    // Nominal SR then L1..L3 and the published area.
    const std::vector<std::pair<std::vector<double>, double>> reproducible{
        {{49, 41, 34, 12}, 35.17}, {{75, 71, 40, 12}, 51.50}, {{35, 25, 20, 9}, 22.33}, {{35, 35, 20, 11}, 26.00}};
    for (const auto& [row, want] : reproducible) {
      const double got = ausc(row);
      o.require(std::abs(got - want) <= 0.01, fmt("%.4f vs %.2f", got, want));
    }
    const std::vector<std::pair<std::vector<double>, double>> mismatched{
        {{75, 75, 76, 75}, 75.25}, {{37, 31, 21, 7}, 25.50}, {{80, 74, 45, 15}, 53.50}};
    for (const auto& [row, want] : mismatched) {
      const double got = ausc(row);
      o.require(std::abs(got - want) > 0.01, fmt("documented mismatch %.2f now reproduces", want));
      o.note(fmt("mismatch %.2f -> %.4f", want, got));
    }
    o.note("4 rows within 0.01");
  });

  criterion(2, "drop arithmetic on published instruction rows", 1.0, [](Outcome& o) {
    const double rows[][3] = {{35, 27, 8}, {35, 29, 6}, {37, 27, 10}};
    for (const auto& r : rows) {
      const double got = intervention_report(r[0], r[1], 0).delta_drop;
      o.require(got == r[2], fmt("drop %.1f vs %.1f", got, r[2]));
    }
    const InterventionReport pi05 = intervention_report(80, 55, 0);
    o.require(pi05.delta_drop == 25.0 && std::abs(pi05.relative_drop - 31.25) < 1e-12,
              "documented 31.2 discrepancy (absolute 25, relative 31.25)");
    o.note(fmt("3 rows exact; published 31.2 vs absolute %.1f, relative %.2f", pi05.delta_drop, pi05.relative_drop));
  });

  criterion(3, "stability closed forms", 1.0, [](Outcome& o) {
    o.require(stability(std::vector<ActionVector>(40, {0.01, -0.02, 0, 1, 0, -1})) == 1.0, "constant sequence");
    double worst = 0.0;
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const double d = rng.uniform(0.0, 3.0);
      ActionVector dir{};
      double norm = 0.0;
      for (auto& x : dir) norm += (x = rng.normal()) * x;
      norm = std::sqrt(norm);
      std::vector<ActionVector> seq(1 + 1 + rng.below(30));
      for (std::size_t i = 1; i < seq.size(); ++i)
        for (std::size_t k = 0; k < 6; ++k) seq[i][k] = seq[i - 1][k] + d * dir[k] / norm;
      worst = std::max(worst, std::abs(stability(seq) - std::exp(-d)));
    }
    o.require(worst <= 1e-12, fmt("max error %.3g", worst));
    o.note(fmt("max |S - exp(-d)| = %.3g", worst));
  });

  criterion(4, "composition graph matches the pairwise oracle", 1.0, [](Outcome& o) {
    const auto vocab = builtin_vocabulary();
    const CompositionGraph g = derive_composition_graph(vocab);
    std::size_t expected = 0, disagreements = 0;
    for (const auto& a : vocab)
      for (const auto& b : vocab) {
        const bool edge = oracle::implies(a.q, b.p);
        expected += edge;
        disagreements += g.has_edge(a.skill_id, b.skill_id) != edge;
      }
    o.require(disagreements == 0 && g.edges.size() == expected, fmt("%.0f disagreements", double(disagreements)));
    o.require(g.has_edge("GraspPart", "Align") && g.has_edge("Align", "Insert"), "GraspPart>Align>Insert path");
    o.note(fmt("%.0f edges over %.0f skills", double(g.edges.size()), double(g.nodes.size())));
  });

  criterion(5, "wrong-part policy: coarse vs fine success", 30.0, [](Outcome& o) {
    const GranularityGap g = granularity_gap(rollouts(fixtures::task("grasp_cap"), "builtin:wrong_part", 100, 51));
    o.require(g.coarse >= 95.0, fmt("coarse %.1f < 95", g.coarse));
    o.require(g.fine <= 5.0, fmt("fine %.1f > 5", g.fine));
    o.note(fmt("coarse %.1f%%, fine %.1f%% over 100 trials", g.coarse, g.fine));
  });

  criterion(6, "arrest after stage 2 on four-stage sorting", 60.0, [](Outcome& o) {
    const BehaviorProfile b =
        behavior_profile(rollouts(fixtures::task("sort_cubes"), "builtin:arrest_after_stage?arrest_stage=1", 50, 61));
    o.require(b.stage_sr.size() == 4, "four stages");
    if (b.stage_sr.size() != 4) return;
    o.require(b.stage_sr[0] > 0 && b.stage_sr[1] > 0, "early stages succeed");
    o.require(b.stage_sr[2] == 0 && b.stage_sr[3] == 0, "late stages exactly zero");
    o.require(b.median_collapse_step.has_value(), "collapse step detected");
    o.note(fmt("stage SR %.0f/%.0f/%.0f/%.0f", b.stage_sr[0], b.stage_sr[1], b.stage_sr[2], b.stage_sr[3]));
    if (b.median_collapse_step) o.note(fmt("median collapse step %.0f", *b.median_collapse_step));
  });

  criterion(7, "drift vs convergence dissociation", 300.0, [](Outcome& o) {
    const TaskSpec peg = fixtures::task("peg_in_hole");
    const auto det = rollouts(peg, "builtin:deterministic_biased", 50, 71, PerturbationKind::Geometric, 2);
    std::vector<double> dc_det, norms;
    for (const auto& tr : det) {
      const auto acts = action_vectors(tr);
      if (auto dc = directional_consistency(acts)) dc_det.push_back(*dc);
      for (const auto& a : acts) norms.push_back(action_norm(a));
    }
    const double step = mean(norms);
    const auto drift = rollouts(peg, "builtin:stochastic_drift?sigma=" + fmt("%.6g", step), 50, 72, PerturbationKind::Geometric, 2);
    std::vector<double> dc_drift;
    for (const auto& tr : drift)
      if (auto dc = directional_consistency(action_vectors(tr))) dc_drift.push_back(*dc);
    const double a = mean(dc_det), b = mean(dc_drift);
    o.require(a >= 0.8, fmt("deterministic DC %.3f < 0.8", a));
    o.require(b <= 0.5, fmt("drift DC %.3f > 0.5", b));
    o.note(fmt("DC deterministic %.3f, drift %.3f (sigma %.4g m)", a, b, step));

    // Pure drift: displacement variance against horizon.
    const TaskSpec t = fixtures::task("grasp_cap");
    const Configuration c = default_configuration(t);
    const double sigma = 0.002;
    const int n = 1000;
    const std::vector<int> horizons{10, 20, 30, 40};
    std::vector<double> var(horizons.size(), 0.0);
    std::vector<std::array<double, 3>> s1(horizons.size(), {0, 0, 0}), s2(horizons.size(), {0, 0, 0});
    for (int i = 0; i < n; ++i) {
      const RolloutTrace tr = fixtures::run(t, "builtin:stochastic_drift?kappa=1e-06&sigma=0.002", c,
                                            static_cast<std::uint64_t>(i), {}, horizons.back());
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        const Vec3 d = tr.steps.at(static_cast<std::size_t>(horizons[h] - 1)).ee.position - t.scene_init.ee_home.position;
        for (int k = 0; k < 3; ++k) {
          s1[h][static_cast<std::size_t>(k)] += d[k];
          s2[h][static_cast<std::size_t>(k)] += d[k] * d[k];
        }
      }
    }
    for (std::size_t h = 0; h < horizons.size(); ++h)
      for (std::size_t k = 0; k < 3; ++k) var[h] += (s2[h][k] / n - (s1[h][k] / n) * (s1[h][k] / n)) / 3.0;
    double mt = 0.0, mv = 0.0;
    for (std::size_t h = 0; h < horizons.size(); ++h) mt += horizons[h] / 4.0, mv += var[h] / 4.0;
    double num = 0.0, den = 0.0;
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      num += (horizons[h] - mt) * (var[h] - mv);
      den += (horizons[h] - mt) * (horizons[h] - mt);
    }
    const double ratio = (num / den) / (sigma * sigma);
    o.require(std::abs(ratio - 1.0) <= 0.2, fmt("variance slope ratio %.3f", ratio));
    o.note(fmt("variance slope / sigma^2 = %.3f", ratio));
  });

  criterion(8, "dose-response on grasp-part", 300.0, [](Outcome& o) {
    const TaskSpec t = fixtures::task("grasp_cap");
    const int n = 200;
    for (PerturbationKind kind : {PerturbationKind::Geometric, PerturbationKind::Photometric}) {
      std::vector<double> sr;
      for (int level = 0; level <= 3; ++level) {
        const PerturbationKind k = level == 0 ? PerturbationKind::None : kind;
        sr.push_back(success_rate(rollouts(t, "builtin:deterministic_biased", n, 81, k, level), Criterion::fine()));
      }
      for (std::size_t l = 1; l < sr.size(); ++l) {
        const double p0 = sr[l - 1] / 100.0, p1 = sr[l] / 100.0;
        const double slack = 200.0 * std::sqrt((p0 * (1 - p0) + p1 * (1 - p1)) / n);
        o.require(sr[l] <= sr[l - 1] + slack,
                  std::string(perturbation_kind_name(kind)) + fmt(" L%.0f rises %.1f -> %.1f", double(l), sr[l - 1], sr[l]));
      }
      o.note(std::string(perturbation_kind_name(kind)) + fmt(" %.1f/%.1f/%.1f/%.1f", sr[0], sr[1], sr[2], sr[3]));
    }
  });

  criterion(9, "PPI on the synthetic calibration world", 600.0, [](Outcome& o) {
    const SyntheticWorld world{0.65, 0.1};
    Rng rng(derive_seed(9, "acceptance/ppi"));
    const int reps = 1000;
    int wins = 0, covered = 0;
    std::vector<double> estimates;
    for (int r = 0; r < reps; ++r) {
      std::vector<double> ppi, hw;
      for (int set = 0; set < 3; ++set) {
        const auto p = world.paired(20, rng);
        const auto u = world.unpaired(1000, rng);
        if (set == 0) covered += ppi_interval(p, u, 0.05).interval->contains(world.p_star);
        ppi.push_back(ppi_estimate(p, u).estimate);
        hw.push_back(hardware_only_estimate(p) / 100.0);
      }
      estimates.insert(estimates.end(), ppi.begin(), ppi.end());
      wins += sd(ppi) < sd(hw);
    }
    const double m = mean(estimates);
    o.require(std::abs(m - 0.65) <= 0.01, fmt("mean %.4f", m));
    o.require(wins >= 0.9 * reps, fmt("dispersion wins %.0f/1000", wins));
    o.require(covered >= 0.95 * reps, fmt("coverage %.0f/1000", covered));

    double w_small = 0.0, w_large = 0.0;
    for (int r = 0; r < 20; ++r) {
      const auto p = world.paired(20, rng);
      w_small += ppi_interval(p, world.unpaired(50, rng), 0.05).interval->width() / 20.0;
      w_large += ppi_interval(p, world.unpaired(5000, rng), 0.05).interval->width() / 20.0;
    }
    o.require(w_large < w_small, fmt("width N=5000 %.3f vs N=50 %.3f", w_large, w_small));
    o.note(fmt("mean %.4f, dispersion wins %.1f%%, coverage %.1f%%", m, wins / 10.0, covered / 10.0));
    o.note(fmt("width N=50 %.3f, N=5000 %.3f", w_small, w_large));
  });

  criterion(10, "PPI point arithmetic", 10.0, [](Outcome& o) {
    const CalibratedEstimate a = ppi_estimate({{1, 0}, {1, 1}, {0, 1}}, {{1, 1, 0, 1}, {0, 1, 2, 3}});
    const CalibratedEstimate b = ppi_estimate({{0, 0}, {1, 1}, {0, 1}}, {{1, 1, 1, 1}, {0, 1, 2, 3}});
    o.require(a.estimate == 0.25, fmt("first example %.17g", a.estimate));
    o.require(b.estimate == 0.0, fmt("second example %.17g", b.estimate));
    Rng rng(10);
    int exact = 0;
    for (int i = 0; i < 10000; ++i) {
      PairedSet p;
      UnpairedSet u;
      const int n = 1 + static_cast<int>(rng.below(30)), N = 1 + static_cast<int>(rng.below(200));
      for (int k = 0; k < n; ++k) {
        p.y.push_back(rng.uniform());
        p.f.push_back(rng.uniform());
        p.ids.push_back(k);
      }
      for (int k = 0; k < N; ++k) {
        u.f.push_back(rng.uniform());
        u.ids.push_back(n + k);
      }
      const CalibratedEstimate e = ppi_estimate(p, u);
      exact += e.estimate == e.rectifier + e.sim_mean;
    }
    o.require(exact == 10000, fmt("%.0f/10000 decompositions exact", exact));
    o.note(fmt("examples %.2f and %.2f, %.0f/10000 decompositions exact", a.estimate, b.estimate, exact));
  });

  criterion(11, "adapter round trip and unmappable goal", 30.0, [](Outcome& o) {
    const auto doc = [](const std::string& name) {
      return fixtures::read_json(std::string(METAFINE_DATA_DIR) + "/adapter/" + name + ".json");
    };
    AssetLibrary lib = fixtures::library();
    const AdaptResult drawer = adapt(doc("robotwin_open_drawer"), lib, fixtures::registry());
    std::string chain;
    for (const auto& s : drawer.report.chain) chain += (chain.empty() ? "" : ">") + s.at("skill").get<std::string>();
    o.require(drawer.task.has_value() && chain == "GraspPart>SlideAlong", "drawer chain " + chain);
    const RoundtripVerdict v = roundtrip_check(doc("robotwin_open_drawer"), fixtures::task("open_drawer"),
                                               fixtures::library(), fixtures::registry(), "builtin:oracle", 10, 2024);
    o.require(v.equivalent && v.trials == 10, "drawer trace equivalence");
    AssetLibrary lib2 = fixtures::library();
    const AdaptResult pour = adapt(doc("libero_pour_water"), lib2, fixtures::registry());
    const bool flagged = !pour.task && !pour.report.flags.empty() &&
                         pour.report.flags.front().at("kind") == "vocabulary_extension";
    o.require(flagged, "pouring flagged as vocabulary extension");
    o.note("drawer " + chain + fmt(", %.0f/10 trials identical", v.equivalent ? 10 : 0) +
           (flagged ? ", pouring rejected" : ""));
  });

  criterion(12, "campaign determinism", 300.0, [](Outcome& o) {
    const fs::path root = fs::temp_directory_path() / "metafine_acceptance_campaign";
    fs::remove_all(root);
    const json config{{"tasks", {"grasp_cap", "peg_in_hole"}},
                      {"policies", {"builtin:deterministic_biased", "builtin:stochastic_drift?sigma=0.004"}},
                      {"perturbations", {{{"kind", "geometric"}, {"levels", {1, 2, 3}}}}},
                      {"trials", 10},
                      {"seed", 12},
                      {"assets", std::string(METAFINE_DATA_DIR) + "/assets"},
                      {"task_dir", std::string(METAFINE_DATA_DIR) + "/tasks"}};
    std::vector<std::map<std::string, std::string>> runs;
    for (const char* name : {"a", "b"}) {
      json c = config;
      c["output"] = (root / name).string();
      const CampaignSummary s = run_campaign(parse_campaign_config(c));
      o.require(s.errors() == 0, "no error cells");
      emit_report(s.directory);
      auto files = tree(s.directory);
      files.erase("manifest.json");  // carries wall-clock timestamps
      runs.push_back(std::move(files));
    }
    std::size_t traces = 0;
    for (const auto& [name, _] : runs[0]) traces += name.rfind("traces", 0) == 0;
    o.require(runs[0] == runs[1], "trace and report files differ between runs");
    o.require(traces == 16, fmt("%.0f trace files", double(traces)));
    o.note(fmt("%.0f files byte-identical across two runs", double(runs[0].size())));
    fs::remove_all(root);
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures ? 1 : 0;
}
