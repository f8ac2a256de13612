#include <chrono>
#include <cmath>
#include <functional>
#include <set>

#include "doctest.h"
#include "metafine/error.hpp"
#include "support.hpp"

using namespace metafine;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

std::string fixture(const std::string& name) { return std::string(METAFINE_FIXTURE_DIR) + "/" + name; }
std::string reference_policy(const std::string& name) { return std::string(METAFINE_POLICY_DIR) + "/" + name; }

std::vector<Action> first_chunk(const TaskSpec& t, Policy& policy, const Configuration& config, std::uint64_t seed = 1) {
  const Scene scene(t, fixtures::library());
  const WorldState w = scene.reset(config);
  Rng noise(0);
  policy.reset(t, fixtures::library(), seed);
  return policy.act(scene.observe(w, {}, noise), w);
}

json steps_json(const RolloutTrace& t) { return json(t)["steps"]; }

}  // namespace

TEST_CASE("policy specs parse into canonical identifiers") {
  const SyntheticParams p = parse_builtin_spec("builtin:deterministic_biased?kappa=0.25&bias=0.01,0,-0.02&chunk=4");
  CHECK(p.family == PolicyFamily::DeterministicBiased);
  CHECK(p.kappa == 0.25);
  CHECK(p.bias == Vec3(0.01, 0.0, -0.02));
  CHECK(p.chunk == 4);
  CHECK(policy_spec_id("builtin:deterministic_biased?kappa=0.5") == "builtin:deterministic_biased");
  CHECK(policy_spec_id("builtin:stochastic_drift?sigma=0.003&kappa=0.4") ==
        "builtin:stochastic_drift?kappa=0.4&sigma=0.003");
  CHECK(policy_spec_id("builtin:arrest_after_stage?stage=1") == "builtin:arrest_after_stage?arrest_stage=1");
  CHECK(make_policy("builtin:oracle?chunk=3")->chunk() == 3);

  CHECK(code_of([] { make_policy("builtin:deterministic_biased?kappa=0"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("builtin:deterministic_biased?kappa=1.5"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("builtin:stochastic_drift?sigma=-1"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("builtin:oracle?chunk=0"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("builtin:teleport"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("builtin:oracle?speed=2"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { make_policy("remote:x"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("biased servo takes a kappa-scaled first step toward the perceived target") {
  const TaskSpec t = fixtures::task("grasp_cap");
  // Pre-grasp point is 5 cm above the cap; placing the bottle here puts it
  // exactly 10 cm along +x from the home pose (0, 0, 0.3).
  Configuration c = default_configuration(t);
  c.objects["bottle"] = Pose(Vec3(0.1, 0.0, 0.3 - 0.175 - 0.05), Quat::Identity());

  auto policy = make_policy("builtin:deterministic_biased?kappa=0.5");
  const auto chunk = first_chunk(t, *policy, c);
  REQUIRE(chunk.size() == 1);
  CHECK((chunk[0].translation() - Vec3(0.05, 0.0, 0.0)).norm() < 1e-12);
  CHECK(chunk[0].grip == Grip::Hold);

  auto biased = make_policy("builtin:deterministic_biased?kappa=0.5&bias=0,0.02,0");
  CHECK((first_chunk(t, *biased, c)[0].translation() - Vec3(0.05, 0.01, 0.0)).norm() < 1e-12);

  // Large errors clip per component.
  auto hasty = make_policy("builtin:deterministic_biased?kappa=1");
  CHECK((first_chunk(t, *hasty, default_configuration(t))[0].translation() - Vec3(0.05, 0.0, -0.05)).norm() < 1e-12);
}

TEST_CASE("chunked policies return K actions and still complete") {
  const TaskSpec t = fixtures::task("peg_in_hole");
  auto policy = make_policy("builtin:deterministic_biased?chunk=8");
  CHECK(first_chunk(t, *policy, default_configuration(t)).size() == 8);
  CHECK(fixtures::run(t, "builtin:deterministic_biased?chunk=8", default_configuration(t), 3).completed());
}

TEST_CASE("drift with zero noise is the deterministic policy") {
  for (const char* name : {"grasp_cap", "peg_in_hole", "open_drawer"}) {
    const TaskSpec t = fixtures::task(name);
    const auto p = make_perturbation(PerturbationKind::Geometric, 1, 4);
    const RolloutTrace det = fixtures::run(t, "builtin:deterministic_biased", default_configuration(t), 9, p);
    const RolloutTrace drift =
        fixtures::run(t, "builtin:stochastic_drift?sigma=0", default_configuration(t), 9, p);
    CHECK(steps_json(det) == steps_json(drift));
    CHECK(json(det)["verdicts"] == json(drift)["verdicts"]);
  }
}

TEST_CASE("biased servo settles at target plus bias") {
  const TaskSpec t = fixtures::task("grasp_cap");
  const Configuration c = default_configuration(t);
  const Vec3 cap = c.objects.at("bottle").apply(Vec3(0.0, 0.0, 0.175));
  const double eps_pos = 0.005;
  for (const Vec3& b : {Vec3(0.004, 0.0, 0.0), Vec3(0.0, -0.01, 0.0), Vec3(0.03, 0.02, 0.01)}) {
    const std::string spec = "builtin:deterministic_biased?bias=" + std::to_string(b.x()) + "," +
                             std::to_string(b.y()) + "," + std::to_string(b.z());
    const RolloutTrace tr = fixtures::run(t, spec, c, 2, {}, 120);
    const auto close = std::find_if(tr.steps.begin(), tr.steps.end(),
                                    [](const StepRecord& s) { return s.action.grip == Grip::Close; });
    REQUIRE(close != tr.steps.end());
    CHECK((close->ee.position - (cap + b)).norm() <= eps_pos / 10.0);
  }
}

TEST_CASE("arrest policy stops acting once its stage is done") {
  const TaskSpec t = fixtures::task("sort_cubes");
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const RolloutTrace tr = fixtures::run(t, "builtin:arrest_after_stage?arrest_stage=1", default_configuration(t),
                                          seed, {}, 300);
    REQUIRE(tr.verdicts.size() == 4);
    CHECK(tr.verdicts[0].status == StageStatus::Passed);
    CHECK(tr.verdicts[1].status == StageStatus::Passed);
    CHECK(tr.verdicts[2].status == StageStatus::Failed);
    CHECK(tr.verdicts[3].status == StageStatus::NotReached);
    CHECK(tr.terminal == Terminal::StepBudgetExhausted);
    CHECK(tr.steps.size() == 300);
    const int after = tr.verdicts[1].step;
    for (std::size_t i = static_cast<std::size_t>(after); i < tr.steps.size(); ++i) {
      double sq = 0.0;
      for (double d : tr.steps[i].action.delta) sq += d * d;
      CHECK(std::sqrt(sq) <= 1e-4);
    }
  }
}

TEST_CASE("wrong-part grasps satisfy the coarse criterion only") {
  const TaskSpec t = fixtures::task("grasp_cap");
  const auto configs = sample_configurations(eval_distribution(t), fixtures::library(), 10, 4);
  for (const auto& c : configs) {
    const RolloutTrace tr = fixtures::run(t, "builtin:wrong_part", c, 1);
    CHECK(tr.verdicts[0].status == StageStatus::Failed);
    CHECK(tr.verdicts[0].coarse_pass);
    CHECK(tr.terminal == Terminal::ConstraintViolated);
  }
}

TEST_CASE("pure drift variance grows linearly with the step count") {
  const TaskSpec t = fixtures::task("grasp_cap");
  const Configuration c = default_configuration(t);
  const double sigma = 0.002;
  const int n = 1000;
  const std::vector<int> horizons{10, 20, 30, 40};
  std::vector<double> var(horizons.size(), 0.0);
  std::vector<std::array<double, 3>> sum(horizons.size(), {0, 0, 0}), sum_sq(horizons.size(), {0, 0, 0});
  for (int i = 0; i < n; ++i) {
    const RolloutTrace tr = fixtures::run(t, "builtin:stochastic_drift?kappa=1e-06&sigma=0.002", c,
                                          static_cast<std::uint64_t>(i), {}, horizons.back());
    REQUIRE(static_cast<int>(tr.steps.size()) == horizons.back());
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      const Vec3 d = tr.steps[static_cast<std::size_t>(horizons[h] - 1)].ee.position - t.scene_init.ee_home.position;
      for (int k = 0; k < 3; ++k) {
        sum[h][static_cast<std::size_t>(k)] += d[k];
        sum_sq[h][static_cast<std::size_t>(k)] += d[k] * d[k];
      }
    }
  }
  for (std::size_t h = 0; h < horizons.size(); ++h)
    for (std::size_t k = 0; k < 3; ++k) {
      const double m = sum[h][k] / n;
      var[h] += (sum_sq[h][k] / n - m * m) / 3.0;
    }
  // Least-squares slope of variance against T.
  double mt = 0.0, mv = 0.0;
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    mt += horizons[h];
    mv += var[h];
  }
  mt /= horizons.size();
  mv /= horizons.size();
  double num = 0.0, den = 0.0;
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    num += (horizons[h] - mt) * (var[h] - mv);
    den += (horizons[h] - mt) * (horizons[h] - mt);
  }
  const double slope = num / den;
  CHECK(std::abs(slope - sigma * sigma) <= 0.2 * sigma * sigma);
}

TEST_CASE("demonstrations come from successful oracle rollouts") {
  const TaskSpec grasp = fixtures::task("grasp_cap");
  const auto demos = generate_demonstrations(grasp, fixtures::library(), 10, 42);
  REQUIRE(demos.size() == 10);
  std::set<int> configs;
  for (const auto& d : demos) {
    CHECK(d.completed());
    CHECK(d.condition == "demonstration");
    configs.insert(d.config_id);
  }
  CHECK(configs.size() == 10);
  const auto again = generate_demonstrations(grasp, fixtures::library(), 10, 42);
  for (std::size_t i = 0; i < demos.size(); ++i) CHECK(json(demos[i]).dump() == json(again[i]).dump());

  const TaskSpec peg = fixtures::task("peg_in_hole");
  const auto peg_demos = generate_demonstrations(peg, fixtures::library(), 3, 7);
  REQUIRE(peg_demos.size() == 3);
  for (const auto& d : peg_demos) {
    REQUIRE(d.verdicts.size() == 3);
    const auto& insert = d.verdicts[2];
    CHECK(insert.status == StageStatus::Passed);
    for (const auto& a : insert.atoms)
      if (a.name == "inserted") CHECK(a.measured.at("depth") >= 0.02 - 0.002);
  }

  CHECK(generate_demonstrations(grasp, fixtures::library(), 0, 1).empty());
  CHECK(code_of([&] { generate_demonstrations(grasp, fixtures::library(), -1, 1); }) == ErrorCode::InvalidArgument);
  try {
    generate_demonstrations(grasp, fixtures::library(), 2, 1, 5);
    FAIL("expected PlannerBudgetExhausted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PlannerBudgetExhausted);
    CHECK(std::string(e.what()).find("stage 0 (GraspPart): 16") != std::string::npos);
  }
}

TEST_CASE("replaying a demonstration reproduces it") {
  for (const char* name : {"grasp_cap", "peg_in_hole", "open_lid"}) {
    const TaskSpec t = fixtures::task(name);
    for (const auto& d : generate_demonstrations(t, fixtures::library(), 2, 11)) {
      const RolloutTrace r = replay_trace(d, t, fixtures::library());
      CHECK(steps_json(r) == steps_json(d));
      CHECK(json(r)["verdicts"] == json(d)["verdicts"]);
      CHECK(r.terminal == d.terminal);
    }
  }
}

TEST_CASE("external echo policy answers with zero actions") {
  auto policy = spawn_external({reference_policy("echo_policy.py")}, 3);
  CHECK(policy->id() == "external:" + reference_policy("echo_policy.py"));
  const TaskSpec t = fixtures::task("grasp_cap");
  const auto chunk = first_chunk(t, *policy, default_configuration(t));
  REQUIRE(chunk.size() == 3);
  for (const auto& a : chunk) {
    CHECK(a.delta == std::array<double, 6>{});
    CHECK(a.grip == Grip::Hold);
  }
  const RolloutTrace tr = fixtures::run(t, "external:" + reference_policy("echo_policy.py"), default_configuration(t), 1,
                                        {}, 5);
  CHECK(tr.steps.size() == 5);
  CHECK(tr.terminal == Terminal::StepBudgetExhausted);
}

TEST_CASE("external reference grasp policy completes the cap grasp") {
  const TaskSpec t = fixtures::task("grasp_cap");
  const std::string spec = "external:" + reference_policy("oracle_policy.py") + " bottle 0 0 0.175 0 0 -1";
  for (const auto& c : sample_configurations(eval_distribution(t), fixtures::library(), 3, 5)) {
    const RolloutTrace tr = fixtures::run(t, spec, c, 1);
    CHECK(tr.completed());
    CHECK(tr.policy_id == spec);
  }
}

TEST_CASE("external handshake failures") {
  CHECK(code_of([] { spawn_external({fixture("old_version_policy.py")}); }) == ErrorCode::VersionMismatch);
  CHECK(code_of([] { spawn_external({fixture("malformed_policy.py")}); }) == ErrorCode::PolicyProtocolError);
  CHECK(code_of([] { spawn_external({fixture("no_such_policy")}); }) == ErrorCode::SpawnFailure);
  CHECK(code_of([] { spawn_external({}); }) == ErrorCode::SpawnFailure);

  const auto start = std::chrono::steady_clock::now();
  CHECK(code_of([] { spawn_external({fixture("silent_policy.py")}, 1, 300); }) == ErrorCode::HandshakeTimeout);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
}

TEST_CASE("malformed external replies are protocol errors, never silent zeros") {
  const TaskSpec t = fixtures::task("grasp_cap");
  for (const char* mode : {"short", "grip", "empty", "too_many", "mute", "exit", "oops"}) {
    auto policy = spawn_external({fixture("bad_action_policy.py"), mode}, 2, 300);
    CHECK_MESSAGE(code_of([&] { first_chunk(t, *policy, default_configuration(t)); }) == ErrorCode::PolicyProtocolError,
                  mode);
  }
}

TEST_CASE("action JSON validation") {
  CHECK(action_from_json(json::array({0.01, 0, 0, 0, 0, 5, 1})).grip == Grip::Close);
  CHECK(action_json(action_from_json(json::array({0.01, 0, 0, 0, 0, 5, -1}))) ==
        json::array({0.01, 0.0, 0.0, 0.0, 0.0, 5.0, -1}));
  CHECK(code_of([] { action_from_json(json::array({0, 0, 0, 0, 0, "x", 0})); }) == ErrorCode::PolicyProtocolError);
  CHECK(code_of([] { action_from_json(json::array({0, 0, 0, 0, 0, 0, 0.5})); }) == ErrorCode::PolicyProtocolError);
  CHECK(code_of([] { action_from_json(json::object()); }) == ErrorCode::PolicyProtocolError);
}

TEST_CASE("observation messages carry wxyz poses") {
  Observation o;
  o.step = 3;
  o.instruction = "grasp the cap of the bottle";
  o.poses["bottle"] = Pose(Vec3(0.3, 0.0, 0.0), yaw_quat(90.0));
  o.ee = Pose(Vec3(0.0, 0.0, 0.3), Quat::Identity());
  const json m = observation_message(o);
  CHECK(m["type"] == "obs");
  CHECK(m["step"] == 3);
  CHECK(m["gripper"] == "open");
  CHECK(m["ee"] == json::array({0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0}));
  CHECK(m["poses"]["bottle"][3].get<double>() == doctest::Approx(std::sqrt(0.5)));
  CHECK(m["poses"]["bottle"][6].get<double>() == doctest::Approx(std::sqrt(0.5)));
}
