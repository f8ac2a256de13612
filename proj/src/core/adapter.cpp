#include "metafine/adapter.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "metafine/diagnostics.hpp"
#include "metafine/error.hpp"
#include "metafine/policy.hpp"

namespace metafine {

namespace {

const std::set<std::string> kHandPredicates{"hand-free", "in-hand", "grasp-stable", "contact-at"};
const std::set<std::string> kToleranceKeys{"eps_pos", "eps_ang", "eps_clear", "eps_axis"};

Atom strip(const Atom& a) { return Atom{a.name, a.args, {}}; }

Conjunction strip(const Conjunction& c) {
  Conjunction out;
  for (const auto& a : c) out.push_back(strip(a));
  return out;
}

std::string state_key(const Conjunction& s) {
  std::string k;
  for (const auto& a : s) k += to_string(a) + ";";
  return k;
}

// Search states carry stripped atoms, so implication is plain membership.
bool holds(const Conjunction& state, const Conjunction& goal) {
  return std::all_of(goal.begin(), goal.end(), [&](const Atom& g) {
    return std::find(state.begin(), state.end(), strip(g)) != state.end();
  });
}

void normalize(Conjunction& s) {
  std::sort(s.begin(), s.end(), [](const Atom& a, const Atom& b) { return to_string(a) < to_string(b); });
  s.erase(std::unique(s.begin(), s.end()), s.end());
}

Conjunction apply_effects(const Conjunction& state, const Conjunction& q) {
  const bool touches_hand =
      std::any_of(q.begin(), q.end(), [](const Atom& a) { return kHandPredicates.count(a.name) > 0; });
  Conjunction next;
  for (const auto& a : state)
    if (!touches_hand || !kHandPredicates.count(a.name)) next.push_back(a);
  for (const auto& a : q) next.push_back(a);
  normalize(next);
  return next;
}

// Geometry, colour and part layout; provenance and annotations beyond parts are ignored.
json geometry_signature(const AssetRecord& a) {
  const json j = a;
  json parts = json::array();
  for (const auto& p : j.at("parts")) parts.push_back({{"part_id", p.at("part_id")}, {"kind", p.at("kind")}, {"region", p.at("region")}});
  return json{{"shapes", j.at("shapes")}, {"parts", parts}, {"color", j.value("color", json())}};
}

std::string fresh_id(const AssetLibrary& library, const std::set<std::string>& taken, const std::string& base) {
  if (!library.find(base) && !taken.count(base)) return base;
  for (int i = 2;; ++i) {
    const std::string id = base + "_" + std::to_string(i);
    if (!library.find(id) && !taken.count(id)) return id;
  }
}

struct Ingested {
  std::string name;
  std::string object_id;  // id the task will reference
  AssetRecord record;     // as it stands before backfill
  bool reused = false;
  std::set<AnnotationKind> backfillable;
  AssetRecord provisional;  // with every backfillable kind filled in, for search
};

struct Step {
  std::string skill;
  Bindings bindings;
};

struct Candidates {
  std::map<ArgKind, std::vector<std::string>> by_kind;
};

bool has_part_annotation(const AssetRecord& a, const std::string& part, AnnotationKind kind) {
  switch (kind) {
    case AnnotationKind::GraspPose:
      return !a.grasps_for(part).empty();
    case AnnotationKind::ActuationAxis:
    case AnnotationKind::HingeAxis: {
      const ConstraintKind ck =
          kind == AnnotationKind::ActuationAxis ? ConstraintKind::ActuationAxis : ConstraintKind::HingeAxis;
      bool any_named = false;
      for (const auto& c : a.constraints)
        if (c.kind == ck && !c.part_id.empty()) {
          any_named = true;
          if (c.part_id == part) return true;
        }
      return !any_named;
    }
    default:
      return true;
  }
}

// Enumerates slot bindings in lexicographic order of candidate lists.
void enumerate_bindings(const SkillSpec& skill, const Candidates& cand, const std::map<std::string, const Ingested*>& objects,
                        std::size_t slot, Bindings& current, std::vector<Bindings>& out) {
  if (slot == skill.slots.size()) {
    out.push_back(current);
    return;
  }
  const SlotDecl& decl = skill.slots[slot];
  std::vector<std::string> options;
  if (decl.kind == ArgKind::Part) {
    const auto obj = current.find("O");
    if (obj == current.end()) return;
    const AssetRecord& rec = objects.at(obj->second)->provisional;
    for (const auto& p : rec.parts) {
      bool ok = true;
      for (auto k : skill.required_annotations) ok = ok && has_part_annotation(rec, p.part_id, k);
      if (ok) options.push_back(p.part_id);
    }
    std::sort(options.begin(), options.end());
  } else if (auto it = cand.by_kind.find(decl.kind); it != cand.by_kind.end()) {
    options = it->second;
  }
  for (const auto& o : options) {
    current[decl.var] = o;
    enumerate_bindings(skill, cand, objects, slot + 1, current, out);
  }
  current.erase(decl.var);
}

using ChainCost = std::function<std::pair<int, int>(const std::vector<Step>&)>;

// Breadth-first over stripped states. Every chain reaching the goal in the first
// successful layer is a candidate; the cheapest wins and ties keep search order.
std::optional<std::vector<Step>> search_chain(const Conjunction& goal, const std::vector<const SkillSpec*>& skills,
                                              const Candidates& cand,
                                              const std::map<std::string, const Ingested*>& objects,
                                              const ChainCost& cost) {
  struct Node {
    Conjunction state;
    std::vector<Step> path;
  };
  Node root{{Atom{"hand-free", {}, {}}}, {}};
  if (holds(root.state, goal)) return root.path;
  std::set<std::string> visited{state_key(root.state)};
  std::vector<Node> layer{root};
  constexpr std::size_t kMaxExpansions = 200000;
  std::size_t expansions = 0;
  for (int depth = 1; depth <= kAdapterMaxDepth && !layer.empty(); ++depth) {
    std::vector<Node> next;
    std::vector<std::vector<Step>> found;
    for (const Node& node : layer) {
      if (++expansions > kMaxExpansions) return std::nullopt;
      for (const SkillSpec* skill : skills) {
        std::vector<Bindings> bindings;
        Bindings cur;
        enumerate_bindings(*skill, cand, objects, 0, cur, bindings);
        for (const auto& b : bindings) {
          if (const auto o = b.find("O"); o != b.end())
            if (!supports_skill(objects.at(o->second)->provisional, *skill).supported) continue;
          if (!holds(node.state, substitute(strip(skill->p), b))) continue;
          Node child{apply_effects(node.state, substitute(strip(skill->q), b)), node.path};
          child.path.push_back({skill->skill_id, b});
          if (holds(child.state, goal)) {
            found.push_back(std::move(child.path));
          } else if (visited.insert(state_key(child.state)).second) {
            next.push_back(std::move(child));
          }
        }
      }
    }
    if (!found.empty()) {
      std::size_t best = 0;
      auto best_cost = cost(found[0]);
      for (std::size_t i = 1; i < found.size(); ++i)
        if (const auto c = cost(found[i]); c < best_cost) {
          best = i;
          best_cost = c;
        }
      return found[best];
    }
    layer = std::move(next);
  }
  return std::nullopt;
}

std::string rename(const std::map<std::string, std::string>& names, const std::string& s) {
  const auto it = names.find(s);
  return it == names.end() ? s : it->second;
}

json flag(const std::string& kind, const std::string& detail) { return json{{"kind", kind}, {"detail", detail}}; }

}  // namespace

AdaptResult adapt(const json& doc, AssetLibrary& library, const SkillRegistry& registry) {
  AdaptResult result;
  AdapterReport& rep = result.report;
  rep.ingestion = json::array();
  rep.skills = json::object();
  rep.backfills = json::array();
  rep.chain = json::array();
  rep.flags = json::array();

  std::vector<Ingested> ingested;
  std::map<std::string, std::string> names;  // doc name -> library id
  struct GoalAtom {
    Atom atom;
    std::map<std::string, double> params;
  };
  std::vector<GoalAtom> goal;
  json scene;
  ToleranceSet task_tol;
  try {
    rep.task_id = doc.at("task_id").get<std::string>();
    rep.suite = doc.value("suite", std::string("external"));
    rep.robot = doc.value("robot", json::object());
    scene = doc.at("scene");
    task_tol = doc.value("tolerances", ToleranceSet{});

    // Stage 1: assets and robot.
    std::set<std::string> taken;
    for (const auto& o : doc.at("objects")) {
      Ingested ing;
      ing.name = o.at("name").get<std::string>();
      json rec = o;
      rec.erase("name");
      rec["object_id"] = ing.name;
      ing.record = rec.get<AssetRecord>();
      if (const auto issues = validate_asset(ing.record); !issues.empty())
        fail(ErrorCode::SchemaViolation, "object '" + ing.name + "': " + issues.front());
      const json sig = geometry_signature(ing.record);
      for (const auto& [id, existing] : library.records())
        if (!taken.count(id) && geometry_signature(existing) == sig) {
          ing.object_id = id;
          ing.record = existing;
          ing.reused = true;
          break;
        }
      if (!ing.reused) {
        ing.object_id = fresh_id(library, taken, ing.name);
        ing.record.object_id = ing.object_id;
      }
      taken.insert(ing.object_id);
      if (names.count(ing.name)) fail(ErrorCode::SchemaViolation, "object name '" + ing.name + "' repeated");
      names[ing.name] = ing.object_id;
      rep.ingestion.push_back(
          {{"name", ing.name}, {"object_id", ing.object_id}, {"action", ing.reused ? "reused" : "registered"}});
      ingested.push_back(std::move(ing));
    }

    for (const auto& g : doc.at("goal")) {
      GoalAtom ga;
      ga.atom.name = g.at("predicate").get<std::string>();
      for (const auto& a : g.at("args")) ga.atom.args.push_back(rename(names, a.get<std::string>()));
      ga.params = g.value("params", std::map<std::string, double>{});
      goal.push_back(std::move(ga));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaViolation, std::string("external task document: ") + e.what());
  }

  for (const auto& g : goal) {
    const PredicateInfo* info = find_predicate(g.atom.name);
    if (!info) {
      rep.flags.push_back(flag("vocabulary_extension", "goal predicate '" + g.atom.name +
                                                           "' is outside the skill vocabulary"));
      continue;
    }
    if (info->args.size() != g.atom.args.size())
      fail(ErrorCode::SchemaViolation, "goal '" + g.atom.name + "' expects " + std::to_string(info->args.size()) +
                                           " arguments");
    for (const auto& [k, v] : g.params) {
      (void)v;
      const bool known = std::any_of(info->params.begin(), info->params.end(), [&](const ParamSpec& p) { return p.key == k; });
      if (!known) fail(ErrorCode::SchemaViolation, "goal '" + g.atom.name + "' has no parameter '" + k + "'");
    }
  }
  if (!rep.flags.empty()) return result;

  // Stage 2: which skills each asset supports as it stands.
  std::vector<const SkillSpec*> skills;
  for (const auto& s : registry.skills()) skills.push_back(&s);
  std::sort(skills.begin(), skills.end(), [](const SkillSpec* a, const SkillSpec* b) { return a->skill_id < b->skill_id; });
  for (auto& ing : ingested) {
    json supported = json::array();
    std::set<AnnotationKind> missing;
    for (const SkillSpec* s : skills) {
      const SupportCheck chk = supports_skill(ing.record, *s);
      if (chk.supported) supported.push_back(s->skill_id);
      missing.insert(chk.missing.begin(), chk.missing.end());
    }
    rep.skills[ing.object_id] = supported;
    for (auto k : missing) {
      try {
        backfill_annotations(ing.record, {k});
        ing.backfillable.insert(k);
      } catch (const Error&) {
      }
    }
    ing.provisional = ing.backfillable.empty() ? ing.record : backfill_annotations(ing.record, ing.backfillable);
  }

  // Candidate entities for non-object, non-part slots come from the goal.
  Candidates cand;
  std::map<std::string, const Ingested*> by_id;
  for (const auto& ing : ingested) {
    by_id[ing.object_id] = &ing;
    cand.by_kind[ArgKind::Object].push_back(ing.object_id);
    cand.by_kind[ArgKind::Reference].push_back(ing.object_id);
  }
  for (const auto& g : goal) {
    const PredicateInfo* info = find_predicate(g.atom.name);
    for (std::size_t i = 0; i < info->args.size(); ++i) {
      const ArgKind k = info->args[i];
      if (k == ArgKind::Object || k == ArgKind::Part) continue;
      cand.by_kind[k].push_back(g.atom.args[i]);
    }
  }
  for (auto& [k, v] : cand.by_kind) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  for (const auto& g : goal)
    if (!g.atom.args.empty() && find_predicate(g.atom.name)->args.front() == ArgKind::Object &&
        !by_id.count(g.atom.args.front())) {
      rep.flags.push_back(flag("unknown_object", "goal '" + to_string(g.atom) + "' names an object not in the document"));
    }
  if (!rep.flags.empty()) return result;

  // Stage 4 search runs against provisional records; stage 3 then backfills
  // exactly the kinds the chosen chain needs.
  Conjunction goal_atoms;
  for (const auto& g : goal) goal_atoms.push_back(g.atom);
  // Cost: parameter overrides the goal forces, then annotations to backfill.
  const ChainCost cost = [&](const std::vector<Step>& path) {
    int overrides = 0;
    for (const auto& g : goal) {
      for (std::size_t i = path.size(); i-- > 0;) {
        const Conjunction q = substitute(registry.get(path[i].skill).q, path[i].bindings);
        const auto match = std::find_if(q.begin(), q.end(), [&](const Atom& a) {
          return a.name == g.atom.name && a.args == g.atom.args;
        });
        if (match == q.end()) continue;
        const PredicateInfo* info = find_predicate(g.atom.name);
        for (std::size_t pi = 0; pi < info->params.size() && pi < match->params.size(); ++pi) {
          const auto v = g.params.find(info->params[pi].key);
          if (v != g.params.end() && !kToleranceKeys.count(v->first) && match->params[pi] != v->second) ++overrides;
        }
        break;
      }
    }
    std::set<std::pair<std::string, AnnotationKind>> fills;
    for (const auto& step : path)
      if (const auto o = step.bindings.find("O"); o != step.bindings.end())
        for (auto k : supports_skill(by_id.at(o->second)->record, registry.get(step.skill)).missing)
          fills.insert({o->second, k});
    return std::pair<int, int>{overrides, static_cast<int>(fills.size())};
  };
  const auto chain = search_chain(goal_atoms, skills, cand, by_id, cost);
  if (!chain) {
    rep.flags.push_back(flag("no_chain", "no skill chain of depth <= " + std::to_string(kAdapterMaxDepth) +
                                             " reaches the goal"));
    return result;
  }

  // Stage 3: backfill.
  std::map<std::string, std::set<AnnotationKind>> needed;
  for (const auto& step : *chain) {
    const SkillSpec& s = registry.get(step.skill);
    if (const auto o = step.bindings.find("O"); o != step.bindings.end()) {
      const Ingested& ing = *by_id.at(o->second);
      for (auto k : supports_skill(ing.record, s).missing) needed[ing.object_id].insert(k);
    }
  }
  std::map<std::string, std::string> backfilled_ids;  // original id -> id of the backfilled copy
  std::vector<AssetRecord> additions;
  std::set<std::string> taken;
  for (const auto& ing : ingested) taken.insert(ing.object_id);
  for (const auto& ing : ingested) {
    const auto it = needed.find(ing.object_id);
    AssetRecord rec = ing.record;
    if (it != needed.end()) {
      rec = backfill_annotations(ing.record, it->second);
      json kinds = json::array();
      for (auto k : it->second) kinds.push_back(annotation_kind_name(k));
      std::string id = ing.object_id;
      if (ing.reused) {
        id = fresh_id(library, taken, ing.object_id + "_" + rep.suite);
        taken.insert(id);
        rec.object_id = id;
        backfilled_ids[ing.object_id] = id;
      }
      rep.backfills.push_back({{"object_id", id}, {"kinds", kinds}, {"provenance", "auto"}});
      additions.push_back(rec);
    } else if (!ing.reused) {
      additions.push_back(rec);
    }
  }
  auto final_id = [&](const std::string& id) { return rename(backfilled_ids, id); };

  // Goal parameters land on the last stage producing the matching atom.
  std::map<std::size_t, std::map<std::string, double>> stage_params;
  std::map<std::size_t, ToleranceSet> stage_tol;
  for (const auto& g : goal) {
    if (g.params.empty()) continue;
    for (std::size_t i = chain->size(); i-- > 0;) {
      const SkillSpec& s = registry.get((*chain)[i].skill);
      const Conjunction q = substitute(s.q, (*chain)[i].bindings);
      const auto match = std::find_if(q.begin(), q.end(), [&](const Atom& a) {
        return a.name == g.atom.name && a.args == g.atom.args;
      });
      if (match == q.end()) continue;
      const PredicateInfo* info = find_predicate(g.atom.name);
      for (const auto& [k, v] : g.params) {
        if (kToleranceKeys.count(k)) {
          ToleranceSet& t = stage_tol.emplace(i, task_tol).first->second;
          if (k == "eps_pos") t.eps_pos = v;
          if (k == "eps_ang") t.eps_ang = v;
          if (k == "eps_clear") t.eps_clear = v;
          if (k == "eps_axis") t.eps_axis = v;
          continue;
        }
        for (std::size_t pi = 0; pi < info->params.size(); ++pi)
          if (info->params[pi].key == k && pi < match->params.size() && match->params[pi] != v) stage_params[i][k] = v;
      }
      break;
    }
  }

  json request{{"task_id", rep.task_id}, {"tolerances", task_tol}};
  json stages = json::array();
  for (std::size_t i = 0; i < chain->size(); ++i) {
    Bindings b = (*chain)[i].bindings;
    for (auto& [var, ent] : b) ent = final_id(ent);
    json st{{"skill", (*chain)[i].skill}, {"bindings", b}};
    if (stage_params.count(i)) st["params"] = stage_params[i];
    if (stage_tol.count(i)) st["tolerances"] = stage_tol[i];
    stages.push_back(st);
    rep.chain.push_back({{"skill", (*chain)[i].skill}, {"bindings", b}});
  }
  request["stages"] = stages;

  auto rename_scene_id = [&](json& o) {
    if (o.contains("object_id")) o["object_id"] = final_id(rename(names, o.at("object_id").get<std::string>()));
  };
  for (auto& o : scene["objects"]) rename_scene_id(o);
  if (scene.contains("regions"))
    for (auto& r : scene["regions"]) rename_scene_id(r);
  for (const char* field : {"joints", "joint_ranges"}) {
    if (!scene.contains(field)) continue;
    json renamed = json::object();
    for (const auto& [k, v] : scene[field].items()) {
      const auto slash = k.find('/');
      const std::string obj = slash == std::string::npos ? k : k.substr(0, slash);
      renamed[final_id(rename(names, obj)) + (slash == std::string::npos ? "" : k.substr(slash))] = v;
    }
    scene[field] = renamed;
  }
  request["scene"] = scene;

  AssetLibrary staged = library;
  for (const auto& a : additions) staged.add(a);
  try {
    result.task = instantiate_task(request, registry, staged);
  } catch (const Error& e) {
    rep.flags.push_back(flag("instantiation_failed", e.what()));
    return result;
  }
  for (const auto& a : additions) library.add(a);
  return result;
}

json externalize(const TaskSpec& task, const AssetLibrary& library, const std::string& suite) {
  json objects = json::array();
  json scene_objects = json::array();
  for (const auto& [id, pose] : task.scene_init.objects) {
    json rec = library.get(id);
    rec.erase("object_id");
    rec["name"] = id;
    objects.push_back(rec);
    json placed = pose_json(pose);
    placed["object_id"] = id;
    scene_objects.push_back(placed);
  }
  json regions = json::array();
  for (const auto& r : task.scene_init.regions)
    regions.push_back({{"object_id", r.object_id},
                       {"position_min", vec_json(r.position_min)},
                       {"position_max", vec_json(r.position_max)},
                       {"yaw_range", json::array({r.yaw_min, r.yaw_max})}});
  json ranges = json::object();
  for (const auto& [k, v] : task.scene_init.joint_ranges) ranges[k] = json::array({v.first, v.second});

  json goal = json::array();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < task.stages.size(); ++i) {
    const bool last = i + 1 == task.stages.size();
    for (const auto& a : task.stages[i].q) {
      if (!last && kHandPredicates.count(a.name)) continue;
      if (!seen.insert(to_string(strip(a))).second) continue;
      json params = json::object();
      const PredicateInfo* info = find_predicate(a.name);
      for (std::size_t pi = 0; info && pi < info->params.size() && pi < a.params.size(); ++pi)
        if (!kToleranceKeys.count(info->params[pi].key)) params[info->params[pi].key] = a.params[pi];
      json g{{"predicate", a.name}, {"args", a.args}};
      if (!params.empty()) g["params"] = params;
      goal.push_back(g);
    }
  }

  json doc{{"task_id", task.task_id},
           {"suite", suite},
           {"objects", objects},
           {"robot", json::object()},
           {"goal", goal},
           {"scene",
            {{"objects", scene_objects},
             {"regions", regions},
             {"joints", task.scene_init.joints},
             {"joint_ranges", ranges},
             {"ee_home", pose_json(task.scene_init.ee_home)}}}};
  if (!task.stages.empty()) doc["tolerances"] = task.stages.front().tolerances;
  return doc;
}

RoundtripVerdict roundtrip_check(const json& doc, const TaskSpec& native, const AssetLibrary& library,
                                 const SkillRegistry& registry, const std::string& policy_spec, int trials,
                                 std::uint64_t seed) {
  if (trials < 1) fail(ErrorCode::InvalidArgument, "trials must be positive");
  AssetLibrary lib = library;
  const AdaptResult adapted = adapt(doc, lib, registry);
  if (!adapted.task) {
    std::string why = "document did not adapt";
    for (const auto& f : adapted.report.flags) why += "; " + f.at("detail").get<std::string>();
    fail(ErrorCode::AdaptFailed, why);
  }
  const TaskSpec& a = *adapted.task;

  RoundtripVerdict v;
  v.trials = trials;
  json ja = a, jn = native;
  ja["task_id"] = jn["task_id"];
  for (const auto& op : json::diff(jn, ja)) {
    const std::string path = op.at("path").get<std::string>();
    const json::json_pointer ptr(path);
    const std::string before = jn.contains(ptr) ? jn.at(ptr).dump() : "absent";
    const std::string after = ja.contains(ptr) ? ja.at(ptr).dump() : "absent";
    v.differences.push_back("spec " + path + ": native " + before + ", adapted " + after);
  }

  const auto configs_a = sample_configurations(eval_distribution(a), lib, trials, seed);
  const auto configs_n = sample_configurations(eval_distribution(native), lib, trials, seed);
  std::vector<RolloutTrace> traces_a, traces_n;
  for (int i = 0; i < trials; ++i) {
    if (json(configs_a[i]) != json(configs_n[i]))
      v.differences.push_back("trial " + std::to_string(i) + ": sampled configurations differ");
    auto run = [&](const TaskSpec& t, const Configuration& c) {
      auto policy = make_policy(policy_spec);
      TrialSpec spec;
      spec.task = &t;
      spec.configuration = c;
      spec.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
      return run_trial(spec, lib, *policy);
    };
    traces_a.push_back(run(a, configs_a[i]));
    traces_n.push_back(run(native, configs_n[i]));
    const auto& sa = traces_a.back().steps;
    const auto& sn = traces_n.back().steps;
    bool same = sa.size() == sn.size();
    for (std::size_t k = 0; same && k < sa.size(); ++k)
      same = json(action_json(sa[k].action)) == json(action_json(sn[k].action));
    if (!same) v.differences.push_back("trial " + std::to_string(i) + ": action sequences differ");
  }
  const int stages = std::max(static_cast<int>(a.stages.size()), static_cast<int>(native.stages.size()));
  for (int k = 0; k < stages; ++k) {
    const double sa = k < static_cast<int>(a.stages.size()) ? success_rate(traces_a, Criterion::at_stage(k)) : 0.0;
    const double sn =
        k < static_cast<int>(native.stages.size()) ? success_rate(traces_n, Criterion::at_stage(k)) : 0.0;
    v.stage_sr_adapted.push_back(sa);
    v.stage_sr_native.push_back(sn);
    if (sa != sn)
      v.differences.push_back("stage " + std::to_string(k) + " success rate: native " + std::to_string(sn) +
                              ", adapted " + std::to_string(sa));
  }
  v.equivalent = v.differences.empty();
  return v;
}

void to_json(json& j, const AdapterReport& r) {
  j = json{{"task_id", r.task_id},         {"suite", r.suite},         {"robot", r.robot},
           {"stage1_ingestion", r.ingestion}, {"stage2_skills", r.skills}, {"stage3_backfills", r.backfills},
           {"stage4_chain", r.chain},        {"flags", r.flags},         {"mapped", r.flags.empty()}};
}

void to_json(json& j, const RoundtripVerdict& v) {
  j = json{{"equivalent", v.equivalent},
           {"differences", v.differences},
           {"stage_sr_adapted", v.stage_sr_adapted},
           {"stage_sr_native", v.stage_sr_native},
           {"trials", v.trials}};
}

}  // namespace metafine
