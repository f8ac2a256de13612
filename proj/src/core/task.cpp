#include "metafine/task.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "metafine/error.hpp"
#include "metafine/rng.hpp"

namespace metafine {

namespace {

constexpr double kWorkspaceHalfWidth = 0.6;

const std::set<std::string, std::less<>> kNamedDirections = {"left", "right", "forward", "backward",
                                                             "up",   "down",  "open",    "close"};
const std::set<std::string, std::less<>> kNamedAxes = {"clockwise", "counterclockwise", "x", "y", "z"};

std::string fmt_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

// --- composition graph --------------------------------------------------------

bool CompositionGraph::has_edge(std::string_view from, std::string_view to) const {
  return std::any_of(edges.begin(), edges.end(), [&](const auto& e) { return e.from == from && e.to == to; });
}

CompositionGraph derive_composition_graph(const std::vector<SkillSpec>& vocabulary) {
  std::vector<const SkillSpec*> sorted;
  for (const auto& s : vocabulary) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->skill_id < b->skill_id; });

  CompositionGraph g;
  for (const auto* s : sorted) g.nodes.push_back(s->skill_id);
  for (const auto* from : sorted)
    for (const auto* to : sorted)
      if (auto w = implies(from->q, to->p)) g.edges.push_back({from->skill_id, to->skill_id, *w});
  return g;
}

void to_json(json& j, const CompositionGraph& g) {
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({{"from", e.from}, {"to", e.to}, {"witness", e.witness}});
  j = json{{"nodes", g.nodes}, {"edges", edges}};
}

// --- naming -------------------------------------------------------------------

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::Sequential: return "sequential";
    case EdgeKind::Conditional: return "conditional";
    case EdgeKind::Parallel: return "parallel";
  }
  return "?";
}

EdgeKind edge_kind_from_name(std::string_view name) {
  for (auto k : {EdgeKind::Sequential, EdgeKind::Conditional, EdgeKind::Parallel})
    if (name == edge_kind_name(k)) return k;
  fail(ErrorCode::SchemaViolation, "unknown edge kind '" + std::string(name) + "'");
}

const char* intervention_kind_name(InterventionKind k) {
  switch (k) {
    case InterventionKind::PartSubstitution: return "part_substitution";
    case InterventionKind::DirectionalReversal: return "directional_reversal";
    case InterventionKind::PropertyAlteration: return "property_alteration";
  }
  return "?";
}

InterventionKind intervention_kind_from_name(std::string_view name) {
  for (auto k :
       {InterventionKind::PartSubstitution, InterventionKind::DirectionalReversal, InterventionKind::PropertyAlteration})
    if (name == intervention_kind_name(k)) return k;
  fail(ErrorCode::InvalidArgument, "unknown intervention kind '" + std::string(name) + "'");
}

std::optional<std::string> opposite_direction(std::string_view word) {
  static const std::pair<const char*, const char*> pairs[] = {
      {"left", "right"}, {"forward", "backward"}, {"up", "down"}, {"open", "close"}, {"clockwise", "counterclockwise"}};
  for (auto [a, b] : pairs) {
    if (word == a) return std::string(b);
    if (word == b) return std::string(a);
  }
  return std::nullopt;
}

std::string entity_display(std::string_view entity) {
  static const std::set<std::string, std::less<>> leading = {"red",   "green", "blue",  "yellow", "white", "black",
                                                             "gray",  "orange", "brown", "left",   "right"};
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : entity) {
    if (ch == '_') {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  if (tokens.size() >= 2 && leading.count(tokens.back())) {
    tokens.insert(tokens.begin(), tokens.back());
    tokens.pop_back();
  }
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

// --- binding ------------------------------------------------------------------

namespace {

void rebind_params(Conjunction& c, const ToleranceSet& tol, const std::map<std::string, double>& params) {
  for (auto& atom : c) {
    const auto* info = find_predicate(atom.name);
    if (!info) continue;
    for (std::size_t i = 0; i < info->params.size() && i < atom.params.size(); ++i) {
      const std::string& key = info->params[i].key;
      if (auto it = params.find(key); it != params.end())
        atom.params[i] = it->second;
      else if (key == "eps_pos")
        atom.params[i] = tol.eps_pos;
      else if (key == "eps_ang")
        atom.params[i] = tol.eps_ang;
      else if (key == "eps_clear")
        atom.params[i] = tol.eps_clear;
      else if (key == "eps_axis")
        atom.params[i] = tol.eps_axis;
    }
  }
}

void bind_stage(TaskStage& stage, const SkillSpec& skill) {
  Substitution sub(stage.bindings.begin(), stage.bindings.end());
  stage.p = substitute(skill.p, sub);
  stage.q = substitute(skill.q, sub);
  stage.c = substitute(skill.c, sub);
  rebind_params(stage.p, stage.tolerances, stage.params);
  rebind_params(stage.q, stage.tolerances, stage.params);
  rebind_params(stage.c, stage.tolerances, stage.params);
}

std::vector<StageAcceptance> build_acceptance(const TaskSpec& task) {
  std::vector<StageAcceptance> out;
  for (std::size_t i = 0; i < task.stages.size(); ++i)
    out.push_back({static_cast<int>(i), task.stages[i].q, stage_monitors(task, static_cast<int>(i))});
  return out;
}

std::string object_slot_entity(const SkillSpec& skill, const Bindings& b) {
  for (const auto& s : skill.slots)
    if (s.kind == ArgKind::Object)
      if (auto it = b.find(s.var); it != b.end()) return it->second;
  return {};
}

bool in_scene(const TaskSpec& task, std::string_view id) {
  return std::any_of(task.scene_init.objects.begin(), task.scene_init.objects.end(),
                     [&](const auto& o) { return o.first == id; });
}

void check_bindings(const TaskSpec& task, int idx, const Bindings& bindings, const SkillSpec& skill,
                    const AssetLibrary& library, const char* what) {
  const std::string where = "stage " + std::to_string(idx) + " (" + skill.skill_id + ") " + what;
  const std::string object = object_slot_entity(skill, bindings);
  for (const auto& slot : skill.slots) {
    auto it = bindings.find(slot.var);
    if (it == bindings.end() || it->second.empty())
      fail(ErrorCode::UnboundSlot, where + ": slot " + slot.var + " is unbound");
    const std::string& e = it->second;
    auto unresolved = [&](const std::string& why) {
      fail(ErrorCode::UnboundSlot, where + ": slot " + slot.var + " = '" + e + "' " + why);
    };
    switch (slot.kind) {
      case ArgKind::Object:
      case ArgKind::Reference:
        if (!library.find(e)) unresolved("is not in the asset library");
        if (!in_scene(task, e)) unresolved("is not placed in the scene");
        break;
      case ArgKind::Part: {
        const auto* asset = library.find(object);
        if (!asset || !asset->find_part(e)) unresolved("is not a part of '" + object + "'");
        break;
      }
      case ArgKind::Direction:
        if (!kNamedDirections.count(e) && !(library.find(e) && in_scene(task, e)))
          unresolved("is neither a named direction nor a placed object");
        break;
      case ArgKind::Axis:
        if (!kNamedAxes.count(e)) unresolved("is not a named axis");
        break;
      case ArgKind::Value:
        break;
    }
  }
}

std::string missing_list(const std::vector<AnnotationKind>& missing) {
  std::string s;
  for (auto k : missing) s += (s.empty() ? "" : ", ") + std::string(annotation_kind_name(k));
  return s;
}

void check_edge(const TaskSpec& task, int from, int to) {
  const auto& a = task.stages[static_cast<std::size_t>(from)];
  const auto& b = task.stages[static_cast<std::size_t>(to)];
  if (implies(a.q, b.p)) return;
  std::string missing;
  for (const auto& atom : b.p)
    if (!implies(a.q, Conjunction{atom})) missing += (missing.empty() ? "" : ", ") + to_string(atom);
  if (missing.empty()) missing = "no single consistent substitution";
  fail(ErrorCode::IncompatibleEdge, "q of stage " + std::to_string(from) + " (" + a.skill_id +
                                        ") does not imply p of stage " + std::to_string(to) + " (" + b.skill_id +
                                        "): " + missing);
}

std::string render_stage(const TaskSpec& task, const SkillRegistry& registry, int idx, std::set<int>& visited) {
  if (idx < 0 || idx >= static_cast<int>(task.stages.size()) || !visited.insert(idx).second) return {};
  const auto& stage = task.stages[static_cast<std::size_t>(idx)];
  const SkillSpec* skill = registry.find(stage.skill_id);
  std::string text = skill ? skill->instruction_template : stage.skill_id;

  std::map<std::string, std::string> fills;
  for (const auto& [var, ent] : stage.instruction_slots) fills[var] = entity_display(ent);
  for (const auto& atom : stage.q) {
    const auto* info = find_predicate(atom.name);
    for (std::size_t i = 0; info && i < info->params.size(); ++i)
      fills.emplace(info->params[i].key, fmt_number(atom.params[i]));
  }
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{') {
      const auto close = text.find('}', i);
      if (close != std::string::npos) {
        const std::string key = text.substr(i + 1, close - i - 1);
        auto it = fills.find(key);
        out += it != fills.end() ? it->second : key;
        i = close;
        continue;
      }
    }
    out += text[i];
  }

  for (const auto& e : task.edges) {
    if (e.from != idx) continue;
    if (e.kind == EdgeKind::Sequential) {
      const std::string rest = render_stage(task, registry, e.to, visited);
      if (!rest.empty()) out += ", then " + rest;
      break;
    }
    if (e.kind == EdgeKind::Conditional) {
      std::string cond;
      if (e.predicate->name == "has-color" && e.predicate->args.size() == 2)
        cond = "the " + entity_display(e.predicate->args[0]) + " is " + e.predicate->args[1];
      else
        cond = to_string(*e.predicate) + " holds";
      out += ", then if " + cond + " " + render_stage(task, registry, e.to, visited);
      const std::string other = render_stage(task, registry, e.otherwise, visited);
      if (!other.empty()) out += ", otherwise " + other;
      break;
    }
  }
  return out;
}

Pose placement_pose(const json& o) {
  Pose p;
  p.position = vec_from_json(o.at("position"));
  if (o.contains("orientation")) {
    p = pose_from_json(o);
  } else {
    p.orientation = yaw_quat(o.value("yaw", 0.0));
  }
  return p;
}

}  // namespace

Conjunction stage_monitors(const TaskSpec& task, int stage) {
  Conjunction c = task.stages[static_cast<std::size_t>(stage)].c;
  for (const auto& e : task.edges)
    if (e.kind == EdgeKind::Parallel && e.from == stage) c.insert(c.end(), e.constraints.begin(), e.constraints.end());
  return c;
}

std::string render_instruction(const TaskSpec& task, const SkillRegistry& registry) {
  std::set<int> visited;
  return render_stage(task, registry, 0, visited);
}

void validate_task(const TaskSpec& task, const SkillRegistry& registry, const AssetLibrary& library) {
  if (task.stages.empty()) fail(ErrorCode::SchemaViolation, "task '" + task.task_id + "' has no stages");

  for (const auto& [id, pose] : task.scene_init.objects) {
    if (!library.find(id)) fail(ErrorCode::UnknownObject, "scene object '" + id + "' is not in the asset library");
    if (std::abs(pose.position.x()) > kWorkspaceHalfWidth || std::abs(pose.position.y()) > kWorkspaceHalfWidth)
      fail(ErrorCode::UnboundSlot, "scene object '" + id + "' lies outside the reachable workspace");
  }

  const int n = static_cast<int>(task.stages.size());
  for (int i = 0; i < n; ++i) {
    const auto& stage = task.stages[static_cast<std::size_t>(i)];
    const SkillSpec* skill = registry.find(stage.skill_id);
    if (!skill) fail(ErrorCode::UnsupportedSkill, "stage " + std::to_string(i) + ": skill '" + stage.skill_id +
                                                      "' is not registered");
    check_bindings(task, i, stage.bindings, *skill, library, "bindings");
    check_bindings(task, i, stage.instruction_slots, *skill, library, "instruction slots");

    const std::string object = object_slot_entity(*skill, stage.bindings);
    const auto support = supports_skill(library.get(object), *skill);
    if (!support.supported)
      fail(ErrorCode::UnsupportedSkill, "stage " + std::to_string(i) + ": '" + object + "' cannot host " +
                                            skill->skill_id + ", missing " + missing_list(support.missing));

    TaskStage rebound = stage;
    bind_stage(rebound, *skill);
    if (rebound.p != stage.p || rebound.q != stage.q || rebound.c != stage.c)
      fail(ErrorCode::SchemaViolation, "stage " + std::to_string(i) + ": bound conditions disagree with " +
                                           skill->skill_id + " under the stage bindings");
  }

  auto in_range = [&](int s) { return s >= 0 && s < n; };
  for (const auto& e : task.edges) {
    if (!in_range(e.from)) fail(ErrorCode::SchemaViolation, "edge source out of range");
    switch (e.kind) {
      case EdgeKind::Sequential:
        if (!in_range(e.to)) fail(ErrorCode::SchemaViolation, "sequential edge target out of range");
        check_edge(task, e.from, e.to);
        break;
      case EdgeKind::Conditional:
        if (!e.predicate) fail(ErrorCode::SchemaViolation, "conditional edge without a branch predicate");
        if (!find_predicate(e.predicate->name))
          fail(ErrorCode::UnknownPredicate, "unknown branch predicate '" + e.predicate->name + "'");
        if (!in_range(e.to) || !in_range(e.otherwise))
          fail(ErrorCode::SchemaViolation, "conditional edge branch target out of range");
        check_edge(task, e.from, e.to);
        check_edge(task, e.from, e.otherwise);
        break;
      case EdgeKind::Parallel:
        for (const auto& a : e.constraints)
          if (!find_predicate(a.name)) fail(ErrorCode::UnknownPredicate, "unknown constraint '" + a.name + "'");
        break;
    }
  }

  if (task.acceptance != build_acceptance(task))
    fail(ErrorCode::SchemaViolation, "acceptance criteria differ from the bound stage postconditions");
}

TaskSpec instantiate_task(const json& request, const SkillRegistry& registry, const AssetLibrary& library) {
  TaskSpec task;
  try {
    task.task_id = request.at("task_id").get<std::string>();
    const ToleranceSet task_tol = request.value("tolerances", ToleranceSet{});

    const json& scene = request.at("scene");
    for (const auto& o : scene.at("objects"))
      task.scene_init.objects.emplace_back(o.at("object_id").get<std::string>(), placement_pose(o));
    task.scene_init.joints = scene.value("joints", std::map<std::string, double>{});
    if (scene.contains("ee_home")) task.scene_init.ee_home = pose_from_json(scene.at("ee_home"));
    for (const auto& r : scene.value("regions", json::array())) {
      PlacementRegion pr;
      pr.object_id = r.at("object_id").get<std::string>();
      pr.position_min = vec_from_json(r.at("position_min"));
      pr.position_max = vec_from_json(r.at("position_max"));
      const auto yaw = r.value("yaw_range", std::vector<double>{0.0, 0.0});
      pr.yaw_min = yaw.at(0);
      pr.yaw_max = yaw.at(1);
      task.scene_init.regions.push_back(pr);
    }
    const json ranges = scene.value("joint_ranges", json::object());
    for (const auto& [k, v] : ranges.items())
      task.scene_init.joint_ranges[k] = {v.at(0).get<double>(), v.at(1).get<double>()};

    for (const auto& s : request.at("stages")) {
      TaskStage stage;
      stage.skill_id = s.at("skill").get<std::string>();
      stage.bindings = s.at("bindings").get<Bindings>();
      stage.instruction_slots = s.value("instruction_slots", stage.bindings);
      stage.tolerances = s.contains("tolerances") ? s.at("tolerances").get<ToleranceSet>() : task_tol;
      stage.params = s.value("params", std::map<std::string, double>{});
      task.stages.push_back(std::move(stage));
    }

    if (request.contains("edges")) {
      for (const auto& e : request.at("edges")) {
        TaskEdge edge;
        edge.kind = edge_kind_from_name(e.at("kind").get<std::string>());
        edge.from = e.contains("host") ? e.at("host").get<int>() : e.at("from").get<int>();
        edge.to = e.value("to", -1);
        edge.otherwise = e.value("otherwise", -1);
        if (e.contains("predicate")) edge.predicate = e.at("predicate").get<Atom>();
        edge.constraints = e.value("constraints", Conjunction{});
        task.edges.push_back(std::move(edge));
      }
    } else {
      for (int i = 0; i + 1 < static_cast<int>(task.stages.size()); ++i)
        task.edges.push_back({EdgeKind::Sequential, i, i + 1, -1, std::nullopt, {}});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaViolation, std::string("compose request: ") + e.what());
  }

  for (auto& stage : task.stages) {
    const SkillSpec* skill = registry.find(stage.skill_id);
    if (!skill) fail(ErrorCode::UnsupportedSkill, "skill '" + stage.skill_id + "' is not registered");
    bind_stage(stage, *skill);
  }
  for (const auto& e : task.edges)
    if (e.kind == EdgeKind::Parallel) {
      for (const auto& a : e.constraints)
        if (!find_predicate(a.name)) fail(ErrorCode::UnknownPredicate, "unknown constraint '" + a.name + "'");
    }
  for (std::size_t i = 0; i < task.stages.size(); ++i) {
    if (i) task.graph_seq += ">";
    task.graph_seq += task.stages[i].skill_id;
  }
  if (!task.stages.empty() && !task.edges.empty()) {
    for (const auto& e : task.edges)
      if (e.from < 0 || e.from >= static_cast<int>(task.stages.size()))
        fail(ErrorCode::SchemaViolation, "edge source out of range");
  }
  task.acceptance = task.stages.empty() ? std::vector<StageAcceptance>{} : build_acceptance(task);
  task.instruction = request.contains("instruction") ? request.at("instruction").get<std::string>()
                                                     : render_instruction(task, registry);
  validate_task(task, registry, library);
  return task;
}

// --- JSON ---------------------------------------------------------------------

void to_json(json& j, const TaskSpec& t) {
  json stages = json::array();
  for (const auto& s : t.stages)
    stages.push_back({{"skill_id", s.skill_id},
                      {"bindings", s.bindings},
                      {"instruction_slots", s.instruction_slots},
                      {"tolerances", s.tolerances},
                      {"params", s.params},
                      {"p", s.p},
                      {"q", s.q},
                      {"c", s.c}});
  json edges = json::array();
  for (const auto& e : t.edges) {
    json je = {{"kind", edge_kind_name(e.kind)}, {"from", e.from}};
    if (e.kind != EdgeKind::Parallel) je["to"] = e.to;
    if (e.kind == EdgeKind::Conditional) {
      je["otherwise"] = e.otherwise;
      je["predicate"] = *e.predicate;
    }
    if (e.kind == EdgeKind::Parallel) je["constraints"] = e.constraints;
    edges.push_back(je);
  }
  json acceptance = json::array();
  for (const auto& a : t.acceptance) acceptance.push_back({{"stage", a.stage}, {"q", a.q}, {"c", a.c}});

  json objects = json::array();
  for (const auto& [id, pose] : t.scene_init.objects) objects.push_back({{"object_id", id}, {"pose", pose_json(pose)}});
  json regions = json::array();
  for (const auto& r : t.scene_init.regions)
    regions.push_back({{"object_id", r.object_id},
                       {"position_min", vec_json(r.position_min)},
                       {"position_max", vec_json(r.position_max)},
                       {"yaw_range", json::array({r.yaw_min, r.yaw_max})}});
  json ranges = json::object();
  for (const auto& [k, v] : t.scene_init.joint_ranges) ranges[k] = json::array({v.first, v.second});

  j = json{{"task_id", t.task_id},
           {"instruction", t.instruction},
           {"graph_seq", t.graph_seq},
           {"stages", stages},
           {"edges", edges},
           {"acceptance", acceptance},
           {"scene_init",
            {{"objects", objects},
             {"joints", t.scene_init.joints},
             {"ee_home", pose_json(t.scene_init.ee_home)},
             {"regions", regions},
             {"joint_ranges", ranges}}}};
}

void from_json(const json& j, TaskSpec& t) {
  t = TaskSpec{};
  t.task_id = j.at("task_id").get<std::string>();
  t.instruction = j.value("instruction", std::string{});
  t.graph_seq = j.value("graph_seq", std::string{});
  for (const auto& s : j.at("stages")) {
    TaskStage st;
    st.skill_id = s.at("skill_id").get<std::string>();
    st.bindings = s.at("bindings").get<Bindings>();
    st.instruction_slots = s.value("instruction_slots", st.bindings);
    st.tolerances = s.value("tolerances", ToleranceSet{});
    st.params = s.value("params", std::map<std::string, double>{});
    st.p = s.value("p", Conjunction{});
    st.q = s.value("q", Conjunction{});
    st.c = s.value("c", Conjunction{});
    t.stages.push_back(std::move(st));
  }
  for (const auto& e : j.value("edges", json::array())) {
    TaskEdge edge;
    edge.kind = edge_kind_from_name(e.at("kind").get<std::string>());
    edge.from = e.at("from").get<int>();
    edge.to = e.value("to", -1);
    edge.otherwise = e.value("otherwise", -1);
    if (e.contains("predicate")) edge.predicate = e.at("predicate").get<Atom>();
    edge.constraints = e.value("constraints", Conjunction{});
    t.edges.push_back(std::move(edge));
  }
  for (const auto& a : j.value("acceptance", json::array()))
    t.acceptance.push_back({a.at("stage").get<int>(), a.value("q", Conjunction{}), a.value("c", Conjunction{})});
  const json& scene = j.at("scene_init");
  for (const auto& o : scene.at("objects"))
    t.scene_init.objects.emplace_back(o.at("object_id").get<std::string>(), pose_from_json(o.at("pose")));
  t.scene_init.joints = scene.value("joints", std::map<std::string, double>{});
  if (scene.contains("ee_home")) t.scene_init.ee_home = pose_from_json(scene.at("ee_home"));
  for (const auto& r : scene.value("regions", json::array())) {
    PlacementRegion pr;
    pr.object_id = r.at("object_id").get<std::string>();
    pr.position_min = vec_from_json(r.at("position_min"));
    pr.position_max = vec_from_json(r.at("position_max"));
    pr.yaw_min = r.at("yaw_range").at(0).get<double>();
    pr.yaw_max = r.at("yaw_range").at(1).get<double>();
    t.scene_init.regions.push_back(pr);
  }
  const json ranges = scene.value("joint_ranges", json::object());
  for (const auto& [k, v] : ranges.items())
    t.scene_init.joint_ranges[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
}

void to_json(json& j, const Configuration& c) {
  json objects = json::object();
  for (const auto& [id, pose] : c.objects) objects[id] = pose_json(pose);
  j = json{{"config_id", c.config_id}, {"objects", objects}, {"joints", c.joints}};
}

void from_json(const json& j, Configuration& c) {
  c = Configuration{};
  c.config_id = j.at("config_id").get<int>();
  for (const auto& [id, pose] : j.at("objects").items()) c.objects[id] = pose_from_json(pose);
  c.joints = j.value("joints", std::map<std::string, double>{});
}

// --- configurations -----------------------------------------------------------

EvalDistribution eval_distribution(const TaskSpec& task) {
  EvalDistribution d;
  d.task_id = task.task_id;
  d.regions = task.scene_init.regions;
  d.joints = task.scene_init.joints;
  d.joint_ranges = task.scene_init.joint_ranges;
  for (const auto& [id, pose] : task.scene_init.objects) {
    const bool sampled =
        std::any_of(d.regions.begin(), d.regions.end(), [&](const auto& r) { return r.object_id == id; });
    if (!sampled) d.fixed.emplace_back(id, pose);
  }
  return d;
}

Configuration default_configuration(const TaskSpec& task) {
  Configuration c;
  for (const auto& [id, pose] : task.scene_init.objects) c.objects[id] = pose;
  c.joints = task.scene_init.joints;
  return c;
}

bool placements_collide(const AssetRecord& a, const Pose& pa, const AssetRecord& b, const Pose& pb) {
  const double planar = (pa.position.head<2>() - pb.position.head<2>()).norm();
  if (planar >= a.footprint_radius() + b.footprint_radius()) return false;
  auto [alo, ahi] = a.bounds();
  auto [blo, bhi] = b.bounds();
  const double a0 = pa.position.z() + alo.z(), a1 = pa.position.z() + ahi.z();
  const double b0 = pb.position.z() + blo.z(), b1 = pb.position.z() + bhi.z();
  return a0 < b1 && b0 < a1;
}

std::optional<std::pair<std::string, std::string>> find_collision(const Configuration& config,
                                                                  const AssetLibrary& library) {
  for (auto i = config.objects.begin(); i != config.objects.end(); ++i) {
    for (auto j = std::next(i); j != config.objects.end(); ++j) {
      const auto* a = library.find(i->first);
      const auto* b = library.find(j->first);
      if (a && b && placements_collide(*a, i->second, *b, j->second)) return std::make_pair(i->first, j->first);
    }
  }
  return std::nullopt;
}

std::vector<Configuration> sample_configurations(const EvalDistribution& dist, const AssetLibrary& library,
                                                 int count, std::uint64_t seed) {
  if (count < 1) fail(ErrorCode::InvalidArgument, "count must be at least 1");
  for (const auto& r : dist.regions)
    if (!(r.position_min.allFinite() && r.position_max.allFinite() && std::isfinite(r.yaw_min) &&
          std::isfinite(r.yaw_max)))
      fail(ErrorCode::InvalidArgument, "placement bounds for '" + r.object_id + "' are not finite");

  constexpr int kMaxAttempts = 1000;
  std::vector<Configuration> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Configuration c;
      c.config_id = i;
      for (const auto& [id, pose] : dist.fixed) c.objects[id] = pose;
      for (const auto& r : dist.regions) {
        Pose p;
        for (int k = 0; k < 3; ++k) p.position[k] = rng.uniform(r.position_min[k], r.position_max[k]);
        p.orientation = yaw_quat(rng.uniform(r.yaw_min, r.yaw_max));
        c.objects[r.object_id] = p;
      }
      c.joints = dist.joints;
      for (const auto& [k, range] : dist.joint_ranges) c.joints[k] = rng.uniform(range.first, range.second);
      if (!find_collision(c, library)) {
        out.push_back(std::move(c));
        placed = true;
      }
    }
    if (!placed)
      fail(ErrorCode::RegionInfeasible, "no collision-free placement for configuration " + std::to_string(i) +
                                            " after " + std::to_string(kMaxAttempts) + " attempts");
  }
  return out;
}

// --- semantic interventions ---------------------------------------------------

namespace {

struct Candidate {
  int stage;
  std::string var;
  std::vector<std::string> alternatives;
};

bool same_geometry(const AssetRecord& a, const AssetRecord& b) {
  if (a.shapes.size() != b.shapes.size()) return false;
  for (std::size_t i = 0; i < a.shapes.size(); ++i)
    if (a.shapes[i].kind != b.shapes[i].kind || !a.shapes[i].size.isApprox(b.shapes[i].size, 1e-9)) return false;
  return true;
}

void rebind_all(TaskSpec& t, const SkillRegistry& registry) {
  for (auto& s : t.stages) bind_stage(s, registry.get(s.skill_id));
  t.acceptance = build_acceptance(t);
}

}  // namespace

InterventionPair semantic_intervention(const TaskSpec& task, InterventionKind kind, std::uint64_t seed,
                                       const SkillRegistry& registry, const AssetLibrary& library) {
  std::vector<Candidate> candidates;
  for (int i = 0; i < static_cast<int>(task.stages.size()); ++i) {
    const auto& stage = task.stages[static_cast<std::size_t>(i)];
    const SkillSpec& skill = registry.get(stage.skill_id);
    const std::string object = object_slot_entity(skill, stage.instruction_slots);
    for (const auto& slot : skill.slots) {
      const auto it = stage.instruction_slots.find(slot.var);
      if (it == stage.instruction_slots.end()) continue;
      const std::string& current = it->second;
      Candidate c{i, slot.var, {}};
      if (kind == InterventionKind::PartSubstitution && slot.kind == ArgKind::Part) {
        const auto& asset = library.get(object);
        for (const auto& part : asset.parts) {
          if (part.part_id == current) continue;
          bool usable = true;
          if (skill.required_annotations.count(AnnotationKind::GraspPose))
            usable = usable && !asset.grasps_for(part.part_id).empty();
          if (skill.required_annotations.count(AnnotationKind::ActuationAxis))
            usable = usable && std::any_of(asset.constraints.begin(), asset.constraints.end(), [&](const auto& k) {
                       return k.kind == ConstraintKind::ActuationAxis && k.part_id == part.part_id;
                     });
          if (usable) c.alternatives.push_back(part.part_id);
        }
      } else if (kind == InterventionKind::DirectionalReversal &&
                 (slot.kind == ArgKind::Direction || slot.kind == ArgKind::Axis)) {
        if (auto opp = opposite_direction(current)) c.alternatives.push_back(*opp);
      } else if (kind == InterventionKind::PropertyAlteration && slot.kind == ArgKind::Object) {
        const auto& asset = library.get(current);
        if (!asset.color.empty()) {
          for (const auto& [id, pose] : task.scene_init.objects) {
            const auto& other = library.get(id);
            if (id == current || other.color.empty() || other.color == asset.color) continue;
            if (!same_geometry(asset, other) || !supports_skill(other, skill).supported) continue;
            c.alternatives.push_back(id);
          }
        }
      }
      if (!c.alternatives.empty()) candidates.push_back(std::move(c));
    }
  }
  if (candidates.empty())
    fail(ErrorCode::NoSubstitutableSlot,
         "task '" + task.task_id + "' has no slot eligible for " + intervention_kind_name(kind));

  Rng rng(derive_seed(seed, "intervention"));
  const Candidate& chosen = candidates.front();
  const std::string replacement = chosen.alternatives[rng.below(chosen.alternatives.size())];
  const std::string original = task.stages[static_cast<std::size_t>(chosen.stage)].instruction_slots.at(chosen.var);

  InterventionPair out;
  out.stage = chosen.stage;
  out.slot = chosen.var;
  out.original_entity = original;
  out.new_entity = replacement;
  out.perturbed = task;

  if (kind == InterventionKind::PropertyAlteration) {
    // The altered attribute identifies a different object everywhere it is named.
    for (auto& s : out.perturbed.stages)
      for (auto& [var, ent] : s.instruction_slots)
        if (ent == original) ent = replacement;
  } else {
    out.perturbed.stages[static_cast<std::size_t>(chosen.stage)].instruction_slots[chosen.var] = replacement;
  }
  out.perturbed.instruction = render_instruction(out.perturbed, registry);

  out.modified = out.perturbed;
  if (kind == InterventionKind::PropertyAlteration) {
    for (auto& s : out.modified.stages)
      for (auto& [var, ent] : s.bindings)
        if (ent == original) ent = replacement;
    for (auto& e : out.modified.edges)
      if (e.predicate)
        for (auto& a : e.predicate->args)
          if (a == original) a = replacement;
  } else {
    out.modified.stages[static_cast<std::size_t>(chosen.stage)].bindings[chosen.var] = replacement;
  }
  rebind_all(out.modified, registry);
  validate_task(out.modified, registry, library);
  return out;
}

}  // namespace metafine
