#include "metafine/skill.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <sstream>

#include "metafine/error.hpp"

namespace metafine {

namespace {

using S = Strictness;
using K = ArgKind;

std::vector<PredicateInfo> make_vocabulary() {
  return {
      {"hand-free", {}, {}},
      {"reachable", {K::Object}, {}},
      {"grasp-stable", {K::Object}, {}},
      {"in-hand", {K::Object}, {}},
      {"contact-at", {K::Object, K::Part}, {}},
      {"aligned", {K::Object, K::Reference}, {{"eps_pos", "m", S::Tolerance}, {"eps_ang", "deg", S::Tolerance}}},
      {"inserted", {K::Object, K::Reference}, {{"depth", "m", S::Minimum}, {"depth_tol", "m", S::Tolerance}}},
      {"clearance", {K::Object, K::Reference}, {{"eps_clear", "m", S::Tolerance}}},
      {"actuated", {K::Object, K::Part}, {{"fraction", "1", S::Minimum}}},
      {"state-of", {K::Object, K::Part}, {{"state", "1", S::Target}}},
      {"rotated-by", {K::Object, K::Axis}, {{"angle", "deg", S::Target, 1}, {"eps_axis", "deg", S::Tolerance}}},
      {"axis-compliant", {K::Object, K::Axis}, {{"eps_axis", "deg", S::Tolerance}}},
      {"displaced-along", {K::Object, K::Direction}, {{"distance", "m", S::Minimum}, {"eps_axis", "deg", S::Tolerance}}},
      {"on-guide", {K::Object, K::Direction}, {{"eps_clear", "m", S::Tolerance}}},
      {"hinge-open", {K::Object, K::Part}, {{"min_angle", "deg", S::Minimum}}},
      {"moved-to", {K::Object, K::Direction}, {{"distance", "m", S::Minimum}, {"eps_axis", "deg", S::Tolerance}}},
      {"has-color", {K::Object, K::Value}, {}},
  };
}

bool params_at_least_as_strict(const PredicateInfo& info, const Atom& achieved, const Atom& required) {
  for (std::size_t i = 0; i < info.params.size(); ++i) {
    const double a = achieved.params[i];
    const double r = required.params[i];
    switch (info.params[i].strictness) {
      case S::Tolerance:
        if (a > r) return false;
        break;
      case S::Minimum:
        if (a < r) return false;
        break;
      case S::Target: {
        const int comp = info.params[i].companion;
        const double slack = comp >= 0 ? required.params[static_cast<std::size_t>(comp)] : 1e-9;
        if (std::abs(a - r) > slack) return false;
        break;
      }
    }
  }
  return true;
}

void check_known(const Conjunction& c) {
  for (const auto& atom : c) {
    const auto* info = find_predicate(atom.name);
    if (!info) fail(ErrorCode::UnknownPredicate, "unknown predicate '" + atom.name + "'");
    if (info->args.size() != atom.args.size() || info->params.size() != atom.params.size())
      fail(ErrorCode::UnknownPredicate, "arity mismatch for '" + to_string(atom) + "'");
  }
}

Atom atom(std::string name, std::vector<std::string> args, std::vector<double> params = {}) {
  return {std::move(name), std::move(args), std::move(params)};
}

}  // namespace

const std::vector<PredicateInfo>& predicate_vocabulary() {
  static const std::vector<PredicateInfo> vocab = make_vocabulary();
  return vocab;
}

const PredicateInfo* find_predicate(std::string_view name) {
  for (const auto& p : predicate_vocabulary())
    if (p.name == name) return &p;
  return nullptr;
}

bool is_variable(std::string_view term) {
  return !term.empty() && std::isupper(static_cast<unsigned char>(term.front()));
}

std::string to_string(const Atom& a) {
  std::ostringstream os;
  os << a.name << '(';
  for (std::size_t i = 0; i < a.args.size(); ++i) os << (i ? "," : "") << a.args[i];
  for (std::size_t i = 0; i < a.params.size(); ++i) os << (a.args.empty() && i == 0 ? "" : ",") << a.params[i];
  os << ')';
  return os.str();
}

std::optional<Substitution> implies(const Conjunction& q, const Conjunction& p) {
  check_known(q);
  check_known(p);

  Substitution sub;
  // Depth-first over p's atoms; candidates are tried in q order so the
  // returned witness is deterministic.
  std::function<bool(std::size_t)> match = [&](std::size_t idx) -> bool {
    if (idx == p.size()) return true;
    const Atom& need = p[idx];
    const PredicateInfo& info = *find_predicate(need.name);
    for (const Atom& have : q) {
      if (have.name != need.name) continue;
      if (!params_at_least_as_strict(info, have, need)) continue;
      Substitution saved = sub;
      bool ok = true;
      for (std::size_t a = 0; a < need.args.size() && ok; ++a) {
        const std::string& term = need.args[a];
        if (is_variable(term)) {
          auto it = sub.find(term);
          if (it == sub.end())
            sub.emplace(term, have.args[a]);
          else
            ok = it->second == have.args[a];
        } else {
          ok = term == have.args[a];
        }
      }
      if (ok && match(idx + 1)) return true;
      sub = std::move(saved);
    }
    return false;
  };

  if (match(0)) return sub;
  return std::nullopt;
}

Conjunction substitute(const Conjunction& c, const Substitution& s) {
  Conjunction out = c;
  for (auto& a : out)
    for (auto& arg : a.args)
      if (auto it = s.find(arg); it != s.end()) arg = it->second;
  return out;
}

const char* annotation_kind_name(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::PartRegion: return "part_region";
    case AnnotationKind::GraspPose: return "grasp_pose";
    case AnnotationKind::ActuationAxis: return "actuation_axis";
    case AnnotationKind::HingeAxis: return "hinge_axis";
    case AnnotationKind::SlidingDirection: return "sliding_direction";
    case AnnotationKind::RotationAxis: return "rotation_axis";
  }
  return "?";
}

AnnotationKind annotation_kind_from_name(std::string_view name) {
  for (auto k : {AnnotationKind::PartRegion, AnnotationKind::GraspPose, AnnotationKind::ActuationAxis,
                 AnnotationKind::HingeAxis, AnnotationKind::SlidingDirection, AnnotationKind::RotationAxis})
    if (name == annotation_kind_name(k)) return k;
  fail(ErrorCode::SchemaViolation, "unknown annotation kind '" + std::string(name) + "'");
}

const char* arg_kind_name(ArgKind k) {
  switch (k) {
    case K::Object: return "object";
    case K::Part: return "part";
    case K::Reference: return "reference";
    case K::Direction: return "direction";
    case K::Axis: return "axis";
    case K::Value: return "value";
  }
  return "?";
}

ArgKind arg_kind_from_name(std::string_view name) {
  for (auto k : {K::Object, K::Part, K::Reference, K::Direction, K::Axis, K::Value})
    if (name == arg_kind_name(k)) return k;
  fail(ErrorCode::SchemaViolation, "unknown slot kind '" + std::string(name) + "'");
}

std::vector<std::string> validate_skill(const SkillSpec& spec) {
  std::vector<std::string> issues;
  if (spec.skill_id.empty()) issues.push_back("skill_id is empty");

  std::set<std::string> slot_vars;
  for (const auto& s : spec.slots) {
    if (!is_variable(s.var)) issues.push_back("slot '" + s.var + "' is not a variable");
    if (!slot_vars.insert(s.var).second) issues.push_back("slot '" + s.var + "' declared twice");
  }

  auto check_atoms = [&](const Conjunction& c, const char* which) {
    for (const auto& a : c) {
      const auto* info = find_predicate(a.name);
      if (!info) {
        issues.push_back(std::string(which) + ": predicate '" + a.name + "' is not in the vocabulary");
        continue;
      }
      if (info->args.size() != a.args.size())
        issues.push_back(std::string(which) + ": '" + a.name + "' expects " + std::to_string(info->args.size()) +
                         " arguments");
      if (info->params.size() != a.params.size()) {
        issues.push_back(std::string(which) + ": '" + a.name + "' expects " + std::to_string(info->params.size()) +
                         " parameters");
        continue;
      }
      for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (!std::isfinite(a.params[i]))
          issues.push_back(std::string(which) + ": '" + a.name + "' parameter " + info->params[i].key + " not finite");
        else if (info->params[i].strictness == S::Tolerance && a.params[i] < 0)
          issues.push_back(std::string(which) + ": '" + a.name + "' tolerance " + info->params[i].key + " negative");
      }
    }
  };
  check_atoms(spec.p, "p");
  check_atoms(spec.q, "q");
  check_atoms(spec.c, "c");

  std::set<std::string> bound = slot_vars;
  for (const auto& a : spec.p)
    for (const auto& t : a.args)
      if (is_variable(t)) bound.insert(t);
  auto check_free = [&](const Conjunction& c, const char* which) {
    for (const auto& a : c)
      for (const auto& t : a.args)
        if (is_variable(t) && !bound.count(t))
          issues.push_back(std::string(which) + ": free variable '" + t + "' in " + to_string(a) +
                           " is bound neither by p nor by a slot");
  };
  check_free(spec.q, "q");
  check_free(spec.c, "c");

  const auto& t = spec.tolerances;
  if (!(t.eps_pos > 0 && t.eps_ang > 0 && t.eps_clear > 0 && t.eps_axis > 0))
    issues.push_back("tolerances must be strictly positive");
  if (t.eps_pos > 0.1) issues.push_back("eps_pos exceeds 0.1 m");
  if (t.eps_ang > 45.0) issues.push_back("eps_ang exceeds 45 deg");
  return issues;
}

std::vector<SkillSpec> builtin_vocabulary() {
  const ToleranceSet tol;
  const double eps_pos = tol.eps_pos, eps_ang = tol.eps_ang, eps_clear = tol.eps_clear, eps_axis = tol.eps_axis;
  using A = AnnotationKind;

  std::vector<SkillSpec> v;
  v.push_back({"GraspPart",
               {{"O", K::Object}, {"P", K::Part}},
               {atom("hand-free", {})},
               {atom("grasp-stable", {"O"}), atom("in-hand", {"O"}), atom("contact-at", {"O", "P"})},
               {atom("contact-at", {"O", "P"})},
               tol,
               {A::PartRegion, A::GraspPose},
               "grasp the {P} of the {O}"});
  v.push_back({"PressPart",
               {{"O", K::Object}, {"P", K::Part}},
               {atom("hand-free", {})},
               {atom("actuated", {"O", "P"}, {1.0}), atom("hand-free", {})},
               {},
               tol,
               {A::PartRegion, A::ActuationAxis},
               "press the {P} of the {O}"});
  v.push_back({"TogglePart",
               {{"O", K::Object}, {"P", K::Part}},
               {atom("hand-free", {})},
               {atom("state-of", {"O", "P"}, {1.0}), atom("hand-free", {})},
               {},
               tol,
               {A::PartRegion, A::ActuationAxis},
               "toggle the {P} of the {O}"});
  v.push_back({"RotateAlong",
               {{"O", K::Object}, {"A", K::Axis}},
               {atom("in-hand", {"O"})},
               {atom("in-hand", {"O"}), atom("rotated-by", {"O", "A"}, {90.0, eps_axis})},
               {atom("axis-compliant", {"O", "A"}, {eps_axis})},
               tol,
               {A::RotationAxis},
               "rotate the {O} {A} by {angle} degrees"});
  v.push_back({"SlideAlong",
               {{"O", K::Object}, {"D", K::Direction}},
               {atom("in-hand", {"O"})},
               {atom("in-hand", {"O"}), atom("displaced-along", {"O", "D"}, {0.1, eps_axis})},
               {atom("on-guide", {"O", "D"}, {eps_clear})},
               tol,
               {A::SlidingDirection},
               "slide the {O} {D} along its rail"});
  v.push_back({"OpenHinge",
               {{"O", K::Object}, {"P", K::Part}},
               {atom("in-hand", {"O"})},
               {atom("hinge-open", {"O", "P"}, {30.0})},
               {},
               tol,
               {A::HingeAxis},
               "open the {P} of the {O}"});
  v.push_back({"Align",
               {{"O", K::Object}, {"R", K::Reference}},
               {atom("in-hand", {"O"}), atom("grasp-stable", {"O"})},
               {atom("in-hand", {"O"}), atom("grasp-stable", {"O"}), atom("aligned", {"O", "R"}, {eps_pos, eps_ang})},
               {atom("in-hand", {"O"})},
               tol,
               {},
               "align the {O} with the {R}"});
  v.push_back({"Insert",
               {{"O", K::Object}, {"R", K::Reference}},
               {atom("in-hand", {"O"}), atom("aligned", {"O", "R"}, {eps_pos, eps_ang})},
               {atom("inserted", {"O", "R"}, {0.02, 0.002})},
               {atom("in-hand", {"O"}), atom("clearance", {"O", "R"}, {eps_clear})},
               tol,
               {},
               "insert the {O} into the {R}"});
  v.push_back({"MoveTo",
               {{"O", K::Object}, {"D", K::Direction}},
               {atom("in-hand", {"O"})},
               {atom("moved-to", {"O", "D"}, {0.1, eps_axis}), atom("hand-free", {})},
               {},
               tol,
               {},
               "move the {O} to the {D}"});
  v.push_back({"Flip",
               {{"O", K::Object}, {"A", K::Axis}},
               {atom("in-hand", {"O"})},
               {atom("in-hand", {"O"}), atom("rotated-by", {"O", "A"}, {180.0, eps_axis})},
               {atom("in-hand", {"O"})},
               tol,
               {},
               "flip the {O} about the {A} axis"});
  (void)eps_ang;
  return v;
}

SkillRegistry SkillRegistry::with_builtins() {
  SkillRegistry r;
  for (auto& s : builtin_vocabulary()) r.register_skill(std::move(s));
  return r;
}

const SkillSpec& SkillRegistry::register_skill(SkillSpec spec) {
  if (find(spec.skill_id)) fail(ErrorCode::DuplicateSkill, "skill '" + spec.skill_id + "' already registered");
  const auto issues = validate_skill(spec);
  if (!issues.empty()) {
    std::string msg = "malformed skill '" + spec.skill_id + "':";
    for (const auto& i : issues) msg += " " + i + ";";
    fail(ErrorCode::MalformedSpec, msg);
  }
  skills_.push_back(std::move(spec));
  return skills_.back();
}

const SkillSpec* SkillRegistry::find(std::string_view skill_id) const {
  for (const auto& s : skills_)
    if (s.skill_id == skill_id) return &s;
  return nullptr;
}

const SkillSpec& SkillRegistry::get(std::string_view skill_id) const {
  if (const auto* s = find(skill_id)) return *s;
  fail(ErrorCode::UnsupportedSkill, "skill '" + std::string(skill_id) + "' is not registered");
}

// --- JSON --------------------------------------------------------------------

void to_json(json& j, const Atom& a) { j = json{{"name", a.name}, {"args", a.args}, {"params", a.params}}; }

void from_json(const json& j, Atom& a) {
  a.name = j.at("name").get<std::string>();
  a.args = j.value("args", std::vector<std::string>{});
  a.params = j.value("params", std::vector<double>{});
}

void to_json(json& j, const ToleranceSet& t) {
  j = json{{"eps_pos", t.eps_pos}, {"eps_ang", t.eps_ang}, {"eps_clear", t.eps_clear}, {"eps_axis", t.eps_axis}};
}

void from_json(const json& j, ToleranceSet& t) {
  ToleranceSet d;
  t.eps_pos = j.value("eps_pos", d.eps_pos);
  t.eps_ang = j.value("eps_ang", d.eps_ang);
  t.eps_clear = j.value("eps_clear", d.eps_clear);
  t.eps_axis = j.value("eps_axis", d.eps_axis);
}

void to_json(json& j, const SkillSpec& s) {
  json slots = json::array();
  for (const auto& sl : s.slots) slots.push_back({{"var", sl.var}, {"kind", arg_kind_name(sl.kind)}});
  json ann = json::array();
  for (auto k : s.required_annotations) ann.push_back(annotation_kind_name(k));
  j = json{{"skill_id", s.skill_id},
           {"slots", slots},
           {"p", s.p},
           {"q", s.q},
           {"c", s.c},
           {"tolerances", s.tolerances},
           {"required_annotations", ann},
           {"instruction_template", s.instruction_template}};
}

void from_json(const json& j, SkillSpec& s) {
  s.skill_id = j.at("skill_id").get<std::string>();
  s.slots.clear();
  for (const auto& sl : j.value("slots", json::array()))
    s.slots.push_back({sl.at("var").get<std::string>(), arg_kind_from_name(sl.at("kind").get<std::string>())});
  s.p = j.value("p", Conjunction{});
  s.q = j.value("q", Conjunction{});
  s.c = j.value("c", Conjunction{});
  s.tolerances = j.value("tolerances", ToleranceSet{});
  s.required_annotations.clear();
  for (const auto& a : j.value("required_annotations", json::array()))
    s.required_annotations.insert(annotation_kind_from_name(a.get<std::string>()));
  s.instruction_template = j.value("instruction_template", std::string{});
}

}  // namespace metafine
