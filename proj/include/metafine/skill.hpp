#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace metafine {

using nlohmann::json;

enum class ArgKind { Object, Part, Reference, Direction, Axis, Value };

// How a numeric parameter compares when checking q => p.
//   Tolerance: achieved value must be <= required (smaller is stricter).
//   Minimum:   achieved value must be >= required (larger is stricter).
//   Target:    |achieved - required| <= required[companion], or exact when
//              there is no companion parameter.
enum class Strictness { Tolerance, Minimum, Target };

struct ParamSpec {
  std::string key;
  std::string unit;
  Strictness strictness;
  int companion = -1;
};

struct PredicateInfo {
  std::string name;
  std::vector<ArgKind> args;
  std::vector<ParamSpec> params;
};

/// The closed predicate table. Arity and parameter layout are fixed per name.
const std::vector<PredicateInfo>& predicate_vocabulary();
const PredicateInfo* find_predicate(std::string_view name);

/// Predicate instance. Arguments follow the Prolog convention: a term whose
/// first character is uppercase is a variable, anything else is an entity id.
struct Atom {
  std::string name;
  std::vector<std::string> args;
  std::vector<double> params;

  bool operator==(const Atom&) const = default;
};

using Conjunction = std::vector<Atom>;
using Substitution = std::map<std::string, std::string>;

bool is_variable(std::string_view term);
std::string to_string(const Atom& atom);

/// True iff every atom of `p` is matched by an atom of `q` under one
/// substitution of p's variables, with q's parameters at least as strict.
/// Variables occurring in `q` are treated as opaque constants.
/// Throws UnknownPredicate when either side uses a name outside the table.
std::optional<Substitution> implies(const Conjunction& q, const Conjunction& p);

/// Apply a substitution to every argument; unmapped terms are left alone.
Conjunction substitute(const Conjunction& c, const Substitution& s);

enum class AnnotationKind { PartRegion, GraspPose, ActuationAxis, HingeAxis, SlidingDirection, RotationAxis };

const char* annotation_kind_name(AnnotationKind k);
AnnotationKind annotation_kind_from_name(std::string_view name);

struct ToleranceSet {
  double eps_pos = 0.005;  // m
  double eps_ang = 5.0;    // deg
  double eps_clear = 0.002;  // m
  double eps_axis = 5.0;   // deg

  bool operator==(const ToleranceSet&) const = default;
};

struct SlotDecl {
  std::string var;
  ArgKind kind;

  bool operator==(const SlotDecl&) const = default;
};

struct SkillSpec {
  std::string skill_id;
  std::vector<SlotDecl> slots;
  Conjunction p;  // preconditions
  Conjunction q;  // postconditions, also the stage acceptance test
  Conjunction c;  // constraints monitored on every step
  ToleranceSet tolerances;
  std::set<AnnotationKind> required_annotations;
  std::string instruction_template;

  bool operator==(const SkillSpec&) const = default;
};

/// Returns the list of violated invariants; empty when the spec is well formed.
std::vector<std::string> validate_skill(const SkillSpec& spec);

/// The ten atomic skills, in a fixed order.
std::vector<SkillSpec> builtin_vocabulary();

class SkillRegistry {
 public:
  SkillRegistry() = default;
  static SkillRegistry with_builtins();

  /// Throws DuplicateSkill or MalformedSpec.
  const SkillSpec& register_skill(SkillSpec spec);

  const SkillSpec* find(std::string_view skill_id) const;
  const SkillSpec& get(std::string_view skill_id) const;
  const std::vector<SkillSpec>& skills() const { return skills_; }

 private:
  std::vector<SkillSpec> skills_;
};

void to_json(json& j, const Atom& a);
void from_json(const json& j, Atom& a);
void to_json(json& j, const ToleranceSet& t);
void from_json(const json& j, ToleranceSet& t);
void to_json(json& j, const SkillSpec& s);
void from_json(const json& j, SkillSpec& s);

const char* arg_kind_name(ArgKind k);
ArgKind arg_kind_from_name(std::string_view name);

}  // namespace metafine
