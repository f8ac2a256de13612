#pragma once

#include <stdexcept>
#include <string>

namespace metafine {

// Values are part of the C ABI (see metafine_c.h); append only.
enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  IoFailure = 2,
  SchemaViolation = 3,
  DuplicateSkill = 4,
  MalformedSpec = 5,
  UnknownPredicate = 6,
  DuplicateObjectId = 7,
  UnderconstrainedGeometry = 8,
  IncompatibleEdge = 9,
  UnsupportedSkill = 10,
  UnboundSlot = 11,
  RegionInfeasible = 12,
  PlannerBudgetExhausted = 13,
  NoSubstitutableSlot = 14,
  CollisionAtInit = 15,
  UnknownObject = 16,
  PolicyProtocolError = 17,
  SpawnFailure = 18,
  HandshakeTimeout = 19,
  VersionMismatch = 20,
  EmptyTraceSet = 21,
  SingleLevel = 22,
  MismatchedTraceSets = 23,
  SchemaVersionMismatch = 24,
  CorruptTrace = 25,
  BadSplit = 26,
  EmptySet = 27,
  DegenerateBounds = 28,
  RealSourceUnavailable = 29,
  Unmappable = 30,
  AdaptFailed = 31,
  ConfigInvalid = 32,
  Internal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace metafine
