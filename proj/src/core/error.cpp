#include "metafine/error.hpp"

namespace metafine {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DuplicateSkill: return "DuplicateSkill";
    case ErrorCode::MalformedSpec: return "MalformedSpec";
    case ErrorCode::UnknownPredicate: return "UnknownPredicate";
    case ErrorCode::DuplicateObjectId: return "DuplicateObjectId";
    case ErrorCode::UnderconstrainedGeometry: return "UnderconstrainedGeometry";
    case ErrorCode::IncompatibleEdge: return "IncompatibleEdge";
    case ErrorCode::UnsupportedSkill: return "UnsupportedSkill";
    case ErrorCode::UnboundSlot: return "UnboundSlot";
    case ErrorCode::RegionInfeasible: return "RegionInfeasible";
    case ErrorCode::PlannerBudgetExhausted: return "PlannerBudgetExhausted";
    case ErrorCode::NoSubstitutableSlot: return "NoSubstitutableSlot";
    case ErrorCode::CollisionAtInit: return "CollisionAtInit";
    case ErrorCode::UnknownObject: return "UnknownObject";
    case ErrorCode::PolicyProtocolError: return "PolicyProtocolError";
    case ErrorCode::SpawnFailure: return "SpawnFailure";
    case ErrorCode::HandshakeTimeout: return "HandshakeTimeout";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::EmptyTraceSet: return "EmptyTraceSet";
    case ErrorCode::SingleLevel: return "SingleLevel";
    case ErrorCode::MismatchedTraceSets: return "MismatchedTraceSets";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::CorruptTrace: return "CorruptTrace";
    case ErrorCode::BadSplit: return "BadSplit";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::DegenerateBounds: return "DegenerateBounds";
    case ErrorCode::RealSourceUnavailable: return "RealSourceUnavailable";
    case ErrorCode::Unmappable: return "Unmappable";
    case ErrorCode::AdaptFailed: return "AdaptFailed";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace metafine
