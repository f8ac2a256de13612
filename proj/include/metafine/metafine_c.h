#ifndef METAFINE_C_H
#define METAFINE_C_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define MF_API __attribute__((visibility("default")))
#else
#define MF_API
#endif

/* Every function returning int returns MF_OK or one of the codes below; on
 * failure mf_last_error() describes the problem for the calling thread.
 * Strings returned through char** are heap-allocated; release with mf_free. */
enum {
  MF_OK = 0,
  MF_INVALID_ARGUMENT = 1,
  MF_IO_FAILURE = 2,
  MF_SCHEMA_VIOLATION = 3,
  MF_DUPLICATE_SKILL = 4,
  MF_MALFORMED_SPEC = 5,
  MF_UNKNOWN_PREDICATE = 6,
  MF_DUPLICATE_OBJECT_ID = 7,
  MF_UNDERCONSTRAINED_GEOMETRY = 8,
  MF_INCOMPATIBLE_EDGE = 9,
  MF_UNSUPPORTED_SKILL = 10,
  MF_UNBOUND_SLOT = 11,
  MF_REGION_INFEASIBLE = 12,
  MF_PLANNER_BUDGET_EXHAUSTED = 13,
  MF_NO_SUBSTITUTABLE_SLOT = 14,
  MF_COLLISION_AT_INIT = 15,
  MF_UNKNOWN_OBJECT = 16,
  MF_POLICY_PROTOCOL_ERROR = 17,
  MF_SPAWN_FAILURE = 18,
  MF_HANDSHAKE_TIMEOUT = 19,
  MF_VERSION_MISMATCH = 20,
  MF_EMPTY_TRACE_SET = 21,
  MF_SINGLE_LEVEL = 22,
  MF_MISMATCHED_TRACE_SETS = 23,
  MF_SCHEMA_VERSION_MISMATCH = 24,
  MF_CORRUPT_TRACE = 25,
  MF_BAD_SPLIT = 26,
  MF_EMPTY_SET = 27,
  MF_DEGENERATE_BOUNDS = 28,
  MF_REAL_SOURCE_UNAVAILABLE = 29,
  MF_UNMAPPABLE = 30,
  MF_ADAPT_FAILED = 31,
  MF_CONFIG_INVALID = 32,
  MF_INTERNAL = 99
};

typedef struct mf_library mf_library;
typedef struct mf_registry mf_registry;
typedef struct mf_task mf_task;

MF_API const char* mf_version(void);
/* Data directory of the source tree this library was built from. */
MF_API const char* mf_default_data_dir(void);
MF_API const char* mf_last_error(void);
MF_API int mf_last_error_code(void);
MF_API const char* mf_error_name(int code);
MF_API void mf_free(char* s);

/* Asset library: a directory of *.json records or a single file. */
MF_API int mf_library_load(const char* path, mf_library** out);
MF_API int mf_library_to_json(const mf_library* lib, char** out_json);
MF_API int mf_library_save(const mf_library* lib, const char* dir);
MF_API void mf_library_free(mf_library* lib);
/* {"valid", "records", "errors": [{"code", "message"}]}; returns the first
 * violation's code when invalid, with out_json still filled in. */
MF_API int mf_validate_assets(const char* path, char** out_json);

MF_API int mf_registry_builtin(mf_registry** out);
MF_API int mf_registry_register(mf_registry* reg, const char* skill_json);
MF_API int mf_registry_graph(const mf_registry* reg, char** out_json);
MF_API void mf_registry_free(mf_registry* reg);

/* Accepts a compose request or a full task spec. */
MF_API int mf_task_from_json(const mf_registry* reg, const mf_library* lib, const char* json, mf_task** out);
MF_API int mf_task_to_json(const mf_task* task, char** out_json);
MF_API void mf_task_free(mf_task* task);

/* Trace outputs are JSON lines, one rollout trace per line. */
MF_API int mf_demos(const mf_task* task, const mf_library* lib, int count, uint64_t seed, int budget,
                    char** out_jsonl);
/* perturb is "geometric:2", "photometric:1" or NULL for nominal. */
MF_API int mf_run(const mf_task* task, const mf_library* lib, const char* policy, const char* perturb, int trials,
                  uint64_t seed, int budget, char** out_jsonl);
/* Runs the original and intervened task on shared configurations and seeds. */
MF_API int mf_intervene(const mf_task* task, const mf_registry* reg, const mf_library* lib, const char* kind,
                        const char* policy, int trials, uint64_t seed, int budget, char** out_json);
/* Robustness curve anchored at the nominal level, plus its AUSC and CSV form. */
MF_API int mf_perturb_sweep(const mf_task* task, const mf_library* lib, const char* policy, const char* kind,
                            const int* levels, int n_levels, int trials, uint64_t seed, int budget, char** out_json);
/* options_json: {"n", "N", "alpha", "replications", "seed", "budget"}, all optional. */
MF_API int mf_ppi(const mf_task* task, const mf_library* lib, const char* policy, const char* options_json,
                  const char* real_source, char** out_json);
/* {"mapped", "task", "report"}; returns MF_UNMAPPABLE with out_json filled when
 * the document does not map. New assets are added to lib. */
MF_API int mf_adapt(const char* doc_json, mf_library* lib, const mf_registry* reg, char** out_json);
MF_API int mf_adapt_roundtrip(const char* doc_json, const mf_task* native, const mf_library* lib,
                              const mf_registry* reg, const char* policy, int trials, uint64_t seed, char** out_json);

MF_API int mf_campaign_run(const char* config_path, int resume, char** out_json);
MF_API int mf_report_emit(const char* campaign_dir, const char* out_dir, char** out_json);

MF_API int mf_ausc(const double* levels, const double* sr, int n, double* out);

#ifdef __cplusplus
}
#endif

#endif
