/* SPDX-License-Identifier: Apache-2.0
 *
 * idsan - identity-leakage auditing and linear sanitization for frozen
 * visual embeddings.
 *
 * C interface to the shared library. All objects are opaque handles created
 * and destroyed through these functions; every fallible call returns an
 * error code (IDSAN_OK on success) and leaves a human-readable message
 * retrievable with idsan_last_error() on failure. Audit runs return reports
 * as heap-allocated JSON strings released with idsan_string_free().
 */
#ifndef IDSAN_H
#define IDSAN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IDSAN_API __declspec(dllexport)
#else
#define IDSAN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  IDSAN_OK = 0,
  IDSAN_ERR_IO = 1,
  IDSAN_ERR_FORMAT = 2,
  IDSAN_ERR_METADATA = 3,
  IDSAN_ERR_SPLIT_VIOLATION = 4,
  IDSAN_ERR_DEGENERATE_VECTOR = 5,
  IDSAN_ERR_INSUFFICIENT_IMAGES = 6,
  IDSAN_ERR_RANK_DEFICIENT = 7,
  IDSAN_ERR_DEGENERATE_FIT = 8,
  IDSAN_ERR_DIM = 9,
  IDSAN_ERR_INVALID_BASIS = 10,
  IDSAN_ERR_UNSUPPORTED_VERSION = 11,
  IDSAN_ERR_EMPTY_IMPOSTORS = 12,
  IDSAN_ERR_SINGULAR_SYSTEM = 13,
  IDSAN_ERR_TRAINING_DIVERGED = 14,
  IDSAN_ERR_EMPTY_INPUT = 15,
  IDSAN_ERR_INVALID_GRID = 16,
  IDSAN_ERR_DEGENERATE_BOX = 17,
  IDSAN_ERR_UNREACHABLE = 18,
  IDSAN_ERR_INVALID_K = 19,
  IDSAN_ERR_DEGENERATE_TASK = 20,
  IDSAN_ERR_MISSING_TRUTH = 21,
  IDSAN_ERR_UNDEFINED_RETENTION = 22,
  IDSAN_ERR_INVALID_ARGUMENT = 23,
  IDSAN_ERR_INTERNAL = 24
};

/* exit-code partition for command-line front ends:
 * 1 = usage, 2 = data, 3 = numerical */
IDSAN_API int idsan_error_class(int code);

IDSAN_API const char* idsan_version(void);
/* thread-local message for the most recent failure in this thread */
IDSAN_API const char* idsan_last_error(void);
IDSAN_API void idsan_string_free(char* s);

typedef struct idsan_embeddings idsan_embeddings;
typedef struct idsan_projector idsan_projector;

/* ---- labeled embedding sets (EMB1 + JSON sidecar) ---- */

IDSAN_API int idsan_embeddings_load(const char* path, idsan_embeddings** out);
IDSAN_API int idsan_embeddings_save(const idsan_embeddings* set,
                                    const char* path);
IDSAN_API int idsan_embeddings_normalize(const idsan_embeddings* set,
                                         idsan_embeddings** out);
IDSAN_API int idsan_embeddings_dim(const idsan_embeddings* set);
IDSAN_API int64_t idsan_embeddings_count(const idsan_embeddings* set);
IDSAN_API int idsan_embeddings_identity_count(const idsan_embeddings* set);
IDSAN_API void idsan_embeddings_free(idsan_embeddings* set);

/* ---- synthetic sets with a planted identity subspace ---- */

typedef struct idsan_synth_params {
  int32_t dim;
  int32_t identities;
  int32_t images_per_identity;
  int32_t identity_rank;
  double identity_scale;
  double noise_scale;
  int32_t task_classes;
  int32_t task_rank;
  double task_scale;
  int32_t train_identities;
  int32_t val_identities;
  int32_t test_identities;
  uint64_t seed;
  uint64_t subspace_seed;
  const char* provenance; /* optional */
} idsan_synth_params;

IDSAN_API void idsan_synth_params_init(idsan_synth_params* p);
/* out_planted (optional) receives the planted identity basis as a rank-r*
 * subspace projector handle */
IDSAN_API int idsan_synth_generate(const idsan_synth_params* p,
                                   idsan_embeddings** out_set,
                                   idsan_projector** out_planted);

/* ---- sanitization projectors ---- */

IDSAN_API int idsan_fit_isp(const idsan_embeddings* set, int rank, int whiten,
                            const char* provenance, idsan_projector** out);
IDSAN_API int idsan_fit_leace(const idsan_embeddings* set, double lambda,
                              const char* provenance, idsan_projector** out);
IDSAN_API int idsan_projector_apply(const idsan_projector* p,
                                    const idsan_embeddings* in,
                                    idsan_embeddings** out);
IDSAN_API int idsan_projector_save(const idsan_projector* p, const char* path);
IDSAN_API int idsan_projector_load(const char* path, idsan_projector** out);
IDSAN_API int idsan_projector_dim(const idsan_projector* p);
IDSAN_API int idsan_projector_rank(const idsan_projector* p);
/* "isp" or "leace"; pointer owned by the handle */
IDSAN_API const char* idsan_projector_kind(const idsan_projector* p);
IDSAN_API void idsan_projector_free(idsan_projector* p);

/* cosines of principal angles between two subspace projectors, descending;
 * writes up to cap values and stores the full length in out_len */
IDSAN_API int idsan_principal_angles(const idsan_projector* a,
                                     const idsan_projector* b, double* cosines,
                                     size_t cap, size_t* out_len);

/* ---- audit runs (reports as canonical JSON strings) ---- */

typedef struct idsan_probe_params {
  const char* probe;   /* "ridge" | "mlp" */
  const char* project; /* "none" | "isp" | "leace" */
  int32_t rank;
  double lambda;
  int32_t whiten;
  const int32_t* k_grid; /* NULL -> {1, 4, 16} */
  size_t k_count;
  int32_t seeds;
  double far_target;
  int32_t quota; /* impostors per ordered identity pair; 0 = auto */
  uint64_t seed;
  int32_t threads; /* 0 -> IDSAN_THREADS env or hardware */
  const char* dataset_tag;
  const char* model_tag;
  int32_t bootstrap_ci; /* 0 = Student-t across seeds, 1 = bootstrap */
  int32_t mlp_hidden;
  int32_t mlp_epochs;
  int32_t mlp_batch;
  int32_t mlp_out_dim;
  double mlp_lr;
} idsan_probe_params;

IDSAN_API void idsan_probe_params_init(idsan_probe_params* p);

IDSAN_API int idsan_audit_probe(const idsan_embeddings* set,
                                const idsan_probe_params* p,
                                char** report_json);
IDSAN_API int idsan_audit_sweep_rank(const idsan_embeddings* set,
                                     const idsan_probe_params* p,
                                     const int32_t* ranks, size_t n_ranks,
                                     char** report_json);
IDSAN_API int idsan_audit_sweep_identities(const idsan_embeddings* set,
                                           const idsan_probe_params* p,
                                           const int32_t* counts,
                                           size_t n_counts,
                                           char** report_json);
IDSAN_API int idsan_audit_transfer(const idsan_embeddings* a,
                                   const idsan_embeddings* b,
                                   const idsan_probe_params* p,
                                   char** report_json);

typedef struct idsan_attrib_params {
  uint64_t bootstrap_seed;
  int32_t bootstrap_resamples;
} idsan_attrib_params;

IDSAN_API void idsan_attrib_params_init(idsan_attrib_params* p);
IDSAN_API int idsan_audit_attrib(const idsan_embeddings* variants,
                                 const idsan_attrib_params* p,
                                 char** report_json);

typedef struct idsan_utility_params {
  int32_t knn_k;
  double alpha;
  const char* truth_path; /* optional retrieval ground truth (JSON pairs) */
  const int32_t* recall_ks;
  size_t recall_k_count;
} idsan_utility_params;

IDSAN_API void idsan_utility_params_init(idsan_utility_params* p);
/* projector may be NULL for a raw-only report */
IDSAN_API int idsan_audit_utility(const idsan_embeddings* train,
                                  const idsan_embeddings* test,
                                  const idsan_projector* projector,
                                  const idsan_utility_params* p,
                                  char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* IDSAN_H */
