#ifndef DIET_NLU_H
#define DIET_NLU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DnluStatus {
  DNLU_STATUS_OK = 0,
  DNLU_STATUS_INVALID_ARGUMENT = 1,
  DNLU_STATUS_IO = 2,
  DNLU_STATUS_FORMAT = 3,
  DNLU_STATUS_PROVIDER_MISMATCH = 4,
  DNLU_STATUS_NUMERIC = 5,
  DNLU_STATUS_PANIC = 6,
} DnluStatus;

// Opaque handle to a loaded model.
typedef struct DnluModel DnluModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model file. `dense_spec` may be null to rebuild the dense provider
// recorded in the model, or a spec such as `hash:64:7` or `file:PATH`.
//
// # Safety
// `path` and a non-null `dense_spec` must be NUL-terminated strings;
// `out` must be writable.
enum DnluStatus dnlu_model_load(const char *path, const char *dense_spec, struct DnluModel **out);

// # Safety
// `model` must come from [`dnlu_model_load`] and not be freed twice.
void dnlu_model_free(struct DnluModel *model);

// Number of intents the model ranks.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum DnluStatus dnlu_model_intent_count(const struct DnluModel *model, size_t *out);

// Ranks intents for `text` and writes a JSON object with `intent`,
// `ranking` and `entities`. Free the result with [`dnlu_string_free`].
//
// # Safety
// `model` must be a live handle, `text` NUL-terminated, `out_json` writable.
enum DnluStatus dnlu_predict_json(const struct DnluModel *model, const char *text, char **out_json);

// Writes dataset statistics and the class distribution of a JSONL corpus
// as JSON. Free the result with [`dnlu_string_free`].
//
// # Safety
// `path` must be NUL-terminated and `out_json` writable.
enum DnluStatus dnlu_dataset_stats_json(const char *path, char **out_json);

// Fills `out[0..dim]` with the unit-norm hash embedding of `key`.
//
// # Safety
// `key` must be NUL-terminated and `out` must hold `dim` floats.
enum DnluStatus dnlu_hash_embed(const char *key, size_t dim, uint64_t seed, float *out);

// # Safety
// `s` must come from this library, or be null.
void dnlu_string_free(char *s);

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from the same thread.
const char *dnlu_last_error(void);

// Library version, a static NUL-terminated string.
const char *dnlu_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIET_NLU_H */
