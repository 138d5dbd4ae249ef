#ifndef ENCOMPASS_H
#define ENCOMPASS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum EncStatus {
  ENC_STATUS_OK = 0,
  // A required pointer argument was null.
  ENC_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  ENC_STATUS_INVALID_UTF8 = 2,
  // Input data or a model failed to parse or validate.
  ENC_STATUS_INVALID_INPUT = 3,
  // Shapes of the arguments disagree.
  ENC_STATUS_DIMENSION = 4,
  // The estimator failed, e.g. no draw satisfied the constraints.
  ENC_STATUS_ESTIMATION = 5,
  // A caller-provided buffer is too small.
  ENC_STATUS_BUFFER_TOO_SMALL = 6,
  // An unexpected internal failure.
  ENC_STATUS_INTERNAL = 7,
} EncStatus;

// Opaque model handle, built against one table's shape.
typedef struct EncModel EncModel;

// Opaque table handle.
typedef struct EncTable EncTable;

// Run settings for [`enc_bayes_factor`]; start from
// [`enc_settings_default`].
typedef struct EncSettings {
  uint64_t seed;
  uint64_t draws;
  uint64_t pilot;
  uint64_t replicates;
  // Symmetric Dirichlet prior concentration per cell.
  double concentration;
} EncSettings;

// Summary of a Bayes factor against the encompassing model, natural log.
typedef struct EncBfResult {
  double log_bf;
  // Standard deviation over replicates.
  double sd;
  uint64_t replicates;
  // Largest number of tolerance stages used by a replicate.
  uint32_t stages;
  // 1 when a stage chain stopped on a small effective sample size.
  uint8_t truncated;
  // 1 for models with about-equality rows.
  uint8_t about_equality;
  // Smallest first-stage effective sample size.
  double min_ess;
  // Number of warnings; see the JSON variant for their text.
  uint32_t warnings;
} EncBfResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failure on this thread, or an empty string.
// Valid until the next failing call on the same thread.
const char *enc_last_error(void);

// Library version as a static string.
const char *enc_version(void);

// Free a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void enc_string_free(char *s);

// Load a bundled dataset by name.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum EncStatus enc_table_fixture(const char *name, struct EncTable **out);

// Parse a table from CSV text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum EncStatus enc_table_from_csv(const char *text, struct EncTable **out);

// Parse a table from JSON text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum EncStatus enc_table_from_json(const char *text, struct EncTable **out);

// # Safety
// `t` must come from this library and not have been freed. Null is ignored.
void enc_table_free(struct EncTable *t);

// Number of variables, or 0 for a null handle.
//
// # Safety
// `t` must be null or a live table handle.
size_t enc_table_num_variables(const struct EncTable *t);

// Number of strata, or 0 for a null handle.
//
// # Safety
// `t` must be null or a live table handle.
size_t enc_table_num_strata(const struct EncTable *t);

// Total count over all strata, or 0 for a null handle.
//
// # Safety
// `t` must be null or a live table handle.
uint64_t enc_table_total(const struct EncTable *t);

// Copy the category counts of each variable into `dims[0..len]`.
//
// # Safety
// `t` must be a live table handle; `dims` must hold `len` entries.
enum EncStatus enc_table_dims(const struct EncTable *t, size_t *dims, size_t len);

// Flat 0-based offset of a 1-based multi-index, last variable fastest.
//
// # Safety
// `index` and `dims` must each hold `q` entries; `out` must be writable.
enum EncStatus enc_lex_index(const size_t *index, const size_t *dims, size_t q, size_t *out);

// Build a model from model-spec JSON against `table`'s shape.
//
// # Safety
// `json` must be a NUL-terminated string, `table` a live handle and `out`
// writable.
enum EncStatus enc_model_from_json(const char *json,
                                   const struct EncTable *table,
                                   struct EncModel **out);

// Build one of the bundled models of a case study, e.g. `("father_son", "M3")`.
//
// # Safety
// `dataset` and `name` must be NUL-terminated strings, `table` a live
// handle and `out` writable.
enum EncStatus enc_model_bundled(const char *dataset,
                                 const char *name,
                                 const struct EncTable *table,
                                 struct EncModel **out);

// # Safety
// `m` must come from this library and not have been freed. Null is ignored.
void enc_model_free(struct EncModel *m);

// Number of about-equality rows, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live model handle.
size_t enc_model_num_equalities(const struct EncModel *m);

// Number of inequality rows, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live model handle.
size_t enc_model_num_inequalities(const struct EncModel *m);

// Default settings: 10^6 draws, 10^5 pilot draws, one replicate, unit prior.
struct EncSettings enc_settings_default(void);

// Bayes factor of `model` against the encompassing model.
//
// # Safety
// `model` and `table` must be live handles, `settings` null or valid, and
// `out` writable.
enum EncStatus enc_bayes_factor(const struct EncModel *model,
                                const struct EncTable *table,
                                const struct EncSettings *settings,
                                struct EncBfResult *out);

// Bayes factor as the full serialised estimate; free `*out_json` with
// [`enc_string_free`].
//
// # Safety
// As [`enc_bayes_factor`]; `out_json` must be writable.
enum EncStatus enc_bayes_factor_json(const struct EncModel *model,
                                     const struct EncTable *table,
                                     const struct EncSettings *settings,
                                     char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENCOMPASS_H */
