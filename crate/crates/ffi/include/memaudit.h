#ifndef MEMAUDIT_H
#define MEMAUDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Application risk tiers, as passed to [`ma_recommend_strategy`].
 */
typedef enum MaRiskTier {
  MA_RISK_TIER_HIGH = 0,
  MA_RISK_TIER_MEDIUM = 1,
  MA_RISK_TIER_LOW = 2,
} MaRiskTier;

/**
 * Result codes. Zero is success.
 */
typedef enum MaStatus {
  MA_STATUS_OK = 0,
  MA_STATUS_NULL_ARGUMENT = 1,
  MA_STATUS_INVALID_UTF8 = 2,
  MA_STATUS_INVALID_ARGUMENT = 3,
  MA_STATUS_IO = 4,
  MA_STATUS_FORMAT = 5,
  MA_STATUS_DIMENSION_MISMATCH = 6,
  MA_STATUS_ZERO_VECTOR = 7,
  MA_STATUS_CONSTANT_SERIES = 8,
  MA_STATUS_LENGTH_MISMATCH = 9,
  MA_STATUS_BUFFER_TOO_SMALL = 10,
  MA_STATUS_PANIC = 11,
} MaStatus;

/**
 * Prompting strategies, as passed to [`ma_render_prompt`].
 */
typedef enum MaStrategy {
  MA_STRATEGY_BASELINE = 0,
  MA_STRATEGY_TASK_INSTRUCTION = 1,
  MA_STRATEGY_NEGATION = 2,
  MA_STRATEGY_CHAIN_OF_THOUGHT = 3,
} MaStrategy;

/**
 * Opaque handle to a loaded corpus.
 */
typedef struct MaCorpus MaCorpus;

/**
 * One nearest-neighbour hit.
 */
typedef struct MaNeighbor {
  size_t row;
  double score;
} MaNeighbor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *ma_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ma_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ma_string_free(char *s);

/**
 * Loads a manifest + embedding store pair. On success `*out` owns a new
 * handle.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
enum MaStatus ma_corpus_load(const char *manifest_path,
                             const char *store_path,
                             struct MaCorpus **out);

/**
 * Releases a corpus handle. Null is ignored.
 *
 * # Safety
 * `corpus` must come from [`ma_corpus_load`] and not have been freed.
 */
void ma_corpus_free(struct MaCorpus *corpus);

/**
 * Number of records, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t ma_corpus_len(const struct MaCorpus *corpus);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t ma_corpus_dim(const struct MaCorpus *corpus);

/**
 * Hex sha256 of the manifest then store bytes. Free with [`ma_string_free`].
 *
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_corpus_digest(const struct MaCorpus *corpus, char **out);

/**
 * Record id at `row`. Free with [`ma_string_free`].
 *
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum MaStatus ma_corpus_record_id(const struct MaCorpus *corpus, size_t row, char **out);

/**
 * The `k` rows most similar to `query`, best first, ties by ascending row.
 * Writes `min(k, len)` entries into `out` (capacity `out_cap`) and the
 * count into `*out_len`.
 *
 * # Safety
 * `query` must hold `dim` floats, `out` room for `out_cap` entries.
 */
enum MaStatus ma_corpus_top_k(const struct MaCorpus *corpus,
                              const float *query,
                              size_t dim,
                              size_t k,
                              struct MaNeighbor *out,
                              size_t out_cap,
                              size_t *out_len);

/**
 * Cosine similarity of two `dim`-length vectors.
 *
 * # Safety
 * `a` and `b` must hold `dim` floats; `out` must be writable.
 */
enum MaStatus ma_cosine_similarity(const float *a, const float *b, size_t dim, double *out);

/**
 * Renders the built-in template for `strategy` (an [`MaStrategy`] value)
 * around `caption`. Free the result with [`ma_string_free`].
 *
 * # Safety
 * `caption` must be NUL-terminated; `out` must be writable.
 */
enum MaStatus ma_render_prompt(uint32_t strategy_code, const char *caption, char **out);

/**
 * Sample Pearson correlation of two length-`n` series.
 *
 * # Safety
 * `xs` and `ys` must hold `n` doubles; `out` must be writable.
 */
enum MaStatus ma_pearson(const double *xs, const double *ys, size_t n, double *out);

/**
 * Recommended strategy for a risk tier (an [`MaRiskTier`] value), as an
 * [`MaStrategy`] value; -1 for an unknown tier.
 */
int32_t ma_recommend_strategy(uint32_t tier_code);

/**
 * Stable snake_case name of a strategy code, or null if unknown. Static.
 */
const char *ma_strategy_name(uint32_t strategy_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMAUDIT_H */
