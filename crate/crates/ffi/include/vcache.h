#ifndef VCACHE_H
#define VCACHE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a library call. Values 1 to 5 match the CLI exit codes.
 */
typedef enum VcStatus {
  VC_STATUS_OK = 0,
  VC_STATUS_IO = 1,
  VC_STATUS_INVALID_ARGUMENT = 2,
  VC_STATUS_MISSING_LOSSES = 3,
  VC_STATUS_NON_FINITE = 4,
  VC_STATUS_DIVERGED = 5,
  VC_STATUS_NULL_POINTER = 6,
  VC_STATUS_BUFFER_TOO_SMALL = 7,
  VC_STATUS_PANIC = 8,
} VcStatus;

/**
 * Loaded or generated embedding dataset.
 */
typedef struct VcDataset VcDataset;

/**
 * Velocity field (GMM or MLP).
 */
typedef struct VcField VcField;

/**
 * Result of a coreset or random-baseline selection.
 */
typedef struct VcManifest VcManifest;

/**
 * Caching schedule parameters.
 */
typedef struct VcCacheConfig {
  /**
   * Relative smoothness threshold, in (0, 1).
   */
  double threshold;
  /**
   * Recompute interval during the stable phase.
   */
  size_t interval;
  /**
   * Trailing steps that are always computed.
   */
  size_t adjust;
  size_t min_onset;
} VcCacheConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vc_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void vc_string_free(char *s);

/**
 * Loads a JSONL dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VcStatus vc_dataset_load_jsonl(const char *path, struct VcDataset **out);

/**
 * Loads a binary embedding matrix.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VcStatus vc_dataset_load_matrix(const char *path, struct VcDataset **out);

/**
 * Generates the deterministic clustered dataset used by `vcache synth`.
 *
 * # Safety
 * `out` must be writable.
 */
enum VcStatus vc_dataset_synth(uint64_t seed,
                               size_t n,
                               size_t dim,
                               size_t clusters,
                               double spread,
                               struct VcDataset **out);

/**
 * Writes a dataset as JSONL.
 *
 * # Safety
 * `dataset` must be a live handle; `path` a NUL-terminated string.
 */
enum VcStatus vc_dataset_save_jsonl(const struct VcDataset *dataset, const char *path);

/**
 * Number of records; 0 for null.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t vc_dataset_len(const struct VcDataset *dataset);

/**
 * Embedding dimension; 0 for null.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t vc_dataset_dim(const struct VcDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not freed before.
 */
void vc_dataset_free(struct VcDataset *dataset);

/**
 * Difficulty scoring, forward pass and greedy selection, as in
 * `vcache select`. `budget` accepts `"10"`, `"0.1"` or `"10%"`.
 *
 * # Safety
 * `dataset` must be a live handle, `budget` a NUL-terminated string and
 * `out` writable.
 */
enum VcStatus vc_coreset_select(const struct VcDataset *dataset,
                                const char *budget,
                                size_t k_neighbors,
                                double gamma_f,
                                double gamma_r,
                                double sample_fraction,
                                uint64_t seed,
                                struct VcManifest **out);

/**
 * Seeded uniform selection of the same budget.
 *
 * # Safety
 * As for [`vc_coreset_select`].
 */
enum VcStatus vc_random_baseline(const struct VcDataset *dataset,
                                 const char *budget,
                                 uint64_t seed,
                                 struct VcManifest **out);

/**
 * Number of picks; 0 for null.
 *
 * # Safety
 * `manifest` must be null or a live handle.
 */
size_t vc_manifest_len(const struct VcManifest *manifest);

/**
 * Copies the picked row indices, in selection order, into `indices`.
 *
 * # Safety
 * `indices` must have room for `capacity` elements.
 */
enum VcStatus vc_manifest_indices(const struct VcManifest *manifest,
                                  size_t *indices,
                                  size_t capacity);

/**
 * Manifest as pretty JSON, same bytes as `manifest.json` without the
 * trailing newline. Free the result with [`vc_string_free`].
 *
 * # Safety
 * `manifest` must be a live handle; `out` writable.
 */
enum VcStatus vc_manifest_to_json(const struct VcManifest *manifest, char **out);

/**
 * # Safety
 * `manifest` must be null or a handle not freed before.
 */
void vc_manifest_free(struct VcManifest *manifest);

struct VcCacheConfig vc_cache_config_default(void);

/**
 * Fills `mask` (one byte per step, 1 = compute) for a run of `n_steps`
 * with the given onset; a negative onset means none was detected. A null
 * `config` uses the defaults. `computed` may be null.
 *
 * # Safety
 * `mask` must have room for `capacity` bytes.
 */
enum VcStatus vc_plan_schedule(size_t n_steps,
                               ptrdiff_t onset,
                               const struct VcCacheConfig *config,
                               uint8_t *mask,
                               size_t capacity,
                               size_t *computed);

/**
 * The bundled two-component GMM field in two dimensions.
 *
 * # Safety
 * `out` must be writable.
 */
enum VcStatus vc_field_gmm_bundled(struct VcField **out);

/**
 * Parses a field from JSON: a GMM (`{"components": [...]}`) or an MLP
 * written by `vcache train-flow`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` writable.
 */
enum VcStatus vc_field_from_json(const char *json, struct VcField **out);

/**
 * Field dimension; 0 for null.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t vc_field_dim(const struct VcField *field);

/**
 * # Safety
 * `field` must be null or a handle not freed before.
 */
void vc_field_free(struct VcField *field);

/**
 * Integrates one sample from `x0` over `n_steps` Euler steps and writes the
 * endpoint to `endpoint` (`dim` values). A null `cache` runs every step;
 * otherwise the three-stage cache is used. `evaluations` (nullable)
 * receives the number of field evaluations.
 *
 * # Safety
 * `x0` and `endpoint` must each hold `dim` values.
 */
enum VcStatus vc_integrate(const struct VcField *field,
                           const double *x0,
                           size_t dim,
                           size_t n_steps,
                           const struct VcCacheConfig *cache,
                           double *endpoint,
                           size_t *evaluations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCACHE_H */
