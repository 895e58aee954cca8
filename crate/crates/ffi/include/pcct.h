#ifndef PCCT_H
#define PCCT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcctStatus {
  PCCT_STATUS_OK = 0,
  PCCT_STATUS_NULL_POINTER = 1,
  PCCT_STATUS_INVALID_ARGUMENT = 2,
  PCCT_STATUS_IO = 3,
  PCCT_STATUS_PARSE = 4,
  PCCT_STATUS_CONTRACT = 5,
  PCCT_STATUS_DIMENSION = 6,
  PCCT_STATUS_TRAINING = 7,
  PCCT_STATUS_PANIC = 8,
} PcctStatus;

/**
 * A training configuration.
 */
typedef struct PcctConfig PcctConfig;

/**
 * A labelled feature matrix.
 */
typedef struct PcctDataset PcctDataset;

/**
 * A trained extractor with its centers or head.
 */
typedef struct PcctModel PcctModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pcct_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *pcct_version(void);

/**
 * Generate a named synthetic preset (`skin7-like`, `separable-3`, ...).
 *
 * # Safety
 * `preset` must be a nul-terminated string; `out` a valid pointer.
 */
enum PcctStatus pcct_dataset_generate(const char *preset, uint64_t seed, struct PcctDataset **out);

/**
 * Load a CSV whose first column is `label`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` a valid pointer.
 */
enum PcctStatus pcct_dataset_load_csv(const char *path, struct PcctDataset **out);

/**
 * Build a dataset from a row-major `n x dim` matrix and `n` labels.
 * `num_classes` of 0 means one more than the largest label.
 *
 * # Safety
 * `features` must point to `n * dim` doubles and `labels` to `n` values.
 */
enum PcctStatus pcct_dataset_from_arrays(const double *features,
                                         const size_t *labels,
                                         size_t n,
                                         size_t dim,
                                         size_t num_classes,
                                         struct PcctDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library, freed at most once.
 */
void pcct_dataset_free(struct PcctDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum PcctStatus pcct_dataset_len(const struct PcctDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum PcctStatus pcct_dataset_dim(const struct PcctDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be a live handle and `out` a valid pointer.
 */
enum PcctStatus pcct_dataset_num_classes(const struct PcctDataset *ds, size_t *out);

/**
 * Default configuration (method `pcct`).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcctStatus pcct_config_default(struct PcctConfig **out);

/**
 * Parse a TOML configuration; unknown keys are rejected.
 *
 * # Safety
 * `toml` must be a nul-terminated string; `out` a valid pointer.
 */
enum PcctStatus pcct_config_from_toml(const char *toml, struct PcctConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle and `name` a nul-terminated string.
 */
enum PcctStatus pcct_config_set_method(struct PcctConfig *cfg, const char *name);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum PcctStatus pcct_config_set_seed(struct PcctConfig *cfg, uint64_t seed);

/**
 * Epochs of stage 1, stage 2 and the baselines' single stage.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum PcctStatus pcct_config_set_epochs(struct PcctConfig *cfg,
                                       size_t stage1,
                                       size_t stage2,
                                       size_t baseline);

/**
 * # Safety
 * `cfg` must be null or a handle from this library, freed at most once.
 */
void pcct_config_free(struct PcctConfig *cfg);

/**
 * Train the configured method on `ds`.
 *
 * # Safety
 * `cfg` and `ds` must be live handles; `out` a valid pointer.
 */
enum PcctStatus pcct_train(const struct PcctConfig *cfg,
                           const struct PcctDataset *ds,
                           struct PcctModel **out);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` a valid pointer.
 */
enum PcctStatus pcct_model_load(const char *path, struct PcctModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a nul-terminated string.
 */
enum PcctStatus pcct_model_save(const struct PcctModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum PcctStatus pcct_model_embedding_dim(const struct PcctModel *model, size_t *out);

/**
 * Embed `n` rows of `dim` features into `out`, which must hold
 * `n * pcct_model_embedding_dim` doubles.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum PcctStatus pcct_model_embed(const struct PcctModel *model,
                                 const double *features,
                                 size_t n,
                                 size_t dim,
                                 double *out,
                                 size_t out_len);

/**
 * Predicted class of each of `n` rows, written to `out_labels[0..n]`.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum PcctStatus pcct_model_predict(const struct PcctModel *model,
                                   const double *features,
                                   size_t n,
                                   size_t dim,
                                   size_t *out_labels);

/**
 * Macro F1 (percent) of `model` on `ds`.
 *
 * # Safety
 * `model` and `ds` must be live handles; `out` a valid pointer.
 */
enum PcctStatus pcct_model_evaluate(const struct PcctModel *model,
                                    const struct PcctDataset *ds,
                                    double *out_mf1);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void pcct_model_free(struct PcctModel *model);

/**
 * `[d(a,p) + alpha - d(a,n)]_+` for three vectors of length `dim`.
 *
 * # Safety
 * Vector pointers must hold `dim` doubles; `out` must be valid.
 */
enum PcctStatus pcct_triplet_loss(const double *anchor,
                                  const double *positive,
                                  const double *negative,
                                  size_t dim,
                                  double alpha,
                                  uint32_t p_norm,
                                  double *out);

/**
 * `[d(a, c_anchor) + alpha - d(a, c_negative)]_+`; the classes must differ.
 *
 * # Safety
 * Vector pointers must hold `dim` doubles; `out` must be valid.
 */
enum PcctStatus pcct_center_triplet_loss(const double *anchor,
                                         const double *anchor_center,
                                         const double *negative_center,
                                         size_t dim,
                                         size_t anchor_class,
                                         size_t negative_class,
                                         double alpha,
                                         uint32_t p_norm,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCCT_H */
