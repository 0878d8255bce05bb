/* C interface of the saod toolkit. Generated by cbindgen; do not edit. */

#ifndef SAOD_H
#define SAOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum SaodStatus {
  SAOD_STATUS_OK = 0,
  /**
   * Argument or data outside an operation's domain (including integrity
   * and validation failures).
   */
  SAOD_STATUS_DOMAIN = 1,
  /**
   * Filesystem failure.
   */
  SAOD_STATUS_IO = 2,
  /**
   * Malformed JSON or raster text.
   */
  SAOD_STATUS_PARSE = 3,
  SAOD_STATUS_NULL_POINTER = 4,
  SAOD_STATUS_INVALID_UTF8 = 5,
  /**
   * An internal invariant failed; the library caught a panic.
   */
  SAOD_STATUS_PANIC = 6,
} SaodStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SaodDataset SaodDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *saod_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * call from the same thread; do not free.
 */
const char *saod_last_error_message(void);

/**
 * Release a string returned by this library.
 */
void saod_string_free(char *s);

enum SaodStatus saod_dataset_load(const char *path, struct SaodDataset **out);

/**
 * Parse annotation JSON held in memory.
 */
enum SaodStatus saod_dataset_parse(const char *json, struct SaodDataset **out);

enum SaodStatus saod_dataset_save(const struct SaodDataset *ds, const char *path);

/**
 * Serialize a dataset to its annotation-file JSON.
 */
enum SaodStatus saod_dataset_to_json(const struct SaodDataset *ds, char **out_json);

void saod_dataset_free(struct SaodDataset *ds);

enum SaodStatus saod_dataset_counts(const struct SaodDataset *ds,
                                    size_t *images,
                                    size_t *annotations,
                                    size_t *categories);

/**
 * Count invariant violations; `report_json` (nullable) receives the full
 * report.
 */
enum SaodStatus saod_dataset_validate(const struct SaodDataset *ds,
                                      size_t *violation_count,
                                      char **report_json);

/**
 * Apply a split spec (JSON, e.g. `{"kind":"split1","p":0.5,"seed":7}`).
 * On success `out_ds` receives the sparsified dataset and `manifest_json`
 * (nullable) the removal manifest.
 */
enum SaodStatus saod_generate_split(const struct SaodDataset *ds,
                                    const char *spec_json,
                                    struct SaodDataset **out_ds,
                                    char **manifest_json);

enum SaodStatus saod_make_ssl_saod(const struct SaodDataset *labeled,
                                   const struct SaodDataset *unlabeled,
                                   struct SaodDataset **out_ds);

/**
 * Sparsity report (JSON) of `sparse` against `original`.
 */
enum SaodStatus saod_split_stats(const struct SaodDataset *original,
                                 const struct SaodDataset *sparse,
                                 char **report_json);

/**
 * Evaluate a detection results document (JSON array) against `gt`.
 * `thresholds` may be null with `n_thresholds = 0` for the standard
 * 0.50:0.05:0.95 grid.
 */
enum SaodStatus saod_evaluate_ap(const struct SaodDataset *gt,
                                 const char *results_json,
                                 const double *thresholds,
                                 size_t n_thresholds,
                                 char **report_json);

/**
 * IoU of two corner-form boxes.
 */
enum SaodStatus saod_iou(double ax1,
                         double ay1,
                         double ax2,
                         double ay2,
                         double bx1,
                         double by1,
                         double bx2,
                         double by2,
                         double *out);

/**
 * Greedy NMS over `n` boxes (`boxes` = 4n corner coordinates).
 * `categories` is required when `class_aware` is nonzero and may be null
 * otherwise. `keep` must hold `n` entries; `n_kept` receives the count.
 */
enum SaodStatus saod_nms(const double *boxes,
                         const double *scores,
                         const uint64_t *categories,
                         size_t n,
                         double iou_thresh,
                         int32_t class_aware,
                         size_t *keep,
                         size_t *n_kept);

/**
 * Per-proposal label written to `labels`: 0 background, 1 labeled,
 * 2 unlabeled. `matched_ids[i]` (nullable) receives the matched annotation
 * id for labeled proposals (0 otherwise). `gt_ids` may be null (ids
 * 1..=n_gt are assumed).
 */
enum SaodStatus saod_assign_proposals(const double *prop_boxes,
                                      const double *objectness,
                                      size_t n_props,
                                      const double *gt_boxes,
                                      const uint64_t *gt_ids,
                                      size_t n_gt,
                                      double tau_fg,
                                      double tau_bg,
                                      double tau_obj,
                                      double tau_ppm,
                                      int32_t ppm_active,
                                      int32_t *labels,
                                      uint64_t *matched_ids);

/**
 * Merge confident detections with ground truth. Output buffers must hold
 * `n_dets + n_gt` entries; `out_boxes` holds 4 values per entry.
 * `out_provenance`: 0 ground truth, 1 pseudo.
 */
enum SaodStatus saod_merge_ground_truth(const double *det_boxes,
                                        const double *det_scores,
                                        const uint64_t *det_categories,
                                        size_t n_dets,
                                        const double *gt_boxes,
                                        const uint64_t *gt_categories,
                                        size_t n_gt,
                                        double tau_m,
                                        double nms_iou,
                                        double *out_boxes,
                                        uint64_t *out_categories,
                                        double *out_scores,
                                        int32_t *out_provenance,
                                        size_t *n_out);

/**
 * Mean binary cross-entropy; `grad` (nullable) receives n values.
 */
enum SaodStatus saod_bce_loss(const double *pred,
                              const double *target,
                              size_t n,
                              double *loss,
                              double *grad);

/**
 * Softmax cross-entropy over unnormalized scores.
 */
enum SaodStatus saod_ce_loss(const double *scores,
                             size_t n,
                             size_t target_class,
                             double *loss,
                             double *grad);

/**
 * Smooth-L1 with mean reduction.
 */
enum SaodStatus saod_smooth_l1(const double *pred,
                               const double *target,
                               size_t n,
                               double beta,
                               double *loss,
                               double *grad);

/**
 * Squared Euclidean distance between two feature vectors; `grad_a` and
 * `grad_o` (nullable) receive n values each.
 */
enum SaodStatus saod_ssl_consistency(const double *f_a,
                                     const double *f_o,
                                     size_t n,
                                     double *loss,
                                     double *grad_a,
                                     double *grad_o);

/**
 * Total training objective `det_weight * (det_o + det_a) + rpn + ssl`.
 */
enum SaodStatus saod_total_loss(double det_o,
                                double det_a,
                                double rpn,
                                double ssl,
                                double det_weight,
                                double *out);

/**
 * Apply the augmentation cascade to an RGB8 buffer (`width * height * 3`
 * bytes). `boxes` holds 4n corner coordinates. `spec_json` (nullable)
 * overrides the default spec; `params_json` (nullable) receives the
 * sampled parameters for replay.
 */
enum SaodStatus saod_augment_image(const uint8_t *pixels,
                                   uint32_t width,
                                   uint32_t height,
                                   const double *boxes,
                                   size_t n_boxes,
                                   const char *spec_json,
                                   uint8_t *out_pixels,
                                   char **params_json);

/**
 * Re-apply recorded parameters to a same-size buffer.
 */
enum SaodStatus saod_replay_augment(const uint8_t *pixels,
                                    uint32_t width,
                                    uint32_t height,
                                    const char *params_json,
                                    uint8_t *out_pixels);

/**
 * Run the synthetic mining experiment from a JSON configuration with
 * members `scene`, `split`, `noise`, `thresholds`, and `merge`.
 * `report_json` receives the recovery report.
 */
enum SaodStatus saod_run_ppm_experiment(const char *config_json, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAOD_H */
