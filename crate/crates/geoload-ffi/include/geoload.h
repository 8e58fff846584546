/* C interface to the geoload forecasting and explanation library. */

#ifndef GEOLOAD_H
#define GEOLOAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirrored in the generated header.
 */
typedef enum GeoloadStatus {
  GEOLOAD_OK = 0,
  /**
   * Runtime failure (I/O, numerics, training divergence).
   */
  GEOLOAD_ERR_RUNTIME = 1,
  /**
   * Invalid configuration or arguments.
   */
  GEOLOAD_ERR_INVALID = 2,
  /**
   * A required pointer was null.
   */
  GEOLOAD_ERR_NULL_POINTER = 3,
} GeoloadStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct GeoloadModel GeoloadModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *geoload_last_error(void);

/**
 * Write a synthetic dataset (load.csv, weather.csv, locations.csv) into
 * `out_dir`. Planted weights decay geometrically from location 0.
 *
 * # Safety
 * `out_dir` must be a valid NUL-terminated string.
 */
enum GeoloadStatus geoload_synth(const char *out_dir,
                                 uintptr_t n_locations,
                                 uintptr_t n_days,
                                 double noise_mw,
                                 uint64_t seed);

/**
 * Train the integrated model on CSVs in `data_dir` (default
 * configuration) and write the model file to `model_path`.
 *
 * # Safety
 * Both arguments must be valid NUL-terminated strings.
 */
enum GeoloadStatus geoload_train(const char *data_dir, const char *model_path, uint64_t seed);

/**
 * Load a trained model file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer. On success `*out` owns the handle until `geoload_model_free`.
 */
enum GeoloadStatus geoload_model_load(const char *path, struct GeoloadModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from `geoload_model_load` and not be freed twice.
 */
void geoload_model_free(struct GeoloadModel *handle);

/**
 * Number of weather collection locations the model was trained on.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum GeoloadStatus geoload_model_locations(const struct GeoloadModel *handle, uintptr_t *out);

/**
 * Forecast one hour, in MW. `node_features` is row-major n x 2 (z-scored
 * temperature, humidity); `exo` has the 50 calendar/lag entries with lags
 * z-scored.
 *
 * # Safety
 * `node_features` must hold n*2 doubles, `exo` 50 doubles; all pointers
 * valid.
 */
enum GeoloadStatus geoload_model_predict(const struct GeoloadModel *handle,
                                         const double *node_features,
                                         const double *exo,
                                         double *out_mw);

/**
 * Score per-location importance over the test split of `data_dir` and
 * write `importances` (length n, MW) and `ranking` (location indices,
 * most important first).
 *
 * # Safety
 * `importances` and `ranking` must each have room for n entries, where n
 * is the model's location count.
 */
enum GeoloadStatus geoload_explain(const struct GeoloadModel *handle,
                                   const char *data_dir,
                                   uintptr_t mask_count,
                                   uintptr_t sample_limit,
                                   uint64_t seed,
                                   double *importances,
                                   uintptr_t *ranking);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOLOAD_H */
