#ifndef TELEMETRY_ANOMALY_H
#define TELEMETRY_ANOMALY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_POINTER = 1,
  TA_STATUS_INVALID_ARGUMENT = 2,
  TA_STATUS_DATA_ERROR = 3,
  TA_STATUS_IO_ERROR = 4,
  TA_STATUS_SINGLE_CLASS = 5,
  TA_STATUS_LEAKAGE = 6,
  TA_STATUS_NON_FINITE_LOSS = 7,
  TA_STATUS_PANIC = 8,
} TaStatus;

// Opaque autoencoder handle.
typedef struct TaAutoencoder TaAutoencoder;

typedef struct TaConfusion {
  uint64_t true_anomalies;
  uint64_t false_anomalies;
  uint64_t true_normals;
  uint64_t false_normals;
} TaConfusion;

typedef struct TaMetrics {
  double accuracy;
  double precision;
  double recall;
  double specificity;
  double f1;
} TaMetrics;

typedef struct TaThreshold {
  uint32_t percentile;
  double threshold;
  struct TaMetrics metrics;
  // Number of percentiles tied with the chosen one.
  uint32_t tie_count;
} TaThreshold;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread, or an empty string. The
// pointer stays valid until the next library call on the same thread.
const char *ta_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ta_version(void);

// Great-circle distance in kilometres between two points in degrees.
double ta_haversine_km(double lat_a, double lon_a, double lat_b, double lon_b);

// Confusion counts of `n` predicted and true labels.
//
// # Safety
// `predicted` and `truth` must be valid for `n` reads; `out` must be
// writable.
enum TaStatus ta_confusion(const uint8_t *predicted,
                           const uint8_t *truth,
                           size_t n,
                           struct TaConfusion *out);

// Ratio metrics of a confusion matrix; undefined ratios are NaN.
//
// # Safety
// `cm` must be readable and `out` writable.
enum TaStatus ta_metrics(const struct TaConfusion *cm, struct TaMetrics *out);

// ROC AUC with anomalies as the positive class; higher scores are more
// anomalous.
//
// # Safety
// `scores` and `truth` must be valid for `n` reads; `out` must be writable.
enum TaStatus ta_roc_auc(const double *scores, const uint8_t *truth, size_t n, double *out);

// Builds the percentile table of `errors` over percentiles 1..=100 and
// selects the threshold maximising recall, then precision, then
// specificity.
//
// # Safety
// `errors` and `truth` must be valid for `n` reads; `out` must be writable.
enum TaStatus ta_select_threshold(const double *errors,
                                  const uint8_t *truth,
                                  size_t n,
                                  struct TaThreshold *out);

// Creates a freshly initialised autoencoder.
//
// # Safety
// `out` must be writable. The handle must be released with
// [`ta_autoencoder_free`].
enum TaStatus ta_autoencoder_new(size_t input_dim,
                                 size_t units,
                                 size_t bottleneck,
                                 uint64_t seed,
                                 struct TaAutoencoder **out);

// Loads an autoencoder checkpoint written by the library.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum TaStatus ta_autoencoder_load(const char *path, struct TaAutoencoder **out);

// # Safety
// `handle` must come from this library; `path` must be NUL-terminated.
enum TaStatus ta_autoencoder_save(const struct TaAutoencoder *handle, const char *path);

// Number of weights and biases.
//
// # Safety
// `handle` must be null or come from this library. Returns 0 for null.
size_t ta_autoencoder_parameter_count(const struct TaAutoencoder *handle);

// Trains on `rows` x `cols` row-major values already scaled to [0, 1].
// `final_loss`, if not null, receives the last epoch's mean training loss.
//
// # Safety
// `handle` must come from this library; `data` must be valid for
// `rows * cols` reads.
enum TaStatus ta_autoencoder_train(struct TaAutoencoder *handle,
                                   const double *data,
                                   size_t rows,
                                   size_t cols,
                                   double learning_rate,
                                   size_t batch_size,
                                   size_t epochs,
                                   uint64_t seed,
                                   double *final_loss);

// Per-row reconstruction error of `rows` x `cols` row-major values.
//
// # Safety
// `handle` must come from this library; `data` must be valid for
// `rows * cols` reads and `out` for `rows` writes.
enum TaStatus ta_autoencoder_score(const struct TaAutoencoder *handle,
                                   const double *data,
                                   size_t rows,
                                   size_t cols,
                                   double *out);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` must be null or come from this library and not be used again.
void ta_autoencoder_free(struct TaAutoencoder *handle);

// Runs the full pipeline described by a TOML run configuration and writes
// its artifacts to the configured output directory.
//
// # Safety
// `config_path` must be a NUL-terminated string.
enum TaStatus ta_run_experiment(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TELEMETRY_ANOMALY_H */
