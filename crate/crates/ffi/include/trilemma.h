#ifndef TRILEMMA_H
#define TRILEMMA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call. The configuration, data and numeric codes
 match the CLI's exit codes.
 */
typedef enum TrilemmaStatus {
  TRILEMMA_STATUS_OK = 0,
  TRILEMMA_STATUS_NULL_POINTER = 1,
  TRILEMMA_STATUS_CONFIG = 2,
  TRILEMMA_STATUS_DATA = 3,
  TRILEMMA_STATUS_NUMERIC = 4,
  TRILEMMA_STATUS_PANIC = 5,
} TrilemmaStatus;

/*
 Rényi-DP accountant state.
 */
typedef struct TrilemmaAccountant TrilemmaAccountant;

/*
 A loaded model checkpoint.
 */
typedef struct TrilemmaModel TrilemmaModel;

/*
 Message for the last failed call on this thread, or NULL if none.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *trilemma_last_error(void);

/*
 Loads a model checkpoint from a NUL-terminated UTF-8 path.

 # Safety
 `path` must be a valid C string; `out` must be writable.
 */
enum TrilemmaStatus trilemma_model_load(const char *path, struct TrilemmaModel **out);

/*
 Releases a model handle.

 # Safety
 `model` must come from [`trilemma_model_load`] and not be used afterwards.
 */
void trilemma_model_free(struct TrilemmaModel *model);

/*
 Input and output widths of a model.

 # Safety
 `model` must be a live handle; out-pointers must be writable.
 */
enum TrilemmaStatus trilemma_model_dims(const struct TrilemmaModel *model,
                                        size_t *input_dim,
                                        size_t *output_dim);

/*
 Class probabilities for `rows` row-major samples of width `cols`.
 `probs` receives `rows * output_dim` values; `labels`, if not NULL,
 receives the arg-max class of each row.

 # Safety
 Buffers must hold the stated number of elements.
 */
enum TrilemmaStatus trilemma_model_predict(const struct TrilemmaModel *model,
                                           const double *features,
                                           size_t rows,
                                           size_t cols,
                                           double *probs,
                                           size_t probs_len,
                                           size_t *labels);

/*
 New accountant over `orders` (NULL / 0 selects the default order grid).

 # Safety
 `orders` must hold `num_orders` values; `out` must be writable.
 */
enum TrilemmaStatus trilemma_accountant_new(const double *orders,
                                            size_t num_orders,
                                            struct TrilemmaAccountant **out);

/*
 Releases an accountant handle.

 # Safety
 `acc` must come from [`trilemma_accountant_new`] and not be used afterwards.
 */
void trilemma_accountant_free(struct TrilemmaAccountant *acc);

/*
 Composes `steps` subsampled-Gaussian releases into the accountant.

 # Safety
 `acc` must be a live handle.
 */
enum TrilemmaStatus trilemma_accountant_compose(struct TrilemmaAccountant *acc,
                                                double noise_multiplier,
                                                double sampling_rate,
                                                uint64_t steps);

/*
 Converts the accumulated RDP to (epsilon, delta)-DP; `order` (optional)
 receives the minimizing order.

 # Safety
 `acc` must be a live handle; `epsilon` must be writable.
 */
enum TrilemmaStatus trilemma_accountant_epsilon(const struct TrilemmaAccountant *acc,
                                                double delta,
                                                double *epsilon,
                                                double *order);

/*
 Smallest noise multiplier meeting `target_epsilon` over `steps` releases.

 # Safety
 Out-pointers other than `noise_multiplier` may be NULL.
 */
enum TrilemmaStatus trilemma_calibrate_noise(double target_epsilon,
                                             double delta,
                                             double sampling_rate,
                                             uint64_t steps,
                                             double *noise_multiplier,
                                             double *achieved_epsilon,
                                             double *order);

/*
 Mann–Whitney AUC of member scores against non-member scores.

 # Safety
 Score buffers must hold the stated counts; `out` must be writable.
 */
enum TrilemmaStatus trilemma_auc(const double *members,
                                 size_t num_members,
                                 const double *nonmembers,
                                 size_t num_nonmembers,
                                 double *out);

/*
 Harmonic score of accuracy, attack AUC and bias.

 # Safety
 `out` must be writable.
 */
enum TrilemmaStatus trilemma_harmonic_score(double accuracy,
                                            double mia_auc,
                                            double bias,
                                            double *out);

/*
 Domain bias from per-class prediction counts on the gray and color test sets.

 # Safety
 Both buffers must hold `num_classes` counts; `out` must be writable.
 */
enum TrilemmaStatus trilemma_bias_synthetic(const size_t *gray_counts,
                                            const size_t *color_counts,
                                            size_t num_classes,
                                            double *out);

/*
 Signed group bias of predicted positives relative to true positives.

 # Safety
 `out` must be writable.
 */
enum TrilemmaStatus trilemma_bias_realworld(double p_w,
                                            double p_m,
                                            double n_w,
                                            double n_m,
                                            double *out);

#endif  /* TRILEMMA_H */
