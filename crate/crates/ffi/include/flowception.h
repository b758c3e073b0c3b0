#ifndef FLOWCEPTION_H
#define FLOWCEPTION_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FC_THINNING_BERNOULLI 0

#define FC_THINNING_POISSON 1

#define FC_SCHEDULE_LINEAR 0

#define FC_SCHEDULE_POWER 1

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_IO = 3,
  FC_STATUS_FORMAT = 4,
  FC_STATUS_NUMERIC = 5,
  FC_STATUS_PANIC = 6,
} FcStatus;

/**
 * Opaque dataset.
 */
typedef struct FcDataset FcDataset;

/**
 * Opaque trained model.
 */
typedef struct FcModel FcModel;

/**
 * Opaque generated sequence.
 */
typedef struct FcSample FcSample;

typedef struct FcSamplerOptions {
  double h;
  uint32_t n_start;
  /**
   * `FC_THINNING_BERNOULLI` or `FC_THINNING_POISSON`.
   */
  uint32_t thinning;
  bool exact_integral;
  double w_s;
  double gamma;
  uint32_t max_len;
  uint32_t max_inserts_per_slot_step;
  uint64_t seed;
} FcSamplerOptions;

typedef struct FcFlops {
  double full_seq;
  double ar_nocache;
  double ar_cache;
  double flowception;
} FcFlops;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread. Valid until the next call
 * into this library on the same thread.
 */
const char *fc_last_error(void);

struct FcSamplerOptions fc_sampler_options_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FcStatus fc_model_load(const char *path, struct FcModel **out);

/**
 * # Safety
 * `model` must come from `fc_model_load` and not be used afterwards.
 */
void fc_model_free(struct FcModel *model);

/**
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum FcStatus fc_model_frame_shape(const struct FcModel *model,
                                   uint32_t *h,
                                   uint32_t *w,
                                   uint32_t *c);

/**
 * Generates one sequence. When `first_frame` is non-null it must point to
 * one frame of `first_frame_len` values and is used as an active context
 * frame in front.
 *
 * # Safety
 * `model` and `opts` must be valid; `out` must be writable.
 */
enum FcStatus fc_generate(const struct FcModel *model,
                          const struct FcSamplerOptions *opts,
                          const float *first_frame,
                          size_t first_frame_len,
                          struct FcSample **out);

/**
 * # Safety
 * `sample` must be a live handle or null.
 */
size_t fc_sample_length(const struct FcSample *sample);

/**
 * # Safety
 * `sample` must be a live handle or null.
 */
uint64_t fc_sample_steps(const struct FcSample *sample);

/**
 * # Safety
 * `sample` must be a live handle or null.
 */
bool fc_sample_truncated(const struct FcSample *sample);

/**
 * Number of `f32` values in one frame of the sample.
 *
 * # Safety
 * `sample` must be a live handle or null.
 */
size_t fc_sample_frame_numel(const struct FcSample *sample);

/**
 * Copies all frames, frame-major, into `buf` of capacity `cap` values.
 *
 * # Safety
 * `sample` must be a live handle; `buf` must hold `cap` floats.
 */
enum FcStatus fc_sample_copy_frames(const struct FcSample *sample, float *buf, size_t cap);

/**
 * # Safety
 * `sample` must come from `fc_generate` and not be used afterwards.
 */
void fc_sample_free(struct FcSample *sample);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FcStatus fc_dataset_read(const char *path, struct FcDataset **out);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t fc_dataset_count(const struct FcDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; `len` must be writable.
 */
enum FcStatus fc_dataset_video_length(const struct FcDataset *ds, size_t index, size_t *len);

/**
 * # Safety
 * `ds` must come from `fc_dataset_read` and not be used afterwards.
 */
void fc_dataset_free(struct FcDataset *ds);

/**
 * Reveal hazard `kappa'(t) / (1 - kappa(t))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FcStatus fc_hazard(uint32_t family, double power_p, double t, double *out);

/**
 * Hazard integrated over `[t, t + h]`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FcStatus fc_integrated_hazard(uint32_t family,
                                   double power_p,
                                   double t,
                                   double h,
                                   double *out);

/**
 * Analytic attention costs.
 *
 * # Safety
 * `out` must be writable.
 */
enum FcStatus fc_flops_analytic(uint64_t n,
                                uint64_t l,
                                uint64_t t_full,
                                uint64_t t_ar,
                                double alpha,
                                struct FcFlops *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWCEPTION_H */
