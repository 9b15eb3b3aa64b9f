#ifndef ATTNBEAM_H
#define ATTNBEAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AttnbeamStatus {
  ATTNBEAM_STATUS_OK = 0,
  ATTNBEAM_STATUS_NULL_POINTER = 1,
  ATTNBEAM_STATUS_INVALID_ARGUMENT = 2,
  ATTNBEAM_STATUS_SHAPE_MISMATCH = 3,
  ATTNBEAM_STATUS_IO = 4,
  ATTNBEAM_STATUS_BUFFER_TOO_SMALL = 5,
  ATTNBEAM_STATUS_INTERNAL = 6,
} AttnbeamStatus;

typedef enum AttnbeamStream {
  ATTNBEAM_STREAM_SPEECH = 0,
  ATTNBEAM_STREAM_NOISE = 1,
} AttnbeamStream;

/*
 Enhancement settings.
 */
typedef struct AttnbeamConfig AttnbeamConfig;

/*
 Output of one enhancement run.
 */
typedef struct AttnbeamEnhanced AttnbeamEnhanced;

/*
 Multichannel 16 kHz signal.
 */
typedef struct AttnbeamSignal AttnbeamSignal;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *attnbeam_last_error(void);

/*
 Copies `channels * len` channel-major samples into a new signal.

 # Safety
 `samples` must point to `channels * len` readable doubles and `out` to a
 writable handle slot.
 */
enum AttnbeamStatus attnbeam_signal_new(const double *samples,
                                        size_t channels,
                                        size_t len,
                                        struct AttnbeamSignal **out);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum AttnbeamStatus attnbeam_signal_load_wav(const char *path, struct AttnbeamSignal **out);

/*
 Writes 32-bit float WAV.

 # Safety
 `signal` must be a live handle and `path` a NUL-terminated string.
 */
enum AttnbeamStatus attnbeam_signal_save_wav(const struct AttnbeamSignal *signal, const char *path);

/*
 Zero for a null handle.

 # Safety
 `signal` must be null or a live handle.
 */
size_t attnbeam_signal_channels(const struct AttnbeamSignal *signal);

/*
 # Safety
 `signal` must be null or a live handle.
 */
size_t attnbeam_signal_len(const struct AttnbeamSignal *signal);

/*
 Copies the samples, channel-major, into `buf`, which must hold
 `channels * len` values.

 # Safety
 `signal` must be a live handle and `buf` must point to `capacity`
 writable doubles.
 */
enum AttnbeamStatus attnbeam_signal_copy(const struct AttnbeamSignal *signal,
                                         double *buf,
                                         size_t capacity);

/*
 # Safety
 `signal` must be null or a handle not yet freed.
 */
void attnbeam_signal_free(struct AttnbeamSignal *signal);

/*
 Renders a scene from configuration text (empty for a sampled scene)
 with seeded synthetic speech.

 # Safety
 `config` must be a NUL-terminated string; `mixture` and `clean` must be
 writable handle slots.
 */
enum AttnbeamStatus attnbeam_simulate(const char *config,
                                      uint64_t seed,
                                      struct AttnbeamSignal **mixture,
                                      struct AttnbeamSignal **clean);

/*
 New configuration for `mode`, for example `"mvdr-batch"`.

 # Safety
 `mode` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum AttnbeamStatus attnbeam_config_new(const char *mode, struct AttnbeamConfig **out);

/*
 `"WLM"`, `"IRM"` or `"IBM"`.

 # Safety
 `config` must be a live handle and `mask` a NUL-terminated string.
 */
enum AttnbeamStatus attnbeam_config_set_mask(struct AttnbeamConfig *config, const char *mask);

/*
 # Safety
 `config` must be a live handle.
 */
enum AttnbeamStatus attnbeam_config_set_ref_channel(struct AttnbeamConfig *config, size_t channel);

/*
 # Safety
 `config` must be a live handle.
 */
enum AttnbeamStatus attnbeam_config_set_diag_loading(struct AttnbeamConfig *config, double loading);

/*
 # Safety
 `config` must be a live handle.
 */
enum AttnbeamStatus attnbeam_config_set_separate_noise_attention(struct AttnbeamConfig *config,
                                                                 bool separate);

/*
 Query/key features for `mvdr-tv-featfile`, `frames * dim` row-major.

 # Safety
 `config` must be a live handle and `values` must point to
 `frames * dim` readable doubles.
 */
enum AttnbeamStatus attnbeam_config_set_features(struct AttnbeamConfig *config,
                                                 const double *values,
                                                 size_t frames,
                                                 size_t dim);

/*
 # Safety
 `config` must be null or a handle not yet freed.
 */
void attnbeam_config_free(struct AttnbeamConfig *config);

/*
 Enhances `mixture` with oracle masks from `clean`.

 # Safety
 All handles must be live and `out` a writable handle slot.
 */
enum AttnbeamStatus attnbeam_enhance(const struct AttnbeamSignal *mixture,
                                     const struct AttnbeamSignal *clean,
                                     const struct AttnbeamConfig *config,
                                     struct AttnbeamEnhanced **out);

/*
 Copies the enhanced mono output into a new signal handle.

 # Safety
 `result` must be a live handle and `out` a writable handle slot.
 */
enum AttnbeamStatus attnbeam_enhanced_output(const struct AttnbeamEnhanced *result,
                                             struct AttnbeamSignal **out);

/*
 Number of (frame, bin) pairs that fell back to the reference channel.

 # Safety
 `result` must be null or a live handle.
 */
size_t attnbeam_enhanced_flagged_bins(const struct AttnbeamEnhanced *result);

/*
 Frame count of the attention matrix for `stream`, or 0 when the mode
 does not compute one.

 # Safety
 `result` must be null or a live handle.
 */
size_t attnbeam_enhanced_attention_frames(const struct AttnbeamEnhanced *result,
                                          enum AttnbeamStream stream);

/*
 Copies the `T x T` attention matrix row-major into `buf`.

 # Safety
 `result` must be a live handle and `buf` must point to `capacity`
 writable doubles.
 */
enum AttnbeamStatus attnbeam_enhanced_attention(const struct AttnbeamEnhanced *result,
                                                enum AttnbeamStream stream,
                                                double *buf,
                                                size_t capacity);

/*
 # Safety
 `result` must be null or a handle not yet freed.
 */
void attnbeam_enhanced_free(struct AttnbeamEnhanced *result);

/*
 SI-SNR in dB of mono `estimate` against mono `reference`.

 # Safety
 Both handles must be live and `out` writable.
 */
enum AttnbeamStatus attnbeam_si_snr(const struct AttnbeamSignal *reference,
                                    const struct AttnbeamSignal *estimate,
                                    double *out);

/*
 STOI of mono `estimate` against mono `reference`.

 # Safety
 Both handles must be live and `out` writable.
 */
enum AttnbeamStatus attnbeam_stoi(const struct AttnbeamSignal *reference,
                                  const struct AttnbeamSignal *estimate,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTNBEAM_H */
