/* C interface of the sopt engine. Generated by cbindgen; do not edit. */

#ifndef SOPT_H
#define SOPT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; 2 to 4 match the command-line exit codes.
 */
typedef enum SoptStatus {
  SOPT_STATUS_OK = 0,
  SOPT_STATUS_OTHER = 1,
  SOPT_STATUS_CONFIG = 2,
  SOPT_STATUS_NUMERICAL = 3,
  SOPT_STATUS_MISSING_INPUT = 4,
  SOPT_STATUS_NULL_POINTER = 5,
  SOPT_STATUS_INVALID_ARGUMENT = 6,
  SOPT_STATUS_BUFFER_TOO_SMALL = 7,
  SOPT_STATUS_PANIC = 8,
} SoptStatus;

/**
 * Opaque handle to a loaded recognition net.
 */
typedef struct SoptNet SoptNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *sopt_last_error(void);

/**
 * Engine version as a static NUL-terminated string.
 */
const char *sopt_version(void);

/**
 * Loads a checkpoint into `*out`. Free it with [`sopt_net_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SoptStatus sopt_net_load(const char *path, struct SoptNet **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `net` must be null or a live handle from [`sopt_net_load`].
 */
void sopt_net_free(struct SoptNet *net);

/**
 * Writes channels, height and width to `out[0..3]`.
 *
 * # Safety
 * `net` must be a live handle and `out` point to 3 writable `size_t`.
 */
enum SoptStatus sopt_net_input_shape(const struct SoptNet *net, size_t *out);

/**
 * # Safety
 * `net` must be a live handle and `out` writable.
 */
enum SoptStatus sopt_net_num_classes(const struct SoptNet *net, size_t *out);

/**
 * Copies the NUL-terminated name of class `index` into `buf`. `*needed`
 * (when non-null) receives the size including the terminator; a short
 * buffer gives `BufferTooSmall` and leaves `buf` untouched.
 *
 * # Safety
 * `net` must be a live handle, `buf` hold `buf_len` bytes (or be null with
 * `buf_len` 0) and `needed` be null or writable.
 */
enum SoptStatus sopt_net_class_name(const struct SoptNet *net,
                                    size_t index,
                                    char *buf,
                                    size_t buf_len,
                                    size_t *needed);

/**
 * Top-1 class of one `C x H x W` image with values in `[0, 1]`.
 *
 * # Safety
 * `net` must be a live handle, `pixels` point to `len` floats and
 * `out_class` be writable.
 */
enum SoptStatus sopt_net_classify(const struct SoptNet *net,
                                  const float *pixels,
                                  size_t len,
                                  size_t *out_class);

/**
 * Class logits of one image into `out[0..out_len]`; `out_len` must equal
 * the class count.
 *
 * # Safety
 * As [`sopt_net_classify`], with `out` pointing to `out_len` writable floats.
 */
enum SoptStatus sopt_net_logits(const struct SoptNet *net,
                                const float *pixels,
                                size_t len,
                                float *out,
                                size_t out_len);

/**
 * Runs `command` (`train`, `synth` or `eval`) with a JSON config, exactly
 * as the command-line tool does with `--config`. `out_dir` may be null to
 * keep the config's output directory.
 *
 * # Safety
 * `command` and `config_json` must be NUL-terminated strings; `out_dir`
 * null or NUL-terminated.
 */
enum SoptStatus sopt_run_config(const char *command, const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOPT_H */
