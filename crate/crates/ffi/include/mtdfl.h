#ifndef MTDFL_H
#define MTDFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MtdflStatus {
  MTDFL_STATUS_OK = 0,
  MTDFL_STATUS_NULL_POINTER = 1,
  MTDFL_STATUS_INVALID_UTF8 = 2,
  MTDFL_STATUS_INVALID_CONFIG = 3,
  MTDFL_STATUS_SIMULATION = 4,
  MTDFL_STATUS_OUT_OF_RANGE = 5,
  MTDFL_STATUS_BUFFER_TOO_SMALL = 6,
  MTDFL_STATUS_PANIC = 7,
} MtdflStatus;

/**
 * Scenario configuration handle.
 */
typedef struct MtdflConfig MtdflConfig;

/**
 * Outcome of a finished experiment.
 */
typedef struct MtdflReport MtdflReport;

/**
 * One (mode, iteration) cell of an experiment summary.
 */
typedef struct MtdflSummaryRow {
  /**
   * 0 FL, 1 FL-Attack, 2 MTD-FL, 3 RND-MTD(k).
   */
  uint32_t mode;
  /**
   * `k` for RND-MTD, otherwise 0.
   */
  uint32_t mode_k;
  /**
   * 1-based FL iteration.
   */
  uint32_t iteration;
  uint32_t runs;
  double accuracy_mean;
  double accuracy_std;
  double excluded_ratio_mean;
  double excluded_ratio_std;
  double t_int_mean;
  double t_int_std;
  double participants_mean;
  double participants_std;
} MtdflSummaryRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string. Returns the message length without the NUL, or
 * -1 when `buf` is null or too small; `needed` then holds the size to use.
 *
 * # Safety
 * `buf` must point to `len` writable bytes; `needed` may be null.
 */
int64_t mtdfl_last_error_message(char *buf, size_t len, size_t *needed);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mtdfl_version(void);

/**
 * Creates the reference configuration.
 */
struct MtdflConfig *mtdfl_config_default(void);

/**
 * Parses and validates a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MtdflStatus mtdfl_config_from_toml(const char *toml, struct MtdflConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void mtdfl_config_free(struct MtdflConfig *cfg);

/**
 * Overrides the first seed, the number of seeds and the number of agent
 * training episodes.
 *
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum MtdflStatus mtdfl_config_set_run(struct MtdflConfig *cfg,
                                      uint64_t seed,
                                      size_t seeds,
                                      size_t episodes);

/**
 * Replaces the list of defense modes, given as a comma-separated string
 * such as `"FL,FL-Attack,RND-MTD(2),MTD-FL"`.
 *
 * # Safety
 * `cfg` must be a live handle and `modes` a NUL-terminated string.
 */
enum MtdflStatus mtdfl_config_set_modes(struct MtdflConfig *cfg, const char *modes);

/**
 * Runs the experiment, writing the run directory, and returns a report.
 *
 * # Safety
 * `cfg` must be a live handle, `run_dir` a NUL-terminated path and `out` a
 * valid pointer.
 */
enum MtdflStatus mtdfl_run_experiment(const struct MtdflConfig *cfg,
                                      const char *run_dir,
                                      struct MtdflReport **out);

/**
 * Number of metrics records written. 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
size_t mtdfl_report_records(const struct MtdflReport *report);

/**
 * Number of summary rows. 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
size_t mtdfl_report_summary_len(const struct MtdflReport *report);

/**
 * Copies summary row `index` into `out`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum MtdflStatus mtdfl_report_summary_row(const struct MtdflReport *report,
                                          size_t index,
                                          struct MtdflSummaryRow *out);

/**
 * Copies the run directory path into `buf` (NUL-terminated).
 *
 * # Safety
 * `report` must be a live handle and `buf` point to `len` writable bytes.
 */
enum MtdflStatus mtdfl_report_run_dir(const struct MtdflReport *report, char *buf, size_t len);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from this library and not be used afterwards.
 */
void mtdfl_report_free(struct MtdflReport *report);

/**
 * Shannon rate `B log(1 + Pt g / noise)` in bits per second.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MtdflStatus mtdfl_link_rate(double bandwidth,
                                 double tx_power,
                                 double gain,
                                 double noise,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTDFL_H */
