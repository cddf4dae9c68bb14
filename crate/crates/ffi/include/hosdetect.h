#ifndef HOSDETECT_H
#define HOSDETECT_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HdAxis {
  HD_AXIS_D = 0,
  HD_AXIS_Q = 1,
} HdAxis;

typedef enum HdClassification {
  HD_CLASSIFICATION_NONE = 0,
  HD_CLASSIFICATION_UNILATERAL = 1,
  HD_CLASSIFICATION_BILATERAL = 2,
} HdClassification;

typedef enum HdLimitKind {
  HD_LIMIT_KIND_BILATERAL = 0,
  HD_LIMIT_KIND_UNILATERAL = 1,
} HdLimitKind;

typedef enum HdStatus {
  HD_STATUS_OK = 0,
  HD_STATUS_NULL_POINTER = 1,
  HD_STATUS_INVALID_ARGUMENT = 2,
  HD_STATUS_INVALID_RECORD = 3,
  HD_STATUS_ANALYSIS_FAILED = 4,
  /**
   * The requested value does not exist for this report, e.g. a saturation
   * level when no limiter was detected.
   */
  HD_STATUS_NOT_AVAILABLE = 5,
  HD_STATUS_PANIC = 6,
} HdStatus;

/**
 * A validated waveform record, three-phase or dq.
 */
typedef struct HdRecord HdRecord;

/**
 * The result of an analysis: one report per axis.
 */
typedef struct HdReport HdReport;

/**
 * Analysis settings. Zero in any field selects its default.
 */
typedef struct HdAnalyzeOptions {
  /**
   * Segment count M; default is as many as the record holds.
   */
  size_t segments;
  /**
   * Segment length N; default covers eight nominal periods.
   */
  size_t seg_len;
  /**
   * Coherence threshold for a peak, in (0, 1).
   */
  double threshold;
  /**
   * Relative magnitude floor applied to each segment spectrum.
   */
  double sigma_floor;
} HdAnalyzeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a three-phase record from `len` samples per phase.
 *
 * # Safety
 * `a`, `b` and `c` must each point to `len` readable doubles and `out` to
 * writable storage for one pointer.
 */
enum HdStatus hd_record_from_abc(const double *a,
                                 const double *b,
                                 const double *c,
                                 size_t len,
                                 double sample_rate_hz,
                                 double nominal_freq_hz,
                                 struct HdRecord **out);

/**
 * Builds a record from `len` samples of the d and q currents.
 *
 * # Safety
 * `d` and `q` must each point to `len` readable doubles and `out` to
 * writable storage for one pointer.
 */
enum HdStatus hd_record_from_dq(const double *d,
                                const double *q,
                                size_t len,
                                double sample_rate_hz,
                                double nominal_freq_hz,
                                struct HdRecord **out);

/**
 * Samples per channel, or 0 for a null handle.
 *
 * # Safety
 * `record` must be null or a live handle from this library.
 */
size_t hd_record_len(const struct HdRecord *record);

/**
 * Releases a record. Null is ignored.
 *
 * # Safety
 * `record` must be null or a handle not yet freed.
 */
void hd_record_free(struct HdRecord *record);

/**
 * Options with every field at its default (all zero).
 */
struct HdAnalyzeOptions hd_analyze_options_default(void);

/**
 * Analyses a record. `options` may be null for all defaults.
 *
 * # Safety
 * `record` must be a live handle, `options` null or readable, and `out`
 * writable storage for one pointer.
 */
enum HdStatus hd_analyze(const struct HdRecord *record,
                         const struct HdAnalyzeOptions *options,
                         struct HdReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void hd_report_free(struct HdReport *report);

/**
 * Classification of one axis.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum HdStatus hd_report_classification(const struct HdReport *report,
                                       enum HdAxis which,
                                       enum HdClassification *out);

/**
 * Estimated saturation level of one axis; `NotAvailable` when no limiter
 * was detected there.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum HdStatus hd_report_eta(const struct HdReport *report, enum HdAxis which, double *out);

/**
 * Fundamental frequency found on one axis, in Hz.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum HdStatus hd_report_fundamental_hz(const struct HdReport *report,
                                       enum HdAxis which,
                                       double *out);

/**
 * Initial phase used for the dq projection; `NotAvailable` for dq input.
 *
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum HdStatus hd_report_theta0(const struct HdReport *report, double *out);

/**
 * The full report as JSON, owned by the report and valid until it is freed.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
const char *hd_report_to_json(const struct HdReport *report);

/**
 * Third-harmonic distortion of a bilateral limiter driven at level `eta`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HdStatus hd_hd3_bilateral(double eta, double *out);

/**
 * Second-harmonic distortion of a unilateral limiter driven at level `eta`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HdStatus hd_hd2_unilateral(double eta, double *out);

/**
 * Saturation level that produces distortion `hd` for the given limiter.
 *
 * # Safety
 * `out` must be writable.
 */
enum HdStatus hd_invert_saturation(double hd, enum HdLimitKind kind, double *out);

/**
 * Copies the calling thread's last error message into `buf` (nul
 * terminated, truncated to `cap`). Returns the full message length
 * excluding the nul, or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t hd_last_error_message(char *buf, size_t cap);

/**
 * Library version, a static nul-terminated string.
 */
const char *hd_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOSDETECT_H */
