#ifndef SINS_ALIGN_H
#define SINS_ALIGN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes. Nonzero codes other than `InvalidArgument` and `Panic`
// match the command-line exit codes.
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  // Null pointer, invalid UTF-8 or a missing optional result.
  SA_STATUS_INVALID_ARGUMENT = 1,
  SA_STATUS_CONFIG = 2,
  SA_STATUS_INGESTION = 3,
  SA_STATUS_NUMERICAL = 4,
  // Internal failure; the handle arguments are left untouched.
  SA_STATUS_PANIC = 5,
} SaStatus;

// Alignment configuration loaded from a TOML file.
typedef struct SaConfig SaConfig;

// IMU record, GNSS fixes and optional truth.
typedef struct SaDataset SaDataset;

// Result of one alignment.
typedef struct SaReport SaReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating to `len` bytes. Returns the buffer size
// needed for the whole message; `buf` may be null to query it.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t sa_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *sa_version(void);

// Simulates the scenario file with the given master seed; truth is kept at
// the GNSS epochs.
//
// # Safety
// `scenario_path` must be a NUL-terminated string; `out` must be writable.
enum SaStatus sa_simulate(const char *scenario_path, uint64_t seed, struct SaDataset **out);

// Reads IMU and GNSS CSV files and, when `truth_path` is not null, a truth
// CSV.
//
// # Safety
// Paths must be NUL-terminated strings (`truth_path` may be null); `out`
// must be writable.
enum SaStatus sa_dataset_load(const char *imu_path,
                              const char *gnss_path,
                              const char *truth_path,
                              struct SaDataset **out);

// Number of IMU samples; 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t sa_dataset_imu_len(const struct SaDataset *dataset);

// Number of GNSS fixes; 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t sa_dataset_gnss_len(const struct SaDataset *dataset);

// # Safety
// `dataset` must be null or a handle not yet freed.
void sa_dataset_free(struct SaDataset *dataset);

// Loads an alignment configuration file.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out` must be writable.
enum SaStatus sa_config_load(const char *config_path, struct SaConfig **out);

// # Safety
// `config` must be null or a handle not yet freed.
void sa_config_free(struct SaConfig *config);

// Aligns `dataset` with `config`. `initial_attitude_deg` is
// `[pitch, roll, yaw]` in degrees or null; when null the configuration's
// initial attitude is used, or the truth perturbed by the configured
// misalignment.
//
// # Safety
// Handles must be live; `initial_attitude_deg` must be null or point to 3
// doubles; `out` must be writable.
enum SaStatus sa_align(const struct SaDataset *dataset,
                       const struct SaConfig *config,
                       const double *initial_attitude_deg,
                       struct SaReport **out);

// Writes the final `[pitch, roll, yaw]` in degrees to `out`.
//
// # Safety
// `report` must be a live handle; `out` must point to 3 writable doubles.
enum SaStatus sa_report_final_attitude_deg(const struct SaReport *report, double *out);

// Writes the final misalignment against the truth, arcmin, to `out`.
// Returns `InvalidArgument` when the dataset had no truth.
//
// # Safety
// `report` must be a live handle; `out` must point to 3 writable doubles.
enum SaStatus sa_report_final_error_arcmin(const struct SaReport *report, double *out);

// Number of passes run; 0 for a null handle.
//
// # Safety
// `report` must be null or a live handle.
size_t sa_report_pass_count(const struct SaReport *report);

// Whether the last pass corrected less than the convergence threshold.
//
// # Safety
// `report` must be null or a live handle.
bool sa_report_converged(const struct SaReport *report);

// # Safety
// `report` must be null or a handle not yet freed.
void sa_report_free(struct SaReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINS_ALIGN_H */
