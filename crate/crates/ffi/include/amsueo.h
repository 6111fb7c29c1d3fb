#ifndef AMSUEO_H
#define AMSUEO_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mirrors the CLI exit codes.
 */
typedef enum AmsOutcome {
  AMS_OUTCOME_FULL = 0,
  AMS_OUTCOME_PARTIAL = 2,
  AMS_OUTCOME_NONE = 3,
} AmsOutcome;

typedef enum AmsStatus {
  AMS_STATUS_OK = 0,
  AMS_STATUS_NULL_ARGUMENT = 1,
  AMS_STATUS_INVALID_UTF8 = 2,
  AMS_STATUS_INVALID_CONFIG = 3,
  AMS_STATUS_GENERATION = 4,
  AMS_STATUS_SIMULATION = 5,
  AMS_STATUS_ATTACK = 6,
  AMS_STATUS_IO = 7,
  AMS_STATUS_OUT_OF_RANGE = 8,
  AMS_STATUS_PANIC = 9,
} AmsStatus;

typedef struct AmsCampaign AmsCampaign;

typedef struct AmsConfig AmsConfig;

typedef struct AmsReport AmsReport;

typedef struct AmsSystem AmsSystem;

typedef struct AmsGrade {
  bool full;
  bool a_correct;
  bool b_correct;
  bool s_correct;
  bool id_correct;
  bool prediction_correct;
  bool forgery_accepted;
  uint64_t verified_moduli;
  uint64_t spurious_moduli;
  uint64_t sessions_decrypted;
  uint64_t reduced_wrong;
} AmsGrade;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *ams_last_error(void);

/**
 * Static library version string.
 */
const char *ams_version(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or an owned string returned by this library.
 */
void ams_string_free(char *s);

/**
 * Default desk-scale config.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AmsStatus ams_config_new(struct AmsConfig **out);

/**
 * Sets one config key, using the same names and syntax as the config file.
 *
 * # Safety
 * `cfg` must be a live config handle; `key` and `value` NUL-terminated.
 */
enum AmsStatus ams_config_set(struct AmsConfig *cfg, const char *key, const char *value);

/**
 * Stable hash of the reproducibility-relevant keys, 16 hex chars.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be valid.
 */
enum AmsStatus ams_config_hash(const struct AmsConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle from [`ams_config_new`].
 */
void ams_config_free(struct AmsConfig *cfg);

/**
 * Generates a system from the config's parameters and seed.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be valid.
 */
enum AmsStatus ams_system_generate(const struct AmsConfig *cfg, struct AmsSystem **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum AmsStatus ams_system_read(const char *path, struct AmsSystem **out);

/**
 * # Safety
 * `sys` must be a live system handle; `path` NUL-terminated.
 */
enum AmsStatus ams_system_write(const struct AmsSystem *sys,
                                const char *path,
                                bool include_factors);

/**
 * Number of moduli in the system's table.
 *
 * # Safety
 * `sys` must be null or a live system handle.
 */
size_t ams_system_modulus_count(const struct AmsSystem *sys);

/**
 * # Safety
 * `sys` must be a live system handle; `out` must be valid.
 */
enum AmsStatus ams_system_modulus(const struct AmsSystem *sys, size_t index, uint64_t *out);

/**
 * # Safety
 * `sys` must be null or a handle from this library.
 */
void ams_system_free(struct AmsSystem *sys);

/**
 * Runs `n_sessions` chained sessions from the system's initial state.
 *
 * # Safety
 * `sys` must be a live system handle; `out` must be valid.
 */
enum AmsStatus ams_campaign_run(const struct AmsSystem *sys,
                                uint64_t n_sessions,
                                struct AmsCampaign **out);

/**
 * # Safety
 * `c` must be null or a live campaign handle.
 */
uint64_t ams_campaign_len(const struct AmsCampaign *c);

/**
 * Sessions whose pre- and post-update states act identically.
 *
 * # Safety
 * `c` must be null or a live campaign handle.
 */
uint64_t ams_campaign_coincident(const struct AmsCampaign *c);

/**
 * Writes the transcript log and, if `sidecar_path` is non-null, the
 * ground-truth sidecar.
 *
 * # Safety
 * `c` must be a live campaign handle; paths NUL-terminated or null where allowed.
 */
enum AmsStatus ams_campaign_write(const struct AmsCampaign *c,
                                  const char *transcripts_path,
                                  const char *sidecar_path);

/**
 * # Safety
 * `c` must be null or a handle from this library.
 */
void ams_campaign_free(struct AmsCampaign *c);

/**
 * Attacks the campaign's transcripts only. The ground truth it carries is
 * not consulted.
 *
 * # Safety
 * `c` and `cfg` must be live handles; `out` must be valid.
 */
enum AmsStatus ams_attack_run(const struct AmsCampaign *c,
                              const struct AmsConfig *cfg,
                              struct AmsReport **out);

/**
 * # Safety
 * `r` must be null or a live report handle. Null reads as no recovery.
 */
enum AmsOutcome ams_report_outcome(const struct AmsReport *r);

/**
 * # Safety
 * `r` must be null or a live report handle.
 */
size_t ams_report_verified_count(const struct AmsReport *r);

/**
 * Full report as JSON; release with [`ams_string_free`].
 *
 * # Safety
 * `r` must be a live report handle; `out` must be valid.
 */
enum AmsStatus ams_report_json(const struct AmsReport *r, char **out);

/**
 * Grades a report against the system and the campaign's ground truth.
 *
 * # Safety
 * All handles must be live; `out` must be valid.
 */
enum AmsStatus ams_report_grade(const struct AmsReport *r,
                                const struct AmsSystem *sys,
                                const struct AmsCampaign *c,
                                struct AmsGrade *out);

/**
 * # Safety
 * `r` must be null or a handle from this library.
 */
void ams_report_free(struct AmsReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMSUEO_H */
