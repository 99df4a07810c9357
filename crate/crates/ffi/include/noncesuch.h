#ifndef NONCESUCH_H
#define NONCESUCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_NULL_ARGUMENT = 1,
  NS_STATUS_INVALID_UTF8 = 2,
  NS_STATUS_PARSE = 3,
  NS_STATUS_INVALID_INPUT = 4,
  NS_STATUS_CONFIG = 5,
  NS_STATUS_OUT_OF_RANGE = 6,
  NS_STATUS_NOT_IN_PROGRESS = 7,
  NS_STATUS_MVR_REQUIRED = 8,
  NS_STATUS_IO = 9,
  NS_STATUS_PANIC = 10,
} NsStatus;

typedef enum NsVerdict {
  NS_VERDICT_IN_PROGRESS = 0,
  NS_VERDICT_ALL_CONFIRMED = 1,
  NS_VERDICT_FULL_HAND_COUNT = 2,
} NsVerdict;

typedef struct NsAudit NsAudit;

/**
 * Election records loaded from JSON/CSV text.
 */
typedef struct NsElection NsElection;

/**
 * A single ALPHA test, for callers that compute their own observations.
 */
typedef struct NsRiskTest NsRiskTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ns_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ns_string_free(char *s);

/**
 * Load an election. `cards_json` may be null for a live audit.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out_election` must be writable.
 */
enum NsStatus ns_election_load(const char *contests_json,
                               const char *cvrs_json,
                               const char *manifest_csv,
                               const char *cards_json,
                               struct NsElection **out_election);

/**
 * Validation findings as a JSON array of strings (empty when valid).
 *
 * # Safety
 * `election` must come from [`ns_election_load`]; `out_json` must be writable.
 */
enum NsStatus ns_election_validate(const struct NsElection *election, char **out_json);

/**
 * # Safety
 * `election` must be null or come from [`ns_election_load`], not yet freed.
 */
void ns_election_free(struct NsElection *election);

/**
 * Run the pre-audit checks and set up an audit. `config_json` is an audit
 * config object; `assertions_json` may be null. When the checks already
 * require a full hand count the audit is created with that verdict.
 *
 * # Safety
 * `election` must come from [`ns_election_load`]; strings must be null or
 * NUL-terminated; `out_audit` must be writable.
 */
enum NsStatus ns_audit_new(const struct NsElection *election,
                           const char *config_json,
                           const char *assertions_json,
                           struct NsAudit **out_audit);

/**
 * Start the next draw. Writes a JSON object with `draw`, `cvr_index` and
 * `request` (`{"action": "retrieve", "id": ...}`, `cached` or `phantom`),
 * or null when the audit has ended. Calling again before
 * [`ns_audit_submit`] returns the same draw.
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `out_json` must be writable.
 */
enum NsStatus ns_audit_next_draw(struct NsAudit *audit, char **out_json);

/**
 * Complete the pending draw. `card_returned` says whether a card came back;
 * `card_handle` identifies the physical card; `imprinted_id` is null for a
 * card with no imprint. `votes_json` is the manual reading, required when
 * the imprint matches the requested id and ignored otherwise.
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; strings must be null or
 * NUL-terminated; `out_verdict` may be null.
 */
enum NsStatus ns_audit_submit(struct NsAudit *audit,
                              bool card_returned,
                              size_t card_handle,
                              const char *imprinted_id,
                              const char *votes_json,
                              enum NsVerdict *out_verdict);

/**
 * Draw until the audit ends, retrieving from the election's card records.
 * `policy_json` selects the retriever (null for honest).
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `policy_json` must be null or
 * NUL-terminated; `out_verdict` may be null.
 */
enum NsStatus ns_audit_run_simulated(struct NsAudit *audit,
                                     const char *policy_json,
                                     enum NsVerdict *out_verdict);

/**
 * Stop the audit and require a full hand count.
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `note` must be null or NUL-terminated.
 */
enum NsStatus ns_audit_escalate(struct NsAudit *audit, const char *note);

/**
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `out_verdict` must be writable.
 */
enum NsStatus ns_audit_verdict(const struct NsAudit *audit, enum NsVerdict *out_verdict);

/**
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `out_draws` must be writable.
 */
enum NsStatus ns_audit_draws(const struct NsAudit *audit, uint64_t *out_draws);

/**
 * Audit report as JSON.
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `out_json` must be writable.
 */
enum NsStatus ns_audit_report_json(const struct NsAudit *audit, char **out_json);

/**
 * Draw log as JSON lines.
 *
 * # Safety
 * `audit` must come from [`ns_audit_new`]; `out_jsonl` must be writable.
 */
enum NsStatus ns_audit_draw_log_jsonl(const struct NsAudit *audit, char **out_jsonl);

/**
 * # Safety
 * `audit` must be null or come from [`ns_audit_new`], not yet freed.
 */
void ns_audit_free(struct NsAudit *audit);

/**
 * New ALPHA test with the truncated shrinkage estimator started at `eta0`.
 *
 * # Safety
 * `out_test` must be writable.
 */
enum NsStatus ns_risk_new(double u_pop,
                          uint64_t population,
                          bool with_replacement,
                          double eta0,
                          struct NsRiskTest **out_test);

/**
 * Add one observation; writes the measured risk after it.
 *
 * # Safety
 * `test` must come from [`ns_risk_new`]; `out_risk` may be null.
 */
enum NsStatus ns_risk_update(struct NsRiskTest *test, double x, double *out_risk);

/**
 * # Safety
 * `test` must come from [`ns_risk_new`]; `out_risk` must be writable.
 */
enum NsStatus ns_risk_measured(const struct NsRiskTest *test, double *out_risk);

/**
 * # Safety
 * `test` must be null or come from [`ns_risk_new`], not yet freed.
 */
void ns_risk_free(struct NsRiskTest *test);

/**
 * Overstatement value from the assorter bound `u`, the reported margin and
 * the two assorter scores.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum NsStatus ns_overstatement_value(double upper_bound,
                                     double margin,
                                     double cvr_score,
                                     double card_score,
                                     double *out_value);

/**
 * Run an experiment given as JSON; writes the per-scenario summary as JSON.
 * `jobs` is the worker count, 0 for every core.
 *
 * # Safety
 * `spec_json` must be NUL-terminated; `out_summary_json` must be writable.
 */
enum NsStatus ns_simulate(const char *spec_json, size_t jobs, char **out_summary_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NONCESUCH_H */
