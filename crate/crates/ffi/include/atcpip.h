#ifndef ATCPIP_H
#define ATCPIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success; everything else sets the last error.
 */
typedef enum AtcpipStatus {
  ATCPIP_STATUS_OK = 0,
  ATCPIP_STATUS_NULL_POINTER = 1,
  ATCPIP_STATUS_INVALID_UTF8 = 2,
  ATCPIP_STATUS_INVALID_INPUT = 3,
  ATCPIP_STATUS_NOT_FOUND = 4,
  ATCPIP_STATUS_CHAIN_BROKEN = 5,
  ATCPIP_STATUS_OUT_OF_RANGE = 6,
  ATCPIP_STATUS_PANIC = 7,
} AtcpipStatus;

/**
 * A ledger rebuilt from a verified export.
 */
typedef struct AtcpipLedger AtcpipLedger;

/**
 * Result of one scenario run: transcript, ledger, balances, expectations.
 */
typedef struct AtcpipRun AtcpipRun;

/**
 * A byte buffer owned by this library.
 */
typedef struct AtcpipBytes {
  uint8_t *data;
  size_t len;
} AtcpipBytes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *atcpip_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void atcpip_string_free(char *s);

/**
 * # Safety
 * `b` must be a buffer returned by this library, not yet freed.
 */
void atcpip_bytes_free(struct AtcpipBytes b);

/**
 * Runs a built-in scenario by name, or a scenario file by path.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `result` must be writable.
 */
enum AtcpipStatus atcpip_run_scenario(const char *source, struct AtcpipRun **result);

/**
 * Runs a scenario given as JSON text, optionally overriding its seed.
 *
 * # Safety
 * `json` must point to `len` readable bytes; `result` must be writable.
 */
enum AtcpipStatus atcpip_run_scenario_json(const uint8_t *json,
                                           size_t len,
                                           bool override_seed,
                                           uint64_t seed,
                                           struct AtcpipRun **result);

/**
 * # Safety
 * `run` must be null or a handle from `atcpip_run_scenario*`, not yet freed.
 */
void atcpip_run_free(struct AtcpipRun *run);

/**
 * SHA-256 of the JSONL transcript as a hex string.
 *
 * # Safety
 * `run` must be a live handle; `hex` must be writable.
 */
enum AtcpipStatus atcpip_run_transcript_sha256(const struct AtcpipRun *run, char **hex);

/**
 * The JSONL transcript.
 *
 * # Safety
 * `run` must be a live handle; `jsonl` must be writable.
 */
enum AtcpipStatus atcpip_run_transcript(const struct AtcpipRun *run, struct AtcpipBytes *jsonl);

/**
 * Balance change of `agent` over the run, in micro-credits.
 *
 * # Safety
 * `run` must be a live handle; `agent` a NUL-terminated string; `delta` writable.
 */
enum AtcpipStatus atcpip_run_balance_delta(const struct AtcpipRun *run,
                                           const char *agent,
                                           int64_t *delta);

/**
 * Counts the scenario's expectations and how many held.
 *
 * # Safety
 * `run` must be a live handle; `passed` and `total` writable.
 */
enum AtcpipStatus atcpip_run_expectations(const struct AtcpipRun *run,
                                          size_t *passed,
                                          size_t *total);

/**
 * Canonical export of the run's ledger.
 *
 * # Safety
 * `run` must be a live handle; `export` writable.
 */
enum AtcpipStatus atcpip_run_export_ledger(const struct AtcpipRun *run,
                                           struct AtcpipBytes *export_);

/**
 * Checks the hash chain of an exported ledger. A well-formed export with a
 * broken chain sets `intact` to false and still returns `Ok`.
 *
 * # Safety
 * `export` must point to `len` readable bytes; `intact` writable.
 */
enum AtcpipStatus atcpip_verify_ledger(const uint8_t *export_, size_t len, bool *intact);

/**
 * Rebuilds a ledger from an export, refusing a broken chain.
 *
 * # Safety
 * `export` must point to `len` readable bytes; `ledger` writable.
 */
enum AtcpipStatus atcpip_ledger_open(const uint8_t *export_,
                                     size_t len,
                                     struct AtcpipLedger **ledger);

/**
 * # Safety
 * `ledger` must be null or a handle from `atcpip_ledger_open`, not yet freed.
 */
void atcpip_ledger_free(struct AtcpipLedger *ledger);

/**
 * Number of entries in the ledger.
 *
 * # Safety
 * `ledger` must be a live handle; `len` writable.
 */
enum AtcpipStatus atcpip_ledger_len(const struct AtcpipLedger *ledger, size_t *len);

/**
 * Evidence bundle for a recorded dispute, as canonical JSON.
 *
 * # Safety
 * `ledger` must be a live handle; `dispute_id` a NUL-terminated string; `json` writable.
 */
enum AtcpipStatus atcpip_ledger_evidence(const struct AtcpipLedger *ledger,
                                         const char *dispute_id,
                                         char **json);

/**
 * Splits `price` between `provider` and the obligations, given as a JSON
 * list of `{"beneficiary", "share"}` objects. The plan comes back as
 * canonical JSON.
 *
 * # Safety
 * `provider` and `obligations_json` must be NUL-terminated strings; `plan_json` writable.
 */
enum AtcpipStatus atcpip_compute_split(uint64_t price,
                                       const char *provider,
                                       const char *obligations_json,
                                       char **plan_json);

/**
 * Re-encodes JSON in canonical form: sorted keys, no whitespace, fixed
 * decimal scale.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `canonical` writable.
 */
enum AtcpipStatus atcpip_canonicalize(const char *json, char **canonical);

/**
 * Validates license terms given as JSON and returns their hash.
 *
 * # Safety
 * `terms_json` must be a NUL-terminated string; `hex` writable.
 */
enum AtcpipStatus atcpip_terms_hash(const char *terms_json, char **hex);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATCPIP_H */
