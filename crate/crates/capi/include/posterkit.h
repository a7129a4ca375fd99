#ifndef POSTERKIT_H
#define POSTERKIT_H

/* Generated by cbindgen from the posterkit-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define PK_OK 0

// Unclassified failure.
#define PK_ERR_GENERIC 1

// Invalid or missing configuration.
#define PK_ERR_CONFIG 2

// Null pointer, bad UTF-8, or out-of-range argument.
#define PK_ERR_ARGUMENT 3

// A panic was caught at the boundary; state may be stale but memory is safe.
#define PK_ERR_PANIC 4

// Token accounting handle: usage buckets plus per-backend prices.
typedef struct PkLedger PkLedger;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *pk_version(void);

// Message for the current thread's most recent failure, or null if none.
// Valid until the next failing call on this thread; do not free.
const char *pk_last_error(void);

// Release a string returned through a `char**` output parameter.
//
// # Safety
// `s` must be null or a pointer previously returned by this library and
// not yet freed.
void pk_string_free(char *s);

// Create an empty ledger. Free with `pk_ledger_free`.
struct PkLedger *pk_ledger_new(void);

// # Safety
// `ledger` must be null or an unfreed pointer from `pk_ledger_new`.
void pk_ledger_free(struct PkLedger *ledger);

// Declare a backend's prices (dollars per million tokens) for cost
// computation. Registering the same id twice replaces the prices.
//
// # Safety
// `ledger` must come from `pk_ledger_new`; `id` must be a valid string.
int32_t pk_ledger_register_backend(struct PkLedger *ledger,
                                   const char *id,
                                   double price_in,
                                   double price_out);

// Record one call's token usage under a backend id and role tag.
//
// # Safety
// `ledger` must come from `pk_ledger_new`; strings must be valid.
int32_t pk_ledger_record(struct PkLedger *ledger,
                         const char *backend_id,
                         const char *role_tag,
                         uint64_t text_in,
                         uint64_t text_out,
                         uint64_t vision_in,
                         uint64_t vision_out);

// Total recorded input and output tokens. Either output pointer may be null.
//
// # Safety
// `ledger` must come from `pk_ledger_new`; outputs must be writable or null.
int32_t pk_ledger_totals(const struct PkLedger *ledger, uint64_t *out_input, uint64_t *out_output);

// Dollar cost of everything recorded so far, priced per million tokens.
// Fails with `PK_ERR_CONFIG` if a recorded backend id was never registered.
//
// # Safety
// `ledger` must come from `pk_ledger_new`; `out_cost` must be writable.
int32_t pk_ledger_cost(const struct PkLedger *ledger, double *out_cost);

// Density-augmented quiz score: raw score times `1 + 1/max(1, l/w)`.
//
// # Safety
// `out_score` must be writable.
int32_t pk_density_augmented(double raw_score,
                             double word_count,
                             double median_words,
                             double *out_score);

// Aggregate six judge criterion scores, ordered element quality, layout
// balance, engagement, clarity, content completeness, logical flow, into
// the aesthetic, information, and overall averages.
//
// # Safety
// `scores` must point to six readable doubles; outputs writable or null.
int32_t pk_judge_aggregate(const double *scores,
                           double *out_aesthetic,
                           double *out_information,
                           double *out_overall);

// Perplexity of a token log-probability sequence: exp of the negated mean.
//
// # Safety
// `logprobs` must point to `len` readable doubles; `out_ppl` writable.
int32_t pk_perplexity(const double *logprobs, size_t len, double *out_ppl);

// Build a poster layout for `len` sections with the given positive
// weights on a `width_px` x `height_px` canvas, and return it as a JSON
// document (free with `pk_string_free`).
//
// # Safety
// `weights` must point to `len` readable doubles; `out_json` writable.
int32_t pk_layout_build(const double *weights,
                        size_t len,
                        uint32_t width_px,
                        uint32_t height_px,
                        char **out_json);

// Extract the readable text of a poster document in reading order.
// The result must be freed with `pk_string_free`.
//
// # Safety
// `poster_path` must be a valid string; `out_text` writable.
int32_t pk_extract_poster_text(const char *poster_path, char **out_text);

// Run the full generate pipeline. On success writes the poster path into
// `out_poster_path` (free with `pk_string_free`).
//
// # Safety
// Path arguments must be valid strings; `out_poster_path` writable or null.
int32_t pk_generate(const char *paper_path,
                    const char *config_path,
                    const char *workdir,
                    bool resume,
                    char **out_poster_path);

// Evaluate a generated poster and return the metric report as JSON
// (free with `pk_string_free`). `ground_truth_path` and `workdir` may be
// null; the judge always runs against the configured backends.
//
// # Safety
// Path arguments must be valid strings or null as documented; `out_json`
// writable.
int32_t pk_evaluate(const char *generated_path,
                    const char *ground_truth_path,
                    const char *config_path,
                    const char *workdir,
                    bool skip_judge,
                    char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSTERKIT_H */
