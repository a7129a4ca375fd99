//! C ABI over the poster pipeline.
//!
//! Conventions:
//! - Every fallible function returns an `int32_t` status: `PK_OK` (0) on
//!   success, otherwise the same nonzero codes the CLI uses as exit codes
//!   (2 configuration, 10..=16 generate stages, 20 evaluate, 30 quiz,
//!   40 bench, 1 generic) plus `PK_ERR_ARGUMENT` (3) for bad pointers or
//!   malformed UTF-8 from the caller.
//! - On failure, `pk_last_error` returns a message for the current thread,
//!   valid until the thread's next failing call.
//! - `char*` outputs are allocated by this library and must be released
//!   with `pk_string_free`. Handles have matching `_free` functions.
//! - No function panics across the boundary; panics become `PK_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use posterkit::config::RunConfig;
use posterkit::error::Error;
use posterkit::gateway::{compute_cost, BackendDescriptor, Endpoint, Modality, TokenLedger, TokenUsage};
use posterkit::metrics::{extract_poster_text, judge_aggregates, perplexity_from_logprobs};
use posterkit::pipeline::{cmd_evaluate, cmd_generate, EvaluateInputs, GenerateOptions};
use posterkit::planner::{
    build_layout, AssetMatch, ContentWeight, LayoutParams, PosterGeometry,
    DEFAULT_TITLE_STRIP_FRACTION,
};
use posterkit::quiz::density_augmented;

/// Success.
pub const PK_OK: i32 = 0;
/// Unclassified failure.
pub const PK_ERR_GENERIC: i32 = 1;
/// Invalid or missing configuration.
pub const PK_ERR_CONFIG: i32 = 2;
/// Null pointer, bad UTF-8, or out-of-range argument.
pub const PK_ERR_ARGUMENT: i32 = 3;
/// A panic was caught at the boundary; state may be stale but memory is safe.
pub const PK_ERR_PANIC: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String, code: i32) -> i32 {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("NULs stripped"));
    });
    code
}

fn set_error(e: &Error) -> i32 {
    set_last_error(e.to_string(), e.exit_code())
}

fn arg_error(message: &str) -> i32 {
    set_last_error(message.to_string(), PK_ERR_ARGUMENT)
}

/// Run `body` with panics converted to an error status.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => set_last_error("internal panic".into(), PK_ERR_PANIC),
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn required_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(arg_error(&format!("{name} must not be null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| arg_error(&format!("{name} is not valid UTF-8")))
}

unsafe fn optional_path(ptr: *const c_char, name: &str) -> Result<Option<PathBuf>, i32> {
    if ptr.is_null() {
        return Ok(None);
    }
    unsafe { required_str(ptr, name) }.map(|s| Some(PathBuf::from(s)))
}

fn give_string(s: String, out: *mut *mut c_char) -> i32 {
    let cstring = match CString::new(s.replace('\0', " ")) {
        Ok(c) => c,
        Err(_) => return set_last_error("output contained NUL".into(), PK_ERR_GENERIC),
    };
    unsafe { *out = cstring.into_raw() };
    PK_OK
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn pk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the current thread's most recent failure, or null if none.
/// Valid until the next failing call on this thread; do not free.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(message) => message.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Release a string returned through a `char**` output parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Token accounting handle: usage buckets plus per-backend prices.
pub struct PkLedger {
    ledger: TokenLedger,
    backends: Vec<BackendDescriptor>,
}

/// Create an empty ledger. Free with `pk_ledger_free`.
#[no_mangle]
pub extern "C" fn pk_ledger_new() -> *mut PkLedger {
    Box::into_raw(Box::new(PkLedger { ledger: TokenLedger::new(), backends: Vec::new() }))
}

/// # Safety
/// `ledger` must be null or an unfreed pointer from `pk_ledger_new`.
#[no_mangle]
pub unsafe extern "C" fn pk_ledger_free(ledger: *mut PkLedger) {
    if !ledger.is_null() {
        drop(unsafe { Box::from_raw(ledger) });
    }
}

/// Declare a backend's prices (dollars per million tokens) for cost
/// computation. Registering the same id twice replaces the prices.
///
/// # Safety
/// `ledger` must come from `pk_ledger_new`; `id` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn pk_ledger_register_backend(
    ledger: *mut PkLedger,
    id: *const c_char,
    price_in: f64,
    price_out: f64,
) -> i32 {
    guarded(|| {
        let Some(handle) = (unsafe { ledger.as_mut() }) else {
            return arg_error("ledger must not be null");
        };
        let id = match unsafe { required_str(id, "id") } {
            Ok(s) => s.to_string(),
            Err(code) => return code,
        };
        if !(price_in.is_finite() && price_out.is_finite() && price_in >= 0.0 && price_out >= 0.0)
        {
            return arg_error("prices must be finite and non-negative");
        }
        handle.backends.retain(|b| b.id != id);
        handle.backends.push(BackendDescriptor {
            id,
            modality: Modality::Text,
            endpoint: Endpoint::Mock { fixtures: PathBuf::new() },
            price_in,
            price_out,
            max_retries: 0,
            max_in_flight: None,
            vision_tokens_per_image: posterkit::gateway::DEFAULT_VISION_TOKENS_PER_IMAGE,
        });
        PK_OK
    })
}

/// Record one call's token usage under a backend id and role tag.
///
/// # Safety
/// `ledger` must come from `pk_ledger_new`; strings must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_ledger_record(
    ledger: *mut PkLedger,
    backend_id: *const c_char,
    role_tag: *const c_char,
    text_in: u64,
    text_out: u64,
    vision_in: u64,
    vision_out: u64,
) -> i32 {
    guarded(|| {
        let Some(handle) = (unsafe { ledger.as_ref() }) else {
            return arg_error("ledger must not be null");
        };
        let backend = match unsafe { required_str(backend_id, "backend_id") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let role = match unsafe { required_str(role_tag, "role_tag") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let usage =
            TokenUsage { in_t: text_in, out_t: text_out, in_v: vision_in, out_v: vision_out };
        handle.ledger.record(backend, role, usage);
        PK_OK
    })
}

/// Total recorded input and output tokens. Either output pointer may be null.
///
/// # Safety
/// `ledger` must come from `pk_ledger_new`; outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn pk_ledger_totals(
    ledger: *const PkLedger,
    out_input: *mut u64,
    out_output: *mut u64,
) -> i32 {
    guarded(|| {
        let Some(handle) = (unsafe { ledger.as_ref() }) else {
            return arg_error("ledger must not be null");
        };
        let total = handle.ledger.grand_total();
        if !out_input.is_null() {
            unsafe { *out_input = total.input() };
        }
        if !out_output.is_null() {
            unsafe { *out_output = total.output() };
        }
        PK_OK
    })
}

/// Dollar cost of everything recorded so far, priced per million tokens.
/// Fails with `PK_ERR_CONFIG` if a recorded backend id was never registered.
///
/// # Safety
/// `ledger` must come from `pk_ledger_new`; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_ledger_cost(ledger: *const PkLedger, out_cost: *mut f64) -> i32 {
    guarded(|| {
        let Some(handle) = (unsafe { ledger.as_ref() }) else {
            return arg_error("ledger must not be null");
        };
        if out_cost.is_null() {
            return arg_error("out_cost must not be null");
        }
        match compute_cost(&handle.ledger.per_backend(), &handle.backends) {
            Ok(cost) => {
                unsafe { *out_cost = cost };
                PK_OK
            }
            Err(e) => set_error(&e),
        }
    })
}

/// Density-augmented quiz score: raw score times `1 + 1/max(1, l/w)`.
///
/// # Safety
/// `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_density_augmented(
    raw_score: f64,
    word_count: f64,
    median_words: f64,
    out_score: *mut f64,
) -> i32 {
    guarded(|| {
        if out_score.is_null() {
            return arg_error("out_score must not be null");
        }
        match density_augmented(raw_score, word_count, median_words) {
            Ok(score) => {
                unsafe { *out_score = score };
                PK_OK
            }
            Err(e) => set_error(&e),
        }
    })
}

/// Aggregate six judge criterion scores, ordered element quality, layout
/// balance, engagement, clarity, content completeness, logical flow, into
/// the aesthetic, information, and overall averages.
///
/// # Safety
/// `scores` must point to six readable doubles; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn pk_judge_aggregate(
    scores: *const f64,
    out_aesthetic: *mut f64,
    out_information: *mut f64,
    out_overall: *mut f64,
) -> i32 {
    guarded(|| {
        if scores.is_null() {
            return arg_error("scores must not be null");
        }
        let values: &[f64] = unsafe { std::slice::from_raw_parts(scores, 6) };
        let array: [f64; 6] = values.try_into().expect("slice length is 6");
        let (aesthetic, information, overall) = judge_aggregates(&array);
        if !out_aesthetic.is_null() {
            unsafe { *out_aesthetic = aesthetic };
        }
        if !out_information.is_null() {
            unsafe { *out_information = information };
        }
        if !out_overall.is_null() {
            unsafe { *out_overall = overall };
        }
        PK_OK
    })
}

/// Perplexity of a token log-probability sequence: exp of the negated mean.
///
/// # Safety
/// `logprobs` must point to `len` readable doubles; `out_ppl` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_perplexity(
    logprobs: *const f64,
    len: usize,
    out_ppl: *mut f64,
) -> i32 {
    guarded(|| {
        if logprobs.is_null() && len > 0 {
            return arg_error("logprobs must not be null");
        }
        if out_ppl.is_null() {
            return arg_error("out_ppl must not be null");
        }
        let values: &[f64] =
            if len == 0 { &[] } else { unsafe { std::slice::from_raw_parts(logprobs, len) } };
        match perplexity_from_logprobs(values) {
            Ok(ppl) => {
                unsafe { *out_ppl = ppl };
                PK_OK
            }
            Err(e) => set_error(&e),
        }
    })
}

/// Build a poster layout for `len` sections with the given positive
/// weights on a `width_px` x `height_px` canvas, and return it as a JSON
/// document (free with `pk_string_free`).
///
/// # Safety
/// `weights` must point to `len` readable doubles; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_layout_build(
    weights: *const f64,
    len: usize,
    width_px: u32,
    height_px: u32,
    out_json: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        if weights.is_null() || len == 0 {
            return arg_error("weights must point to at least one value");
        }
        if out_json.is_null() {
            return arg_error("out_json must not be null");
        }
        let values: &[f64] = unsafe { std::slice::from_raw_parts(weights, len) };
        let content: Vec<ContentWeight> = values
            .iter()
            .enumerate()
            .map(|(section_index, &weight)| ContentWeight {
                section_index,
                words: 0,
                figure_area_demand: 0.0,
                weight,
            })
            .collect();
        let geometry = match PosterGeometry::new(width_px, height_px, DEFAULT_TITLE_STRIP_FRACTION)
        {
            Ok(g) => g,
            Err(e) => return set_error(&e),
        };
        let layout =
            match build_layout(&content, &geometry, &LayoutParams::default(), &AssetMatch::default())
            {
                Ok(layout) => layout,
                Err(e) => return set_error(&e),
            };
        match serde_json::to_string_pretty(&layout) {
            Ok(json) => give_string(json, out_json),
            Err(e) => set_last_error(format!("layout serialization failed: {e}"), PK_ERR_GENERIC),
        }
    })
}

/// Extract the readable text of a poster document in reading order.
/// The result must be freed with `pk_string_free`.
///
/// # Safety
/// `poster_path` must be a valid string; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_extract_poster_text(
    poster_path: *const c_char,
    out_text: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let path = match unsafe { required_str(poster_path, "poster_path") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        if out_text.is_null() {
            return arg_error("out_text must not be null");
        }
        match extract_poster_text(&path, None) {
            Ok(text) => give_string(text, out_text),
            Err(e) => set_error(&e),
        }
    })
}

/// Run the full generate pipeline. On success writes the poster path into
/// `out_poster_path` (free with `pk_string_free`).
///
/// # Safety
/// Path arguments must be valid strings; `out_poster_path` writable or null.
#[no_mangle]
pub unsafe extern "C" fn pk_generate(
    paper_path: *const c_char,
    config_path: *const c_char,
    workdir: *const c_char,
    resume: bool,
    out_poster_path: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let paper = match unsafe { required_str(paper_path, "paper_path") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let config_file = match unsafe { required_str(config_path, "config_path") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let work = match unsafe { required_str(workdir, "workdir") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let config = match RunConfig::load(&config_file) {
            Ok(c) => c,
            Err(e) => return set_error(&e),
        };
        let options = GenerateOptions { resume, parallel: None };
        match cmd_generate(&paper, &config, &work, options) {
            Ok(outcome) => {
                if out_poster_path.is_null() {
                    PK_OK
                } else {
                    give_string(outcome.poster.display().to_string(), out_poster_path)
                }
            }
            Err(e) => set_error(&e),
        }
    })
}

/// Evaluate a generated poster and return the metric report as JSON
/// (free with `pk_string_free`). `ground_truth_path` and `workdir` may be
/// null; the judge always runs against the configured backends.
///
/// # Safety
/// Path arguments must be valid strings or null as documented; `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pk_evaluate(
    generated_path: *const c_char,
    ground_truth_path: *const c_char,
    config_path: *const c_char,
    workdir: *const c_char,
    skip_judge: bool,
    out_json: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let generated = match unsafe { required_str(generated_path, "generated_path") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let config_file = match unsafe { required_str(config_path, "config_path") } {
            Ok(s) => PathBuf::from(s),
            Err(code) => return code,
        };
        let ground_truth = match unsafe { optional_path(ground_truth_path, "ground_truth_path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        let work = match unsafe { optional_path(workdir, "workdir") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        if out_json.is_null() {
            return arg_error("out_json must not be null");
        }
        let config = match RunConfig::load(&config_file) {
            Ok(c) => c,
            Err(e) => return set_error(&e),
        };
        let inputs = EvaluateInputs {
            generated: &generated,
            ground_truth: ground_truth.as_deref(),
            workdir: work.as_deref().map(Path::new),
            skip_judge,
        };
        match cmd_evaluate(&inputs, &config) {
            Ok(report) => match serde_json::to_string_pretty(&report) {
                Ok(json) => give_string(json, out_json),
                Err(e) => {
                    set_last_error(format!("report serialization failed: {e}"), PK_ERR_GENERIC)
                }
            },
            Err(e) => set_error(&e),
        }
    })
}
