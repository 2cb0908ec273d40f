//! C ABI over `atcpip-core`.
//!
//! Every fallible call returns an [`AtcpipStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can
//! be fetched with [`atcpip_last_error`]. Strings and buffers handed out by
//! this library must be released with [`atcpip_string_free`] and
//! [`atcpip_bytes_free`]; handles with their own `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use atcpip_core::disputes::collect_evidence;
use atcpip_core::harness::{load_scenario, parse_scenario, run, Scenario, Transcript, World};
use atcpip_core::ledger::{verify_export, Ledger};
use atcpip_core::payments::{compute_split, RoyaltyObligation};
use atcpip_core::terms::{parse, terms_hash, to_canonical_string, Decimal, LicenseTerms, TermValue};

/// Result codes. Zero is success; everything else sets the last error.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtcpipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    NotFound = 4,
    ChainBroken = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Result of one scenario run: transcript, ledger, balances, expectations.
pub struct AtcpipRun {
    transcript: Transcript,
    world: World,
}

/// A ledger rebuilt from a verified export.
pub struct AtcpipLedger {
    ledger: Ledger,
}

/// A byte buffer owned by this library.
#[repr(C)]
pub struct AtcpipBytes {
    pub data: *mut u8,
    pub len: usize,
}

struct Failure(AtcpipStatus, String);

impl Failure {
    fn input(e: impl ToString) -> Self {
        Failure(AtcpipStatus::InvalidInput, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Outcome) -> AtcpipStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure(AtcpipStatus::Panic, msg))
    });
    match result {
        Ok(()) => AtcpipStatus::Ok,
        Err(Failure(status, message)) => {
            set_last_error(message);
            status
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AtcpipStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(AtcpipStatus::InvalidUtf8, e.to_string()))
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure(AtcpipStatus::NullPointer, "null buffer".into()));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(AtcpipStatus::NullPointer, "null out-pointer".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(AtcpipStatus::NullPointer, "null handle".into()))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(Failure::input)
}

fn owned_bytes(v: Vec<u8>) -> AtcpipBytes {
    let boxed = v.into_boxed_slice();
    let len = boxed.len();
    AtcpipBytes { data: Box::into_raw(boxed) as *mut u8, len }
}

fn start(scenario: Scenario, result: &mut *mut AtcpipRun) -> Outcome {
    let (transcript, world) = run(&scenario).map_err(Failure::input)?;
    *result = Box::into_raw(Box::new(AtcpipRun { transcript, world }));
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn atcpip_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn atcpip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `b` must be a buffer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn atcpip_bytes_free(b: AtcpipBytes) {
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
}

/// Runs a built-in scenario by name, or a scenario file by path.
///
/// # Safety
/// `source` must be a NUL-terminated string; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_scenario(source: *const c_char, result: *mut *mut AtcpipRun) -> AtcpipStatus {
    guard(|| {
        let result = out(result)?;
        let scenario = load_scenario(text(source)?).map_err(Failure::input)?;
        start(scenario, result)
    })
}

/// Runs a scenario given as JSON text, optionally overriding its seed.
///
/// # Safety
/// `json` must point to `len` readable bytes; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_scenario_json(
    json: *const u8,
    len: usize,
    override_seed: bool,
    seed: u64,
    result: *mut *mut AtcpipRun,
) -> AtcpipStatus {
    guard(|| {
        let result = out(result)?;
        let mut scenario = parse_scenario(bytes(json, len)?).map_err(Failure::input)?;
        if override_seed {
            scenario = scenario.with_seed(seed);
        }
        start(scenario, result)
    })
}

/// # Safety
/// `run` must be null or a handle from `atcpip_run_scenario*`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_free(run: *mut AtcpipRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// SHA-256 of the JSONL transcript as a hex string.
///
/// # Safety
/// `run` must be a live handle; `hex` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_transcript_sha256(run: *const AtcpipRun, hex: *mut *mut c_char) -> AtcpipStatus {
    guard(|| {
        let hex = out(hex)?;
        *hex = owned_string(handle(run)?.transcript.sha256())?;
        Ok(())
    })
}

/// The JSONL transcript.
///
/// # Safety
/// `run` must be a live handle; `jsonl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_transcript(run: *const AtcpipRun, jsonl: *mut AtcpipBytes) -> AtcpipStatus {
    guard(|| {
        let jsonl = out(jsonl)?;
        *jsonl = owned_bytes(handle(run)?.transcript.to_jsonl());
        Ok(())
    })
}

/// Balance change of `agent` over the run, in micro-credits.
///
/// # Safety
/// `run` must be a live handle; `agent` a NUL-terminated string; `delta` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_balance_delta(
    run: *const AtcpipRun,
    agent: *const c_char,
    delta: *mut i64,
) -> AtcpipStatus {
    guard(|| {
        let delta = out(delta)?;
        let run = handle(run)?;
        let agent = text(agent)?;
        if run.world.wallets.balance(agent).is_none() {
            return Err(Failure(AtcpipStatus::NotFound, format!("no account {agent:?}")));
        }
        let d = run.world.balance_delta(agent);
        *delta = i64::try_from(d).map_err(|_| Failure(AtcpipStatus::OutOfRange, format!("delta {d} exceeds i64")))?;
        Ok(())
    })
}

/// Counts the scenario's expectations and how many held.
///
/// # Safety
/// `run` must be a live handle; `passed` and `total` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_expectations(
    run: *const AtcpipRun,
    passed: *mut usize,
    total: *mut usize,
) -> AtcpipStatus {
    guard(|| {
        let (passed, total) = (out(passed)?, out(total)?);
        let checks = handle(run)?.world.check_expectations();
        *total = checks.len();
        *passed = checks.iter().filter(|(_, ok)| *ok).count();
        Ok(())
    })
}

/// Canonical export of the run's ledger.
///
/// # Safety
/// `run` must be a live handle; `export` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_run_export_ledger(run: *const AtcpipRun, export: *mut AtcpipBytes) -> AtcpipStatus {
    guard(|| {
        let export = out(export)?;
        *export = owned_bytes(handle(run)?.world.ledger.export());
        Ok(())
    })
}

/// Checks the hash chain of an exported ledger. A well-formed export with a
/// broken chain sets `intact` to false and still returns `Ok`.
///
/// # Safety
/// `export` must point to `len` readable bytes; `intact` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_verify_ledger(export: *const u8, len: usize, intact: *mut bool) -> AtcpipStatus {
    guard(|| {
        let intact = out(intact)?;
        *intact = verify_export(bytes(export, len)?).map_err(Failure::input)?;
        Ok(())
    })
}

/// Rebuilds a ledger from an export, refusing a broken chain.
///
/// # Safety
/// `export` must point to `len` readable bytes; `ledger` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_ledger_open(
    export: *const u8,
    len: usize,
    ledger: *mut *mut AtcpipLedger,
) -> AtcpipStatus {
    guard(|| {
        let ledger = out(ledger)?;
        let export = bytes(export, len)?;
        if !verify_export(export).map_err(Failure::input)? {
            return Err(Failure(AtcpipStatus::ChainBroken, "ledger chain broken".into()));
        }
        let opened = Ledger::from_export(export).map_err(Failure::input)?;
        *ledger = Box::into_raw(Box::new(AtcpipLedger { ledger: opened }));
        Ok(())
    })
}

/// # Safety
/// `ledger` must be null or a handle from `atcpip_ledger_open`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn atcpip_ledger_free(ledger: *mut AtcpipLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Number of entries in the ledger.
///
/// # Safety
/// `ledger` must be a live handle; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_ledger_len(ledger: *const AtcpipLedger, len: *mut usize) -> AtcpipStatus {
    guard(|| {
        let len = out(len)?;
        *len = handle(ledger)?.ledger.entries().len();
        Ok(())
    })
}

/// Evidence bundle for a recorded dispute, as canonical JSON.
///
/// # Safety
/// `ledger` must be a live handle; `dispute_id` a NUL-terminated string; `json` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_ledger_evidence(
    ledger: *const AtcpipLedger,
    dispute_id: *const c_char,
    json: *mut *mut c_char,
) -> AtcpipStatus {
    guard(|| {
        let json = out(json)?;
        let bundle = collect_evidence(&handle(ledger)?.ledger, text(dispute_id)?)
            .map_err(|e| Failure(AtcpipStatus::NotFound, e.to_string()))?;
        *json = owned_string(String::from_utf8_lossy(&bundle.to_canonical_bytes()).into_owned())?;
        Ok(())
    })
}

fn obligation(v: &TermValue) -> Result<RoyaltyObligation, Failure> {
    let beneficiary = v.get_str("beneficiary").ok_or_else(|| Failure::input("obligation without beneficiary"))?;
    let share = v.get("share").ok_or_else(|| Failure::input("obligation without share"))?;
    let share = share
        .as_decimal()
        .or_else(|| share.as_i64().and_then(Decimal::from_int))
        .or_else(|| share.as_str().and_then(|s| Decimal::parse(s).ok()))
        .ok_or_else(|| Failure::input(format!("share for {beneficiary:?} is not a decimal")))?;
    let mut o = RoyaltyObligation::new(beneficiary, share);
    o.source_license_id = v.get_str("source_license_id").map(str::to_owned);
    Ok(o)
}

/// Splits `price` between `provider` and the obligations, given as a JSON
/// list of `{"beneficiary", "share"}` objects. The plan comes back as
/// canonical JSON.
///
/// # Safety
/// `provider` and `obligations_json` must be NUL-terminated strings; `plan_json` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_compute_split(
    price: u64,
    provider: *const c_char,
    obligations_json: *const c_char,
    plan_json: *mut *mut c_char,
) -> AtcpipStatus {
    guard(|| {
        let plan_json = out(plan_json)?;
        let list = parse(text(obligations_json)?.as_bytes()).map_err(Failure::input)?;
        let list = list.as_list().ok_or_else(|| Failure::input("obligations must be a JSON list"))?;
        let obligations = list.iter().map(obligation).collect::<Result<Vec<_>, _>>()?;
        let plan = compute_split(price, text(provider)?, &obligations).map_err(Failure::input)?;
        *plan_json = owned_string(to_canonical_string(&plan.to_value()))?;
        Ok(())
    })
}

/// Re-encodes JSON in canonical form: sorted keys, no whitespace, fixed
/// decimal scale.
///
/// # Safety
/// `json` must be a NUL-terminated string; `canonical` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_canonicalize(json: *const c_char, canonical: *mut *mut c_char) -> AtcpipStatus {
    guard(|| {
        let canonical = out(canonical)?;
        let value = parse(text(json)?.as_bytes()).map_err(Failure::input)?;
        *canonical = owned_string(to_canonical_string(&value))?;
        Ok(())
    })
}

/// Validates license terms given as JSON and returns their hash.
///
/// # Safety
/// `terms_json` must be a NUL-terminated string; `hex` writable.
#[no_mangle]
pub unsafe extern "C" fn atcpip_terms_hash(terms_json: *const c_char, hex: *mut *mut c_char) -> AtcpipStatus {
    guard(|| {
        let hex = out(hex)?;
        let value = parse(text(terms_json)?.as_bytes()).map_err(Failure::input)?;
        let terms = LicenseTerms::from_value(&value).map_err(|v| {
            Failure::input(v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))
        })?;
        *hex = owned_string(terms_hash(&terms).map_err(Failure::input)?)?;
        Ok(())
    })
}
