//! C ABI for the noncesuch audit library.
//!
//! Every function returns an [`NsStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`ns_last_error`]. Objects are
//! opaque handles created by `*_new`/`*_load` and released with the matching
//! `*_free`. Strings returned through out-pointers are owned by the caller
//! and must be released with [`ns_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use noncesuch::assorter::{overstatement_value, ExternalAssertions};
use noncesuch::config::AuditConfig;
use noncesuch::engine::{draw_log_jsonl, Audit, AuditReport, Verdict, AUDIT_STREAM};
use noncesuch::error::Error;
use noncesuch::io::{assemble_election, parse_cards, parse_contests, parse_cvrs, parse_manifest};
use noncesuch::model::{Election, VoteRecord};
use noncesuch::reconcile::{pre_audit_checks, PreAudit};
use noncesuch::retrieval::{CardRef, PhysicalPile, PileIndex, RetrieverPolicy, SimRetriever};
use noncesuch::risk::{AlphaTest, Estimator, RiskMeasure, SamplingScheme, ShrinkTrunc};
use noncesuch::sim::{run_experiment, ExperimentSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInput = 4,
    Config = 5,
    OutOfRange = 6,
    NotInProgress = 7,
    MvrRequired = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NsVerdict {
    InProgress = 0,
    AllConfirmed = 1,
    FullHandCount = 2,
}

/// Election records loaded from JSON/CSV text.
pub struct NsElection {
    election: Election,
}

enum AuditState {
    Running(Audit),
    /// Pre-audit checks already require a full hand count.
    Settled(AuditReport),
}

pub struct NsAudit {
    state: AuditState,
    cards: Option<Arc<PileIndex>>,
}

/// A single ALPHA test, for callers that compute their own observations.
pub struct NsRiskTest {
    test: AlphaTest,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => NsStatus::Parse,
            Error::Config(_) | Error::Untestable(_) => NsStatus::Config,
            Error::OutOfRange { .. } => NsStatus::OutOfRange,
            Error::NotInProgress | Error::Exhausted(_) => NsStatus::NotInProgress,
            Error::MvrRequired(_) | Error::MissingMvr { .. } => NsStatus::MvrRequired,
            Error::Io(_) => NsStatus::Io,
            _ => NsStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> NsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            NsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NsStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(NsStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut T, what: &str, value: T) -> FfiResult<()> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn out_string(p: *mut *mut c_char, what: &str, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Failure(NsStatus::InvalidInput, "string contains NUL".into()))?;
    out(p, what, c.into_raw())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn verdict_code(v: &Verdict) -> NsVerdict {
    match v {
        Verdict::InProgress => NsVerdict::InProgress,
        Verdict::AllConfirmed => NsVerdict::AllConfirmed,
        Verdict::FullHandCount(_) => NsVerdict::FullHandCount,
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("library types serialize")
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> FfiResult<T> {
    serde_json::from_str(text).map_err(|e| Failure(NsStatus::Parse, format!("failed to parse {what}: {e}")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load an election. `cards_json` may be null for a live audit.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_election` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_election_load(
    contests_json: *const c_char,
    cvrs_json: *const c_char,
    manifest_csv: *const c_char,
    cards_json: *const c_char,
    out_election: *mut *mut NsElection,
) -> NsStatus {
    guard(|| {
        let contests = parse_contests(req_str(contests_json, "contests_json")?, "contests")?;
        let cvrs = parse_cvrs(req_str(cvrs_json, "cvrs_json")?, "cvrs")?;
        let manifest = parse_manifest(req_str(manifest_csv, "manifest_csv")?, "manifest")?;
        let cards = match opt_str(cards_json, "cards_json")? {
            Some(text) => Some(parse_cards(text, "cards")?),
            None => None,
        };
        let election = assemble_election(contests, cvrs, &manifest, cards)?;
        out(out_election, "out_election", Box::into_raw(Box::new(NsElection { election })))
    })
}

/// Validation findings as a JSON array of strings (empty when valid).
///
/// # Safety
/// `election` must come from [`ns_election_load`]; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_election_validate(election: *const NsElection, out_json: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let e = handle(election, "election")?;
        let findings: Vec<String> = e.election.validate().iter().map(ToString::to_string).collect();
        out_string(out_json, "out_json", json(&findings))
    })
}

/// # Safety
/// `election` must be null or come from [`ns_election_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_election_free(election: *mut NsElection) {
    if !election.is_null() {
        drop(Box::from_raw(election));
    }
}

/// Run the pre-audit checks and set up an audit. `config_json` is an audit
/// config object; `assertions_json` may be null. When the checks already
/// require a full hand count the audit is created with that verdict.
///
/// # Safety
/// `election` must come from [`ns_election_load`]; strings must be null or
/// NUL-terminated; `out_audit` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_new(
    election: *const NsElection,
    config_json: *const c_char,
    assertions_json: *const c_char,
    out_audit: *mut *mut NsAudit,
) -> NsStatus {
    guard(|| {
        let e = &handle(election, "election")?.election;
        let config: AuditConfig = parse_json(req_str(config_json, "config_json")?, "audit config")?;
        config.validate()?;
        let external = match opt_str(assertions_json, "assertions_json")? {
            Some(text) => ExternalAssertions::parse(text, "assertions")?,
            None => ExternalAssertions::new(),
        };
        let audit = match pre_audit_checks(e, &external)? {
            PreAudit::Plan(plan) => {
                let plan = Arc::new(plan);
                let cards = match &e.cards {
                    Some(cards) => Some(Arc::new(PileIndex::new(cards, &plan.cvrs))),
                    None => None,
                };
                NsAudit {
                    state: AuditState::Running(Audit::new(plan, &config, AUDIT_STREAM)?),
                    cards,
                }
            }
            PreAudit::FullHandCount(reason) => NsAudit {
                state: AuditState::Settled(AuditReport::before_sampling(reason)),
                cards: None,
            },
        };
        out(out_audit, "out_audit", Box::into_raw(Box::new(audit)))
    })
}

fn running(a: &mut NsAudit) -> FfiResult<&mut Audit> {
    match &mut a.state {
        AuditState::Running(audit) => Ok(audit),
        AuditState::Settled(_) => Err(Error::NotInProgress.into()),
    }
}

/// Start the next draw. Writes a JSON object with `draw`, `cvr_index` and
/// `request` (`{"action": "retrieve", "id": ...}`, `cached` or `phantom`),
/// or null when the audit has ended. Calling again before
/// [`ns_audit_submit`] returns the same draw.
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_next_draw(audit: *mut NsAudit, out_json: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let a = handle_mut(audit, "audit")?;
        let pending = match &mut a.state {
            AuditState::Settled(_) => None,
            AuditState::Running(audit) if audit.verdict().is_terminal() => None,
            AuditState::Running(audit) => audit.begin_draw()?,
        };
        match pending {
            Some(p) => out_string(out_json, "out_json", json(&p)),
            None => out(out_json, "out_json", ptr::null_mut()),
        }
    })
}

/// Complete the pending draw. `card_returned` says whether a card came back;
/// `card_handle` identifies the physical card; `imprinted_id` is null for a
/// card with no imprint. `votes_json` is the manual reading, required when
/// the imprint matches the requested id and ignored otherwise.
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; strings must be null or
/// NUL-terminated; `out_verdict` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_submit(
    audit: *mut NsAudit,
    card_returned: bool,
    card_handle: usize,
    imprinted_id: *const c_char,
    votes_json: *const c_char,
    out_verdict: *mut NsVerdict,
) -> NsStatus {
    guard(|| {
        let a = running(handle_mut(audit, "audit")?)?;
        let card = if card_returned {
            Some(CardRef {
                handle: card_handle,
                imprinted_id: opt_str(imprinted_id, "imprinted_id")?.map(str::to_owned),
            })
        } else {
            None
        };
        let mvr: Option<VoteRecord> = match opt_str(votes_json, "votes_json")? {
            Some(text) if card_returned => Some(parse_json(text, "votes")?),
            _ => None,
        };
        let verdict = verdict_code(a.complete_draw(card, mvr)?);
        if !out_verdict.is_null() {
            out_verdict.write(verdict);
        }
        Ok(())
    })
}

/// Draw until the audit ends, retrieving from the election's card records.
/// `policy_json` selects the retriever (null for honest).
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; `policy_json` must be null or
/// NUL-terminated; `out_verdict` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_run_simulated(
    audit: *mut NsAudit,
    policy_json: *const c_char,
    out_verdict: *mut NsVerdict,
) -> NsStatus {
    guard(|| {
        let a = handle_mut(audit, "audit")?;
        let policy: RetrieverPolicy = match opt_str(policy_json, "policy_json")? {
            Some(text) => parse_json(text, "retriever policy")?,
            None => RetrieverPolicy::honest(),
        };
        let verdict = match &mut a.state {
            AuditState::Settled(_) => NsVerdict::FullHandCount,
            AuditState::Running(audit) => {
                let index = a.cards.clone().ok_or(Error::GroundTruthUnavailable)?;
                let mut retriever = SimRetriever::new(Arc::clone(&index), policy);
                let mut pile = PhysicalPile::new(index);
                while !audit.verdict().is_terminal() {
                    audit.step(&mut retriever, &mut pile)?;
                }
                verdict_code(audit.verdict())
            }
        };
        if !out_verdict.is_null() {
            out_verdict.write(verdict);
        }
        Ok(())
    })
}

/// Stop the audit and require a full hand count.
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; `note` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_escalate(audit: *mut NsAudit, note: *const c_char) -> NsStatus {
    guard(|| {
        let note = opt_str(note, "note")?.unwrap_or("operator request").to_owned();
        running(handle_mut(audit, "audit")?)?.escalate(note);
        Ok(())
    })
}

/// # Safety
/// `audit` must come from [`ns_audit_new`]; `out_verdict` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_verdict(audit: *const NsAudit, out_verdict: *mut NsVerdict) -> NsStatus {
    guard(|| {
        let v = match &handle(audit, "audit")?.state {
            AuditState::Running(a) => verdict_code(a.verdict()),
            AuditState::Settled(_) => NsVerdict::FullHandCount,
        };
        out(out_verdict, "out_verdict", v)
    })
}

/// # Safety
/// `audit` must come from [`ns_audit_new`]; `out_draws` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_draws(audit: *const NsAudit, out_draws: *mut u64) -> NsStatus {
    guard(|| {
        let n = match &handle(audit, "audit")?.state {
            AuditState::Running(a) => a.draws(),
            AuditState::Settled(_) => 0,
        };
        out(out_draws, "out_draws", n)
    })
}

/// Audit report as JSON.
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_report_json(audit: *const NsAudit, out_json: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let report = match &handle(audit, "audit")?.state {
            AuditState::Running(a) => a.report(),
            AuditState::Settled(r) => r.clone(),
        };
        out_string(out_json, "out_json", json(&report))
    })
}

/// Draw log as JSON lines.
///
/// # Safety
/// `audit` must come from [`ns_audit_new`]; `out_jsonl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_draw_log_jsonl(audit: *const NsAudit, out_jsonl: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let log = match &handle(audit, "audit")?.state {
            AuditState::Running(a) => draw_log_jsonl(a.log()),
            AuditState::Settled(_) => String::new(),
        };
        out_string(out_jsonl, "out_jsonl", log)
    })
}

/// # Safety
/// `audit` must be null or come from [`ns_audit_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_audit_free(audit: *mut NsAudit) {
    if !audit.is_null() {
        drop(Box::from_raw(audit));
    }
}

/// New ALPHA test with the truncated shrinkage estimator started at `eta0`.
///
/// # Safety
/// `out_test` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_risk_new(
    u_pop: f64,
    population: u64,
    with_replacement: bool,
    eta0: f64,
    out_test: *mut *mut NsRiskTest,
) -> NsStatus {
    guard(|| {
        let scheme = if with_replacement {
            SamplingScheme::WithReplacement
        } else {
            SamplingScheme::WithoutReplacement
        };
        let estimator = Estimator::ShrinkTrunc(ShrinkTrunc::for_honest_value(eta0));
        let test = AlphaTest::new(u_pop, population, scheme, estimator)?;
        out(out_test, "out_test", Box::into_raw(Box::new(NsRiskTest { test })))
    })
}

/// Add one observation; writes the measured risk after it.
///
/// # Safety
/// `test` must come from [`ns_risk_new`]; `out_risk` may be null.
#[no_mangle]
pub unsafe extern "C" fn ns_risk_update(test: *mut NsRiskTest, x: f64, out_risk: *mut f64) -> NsStatus {
    guard(|| {
        let risk = handle_mut(test, "test")?.test.update(x)?;
        if !out_risk.is_null() {
            out_risk.write(risk);
        }
        Ok(())
    })
}

/// # Safety
/// `test` must come from [`ns_risk_new`]; `out_risk` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_risk_measured(test: *const NsRiskTest, out_risk: *mut f64) -> NsStatus {
    guard(|| out(out_risk, "out_risk", handle(test, "test")?.test.measured_risk()))
}

/// # Safety
/// `test` must be null or come from [`ns_risk_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_risk_free(test: *mut NsRiskTest) {
    if !test.is_null() {
        drop(Box::from_raw(test));
    }
}

/// Overstatement value from the assorter bound `u`, the reported margin and
/// the two assorter scores.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_overstatement_value(
    upper_bound: f64,
    margin: f64,
    cvr_score: f64,
    card_score: f64,
    out_value: *mut f64,
) -> NsStatus {
    guard(|| out(out_value, "out_value", overstatement_value(upper_bound, margin, cvr_score, card_score)?))
}

/// Run an experiment given as JSON; writes the per-scenario summary as JSON.
/// `jobs` is the worker count, 0 for every core.
///
/// # Safety
/// `spec_json` must be NUL-terminated; `out_summary_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_simulate(spec_json: *const c_char, jobs: usize, out_summary_json: *mut *mut c_char) -> NsStatus {
    guard(|| {
        let spec: ExperimentSpec = parse_json(req_str(spec_json, "spec_json")?, "experiment spec")?;
        let output = run_experiment(&spec, jobs)?;
        out_string(out_summary_json, "out_summary_json", json(&output.summary))
    })
}
