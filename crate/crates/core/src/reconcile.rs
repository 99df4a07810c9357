//! Pre-audit checks and reconciliation of CVR counts with trusted card counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::assorter::{
    assertion_set, base_assorters, exceeds_half, AssertionSet, Assorter, ExternalAssertions,
    NotWinnerPerCvrs, OverstatementAssorter,
};
use crate::error::{Error, Result};
use crate::model::{count_cvrs_with_contest, Contest, Cvr, Election};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UniquenessCheck {
    Pass,
    /// Sorted list of ids that appear on more than one non-phantom CVR.
    Fail(Vec<String>),
}

pub fn check_id_uniqueness(cvrs: &[Cvr]) -> UniquenessCheck {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for cvr in cvrs.iter().filter(|c| !c.phantom) {
        if let Some(id) = &cvr.id {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut dups: Vec<String> = counts
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(id, _)| id.to_owned())
        .collect();
    if dups.is_empty() {
        UniquenessCheck::Pass
    } else {
        dups.sort();
        UniquenessCheck::Fail(dups)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReconciliationAction {
    None,
    ContestRemovedFrom {
        /// Ids of the CVRs that no longer count toward the contest; phantoms
        /// and id-less CVRs are listed as `null`.
        cvr_ids: Vec<Option<String>>,
        rule: &'static str,
    },
    PhantomsAdded {
        count: u64,
    },
}

/// Rule used to choose which CVRs drop a contest when there are too many.
pub const SHRINK_RULE: &str = "phantoms first, then id-less CVRs, then latest ids in lexicographic order; \
any choice is valid provided every assorter mean stays above 1/2";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconciliationReport {
    pub contest_id: String,
    pub n_cards: u64,
    pub n_cvrs: u64,
    pub action: ReconciliationAction,
    pub post_cvr_means: BTreeMap<String, f64>,
    /// Set when some mean is at most 1/2 after reconciliation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_hand_count: Option<String>,
}

fn means_report(
    contest_id: &str,
    n_cards: u64,
    n_cvrs: u64,
    action: ReconciliationAction,
    base: &[Assorter],
    cvrs: &[Cvr],
) -> Result<ReconciliationReport> {
    let mut post_cvr_means = BTreeMap::new();
    let mut full_hand_count = None;
    for a in base {
        let mean = a.cvr_mean(cvrs)?;
        if !exceeds_half(mean) && full_hand_count.is_none() {
            full_hand_count = Some(format!(
                "after reconciliation `{}` has CVR mean {mean} <= 1/2",
                a.label
            ));
        }
        post_cvr_means.insert(a.label.clone(), mean);
    }
    Ok(ReconciliationReport {
        contest_id: contest_id.to_owned(),
        n_cards,
        n_cvrs,
        action,
        post_cvr_means,
        full_hand_count,
    })
}

/// Remove `contest` from `N_c - N_b` of the CVRs that contain it.
pub fn shrink_cvrs(
    contest: &Contest,
    base: &[Assorter],
    cvrs: &mut [Cvr],
    n_cards: u64,
) -> Result<ReconciliationReport> {
    let cid = contest.contest_id.as_str();
    let n_cvrs = count_cvrs_with_contest(cvrs, cid);
    if n_cvrs <= n_cards {
        return Err(Error::Precondition(format!(
            "shrink needs more CVRs ({n_cvrs}) than cards ({n_cards}) for `{cid}`"
        )));
    }
    let excess = (n_cvrs - n_cards) as usize;
    let mut holders: Vec<usize> = (0..cvrs.len()).filter(|&i| cvrs[i].votes.contains(cid)).collect();
    // Rank: phantoms, then id-less, then ids descending.
    holders.sort_by(|&a, &b| {
        let rank = |c: &Cvr| match (&c.phantom, &c.id) {
            (true, _) => 0,
            (false, None) => 1,
            (false, Some(_)) => 2,
        };
        let (ca, cb) = (&cvrs[a], &cvrs[b]);
        rank(ca).cmp(&rank(cb)).then_with(|| cb.id.cmp(&ca.id)).then(a.cmp(&b))
    });
    let mut removed = Vec::with_capacity(excess);
    for &i in holders.iter().take(excess) {
        cvrs[i].votes.remove(cid);
        removed.push(cvrs[i].id.clone());
    }
    means_report(
        cid,
        n_cards,
        n_cvrs,
        ReconciliationAction::ContestRemovedFrom {
            cvr_ids: removed,
            rule: SHRINK_RULE,
        },
        base,
        cvrs,
    )
}

/// Append `N_b - N_c` phantom CVRs for `contest`.
pub fn add_phantoms(
    contest: &Contest,
    base: &[Assorter],
    cvrs: &mut Vec<Cvr>,
    n_cards: u64,
) -> Result<ReconciliationReport> {
    let cid = contest.contest_id.as_str();
    let n_cvrs = count_cvrs_with_contest(cvrs, cid);
    if n_cvrs >= n_cards {
        return Err(Error::Precondition(format!(
            "phantoms need fewer CVRs ({n_cvrs}) than cards ({n_cards}) for `{cid}`"
        )));
    }
    let count = n_cards - n_cvrs;
    cvrs.extend((0..count).map(|_| Cvr::phantom(cid)));
    means_report(
        cid,
        n_cards,
        n_cvrs,
        ReconciliationAction::PhantomsAdded { count },
        base,
        cvrs,
    )
}

/// Make the CVR count for `contest` equal its trusted card bound.
pub fn reconcile_contest(
    contest: &Contest,
    base: &[Assorter],
    cvrs: &mut Vec<Cvr>,
) -> Result<ReconciliationReport> {
    let n_cards = contest.card_upper_bound;
    let n_cvrs = count_cvrs_with_contest(cvrs, &contest.contest_id);
    use std::cmp::Ordering::*;
    match n_cvrs.cmp(&n_cards) {
        Greater => shrink_cvrs(contest, base, cvrs, n_cards),
        Less => add_phantoms(contest, base, cvrs, n_cards),
        Equal => means_report(
            &contest.contest_id,
            n_cards,
            n_cvrs,
            ReconciliationAction::None,
            base,
            cvrs,
        ),
    }
}

/// Frozen audit plan for one contest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContestPlan {
    pub contest_id: String,
    pub risk_limit: f64,
    /// Number of cards (= CVRs after reconciliation) containing the contest.
    pub population: u64,
    pub assertions: Vec<OverstatementAssorter>,
}

/// Everything the sampling phase needs. Margins here are the single source
/// of truth for every overstatement assorter used downstream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditPlan {
    pub cvrs: Vec<Cvr>,
    pub contests: Vec<ContestPlan>,
    pub reconciliation: Vec<ReconciliationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FullCountReason {
    /// The reported winners did not win according to the CVRs.
    NotWinnerPerCvrs(NotWinnerPerCvrs),
    DuplicateIds { ids: Vec<String> },
    MarginLostInReconciliation { contest_id: String, detail: String },
    MaxDrawsReached { draws: u64 },
    /// Every card was examined; the outcome comes from the cards.
    PopulationExhausted { draws: u64 },
    OperatorEscalation { note: String },
}

impl fmt::Display for FullCountReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FullCountReason::NotWinnerPerCvrs(n) => write!(
                f,
                "reported winners did not win according to the CVRs: `{}` in `{}` has mean {}",
                n.label, n.contest_id, n.cvr_mean
            ),
            FullCountReason::DuplicateIds { ids } => {
                write!(f, "CVR ids are not unique: {}", ids.join(", "))
            }
            FullCountReason::MarginLostInReconciliation { contest_id, detail } => {
                write!(f, "contest `{contest_id}`: {detail}")
            }
            FullCountReason::MaxDrawsReached { draws } => {
                write!(f, "escalation threshold reached after {draws} draws")
            }
            FullCountReason::PopulationExhausted { draws } => {
                write!(f, "all cards examined after {draws} draws")
            }
            FullCountReason::OperatorEscalation { note } => write!(f, "operator escalation: {note}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PreAudit {
    Plan(AuditPlan),
    FullHandCount(FullCountReason),
}

/// Run the checks that precede sampling: CVR means, id uniqueness, then
/// per-contest reconciliation. Returns the frozen plan or a full-count verdict.
pub fn pre_audit_checks(election: &Election, external: &ExternalAssertions) -> Result<PreAudit> {
    let mut bases = Vec::with_capacity(election.contests.len());
    for contest in &election.contests {
        let base = base_assorters(contest, external)?;
        for a in &base {
            let mean = a.cvr_mean(&election.cvrs)?;
            if !exceeds_half(mean) {
                return Ok(PreAudit::FullHandCount(FullCountReason::NotWinnerPerCvrs(
                    NotWinnerPerCvrs {
                        contest_id: contest.contest_id.clone(),
                        label: a.label.clone(),
                        cvr_mean: mean,
                    },
                )));
            }
        }
        bases.push(base);
    }

    if let UniquenessCheck::Fail(ids) = check_id_uniqueness(&election.cvrs) {
        return Ok(PreAudit::FullHandCount(FullCountReason::DuplicateIds { ids }));
    }

    let mut cvrs = election.cvrs.clone();
    let mut reconciliation = Vec::new();
    for (contest, base) in election.contests.iter().zip(&bases) {
        let report = reconcile_contest(contest, base, &mut cvrs)?;
        if let Some(detail) = &report.full_hand_count {
            return Ok(PreAudit::FullHandCount(FullCountReason::MarginLostInReconciliation {
                contest_id: contest.contest_id.clone(),
                detail: detail.clone(),
            }));
        }
        reconciliation.push(report);
    }

    let mut contests = Vec::new();
    for contest in &election.contests {
        match assertion_set(contest, &cvrs, external)? {
            AssertionSet::Ready(assertions) => contests.push(ContestPlan {
                contest_id: contest.contest_id.clone(),
                risk_limit: contest.risk_limit,
                population: contest.card_upper_bound,
                assertions,
            }),
            AssertionSet::FullHandCount(n) => {
                return Ok(PreAudit::FullHandCount(FullCountReason::NotWinnerPerCvrs(n)))
            }
        }
    }
    Ok(PreAudit::Plan(AuditPlan {
        cvrs,
        contests,
        reconciliation,
    }))
}
