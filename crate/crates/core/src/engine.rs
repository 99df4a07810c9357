//! The sampling phase of the audit: draw CVR ids, retrieve cards, compute
//! `L`, update the risk tests, confirm or escalate.
//!
//! [`Audit`] is a step-at-a-time state machine so that a live audit can hand
//! each request to a person and feed the answer back in. [`run_audit`]
//! drives it to completion against a [`Retriever`] and an [`MvrProvider`].

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::assorter::OverstatementAssorter;
use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::model::VoteRecord;
use crate::prng::{derive_prng, HashPrng};
use crate::reconcile::{AuditPlan, FullCountReason, ReconciliationReport};
use crate::retrieval::{
    classify_retrieval, lower_bound_l, CardRef, MvrProvider, Outcome, RetrievalRequest, RetrievalResult,
    Retriever,
};
use crate::risk::{AlphaTest, RiskMeasure, SamplingScheme};

/// Stream label for the draws of a live audit.
pub const AUDIT_STREAM: &str = "audit";

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    InProgress,
    AllConfirmed,
    FullHandCount(FullCountReason),
}

impl Verdict {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Verdict::InProgress)
    }
}

/// One assertion's contribution to a draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertionStep {
    pub contest_id: String,
    pub label: String,
    #[serde(rename = "L")]
    pub l: f64,
    pub risk: f64,
}

/// One line of the draw log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrawRecord {
    pub draw: u64,
    pub cvr_index: usize,
    pub id: Option<String>,
    pub phantom: bool,
    /// `None` for phantoms, which are never retrieved.
    pub outcome: Option<Outcome>,
    pub card: Option<usize>,
    pub cached: bool,
    pub assertions: Vec<AssertionStep>,
}

/// What the auditor must do for the current draw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Request {
    /// Ask the retriever for the card with this id.
    Retrieve { id: String },
    /// The id was requested before; its earlier result is reused.
    Cached { id: String },
    /// A phantom CVR; nothing to retrieve.
    Phantom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PendingDraw {
    pub draw: u64,
    pub cvr_index: usize,
    pub request: Request,
}

#[derive(Clone, Debug)]
struct Retrieved {
    result: RetrievalResult,
    mvr: Option<VoteRecord>,
}

#[derive(Clone, Debug)]
struct AssertionRun {
    contest: usize,
    oa: OverstatementAssorter,
    test: AlphaTest,
    confirmed_at: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Audit {
    plan: Arc<AuditPlan>,
    scheme: SamplingScheme,
    max_draws: Option<u64>,
    prng: HashPrng,
    /// Indices not yet drawn, for sampling without replacement.
    pool: Vec<usize>,
    seen: Vec<bool>,
    distinct: usize,
    runs: Vec<AssertionRun>,
    cache: HashMap<String, Retrieved>,
    history: Vec<RetrievalRequest>,
    log: Vec<DrawRecord>,
    keep_log: bool,
    pending: Option<PendingDraw>,
    draws: u64,
    verdict: Verdict,
}

impl Audit {
    pub fn new(plan: Arc<AuditPlan>, config: &AuditConfig, stream_label: &str) -> Result<Self> {
        config.validate_for_population(plan.cvrs.len() as u64)?;
        let mut runs = Vec::new();
        for (ci, contest) in plan.contests.iter().enumerate() {
            for oa in &contest.assertions {
                let estimator = config.estimator.resolve(oa);
                let test = AlphaTest::new(oa.upper_bound(), contest.population, config.scheme, estimator)?;
                runs.push(AssertionRun {
                    contest: ci,
                    oa: oa.clone(),
                    test,
                    confirmed_at: None,
                });
            }
        }
        let n = plan.cvrs.len();
        let verdict = if runs.is_empty() {
            Verdict::AllConfirmed
        } else {
            Verdict::InProgress
        };
        Ok(Audit {
            scheme: config.scheme,
            max_draws: config.max_draws,
            prng: derive_prng(&config.seed, stream_label)?,
            pool: (0..n).collect(),
            seen: vec![false; n],
            distinct: 0,
            runs,
            cache: HashMap::new(),
            history: Vec::new(),
            log: Vec::new(),
            keep_log: true,
            pending: None,
            draws: 0,
            verdict,
            plan,
        })
    }

    /// Stop recording draw records; simulations only need the verdict.
    pub fn without_log(mut self) -> Self {
        self.keep_log = false;
        self
    }

    pub fn plan(&self) -> &AuditPlan {
        &self.plan
    }

    pub fn verdict(&self) -> &Verdict {
        &self.verdict
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn log(&self) -> &[DrawRecord] {
        &self.log
    }

    pub fn history(&self) -> &[RetrievalRequest] {
        &self.history
    }

    pub fn pending(&self) -> Option<&PendingDraw> {
        self.pending.as_ref()
    }

    /// Measured risk per assertion, in plan order.
    pub fn risks(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test.measured_risk()).collect()
    }

    /// Abandon sampling in favor of a full hand count.
    pub fn escalate(&mut self, note: impl Into<String>) {
        if !self.verdict.is_terminal() {
            self.pending = None;
            self.verdict = Verdict::FullHandCount(FullCountReason::OperatorEscalation { note: note.into() });
        }
    }

    fn select_index(&mut self) -> usize {
        match self.scheme {
            SamplingScheme::WithReplacement => self.prng.index(self.seen.len()),
            SamplingScheme::WithoutReplacement => {
                let k = self.prng.index(self.pool.len());
                self.pool.swap_remove(k)
            }
        }
    }

    /// Select the next CVR. Returns the pending draw, or `None` when the
    /// escalation threshold ends the audit instead. Calling it again before
    /// the draw is completed returns the same draw.
    pub fn begin_draw(&mut self) -> Result<Option<PendingDraw>> {
        if self.verdict.is_terminal() {
            return Err(Error::NotInProgress);
        }
        if let Some(p) = &self.pending {
            return Ok(Some(p.clone()));
        }
        if self.max_draws.is_some_and(|m| self.draws >= m) {
            self.verdict = Verdict::FullHandCount(FullCountReason::MaxDrawsReached { draws: self.draws });
            return Ok(None);
        }
        if self.pool.is_empty() && self.scheme == SamplingScheme::WithoutReplacement {
            return Err(Error::Exhausted(self.draws));
        }
        let cvr_index = self.select_index();
        let cvr = &self.plan.cvrs[cvr_index];
        let request = match (&cvr.id, cvr.phantom) {
            (_, true) | (None, _) => Request::Phantom,
            (Some(id), false) if self.cache.contains_key(id) => Request::Cached { id: id.clone() },
            (Some(id), false) => Request::Retrieve { id: id.clone() },
        };
        let pending = PendingDraw {
            draw: self.draws + 1,
            cvr_index,
            request,
        };
        self.pending = Some(pending.clone());
        Ok(Some(pending))
    }

    /// Finish the pending draw with what the retriever returned. For cached
    /// and phantom draws the arguments are ignored.
    pub fn complete_draw(
        &mut self,
        returned: Option<CardRef>,
        mvr: Option<VoteRecord>,
    ) -> Result<&Verdict> {
        let pending = self.pending.clone().ok_or(Error::NotInProgress)?;
        let plan = Arc::clone(&self.plan);
        let cvr = &plan.cvrs[pending.cvr_index];
        let (retrieved, cached) = match &pending.request {
            Request::Phantom => (
                Retrieved {
                    result: RetrievalResult::NoCard,
                    mvr: None,
                },
                false,
            ),
            Request::Cached { id } => (self.cache[id].clone(), true),
            Request::Retrieve { id } => {
                let result = classify_retrieval(id, returned);
                let mvr = match result {
                    RetrievalResult::CardWithRequestedId(_) => Some(mvr.ok_or_else(|| Error::MissingMvr {
                        id: id.clone(),
                        draw: pending.draw,
                    })?),
                    _ => None,
                };
                (Retrieved { result, mvr }, false)
            }
        };

        // Compute every L before touching state so an error leaves the draw pending.
        let mut updates = Vec::new();
        for (k, run) in self.runs.iter().enumerate() {
            if run.confirmed_at.is_some() || !cvr.votes.contains(run.oa.contest_id()) {
                continue;
            }
            let l = lower_bound_l(&run.oa, cvr, &retrieved.result, retrieved.mvr.as_ref())?;
            updates.push((k, l));
        }

        self.pending = None;
        self.draws = pending.draw;
        if let Request::Retrieve { id } = &pending.request {
            self.history.push(RetrievalRequest {
                draw: pending.draw,
                requested_id: id.clone(),
                returned: retrieved.result.card().map(|c| c.handle),
            });
            self.cache.insert(id.clone(), retrieved.clone());
        }
        if !self.seen[pending.cvr_index] {
            self.seen[pending.cvr_index] = true;
            self.distinct += 1;
        }

        let mut steps = Vec::new();
        if self.distinct == self.seen.len() {
            self.verdict = Verdict::FullHandCount(FullCountReason::PopulationExhausted { draws: self.draws });
        } else {
            for (k, l) in updates {
                let run = &mut self.runs[k];
                let risk = run.test.update(l)?;
                if self.keep_log {
                    steps.push(AssertionStep {
                        contest_id: run.oa.contest_id().to_owned(),
                        label: run.oa.label().to_owned(),
                        l,
                        risk,
                    });
                }
                if risk <= self.plan.contests[run.contest].risk_limit {
                    run.confirmed_at = Some(self.draws);
                }
            }
            if self.runs.iter().all(|r| r.confirmed_at.is_some()) {
                self.verdict = Verdict::AllConfirmed;
            }
        }
        if self.keep_log {
            self.log.push(DrawRecord {
                draw: pending.draw,
                cvr_index: pending.cvr_index,
                id: cvr.id.clone(),
                phantom: cvr.phantom,
                outcome: (!matches!(pending.request, Request::Phantom)).then(|| retrieved.result.outcome()),
                card: retrieved.result.card().map(|c| c.handle),
                cached,
                assertions: steps,
            });
        }
        Ok(&self.verdict)
    }

    /// One full draw against a retriever and MVR provider.
    pub fn step(&mut self, retriever: &mut dyn Retriever, mvrs: &mut dyn MvrProvider) -> Result<&Verdict> {
        let Some(pending) = self.begin_draw()? else {
            return Ok(&self.verdict);
        };
        let (returned, mvr) = match &pending.request {
            Request::Retrieve { id } => match retriever.retrieve(id, &self.history)? {
                None => (None, None),
                Some(handle) => {
                    let card = CardRef {
                        handle,
                        imprinted_id: mvrs.imprint(handle)?,
                    };
                    let mvr = if card.imprinted_id.as_deref() == Some(id.as_str()) {
                        Some(mvrs.read_votes(handle, id)?)
                    } else {
                        None
                    };
                    (Some(card), mvr)
                }
            },
            Request::Cached { .. } | Request::Phantom => (None, None),
        };
        self.complete_draw(returned, mvr)
    }

    pub fn report(&self) -> AuditReport {
        let mut contests: Vec<ContestReport> = self
            .plan
            .contests
            .iter()
            .map(|c| ContestReport {
                contest_id: c.contest_id.clone(),
                risk_limit: c.risk_limit,
                population: c.population,
                confirmed: true,
                assertions: Vec::new(),
            })
            .collect();
        for run in &self.runs {
            let c = &mut contests[run.contest];
            c.confirmed &= run.confirmed_at.is_some();
            c.assertions.push(AssertionReport {
                label: run.oa.label().to_owned(),
                margin: run.oa.margin,
                upper_bound: run.oa.upper_bound(),
                risk: run.test.measured_risk(),
                draws: run.test.draws(),
                confirmed_at_draw: run.confirmed_at,
            });
        }
        AuditReport {
            verdict: self.verdict.clone(),
            total_draws: self.draws,
            distinct_cvrs_drawn: self.distinct as u64,
            contests,
            reconciliation: self.plan.reconciliation.clone(),
            hand_count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssertionReport {
    pub label: String,
    pub margin: f64,
    pub upper_bound: f64,
    pub risk: f64,
    /// Observations fed to this assertion's test.
    pub draws: u64,
    pub confirmed_at_draw: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContestReport {
    pub contest_id: String,
    pub risk_limit: f64,
    pub population: u64,
    pub confirmed: bool,
    pub assertions: Vec<AssertionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub total_draws: u64,
    pub distinct_cvrs_drawn: u64,
    pub contests: Vec<ContestReport>,
    pub reconciliation: Vec<ReconciliationReport>,
    /// Winners per contest from the cards, filled in when the ground truth is
    /// known and the verdict is a full hand count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hand_count: Option<BTreeMap<String, Option<Vec<String>>>>,
}

impl AuditReport {
    /// Report for an audit that ended before sampling began.
    pub fn before_sampling(reason: FullCountReason) -> Self {
        AuditReport {
            verdict: Verdict::FullHandCount(reason),
            total_draws: 0,
            distinct_cvrs_drawn: 0,
            contests: Vec::new(),
            reconciliation: Vec::new(),
            hand_count: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::AllConfirmed => 0,
            _ => 2,
        }
    }
}

/// Draw until the audit ends.
pub fn run_audit(
    plan: Arc<AuditPlan>,
    config: &AuditConfig,
    stream_label: &str,
    retriever: &mut dyn Retriever,
    mvrs: &mut dyn MvrProvider,
) -> Result<Audit> {
    let mut audit = Audit::new(plan, config, stream_label)?;
    while !audit.verdict().is_terminal() {
        audit.step(retriever, mvrs)?;
    }
    Ok(audit)
}

/// Draw log as JSON lines.
pub fn draw_log_jsonl(records: &[DrawRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("draw records serialize"));
        out.push('\n');
    }
    out
}
