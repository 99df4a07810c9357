//! Monte Carlo experiments: many audits of generated elections against a
//! retriever policy.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate, GenSpec};
use crate::assorter::ExternalAssertions;
use crate::config::{AuditConfig, EstimatorConfig};
use crate::engine::{run_audit, Audit, Verdict};
use crate::error::{Error, Result};
use crate::model::Election;
use crate::prng::{derive_prng, validate_seed};
use crate::reconcile::{pre_audit_checks, FullCountReason, PreAudit};
use crate::retrieval::{PhysicalPile, PileIndex, RetrieverPolicy, SimRetriever};
use crate::risk::SamplingScheme;

fn default_reps() -> u64 {
    1
}

/// Audit settings shared by every replication of a scenario; the seed comes
/// from the experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub scheme: SamplingScheme,
    pub max_draws: Option<u64>,
    pub estimator: EstimatorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub election: GenSpec,
    #[serde(default)]
    pub adversary: RetrieverPolicy,
    #[serde(default)]
    pub audit: AuditSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: String,
    #[serde(default = "default_reps")]
    pub reps: u64,
    pub scenarios: Vec<Scenario>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = crate::io::read_structured(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_seed(&self.seed)?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("scenario `{}` listed twice", s.name)));
            }
        }
        Ok(())
    }
}

/// Stream label for generating a scenario's election.
pub fn gen_stream(scenario: &str) -> String {
    format!("gen:{scenario}")
}

/// Stream label for replication `r`.
pub fn rep_stream(r: u64) -> String {
    format!("rep:{r}")
}

/// One replication, as written to `results.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub scenario: String,
    pub rep: u64,
    /// `all_confirmed` or `full_hand_count`.
    pub verdict: String,
    /// Why a full hand count was needed.
    pub reason: Option<String>,
    pub draws: u64,
    /// Whether the reported winners are the winners on the cards.
    pub reported_outcome_correct: bool,
    pub final_risks: Vec<f64>,
}

impl RepRecord {
    pub fn confirmed(&self) -> bool {
        self.verdict == "all_confirmed"
    }
}

fn reason_tag(reason: &FullCountReason) -> &'static str {
    match reason {
        FullCountReason::NotWinnerPerCvrs(_) => "not_winner_per_cvrs",
        FullCountReason::DuplicateIds { .. } => "duplicate_ids",
        FullCountReason::MarginLostInReconciliation { .. } => "margin_lost_in_reconciliation",
        FullCountReason::MaxDrawsReached { .. } => "max_draws_reached",
        FullCountReason::PopulationExhausted { .. } => "population_exhausted",
        FullCountReason::OperatorEscalation { .. } => "operator_escalation",
    }
}

fn verdict_fields(v: &Verdict) -> (String, Option<String>) {
    match v {
        Verdict::InProgress => ("in_progress".into(), None),
        Verdict::AllConfirmed => ("all_confirmed".into(), None),
        Verdict::FullHandCount(r) => ("full_hand_count".into(), Some(reason_tag(r).into())),
    }
}

/// Whether the reported winners of every contest match the cards.
pub fn reported_outcome_correct(election: &Election) -> Result<bool> {
    let truth = election.hand_count()?;
    Ok(election.contests.iter().all(|c| {
        let reported: Vec<String> = c.reported_winners.iter().cloned().collect();
        match &truth[&c.contest_id] {
            Some(w) => {
                let mut w = w.clone();
                w.sort();
                w == reported
            }
            None => true,
        }
    }))
}

/// A scenario ready to replicate: the election, its plan, and the pile.
pub struct PreparedScenario {
    pub name: String,
    pub election: Election,
    pub correct: bool,
    plan: std::result::Result<Arc<crate::reconcile::AuditPlan>, FullCountReason>,
    pile: Arc<PileIndex>,
    policy: RetrieverPolicy,
    config: AuditConfig,
}

impl PreparedScenario {
    pub fn new(scenario: &Scenario, seed: &str) -> Result<Self> {
        let mut prng = derive_prng(seed, &gen_stream(&scenario.name))?;
        let election = generate(&scenario.election, &mut prng)?;
        Self::from_election(&scenario.name, election, scenario.adversary.clone(), &scenario.audit, seed)
    }

    pub fn from_election(
        name: &str,
        election: Election,
        policy: RetrieverPolicy,
        settings: &AuditSettings,
        seed: &str,
    ) -> Result<Self> {
        let config = AuditConfig {
            seed: seed.to_owned(),
            scheme: settings.scheme,
            max_draws: settings.max_draws,
            estimator: settings.estimator,
        };
        let correct = reported_outcome_correct(&election)?;
        let plan = match pre_audit_checks(&election, &ExternalAssertions::new())? {
            PreAudit::Plan(p) => {
                config.validate_for_population(p.cvrs.len() as u64)?;
                Ok(Arc::new(p))
            }
            PreAudit::FullHandCount(r) => Err(r),
        };
        let cvrs = match &plan {
            Ok(p) => &p.cvrs,
            Err(_) => &election.cvrs,
        };
        let pile = Arc::new(PileIndex::new(election.cards()?, cvrs));
        Ok(PreparedScenario {
            name: name.to_owned(),
            correct,
            plan,
            pile,
            policy,
            config,
            election,
        })
    }

    /// Run replication `r`; the result depends only on the scenario and `r`.
    pub fn replicate(&self, r: u64) -> Result<RepRecord> {
        let (verdict, draws, final_risks) = match &self.plan {
            Err(reason) => (Verdict::FullHandCount(reason.clone()), 0, Vec::new()),
            Ok(plan) => {
                let mut retriever = SimRetriever::new(Arc::clone(&self.pile), self.policy.clone());
                let mut pile = PhysicalPile::new(Arc::clone(&self.pile));
                let audit = Audit::new(Arc::clone(plan), &self.config, &rep_stream(r))?.without_log();
                let audit = drive(audit, &mut retriever, &mut pile)?;
                (audit.verdict().clone(), audit.draws(), audit.risks())
            }
        };
        let (verdict, reason) = verdict_fields(&verdict);
        Ok(RepRecord {
            scenario: self.name.clone(),
            rep: r,
            verdict,
            reason,
            draws,
            reported_outcome_correct: self.correct,
            final_risks,
        })
    }

    /// Full audit with the draw log kept, for a single replication.
    pub fn audit(&self, r: u64) -> Result<Option<Audit>> {
        let Ok(plan) = &self.plan else { return Ok(None) };
        let mut retriever = SimRetriever::new(Arc::clone(&self.pile), self.policy.clone());
        let mut pile = PhysicalPile::new(Arc::clone(&self.pile));
        run_audit(Arc::clone(plan), &self.config, &rep_stream(r), &mut retriever, &mut pile).map(Some)
    }
}

fn drive(mut audit: Audit, retriever: &mut SimRetriever, pile: &mut PhysicalPile) -> Result<Audit> {
    while !audit.verdict().is_terminal() {
        audit.step(retriever, pile)?;
    }
    Ok(audit)
}

/// Aggregates for one scenario. Every field is a function of the scenario's
/// [`RepRecord`]s alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub reps: u64,
    pub reported_outcome_correct: bool,
    pub confirmation_rate: f64,
    pub full_count_rate: f64,
    pub mean_draws: f64,
    pub p50_draws: u64,
    pub p90_draws: u64,
    pub p99_draws: u64,
    pub max_draws: u64,
}

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Summaries in order of first appearance of each scenario.
pub fn summarize(records: &[RepRecord]) -> Vec<ScenarioSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RepRecord>> = BTreeMap::new();
    for r in records {
        let g = groups.entry(&r.scenario).or_default();
        if g.is_empty() {
            order.push(&r.scenario);
        }
        g.push(r);
    }
    order
        .into_iter()
        .map(|name| {
            let g = &groups[name];
            let n = g.len() as f64;
            let confirmed = g.iter().filter(|r| r.confirmed()).count() as f64;
            let full = g.iter().filter(|r| r.verdict == "full_hand_count").count() as f64;
            let mut draws: Vec<u64> = g.iter().map(|r| r.draws).collect();
            draws.sort_unstable();
            let total: u64 = draws.iter().sum();
            ScenarioSummary {
                scenario: name.to_owned(),
                reps: g.len() as u64,
                reported_outcome_correct: g.iter().all(|r| r.reported_outcome_correct),
                confirmation_rate: confirmed / n,
                full_count_rate: full / n,
                mean_draws: total as f64 / n,
                p50_draws: quantile(&draws, 0.5),
                p90_draws: quantile(&draws, 0.9),
                p99_draws: quantile(&draws, 0.99),
                max_draws: *draws.last().unwrap_or(&0),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[ScenarioSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn results_jsonl(records: &[RepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_results_jsonl(text: &str, what: &str) -> Result<Vec<RepRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{what} line {}", i + 1), e)))
        .collect()
}

pub struct ExperimentOutput {
    pub records: Vec<RepRecord>,
    pub summary: Vec<ScenarioSummary>,
    /// Wall-clock seconds per scenario; not reproducible, kept apart.
    pub timing: BTreeMap<String, f64>,
}

/// Run every scenario. `jobs = 0` uses all available cores; results do not
/// depend on it.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut records = Vec::new();
    let mut timing = BTreeMap::new();
    for scenario in &spec.scenarios {
        let start = Instant::now();
        let prepared = PreparedScenario::new(scenario, &spec.seed)?;
        let reps: Result<Vec<RepRecord>> =
            pool.install(|| (0..spec.reps).into_par_iter().map(|r| prepared.replicate(r)).collect());
        records.extend(reps?);
        timing.insert(scenario.name.clone(), start.elapsed().as_secs_f64());
    }
    let summary = summarize(&records);
    Ok(ExperimentOutput { records, summary, timing })
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.jsonl"), results_jsonl(&self.records))?;
        std::fs::write(dir.join("summary.json"), crate::io::to_pretty_json(&self.summary))?;
        std::fs::write(dir.join("summary.csv"), summary_csv(&self.summary))?;
        std::fs::write(dir.join("timing.json"), crate::io::to_pretty_json(&self.timing))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scenario: &str, rep: u64, confirmed: bool, draws: u64) -> RepRecord {
        RepRecord {
            scenario: scenario.into(),
            rep,
            verdict: if confirmed { "all_confirmed" } else { "full_hand_count" }.into(),
            reason: (!confirmed).then(|| "population_exhausted".into()),
            draws,
            reported_outcome_correct: true,
            final_risks: vec![],
        }
    }

    #[test]
    fn nearest_rank_quantiles() {
        let d: Vec<u64> = (1..=100).collect();
        assert_eq!(quantile(&d, 0.5), 50);
        assert_eq!(quantile(&d, 0.9), 90);
        assert_eq!(quantile(&d, 0.99), 99);
        assert_eq!(quantile(&[7], 0.5), 7);
        assert_eq!(quantile(&[], 0.5), 0);
    }

    #[test]
    fn summary_groups_in_first_seen_order() {
        let recs = vec![rec("b", 0, true, 10), rec("a", 0, false, 30), rec("b", 1, false, 20)];
        let s = summarize(&recs);
        assert_eq!(s[0].scenario, "b");
        assert_eq!(s[0].reps, 2);
        assert_eq!(s[0].confirmation_rate, 0.5);
        assert_eq!(s[0].mean_draws, 15.0);
        assert_eq!(s[1].full_count_rate, 1.0);
        let back = parse_results_jsonl(&results_jsonl(&recs), "r").unwrap();
        assert_eq!(summarize(&back), s);
    }
}
