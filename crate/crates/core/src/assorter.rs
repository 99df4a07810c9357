//! Assorters and overstatement assorters.
//!
//! An assorter scores one card's votes in one contest with a value in
//! `[0, u]`; a reported outcome is correct when, for every assorter of the
//! contest, the mean score over the cards exceeds 1/2. The overstatement
//! assorter compares a CVR's score to the matching card's score and has the
//! same property relative to the reported margin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Contest, Cvr, Selection, SocialChoice, VoteRecord, OVERVOTE, UNDERVOTE};

/// Tolerance for comparing means against 1/2.
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// True when `mean` exceeds 1/2 by more than [`MEAN_TOLERANCE`].
pub fn exceeds_half(mean: f64) -> bool {
    mean > 0.5 + MEAN_TOLERANCE
}

/// A score table for the selection in one contest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assorter {
    pub contest_id: String,
    pub label: String,
    pub upper_bound: f64,
    candidate_scores: BTreeMap<String, f64>,
    /// Score for candidates absent from `candidate_scores`.
    other_candidate: f64,
    undervote: f64,
    overvote: f64,
}

/// Score assigned when a record does not mention the contest at all.
pub const ABSENT_SCORE: f64 = 0.5;

impl Assorter {
    /// Score one vote record. A record without the contest scores 1/2.
    pub fn score(&self, votes: &VoteRecord) -> f64 {
        match votes.get(&self.contest_id) {
            None => ABSENT_SCORE,
            Some(Selection::Undervote) => self.undervote,
            Some(Selection::Overvote) => self.overvote,
            Some(Selection::Candidate(c)) => self
                .candidate_scores
                .get(c)
                .copied()
                .unwrap_or(self.other_candidate),
        }
    }

    /// Score of a CVR; phantoms score 1/2.
    pub fn cvr_score(&self, cvr: &Cvr) -> f64 {
        if cvr.phantom {
            0.5
        } else {
            self.score(&cvr.votes)
        }
    }

    /// Build an assorter from an explicit score table. Selections missing from
    /// `scores` score 1/2.
    pub fn from_table(
        contest_id: impl Into<String>,
        label: impl Into<String>,
        upper_bound: f64,
        scores: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let label = label.into();
        let bad = |reason: String| Error::BadAssorter {
            label: label.clone(),
            reason,
        };
        if !(upper_bound.is_finite() && upper_bound >= 0.5) {
            return Err(bad(format!("upper bound {upper_bound} must be at least 1/2")));
        }
        for (sel, &v) in scores {
            if !(0.0..=upper_bound).contains(&v) {
                return Err(bad(format!("score {v} for `{sel}` outside [0, {upper_bound}]")));
            }
        }
        let mut candidate_scores = scores.clone();
        let undervote = candidate_scores.remove(UNDERVOTE).unwrap_or(0.5);
        let overvote = candidate_scores.remove(OVERVOTE).unwrap_or(0.5);
        Ok(Assorter {
            contest_id: contest_id.into(),
            label,
            upper_bound,
            candidate_scores,
            other_candidate: 0.5,
            undervote,
            overvote,
        })
    }

    /// Mean score over the CVRs that contain the contest.
    pub fn cvr_mean(&self, cvrs: &[Cvr]) -> Result<f64> {
        let (sum, n) = cvrs
            .iter()
            .filter(|c| c.votes.contains(&self.contest_id))
            .fold((0.0, 0u64), |(s, n), c| (s + self.cvr_score(c), n + 1));
        if n == 0 {
            return Err(Error::EmptyCvrList(self.contest_id.clone()));
        }
        Ok(sum / n as f64)
    }
}

/// Pairwise assorters for plurality and multi-winner plurality:
/// one per (reported winner, reported loser).
pub fn plurality_assorters(contest: &Contest) -> Result<Vec<Assorter>> {
    if !matches!(
        contest.social_choice,
        SocialChoice::Plurality | SocialChoice::MultiwinnerPlurality { .. }
    ) {
        return Err(Error::WrongSocialChoice {
            contest: contest.contest_id.clone(),
            expected: "plurality",
        });
    }
    let winners = contest
        .candidates
        .iter()
        .filter(|c| contest.reported_winners.contains(*c));
    let mut out = Vec::new();
    for w in winners {
        for l in contest.reported_losers() {
            out.push(Assorter {
                contest_id: contest.contest_id.clone(),
                label: format!("{w} beats {l}"),
                upper_bound: 1.0,
                candidate_scores: [(w.clone(), 1.0), (l.clone(), 0.0)].into(),
                other_candidate: 0.5,
                undervote: 0.5,
                overvote: 0.5,
            });
        }
    }
    Ok(out)
}

/// Assorter for "the winner received more than a fraction `f` of the valid votes".
pub fn supermajority_assorter(contest: &Contest) -> Result<Assorter> {
    let SocialChoice::Supermajority { threshold } = contest.social_choice else {
        return Err(Error::WrongSocialChoice {
            contest: contest.contest_id.clone(),
            expected: "supermajority",
        });
    };
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(Error::BadThreshold(threshold));
    }
    let winner = match contest.reported_winners.iter().collect::<Vec<_>>()[..] {
        [w] => w.clone(),
        _ => {
            return Err(Error::Precondition(format!(
                "supermajority contest `{}` needs exactly one reported winner",
                contest.contest_id
            )))
        }
    };
    let top = 1.0 / (2.0 * threshold);
    Ok(Assorter {
        contest_id: contest.contest_id.clone(),
        label: format!("{winner} has more than {threshold} of valid votes"),
        upper_bound: top,
        candidate_scores: [(winner, top)].into(),
        other_candidate: 0.0,
        undervote: 0.5,
        overvote: 0.5,
    })
}

/// Reported assorter margin `2 * mean - 1` over the CVRs in scope.
pub fn assorter_margin(assorter: &Assorter, cvrs: &[Cvr]) -> Result<f64> {
    Ok(2.0 * assorter.cvr_mean(cvrs)? - 1.0)
}

/// An overstatement assorter: the base assorter together with its reported margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverstatementAssorter {
    pub base: Assorter,
    pub margin: f64,
}

impl OverstatementAssorter {
    pub fn new(base: Assorter, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin < 2.0 * base.upper_bound) {
            return Err(Error::NonPositiveMargin {
                label: base.label,
                margin,
            });
        }
        Ok(OverstatementAssorter { base, margin })
    }

    pub fn contest_id(&self) -> &str {
        &self.base.contest_id
    }

    pub fn label(&self) -> &str {
        &self.base.label
    }

    /// Largest possible value, `2u / (2u - v)`.
    pub fn upper_bound(&self) -> f64 {
        let u = self.base.upper_bound;
        2.0 * u / (2.0 * u - self.margin)
    }

    /// Value when CVR and card agree, `u / (2u - v)`.
    pub fn zero_overstatement_value(&self) -> f64 {
        let u = self.base.upper_bound;
        u / (2.0 * u - self.margin)
    }

    /// `(1 - (A(c) - A(b)) / u) / (2 - v / u)` from the two assorter scores.
    pub fn value_from_scores(&self, cvr_score: f64, card_score: f64) -> f64 {
        let u = self.base.upper_bound;
        (1.0 - (cvr_score - card_score) / u) / (2.0 - self.margin / u)
    }

    /// Overstatement value for a CVR against the votes read from a card.
    /// `None` for the card means no usable card; it scores 0, the value least
    /// favorable to the reported outcome.
    pub fn value(&self, cvr: &Cvr, card_votes: Option<&VoteRecord>) -> f64 {
        let card_score = card_votes.map_or(0.0, |v| self.base.score(v));
        self.value_from_scores(self.base.cvr_score(cvr), card_score)
    }
}

/// Overstatement value from raw ingredients. Fails when the margin is not positive.
pub fn overstatement_value(
    upper_bound: f64,
    margin: f64,
    cvr_score: f64,
    card_score: f64,
) -> Result<f64> {
    if margin <= 0.0 {
        return Err(Error::NonPositiveMargin {
            label: "<unnamed>".into(),
            margin,
        });
    }
    Ok((1.0 - (cvr_score - card_score) / upper_bound) / (2.0 - margin / upper_bound))
}

/// User-supplied assertions for one contest, as read from an assertions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalAssertionsFile {
    pub contest_id: String,
    pub assertions: Vec<ExternalAssertion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalAssertion {
    pub label: String,
    pub u: f64,
    pub scores: BTreeMap<String, f64>,
}

/// External assorters keyed by contest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExternalAssertions(BTreeMap<String, Vec<Assorter>>);

impl ExternalAssertions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_file(&mut self, file: &ExternalAssertionsFile) -> Result<()> {
        let entry = self.0.entry(file.contest_id.clone()).or_default();
        for a in &file.assertions {
            entry.push(Assorter::from_table(&file.contest_id, &a.label, a.u, &a.scores)?);
        }
        Ok(())
    }

    /// Accepts either a single `{contest_id, assertions}` object or an array of them.
    pub fn parse(text: &str, what: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(ExternalAssertionsFile),
            Many(Vec<ExternalAssertionsFile>),
        }
        let files = match crate::io::parse_json::<OneOrMany>(text, what)? {
            OneOrMany::One(f) => vec![f],
            OneOrMany::Many(v) => v,
        };
        let mut out = Self::new();
        for f in &files {
            out.add_file(f)?;
        }
        Ok(out)
    }

    pub fn get(&self, contest_id: &str) -> Option<&[Assorter]> {
        self.0.get(contest_id).map(Vec::as_slice)
    }
}

/// The base assorters that together encode "the reported winners won".
pub fn base_assorters(contest: &Contest, external: &ExternalAssertions) -> Result<Vec<Assorter>> {
    match contest.social_choice {
        SocialChoice::Plurality | SocialChoice::MultiwinnerPlurality { .. } => {
            plurality_assorters(contest)
        }
        SocialChoice::Supermajority { .. } => Ok(vec![supermajority_assorter(contest)?]),
        SocialChoice::ExternalAssertions => external
            .get(&contest.contest_id)
            .filter(|a| !a.is_empty())
            .map(<[Assorter]>::to_vec)
            .ok_or_else(|| {
                Error::Precondition(format!(
                    "contest `{}` needs externally supplied assertions",
                    contest.contest_id
                ))
            }),
    }
}

/// Why the CVRs themselves do not support the reported outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NotWinnerPerCvrs {
    pub contest_id: String,
    pub label: String,
    pub cvr_mean: f64,
}

/// Outcome of building the assertion set for a contest.
#[derive(Clone, Debug, PartialEq)]
pub enum AssertionSet {
    Ready(Vec<OverstatementAssorter>),
    /// Some base mean is at most 1/2: the reported winners did not win per
    /// the CVRs and a full hand count is required.
    FullHandCount(NotWinnerPerCvrs),
}

/// One overstatement assorter per base assorter, each with its own margin
/// computed from `cvrs`.
pub fn assertion_set(
    contest: &Contest,
    cvrs: &[Cvr],
    external: &ExternalAssertions,
) -> Result<AssertionSet> {
    let mut out = Vec::new();
    for base in base_assorters(contest, external)? {
        let mean = base.cvr_mean(cvrs)?;
        if !exceeds_half(mean) {
            return Ok(AssertionSet::FullHandCount(NotWinnerPerCvrs {
                contest_id: contest.contest_id.clone(),
                label: base.label.clone(),
                cvr_mean: mean,
            }));
        }
        out.push(OverstatementAssorter::new(base, 2.0 * mean - 1.0)?);
    }
    Ok(AssertionSet::Ready(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    const TOL: f64 = 1e-12;

    fn bob_vs_alice() -> Assorter {
        plurality_assorters(&plurality(&["Alice", "Bob"], "Bob", 3)).unwrap().remove(0)
    }

    #[test]
    fn plurality_assorter_count_is_k_times_c_minus_k() {
        assert_eq!(plurality_assorters(&plurality(&["A", "B"], "A", 1)).unwrap().len(), 1);
        let mut c = plurality(&["A", "B", "C", "D", "E"], "A", 1);
        c.social_choice = SocialChoice::MultiwinnerPlurality { winners: 2 };
        c.reported_winners = ["A".to_string(), "C".to_string()].into();
        let a = plurality_assorters(&c).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a[0].label, "A beats B");
        assert_eq!(a[5].label, "C beats E");
    }

    #[test]
    fn plurality_scores() {
        let a = bob_vs_alice();
        assert_eq!(a.label, "Bob beats Alice");
        assert_eq!(a.score(&vote("Bob")), 1.0);
        assert_eq!(a.score(&vote("Alice")), 0.0);
        assert_eq!(a.score(&VoteRecord::new().with(CONTEST, Selection::Undervote)), 0.5);
        assert_eq!(a.score(&VoteRecord::new().with(CONTEST, Selection::Overvote)), 0.5);
        assert_eq!(a.score(&VoteRecord::new()), 0.5);
        assert_eq!(a.cvr_score(&Cvr::phantom(CONTEST)), 0.5);
    }

    #[test]
    fn wrong_social_choice_rejected() {
        let mut c = plurality(&["A", "B"], "A", 1);
        c.social_choice = SocialChoice::Supermajority { threshold: 0.6 };
        assert!(plurality_assorters(&c).is_err());
        c.social_choice = SocialChoice::Plurality;
        assert!(supermajority_assorter(&c).is_err());
    }

    #[test]
    fn supermajority_scores_and_mean() {
        let mut c = plurality(&["W", "L"], "W", 10);
        c.social_choice = SocialChoice::Supermajority { threshold: 2.0 / 3.0 };
        let a = supermajority_assorter(&c).unwrap();
        assert!((a.score(&vote("W")) - 0.75).abs() < TOL);
        assert_eq!(a.score(&vote("L")), 0.0);
        assert_eq!(a.score(&VoteRecord::new().with(CONTEST, Selection::Undervote)), 0.5);
        assert!((a.upper_bound - 0.75).abs() < TOL);

        // 7 of 10 valid votes for the winner: 7 * 0.75 / 10.
        let cvrs: Vec<Cvr> = (0..10)
            .map(|i| Cvr::new(i.to_string(), vote(if i < 7 { "W" } else { "L" })))
            .collect();
        let mean = a.cvr_mean(&cvrs).unwrap();
        assert!((mean - 0.525).abs() < TOL);
        assert!(exceeds_half(mean));

        for bad in [0.5, 1.0, 0.3] {
            c.social_choice = SocialChoice::Supermajority { threshold: bad };
            assert!(matches!(supermajority_assorter(&c), Err(Error::BadThreshold(_))));
        }
    }

    #[test]
    fn margins() {
        let e = alice_bob("Bob");
        let v = assorter_margin(&bob_vs_alice(), &e.cvrs).unwrap();
        assert!((v - 1.0 / 3.0).abs() < TOL);

        let undervotes: Vec<Cvr> = (0..4)
            .map(|i| Cvr::new(i.to_string(), VoteRecord::new().with(CONTEST, Selection::Undervote)))
            .collect();
        assert_eq!(assorter_margin(&bob_vs_alice(), &undervotes).unwrap(), 0.0);

        let split: Vec<Cvr> = (0..10)
            .map(|i| Cvr::new(i.to_string(), vote(if i < 6 { "Bob" } else { "Alice" })))
            .collect();
        assert!((assorter_margin(&bob_vs_alice(), &split).unwrap() - 0.2).abs() < TOL);

        assert!(matches!(assorter_margin(&bob_vs_alice(), &[]), Err(Error::EmptyCvrList(_))));
    }

    #[test]
    fn overstatement_values() {
        let v = 1.0 / 3.0;
        assert!((overstatement_value(1.0, v, 1.0, 1.0).unwrap() - 0.6).abs() < TOL);
        assert!((overstatement_value(1.0, v, 0.0, 0.0).unwrap() - 0.6).abs() < TOL);
        assert!(overstatement_value(1.0, v, 1.0, 0.0).unwrap().abs() < TOL);
        assert!((overstatement_value(1.0, v, 0.0, 1.0).unwrap() - 1.2).abs() < TOL);
        assert!(matches!(
            overstatement_value(1.0, 0.0, 1.0, 1.0),
            Err(Error::NonPositiveMargin { .. })
        ));

        let oa = OverstatementAssorter::new(bob_vs_alice(), v).unwrap();
        assert!((oa.upper_bound() - 1.2).abs() < TOL);
        assert!((oa.zero_overstatement_value() - 0.6).abs() < TOL);
        let cvr = Cvr::new("91", vote("Bob"));
        assert!(oa.value(&cvr, None).abs() < TOL);
        assert!((oa.value(&Cvr::phantom(CONTEST), None) - 0.3).abs() < TOL);
        assert!(OverstatementAssorter::new(bob_vs_alice(), 0.0).is_err());
    }

    #[test]
    fn assertion_sets() {
        let e = alice_bob("Bob");
        let none = ExternalAssertions::new();
        let AssertionSet::Ready(set) = assertion_set(&e.contests[0], &e.cvrs, &none).unwrap() else {
            panic!("expected assertions");
        };
        assert_eq!(set.len(), 1);
        assert!((set[0].margin - 1.0 / 3.0).abs() < TOL);

        let three = plurality(&["A", "B", "C"], "A", 3);
        let cvrs = vec![Cvr::new("1", vote("A")), Cvr::new("2", vote("A")), Cvr::new("3", vote("B"))];
        let AssertionSet::Ready(set) = assertion_set(&three, &cvrs, &none).unwrap() else {
            panic!("expected assertions");
        };
        assert_eq!(set.len(), 2);

        let tied = vec![Cvr::new("1", vote("Alice")), Cvr::new("2", vote("Bob"))];
        assert!(matches!(
            assertion_set(&e.contests[0], &tied, &none).unwrap(),
            AssertionSet::FullHandCount(NotWinnerPerCvrs { ref label, .. }) if label == "Bob beats Alice"
        ));
    }

    #[test]
    fn external_assertions() {
        let text = r#"{"contest_id": "mayor", "assertions": [
            {"label": "A beats B after C eliminated", "u": 1.0,
             "scores": {"A": 1.0, "B": 0.0, "undervote": 0.5}}]}"#;
        let ext = ExternalAssertions::parse(text, "assertions.json").unwrap();
        let mut c = plurality(&["A", "B", "C"], "A", 3);
        c.social_choice = SocialChoice::ExternalAssertions;
        let base = base_assorters(&c, &ext).unwrap();
        assert_eq!(base.len(), 1);
        assert_eq!(base[0].score(&vote("C")), 0.5);
        assert_eq!(base[0].score(&vote("B")), 0.0);

        assert!(base_assorters(&c, &ExternalAssertions::new()).is_err());
        let bad = r#"{"contest_id": "mayor", "assertions": [{"label": "x", "u": 1.0, "scores": {"A": 2.0}}]}"#;
        assert!(ExternalAssertions::parse(bad, "a").is_err());
    }
}
