//! Election record: contests, cast-vote records, and physical ballot cards.
//!
//! Everything downstream (assorters, reconciliation, retrieval, the audit
//! engine) consumes these types. They are plain data and immutable once an
//! election has been loaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNDERVOTE: &str = "undervote";
pub const OVERVOTE: &str = "overvote";

/// The social choice function a contest is decided by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SocialChoice {
    Plurality,
    MultiwinnerPlurality { winners: usize },
    /// The single winner needs more than `threshold` of the valid votes.
    Supermajority { threshold: f64 },
    /// Assertions are supplied from an external assertions file.
    ExternalAssertions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contest {
    pub contest_id: String,
    pub social_choice: SocialChoice,
    pub candidates: Vec<String>,
    pub reported_winners: BTreeSet<String>,
    /// Trusted upper bound on validly cast cards containing the contest.
    #[serde(default)]
    pub card_upper_bound: u64,
    pub risk_limit: f64,
}

impl Contest {
    /// Number of winners the social choice function elects, if fixed.
    pub fn expected_winners(&self) -> Option<usize> {
        match self.social_choice {
            SocialChoice::Plurality | SocialChoice::Supermajority { .. } => Some(1),
            SocialChoice::MultiwinnerPlurality { winners } => Some(winners),
            SocialChoice::ExternalAssertions => None,
        }
    }

    pub fn has_candidate(&self, candidate: &str) -> bool {
        self.candidates.iter().any(|c| c == candidate)
    }

    pub fn reported_losers(&self) -> impl Iterator<Item = &String> {
        self.candidates
            .iter()
            .filter(move |c| !self.reported_winners.contains(*c))
    }

    /// Winners according to a set of vote records, or `None` when the social
    /// choice function cannot be evaluated from single selections.
    ///
    /// Plurality ties are broken by candidate order.
    pub fn tally_winners<'a>(
        &self,
        votes: impl IntoIterator<Item = &'a VoteRecord>,
    ) -> Option<Vec<String>> {
        let mut tally: BTreeMap<&str, u64> = self.candidates.iter().map(|c| (c.as_str(), 0)).collect();
        let mut valid = 0u64;
        for record in votes {
            if let Some(Selection::Candidate(c)) = record.get(&self.contest_id) {
                if let Some(n) = tally.get_mut(c.as_str()) {
                    *n += 1;
                    valid += 1;
                }
            }
        }
        let mut ranked: Vec<(usize, &String)> = self.candidates.iter().enumerate().collect();
        ranked.sort_by(|(ia, a), (ib, b)| tally[b.as_str()].cmp(&tally[a.as_str()]).then(ia.cmp(ib)));
        match self.social_choice {
            SocialChoice::Plurality | SocialChoice::MultiwinnerPlurality { .. } => {
                let k = self.expected_winners().unwrap_or(1);
                Some(ranked.iter().take(k).map(|(_, c)| (*c).clone()).collect())
            }
            SocialChoice::Supermajority { threshold } => {
                let (_, top) = ranked.first()?;
                if valid > 0 && tally[top.as_str()] as f64 > threshold * valid as f64 {
                    Some(vec![(*top).clone()])
                } else {
                    Some(Vec::new())
                }
            }
            SocialChoice::ExternalAssertions => None,
        }
    }
}

/// A selection in one contest.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Selection {
    Candidate(String),
    Undervote,
    /// Overvote or otherwise invalid marking.
    Overvote,
}

impl Selection {
    pub fn candidate(name: impl Into<String>) -> Self {
        Selection::Candidate(name.into())
    }

    pub fn is_valid_vote(&self) -> bool {
        matches!(self, Selection::Candidate(_))
    }
}

impl From<String> for Selection {
    fn from(s: String) -> Self {
        match s.as_str() {
            UNDERVOTE => Selection::Undervote,
            OVERVOTE => Selection::Overvote,
            _ => Selection::Candidate(s),
        }
    }
}

impl From<Selection> for String {
    fn from(s: Selection) -> Self {
        match s {
            Selection::Candidate(c) => c,
            Selection::Undervote => UNDERVOTE.to_owned(),
            Selection::Overvote => OVERVOTE.to_owned(),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Candidate(c) => f.write_str(c),
            Selection::Undervote => f.write_str(UNDERVOTE),
            Selection::Overvote => f.write_str(OVERVOTE),
        }
    }
}

/// Per-contest selections on one card or CVR. A contest that is not
/// mentioned does not appear on the card.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteRecord(BTreeMap<String, Selection>);

impl VoteRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, contest: impl Into<String>, selection: Selection) -> Self {
        self.0.insert(contest.into(), selection);
        self
    }

    /// Shorthand for a single-contest vote for `candidate`.
    pub fn single(contest: impl Into<String>, candidate: impl Into<String>) -> Self {
        Self::new().with(contest, Selection::Candidate(candidate.into()))
    }

    pub fn get(&self, contest: &str) -> Option<&Selection> {
        self.0.get(contest)
    }

    pub fn contains(&self, contest: &str) -> bool {
        self.0.contains_key(contest)
    }

    pub fn insert(&mut self, contest: impl Into<String>, selection: Selection) -> Option<Selection> {
        self.0.insert(contest.into(), selection)
    }

    pub fn remove(&mut self, contest: &str) -> Option<Selection> {
        self.0.remove(contest)
    }

    pub fn contests(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Selection)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, Selection)> for VoteRecord {
    fn from_iter<I: IntoIterator<Item = (String, Selection)>>(iter: I) -> Self {
        VoteRecord(iter.into_iter().collect())
    }
}

/// A cast-vote record: the voting system's claim about one card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cvr {
    pub id: Option<String>,
    #[serde(default)]
    pub phantom: bool,
    pub votes: VoteRecord,
}

impl Cvr {
    pub fn new(id: impl Into<String>, votes: VoteRecord) -> Self {
        Cvr {
            id: Some(id.into()),
            phantom: false,
            votes,
        }
    }

    /// A phantom CVR for `contest`: no id, no valid vote.
    pub fn phantom(contest: impl Into<String>) -> Self {
        Cvr {
            id: None,
            phantom: true,
            votes: VoteRecord::new().with(contest, Selection::Undervote),
        }
    }
}

/// A physical ballot card. `true_votes` is what a human reads off the card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallotCard {
    /// Position in the physical pile; assigned from file order.
    #[serde(skip)]
    pub card_index: usize,
    pub imprinted_id: Option<String>,
    #[serde(rename = "votes")]
    pub true_votes: VoteRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Election {
    pub contests: Vec<Contest>,
    pub cvrs: Vec<Cvr>,
    /// Ground truth; present only when simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cards: Option<Vec<BallotCard>>,
}

impl Election {
    pub fn contest(&self, contest_id: &str) -> Result<&Contest> {
        self.contests
            .iter()
            .find(|c| c.contest_id == contest_id)
            .ok_or_else(|| Error::UnknownContest(contest_id.to_owned()))
    }

    pub fn cards(&self) -> Result<&[BallotCard]> {
        self.cards.as_deref().ok_or(Error::GroundTruthUnavailable)
    }

    /// Cards whose true votes mention the contest, under- and overvotes included.
    pub fn count_cards_with_contest(&self, contest_id: &str) -> Result<u64> {
        let cards = self.cards()?;
        Ok(cards.iter().filter(|c| c.true_votes.contains(contest_id)).count() as u64)
    }

    /// CVRs (phantoms included) that mention the contest.
    pub fn count_cvrs_with_contest(&self, contest_id: &str) -> Result<u64> {
        self.contest(contest_id)?;
        Ok(count_cvrs_with_contest(&self.cvrs, contest_id))
    }

    /// Re-number `card_index` from pile order.
    pub fn index_cards(&mut self) {
        if let Some(cards) = self.cards.as_mut() {
            for (i, c) in cards.iter_mut().enumerate() {
                c.card_index = i;
            }
        }
    }

    /// Winners per contest according to the physical cards.
    pub fn hand_count(&self) -> Result<BTreeMap<String, Option<Vec<String>>>> {
        let cards = self.cards()?;
        Ok(self
            .contests
            .iter()
            .map(|c| {
                let winners = c.tally_winners(cards.iter().map(|b| &b.true_votes));
                (c.contest_id.clone(), winners)
            })
            .collect())
    }

    pub fn validate(&self) -> Vec<Finding> {
        validate_election(self)
    }
}

pub fn count_cvrs_with_contest(cvrs: &[Cvr], contest_id: &str) -> u64 {
    cvrs.iter().filter(|c| c.votes.contains(contest_id)).count() as u64
}

/// Which kind of record a finding refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Cvr,
    Card,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Cvr => "CVR",
            RecordKind::Card => "card",
        })
    }
}

/// A violated invariant of the election record.
///
/// Findings never mention record positions, so the set of findings does not
/// depend on the order of the input lists.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    DuplicateContest { contest: String },
    TooFewCandidates { contest: String, count: usize },
    DuplicateCandidate { contest: String, candidate: String },
    ReservedCandidateName { contest: String, candidate: String },
    WinnerNotCandidate { contest: String, candidate: String },
    WrongWinnerCount { contest: String, expected: usize, found: usize },
    TooManyWinners { contest: String, winners: usize, candidates: usize },
    RiskLimitOutOfRange { contest: String, risk_limit: String },
    ThresholdOutOfRange { contest: String, threshold: String },
    DuplicateCvrId { id: String },
    PhantomWithId { id: String },
    PhantomWithValidVote { contest: String },
    UnknownContest { record: RecordKind, contest: String },
    UnknownCandidate { record: RecordKind, contest: String, candidate: String },
}

impl Finding {
    pub fn is_duplicate_id(&self) -> bool {
        matches!(self, Finding::DuplicateCvrId { .. })
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Finding::*;
        match self {
            DuplicateContest { contest } => write!(f, "duplicate contest id `{contest}`"),
            TooFewCandidates { contest, count } => {
                write!(f, "contest `{contest}` has {count} candidates; at least 2 required")
            }
            DuplicateCandidate { contest, candidate } => {
                write!(f, "contest `{contest}` lists candidate `{candidate}` twice")
            }
            ReservedCandidateName { contest, candidate } => {
                write!(f, "contest `{contest}` uses reserved candidate name `{candidate}`")
            }
            WinnerNotCandidate { contest, candidate } => {
                write!(f, "reported winner `{candidate}` is not a candidate in `{contest}`")
            }
            WrongWinnerCount { contest, expected, found } => {
                write!(f, "contest `{contest}` reports {found} winners; expected {expected}")
            }
            TooManyWinners { contest, winners, candidates } => write!(
                f,
                "contest `{contest}` has {winners} winners but only {candidates} candidates"
            ),
            RiskLimitOutOfRange { contest, risk_limit } => {
                write!(f, "contest `{contest}` risk limit {risk_limit} outside (0, 1)")
            }
            ThresholdOutOfRange { contest, threshold } => {
                write!(f, "contest `{contest}` supermajority threshold {threshold} outside (1/2, 1)")
            }
            DuplicateCvrId { id } => write!(f, "duplicate CVR id `{id}`"),
            PhantomWithId { id } => write!(f, "phantom CVR carries id `{id}`"),
            PhantomWithValidVote { contest } => {
                write!(f, "phantom CVR has a valid vote in `{contest}`")
            }
            UnknownContest { record, contest } => {
                write!(f, "{record} mentions unknown contest `{contest}`")
            }
            UnknownCandidate { record, contest, candidate } => {
                write!(f, "{record} votes for unknown candidate `{candidate}` in `{contest}`")
            }
        }
    }
}

/// Check the record invariants. An empty list means the election is valid.
/// Findings are sorted and deduplicated.
pub fn validate_election(election: &Election) -> Vec<Finding> {
    let mut findings = BTreeSet::new();
    let mut by_id: HashMap<&str, &Contest> = HashMap::new();

    for contest in &election.contests {
        let cid = &contest.contest_id;
        if by_id.insert(cid.as_str(), contest).is_some() {
            findings.insert(Finding::DuplicateContest { contest: cid.clone() });
        }
        let n_candidates = contest.candidates.len();
        if n_candidates < 2 {
            findings.insert(Finding::TooFewCandidates {
                contest: cid.clone(),
                count: n_candidates,
            });
        }
        let mut seen = BTreeSet::new();
        for cand in &contest.candidates {
            if !seen.insert(cand) {
                findings.insert(Finding::DuplicateCandidate {
                    contest: cid.clone(),
                    candidate: cand.clone(),
                });
            }
            if cand == UNDERVOTE || cand == OVERVOTE {
                findings.insert(Finding::ReservedCandidateName {
                    contest: cid.clone(),
                    candidate: cand.clone(),
                });
            }
        }
        for w in &contest.reported_winners {
            if !contest.has_candidate(w) {
                findings.insert(Finding::WinnerNotCandidate {
                    contest: cid.clone(),
                    candidate: w.clone(),
                });
            }
        }
        let k = contest.reported_winners.len();
        if let Some(expected) = contest.expected_winners() {
            if k != expected {
                findings.insert(Finding::WrongWinnerCount {
                    contest: cid.clone(),
                    expected,
                    found: k,
                });
            }
        }
        if k >= n_candidates && n_candidates > 0 {
            findings.insert(Finding::TooManyWinners {
                contest: cid.clone(),
                winners: k,
                candidates: n_candidates,
            });
        }
        if !(contest.risk_limit > 0.0 && contest.risk_limit < 1.0) {
            findings.insert(Finding::RiskLimitOutOfRange {
                contest: cid.clone(),
                risk_limit: contest.risk_limit.to_string(),
            });
        }
        if let SocialChoice::Supermajority { threshold } = contest.social_choice {
            if !(threshold > 0.5 && threshold < 1.0) {
                findings.insert(Finding::ThresholdOutOfRange {
                    contest: cid.clone(),
                    threshold: threshold.to_string(),
                });
            }
        }
    }

    let mut ids: HashMap<&str, usize> = HashMap::new();
    for cvr in &election.cvrs {
        if cvr.phantom {
            if let Some(id) = &cvr.id {
                findings.insert(Finding::PhantomWithId { id: id.clone() });
            }
            for (contest, sel) in cvr.votes.iter() {
                if sel.is_valid_vote() {
                    findings.insert(Finding::PhantomWithValidVote {
                        contest: contest.clone(),
                    });
                }
            }
        } else if let Some(id) = &cvr.id {
            *ids.entry(id.as_str()).or_default() += 1;
        }
        check_votes(&by_id, RecordKind::Cvr, &cvr.votes, &mut findings);
    }
    for (id, n) in ids {
        if n > 1 {
            findings.insert(Finding::DuplicateCvrId { id: id.to_owned() });
        }
    }
    if let Some(cards) = &election.cards {
        for card in cards {
            check_votes(&by_id, RecordKind::Card, &card.true_votes, &mut findings);
        }
    }
    findings.into_iter().collect()
}

fn check_votes(
    contests: &HashMap<&str, &Contest>,
    record: RecordKind,
    votes: &VoteRecord,
    findings: &mut BTreeSet<Finding>,
) {
    for (cid, sel) in votes.iter() {
        match contests.get(cid.as_str()) {
            None => {
                findings.insert(Finding::UnknownContest {
                    record,
                    contest: cid.clone(),
                });
            }
            Some(contest) => {
                if let Selection::Candidate(c) = sel {
                    if !contest.has_candidate(c) {
                        findings.insert(Finding::UnknownCandidate {
                            record,
                            contest: cid.clone(),
                            candidate: c.clone(),
                        });
                    }
                }
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn card(i: usize, votes: VoteRecord) -> BallotCard {
        BallotCard { card_index: i, imprinted_id: Some(i.to_string()), true_votes: votes }
    }

    #[test]
    fn counts_cards_with_contest() {
        let e = alice_bob("Bob");
        assert_eq!(e.count_cards_with_contest(CONTEST).unwrap(), 3);

        let empty = Election { cards: Some(vec![]), ..e.clone() };
        assert_eq!(empty.count_cards_with_contest(CONTEST).unwrap(), 0);

        // Mixed card styles: only cards 1 and 3 carry the contest.
        let other = VoteRecord::single("council", "Carol");
        let mixed = Election {
            cards: Some(vec![
                card(0, other.clone()),
                card(1, vote("Alice")),
                card(2, other.clone()),
                card(3, VoteRecord::new().with(CONTEST, Selection::Undervote)),
                card(4, VoteRecord::new()),
            ]),
            ..e.clone()
        };
        assert_eq!(mixed.count_cards_with_contest(CONTEST).unwrap(), 2);

        let live = Election { cards: None, ..e };
        assert!(matches!(
            live.count_cards_with_contest(CONTEST),
            Err(Error::GroundTruthUnavailable)
        ));
    }

    #[test]
    fn counts_cvrs_with_contest() {
        let mut e = alice_bob("Bob");
        assert_eq!(e.count_cvrs_with_contest(CONTEST).unwrap(), 3);
        assert!(matches!(e.count_cvrs_with_contest("nope"), Err(Error::UnknownContest(_))));

        e.contests.push(Contest { contest_id: "x".into(), ..plurality(&["A", "B"], "A", 0) });
        assert_eq!(e.count_cvrs_with_contest("x").unwrap(), 0);

        e.cvrs = vec![
            Cvr::new("1", VoteRecord::single("x", "A")),
            Cvr::new("2", VoteRecord::single("x", "B")),
            Cvr::phantom("x"),
        ];
        assert_eq!(e.count_cvrs_with_contest("x").unwrap(), 3);
    }

    #[test]
    fn validation_findings() {
        assert_eq!(validate_election(&alice_bob("Bob")), vec![]);

        let mut dup = alice_bob("Bob");
        dup.cvrs[1].id = Some("17".into());
        let findings = validate_election(&dup);
        assert_eq!(findings, vec![Finding::DuplicateCvrId { id: "17".into() }]);
        assert_eq!(findings[0].to_string(), "duplicate CVR id `17`");

        let mut bad_winner = alice_bob("Bob");
        bad_winner.contests[0].reported_winners = ["Zed".to_string()].into();
        assert!(validate_election(&bad_winner)
            .contains(&Finding::WinnerNotCandidate { contest: CONTEST.into(), candidate: "Zed".into() }));

        let mut k_ge_c = alice_bob("Bob");
        k_ge_c.contests[0].social_choice = SocialChoice::MultiwinnerPlurality { winners: 2 };
        k_ge_c.contests[0].reported_winners = ["Alice".to_string(), "Bob".to_string()].into();
        assert!(validate_election(&k_ge_c)
            .contains(&Finding::TooManyWinners { contest: CONTEST.into(), winners: 2, candidates: 2 }));

        let mut dangling = alice_bob("Bob");
        dangling.cvrs[0].votes = vote("Mallory");
        assert_eq!(
            validate_election(&dangling),
            vec![Finding::UnknownCandidate {
                record: RecordKind::Cvr,
                contest: CONTEST.into(),
                candidate: "Mallory".into()
            }]
        );

        let mut phantom = alice_bob("Bob");
        phantom.cvrs.push(Cvr { id: Some("x".into()), phantom: true, votes: vote("Bob") });
        let f = validate_election(&phantom);
        assert!(f.contains(&Finding::PhantomWithId { id: "x".into() }));
        assert!(f.contains(&Finding::PhantomWithValidVote { contest: CONTEST.into() }));
    }

    #[test]
    fn selection_strings() {
        let s: Selection = serde_json::from_str("\"undervote\"").unwrap();
        assert_eq!(s, Selection::Undervote);
        let s: Selection = serde_json::from_str("\"Alice\"").unwrap();
        assert_eq!(s, Selection::candidate("Alice"));
        assert_eq!(serde_json::to_string(&Selection::Overvote).unwrap(), "\"overvote\"");
    }

    #[test]
    fn tally_winners_by_contest_rule() {
        let e = alice_bob("Bob");
        let hc = e.hand_count().unwrap();
        assert_eq!(hc[CONTEST], Some(vec!["Alice".to_string()]));

        let mut sm = plurality(&["A", "B"], "A", 10);
        sm.social_choice = SocialChoice::Supermajority { threshold: 2.0 / 3.0 };
        let votes: Vec<VoteRecord> = (0..10).map(|i| vote(if i < 7 { "A" } else { "B" })).collect();
        assert_eq!(sm.tally_winners(&votes), Some(vec!["A".to_string()]));
        let votes: Vec<VoteRecord> = (0..10).map(|i| vote(if i < 6 { "A" } else { "B" })).collect();
        assert_eq!(sm.tally_winners(&votes), Some(vec![]));
    }
}
