//! The untrusted imprint-and-retrieve subsystem.
//!
//! A [`Retriever`] is asked for the card carrying a CVR id and answers with a
//! handle to some physical card, or nothing. The auditor never trusts that
//! answer: it looks at the returned card's imprint itself
//! ([`classify_retrieval`]) and computes the statistic `L` from what it saw
//! ([`lower_bound_l`]).
//!
//! The simulated retrievers in this module can misbehave in every way the
//! threat model allows except one: they can only return cards that exist in
//! the physical pile.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assorter::OverstatementAssorter;
use crate::error::{Error, Result};
use crate::model::{BallotCard, Cvr, VoteRecord};

/// A physical card as seen by the auditor after retrieval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CardRef {
    pub handle: usize,
    pub imprinted_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    CardWithRequestedId,
    CardWithOtherId,
    CardWithoutId,
    NoCard,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RetrievalResult {
    CardWithRequestedId(CardRef),
    CardWithOtherId(CardRef),
    CardWithoutId(CardRef),
    NoCard,
}

impl RetrievalResult {
    pub fn outcome(&self) -> Outcome {
        match self {
            RetrievalResult::CardWithRequestedId(_) => Outcome::CardWithRequestedId,
            RetrievalResult::CardWithOtherId(_) => Outcome::CardWithOtherId,
            RetrievalResult::CardWithoutId(_) => Outcome::CardWithoutId,
            RetrievalResult::NoCard => Outcome::NoCard,
        }
    }

    pub fn card(&self) -> Option<&CardRef> {
        match self {
            RetrievalResult::CardWithRequestedId(c)
            | RetrievalResult::CardWithOtherId(c)
            | RetrievalResult::CardWithoutId(c) => Some(c),
            RetrievalResult::NoCard => None,
        }
    }
}

/// Classify what came back using only the card's own imprint.
pub fn classify_retrieval(requested_id: &str, returned: Option<CardRef>) -> RetrievalResult {
    match returned {
        None => RetrievalResult::NoCard,
        Some(card) => match card.imprinted_id.as_deref() {
            Some(id) if id == requested_id => RetrievalResult::CardWithRequestedId(card),
            Some(_) => RetrievalResult::CardWithOtherId(card),
            None => RetrievalResult::CardWithoutId(card),
        },
    }
}

/// `L` for one assertion. Only a card bearing the requested id counts; any
/// other outcome, and any phantom CVR, is scored as if the card showed the
/// vote least favorable to the reported winner.
pub fn lower_bound_l(
    oa: &OverstatementAssorter,
    cvr: &Cvr,
    result: &RetrievalResult,
    mvr: Option<&VoteRecord>,
) -> Result<f64> {
    if cvr.phantom {
        return Ok(oa.value(cvr, None));
    }
    match result {
        RetrievalResult::CardWithRequestedId(card) => {
            let votes = mvr.ok_or_else(|| {
                Error::MvrRequired(card.imprinted_id.clone().unwrap_or_default())
            })?;
            Ok(oa.value(cvr, Some(votes)))
        }
        _ => Ok(oa.value(cvr, None)),
    }
}

/// One past request, as visible to an adaptive retriever.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RetrievalRequest {
    pub draw: u64,
    pub requested_id: String,
    pub returned: Option<usize>,
}

pub trait Retriever {
    /// Hand back the physical card to show the auditor for `requested_id`.
    fn retrieve(&mut self, requested_id: &str, history: &[RetrievalRequest]) -> Result<Option<usize>>;
}

/// The auditor's view of a returned card: its imprint, and the votes a
/// human reads from it.
pub trait MvrProvider {
    fn imprint(&mut self, handle: usize) -> Result<Option<String>>;
    fn read_votes(&mut self, handle: usize, requested_id: &str) -> Result<VoteRecord>;
}

/// The physical pile in simulation: imprints and votes come from ground truth.
#[derive(Clone, Debug)]
pub struct PhysicalPile {
    cards: Arc<PileIndex>,
}

impl PhysicalPile {
    pub fn new(index: Arc<PileIndex>) -> Self {
        PhysicalPile { cards: index }
    }

    fn card(&self, handle: usize) -> Result<&BallotCard> {
        self.cards.cards.get(handle).ok_or(Error::UnknownCard(handle))
    }
}

impl MvrProvider for PhysicalPile {
    fn imprint(&mut self, handle: usize) -> Result<Option<String>> {
        Ok(self.card(handle)?.imprinted_id.clone())
    }

    fn read_votes(&mut self, handle: usize, _requested_id: &str) -> Result<VoteRecord> {
        Ok(self.card(handle)?.true_votes.clone())
    }
}

/// The pile plus lookups a simulated retriever needs. Built once per
/// election and shared between replications.
#[derive(Clone, Debug)]
pub struct PileIndex {
    cards: Vec<BallotCard>,
    by_imprint: HashMap<String, Vec<usize>>,
    blank: Vec<usize>,
    cvr_votes: HashMap<String, VoteRecord>,
}

impl PileIndex {
    pub fn new(cards: &[BallotCard], cvrs: &[Cvr]) -> Self {
        let mut by_imprint: HashMap<String, Vec<usize>> = HashMap::new();
        let mut blank = Vec::new();
        for (i, card) in cards.iter().enumerate() {
            match &card.imprinted_id {
                Some(id) => by_imprint.entry(id.clone()).or_default().push(i),
                None => blank.push(i),
            }
        }
        let cvr_votes = cvrs
            .iter()
            .filter(|c| !c.phantom)
            .filter_map(|c| c.id.clone().map(|id| (id, c.votes.clone())))
            .collect();
        PileIndex {
            cards: cards.to_vec(),
            by_imprint,
            blank,
            cvr_votes,
        }
    }

    pub fn cards(&self) -> &[BallotCard] {
        &self.cards
    }

    /// Cards imprinted with `id`, in pile order.
    pub fn imprinted(&self, id: &str) -> &[usize] {
        self.by_imprint.get(id).map_or(&[], Vec::as_slice)
    }

    /// Number of contests on the CVR where the card shows something else.
    pub fn discrepancies(&self, id: &str, handle: usize) -> usize {
        let Some(cvr) = self.cvr_votes.get(id) else { return 0 };
        let card = &self.cards[handle].true_votes;
        cvr.iter().filter(|(c, sel)| card.get(c) != Some(*sel)).count()
    }

    pub fn honest(&self, id: &str) -> Option<usize> {
        self.imprinted(id).first().copied()
    }

    /// First card satisfying `pred`, preferring one whose votes agree with the
    /// CVR for `id` when `look_alike` is set.
    fn pick(&self, id: &str, look_alike: bool, pred: impl Fn(&BallotCard) -> bool) -> Option<usize> {
        let mut candidates = self.cards.iter().enumerate().filter(|(_, c)| pred(c)).map(|(i, _)| i);
        if look_alike {
            let all: Vec<usize> = candidates.collect();
            all.iter()
                .copied()
                .find(|&i| self.discrepancies(id, i) == 0)
                .or_else(|| all.first().copied())
        } else {
            candidates.next()
        }
    }
}

/// When a misbehaving policy misbehaves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Always,
    /// Only when the honest card is missing or would show a discrepancy.
    WhenDiscrepant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    ReturnCardIndex(usize),
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PolicyKind {
    Honest,
    /// Among cards sharing the requested imprint, return the one that best
    /// matches the CVR.
    DuplicateExploit,
    /// Return nothing for the listed ids (all ids when absent).
    Withhold {
        #[serde(default)]
        ids: Option<Vec<String>>,
    },
    /// Return a card imprinted with some other id.
    WrongCard {
        #[serde(default)]
        strategy: Strategy,
    },
    /// Return a card with no imprint.
    BlankCard {
        #[serde(default)]
        strategy: Strategy,
    },
    /// Fixed responses per id; unlisted ids are handled honestly.
    Scripted { script: BTreeMap<String, ScriptAction> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Adaptive retrievers look at the request history.
    #[serde(default)]
    pub adaptive: bool,
}

impl RetrieverPolicy {
    pub fn honest() -> Self {
        RetrieverPolicy {
            kind: PolicyKind::Honest,
            adaptive: false,
        }
    }

    pub fn new(kind: PolicyKind) -> Self {
        RetrieverPolicy { kind, adaptive: false }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolicyKind::Honest => "honest",
            PolicyKind::DuplicateExploit => "duplicate_exploit",
            PolicyKind::Withhold { .. } => "withhold",
            PolicyKind::WrongCard { .. } => "wrong_card",
            PolicyKind::BlankCard { .. } => "blank_card",
            PolicyKind::Scripted { .. } => "scripted",
        }
    }
}

impl Default for RetrieverPolicy {
    fn default() -> Self {
        Self::honest()
    }
}

/// A retriever driven by a [`RetrieverPolicy`] over a simulated pile.
#[derive(Clone, Debug)]
pub struct SimRetriever {
    index: Arc<PileIndex>,
    policy: RetrieverPolicy,
}

impl SimRetriever {
    pub fn new(index: Arc<PileIndex>, policy: RetrieverPolicy) -> Self {
        SimRetriever { index, policy }
    }

    fn misbehaves(&self, id: &str, strategy: Strategy) -> bool {
        match strategy {
            Strategy::Always => true,
            Strategy::WhenDiscrepant => match self.index.honest(id) {
                None => true,
                Some(h) => self.index.discrepancies(id, h) > 0,
            },
        }
    }
}

impl Retriever for SimRetriever {
    fn retrieve(&mut self, id: &str, history: &[RetrievalRequest]) -> Result<Option<usize>> {
        let index = &self.index;
        let adaptive = self.policy.adaptive;
        let handle = match &self.policy.kind {
            PolicyKind::Honest => index.honest(id),
            PolicyKind::DuplicateExploit => {
                let candidates = index.imprinted(id);
                // Scanning the history only matters when there is a choice.
                let used = |h: usize| adaptive && candidates.len() > 1 && history.iter().any(|r| r.returned == Some(h));
                candidates
                    .iter()
                    .copied()
                    .min_by_key(|&h| (used(h), index.discrepancies(id, h), h))
            }
            PolicyKind::Withhold { ids } => {
                let hold = ids.as_ref().map_or(true, |ids| ids.iter().any(|x| x == id));
                if hold {
                    None
                } else {
                    index.honest(id)
                }
            }
            PolicyKind::WrongCard { strategy } => {
                if self.misbehaves(id, *strategy) {
                    index.pick(id, adaptive, |c| c.imprinted_id.as_deref().is_some_and(|x| x != id))
                } else {
                    index.honest(id)
                }
            }
            PolicyKind::BlankCard { strategy } => {
                if self.misbehaves(id, *strategy) {
                    if adaptive {
                        index.pick(id, true, |c| c.imprinted_id.is_none())
                    } else {
                        index.blank.first().copied()
                    }
                } else {
                    index.honest(id)
                }
            }
            PolicyKind::Scripted { script } => match script.get(id) {
                Some(ScriptAction::ReturnCardIndex(k)) => {
                    if *k >= index.cards.len() {
                        return Err(Error::UnknownCard(*k));
                    }
                    Some(*k)
                }
                Some(ScriptAction::None) => None,
                None => index.honest(id),
            },
        };
        Ok(handle)
    }
}

/// Per-assertion bijection from CVR index to card index, used only to
/// analyse the audit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalMapping {
    pub pi: Vec<usize>,
}

impl CanonicalMapping {
    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.pi.len()];
        for &j in &self.pi {
            if j >= seen.len() || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }
}

/// Pair each CVR with a card. An id imprinted on exactly one card maps to
/// that card; an id on several cards maps to the one maximizing the
/// overstatement value (lowest index on ties); everything left over is
/// paired in index order.
pub fn canonical_pi(
    cvrs: &[Cvr],
    cards: &[BallotCard],
    oa: &OverstatementAssorter,
) -> Result<CanonicalMapping> {
    if cvrs.len() != cards.len() {
        return Err(Error::SizeMismatch {
            cvrs: cvrs.len(),
            cards: cards.len(),
        });
    }
    let mut by_imprint: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, card) in cards.iter().enumerate() {
        if let Some(id) = &card.imprinted_id {
            by_imprint.entry(id).or_default().push(j);
        }
    }
    let n = cvrs.len();
    let mut pi = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (i, cvr) in cvrs.iter().enumerate() {
        if cvr.phantom {
            continue;
        }
        let Some(matches) = cvr.id.as_deref().and_then(|id| by_imprint.get(id)) else {
            continue;
        };
        let mut best = None::<(usize, f64)>;
        for &j in matches {
            if taken[j] {
                continue;
            }
            let b = oa.value(cvr, Some(&cards[j].true_votes));
            if best.map_or(true, |(_, bb)| b > bb) {
                best = Some((j, b));
            }
        }
        if let Some((j, _)) = best {
            pi[i] = j;
            taken[j] = true;
        }
    }
    let mut free = (0..n).filter(|&j| !taken[j]);
    for slot in pi.iter_mut().filter(|p| **p == usize::MAX) {
        *slot = free.next().expect("as many free cards as unpaired CVRs");
    }
    Ok(CanonicalMapping { pi })
}

/// `B(b_{pi(i)}, c_i)` for every CVR.
pub fn b_pi_values(
    oa: &OverstatementAssorter,
    cvrs: &[Cvr],
    cards: &[BallotCard],
    mapping: &CanonicalMapping,
) -> Vec<f64> {
    cvrs.iter()
        .zip(&mapping.pi)
        .map(|(cvr, &j)| oa.value(cvr, Some(&cards[j].true_votes)))
        .collect()
}
