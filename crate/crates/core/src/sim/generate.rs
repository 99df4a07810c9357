//! Synthetic elections with exact tallies, CVR errors and imprint patterns.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BallotCard, Contest, Cvr, Election, Selection, SocialChoice, VoteRecord};
use crate::prng::HashPrng;

fn default_contest_id() -> String {
    "contest".into()
}

fn default_risk_limit() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_pairs() -> u64 {
    1
}

/// Recorded selections that differ from the card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvrError {
    /// True selection on the card: a candidate, `undervote` or `overvote`.
    pub from: String,
    /// Selection recorded on the CVR instead.
    pub to: String,
    #[serde(default)]
    pub count: Option<u64>,
    /// Fraction of the `from` cards affected, rounded to a whole count.
    #[serde(default)]
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImprintSpec {
    /// A fresh nonce on every card; the CVR carries its card's nonce.
    #[default]
    Unique,
    /// Pairs of `victim` cards share one imprint and one CVR; each pair
    /// frees a CVR slot that is filled with a fabricated vote for
    /// `beneficiary` under an id printed on no card.
    DuplicateAttack {
        #[serde(default = "default_pairs")]
        pairs: u64,
        #[serde(default)]
        victim: Option<String>,
        #[serde(default)]
        beneficiary: Option<String>,
    },
    /// `count` cards get no imprint.
    Blank { count: u64 },
    /// `count` cards get a copy of another card's imprint.
    Duplicate { count: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    #[serde(default = "default_contest_id")]
    pub contest_id: String,
    pub candidates: Vec<String>,
    pub n_cards: u64,
    /// Votes per candidate on the cards; the remaining cards are undervotes.
    #[serde(default)]
    pub true_tallies: Option<BTreeMap<String, u64>>,
    /// Two-candidate shortcut: the first candidate gets `(1 + margin) / 2`
    /// of the cards, rounded, and the second the rest.
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub social_choice: Option<SocialChoice>,
    /// Defaults to the winners according to the CVRs.
    #[serde(default)]
    pub reported_winners: Option<BTreeSet<String>>,
    #[serde(default = "default_risk_limit")]
    pub risk_limit: f64,
    #[serde(default)]
    pub cvr_errors: Vec<CvrError>,
    #[serde(default)]
    pub imprint: ImprintSpec,
    /// CVRs dropped from the list, leaving fewer CVRs than cards.
    #[serde(default)]
    pub missing_cvrs: u64,
    /// Fabricated CVRs for the reported winner with ids printed on no card.
    #[serde(default)]
    pub extra_cvrs: u64,
    /// Defaults to `n_cards`.
    #[serde(default)]
    pub card_upper_bound: Option<u64>,
    /// Shuffle the physical pile.
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl GenSpec {
    pub fn two_candidate(n_cards: u64, margin: f64) -> Self {
        GenSpec {
            contest_id: default_contest_id(),
            candidates: vec!["Bob".into(), "Alice".into()],
            n_cards,
            true_tallies: None,
            margin: Some(margin),
            social_choice: None,
            reported_winners: None,
            risk_limit: default_risk_limit(),
            cvr_errors: Vec::new(),
            imprint: ImprintSpec::Unique,
            missing_cvrs: 0,
            extra_cvrs: 0,
            card_upper_bound: None,
            shuffle: true,
        }
    }

    /// Exact votes per candidate on the cards.
    pub fn tallies(&self) -> Result<BTreeMap<String, u64>> {
        let infeasible = |m: String| Err(Error::Infeasible(m));
        let tallies = match (&self.true_tallies, self.margin) {
            (Some(_), Some(_)) => return infeasible("give either true_tallies or margin, not both".into()),
            (None, None) => return infeasible("one of true_tallies or margin is required".into()),
            (Some(t), None) => t.clone(),
            (None, Some(m)) => {
                if self.candidates.len() != 2 {
                    return infeasible("margin needs exactly two candidates".into());
                }
                if !(m > -1.0 && m < 1.0) {
                    return infeasible(format!("margin {m} outside (-1, 1)"));
                }
                let n = self.n_cards;
                let first = ((1.0 + m) / 2.0 * n as f64).round() as u64;
                [(self.candidates[0].clone(), first), (self.candidates[1].clone(), n - first)].into()
            }
        };
        for name in tallies.keys() {
            if !self.candidates.contains(name) {
                return infeasible(format!("tally for unknown candidate `{name}`"));
            }
        }
        let total: u64 = tallies.values().sum();
        if total > self.n_cards {
            return infeasible(format!("{total} votes do not fit on {} cards", self.n_cards));
        }
        Ok(tallies)
    }
}

fn fresh_nonce(prng: &mut HashPrng, used: &mut HashSet<String>) -> String {
    loop {
        let id = format!("{:012x}", prng.below(1 << 48));
        if used.insert(id.clone()) {
            return id;
        }
    }
}

/// `k` distinct elements of `items`, chosen uniformly.
fn choose(prng: &mut HashPrng, items: &[usize], k: usize) -> Vec<usize> {
    let mut v = items.to_vec();
    for i in 0..k.min(v.len()) {
        let j = i + prng.index(v.len() - i);
        v.swap(i, j);
    }
    v.truncate(k);
    v
}

fn count_for(err: &CvrError, available: usize) -> Result<usize> {
    let n = match (err.count, err.rate) {
        (Some(c), None) => c as usize,
        (None, Some(r)) if (0.0..=1.0).contains(&r) => (r * available as f64).round() as usize,
        (None, Some(r)) => return Err(Error::Infeasible(format!("error rate {r} outside [0, 1]"))),
        _ => return Err(Error::Infeasible("each CVR error needs exactly one of count or rate".into())),
    };
    if n > available {
        return Err(Error::Infeasible(format!(
            "{n} errors from `{}` but only {available} such cards remain",
            err.from
        )));
    }
    Ok(n)
}

/// Build the election. All randomness comes from `prng`.
pub fn generate(spec: &GenSpec, prng: &mut HashPrng) -> Result<Election> {
    let tallies = spec.tallies()?;
    let cid = spec.contest_id.as_str();
    let social_choice = spec.social_choice.clone().unwrap_or(SocialChoice::Plurality);
    let n = spec.n_cards as usize;

    let mut true_sel: Vec<Selection> = Vec::with_capacity(n);
    for c in &spec.candidates {
        let k = tallies.get(c).copied().unwrap_or(0);
        true_sel.extend((0..k).map(|_| Selection::candidate(c)));
    }
    true_sel.resize(n, Selection::Undervote);

    let mut cvr_sel = true_sel.clone();
    let mut touched = vec![false; n];
    for err in &spec.cvr_errors {
        let from = Selection::from(err.from.clone());
        let eligible: Vec<usize> = (0..n).filter(|&i| !touched[i] && true_sel[i] == from).collect();
        let k = count_for(err, eligible.len())?;
        for i in choose(prng, &eligible, k) {
            cvr_sel[i] = Selection::from(err.to.clone());
            touched[i] = true;
        }
    }

    let mut used = HashSet::new();
    let mut imprints: Vec<Option<String>> = (0..n).map(|_| Some(fresh_nonce(prng, &mut used))).collect();
    let mut cvr_ids: Vec<Option<String>> = imprints.clone();
    let mut fabricated: Vec<Cvr> = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    match &spec.imprint {
        ImprintSpec::Unique => {}
        ImprintSpec::DuplicateAttack { pairs, victim, beneficiary } => {
            let ranked = ranked_candidates(&spec.candidates, &tallies);
            let victim = victim.clone().unwrap_or_else(|| ranked[0].clone());
            let beneficiary = beneficiary
                .clone()
                .or_else(|| ranked.iter().find(|c| **c != victim).cloned())
                .ok_or_else(|| Error::Infeasible("no beneficiary candidate".into()))?;
            let target = Selection::candidate(&victim);
            let eligible: Vec<usize> = (0..n).filter(|&i| true_sel[i] == target && cvr_sel[i] == target).collect();
            let need = 2 * *pairs as usize;
            if need > eligible.len() {
                return Err(Error::Infeasible(format!(
                    "{pairs} duplicate pairs need {need} correctly recorded `{victim}` cards; {} available",
                    eligible.len()
                )));
            }
            let mut picked = choose(prng, &eligible, need);
            picked.sort_unstable();
            for pair in picked.chunks(2) {
                let (a, b) = (pair[0], pair[1]);
                imprints[b] = imprints[a].clone();
                cvr_ids[b] = None;
                let id = fresh_nonce(prng, &mut used);
                fabricated.push(Cvr::new(id, VoteRecord::single(cid, beneficiary.clone())));
            }
        }
        ImprintSpec::Blank { count } => {
            if *count as usize > n {
                return Err(Error::Infeasible(format!("{count} blank imprints on {n} cards")));
            }
            for i in choose(prng, &all, *count as usize) {
                imprints[i] = None;
            }
        }
        ImprintSpec::Duplicate { count } => {
            if *count as usize > n || (n < 2 && *count > 0) {
                return Err(Error::Infeasible(format!("{count} duplicate imprints on {n} cards")));
            }
            for i in choose(prng, &all, *count as usize) {
                let mut j = prng.index(n - 1);
                if j >= i {
                    j += 1;
                }
                imprints[i] = imprints[j].clone();
            }
        }
    }

    let mut cvrs: Vec<Cvr> = (0..n)
        .filter_map(|i| {
            let id = cvr_ids[i].clone()?;
            Some(Cvr::new(id, VoteRecord::new().with(cid, cvr_sel[i].clone())))
        })
        .collect();
    cvrs.extend(fabricated);

    if spec.missing_cvrs as usize > cvrs.len() {
        return Err(Error::Infeasible(format!(
            "cannot drop {} of {} CVRs",
            spec.missing_cvrs,
            cvrs.len()
        )));
    }
    let positions: Vec<usize> = (0..cvrs.len()).collect();
    let dropped: HashSet<usize> = choose(prng, &positions, spec.missing_cvrs as usize).into_iter().collect();
    let mut cvrs: Vec<Cvr> = cvrs
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, c)| c)
        .collect();

    let mut contest = Contest {
        contest_id: cid.to_owned(),
        social_choice,
        candidates: spec.candidates.clone(),
        reported_winners: BTreeSet::new(),
        card_upper_bound: spec.card_upper_bound.unwrap_or(spec.n_cards),
        risk_limit: spec.risk_limit,
    };
    let reported = match &spec.reported_winners {
        Some(w) => w.clone(),
        None => cvr_winners(&contest, &cvrs),
    };
    if spec.extra_cvrs > 0 {
        let winner = reported
            .iter()
            .next()
            .ok_or_else(|| Error::Infeasible("extra CVRs need a reported winner".into()))?;
        for _ in 0..spec.extra_cvrs {
            let id = fresh_nonce(prng, &mut used);
            cvrs.push(Cvr::new(id, VoteRecord::single(cid, winner.clone())));
        }
    }
    contest.reported_winners = reported;
    cvrs.sort_by(|a, b| a.id.cmp(&b.id));

    let mut cards: Vec<BallotCard> = (0..n)
        .map(|i| BallotCard {
            card_index: i,
            imprinted_id: imprints[i].clone(),
            true_votes: VoteRecord::new().with(cid, true_sel[i].clone()),
        })
        .collect();
    if spec.shuffle {
        prng.shuffle(&mut cards);
    }
    let mut election = Election {
        contests: vec![contest],
        cvrs,
        cards: Some(cards),
    };
    election.index_cards();
    Ok(election)
}

/// Candidates by true tally, highest first; ties by list order.
fn ranked_candidates(candidates: &[String], tallies: &BTreeMap<String, u64>) -> Vec<String> {
    let mut v: Vec<(usize, &String)> = candidates.iter().enumerate().collect();
    v.sort_by_key(|(i, c)| (std::cmp::Reverse(tallies.get(*c).copied().unwrap_or(0)), *i));
    v.into_iter().map(|(_, c)| c.clone()).collect()
}

/// Plurality winners by CVR tally, as many as the social choice elects.
fn cvr_winners(contest: &Contest, cvrs: &[Cvr]) -> BTreeSet<String> {
    let k = contest.expected_winners().unwrap_or(1);
    let plurality = Contest {
        social_choice: SocialChoice::MultiwinnerPlurality { winners: k },
        ..contest.clone()
    };
    plurality
        .tally_winners(cvrs.iter().map(|c| &c.votes))
        .unwrap_or_default()
        .into_iter()
        .collect()
}
