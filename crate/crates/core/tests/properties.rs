use proptest::prelude::*;

use noncesuch::assorter::{plurality_assorters, OverstatementAssorter};
use noncesuch::model::{BallotCard, Contest, Cvr, Selection, SocialChoice, VoteRecord};
use noncesuch::prng::derive_prng;
use noncesuch::retrieval::{b_pi_values, canonical_pi, classify_retrieval, lower_bound_l, CardRef};
use noncesuch::risk::{AlphaTest, Estimator, NullState, RiskMeasure, SamplingScheme, ShrinkTrunc};

const CANDIDATES: [&str; 3] = ["Alice", "Bob", "Carol"];

fn selection() -> impl Strategy<Value = Selection> {
    prop_oneof![
        (0..3usize).prop_map(|i| Selection::candidate(CANDIDATES[i])),
        Just(Selection::Undervote),
        Just(Selection::Overvote),
    ]
}

fn rec(s: &Selection) -> VoteRecord {
    VoteRecord::new().with("c", s.clone())
}

fn contest(winner: &str) -> Contest {
    Contest {
        contest_id: "c".into(),
        social_choice: SocialChoice::Plurality,
        candidates: CANDIDATES.iter().map(|s| s.to_string()).collect(),
        reported_winners: [winner.to_string()].into(),
        card_upper_bound: 0,
        risk_limit: 0.05,
    }
}

proptest! {
    #[test]
    fn prng_draws_stay_in_range(seed in 0u64..1_000_000, n in 1u64..10_000) {
        let mut a = derive_prng(&seed.to_string(), "p").unwrap();
        let mut b = derive_prng(&seed.to_string(), "p").unwrap();
        for _ in 0..20 {
            let x = a.below(n);
            prop_assert!(x < n);
            prop_assert_eq!(x, b.below(n));
        }
        prop_assert_eq!(a.counter(), b.counter());
    }

    #[test]
    fn shuffle_is_a_permutation(seed in 0u64..1_000_000, n in 0usize..200) {
        let mut xs: Vec<usize> = (0..n).collect();
        derive_prng(&seed.to_string(), "shuffle").unwrap().shuffle(&mut xs);
        xs.sort_unstable();
        prop_assert_eq!(xs, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn overstatement_values_are_bounded(
        cvr in selection(),
        card in selection(),
        margin in 0.001f64..0.999,
    ) {
        for base in plurality_assorters(&contest("Alice")).unwrap() {
            let oa = OverstatementAssorter::new(base, margin).unwrap();
            let c = Cvr::new("1", rec(&cvr));
            for value in [oa.value(&c, Some(&rec(&card))), oa.value(&c, None)] {
                prop_assert!(value >= 0.0);
                prop_assert!(value <= oa.upper_bound() + 1e-12);
            }
            // A missing card never scores above the card that agrees with the CVR.
            prop_assert!(oa.value(&c, None) <= oa.value(&c, Some(&rec(&cvr))));
        }
    }

    #[test]
    fn canonical_mapping_is_a_bijection_and_dominates(
        votes in prop::collection::vec((selection(), selection(), prop::option::of(0usize..12)), 1..12),
    ) {
        let n = votes.len();
        let cvrs: Vec<Cvr> = votes.iter().enumerate().map(|(i, (c, _, _))| Cvr::new(i.to_string(), rec(c))).collect();
        let cards: Vec<BallotCard> = votes
            .iter()
            .enumerate()
            .map(|(i, (_, b, imprint))| BallotCard {
                card_index: i,
                imprinted_id: imprint.map(|k| (k % (n + 1)).to_string()),
                true_votes: rec(b),
            })
            .collect();
        let base = plurality_assorters(&contest("Alice")).unwrap().remove(0);
        let oa = OverstatementAssorter::new(base, 0.25).unwrap();
        let pi = canonical_pi(&cvrs, &cards, &oa).unwrap();
        prop_assert!(pi.is_bijection());
        let b = b_pi_values(&oa, &cvrs, &cards, &pi);
        for (i, cvr) in cvrs.iter().enumerate() {
            let id = cvr.id.as_deref().unwrap();
            for j in 0..n {
                let result = classify_retrieval(id, Some(CardRef { handle: j, imprinted_id: cards[j].imprinted_id.clone() }));
                let l = lower_bound_l(&oa, cvr, &result, Some(&cards[j].true_votes)).unwrap();
                prop_assert!(l <= b[i] + 1e-12, "L {} > B {} for cvr {} card {}", l, b[i], i, j);
            }
        }
    }

    #[test]
    fn measured_risk_is_a_running_minimum(
        xs in prop::collection::vec(0.0f64..1.2, 1..300),
        with_replacement in any::<bool>(),
    ) {
        let scheme = if with_replacement { SamplingScheme::WithReplacement } else { SamplingScheme::WithoutReplacement };
        let estimator = Estimator::ShrinkTrunc(ShrinkTrunc::for_honest_value(0.6));
        let mut test = AlphaTest::new(1.2, 1000, scheme, estimator).unwrap();
        let mut last = 1.0;
        for x in xs {
            let risk = test.update(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&risk));
            if test.null_state() == NullState::Open {
                prop_assert!(risk <= last);
            }
            last = risk;
        }
    }
}
