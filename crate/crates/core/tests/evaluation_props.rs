mod common;

use std::collections::BTreeSet;

use approx::assert_relative_eq;
use chrono::Days;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reid_core::catalog::Catalog;
use reid_core::evaluation::{score_accuracy, score_closed, score_open, time_gap_curve};
use reid_core::geomverify::{PairDecision, VerificationDecision};
use reid_core::matchgraph::{Prediction, PredictionSet};
use reid_core::splitgen::{Split, SplitPolicy};

use common::{date, rec};

/// Reference images of individuals 0..n_known; query images carry a truth in
/// 0..6 (so some may be new) and an optional predicted identity.
#[derive(Debug, Clone)]
struct Scored {
    n_known: usize,
    queries: Vec<(usize, Option<usize>)>,
}

fn arb_scored(all_predicted: bool) -> impl Strategy<Value = Scored> {
    let pred = if all_predicted {
        (0..6usize).prop_map(Some).boxed()
    } else {
        proptest::option::of(0..6usize).boxed()
    };
    (1..6usize, proptest::collection::vec((0..6usize, pred), 1..60)).prop_map(|(n_known, queries)| Scored { n_known, queries })
}

impl Scored {
    fn build(&self) -> (Catalog, Split, PredictionSet) {
        let mut records = Vec::new();
        let mut reference = BTreeSet::new();
        for i in 0..self.n_known {
            let id = format!("r{i}");
            records.push(rec(&id, Some(&format!("ind{i}")), Some(date("2015-01-01"))));
            reference.insert(id);
        }
        let mut query = BTreeSet::new();
        let mut preds = PredictionSet::default();
        for (k, (truth, pred)) in self.queries.iter().enumerate() {
            let id = format!("q{k:03}");
            records.push(rec(&id, Some(&format!("ind{truth}")), Some(date("2016-01-01"))));
            let p = match pred {
                Some(p) => Prediction::Identity(format!("ind{p}")),
                None => Prediction::NoPrediction,
            };
            preds.predictions.insert(id.clone(), p);
            query.insert(id);
        }
        let split = Split {
            name: "s".into(),
            policy: SplitPolicy::TimeProportion { proportion: 0.5 },
            reference,
            query,
            excluded: BTreeSet::new(),
        };
        (Catalog::from_records(records).unwrap(), split, preds)
    }
}

proptest! {
    #![proptest_config(common::proptest_config(256))]

    #[test]
    fn full_prediction_makes_precision_recall_and_accuracy_agree(s in arb_scored(true)) {
        let (catalog, split, preds) = s.build();
        let rep = score_closed(&preds, &split, &catalog).unwrap();
        let acc = score_accuracy(&preds, &split, &catalog).unwrap();
        prop_assert_eq!(rep.precision, rep.recall);
        assert_relative_eq!(rep.precision.unwrap(), acc, max_relative = 1e-12);
    }

    #[test]
    fn counts_are_conserved(s in arb_scored(false)) {
        let (catalog, split, preds) = s.build();
        let n = split.query.len();
        let c = score_closed(&preds, &split, &catalog).unwrap();
        prop_assert_eq!(c.correct + c.wrong + c.no_prediction, n);
        let o = score_open(&preds, &split, &catalog).unwrap();
        prop_assert_eq!(o.pred_correct + o.pred_wrong + o.new_correct + o.new_wrong, n);
        prop_assert_eq!(o.counts.pred_wrong_known + o.counts.pred_wrong_new, o.pred_wrong);
    }

    #[test]
    fn recall_is_precision_times_coverage(s in arb_scored(false)) {
        let (catalog, split, preds) = s.build();
        let c = score_closed(&preds, &split, &catalog).unwrap();
        if let Some(p) = c.precision {
            let coverage = (c.correct + c.wrong) as f64 / c.n_query as f64;
            assert_relative_eq!(c.recall.unwrap(), p * coverage, max_relative = 1e-12);
        } else {
            prop_assert_eq!(c.correct + c.wrong, 0);
        }
    }

    #[test]
    fn time_gap_curve_ignores_order_and_duplicates(
        decisions in proptest::collection::vec((0..12usize, 0..12usize, any::<bool>()), 1..80),
        seed in any::<u64>(),
    ) {
        // four individuals, three images each, spread over several years
        let records: Vec<_> = (0..12)
            .map(|i| rec(&format!("i{i:02}"), Some(&format!("ind{}", i % 4)), Some(date("2014-01-01") + Days::new((i * i * 37) as u64))))
            .collect();
        let catalog = Catalog::from_records(records).unwrap();
        let pd = |a: usize, b: usize, accepted: bool| PairDecision {
            image_a: format!("i{a:02}"),
            image_b: format!("i{b:02}"),
            decision: VerificationDecision {
                accepted,
                cond_t: 1.0,
                cond_t_tilde: 1.0,
                n_correspondences: 10,
                residual: 0.0,
                reason: None,
            },
        };
        // first decision per unordered pair wins, so dedupe before comparing
        let mut seen = BTreeSet::new();
        let unique: Vec<_> = decisions
            .iter()
            .filter(|(a, b, _)| a != b && seen.insert((*a.min(b), *a.max(b))))
            .map(|&(a, b, acc)| pd(a.min(b), a.max(b), acc))
            .collect();
        let base = time_gap_curve(&unique, &catalog).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noisy: Vec<_> = unique.iter().flat_map(|d| [d.clone(), pd(d.image_b[1..].parse().unwrap(), d.image_a[1..].parse().unwrap(), d.decision.accepted)]).collect();
        noisy.shuffle(&mut rng);
        let again = time_gap_curve(&noisy, &catalog).unwrap();
        prop_assert_eq!(base.proportions(), again.proportions());
        prop_assert_eq!(base, again);
    }
}
