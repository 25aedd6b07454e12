use proptest::prelude::*;

use robustboost::base_learners::{fit_stump, fit_tree2, FeatureOrder};
use robustboost::data::ExampleKind;
use robustboost::{
    gen_long_servedio, gen_mease_wyner, margins, train_adaboost, train_robustboost, BoostError, Dataset, Learner,
    LearnerKind, RobustBoostParams, StepSettings, TrainOptions, Trained, WeightedData,
};

fn dataset(features: Vec<u8>, labels: Vec<bool>, d: usize) -> Dataset {
    let n = labels.len();
    let x = features[..n * d].iter().map(|&v| f64::from(v) / 4.0).collect();
    let y = labels.iter().map(|&b| if b { 1 } else { -1 }).collect();
    Dataset::new(x, d, y).unwrap()
}

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    w[0] += 1.0 - w.iter().sum::<f64>();
    w
}

fn robust(ds: &Dataset, learner: LearnerKind, params: &RobustBoostParams, rounds: usize, snaps: &[usize]) -> Trained {
    let opts = TrainOptions::new(rounds).with_snapshots(snaps);
    match train_robustboost(ds, &Learner::new(learner, ds), params, &opts, &StepSettings::default()) {
        Ok(t) => t,
        Err(BoostError::NonTermination { partial, .. }) => *partial,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learners_are_deterministic_and_error_matches_correlation(
        d in 1usize..=5,
        features in prop::collection::vec(0u8..5, 100),
        labels in prop::collection::vec(any::<bool>(), 2..=20),
        raw in prop::collection::vec(0.01f64..1.0, 20),
    ) {
        let ds = dataset(features, labels, d);
        let w = normalized(&raw[..ds.len()]);
        let wd = WeightedData::new(&ds, &w).unwrap();
        let order = FeatureOrder::new(&ds);
        let fits = [(fit_stump(&wd, &order), fit_stump(&wd, &order)), (fit_tree2(&wd, &order), fit_tree2(&wd, &order))];
        for (fit, again) in fits {
            prop_assert_eq!(fit.as_ref().ok().map(|f| &f.hypothesis), again.as_ref().ok().map(|f| &f.hypothesis));
            if let Ok(fit) = fit {
                let corr = wd.correlation(&fit.hypothesis);
                prop_assert!((wd.error(&fit.hypothesis) - (1.0 - corr) / 2.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn long_servedio_kinds_have_exact_coordinate_counts(n in 1usize..300, q in 0.0f64..0.4, seed in any::<u64>()) {
        let ds = gen_long_servedio(n, q, seed).unwrap();
        for ((x, &y), kind) in ds.rows().zip(ds.clean_labels()).zip(ds.kinds().unwrap()) {
            let y = f64::from(y);
            let head = x[..11].iter().filter(|&&v| v == y).count();
            let tail = x[11..].iter().filter(|&&v| v == y).count();
            let expected = match kind {
                ExampleKind::LargeMargin => (11, 10),
                ExampleKind::Puller => (11, 0),
                ExampleKind::Penalizer => (5, 6),
            };
            prop_assert_eq!((head, tail), expected);
            prop_assert!(x.iter().sum::<f64>() * y > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn robustboost_trace_invariants(seed in 0u64..1000, mease_wyner in any::<bool>()) {
        let (ds, learner, params) = if mease_wyner {
            (gen_mease_wyner(200, 0.1, seed).unwrap(), LearnerKind::Stump, RobustBoostParams::new(0.2, 1.0, 0.1).unwrap())
        } else {
            (gen_long_servedio(200, 0.1, seed).unwrap(), LearnerKind::Coordinate, RobustBoostParams::new(0.2, 0.0, 0.1).unwrap())
        };
        let snaps: Vec<usize> = (0..=300).step_by(7).collect();
        let trained = robust(&ds, learner, &params, 300, &snaps);
        let again = robust(&ds, learner, &params, 300, &snaps);
        prop_assert_eq!(&trained.trace, &again.trace);
        prop_assert_eq!(&trained.ensemble, &again.ensemble);

        let mut t = 0.0;
        for rec in &trained.trace.records {
            prop_assert_eq!(rec.t, Some(t));
            let dt = rec.dt.unwrap();
            prop_assert!(dt > 0.0 && rec.step > 0.0);
            t += dt;
            prop_assert!(t <= 1.0);
        }

        // Margin at iteration k is Σ_{i ≤ k} Δm_i e^{-(t_k - t_i)} y h_i(x),
        // with t_i the time after step i.
        let after: Vec<f64> = trained.trace.records.iter().map(|r| r.t.unwrap() + r.dt.unwrap()).collect();
        for snap in &trained.trace.snapshots {
            let k = snap.iteration;
            let t_k = if k == 0 { 0.0 } else { after[k - 1] };
            for (j, (x, &y)) in ds.rows().zip(ds.labels()).enumerate() {
                let m: f64 = (0..k)
                    .map(|i| {
                        let h = f64::from(trained.ensemble.terms[i].hypothesis.eval(x));
                        trained.trace.records[i].step * (after[i] - t_k).exp() * h * f64::from(y)
                    })
                    .sum();
                prop_assert!((m - snap.margins[j]).abs() <= 1e-9, "iteration {} example {}", k, j);
            }
        }
        let final_margins = margins(&trained.ensemble, &ds).raw;
        for (a, b) in final_margins.iter().zip(&trained.margins) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn adaboost_snapshots_match_partial_ensembles(seed in 0u64..1000) {
        let ds = gen_mease_wyner(150, 0.2, seed).unwrap();
        let snaps: Vec<usize> = (0..=60).collect();
        let opts = TrainOptions::new(60).with_snapshots(&snaps);
        let trained = train_adaboost(&ds, &Learner::new(LearnerKind::Stump, &ds), &opts).unwrap();
        for snap in &trained.trace.snapshots {
            let mut partial = trained.ensemble.clone();
            partial.terms.truncate(snap.iteration);
            for (a, b) in margins(&partial, &ds).raw.iter().zip(&snap.margins) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
