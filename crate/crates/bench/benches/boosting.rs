use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use robustboost::base_learners::{fit_stump, fit_tree2, FeatureOrder};
use robustboost::{
    erf_half, robustboost_step, train_adaboost, Learner, LearnerKind, StepSettings, TrainOptions, WeightedData,
};
use robustboost_bench::{long_servedio_fixture, long_servedio_params, mease_wyner_fixture};

fn bench_erf(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1000).map(|i| -5.0 + i as f64 * 0.01).collect();
    c.bench_function("erf_half_1k", |b| b.iter(|| xs.iter().map(|&x| erf_half(black_box(x))).sum::<f64>()));
}

fn bench_learners(c: &mut Criterion) {
    let ds = mease_wyner_fixture();
    let order = FeatureOrder::new(&ds);
    let w = vec![1.0 / ds.len() as f64; ds.len()];
    let wd = WeightedData::new(&ds, &w).unwrap();
    c.bench_function("stump_mease_wyner_2000", |b| b.iter(|| fit_stump(black_box(&wd), &order).unwrap()));
    c.bench_function("tree2_mease_wyner_2000", |b| b.iter(|| fit_tree2(black_box(&wd), &order).unwrap()));
}

fn bench_robust_step(c: &mut Criterion) {
    let ds = long_servedio_fixture();
    let params = long_servedio_params();
    // Margins after a short AdaBoost run give a realistic, non-trivial state.
    let learner = Learner::new(LearnerKind::Coordinate, &ds);
    let warm = train_adaboost(&ds, &learner, &TrainOptions::new(5)).unwrap();
    let scale = 0.1;
    let margins: Vec<f64> = warm.margins.iter().map(|m| m * scale).collect();
    let agreement: Vec<f64> =
        ds.rows().zip(ds.labels()).map(|(x, &y)| f64::from(y) * x.iter().sum::<f64>().signum()).collect();
    let settings = StepSettings::default();
    c.bench_function("robustboost_step_800", |b| {
        b.iter_batched(
            || margins.clone(),
            |m| robustboost_step(&m, &agreement, 0.1, &params, &settings, None),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_erf, bench_learners, bench_robust_step);
criterion_main!(benches);
