//! Hot paths of training and adaptation. Run once with default features and
//! once with `--no-default-features` to compare the rayon and sequential
//! builds; the group name records which one ran.

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use malgo::adapt::{adapt_split, AdaptConfig, AdaptOptimizer};
use malgo::densenet::{stack_tuples, GradMode, NetworkSpec, Theta};
use malgo::meta::{train, MetaModel, TrainSchedule};
use malgo::systems::{build_split, DatasetSplit, DynamicsSplitConfig, Family};

const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

fn closed_split() -> DatasetSplit {
    build_split(&DynamicsSplitConfig::defaults(Family::ClosedTls), 1).unwrap()
}

fn untrained(split: &DatasetSplit) -> MetaModel {
    let spec = NetworkSpec::dynamics(split.x_len(), 1);
    let etas: BTreeMap<usize, Vec<f64>> = split.train_system_ids().into_iter().map(|id| (id, vec![0.0])).collect();
    MetaModel::new(Theta::init(spec, 2).unwrap(), 1, etas).unwrap()
}

fn bench(c: &mut Criterion) {
    let split = closed_split();
    let model = untrained(&split);
    let mut group = c.benchmark_group(format!("closed-tls/{MODE}"));
    group.sample_size(10);

    let rows: Vec<_> = split.train.iter().take(500).collect();
    let (inputs, targets) = stack_tuples(&rows, &[0.3]);
    group.bench_function("batch_gradient_500_full", |b| {
        b.iter(|| model.theta.batch_gradient(black_box(inputs.view()), targets.view(), GradMode::Full).unwrap())
    });
    group.bench_function("batch_gradient_500_input_only", |b| {
        b.iter(|| model.theta.batch_gradient(black_box(inputs.view()), targets.view(), GradMode::InputOnly).unwrap())
    });

    let lbfgs = AdaptConfig::new(AdaptOptimizer::lbfgs(5, 10), 3);
    group.bench_function("adapt_split_lbfgs", |b| b.iter(|| adapt_split(&model, black_box(&split), &lbfgs).unwrap()));

    let schedule = TrainSchedule { total_epochs: 2, noise_until: 1, freeze_from: 3, ..TrainSchedule::for_family(Family::ClosedTls) };
    let spec = NetworkSpec::dynamics(split.x_len(), 1);
    group.bench_function("train_two_epochs", |b| {
        b.iter_batched(|| schedule.clone(), |s| train(&split, spec, &s, 4).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
