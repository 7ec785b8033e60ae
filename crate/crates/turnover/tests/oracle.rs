//! Behavioral checks of the leave-one-out oracle and the turn-over estimator on
//! constructed datasets where the expected outcome is known by construction.

use turnover::data::{Dataset, Example, Split};
use turnover::influence::{influence_score, loo_influence, loo_memorization};
use turnover::nn::{ModelConfig, Network, Precision};
use turnover::rng::SplitMix64;
use turnover::train::{train_plain, TrainOptions, TurnoverOptions};
use turnover::Result;

fn cluster(
    examples: &mut Vec<Example>,
    rng: &mut SplitMix64,
    center: (f64, f64),
    label: usize,
    n: usize,
    sigma: f64,
) {
    for _ in 0..n {
        let id = examples.len() as u64;
        examples.push(Example {
            id,
            pixels: vec![
                (center.0 + rng.next_gaussian() * sigma) as f32,
                (center.1 + rng.next_gaussian() * sigma) as f32,
            ],
            observed_label: label,
            original_label: label,
            corrupted: false,
        });
    }
}

fn blob_dataset(builder: impl FnOnce(&mut Vec<Example>, &mut SplitMix64), classes: usize) -> Dataset {
    let mut rng = SplitMix64::new(4242);
    let mut examples = Vec::new();
    builder(&mut examples, &mut rng);
    Dataset {
        input_shape: vec![2],
        classes,
        split: Split::Train,
        examples,
        provenance: vec![],
    }
}

fn train_fn(hidden: usize, classes: usize) -> impl Fn(&Dataset, u64) -> Result<Network<f64>> {
    move |ds: &Dataset, seed: u64| {
        let cfg = ModelConfig::mlp(2, hidden, classes, seed, Precision::F64);
        let opts = TrainOptions {
            epochs: 60,
            batch_size: 16,
            shuffle_seed: turnover::rng::derive_seed(seed, 1),
            schedule: turnover::nn::LRSchedule::constant(0.4),
            momentum: 0.0,
            turnover: None,
            stats_stride: 0,
        };
        train_plain::<f64>(&cfg, ds, &opts)
    }
}

#[test]
fn removing_one_of_an_exact_duplicate_pair_changes_little() {
    let mut ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.2, 0.2), 0, 15, 0.03);
            cluster(ex, rng, (0.8, 0.8), 1, 15, 0.03);
        },
        2,
    );
    // Exact duplicate of example 0.
    let mut twin = ds.examples[0].clone();
    twin.id = ds.examples.len() as u64;
    ds.examples.push(twin);

    let f = train_fn(16, 2);
    let rec = loo_memorization(&f, &ds, 0, 3, 99).unwrap();
    assert!(
        rec.mean_score.abs() < 0.1,
        "duplicate LOO score should be tiny, got {}",
        rec.mean_score
    );
}

#[test]
fn singleton_cluster_with_unique_label_scores_high() {
    let ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.2, 0.2), 0, 15, 0.03);
            cluster(ex, rng, (0.8, 0.2), 1, 15, 0.03);
            // The only example labeled 2, in its own region.
            cluster(ex, rng, (0.5, 0.9), 2, 1, 0.0);
        },
        3,
    );
    let singleton_index = 30;
    assert_eq!(ds.examples[singleton_index].observed_label, 2);
    let f = train_fn(16, 3);
    let rec = loo_memorization(&f, &ds, singleton_index, 3, 7).unwrap();
    assert!(
        rec.mean_score > 1.0,
        "singleton LOO score should exceed 1 nat, got {}",
        rec.mean_score
    );
}

#[test]
fn loo_influence_diagonal_equals_memorization() {
    let ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.2, 0.2), 0, 8, 0.03);
            cluster(ex, rng, (0.8, 0.8), 1, 8, 0.03);
        },
        2,
    );
    let f = train_fn(8, 2);
    let mem = loo_memorization(&f, &ds, 3, 2, 11).unwrap();
    let inf = loo_influence(&f, &ds, 3, (&ds, 3), 2, 11).unwrap();
    assert_eq!(mem.mean_score, inf);
}

#[test]
fn loo_influence_of_unrelated_example_is_small() {
    // Well-separated clusters: removing a class-0 point barely moves the loss of
    // a class-1 target.
    let ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.1, 0.1), 0, 12, 0.02);
            cluster(ex, rng, (0.9, 0.9), 1, 12, 0.02);
        },
        2,
    );
    let f = train_fn(16, 2);
    let target_index = 18; // class 1
    assert_eq!(ds.examples[target_index].observed_label, 1);
    let score = loo_influence(&f, &ds, 0, (&ds, target_index), 3, 21).unwrap();
    assert!(score.abs() < 0.1, "unrelated influence {score}");
}

#[test]
fn loo_influence_of_only_neighbor_is_positive() {
    // Two examples share an isolated region and a label; everything else is far
    // away with other labels. Removing the target's only neighbor hurts it.
    let ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.1, 0.1), 0, 10, 0.02);
            cluster(ex, rng, (0.9, 0.1), 1, 10, 0.02);
            cluster(ex, rng, (0.5, 0.95), 2, 2, 0.005);
        },
        3,
    );
    let f = train_fn(16, 3);
    let neighbor = 20;
    let target = 21;
    assert_eq!(ds.examples[neighbor].observed_label, 2);
    assert_eq!(ds.examples[target].observed_label, 2);
    let score = loo_influence(&f, &ds, neighbor, (&ds, target), 3, 31).unwrap();
    assert!(score > 0.0, "only-neighbor influence {score}");
}

#[test]
fn turnover_influence_on_exact_duplicate_is_positive() {
    // An exact-duplicate pair is the only support of its label in an isolated
    // region, so predicting it requires the pair's own updates: the source's
    // unmuted sub-network fits the twin better than its muted one.
    let mut ds = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.2, 0.2), 0, 12, 0.03);
            cluster(ex, rng, (0.8, 0.2), 1, 12, 0.03);
            cluster(ex, rng, (0.5, 0.9), 2, 1, 0.0);
        },
        3,
    );
    let source_index = 24;
    assert_eq!(ds.examples[source_index].observed_label, 2);
    let mut twin = ds.examples[source_index].clone();
    twin.id = ds.examples.len() as u64;
    let twin_index = ds.examples.len();
    ds.examples.push(twin);

    let cfg = ModelConfig::mlp(2, 64, 3, 3, Precision::F64);
    let opts = TrainOptions {
        epochs: 80,
        batch_size: 8,
        shuffle_seed: 5,
        schedule: turnover::nn::LRSchedule::constant(0.4),
        momentum: 0.0,
        turnover: Some(TurnoverOptions { mask_seed: 17 }),
        stats_stride: 0,
    };
    let net = train_plain::<f64>(&cfg, &ds, &opts).unwrap();
    let rec = influence_score(&net, 17, (&ds, source_index), (&ds, twin_index), 2.0).unwrap();
    assert!(rec.score > 0.0, "duplicate influence {}", rec.score);
}

#[test]
fn flipping_a_label_raises_its_memorization_score() {
    // Monotone corruption response: same pipeline, same seeds, one example's
    // observed label flipped to a wrong class; its mean turn-over score over
    // three training seeds must increase.
    let base = blob_dataset(
        |ex, rng| {
            cluster(ex, rng, (0.2, 0.2), 0, 15, 0.03);
            cluster(ex, rng, (0.8, 0.2), 1, 15, 0.03);
            cluster(ex, rng, (0.5, 0.9), 2, 15, 0.03);
        },
        3,
    );
    let target = 5usize;
    let mut flipped = base.clone();
    {
        let e = &mut flipped.examples[target];
        e.observed_label = (e.original_label + 1) % 3;
        e.corrupted = true;
    }

    let mean_score = |ds: &Dataset| -> f64 {
        let mut total = 0.0;
        for seed in 1..=3u64 {
            let cfg = ModelConfig::mlp(2, 64, 3, seed, Precision::F64);
            let opts = TrainOptions {
                epochs: 60,
                batch_size: 8,
                shuffle_seed: seed + 10,
                schedule: turnover::nn::LRSchedule::constant(0.3),
                momentum: 0.0,
                turnover: Some(TurnoverOptions { mask_seed: seed + 30 }),
                stats_stride: 0,
            };
            let net = train_plain::<f64>(&cfg, ds, &opts).unwrap();
            total += turnover::influence::memorization_score(&net, seed + 30, ds, target, 2.0)
                .unwrap()
                .score;
        }
        total / 3.0
    };
    let clean_mean = mean_score(&base);
    let flipped_mean = mean_score(&flipped);
    assert!(
        flipped_mean > clean_mean,
        "flipped {flipped_mean} should exceed clean {clean_mean}"
    );
}
