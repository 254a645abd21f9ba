use arob_core::data::{split_subjectwise, AxisSemantics, ClassLabel, SubjectRecord, VolumeSample};
use arob_core::nn::{BlockSpec, NetworkSpec};
use arob_core::phantom::subject_id;
use arob_core::train::{train_once, train_repeated, TrainConfig};
use arob_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Patients have a bright cube in one corner; controls do not.
fn toy_cohort(per_class: usize) -> Vec<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut out = Vec::new();
    for label in ClassLabel::ALL {
        for i in 0..per_class {
            let id = subject_id(label, i);
            let volume = Tensor::from_fn(&[1, 8, 8, 8], |k| {
                let (d, h, w) = (k / 64, (k / 8) % 8, k % 8);
                let bright = label == ClassLabel::Patient && d < 4 && h < 4 && w < 4;
                (if bright { 0.8 } else { 0.2 }) + rng.gen_range(-0.05..0.05)
            });
            let sample = VolumeSample {
                volume,
                subject_id: id.clone(),
                timepoint: 0,
                label,
                axes: AxisSemantics::default(),
            };
            out.push(SubjectRecord {
                subject_id: id,
                label,
                timepoints: vec![sample],
            });
        }
    }
    out
}

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [8, 8, 8],
        blocks: vec![
            BlockSpec {
                filters: 4,
                pool: 2,
            },
            BlockSpec {
                filters: 4,
                pool: 2,
            },
        ],
        dense_hidden: 8,
        dropout: 0.2,
        ..Default::default()
    }
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        max_epochs: 25,
        patience: 25,
        repetitions: 2,
        augment: false,
        ..Default::default()
    }
}

#[test]
fn separable_toy_problem_is_learned() {
    let split = split_subjectwise(&toy_cohort(16), 4, 3, 0).unwrap();
    let run = train_once(&split, &toy_spec(), &toy_config(), 1, 0).unwrap();
    assert!(run.failure.is_none());
    assert_eq!(run.balanced_accuracy, Some(1.0));
    assert!(run.epochs.last().unwrap().val_loss < run.epochs[0].val_loss);
    assert!(run.best_epoch >= 1 && run.best_epoch <= run.epochs.len());
    assert_eq!(run.predictions.len(), split.test.len());
}

#[test]
fn training_is_deterministic_per_seed() {
    let split = split_subjectwise(&toy_cohort(8), 2, 2, 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        augment: true,
        ..toy_config()
    };
    let a = train_once(&split, &toy_spec(), &cfg, 5, 0).unwrap();
    let b = train_once(&split, &toy_spec(), &cfg, 5, 0).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.epochs, b.epochs);
    let c = train_once(&split, &toy_spec(), &cfg, 6, 0).unwrap();
    assert_ne!(a.network, c.network);
}

#[test]
fn repetitions_use_consecutive_seeds() {
    let split = split_subjectwise(&toy_cohort(8), 2, 2, 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        base_seed: 40,
        ..toy_config()
    };
    let runs = train_repeated(&split, &toy_spec(), &cfg).unwrap();
    assert_eq!(
        runs.iter().map(|r| (r.run, r.seed)).collect::<Vec<_>>(),
        vec![(0, 40), (1, 41)]
    );
}

#[test]
fn early_stopping_halts_before_max_epochs_when_validation_stalls() {
    let split = split_subjectwise(&toy_cohort(8), 2, 2, 0).unwrap();
    // a huge learning rate makes validation loss stop improving quickly
    let cfg = TrainConfig {
        lr: 0.5,
        patience: 1,
        max_epochs: 30,
        ..toy_config()
    };
    let run = train_once(&split, &toy_spec(), &cfg, 3, 0).unwrap();
    assert!(
        run.failure.is_some() || run.epochs.len() < 30,
        "{} epochs",
        run.epochs.len()
    );
}
