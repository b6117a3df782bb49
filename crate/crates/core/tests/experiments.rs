use std::sync::OnceLock;

use tmc::data::{synthesize, NoiseSpec, SynthConfig};
use tmc::experiments::metrics::accuracy_most_certain;
use tmc::experiments::{
    evaluate, noise_sweep, prepare, train, train_baseline, tune_learning_rate, ConcatSoftmax, PreparedData,
    TrainConfig,
};
use tmc::network::MultiViewModel;

struct Fixture {
    data: PreparedData,
    model: MultiViewModel,
    trace: Vec<f64>,
    baseline: ConcatSoftmax,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = synthesize(&SynthConfig::new(3, 2, 600, 42)).unwrap();
        let data = prepare(&ds, 0.2, 42).unwrap();
        let config = TrainConfig::default();
        let (model, trace) = train(&data.train, &config).unwrap();
        let (baseline, _) = train_baseline(&data.train, &config).unwrap();
        Fixture {
            data,
            model,
            trace,
            baseline,
        }
    })
}

#[test]
fn separable_blobs_are_learned() {
    let f = fixture();
    let report = evaluate(&f.model, &f.data.train, None).unwrap();
    assert!(report.aggregates.accuracy >= 0.98, "{}", report.aggregates.accuracy);
    assert!(f.trace.last().unwrap() < &f.trace[0]);
}

#[test]
fn baseline_learns_separable_blobs() {
    let f = fixture();
    assert!(f.baseline.accuracy(&f.data.test, None).unwrap() >= 0.95);
}

#[test]
fn evaluation_is_pure() {
    let f = fixture();
    let spec = NoiseSpec::new(4.0, 3);
    let a = evaluate(&f.model, &f.data.test, Some(&spec)).unwrap();
    let b = evaluate(&f.model, &f.data.test, Some(&spec)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), f.data.test.len());
    a.verify().unwrap();
}

#[test]
fn per_view_uncertainty_is_a_valid_mass() {
    let f = fixture();
    let report = evaluate(&f.model, &f.data.test, Some(&NoiseSpec::new(10.0, 1))).unwrap();
    for r in &report.records {
        assert!(r.view_uncertainties.iter().all(|&u| u > 0.0 && u <= 1.0));
        assert!(r.uncertainty > 0.0 && r.uncertainty <= 1.0);
        assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn most_certain_half_is_at_least_as_accurate() {
    let f = fixture();
    let report = evaluate(&f.model, &f.data.test, Some(&NoiseSpec::new(2.0, 5))).unwrap();
    let top = accuracy_most_certain(&report.uncertainty_correctness(), 0.5).unwrap();
    assert!(top >= report.aggregates.accuracy);
    let inf = report.threshold_curve_at(&[f64::INFINITY]).unwrap();
    assert_eq!(inf[0].accuracy, Some(report.aggregates.accuracy));
}

#[test]
fn sweep_accuracy_decreases_with_noise() {
    let f = fixture();
    let mut template = NoiseSpec::new(0.0, 42);
    template.affected_fraction = 1.0;
    let rows = noise_sweep(&f.model, Some(&f.baseline), &f.data.test, &[0.0, 1.0, 2.0, 5.0, 10.0], &template).unwrap();
    let clean = evaluate(&f.model, &f.data.test, None).unwrap();
    assert_eq!(rows[0].tmc_accuracy, clean.aggregates.accuracy);
    assert_eq!(rows[0].baseline_accuracy, Some(f.baseline.accuracy(&f.data.test, None).unwrap()));
    for w in rows.windows(2) {
        assert!(w[1].tmc_accuracy <= w[0].tmc_accuracy + 0.02);
        assert!(w[1].baseline_accuracy.unwrap() <= w[0].baseline_accuracy.unwrap() + 0.02);
    }
    let single = noise_sweep(&f.model, None, &f.data.test, &[3.0], &template).unwrap();
    assert_eq!(single.len(), 1);
    assert!(noise_sweep(&f.model, None, &f.data.test, &[], &template).is_err());
}

#[test]
fn memorized_toy_set_is_classified_perfectly() {
    let ds = synthesize(&SynthConfig::new(2, 2, 20, 8)).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        hidden_dims: vec![16],
        ..TrainConfig::default()
    };
    let (model, _) = train(&ds, &cfg).unwrap();
    assert_eq!(evaluate(&model, &ds, None).unwrap().aggregates.accuracy, 1.0);
}

#[test]
fn minibatch_training_also_converges() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (model, trace) = train(&f.data.train, &cfg).unwrap();
    assert_eq!(trace.len(), 60);
    assert!(evaluate(&model, &f.data.test, None).unwrap().aggregates.accuracy >= 0.95);
}

#[test]
fn tuning_picks_a_candidate() {
    let ds = synthesize(&SynthConfig::new(3, 2, 90, 4)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        hidden_dims: vec![8],
        ..TrainConfig::default()
    };
    let result = tune_learning_rate(&ds, &cfg, &[3e-3, 1e-4], 3).unwrap();
    assert_eq!(result.mean_accuracy.len(), 2);
    assert!(result.candidates.contains(&result.best));
    let best_idx = result.candidates.iter().position(|&c| c == result.best).unwrap();
    assert!(result.mean_accuracy.iter().all(|&a| a <= result.mean_accuracy[best_idx]));
    assert!(tune_learning_rate(&ds, &cfg, &[], 3).is_err());
}
