//! Training, evaluation and the uncertainty analyses built on top of them.

pub mod baseline;
pub mod checkpoint;
pub mod metrics;
pub mod report;

use log::debug;
use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{inject_noise, split, MultiViewDataset, NoiseSpec, Split, Standardizer};
use crate::error::{Result, TmcError};
use crate::losses::AnnealSchedule;
use crate::network::{Adam, MultiViewModel, NetGradients, OutputActivation};
use crate::opinion::expected_probabilities;
use crate::seeding::{rng_for, Stream};

pub use baseline::{train_baseline, ConcatSoftmax};
pub use checkpoint::{Checkpoint, CheckpointConfig, ModelKind};
pub use metrics::{accuracy, auroc_multiclass, threshold_curve, uncertainty_density};
pub use report::{ExperimentReport, SampleRecord};

/// Learning rates searched by [`tune_learning_rate`].
pub const LEARNING_RATE_GRID: [f64; 4] = [3e-3, 1e-3, 3e-4, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub annealing_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub evidence_activation: OutputActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 3e-3,
            batch_size: 0,
            annealing_epochs: 50,
            weight_decay: 1e-4,
            seed: 42,
            hidden_dims: vec![64],
            evidence_activation: OutputActivation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TmcError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.annealing_epochs == 0 {
            return Err(TmcError::InvalidConfig("annealing_epochs must be >= 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TmcError::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(TmcError::InvalidConfig("hidden layer of width 0".into()));
        }
        Ok(())
    }
}

/// Mini-batch index lists for one epoch; a single ordered batch when
/// `batch_size` is 0 or covers the whole set.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if batch_size == 0 || batch_size >= n {
        return vec![order];
    }
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn params_and_grads<'a>(
    nets: impl Iterator<Item = &'a mut crate::network::EvidentialNet>,
    grads: &'a [NetGradients],
) -> (Vec<&'a mut [f64]>, Vec<&'a [f64]>) {
    let params = nets.flat_map(|n| n.parameter_slices_mut()).collect();
    let grads = grads.iter().flat_map(NetGradients::slices).collect();
    (params, grads)
}

/// Trains one evidential network per view on the whole of `ds`. Returns the
/// model and the mean per-sample loss of every epoch.
pub fn train(ds: &MultiViewDataset, config: &TrainConfig) -> Result<(MultiViewModel, Vec<f64>)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(TmcError::Empty("training set"));
    }
    let mut init_rng = rng_for(config.seed, Stream::Init);
    let mut model = MultiViewModel::initialize(
        &ds.view_dims(),
        &config.hidden_dims,
        ds.class_count(),
        config.evidence_activation,
        &mut init_rng,
    )?;
    let schedule = AnnealSchedule::new(config.annealing_epochs)?;
    let mut optimizer = Adam::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = rng_for(config.seed, Stream::Shuffle);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lambda_t = schedule.lambda(epoch);
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(ds.len(), config.batch_size, &mut shuffle_rng) {
            let views: Vec<_> = ds.views().iter().map(|v| v.select(Axis(0), &batch)).collect();
            let inputs: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
            // Non-finite network outputs surface as invalid evidence.
            let (loss, mut grads) = model
                .loss_and_gradients(&inputs, &labels, lambda_t)
                .map_err(|e| match e {
                    TmcError::InvalidEvidence(_) => TmcError::Divergence { epoch, loss: f64::NAN },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(TmcError::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            for g in &mut grads {
                g.scale(1.0 / batch.len() as f64);
            }
            let (mut params, grad_slices) = params_and_grads(model.views_mut().iter_mut(), &grads);
            optimizer.step(&mut params, &grad_slices)?;
        }
        let mean = epoch_loss / ds.len() as f64;
        debug!("epoch {epoch}: lambda {lambda_t:.3} loss {mean:.6}");
        trace.push(mean);
    }
    Ok((model, trace))
}

/// Runs the model on every sample of `ds` (optionally after corrupting it)
/// and collects per-sample records plus aggregates.
pub fn evaluate(
    model: &MultiViewModel,
    ds: &MultiViewDataset,
    noise: Option<&NoiseSpec>,
) -> Result<ExperimentReport> {
    if ds.view_count() != model.view_count() {
        return Err(TmcError::DimensionMismatch {
            context: "views in dataset vs model",
            expected: model.view_count(),
            found: ds.view_count(),
        });
    }
    if ds.class_count() != model.class_count() {
        return Err(TmcError::ClassMismatch {
            expected: model.class_count(),
            found: ds.class_count(),
        });
    }
    let (data, ood) = match noise {
        Some(spec) => inject_noise(ds, spec)?,
        None => (ds.clone(), vec![false; ds.len()]),
    };
    let inferences = model.infer(&data.view_refs())?;
    let records = inferences
        .into_iter()
        .zip(data.labels())
        .zip(ood)
        .enumerate()
        .map(|(index, ((inf, &truth), ood))| {
            let probabilities = expected_probabilities(&inf.joint_alpha);
            SampleRecord {
                index,
                predicted: argmax(&probabilities),
                truth,
                uncertainty: inf.joint_opinion.uncertainty(),
                view_uncertainties: inf.view_opinions.iter().map(|o| o.uncertainty()).collect(),
                ood,
                probabilities,
            }
        })
        .collect();
    ExperimentReport::from_records(records, ds.class_count(), serde_json::Value::Null)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A dataset split and standardized with statistics from its training part.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: Split,
    pub standardizer: Standardizer,
    pub train: MultiViewDataset,
    pub test: MultiViewDataset,
}

pub fn prepare(ds: &MultiViewDataset, test_fraction: f64, seed: u64) -> Result<PreparedData> {
    let split = split(ds, test_fraction, seed)?;
    let standardizer = Standardizer::fit(ds, &split.train)?;
    let scaled = standardizer.transform(ds)?;
    Ok(PreparedData {
        train: scaled.subset(&split.train)?,
        test: scaled.subset(&split.test)?,
        split,
        standardizer,
    })
}

/// One row of a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub tmc_accuracy: f64,
    pub baseline_accuracy: Option<f64>,
}

/// Evaluates trained models at each noise level. `template` fixes the noisy
/// views, the affected fraction and the seed; only `sigma` varies.
pub fn noise_sweep(
    model: &MultiViewModel,
    baseline: Option<&ConcatSoftmax>,
    test: &MultiViewDataset,
    sigmas: &[f64],
    template: &NoiseSpec,
) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() {
        return Err(TmcError::Empty("noise sweep needs at least one sigma"));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let spec = NoiseSpec {
                sigma,
                ..template.clone()
            };
            let tmc_accuracy = evaluate(model, test, Some(&spec))?.aggregates.accuracy;
            let baseline_accuracy = baseline
                .map(|b| b.accuracy(test, Some(&spec)))
                .transpose()?;
            Ok(SweepRow {
                sigma,
                tmc_accuracy,
                baseline_accuracy,
            })
        })
        .collect()
}

/// Outcome of k-fold learning-rate selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub candidates: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub best: f64,
}

/// Stratified k-fold cross-validation over `candidates` on `ds`, which is
/// expected to be the (already standardized) training portion.
pub fn tune_learning_rate(
    ds: &MultiViewDataset,
    config: &TrainConfig,
    candidates: &[f64],
    folds: usize,
) -> Result<TuneResult> {
    if candidates.is_empty() || folds < 2 {
        return Err(TmcError::InvalidConfig(
            "tuning needs at least one candidate and two folds".into(),
        ));
    }
    let mut rng = rng_for(config.seed, Stream::Folds);
    let mut fold_of = vec![0usize; ds.len()];
    for class in 0..ds.class_count() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    let mut mean_accuracy = Vec::with_capacity(candidates.len());
    for &lr in candidates {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..config.clone()
        };
        let mut total = 0.0;
        for fold in 0..folds {
            let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] != fold).collect();
            let val_idx: Vec<usize> = (0..ds.len()).filter(|&i| fold_of[i] == fold).collect();
            let (model, _) = train(&ds.subset(&train_idx)?, &cfg)?;
            total += evaluate(&model, &ds.subset(&val_idx)?, None)?.aggregates.accuracy;
        }
        mean_accuracy.push(total / folds as f64);
    }
    let best_idx = (0..candidates.len()).fold(0, |best, i| {
        if mean_accuracy[i] > mean_accuracy[best] {
            i
        } else {
            best
        }
    });
    Ok(TuneResult {
        candidates: candidates.to_vec(),
        best: candidates[best_idx],
        mean_accuracy,
    })
}
