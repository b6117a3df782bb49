//! Softmax classifier on concatenated view features, trained with plain
//! cross-entropy. Used as the robustness reference for noise sweeps.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{epoch_batches, params_and_grads, TrainConfig};
use crate::data::{inject_noise, MultiViewDataset, NoiseSpec};
use crate::error::{Result, TmcError};
use crate::network::{Adam, EvidentialNet, OutputActivation};
use crate::seeding::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatSoftmax {
    net: EvidentialNet,
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

impl ConcatSoftmax {
    pub fn new(net: EvidentialNet) -> Result<Self> {
        if net.head() != OutputActivation::Identity {
            return Err(TmcError::InvalidConfig(
                "softmax baseline needs an identity output layer".into(),
            ));
        }
        Ok(ConcatSoftmax { net })
    }

    pub fn net(&self) -> &EvidentialNet {
        &self.net
    }

    /// Class probabilities for rows of concatenated features.
    pub fn predict_proba(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cache = self.net.forward_batch(features)?;
        Ok(softmax_rows(cache.output()))
    }

    /// Accuracy on `ds`, after optional noise injection.
    pub fn accuracy(&self, ds: &MultiViewDataset, noise: Option<&NoiseSpec>) -> Result<f64> {
        let data = match noise {
            Some(spec) => inject_noise(ds, spec)?.0,
            None => ds.clone(),
        };
        let probs = self.predict_proba(data.concatenated().view())?;
        super::metrics::accuracy(
            probs
                .outer_iter()
                .map(|row| super::argmax(&row.to_vec()))
                .zip(data.labels().iter().copied()),
        )
    }

    /// Mean cross-entropy over rows and its parameter gradient.
    fn loss_and_gradients(
        &self,
        features: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<(f64, crate::network::NetGradients)> {
        let cache = self.net.forward_batch(features)?;
        let probs = softmax_rows(cache.output());
        let mut grad = probs.clone();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            loss -= probs[[i, l]].max(f64::MIN_POSITIVE).ln();
            grad[[i, l]] -= 1.0;
        }
        let n = labels.len() as f64;
        grad /= n;
        Ok((loss / n, self.net.backward(&cache, grad.view())?))
    }
}

/// Trains the baseline with the same architecture, optimizer, epochs and
/// batching as the evidential model.
pub fn train_baseline(ds: &MultiViewDataset, config: &TrainConfig) -> Result<(ConcatSoftmax, Vec<f64>)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(TmcError::Empty("training set"));
    }
    let features = ds.concatenated();
    let mut init_rng = rng_for(config.seed, Stream::Init);
    let net = EvidentialNet::new(
        features.ncols(),
        &config.hidden_dims,
        ds.class_count(),
        OutputActivation::Identity,
        &mut init_rng,
    )?;
    let mut model = ConcatSoftmax { net };
    let mut optimizer = Adam::new(config.learning_rate, config.weight_decay);
    let mut shuffle_rng = rng_for(config.seed, Stream::Shuffle);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(ds.len(), config.batch_size, &mut shuffle_rng) {
            let x = features.select(Axis(0), &batch);
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let (loss, grads) = model.loss_and_gradients(x.view(), &labels)?;
            if !loss.is_finite() {
                return Err(TmcError::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            let grads = [grads];
            let (mut params, grad_slices) = params_and_grads(std::iter::once(&mut model.net), &grads);
            optimizer.step(&mut params, &grad_slices)?;
        }
        trace.push(epoch_loss / ds.len() as f64);
    }
    Ok((model, trace))
}
