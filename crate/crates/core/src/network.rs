//! Per-view evidential networks, differentiation through the fusion rule,
//! and the Adam optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TmcError};
use crate::losses::{grad_sample_loss, sample_loss, LabelOneHot};
use crate::opinion::{
    combine_pair, dirichlet_from_opinion, opinion_from_dirichlet, DirichletParams, Opinion,
};

/// Activation applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Rectified evidence; can be exactly zero for every class.
    #[default]
    Relu,
    /// Smooth non-negative evidence.
    Softplus,
    /// Raw logits, used by the softmax baseline.
    Identity,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Relu => relu(z),
            OutputActivation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            OutputActivation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::Relu => relu_grad(z),
            OutputActivation::Softplus => 1.0 / (1.0 + (-z).exp()),
            OutputActivation::Identity => 1.0,
        }
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

// Subgradient at 0 is 0.
fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One fully connected layer; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<DenseLayer> for LayerRepr {
    fn from(layer: DenseLayer) -> Self {
        LayerRepr {
            weights: layer.weights.outer_iter().map(|r| r.to_vec()).collect(),
            bias: layer.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerRepr> for DenseLayer {
    type Error = String;

    fn try_from(repr: LayerRepr) -> std::result::Result<Self, String> {
        let rows = repr.weights.len();
        let cols = repr.weights.first().map_or(0, Vec::len);
        if repr.weights.iter().any(|r| r.len() != cols) {
            return Err("ragged weight matrix".into());
        }
        if repr.bias.len() != rows {
            return Err(format!("bias has {} entries for {rows} rows", repr.bias.len()));
        }
        let flat: Vec<f64> = repr.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((rows, cols), flat).map_err(|e| e.to_string())?;
        Ok(DenseLayer {
            weights,
            bias: Array1::from(repr.bias),
        })
    }
}

impl DenseLayer {
    fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limits");
        DenseLayer {
            weights: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            bias: Array1::zeros(output),
        }
    }

    fn zeros(input: usize, output: usize) -> Self {
        DenseLayer {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A multilayer perceptron with rectified hidden units and a configurable
/// output activation. With a non-negative head its outputs are evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidentialNet {
    layers: Vec<DenseLayer>,
    head: OutputActivation,
}

/// Activations recorded by [`EvidentialNet::forward_batch`] for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    /// Network output, one row per sample.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Gradients with the same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub layers: Vec<DenseLayer>,
}

impl NetGradients {
    pub fn zeros_like(net: &EvidentialNet) -> Self {
        NetGradients {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// All entries in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

fn layer_slices(layers: &[DenseLayer]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| {
            [
                l.weights.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

impl EvidentialNet {
    /// Glorot-uniform weights and zero biases.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        class_count: usize,
        head: OutputActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(input_dim, hidden_dims, class_count, head, |i, o| {
            DenseLayer::glorot(i, o, rng)
        })
    }

    /// All weights and biases zero; the output is identically zero for a
    /// rectified head.
    pub fn zeros(
        input_dim: usize,
        hidden_dims: &[usize],
        class_count: usize,
        head: OutputActivation,
    ) -> Result<Self> {
        Self::build(input_dim, hidden_dims, class_count, head, DenseLayer::zeros)
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(layers: Vec<DenseLayer>, head: OutputActivation) -> Result<Self> {
        let net = EvidentialNet { layers, head };
        net.validate()?;
        Ok(net)
    }

    fn build(
        input_dim: usize,
        hidden_dims: &[usize],
        class_count: usize,
        head: OutputActivation,
        mut make: impl FnMut(usize, usize) -> DenseLayer,
    ) -> Result<Self> {
        if input_dim == 0 || class_count < 2 || hidden_dims.contains(&0) {
            return Err(TmcError::InvalidConfig(format!(
                "invalid network shape: input {input_dim}, hidden {hidden_dims:?}, classes {class_count}"
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(class_count);
        let layers = dims.windows(2).map(|w| make(w[0], w[1])).collect();
        Ok(EvidentialNet { layers, head })
    }

    /// Checks that consecutive layers chain and that all values are finite.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or(TmcError::InvalidConfig("network has no layers".into()))?;
        let mut width = first.input_dim();
        for layer in &self.layers {
            if layer.input_dim() != width || layer.bias.len() != layer.output_dim() {
                return Err(TmcError::DimensionMismatch {
                    context: "layer chain",
                    expected: width,
                    found: layer.input_dim(),
                });
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(TmcError::InvalidConfig("non-finite network parameter".into()));
            }
            width = layer.output_dim();
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().expect("at least one layer").output_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(DenseLayer::output_dim)
            .collect()
    }

    pub fn head(&self) -> OutputActivation {
        self.head
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        layer_slices(&self.layers)
    }

    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Output for a single feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.forward_batch(batch)?.output.row(0).to_vec())
    }

    /// Batched forward pass; `x` holds one sample per row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(TmcError::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weights.t()) + &layer.bias;
            let a = if i == last {
                z.mapv(|v| self.head.apply(v))
            } else {
                z.mapv(relu)
            };
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            output: current,
        })
    }

    /// Reverse-mode gradients of `Σ grad_output ⊙ output` with respect to
    /// every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<NetGradients> {
        if grad_output.dim() != cache.output.dim() {
            return Err(TmcError::DimensionMismatch {
                context: "upstream gradient",
                expected: cache.output.len(),
                found: grad_output.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let mut gz = upstream;
            if i == last {
                gz.zip_mut_with(z, |g, &zv| *g *= self.head.derivative(zv));
            } else {
                gz.zip_mut_with(z, |g, &zv| *g *= relu_grad(zv));
            }
            let gw = gz.t().dot(&cache.inputs[i]);
            let gb = gz.sum_axis(Axis(0));
            upstream = gz.dot(&layer.weights);
            grads.push(DenseLayer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        Ok(NetGradients { layers: grads })
    }
}

/// Everything the backward pass through the fusion rule needs.
#[derive(Debug, Clone)]
pub struct FusionTape {
    class_count: usize,
    view_opinions: Vec<Opinion>,
    view_strengths: Vec<f64>,
    /// `partials[i]` is the fold of views `0..=i`.
    partials: Vec<Opinion>,
    /// `conflicts[i]` is the conflict of the step that produced `partials[i + 1]`.
    conflicts: Vec<f64>,
    joint_alpha: DirichletParams,
}

impl FusionTape {
    pub fn view_count(&self) -> usize {
        self.view_opinions.len()
    }

    pub fn view_opinions(&self) -> &[Opinion] {
        &self.view_opinions
    }

    pub fn joint_opinion(&self) -> &Opinion {
        self.partials.last().expect("non-empty tape")
    }

    pub fn joint_alpha(&self) -> &DirichletParams {
        &self.joint_alpha
    }

    pub fn conflicts(&self) -> &[f64] {
        &self.conflicts
    }

    /// Recomputes the joint concentration from the stored view opinions.
    pub fn replay(&self) -> Result<DirichletParams> {
        if self.view_opinions.len() == 1 {
            return Ok(self.joint_alpha.clone());
        }
        let joint = crate::opinion::combine_many(&self.view_opinions)?;
        dirichlet_from_opinion(&joint.opinion)
    }
}

/// Fuses per-view evidence into a joint Dirichlet: evidence → opinions →
/// Dempster fold → joint evidence.
pub fn fuse_forward(view_evidences: &[Vec<f64>]) -> Result<(DirichletParams, FusionTape)> {
    let first = view_evidences
        .first()
        .ok_or(TmcError::Empty("fusion needs at least one view"))?;
    let k = first.len();
    let mut view_opinions = Vec::with_capacity(view_evidences.len());
    let mut view_strengths = Vec::with_capacity(view_evidences.len());
    let mut alphas = Vec::with_capacity(view_evidences.len());
    for e in view_evidences {
        if e.len() != k {
            return Err(TmcError::ClassMismatch {
                expected: k,
                found: e.len(),
            });
        }
        let dir = DirichletParams::from_evidence(e)?;
        view_strengths.push(dir.strength());
        view_opinions.push(opinion_from_dirichlet(&dir));
        alphas.push(dir);
    }

    let mut partials = vec![view_opinions[0].clone()];
    let mut conflicts = Vec::with_capacity(view_opinions.len() - 1);
    for op in &view_opinions[1..] {
        let joint = combine_pair(partials.last().expect("seeded"), op)?;
        conflicts.push(joint.conflict);
        partials.push(joint.opinion);
    }

    let joint_alpha = if alphas.len() == 1 {
        alphas.pop().expect("one view")
    } else {
        dirichlet_from_opinion(partials.last().expect("seeded"))?
    };
    let tape = FusionTape {
        class_count: k,
        view_opinions,
        view_strengths,
        partials,
        conflicts,
        joint_alpha: joint_alpha.clone(),
    };
    Ok((joint_alpha, tape))
}

/// Pulls a gradient on the joint `α` back to every view's `α` (equivalently
/// its evidence, since `α = e + 1`).
pub fn fuse_backward(tape: &FusionTape, grad_joint_alpha: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = tape.class_count;
    if grad_joint_alpha.len() != k {
        return Err(TmcError::ClassMismatch {
            expected: k,
            found: grad_joint_alpha.len(),
        });
    }
    let views = tape.view_count();
    if views == 1 {
        return Ok(vec![grad_joint_alpha.to_vec()]);
    }

    // α = b·K/u + 1
    let joint = tape.joint_opinion();
    let u = joint.uncertainty();
    let s = k as f64 / u;
    let mut gb: Vec<f64> = grad_joint_alpha.iter().map(|g| g * s).collect();
    let weighted: f64 = grad_joint_alpha
        .iter()
        .zip(joint.beliefs())
        .map(|(g, b)| g * b)
        .sum();
    let mut gu = -(s / u) * weighted;

    let mut view_grads: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 0.0); views];
    for step in (1..views).rev() {
        let left = &tape.partials[step - 1];
        let right = &tape.view_opinions[step];
        let out = &tape.partials[step];
        let norm = 1.0 - tape.conflicts[step - 1];
        let (gl, gr) = combine_pair_backward(left, right, out, norm, &gb, gu);
        view_grads[step] = gr;
        gb = gl.0;
        gu = gl.1;
    }
    view_grads[0] = (gb, gu);

    Ok(view_grads
        .into_iter()
        .zip(tape.view_opinions.iter().zip(&tape.view_strengths))
        .map(|((gb, gu), (op, &strength))| opinion_backward(op, strength, &gb, gu))
        .collect())
}

/// Backward of `bₖ = (αₖ − 1)/S`, `u = K/S`.
fn opinion_backward(op: &Opinion, strength: f64, gb: &[f64], gu: f64) -> Vec<f64> {
    let shared: f64 =
        gb.iter().zip(op.beliefs()).map(|(g, b)| g * b).sum::<f64>() + gu * op.uncertainty();
    gb.iter().map(|g| (g - shared) / strength).collect()
}

type MassGrad = (Vec<f64>, f64);

/// Backward of one Dempster step given its output `out` and normalizer
/// `1 − C`.
fn combine_pair_backward(
    m1: &Opinion,
    m2: &Opinion,
    out: &Opinion,
    norm: f64,
    gb: &[f64],
    gu: f64,
) -> (MassGrad, MassGrad) {
    let (b1, b2) = (m1.beliefs(), m2.beliefs());
    let (u1, u2) = (m1.uncertainty(), m2.uncertainty());
    let total1: f64 = b1.iter().sum();
    let total2: f64 = b2.iter().sum();
    // ∂L/∂C = (Σ gbₖ bₖ + gu u) / (1 − C)
    let g_conflict = (gb.iter().zip(out.beliefs()).map(|(g, b)| g * b).sum::<f64>()
        + gu * out.uncertainty())
        / norm;

    let gb1 = (0..b1.len())
        .map(|k| gb[k] * (b2[k] + u2) / norm + g_conflict * (total2 - b2[k]))
        .collect();
    let gb2 = (0..b2.len())
        .map(|k| gb[k] * (b1[k] + u1) / norm + g_conflict * (total1 - b1[k]))
        .collect();
    let gu1 = (gb.iter().zip(b2).map(|(g, b)| g * b).sum::<f64>() + gu * u2) / norm;
    let gu2 = (gb.iter().zip(b1).map(|(g, b)| g * b).sum::<f64>() + gu * u1) / norm;
    ((gb1, gu1), (gb2, gu2))
}

/// One evidential network per view, fused with Dempster's rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewModel {
    views: Vec<EvidentialNet>,
}

/// Per-sample outputs of a multi-view forward pass.
#[derive(Debug, Clone)]
pub struct SampleInference {
    pub joint_alpha: DirichletParams,
    pub joint_opinion: Opinion,
    pub view_opinions: Vec<Opinion>,
}

impl MultiViewModel {
    pub fn new(views: Vec<EvidentialNet>) -> Result<Self> {
        let first = views
            .first()
            .ok_or(TmcError::Empty("model needs at least one view"))?;
        let k = first.class_count();
        for net in &views {
            net.validate()?;
            if net.class_count() != k {
                return Err(TmcError::ClassMismatch {
                    expected: k,
                    found: net.class_count(),
                });
            }
        }
        Ok(MultiViewModel { views })
    }

    /// Seeded initialization of one network per view.
    pub fn initialize(
        input_dims: &[usize],
        hidden_dims: &[usize],
        class_count: usize,
        head: OutputActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let views = input_dims
            .iter()
            .map(|&d| EvidentialNet::new(d, hidden_dims, class_count, head, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views)
    }

    pub fn views(&self) -> &[EvidentialNet] {
        &self.views
    }

    pub fn views_mut(&mut self) -> &mut [EvidentialNet] {
        &mut self.views
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn class_count(&self) -> usize {
        self.views[0].class_count()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.views.iter().map(EvidentialNet::input_dim).collect()
    }

    fn check_batch(&self, inputs: &[ArrayView2<f64>]) -> Result<usize> {
        if inputs.len() != self.views.len() {
            return Err(TmcError::DimensionMismatch {
                context: "number of views",
                expected: self.views.len(),
                found: inputs.len(),
            });
        }
        let n = inputs[0].nrows();
        if let Some(bad) = inputs.iter().find(|x| x.nrows() != n) {
            return Err(TmcError::DimensionMismatch {
                context: "rows per view",
                expected: n,
                found: bad.nrows(),
            });
        }
        Ok(n)
    }

    /// Joint and per-view opinions for every row of the batch.
    pub fn infer(&self, inputs: &[ArrayView2<f64>]) -> Result<Vec<SampleInference>> {
        let n = self.check_batch(inputs)?;
        let outputs = self
            .views
            .iter()
            .zip(inputs)
            .map(|(net, x)| net.forward_batch(x.view()).map(|c| c.output))
            .collect::<Result<Vec<_>>>()?;
        (0..n)
            .map(|i| {
                let evidences: Vec<Vec<f64>> =
                    outputs.iter().map(|o| o.row(i).to_vec()).collect();
                let (joint_alpha, tape) = fuse_forward(&evidences)?;
                Ok(SampleInference {
                    joint_opinion: tape.joint_opinion().clone(),
                    view_opinions: tape.view_opinions,
                    joint_alpha,
                })
            })
            .collect()
    }

    /// Summed multi-task loss over the batch and its gradient with respect
    /// to every parameter of every view network (L2 not included).
    pub fn loss_and_gradients(
        &self,
        inputs: &[ArrayView2<f64>],
        labels: &[usize],
        lambda_t: f64,
    ) -> Result<(f64, Vec<NetGradients>)> {
        let n = self.check_batch(inputs)?;
        if labels.len() != n {
            return Err(TmcError::DimensionMismatch {
                context: "labels",
                expected: n,
                found: labels.len(),
            });
        }
        let k = self.class_count();
        let caches = self
            .views
            .iter()
            .zip(inputs)
            .map(|(net, x)| net.forward_batch(x.view()))
            .collect::<Result<Vec<_>>>()?;

        let mut upstream: Vec<Array2<f64>> =
            (0..self.views.len()).map(|_| Array2::zeros((n, k))).collect();
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let y = LabelOneHot::new(label, k)?;
            let evidences: Vec<Vec<f64>> =
                caches.iter().map(|c| c.output.row(i).to_vec()).collect();
            let (joint_alpha, tape) = fuse_forward(&evidences)?;
            total += sample_loss(&joint_alpha, y, lambda_t)?;
            let joint_grad = grad_sample_loss(&joint_alpha, y, lambda_t)?;
            let through_fusion = fuse_backward(&tape, &joint_grad)?;
            for (v, e) in evidences.iter().enumerate() {
                let alpha = DirichletParams::from_vec_unchecked(e.iter().map(|x| x + 1.0).collect());
                total += sample_loss(&alpha, y, lambda_t)?;
                let own = grad_sample_loss(&alpha, y, lambda_t)?;
                let mut row = upstream[v].row_mut(i);
                for c in 0..k {
                    row[c] = own[c] + through_fusion[v][c];
                }
            }
        }
        let grads = self
            .views
            .iter()
            .zip(&caches)
            .zip(&upstream)
            .map(|((net, cache), g)| net.backward(cache, g.view()))
            .collect::<Result<Vec<_>>>()?;
        Ok((total, grads))
    }
}

/// Adam with L2 regularization folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. The parameter groups must keep the same shapes
    /// from call to call.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TmcError::DimensionMismatch {
                context: "optimizer parameter groups",
                expected: params.len(),
                found: grads.len(),
            });
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(TmcError::DimensionMismatch {
                context: "optimizer state",
                expected: self.first_moment.len(),
                found: params.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(TmcError::DimensionMismatch {
                    context: "optimizer parameter shape",
                    expected: m.len(),
                    found: g.len(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (group, p) in params.iter_mut().enumerate() {
            let g = grads[group];
            let m = &mut self.first_moment[group];
            let v = &mut self.second_moment[group];
            for j in 0..p.len() {
                let grad = g[j] + self.weight_decay * p[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_is_vacuous() {
        let net = EvidentialNet::zeros(4, &[6], 3, OutputActivation::Relu).unwrap();
        let e = net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(e, vec![0.0; 3]);
        let (op, _) = crate::opinion::opinion_from_evidence(&e).unwrap();
        assert_eq!(op.uncertainty(), 1.0);
    }

    #[test]
    fn biased_single_layer_prefers_class_zero() {
        let layer = DenseLayer {
            weights: Array2::eye(3) * 0.1,
            bias: Array1::from(vec![50.0, 0.0, 0.0]),
        };
        let net = EvidentialNet::from_layers(vec![layer], OutputActivation::Relu).unwrap();
        let e = net.forward(&[0.3, 0.2, 0.1]).unwrap();
        assert!(e[0] > e[1] && e[0] > e[2]);
    }

    #[test]
    fn forward_is_deterministic_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = EvidentialNet::new(5, &[7, 4], 3, OutputActivation::Relu, &mut rng).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-100.0..100.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = net.forward(&x).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        assert!(net.forward(&[1.0; 4]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = EvidentialNet::new(3, &[5], 2, OutputActivation::Relu, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 - 2.0);
        let cache = net.forward_batch(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((4, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_unit_blocks_gradient() {
        // Hidden unit 1 has a strongly negative bias and never activates.
        let hidden = DenseLayer {
            weights: Array2::from_shape_vec((2, 2), vec![1.0, 0.5, 0.3, 0.2]).unwrap(),
            bias: Array1::from(vec![0.1, -100.0]),
        };
        let out = DenseLayer {
            weights: Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 0.5, 2.0]).unwrap(),
            bias: Array1::from(vec![1.0, 1.0]),
        };
        let net = EvidentialNet::from_layers(vec![hidden, out], OutputActivation::Relu).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![0.4, 0.7]).unwrap();
        let cache = net.forward_batch(x.view()).unwrap();
        let g = net.backward(&cache, Array2::ones((1, 2)).view()).unwrap();
        assert_eq!(g.layers[0].weights.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.layers[0].bias[1], 0.0);
        assert_eq!(g.layers[1].weights.column(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_view_fusion_is_identity() {
        let (alpha, tape) = fuse_forward(&[vec![3.0, 0.5, 0.0]]).unwrap();
        assert_eq!(alpha.alpha(), &[4.0, 1.5, 1.0]);
        let g = fuse_backward(&tape, &[0.2, -1.0, 3.0]).unwrap();
        assert_eq!(g, vec![vec![0.2, -1.0, 3.0]]);
    }

    #[test]
    fn vacuous_views_fuse_to_uniform() {
        let (alpha, tape) = fuse_forward(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(alpha.alpha(), &[1.0, 1.0, 1.0]);
        assert_eq!(tape.joint_opinion().uncertainty(), 1.0);
    }

    #[test]
    fn tape_replay_matches() {
        let ev = vec![vec![18.0, 2.0], vec![2.0, 18.0], vec![5.0, 1.0]];
        let (alpha, tape) = fuse_forward(&ev).unwrap();
        let replay = tape.replay().unwrap();
        for (a, b) in alpha.alpha().iter().zip(replay.alpha()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut adam = Adam::new(0.01, 0.0);
        let mut p = vec![1.5, -2.0];
        adam.step(&mut [&mut p[..]], &[&[0.0, 0.0][..]]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.01, 0.0);
        let mut p = [1.0];
        adam.step(&mut [&mut p[..]], &[&[3.0][..]]).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        let expected = 1.0 - 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.99).abs() < 1e-10);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut adam = Adam::new(0.01, 0.0);
        let mut w = [1.0];
        for _ in 0..2000 {
            let g = [2.0 * w[0]];
            adam.step(&mut [&mut w[..]], &[&g[..]]).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn adam_rejects_shape_changes() {
        let mut adam = Adam::new(0.01, 1e-4);
        let mut p = [1.0, 2.0];
        adam.step(&mut [&mut p[..]], &[&[0.1, 0.1][..]]).unwrap();
        let mut q = [1.0];
        assert!(adam.step(&mut [&mut q[..]], &[&[0.1][..]]).is_err());
        assert!(adam.step(&mut [&mut p[..]], &[&[0.1][..]]).is_err());
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model =
            MultiViewModel::initialize(&[3, 4], &[5], 3, OutputActivation::Relu, &mut rng).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: MultiViewModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
