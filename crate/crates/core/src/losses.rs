//! Evidential training objective: adjusted cross-entropy, the KL pull
//! towards the uniform Dirichlet on non-target classes, and their analytic
//! gradients with respect to the concentration parameters.

use crate::error::{Result, TmcError};
use crate::opinion::DirichletParams;
use crate::specfn::{
    digamma_unchecked as digamma, ln_gamma_unchecked as ln_gamma,
    trigamma_unchecked as trigamma,
};

/// A ground-truth label for a `K`-class problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelOneHot {
    class_index: usize,
    class_count: usize,
}

impl LabelOneHot {
    pub fn new(class_index: usize, class_count: usize) -> Result<Self> {
        if class_index >= class_count {
            return Err(TmcError::InvalidConfig(format!(
                "label {class_index} out of range for {class_count} classes"
            )));
        }
        Ok(LabelOneHot {
            class_index,
            class_count,
        })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn as_vector(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.class_count];
        y[self.class_index] = 1.0;
        y
    }
}

/// Linear warm-up of the KL weight: `λ_t = min(1, t / T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnealSchedule {
    annealing_epochs: usize,
}

impl AnnealSchedule {
    pub fn new(annealing_epochs: usize) -> Result<Self> {
        if annealing_epochs == 0 {
            return Err(TmcError::InvalidConfig(
                "annealing_epochs must be at least 1".into(),
            ));
        }
        Ok(AnnealSchedule { annealing_epochs })
    }

    pub fn annealing_epochs(&self) -> usize {
        self.annealing_epochs
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        (epoch as f64 / self.annealing_epochs as f64).min(1.0)
    }
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            annealing_epochs: 50,
        }
    }
}

fn check_label(alpha: &DirichletParams, y: LabelOneHot) -> Result<()> {
    if alpha.class_count() != y.class_count() {
        return Err(TmcError::ClassMismatch {
            expected: alpha.class_count(),
            found: y.class_count(),
        });
    }
    Ok(())
}

fn check_lambda(lambda_t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda_t) {
        Ok(())
    } else {
        Err(TmcError::Domain {
            function: "sample_loss",
            value: lambda_t,
            requirement: "lambda_t in [0, 1]",
        })
    }
}

/// Expected cross-entropy under `Dir(p | α)`: `ψ(S) − ψ(α_gt)`.
pub fn ace_loss(alpha: &DirichletParams, y: LabelOneHot) -> Result<f64> {
    check_label(alpha, y)?;
    let a = alpha.alpha();
    Ok(digamma(alpha.strength()) - digamma(a[y.class_index()]))
}

/// `α̃ = y + (1 − y) ⊙ α`: the target slot is reset to 1.
pub fn adjusted_alpha(alpha: &DirichletParams, y: LabelOneHot) -> Result<DirichletParams> {
    check_label(alpha, y)?;
    let mut tilde = alpha.alpha().to_vec();
    tilde[y.class_index()] = 1.0;
    Ok(DirichletParams::from_vec_unchecked(tilde))
}

/// `KL[Dir(α̃) ‖ Dir(1)]` in closed form.
pub fn kl_to_uniform(alpha_tilde: &DirichletParams) -> f64 {
    let a = alpha_tilde.alpha();
    // Exactly uniform input: every term vanishes analytically.
    if a.iter().all(|&ak| ak == 1.0) {
        return 0.0;
    }
    let k = a.len() as f64;
    let s = alpha_tilde.strength();
    let psi_s = digamma(s);
    let mut value = ln_gamma(s) - ln_gamma(k);
    for &ak in a {
        value -= ln_gamma(ak);
        if ak != 1.0 {
            value += (ak - 1.0) * (digamma(ak) - psi_s);
        }
    }
    value
}

/// Per-sample loss `ACE(α) + λ_t · KL(α̃)`.
pub fn sample_loss(alpha: &DirichletParams, y: LabelOneHot, lambda_t: f64) -> Result<f64> {
    check_lambda(lambda_t)?;
    let ace = ace_loss(alpha, y)?;
    if lambda_t == 0.0 {
        return Ok(ace);
    }
    Ok(ace + lambda_t * kl_to_uniform(&adjusted_alpha(alpha, y)?))
}

/// Multi-task loss for one sample: the joint Dirichlet plus every view.
pub fn overall_loss(
    joint_alpha: &DirichletParams,
    view_alphas: &[DirichletParams],
    y: LabelOneHot,
    lambda_t: f64,
) -> Result<f64> {
    let mut total = sample_loss(joint_alpha, y, lambda_t)?;
    for view in view_alphas {
        if view.class_count() != joint_alpha.class_count() {
            return Err(TmcError::ClassMismatch {
                expected: joint_alpha.class_count(),
                found: view.class_count(),
            });
        }
        total += sample_loss(view, y, lambda_t)?;
    }
    Ok(total)
}

/// Gradient of [`sample_loss`] with respect to `α`.
///
/// The ACE part is `ψ′(S) − yₘ ψ′(αₘ)`. The KL part is differentiated
/// through `α̃`: for `m ≠ gt` it is `(α̃ₘ − 1) ψ′(α̃ₘ) − (S̃ − K) ψ′(S̃)`, and
/// the target slot receives nothing because `α̃_gt` is the constant 1.
pub fn grad_sample_loss(
    alpha: &DirichletParams,
    y: LabelOneHot,
    lambda_t: f64,
) -> Result<Vec<f64>> {
    check_label(alpha, y)?;
    check_lambda(lambda_t)?;
    let a = alpha.alpha();
    let gt = y.class_index();
    let tri_s = trigamma(alpha.strength());
    let mut grad: Vec<f64> = vec![tri_s; a.len()];
    grad[gt] -= trigamma(a[gt]);
    if lambda_t > 0.0 {
        let kl_grad = grad_kl_to_uniform(&adjusted_alpha(alpha, y)?);
        for (m, g) in grad.iter_mut().enumerate() {
            if m != gt {
                *g += lambda_t * kl_grad[m];
            }
        }
    }
    Ok(grad)
}

/// Gradient of [`kl_to_uniform`] with respect to its own argument.
pub fn grad_kl_to_uniform(alpha_tilde: &DirichletParams) -> Vec<f64> {
    let a = alpha_tilde.alpha();
    let s = alpha_tilde.strength();
    let k = a.len() as f64;
    let shared = (s - k) * trigamma(s);
    a.iter().map(|&am| (am - 1.0) * trigamma(am) - shared).collect()
}
