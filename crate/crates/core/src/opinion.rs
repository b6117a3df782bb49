//! Subjective-logic opinions, their Dirichlet correspondence, and Dempster's
//! rule of combination restricted to singleton-plus-frame focal sets.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TmcError};
use crate::specfn;

/// Below this normalizer `1 − C` two opinions are treated as totally
/// conflicting.
pub const CONFLICT_GUARD: f64 = 1e-12;

/// Tolerance for `u + Σ b = 1` when validating hand-built opinions.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A multinomial opinion: one belief mass per class plus an uncertainty
/// mass, all non-negative and summing to one. The class count is the length
/// of `beliefs`, so a vacuous opinion still knows its `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    beliefs: Vec<f64>,
    uncertainty: f64,
}

impl Opinion {
    /// Builds an opinion after checking non-negativity and normalization.
    pub fn new(beliefs: Vec<f64>, uncertainty: f64) -> Result<Self> {
        let op = Opinion {
            beliefs,
            uncertainty,
        };
        op.validate()?;
        Ok(op)
    }

    /// The vacuous opinion over `k` classes: no belief, total uncertainty.
    pub fn vacuous(k: usize) -> Self {
        Opinion {
            beliefs: vec![0.0; k],
            uncertainty: 1.0,
        }
    }

    pub fn beliefs(&self) -> &[f64] {
        &self.beliefs
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn class_count(&self) -> usize {
        self.beliefs.len()
    }

    /// Total mass `u + Σ bₖ`; one for every valid opinion.
    pub fn total_mass(&self) -> f64 {
        self.uncertainty + self.beliefs.iter().sum::<f64>()
    }

    /// Checks the invariants. Deserialized opinions should go through this
    /// before use.
    pub fn validate(&self) -> Result<()> {
        if self.beliefs.len() < 2 {
            return Err(TmcError::InvalidOpinion(format!(
                "need at least 2 classes, got {}",
                self.beliefs.len()
            )));
        }
        let all_ok = self
            .beliefs
            .iter()
            .chain(std::iter::once(&self.uncertainty))
            .all(|m| m.is_finite() && *m >= 0.0);
        if !all_ok {
            return Err(TmcError::InvalidOpinion(
                "masses must be finite and non-negative".into(),
            ));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(TmcError::InvalidOpinion(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Concentration parameters of a Dirichlet distribution over class
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    /// Accepts any finite, strictly positive concentration vector with at
    /// least two components.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(TmcError::InvalidConfig(format!(
                "Dirichlet needs at least 2 components, got {}",
                alpha.len()
            )));
        }
        if let Some(&bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(TmcError::Domain {
                function: "DirichletParams::new",
                value: bad,
                requirement: "finite and > 0",
            });
        }
        Ok(DirichletParams { alpha })
    }

    /// `α = e + 1` for a non-negative evidence vector.
    pub fn from_evidence(evidence: &[f64]) -> Result<Self> {
        check_evidence(evidence)?;
        Ok(DirichletParams {
            alpha: evidence.iter().map(|e| e + 1.0).collect(),
        })
    }

    /// The uniform Dirichlet over `k` classes.
    pub fn uniform(k: usize) -> Self {
        DirichletParams {
            alpha: vec![1.0; k],
        }
    }

    pub(crate) fn from_vec_unchecked(alpha: Vec<f64>) -> Self {
        DirichletParams { alpha }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn class_count(&self) -> usize {
        self.alpha.len()
    }

    /// Dirichlet strength `S = Σ αₖ`.
    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Evidence `e = α − 1`.
    pub fn evidence(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a - 1.0).collect()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.alpha
    }
}

/// The result of Dempster's rule: the fused opinion together with the
/// conflict of the last pairwise combination that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMass {
    pub opinion: Opinion,
    pub conflict: f64,
}

fn check_evidence(evidence: &[f64]) -> Result<()> {
    if evidence.len() < 2 {
        return Err(TmcError::InvalidEvidence(format!(
            "need at least 2 classes, got {}",
            evidence.len()
        )));
    }
    if let Some(bad) = evidence.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(TmcError::InvalidEvidence(format!(
            "components must be finite and >= 0, found {bad}"
        )));
    }
    Ok(())
}

/// Maps non-negative evidence to an opinion and its Dirichlet parameters:
/// `αₖ = eₖ + 1`, `bₖ = eₖ / S`, `u = K / S`.
pub fn opinion_from_evidence(evidence: &[f64]) -> Result<(Opinion, DirichletParams)> {
    let dir = DirichletParams::from_evidence(evidence)?;
    Ok((opinion_from_dirichlet(&dir), dir))
}

/// Same map starting from `α` (assumed `≥ 1` componentwise).
pub fn opinion_from_dirichlet(dir: &DirichletParams) -> Opinion {
    let s = dir.strength();
    let k = dir.class_count() as f64;
    Opinion {
        beliefs: dir.alpha.iter().map(|a| (a - 1.0) / s).collect(),
        uncertainty: k / s,
    }
}

/// Recovers Dirichlet parameters from an opinion: `S = K / u`, `eₖ = bₖ S`,
/// `αₖ = eₖ + 1`.
pub fn dirichlet_from_opinion(op: &Opinion) -> Result<DirichletParams> {
    let u = op.uncertainty;
    if !(u > 0.0 && u <= 1.0) {
        return Err(TmcError::InvalidOpinion(format!(
            "uncertainty {u} must lie in (0, 1] to recover finite evidence"
        )));
    }
    let s = op.class_count() as f64 / u;
    Ok(DirichletParams {
        alpha: op.beliefs.iter().map(|b| b * s + 1.0).collect(),
    })
}

/// Dempster's combination of two opinions over the same frame.
pub fn combine_pair(m1: &Opinion, m2: &Opinion) -> Result<JointMass> {
    let k = m1.class_count();
    if m2.class_count() != k {
        return Err(TmcError::ClassMismatch {
            expected: k,
            found: m2.class_count(),
        });
    }
    let conflict = pairwise_conflict(&m1.beliefs, &m2.beliefs);
    let norm = 1.0 - conflict;
    if norm < CONFLICT_GUARD {
        return Err(TmcError::TotalConflict { conflict });
    }
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let beliefs = m1
        .beliefs
        .iter()
        .zip(&m2.beliefs)
        .map(|(b1, b2)| (b1 * b2 + (b1 * u2 + b2 * u1)) / norm)
        .collect();
    Ok(JointMass {
        opinion: Opinion {
            beliefs,
            uncertainty: u1 * u2 / norm,
        },
        conflict,
    })
}

/// `C = Σ_{i≠j} b¹ᵢ b²ⱼ`, written as `(Σb¹)(Σb²) − Σ b¹ₖ b²ₖ`. The summation
/// order is symmetric in its arguments so that `C(m1, m2) == C(m2, m1)`
/// bit for bit.
pub(crate) fn pairwise_conflict(b1: &[f64], b2: &[f64]) -> f64 {
    let mut c = 0.0;
    for (i, x) in b1.iter().enumerate() {
        for (j, y) in b2.iter().enumerate() {
            if i != j {
                c += x * y;
            }
        }
    }
    let mut c_rev = 0.0;
    for (j, y) in b2.iter().enumerate() {
        for (i, x) in b1.iter().enumerate() {
            if i != j {
                c_rev += y * x;
            }
        }
    }
    0.5 * (c + c_rev)
}

/// Fuses `V ≥ 1` opinions by folding [`combine_pair`] left to right.
pub fn combine_many(opinions: &[Opinion]) -> Result<JointMass> {
    let (first, rest) = opinions
        .split_first()
        .ok_or(TmcError::Empty("combine_many needs at least one opinion"))?;
    let mut joint = JointMass {
        opinion: first.clone(),
        conflict: 0.0,
    };
    for op in rest {
        joint = combine_pair(&joint.opinion, op)?;
    }
    Ok(joint)
}

/// Mean of the Dirichlet: `p̂ₖ = αₖ / S`.
pub fn expected_probabilities(dir: &DirichletParams) -> Vec<f64> {
    let s = dir.strength();
    dir.alpha.iter().map(|a| a / s).collect()
}

/// Log density of `Dir(p | α)` at an interior point of the simplex.
pub fn dirichlet_log_pdf(dir: &DirichletParams, p: &[f64]) -> Result<f64> {
    if p.len() != dir.class_count() {
        return Err(TmcError::ClassMismatch {
            expected: dir.class_count(),
            found: p.len(),
        });
    }
    if let Some(&bad) = p.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(TmcError::Domain {
            function: "dirichlet_log_pdf",
            value: bad,
            requirement: "point strictly inside the simplex",
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(TmcError::Domain {
            function: "dirichlet_log_pdf",
            value: total,
            requirement: "probabilities summing to 1",
        });
    }
    let kernel: f64 = dir
        .alpha
        .iter()
        .zip(p)
        .map(|(a, x)| (a - 1.0) * x.ln())
        .sum();
    Ok(kernel - specfn::ln_multinomial_beta(&dir.alpha)?)
}

/// Reference implementation of Dempster's rule that enumerates focal-set
/// intersections explicitly. Focal elements are the singletons `{k}` with
/// mass `bₖ` and the whole frame `Θ` with mass `u`; sets are encoded as
/// bitmasks over the classes. Kept public as an oracle for
/// [`combine_pair`].
pub fn brute_force_dempster(m1: &Opinion, m2: &Opinion) -> Result<JointMass> {
    let k = m1.class_count();
    if m2.class_count() != k {
        return Err(TmcError::ClassMismatch {
            expected: k,
            found: m2.class_count(),
        });
    }
    if k > 127 {
        return Err(TmcError::InvalidConfig(
            "brute-force Dempster supports at most 127 classes".into(),
        ));
    }
    let frame: u128 = (1u128 << k) - 1;
    let focal = |op: &Opinion| -> Vec<(u128, f64)> {
        let mut sets: Vec<(u128, f64)> = op
            .beliefs
            .iter()
            .enumerate()
            .map(|(i, &b)| (1u128 << i, b))
            .collect();
        sets.push((frame, op.uncertainty));
        sets
    };
    let f1 = focal(m1);
    let f2 = focal(m2);

    let mut combined: std::collections::BTreeMap<u128, f64> = Default::default();
    let mut empty_mass = 0.0;
    for &(a, ma) in &f1 {
        for &(b, mb) in &f2 {
            let inter = a & b;
            if inter == 0 {
                empty_mass += ma * mb;
            } else {
                *combined.entry(inter).or_insert(0.0) += ma * mb;
            }
        }
    }
    let retained: f64 = combined.values().sum();
    if retained < CONFLICT_GUARD {
        return Err(TmcError::TotalConflict {
            conflict: empty_mass,
        });
    }
    let beliefs = (0..k)
        .map(|i| combined.get(&(1u128 << i)).copied().unwrap_or(0.0) / retained)
        .collect();
    let uncertainty = combined.get(&frame).copied().unwrap_or(0.0) / retained;
    Ok(JointMass {
        opinion: Opinion {
            beliefs,
            uncertainty,
        },
        conflict: empty_mass,
    })
}
