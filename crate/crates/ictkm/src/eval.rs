//! Dictionary distances, recovery metrics, controlled perturbations, and the
//! closed-form theory-bound calculators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymmetric distance of a learned dictionary to the generating one:
/// for each generating atom the best sign-matched learned atom.
#[derive(Clone, Debug)]
pub struct DistanceReport {
    /// max_k of `per_atom`
    pub max: f64,
    /// ||a_k - s_k psi_{j(k)}|| per generating atom
    pub per_atom: Vec<f64>,
    /// j(k): index of the closest learned atom
    pub matching: Vec<usize>,
    /// s_k in {-1, +1}
    pub signs: Vec<f64>,
}

fn sign_or_one(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Distance from `psi` (learned) to `phi` (generating), matching each
/// generating atom independently; columns of `psi` may be reused.
pub fn dictionary_distance(psi: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<DistanceReport> {
    if psi.nrows() != phi.nrows() {
        return Err(Error::DimensionMismatch {
            expected: phi.nrows(),
            got: psi.nrows(),
        });
    }
    if psi.ncols() == 0 || phi.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    let gram = phi.transpose() * psi;
    let mut per_atom = Vec::with_capacity(phi.ncols());
    let mut matching = Vec::with_capacity(phi.ncols());
    let mut signs = Vec::with_capacity(phi.ncols());
    let mut max = 0.0_f64;
    for k in 0..phi.ncols() {
        let mut best_j = 0;
        let mut best = -1.0;
        for j in 0..psi.ncols() {
            let v = gram[(k, j)].abs();
            if v > best {
                best = v;
                best_j = j;
            }
        }
        let eps = (2.0 - 2.0 * best.min(1.0)).max(0.0).sqrt();
        per_atom.push(eps);
        matching.push(best_j);
        signs.push(sign_or_one(gram[(k, best_j)]));
        max = max.max(eps);
    }
    Ok(DistanceReport {
        max,
        per_atom,
        matching,
        signs,
    })
}

/// One-to-one variant: pairs are assigned greedily by largest absolute inner
/// product, each learned atom used at most once. Reporting only.
pub fn matched_dictionary_distance(
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<DistanceReport> {
    if psi.nrows() != phi.nrows() {
        return Err(Error::DimensionMismatch {
            expected: phi.nrows(),
            got: psi.nrows(),
        });
    }
    if psi.ncols() < phi.ncols() {
        return Err(Error::invalid(
            "one-to-one matching needs at least as many learned atoms as generating atoms",
        ));
    }
    let gram = phi.transpose() * psi;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(phi.ncols() * psi.ncols());
    for k in 0..phi.ncols() {
        for j in 0..psi.ncols() {
            pairs.push((gram[(k, j)].abs(), k, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matching = vec![usize::MAX; phi.ncols()];
    let mut used = vec![false; psi.ncols()];
    let mut assigned = 0;
    for &(_, k, j) in &pairs {
        if matching[k] == usize::MAX && !used[j] {
            matching[k] = j;
            used[j] = true;
            assigned += 1;
            if assigned == phi.ncols() {
                break;
            }
        }
    }
    let mut per_atom = Vec::with_capacity(phi.ncols());
    let mut signs = Vec::with_capacity(phi.ncols());
    let mut max = 0.0_f64;
    for k in 0..phi.ncols() {
        let j = matching[k];
        let ip = gram[(k, j)];
        let eps = (2.0 - 2.0 * ip.abs().min(1.0)).max(0.0).sqrt();
        per_atom.push(eps);
        signs.push(sign_or_one(ip));
        max = max.max(eps);
    }
    Ok(DistanceReport {
        max,
        per_atom,
        matching,
        signs,
    })
}

/// Fraction of generating atoms with some learned atom at absolute inner
/// product >= threshold.
pub fn recovery_rate(psi: &DMatrix<f64>, phi: &DMatrix<f64>, threshold: f64) -> Result<f64> {
    if psi.nrows() != phi.nrows() {
        return Err(Error::DimensionMismatch {
            expected: phi.nrows(),
            got: psi.nrows(),
        });
    }
    if phi.ncols() == 0 || psi.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    let gram = phi.transpose() * psi;
    let recovered = (0..phi.ncols())
        .filter(|&k| (0..psi.ncols()).any(|j| gram[(k, j)].abs() >= threshold))
        .count();
    Ok(recovered as f64 / phi.ncols() as f64)
}

/// psi_k = (1 - eps^2/2) a_k + sqrt(eps^2 - eps^4/4) z_k with z_k a random
/// unit vector orthogonal to a_k; ||psi_k - a_k|| = eps_k and ||psi_k|| = 1.
pub fn perturb_dictionary<R: Rng + ?Sized>(
    phi: &DMatrix<f64>,
    eps: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if eps.len() != phi.ncols() {
        return Err(Error::DimensionMismatch {
            expected: phi.ncols(),
            got: eps.len(),
        });
    }
    let d = phi.nrows();
    if d < 2 {
        return Err(Error::invalid("perturbation needs ambient dimension >= 2"));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut psi = phi.clone();
    for (k, &e) in eps.iter().enumerate() {
        if !(0.0..sqrt2).contains(&e) {
            return Err(Error::invalid(format!(
                "perturbation size must lie in [0, sqrt(2)), got {e}"
            )));
        }
        if e == 0.0 {
            continue;
        }
        let a = phi.column(k).into_owned();
        let z = loop {
            let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = &g - &a * a.dot(&g);
            let n = w.norm();
            if n > 1e-8 {
                break w / n;
            }
        };
        let alpha = 1.0 - e * e / 2.0;
        let omega = (e * e - e.powi(4) / 4.0).sqrt();
        psi.set_column(k, &(a * alpha + z * omega));
    }
    Ok(psi)
}

/// Every symbol the appendix bounds consume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub signal_dim: usize,
    pub n_atoms: usize,
    pub sparsity: usize,
    pub coherence: f64,
    pub op_norm_sq: f64,
    pub noise_sigma: f64,
    pub distortion: f64,
    pub embed_failure: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub c_r1: f64,
    pub c_r2: f64,
    pub c_n: f64,
    pub target_error: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        if self.signal_dim == 0 || self.n_atoms == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if self.sparsity == 0 || self.sparsity >= self.n_atoms {
            return Err(Error::invalid("need 1 <= S < K"));
        }
        if self.coherence < 0.0 || self.noise_sigma < 0.0 || self.distortion < 0.0 {
            return Err(Error::invalid("mu, sigma, delta must be non-negative"));
        }
        if self.op_norm_sq < 1.0 {
            return Err(Error::invalid("operator norm squared is at least 1"));
        }
        if !(self.gap_abs > 0.0 && self.gap_rel > 0.0 && self.gap_rel <= 1.0) {
            return Err(Error::invalid("gaps must be positive with relative gap <= 1"));
        }
        if !(self.c_r1 > 0.0 && self.c_r2 > 0.0 && self.c_r2 <= 1.0 + 1e-12) {
            return Err(Error::invalid("coefficient statistics out of range"));
        }
        if !(self.c_n > 0.0 && self.c_n <= 1.0) {
            return Err(Error::invalid("C_n must lie in (0, 1]"));
        }
        if !(self.target_error > 0.0) {
            return Err(Error::invalid("target error must be positive"));
        }
        if !(self.embed_failure >= 0.0 && self.embed_failure < 1.0) {
            return Err(Error::invalid("embedding failure parameter must lie in [0, 1)"));
        }
        let s = self.sparsity as f64;
        if self.distortion >= self.gap_abs * s.sqrt() / 4.0 {
            return Err(Error::invalid(
                "distortion must stay below gap_abs * sqrt(S) / 4",
            ));
        }
        Ok(())
    }
}

/// Smallest achievable error floor of the iteration.
pub fn eps_opt(inputs: &TheoryInputs) -> Result<f64> {
    inputs.validate()?;
    let k = inputs.n_atoms as f64;
    let d = inputs.signal_dim as f64;
    let s = inputs.sparsity as f64;
    let delta = inputs.distortion;
    let sigma = inputs.noise_sigma;
    let numerator = (inputs.gap_abs - 2.0 * delta / s.sqrt()).powi(2);
    let denom = 72.0
        * ((inputs.coherence + delta).powi(2))
            .max(sigma * sigma + delta * delta * d * sigma * sigma);
    let front = 13.0 * k * k * (inputs.op_norm_sq + 1.0).sqrt() / (inputs.c_n * inputs.c_r1);
    Ok(front * (-numerator / denom).exp())
}

/// Radius of the basin of convergence around the generating dictionary.
pub fn convergence_radius(inputs: &TheoryInputs) -> Result<f64> {
    inputs.validate()?;
    let s = inputs.sparsity as f64;
    let k = inputs.n_atoms as f64;
    let b = inputs.op_norm_sq;
    let gap = inputs.gap_rel - 2.0 * inputs.distortion;
    if gap <= 0.0 {
        return Err(Error::invalid(
            "relative gap must exceed twice the distortion",
        ));
    }
    let first = 1.0 / (32.0 * s.sqrt());
    let log_arg = 1392.0 * k * k * (b + 1.0) / (inputs.c_n * inputs.c_r1 * gap);
    let second = gap / (9.0 * b.sqrt() * (0.25 + log_arg.ln().sqrt()));
    Ok(first.min(second))
}

/// Pass/fail on each admissibility precondition, with the computed values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// max{mu, delta, sigma, sigma*delta*sqrt(d)} <= C / sqrt(S ln(K^2/eps~))
    pub scale_ok: bool,
    pub scale_lhs: f64,
    pub scale_rhs: f64,
    /// S <= (1/98) min{K/B, 1/sigma^2}
    pub sparsity_ok: bool,
    pub sparsity_rhs: f64,
    /// eps_mu = K exp(-1/(4741 mu^2 S)) <= 1/(48(B+1))
    pub coherence_ok: bool,
    pub eps_mu: f64,
    pub eps_mu_bound: f64,
}

impl AdmissibilityReport {
    pub fn all_ok(&self) -> bool {
        self.scale_ok && self.sparsity_ok && self.coherence_ok
    }
}

pub fn admissibility_check(inputs: &TheoryInputs, constant: f64) -> Result<AdmissibilityReport> {
    inputs.validate()?;
    if constant <= 0.0 {
        return Err(Error::invalid("admissibility constant must be positive"));
    }
    let d = inputs.signal_dim as f64;
    let k = inputs.n_atoms as f64;
    let s = inputs.sparsity as f64;
    let b = inputs.op_norm_sq;
    let sigma = inputs.noise_sigma;
    let scale_lhs = inputs
        .coherence
        .max(inputs.distortion)
        .max(sigma)
        .max(sigma * inputs.distortion * d.sqrt());
    let scale_rhs = constant / (s * (k * k / inputs.target_error).ln()).sqrt();
    let sparsity_rhs = if sigma > 0.0 {
        (k / b).min(1.0 / (sigma * sigma)) / 98.0
    } else {
        k / b / 98.0
    };
    let eps_mu = if inputs.coherence > 0.0 {
        k * (-1.0 / (4741.0 * inputs.coherence * inputs.coherence * s)).exp()
    } else {
        0.0
    };
    let eps_mu_bound = 1.0 / (48.0 * (b + 1.0));
    Ok(AdmissibilityReport {
        scale_ok: scale_lhs <= scale_rhs,
        scale_lhs,
        scale_rhs,
        sparsity_ok: s <= sparsity_rhs,
        sparsity_rhs,
        coherence_ok: eps_mu <= eps_mu_bound,
        eps_mu,
        eps_mu_bound,
    })
}

/// Probability that L iterations with N fresh signals each fail to reach the
/// target error.
pub fn failure_probability(inputs: &TheoryInputs, n_signals: f64, iterations: f64) -> Result<f64> {
    inputs.validate()?;
    if n_signals <= 0.0 || iterations <= 0.0 {
        return Err(Error::invalid("N and L must be positive"));
    }
    let k = inputs.n_atoms as f64;
    let d = inputs.signal_dim as f64;
    let s = inputs.sparsity as f64;
    let eps = inputs.target_error;
    let exponent = inputs.c_n * inputs.c_n * inputs.c_r1 * inputs.c_r1 * n_signals * eps * eps
        / (576.0
            * k
            * s.max(inputs.op_norm_sq + 1.0)
            * (eps + 1.0 - inputs.c_r2 + d * inputs.noise_sigma * inputs.noise_sigma));
    Ok(inputs.embed_failure * iterations + 6.0 * iterations * k * (-exponent).exp())
}

/// Smallest batch size N with failure_probability <= target, by inverting the
/// exponential term.
pub fn sample_bound(inputs: &TheoryInputs, target_probability: f64, iterations: f64) -> Result<f64> {
    inputs.validate()?;
    if iterations <= 0.0 {
        return Err(Error::invalid("L must be positive"));
    }
    let k = inputs.n_atoms as f64;
    let d = inputs.signal_dim as f64;
    let s = inputs.sparsity as f64;
    let eps = inputs.target_error;
    let budget = target_probability - inputs.embed_failure * iterations;
    if budget <= 0.0 {
        return Err(Error::invalid(
            "target probability must exceed the embedding failure term theta * L",
        ));
    }
    let ratio = 6.0 * iterations * k / budget;
    if ratio <= 1.0 {
        return Ok(1.0);
    }
    let scale = 576.0
        * k
        * s.max(inputs.op_norm_sq + 1.0)
        * (eps + 1.0 - inputs.c_r2 + d * inputs.noise_sigma * inputs.noise_sigma)
        / (inputs.c_n * inputs.c_n * inputs.c_r1 * inputs.c_r1 * eps * eps);
    Ok((scale * ratio.ln()).ceil())
}

/// L = 5 ceil(ln(1/eps~)), clamped to at least one iteration.
pub fn iteration_count(target_error: f64) -> Result<usize> {
    if !(target_error > 0.0) {
        return Err(Error::invalid("target error must be positive"));
    }
    let l = 5.0 * (1.0 / target_error).ln().ceil();
    Ok((l.max(1.0)) as usize)
}
