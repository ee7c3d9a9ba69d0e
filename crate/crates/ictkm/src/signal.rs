//! Generating dictionaries and the random sparse-plus-noise signal model.

use std::io::{BufWriter, Read as _, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-12;

/// The ground-truth dictionary signals are synthesized from.
#[derive(Clone, Debug)]
pub struct GeneratingDictionary {
    atoms: DMatrix<f64>,
    intrinsic_dim: usize,
}

impl GeneratingDictionary {
    /// Wraps a d x K matrix of unit-norm columns.
    pub fn new(atoms: DMatrix<f64>, intrinsic_dim: usize) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::invalid("dictionary must be non-empty"));
        }
        if intrinsic_dim > atoms.ncols() {
            return Err(Error::invalid(
                "intrinsic dimension cannot exceed the number of atoms",
            ));
        }
        for j in 0..atoms.ncols() {
            let n = atoms.column(j).norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "atom {j} has norm {n}, expected unit norm"
                )));
            }
        }
        Ok(Self {
            atoms,
            intrinsic_dim,
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn signal_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    /// mu = max_{k != j} |<a_k, a_j>|
    pub fn coherence(&self) -> f64 {
        let gram = self.atoms.transpose() * &self.atoms;
        let k = gram.ncols();
        let mut mu: f64 = 0.0;
        for j in 0..k {
            for i in 0..k {
                if i != j {
                    mu = mu.max(gram[(i, j)].abs());
                }
            }
        }
        mu
    }

    /// B = squared spectral norm of the atom matrix.
    pub fn operator_norm_squared(&self) -> f64 {
        let s = self.atoms.clone().svd(false, false).singular_values[0];
        s * s
    }
}

/// Dirac basis plus the first half of the orthonormal DCT-II basis on the
/// leading d_tilde coordinates, zero-padded to dimension d. K = (3/2) d_tilde.
pub fn build_dirac_dct_dictionary(d: usize, d_tilde: usize) -> Result<GeneratingDictionary> {
    if d_tilde == 0 || d_tilde > d {
        return Err(Error::invalid("need 0 < d_tilde <= d"));
    }
    if d_tilde % 2 != 0 {
        return Err(Error::invalid(
            "d_tilde must be even so that K = (3/2) d_tilde is integral",
        ));
    }
    let k = 3 * d_tilde / 2;
    let mut atoms = DMatrix::zeros(d, k);
    for j in 0..d_tilde {
        atoms[(j, j)] = 1.0;
    }
    let dt = d_tilde as f64;
    for j in 0..d_tilde / 2 {
        let w = if j == 0 {
            (1.0 / dt).sqrt()
        } else {
            (2.0 / dt).sqrt()
        };
        for n in 0..d_tilde {
            atoms[(n, d_tilde + j)] =
                w * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * j as f64 / (2.0 * dt)).cos();
        }
    }
    GeneratingDictionary::new(atoms, d_tilde)
}

/// How nonzero coefficient magnitudes are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CoefficientVariant {
    /// All S nonzeros equal 1/sqrt(S).
    Flat { sparsity: usize },
    /// Geometric decay with per-draw factor c_b ~ Uniform[1-b, 1] where
    /// (1-b)^(1-S) equals the dynamic range; rescaled to unit norm.
    Geometric { sparsity: usize, dynamic_range: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModel {
    pub variant: CoefficientVariant,
    pub n_atoms: usize,
}

impl CoefficientModel {
    pub fn flat(sparsity: usize, n_atoms: usize) -> Result<Self> {
        Self::new(CoefficientVariant::Flat { sparsity }, n_atoms)
    }

    pub fn geometric(sparsity: usize, dynamic_range: f64, n_atoms: usize) -> Result<Self> {
        Self::new(
            CoefficientVariant::Geometric {
                sparsity,
                dynamic_range,
            },
            n_atoms,
        )
    }

    pub fn new(variant: CoefficientVariant, n_atoms: usize) -> Result<Self> {
        let s = match variant {
            CoefficientVariant::Flat { sparsity } => sparsity,
            CoefficientVariant::Geometric {
                sparsity,
                dynamic_range,
            } => {
                if dynamic_range < 1.0 {
                    return Err(Error::invalid("dynamic range must be at least 1"));
                }
                sparsity
            }
        };
        if s == 0 || s > n_atoms {
            return Err(Error::invalid(format!(
                "sparsity must satisfy 1 <= S <= K, got S = {s}, K = {n_atoms}"
            )));
        }
        Ok(Self { variant, n_atoms })
    }

    pub fn sparsity(&self) -> usize {
        match self.variant {
            CoefficientVariant::Flat { sparsity } => sparsity,
            CoefficientVariant::Geometric { sparsity, .. } => sparsity,
        }
    }

    /// Width b of the decay-factor interval [1-b, 1]; zero for the flat model.
    pub fn decay_interval_width(&self) -> f64 {
        match self.variant {
            CoefficientVariant::Flat { .. } => 0.0,
            CoefficientVariant::Geometric {
                sparsity,
                dynamic_range,
            } => {
                if sparsity <= 1 {
                    0.0
                } else {
                    1.0 - dynamic_range.powf(-1.0 / (sparsity as f64 - 1.0))
                }
            }
        }
    }

    /// The unit-norm magnitude sequence c(1) >= ... >= c(S) for a given decay
    /// factor (ignored by the flat model).
    fn magnitudes(&self, decay: f64) -> Vec<f64> {
        let s = self.sparsity();
        match self.variant {
            CoefficientVariant::Flat { .. } => vec![1.0 / (s as f64).sqrt(); s],
            CoefficientVariant::Geometric { .. } => {
                if s == 1 || (1.0 - decay).abs() < 1e-14 {
                    return vec![1.0 / (s as f64).sqrt(); s];
                }
                let beta =
                    ((1.0 - decay * decay) / (1.0 - decay.powi(2 * s as i32))).sqrt();
                (0..s).map(|k| beta * decay.powi(k as i32)).collect()
            }
        }
    }

    fn draw_magnitudes<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let decay = match self.variant {
            CoefficientVariant::Flat { .. } => 1.0,
            CoefficientVariant::Geometric { .. } => {
                let b = self.decay_interval_width();
                1.0 - b * rng.random::<f64>()
            }
        };
        self.magnitudes(decay)
    }
}

/// A drawn sparse coefficient vector with its ground truth. `support[k]`
/// carries the (k+1)-largest magnitude, and `signs[k]` its sign.
#[derive(Clone, Debug)]
pub struct SparseCoefficients {
    pub x: DVector<f64>,
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
}

/// Draws signs, a uniformly random size-S support, and the magnitude sequence.
pub fn draw_coefficients<R: Rng + ?Sized>(
    model: &CoefficientModel,
    rng: &mut R,
) -> SparseCoefficients {
    let k = model.n_atoms;
    let s = model.sparsity();
    let magnitudes = model.draw_magnitudes(rng);
    let mut idx: Vec<usize> = (0..k).collect();
    for i in 0..s {
        let j = rng.random_range(i..k);
        idx.swap(i, j);
    }
    let support: Vec<usize> = idx[..s].to_vec();
    let signs: Vec<f64> = (0..s)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut x = DVector::zeros(k);
    for ((&atom, &sign), &mag) in support.iter().zip(&signs).zip(&magnitudes) {
        x[atom] = sign * mag;
    }
    SparseCoefficients { x, support, signs }
}

/// One training signal with its oracle ground truth. The learner never sees
/// the metadata.
#[derive(Clone, Debug)]
pub struct GeneratedSignal {
    pub y: DVector<f64>,
    pub oracle_support: Vec<usize>,
    pub oracle_signs: Vec<f64>,
    pub noise_norm: f64,
}

/// y = (Phi x + r) / sqrt(1 + ||r||^2) with r i.i.d. Gaussian(0, sigma^2).
pub fn draw_signal<R: Rng + ?Sized>(
    dict: &GeneratingDictionary,
    model: &CoefficientModel,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<GeneratedSignal> {
    if model.n_atoms != dict.n_atoms() {
        return Err(Error::DimensionMismatch {
            expected: dict.n_atoms(),
            got: model.n_atoms,
        });
    }
    if noise_sigma < 0.0 {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let coeffs = draw_coefficients(model, rng);
    let mut y = DVector::zeros(dict.signal_dim());
    for &atom in &coeffs.support {
        y.axpy(coeffs.x[atom], &dict.atoms().column(atom), 1.0);
    }
    let mut noise_norm = 0.0;
    if noise_sigma > 0.0 {
        let d = dict.signal_dim();
        let mut r_sq = 0.0;
        for i in 0..d {
            let r: f64 = noise_sigma * rng.sample::<f64, _>(StandardNormal);
            y[i] += r;
            r_sq += r * r;
        }
        noise_norm = r_sq.sqrt();
        y /= (1.0 + r_sq).sqrt();
    }
    Ok(GeneratedSignal {
        y,
        oracle_support: coeffs.support,
        oracle_signs: coeffs.signs,
        noise_norm,
    })
}

/// A batch of signals stacked as columns, with per-signal ground truth.
#[derive(Clone, Debug)]
pub struct SignalBatch {
    pub signals: DMatrix<f64>,
    pub supports: Vec<Vec<usize>>,
    pub signs: Vec<Vec<f64>>,
}

pub fn draw_signal_batch<R: Rng + ?Sized>(
    dict: &GeneratingDictionary,
    model: &CoefficientModel,
    noise_sigma: f64,
    n_signals: usize,
    rng: &mut R,
) -> Result<SignalBatch> {
    let mut signals = DMatrix::zeros(dict.signal_dim(), n_signals);
    let mut supports = Vec::with_capacity(n_signals);
    let mut signs = Vec::with_capacity(n_signals);
    for j in 0..n_signals {
        let s = draw_signal(dict, model, noise_sigma, rng)?;
        signals.set_column(j, &s.y);
        supports.push(s.oracle_support);
        signs.push(s.oracle_signs);
    }
    Ok(SignalBatch {
        signals,
        supports,
        signs,
    })
}

/// Almost-sure coefficient gaps: absolute gap c(S) - c(S+1) and the relative
/// gap scaled by c(1). For the geometric model these are the worst-case values
/// at decay factor 1 - b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapStatistics {
    pub absolute: f64,
    pub relative: f64,
}

pub fn gap_statistics(model: &CoefficientModel) -> GapStatistics {
    let c = model.magnitudes(1.0 - model.decay_interval_width());
    let s = c.len();
    // exactly-S-sparse sequences: c(S+1) = 0
    let absolute = c[s - 1];
    GapStatistics {
        absolute,
        relative: absolute / c[0],
    }
}

/// First- and second-moment coefficient statistics plus the noise shrinkage
/// factor C_n and its analytic lower bound (1 - e^{-d}) / sqrt(1 + 5 d sigma^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientStatistics {
    pub c_r1: f64,
    pub c_r2: f64,
    pub c_n: f64,
    pub c_n_lower_bound: f64,
}

pub fn coefficient_statistics<R: Rng + ?Sized>(
    model: &CoefficientModel,
    noise_sigma: f64,
    signal_dim: usize,
    trials: usize,
    rng: &mut R,
) -> Result<CoefficientStatistics> {
    if signal_dim == 0 || trials == 0 {
        return Err(Error::invalid("need signal_dim >= 1 and trials >= 1"));
    }
    let s = model.sparsity() as f64;
    let (c_r1, c_r2) = match model.variant {
        CoefficientVariant::Flat { .. } => (s.sqrt(), 1.0),
        CoefficientVariant::Geometric { .. } => {
            let mut sum1 = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..trials {
                let c = model.draw_magnitudes(rng);
                sum1 += c.iter().sum::<f64>();
                sum2 += c.iter().map(|x| x * x).sum::<f64>();
            }
            (sum1 / trials as f64, sum2 / trials as f64)
        }
    };
    let c_n = if noise_sigma == 0.0 {
        1.0
    } else {
        let mut sum = 0.0;
        for _ in 0..trials {
            let r_sq: f64 = (0..signal_dim)
                .map(|_| {
                    let r: f64 = noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    r * r
                })
                .sum();
            sum += 1.0 / (1.0 + r_sq).sqrt();
        }
        sum / trials as f64
    };
    let d = signal_dim as f64;
    let c_n_lower_bound = (1.0 - (-d).exp()) / (1.0 + 5.0 * d * noise_sigma * noise_sigma).sqrt();
    Ok(CoefficientStatistics {
        c_r1,
        c_r2,
        c_n,
        c_n_lower_bound,
    })
}

const BATCH_MAGIC: &[u8; 8] = b"SIGBATCH";

/// Writes a d x n matrix as little-endian f64 in column-major order after an
/// 8-byte magic and two u32 (rows, cols) header fields.
pub fn write_matrix_binary(path: &Path, mat: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BATCH_MAGIC)?;
    w.write_all(&(mat.nrows() as u32).to_le_bytes())?;
    w.write_all(&(mat.ncols() as u32).to_le_bytes())?;
    for v in mat.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Format("bad matrix file magic".into()));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let rows = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let cols = u32::from_le_bytes(u) as usize;
    let mut data = vec![0.0; rows * cols];
    let mut f = [0u8; 8];
    for slot in data.iter_mut() {
        r.read_exact(&mut f)?;
        *slot = f64::from_le_bytes(f);
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Writes a matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: &Path, mat: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for i in 0..mat.nrows() {
        let row: Vec<String> = (0..mat.ncols()).map(|j| mat[(i, j)].to_string()).collect();
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dirac_dct_gram_matches_dense_oracle() {
        let dict = build_dirac_dct_dictionary(4, 4).unwrap();
        assert_eq!(dict.n_atoms(), 6);
        // dense construction: identity columns then DCT-II rows j = 0, 1
        let mut oracle = DMatrix::zeros(4, 6);
        for j in 0..4 {
            oracle[(j, j)] = 1.0;
        }
        for n in 0..4 {
            oracle[(n, 4)] = 0.5;
            oracle[(n, 5)] = (2.0_f64 / 4.0).sqrt()
                * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) / 8.0).cos();
        }
        let gram = dict.atoms().transpose() * dict.atoms();
        let gram_oracle = oracle.transpose() * &oracle;
        assert_relative_eq!((gram - gram_oracle).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dirac_dct_columns_unit_norm() {
        let dict = build_dirac_dct_dictionary(16, 16).unwrap();
        for j in 0..dict.n_atoms() {
            assert!((dict.atoms().column(j).norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn dirac_dct_zero_pads_tail_rows() {
        let dict = build_dirac_dct_dictionary(8, 4).unwrap();
        assert_eq!(dict.signal_dim(), 8);
        assert_eq!(dict.n_atoms(), 6);
        for j in 0..6 {
            for i in 4..8 {
                assert_eq!(dict.atoms()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn dirac_dct_rejects_odd_intrinsic_dim() {
        assert!(build_dirac_dct_dictionary(8, 3).is_err());
        assert!(build_dirac_dct_dictionary(4, 8).is_err());
    }

    #[test]
    fn coherence_matches_dense_oracle() {
        let dict = build_dirac_dct_dictionary(8, 8).unwrap();
        let a = dict.atoms();
        let mut mu: f64 = 0.0;
        for i in 0..a.ncols() {
            for j in 0..a.ncols() {
                if i != j {
                    mu = mu.max(a.column(i).dot(&a.column(j)).abs());
                }
            }
        }
        assert_relative_eq!(dict.coherence(), mu, epsilon = 1e-14);
    }

    #[test]
    fn flat_magnitudes_are_inverse_sqrt_s() {
        let model = CoefficientModel::flat(4, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = draw_coefficients(&model, &mut rng);
        let nonzeros: Vec<f64> = c.x.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
        assert_eq!(nonzeros.len(), 4);
        for v in nonzeros {
            assert_relative_eq!(v, 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn geometric_dynamic_range_is_bounded() {
        let model = CoefficientModel::geometric(4, 4.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1_000 {
            let c = draw_coefficients(&model, &mut rng);
            let mags: Vec<f64> = c.support.iter().map(|&k| c.x[k].abs()).collect();
            let ratio = mags[0] / mags[3];
            assert!(ratio <= 4.0 + 1e-12, "range {ratio} exceeds 4");
            assert_relative_eq!(c.x.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn support_is_uniform() {
        let model = CoefficientModel::flat(4, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut counts = [0usize; 16];
        for _ in 0..draws {
            let c = draw_coefficients(&model, &mut rng);
            for &k in &c.support {
                counts[k] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.01, "support frequency {freq}");
        }
    }

    #[test]
    fn noiseless_signal_is_exact_synthesis() {
        let dict = build_dirac_dct_dictionary(16, 16).unwrap();
        let model = CoefficientModel::flat(4, dict.n_atoms()).unwrap();
        let b = dict.operator_norm_squared();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let sig = draw_signal(&dict, &model, 0.0, &mut rng).unwrap();
            assert_eq!(sig.noise_norm, 0.0);
            assert!(sig.y.norm() <= (b + 1.0).sqrt());
            // reconstruct Phi x from the oracle metadata: magnitudes are flat
            let mut xhat = DVector::zeros(dict.n_atoms());
            for (&k, &s) in sig.oracle_support.iter().zip(&sig.oracle_signs) {
                xhat[k] = s * 0.5;
            }
            assert_relative_eq!((dict.atoms() * xhat - &sig.y).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn snr_is_four_at_quarter_noise_power() {
        let d = 32;
        let dict = build_dirac_dct_dictionary(d, d).unwrap();
        let model = CoefficientModel::flat(4, dict.n_atoms()).unwrap();
        let sigma = (1.0 / (4.0 * d as f64)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut signal_power = 0.0;
        let mut noise_power = 0.0;
        for _ in 0..draws {
            let c = draw_coefficients(&model, &mut rng);
            signal_power += (dict.atoms() * &c.x).norm_squared();
            let r_sq: f64 = (0..d)
                .map(|_| {
                    let r: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
                    r * r
                })
                .sum();
            noise_power += r_sq;
        }
        let snr = signal_power / noise_power;
        assert!((snr - 4.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn mean_signal_energy_is_bounded() {
        let dict = build_dirac_dct_dictionary(16, 16).unwrap();
        let model = CoefficientModel::flat(4, dict.n_atoms()).unwrap();
        let b = dict.operator_norm_squared();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 5_000;
        let mean: f64 = (0..draws)
            .map(|_| {
                draw_signal(&dict, &model, 0.125, &mut rng)
                    .unwrap()
                    .y
                    .norm_squared()
            })
            .sum::<f64>()
            / draws as f64;
        assert!(mean <= b + 1.0);
    }

    #[test]
    fn flat_gaps() {
        let model = CoefficientModel::flat(4, 16).unwrap();
        let g = gap_statistics(&model);
        assert_relative_eq!(g.absolute, 0.5, epsilon = 1e-14);
        assert_relative_eq!(g.relative, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn geometric_gaps_match_sequence_formula() {
        let model = CoefficientModel::geometric(4, 4.0, 16).unwrap();
        let g = gap_statistics(&model);
        // direct evaluation at the worst-case decay 1 - b = 4^{-1/3}
        let cb = 4.0_f64.powf(-1.0 / 3.0);
        let beta = ((1.0 - cb * cb) / (1.0 - cb.powi(8))).sqrt();
        assert_relative_eq!(g.absolute, beta * cb.powi(3), epsilon = 1e-12);
        assert_relative_eq!(g.relative, cb.powi(3), epsilon = 1e-12);
        assert!(g.relative > 0.0 && g.relative <= 1.0);
    }

    #[test]
    fn flat_statistics_are_closed_form() {
        let model = CoefficientModel::flat(9, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stats = coefficient_statistics(&model, 0.0, 32, 10, &mut rng).unwrap();
        assert_relative_eq!(stats.c_r1, 3.0, epsilon = 1e-14);
        assert_relative_eq!(stats.c_r2, 1.0, epsilon = 1e-14);
        assert_relative_eq!(stats.c_n, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn noise_shrinkage_respects_lower_bound() {
        let d = 64;
        let model = CoefficientModel::flat(4, 96).unwrap();
        let sigma = (1.0 / d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stats = coefficient_statistics(&model, sigma, d, 100_000, &mut rng).unwrap();
        assert!(
            stats.c_n >= stats.c_n_lower_bound,
            "C_n {} below bound {}",
            stats.c_n,
            stats.c_n_lower_bound
        );
    }

    #[test]
    fn draws_are_reproducible() {
        let dict = build_dirac_dct_dictionary(16, 16).unwrap();
        let model = CoefficientModel::geometric(4, 4.0, dict.n_atoms()).unwrap();
        let a = draw_signal(&dict, &model, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_signal(&dict, &model, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.oracle_support, b.oracle_support);
    }

    #[test]
    fn binary_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mat = DMatrix::from_fn(7, 5, |i, j| (i * 5 + j) as f64 * 0.25 - 3.0);
        write_matrix_binary(&path, &mat).unwrap();
        assert_eq!(read_matrix_binary(&path).unwrap(), mat);
    }

    proptest! {
        #[test]
        fn drawn_coefficients_have_unit_norm(
            seed in 0u64..1000,
            s in 1usize..8,
            range in 1.0f64..16.0,
            flat in proptest::bool::ANY,
        ) {
            let k = 24;
            let model = if flat {
                CoefficientModel::flat(s, k).unwrap()
            } else {
                CoefficientModel::geometric(s, range, k).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = draw_coefficients(&model, &mut rng);
            prop_assert!((c.x.norm() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(c.support.len(), s);
        }

        #[test]
        fn moment_bounds_hold(
            seed in 0u64..200,
            s in 1usize..8,
            range in 1.0f64..16.0,
        ) {
            let model = CoefficientModel::geometric(s, range, 24).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stats = coefficient_statistics(&model, 0.0, 16, 2_000, &mut rng).unwrap();
            let gaps = gap_statistics(&model);
            let sf = s as f64;
            // S * c(S) <= C_r1 <= sqrt(S), C_r2 <= 1 (with Monte Carlo slack)
            prop_assert!(sf * gaps.absolute <= stats.c_r1 + 1e-9);
            prop_assert!(stats.c_r1 <= sf.sqrt() + 1e-9);
            prop_assert!(stats.c_r2 <= 1.0 + 1e-9);
        }
    }
}
