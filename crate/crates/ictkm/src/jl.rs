//! Fast Johnson-Lindenstrauss embeddings of the factored form
//! scale * P_I * O * Pi: a random sign flip, a fast transform, and a random
//! row subsample.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{plan_forward, Spectrum, TransformKind};

/// Which transform the embedding subsamples; the circulant filter is drawn
/// fresh per embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformFamily {
    Dft,
    Dct,
    Circulant,
}

impl TransformFamily {
    pub fn is_orthogonal(self) -> bool {
        !matches!(self, TransformFamily::Circulant)
    }
}

impl std::str::FromStr for TransformFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dft" => Ok(TransformFamily::Dft),
            "dct" => Ok(TransformFamily::Dct),
            "circulant" | "crt" => Ok(TransformFamily::Circulant),
            other => Err(Error::invalid(format!("unknown transform family: {other}"))),
        }
    }
}

impl std::fmt::Display for TransformFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransformFamily::Dft => write!(f, "dft"),
            TransformFamily::Dct => write!(f, "dct"),
            TransformFamily::Circulant => write!(f, "circulant"),
        }
    }
}

/// A drawn embedding. Immutable after `draw`; applying it to disjoint signals
/// concurrently is safe.
#[derive(Clone, Debug)]
pub struct JlEmbedding {
    kind: TransformKind,
    ambient_dim: usize,
    embedding_dim: usize,
    rows: Vec<usize>,
    signs: Vec<f64>,
    scale: f64,
}

/// Embedded vector; complex iff the embedding is DFT-based.
#[derive(Clone, Debug)]
pub enum EmbeddedVec {
    Real(DVector<f64>),
    Complex { re: DVector<f64>, im: DVector<f64> },
}

impl EmbeddedVec {
    pub fn len(&self) -> usize {
        match self {
            EmbeddedVec::Real(v) => v.len(),
            EmbeddedVec::Complex { re, .. } => re.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm_squared(&self) -> f64 {
        match self {
            EmbeddedVec::Real(v) => v.norm_squared(),
            EmbeddedVec::Complex { re, im } => re.norm_squared() + im.norm_squared(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

/// Column-wise embedded matrix; the complex case keeps real and imaginary
/// parts separate so inner products run through real matrix products.
#[derive(Clone, Debug)]
pub enum EmbeddedMat {
    Real(DMatrix<f64>),
    Complex { re: DMatrix<f64>, im: DMatrix<f64> },
}

impl EmbeddedMat {
    pub fn ncols(&self) -> usize {
        match self {
            EmbeddedMat::Real(m) => m.ncols(),
            EmbeddedMat::Complex { re, .. } => re.ncols(),
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            EmbeddedMat::Real(m) => m.nrows(),
            EmbeddedMat::Complex { re, .. } => re.nrows(),
        }
    }

    pub fn column(&self, j: usize) -> EmbeddedVec {
        match self {
            EmbeddedMat::Real(m) => EmbeddedVec::Real(m.column(j).into_owned()),
            EmbeddedMat::Complex { re, im } => EmbeddedVec::Complex {
                re: re.column(j).into_owned(),
                im: im.column(j).into_owned(),
            },
        }
    }

    pub fn column_norm_squared(&self, j: usize) -> f64 {
        match self {
            EmbeddedMat::Real(m) => m.column(j).norm_squared(),
            EmbeddedMat::Complex { re, im } => {
                re.column(j).norm_squared() + im.column(j).norm_squared()
            }
        }
    }
}

/// Draws a fresh embedding: new signs, new row subset, and (for the
/// circulant family) a new Rademacher filter.
pub fn draw_embedding<R: Rng + ?Sized>(
    family: TransformFamily,
    ambient_dim: usize,
    embedding_dim: usize,
    rng: &mut R,
) -> Result<JlEmbedding> {
    if embedding_dim == 0 || embedding_dim > ambient_dim {
        return Err(Error::invalid(format!(
            "embedding dimension must satisfy 1 <= m <= d, got m = {embedding_dim}, d = {ambient_dim}"
        )));
    }
    let signs: Vec<f64> = (0..ambient_dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    // partial Fisher-Yates: m distinct rows, uniform without replacement
    let mut idx: Vec<usize> = (0..ambient_dim).collect();
    for i in 0..embedding_dim {
        let j = rng.random_range(i..ambient_dim);
        idx.swap(i, j);
    }
    let mut rows: Vec<usize> = idx[..embedding_dim].to_vec();
    rows.sort_unstable();
    let kind = match family {
        TransformFamily::Dft => TransformKind::UnitaryDft,
        TransformFamily::Dct => TransformKind::OrthonormalDct2,
        TransformFamily::Circulant => {
            let s = 1.0 / (ambient_dim as f64).sqrt();
            let filter = (0..ambient_dim)
                .map(|_| if rng.random::<bool>() { s } else { -s })
                .collect();
            TransformKind::CirculantRademacher(filter)
        }
    };
    Ok(JlEmbedding {
        kind,
        ambient_dim,
        embedding_dim,
        rows,
        signs,
        scale: (ambient_dim as f64 / embedding_dim as f64).sqrt(),
    })
}

impl JlEmbedding {
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kind(&self) -> &TransformKind {
        &self.kind
    }

    pub fn is_complex(&self) -> bool {
        self.kind.is_complex()
    }

    /// Applies the embedding to one vector.
    pub fn embed(&self, v: &DVector<f64>) -> Result<EmbeddedVec> {
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: v.len(),
            });
        }
        let flipped: Vec<f64> = v
            .iter()
            .zip(&self.signs)
            .map(|(x, s)| x * s)
            .collect();
        match self.kind.forward(&flipped)? {
            Spectrum::Real(w) => Ok(EmbeddedVec::Real(DVector::from_iterator(
                self.embedding_dim,
                self.rows.iter().map(|&r| self.scale * w[r]),
            ))),
            Spectrum::Complex(w) => Ok(EmbeddedVec::Complex {
                re: DVector::from_iterator(
                    self.embedding_dim,
                    self.rows.iter().map(|&r| self.scale * w[r].re),
                ),
                im: DVector::from_iterator(
                    self.embedding_dim,
                    self.rows.iter().map(|&r| self.scale * w[r].im),
                ),
            }),
        }
    }

    /// Column-wise embedding of a d x n matrix into m x n.
    pub fn embed_columns(&self, mat: &DMatrix<f64>) -> Result<EmbeddedMat> {
        let (d, n) = mat.shape();
        if d != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: d,
            });
        }
        let m = self.embedding_dim;
        // One FFT per column with shared plan and scratch.
        match &self.kind {
            TransformKind::UnitaryDft => {
                let fft = plan_forward(d);
                let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
                let mut buf = vec![Complex64::ZERO; d];
                let mut re = DMatrix::zeros(m, n);
                let mut im = DMatrix::zeros(m, n);
                let dft_scale = self.scale / (d as f64).sqrt();
                for j in 0..n {
                    let col = mat.column(j);
                    for i in 0..d {
                        buf[i] = Complex64::new(col[i] * self.signs[i], 0.0);
                    }
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    for (out_i, &r) in self.rows.iter().enumerate() {
                        re[(out_i, j)] = dft_scale * buf[r].re;
                        im[(out_i, j)] = dft_scale * buf[r].im;
                    }
                }
                Ok(EmbeddedMat::Complex { re, im })
            }
            TransformKind::OrthonormalDct2 => {
                let fft = plan_forward(d);
                let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
                let mut buf = vec![Complex64::ZERO; d];
                let mut out = DMatrix::zeros(m, n);
                let w0 = (1.0 / d as f64).sqrt();
                let wk = (2.0 / d as f64).sqrt();
                let twiddles: Vec<Complex64> = self
                    .rows
                    .iter()
                    .map(|&k| {
                        Complex64::from_polar(
                            1.0,
                            -std::f64::consts::PI * k as f64 / (2.0 * d as f64),
                        )
                    })
                    .collect();
                let mut j = 0;
                while j < n {
                    if j + 1 < n {
                        // two real columns per complex FFT, separated through
                        // conjugate symmetry afterwards
                        let (ca, cb) = (mat.column(j), mat.column(j + 1));
                        for i in 0..d {
                            let slot = if i % 2 == 0 { i / 2 } else { d - 1 - i / 2 };
                            buf[slot] =
                                Complex64::new(ca[i] * self.signs[i], cb[i] * self.signs[i]);
                        }
                        fft.process_with_scratch(&mut buf, &mut scratch);
                        for (out_i, (&r, tw)) in self.rows.iter().zip(&twiddles).enumerate() {
                            let w = if r == 0 { w0 } else { wk };
                            let v = buf[r];
                            let vc = buf[(d - r) % d].conj();
                            let va = (v + vc) * 0.5;
                            let vb = (v - vc) * Complex64::new(0.0, -0.5);
                            out[(out_i, j)] = self.scale * w * (tw * va).re;
                            out[(out_i, j + 1)] = self.scale * w * (tw * vb).re;
                        }
                        j += 2;
                    } else {
                        let col = mat.column(j);
                        crate::transforms::dct2_reorder(
                            (0..d).map(|i| col[i] * self.signs[i]),
                            &mut buf,
                        );
                        fft.process_with_scratch(&mut buf, &mut scratch);
                        for (out_i, (&r, tw)) in self.rows.iter().zip(&twiddles).enumerate() {
                            let w = if r == 0 { w0 } else { wk };
                            out[(out_i, j)] = self.scale * w * (tw * buf[r]).re;
                        }
                        j += 1;
                    }
                }
                Ok(EmbeddedMat::Real(out))
            }
            TransformKind::CirculantRademacher(h) => {
                let fft = plan_forward(d);
                let ifft = crate::transforms::plan_inverse(d);
                let mut hf: Vec<Complex64> =
                    h.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                fft.process(&mut hf);
                let mut scratch = vec![
                    Complex64::ZERO;
                    fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len())
                ];
                let mut buf = vec![Complex64::ZERO; d];
                let mut out = DMatrix::zeros(m, n);
                let inv_d = 1.0 / d as f64;
                for j in 0..n {
                    let col = mat.column(j);
                    for i in 0..d {
                        buf[i] = Complex64::new(col[i] * self.signs[i], 0.0);
                    }
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    for (b, hk) in buf.iter_mut().zip(&hf) {
                        *b *= hk;
                    }
                    ifft.process_with_scratch(&mut buf, &mut scratch);
                    for (out_i, &r) in self.rows.iter().enumerate() {
                        out[(out_i, j)] = self.scale * inv_d * buf[r].re;
                    }
                }
                Ok(EmbeddedMat::Real(out))
            }
        }
    }

    /// Operator norm bound from the three factors: exactly `scale` for the
    /// orthogonal kinds, `scale` times the maximal DFT-filter modulus for the
    /// circulant (equality at m = d).
    pub fn operator_norm(&self) -> f64 {
        self.scale * self.kind.operator_norm()
    }

    /// Explicit m x d matrix; intended for small-d validation.
    pub fn dense_matrix(&self) -> Result<DMatrix<Complex64>> {
        let full = self.kind.dense_matrix(self.ambient_dim)?;
        let mut out = DMatrix::zeros(self.embedding_dim, self.ambient_dim);
        for (i, &r) in self.rows.iter().enumerate() {
            for j in 0..self.ambient_dim {
                out[(i, j)] = full[(r, j)] * self.scale * self.signs[j];
            }
        }
        Ok(out)
    }
}

/// |<u_k, w>| for every column u_k of the embedded dictionary (complex
/// modulus for DFT embeddings).
pub fn inner_products(dict: &EmbeddedMat, w: &EmbeddedVec) -> Result<Vec<f64>> {
    if dict.nrows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: dict.nrows(),
            got: w.len(),
        });
    }
    let signal = match w {
        EmbeddedVec::Real(v) => EmbeddedMat::Real(DMatrix::from_column_slice(v.len(), 1, v.as_slice())),
        EmbeddedVec::Complex { re, im } => EmbeddedMat::Complex {
            re: DMatrix::from_column_slice(re.len(), 1, re.as_slice()),
            im: DMatrix::from_column_slice(im.len(), 1, im.as_slice()),
        },
    };
    let mags = inner_product_magnitudes(dict, &signal)?;
    Ok(mags.column(0).iter().copied().collect())
}

/// K x n matrix of |<u_k, w_j>| for embedded dictionary columns against a
/// batch of embedded signals; the workhorse behind compressed thresholding.
pub fn inner_product_magnitudes(dict: &EmbeddedMat, signals: &EmbeddedMat) -> Result<DMatrix<f64>> {
    if dict.nrows() != signals.nrows() {
        return Err(Error::DimensionMismatch {
            expected: dict.nrows(),
            got: signals.nrows(),
        });
    }
    match (dict, signals) {
        (EmbeddedMat::Real(u), EmbeddedMat::Real(w)) => {
            let mut g = DMatrix::zeros(u.ncols(), w.ncols());
            g.gemm(1.0, &u.transpose(), w, 0.0);
            g.apply(|x| *x = x.abs());
            Ok(g)
        }
        (
            EmbeddedMat::Complex { re: ur, im: ui },
            EmbeddedMat::Complex { re: wr, im: wi },
        ) => {
            let urt = ur.transpose();
            let uit = ui.transpose();
            // <u, w> with conjugation on u: re = ur.wr + ui.wi, im = ur.wi - ui.wr
            let mut g_re = DMatrix::zeros(ur.ncols(), wr.ncols());
            g_re.gemm(1.0, &urt, wr, 0.0);
            g_re.gemm(1.0, &uit, wi, 1.0);
            let mut g_im = DMatrix::zeros(ur.ncols(), wr.ncols());
            g_im.gemm(1.0, &urt, wi, 0.0);
            g_im.gemm(-1.0, &uit, wr, 1.0);
            g_re.zip_apply(&g_im, |a, b| *a = a.hypot(b));
            Ok(g_re)
        }
        _ => Err(Error::invalid(
            "embedded dictionary and signals come from different embedding kinds",
        )),
    }
}

/// Evaluates the theorem-style embedding-dimension bound with caller-supplied
/// constant, rounded up and clamped to [1, d]. Natural logarithms.
pub fn recommended_embedding_dim(
    family: TransformFamily,
    distortion: f64,
    n_points: f64,
    failure_prob: f64,
    ambient_dim: usize,
    constant: f64,
) -> Result<usize> {
    if !(distortion > 0.0 && distortion < 1.0) {
        return Err(Error::invalid("distortion must lie in (0, 1)"));
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::invalid("failure probability must lie in (0, 1)"));
    }
    if n_points < 1.0 || constant <= 0.0 || ambient_dim < 2 {
        return Err(Error::invalid(
            "need n_points >= 1, constant > 0 and ambient_dim >= 2",
        ));
    }
    let inv = 1.0 / distortion;
    let lp = (n_points / failure_prob).ln();
    let ld = (ambient_dim as f64).ln();
    let raw = match family {
        TransformFamily::Dft | TransformFamily::Dct => {
            constant * inv * inv * inv.ln().powi(2) * lp * (inv * lp).ln().powi(2) * ld
        }
        TransformFamily::Circulant => constant * inv * inv * lp * lp.ln().powi(2) * ld * ld,
    };
    if !raw.is_finite() {
        return Err(Error::invalid("embedding-dimension bound is not finite"));
    }
    Ok((raw.ceil().max(1.0) as usize).min(ambient_dim))
}

/// Repeated-audit helper: caches the original pairwise geometry once so each
/// drawn embedding only costs one embedding pass and one Gram product.
pub struct DistortionAuditor {
    points: DMatrix<f64>,
    orig_gram: DMatrix<f64>,
    orig_norm2: Vec<f64>,
    tol: f64,
}

impl DistortionAuditor {
    pub fn new(points: &[DVector<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = points[0].len();
        for x in points {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        let p = points.len();
        let mut x = DMatrix::zeros(d, p);
        for (j, v) in points.iter().enumerate() {
            x.set_column(j, v);
        }
        let orig_gram = x.transpose() * &x;
        let orig_norm2: Vec<f64> = (0..p).map(|j| orig_gram[(j, j)]).collect();
        let scale2 = orig_norm2.iter().cloned().fold(0.0_f64, f64::max);
        Ok(Self {
            points: x,
            orig_gram,
            orig_norm2,
            tol: 1e-14 * scale2.max(1e-300),
        })
    }

    pub fn n_points(&self) -> usize {
        self.points.ncols()
    }

    /// max over unordered point pairs of | ||P(x - y)||^2 / ||x - y||^2 - 1 |.
    pub fn max_distortion(&self, embedding: &JlEmbedding) -> Result<f64> {
        let p = self.n_points();
        if p < 2 {
            return Ok(0.0);
        }
        if embedding.ambient_dim() != self.points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.points.nrows(),
                got: embedding.ambient_dim(),
            });
        }
        let emb = embedding.embed_columns(&self.points)?;
        let emb_gram: DMatrix<f64> = match &emb {
            EmbeddedMat::Real(e) => e.transpose() * e,
            EmbeddedMat::Complex { re, im } => {
                re.transpose() * re + im.transpose() * im
            }
        };
        let emb_norm2: Vec<f64> = (0..p).map(|j| emb_gram[(j, j)]).collect();
        let max_dev = (1..p)
            .into_par_iter()
            .map(|j| {
                let mut local: f64 = 0.0;
                for i in 0..j {
                    let orig = self.orig_norm2[i] + self.orig_norm2[j]
                        - 2.0 * self.orig_gram[(i, j)];
                    if orig <= self.tol {
                        continue;
                    }
                    let embd = emb_norm2[i] + emb_norm2[j] - 2.0 * emb_gram[(i, j)];
                    local = local.max((embd / orig - 1.0).abs());
                }
                local
            })
            .reduce(|| 0.0, f64::max);
        Ok(max_dev)
    }
}

/// Maximal relative squared-norm distortion of pairwise differences:
/// max over pairs of | ||P(x - y)||^2 / ||x - y||^2 - 1 |.
pub fn distortion_audit(embedding: &JlEmbedding, points: &[DVector<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Ok(0.0);
    }
    DistortionAuditor::new(points)?.max_distortion(embedding)
}

/// The 4K^2 sums, differences, and perturbation directions whose pairwise
/// geometry the embedding has to preserve: {a_k + a_j}, {a_k - a_j : k != j},
/// {a_k + z_j}, {a_k - z_j}, {z_k}. `z` supplies one direction per atom.
pub fn jl_test_vectors(atoms: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    if atoms.shape() != z.shape() {
        return Err(Error::invalid(
            "atoms and perturbation directions must have matching shapes",
        ));
    }
    let k = atoms.ncols();
    let mut out = Vec::with_capacity(4 * k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(atoms.column(i) + atoms.column(j));
            if i != j {
                out.push(atoms.column(i) - atoms.column(j));
            }
            out.push(atoms.column(i) + z.column(j));
            out.push(atoms.column(i) - z.column(j));
        }
        out.push(z.column(i).into_owned());
    }
    debug_assert_eq!(out.len(), 4 * k * k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(d: usize, rng: &mut impl Rng) -> DVector<f64> {
        let v = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let n = v.norm();
        v / n
    }

    #[test]
    fn draw_is_deterministic_given_seed() {
        let a = draw_embedding(TransformFamily::Dct, 256, 52, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = draw_embedding(TransformFamily::Dct, 256, 52, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a.rows(), b.rows());
        assert_eq!(a.signs(), b.signs());
        assert_eq!(a.kind(), b.kind());
    }

    #[test]
    fn full_dimension_is_identity_rows() {
        let e = draw_embedding(TransformFamily::Dct, 16, 16, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(e.rows(), (0..16).collect::<Vec<_>>());
        assert_relative_eq!(e.scale(), 1.0);
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(draw_embedding(TransformFamily::Dct, 8, 0, &mut rng).is_err());
        assert!(draw_embedding(TransformFamily::Dct, 8, 9, &mut rng).is_err());
    }

    #[test]
    fn row_sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 8];
        let draws = 10_000;
        for _ in 0..draws {
            let e = draw_embedding(TransformFamily::Dct, 8, 2, &mut rng).unwrap();
            for &r in e.rows() {
                counts[r] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "row frequency {freq} off from 1/4");
        }
    }

    #[test]
    fn full_dimension_orthogonal_embed_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in [TransformFamily::Dft, TransformFamily::Dct] {
            let e = draw_embedding(family, 64, 64, &mut rng).unwrap();
            for _ in 0..5 {
                let v = random_unit(64, &mut rng) * 3.0;
                let w = e.embed(&v).unwrap();
                assert_relative_eq!(w.norm(), v.norm(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn embed_matches_dense_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for family in [
            TransformFamily::Dft,
            TransformFamily::Dct,
            TransformFamily::Circulant,
        ] {
            let e = draw_embedding(family, 16, 4, &mut rng).unwrap();
            let dense = e.dense_matrix().unwrap();
            for _ in 0..20 {
                let v = random_unit(16, &mut rng);
                let vc = v.map(|x| Complex64::new(x, 0.0));
                let oracle = &dense * &vc;
                match e.embed(&v).unwrap() {
                    EmbeddedVec::Real(w) => {
                        for i in 0..4 {
                            assert_relative_eq!(w[i], oracle[i].re, epsilon = 1e-10);
                            assert!(oracle[i].im.abs() < 1e-12);
                        }
                    }
                    EmbeddedVec::Complex { re, im } => {
                        for i in 0..4 {
                            assert_relative_eq!(re[i], oracle[i].re, epsilon = 1e-10);
                            assert_relative_eq!(im[i], oracle[i].im, epsilon = 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn embed_columns_matches_embed() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for family in [
            TransformFamily::Dft,
            TransformFamily::Dct,
            TransformFamily::Circulant,
        ] {
            let e = draw_embedding(family, 24, 7, &mut rng).unwrap();
            let m = DMatrix::from_fn(24, 5, |_, _| rng.random::<f64>() - 0.5);
            let cols = e.embed_columns(&m).unwrap();
            for j in 0..5 {
                let single = e.embed(&m.column(j).into_owned()).unwrap();
                let batch = cols.column(j);
                match (single, batch) {
                    (EmbeddedVec::Real(a), EmbeddedVec::Real(b)) => {
                        assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12)
                    }
                    (
                        EmbeddedVec::Complex { re: ar, im: ai },
                        EmbeddedVec::Complex { re: br, im: bi },
                    ) => {
                        assert_relative_eq!((ar - br).norm(), 0.0, epsilon = 1e-12);
                        assert_relative_eq!((ai - bi).norm(), 0.0, epsilon = 1e-12);
                    }
                    _ => panic!("mismatched embed outputs"),
                }
            }
        }
    }

    #[test]
    fn squared_norm_is_unbiased() {
        // E ||P v||^2 = ||v||^2 over fresh draws
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let v = random_unit(64, &mut rng);
        let mut acc = 0.0;
        let draws = 2_000;
        for _ in 0..draws {
            let e = draw_embedding(TransformFamily::Dct, 64, 16, &mut rng).unwrap();
            acc += e.embed(&v).unwrap().norm_squared();
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean squared norm {mean}");
    }

    #[test]
    fn inner_products_match_uncompressed_at_full_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let d = 32;
        let k = 12;
        let dict = DMatrix::from_fn(d, k, |_, _| rng.random::<f64>() - 0.5);
        let y = random_unit(d, &mut rng);
        for family in [TransformFamily::Dft, TransformFamily::Dct] {
            let e = draw_embedding(family, d, d, &mut rng).unwrap();
            let ed = e.embed_columns(&dict).unwrap();
            let ey = e.embed(&y).unwrap();
            let mags = inner_products(&ed, &ey).unwrap();
            for j in 0..k {
                let exact = dict.column(j).dot(&y).abs();
                assert_relative_eq!(mags[j], exact, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn inner_products_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let d = 16;
        let k = 6;
        let dict = DMatrix::from_fn(d, k, |_, _| rng.random::<f64>() - 0.5);
        let y = random_unit(d, &mut rng);
        for family in [
            TransformFamily::Dft,
            TransformFamily::Dct,
            TransformFamily::Circulant,
        ] {
            let e = draw_embedding(family, d, 8, &mut rng).unwrap();
            let dense = e.dense_matrix().unwrap();
            let yc = y.map(|x| Complex64::new(x, 0.0));
            let ey_dense = &dense * &yc;
            let ed = e.embed_columns(&dict).unwrap();
            let ey = e.embed(&y).unwrap();
            let mags = inner_products(&ed, &ey).unwrap();
            for j in 0..k {
                let col = dict.column(j).map(|x| Complex64::new(x, 0.0));
                let ecol = &dense * &col;
                let ip: Complex64 = ecol
                    .iter()
                    .zip(ey_dense.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                assert_relative_eq!(mags[j], ip.norm(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_signal_gives_zero_magnitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = DMatrix::from_fn(16, 5, |_, _| rng.random::<f64>() - 0.5);
        let e = draw_embedding(TransformFamily::Dft, 16, 8, &mut rng).unwrap();
        let ed = e.embed_columns(&dict).unwrap();
        let ey = e.embed(&DVector::zeros(16)).unwrap();
        for m in inner_products(&ed, &ey).unwrap() {
            assert!(m.abs() < 1e-300);
        }
    }

    #[test]
    fn operator_norm_orthogonal_is_scale() {
        let e = draw_embedding(TransformFamily::Dct, 256, 64, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_relative_eq!(e.operator_norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn operator_norm_circulant_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in [8usize, 16, 32] {
            // equality at m = d, upper bound below
            let e = draw_embedding(TransformFamily::Circulant, d, d, &mut rng).unwrap();
            let dense = e.dense_matrix().unwrap().map(|x| x.re);
            let svd_norm = dense.svd(false, false).singular_values[0];
            assert_relative_eq!(e.operator_norm(), svd_norm, epsilon = 1e-10);

            let e = draw_embedding(TransformFamily::Circulant, d, d / 2, &mut rng).unwrap();
            let dense = e.dense_matrix().unwrap().map(|x| x.re);
            let svd_norm = dense.svd(false, false).singular_values[0];
            assert!(e.operator_norm() >= svd_norm - 1e-10);
        }
    }

    #[test]
    fn circulant_norm_is_logarithmic_in_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 1024;
        let m = 256;
        let rho = (d as f64 / m as f64).sqrt();
        let mut norms: Vec<f64> = (0..100)
            .map(|_| {
                draw_embedding(TransformFamily::Circulant, d, m, &mut rng)
                    .unwrap()
                    .operator_norm()
            })
            .collect();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = norms[norms.len() / 2];
        assert!(median <= rho * (4.0 * (d as f64).ln()).sqrt());
    }

    #[test]
    fn recommended_dim_matches_closed_form() {
        // straight-line evaluation of the orthogonal bound,
        // delta = 0.5, p = 100, theta = 0.1, d = 1024, C = 1
        let inv: f64 = 2.0;
        let lp = (100.0_f64 / 0.1).ln();
        let expected = (inv * inv
            * inv.ln().powi(2)
            * lp
            * (inv * lp).ln().powi(2)
            * 1024.0_f64.ln())
        .ceil() as usize;
        let got =
            recommended_embedding_dim(TransformFamily::Dct, 0.5, 100.0, 0.1, 1024, 1.0).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn recommended_dim_monotone_and_clamped() {
        let mut last = usize::MAX;
        for delta in [0.05, 0.1, 0.2, 0.3, 0.5] {
            let m = recommended_embedding_dim(TransformFamily::Dct, delta, 1000.0, 0.05, 4096, 1.0)
                .unwrap();
            assert!(m <= last, "m must be non-increasing in delta");
            assert!(m >= 1 && m <= 4096);
            last = m;
        }
        // huge constant clamps to d
        let m = recommended_embedding_dim(TransformFamily::Circulant, 0.1, 1e6, 0.01, 64, 1e9)
            .unwrap();
        assert_eq!(m, 64);
    }

    #[test]
    fn audit_is_zero_at_full_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pts: Vec<DVector<f64>> = (0..10).map(|_| random_unit(32, &mut rng)).collect();
        let e = draw_embedding(TransformFamily::Dct, 32, 32, &mut rng).unwrap();
        assert!(distortion_audit(&e, &pts).unwrap() <= 1e-10);
    }

    #[test]
    fn audit_matches_direct_pairwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pts: Vec<DVector<f64>> = (0..12).map(|_| random_unit(24, &mut rng)).collect();
        let e = draw_embedding(TransformFamily::Dct, 24, 10, &mut rng).unwrap();
        let fast = distortion_audit(&e, &pts).unwrap();
        let mut slow: f64 = 0.0;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let diff = &pts[i] - &pts[j];
                let orig = diff.norm_squared();
                if orig < 1e-18 {
                    continue;
                }
                let emb = e.embed(&diff).unwrap().norm_squared();
                slow = slow.max((emb / orig - 1.0).abs());
            }
        }
        assert_relative_eq!(fast, slow, epsilon = 1e-10);
    }
}
