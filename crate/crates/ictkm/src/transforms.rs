//! Fast orthogonal/circulant transform kernels.
//!
//! All transforms run in O(d log d) through the FFT, including non-power-of-two
//! lengths (rustfft falls back to mixed-radix/Bluestein internally).

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// The d x d matrix a JL embedding is subsampled from.
#[derive(Clone, Debug, PartialEq)]
pub enum TransformKind {
    /// Unitary DFT, normalized by 1/sqrt(d) so that O*O = I.
    UnitaryDft,
    /// Orthonormal DCT-II (first-row weight 1/sqrt(d), others sqrt(2/d)).
    OrthonormalDct2,
    /// Circulant convolution by a Rademacher filter with entries +-1/sqrt(d).
    CirculantRademacher(Vec<f64>),
}

/// Output of a forward transform: complex for the DFT, real otherwise.
#[derive(Clone, Debug)]
pub enum Spectrum {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Spectrum {
    pub fn len(&self) -> usize {
        match self {
            Spectrum::Real(v) => v.len(),
            Spectrum::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        match self {
            Spectrum::Real(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Spectrum::Complex(v) => v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Unnormalized DFT of a real vector.
pub(crate) fn fft_real(v: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan_forward(v.len()).process(&mut buf);
    buf
}

impl TransformKind {
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::invalid("transform length must be at least 1"));
        }
        if let TransformKind::CirculantRademacher(h) = self {
            if h.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: h.len(),
                    got: d,
                });
            }
        }
        Ok(())
    }

    /// Applies the transform matrix O to `v`.
    pub fn forward(&self, v: &[f64]) -> Result<Spectrum> {
        let d = v.len();
        self.check_dim(d)?;
        match self {
            TransformKind::UnitaryDft => {
                let mut buf = fft_real(v);
                let scale = 1.0 / (d as f64).sqrt();
                for x in &mut buf {
                    *x *= scale;
                }
                Ok(Spectrum::Complex(buf))
            }
            TransformKind::OrthonormalDct2 => Ok(Spectrum::Real(dct2_orthonormal(v))),
            TransformKind::CirculantRademacher(h) => Ok(Spectrum::Real(circular_convolve(h, v))),
        }
    }

    /// Applies O^{-1}; only defined for the orthogonal kinds.
    pub fn inverse(&self, w: &Spectrum) -> Result<Vec<f64>> {
        match (self, w) {
            (TransformKind::UnitaryDft, Spectrum::Complex(w)) => {
                let d = w.len();
                self.check_dim(d)?;
                let mut buf = w.clone();
                plan_inverse(d).process(&mut buf);
                let scale = 1.0 / (d as f64).sqrt();
                Ok(buf.iter().map(|x| x.re * scale).collect())
            }
            (TransformKind::OrthonormalDct2, Spectrum::Real(w)) => {
                self.check_dim(w.len())?;
                Ok(dct3_orthonormal(w))
            }
            (TransformKind::CirculantRademacher(_), _) => Err(Error::Unsupported(
                "circulant transform is not unitary; no inverse transform".into(),
            )),
            _ => Err(Error::invalid(
                "spectrum kind does not match transform kind",
            )),
        }
    }

    /// Operator norm of the d x d matrix O: one for the orthogonal kinds,
    /// the maximal DFT-filter modulus for the circulant.
    pub fn operator_norm(&self) -> f64 {
        match self {
            TransformKind::UnitaryDft | TransformKind::OrthonormalDct2 => 1.0,
            TransformKind::CirculantRademacher(h) => fft_real(h)
                .iter()
                .map(|x| x.norm())
                .fold(0.0_f64, f64::max),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, TransformKind::UnitaryDft)
    }

    /// Explicit d x d matrix; intended for small-d validation.
    pub fn dense_matrix(&self, d: usize) -> Result<DMatrix<Complex64>> {
        self.check_dim(d)?;
        let mat = match self {
            TransformKind::UnitaryDft => {
                let scale = 1.0 / (d as f64).sqrt();
                DMatrix::from_fn(d, d, |k, n| {
                    let angle = -2.0 * PI * (k as f64) * (n as f64) / d as f64;
                    Complex64::from_polar(scale, angle)
                })
            }
            TransformKind::OrthonormalDct2 => DMatrix::from_fn(d, d, |k, n| {
                let w = if k == 0 {
                    (1.0 / d as f64).sqrt()
                } else {
                    (2.0 / d as f64).sqrt()
                };
                let val = w * (PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * d as f64)).cos();
                Complex64::new(val, 0.0)
            }),
            TransformKind::CirculantRademacher(h) => {
                DMatrix::from_fn(d, d, |i, j| Complex64::new(h[(d + i - j) % d], 0.0))
            }
        };
        Ok(mat)
    }
}

/// Fills `buf` with the even-odd reordering v[n] = x[2n], v[d-1-n] = x[2n+1]
/// that turns a DCT-II into one length-d FFT plus a twiddle.
pub(crate) fn dct2_reorder(x: impl ExactSizeIterator<Item = f64>, buf: &mut [Complex64]) {
    let d = buf.len();
    for (n, v) in x.enumerate() {
        let slot = if n % 2 == 0 { n / 2 } else { d - 1 - n / 2 };
        buf[slot] = Complex64::new(v, 0.0);
    }
}

/// Orthonormal DCT-II via a length-d FFT of the even-odd reordered input:
/// C[k] = w_k Re(e^{-i pi k / (2d)} FFT(v)[k]).
pub(crate) fn dct2_orthonormal(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); d];
    dct2_reorder(v.iter().copied(), &mut buf);
    plan_forward(d).process(&mut buf);
    let w0 = (1.0 / d as f64).sqrt();
    let wk = (2.0 / d as f64).sqrt();
    (0..d)
        .map(|k| {
            let twiddle = Complex64::from_polar(1.0, -PI * k as f64 / (2.0 * d as f64));
            let t = (twiddle * buf[k]).re;
            if k == 0 {
                w0 * t
            } else {
                wk * t
            }
        })
        .collect()
}

/// Orthonormal DCT-III (the transpose/inverse of `dct2_orthonormal`).
pub(crate) fn dct3_orthonormal(c: &[f64]) -> Vec<f64> {
    let d = c.len();
    let w0 = (1.0 / d as f64).sqrt();
    let wk = (2.0 / d as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * d];
    for (k, &x) in c.iter().enumerate() {
        let w = if k == 0 { w0 } else { wk };
        buf[k] = Complex64::from_polar(w * x, PI * k as f64 / (2.0 * d as f64));
    }
    plan_inverse(2 * d).process(&mut buf);
    buf[..d].iter().map(|x| x.re).collect()
}

/// Circular convolution h * v through the FFT.
pub(crate) fn circular_convolve(h: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let hf = fft_real(h);
    let vf = fft_real(v);
    let mut buf: Vec<Complex64> = hf.iter().zip(&vf).map(|(a, b)| a * b).collect();
    plan_inverse(d).process(&mut buf);
    buf.iter().map(|x| x.re / d as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn rademacher_filter(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d as f64).sqrt();
        (0..d)
            .map(|_| if rng.random::<bool>() { s } else { -s })
            .collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn dft_of_impulse_is_constant() {
        let v = [1.0, 0.0, 0.0, 0.0];
        let w = TransformKind::UnitaryDft.forward(&v).unwrap();
        match w {
            Spectrum::Complex(w) => {
                for x in w {
                    assert_relative_eq!(x.re, 0.5, epsilon = 1e-14);
                    assert_relative_eq!(x.im, 0.0, epsilon = 1e-14);
                }
            }
            _ => panic!("dft output must be complex"),
        }
    }

    #[test]
    fn dct_matches_dense_matrix_column() {
        // column 2 of the explicit orthonormal DCT-II matrix, d = 4
        let d = 4;
        let kind = TransformKind::OrthonormalDct2;
        let dense = kind.dense_matrix(d).unwrap();
        let mut e2 = vec![0.0; d];
        e2[2] = 1.0;
        let w = match kind.forward(&e2).unwrap() {
            Spectrum::Real(w) => w,
            _ => panic!("dct output must be real"),
        };
        for k in 0..d {
            assert_relative_eq!(w[k], dense[(k, 2)].re, epsilon = 1e-12);
        }
    }

    #[test]
    fn circulant_convolution_identity() {
        let d = 8;
        let h = rademacher_filter(d, 3);
        let mut delta = vec![0.0; d];
        delta[0] = 1.0;
        let kind = TransformKind::CirculantRademacher(h.clone());
        match kind.forward(&delta).unwrap() {
            Spectrum::Real(w) => {
                for k in 0..d {
                    assert_relative_eq!(w[k], h[k], epsilon = 1e-12);
                }
            }
            _ => panic!("circulant output must be real"),
        }
    }

    #[test]
    fn dft_round_trip() {
        let v = random_vec(64, 7);
        let kind = TransformKind::UnitaryDft;
        let back = kind.inverse(&kind.forward(&v).unwrap()).unwrap();
        let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12 * norm(&v));
    }

    #[test]
    fn dct_round_trip() {
        let v = random_vec(64, 9);
        let kind = TransformKind::OrthonormalDct2;
        let back = kind.inverse(&kind.forward(&v).unwrap()).unwrap();
        let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12 * norm(&v));
    }

    #[test]
    fn dct_inverse_matches_dense_transpose() {
        let d = 8;
        let kind = TransformKind::OrthonormalDct2;
        let dense = kind.dense_matrix(d).unwrap().map(|x| x.re);
        let c = random_vec(d, 11);
        let back = kind.inverse(&Spectrum::Real(c.clone())).unwrap();
        let oracle = dense.transpose() * DVector::from_vec(c);
        for n in 0..d {
            assert_relative_eq!(back[n], oracle[n], epsilon = 1e-12);
        }
    }

    #[test]
    fn circulant_has_no_inverse() {
        let h = rademacher_filter(4, 1);
        let kind = TransformKind::CirculantRademacher(h);
        let w = Spectrum::Real(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(kind.inverse(&w), Err(Error::Unsupported(_))));
    }

    #[test]
    fn circulant_filter_length_checked() {
        let kind = TransformKind::CirculantRademacher(vec![0.5; 4]);
        assert!(matches!(
            kind.forward(&[1.0; 8]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_power_of_two_sizes() {
        for d in [3usize, 5, 12, 441, 1025] {
            let v = random_vec(d, d as u64);
            for kind in [TransformKind::UnitaryDft, TransformKind::OrthonormalDct2] {
                let w = kind.forward(&v).unwrap();
                assert_relative_eq!(w.norm(), norm(&v), epsilon = 1e-10 * norm(&v).max(1.0));
                let back = kind.inverse(&w).unwrap();
                let err: f64 =
                    v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "round trip failed for d = {d}");
            }
        }
    }

    #[test]
    fn circulant_operator_norm_matches_dense_svd() {
        for d in [4usize, 9, 16, 32] {
            let h = rademacher_filter(d, 100 + d as u64);
            let kind = TransformKind::CirculantRademacher(h);
            let dense = kind.dense_matrix(d).unwrap().map(|x| x.re);
            let svd_norm = dense.svd(false, false).singular_values[0];
            assert_relative_eq!(kind.operator_norm(), svd_norm, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn parseval_orthogonal_kinds(seed in 0u64..500, log_d in 2u32..11) {
            let d = 1usize << log_d;
            let v = random_vec(d, seed);
            for kind in [TransformKind::UnitaryDft, TransformKind::OrthonormalDct2] {
                let w = kind.forward(&v).unwrap();
                prop_assert!((w.norm() - norm(&v)).abs() < 1e-10 * norm(&v).max(1.0));
            }
        }

        #[test]
        fn linearity(seed in 0u64..500, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let d = 32;
            let u = random_vec(d, seed);
            let v = random_vec(d, seed.wrapping_add(1));
            let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let kinds = [
                TransformKind::UnitaryDft,
                TransformKind::OrthonormalDct2,
                TransformKind::CirculantRademacher(rademacher_filter(d, seed ^ 0xabc)),
            ];
            for kind in kinds {
                let tu = kind.forward(&u).unwrap();
                let tv = kind.forward(&v).unwrap();
                let tc = kind.forward(&combo).unwrap();
                match (tu, tv, tc) {
                    (Spectrum::Complex(tu), Spectrum::Complex(tv), Spectrum::Complex(tc)) => {
                        for k in 0..d {
                            let expect = alpha * tu[k] + beta * tv[k];
                            prop_assert!((tc[k] - expect).norm() < 1e-10);
                        }
                    }
                    (Spectrum::Real(tu), Spectrum::Real(tv), Spectrum::Real(tc)) => {
                        for k in 0..d {
                            let expect = alpha * tu[k] + beta * tv[k];
                            prop_assert!((tc[k] - expect).abs() < 1e-10);
                        }
                    }
                    _ => prop_assert!(false, "mismatched spectrum kinds"),
                }
            }
        }
    }
}
