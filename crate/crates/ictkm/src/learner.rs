//! The dictionary-learning iteration: thresholding (plain and compressed),
//! K residual means, degenerate-atom replacement, and normalization.

use std::io::{BufWriter, Read as _, Write as _};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{dictionary_distance, recovery_rate};
use crate::jl::{
    draw_embedding, inner_product_magnitudes, EmbeddedMat, EmbeddedVec, JlEmbedding,
    TransformFamily,
};

const UNIT_NORM_TOL: f64 = 1e-12;
const EIGEN_TRUNCATION: f64 = 1e-10;
const DEGENERATE_SCALE: f64 = 1e-10;

/// The current dictionary iterate; columns stay unit-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct DictionaryState {
    atoms: DMatrix<f64>,
}

impl DictionaryState {
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::invalid("dictionary must be non-empty"));
        }
        for j in 0..atoms.ncols() {
            let n = atoms.column(j).norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "column {j} has norm {n}, expected unit norm"
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Random initialization with i.i.d. Gaussian unit-norm columns.
    pub fn random<R: Rng + ?Sized>(signal_dim: usize, n_atoms: usize, rng: &mut R) -> Self {
        let mut atoms = DMatrix::zeros(signal_dim, n_atoms);
        for j in 0..n_atoms {
            atoms.set_column(j, &random_unit_vector(signal_dim, rng));
        }
        Self { atoms }
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
}

fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Whether each iteration sees new signals or the same finite corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    FreshPerIteration,
    FixedDataset,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub sparsity: usize,
    pub compressed: bool,
    pub family: TransformFamily,
    pub embedding_dim: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub seed: u64,
    /// Signals per streamed block inside one iteration.
    pub chunk_size: usize,
    /// Stop early once recovery against the reference reaches this rate.
    pub stop_at_recovery: Option<f64>,
}

impl LearnerConfig {
    pub fn uncompressed(sparsity: usize, iterations: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            sparsity,
            compressed: false,
            family: TransformFamily::Dct,
            embedding_dim: 0,
            iterations,
            batch_size,
            batch_mode: BatchMode::FreshPerIteration,
            seed,
            chunk_size: 512,
            stop_at_recovery: None,
        }
    }

    pub fn compressed(
        sparsity: usize,
        family: TransformFamily,
        embedding_dim: usize,
        iterations: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            compressed: true,
            family,
            embedding_dim,
            ..Self::uncompressed(sparsity, iterations, batch_size, seed)
        }
    }

    fn validate(&self, signal_dim: usize, n_atoms: usize) -> Result<()> {
        if self.sparsity == 0 || self.sparsity >= n_atoms {
            return Err(Error::invalid(format!(
                "sparsity must satisfy 1 <= S < K, got S = {}, K = {n_atoms}",
                self.sparsity
            )));
        }
        if self.compressed && (self.embedding_dim == 0 || self.embedding_dim > signal_dim) {
            return Err(Error::invalid(format!(
                "embedding dimension must satisfy 1 <= m <= d, got m = {}, d = {signal_dim}",
                self.embedding_dim
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk size must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub wall_secs: f64,
    pub thresholding_secs: f64,
    pub selection_counts: Vec<usize>,
    pub replaced_atoms: usize,
    pub distance: Option<f64>,
    pub recovery: Option<f64>,
}

/// Indices of the S largest values, ties broken toward the smaller index;
/// returned sorted ascending.
pub(crate) fn select_top_s(values: &[f64], s: usize) -> Vec<usize> {
    debug_assert!(s <= values.len());
    // kept sorted by value descending; equal values stay in arrival
    // (= ascending index) order, which realizes the tie rule
    let mut kept: Vec<(f64, usize)> = Vec::with_capacity(s + 1);
    for (i, &v) in values.iter().enumerate() {
        if kept.len() == s && v <= kept[s - 1].0 {
            continue;
        }
        let pos = kept.partition_point(|&(kv, _)| kv >= v);
        kept.insert(pos, (v, i));
        kept.truncate(s);
    }
    let mut idx: Vec<usize> = kept.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// Support via the S largest |<psi_k, y>|.
pub fn threshold_support(dict: &DictionaryState, y: &DVector<f64>, s: usize) -> Result<Vec<usize>> {
    if y.len() != dict.signal_dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.signal_dim(),
            got: y.len(),
        });
    }
    if s > dict.n_atoms() {
        return Err(Error::invalid("sparsity exceeds the number of atoms"));
    }
    let ips = dict.atoms().transpose() * y;
    let mags: Vec<f64> = ips.iter().map(|v| v.abs()).collect();
    Ok(select_top_s(&mags, s))
}

/// Same selection from embedded atoms and an embedded signal (complex modulus
/// for the DFT kind).
pub fn compressed_threshold_support(
    embedded_dict: &EmbeddedMat,
    embedded_signal: &EmbeddedVec,
    s: usize,
) -> Result<Vec<usize>> {
    if s > embedded_dict.ncols() {
        return Err(Error::invalid("sparsity exceeds the number of atoms"));
    }
    let mags = crate::jl::inner_products(embedded_dict, embedded_signal)?;
    Ok(select_top_s(&mags, s))
}

/// Supports for a whole batch of raw signals, computed via one matrix product
/// per chunk.
pub fn threshold_supports_batch(
    dict: &DictionaryState,
    signals: &DMatrix<f64>,
    s: usize,
) -> Result<Vec<Vec<usize>>> {
    if signals.nrows() != dict.signal_dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.signal_dim(),
            got: signals.nrows(),
        });
    }
    if s > dict.n_atoms() {
        return Err(Error::invalid("sparsity exceeds the number of atoms"));
    }
    let dict_t = dict.atoms().transpose();
    let k = dict.n_atoms();
    let n = signals.ncols();
    let mut out = Vec::with_capacity(n);
    let chunk = 512;
    let mut g = DMatrix::zeros(k, chunk.min(n.max(1)));
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        if g.ncols() != len {
            g = DMatrix::zeros(k, len);
        }
        g.gemm(1.0, &dict_t, &signals.columns(start, len), 0.0);
        for j in 0..len {
            let mags: Vec<f64> = g.column(j).iter().map(|v| v.abs()).collect();
            out.push(select_top_s(&mags, s));
        }
    }
    Ok(out)
}

/// Compressed analogue of [`threshold_supports_batch`]: embeds dictionary and
/// signals, then selects from the embedded inner-product magnitudes.
pub fn compressed_threshold_supports_batch(
    embedding: &JlEmbedding,
    dict: &DictionaryState,
    signals: &DMatrix<f64>,
    s: usize,
) -> Result<Vec<Vec<usize>>> {
    if s > dict.n_atoms() {
        return Err(Error::invalid("sparsity exceeds the number of atoms"));
    }
    let embedded_dict = embedding.embed_columns(dict.atoms())?;
    let n = signals.ncols();
    let mut out = Vec::with_capacity(n);
    let chunk = 512;
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        let block = signals.columns(start, len).into_owned();
        let embedded = embedding.embed_columns(&block)?;
        let mags = inner_product_magnitudes(&embedded_dict, &embedded)?;
        for j in 0..len {
            let col: Vec<f64> = mags.column(j).iter().copied().collect();
            out.push(select_top_s(&col, s));
        }
    }
    Ok(out)
}

/// Solves G alpha = rhs through a symmetric eigendecomposition, truncating
/// eigenvalues below a relative tolerance (rank-deficient supports).
fn solve_normal_equations(gram_sub: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = nalgebra::SymmetricEigen::new(gram_sub);
    let max_ev = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let mut coeffs = eig.eigenvectors.transpose() * rhs;
    for (c, &ev) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        if ev.abs() > EIGEN_TRUNCATION * max_ev && max_ev > 0.0 {
            *c /= ev;
        } else {
            *c = 0.0;
        }
    }
    eig.eigenvectors * coeffs
}

/// Orthogonal projection of y onto the span of the support atoms.
pub fn project_onto_support(
    dict: &DictionaryState,
    y: &DVector<f64>,
    support: &[usize],
) -> Result<DVector<f64>> {
    let sub = dict.atoms().select_columns(support.iter());
    let gram = sub.transpose() * &sub;
    let rhs = sub.transpose() * y;
    let alpha = solve_normal_equations(gram, &rhs);
    Ok(sub * alpha)
}

/// One atom's residual-means contribution for a single signal:
/// sign(<psi_k, y>) * (y - P(Psi_I) y + <psi_k, y> psi_k), with sign(0) = +1.
pub fn residual_update(
    dict: &DictionaryState,
    y: &DVector<f64>,
    support: &[usize],
    k: usize,
) -> Result<DVector<f64>> {
    if !support.contains(&k) {
        return Err(Error::invalid("atom index must belong to the support"));
    }
    let proj = project_onto_support(dict, y, support)?;
    let psi_k = dict.atoms().column(k);
    let ip = psi_k.dot(y);
    let sign = if ip < 0.0 { -1.0 } else { 1.0 };
    Ok((y - proj + psi_k * ip) * sign)
}

struct SignalUpdate {
    support: Vec<usize>,
    signs: Vec<f64>,
    abs_ips: Vec<f64>,
    residual: DVector<f64>,
}

/// One full pass of the iteration over a batch: support identification,
/// residual-means accumulation, degenerate-atom replacement, normalization.
/// `embedding` must be present exactly when `config.compressed`.
pub fn iterate<R: Rng + ?Sized>(
    state: &DictionaryState,
    signals: &DMatrix<f64>,
    config: &LearnerConfig,
    embedding: Option<&JlEmbedding>,
    replacement_rng: &mut R,
) -> Result<(DictionaryState, IterationReport)> {
    let started = Instant::now();
    let d = state.signal_dim();
    let k = state.n_atoms();
    let n = signals.ncols();
    config.validate(d, k)?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if signals.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: signals.nrows(),
        });
    }
    if config.compressed != embedding.is_some() {
        return Err(Error::invalid(
            "an embedding must be supplied exactly when the config is compressed",
        ));
    }
    let s = config.sparsity;
    let gram = state.atoms().transpose() * state.atoms();
    let dict_t = state.atoms().transpose();
    let embedded_dict = match embedding {
        Some(e) => Some(e.embed_columns(state.atoms())?),
        None => None,
    };

    let mut accumulator = DMatrix::zeros(d, k);
    let mut diag_weights = vec![0.0_f64; k];
    let mut selection_counts = vec![0usize; k];
    let mut thresholding_secs = 0.0;

    for start in (0..n).step_by(config.chunk_size) {
        let len = config.chunk_size.min(n - start);
        let block = signals.columns(start, len);

        // magnitudes used for support selection
        let t0 = Instant::now();
        let mags: DMatrix<f64> = match (&embedded_dict, embedding) {
            (Some(ed), Some(e)) => {
                let embedded = e.embed_columns(&block.into_owned())?;
                inner_product_magnitudes(ed, &embedded)?
            }
            _ => {
                let mut g = DMatrix::zeros(k, len);
                g.gemm(1.0, &dict_t, &block, 0.0);
                g.apply(|x| *x = x.abs());
                g
            }
        };
        thresholding_secs += t0.elapsed().as_secs_f64();

        let updates: Vec<SignalUpdate> = (0..len)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = mags.column(j).iter().copied().collect();
                let support = select_top_s(&col, s);
                let y = block.column(j);
                // uncompressed inner products on the support drive both the
                // sign and the rank-1 term, compressed or not
                let ips: Vec<f64> = support
                    .iter()
                    .map(|&a| state.atoms().column(a).dot(&y))
                    .collect();
                let gram_sub = gram.select_rows(support.iter()).select_columns(support.iter());
                let alpha = solve_normal_equations(gram_sub, &DVector::from_vec(ips.clone()));
                let mut residual = y.into_owned();
                for (&a, &c) in support.iter().zip(alpha.iter()) {
                    residual.axpy(-c, &state.atoms().column(a), 1.0);
                }
                let signs = ips.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
                let abs_ips = ips.iter().map(|v| v.abs()).collect();
                SignalUpdate {
                    support,
                    signs,
                    abs_ips,
                    residual,
                }
            })
            .collect();

        // deterministic-order accumulation
        for u in &updates {
            for ((&a, &sign), &w) in u.support.iter().zip(&u.signs).zip(&u.abs_ips) {
                accumulator.column_mut(a).axpy(sign, &u.residual, 1.0);
                diag_weights[a] += w;
                selection_counts[a] += 1;
            }
        }
    }

    for a in 0..k {
        accumulator
            .column_mut(a)
            .axpy(diag_weights[a], &state.atoms().column(a), 1.0);
    }

    // normalize, replacing never-selected (degenerate) atoms
    let floor = DEGENERATE_SCALE * (n as f64 / k as f64).sqrt();
    let mut replaced_atoms = 0;
    let mut new_atoms = accumulator;
    for a in 0..k {
        let norm = new_atoms.column(a).norm();
        if norm < floor || !norm.is_finite() {
            new_atoms.set_column(a, &random_unit_vector(d, replacement_rng));
            replaced_atoms += 1;
        } else {
            new_atoms.column_mut(a).scale_mut(1.0 / norm);
        }
    }

    let report = IterationReport {
        iteration: 0,
        wall_secs: started.elapsed().as_secs_f64(),
        thresholding_secs,
        selection_counts,
        replaced_atoms,
        distance: None,
        recovery: None,
    };
    Ok((DictionaryState { atoms: new_atoms }, report))
}

/// Where training batches come from.
pub trait SignalSource {
    fn signal_dim(&self) -> usize;
    /// The batch for one iteration; iterations index fresh draws.
    fn batch(&mut self, iteration: usize) -> Result<DMatrix<f64>>;
}

/// Draws a fresh synthetic batch per iteration from its own seeded stream,
/// independent of the learner's embedding and replacement randomness.
pub struct SyntheticSource {
    pub dict: crate::signal::GeneratingDictionary,
    pub model: crate::signal::CoefficientModel,
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl SignalSource for SyntheticSource {
    fn signal_dim(&self) -> usize {
        self.dict.signal_dim()
    }

    fn batch(&mut self, iteration: usize) -> Result<DMatrix<f64>> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SIGNAL_STREAM_BASE + iteration as u64);
        Ok(
            crate::signal::draw_signal_batch(
                &self.dict,
                &self.model,
                self.noise_sigma,
                self.batch_size,
                &mut rng,
            )?
            .signals,
        )
    }
}

/// A finite corpus reused every iteration.
pub struct FixedDataset(pub DMatrix<f64>);

impl SignalSource for FixedDataset {
    fn signal_dim(&self) -> usize {
        self.0.nrows()
    }

    fn batch(&mut self, _iteration: usize) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

const SIGNAL_STREAM_BASE: u64 = 1 << 32;
const EMBEDDING_STREAM: u64 = 1;
const REPLACEMENT_STREAM: u64 = 2;

/// Runs `config.iterations` passes; a fresh embedding is drawn every
/// iteration when compressed, and fresh signals when the batch mode says so.
/// Distance and recovery are reported per iteration against `reference`.
pub fn learn<Src: SignalSource>(
    init: &DictionaryState,
    source: &mut Src,
    config: &LearnerConfig,
    reference: Option<&DMatrix<f64>>,
) -> Result<(DictionaryState, Vec<IterationReport>)> {
    use rand::SeedableRng;
    let d = init.signal_dim();
    config.validate(d, init.n_atoms())?;
    let mut embed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    embed_rng.set_stream(EMBEDDING_STREAM);
    let mut replace_rng = ChaCha8Rng::seed_from_u64(config.seed);
    replace_rng.set_stream(REPLACEMENT_STREAM);

    let mut state = init.clone();
    let mut reports = Vec::with_capacity(config.iterations);
    let mut fixed_batch: Option<DMatrix<f64>> = None;
    for iteration in 0..config.iterations {
        let embedding = if config.compressed {
            Some(draw_embedding(
                config.family,
                d,
                config.embedding_dim,
                &mut embed_rng,
            )?)
        } else {
            None
        };
        let batch = match config.batch_mode {
            BatchMode::FreshPerIteration => source.batch(iteration)?,
            BatchMode::FixedDataset => {
                if fixed_batch.is_none() {
                    fixed_batch = Some(source.batch(0)?);
                }
                fixed_batch.clone().unwrap()
            }
        };
        let (next, mut report) =
            iterate(&state, &batch, config, embedding.as_ref(), &mut replace_rng)?;
        report.iteration = iteration;
        if let Some(phi) = reference {
            report.distance = Some(dictionary_distance(next.atoms(), phi)?.max);
            report.recovery = Some(recovery_rate(next.atoms(), phi, 0.99)?);
        }
        state = next;
        let recovery = report.recovery;
        reports.push(report);
        if let (Some(stop), Some(rate)) = (config.stop_at_recovery, recovery) {
            if rate >= stop {
                break;
            }
        }
    }
    Ok((state, reports))
}

const DICT_MAGIC: &[u8; 8] = b"ICTKMDCT";

/// Binary checkpoint: magic, rows and cols as little-endian u32, then the
/// atom matrix as little-endian f64 in column-major order.
pub fn save_dictionary(path: &Path, state: &DictionaryState) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DICT_MAGIC)?;
    w.write_all(&(state.signal_dim() as u32).to_le_bytes())?;
    w.write_all(&(state.n_atoms() as u32).to_le_bytes())?;
    for v in state.atoms().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dictionary(path: &Path) -> Result<DictionaryState> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DICT_MAGIC {
        return Err(Error::Format("bad dictionary checkpoint magic".into()));
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
    DictionaryState::new(DMatrix::from_vec(rows, cols, data))
}

/// CSV export of the atoms, one matrix row per line.
pub fn export_dictionary_csv(path: &Path, state: &DictionaryState) -> Result<()> {
    crate::signal::write_matrix_csv(path, state.atoms())
}
