//! WAV ingestion into overlapping training blocks, spectral atom analysis,
//! and atom sonification.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jl::TransformFamily;
use crate::learner::{
    learn, save_dictionary, BatchMode, DictionaryState, FixedDataset, IterationReport,
    LearnerConfig,
};
use crate::transforms::{Spectrum, TransformKind};

const SILENT_BLOCK_NORM: f64 = 1e-8;

/// Mono audio plus the blocking parameters used to slice it.
#[derive(Clone, Debug)]
pub struct AudioCorpus {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
    pub block_len: usize,
    pub overlap: f64,
    /// blocks dropped for being near-silent
    pub dropped_blocks: usize,
}

impl AudioCorpus {
    pub fn stride(&self) -> usize {
        block_stride(self.block_len, self.overlap)
    }
}

/// stride = round((1 - overlap) * block), at least 1
pub fn block_stride(block_len: usize, overlap: f64) -> usize {
    (((1.0 - overlap) * block_len as f64).round() as usize).max(1)
}

fn decode_mono(path: &Path, expected_rate: Option<u32>) -> Result<(u32, Vec<f64>)> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(Error::Audio(format!(
                "{}: sample rate {} does not match {}",
                path.display(),
                spec.sample_rate,
                rate
            )));
        }
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Audio(e.to_string()))?
        }
        (format, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported WAV encoding {format:?}/{bits}-bit (PCM 16/24-bit only)",
                path.display()
            )));
        }
    };
    // average channels to mono
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((spec.sample_rate, mono))
}

/// Decodes the given WAV files, mixes to mono, concatenates, and slices into
/// overlapping unit-norm blocks (one training signal per block). Near-silent
/// blocks are dropped.
pub fn ingest_audio(
    paths: &[PathBuf],
    block_seconds: f64,
    overlap: f64,
) -> Result<(AudioCorpus, DMatrix<f64>)> {
    if paths.is_empty() {
        return Err(Error::Audio("no input files".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap must lie in [0, 1)"));
    }
    let mut sample_rate = None;
    let mut samples = Vec::new();
    for path in paths {
        let (rate, mono) = decode_mono(path, sample_rate)?;
        sample_rate = Some(rate);
        samples.extend(mono);
    }
    let sample_rate = sample_rate.unwrap();
    let block_len = (block_seconds * sample_rate as f64).round() as usize;
    if block_len == 0 || block_len > samples.len() {
        return Err(Error::Audio(format!(
            "block of {block_len} samples does not fit {} decoded samples",
            samples.len()
        )));
    }
    let stride = block_stride(block_len, overlap);
    let n_blocks = (samples.len() - block_len) / stride + 1;
    let mut columns = Vec::with_capacity(n_blocks);
    let mut dropped = 0;
    for b in 0..n_blocks {
        let start = b * stride;
        let block = &samples[start..start + block_len];
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < SILENT_BLOCK_NORM {
            dropped += 1;
            continue;
        }
        columns.push(nalgebra::DVector::from_iterator(
            block_len,
            block.iter().map(|&v| v / norm),
        ));
    }
    if columns.is_empty() {
        return Err(Error::Audio("every block was silent".into()));
    }
    let signals = DMatrix::from_columns(&columns);
    Ok((
        AudioCorpus {
            sample_rate,
            samples,
            block_len,
            overlap,
            dropped_blocks: dropped,
        },
        signals,
    ))
}

/// Per-atom spectral summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomSpectrum {
    /// column index in the input dictionary
    pub atom: usize,
    pub fundamental_hz: f64,
    #[serde(skip)]
    pub magnitudes: Vec<f64>,
}

/// Fundamental-frequency floor below which bins are ignored (DC and drift).
pub const FUNDAMENTAL_FLOOR_HZ: f64 = 50.0;

/// FFT magnitude spectrum per atom; the fundamental is the strongest bin at
/// or above the low-frequency floor. Returned sorted by ascending fundamental.
pub fn analyze_atoms(dict: &DMatrix<f64>, sample_rate: u32) -> Result<Vec<AtomSpectrum>> {
    let d = dict.nrows();
    if d == 0 || dict.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    let bin_hz = sample_rate as f64 / d as f64;
    let mut out = Vec::with_capacity(dict.ncols());
    for j in 0..dict.ncols() {
        let atom: Vec<f64> = dict.column(j).iter().copied().collect();
        let spectrum = match TransformKind::UnitaryDft.forward(&atom)? {
            Spectrum::Complex(c) => c,
            Spectrum::Real(_) => unreachable!("DFT spectra are complex"),
        };
        // real input: bins above d/2 mirror the lower half
        let half = d / 2 + 1;
        let magnitudes: Vec<f64> = spectrum[..half].iter().map(|c| c.norm()).collect();
        let first_bin = (FUNDAMENTAL_FLOOR_HZ / bin_hz).ceil() as usize;
        let mut best_bin = first_bin.min(half - 1);
        let mut best_mag = -1.0;
        for (bin, &mag) in magnitudes.iter().enumerate().skip(best_bin) {
            if mag > best_mag {
                best_mag = mag;
                best_bin = bin;
            }
        }
        out.push(AtomSpectrum {
            atom: j,
            fundamental_hz: best_bin as f64 * bin_hz,
            magnitudes,
        });
    }
    out.sort_by(|a, b| {
        a.fundamental_hz
            .partial_cmp(&b.fundamental_hz)
            .unwrap()
            .then(a.atom.cmp(&b.atom))
    });
    Ok(out)
}

/// Writes each atom as a peak-normalized 16-bit mono PCM WAV file.
pub fn export_atoms_wav(dict: &DMatrix<f64>, sample_rate: u32, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut paths = Vec::with_capacity(dict.ncols());
    for j in 0..dict.ncols() {
        let path = dir.join(format!("atom_{j:04}.wav"));
        let peak = dict.column(j).iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let scale = if peak > 0.0 { 0.999 / peak } else { 0.0 };
        let mut writer =
            hound::WavWriter::create(&path, spec).map_err(|e| Error::Audio(e.to_string()))?;
        for &v in dict.column(j).iter() {
            let q = (v * scale * i16::MAX as f64).round() as i16;
            writer.write_sample(q).map_err(|e| Error::Audio(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Audio(e.to_string()))?;
        paths.push(path);
    }
    Ok(paths)
}

fn default_iterations() -> usize {
    200
}

fn default_ratio() -> f64 {
    5.0
}

fn default_family() -> TransformFamily {
    TransformFamily::Dct
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AudioConfig {
    pub inputs: Vec<PathBuf>,
    pub block_seconds: f64,
    pub overlap: f64,
    pub n_atoms: usize,
    pub sparsity: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_family")]
    pub family: TransformFamily,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct AudioRunOutput {
    pub corpus: AudioCorpus,
    pub dictionary: DictionaryState,
    pub spectra: Vec<AtomSpectrum>,
    pub reports: Vec<IterationReport>,
}

/// Full audio experiment: ingest, learn on the fixed corpus with a fresh
/// embedding per iteration, then analyze and sonify the atoms.
pub fn run_audio(config: &AudioConfig, out_dir: &Path) -> Result<AudioRunOutput> {
    use rand::SeedableRng;
    std::fs::create_dir_all(out_dir)?;
    let (corpus, signals) = ingest_audio(&config.inputs, config.block_seconds, config.overlap)?;
    let d = signals.nrows();
    let n = signals.ncols();
    let m = super::embedding_dim_for_ratio(d, config.ratio);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let init = DictionaryState::random(d, config.n_atoms, &mut rng);
    let learner_config = LearnerConfig {
        sparsity: config.sparsity,
        compressed: true,
        family: config.family,
        embedding_dim: m,
        iterations: config.iterations,
        batch_size: n,
        batch_mode: BatchMode::FixedDataset,
        seed: config.seed,
        chunk_size: 512,
        stop_at_recovery: None,
    };
    let mut source = FixedDataset(signals);
    let (dictionary, reports) = learn(&init, &mut source, &learner_config, None)?;
    let spectra = analyze_atoms(dictionary.atoms(), corpus.sample_rate)?;

    save_dictionary(&out_dir.join("dictionary.bin"), &dictionary)?;
    crate::learner::export_dictionary_csv(&out_dir.join("dictionary.csv"), &dictionary)?;
    super::write_csv(&out_dir.join("atoms.csv"), &spectra)?;
    export_atoms_wav(dictionary.atoms(), corpus.sample_rate, &out_dir.join("atoms"))?;
    super::write_manifest(
        out_dir,
        config,
        &["dictionary.bin", "dictionary.csv", "atoms.csv", "atoms/"],
    )?;
    Ok(AudioRunOutput {
        corpus,
        dictionary,
        spectra,
        reports,
    })
}
