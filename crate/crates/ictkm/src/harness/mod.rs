//! Experiment driver: synthetic compression sweeps, recovery curves,
//! scalability timing, the audio pipeline, and run manifests.

pub mod audio;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{recovery_rate, TheoryInputs};
use crate::jl::TransformFamily;
use crate::learner::{
    learn, BatchMode, DictionaryState, IterationReport, LearnerConfig, SyntheticSource,
};
use crate::signal::{build_dirac_dct_dictionary, CoefficientModel, GeneratingDictionary};

/// Synthetic signal-model parameters shared by the experiment kinds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SignalSpec {
    pub signal_dim: usize,
    pub intrinsic_dim: usize,
    pub sparsity: usize,
    /// E||Phi x||^2 / E||r||^2; omit for noiseless signals.
    pub snr: Option<f64>,
    /// Maximal dynamic range for geometric coefficients; omit for flat.
    pub dynamic_range: Option<f64>,
}

impl SignalSpec {
    pub fn dictionary(&self) -> Result<GeneratingDictionary> {
        build_dirac_dct_dictionary(self.signal_dim, self.intrinsic_dim)
    }

    pub fn model(&self, n_atoms: usize) -> Result<CoefficientModel> {
        match self.dynamic_range {
            Some(range) => CoefficientModel::geometric(self.sparsity, range, n_atoms),
            None => CoefficientModel::flat(self.sparsity, n_atoms),
        }
    }

    /// sigma with E||r||^2 = d sigma^2 matching the requested SNR
    /// (unit-norm coefficients make E||Phi x||^2 = 1).
    pub fn noise_sigma(&self) -> f64 {
        match self.snr {
            Some(snr) if snr > 0.0 => (1.0 / (snr * self.signal_dim as f64)).sqrt(),
            _ => 0.0,
        }
    }
}

fn default_recovery_threshold() -> f64 {
    0.99
}

fn default_success_atoms() -> f64 {
    0.9
}

fn default_trials() -> usize {
    10
}

/// N = ceil(50 K ln K) unless overridden.
pub fn default_batch_size(n_atoms: usize) -> usize {
    (50.0 * n_atoms as f64 * (n_atoms as f64).ln()).ceil() as usize
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub signal: SignalSpec,
    pub families: Vec<TransformFamily>,
    /// compression ratios d/m, processed in ascending order
    pub ratios: Vec<f64>,
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// per-atom recovery criterion |<psi, a>| >= threshold
    #[serde(default = "default_recovery_threshold")]
    pub recovery_threshold: f64,
    /// fraction of atoms that must be recovered for a trial to pass
    #[serde(default = "default_success_atoms")]
    pub success_atoms: f64,
    /// stop the learner early once this recovery rate is reached
    #[serde(default)]
    pub stop_at_recovery: Option<f64>,
    /// keep probing larger ratios after one fails (off: monotone stop)
    #[serde(default)]
    pub continue_after_failure: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub ratio: f64,
    pub embedding_dim: usize,
    pub trial: usize,
    pub recovery: f64,
    pub passed: bool,
    pub iterations_run: usize,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    /// highest passing ratio per family, if any ratio passed
    pub highest_passing: Vec<(String, Option<f64>)>,
}

/// m = ceil(d / ratio), clamped to [1, d].
pub fn embedding_dim_for_ratio(signal_dim: usize, ratio: f64) -> usize {
    ((signal_dim as f64 / ratio).ceil() as usize).clamp(1, signal_dim)
}

fn trial_seed(base: u64, family_idx: usize, ratio_idx: usize, trial: usize) -> u64 {
    // splitmix-style decorrelation of the trial coordinates
    let mut z = base
        ^ (family_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (ratio_idx as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (trial as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TrialOutcome {
    recovery: f64,
    iterations_run: usize,
    wall_secs: f64,
    reports: Vec<IterationReport>,
}

fn run_trial(
    spec: &SignalSpec,
    family: TransformFamily,
    embedding_dim: usize,
    iterations: usize,
    batch_size: usize,
    recovery_threshold: f64,
    stop_at_recovery: Option<f64>,
    seed: u64,
) -> Result<TrialOutcome> {
    use rand::SeedableRng;
    let gen = spec.dictionary()?;
    let k = gen.n_atoms();
    let model = spec.model(k)?;
    let mut init_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let init = DictionaryState::random(spec.signal_dim, k, &mut init_rng);
    let mut source = SyntheticSource {
        dict: gen.clone(),
        model,
        noise_sigma: spec.noise_sigma(),
        batch_size,
        seed,
    };
    let compressed = embedding_dim < spec.signal_dim;
    let config = LearnerConfig {
        sparsity: spec.sparsity,
        compressed,
        family,
        embedding_dim: if compressed { embedding_dim } else { 0 },
        iterations,
        batch_size,
        batch_mode: BatchMode::FreshPerIteration,
        seed,
        chunk_size: 512,
        stop_at_recovery,
    };
    let (state, reports) = learn(&init, &mut source, &config, Some(gen.atoms()))?;
    let recovery = recovery_rate(state.atoms(), gen.atoms(), recovery_threshold)?;
    Ok(TrialOutcome {
        recovery,
        iterations_run: reports.len(),
        wall_secs: reports.iter().map(|r| r.wall_secs).sum(),
        reports,
    })
}

/// For each transform family, walks the compression ratios in ascending order
/// and records per-trial recovery; stops at the first failing ratio unless
/// told otherwise.
pub fn run_compression_sweep(config: &SweepConfig, out_dir: &Path) -> Result<SweepSummary> {
    if config.ratios.is_empty() || config.families.is_empty() || config.trials == 0 {
        return Err(Error::invalid("sweep needs ratios, families, and trials"));
    }
    std::fs::create_dir_all(out_dir)?;
    let batch_size = config
        .batch_size
        .unwrap_or_else(|| default_batch_size(3 * config.signal.intrinsic_dim / 2));
    let mut ratios = config.ratios.clone();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::new();
    let mut highest_passing = Vec::new();
    for (fi, &family) in config.families.iter().enumerate() {
        let mut best: Option<f64> = None;
        for (ri, &ratio) in ratios.iter().enumerate() {
            let m = embedding_dim_for_ratio(config.signal.signal_dim, ratio);
            let outcomes: Vec<Result<TrialOutcome>> = (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    run_trial(
                        &config.signal,
                        family,
                        m,
                        config.iterations,
                        batch_size,
                        config.recovery_threshold,
                        config.stop_at_recovery,
                        trial_seed(config.seed, fi, ri, trial),
                    )
                })
                .collect();
            let mut passing = 0;
            for (trial, outcome) in outcomes.into_iter().enumerate() {
                let outcome = outcome?;
                let passed = outcome.recovery >= config.success_atoms;
                if passed {
                    passing += 1;
                }
                rows.push(SweepRow {
                    family: family.to_string(),
                    ratio,
                    embedding_dim: m,
                    trial,
                    recovery: outcome.recovery,
                    passed,
                    iterations_run: outcome.iterations_run,
                    wall_secs: outcome.wall_secs,
                });
            }
            let ratio_passes = 2 * passing > config.trials;
            if ratio_passes {
                best = Some(ratio);
            } else if !config.continue_after_failure {
                break;
            }
        }
        highest_passing.push((family.to_string(), best));
    }
    write_csv(&out_dir.join("sweep.csv"), &rows)?;
    let summary = SweepSummary {
        rows,
        highest_passing,
    };
    let summary_rows: Vec<SummaryRow> = summary
        .highest_passing
        .iter()
        .map(|(family, ratio)| SummaryRow {
            family: family.clone(),
            highest_passing_ratio: *ratio,
        })
        .collect();
    write_csv(&out_dir.join("summary.csv"), &summary_rows)?;
    write_manifest(out_dir, config, &["sweep.csv", "summary.csv"])?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SummaryRow {
    family: String,
    highest_passing_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveConfig {
    pub signal: SignalSpec,
    pub families: Vec<TransformFamily>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_recovery_threshold")]
    pub recovery_threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveRow {
    pub family: String,
    pub ratio: f64,
    pub trial: usize,
    pub iteration: usize,
    pub recovery: f64,
    pub distance: f64,
    pub wall_secs: f64,
    pub thresholding_secs: f64,
}

/// Per-iteration recovery and timing for each (family, ratio, trial).
pub fn run_recovery_curve(config: &CurveConfig, out_dir: &Path) -> Result<Vec<CurveRow>> {
    if config.ratios.is_empty() || config.families.is_empty() || config.trials == 0 {
        return Err(Error::invalid("curve needs ratios, families, and trials"));
    }
    std::fs::create_dir_all(out_dir)?;
    let batch_size = config
        .batch_size
        .unwrap_or_else(|| default_batch_size(3 * config.signal.intrinsic_dim / 2));
    let mut rows = Vec::new();
    for (fi, &family) in config.families.iter().enumerate() {
        for (ri, &ratio) in config.ratios.iter().enumerate() {
            let m = embedding_dim_for_ratio(config.signal.signal_dim, ratio);
            let outcomes: Vec<Result<TrialOutcome>> = (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    run_trial(
                        &config.signal,
                        family,
                        m,
                        config.iterations,
                        batch_size,
                        config.recovery_threshold,
                        None,
                        trial_seed(config.seed, fi, ri, trial),
                    )
                })
                .collect();
            for (trial, outcome) in outcomes.into_iter().enumerate() {
                let outcome = outcome?;
                for report in &outcome.reports {
                    rows.push(CurveRow {
                        family: family.to_string(),
                        ratio,
                        trial,
                        iteration: report.iteration,
                        recovery: report.recovery.unwrap_or(0.0),
                        distance: report.distance.unwrap_or(f64::NAN),
                        wall_secs: report.wall_secs,
                        thresholding_secs: report.thresholding_secs,
                    });
                }
            }
        }
    }
    write_csv(&out_dir.join("curve.csv"), &rows)?;
    write_manifest(out_dir, config, &["curve.csv"])?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleConfig {
    /// ambient dimensions to sweep; the intrinsic dimension stays fixed
    pub dims: Vec<usize>,
    pub intrinsic_dim: usize,
    pub sparsity: usize,
    pub snr: Option<f64>,
    pub dynamic_range: Option<f64>,
    pub families: Vec<TransformFamily>,
    pub ratio: f64,
    pub target_rate: f64,
    pub max_iterations: usize,
    pub batch_size: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_recovery_threshold")]
    pub recovery_threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleRow {
    pub signal_dim: usize,
    pub family: String,
    pub ratio: f64,
    pub embedding_dim: usize,
    pub iterations_run: usize,
    pub secs_to_target: f64,
    pub reached_target: bool,
}

/// Time to reach a target recovery rate as the ambient dimension grows.
pub fn run_scalability(config: &ScaleConfig, out_dir: &Path) -> Result<Vec<ScaleRow>> {
    if config.dims.is_empty() || config.families.is_empty() {
        return Err(Error::invalid("scalability run needs dims and families"));
    }
    std::fs::create_dir_all(out_dir)?;
    let batch_size = config
        .batch_size
        .unwrap_or_else(|| default_batch_size(3 * config.intrinsic_dim / 2));
    let mut rows = Vec::new();
    for (fi, &family) in config.families.iter().enumerate() {
        for (di, &d) in config.dims.iter().enumerate() {
            let spec = SignalSpec {
                signal_dim: d,
                intrinsic_dim: config.intrinsic_dim,
                sparsity: config.sparsity,
                snr: config.snr,
                dynamic_range: config.dynamic_range,
            };
            let m = embedding_dim_for_ratio(d, config.ratio);
            let outcome = run_trial(
                &spec,
                family,
                m,
                config.max_iterations,
                batch_size,
                config.recovery_threshold,
                Some(config.target_rate),
                trial_seed(config.seed, fi, di, 0),
            )?;
            rows.push(ScaleRow {
                signal_dim: d,
                family: family.to_string(),
                ratio: config.ratio,
                embedding_dim: m,
                iterations_run: outcome.iterations_run,
                secs_to_target: outcome.wall_secs,
                reached_target: outcome.recovery >= config.target_rate,
            });
        }
    }
    write_csv(&out_dir.join("scale.csv"), &rows)?;
    write_manifest(out_dir, config, &["scale.csv"])?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub inputs: TheoryInputs,
    #[serde(default = "default_admissibility_constant")]
    pub admissibility_constant: f64,
    pub n_signals: Option<f64>,
    pub iterations: Option<f64>,
    pub target_probability: Option<f64>,
    /// evaluate the embedding-dimension bound for these families
    #[serde(default)]
    pub embedding_families: Vec<TransformFamily>,
    #[serde(default = "default_admissibility_constant")]
    pub embedding_constant: f64,
}

fn default_admissibility_constant() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryOutput {
    pub eps_opt: f64,
    pub convergence_radius: f64,
    pub iteration_count: usize,
    pub admissibility: crate::eval::AdmissibilityReport,
    pub failure_probability: Option<f64>,
    pub sample_bound: Option<f64>,
    pub recommended_embedding_dims: Vec<(String, usize)>,
}

/// Evaluates every closed-form calculator on one set of inputs.
pub fn run_theory(config: &TheoryConfig) -> Result<TheoryOutput> {
    let inputs = &config.inputs;
    let iterations = config
        .iterations
        .unwrap_or_else(|| crate::eval::iteration_count(inputs.target_error).unwrap_or(1) as f64);
    let failure = match config.n_signals {
        Some(n) => Some(crate::eval::failure_probability(inputs, n, iterations)?),
        None => None,
    };
    let bound = match config.target_probability {
        Some(p) => Some(crate::eval::sample_bound(inputs, p, iterations)?),
        None => None,
    };
    let mut dims = Vec::new();
    for &family in &config.embedding_families {
        let p = 4.0 * (inputs.n_atoms as f64) * (inputs.n_atoms as f64);
        let m = crate::jl::recommended_embedding_dim(
            family,
            inputs.distortion,
            p,
            inputs.embed_failure.max(1e-12),
            inputs.signal_dim,
            config.embedding_constant,
        )?;
        dims.push((family.to_string(), m));
    }
    Ok(TheoryOutput {
        eps_opt: crate::eval::eps_opt(inputs)?,
        convergence_radius: crate::eval::convergence_radius(inputs)?,
        iteration_count: crate::eval::iteration_count(inputs.target_error)?,
        admissibility: crate::eval::admissibility_check(inputs, config.admissibility_constant)?,
        failure_probability: failure,
        sample_bound: bound,
        recommended_embedding_dims: dims,
    })
}

/// Serializes rows with headers derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config_toml: String,
    pub outputs: Vec<String>,
    pub version: String,
}

/// Writes manifest.json next to the outputs; the hash covers the exact
/// serialized config so runs are attributable to their parameters.
pub fn write_manifest<C: Serialize>(out_dir: &Path, config: &C, outputs: &[&str]) -> Result<()> {
    let config_toml =
        toml::to_string_pretty(config).map_err(|e| Error::Format(e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(config_toml.as_bytes());
    let manifest = RunManifest {
        config_sha256: hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
        config_toml,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads a TOML config file into any deserializable config type.
pub fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
