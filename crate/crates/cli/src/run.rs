//! Running experiments and writing their artifacts.
//!
//! Layout of the output directory:
//!
//! ```text
//! manifest.json            resolved spec, effective sizes, seeds
//! generating.bin           generating dictionary (synthetic scenarios)
//! trials/<label>_tNNN.csv  per-trial trajectories
//! dictionaries/<label>_tNNN.bin
//! summary.csv              one row per trial (and strategy)
//! aggregate.csv            mean/std across trials
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use itkrm::adaptive::{run_adaptive, AdaptiveConfig, AdaptiveRow};
use itkrm::candidates::ReplacementPolicy;
use itkrm::constructions::{dirac_hadamard, perturbed, random_sphere};
use itkrm::container::save_dictionary;
use itkrm::image::{add_image_noise, extract_patches, load_image_gray, psnr, PatchConfig};
use itkrm::learn::{run_learning, write_csv_file, FixedSource, LearnConfig, SyntheticSource, TrajectoryRow};
use itkrm::metrics::{
    asym_distance, recovered_count, sorted_atom_errors, theorem_conditions_report, RECOVERY_THRESHOLD,
};
use itkrm::omp::{approximation_power, FlatAtom};
use itkrm::rng::{derive_seed, stream_rng};
use itkrm::signal::{CoefficientModel, SignalBatch, SignalModel};
use itkrm::Dictionary;
use rayon::prelude::*;
use serde::Serialize;

use crate::spec::{validate, CoeffKind, DictKind, Effective, ExperimentSpec, Scenario, Strategy};
use crate::CliError;

const TAG_GENERATING: u64 = 0x6e4e;
const TAG_INIT: u64 = 0x1a17;
const TAG_DATA: u64 = 0xda7a;
const TAG_ALGO: u64 = 0xa160;
const TAG_NOISE: u64 = 0x2015e;

/// Seeds of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub init: u64,
    pub data: u64,
    pub algorithm: u64,
    pub noise: u64,
}

impl TrialSeeds {
    fn new(seed: u64, trial: usize) -> Self {
        let t = trial as u64;
        Self {
            trial,
            init: derive_seed(derive_seed(seed, TAG_INIT), t),
            data: derive_seed(derive_seed(seed, TAG_DATA), t),
            algorithm: derive_seed(derive_seed(seed, TAG_ALGO), t),
            noise: derive_seed(derive_seed(seed, TAG_NOISE), t),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub spec: ExperimentSpec,
    pub effective: Effective,
    pub generating_seed: u64,
    pub trial_seeds: Vec<TrialSeeds>,
}

impl Manifest {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Self {
            tool: "itkrm",
            version: env!("CARGO_PKG_VERSION"),
            spec: spec.clone(),
            effective: spec.effective(),
            generating_seed: derive_seed(spec.seed, TAG_GENERATING),
            trial_seeds: (0..spec.trials).map(|t| TrialSeeds::new(spec.seed, t)).collect(),
        }
    }
}

fn runtime<T>(r: itkrm::Result<T>, what: &str) -> Result<T, CliError> {
    r.with_context(|| what.to_string()).map_err(CliError::Runtime)
}

fn trial_name(label: &str, trial: usize) -> String {
    format!("{label}_t{trial:03}")
}

/// Runs every trial of `spec` and returns the artifact directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<PathBuf, CliError> {
    validate(spec)?;
    let dir = spec.output_dir.clone();
    for sub in ["", "trials", "dictionaries"] {
        std::fs::create_dir_all(dir.join(sub))
            .with_context(|| format!("cannot create output directory {}", dir.join(sub).display()))?;
    }
    let manifest = Manifest::new(spec);
    let text = serde_json::to_string_pretty(&manifest).context("serialising manifest")?;
    std::fs::write(dir.join("manifest.json"), text + "\n")
        .with_context(|| format!("cannot write {}", dir.join("manifest.json").display()))?;
    if spec.trials == 0 {
        return Ok(dir);
    }
    match spec.scenario {
        Scenario::PlainRecovery | Scenario::ReplacementCompare | Scenario::FixedpointProbe => {
            run_fixed_size(spec, &manifest, &dir)?
        }
        Scenario::AdaptiveSynthetic => run_adaptive_synthetic(spec, &manifest, &dir)?,
        Scenario::AdaptiveImage => run_adaptive_image(spec, &manifest, &dir)?,
        Scenario::ContractionSweep => run_contraction(spec, &manifest, &dir)?,
    }
    Ok(dir)
}

pub fn generating_dictionary(spec: &ExperimentSpec) -> Result<Dictionary, CliError> {
    let eff = spec.effective();
    let dico = match spec.dict {
        DictKind::DiracHadamard => dirac_hadamard(eff.d, eff.k),
        DictKind::RandomSphere => {
            let mut rng = stream_rng(derive_seed(spec.seed, TAG_GENERATING), 0);
            random_sphere(eff.d, eff.k, &mut rng)
        }
    };
    runtime(dico, "building the generating dictionary")
}

pub fn coefficient_model(spec: &ExperimentSpec) -> CoefficientModel {
    let level = |s: usize| match spec.coeffs {
        CoeffKind::Geometric => CoefficientModel::Geometric {
            q_min: spec.q_min,
            q_max: spec.q_max,
            sparsity: s,
        },
        CoeffKind::Balanced => CoefficientModel::Balanced { sparsity: s },
    };
    if spec.sparsity.len() == 1 {
        return level(spec.sparsity[0]);
    }
    let total: f64 = spec.sparsity_weights.iter().sum();
    CoefficientModel::Mixture(
        spec.sparsity
            .iter()
            .zip(&spec.sparsity_weights)
            .map(|(&s, &w)| (w / total, level(s)))
            .collect(),
    )
}

fn signal_model(spec: &ExperimentSpec, phi: &Dictionary, seed: u64) -> SignalModel {
    let mut model = SignalModel::noiseless(phi.clone(), coefficient_model(spec), seed);
    if spec.snr > 0.0 {
        model = model.with_snr(spec.snr);
    }
    model.with_outliers(spec.outlier_rate)
}

fn random_init(d: usize, k: usize, seed: u64) -> Result<Dictionary, CliError> {
    runtime(random_sphere(d, k, &mut stream_rng(seed, 0)), "drawing the initial dictionary")
}

/// Sample mean and standard deviation (n − 1 denominator, 0 for one value);
/// missing values are skipped.
fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

fn write_rows<T: Serialize>(path: PathBuf, rows: &[T]) -> Result<(), CliError> {
    runtime(write_csv_file(&path, rows), &format!("writing {}", path.display()))
}

fn write_dictionary(dir: &Path, name: &str, dico: &Dictionary) -> Result<(), CliError> {
    let path = dir.join("dictionaries").join(format!("{name}.bin"));
    runtime(save_dictionary(&path, dico), &format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// fixed-size learning: plain_recovery, replacement_compare, fixedpoint_probe

struct FixedRun {
    strategy: Strategy,
    trial: usize,
    rows: Vec<TrajectoryRow>,
    dictionary: Dictionary,
}

#[derive(Serialize)]
struct FixedSummary {
    strategy: &'static str,
    trial: usize,
    recovered: usize,
    missing: usize,
    distance: f64,
    recovery_rate: f64,
    /// First iteration with recovery rate 1.
    full_recovery_iter: Option<usize>,
    replaced_total: usize,
    coherence: f64,
    cross_coherence: f64,
    diagonally_dominant: bool,
}

#[derive(Serialize)]
struct FixedAggregate {
    strategy: &'static str,
    iter: usize,
    trials: usize,
    distance_mean: Option<f64>,
    distance_std: Option<f64>,
    mean_atom_distance_mean: Option<f64>,
    mean_atom_distance_std: Option<f64>,
    recovery_rate_mean: Option<f64>,
    recovery_rate_std: Option<f64>,
    replaced_mean: Option<f64>,
}

fn learn_config(spec: &ExperimentSpec, strategy: Strategy, d: usize, seed: u64) -> Result<LearnConfig, CliError> {
    let policy = || runtime(ReplacementPolicy::new(spec.mu_max, spec.combine.into()), "replacement policy");
    let mut cfg = match strategy {
        Strategy::None => LearnConfig::plain(spec.s_e, seed),
        Strategy::Candidates => LearnConfig::with_candidates(spec.s_e, d, policy()?, seed),
        Strategy::Random => LearnConfig::with_random_replacement(spec.s_e, d, policy()?, seed),
    };
    cfg.engine.deterministic_reduction = spec.deterministic_reduction;
    Ok(cfg)
}

fn run_fixed_size(spec: &ExperimentSpec, manifest: &Manifest, dir: &Path) -> Result<(), CliError> {
    let eff = manifest.effective;
    let phi = generating_dictionary(spec)?;
    runtime(save_dictionary(dir.join("generating.bin"), &phi), "writing generating.bin")?;
    let strategies = if spec.scenario == Scenario::ReplacementCompare {
        spec.strategies.clone()
    } else {
        vec![Strategy::None]
    };
    let jobs: Vec<(usize, Strategy)> = manifest
        .trial_seeds
        .iter()
        .flat_map(|s| strategies.iter().map(move |&st| (s.trial, st)))
        .collect();
    let runs: Vec<FixedRun> = jobs
        .par_iter()
        .map(|&(trial, strategy)| -> Result<FixedRun, CliError> {
            let seeds = manifest.trial_seeds[trial];
            let start = Instant::now();
            let init = random_init(eff.d, eff.k, seeds.init)?;
            let mut source = runtime(
                SyntheticSource::new(signal_model(spec, &phi, seeds.data), eff.n),
                "signal model",
            )?;
            let cfg = learn_config(spec, strategy, eff.d, seeds.algorithm)?;
            let traj = runtime(
                run_learning(init, &mut source, &cfg, spec.iterations, Some(&phi), false),
                "learning",
            )?;
            eprintln!(
                "{} trial {trial}: recovery {:.3} ({:.1} s)",
                strategy.name(),
                traj.rows.last().and_then(|r| r.recovery_rate).unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
            Ok(FixedRun {
                strategy,
                trial,
                rows: traj.rows,
                dictionary: traj.dictionary,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut summary = Vec::with_capacity(runs.len());
    for run in &runs {
        let name = trial_name(run.strategy.name(), run.trial);
        write_rows(dir.join("trials").join(format!("{name}.csv")), &run.rows)?;
        write_dictionary(dir, &name, &run.dictionary)?;
        let report = runtime(theorem_conditions_report(&phi, &run.dictionary), "diagnostics")?;
        let recovered = runtime(recovered_count(&phi, &run.dictionary, RECOVERY_THRESHOLD), "recovery")?;
        summary.push(FixedSummary {
            strategy: run.strategy.name(),
            trial: run.trial,
            recovered,
            missing: eff.k - recovered,
            distance: report.distance,
            recovery_rate: recovered as f64 / eff.k as f64,
            full_recovery_iter: run
                .rows
                .iter()
                .find(|r| r.recovery_rate == Some(1.0))
                .map(|r| r.iter),
            replaced_total: run.rows.iter().map(|r| r.replaced).sum(),
            coherence: report.coherence,
            cross_coherence: report.cross_coherence,
            diagonally_dominant: report.diagonally_dominant,
        });
    }
    write_rows(dir.join("summary.csv"), &summary)?;

    let mut agg = Vec::new();
    for &strategy in &strategies {
        let group: Vec<&FixedRun> = runs.iter().filter(|r| r.strategy == strategy).collect();
        for i in 0..spec.iterations {
            let at = |f: &dyn Fn(&TrajectoryRow) -> Option<f64>| mean_std(group.iter().map(|r| f(&r.rows[i])));
            let (dm, ds) = at(&|r| r.distance);
            let (am, as_) = at(&|r| r.mean_atom_distance);
            let (rm, rs) = at(&|r| r.recovery_rate);
            agg.push(FixedAggregate {
                strategy: strategy.name(),
                iter: i + 1,
                trials: group.len(),
                distance_mean: dm,
                distance_std: ds,
                mean_atom_distance_mean: am,
                mean_atom_distance_std: as_,
                recovery_rate_mean: rm,
                recovery_rate_std: rs,
                replaced_mean: at(&|r| Some(r.replaced as f64)).0,
            });
        }
    }
    write_rows(dir.join("aggregate.csv"), &agg)
}

// ---------------------------------------------------------------------------
// adaptive runs

#[derive(Serialize)]
struct AdaptiveAggregate {
    iter: usize,
    trials: usize,
    #[serde(rename = "K_mean")]
    k_mean: Option<f64>,
    #[serde(rename = "K_std")]
    k_std: Option<f64>,
    #[serde(rename = "S_e_mean")]
    s_e_mean: Option<f64>,
    #[serde(rename = "S_e_std")]
    s_e_std: Option<f64>,
    distance_mean: Option<f64>,
    distance_std: Option<f64>,
    recovery_rate_mean: Option<f64>,
    recovery_rate_std: Option<f64>,
}

fn adaptive_aggregate(runs: &[&[AdaptiveRow]], iterations: usize) -> Vec<AdaptiveAggregate> {
    (0..iterations)
        .map(|i| {
            let at = |f: &dyn Fn(&AdaptiveRow) -> Option<f64>| mean_std(runs.iter().map(|r| f(&r[i])));
            let (km, ks) = at(&|r| Some(r.k as f64));
            let (sm, ss) = at(&|r| Some(r.s_e as f64));
            let (dm, ds) = at(&|r| r.distance);
            let (rm, rs) = at(&|r| r.recovery_rate);
            AdaptiveAggregate {
                iter: i + 1,
                trials: runs.len(),
                k_mean: km,
                k_std: ks,
                s_e_mean: sm,
                s_e_std: ss,
                distance_mean: dm,
                distance_std: ds,
                recovery_rate_mean: rm,
                recovery_rate_std: rs,
            }
        })
        .collect()
}

fn adaptive_config(spec: &ExperimentSpec, eff: &Effective, seed: u64) -> AdaptiveConfig {
    let mut cfg = AdaptiveConfig::new(eff.d, eff.min_observations, seed);
    cfg.mu_max = spec.mu_max;
    cfg.initial_sparsity = spec.s_e;
    cfg.deterministic_reduction = spec.deterministic_reduction;
    cfg
}

struct AdaptiveRun {
    trial: usize,
    rows: Vec<AdaptiveRow>,
    dictionary: Dictionary,
    final_sparsity: usize,
}

#[derive(Serialize)]
struct AdaptiveSummary {
    trial: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "S_e")]
    s_e: usize,
    distance: Option<f64>,
    recovery_rate: Option<f64>,
}

#[derive(Serialize)]
struct SortedErrorRow {
    rank: usize,
    error_mean: Option<f64>,
    error_std: Option<f64>,
}

fn run_adaptive_synthetic(spec: &ExperimentSpec, manifest: &Manifest, dir: &Path) -> Result<(), CliError> {
    let eff = manifest.effective;
    let phi = generating_dictionary(spec)?;
    runtime(save_dictionary(dir.join("generating.bin"), &phi), "writing generating.bin")?;
    let runs: Vec<AdaptiveRun> = manifest
        .trial_seeds
        .par_iter()
        .map(|seeds| -> Result<AdaptiveRun, CliError> {
            let start = Instant::now();
            let init = random_init(eff.d, eff.k_e, seeds.init)?;
            let mut source = runtime(
                SyntheticSource::new(signal_model(spec, &phi, seeds.data), eff.n),
                "signal model",
            )?;
            let cfg = adaptive_config(spec, &eff, seeds.algorithm);
            let traj = runtime(
                run_adaptive(init, &mut source, &cfg, spec.iterations, Some(&phi)),
                "adaptive learning",
            )?;
            eprintln!(
                "adaptive trial {}: K = {}, S_e = {} ({:.1} s)",
                seeds.trial,
                traj.dictionary.len(),
                traj.final_sparsity,
                start.elapsed().as_secs_f64()
            );
            Ok(AdaptiveRun {
                trial: seeds.trial,
                rows: traj.rows,
                dictionary: traj.dictionary,
                final_sparsity: traj.final_sparsity,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut summary = Vec::new();
    let mut errors = Vec::new();
    for run in &runs {
        let name = trial_name("adaptive", run.trial);
        write_rows(dir.join("trials").join(format!("{name}.csv")), &run.rows)?;
        write_dictionary(dir, &name, &run.dictionary)?;
        let last = run.rows.last().expect("at least one iteration");
        summary.push(AdaptiveSummary {
            trial: run.trial,
            k: run.dictionary.len(),
            s_e: run.final_sparsity,
            distance: last.distance,
            recovery_rate: last.recovery_rate,
        });
        errors.push(runtime(sorted_atom_errors(&phi, &run.dictionary), "sorted errors")?);
    }
    write_rows(dir.join("summary.csv"), &summary)?;
    let sorted: Vec<SortedErrorRow> = (0..eff.k)
        .map(|i| {
            let (m, s) = mean_std(errors.iter().map(|e| e.get(i).copied()));
            SortedErrorRow {
                rank: i + 1,
                error_mean: m,
                error_std: s,
            }
        })
        .collect();
    write_rows(dir.join("sorted_errors.csv"), &sorted)?;
    let rows: Vec<&[AdaptiveRow]> = runs.iter().map(|r| r.rows.as_slice()).collect();
    write_rows(dir.join("aggregate.csv"), &adaptive_aggregate(&rows, spec.iterations))
}

#[derive(Serialize)]
struct ImageSummary {
    trial: usize,
    psnr: f64,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "S_e")]
    s_e: usize,
}

#[derive(Serialize)]
struct ApproxAggregate {
    #[serde(rename = "S")]
    s: usize,
    relative_error_mean: Option<f64>,
    relative_error_std: Option<f64>,
}

fn run_adaptive_image(spec: &ExperimentSpec, manifest: &Manifest, dir: &Path) -> Result<(), CliError> {
    let eff = manifest.effective;
    let path = spec.image.as_ref().expect("validated");
    let clean = runtime(load_image_gray(path), &format!("reading {}", path.display()))?;
    let patch_cfg = PatchConfig {
        patch_side: spec.patch_side,
        ..PatchConfig::default()
    };
    let eval_cfg = PatchConfig {
        remove_mean: false,
        ..patch_cfg
    };
    let eval_batch = runtime(extract_patches(&clean, &eval_cfg), "extracting patches")?;
    let runs: Vec<(AdaptiveRun, f64, Vec<f64>)> = manifest
        .trial_seeds
        .par_iter()
        .map(|seeds| -> Result<_, CliError> {
            let start = Instant::now();
            let noisy = runtime(
                add_image_noise(&clean, spec.noise_sigma, &mut stream_rng(seeds.noise, 0)),
                "adding noise",
            )?;
            let quality = runtime(psnr(&clean, &noisy), "psnr")?;
            let training: SignalBatch = runtime(extract_patches(&noisy, &patch_cfg), "extracting patches")?;
            let mut source = runtime(FixedSource::new(training), "patch source")?;
            let init = random_init(eff.d, eff.k_e, seeds.init)?;
            let cfg = adaptive_config(spec, &eff, seeds.algorithm);
            let traj = runtime(
                run_adaptive(init, &mut source, &cfg, spec.iterations, None),
                "adaptive learning",
            )?;
            let s_max = spec.s_max.min(eff.d.min(traj.dictionary.len() + 1));
            let flat = FlatAtom {
                augment: true,
                force: false,
            };
            let approx = runtime(
                approximation_power(&traj.dictionary, &eval_batch, s_max, flat),
                "approximation error",
            )?;
            eprintln!(
                "image trial {}: K = {}, S_e = {} ({:.1} s)",
                seeds.trial,
                traj.dictionary.len(),
                traj.final_sparsity,
                start.elapsed().as_secs_f64()
            );
            Ok((
                AdaptiveRun {
                    trial: seeds.trial,
                    rows: traj.rows,
                    dictionary: traj.dictionary,
                    final_sparsity: traj.final_sparsity,
                },
                quality,
                approx.relative_error,
            ))
        })
        .collect::<Result<_, _>>()?;

    let mut summary = Vec::new();
    for (run, quality, approx) in &runs {
        let name = trial_name("adaptive", run.trial);
        write_rows(dir.join("trials").join(format!("{name}.csv")), &run.rows)?;
        let approx_rows: Vec<ApproxAggregate> = approx
            .iter()
            .enumerate()
            .map(|(i, &e)| ApproxAggregate {
                s: i + 1,
                relative_error_mean: Some(e),
                relative_error_std: None,
            })
            .collect();
        write_rows(
            dir.join("trials").join(format!("{}.csv", trial_name("approx", run.trial))),
            &approx_rows,
        )?;
        write_dictionary(dir, &name, &run.dictionary)?;
        summary.push(ImageSummary {
            trial: run.trial,
            psnr: *quality,
            k: run.dictionary.len(),
            s_e: run.final_sparsity,
        });
    }
    write_rows(dir.join("summary.csv"), &summary)?;
    let s_max = runs.iter().map(|r| r.2.len()).max().unwrap_or(0);
    let approx: Vec<ApproxAggregate> = (0..s_max)
        .map(|i| {
            let (m, s) = mean_std(runs.iter().map(|r| r.2.get(i).copied()));
            ApproxAggregate {
                s: i + 1,
                relative_error_mean: m,
                relative_error_std: s,
            }
        })
        .collect();
    write_rows(dir.join("approx_aggregate.csv"), &approx)?;
    let rows: Vec<&[AdaptiveRow]> = runs.iter().map(|r| r.0.rows.as_slice()).collect();
    write_rows(dir.join("aggregate.csv"), &adaptive_aggregate(&rows, spec.iterations))
}

// ---------------------------------------------------------------------------
// contraction sweep

#[derive(Serialize)]
struct ContractionRow {
    eps: f64,
    trial: usize,
    before: f64,
    after: f64,
    factor: f64,
    decreased: bool,
}

#[derive(Serialize)]
struct ContractionAggregate {
    eps: f64,
    trials: usize,
    decreased_fraction: f64,
    factor_mean: Option<f64>,
    factor_std: Option<f64>,
    after_mean: Option<f64>,
}

fn run_contraction(spec: &ExperimentSpec, manifest: &Manifest, dir: &Path) -> Result<(), CliError> {
    let eff = manifest.effective;
    let phi = generating_dictionary(spec)?;
    runtime(save_dictionary(dir.join("generating.bin"), &phi), "writing generating.bin")?;
    let jobs: Vec<(usize, usize)> = (0..spec.eps.len())
        .flat_map(|e| (0..spec.trials).map(move |t| (e, t)))
        .collect();
    let rows: Vec<ContractionRow> = jobs
        .par_iter()
        .map(|&(e, trial)| -> Result<ContractionRow, CliError> {
            let seeds = manifest.trial_seeds[trial];
            let eps = spec.eps[e];
            let init = runtime(
                perturbed(&phi, eps, &mut stream_rng(seeds.init, e as u64)),
                "perturbing the generating dictionary",
            )?;
            let before = runtime(asym_distance(&phi, &init), "distance")?.0;
            let mut source = runtime(
                SyntheticSource::new(signal_model(spec, &phi, seeds.data), eff.n),
                "signal model",
            )?;
            let cfg = learn_config(spec, Strategy::None, eff.d, seeds.algorithm)?;
            let traj = runtime(
                run_learning(init, &mut source, &cfg, spec.iterations, None, false),
                "learning",
            )?;
            let after = runtime(asym_distance(&phi, &traj.dictionary), "distance")?.0;
            Ok(ContractionRow {
                eps,
                trial,
                before,
                after,
                factor: after / before,
                decreased: after < before,
            })
        })
        .collect::<Result<_, _>>()?;
    write_rows(dir.join("trials").join("contraction.csv"), &rows)?;
    let agg: Vec<ContractionAggregate> = spec
        .eps
        .iter()
        .map(|&eps| {
            let group: Vec<&ContractionRow> = rows.iter().filter(|r| r.eps == eps).collect();
            let (fm, fs) = mean_std(group.iter().map(|r| Some(r.factor)));
            ContractionAggregate {
                eps,
                trials: group.len(),
                decreased_fraction: group.iter().filter(|r| r.decreased).count() as f64 / group.len() as f64,
                factor_mean: fm,
                factor_std: fs,
                after_mean: mean_std(group.iter().map(|r| Some(r.after))).0,
            }
        })
        .collect();
    write_rows(dir.join("aggregate.csv"), &agg)
}
