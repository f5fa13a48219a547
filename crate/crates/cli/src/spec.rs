//! Experiment specifications.
//!
//! Values are resolved in three layers: command-line flags win over the
//! config file, which wins over the scenario defaults. Config files are flat
//! TOML whose keys are the field names below (`K`, `S`, `N` in upper case);
//! a run manifest (`manifest.json`) is accepted as well.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use itkrm::candidates::CombineMode;
use itkrm::engine::log_round;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scenario {
    #[serde(alias = "plain-recovery")]
    #[value(alias = "plain-recovery")]
    PlainRecovery,
    #[serde(alias = "replacement-compare")]
    #[value(alias = "replacement-compare")]
    ReplacementCompare,
    #[serde(alias = "adaptive-synthetic")]
    #[value(alias = "adaptive-synthetic")]
    AdaptiveSynthetic,
    #[serde(alias = "adaptive-image")]
    #[value(alias = "adaptive-image")]
    AdaptiveImage,
    #[serde(alias = "fixedpoint-probe")]
    #[value(alias = "fixedpoint-probe")]
    FixedpointProbe,
    #[serde(alias = "contraction-sweep")]
    #[value(alias = "contraction-sweep")]
    ContractionSweep,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::PlainRecovery => "plain_recovery",
            Self::ReplacementCompare => "replacement_compare",
            Self::AdaptiveSynthetic => "adaptive_synthetic",
            Self::AdaptiveImage => "adaptive_image",
            Self::FixedpointProbe => "fixedpoint_probe",
            Self::ContractionSweep => "contraction_sweep",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::AdaptiveSynthetic | Self::AdaptiveImage)
    }
}

/// Which subcommand a spec is parsed for; restricts the admissible scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Any,
    Learn,
    Probe,
}

impl Family {
    fn default_scenario(self) -> Scenario {
        match self {
            Family::Any | Family::Learn => Scenario::ReplacementCompare,
            Family::Probe => Scenario::FixedpointProbe,
        }
    }

    fn admits(self, s: Scenario) -> bool {
        let probe = matches!(s, Scenario::FixedpointProbe | Scenario::ContractionSweep);
        match self {
            Family::Any => true,
            Family::Learn => !probe,
            Family::Probe => probe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DictKind {
    #[serde(alias = "random_sphere")]
    #[value(alias = "random_sphere")]
    RandomSphere,
    #[serde(alias = "dirac_hadamard")]
    #[value(alias = "dirac_hadamard")]
    DiracHadamard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    /// c_i ∝ q^{i−1}, q uniform in [q_min, q_max].
    Geometric,
    /// c_i = 1/√S.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Random,
    Candidates,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Random => "random",
            Strategy::Candidates => "candidates",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Delete,
    Merge,
    Add,
}

impl From<Combine> for CombineMode {
    fn from(c: Combine) -> Self {
        match c {
            Combine::Delete => CombineMode::Delete,
            Combine::Merge => CombineMode::Merge,
            Combine::Add => CombineMode::Add,
        }
    }
}

/// Partially specified experiment, as given on the command line or in a
/// config file. `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecInput {
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    /// Signal dimension.
    #[arg(long = "d")]
    pub d: Option<usize>,
    /// Number of generating atoms.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub dict: Option<DictKind>,
    /// Signal sparsity levels, comma separated.
    #[arg(long = "S", value_delimiter = ',')]
    #[serde(rename = "S")]
    pub sparsity: Option<Vec<usize>>,
    /// Relative frequencies of the sparsity levels.
    #[arg(long, value_delimiter = ',')]
    pub sparsity_weights: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub coeffs: Option<CoeffKind>,
    #[arg(long)]
    pub q_min: Option<f64>,
    #[arg(long)]
    pub q_max: Option<f64>,
    /// Signal-to-noise ratio; 0 for noiseless signals.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    /// Training signals per iteration.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sparsity level given to the algorithm (initial level when adaptive).
    #[arg(long)]
    pub s_e: Option<usize>,
    #[arg(long)]
    pub mu_max: Option<f64>,
    #[arg(long, value_enum)]
    pub combine: Option<Combine>,
    /// Replacement strategies compared in replacement_compare.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    /// Initial dictionary size for adaptive runs.
    #[arg(long = "K-e")]
    #[serde(rename = "K_e")]
    pub k_e: Option<usize>,
    /// Minimal reliable observations M; defaults to round(d·ln d).
    #[arg(long)]
    pub min_observations: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shrinks d, K, N and K_e proportionally.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// 8-bit grayscale image for adaptive_image.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Pixel noise standard deviation on the 0–255 scale.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub patch_side: Option<usize>,
    /// Perturbation sizes for contraction_sweep.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Largest sparsity level of the approximation error curve.
    #[arg(long)]
    pub s_max: Option<usize>,
    #[arg(long)]
    pub deterministic_reduction: Option<bool>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),* $(,)?) => {
        SpecInput { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl SpecInput {
    /// Fields of `self` take precedence over those of `lower`.
    pub fn overlay(self, lower: SpecInput) -> SpecInput {
        overlay!(self, lower;
            scenario, d, k, dict, sparsity, sparsity_weights, coeffs, q_min, q_max, snr,
            outlier_rate, n, iterations, s_e, mu_max, combine, strategies, k_e,
            min_observations, trials, seed, scale, output_dir, image, noise_sigma,
            patch_side, eps, s_max, deterministic_reduction,
        )
    }
}

/// Fully resolved experiment. d, K, N and K_e are stored before scaling;
/// [`ExperimentSpec::effective`] applies `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub dict: DictKind,
    #[serde(rename = "S")]
    pub sparsity: Vec<usize>,
    pub sparsity_weights: Vec<f64>,
    pub coeffs: CoeffKind,
    pub q_min: f64,
    pub q_max: f64,
    pub snr: f64,
    pub outlier_rate: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub iterations: usize,
    pub s_e: usize,
    pub mu_max: f64,
    pub combine: Combine,
    pub strategies: Vec<Strategy>,
    #[serde(rename = "K_e")]
    pub k_e: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_observations: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub scale: f64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub noise_sigma: f64,
    pub patch_side: usize,
    pub eps: Vec<f64>,
    pub s_max: usize,
    pub deterministic_reduction: bool,
}

/// Sizes actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Effective {
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K_e")]
    pub k_e: usize,
    #[serde(rename = "M")]
    pub min_observations: usize,
    /// L = m = round(ln d).
    pub memory: usize,
}

fn scaled(v: usize, scale: f64, min: usize) -> usize {
    ((v as f64 * scale).round() as usize).max(min)
}

impl ExperimentSpec {
    pub fn effective(&self) -> Effective {
        let image = self.scenario == Scenario::AdaptiveImage;
        let s = if image { 1.0 } else { self.scale };
        let d = if image { self.patch_side * self.patch_side } else { scaled(self.d, s, 2) };
        let k = scaled(self.k, s, 1);
        Effective {
            d,
            k,
            n: scaled(self.n, s, 1),
            k_e: scaled(self.k_e, s, 1),
            min_observations: self
                .min_observations
                .unwrap_or_else(|| itkrm::adaptive::min_observations_d_log_d(d)),
            memory: log_round(d),
        }
    }

    /// Mean signal sparsity under the level weights.
    pub fn mean_sparsity(&self) -> f64 {
        let total: f64 = self.sparsity_weights.iter().sum();
        self.sparsity
            .iter()
            .zip(&self.sparsity_weights)
            .map(|(&s, &w)| s as f64 * w)
            .sum::<f64>()
            / total
    }
}

fn spec_err(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Spec {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Reads a TOML config file or a run manifest (`.json`, its `spec` object).
pub fn read_config(path: &Path) -> Result<SpecInput, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let spec = value.get("spec").cloned().unwrap_or(value);
        serde_json::from_value(spec).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e: toml::de::Error| e.message().to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Resolves flags and an optional config file against the defaults of the
/// chosen scenario (replacement_compare when none is given).
pub fn parse_spec(flags: &SpecInput, config_file: Option<&Path>) -> Result<ExperimentSpec, CliError> {
    parse_spec_for(Family::Any, flags, config_file)
}

pub fn parse_spec_for(family: Family, flags: &SpecInput, config_file: Option<&Path>) -> Result<ExperimentSpec, CliError> {
    let file = match config_file {
        Some(p) => read_config(p)?,
        None => SpecInput::default(),
    };
    resolve(family, flags.clone().overlay(file))
}

/// Scenario defaults. Synthetic scenarios follow the replacement-experiment
/// setup (d = 128, K = 192, 6-sparse geometric coefficients, SNR 16, 5 %
/// outliers, N = 120000); fixedpoint_probe uses the small Dirac–Hadamard
/// setup; adaptive runs use 4/6/8-sparse signals in a 1:2:1 ratio.
fn defaults(scenario: Scenario) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        scenario,
        d: 128,
        k: 192,
        dict: DictKind::RandomSphere,
        sparsity: vec![6],
        sparsity_weights: vec![1.0],
        coeffs: CoeffKind::Geometric,
        q_min: 0.9,
        q_max: 1.0,
        snr: 16.0,
        outlier_rate: 0.05,
        n: 120_000,
        iterations: 100,
        s_e: 6,
        mu_max: 0.7,
        combine: Combine::Merge,
        strategies: vec![Strategy::None, Strategy::Random, Strategy::Candidates],
        k_e: 128,
        min_observations: None,
        trials: 20,
        seed: 0,
        scale: 1.0,
        output_dir: PathBuf::from(format!("runs/{}", scenario.name())),
        image: None,
        noise_sigma: 0.0,
        patch_side: 8,
        eps: vec![0.1, 0.3],
        s_max: 16,
        deterministic_reduction: true,
    };
    match scenario {
        Scenario::PlainRecovery | Scenario::ReplacementCompare => {}
        Scenario::FixedpointProbe => {
            spec.d = 32;
            spec.k = 48;
            spec.dict = DictKind::DiracHadamard;
            spec.sparsity = vec![2];
            spec.s_e = 2;
            spec.outlier_rate = 0.0;
            spec.n = 20_000;
            spec.iterations = 25;
            spec.trials = 10;
        }
        Scenario::AdaptiveSynthetic => {
            spec.sparsity = vec![4, 6, 8];
            spec.sparsity_weights = vec![1.0, 2.0, 1.0];
            spec.s_e = 1;
            spec.trials = 10;
        }
        Scenario::AdaptiveImage => {
            spec.d = 64;
            spec.k_e = 64;
            spec.s_e = 1;
            spec.outlier_rate = 0.0;
            spec.trials = 10;
            spec.s_max = 12;
        }
        Scenario::ContractionSweep => {
            spec.outlier_rate = 0.0;
            spec.iterations = 1;
            spec.trials = 40;
        }
    }
    spec
}

/// ⌈ln K⌉.
fn ceil_log(k: usize) -> usize {
    (k as f64).ln().ceil().max(1.0) as usize
}

fn resolve(family: Family, input: SpecInput) -> Result<ExperimentSpec, CliError> {
    let scenario = input.scenario.unwrap_or(family.default_scenario());
    if !family.admits(scenario) {
        let cmd = if family == Family::Probe { "probe" } else { "learn" };
        return Err(spec_err(
            "scenario",
            format!("{} cannot be run by `{cmd}`", scenario.name()),
        ));
    }
    // Settings that only one scenario reads must not be silently ignored;
    // values equal to the default (as in a run manifest) are accepted.
    let base = defaults(scenario);
    let conflicts: [(&str, bool, bool); 5] = [
        ("eps", input.eps.as_ref().is_some_and(|v| *v != base.eps), scenario == Scenario::ContractionSweep),
        ("image", input.image.is_some(), scenario == Scenario::AdaptiveImage),
        (
            "noise_sigma",
            input.noise_sigma.is_some_and(|v| v != base.noise_sigma),
            scenario == Scenario::AdaptiveImage,
        ),
        (
            "strategies",
            input.strategies.as_ref().is_some_and(|v| *v != base.strategies),
            scenario == Scenario::ReplacementCompare,
        ),
        ("K_e", input.k_e.is_some_and(|v| v != base.k_e), scenario.is_adaptive()),
    ];
    for (field, given, allowed) in conflicts {
        if given && !allowed {
            return Err(spec_err(field, format!("conflicts with scenario {}", scenario.name())));
        }
    }

    let mut spec = base;
    let sparsity_given = input.sparsity.is_some();
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = input.$f.clone() { spec.$f = v; } )* };
    }
    take!(d, k, dict, sparsity, coeffs, q_min, q_max, snr, outlier_rate, iterations, mu_max, combine, strategies,
        trials, seed, scale, output_dir, noise_sigma, patch_side, eps, s_max, deterministic_reduction);
    spec.image = input.image.clone();
    spec.min_observations = input.min_observations;

    spec.sparsity_weights = match (&input.sparsity_weights, sparsity_given) {
        (Some(w), _) => w.clone(),
        (None, true) => vec![1.0; spec.sparsity.len()],
        (None, false) => spec.sparsity_weights,
    };
    if scenario == Scenario::AdaptiveImage {
        let implied = spec.patch_side * spec.patch_side;
        if input.d.is_some_and(|d| d != implied) {
            return Err(spec_err("d", format!("adaptive_image uses d = patch_side² = {implied}")));
        }
        if input.scale.is_some_and(|s| s != 1.0) {
            return Err(spec_err("scale", "not applicable to adaptive_image"));
        }
        spec.d = implied;
    }
    spec.k_e = match input.k_e {
        Some(v) => v,
        None if scenario == Scenario::AdaptiveSynthetic => spec.d,
        None => spec.k_e,
    };
    if !spec.sparsity.is_empty() && spec.sparsity.len() == spec.sparsity_weights.len() {
        spec.s_e = match input.s_e {
            Some(v) => v,
            None if scenario.is_adaptive() => spec.s_e,
            None => spec.mean_sparsity().round() as usize,
        };
    } else if let Some(v) = input.s_e {
        spec.s_e = v;
    }
    spec.n = match input.n {
        Some(v) => v,
        None if scenario == Scenario::ContractionSweep => {
            spec.sparsity.iter().copied().max().unwrap_or(1) * spec.k * ceil_log(spec.k)
        }
        None => spec.n,
    };
    validate(&spec)?;
    Ok(spec)
}

pub fn validate(spec: &ExperimentSpec) -> Result<(), CliError> {
    if !(spec.scale.is_finite() && spec.scale > 0.0) {
        return Err(spec_err("scale", format!("{} is not a positive number", spec.scale)));
    }
    let eff = spec.effective();
    let (d, k) = (eff.d, eff.k);
    if d < 2 {
        return Err(spec_err("d", "must be at least 2"));
    }
    if k == 0 {
        return Err(spec_err("K", "must be positive"));
    }
    let synthetic = spec.scenario != Scenario::AdaptiveImage;
    if synthetic && spec.dict == DictKind::DiracHadamard {
        if !d.is_power_of_two() {
            return Err(spec_err("d", format!("{d} is not a power of two (dirac-hadamard)")));
        }
        if k > 2 * d {
            return Err(spec_err("K", format!("{k} exceeds 2d = {} (dirac-hadamard)", 2 * d)));
        }
    }
    if spec.sparsity.is_empty() {
        return Err(spec_err("S", "needs at least one level"));
    }
    if let Some(&s) = spec.sparsity.iter().find(|&&s| s == 0 || s > d.min(k)) {
        return Err(spec_err("S", format!("{s} not in [1, min(d, K)] = [1, {}]", d.min(k))));
    }
    if spec.sparsity_weights.len() != spec.sparsity.len() {
        return Err(spec_err(
            "sparsity_weights",
            format!("{} weights for {} sparsity levels", spec.sparsity_weights.len(), spec.sparsity.len()),
        ));
    }
    if spec.sparsity_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(spec_err("sparsity_weights", "weights must be positive"));
    }
    if !(spec.q_min > 0.0 && spec.q_min <= 1.0) {
        return Err(spec_err("q_min", format!("{} not in (0, 1]", spec.q_min)));
    }
    if !(spec.q_max >= spec.q_min && spec.q_max <= 1.0) {
        return Err(spec_err("q_max", format!("{} not in [q_min, 1]", spec.q_max)));
    }
    if !(spec.snr.is_finite() && spec.snr >= 0.0) {
        return Err(spec_err("snr", format!("{} is not a nonnegative number", spec.snr)));
    }
    if !(0.0..1.0).contains(&spec.outlier_rate) {
        return Err(spec_err("outlier_rate", format!("{} not in [0, 1)", spec.outlier_rate)));
    }
    if spec.n == 0 {
        return Err(spec_err("N", "must be positive"));
    }
    if spec.iterations == 0 {
        return Err(spec_err("iterations", "must be positive"));
    }
    let k_algo = if spec.scenario.is_adaptive() { eff.k_e } else { k };
    if spec.s_e == 0 || spec.s_e > d.min(k_algo) {
        return Err(spec_err("s_e", format!("{} not in [1, {}]", spec.s_e, d.min(k_algo))));
    }
    if !(spec.mu_max > 0.0 && spec.mu_max < 1.0) {
        return Err(spec_err("mu_max", format!("{} not in (0, 1)", spec.mu_max)));
    }
    if spec.strategies.is_empty() {
        return Err(spec_err("strategies", "needs at least one strategy"));
    }
    if spec.k_e == 0 {
        return Err(spec_err("K_e", "must be positive"));
    }
    if spec.min_observations == Some(0) {
        return Err(spec_err("min_observations", "must be positive"));
    }
    if spec.patch_side < 2 {
        return Err(spec_err("patch_side", "must be at least 2"));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(spec_err("noise_sigma", "must be nonnegative"));
    }
    if spec.eps.is_empty() || spec.eps.iter().any(|e| !(*e > 0.0 && *e <= 2f64.sqrt())) {
        return Err(spec_err("eps", "perturbation sizes must lie in (0, √2]"));
    }
    if spec.scenario == Scenario::AdaptiveImage {
        if spec.image.is_none() {
            return Err(spec_err("image", "required for adaptive_image"));
        }
        if spec.s_max == 0 || spec.s_max >= d {
            return Err(spec_err("s_max", format!("{} not in [1, d − 1]", spec.s_max)));
        }
    }
    Ok(())
}
