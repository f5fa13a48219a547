//! Synthetic training signals.
//!
//! A signal is y = (Φ x + r)/√(1 + ‖r‖²) where x(k) = σ(k)·c(p(k)) for a
//! non-increasing unit-norm sequence c, a uniform permutation p and uniform
//! signs σ, and r is Gaussian with per-component standard deviation ρ_c.
//! A fraction of the signals can be replaced by pure Gaussian outliers.

use nalgebra::{DMatrix, DVectorView};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Distribution of the non-increasing coefficient sequence c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientModel {
    /// c_i ∝ q^{i−1} for i ≤ S with q uniform in [q_min, q_max].
    Geometric { q_min: f64, q_max: f64, sparsity: usize },
    /// c = (1, b)/√(1 + b²) with b uniform in [b_min, b_max].
    TwoSparseB { b_min: f64, b_max: f64 },
    /// c_i = 1/√S for i ≤ S.
    Balanced { sparsity: usize },
    /// Draws one component per signal according to the weights.
    Mixture(Vec<(f64, CoefficientModel)>),
}

impl CoefficientModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Geometric { q_min, q_max, sparsity } => {
                if !(*q_min > 0.0 && q_min <= q_max && *q_max <= 1.0) {
                    return Err(invalid("q", format!("need 0 < q_min <= q_max <= 1, got [{q_min}, {q_max}]")));
                }
                if *sparsity == 0 {
                    return Err(invalid("sparsity", "must be positive"));
                }
            }
            Self::TwoSparseB { b_min, b_max } => {
                if !(*b_min >= 0.0 && b_min <= b_max && *b_max <= 1.0) {
                    return Err(invalid("b", format!("need 0 <= b_min <= b_max <= 1, got [{b_min}, {b_max}]")));
                }
            }
            Self::Balanced { sparsity } => {
                if *sparsity == 0 {
                    return Err(invalid("sparsity", "must be positive"));
                }
            }
            Self::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(invalid("mixture", "no components"));
                }
                let total: f64 = parts.iter().map(|p| p.0).sum();
                if parts.iter().any(|p| p.0 < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(invalid("mixture", format!("weights must be nonnegative and sum to 1, sum = {total}")));
                }
                for (_, m) in parts {
                    m.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Largest sparsity any draw can have.
    pub fn max_sparsity(&self) -> usize {
        match self {
            Self::Geometric { sparsity, .. } | Self::Balanced { sparsity } => *sparsity,
            Self::TwoSparseB { .. } => 2,
            Self::Mixture(parts) => parts.iter().map(|p| p.1.max_sparsity()).max().unwrap_or(0),
        }
    }

    /// Expected sparsity level.
    pub fn mean_sparsity(&self) -> f64 {
        match self {
            Self::Mixture(parts) => parts.iter().map(|(w, m)| w * m.mean_sparsity()).sum(),
            other => other.max_sparsity() as f64,
        }
    }
}

/// Draws the nonzero prefix (c(1), …, c(S)) of a coefficient sequence; all
/// later entries are zero. The result is non-increasing with unit ℓ2 norm.
pub fn draw_coefficients<R: Rng + ?Sized>(model: &CoefficientModel, rng: &mut R) -> Vec<f64> {
    let mut c = match model {
        CoefficientModel::Geometric { q_min, q_max, sparsity } => {
            let q = if q_min == q_max { *q_min } else { rng.random_range(*q_min..=*q_max) };
            let mut v = Vec::with_capacity(*sparsity);
            let mut w = 1.0;
            for _ in 0..*sparsity {
                v.push(w);
                w *= q;
            }
            v
        }
        CoefficientModel::TwoSparseB { b_min, b_max } => {
            let b = if b_min == b_max { *b_min } else { rng.random_range(*b_min..=*b_max) };
            vec![1.0, b]
        }
        CoefficientModel::Balanced { sparsity } => vec![1.0; *sparsity],
        CoefficientModel::Mixture(parts) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = &parts[parts.len() - 1].1;
            for (w, m) in parts {
                acc += w;
                if u < acc {
                    chosen = m;
                    break;
                }
            }
            return draw_coefficients(chosen, rng);
        }
    };
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut c {
        *v /= norm;
    }
    c
}

/// Generative model for a synthetic batch.
#[derive(Debug, Clone)]
pub struct SignalModel {
    pub dictionary: Dictionary,
    pub coeffs: CoefficientModel,
    /// ρ_c, so that E‖r‖² = d·ρ_c².
    pub noise_std: f64,
    pub outlier_rate: f64,
    /// Per-component standard deviation of outlier signals.
    pub outlier_std: f64,
    pub seed: u64,
}

impl SignalModel {
    /// Noiseless, outlier-free model.
    pub fn noiseless(dictionary: Dictionary, coeffs: CoefficientModel, seed: u64) -> Self {
        let d = dictionary.dim();
        Self {
            dictionary,
            coeffs,
            noise_std: 0.0,
            outlier_rate: 0.0,
            outlier_std: 1.0 / d as f64,
            seed,
        }
    }

    /// Sets ρ_c so that E‖r‖² = 1/snr.
    pub fn with_snr(mut self, snr: f64) -> Self {
        self.noise_std = noise_std_for_snr(self.dictionary.dim(), snr);
        self
    }

    pub fn with_outliers(mut self, rate: f64) -> Self {
        self.outlier_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.coeffs.validate()?;
        if self.coeffs.max_sparsity() > self.dictionary.len() {
            return Err(invalid("sparsity", "exceeds the number of atoms"));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(invalid("outlier_rate", format!("{} not in [0, 1)", self.outlier_rate)));
        }
        if self.noise_std < 0.0 || self.outlier_std < 0.0 {
            return Err(invalid("noise_std", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-component noise standard deviation giving E‖r‖² = 1/snr in ℝ^d.
pub fn noise_std_for_snr(d: usize, snr: f64) -> f64 {
    (1.0 / (snr * d as f64)).sqrt()
}

/// Ground truth of one synthetic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTruth {
    /// Support I, ordered so that `support[i]` carries coefficient c(i+1).
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
    /// c(1), …, c(S).
    pub coefficients: Vec<f64>,
    pub is_outlier: bool,
    /// ‖r‖² before the 1/√(1+‖r‖²) rescaling.
    pub noise_norm_sq: f64,
}

/// N signals in ℝ^d, stored as the columns of a d×N matrix.
#[derive(Debug, Clone)]
pub struct SignalBatch {
    pub signals: DMatrix<f64>,
    pub truth: Option<Vec<SignalTruth>>,
}

impl SignalBatch {
    pub fn from_matrix(signals: DMatrix<f64>) -> Self {
        Self { signals, truth: None }
    }

    pub fn dim(&self) -> usize {
        self.signals.nrows()
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.ncols() == 0
    }

    pub fn signal(&self, n: usize) -> DVectorView<'_, f64> {
        self.signals.column(n)
    }
}

/// Generates batch number `batch_index` of the model. Every signal draws from
/// its own stream keyed by (model seed, batch index, signal index).
pub fn generate_batch(model: &SignalModel, n: usize, batch_index: u64) -> Result<SignalBatch> {
    if n == 0 {
        return Err(invalid("n", "batch must contain at least one signal"));
    }
    model.validate()?;
    let d = model.dictionary.dim();
    let k = model.dictionary.len();
    let seed = derive_seed(model.seed, batch_index);
    let mut signals = DMatrix::<f64>::zeros(d, n);
    let truth: Vec<SignalTruth> = signals
        .as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, y)| {
            let mut rng = stream_rng(seed, i as u64);
            if model.outlier_rate > 0.0 && rng.random::<f64>() < model.outlier_rate {
                for v in y.iter_mut() {
                    *v = model.outlier_std * rng.sample::<f64, _>(StandardNormal);
                }
                return SignalTruth {
                    support: Vec::new(),
                    signs: Vec::new(),
                    coefficients: Vec::new(),
                    is_outlier: true,
                    noise_norm_sq: 0.0,
                };
            }
            let c = draw_coefficients(&model.coeffs, &mut rng);
            let support = index::sample(&mut rng, k, c.len()).into_vec();
            let signs: Vec<i8> = (0..c.len()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            for ((&atom, &s), &ci) in support.iter().zip(&signs).zip(&c) {
                let col = model.dictionary.atom(atom);
                let w = f64::from(s) * ci;
                for (v, a) in y.iter_mut().zip(col.iter()) {
                    *v += w * a;
                }
            }
            let mut noise_sq = 0.0;
            if model.noise_std > 0.0 {
                for v in y.iter_mut() {
                    let r = model.noise_std * rng.sample::<f64, _>(StandardNormal);
                    noise_sq += r * r;
                    *v += r;
                }
                let scale = 1.0 / (1.0 + noise_sq).sqrt();
                for v in y.iter_mut() {
                    *v *= scale;
                }
            }
            SignalTruth {
                support,
                signs,
                coefficients: c,
                is_outlier: false,
                noise_norm_sq: noise_sq,
            }
        })
        .collect();
    Ok(SignalBatch {
        signals,
        truth: Some(truth),
    })
}

/// Monte-Carlo estimates of the signal-model constants over the non-outlier
/// signals of a synthetic batch.
#[derive(Debug, Clone, Serialize)]
pub struct SignalStats {
    /// E‖c(𝕊)‖₁
    pub gamma1: f64,
    /// E‖c(𝕊)‖₂²
    pub gamma2: f64,
    /// max c(1)/c(S)
    pub dynamic_range: f64,
    /// max c(S+1)/c(S)
    pub gap: f64,
    /// max ‖c(𝕊ᶜ)‖₂/c(1)
    pub approx_err: f64,
    /// ρ̂ / min c(S), with ρ̂² the empirical per-component noise variance.
    pub ncr: f64,
    /// E 1/√(1+‖r‖²)
    pub noise_constant: f64,
    /// E‖r‖²
    pub mean_noise_energy: f64,
    pub signals: usize,
}

pub fn empirical_signal_stats(batch: &SignalBatch) -> Result<SignalStats> {
    let truth = batch
        .truth
        .as_ref()
        .ok_or_else(|| Error::Domain("signal statistics need ground truth".into()))?;
    let d = batch.dim() as f64;
    let mut stats = SignalStats {
        gamma1: 0.0,
        gamma2: 0.0,
        dynamic_range: 0.0,
        gap: 0.0,
        approx_err: 0.0,
        ncr: 0.0,
        noise_constant: 0.0,
        mean_noise_energy: 0.0,
        signals: 0,
    };
    let mut min_cs = f64::INFINITY;
    for t in truth.iter().filter(|t| !t.is_outlier) {
        let s = t.support.len();
        let c = &t.coefficients;
        if s == 0 || c.is_empty() {
            continue;
        }
        stats.signals += 1;
        stats.gamma1 += c[..s].iter().sum::<f64>();
        stats.gamma2 += c[..s].iter().map(|v| v * v).sum::<f64>();
        let cs = c[s - 1];
        min_cs = min_cs.min(cs);
        stats.dynamic_range = stats.dynamic_range.max(c[0] / cs);
        let tail = c.get(s).copied().unwrap_or(0.0);
        stats.gap = stats.gap.max(tail / cs);
        let tail_energy = c[s.min(c.len())..].iter().map(|v| v * v).sum::<f64>().sqrt();
        stats.approx_err = stats.approx_err.max(tail_energy / c[0]);
        stats.noise_constant += 1.0 / (1.0 + t.noise_norm_sq).sqrt();
        stats.mean_noise_energy += t.noise_norm_sq;
    }
    if stats.signals == 0 {
        return Err(Error::Domain("batch has no sparse signals".into()));
    }
    let n = stats.signals as f64;
    stats.gamma1 /= n;
    stats.gamma2 /= n;
    stats.noise_constant /= n;
    stats.mean_noise_energy /= n;
    let rho = (stats.mean_noise_energy / d).sqrt();
    stats.ncr = rho / min_cs;
    Ok(stats)
}
