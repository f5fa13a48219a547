//! Distances between dictionaries, recovery rates and the contraction
//! diagnostics report.

use serde::Serialize;

use crate::dictionary::{coherence, cross_gram, Dictionary};
use crate::error::{invalid, Result};
use crate::linalg::operator_norm_sq;

/// Recovery threshold on |⟨φ_k, ψ_j⟩| used throughout the experiments.
pub const RECOVERY_THRESHOLD: f64 = 0.99;

#[inline]
fn atom_distance(abs_ip: f64) -> f64 {
    (2.0 - 2.0 * abs_ip.min(1.0)).max(0.0).sqrt()
}

/// For every reference atom, the best |inner product| with the estimate and
/// the index achieving it (lowest index on ties).
fn best_matches(reference: &Dictionary, estimate: &Dictionary) -> Result<Vec<(f64, usize)>> {
    let g = cross_gram(reference, estimate)?;
    Ok(g.row_iter()
        .map(|row| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (l, v) in row.iter().enumerate() {
                let a = v.abs();
                if a > best.0 {
                    best = (a, l);
                }
            }
            best
        })
        .collect())
}

/// d(reference, estimate) = max_k min_l √(2 − 2|⟨φ_k, ψ_l⟩|), together with the
/// minimising estimate index for every reference atom.
pub fn asym_distance(reference: &Dictionary, estimate: &Dictionary) -> Result<(f64, Vec<usize>)> {
    let matches = best_matches(reference, estimate)?;
    let dist = matches
        .iter()
        .map(|&(ip, _)| atom_distance(ip))
        .fold(0.0, f64::max);
    Ok((dist, matches.into_iter().map(|(_, l)| l).collect()))
}

/// (1/K) Σ_k min_l ‖φ_k ± ψ_l‖₂.
pub fn mean_atom_distance(reference: &Dictionary, estimate: &Dictionary) -> Result<f64> {
    let matches = best_matches(reference, estimate)?;
    let total: f64 = matches.iter().map(|&(ip, _)| atom_distance(ip)).sum();
    Ok(total / matches.len() as f64)
}

/// Per-reference-atom distance to the closest estimate atom, ascending.
pub fn sorted_atom_errors(reference: &Dictionary, estimate: &Dictionary) -> Result<Vec<f64>> {
    let mut errs: Vec<f64> = best_matches(reference, estimate)?
        .into_iter()
        .map(|(ip, _)| atom_distance(ip))
        .collect();
    errs.sort_by(f64::total_cmp);
    Ok(errs)
}

/// Number of reference atoms with max_j |⟨φ_k, ψ_j⟩| ≥ threshold.
pub fn recovered_count(reference: &Dictionary, estimate: &Dictionary, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid("threshold", format!("{threshold} not in (0, 1]")));
    }
    Ok(best_matches(reference, estimate)?
        .iter()
        .filter(|&&(ip, _)| ip >= threshold)
        .count())
}

/// Fraction of reference atoms recovered at `threshold`.
pub fn recovery_rate(reference: &Dictionary, estimate: &Dictionary, threshold: f64) -> Result<f64> {
    Ok(recovered_count(reference, estimate, threshold)? as f64 / reference.len() as f64)
}

/// Quantities entering the one-step contraction conditions for an estimate
/// Ψ of a generating dictionary Φ.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    /// μ(Ψ)
    pub coherence: f64,
    /// ‖Ψ‖²₂,₂
    pub operator_norm_sq: f64,
    /// μ(Φ)
    pub generating_coherence: f64,
    /// μ(Φ, Ψ) after matching: largest |⟨φ_k, ψ_l⟩| over non-matched pairs.
    pub cross_coherence: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// α_min / max{μ(Φ,Ψ), μ(Φ)}
    pub diag_dominance_ratio: f64,
    /// True when the best-match map is a bijection.
    pub matching_is_permutation: bool,
    /// True when the matched cross-Gram matrix is diagonally dominant.
    pub diagonally_dominant: bool,
    /// d(Φ, Ψ)
    pub distance: f64,
}

pub fn theorem_conditions_report(generating: &Dictionary, estimate: &Dictionary) -> Result<DiagnosticsReport> {
    let g = cross_gram(generating, estimate)?;
    let (distance, matching) = asym_distance(generating, estimate)?;

    let mut used = vec![false; estimate.len()];
    let mut bijective = generating.len() == estimate.len();
    for &l in &matching {
        if used[l] {
            bijective = false;
        }
        used[l] = true;
    }

    let alphas: Vec<f64> = matching
        .iter()
        .enumerate()
        .map(|(k, &l)| g[(k, l)].abs())
        .collect();
    let alpha_min = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let alpha_max = alphas.iter().cloned().fold(0.0, f64::max);

    let mut cross = 0.0f64;
    for k in 0..g.nrows() {
        for l in 0..g.ncols() {
            if l != matching[k] {
                cross = cross.max(g[(k, l)].abs());
            }
        }
    }

    let mu_phi = if generating.len() >= 2 { coherence(generating)? } else { 0.0 };
    let mu_psi = if estimate.len() >= 2 { coherence(estimate)? } else { 0.0 };
    let denom = cross.max(mu_phi);
    Ok(DiagnosticsReport {
        coherence: mu_psi,
        operator_norm_sq: operator_norm_sq(estimate),
        generating_coherence: mu_phi,
        cross_coherence: cross,
        alpha_min,
        alpha_max,
        diag_dominance_ratio: if denom > 0.0 { alpha_min / denom } else { f64::INFINITY },
        matching_is_permutation: bijective,
        diagonally_dominant: bijective && alpha_min > cross,
        distance,
    })
}
