//! One iteration of iterative thresholding and K residual means (ITKrM),
//! optionally augmented with atom scores, replacement candidates and the
//! sparsity-level estimate used for adaptive learning.
//!
//! Per signal y the iteration selects the S atoms with the largest |⟨ψ_k, y⟩|,
//! projects onto their span and adds `[a + P(ψ_k)y]·sign(⟨ψ_k, y⟩)` to the
//! accumulator of every selected atom, where a is the residual. Since
//! `P(ψ_k)y·sign(⟨ψ_k, y⟩) = |⟨ψ_k, y⟩|ψ_k`, that term is kept as one scalar
//! per atom and only expanded at the end.
//!
//! Signals are processed in fixed chunks. Partial sums of the chunks are
//! combined by a pairwise tree in chunk order, so the result does not depend
//! on the number of worker threads.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    adaptive_candidate_threshold, attribute_residual, replacement_candidate_threshold, CandidateSet,
};
use crate::dictionary::{sign, Dictionary, Support};
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::solve_normal_equations;
use crate::signal::{SignalBatch, SignalTruth};

/// Atoms whose accumulated vector has a smaller norm are not updated.
pub const DEAD_ATOM_FLOOR: f64 = 1e-3;

/// Signals per work unit.
pub const CHUNK_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Replacement,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Sparsity level S_e used for thresholding.
    pub sparsity: usize,
    pub variant: Variant,
    /// Number of replacement candidates L drawn per iteration.
    pub candidate_count: usize,
    /// Candidate sub-batches m per iteration.
    pub candidate_subbatches: usize,
    /// Minimal number of reliable observations M (adaptive atom counter).
    pub min_observations: usize,
    pub dead_atom_floor: f64,
    pub deterministic_reduction: bool,
}

impl EngineConfig {
    pub fn plain(sparsity: usize) -> Self {
        Self {
            sparsity,
            variant: Variant::Plain,
            candidate_count: 0,
            candidate_subbatches: 1,
            min_observations: 1,
            dead_atom_floor: DEAD_ATOM_FLOOR,
            deterministic_reduction: true,
        }
    }

    /// Replacement variant with L = m = round(log d).
    pub fn replacement(sparsity: usize, d: usize) -> Self {
        let m = log_round(d);
        Self {
            variant: Variant::Replacement,
            candidate_count: m,
            candidate_subbatches: m,
            ..Self::plain(sparsity)
        }
    }

    /// Adaptive variant with L = m = round(log d).
    pub fn adaptive(sparsity: usize, d: usize, min_observations: usize) -> Self {
        Self {
            variant: Variant::Adaptive,
            min_observations,
            ..Self::replacement(sparsity, d)
        }
    }

    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.sparsity == 0 || self.sparsity > d.min(k) {
            return Err(invalid(
                "sparsity",
                format!("{} not in [1, min(d, K)] = [1, {}]", self.sparsity, d.min(k)),
            ));
        }
        if self.candidate_subbatches == 0 {
            return Err(invalid("candidate_subbatches", "must be at least 1"));
        }
        if self.variant == Variant::Adaptive && self.min_observations == 0 {
            return Err(invalid("min_observations", "must be at least 1"));
        }
        if !(self.dead_atom_floor >= 0.0) {
            return Err(invalid("dead_atom_floor", "must be nonnegative"));
        }
        Ok(())
    }
}

/// round(ln d), at least 1.
pub fn log_round(d: usize) -> usize {
    ((d as f64).ln().round() as usize).max(1)
}

/// Thresholds of the per-signal counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterConfig {
    /// 2 log(2N/M) for the adaptive atom counter; `None` scores every selection.
    pub atom_log: Option<f64>,
    /// 2 log(4K) for the sparsity-level count; `None` disables it.
    pub sparsity_log: Option<f64>,
}

impl CounterConfig {
    pub const SIMPLE: Self = Self {
        atom_log: None,
        sparsity_log: None,
    };

    pub fn for_variant(variant: Variant, n_signals: usize, min_observations: usize, k: usize) -> Self {
        match variant {
            Variant::Plain | Variant::Replacement => Self::SIMPLE,
            Variant::Adaptive => Self {
                atom_log: Some(2.0 * (2.0 * n_signals as f64 / min_observations.max(1) as f64).ln()),
                sparsity_log: Some(2.0 * (4.0 * k as f64).ln()),
            },
        }
    }
}

/// Indices of the S largest |ips[k]|, ties to the lower index, in ascending
/// index order.
pub fn top_s(ips: &[f64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ips.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        ips[*b]
            .abs()
            .partial_cmp(&ips[*a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if s < idx.len() && s > 0 {
        idx.select_nth_unstable_by(s - 1, cmp);
    }
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

/// The S atoms with the largest absolute inner products with `y`.
pub fn threshold_support(dico: &Dictionary, y: &DVector<f64>, s: usize) -> Result<Support> {
    check_dim(dico.dim(), y.len())?;
    if s == 0 || s > dico.len() {
        return Err(invalid("sparsity", format!("{s} not in [1, {}]", dico.len())));
    }
    let ips = dico.matrix().tr_mul(y);
    Ok(Support::from_raw(top_s(ips.as_slice(), s)))
}

/// Everything one signal contributes to an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalUpdate {
    pub support: Support,
    /// ⟨ψ_k, y⟩ for k in the support, in support order.
    pub inner_products: Vec<f64>,
    /// Ψ_I† y in support order.
    pub coefficients: DVector<f64>,
    pub residual: DVector<f64>,
    /// Support members that passed the atom counter.
    pub score_hits: Vec<usize>,
    /// Coefficient hits plus residual hits of the sparsity count.
    pub sparsity_hits: usize,
    /// Coefficient hits alone.
    pub coefficient_hits: usize,
}

impl SignalUpdate {
    /// `[a + P(ψ_k)y]·sign(⟨ψ_k, y⟩)` for the j-th support member k.
    pub fn atom_increment(&self, dico: &Dictionary, j: usize) -> DVector<f64> {
        let k = self.support.indices()[j];
        let ip = self.inner_products[j];
        let s = sign(ip);
        &self.residual * s + dico.atom(k) * ip.abs()
    }
}

/// Thresholding, projection, residual and counters for one signal.
pub fn signal_update(
    dico: &Dictionary,
    y: &DVector<f64>,
    sparsity: usize,
    counters: &CounterConfig,
) -> Result<SignalUpdate> {
    check_dim(dico.dim(), y.len())?;
    if sparsity == 0 || sparsity > dico.len() {
        return Err(invalid("sparsity", format!("{sparsity} not in [1, {}]", dico.len())));
    }
    let ips = dico.matrix().tr_mul(y);
    let gram = dico.gram();
    let mut out = Scratch::new(dico.dim(), dico.len());
    out.process(dico.matrix(), &gram, y.as_view(), ips.as_slice(), sparsity, counters);
    let support = Support::from_raw(out.support.clone());
    let score_hits = out.score_hits.clone();
    Ok(SignalUpdate {
        inner_products: support.indices().iter().map(|&k| ips[k]).collect(),
        support,
        coefficients: out.coeffs.clone(),
        residual: out.residual.clone(),
        score_hits,
        sparsity_hits: out.sparsity_hits,
        coefficient_hits: out.coefficient_hits,
    })
}

/// Per-signal working memory, reused across the signals of one chunk.
struct Scratch {
    support: Vec<usize>,
    coeffs: DVector<f64>,
    residual: DVector<f64>,
    score_hits: Vec<usize>,
    sparsity_hits: usize,
    coefficient_hits: usize,
    /// false when the signal is zero and contributes nothing.
    active: bool,
    resid_ips: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, k: usize) -> Self {
        Self {
            support: Vec::new(),
            coeffs: DVector::zeros(0),
            residual: DVector::zeros(d),
            score_hits: Vec::new(),
            sparsity_hits: 0,
            coefficient_hits: 0,
            active: false,
            resid_ips: vec![0.0; k],
        }
    }

    fn process(
        &mut self,
        psi: &DMatrix<f64>,
        gram: &DMatrix<f64>,
        y: DVectorView<'_, f64>,
        ips: &[f64],
        s: usize,
        counters: &CounterConfig,
    ) {
        self.support = top_s(ips, s);
        self.score_hits.clear();
        self.sparsity_hits = 0;
        self.coefficient_hits = 0;
        let y_energy = y.norm_squared();
        self.active = y_energy > 0.0;
        if !self.active {
            self.coeffs = DVector::zeros(s);
            self.residual.fill(0.0);
            return;
        }

        let g_ii = DMatrix::from_fn(s, s, |i, j| gram[(self.support[i], self.support[j])]);
        let rhs = DVector::from_iterator(s, self.support.iter().map(|&k| ips[k]));
        self.coeffs = solve_normal_equations(&g_ii, &rhs);

        // a = y − Ψ_I x
        self.residual.copy_from(&y);
        for (j, &k) in self.support.iter().enumerate() {
            self.residual.axpy(-self.coeffs[j], &psi.column(k), 1.0);
        }
        let resid_energy = self.residual.norm_squared();
        // ‖Ψ_I x‖² = ‖y‖² − ‖a‖² by orthogonality
        let approx_energy = (y_energy - resid_energy).max(0.0);
        let d = psi.nrows() as f64;

        match counters.atom_log {
            None => self.score_hits.extend_from_slice(&self.support),
            Some(log) => {
                let tau = (log * resid_energy + approx_energy) / d;
                for (j, &k) in self.support.iter().enumerate() {
                    if self.coeffs[j] * self.coeffs[j] >= tau {
                        self.score_hits.push(k);
                    }
                }
            }
        }

        if let Some(log) = counters.sparsity_log {
            let theta = (log * resid_energy + approx_energy) / d;
            if theta > 0.0 {
                self.coefficient_hits = self.coeffs.iter().filter(|x| *x * *x >= theta).count();
                // Ψ*a = Ψ*y − G(:, I)x
                self.resid_ips.copy_from_slice(ips);
                for (j, &k) in self.support.iter().enumerate() {
                    let xj = self.coeffs[j];
                    for (r, g) in self.resid_ips.iter_mut().zip(gram.column(k).iter()) {
                        *r -= g * xj;
                    }
                }
                let missed = self.resid_ips.iter().filter(|r| *r * *r >= theta).count();
                self.sparsity_hits = self.coefficient_hits + missed;
            }
        }
    }
}

/// Result of one iteration.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub dictionary: Dictionary,
    /// Norms of the accumulated atom vectors before normalisation.
    pub raw_norms: Vec<f64>,
    pub scores: Vec<u64>,
    /// Atoms left unchanged because their accumulated norm was below the floor.
    pub dead: Vec<bool>,
    pub candidates: Option<CandidateSet>,
    /// Sum of the per-signal sparsity counts.
    pub sparsity_accumulator: u64,
    /// round(sparsity_accumulator / signals_used).
    pub s_bar: usize,
    /// Mean number of coefficient hits per signal.
    pub s_t: f64,
    /// Nonzero signals that entered the update.
    pub signals_used: usize,
}

/// Chunk-local sums.
struct Partial {
    residual_sum: DMatrix<f64>,
    self_weight: Vec<f64>,
    scores: Vec<u64>,
    cand_acc: DMatrix<f64>,
    cand_hits: Vec<u64>,
    sparsity: u64,
    coefficient_hits: u64,
    used: usize,
}

impl Partial {
    fn new(d: usize, k: usize, l: usize) -> Self {
        Self {
            residual_sum: DMatrix::zeros(d, k),
            self_weight: vec![0.0; k],
            scores: vec![0; k],
            cand_acc: DMatrix::zeros(d, l),
            cand_hits: vec![0; l],
            sparsity: 0,
            coefficient_hits: 0,
            used: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.residual_sum += &other.residual_sum;
        for (a, b) in self.self_weight.iter_mut().zip(&other.self_weight) {
            *a += b;
        }
        for (a, b) in self.scores.iter_mut().zip(&other.scores) {
            *a += b;
        }
        self.cand_acc += &other.cand_acc;
        for (a, b) in self.cand_hits.iter_mut().zip(&other.cand_hits) {
            *a += b;
        }
        self.sparsity += other.sparsity;
        self.coefficient_hits += other.coefficient_hits;
        self.used += other.used;
        self
    }
}

fn tree_reduce(mut parts: Vec<Partial>) -> Option<Partial> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop()
}

struct ChunkContext<'a> {
    psi: &'a DMatrix<f64>,
    psi_t: &'a DMatrix<f64>,
    gram: &'a DMatrix<f64>,
    signals: &'a DMatrix<f64>,
    sparsity: usize,
    counters: CounterConfig,
    cands: Option<(&'a DMatrix<f64>, f64)>,
}

impl ChunkContext<'_> {
    fn run(&self, start: usize, len: usize) -> Partial {
        let d = self.psi.nrows();
        let k = self.psi.ncols();
        let l = self.cands.map_or(0, |(g, _)| g.ncols());
        let mut part = Partial::new(d, k, l);
        let y_chunk = self.signals.columns(start, len);
        let ips = self.psi_t * y_chunk;
        let mut scratch = Scratch::new(d, k);
        for c in 0..len {
            let y = y_chunk.column(c);
            let ip = ips.column(c);
            scratch.process(self.psi, self.gram, y, ip.as_slice(), self.sparsity, &self.counters);
            if !scratch.active {
                continue;
            }
            part.used += 1;
            for &kk in &scratch.support {
                let v = ip[kk];
                part.residual_sum.column_mut(kk).axpy(sign(v), &scratch.residual, 1.0);
                part.self_weight[kk] += v.abs();
            }
            for &kk in &scratch.score_hits {
                part.scores[kk] += 1;
            }
            part.sparsity += scratch.sparsity_hits as u64;
            part.coefficient_hits += scratch.coefficient_hits as u64;
            if let Some((gamma, tau)) = self.cands {
                attribute_residual(gamma, scratch.residual.as_slice(), tau, &mut part.cand_acc, &mut part.cand_hits);
            }
        }
        part
    }

    fn run_range(&self, start: usize, end: usize, deterministic: bool) -> Option<Partial> {
        let ranges: Vec<(usize, usize)> = (start..end)
            .step_by(CHUNK_SIZE)
            .map(|s| (s, CHUNK_SIZE.min(end - s)))
            .collect();
        if deterministic {
            let parts: Vec<Partial> = ranges.par_iter().map(|&(s, n)| self.run(s, n)).collect();
            tree_reduce(parts)
        } else {
            ranges
                .par_iter()
                .map(|&(s, n)| self.run(s, n))
                .reduce_with(Partial::merge)
        }
    }
}

/// Runs one iteration over `batch`. With the replacement or adaptive variant
/// and a candidate set, the candidates are learned from the residuals in m
/// sub-batches of ⌊N/m⌋ signals: they are renormalised after each of the
/// first m−1 sub-batches and only scored on the remainder. The adaptive
/// variant restarts the candidate scores at every renormalisation.
pub fn run_iteration<R: Rng + ?Sized>(
    dico: &Dictionary,
    batch: &SignalBatch,
    cfg: &EngineConfig,
    candidates: Option<CandidateSet>,
    rng: &mut R,
) -> Result<IterationOutput> {
    check_dim(dico.dim(), batch.dim())?;
    let d = dico.dim();
    let k = dico.len();
    cfg.validate(d, k)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Domain("empty signal batch".into()));
    }
    let mut candidates = match cfg.variant {
        Variant::Plain => None,
        _ => candidates.filter(|c| !c.is_empty()),
    };
    if let Some(c) = &candidates {
        check_dim(d, c.dim())?;
    }

    let psi = dico.matrix();
    let psi_t = psi.transpose();
    let gram = &psi_t * psi;
    let counters = CounterConfig::for_variant(cfg.variant, n, cfg.min_observations, k);

    let m = cfg.candidate_subbatches;
    let n_gamma = n / m;
    let tau_gamma = match cfg.variant {
        Variant::Adaptive => adaptive_candidate_threshold(n_gamma.max(1), d),
        _ => replacement_candidate_threshold(k, d),
    };
    // segment ends; a renormalisation follows every end but the last
    let mut ends: Vec<usize> = Vec::new();
    if candidates.is_some() && n_gamma > 0 {
        ends.extend((1..m).map(|j| j * n_gamma));
    }
    ends.push(n);

    let mut total: Option<Partial> = None;
    let mut start = 0;
    for (seg, &end) in ends.iter().enumerate() {
        let ctx = ChunkContext {
            psi,
            psi_t: &psi_t,
            gram: &gram,
            signals: &batch.signals,
            sparsity: cfg.sparsity,
            counters,
            cands: candidates.as_ref().map(|c| (c.atoms(), tau_gamma)),
        };
        let Some(mut part) = ctx.run_range(start, end, cfg.deterministic_reduction) else {
            start = end;
            continue;
        };
        if let Some(c) = candidates.as_mut() {
            c.absorb(&part.cand_acc, &part.cand_hits);
            if seg + 1 < ends.len() {
                c.normalize(rng);
                c.subbatch_index = seg + 1;
                if cfg.variant == Variant::Adaptive {
                    c.reset_scores();
                }
            }
            c.subbatch_size = n_gamma;
        }
        // candidate sums are folded into the set; keep the atom sums
        part.cand_acc = DMatrix::zeros(d, 0);
        part.cand_hits.clear();
        total = Some(match total {
            Some(t) => t.merge(part),
            None => part,
        });
        start = end;
    }
    let total = total.expect("at least one segment");

    let mut atoms = total.residual_sum;
    let mut raw_norms = Vec::with_capacity(k);
    let mut dead = vec![false; k];
    let mut scores = total.scores;
    for kk in 0..k {
        let mut col = atoms.column_mut(kk);
        col.axpy(total.self_weight[kk], &psi.column(kk), 1.0);
        let norm = col.norm();
        raw_norms.push(norm);
        if norm < cfg.dead_atom_floor || !norm.is_finite() || norm == 0.0 {
            dead[kk] = true;
            scores[kk] = 0;
            col.copy_from(&psi.column(kk));
        } else {
            col /= norm;
        }
    }

    let used = total.used;
    let (s_bar, s_t) = if used > 0 {
        (
            (total.sparsity as f64 / used as f64).round() as usize,
            total.coefficient_hits as f64 / used as f64,
        )
    } else {
        (0, 0.0)
    };
    Ok(IterationOutput {
        dictionary: Dictionary::new(atoms)?,
        raw_norms,
        scores,
        dead,
        candidates,
        sparsity_accumulator: total.sparsity,
        s_bar,
        s_t,
        signals_used: used,
    })
}

/// Oracle residual `[y − P(Ψ_I)y + P(ψ_k)y]·σ(k)` on the generating support.
pub fn oracle_residual(dico: &Dictionary, y: &DVector<f64>, truth: &SignalTruth, k: usize) -> Result<DVector<f64>> {
    let pos = truth
        .support
        .iter()
        .position(|&i| i == k)
        .ok_or_else(|| Error::Domain(format!("atom {k} is not in the generating support")))?;
    let support = Support::new(truth.support.clone(), dico.len())?;
    let proj = crate::linalg::project_onto_span(dico, &support, y)?;
    let atom = dico.atom(k);
    let own = atom * atom.dot(y);
    Ok((y - &proj.projection + own) * f64::from(truth.signs[pos]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::dirac_hadamard;
    use crate::metrics::asym_distance;
    use crate::signal::{generate_batch, CoefficientModel, SignalModel};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_s_ties_go_to_lower_index() {
        assert_eq!(top_s(&[1.0, -1.0, 1.0, 0.5], 2), vec![0, 1]);
        assert_eq!(top_s(&[0.1, -3.0, 2.0], 1), vec![1]);
        assert_eq!(top_s(&[0.0; 4], 3), vec![0, 1, 2]);
    }

    #[test]
    fn threshold_on_orthonormal_basis() {
        let dico = Dictionary::identity(4);
        let y = DVector::from_vec(vec![0.0, 1.0, 0.5, 0.0]);
        assert_eq!(threshold_support(&dico, &y, 2).unwrap().indices(), &[1, 2]);
    }

    #[test]
    fn exact_signal_has_zero_residual() {
        let dico = Dictionary::identity(5);
        let y = DVector::from_vec(vec![0.6, 0.0, -0.8, 0.0, 0.0]);
        let u = signal_update(&dico, &y, 2, &CounterConfig::SIMPLE).unwrap();
        assert_abs_diff_eq!(u.residual.norm(), 0.0, epsilon = 1e-15);
        let inc = u.atom_increment(&dico, 1);
        assert_abs_diff_eq!(inc, DVector::from_vec(vec![0.0, 0.0, 0.8, 0.0, 0.0]), epsilon = 1e-15);
        assert_eq!(u.score_hits, vec![0, 2]);
    }

    #[test]
    fn sparsity_count_on_balanced_signal() {
        let d = 16;
        let dico = Dictionary::identity(d);
        let s = 4;
        let mut y = DVector::zeros(d);
        for i in 0..s {
            y[3 * i] = if i % 2 == 0 { 0.5 } else { -0.5 };
        }
        let counters = CounterConfig::for_variant(Variant::Adaptive, 1000, 16, d);
        let u = signal_update(&dico, &y, s, &counters).unwrap();
        // a = 0, θ = ‖y‖²/d = 1/16 < 1/4 = x(k)², residual inner products all 0 < θ
        assert_eq!(u.sparsity_hits, s);
        assert_eq!(u.coefficient_hits, s);
    }

    #[test]
    fn zero_signal_contributes_nothing() {
        let d = 8;
        let dico = Dictionary::identity(d);
        let batch = SignalBatch::from_matrix(DMatrix::zeros(d, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_iteration(&dico, &batch, &EngineConfig::plain(2), None, &mut rng).unwrap();
        assert_eq!(out.signals_used, 0);
        assert!(out.dead.iter().all(|&x| x));
        assert_eq!(out.dictionary, dico);
    }

    #[test]
    fn generating_dictionary_is_near_fixed_point() {
        let d = 32;
        let phi = dirac_hadamard(d, 2 * d).unwrap();
        let model = SignalModel::noiseless(phi.clone(), CoefficientModel::Balanced { sparsity: 2 }, 11);
        let batch = generate_batch(&model, 20000, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_iteration(&phi, &batch, &EngineConfig::plain(2), None, &mut rng).unwrap();
        let (dist, _) = asym_distance(&phi, &out.dictionary).unwrap();
        assert!(dist < 0.02, "distance {dist}");
        assert!(out.dead.iter().all(|&x| !x));
    }

    #[test]
    fn reduction_is_independent_of_chunk_order() {
        let d = 16;
        let phi = dirac_hadamard(d, 2 * d).unwrap();
        let model = SignalModel::noiseless(phi.clone(), CoefficientModel::Balanced { sparsity: 2 }, 5).with_snr(8.0);
        let batch = generate_batch(&model, 3 * CHUNK_SIZE + 17, 0).unwrap();
        let init = crate::constructions::perturbed(&phi, 0.4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = EngineConfig::adaptive(2, d, d);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let cands = CandidateSet::random(d, cfg.candidate_count, &mut rng);
                run_iteration(&init, &batch, &cfg, Some(cands), &mut rng).unwrap()
            })
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.candidates.unwrap().atoms(), b.candidates.unwrap().atoms());
        assert_eq!(a.sparsity_accumulator, b.sparsity_accumulator);
    }

    #[test]
    fn oracle_residual_matches_threshold_path() {
        let d = 16;
        let phi = dirac_hadamard(d, d).unwrap();
        let model = SignalModel::noiseless(phi.clone(), CoefficientModel::Balanced { sparsity: 3 }, 2);
        let batch = generate_batch(&model, 5, 0).unwrap();
        let truth = &batch.truth.as_ref().unwrap()[0];
        let y = batch.signal(0).into_owned();
        let u = signal_update(&phi, &y, 3, &CounterConfig::SIMPLE).unwrap();
        for (j, &k) in u.support.indices().iter().enumerate() {
            let r = oracle_residual(&phi, &y, truth, k).unwrap();
            assert_abs_diff_eq!(r, u.atom_increment(&phi, j), epsilon = 1e-12);
        }
        let outside = (0..d).find(|k| !truth.support.contains(k)).unwrap();
        assert!(oracle_residual(&phi, &y, truth, outside).is_err());
    }
}
