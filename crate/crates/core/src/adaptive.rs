//! Adaptive choice of the sparsity level and the dictionary size.
//!
//! After every engine iteration coherent atom pairs are merged, atoms that
//! were not used reliably during the last m iterations are pruned, and
//! candidates that were used reliably often enough are added. The sparsity
//! level moves by at most one per iteration towards the rounded average number
//! of significant coefficients per signal.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::dictionary::{max_offdiag_abs, sign, Dictionary};
use crate::engine::{log_round, run_iteration, EngineConfig, IterationOutput};
use crate::error::{check_dim, invalid, Result};
use crate::learn::{reference_metrics, SignalSource};
use crate::rng::{derive_seed, stream_rng};

/// The last m scores of every atom, most recent first, and the iteration in
/// which each atom entered the dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistory {
    memory: usize,
    scores: Vec<VecDeque<u64>>,
    birth: Vec<usize>,
}

impl ScoreHistory {
    /// Empty history for `k` atoms born at `iteration`.
    pub fn new(k: usize, memory: usize, iteration: usize) -> Self {
        Self {
            memory: memory.max(1),
            scores: vec![VecDeque::with_capacity(memory); k],
            birth: vec![iteration; k],
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn record(&mut self, scores: &[u64]) -> Result<()> {
        check_dim(self.len(), scores.len())?;
        for (buf, &s) in self.scores.iter_mut().zip(scores) {
            buf.push_front(s);
            buf.truncate(self.memory);
        }
        Ok(())
    }

    /// v_k(1), zero before the first record.
    pub fn most_recent(&self, k: usize) -> u64 {
        self.scores[k].front().copied().unwrap_or(0)
    }

    /// max over the stored scores of atom k.
    pub fn max_recent(&self, k: usize) -> u64 {
        self.scores[k].iter().copied().max().unwrap_or(0)
    }

    /// True when atom k has a full buffer of m scores.
    pub fn is_full(&self, k: usize) -> bool {
        self.scores[k].len() == self.memory
    }

    pub fn birth(&self, k: usize) -> usize {
        self.birth[k]
    }

    pub fn scores(&self, k: usize) -> impl Iterator<Item = u64> + '_ {
        self.scores[k].iter().copied()
    }

    fn add_to_most_recent(&mut self, k: usize, v: u64) {
        match self.scores[k].front_mut() {
            Some(s) => *s += v,
            None => self.scores[k].push_front(v),
        }
    }

    fn remove(&mut self, indices: &[usize]) {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        for &i in idx.iter().rev() {
            self.scores.remove(i);
            self.birth.remove(i);
        }
    }

    /// Appends an atom whose buffer is filled with `initial`.
    fn push(&mut self, initial: u64, iteration: usize) {
        self.scores.push(std::iter::repeat_n(initial, self.memory).collect());
        self.birth.push(iteration);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub mu_max: f64,
    /// Minimal number of reliable observations M per atom and iteration.
    pub min_observations: usize,
    /// Candidate score needed for adding, M_Γ.
    pub candidate_add_threshold: usize,
    /// Score memory and embargo length m; also L and the number of candidate
    /// sub-batches.
    pub memory: usize,
    /// At most this many unused atoms are pruned per iteration.
    pub max_pruned: usize,
    pub start_adapt: usize,
    pub start_prune: usize,
    /// No atoms are added during this many final iterations.
    pub freeze_add_tail: usize,
    /// If K < d/10, prune at most K/2 unused atoms.
    pub undercomplete_guard: bool,
    pub initial_sparsity: usize,
    pub deterministic_reduction: bool,
    pub seed: u64,
}

impl AdaptiveConfig {
    /// Defaults for dimension d and minimal observations M.
    pub fn new(d: usize, min_observations: usize, seed: u64) -> Self {
        let m = log_round(d);
        Self {
            mu_max: 0.7,
            min_observations,
            candidate_add_threshold: d,
            memory: m,
            max_pruned: ((d as f64 / 5.0).round() as usize).max(1),
            start_adapt: m,
            start_prune: 2 * m,
            freeze_add_tail: 3 * m,
            undercomplete_guard: true,
            initial_sparsity: 1,
            deterministic_reduction: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_max > 0.0 && self.mu_max < 1.0) {
            return Err(invalid("mu_max", format!("{} not in (0, 1)", self.mu_max)));
        }
        if self.min_observations == 0 {
            return Err(invalid("min_observations", "must be positive"));
        }
        if self.memory == 0 {
            return Err(invalid("memory", "must be positive"));
        }
        if self.start_prune < self.start_adapt {
            return Err(invalid("start_prune", "must not precede start_adapt"));
        }
        if self.initial_sparsity == 0 {
            return Err(invalid("initial_sparsity", "must be positive"));
        }
        Ok(())
    }
}

/// round(d·log d).
pub fn min_observations_d_log_d(d: usize) -> usize {
    (d as f64 * (d as f64).ln()).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityState {
    pub s_e: usize,
    pub s_bar_history: Vec<usize>,
    /// Mean number of significant coefficients per signal in the last iteration.
    pub s_t: f64,
}

impl SparsityState {
    pub fn new(s_e: usize) -> Self {
        Self {
            s_e: s_e.max(1),
            s_bar_history: Vec::new(),
            s_t: 0.0,
        }
    }
}

/// S_e ← S_e + sign(S̄ − S_e), clamped to [1, max_level].
pub fn update_sparsity(state: &mut SparsityState, s_bar: usize, max_level: usize) {
    state.s_bar_history.push(s_bar);
    let s = state.s_e;
    let next = match s_bar.cmp(&s) {
        std::cmp::Ordering::Greater => s + 1,
        std::cmp::Ordering::Less => s - 1,
        std::cmp::Ordering::Equal => s,
    };
    state.s_e = next.clamp(1, max_level.max(1));
}

/// Merges coherent pairs, weighting each atom by its most recent score. Every
/// atom takes part in at most one merge per call. Returns the number of merges.
pub fn prune_coherent(dico: &mut Dictionary, history: &mut ScoreHistory, mu_max: f64) -> Result<usize> {
    check_dim(dico.len(), history.len())?;
    let mut hollow = dico.gram();
    hollow.fill_diagonal(0.0);
    let mut deleted = Vec::new();
    loop {
        let (top, k, k2) = max_offdiag_abs(&hollow);
        if !(top > mu_max) {
            break;
        }
        let v_k = history.most_recent(k) as f64;
        let v_k2 = history.most_recent(k2) as f64;
        let h = sign(dico.atom(k).dot(&dico.atom(k2)));
        let mut merged = dico.atom(k2) * v_k2 + dico.atom(k) * (h * v_k);
        if merged.norm() == 0.0 {
            merged = dico.atom(k2) + dico.atom(k) * h;
        }
        dico.set_atom(k, &merged)?;
        history.add_to_most_recent(k, history.most_recent(k2));
        deleted.push(k2);
        for idx in [k, k2] {
            hollow.row_mut(idx).fill(0.0);
            hollow.column_mut(idx).fill(0.0);
        }
    }
    dico.remove_atoms(&deleted)?;
    history.remove(&deleted);
    Ok(deleted.len())
}

/// Prunes atoms whose maximal score over the last m iterations is below
/// `min_observations`. Atoms younger than m iterations, or without a full
/// score buffer, are exempt. At most `max_pruned` atoms go, those with the
/// smallest maximal scores first. Returns the number of pruned atoms.
pub fn prune_unused(
    dico: &mut Dictionary,
    history: &mut ScoreHistory,
    min_observations: usize,
    max_pruned: usize,
    undercomplete_guard: bool,
    iteration: usize,
) -> Result<usize> {
    check_dim(dico.len(), history.len())?;
    let k = dico.len();
    let m = history.memory();
    let mut unused: Vec<(u64, usize)> = (0..k)
        .filter(|&i| history.is_full(i) && iteration.saturating_sub(history.birth(i)) >= m)
        .map(|i| (history.max_recent(i), i))
        .filter(|&(v, _)| v < min_observations as u64)
        .collect();
    unused.sort();
    let mut limit = max_pruned.min(k - 1);
    if undercomplete_guard && (k as f64) < dico.dim() as f64 / 10.0 {
        limit = limit.min(k / 2);
    }
    unused.truncate(limit);
    let idx: Vec<usize> = unused.iter().map(|&(_, i)| i).collect();
    if !idx.is_empty() {
        dico.remove_atoms(&idx)?;
        history.remove(&idx);
    }
    Ok(idx.len())
}

/// Appends candidates with score at least `add_threshold`, best first, when
/// their coherence with the growing dictionary is at most μ_max. Added atoms
/// start with a history of `initial_score` and birth `iteration`.
pub fn add_atoms(
    dico: &mut Dictionary,
    history: &mut ScoreHistory,
    cands: &CandidateSet,
    mu_max: f64,
    add_threshold: usize,
    initial_score: usize,
    iteration: usize,
) -> Result<usize> {
    check_dim(dico.len(), history.len())?;
    check_dim(dico.dim(), cands.dim())?;
    let mut order: Vec<usize> = (0..cands.len())
        .filter(|&l| cands.scores[l] >= add_threshold as u64)
        .collect();
    order.sort_by(|&a, &b| cands.scores[b].cmp(&cands.scores[a]));
    let mut added = 0;
    for l in order {
        let gamma = cands.atoms().column(l).into_owned();
        let mu = dico.matrix().tr_mul(&gamma).amax();
        if mu <= mu_max {
            dico.push_atom(&gamma)?;
            history.push(initial_score as u64, iteration);
            added += 1;
        }
    }
    Ok(added)
}

/// One row of the adaptive trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveRow {
    pub iter: usize,
    pub distance: Option<f64>,
    pub mean_atom_distance: Option<f64>,
    pub recovery_rate: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// Sparsity level used in this iteration.
    #[serde(rename = "S_e")]
    pub s_e: usize,
    #[serde(rename = "S_bar")]
    pub s_bar: usize,
    #[serde(rename = "S_bar_raw")]
    pub s_bar_raw: f64,
    #[serde(rename = "S_t")]
    pub s_t: f64,
    pub replaced: usize,
    pub merges: usize,
    pub pruned_unused: usize,
    /// merges + pruned_unused
    pub pruned: usize,
    pub added: usize,
    pub wallclock_ms: f64,
}

const ADAPTIVE_TAG: u64 = 0xADA9;

/// Adaptive learner state between iterations.
#[derive(Debug, Clone)]
pub struct AdaptiveLearner {
    pub dictionary: Dictionary,
    pub history: ScoreHistory,
    pub sparsity: SparsityState,
    pub config: AdaptiveConfig,
    pub reference: Option<Dictionary>,
    pub iteration: usize,
    /// Total number of planned iterations T; adding stops in the last
    /// `freeze_add_tail` of them.
    pub planned_iterations: usize,
    pub last: Option<IterationOutput>,
}

impl AdaptiveLearner {
    pub fn new(
        init: Dictionary,
        config: AdaptiveConfig,
        planned_iterations: usize,
        reference: Option<Dictionary>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(r) = &reference {
            check_dim(init.dim(), r.dim())?;
        }
        let s0 = config.initial_sparsity.min(init.dim().min(init.len()));
        Ok(Self {
            history: ScoreHistory::new(init.len(), config.memory, 0),
            dictionary: init,
            sparsity: SparsityState::new(s0),
            config,
            reference,
            iteration: 0,
            planned_iterations,
            last: None,
        })
    }

    pub fn step(&mut self, source: &mut dyn SignalSource) -> Result<AdaptiveRow> {
        let start = Instant::now();
        self.iteration += 1;
        let t = self.iteration;
        let cfg = &self.config;
        let d = self.dictionary.dim();
        let batch = source.batch(t)?;
        let mut rng = stream_rng(derive_seed(cfg.seed, ADAPTIVE_TAG), t as u64);

        let s_e = self.sparsity.s_e.min(d.min(self.dictionary.len()));
        let mut engine = EngineConfig::adaptive(s_e, d, cfg.min_observations);
        engine.candidate_count = cfg.memory;
        engine.candidate_subbatches = cfg.memory;
        engine.deterministic_reduction = cfg.deterministic_reduction;
        let cands = CandidateSet::random(d, cfg.memory, &mut rng);
        let out = run_iteration(&self.dictionary, &batch, &engine, Some(cands), &mut rng)?;

        self.dictionary = out.dictionary.clone();
        self.history.record(&out.scores)?;

        let merges = prune_coherent(&mut self.dictionary, &mut self.history, cfg.mu_max)?;
        let pruned_unused = if t >= cfg.start_prune {
            prune_unused(
                &mut self.dictionary,
                &mut self.history,
                cfg.min_observations,
                cfg.max_pruned,
                cfg.undercomplete_guard,
                t,
            )?
        } else {
            0
        };
        let add_window = t >= cfg.start_adapt && t + cfg.freeze_add_tail <= self.planned_iterations;
        let added = match (&out.candidates, add_window) {
            (Some(c), true) => add_atoms(
                &mut self.dictionary,
                &mut self.history,
                c,
                cfg.mu_max,
                cfg.candidate_add_threshold,
                cfg.min_observations,
                t,
            )?,
            _ => 0,
        };
        self.sparsity.s_t = out.s_t;
        if t >= cfg.start_adapt {
            let max_level = d.min(self.dictionary.len());
            update_sparsity(&mut self.sparsity, out.s_bar, max_level);
        } else {
            self.sparsity.s_e = self.sparsity.s_e.min(d.min(self.dictionary.len()));
        }

        let [distance, mean_dist, recovery] = reference_metrics(self.reference.as_ref(), &self.dictionary)?;
        let s_bar_raw = if out.signals_used > 0 {
            out.sparsity_accumulator as f64 / out.signals_used as f64
        } else {
            0.0
        };
        let row = AdaptiveRow {
            iter: t,
            distance,
            mean_atom_distance: mean_dist,
            recovery_rate: recovery,
            k: self.dictionary.len(),
            s_e,
            s_bar: out.s_bar,
            s_bar_raw,
            s_t: out.s_t,
            replaced: 0,
            merges,
            pruned_unused,
            pruned: merges + pruned_unused,
            added,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.last = Some(out);
        Ok(row)
    }
}

/// Result of an adaptive run.
#[derive(Debug, Clone)]
pub struct AdaptiveTrajectory {
    pub rows: Vec<AdaptiveRow>,
    pub dictionary: Dictionary,
    /// Sparsity level after the last update.
    pub final_sparsity: usize,
}

pub fn run_adaptive(
    init: Dictionary,
    source: &mut dyn SignalSource,
    config: &AdaptiveConfig,
    iterations: usize,
    reference: Option<&Dictionary>,
) -> Result<AdaptiveTrajectory> {
    check_dim(init.dim(), source.dim())?;
    let mut learner = AdaptiveLearner::new(init, config.clone(), iterations, reference.cloned())?;
    let mut rows = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        rows.push(learner.step(source)?);
    }
    Ok(AdaptiveTrajectory {
        rows,
        final_sparsity: learner.sparsity.s_e,
        dictionary: learner.dictionary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn history_with(scores: &[u64], memory: usize) -> ScoreHistory {
        let mut h = ScoreHistory::new(scores.len(), memory, 0);
        for _ in 0..memory {
            h.record(scores).unwrap();
        }
        h
    }

    #[test]
    fn sparsity_moves_one_step() {
        let mut s = SparsityState::new(1);
        update_sparsity(&mut s, 4, 64);
        assert_eq!(s.s_e, 2);
        let mut s = SparsityState::new(3);
        update_sparsity(&mut s, 1, 64);
        assert_eq!(s.s_e, 2);
        update_sparsity(&mut s, 2, 64);
        assert_eq!(s.s_e, 2);
        let mut s = SparsityState::new(1);
        update_sparsity(&mut s, 0, 64);
        assert_eq!(s.s_e, 1);
        let mut s = SparsityState::new(4);
        update_sparsity(&mut s, 9, 4);
        assert_eq!(s.s_e, 4);
    }

    #[test]
    fn duplicate_pair_merges() {
        let d = 4;
        let mut dico = Dictionary::from_vectors(&[e(d, 0), e(d, 1), e(d, 0) * -1.0]).unwrap();
        let mut h = history_with(&[10, 5, 30], 2);
        let merges = prune_coherent(&mut dico, &mut h, 0.7).unwrap();
        assert_eq!(merges, 1);
        assert_eq!(dico.len(), 2);
        assert_abs_diff_eq!(dico.atom(0).dot(&e(d, 0)).abs(), 1.0, epsilon = 1e-14);
        assert_eq!(h.most_recent(0), 40);
        assert_eq!(h.scores(0).nth(1), Some(10));
    }

    #[test]
    fn three_coherent_atoms_merge_once() {
        let d = 4;
        let a = e(d, 0);
        let b = (e(d, 0) * 0.95 + e(d, 1) * (1.0 - 0.95f64 * 0.95).sqrt()).normalize();
        let c = (e(d, 0) * 0.95 - e(d, 2) * (1.0 - 0.95f64 * 0.95).sqrt()).normalize();
        let mut dico = Dictionary::from_vectors(&[a, b, c, e(d, 3)]).unwrap();
        let mut h = history_with(&[1, 1, 1, 1], 1);
        assert_eq!(prune_coherent(&mut dico, &mut h, 0.7).unwrap(), 1);
        assert_eq!(dico.len(), 3);
    }

    #[test]
    fn unused_atoms_pruned_smallest_first() {
        let d = 10;
        let mut dico = Dictionary::identity(d);
        let mut h = history_with(&[0, 1, 2, 3, 4, 5, 6, 7, 50, 50], 3);
        let pruned = prune_unused(&mut dico, &mut h, 10, 5, true, 10).unwrap();
        assert_eq!(pruned, 5);
        assert_eq!(dico.len(), 5);
        // survivors are atoms 5, 6, 7, 8, 9
        assert_abs_diff_eq!(dico.atom(0).into_owned(), e(d, 5));
        assert_eq!(h.max_recent(3), 50);

        let mut dico = Dictionary::identity(d);
        let mut h = history_with(&[50; 10], 3);
        assert_eq!(prune_unused(&mut dico, &mut h, 10, 5, true, 10).unwrap(), 0);
    }

    #[test]
    fn embargo_protects_new_atoms() {
        let d = 4;
        let mut dico = Dictionary::identity(d);
        let mut h = history_with(&[50, 50, 50], 3);
        h.push(0, 9);
        assert_eq!(prune_unused(&mut dico, &mut h, 10, 2, false, 11).unwrap(), 0);
        assert_eq!(prune_unused(&mut dico, &mut h, 10, 2, false, 12).unwrap(), 1);
    }

    #[test]
    fn coherent_candidates_added_once() {
        let d = 4;
        let mut dico = Dictionary::from_vectors(&[e(d, 0), e(d, 1)]).unwrap();
        let mut h = history_with(&[9, 9], 2);
        let g1 = e(d, 2);
        let g2 = (e(d, 2) * 0.9 + e(d, 3) * 0.19f64.sqrt()).normalize();
        let cands = CandidateSet::from_parts(DMatrix::from_columns(&[g2, g1.clone()]), vec![5, 8]).unwrap();
        let added = add_atoms(&mut dico, &mut h, &cands, 0.7, 4, 7, 3).unwrap();
        assert_eq!(added, 1);
        assert_abs_diff_eq!(dico.atom(2).into_owned(), g1);
        assert_eq!(h.scores(2).collect::<Vec<_>>(), vec![7, 7]);
        assert_eq!(h.birth(2), 3);

        let below = CandidateSet::from_parts(DMatrix::from_columns(&[e(d, 3)]), vec![3]).unwrap();
        assert_eq!(add_atoms(&mut dico, &mut h, &below, 0.7, 4, 7, 3).unwrap(), 0);
    }
}
