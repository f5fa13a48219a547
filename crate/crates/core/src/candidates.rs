//! Replacement candidates learned from residuals, and replacement of coherent
//! or unused dictionary atoms by these candidates.
//!
//! Inside every learning iteration the candidates run one-sparse residual
//! means on the residuals a_n: each residual is attributed to the candidate
//! with the largest |⟨γ_ℓ, a_n⟩| and added with matching sign. Candidates are
//! renormalised every N_Γ signals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dictionary::{max_offdiag_abs, sign, Dictionary};
use crate::error::{check_dim, invalid, Result};

/// L replacement candidates with their value counters.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    atoms: DMatrix<f64>,
    accumulator: DMatrix<f64>,
    pub scores: Vec<u64>,
    /// N_Γ of the iteration that last updated the set.
    pub subbatch_size: usize,
    /// Number of completed sub-batches in that iteration.
    pub subbatch_index: usize,
}

impl CandidateSet {
    /// `count` candidates drawn uniformly from the unit sphere.
    pub fn random<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> Self {
        let mut atoms = DMatrix::zeros(d, count);
        for mut col in atoms.column_iter_mut() {
            fill_sphere(col.as_mut_slice(), rng);
        }
        Self {
            atoms,
            accumulator: DMatrix::zeros(d, count),
            scores: vec![0; count],
            subbatch_size: 0,
            subbatch_index: 0,
        }
    }

    /// Wraps explicit candidate atoms (normalised here) and scores.
    pub fn from_parts(atoms: DMatrix<f64>, scores: Vec<u64>) -> Result<Self> {
        check_dim(atoms.ncols(), scores.len())?;
        let d = atoms.nrows();
        let l = atoms.ncols();
        let atoms = if l > 0 {
            Dictionary::from_columns(atoms)?.into_matrix()
        } else {
            atoms
        };
        Ok(Self {
            atoms,
            accumulator: DMatrix::zeros(d, l),
            scores,
            subbatch_size: 0,
            subbatch_index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn accumulator(&self) -> &DMatrix<f64> {
        &self.accumulator
    }

    /// Adds a chunk-local accumulator and score increments.
    pub(crate) fn absorb(&mut self, acc: &DMatrix<f64>, hits: &[u64]) {
        self.accumulator += acc;
        for (s, h) in self.scores.iter_mut().zip(hits) {
            *s += h;
        }
    }

    /// One residual: attribute `a` to its best candidate and count it as a
    /// reliable hit when |⟨γ_i, a⟩|² ≥ τ_Γ‖a‖². A zero residual is ignored.
    pub fn signal_update(&mut self, a: &DVector<f64>, tau_gamma: f64) -> Result<()> {
        check_dim(self.dim(), a.len())?;
        let (acc, hits) = (&mut self.accumulator, &mut self.scores);
        attribute_residual(&self.atoms, a.as_slice(), tau_gamma, acc, hits);
        Ok(())
    }

    /// Turns the accumulator into the new candidate atoms and clears it.
    /// Candidates that never won a residual are redrawn from the sphere.
    pub fn normalize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in 0..self.len() {
            let norm = self.accumulator.column(l).norm();
            if norm > 0.0 && norm.is_finite() {
                let col = self.accumulator.column(l) / norm;
                self.atoms.set_column(l, &col);
            } else {
                let mut col = self.atoms.column_mut(l);
                fill_sphere(col.as_mut_slice(), rng);
            }
        }
        self.accumulator.fill(0.0);
    }

    pub fn reset_scores(&mut self) {
        self.scores.fill(0);
    }

    fn remove(&mut self, l: usize) {
        let atoms = std::mem::replace(&mut self.atoms, DMatrix::zeros(0, 0));
        self.atoms = atoms.remove_column(l);
        let acc = std::mem::replace(&mut self.accumulator, DMatrix::zeros(0, 0));
        self.accumulator = acc.remove_column(l);
        self.scores.remove(l);
    }
}

fn fill_sphere<R: Rng + ?Sized>(v: &mut [f64], rng: &mut R) {
    loop {
        for x in v.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// Shared residual-attribution kernel, operating on caller-owned accumulators.
pub(crate) fn attribute_residual(
    atoms: &DMatrix<f64>,
    a: &[f64],
    tau_gamma: f64,
    acc: &mut DMatrix<f64>,
    hits: &mut [u64],
) {
    let energy: f64 = a.iter().map(|v| v * v).sum();
    if energy == 0.0 || atoms.ncols() == 0 {
        return;
    }
    let mut best = (f64::NEG_INFINITY, 0usize, 0.0f64);
    for (l, g) in atoms.column_iter().enumerate() {
        let ip: f64 = g.iter().zip(a).map(|(x, y)| x * y).sum();
        if ip.abs() > best.0 {
            best = (ip.abs(), l, ip);
        }
    }
    let (abs_ip, l, ip) = best;
    let s = sign(ip);
    for (dst, v) in acc.column_mut(l).iter_mut().zip(a) {
        *dst += s * v;
    }
    if abs_ip * abs_ip >= tau_gamma * energy {
        hits[l] += 1;
    }
}

/// τ_Γ for fixed-size replacement: 2 log(2K)/d.
pub fn replacement_candidate_threshold(k: usize, d: usize) -> f64 {
    2.0 * (2.0 * k as f64).ln() / d as f64
}

/// τ_Γ for adaptive learning: 2 log(2N_Γ/d)/d, clamped at zero.
pub fn adaptive_candidate_threshold(subbatch_size: usize, d: usize) -> f64 {
    (2.0 * (2.0 * subbatch_size as f64 / d as f64).ln() / d as f64).max(0.0)
}

/// How two coherent atoms are combined before one slot is freed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Keep the more often used atom.
    Delete,
    /// Score-weighted combination.
    Merge,
    /// Unweighted combination.
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPolicy {
    pub mu_max: f64,
    pub combine: CombineMode,
}

impl ReplacementPolicy {
    pub fn new(mu_max: f64, combine: CombineMode) -> Result<Self> {
        if !(mu_max > 0.0 && mu_max < 1.0) {
            return Err(invalid("mu_max", format!("{mu_max} not in (0, 1)")));
        }
        Ok(Self { mu_max, combine })
    }
}

/// One replacement performed by [`replace_coherent`] or [`replace_unused`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplacementEvent {
    pub kind: ReplacementKind,
    /// Slot that received the combined atom (coherent) or the same as
    /// `replaced` (unused).
    pub kept: usize,
    /// Slot that received a candidate.
    pub replaced: usize,
    pub kept_score: u64,
    pub candidate_score: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementKind {
    Coherent,
    Unused,
}

fn combine_pair(
    dico: &Dictionary,
    k: usize,
    k2: usize,
    v_k: u64,
    v_k2: u64,
    h: f64,
    mode: CombineMode,
) -> DVector<f64> {
    let pk = dico.atom(k);
    let pk2 = dico.atom(k2);
    match mode {
        CombineMode::Delete => {
            // keep k'' only when it is strictly more valuable
            if v_k2 > v_k {
                pk2.into_owned()
            } else {
                pk.into_owned()
            }
        }
        CombineMode::Merge => {
            let merged = pk2 * v_k2 as f64 + pk * (h * v_k as f64);
            if merged.norm() > 0.0 {
                merged
            } else {
                pk2 + pk * h
            }
        }
        CombineMode::Add => pk2 + pk * h,
    }
}

/// Largest |⟨γ, ψ_i⟩| over atoms i not in `skip`.
fn max_coherence_excluding(dico: &Dictionary, gamma: &DVector<f64>, skip: &[usize]) -> f64 {
    let ips = dico.matrix().tr_mul(gamma);
    ips.iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Replaces coherent atom pairs.
///
/// While the most coherent pair (k, k'), k < k', exceeds μ_max and candidates
/// remain: combine the pair into slot k (per the policy), discard candidates
/// more coherent with the rest of the dictionary than |⟨ψ_k, ψ_k'⟩|, and put
/// the best-scored remaining candidate into slot k'. That candidate keeps its
/// score only if its coherence with the rest stays below μ_max.
pub fn replace_coherent(
    dico: &mut Dictionary,
    scores: &mut [u64],
    cands: &mut CandidateSet,
    policy: &ReplacementPolicy,
) -> Result<Vec<ReplacementEvent>> {
    check_dim(dico.len(), scores.len())?;
    check_dim(dico.dim(), cands.dim())?;
    sort_candidates(cands);
    let mut events = Vec::new();
    if dico.len() < 2 {
        return Ok(events);
    }
    let (mut top, mut k, mut k2) = max_offdiag_abs(&dico.gram());
    while top > policy.mu_max && !cands.is_empty() {
        let h = sign(dico.atom(k).dot(&dico.atom(k2)));
        let merged = combine_pair(dico, k, k2, scores[k], scores[k2], h, policy.combine);

        let mut l = 0;
        let mut mu_first = 0.0;
        while l < cands.len() {
            let g = cands.atoms.column(l).into_owned();
            let mu = max_coherence_excluding(dico, &g, &[k, k2]);
            if mu > top {
                cands.remove(l);
            } else {
                if l == 0 {
                    mu_first = mu;
                }
                l += 1;
            }
        }

        if !cands.is_empty() {
            dico.set_atom(k, &merged)?;
            let gamma = cands.atoms.column(0).into_owned();
            dico.set_atom(k2, &gamma)?;
            let cand_score = cands.scores[0];
            events.push(ReplacementEvent {
                kind: ReplacementKind::Coherent,
                kept: k,
                replaced: k2,
                kept_score: scores[k] + scores[k2],
                candidate_score: cand_score,
            });
            scores[k] += scores[k2];
            scores[k2] = if mu_first < policy.mu_max { cand_score } else { 0 };
            cands.remove(0);
        }
        (top, k, k2) = max_offdiag_abs(&dico.gram());
    }
    Ok(events)
}

/// Stable sort by descending score.
fn sort_candidates(cands: &mut CandidateSet) {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands.scores[b].cmp(&cands.scores[a]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return;
    }
    cands.atoms = cands.atoms.select_columns(&order);
    cands.accumulator = cands.accumulator.select_columns(&order);
    cands.scores = order.iter().map(|&i| cands.scores[i]).collect();
}

/// Replaces atoms flagged unused (score zero, or `dead`) by leftover
/// candidates, best score first. A candidate is installed only when its
/// coherence with the rest of the dictionary is below μ_max; without a
/// suitable candidate the atom is kept.
pub fn replace_unused(
    dico: &mut Dictionary,
    scores: &mut [u64],
    dead: &[bool],
    cands: &mut CandidateSet,
    policy: &ReplacementPolicy,
) -> Result<Vec<ReplacementEvent>> {
    check_dim(dico.len(), scores.len())?;
    check_dim(dico.len(), dead.len())?;
    sort_candidates(cands);
    let mut events = Vec::new();
    for k in 0..dico.len() {
        if !(scores[k] == 0 || dead[k]) {
            continue;
        }
        let pick = (0..cands.len()).find(|&l| {
            let g = cands.atoms.column(l).into_owned();
            max_coherence_excluding(dico, &g, &[k]) < policy.mu_max
        });
        let Some(l) = pick else { continue };
        let gamma = cands.atoms.column(l).into_owned();
        dico.set_atom(k, &gamma)?;
        events.push(ReplacementEvent {
            kind: ReplacementKind::Unused,
            kept: k,
            replaced: k,
            kept_score: 0,
            candidate_score: cands.scores[l],
        });
        scores[k] = 0;
        cands.remove(l);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::coherence;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn zero_residual_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = CandidateSet::random(4, 2, &mut rng);
        c.signal_update(&DVector::zeros(4), 0.1).unwrap();
        assert_eq!(c.scores, vec![0, 0]);
        assert_eq!(c.accumulator().norm(), 0.0);
    }

    #[test]
    fn aligned_residual_scores() {
        let d = 8;
        let target = (e(d, 2) - e(d, 3)) / 2f64.sqrt();
        let atoms = DMatrix::from_columns(&[target.clone(), e(d, 0)]);
        let mut c = CandidateSet::from_parts(atoms, vec![0, 0]).unwrap();
        let a = -(&target) * 0.3;
        c.signal_update(&a, replacement_candidate_threshold(16, d)).unwrap();
        assert_eq!(c.scores, vec![1, 0]);
        // sign-corrected accumulation points along the candidate
        assert!(c.accumulator().column(0).dot(&target) > 0.0);
    }

    #[test]
    fn normalize_redraws_empty_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 5;
        let atoms = DMatrix::from_columns(&[e(d, 0), e(d, 1)]);
        let mut c = CandidateSet::from_parts(atoms, vec![0, 0]).unwrap();
        c.signal_update(&(e(d, 0) * 2.0 + e(d, 4) * 0.1), 0.0).unwrap();
        c.normalize(&mut rng);
        for l in 0..2 {
            assert_abs_diff_eq!(c.atoms().column(l).norm(), 1.0, epsilon = 1e-14);
        }
        assert_ne!(c.atoms().column(1), e(d, 1).column(0));
        assert_eq!(c.accumulator().norm(), 0.0);
    }

    #[test]
    fn incoherent_dictionary_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dico = Dictionary::identity(6);
        let before = dico.clone();
        let mut scores = vec![5; 6];
        let mut cands = CandidateSet::random(6, 3, &mut rng);
        let policy = ReplacementPolicy::new(0.7, CombineMode::Merge).unwrap();
        let ev = replace_coherent(&mut dico, &mut scores, &mut cands, &policy).unwrap();
        assert!(ev.is_empty());
        assert_eq!(dico, before);
        assert_eq!(cands.len(), 3);
    }

    #[test]
    fn duplicate_pair_merge_installs_candidate() {
        let d = 6;
        let mut m = DMatrix::identity(d, 4);
        m.set_column(1, &e(d, 0));
        let mut dico = Dictionary::new(m).unwrap();
        let mut scores = vec![10, 10, 7, 7];
        let gamma = (e(d, 4) + e(d, 5)) / 2f64.sqrt();
        let mut cands = CandidateSet::from_parts(DMatrix::from_columns(std::slice::from_ref(&gamma)), vec![42]).unwrap();
        let policy = ReplacementPolicy::new(0.7, CombineMode::Merge).unwrap();
        let ev = replace_coherent(&mut dico, &mut scores, &mut cands, &policy).unwrap();
        assert_eq!(ev.len(), 1);
        assert_abs_diff_eq!(dico.atom(0).into_owned(), e(d, 0), epsilon = 1e-14);
        assert_abs_diff_eq!(dico.atom(1).into_owned(), gamma, epsilon = 1e-14);
        assert_eq!(scores[0], 20);
        assert_eq!(scores[1], 42);
        assert!(cands.is_empty());
        assert!(coherence(&dico).unwrap() <= 0.7);
    }

    #[test]
    fn coherent_candidates_are_discarded() {
        let d = 6;
        let mut m = DMatrix::identity(d, 4);
        m.set_column(1, &(e(d, 0) * 0.9 + e(d, 1) * 0.19f64.sqrt()));
        let mut dico = Dictionary::new(m).unwrap();
        let mut scores = vec![3, 1, 1, 1];
        // candidate almost equal to atom 2 gets discarded; the second survives
        let bad = (e(d, 2) * 10.0 + e(d, 5)).normalize();
        let good = e(d, 4);
        let mut cands = CandidateSet::from_parts(DMatrix::from_columns(&[bad, good.clone()]), vec![9, 1]).unwrap();
        let policy = ReplacementPolicy::new(0.7, CombineMode::Delete).unwrap();
        replace_coherent(&mut dico, &mut scores, &mut cands, &policy).unwrap();
        assert_abs_diff_eq!(dico.atom(1).into_owned(), good, epsilon = 1e-14);
        assert_eq!(scores[1], 1);
    }

    #[test]
    fn delete_mode_keeps_higher_score() {
        let d = 4;
        let a = e(d, 0);
        let b = (e(d, 0) * 0.9 + e(d, 1) * (1.0 - 0.81f64).sqrt()).normalize();
        let mut dico = Dictionary::from_vectors(&[a.clone(), b.clone(), e(d, 2)]).unwrap();
        let mut scores = vec![1, 5, 0];
        let mut cands = CandidateSet::from_parts(DMatrix::from_columns(&[e(d, 3)]), vec![0]).unwrap();
        let policy = ReplacementPolicy::new(0.7, CombineMode::Delete).unwrap();
        replace_coherent(&mut dico, &mut scores, &mut cands, &policy).unwrap();
        assert_abs_diff_eq!(dico.atom(0).into_owned(), b, epsilon = 1e-14);
        assert_eq!(scores[0], 6);
    }

    #[test]
    fn unused_atoms() {
        let d = 5;
        let mut dico = Dictionary::identity(d);
        let policy = ReplacementPolicy::new(0.7, CombineMode::Merge).unwrap();
        // everything used: no-op
        let mut scores = vec![1; d];
        let mut cands = CandidateSet::from_parts(DMatrix::from_columns(&[(e(d, 0) + e(d, 1)).normalize()]), vec![3]).unwrap();
        assert!(replace_unused(&mut dico, &mut scores, &[false; 5], &mut cands, &policy).unwrap().is_empty());

        // one dead atom and an incoherent leftover candidate
        let g = (e(d, 3) - e(d, 4) * 0.5).normalize();
        let mut cands = CandidateSet::from_parts(DMatrix::from_columns(std::slice::from_ref(&g)), vec![3]).unwrap();
        let mut scores = vec![1, 1, 1, 0, 1];
        let mut dead = vec![false; d];
        dead[3] = true;
        let ev = replace_unused(&mut dico, &mut scores, &dead, &mut cands, &policy).unwrap();
        assert_eq!(ev.len(), 1);
        assert_abs_diff_eq!(dico.atom(3).into_owned(), g, epsilon = 1e-14);
        assert_eq!(scores[3], 0);

        // exhausted candidates keep the dead atom
        let before = dico.clone();
        let mut empty = CandidateSet::from_parts(DMatrix::zeros(d, 0), vec![]).unwrap();
        replace_unused(&mut dico, &mut scores, &dead, &mut empty, &policy).unwrap();
        assert_eq!(dico, before);
    }
}
