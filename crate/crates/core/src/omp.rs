//! Orthogonal Matching Pursuit and the approximation error of a dictionary.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dictionary::{Dictionary, Support};
use crate::error::{check_dim, invalid, Result};
use crate::linalg::solve_normal_equations;
use crate::signal::SignalBatch;

pub use crate::metrics::sorted_atom_errors;

/// OMP stops once ‖r‖ < OMP_TOL·‖y‖.
pub const OMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    /// Selected atoms in selection order.
    pub support: Support,
    pub coefficients: DVector<f64>,
    pub residual: DVector<f64>,
    /// ‖r‖² after each step; entry 0 is ‖y‖².
    pub residual_energy: Vec<f64>,
}

/// Greedy selection core working on Ψ*y and the Gram matrix. `forced` atoms
/// are selected first, in order.
fn omp_core(
    psi: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    ips: &[f64],
    s: usize,
    forced: &[usize],
) -> (Vec<usize>, DVector<f64>, Vec<f64>) {
    let y_energy = y.norm_squared();
    let mut energies = vec![y_energy];
    let mut selected: Vec<usize> = Vec::with_capacity(s);
    let mut x = DVector::zeros(0);
    let mut r_ips = ips.to_vec();
    let stop = OMP_TOL * OMP_TOL * y_energy;
    let mut r_energy = y_energy;
    while selected.len() < s && r_energy > stop && y_energy > 0.0 {
        let next = if let Some(&f) = forced.get(selected.len()) {
            f
        } else {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (k, v) in r_ips.iter().enumerate() {
                if !selected.contains(&k) && v.abs() > best.0 {
                    best = (v.abs(), k);
                }
            }
            if best.1 == usize::MAX {
                break;
            }
            best.1
        };
        selected.push(next);
        let n = selected.len();
        let g = DMatrix::from_fn(n, n, |i, j| gram[(selected[i], selected[j])]);
        let rhs = DVector::from_iterator(n, selected.iter().map(|&k| ips[k]));
        x = solve_normal_equations(&g, &rhs);
        // Ψ*r = Ψ*y − G(:, sel)x
        r_ips.copy_from_slice(ips);
        for (j, &k) in selected.iter().enumerate() {
            for (r, gv) in r_ips.iter_mut().zip(gram.column(k).iter()) {
                *r -= gv * x[j];
            }
        }
        let mut r = y.clone();
        for (j, &k) in selected.iter().enumerate() {
            r.axpy(-x[j], &psi.column(k), 1.0);
        }
        r_energy = r.norm_squared();
        energies.push(r_energy);
    }
    (selected, x, energies)
}

/// OMP with at most `s` steps; ties go to the lower index.
pub fn omp(dico: &Dictionary, y: &DVector<f64>, s: usize) -> Result<OmpResult> {
    check_dim(dico.dim(), y.len())?;
    if s == 0 || s > dico.dim().min(dico.len()) {
        return Err(invalid("sparsity", format!("{s} not in [1, min(d, K)]")));
    }
    let psi = dico.matrix();
    let ips = psi.tr_mul(y);
    let gram = dico.gram();
    let (selected, x, energies) = omp_core(psi, &gram, y, ips.as_slice(), s, &[]);
    let mut residual = y.clone();
    for (j, &k) in selected.iter().enumerate() {
        residual.axpy(-x[j], &psi.column(k), 1.0);
    }
    Ok(OmpResult {
        support: Support::from_raw(selected),
        coefficients: x,
        residual,
        residual_energy: energies,
    })
}

/// Relative approximation error ‖Y − Ỹ‖²_F/‖Y‖²_F per sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxReport {
    pub sparsity: Vec<usize>,
    pub relative_error: Vec<f64>,
    /// Set when ‖Y‖_F = 0; errors are then reported as 0.
    pub degenerate: bool,
}

#[derive(Serialize)]
struct ApproxRow {
    #[serde(rename = "S")]
    s: usize,
    relative_error: f64,
}

impl ApproxReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<ApproxRow> = self
            .sparsity
            .iter()
            .zip(&self.relative_error)
            .map(|(&s, &e)| ApproxRow { s, relative_error: e })
            .collect();
        crate::learn::write_csv(w, &rows)
    }
}

/// The constant unit atom 1/√d.
pub fn flat_atom(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / (d as f64).sqrt())
}

/// Prepends the flat atom.
pub fn augment_with_flat(dico: &Dictionary) -> Result<Dictionary> {
    let d = dico.dim();
    let mut m = DMatrix::zeros(d, dico.len() + 1);
    m.set_column(0, &flat_atom(d));
    m.columns_mut(1, dico.len()).copy_from(dico.matrix());
    Dictionary::new(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FlatAtom {
    /// Prepend the flat atom to the dictionary.
    pub augment: bool,
    /// Put it into every support as the first selected atom.
    pub force: bool,
}

/// Approximation errors for S = 1..=s_max from one nested OMP run per signal.
/// With the flat atom the sparsity count does not include it when forced.
pub fn approximation_power(dico: &Dictionary, batch: &SignalBatch, s_max: usize, flat: FlatAtom) -> Result<ApproxReport> {
    check_dim(dico.dim(), batch.dim())?;
    let work = if flat.augment { augment_with_flat(dico)? } else { dico.clone() };
    let forced: Vec<usize> = if flat.augment && flat.force { vec![0] } else { Vec::new() };
    let steps = s_max + forced.len();
    if s_max == 0 || steps > work.dim().min(work.len()) {
        return Err(invalid("s_max", format!("{s_max} not in [1, min(d, K)]")));
    }
    let psi = work.matrix();
    let psi_t = psi.transpose();
    let gram = &psi_t * psi;
    let n = batch.len();
    let chunk = crate::engine::CHUNK_SIZE;
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let per_chunk: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|&start| {
            let len = chunk.min(n - start);
            let y_chunk = batch.signals.columns(start, len);
            let ips = &psi_t * y_chunk;
            let mut err = vec![0.0; s_max];
            let mut total = 0.0;
            for c in 0..len {
                let y = y_chunk.column(c).into_owned();
                let (_, _, energies) = omp_core(psi, &gram, &y, ips.column(c).as_slice(), steps, &forced);
                total += energies[0];
                let last = *energies.last().expect("energy of y");
                for (s, e) in err.iter_mut().enumerate() {
                    *e += energies.get(s + 1 + forced.len()).copied().unwrap_or(last);
                }
            }
            (err, total)
        })
        .collect();
    let mut err = vec![0.0; s_max];
    let mut total = 0.0;
    for (e, t) in per_chunk {
        for (a, b) in err.iter_mut().zip(&e) {
            *a += b;
        }
        total += t;
    }
    let degenerate = total == 0.0;
    let relative_error = err
        .iter()
        .map(|&e| if degenerate { 0.0 } else { (e / total).clamp(0.0, 1.0) })
        .collect();
    Ok(ApproxReport {
        sparsity: (1..=s_max).collect(),
        relative_error,
        degenerate,
    })
}
