//! Structured generating dictionaries and adversarial estimates.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dictionary::{sign, Dictionary};
use crate::error::{invalid, Error, Result};

/// Dirac basis followed by the first K − d columns of the Sylvester
/// Hadamard matrix, normalised. Requires d a power of two and K ≤ 2d.
pub fn dirac_hadamard(d: usize, k: usize) -> Result<Dictionary> {
    if d == 0 || !d.is_power_of_two() {
        return Err(invalid("d", format!("{d} is not a power of two")));
    }
    if k == 0 || k > 2 * d {
        return Err(invalid("K", format!("{k} not in [1, 2d]")));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let m = DMatrix::from_fn(d, k, |i, j| {
        if j < d {
            if i == j {
                1.0
            } else {
                0.0
            }
        } else {
            let h = j - d;
            if (i & h).count_ones().is_multiple_of(2) {
                scale
            } else {
                -scale
            }
        }
    });
    Dictionary::new(m)
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// K atoms drawn i.i.d. uniformly from the unit sphere in ℝ^d.
pub fn random_sphere<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Dictionary> {
    if d == 0 || k == 0 {
        return Err(invalid("dimensions", "d and K must be positive"));
    }
    let cols: Vec<DVector<f64>> = (0..k).map(|_| gaussian_vector(d, rng)).collect();
    Dictionary::from_vectors(&cols)
}

/// A random unit vector orthogonal to `atom` (assumed unit norm).
fn random_orthogonal<R: Rng + ?Sized>(atom: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let mut z = gaussian_vector(atom.len(), rng);
        let p = atom.dot(&z);
        z.axpy(-p, atom, 1.0);
        let n = z.norm();
        if n > 1e-12 {
            return z / n;
        }
    }
}

/// ψ_k = α φ_k + ω z_k with α = 1 − ε²/2, ω = √(ε² − ε⁴/4) and z_k uniform on
/// the sphere orthogonal to φ_k, so that ‖ψ_k − φ_k‖ = ε for every atom.
pub fn perturbed<R: Rng + ?Sized>(generating: &Dictionary, eps: f64, rng: &mut R) -> Result<Dictionary> {
    if !(0.0..=2f64.sqrt()).contains(&eps) {
        return Err(invalid("eps", format!("{eps} not in [0, √2]")));
    }
    if generating.dim() < 2 && eps > 0.0 {
        return Err(invalid("d", "perturbation needs d >= 2"));
    }
    let alpha = 1.0 - eps * eps / 2.0;
    let omega = (eps * eps - eps.powi(4) / 4.0).max(0.0).sqrt();
    let cols: Vec<DVector<f64>> = (0..generating.len())
        .map(|k| {
            let phi = generating.atom(k).into_owned();
            let z = random_orthogonal(&phi, rng);
            phi * alpha + z * omega
        })
        .collect();
    Dictionary::from_vectors(&cols)
}

/// One double atom plus one 1:1 atom.
///
/// For a triple (double, lost, partner): slot `lost` receives a second copy of
/// φ_double, and slot `partner` receives (φ_lost + h φ_partner)/√(2 + 2hθ) with
/// θ = ⟨φ_lost, φ_partner⟩ and h = sign(θ). Both φ_lost and φ_partner are then
/// missing from the estimate.
pub fn spurious_estimate(generating: &Dictionary, triples: &[(usize, usize, usize)]) -> Result<Dictionary> {
    let k = generating.len();
    let mut seen = Vec::new();
    for &(a, b, c) in triples {
        if a == b || b == c || a == c {
            return Err(invalid("triples", format!("indices of ({a}, {b}, {c}) must be distinct")));
        }
        for i in [a, b, c] {
            if i >= k {
                return Err(invalid("triples", format!("index {i} >= K = {k}")));
            }
            if seen.contains(&i) {
                return Err(invalid("triples", format!("index {i} used by two triples")));
            }
            seen.push(i);
        }
    }
    let mut m = generating.matrix().clone();
    for &(double, lost, partner) in triples {
        let phi_l = generating.atom(lost);
        let phi_p = generating.atom(partner);
        let theta = phi_l.dot(&phi_p);
        let h = sign(theta);
        let combo = (phi_l + phi_p * h) / (2.0 + 2.0 * h * theta).sqrt();
        m.set_column(lost, &generating.atom(double));
        m.set_column(partner, &combo);
    }
    Dictionary::from_columns(m)
}

/// Well-conditioned but misleading initialisation.
///
/// `pair_count` generating atoms φ_j are each represented twice, by
/// ψ_{j±} = α φ_j ± ω z_j where z_j is a random balanced signed sum of the
/// other atoms, projected orthogonal to φ_j and normalised, and ω = √(1 − α²).
/// The second copy takes the slot of another generating atom, which is thus
/// lost. All remaining atoms are perturbed randomly at the same α.
pub fn bad_initialization<R: Rng + ?Sized>(
    generating: &Dictionary,
    alpha: f64,
    pair_count: usize,
    rng: &mut R,
) -> Result<Dictionary> {
    let k = generating.len();
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} not in (0, 1]")));
    }
    if 2 * pair_count > k {
        return Err(Error::Domain(format!("{pair_count} pairs need {} atoms, have {k}", 2 * pair_count)));
    }
    let omega = (1.0 - alpha * alpha).max(0.0).sqrt();
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut m = generating.matrix().clone();
    for p in 0..pair_count {
        let j = order[p];
        let slot = order[pair_count + p];
        let phi = generating.atom(j).into_owned();
        let mut z = DVector::zeros(generating.dim());
        for i in (0..k).filter(|&i| i != j) {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            z.axpy(s, &generating.atom(i), 1.0);
        }
        let proj = phi.dot(&z);
        z.axpy(-proj, &phi, 1.0);
        let n = z.norm();
        z = if n > 1e-12 { z / n } else { random_orthogonal(&phi, rng) };
        m.set_column(j, &(&phi * alpha + &z * omega));
        m.set_column(slot, &(&phi * alpha - &z * omega));
    }
    for &i in &order[2 * pair_count..] {
        let phi = generating.atom(i).into_owned();
        let z = random_orthogonal(&phi, rng);
        m.set_column(i, &(phi * alpha + z * omega));
    }
    Dictionary::from_columns(m)
}
