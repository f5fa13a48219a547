//! The dictionary type and the small index-set type used to address it.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{check_dim, invalid, Error, Result};

/// Tolerance on the Euclidean norm of every atom.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// A d×K collection of unit-norm atoms stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps a matrix whose columns are already unit norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::Domain("dictionary must have d >= 1 and K >= 1".into()));
        }
        for (index, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL || !norm.is_finite() {
                return Err(Error::NotUnitNorm { index, norm });
            }
        }
        Ok(Self { atoms })
    }

    /// Normalises every column of `atoms`. Zero columns are rejected.
    pub fn from_columns(mut atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::Domain("dictionary must have d >= 1 and K >= 1".into()));
        }
        for (index, mut col) in atoms.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::NotUnitNorm { index, norm });
            }
            col /= norm;
        }
        Ok(Self { atoms })
    }

    pub fn from_vectors(columns: &[DVector<f64>]) -> Result<Self> {
        let d = columns
            .first()
            .ok_or_else(|| Error::Domain("empty atom list".into()))?
            .len();
        for c in columns {
            check_dim(d, c.len())?;
        }
        Self::from_columns(DMatrix::from_columns(columns))
    }

    pub fn identity(d: usize) -> Self {
        Self {
            atoms: DMatrix::identity(d, d),
        }
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms K.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn atom(&self, k: usize) -> DVectorView<'_, f64> {
        self.atoms.column(k)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Overwrites atom `k` with `v / ‖v‖`.
    pub fn set_atom(&mut self, k: usize, v: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotUnitNorm { index: k, norm });
        }
        self.atoms.set_column(k, &(v / norm));
        Ok(())
    }

    /// Appends `v / ‖v‖` as a new last atom.
    pub fn push_atom(&mut self, v: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotUnitNorm {
                index: self.len(),
                norm,
            });
        }
        let k = self.len();
        let atoms = std::mem::replace(&mut self.atoms, DMatrix::zeros(0, 0));
        self.atoms = atoms.insert_column(k, 0.0);
        self.atoms.set_column(k, &(v / norm));
        Ok(())
    }

    /// Removes the atoms whose indices are listed. At least one atom must survive.
    pub fn remove_atoms(&mut self, indices: &[usize]) -> Result<()> {
        let mut idx: Vec<usize> = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&last) = idx.last() {
            if last >= self.len() {
                return Err(invalid("indices", format!("atom {last} out of range")));
            }
        }
        if idx.len() >= self.len() {
            return Err(Error::Domain("cannot delete every atom".into()));
        }
        let atoms = std::mem::replace(&mut self.atoms, DMatrix::zeros(0, 0));
        self.atoms = atoms.remove_columns_at(&idx);
        Ok(())
    }

    /// Flips the sign of atom `k`.
    pub fn negate_atom(&mut self, k: usize) {
        let mut col = self.atoms.column_mut(k);
        col.neg_mut();
    }

    /// Gram matrix Ψ*Ψ.
    pub fn gram(&self) -> DMatrix<f64> {
        let t = self.atoms.transpose();
        &t * &self.atoms
    }

    /// Sub-matrix of the atoms listed in `support`, in support order.
    pub fn select(&self, support: &Support) -> DMatrix<f64> {
        self.atoms.select_columns(support.indices())
    }
}

/// Ordered set of distinct atom indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Support(Vec<usize>);

impl Support {
    /// Validates distinctness and range against a dictionary of `k_atoms` atoms.
    pub fn new(indices: Vec<usize>, k_atoms: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("support", "must contain at least one index"));
        }
        for (pos, &i) in indices.iter().enumerate() {
            if i >= k_atoms {
                return Err(invalid("support", format!("index {i} >= K = {k_atoms}")));
            }
            if indices[..pos].contains(&i) {
                return Err(invalid("support", format!("index {i} repeated")));
            }
        }
        Ok(Self(indices))
    }

    pub(crate) fn from_raw(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.contains(&k)
    }

    /// Indices in ascending order, for set comparisons.
    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.0.clone();
        v.sort_unstable();
        v
    }
}

/// Entry (k, l) is ⟨a_k, b_l⟩.
pub fn cross_gram(a: &Dictionary, b: &Dictionary) -> Result<DMatrix<f64>> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.matrix().transpose() * b.matrix())
}

/// Maximal absolute inner product between two different atoms.
pub fn coherence(dico: &Dictionary) -> Result<f64> {
    if dico.len() < 2 {
        return Err(Error::Domain("coherence needs at least two atoms".into()));
    }
    Ok(max_offdiag_abs(&dico.gram()).0)
}

/// Largest |G(i, j)| with i < j, and its position. Ties resolve to the
/// lexicographically smallest pair.
pub(crate) fn max_offdiag_abs(gram: &DMatrix<f64>) -> (f64, usize, usize) {
    let k = gram.ncols();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for j in 0..k {
        for i in 0..j {
            let v = gram[(i, j)].abs();
            if v > best.0 || (v == best.0 && (i, j) < (best.1, best.2)) {
                best = (v, i, j);
            }
        }
    }
    if k < 2 {
        best.0 = 0.0;
    }
    best
}

/// sign with sign(0) = +1.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_has_zero_coherence() {
        let d = Dictionary::identity(5);
        assert_eq!(coherence(&d).unwrap(), 0.0);
    }

    #[test]
    fn two_atom_coherence() {
        let m = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let d = Dictionary::from_columns(m).unwrap();
        assert_abs_diff_eq!(coherence(&d).unwrap(), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn coherence_needs_two_atoms() {
        let d = Dictionary::from_columns(DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert!(matches!(coherence(&d), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_non_unit_columns() {
        let m = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(Dictionary::new(m), Err(Error::NotUnitNorm { index: 0, .. })));
    }

    #[test]
    fn cross_gram_with_itself_and_negation() {
        let m = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin() + 0.1);
        let phi = Dictionary::from_columns(m).unwrap();
        let neg = Dictionary::new(-phi.matrix().clone()).unwrap();
        let g = cross_gram(&phi, &phi).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(g[(k, k)], 1.0, epsilon = 1e-14);
        }
        let gn = cross_gram(&phi, &neg).unwrap();
        assert_abs_diff_eq!(gn, -phi.gram(), epsilon = 1e-14);
    }

    #[test]
    fn cross_gram_dimension_mismatch() {
        let a = Dictionary::identity(3);
        let b = Dictionary::identity(4);
        assert!(matches!(cross_gram(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn push_and_remove_keep_unit_norm() {
        let mut d = Dictionary::identity(3);
        d.push_atom(&DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(d.len(), 4);
        assert_abs_diff_eq!(d.atom(3).norm(), 1.0, epsilon = 1e-15);
        d.remove_atoms(&[0, 2]).unwrap();
        assert_eq!(d.len(), 2);
        assert_abs_diff_eq!(d.atom(0)[1], 1.0);
        assert!(d.remove_atoms(&[0, 1]).is_err());
    }

    #[test]
    fn support_validation() {
        assert!(Support::new(vec![0, 2], 3).is_ok());
        assert!(Support::new(vec![0, 0], 3).is_err());
        assert!(Support::new(vec![3], 3).is_err());
        assert!(Support::new(vec![], 3).is_err());
    }

    #[test]
    fn sign_of_zero_is_positive() {
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-2.0), -1.0);
    }
}
