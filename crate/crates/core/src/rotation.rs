//! Random rotations of the input space.
//!
//! A rotation is sampled by filling a `d x d` matrix with independent standard
//! normal variates and taking the orthogonal factor of its Householder QR
//! factorization, normalised so the triangular factor has a positive diagonal.
//! That factor is Haar distributed on the orthogonal group; when its
//! determinant is `-1` the first column is negated to land in `SO(d)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance used when validating orthogonality and determinant.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

/// A `d x d` orthogonal matrix with unit determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationMatrix {
    entries: Array2<f64>,
    identity: bool,
}

impl RotationMatrix {
    /// Sample a uniformly distributed rotation of `R^d`.
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        let gaussian = Array2::from_shape_simple_fn((dim, dim), || rng.sample(StandardNormal));
        let (mut q, r) = householder_qr(gaussian.view());
        for k in 0..dim {
            if r[[k, k]] < 0.0 {
                q.column_mut(k).mapv_inplace(|v| -v);
            }
        }
        if determinant(q.view()) < 0.0 {
            q.column_mut(0).mapv_inplace(|v| -v);
        }
        Ok(RotationMatrix::new(q))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(RotationMatrix::new(Array2::eye(dim)))
    }

    /// Build from row-major entries, checking orthogonality and determinant.
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(Error::Shape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let entries = Array2::from_shape_vec((dim, dim), entries)
            .expect("length checked above");
        let m = RotationMatrix::new(entries);
        if m.orthogonality_error() > ORTHOGONALITY_TOL {
            return Err(Error::Data("matrix is not orthogonal".into()));
        }
        if (m.determinant() - 1.0).abs() > ORTHOGONALITY_TOL {
            return Err(Error::Data("matrix determinant is not 1".into()));
        }
        Ok(m)
    }

    fn new(entries: Array2<f64>) -> Self {
        let identity = entries
            .indexed_iter()
            .all(|((i, j), &v)| v == if i == j { 1.0 } else { 0.0 });
        RotationMatrix { entries, identity }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.entries.iter().copied().collect()
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix::new(self.entries.t().to_owned())
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `R . x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// `R . x` written into `out`; lengths must already match.
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        if self.identity {
            out.copy_from_slice(x);
            return;
        }
        for (o, row) in out.iter_mut().zip(self.entries.rows()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Rotate every row of `points`, i.e. `points . R^T`.
    pub fn apply_rows(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: points.ncols(),
            });
        }
        if self.is_identity() {
            return Ok(points.to_owned());
        }
        // same arithmetic as `apply`, so batch and pointwise results agree bitwise
        let mut out = Array2::zeros(points.raw_dim());
        let mut row_buf = vec![0.0; self.dim()];
        for (src, mut dst) in points.rows().into_iter().zip(out.rows_mut()) {
            row_buf.iter_mut().zip(src.iter()).for_each(|(b, v)| *b = *v);
            let dst = dst.as_slice_mut().expect("fresh array is contiguous");
            self.apply_into(&row_buf, dst);
        }
        Ok(out)
    }

    /// `max |R R^T - I|` over all entries.
    pub fn orthogonality_error(&self) -> f64 {
        let prod = self.entries.dot(&self.entries.t());
        prod.indexed_iter()
            .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    pub fn determinant(&self) -> f64 {
        determinant(self.entries.view())
    }
}

/// Householder QR of a square matrix: returns `(Q, R)` with `A = Q R`.
fn householder_qr(a: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut r = a.to_owned();
    let mut q = Array2::<f64>::eye(n);
    for k in 0..n.saturating_sub(1) {
        let x = r.slice(ndarray::s![k.., k]).to_owned();
        let norm = x.dot(&x).sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v: Array1<f64> = x;
        v[0] -= alpha;
        let vnorm = v.dot(&v).sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.mapv_inplace(|e| e / vnorm);
        reflect_rows(&mut r, k, v.view());
        reflect_cols(&mut q, k, v.view());
        for i in (k + 1)..n {
            r[[i, k]] = 0.0;
        }
    }
    (q, r)
}

// A[k.., :] -= 2 v (v^T A[k.., :])
fn reflect_rows(a: &mut Array2<f64>, k: usize, v: ArrayView1<'_, f64>) {
    for j in 0..a.ncols() {
        let dot: f64 = (k..a.nrows()).map(|i| v[i - k] * a[[i, j]]).sum();
        for i in k..a.nrows() {
            a[[i, j]] -= 2.0 * v[i - k] * dot;
        }
    }
}

// A[:, k..] -= 2 (A[:, k..] v) v^T
fn reflect_cols(a: &mut Array2<f64>, k: usize, v: ArrayView1<'_, f64>) {
    for i in 0..a.nrows() {
        let dot: f64 = (k..a.ncols()).map(|j| a[[i, j]] * v[j - k]).sum();
        for j in k..a.ncols() {
            a[[i, j]] -= 2.0 * dot * v[j - k];
        }
    }
}

/// Determinant by LU decomposition with partial pivoting.
fn determinant(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut det = 1.0;
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| m[[i, k]].abs().total_cmp(&m[[j, k]].abs()))
            .expect("nonempty range");
        if m[[pivot, k]] == 0.0 {
            return 0.0;
        }
        if pivot != k {
            for j in 0..n {
                m.swap([k, j], [pivot, j]);
            }
            det = -det;
        }
        let p = m[[k, k]];
        det *= p;
        for i in (k + 1)..n {
            let f = m[[i, k]] / p;
            for j in (k + 1)..n {
                m[[i, j]] -= f * m[[k, j]];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use nalgebra::DMatrix;

    fn oracle_det(m: &RotationMatrix) -> f64 {
        let d = m.dim();
        DMatrix::from_row_slice(d, d, &m.to_row_major()).determinant()
    }

    fn oracle_orth(m: &RotationMatrix) -> f64 {
        let d = m.dim();
        let a = DMatrix::from_row_slice(d, d, &m.to_row_major());
        (&a * a.transpose() - DMatrix::identity(d, d)).amax()
    }

    #[test]
    fn one_dimensional_rotation_is_one() {
        for seed in 0..20 {
            let r = RotationMatrix::sample(1, &mut stream(seed)).unwrap();
            assert_eq!(r.to_row_major(), vec![1.0]);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            RotationMatrix::sample(0, &mut stream(0)),
            Err(Error::InvalidDimension(0))
        ));
        assert!(RotationMatrix::identity(0).is_err());
    }

    #[test]
    fn sampled_matrix_is_special_orthogonal() {
        let r = RotationMatrix::sample(3, &mut stream(42)).unwrap();
        assert!((oracle_det(&r) - 1.0).abs() <= 1e-9);
        assert!(oracle_orth(&r) <= 1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = RotationMatrix::sample(6, &mut stream(11)).unwrap();
        let b = RotationMatrix::sample(6, &mut stream(11)).unwrap();
        assert_eq!(a.to_row_major(), b.to_row_major());
    }

    #[test]
    fn planar_angle_is_uniform() {
        let mut bins = [0usize; 8];
        for seed in 0..10_000u64 {
            let r = RotationMatrix::sample(2, &mut stream(seed)).unwrap();
            let m = r.matrix();
            let angle = m[[1, 0]].atan2(m[[0, 0]]).rem_euclid(std::f64::consts::TAU);
            let bin = ((angle / std::f64::consts::TAU) * 8.0) as usize;
            bins[bin.min(7)] += 1;
        }
        for count in bins {
            assert!((1100..=1400).contains(&count), "{bins:?}");
        }
    }

    #[test]
    fn identity_and_quarter_turn() {
        let i2 = RotationMatrix::identity(2).unwrap();
        assert_eq!(i2.to_row_major(), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(i2.apply(&[3.0, -1.5]).unwrap(), vec![3.0, -1.5]);
        let x = [0.3, -2.0, 5.5, 1e-3, 7.0];
        assert_eq!(RotationMatrix::identity(5).unwrap().apply(&x).unwrap(), x.to_vec());

        let quarter = RotationMatrix::from_row_major(2, vec![0.0, -1.0, 1.0, 0.0]).unwrap();
        assert_eq!(quarter.apply(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn rotation_preserves_norm() {
        let r = RotationMatrix::sample(4, &mut stream(7)).unwrap();
        let out = r.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 30f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn apply_checks_shape() {
        let r = RotationMatrix::identity(3).unwrap();
        assert!(matches!(
            r.apply(&[1.0, 2.0]),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn reflection_is_rejected_on_construction() {
        assert!(RotationMatrix::from_row_major(2, vec![1.0, 0.0, 0.0, -1.0]).is_err());
        assert!(RotationMatrix::from_row_major(2, vec![1.0, 0.1, 0.0, 1.0]).is_err());
    }
}
