//! Dense complex vectors and matrices, a CSR sparse operator type, and a
//! Jacobi eigensolver for Hermitian matrices.
//!
//! Everything here is sized for the problems in this crate: state vectors up
//! to a few thousand entries, density matrices up to a few hundred.

use std::fmt;
use std::ops::{Index, IndexMut};

pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[derive(Clone, PartialEq)]
pub struct ComplexVector {
    data: Vec<C64>,
}

impl ComplexVector {
    pub fn new(data: Vec<C64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![ZERO; dim] }
    }

    /// Unit vector with a one in slot `index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[index] = ONE;
        v
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self {
            data: values.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `⟨self|other⟩`, antilinear in `self`.
    pub fn dot(&self, other: &ComplexVector) -> Result<C64> {
        check_dim(self.len(), other.len())?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn scale(&self, k: C64) -> Self {
        Self {
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn add(&self, other: &ComplexVector) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &ComplexVector) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Returns the normalized vector, or `None` for a zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scale(C64::new(1.0 / n, 0.0)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &ComplexVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for ComplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.data).finish()
    }
}

impl Index<usize> for ComplexVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for ComplexVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

pub(crate) fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Square dense matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> ComplexVector {
        ComplexVector::new((0..self.dim).map(|i| self[(i, j)]).collect())
    }

    pub fn matvec(&self, v: &ComplexVector) -> Result<ComplexVector> {
        check_dim(self.dim, v.len())?;
        Ok(ComplexVector::new(
            (0..self.dim)
                .map(|i| self.row(i).iter().zip(v.as_slice()).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_dim(self.dim, other.dim)?;
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == ZERO {
                    continue;
                }
                let brow = other.row(k);
                let orow = &mut out.data[i * d..(i + 1) * d];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, k: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn commutator(&self, other: &ComplexMatrix) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entry of `|M - M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Relative Hermiticity test `‖M − M†‖_max ≤ tol·‖M‖_max`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// Replaces the matrix by `(M + M†)/2`.
    pub fn hermitize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            let z = self.data[i * d + i];
            self.data[i * d + i] = C64::new(z.re, 0.0);
            for j in (i + 1)..d {
                let avg = (self.data[i * d + j] + self.data[j * d + i].conj()) * 0.5;
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg.conj();
            }
        }
    }

    /// `⟨v|M|v⟩`.
    pub fn expectation(&self, v: &ComplexVector) -> Result<C64> {
        v.dot(&self.matvec(v)?)
    }

    pub fn kron(&self, other: &ComplexMatrix) -> Self {
        let (a, b) = (self.dim, other.dim);
        Self::from_fn(a * b, |i, j| self[(i / b, j / b)] * other[(i % b, j % b)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[C64]> = (0..self.dim).map(|i| self.row(i)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

pub fn matvec(m: &ComplexMatrix, v: &ComplexVector) -> Result<ComplexVector> {
    m.matvec(v)
}

/// `u v†`.
pub fn outer(u: &ComplexVector, v: &ComplexVector) -> Result<ComplexMatrix> {
    check_dim(u.len(), v.len())?;
    Ok(ComplexMatrix::from_fn(u.len(), |i, j| u[i] * v[j].conj()))
}

/// A matrix that passed the Hermiticity check
/// `‖M − M†‖_max ≤ 1e-12·‖M‖_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.is_hermitian(Self::TOLERANCE) {
            Ok(Self(m))
        } else {
            Err(Error::NotHermitian {
                defect: m.hermiticity_defect(),
            })
        }
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }
}

impl TryFrom<ComplexMatrix> for HermitianMatrix {
    type Error = Error;
    fn try_from(m: ComplexMatrix) -> Result<Self> {
        Self::new(m)
    }
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`; `U†MU` is diagonal.
    pub vectors: ComplexMatrix,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi diagonalization of a Hermitian matrix.
pub fn hermitian_eigen(m: &HermitianMatrix) -> Result<EigenDecomposition> {
    let mut a = m.as_matrix().clone();
    a.hermitize();
    let d = a.dim();
    let mut v = ComplexMatrix::identity(d);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    let off_norm = |a: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > JACOBI_TOL * scale {
        sweeps += 1;
        if sweeps > JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence("Jacobi eigensolver"));
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                let magnitude = apq.norm();
                if magnitude <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = apq / magnitude;
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * magnitude);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotation J = diag(1, conj(phase)) · [[c, s], [-s, c]] on (p, q).
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;
                for k in 0..d {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * jpp + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * jqq;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * jpp + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * jqq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(d, |i, k| v[(i, order[k])]);
    Ok(EigenDecomposition { values, vectors })
}

pub fn hermitian_eigenvalues(m: &HermitianMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eigen(m)?.values)
}

pub fn min_eigenvalue(m: &HermitianMatrix) -> Result<f64> {
    Ok(hermitian_eigenvalues(m)?[0])
}

/// Compressed-sparse-row square matrix. Model operators (Hamiltonian terms,
/// jump operators) live in this form so matrix-vector products cost
/// `O(nnz)` rather than `O(d²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, ONE)))
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            assert!(
                i < dim && j < dim,
                "triplet ({i}, {j}) out of range for dimension {dim}"
            );
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != ZERO);
        let mut row_ptr = vec![0; dim + 1];
        for &(i, _, _) in &merged {
            row_ptr[i + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            col_idx: merged.iter().map(|e| e.1).collect(),
            values: merged.iter().map(|e| e.2).collect(),
        }
    }

    pub fn from_dense(m: &ComplexMatrix) -> Self {
        let d = m.dim();
        Self::from_triplets(
            d,
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, m[(i, j)])),
        )
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn scale(&self, k: C64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (i, j, v * k)))
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self::from_triplets(self.dim, self.iter().chain(other.iter())))
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut triplets = Vec::new();
        for (i, k, a) in self.iter() {
            for idx in other.row_ptr[k]..other.row_ptr[k + 1] {
                triplets.push((i, other.col_idx[idx], a * other.values[idx]));
            }
        }
        Ok(Self::from_triplets(self.dim, triplets))
    }

    pub fn kron(&self, other: &SparseMatrix) -> Self {
        let b = other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, x) in self.iter() {
            for (k, l, y) in other.iter() {
                triplets.push((i * b + k, j * b + l, x * y));
            }
        }
        Self::from_triplets(self.dim * b, triplets)
    }

    /// `out = self · v`.
    pub fn matvec_into(&self, v: &[C64], out: &mut [C64]) {
        debug_assert_eq!(v.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    /// `out += k · self · v`.
    pub fn matvec_acc(&self, k: C64, v: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = ZERO;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[idx] * v[self.col_idx[idx]];
            }
            *o += k * acc;
        }
    }

    pub fn matvec(&self, v: &ComplexVector) -> Result<ComplexVector> {
        check_dim(self.dim, v.len())?;
        let mut out = ComplexVector::zeros(self.dim);
        self.matvec_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `‖self·v‖²` without storing the product.
    pub fn apply_norm_sqr(&self, v: &[C64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            s += acc.norm_sqr();
        }
        s
    }

    /// `⟨v|self|v⟩`.
    pub fn expectation(&self, v: &[C64]) -> C64 {
        let mut s = ZERO;
        for i in 0..self.dim {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            s += v[i].conj() * acc;
        }
        s
    }

    /// `out += k · self · m` for dense `m`.
    pub fn left_mul_acc(&self, k: C64, m: &ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.dim;
        for i in 0..d {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = k * self.values[idx];
                let j = self.col_idx[idx];
                let src = &m.data[j * d..(j + 1) * d];
                let dst = &mut out.data[i * d..(i + 1) * d];
                for (o, x) in dst.iter_mut().zip(src) {
                    *o += a * x;
                }
            }
        }
    }

    /// `out += k · m · self` for dense `m`.
    pub fn right_mul_acc(&self, k: C64, m: &ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.dim;
        for r in 0..d {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = k * self.values[idx];
                let c = self.col_idx[idx];
                for i in 0..d {
                    out.data[i * d + c] += m.data[i * d + r] * a;
                }
            }
        }
    }

    /// `self · m · self†` for dense `m`.
    pub fn sandwich(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let mut scratch = ComplexMatrix::zeros(self.dim);
        let mut out = ComplexMatrix::zeros(self.dim);
        self.sandwich_acc(ONE, m, &mut scratch, &mut out);
        out
    }

    /// `out += k · self · m · self†`; `scratch` is overwritten.
    pub fn sandwich_acc(&self, k: C64, m: &ComplexMatrix, scratch: &mut ComplexMatrix, out: &mut ComplexMatrix) {
        let d = self.dim;
        scratch.data.fill(ZERO);
        self.left_mul_acc(k, m, scratch);
        // (scratch · self†)_{ij} = Σ_l scratch_{il} conj(self_{jl})
        for j in 0..d {
            for idx in self.row_ptr[j]..self.row_ptr[j + 1] {
                let a = self.values[idx].conj();
                let l = self.col_idx[idx];
                for i in 0..d {
                    out.data[i * d + j] += scratch.data[i * d + l] * a;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Pauli matrices and ladder operators in the basis `e = (1, 0)`,
/// `g = (0, 1)` where `e` is the excited state of `σ₃`.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap()
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap()
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::diag(&[ONE, -ONE])
    }

    /// `σ₋ = |g⟩⟨e|`.
    pub fn sigma_minus() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![ZERO, ZERO], vec![ONE, ZERO]]).unwrap()
    }

    /// `σ₊ = |e⟩⟨g|`.
    pub fn sigma_plus() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![ZERO, ONE], vec![ZERO, ZERO]]).unwrap()
    }

    pub fn excited() -> ComplexVector {
        ComplexVector::basis(2, 0)
    }

    pub fn ground() -> ComplexVector {
        ComplexVector::basis(2, 1)
    }

    /// Lift a single-qubit operator to site `site` (0-based, site 0 is the
    /// most significant tensor factor) of an `n`-qubit register.
    pub fn lift(op: &ComplexMatrix, site: usize, n: usize) -> SparseMatrix {
        let mut out = SparseMatrix::identity(1);
        for k in 0..n {
            let factor = if k == site {
                SparseMatrix::from_dense(op)
            } else {
                SparseMatrix::identity(2)
            };
            out = out.kron(&factor);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_matvec() {
        let v = ComplexVector::new(vec![c(1.0, 2.0), c(-0.5, 0.25)]);
        assert_eq!(ComplexMatrix::identity(2).matvec(&v).unwrap(), v);
    }

    #[test]
    fn ladder_and_pauli_action() {
        assert_eq!(sigma_minus().matvec(&excited()).unwrap(), ground());
        assert_eq!(sigma_x().matvec(&ground()).unwrap(), excited());
        assert_eq!(sigma_plus().matvec(&ground()).unwrap(), excited());
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let err = ComplexMatrix::identity(3).matvec(&excited()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2 }));
        assert!(outer(&excited(), &ComplexVector::zeros(3)).is_err());
    }

    #[test]
    fn outer_products() {
        assert_eq!(
            outer(&excited(), &excited()).unwrap(),
            ComplexMatrix::diag(&[ONE, ZERO])
        );
        let plus = excited().add(&ground()).unwrap().scale(c(0.5f64.sqrt(), 0.0));
        let m = outer(&plus, &plus).unwrap();
        for z in m.as_slice() {
            assert_abs_diff_eq!(z.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn diagonal_and_pauli_spectra() {
        let m = HermitianMatrix::new(ComplexMatrix::diag(&[c(3.0, 0.0), c(-1.0, 0.0)])).unwrap();
        assert_eq!(hermitian_eigenvalues(&m).unwrap(), vec![-1.0, 3.0]);
        let x = HermitianMatrix::new(sigma_x()).unwrap();
        let ev = hermitian_eigenvalues(&x).unwrap();
        assert_abs_diff_eq!(ev[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ev[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn redfield_dissipation_matrix_spectrum() {
        // B = ½[[1, 2.5 − i], [2.5 + i, 4]]; closed form (5 ∓ √38)/4.
        let b = ComplexMatrix::from_rows(&[vec![c(0.5, 0.0), c(1.25, -0.5)], vec![c(1.25, 0.5), c(2.0, 0.0)]]).unwrap();
        let ev = hermitian_eigenvalues(&HermitianMatrix::new(b).unwrap()).unwrap();
        let root = 38f64.sqrt();
        assert_abs_diff_eq!(ev[0], (5.0 - root) / 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ev[1], (5.0 + root) / 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ev[0], -0.29110, epsilon = 1e-5);
        assert_abs_diff_eq!(ev[1], 2.79110, epsilon = 1e-5);
    }

    #[test]
    fn min_eigenvalue_of_states() {
        let pure = HermitianMatrix::new(outer(&excited(), &excited()).unwrap()).unwrap();
        assert_abs_diff_eq!(min_eigenvalue(&pure).unwrap(), 0.0, epsilon = 1e-15);
        let mixed = HermitianMatrix::new(ComplexMatrix::identity(2).scale(c(0.5, 0.0))).unwrap();
        assert_eq!(min_eigenvalue(&mixed).unwrap(), 0.5);
    }

    #[test]
    fn non_hermitian_rejected() {
        assert!(matches!(
            HermitianMatrix::new(sigma_minus()),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn sparse_matches_dense() {
        let h = sigma_x().add(&sigma_z().scale(c(0.3, 0.0))).unwrap();
        let s = SparseMatrix::from_dense(&h);
        assert_eq!(s.to_dense(), h);
        assert_eq!(s.nnz(), 4);
        let v = ComplexVector::new(vec![c(0.2, -1.0), c(0.7, 0.1)]);
        assert!(s.matvec(&v).unwrap().max_abs_diff(&h.matvec(&v).unwrap()) < 1e-15);
        let rho = outer(&v, &v).unwrap();
        let lm = s.sandwich(&rho);
        let dense = h.matmul(&rho).unwrap().matmul(&h.adjoint()).unwrap();
        assert!(lm.max_abs_diff(&dense) < 1e-14);
        let lifted = lift(&sigma_minus(), 1, 3);
        let dense_lift = ComplexMatrix::identity(2)
            .kron(&sigma_minus())
            .kron(&ComplexMatrix::identity(2));
        assert_eq!(lifted.to_dense(), dense_lift);
    }

    fn arb_hermitian(d: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec(-1.0f64..1.0, 2 * d * d).prop_map(move |xs| {
            let mut m = ComplexMatrix::from_fn(d, |i, j| c(xs[2 * (i * d + j)], xs[2 * (i * d + j) + 1]));
            m.hermitize();
            m
        })
    }

    fn arb_vector(d: usize) -> impl Strategy<Value = ComplexVector> {
        proptest::collection::vec(-1.0f64..1.0, 2 * d)
            .prop_map(move |xs| ComplexVector::new((0..d).map(|i| c(xs[2 * i], xs[2 * i + 1])).collect()))
    }

    proptest! {
        #[test]
        fn outer_is_psd_hermitian(v in arb_vector(4)) {
            let m = outer(&v, &v).unwrap();
            prop_assert!(m.hermiticity_defect() == 0.0);
            let h = HermitianMatrix::new(m.clone()).unwrap();
            prop_assert!(min_eigenvalue(&h).unwrap() >= -1e-12);
            prop_assert!((m.trace().re - v.norm_sqr()).abs() <= 1e-12);
        }

        #[test]
        fn eigen_sum_is_trace_and_diagonalizes(m in arb_hermitian(5)) {
            let h = HermitianMatrix::new(m.clone()).unwrap();
            let eig = hermitian_eigen(&h).unwrap();
            let sum: f64 = eig.values.iter().sum();
            let tr = m.trace().re;
            prop_assert!((sum - tr).abs() <= 1e-10 * tr.abs().max(1.0));
            prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            let u = &eig.vectors;
            let diag = u.adjoint().matmul(&m).unwrap().matmul(u).unwrap();
            let expected = ComplexMatrix::diag(&eig.values.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>());
            prop_assert!(diag.max_abs_diff(&expected) <= 1e-11);
        }

        #[test]
        fn matvec_is_linear(m in arb_hermitian(3), u in arb_vector(3), v in arb_vector(3),
                            a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (ka, kb) = (c(a, 0.5 * b), c(b, -a));
            let lhs = m.matvec(&u.scale(ka).add(&v.scale(kb)).unwrap()).unwrap();
            let rhs = m.matvec(&u).unwrap().scale(ka).add(&m.matvec(&v).unwrap().scale(kb)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }
}
