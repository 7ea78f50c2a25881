//! Dense symmetric linear algebra: Jacobi eigendecomposition, nearest-PSD
//! projection, principal-minor determinants and the subset expansion of
//! `det(D + M)`.

use crate::error::{Error, Result};

/// Jacobi sweep cap.
pub const MAX_SWEEPS: usize = 30;
/// Off-diagonal Frobenius norm, relative to the full norm, at which Jacobi stops.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Eigenvalues at or above this are treated as non-negative by [`nearest_psd`].
pub const PSD_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
/// Largest `n` accepted by the enumeration oracles.
pub const MAX_ENUMERATION_N: usize = 12;
pub const MAX_N: usize = 64;

/// Square symmetric matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major data, validating shape, finiteness and symmetry.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("matrix dimension must be at least 1"));
        }
        if n > MAX_N {
            return Err(Error::validation(format!(
                "matrix dimension {n} exceeds {MAX_N}"
            )));
        }
        if data.len() != n * n {
            return Err(Error::validation(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite entry at ({}, {})",
                pos / n,
                pos % n
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(1.0) {
                    return Err(Error::validation(format!(
                        "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("matrix rows must all have length n"));
        }
        Self::from_row_major(n, rows.concat())
    }

    /// Builds from a closure evaluated on the upper triangle and mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self::from_row_major(n, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        SymMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0))
    }

    /// Elementwise sum; both operands must have the same size.
    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.n != other.n {
            return Err(Error::validation("matrix size mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(SymMatrix { n: self.n, data })
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Dense copy of the principal submatrix on `idx` (no validation).
    fn submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let k = idx.len();
        let mut out = Vec::with_capacity(k * k);
        for &i in idx {
            for &j in idx {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector
/// columns (`vectors[row * n + col]`).
#[derive(Clone, Debug)]
pub struct EigenDecomp {
    n: usize,
    pub values: Vec<f64>,
    vectors: Vec<f64>,
}

impl EigenDecomp {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Component `row` of eigenvector `col`.
    #[inline]
    pub fn vector(&self, row: usize, col: usize) -> f64 {
        self.vectors[row * self.n + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.vector(r, col)).collect()
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.n;
        let scaled: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (c, w) in scaled.iter().enumerate() {
                    s += self.vector(i, c) * w * self.vector(j, c);
                }
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix { n, data }
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Eigenvector signs are fixed so that each column's largest-magnitude
/// component (lowest index on ties) is positive, making the output fully
/// deterministic.
pub fn eigh(s: &SymMatrix) -> Result<EigenDecomp> {
    let n = s.n;
    let mut a = s.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = s.frobenius();

    let off_norm = |a: &[f64]| -> f64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        off.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..=MAX_SWEEPS {
        let off = off_norm(&a);
        if off <= OFF_DIAGONAL_TOL * frob || off == 0.0 {
            converged = true;
            break;
        }
        if _sweep == MAX_SWEEPS {
            return Err(Error::numeric(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps; off-diagonal residual {off:e}"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Rutishauser's stable rotation
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    debug_assert!(converged);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[r * n + old_col].abs() > v[pivot * n + old_col].abs() + 1e-14 {
                pivot = r;
            }
        }
        let sign = if v[pivot * n + old_col] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for r in 0..n {
            vectors[r * n + new_col] = sign * v[r * n + old_col];
        }
    }
    Ok(EigenDecomp { n, values, vectors })
}

/// Frobenius-nearest PSD matrix `V diag(max(λ, 0)) Vᵀ`.
///
/// Inputs whose smallest eigenvalue is already `>= -PSD_TOL` come back
/// unchanged.
pub fn nearest_psd(s: &SymMatrix) -> Result<SymMatrix> {
    let eig = eigh(s)?;
    if eig.min_value() >= -PSD_TOL {
        return Ok(s.clone());
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

fn validate_index_set(n: usize, idx: &[usize]) -> Result<()> {
    for (pos, &i) in idx.iter().enumerate() {
        if i >= n {
            return Err(Error::validation(format!(
                "index {i} out of range for n = {n}"
            )));
        }
        if idx[..pos].contains(&i) {
            return Err(Error::validation(format!("duplicate index {i}")));
        }
    }
    Ok(())
}

/// Determinant of the principal submatrix indexed by `idx`. The empty set
/// has determinant 1.
pub fn principal_minor_det(s: &SymMatrix, idx: &[usize]) -> Result<f64> {
    validate_index_set(s.n, idx)?;
    Ok(dense_det(idx.len(), s.submatrix(idx)))
}

/// Determinant of a dense row-major `k×k` matrix: closed forms up to 3×3,
/// LU with partial pivoting beyond.
pub fn dense_det(k: usize, mut m: Vec<f64>) -> f64 {
    match k {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => {
            let mut det = 1.0;
            for col in 0..k {
                let mut piv = col;
                for r in (col + 1)..k {
                    if m[r * k + col].abs() > m[piv * k + col].abs() {
                        piv = r;
                    }
                }
                let p = m[piv * k + col];
                if p == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for c in 0..k {
                        m.swap(col * k + c, piv * k + c);
                    }
                    det = -det;
                }
                det *= p;
                for r in (col + 1)..k {
                    let f = m[r * k + col] / p;
                    if f != 0.0 {
                        for c in col..k {
                            m[r * k + c] -= f * m[col * k + c];
                        }
                    }
                }
            }
            det
        }
    }
}

pub fn det(s: &SymMatrix) -> f64 {
    dense_det(s.n, s.data.clone())
}

/// Both sides of `det(D + M) = Σ_S det(M_S) · Π_{i∉S} D_ii` for diagonal `D`.
/// Enumerates all `2ⁿ` subsets, so `n` is capped at 12.
pub fn det_sum_identity_check(d: &SymMatrix, m: &SymMatrix) -> Result<(f64, f64)> {
    if d.n != m.n {
        return Err(Error::validation("D and M must have the same size"));
    }
    if d.n > MAX_ENUMERATION_N {
        return Err(Error::validation(format!(
            "subset enumeration limited to n <= {MAX_ENUMERATION_N}, got {}",
            d.n
        )));
    }
    if !d.is_diagonal() {
        return Err(Error::validation("D must be diagonal"));
    }
    let n = d.n;
    let lhs = det(&d.add(m)?);
    let mut rhs = 0.0;
    let mut idx = Vec::with_capacity(n);
    for mask in 0u32..(1 << n) {
        idx.clear();
        let mut rest = 1.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                idx.push(i);
            } else {
                rest *= d.get(i, i);
            }
        }
        if rest != 0.0 {
            rhs += dense_det(idx.len(), m.submatrix(&idx)) * rest;
        }
    }
    Ok((lhs, rhs))
}
