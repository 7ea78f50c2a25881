//! HSIC / CKA similarity and the pairwise critic similarity matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// HSIC values below this mark a representation as constant.
pub const DEGENERATE_HSIC: f64 = 1e-12;

/// `n` examples by `p` features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl ActivationMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::validation(format!(
                "need at least 2 examples, got {n}"
            )));
        }
        if p == 0 {
            return Err(Error::validation("need at least one feature"));
        }
        if data.len() != n * p {
            return Err(Error::validation(format!(
                "expected {} entries for {n}x{p} activations, got {}",
                n * p,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("activations must be finite"));
        }
        Ok(ActivationMatrix { n, p, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::validation("ragged activation rows"));
        }
        Self::new(rows.len(), p, rows.concat())
    }

    /// Single feature column (one value per example).
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    /// Copy with every feature column mean-subtracted.
    fn centered(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.p];
        for i in 0..self.n {
            for (m, x) in means.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.n as f64);
        let mut out = self.data.clone();
        for row in out.chunks_mut(self.p) {
            for (x, m) in row.iter_mut().zip(&means) {
                *x -= m;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Linear,
    Rbf {
        sigma: f64,
    },
}

/// Gram matrix of the rows of `x`.
pub fn gram(x: &ActivationMatrix, kind: KernelKind) -> Result<SymMatrix> {
    match kind {
        KernelKind::Linear => SymMatrix::from_fn(x.n, |i, j| dot(x.row(i), x.row(j))),
        KernelKind::Rbf { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::validation(format!(
                    "rbf sigma must be positive, got {sigma}"
                )));
            }
            let denom = 2.0 * sigma * sigma;
            SymMatrix::from_fn(x.n, |i, j| {
                let d2: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-d2 / denom).exp()
            })
        }
    }
}

/// Empirical HSIC, `Tr(A H B H) / (n - 1)²`.
pub fn hsic(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    let n = a.n();
    if b.n() != n {
        return Err(Error::validation(format!(
            "hsic size mismatch: {n} vs {}",
            b.n()
        )));
    }
    if n < 2 {
        return Err(Error::validation("hsic needs n >= 2"));
    }
    // Tr(A H B H) = <HAH, B>_F, and HAH is A double-centered
    let ac = double_center(a);
    let mut tr = 0.0;
    for (x, y) in ac.iter().zip(b.as_slice()) {
        tr += x * y;
    }
    let scale = (n - 1) as f64;
    Ok(tr / (scale * scale))
}

fn double_center(a: &SymMatrix) -> Vec<f64> {
    let n = a.n();
    let s = a.as_slice();
    let row_means: Vec<f64> = s
        .chunks(n)
        .map(|r| r.iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // symmetric, so column means equal row means
            out[i * n + j] = s[i * n + j] - row_means[i] - row_means[j] + grand;
        }
    }
    out
}

/// Centered kernel alignment. Returns 0 when either representation is
/// constant across examples.
pub fn cka(x: &ActivationMatrix, y: &ActivationMatrix, kind: KernelKind) -> Result<f64> {
    if x.n != y.n {
        return Err(Error::validation(format!(
            "cka row-count mismatch: {} vs {}",
            x.n, y.n
        )));
    }
    let value = match kind {
        KernelKind::Linear if x.p < x.n && y.p < y.n => linear_cka_feature_space(x, y),
        _ => {
            let a = gram(x, kind)?;
            let b = gram(y, kind)?;
            let ab = hsic(&a, &b)?;
            let aa = hsic(&a, &a)?;
            let bb = hsic(&b, &b)?;
            if aa < DEGENERATE_HSIC || bb < DEGENERATE_HSIC {
                0.0
            } else {
                ab / (aa * bb).sqrt()
            }
        }
    };
    Ok(value.clamp(0.0, 1.0))
}

/// `‖YcᵀXc‖²_F / (‖XcᵀXc‖_F ‖YcᵀYc‖_F)`, computed in feature space.
fn linear_cka_feature_space(x: &ActivationMatrix, y: &ActivationMatrix) -> f64 {
    let xc = x.centered();
    let yc = y.centered();
    let n = x.n;
    let cross = |a: &[f64], pa: usize, b: &[f64], pb: usize| -> f64 {
        let mut m = vec![0.0; pa * pb];
        for i in 0..n {
            let ra = &a[i * pa..(i + 1) * pa];
            let rb = &b[i * pb..(i + 1) * pb];
            for (u, au) in ra.iter().enumerate() {
                for (v, bv) in rb.iter().enumerate() {
                    m[u * pb + v] += au * bv;
                }
            }
        }
        m.iter().map(|v| v * v).sum::<f64>()
    };
    let xy = cross(&xc, x.p, &yc, y.p);
    let xx = cross(&xc, x.p, &xc, x.p);
    let yy = cross(&yc, y.p, &yc, y.p);
    // HSIC(A, A) = ‖XcᵀXc‖²_F / (n-1)²
    let scale = ((n - 1) * (n - 1)) as f64;
    if xx / scale < DEGENERATE_HSIC || yy / scale < DEGENERATE_HSIC {
        return 0.0;
    }
    xy / (xx.sqrt() * yy.sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise linear-CKA similarity between ensemble members, unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    matrix: SymMatrix,
}

impl SimilarityMatrix {
    pub fn n_members(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn into_sym(self) -> SymMatrix {
        self.matrix
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.n_members();
        if n < 2 {
            return 1.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += self.get(i, j);
            }
        }
        s / (n * (n - 1) / 2) as f64
    }
}

/// Builds the similarity matrix from each member's values over a shared
/// batch. For scalar outputs linear CKA is the squared Pearson correlation.
pub fn build_similarity(q_values: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    let n = q_values.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "need at least 2 members, got {n}"
        )));
    }
    let len = q_values[0].len();
    if len < 2 {
        return Err(Error::validation("need a batch of at least 2 values"));
    }
    if q_values.iter().any(|q| q.len() != len) {
        return Err(Error::validation("members' value vectors differ in length"));
    }
    if q_values.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::validation("member values must be finite"));
    }

    let centered: Vec<Vec<f64>> = q_values
        .iter()
        .map(|q| {
            let mean = q.iter().sum::<f64>() / len as f64;
            q.iter().map(|x| x - mean).collect()
        })
        .collect();
    let sq_norms: Vec<f64> = centered.iter().map(|c| dot(c, c)).collect();
    let scale = ((len - 1) * (len - 1)) as f64;
    let degenerate: Vec<bool> = sq_norms
        .iter()
        .map(|s| s * s / scale < DEGENERATE_HSIC)
        .collect();

    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                let c = dot(&centered[i], &centered[j]);
                (c * c / (sq_norms[i] * sq_norms[j])).clamp(0.0, 1.0)
            };
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix {
        matrix: SymMatrix::from_row_major(n, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_examples() {
        let x = ActivationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            gram(&x, KernelKind::Linear).unwrap(),
            SymMatrix::identity(2)
        );

        let x = ActivationMatrix::column(&[1.0, 2.0, 3.0]).unwrap();
        let g = gram(&x, KernelKind::Linear).unwrap();
        assert_eq!(
            g.to_rows(),
            vec![vec![1., 2., 3.], vec![2., 4., 6.], vec![3., 6., 9.]]
        );

        let x = ActivationMatrix::from_rows(&vec![vec![0.3, -1.0]; 4]).unwrap();
        let g = gram(&x, KernelKind::Rbf { sigma: 0.7 }).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 1.0));

        assert!(gram(&x, KernelKind::Rbf { sigma: 0.0 }).is_err());
    }

    #[test]
    fn hsic_examples() {
        let x = ActivationMatrix::column(&[-1.0, 0.0, 1.0]).unwrap();
        let a = gram(&x, KernelKind::Linear).unwrap();
        assert!((hsic(&a, &a).unwrap() - 1.0).abs() < 1e-15);

        let ones = SymMatrix::from_fn(3, |_, _| 1.0).unwrap();
        assert!(hsic(&a, &ones).unwrap().abs() < 1e-15);

        let z = SymMatrix::zeros(3);
        assert_eq!(hsic(&z, &z).unwrap(), 0.0);

        assert!(hsic(&a, &SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn cka_worked_values() {
        let x = ActivationMatrix::column(&[1.0, 2.0, 3.0]).unwrap();
        let y = ActivationMatrix::column(&[1.0, 2.0, 4.0]).unwrap();
        // n = p = ... feature route needs p < n; both routes must agree
        let v = cka(&x, &y, KernelKind::Linear).unwrap();
        assert!((v - 27.0 / 28.0).abs() < 1e-12);
        assert!((cka(&x, &x, KernelKind::Linear).unwrap() - 1.0).abs() < 1e-12);

        let shifted =
            ActivationMatrix::column(&[1.0 * 5.0 + 7.0, 2.0 * 5.0 + 7.0, 3.0 * 5.0 + 7.0]).unwrap();
        assert!((cka(&x, &shifted, KernelKind::Linear).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_gram_route_matches_feature_route() {
        // p >= n forces the Gram route
        let x = ActivationMatrix::from_rows(&[vec![1.0, 0.5, -2.0], vec![0.0, 1.0, 3.0]]).unwrap();
        let y = ActivationMatrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, -1.0, 1.0]]).unwrap();
        let v = cka(&x, &y, KernelKind::Linear).unwrap();
        assert!((0.0..=1.0).contains(&v));

        let x = ActivationMatrix::column(&[0.1, 0.7, -0.3, 2.0]).unwrap();
        let y = ActivationMatrix::column(&[1.0, 0.2, 0.5, 0.9]).unwrap();
        let fast = cka(&x, &y, KernelKind::Linear).unwrap();
        let a = gram(&x, KernelKind::Linear).unwrap();
        let b = gram(&y, KernelKind::Linear).unwrap();
        let slow = hsic(&a, &b).unwrap() / (hsic(&a, &a).unwrap() * hsic(&b, &b).unwrap()).sqrt();
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn cka_degenerate_and_mismatch() {
        let x = ActivationMatrix::column(&[2.0, 2.0, 2.0]).unwrap();
        let y = ActivationMatrix::column(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cka(&x, &y, KernelKind::Linear).unwrap(), 0.0);
        let short = ActivationMatrix::column(&[1.0, 2.0]).unwrap();
        assert!(cka(&short, &y, KernelKind::Linear).is_err());
        assert!(ActivationMatrix::column(&[1.0]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let same = vec![vec![0.1, 0.5, -0.2]; 4];
        let s = build_similarity(&same).unwrap();
        assert!(s
            .as_sym()
            .as_slice()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-12));

        let s = build_similarity(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 4.0]]).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert!((s.get(0, 1) - 27.0 / 28.0).abs() < 1e-12);
        assert_eq!(s.get(0, 1), s.get(1, 0));

        let s = build_similarity(&[vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 4.0]]).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(0, 0), 1.0);
    }
}
