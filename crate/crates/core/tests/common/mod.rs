//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dns_core::linalg::SymMatrix;
use dns_core::nn::{FlopLedger, Mlp};
use dns_core::SeededRng;

/// Determinant by cofactor expansion along the first row.
pub fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|&(c, _)| c != j)
                            .map(|(_, &v)| v)
                            .collect()
                    })
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * cofactor_det(&minor)
            })
            .sum(),
    }
}

pub fn submatrix(m: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| idx.iter().map(|&j| m[i][j]).collect())
        .collect()
}

pub fn random_symmetric(n: usize, scale: f64, rng: &mut SeededRng) -> SymMatrix {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.uniform_range(-scale, scale);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    SymMatrix::from_rows(&rows).unwrap()
}

/// `B Bᵀ` for a random `n × r` factor `B`.
pub fn random_psd(n: usize, rank: usize, rng: &mut SeededRng) -> SymMatrix {
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..rank).map(|_| rng.normal()).collect())
        .collect();
    SymMatrix::from_fn(n, |i, j| (0..rank).map(|r| b[i][r] * b[j][r]).sum()).unwrap()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

/// Random orthogonal matrix by Gram–Schmidt on Gaussian columns.
pub fn random_orthogonal(p: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    transpose(&cols)
}

/// Linear CKA through explicit centered Gram matrices.
pub fn naive_linear_cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let center = |k: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let row: Vec<f64> = k.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let all = row.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| (0..n).map(|j| k[i][j] - row[i] - row[j] + all).collect())
            .collect()
    };
    let kx = center(matmul(x, &transpose(x)));
    let ky = center(matmul(y, &transpose(y)));
    let dot = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> f64 {
        a.iter()
            .zip(b)
            .map(|(r, s)| r.iter().zip(s).map(|(u, v)| u * v).sum::<f64>())
            .sum()
    };
    dot(&kx, &ky) / (dot(&kx, &kx) * dot(&ky, &ky)).sqrt()
}

/// Squared Pearson correlation, computed with two-pass sums.
pub fn squared_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab * sab / (saa * sbb)
}

/// Squared Frobenius distance from `[[a, b], [b, c]]` to the closest PSD
/// matrix found by coarse-to-fine search over `[[p, q], [q, r]]` with
/// `p, r ≥ 0` and `q² ≤ pr`.
pub fn grid_nearest_psd_2x2(a: f64, b: f64, c: f64) -> f64 {
    let dist = |p: f64, q: f64, r: f64| (p - a).powi(2) + 2.0 * (q - b).powi(2) + (r - c).powi(2);
    let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-3);
    let (mut cp, mut cq, mut cr) = (0.0, 0.0, 0.0);
    let mut best = dist(0.0, 0.0, 0.0);
    let mut half = 2.0 * scale;
    let steps = 40;
    for _ in 0..8 {
        let h = half / steps as f64;
        let (bp, bq, br) = (cp, cq, cr);
        for i in -steps..=steps {
            let p = bp + i as f64 * h;
            if p < 0.0 {
                continue;
            }
            for k in -steps..=steps {
                let r = br + k as f64 * h;
                if r < 0.0 {
                    continue;
                }
                let qmax = (p * r).sqrt();
                for j in -steps..=steps {
                    let q = (bq + j as f64 * h).clamp(-qmax, qmax);
                    let d = dist(p, q, r);
                    if d < best {
                        best = d;
                        (cp, cq, cr) = (p, q, r);
                    }
                }
            }
        }
        half = 4.0 * h;
    }
    best
}

pub const H: f64 = 1e-6;

pub fn weighted_output(net: &Mlp, x: &[f64], batch: usize, upstream: &[f64]) -> f64 {
    let out = net.forward_batch(x, batch, &mut FlopLedger::new()).unwrap();
    out.output().iter().zip(upstream).map(|(o, u)| o * u).sum()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences of `Σ upstream ⊙ net(x)` with respect to parameters and input.
pub fn numeric_gradients(
    net: &Mlp,
    x: &[f64],
    batch: usize,
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut probe = net.clone();
    let mut dp = Vec::with_capacity(net.n_params());
    for i in 0..net.n_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + H;
        let up = weighted_output(&probe, x, batch, upstream);
        probe.params_mut()[i] = orig - H;
        let down = weighted_output(&probe, x, batch, upstream);
        probe.params_mut()[i] = orig;
        dp.push((up - down) / (2.0 * H));
    }
    let mut dx = Vec::with_capacity(x.len());
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + H;
        let up = weighted_output(net, &xs, batch, upstream);
        xs[i] = orig - H;
        let down = weighted_output(net, &xs, batch, upstream);
        xs[i] = orig;
        dx.push((up - down) / (2.0 * H));
    }
    (dp, dx)
}
