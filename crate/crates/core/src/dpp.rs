//! Exact k-DPP sampling from an L-ensemble kernel, with brute-force
//! enumeration oracles over subsets.
//!
//! Sampling is the two-phase spectral algorithm: phase one picks `k`
//! eigenvectors with probabilities driven by elementary symmetric
//! polynomials of the spectrum, phase two draws items from the projection
//! DPP spanned by those eigenvectors.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{self, EigenDecomp, SymMatrix, MAX_ENUMERATION_N};
use crate::rng::SeededRng;

/// Eigenvalues below this are zeroed before phase one.
pub const EIGEN_CLAMP: f64 = 1e-12;
/// Minimum eigenvalue accepted as "PSD" by the sampler.
pub const PSD_INPUT_TOL: f64 = 1e-8;
/// `e_k` at or below this means the kernel cannot support `k` items.
pub const MIN_NORMALIZER: f64 = 1e-300;
/// Phase two fails when every residual coordinate mass falls below this.
pub const MIN_RESIDUAL_MASS: f64 = 1e-14;

/// Sorted, distinct member indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("index set members must be distinct"));
        }
        Ok(IndexSet(members))
    }

    pub fn full(n: usize) -> Self {
        IndexSet((0..n).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// `e[l][m]`: `l`-th elementary symmetric polynomial of the first `m` values.
#[derive(Clone, Debug)]
pub struct ElemSymTable {
    values: Vec<Vec<f64>>,
}

impl ElemSymTable {
    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[l][m]
    }

    pub fn k_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn n(&self) -> usize {
        self.values[0].len() - 1
    }

    /// `e_l` of the full value list.
    pub fn total(&self, l: usize) -> f64 {
        self.values[l][self.n()]
    }
}

pub fn elementary_symmetric(lambda: &[f64], k_max: usize) -> ElemSymTable {
    let n = lambda.len();
    let k_max = k_max.min(n);
    let mut values = vec![vec![0.0; n + 1]; k_max + 1];
    values[0].iter_mut().for_each(|v| *v = 1.0);
    for l in 1..=k_max {
        for m in 1..=n {
            values[l][m] = values[l][m - 1] + lambda[m - 1] * values[l - 1][m - 1];
        }
    }
    ElemSymTable { values }
}

/// Precomputed spectrum and normalizers for repeated size-`k` draws.
/// Immutable; each draw needs its own RNG.
#[derive(Clone, Debug)]
pub struct KDppSampler {
    k: usize,
    eig: EigenDecomp,
    lambda: Vec<f64>,
    table: ElemSymTable,
}

impl KDppSampler {
    pub fn new(l: &SymMatrix, k: usize) -> Result<Self> {
        let n = l.n();
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if k > n {
            return Err(Error::InsufficientRank(format!(
                "k = {k} exceeds kernel size {n}"
            )));
        }
        let eig = linalg::eigh(l)?;
        if eig.min_value() < -PSD_INPUT_TOL {
            return Err(Error::validation(format!(
                "kernel is not PSD: minimum eigenvalue {:e}",
                eig.min_value()
            )));
        }
        let lambda: Vec<f64> = eig
            .values
            .iter()
            .map(|&v| if v < EIGEN_CLAMP { 0.0 } else { v })
            .collect();
        let table = elementary_symmetric(&lambda, k);
        let ek = table.total(k);
        if !(ek > MIN_NORMALIZER) {
            let rank = lambda.iter().filter(|&&v| v > 0.0).count();
            return Err(Error::InsufficientRank(format!(
                "e_{k} = {ek:e}; kernel rank {rank} cannot support {k} items"
            )));
        }
        Ok(KDppSampler {
            k,
            eig,
            lambda,
            table,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn table(&self) -> &ElemSymTable {
        &self.table
    }

    /// Phase one: indices of the `k` eigenvectors spanning the projection DPP.
    pub fn select_eigenvectors(&self, rng: &mut SeededRng) -> Vec<usize> {
        let mut chosen = Vec::with_capacity(self.k);
        let mut remaining = self.k;
        for m in (1..=self.n()).rev() {
            if remaining == 0 {
                break;
            }
            if m == remaining {
                // every remaining eigenvector must be taken
                chosen.extend((0..m).rev());
                break;
            }
            let p = self.lambda[m - 1] * self.table.get(remaining - 1, m - 1)
                / self.table.get(remaining, m);
            if rng.uniform() < p {
                chosen.push(m - 1);
                remaining -= 1;
            }
        }
        chosen.reverse();
        chosen
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<IndexSet> {
        let selected = self.select_eigenvectors(rng);
        debug_assert_eq!(selected.len(), self.k);
        let n = self.n();
        let mut basis: Vec<Vec<f64>> = selected.iter().map(|&c| self.eig.column(c)).collect();
        let mut items = Vec::with_capacity(self.k);
        let mut mass = vec![0.0; n];

        while !basis.is_empty() {
            for (i, m) in mass.iter_mut().enumerate() {
                *m = basis.iter().map(|v| v[i] * v[i]).sum();
            }
            let total: f64 = mass.iter().sum();
            if mass.iter().all(|&m| m < MIN_RESIDUAL_MASS) {
                return Err(Error::numeric(format!(
                    "projection sampling degenerate after {} items; residual mass {total:e}",
                    items.len()
                )));
            }
            let item = rng.categorical(&mass, total);
            items.push(item);

            // eliminate coordinate `item` using the vector with the largest entry there
            let pivot = (0..basis.len())
                .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()))
                .expect("basis non-empty");
            let pv = basis.swap_remove(pivot);
            for v in basis.iter_mut() {
                let f = v[item] / pv[item];
                for (x, p) in v.iter_mut().zip(&pv) {
                    *x -= f * p;
                }
                v[item] = 0.0;
            }
            modified_gram_schmidt(&mut basis);
        }
        IndexSet::new(items)
    }
}

fn modified_gram_schmidt(basis: &mut [Vec<f64>]) {
    for i in 0..basis.len() {
        for j in 0..i {
            let (done, rest) = basis.split_at_mut(i);
            let proj: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            for (x, q) in rest[0].iter_mut().zip(&done[j]) {
                *x -= proj * q;
            }
        }
        let norm = basis[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            basis[i].iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// One size-`k` draw. Builds a fresh sampler; use [`KDppSampler`] directly
/// for repeated draws.
pub fn kdpp_sample(l: &SymMatrix, k: usize, rng: &mut SeededRng) -> Result<IndexSet> {
    KDppSampler::new(l, k)?.sample(rng)
}

fn check_enumerable(l: &SymMatrix) -> Result<()> {
    if l.n() > MAX_ENUMERATION_N {
        return Err(Error::validation(format!(
            "enumeration limited to N <= {MAX_ENUMERATION_N}, got {}",
            l.n()
        )));
    }
    Ok(())
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in (pos + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exact k-DPP probabilities `det(L_x) / Σ_{|y|=k} det(L_y)` by enumeration.
pub fn kdpp_prob_bruteforce(l: &SymMatrix, k: usize) -> Result<BTreeMap<IndexSet, f64>> {
    check_enumerable(l)?;
    let subsets = combinations(l.n(), k);
    let mut dets = Vec::with_capacity(subsets.len());
    for s in &subsets {
        dets.push(linalg::principal_minor_det(l, s)?);
    }
    let total: f64 = dets.iter().sum();
    if !(total > MIN_NORMALIZER) {
        return Err(Error::InsufficientRank(format!(
            "sum of size-{k} principal minors is {total:e}"
        )));
    }
    Ok(subsets
        .into_iter()
        .zip(dets)
        .map(|(s, d)| (IndexSet(s), d / total))
        .collect())
}

/// Exact L-ensemble probabilities over all subsets, including the empty
/// set. The normalizer is cross-checked against `det(I + L)`.
pub fn lensemble_prob_bruteforce(l: &SymMatrix) -> Result<BTreeMap<IndexSet, f64>> {
    check_enumerable(l)?;
    let n = l.n();
    let mut entries = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let d = linalg::principal_minor_det(l, &s)?;
        entries.push((IndexSet(s), d));
    }
    let total: f64 = entries.iter().map(|(_, d)| d).sum();
    let via_det = linalg::det(&SymMatrix::identity(n).add(l)?);
    if (total - via_det).abs() > 1e-8 * total.abs().max(via_det.abs()).max(1.0) {
        return Err(Error::numeric(format!(
            "subset-sum normalizer {total} disagrees with det(I + L) = {via_det}"
        )));
    }
    Ok(entries.into_iter().map(|(s, d)| (s, d / total)).collect())
}

/// Total-variation distance between empirical counts and exact probabilities.
pub fn total_variation(counts: &BTreeMap<IndexSet, u64>, exact: &BTreeMap<IndexSet, f64>) -> f64 {
    let draws: u64 = counts.values().sum();
    let mut tv = 0.0;
    for (s, p) in exact {
        let f = counts.get(s).copied().unwrap_or(0) as f64 / draws as f64;
        tv += (f - p).abs();
    }
    // empirical mass on sets the exact law never produces
    for (s, c) in counts {
        if !exact.contains_key(s) {
            tv += *c as f64 / draws as f64;
        }
    }
    0.5 * tv
}

/// Draws `draws` samples and tallies them per subset.
pub fn empirical_counts(
    sampler: &KDppSampler,
    draws: u64,
    rng: &mut SeededRng,
) -> Result<BTreeMap<IndexSet, u64>> {
    let mut counts = BTreeMap::new();
    for _ in 0..draws {
        *counts.entry(sampler.sample(rng)?).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example3() -> SymMatrix {
        SymMatrix::from_rows(&[
            vec![1.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn elementary_symmetric_examples() {
        let t = elementary_symmetric(&[1.0, 2.0, 3.0], 3);
        assert_eq!(
            (t.total(0), t.total(1), t.total(2), t.total(3)),
            (1.0, 6.0, 11.0, 6.0)
        );
        let t = elementary_symmetric(&[1.0; 6], 6);
        let binom = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
        for (k, b) in binom.iter().enumerate() {
            assert_eq!(t.total(k), *b);
        }
        // e[l][m] = 0 for l > m
        assert_eq!(t.get(3, 2), 0.0);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(4, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn bruteforce_examples() {
        let p = kdpp_prob_bruteforce(&example3(), 2).unwrap();
        let get = |v: Vec<usize>| p[&IndexSet::new(v).unwrap()];
        assert!((get(vec![0, 1]) - 3.0 / 11.0).abs() < 1e-15);
        assert!((get(vec![0, 2]) - 4.0 / 11.0).abs() < 1e-15);
        assert!((get(vec![1, 2]) - 4.0 / 11.0).abs() < 1e-15);

        let p = kdpp_prob_bruteforce(&SymMatrix::identity(4), 2).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.values().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));

        let p = kdpp_prob_bruteforce(&SymMatrix::diagonal(&[2.0, 1.0]), 1).unwrap();
        assert!((p[&IndexSet::new(vec![0]).unwrap()] - 2.0 / 3.0).abs() < 1e-15);

        assert!(kdpp_prob_bruteforce(&SymMatrix::identity(13), 2).is_err());
    }

    #[test]
    fn lensemble_examples() {
        let p = lensemble_prob_bruteforce(&SymMatrix::zeros(3)).unwrap();
        assert_eq!(p[&IndexSet::new(vec![]).unwrap()], 1.0);
        let p = lensemble_prob_bruteforce(&SymMatrix::identity(1)).unwrap();
        assert_eq!(p[&IndexSet::new(vec![]).unwrap()], 0.5);
        assert_eq!(p[&IndexSet::new(vec![0]).unwrap()], 0.5);
    }

    #[test]
    fn rank_deficient_kernel_is_rejected() {
        let ones = SymMatrix::from_fn(2, |_, _| 1.0).unwrap();
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            kdpp_sample(&ones, 2, &mut rng),
            Err(Error::InsufficientRank(_))
        ));
        assert!(matches!(
            kdpp_sample(&SymMatrix::identity(3), 4, &mut rng),
            Err(Error::InsufficientRank(_))
        ));
        let indefinite = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            kdpp_sample(&indefinite, 1, &mut rng),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn phase_one_selects_exactly_k() {
        let l = SymMatrix::from_fn(6, |i, j| if i == j { 1.0 } else { 0.3 }).unwrap();
        let s = KDppSampler::new(&l, 3).unwrap();
        let mut rng = SeededRng::new(5);
        for _ in 0..2000 {
            let v = s.select_eigenvectors(&mut rng);
            assert_eq!(v.len(), 3);
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = KDppSampler::new(&example3(), 2).unwrap();
        let mut a = SeededRng::new(11);
        let mut b = SeededRng::new(11);
        for _ in 0..500 {
            assert_eq!(s.sample(&mut a).unwrap(), s.sample(&mut b).unwrap());
        }
    }

    #[test]
    fn worked_example_frequencies() {
        let s = KDppSampler::new(&example3(), 2).unwrap();
        let mut rng = SeededRng::new(3);
        let counts = empirical_counts(&s, 50_000, &mut rng).unwrap();
        let exact = kdpp_prob_bruteforce(&example3(), 2).unwrap();
        assert!(total_variation(&counts, &exact) < 0.01);
    }
}
