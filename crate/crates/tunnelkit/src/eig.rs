//! Low-lying spectra of discrete operators and harmonic reference levels.
//!
//! Tridiagonal matrices (1D scalar problems) below [`DENSE_THRESHOLD`]
//! unknowns, and general ones below [`DENSE_GENERAL_THRESHOLD`], are reduced
//! to tridiagonal form and solved by Sturm bisection plus inverse iteration. Larger problems use shift-invert Lanczos with full
//! reorthogonalization on an envelope LDL^T factorization; converged vectors
//! are locked and the iteration restarted from a fresh random vector to pick
//! up multiplicities. Every result is finished by a Rayleigh-Ritz step on the
//! edge-wise quadratic form, which resolves exponentially small splittings
//! far below the matrix-norm rounding level.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{DomainGraph, NodeField};
use crate::operator::{assemble, compensated_dot, dd_dot, DiscreteOperator};
use crate::potential::{EndoField, WellInfo};
use crate::sparse::{rcm_ordering, CsrMatrix, SkylineLdl};

pub const DENSE_THRESHOLD: usize = 3000;
pub const DENSE_GENERAL_THRESHOLD: usize = 400;
pub const MAX_ITERATIONS: usize = 500;
const MAX_SHIFT_RETRIES: usize = 3;
const MAX_RESTARTS: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    /// Section normalized in the volume-weighted inner product.
    pub vector: NodeField,
    /// ||H v - value v||.
    pub residual: f64,
    /// `value = cluster_shift + cluster_offset`; pairs in one near-degenerate
    /// cluster share the shift, so offsets resolve their differences.
    pub cluster_shift: f64,
    pub cluster_offset: f64,
}

/// `b.value - a.value`, resolved below the eigenvalue ulp within a cluster.
pub fn splitting(a: &EigenPair, b: &EigenPair) -> f64 {
    if a.cluster_shift == b.cluster_shift {
        b.cluster_offset - a.cluster_offset
    } else {
        b.value - a.value
    }
}

/// Relative gap below which neighbouring eigenvalues are refined together.
pub const CLUSTER_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub seed: u64,
    pub dense_threshold: usize,
    /// Dense limit for matrices that are not tridiagonal.
    pub dense_general_threshold: usize,
    pub max_iterations: usize,
    /// Rayleigh-Ritz refinement on the edge form.
    pub refine: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            seed: 0x5eed,
            dense_threshold: DENSE_THRESHOLD,
            dense_general_threshold: DENSE_GENERAL_THRESHOLD,
            max_iterations: MAX_ITERATIONS,
            refine: true,
        }
    }
}

/// Solver diagnostics attached to a spectrum.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub method: String,
    pub shift: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub norm_estimate: f64,
    /// Rounding floor of computed eigenvalue differences.
    pub noise_floor: f64,
}

pub fn low_spectrum(
    op: &DiscreteOperator,
    k: usize,
    window: Option<(f64, f64)>,
) -> Result<Vec<EigenPair>> {
    low_spectrum_with(op, k, window, &SolverOptions::default()).map(|r| r.0)
}

pub fn low_spectrum_with(
    op: &DiscreteOperator,
    k: usize,
    window: Option<(f64, f64)>,
    opts: &SolverOptions,
) -> Result<(Vec<EigenPair>, SpectrumInfo)> {
    if k == 0 {
        return Err(Error::InsufficientEigenvalues("k must be at least 1".into()));
    }
    let a = op.matrix();
    let n = a.dim();
    let k_eff = k.min(n);
    let norm = a.gershgorin_norm();
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut info = SpectrumInfo {
        norm_estimate: norm,
        ..Default::default()
    };
    let tridiagonal = a.bandwidth() <= 1;
    let dense = if tridiagonal {
        n < opts.dense_threshold
    } else {
        n < opts.dense_threshold.min(opts.dense_general_threshold)
    };
    let (mut values, mut vectors) = if dense {
        info.method = if tridiagonal {
            "dense-tridiagonal".into()
        } else {
            "dense-householder".into()
        };
        dense_lowest(a, k_eff, lo, hi)?
    } else {
        info.method = "shift-invert-lanczos".into();
        let sigma = if lo.is_finite() {
            lo
        } else {
            let floor = op.lower_bound().min(a.gershgorin_lower().max(op.lower_bound()));
            floor - 0.05 * op.hbar() * (1.0 + op.endomorphism().max_norm()) - 1e-9 * norm
        };
        lanczos_lowest(a, k_eff, sigma, hi, opts, &mut info)?
    };
    let mut offsets: Vec<(f64, f64)> = values.iter().map(|&v| (v, 0.0)).collect();
    if opts.refine && !vectors.is_empty() {
        rayleigh_ritz(op, &mut values, &mut vectors);
        offsets = refine_clusters(op, &mut values, &mut vectors);
    }
    let mut pairs = Vec::with_capacity(values.len());
    for ((value, y), (cluster_shift, cluster_offset)) in values.into_iter().zip(vectors).zip(offsets) {
        let ay = a.mul(&y);
        let residual = ay
            .iter()
            .zip(&y)
            .map(|(p, q)| (p - value * q).powi(2))
            .sum::<f64>()
            .sqrt();
        let bound = 1e-8 * (value.abs() + norm);
        if !(residual <= bound) {
            return Err(Error::NoConvergence(format!(
                "eigenpair {value} has residual {residual:e} above {bound:e}"
            )));
        }
        pairs.push(EigenPair {
            value,
            vector: op.to_section(&y),
            residual,
            cluster_shift,
            cluster_offset,
        });
    }
    // Cluster offsets carry relative precision; what remains is the
    // double-double accumulation error and the quadratic vector error.
    let omax = pairs.iter().map(|p| p.cluster_offset.abs()).fold(0.0, f64::max);
    let rmax = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    let eps = f64::EPSILON;
    info.noise_floor = 2.0 * eps * omax
        + 16.0 * eps * eps * norm * n as f64
        + rmax * rmax / (1e-3 * op.hbar()).max(1e-300);
    Ok((pairs, info))
}

/// Rayleigh-Ritz on span(vectors) using the edge-wise energy form.
pub fn rayleigh_ritz(op: &DiscreteOperator, values: &mut Vec<f64>, vectors: &mut Vec<Vec<f64>>) {
    let m = vectors.len();
    let mut gram = DMatrix::zeros(m, m);
    let mut kmat = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let g = compensated_dot(&vectors[i], &vectors[j]);
            let e = op.energy_form(&vectors[i], &vectors[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
            kmat[(i, j)] = e;
            kmat[(j, i)] = e;
        }
    }
    let Some(chol) = gram.clone().cholesky() else {
        return;
    };
    let linv = match chol.l().try_inverse() {
        Some(l) => l,
        None => return,
    };
    let red = &linv * &kmat * linv.transpose();
    let red = (&red + red.transpose()) * 0.5;
    let eig = SymmetricEigen::new(red);
    let coef = linv.transpose() * &eig.eigenvectors;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = vectors[0].len();
    let mut new_vecs = Vec::with_capacity(m);
    let mut new_vals = Vec::with_capacity(m);
    for &c in &order {
        let mut y = vec![0.0; n];
        for (i, v) in vectors.iter().enumerate() {
            let w = coef[(i, c)];
            for (yy, vv) in y.iter_mut().zip(v) {
                *yy += w * vv;
            }
        }
        let nrm = compensated_dot(&y, &y).sqrt();
        y.iter_mut().for_each(|x| *x /= nrm);
        new_vecs.push(y);
        new_vals.push(eig.eigenvalues[c]);
    }
    *values = new_vals;
    *vectors = new_vecs;
}

/// Shifted Rayleigh-Ritz within each tight cluster, in double-double
/// arithmetic. Returns `(shift, offset)` per pair.
fn refine_clusters(
    op: &DiscreteOperator,
    values: &mut [f64],
    vectors: &mut [Vec<f64>],
) -> Vec<(f64, f64)> {
    let n = values.len();
    let mut out = vec![(0.0, 0.0); n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n
            && values[end] - values[end - 1] <= CLUSTER_TOL * values[end].abs().max(f64::MIN_POSITIVE)
        {
            end += 1;
        }
        let shift = values[start];
        let m = end - start;
        let block = &vectors[start..end];
        let kmat = DMatrix::from_fn(m, m, |a, b| op.shifted_form(&block[a], &block[b], shift));
        let kmat = (&kmat + kmat.transpose()) * 0.5;
        let gram = DMatrix::from_fn(m, m, |a, b| dd_dot(&block[a], &block[b]));
        let chol = gram.cholesky().expect("cluster vectors are orthonormal");
        let linv = chol.l().try_inverse().expect("Cholesky factor invertible");
        let red = &linv * &kmat * linv.transpose();
        let red = (&red + red.transpose()) * 0.5;
        let eig = SymmetricEigen::new(red);
        let coef = linv.transpose() * &eig.eigenvectors;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let len = block[0].len();
        let rotated: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let mut y = vec![0.0; len];
                for (i, v) in block.iter().enumerate() {
                    axpy(coef[(i, c)], v, &mut y);
                }
                let nrm = dd_dot(&y, &y).sqrt();
                y.iter_mut().for_each(|x| *x /= nrm);
                y
            })
            .collect();
        for (t, (&c, y)) in order.iter().zip(rotated).enumerate() {
            let theta = eig.eigenvalues[c];
            values[start + t] = shift + theta;
            vectors[start + t] = y;
            out[start + t] = (shift, theta);
        }
        start = end;
    }
    out
}

fn dense_lowest(a: &CsrMatrix, k: usize, lo: f64, hi: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    if a.bandwidth() <= 1 {
        let d = a.diagonal();
        let e: Vec<f64> = (0..n.saturating_sub(1)).map(|i| a.get(i, i + 1)).collect();
        return tridiagonal_lowest(&d, &e, k, lo, hi);
    }
    let dense = a.to_dense();
    let tri = nalgebra::linalg::SymmetricTridiagonal::new(dense);
    let (q, d, e) = tri.unpack();
    let d: Vec<f64> = d.iter().copied().collect();
    let e: Vec<f64> = e.iter().copied().collect();
    let (vals, vecs) = tridiagonal_lowest(&d, &e, k, lo, hi)?;
    let vecs = vecs
        .into_iter()
        .map(|w| {
            let w = nalgebra::DVector::from_vec(w);
            (&q * w).iter().copied().collect()
        })
        .collect();
    Ok((vals, vecs))
}

/// Number of eigenvalues of the symmetric tridiagonal (d, e) below x.
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max)
        + 2.0 * e.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE) * 1e-3;
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q.abs() < tiny {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_lowest(
    d: &[f64],
    e: &[f64],
    k: usize,
    lo: f64,
    hi: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = d.len();
    let radius = (0..n)
        .map(|i| {
            let l = if i > 0 { e[i - 1].abs() } else { 0.0 };
            let r = if i + 1 < n { e[i].abs() } else { 0.0 };
            (d[i] - l - r, d[i] + l + r)
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, x| {
            (acc.0.min(x.0), acc.1.max(x.1))
        });
    let (glo, ghi) = radius;
    let start = if lo.is_finite() { sturm_count(d, e, lo) } else { 0 };
    let mut values = Vec::new();
    for idx in start..(start + k).min(n) {
        // bisection for the idx-th eigenvalue (0-based)
        let (mut a, mut b) = (glo - 1e-12 * glo.abs().max(1.0), ghi + 1e-12 * ghi.abs().max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(d, e, mid) > idx {
                b = mid;
            } else {
                a = mid;
            }
        }
        let v = 0.5 * (a + b);
        if v > hi {
            break;
        }
        values.push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7d1a);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(values.len());
    for &lam in &values {
        let lu = TriLu::new(d, e, lam);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..3 {
            let mut y = lu.solve(&x);
            for v in &vectors {
                for _ in 0..2 {
                    let c = dot(&y, v);
                    axpy(-c, v, &mut y);
                }
            }
            let nrm = dot(&y, &y).sqrt();
            y.iter_mut().for_each(|t| *t /= nrm);
            x = y;
        }
        vectors.push(x);
    }
    Ok((values, vectors))
}

/// LU with partial pivoting of (T - mu I), T symmetric tridiagonal.
struct TriLu {
    u: Vec<[f64; 3]>,
    mult: Vec<f64>,
    swap: Vec<bool>,
}

impl TriLu {
    fn new(d: &[f64], e: &[f64], mu: f64) -> Self {
        let n = d.len();
        let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let tiny = f64::EPSILON * scale;
        let mut u = vec![[0.0; 3]; n];
        let mut mult = vec![0.0; n];
        let mut swap = vec![false; n];
        let mut cur = [d[0] - mu, if n > 1 { e[0] } else { 0.0 }, 0.0];
        for i in 0..n.saturating_sub(1) {
            let mut next = [e[i], d[i + 1] - mu, if i + 2 < n { e[i + 1] } else { 0.0 }];
            if next[0].abs() > cur[0].abs() {
                std::mem::swap(&mut cur, &mut next);
                swap[i] = true;
            }
            if cur[0].abs() < tiny {
                cur[0] = tiny;
            }
            let m = next[0] / cur[0];
            mult[i] = m;
            u[i] = cur;
            cur = [next[1] - m * cur[1], next[2] - m * cur[2], 0.0];
        }
        if cur[0].abs() < tiny {
            cur[0] = tiny;
        }
        u[n - 1] = cur;
        TriLu { u, mult, swap }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                y.swap(i, i + 1);
            }
            y[i + 1] -= self.mult[i] * y[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.u[i][1] * x[i + 1];
            }
            if i + 2 < n {
                s -= self.u[i][2] * x[i + 2];
            }
            x[i] = s / self.u[i][0];
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn lanczos_lowest(
    a: &CsrMatrix,
    k: usize,
    sigma0: f64,
    hi: f64,
    opts: &SolverOptions,
    info: &mut SpectrumInfo,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let perm = rcm_ordering(a);
    let scale = a.gershgorin_norm().max(1e-300);
    let mut sigma = sigma0;
    let mut factor = None;
    let mut last_err = None;
    for attempt in 0..=MAX_SHIFT_RETRIES {
        match SkylineLdl::factor(a, sigma, &perm) {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(e) => {
                last_err = Some(e);
                sigma -= 1e-7 * scale * (attempt + 1) as f64;
            }
        }
    }
    let Some(factor) = factor else {
        return Err(last_err.expect("factorization attempted"));
    };
    info.shift = sigma;
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut want = k;
    for restart in 0..MAX_RESTARTS {
        info.restarts = restart;
        let (vals, vecs, iters) =
            krylov_run(&factor, n, want, &locked, &mut rng, opts.max_iterations)?;
        info.iterations += iters;
        let kth = kth_value(&locked_vals, k);
        let mut found_new = false;
        for (theta, y) in vals.into_iter().zip(vecs) {
            let lam = sigma + 1.0 / theta;
            if locked_vals.len() >= k && lam > kth + 1e-10 * scale {
                continue;
            }
            found_new = true;
            locked_vals.push(lam);
            locked.push(y);
        }
        if locked_vals.len() >= k && !found_new {
            break;
        }
        if locked_vals.len() >= n {
            break;
        }
        want = 1.max(k.saturating_sub(locked_vals.len()));
    }
    let mut idx: Vec<usize> = (0..locked_vals.len()).collect();
    idx.sort_by(|&x, &y| locked_vals[x].total_cmp(&locked_vals[y]));
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for i in idx.into_iter().take(k) {
        if locked_vals[i] > hi {
            break;
        }
        values.push(locked_vals[i]);
        vectors.push(std::mem::take(&mut locked[i]));
    }
    Ok((values, vectors))
}

fn kth_value(vals: &[f64], k: usize) -> f64 {
    if vals.len() < k {
        return f64::INFINITY;
    }
    let mut v = vals.to_vec();
    v.sort_by(f64::total_cmp);
    v[k - 1]
}

/// One Lanczos run on (A - sigma)^{-1} deflated against `locked`.
/// Returns the `want` largest positive Ritz values with their vectors.
fn krylov_run(
    factor: &SkylineLdl,
    n: usize,
    want: usize,
    locked: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let deflate = |w: &mut Vec<f64>| {
        for x in locked {
            let c = dot(w, x);
            axpy(-c, x, w);
        }
    };
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate(&mut q);
    deflate(&mut q);
    let nrm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= nrm);
    let mut basis = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let max_iter = max_iter.min(n.saturating_sub(locked.len()));
    for j in 0..max_iter {
        factor.solve(&basis[j], &mut w);
        let mut wv = w.clone();
        let a = dot(&basis[j], &wv);
        axpy(-a, &basis[j], &mut wv);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut wv);
        }
        for _ in 0..2 {
            deflate(&mut wv);
            for v in &basis {
                let c = dot(&wv, v);
                axpy(-c, v, &mut wv);
            }
        }
        alpha.push(a);
        let b = dot(&wv, &wv).sqrt();
        let m = j + 1;
        let exhausted = b <= 1e-14 * a.abs().max(1e-300) || m == max_iter;
        if m >= want && (m % 4 == 0 || exhausted) || exhausted {
            let t = DMatrix::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let top: Vec<usize> = order.into_iter().take(want).collect();
            let theta_max = eig.eigenvalues.amax();
            let converged = top.len() == want.min(m)
                && top.iter().all(|&i| {
                    (b * eig.eigenvectors[(m - 1, i)]).abs() <= 1e-13 * theta_max
                });
            if converged || exhausted {
                if !converged && !exhausted {
                    continue;
                }
                if !converged && m == max_iter && b > 1e-14 * a.abs() {
                    return Err(Error::NoConvergence(format!(
                        "Lanczos did not converge in {max_iter} iterations"
                    )));
                }
                let mut vals = Vec::with_capacity(top.len());
                let mut vecs = Vec::with_capacity(top.len());
                for &i in &top {
                    let mut y = vec![0.0; n];
                    for (r, v) in basis.iter().enumerate() {
                        axpy(eig.eigenvectors[(r, i)], v, &mut y);
                    }
                    deflate(&mut y);
                    let nrm = dot(&y, &y).sqrt();
                    y.iter_mut().for_each(|x| *x /= nrm);
                    vals.push(eig.eigenvalues[i]);
                    vecs.push(y);
                }
                return Ok((vals, vecs, m));
            }
        }
        if exhausted {
            break;
        }
        beta.push(b);
        wv.iter_mut().for_each(|x| *x /= b);
        basis.push(wv);
    }
    Err(Error::NoConvergence(format!(
        "Lanczos did not converge in {max_iter} iterations"
    )))
}

/// One harmonic level e = mu_l + sum (2 gamma_k + 1) lambda_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicLevel {
    pub well: usize,
    pub gamma: Vec<usize>,
    pub ell_index: usize,
    pub energy_over_hbar: f64,
}

/// Harmonic levels of one well in ascending order; at least `count`
/// entries, completed to the end of the last degenerate group.
pub fn harmonic_levels(well: &WellInfo, count: usize) -> Vec<HarmonicLevel> {
    harmonic_levels_for(well, 0, count)
}

pub fn harmonic_levels_for(well: &WellInfo, index: usize, count: usize) -> Vec<HarmonicLevel> {
    let lam = &well.lambda;
    let mu: Vec<f64> = if well.w_eigs.is_empty() {
        vec![0.0]
    } else {
        well.w_eigs.clone()
    };
    let base: f64 = lam.iter().sum();
    let step = lam.iter().copied().fold(f64::INFINITY, f64::min).max(1e-12);
    let mut emax = mu[0] + base + 2.0 * step * count as f64;
    loop {
        let mut out = Vec::new();
        for (l, &m) in mu.iter().enumerate() {
            let mut gamma = vec![0usize; lam.len()];
            walk(lam, m, emax, 0, &mut gamma, &mut |g, e| {
                out.push(HarmonicLevel {
                    well: index,
                    gamma: g.to_vec(),
                    ell_index: l,
                    energy_over_hbar: e,
                })
            });
        }
        if out.len() >= count || emax > 1e12 {
            out.sort_by(|a, b| {
                a.energy_over_hbar
                    .total_cmp(&b.energy_over_hbar)
                    .then(a.ell_index.cmp(&b.ell_index))
                    .then(a.gamma.cmp(&b.gamma))
            });
            if out.len() > count {
                let cut = out[count - 1].energy_over_hbar;
                out.retain(|lv| lv.energy_over_hbar <= cut + 1e-12 * cut.abs().max(1.0));
            }
            return out;
        }
        emax *= 2.0;
    }
}

fn walk(
    lam: &[f64],
    mu: f64,
    emax: f64,
    axis: usize,
    gamma: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize], f64),
) {
    if axis == lam.len() {
        let e = mu + gamma
            .iter()
            .zip(lam)
            .map(|(&g, &l)| (2 * g + 1) as f64 * l)
            .sum::<f64>();
        if e <= emax {
            emit(gamma, e);
        }
        return;
    }
    loop {
        let partial = mu + gamma[..=axis]
            .iter()
            .zip(lam)
            .map(|(&g, &l)| (2 * g + 1) as f64 * l)
            .sum::<f64>()
            + lam[axis + 1..].iter().sum::<f64>();
        if partial > emax {
            gamma[axis] = 0;
            return;
        }
        walk(lam, mu, emax, axis + 1, gamma, emit);
        gamma[axis] += 1;
    }
}

/// Pooled harmonic levels of all wells, ascending; the first `m` entries.
pub fn pooled_levels(wells: &[WellInfo], m: usize) -> Vec<HarmonicLevel> {
    let mut all: Vec<HarmonicLevel> = wells
        .iter()
        .enumerate()
        .flat_map(|(i, w)| harmonic_levels_for(w, i, m))
        .collect();
    all.sort_by(|a, b| {
        a.energy_over_hbar
            .total_cmp(&b.energy_over_hbar)
            .then(a.well.cmp(&b.well))
            .then(a.ell_index.cmp(&b.ell_index))
            .then(a.gamma.cmp(&b.gamma))
    });
    all.truncate(m);
    all
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicRow {
    pub hbar: f64,
    /// 1-based index into the pooled low spectrum.
    pub ell: usize,
    pub energy: f64,
    pub harmonic: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicTable {
    pub rows: Vec<HarmonicRow>,
    /// Fitted exponent of |E_l - hbar e_l| against hbar, per level.
    pub exponents: Vec<f64>,
    /// Outer potential floor used as the essential-spectrum proxy.
    pub wall: f64,
}

/// Compares the `m` lowest eigenvalues with the pooled harmonic levels over a sweep.
pub fn harmonic_check(
    graph: &std::sync::Arc<DomainGraph>,
    v: &NodeField,
    w: &EndoField,
    wells: &[WellInfo],
    hbar_list: &[f64],
    m: usize,
    opts: &SolverOptions,
) -> Result<HarmonicTable> {
    let levels = pooled_levels(wells, m);
    let wall = (0..graph.node_count())
        .filter(|&i| graph.is_boundary(i))
        .map(|i| v.values[i])
        .fold(f64::INFINITY, f64::min);
    let mut rows = Vec::new();
    for &hbar in hbar_list {
        let op = assemble(graph, v, w, hbar)?;
        let (pairs, _) = low_spectrum_with(&op, m, None, opts)?;
        if pairs.len() < m {
            return Err(Error::InsufficientEigenvalues(format!(
                "found {} of {m} eigenvalues at hbar = {hbar}",
                pairs.len()
            )));
        }
        if pairs[m - 1].value >= wall {
            return Err(Error::InsufficientEigenvalues(format!(
                "level {m} at hbar = {hbar} reaches the outer wall {wall}"
            )));
        }
        for (l, (p, lv)) in pairs.iter().zip(&levels).enumerate() {
            let harmonic = hbar * lv.energy_over_hbar;
            rows.push(HarmonicRow {
                hbar,
                ell: l + 1,
                energy: p.value,
                harmonic,
                deviation: (p.value - harmonic).abs(),
            });
        }
    }
    let exponents = (1..=m)
        .map(|l| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.ell == l)
                .map(|r| (r.hbar.ln(), r.deviation.max(1e-300).ln()))
                .collect();
            slope(&pts)
        })
        .collect();
    Ok(HarmonicTable {
        rows,
        exponents,
        wall,
    })
}

/// Least-squares slope of y against x.
pub fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Splits an ascending spectrum into clusters separated by gaps of at least
/// `max(5 * width, 1e-3 * hbar)`. Returns index ranges; the last range is
/// open-ended (no gap above it was certified) and is dropped.
pub fn spectral_clusters(values: &[f64], hbar: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..values.len().saturating_sub(1) {
        let width = values[i] - values[start];
        let gap = values[i + 1] - values[i];
        if gap >= (5.0 * width).max(1e-3 * hbar) {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_domain, Boundary, DomainSpec};
    use crate::potential::field_from_fn;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn line_op(n: usize, a: f64, b: f64, hbar: f64, v: impl Fn(f64) -> f64) -> DiscreteOperator {
        let g = Arc::new(
            build_domain(&DomainSpec::interval(a, b, n, Boundary::DirichletOuter)).unwrap(),
        );
        let vf = field_from_fn(&g, |p| v(p[0]));
        assemble(&g, &vf, &EndoField::zero(g.node_count(), 1), hbar).unwrap()
    }

    #[test]
    fn sine_modes() {
        let op = line_op(401, 0.0, 1.0, 1.0, |_| 0.0);
        let pairs = low_spectrum(&op, 2, None).unwrap();
        assert!((pairs[0].value - PI * PI).abs() < 1e-3 * PI * PI);
        assert!((pairs[1].value - 4.0 * PI * PI).abs() < 1e-3 * 4.0 * PI * PI);
    }

    #[test]
    fn oscillator_levels() {
        let op = line_op(1201, -3.0, 3.0, 0.1, |x| 4.0 * x * x);
        let pairs = low_spectrum(&op, 3, None).unwrap();
        for (p, e) in pairs.iter().zip([0.2, 0.6, 1.0]) {
            assert!((p.value - e).abs() < 5e-3 * e, "{} vs {e}", p.value);
        }
    }

    #[test]
    fn dense_and_lanczos_agree() {
        let op = line_op(801, -2.0, 2.0, 0.2, |x| (x * x - 1.0).powi(2));
        let dense = low_spectrum(&op, 4, None).unwrap();
        let opts = SolverOptions {
            dense_threshold: 0,
            ..Default::default()
        };
        let (lz, info) = low_spectrum_with(&op, 4, None, &opts).unwrap();
        assert_eq!(info.method, "shift-invert-lanczos");
        for (a, b) in dense.iter().zip(&lz) {
            assert!((a.value - b.value).abs() <= 1e-9 * a.value.abs());
        }
    }

    #[test]
    fn general_dense_matches_lanczos_in_2d() {
        let g = Arc::new(build_domain(&DomainSpec::rectangle([-1.5, 1.5], [-1.0, 1.0], 30, 20)).unwrap());
        let v = crate::potential::field_from_fn(&g, |p| (p[0] * p[0] - 1.0).powi(2) + p[1] * p[1]);
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), 0.3).unwrap();
        let (lz, info) = low_spectrum_with(&op, 3, None, &SolverOptions::default()).unwrap();
        assert_eq!(info.method, "shift-invert-lanczos");
        let opts = SolverOptions {
            dense_general_threshold: usize::MAX,
            ..Default::default()
        };
        let (dense, info) = low_spectrum_with(&op, 3, None, &opts).unwrap();
        assert_eq!(info.method, "dense-householder");
        for (a, b) in dense.iter().zip(&lz) {
            assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs());
        }
    }

    #[test]
    fn lanczos_finds_multiplicities() {
        let g = Arc::new(build_domain(&DomainSpec::torus([0.0, 1.0], [0.0, 1.0], 24, 24)).unwrap());
        let v = NodeField::zeros(g.node_count(), 1);
        let op = assemble(&g, &v, &EndoField::zero(g.node_count(), 1), 1.0).unwrap();
        let opts = SolverOptions {
            dense_threshold: 0,
            ..Default::default()
        };
        let (pairs, _) = low_spectrum_with(&op, 5, None, &opts).unwrap();
        assert!(pairs[0].value.abs() < 1e-9);
        let first = pairs[1].value;
        for p in &pairs[1..5] {
            assert!((p.value - first).abs() < 1e-9 * first);
        }
    }

    #[test]
    fn harmonic_levels_examples() {
        let mk = |lambda: Vec<f64>, w: Vec<f64>| WellInfo {
            node: 0,
            coords: [0.0; 2],
            value: 0.0,
            hessian: vec![],
            hessian_eigs: vec![],
            lambda,
            w_eigs: w,
        };
        let e = |w: &WellInfo, c| -> Vec<f64> {
            harmonic_levels(w, c).iter().map(|l| l.energy_over_hbar).collect()
        };
        assert_eq!(e(&mk(vec![1.0], vec![0.0]), 3), vec![1.0, 3.0, 5.0]);
        assert_eq!(e(&mk(vec![2.0], vec![0.0]), 3), vec![2.0, 6.0, 10.0]);
        let got = e(&mk(vec![1.0, 1.0], vec![-0.3, 0.3]), 6);
        let want = [1.7, 2.3, 3.7, 3.7, 4.3, 4.3];
        assert_eq!(got.len(), 6);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn clusters_by_gap_rule() {
        let c = spectral_clusters(&[1.0, 1.0 + 1e-9, 3.0, 3.0 + 1e-9, 5.0], 1.0);
        assert_eq!(c, vec![0..2, 2..4]);
    }
}
