//! Sparse symmetric matrices, reverse Cuthill-McKee ordering and an envelope
//! (skyline) LDL^T factorization used by the shift-invert eigensolver.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Symmetric operators store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed in the
    /// order given.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("nonempty") += v;
                continue;
            }
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Entrywise bit-level transpose equality.
    pub fn is_symmetric_exact(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, v)| self.get(j, i).to_bits() == v.to_bits())
        })
    }

    /// max |A - A^T| entrywise.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Gershgorin bound on the spectral radius.
    pub fn gershgorin_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Gershgorin lower bound on the spectrum.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let mut d = 0.0;
                let mut off = 0.0;
                for (j, v) in self.row(i) {
                    if j == i {
                        d = v;
                    } else {
                        off += v.abs();
                    }
                }
                d - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on `keep` (in that order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &old in keep {
            let mut row: Vec<(usize, f64)> = self
                .row(old)
                .filter(|&(j, _)| map[j] != usize::MAX)
                .map(|(j, v)| (map[j], v))
                .collect();
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Half-bandwidth (max |i - j| over stored entries).
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Matrix Market coordinate text (1-based indices, full precision).
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
            }
        }
        s
    }

    /// Parses Matrix Market coordinate text produced by [`to_coo_text`](Self::to_coo_text).
    pub fn from_coo_text(text: &str) -> Result<CsrMatrix> {
        let bad = |line: usize, m: &str| Error::Config {
            line,
            message: m.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('%') && !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or_else(|| bad(1, "missing size line"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(ln + 1, "bad size line")))
            .collect::<Result<_>>()?;
        if dims.len() != 3 || dims[0] != dims[1] {
            return Err(bad(ln + 1, "expected `n n nnz`"));
        }
        let mut trip = Vec::with_capacity(dims[2]);
        for (ln, l) in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad(ln + 1, "expected `i j value`"));
            }
            let i: usize = t[0].parse().map_err(|_| bad(ln + 1, "bad row"))?;
            let j: usize = t[1].parse().map_err(|_| bad(ln + 1, "bad column"))?;
            let v: f64 = t[2].parse().map_err(|_| bad(ln + 1, "bad value"))?;
            if i == 0 || j == 0 || i > dims[0] || j > dims[0] {
                return Err(bad(ln + 1, "index out of range"));
            }
            trip.push((i - 1, j - 1, v));
        }
        Ok(CsrMatrix::from_triplets(dims[0], trip))
    }
}

/// Reverse Cuthill-McKee ordering; `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited node");
        let start = pseudo_peripheral(a, start, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut nb: Vec<usize> = a
                .row(i)
                .map(|(j, _)| j)
                .filter(|&j| !visited[j])
                .collect();
            nb.sort_by_key(|&j| (degree[j], j));
            for j in nb {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let mut node = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(a, node);
        let max_level = levels.iter().filter_map(|&l| l).max().unwrap_or(0);
        if max_level <= ecc {
            break;
        }
        ecc = max_level;
        node = (0..a.dim())
            .filter(|&i| levels[i] == Some(max_level))
            .min_by_key(|&i| (degree[i], i))
            .expect("last level nonempty");
    }
    node
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; a.dim()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let li = level[i].expect("queued");
        for (j, _) in a.row(i) {
            if level[j].is_none() {
                level[j] = Some(li + 1);
                queue.push_back(j);
            }
        }
    }
    level
}

/// Envelope LDL^T factorization of `P (A - sigma I) P^T` without pivoting.
#[derive(Clone, Debug)]
pub struct SkylineLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    /// Row-wise L entries for columns first[i]..i, then D_i at position i.
    data: Vec<f64>,
    negative_pivots: usize,
}

impl SkylineLdl {
    pub fn factor(a: &CsrMatrix, sigma: f64, perm: &[usize]) -> Result<SkylineLdl> {
        let n = a.dim();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0usize; n];
        for i in 0..n {
            first[i] = a.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i);
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let jj = inv[j];
                if jj <= i {
                    data[start[i] + jj - first[i]] += v;
                }
            }
            data[start[i] + i - first[i]] -= sigma;
        }
        let scale = a.max_abs().max(sigma.abs()).max(f64::MIN_POSITIVE);
        let mut negative = 0;
        let mut g = Vec::new();
        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            g.clear();
            g.extend_from_slice(&data[si..si + (i - fi)]);
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let rj = &data[start[j] + lo - fj..start[j] + j - fj];
                let gi = &g[lo - fi..j - fi];
                let s: f64 = rj.iter().zip(gi).map(|(x, y)| x * y).sum();
                g[j - fi] -= s;
            }
            let mut d = data[si + i - fi];
            for j in fi..i {
                let dj = data[start[j] + j - first[j]];
                let l = g[j - fi] / dj;
                d -= l * g[j - fi];
                data[si + j - fi] = l;
            }
            if !(d.abs() > 1e-13 * scale) || !d.is_finite() {
                return Err(Error::Factorization(format!(
                    "pivot {d:e} at row {i} (shift {sigma})"
                )));
            }
            if d < 0.0 {
                negative += 1;
            }
            data[si + i - fi] = d;
        }
        Ok(SkylineLdl {
            perm: perm.to_vec(),
            first,
            start,
            data,
            negative_pivots: negative,
        })
    }

    /// Number of eigenvalues of A below the shift (Sylvester inertia).
    pub fn negative_pivots(&self) -> usize {
        self.negative_pivots
    }

    pub fn storage(&self) -> usize {
        self.data.len()
    }

    /// Solves (A - sigma I) x = b.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.perm.len();
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i] + i - fi];
            let s: f64 = row.iter().zip(&z[fi..i]).map(|(l, v)| l * v).sum();
            z[i] -= s;
        }
        for i in 0..n {
            z[i] /= self.data[self.start[i] + i - self.first[i]];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let zi = z[i];
            let row = &self.data[self.start[i]..self.start[i] + i - fi];
            for (l, v) in row.iter().zip(&mut z[fi..i]) {
                *v -= l * zi;
            }
        }
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_2d(nx: usize, ny: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let a = j * nx + i;
                t.push((a, a, 4.0 + 0.01 * a as f64));
                if i + 1 < nx {
                    t.push((a, a + 1, -1.0));
                    t.push((a + 1, a, -1.0));
                }
                if j + 1 < ny {
                    t.push((a, a + nx, -1.0));
                    t.push((a + nx, a, -1.0));
                }
            }
        }
        CsrMatrix::from_triplets(nx * ny, t)
    }

    #[test]
    fn rcm_reduces_bandwidth() {
        let a = laplacian_2d(30, 7);
        let perm = rcm_ordering(&a);
        let mut sorted = perm.clone();
        sorted.sort();
        assert_eq!(sorted, (0..a.dim()).collect::<Vec<_>>());
        let b = a.principal_submatrix(&perm);
        assert!(b.bandwidth() <= 8, "bandwidth {}", b.bandwidth());
    }

    #[test]
    fn ldl_solves_and_counts_inertia() {
        let a = laplacian_2d(9, 11);
        let perm = rcm_ordering(&a);
        let dense = a.to_dense();
        let eig = dense.clone().symmetric_eigenvalues();
        let sigma = 3.0;
        let f = SkylineLdl::factor(&a, sigma, &perm).unwrap();
        assert_eq!(f.negative_pivots(), eig.iter().filter(|&&e| e < sigma).count());
        let b: Vec<f64> = (0..a.dim()).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; a.dim()];
        f.solve(&b, &mut x);
        let mut r = a.mul(&x);
        for i in 0..a.dim() {
            r[i] -= sigma * x[i] + b[i];
        }
        assert!(r.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn coo_round_trip() {
        let a = laplacian_2d(4, 3);
        let b = CsrMatrix::from_coo_text(&a.to_coo_text()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn submatrix_is_principal(keep in proptest::sample::subsequence((0..20usize).collect::<Vec<_>>(), 1..20)) {
            let a = laplacian_2d(5, 4);
            let s = a.principal_submatrix(&keep);
            for (p, &i) in keep.iter().enumerate() {
                for (q, &j) in keep.iter().enumerate() {
                    prop_assert_eq!(s.get(p, q).to_bits(), a.get(i, j).to_bits());
                }
            }
        }
    }
}
