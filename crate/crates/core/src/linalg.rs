//! Sparse symmetric storage and an envelope (profile) Cholesky factorization
//! with reverse Cuthill–McKee ordering.

use std::collections::VecDeque;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Symmetric matrix in CSR form storing both triangles; every row contains its
/// diagonal and columns are sorted.
#[derive(Debug, Clone)]
pub struct SymCsr<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> SymCsr<T> {
    /// Zero matrix with the sparsity pattern given by `adjacency` (off-diagonal
    /// neighbours of each row; symmetry is the caller's responsibility).
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (i, nb) in adjacency.iter().enumerate() {
            let mut row: Vec<usize> = nb.iter().copied().filter(|&j| j != i).collect();
            row.push(i);
            row.sort_unstable();
            row.dedup();
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        SymCsr { n, row_ptr, cols, vals: vec![T::zero(); nnz] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = T::zero());
    }

    fn position(&self, i: usize, j: usize) -> usize {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        self.row_ptr[i] + row.binary_search(&j).expect("entry outside sparsity pattern")
    }

    /// Adds `v` to entry `(i, j)` only; callers add the mirrored entry.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self.position(i, j);
        self.vals[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => T::zero(),
        }
    }

    pub fn diag(&self, i: usize) -> T {
        self.vals[self.position(i, i)]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).fold(T::zero(), |acc, (j, v)| acc + v * x[j])).collect()
    }

    /// Reverse Cuthill–McKee permutation: `perm[new] = old`.
    pub fn rcm_ordering(&self) -> Vec<usize> {
        let n = self.n;
        let degree: Vec<usize> = (0..n).map(|i| self.row_ptr[i + 1] - self.row_ptr[i] - 1).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut seeds: Vec<usize> = (0..n).collect();
        seeds.sort_by_key(|&i| (degree[i], i));
        for &seed in &seeds {
            if visited[seed] {
                continue;
            }
            let start = self.pseudo_peripheral(seed, &degree);
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                order.push(i);
                let mut next: Vec<usize> = self.row(i).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
                next.sort_by_key(|&j| (degree[j], j));
                for j in next {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        order.reverse();
        order
    }

    fn pseudo_peripheral(&self, seed: usize, degree: &[usize]) -> usize {
        let mut current = seed;
        let mut ecc = 0;
        for _ in 0..8 {
            let levels = self.bfs_levels(current);
            let max_level = levels.iter().filter(|l| **l != usize::MAX).copied().max().unwrap_or(0);
            if max_level <= ecc && ecc > 0 {
                break;
            }
            ecc = max_level;
            current =
                (0..self.n).filter(|&i| levels[i] == max_level).min_by_key(|&i| (degree[i], i)).unwrap_or(current);
        }
        current
    }

    fn bfs_levels(&self, start: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.n];
        level[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for (j, _) in self.row(i) {
                if level[j] == usize::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        level
    }
}

/// Cholesky factor stored row by row over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky<T> {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> EnvelopeCholesky<T> {
    /// Factors `a` after symmetric permutation by `perm` (`perm[new] = old`).
    pub fn factor(a: &SymCsr<T>, perm: &[usize]) -> Result<Self, LinalgError> {
        let n = a.dim();
        if perm.len() != n {
            return Err(LinalgError::Dimension { expected: n, got: perm.len() });
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            first[new] = a.row(old).map(|(j, _)| inv[j]).filter(|&j| j <= new).min().unwrap_or(new);
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![T::zero(); start[n]];
        for (new, &old) in perm.iter().enumerate() {
            for (j, v) in a.row(old) {
                let jn = inv[j];
                if jn <= new {
                    data[start[new] + jn - first[new]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (before, row_i) = data.split_at_mut(start[i]);
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &before[start[j]..start[j + 1]];
                let mut s = row_i[j - fi];
                let li = &row_i[k0 - fi..j - fi];
                let lj = &row_j[k0 - fj..j - fj];
                s -= dot(li, lj);
                row_i[j - fi] = s / row_j[j - fj];
            }
            let off = &row_i[..i - fi];
            let d = row_i[i - fi] - dot(off, off);
            let scale = row_i[i - fi].abs().max(T::min_positive_value());
            if !(d > T::epsilon() * T::lit(1e-6) * scale) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: perm[i], pivot: d.as_f64() });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { perm: perm.to_vec(), first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let s = y[i] - dot(&row[..i - fi], &y[fi..i]);
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, &l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}
