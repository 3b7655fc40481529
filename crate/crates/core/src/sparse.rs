//! Compressed-row matrices, an envelope Cholesky factorization under
//! reverse Cuthill–McKee ordering, and Jacobi-preconditioned CG.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, row_ptr: vec![0; n_rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { n_rows: n, n_cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Duplicates are summed in the order they appear, so the result only
    /// depends on the order of `triplets`.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for i in order {
            let (r, c, v) = triplets[i];
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `Σ_k α_k A_k` over matrices with equal shape.
    pub fn lin_comb(terms: &[(f64, &CsrMatrix)]) -> Self {
        let (n_rows, n_cols) =
            terms.first().map(|(_, m)| (m.n_rows, m.n_cols)).expect("lin_comb needs at least one term");
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            acc.clear();
            for (alpha, m) in terms {
                assert_eq!((m.n_rows, m.n_cols), (n_rows, n_cols), "shape mismatch in lin_comb");
                acc.extend(m.row(r).map(|(c, v)| (c, alpha * v)));
            }
            acc.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < acc.len() {
                let c = acc[k].0;
                let mut s = 0.0;
                while k < acc.len() && acc[k].0 == c {
                    s += acc[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(s);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }

    /// `max |a_ij - a_ji| / max |a_ij|`.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
                scale = scale.max(v.abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    fn symmetric_pattern(&self) -> Vec<Vec<usize>> {
        (0..self.n_rows).map(|r| self.row(r).map(|(c, _)| c).filter(|&c| c != r).collect()).collect()
    }
}

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix.
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let adj = a.symmetric_pattern();
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|v| v.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| -> (usize, usize) {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let mut level_of_last = 0;
        let mut levels = vec![0usize; n];
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            out.push(u);
            last = u;
            level_of_last = levels[u];
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                levels[w] = levels[u] + 1;
                queue.push_back(w);
            }
        }
        (last, level_of_last)
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: repeat BFS from the last node reached while eccentricity grows
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..8 {
            let mut scratch = visited.clone();
            let mut tmp = Vec::new();
            let (far, e) = bfs(start, &mut scratch, &mut tmp);
            if e <= ecc && start != seed {
                break;
            }
            ecc = e;
            start = far;
        }
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor `P A Pᵀ = L Lᵀ`, stored by rows.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::SolveFailure("Cholesky needs a square matrix".into()));
        }
        let n = a.n_rows;
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv_perm[old];
            for (c, _) in a.row(old) {
                let j = inv_perm[c];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut row_start = vec![0; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; row_start[n]];
        for old in 0..n {
            let i = inv_perm[old];
            for (c, v) in a.row(old) {
                let j = inv_perm[c];
                if j <= i {
                    data[row_start[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let (fi, si) = (first[i], row_start[i]);
            for j in fi..i {
                let (fj, sj) = (first[j], row_start[j]);
                let k0 = fi.max(fj);
                let mut s = data[si + j - fi];
                for k in k0..j {
                    s -= data[si + k - fi] * data[sj + k - fj];
                }
                data[si + j - fi] = s / data[sj + j - fj];
            }
            let mut d = data[si + i - fi];
            for k in fi..i {
                d -= data[si + k - fi] * data[si + k - fi];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SolveFailure(format!("matrix is not positive definite (pivot {d:e} at row {i})")));
            }
            data[si + i - fi] = d.sqrt();
        }
        Ok(Self { perm, inv_perm, first, row_start, data })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let (fi, si) = (self.first[i], self.row_start[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[si + k - fi] * y[k];
            }
            y[i] = s / self.data[si + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, si) = (self.first[i], self.row_start[i]);
            y[i] /= self.data[si + i - fi];
            let xi = y[i];
            for k in fi..i {
                y[k] -= self.data[si + k - fi] * xi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = a.n_rows;
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgReport { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolveFailure(format!("CG breakdown (pᵀAp = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok((x, CgReport { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: dot(&r, &r).sqrt() / bnorm })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolverKind {
    /// Direct below [`DIRECT_LIMIT`] unknowns, iterative above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

pub const DIRECT_LIMIT: usize = 20_000;
pub const CG_TOL: f64 = 1e-13;

/// SPD solver bound to one matrix.
#[derive(Clone, Debug)]
pub enum SpdSolver {
    Direct(SkylineCholesky),
    Iterative(CsrMatrix),
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix, kind: SolverKind) -> Result<Self> {
        let direct = match kind {
            SolverKind::Auto => a.n_rows <= DIRECT_LIMIT,
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
        };
        if direct {
            Ok(Self::Direct(SkylineCholesky::factor(a)?))
        } else {
            Ok(Self::Iterative(a.clone()))
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Direct(f) => Ok(f.solve(b)),
            Self::Iterative(a) => {
                let max_iter = 20 * a.n_rows.max(50);
                pcg(a, b, CG_TOL, max_iter).map(|(x, _)| x)
            }
        }
    }
}
