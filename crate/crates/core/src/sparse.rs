//! Symmetric envelope (skyline) storage and Cholesky factorization.
//!
//! Stiffness matrices of shell meshes have a narrow profile once the unknowns
//! are ordered by reverse Cuthill-McKee, so a variable-band LLᵀ is both
//! simple and fast at the sizes used here. Only the lower envelope is stored:
//! row `i` holds columns `first[i]..=i` contiguously.

use std::collections::VecDeque;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct SkylinePattern {
    n: usize,
    /// `position[i]` is the row of unknown `i` in the permuted system.
    position: Vec<usize>,
    /// Inverse of `position`.
    unknown: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
}

impl SkylinePattern {
    /// Builds the envelope for a matrix whose nonzeros are the union of the
    /// given cliques (each element couples all of its unknowns).
    pub fn from_cliques(n: usize, cliques: &[Vec<usize>]) -> Self {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for clique in cliques {
            for &a in clique {
                for &b in clique {
                    if a != b {
                        adjacency[a].push(b);
                    }
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let unknown = reverse_cuthill_mckee(&adjacency);
        let mut position = vec![0; n];
        for (row, &u) in unknown.iter().enumerate() {
            position[u] = row;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (a, list) in adjacency.iter().enumerate() {
            let pa = position[a];
            for &b in list {
                let pb = position[b];
                if pb < pa {
                    first[pa] = first[pa].min(pb);
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (row, &f) in first.iter().enumerate() {
            start.push(acc);
            acc += row - f + 1;
        }
        start.push(acc);
        Self { n, position, unknown, first, start }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in the lower envelope.
    pub fn envelope_size(&self) -> usize {
        self.start[self.n]
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        debug_assert!(col <= row);
        if col < self.first[row] {
            None
        } else {
            Some(self.start[row] + col - self.first[row])
        }
    }
}

/// Symmetric matrix in envelope storage, indexed by unpermuted unknowns.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    pattern: Arc<SkylinePattern>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    pub fn zeros(pattern: Arc<SkylinePattern>) -> Self {
        let len = pattern.envelope_size();
        Self { pattern, values: vec![0.0; len] }
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SkylinePattern> {
        &self.pattern
    }

    /// Adds `value` to entry `(i, j)` and, implicitly, `(j, i)`.
    ///
    /// Panics if the entry lies outside the envelope.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (pi, pj) = (self.pattern.position[i], self.pattern.position[j]);
        let (row, col) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        let slot = self.pattern.slot(row, col).expect("entry outside the skyline envelope");
        self.values[slot] += value;
    }

    /// Scatters `scale * block` into the matrix. `dofs[k]` is the unknown of
    /// local index `k`, or `None` for eliminated degrees of freedom.
    pub fn add_block<const K: usize>(
        &mut self,
        dofs: &[Option<usize>; K],
        block: &nalgebra::SMatrix<f64, K, K>,
        scale: f64,
    ) {
        for a in 0..K {
            let Some(ia) = dofs[a] else { continue };
            let pa = self.pattern.position[ia];
            for b in 0..K {
                let Some(ib) = dofs[b] else { continue };
                let pb = self.pattern.position[ib];
                if pb <= pa {
                    let slot = self.pattern.slot(pa, pb).expect("entry outside the skyline envelope");
                    self.values[slot] += scale * block[(a, b)];
                }
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (pi, pj) = (self.pattern.position[i], self.pattern.position[j]);
        let (row, col) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        self.pattern.slot(row, col).map_or(0.0, |s| self.values[s])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for row in 0..p.n {
            let i = p.unknown[row];
            let f = p.first[row];
            let vals = &self.values[p.start[row]..p.start[row + 1]];
            for (k, &a) in vals.iter().enumerate() {
                let col = f + k;
                let j = p.unknown[col];
                y[i] += a * x[j];
                if col != row {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// `aᵀ A b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mul_vec(b).iter().zip(a).map(|(x, y)| x * y).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// Elementwise `self + scale * other` on the same pattern.
    pub fn axpy(&mut self, scale: f64, other: &SkylineMatrix) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern), "patterns differ");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// LLᵀ factorization. On failure returns the unknown whose pivot was not
    /// positive (relative to its diagonal entry).
    pub fn cholesky(&self) -> Result<SkylineCholesky, usize> {
        let p = &self.pattern;
        let mut l = self.values.clone();
        for row in 0..p.n {
            let fr = p.first[row];
            let sr = p.start[row];
            for col in fr..row {
                let fc = p.first[col];
                let sc = p.start[col];
                let k0 = fr.max(fc);
                let mut s = l[sr + col - fr];
                let ri = &l[sr + k0 - fr..sr + col - fr];
                let ci = &l[sc + k0 - fc..sc + col - fc];
                s -= ri.iter().zip(ci).map(|(a, b)| a * b).sum::<f64>();
                l[sr + col - fr] = s / l[sc + col - fc];
            }
            let diag_slot = sr + row - fr;
            let original = l[diag_slot];
            let d = original - l[sr..diag_slot].iter().map(|a| a * a).sum::<f64>();
            if !(d > PIVOT_TOLERANCE * original.abs()) || !d.is_finite() {
                return Err(p.unknown[row]);
            }
            l[diag_slot] = d.sqrt();
        }
        Ok(SkylineCholesky { pattern: Arc::clone(&self.pattern), values: l })
    }
}

/// Pivots below this fraction of their original diagonal entry are treated
/// as a loss of positive definiteness.
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    pattern: Arc<SkylinePattern>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        assert_eq!(b.len(), p.n);
        let mut z: Vec<f64> = p.unknown.iter().map(|&u| b[u]).collect();
        for row in 0..p.n {
            let f = p.first[row];
            let vals = &self.values[p.start[row]..p.start[row + 1]];
            let (off, diag) = vals.split_at(vals.len() - 1);
            let s: f64 = off.iter().zip(&z[f..row]).map(|(a, b)| a * b).sum();
            z[row] = (z[row] - s) / diag[0];
        }
        for row in (0..p.n).rev() {
            let f = p.first[row];
            let vals = &self.values[p.start[row]..p.start[row + 1]];
            let (off, diag) = vals.split_at(vals.len() - 1);
            z[row] /= diag[0];
            let xr = z[row];
            for (k, a) in off.iter().enumerate() {
                z[f + k] -= a * xr;
            }
        }
        let mut x = vec![0.0; p.n];
        for (row, &u) in p.unknown.iter().enumerate() {
            x[u] = z[row];
        }
        x
    }
}

fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &root in &by_degree {
        if visited[root] {
            continue;
        }
        let start = pseudo_peripheral(adjacency, root);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Repeated BFS from the last level until eccentricity stops growing.
fn pseudo_peripheral(adjacency: &[Vec<usize>], root: usize) -> usize {
    let mut current = root;
    let mut depth = 0;
    for _ in 0..8 {
        let (far, d) = farthest(adjacency, current);
        if d <= depth {
            break;
        }
        depth = d;
        current = far;
    }
    current
}

fn farthest(adjacency: &[Vec<usize>], root: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut best = (root, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > best.1 || (d == best.1 && adjacency[v].len() < adjacency[best.0].len()) {
            best = (v, d);
        }
        for &w in &adjacency[v] {
            if dist[w] == usize::MAX {
                dist[w] = d + 1;
                queue.push_back(w);
            }
        }
    }
    best
}
