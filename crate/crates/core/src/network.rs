//! Weighted directed networks, walks between units and descriptive statistics.
//!
//! Entry `a_ij` is the strength of the link from `i` to `j`; it carries
//! transmission from unit `j` to unit `i`. The `k`-th matrix power collects
//! the walks of length `k`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};

/// Dense size above which the spectral radius uses power iteration first.
pub const DENSE_EIGEN_LIMIT: usize = 64;

/// Default `ε` in [`Network::rescale_identified`].
pub const RESCALE_EPS: f64 = 1e-6;

/// Nonnegative adjacency matrix with memoised powers.
pub struct Network {
    adjacency: DMatrix<f64>,
    labels: Vec<String>,
    power_cache: RwLock<BTreeMap<usize, Arc<DMatrix<f64>>>>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        let cache = self.power_cache.read().expect("power cache poisoned").clone();
        Network {
            adjacency: self.adjacency.clone(),
            labels: self.labels.clone(),
            power_cache: RwLock::new(cache),
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("labels", &self.labels)
            .field("adjacency", &self.adjacency)
            .finish()
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency && self.labels == other.labels
    }
}

impl Network {
    /// Builds a network, checking that entries are finite and nonnegative and
    /// that labels are unique.
    pub fn new(adjacency: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(NetvarError::Validation(format!(
                "adjacency must be square, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if labels.len() != adjacency.nrows() {
            return Err(NetvarError::Validation(format!(
                "{} labels for a {}-unit network",
                labels.len(),
                adjacency.nrows()
            )));
        }
        crate::panel::check_unique(&labels)?;
        for ((i, j), v) in adjacency_entries(&adjacency) {
            if !v.is_finite() || v < 0.0 {
                return Err(NetvarError::Validation(format!(
                    "adjacency entry ({i},{j}) = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(Network { adjacency, labels, power_cache: RwLock::new(BTreeMap::new()) })
    }

    /// Builds a network with labels `u1..un`.
    pub fn from_matrix(adjacency: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=adjacency.nrows()).map(|i| format!("u{i}")).collect();
        Network::new(adjacency, labels)
    }

    /// Row-major constructor, mostly for tests and examples.
    pub fn from_rows(n: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * n {
            return Err(NetvarError::Validation(format!(
                "expected {} entries, got {}",
                n * n,
                rows.len()
            )));
        }
        Network::from_matrix(DMatrix::from_row_slice(n, n, rows))
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Returns a copy with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Network> {
        Network::new(&self.adjacency * c, self.labels.clone())
    }

    /// `A^k`; `k = 0` gives the identity. Results are cached.
    pub fn power(&self, k: usize) -> Arc<DMatrix<f64>> {
        if k == 0 {
            return Arc::new(DMatrix::identity(self.n(), self.n()));
        }
        if k == 1 {
            return Arc::new(self.adjacency.clone());
        }
        if let Some(m) = self.power_cache.read().expect("power cache poisoned").get(&k) {
            return Arc::clone(m);
        }
        // Walk down to the largest cached power and multiply up from there.
        let (start, mut acc) = {
            let cache = self.power_cache.read().expect("power cache poisoned");
            match cache.range(..k).next_back() {
                Some((&j, m)) => (j, (**m).clone()),
                None => (1, self.adjacency.clone()),
            }
        };
        let mut fresh = Vec::with_capacity(k - start);
        for j in (start + 1)..=k {
            acc = &acc * &self.adjacency;
            fresh.push((j, Arc::new(acc.clone())));
        }
        let mut cache = self.power_cache.write().expect("power cache poisoned");
        for (j, m) in fresh {
            cache.entry(j).or_insert(m);
        }
        Arc::clone(cache.get(&k).expect("just inserted"))
    }

    /// Sum of walks of length `k` between every pair of units, `(A^k)_ij`.
    pub fn connection_order(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(NetvarError::Validation("connection order k must be >= 1".into()));
        }
        let m = self.power(k);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(NetvarError::Numeric(format!("A^{k} overflowed")));
        }
        Ok((*m).clone())
    }

    /// Number of powers currently memoised (besides `A` itself).
    pub fn cached_powers(&self) -> Vec<usize> {
        self.power_cache.read().expect("power cache poisoned").keys().cloned().collect()
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> Result<f64> {
        let n = self.n();
        if n == 0 || self.adjacency.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        if n <= DENSE_EIGEN_LIMIT {
            return Ok(dense_spectral_radius(&self.adjacency));
        }
        match perron_power_iteration(&self.adjacency, 20_000, 1e-11) {
            Some(r) => Ok(r),
            None => {
                let r = dense_spectral_radius(&self.adjacency);
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(NetvarError::Numeric("spectral radius did not converge".into()))
                }
            }
        }
    }

    /// Descriptive statistics on the graph with links below `threshold` removed.
    pub fn compute_stats(&self, threshold: f64) -> NetworkStats {
        let n = self.n();
        let a = &self.adjacency;
        let keep = |i: usize, j: usize| a[(i, j)] > 0.0 && a[(i, j)] >= threshold;
        let weighted_in_degrees = (0..n).map(|i| a.row(i).sum()).collect();
        let weighted_out_degrees = (0..n).map(|j| a.column(j).sum()).collect();
        let out_degrees = (0..n).map(|j| (0..n).filter(|&i| keep(i, j)).count()).collect();
        let in_degrees = (0..n).map(|i| (0..n).filter(|&j| keep(i, j)).count()).collect();

        let mut distances = vec![vec![None; n]; n];
        for (src, row) in distances.iter_mut().enumerate() {
            row[src] = Some(0);
            let mut queue = VecDeque::from([(src, 0usize)]);
            let mut seen = vec![false; n];
            seen[src] = true;
            while let Some((u, d)) = queue.pop_front() {
                for v in 0..n {
                    if keep(u, v) && !seen[v] {
                        seen[v] = true;
                        row[v] = Some(d + 1);
                        queue.push_back((v, d + 1));
                    }
                }
            }
        }
        let diameter = distances
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i))
            .filter_map(|(_, d)| *d)
            .max();
        let links = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| keep(i, j)).count();
        let density = if n == 0 { 0.0 } else { links as f64 / (n * n) as f64 };
        NetworkStats {
            labels: self.labels.clone(),
            weighted_in_degrees,
            weighted_out_degrees,
            out_degrees,
            in_degrees,
            distances,
            diameter,
            density,
            threshold,
        }
    }

    /// Rescales `(alpha, A)` so that every link lies in `[0, 1)` while the lag
    /// matrices `sum_g alpha_lg A^g` stay the same. Uses `c = max a_ij + eps`.
    pub fn rescale_identified(&self, alpha: &DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, Network)> {
        let max = self.adjacency.max();
        if max <= 0.0 {
            return Err(NetvarError::Identification(
                "cannot rescale an all-zero network".into(),
            ));
        }
        self.rescale_with(alpha, max + eps)
    }

    /// Rescales with an explicit constant: `A / c` and `alpha_lg * c^g`.
    pub fn rescale_with(&self, alpha: &DMatrix<f64>, c: f64) -> Result<(DMatrix<f64>, Network)> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(NetvarError::Validation(format!("rescale constant {c} must be positive")));
        }
        if c == 1.0 {
            return Ok((alpha.clone(), self.clone()));
        }
        let mut out = alpha.clone();
        for g in 0..alpha.ncols() {
            let f = c.powi(g as i32 + 1);
            out.column_mut(g).iter_mut().for_each(|v| *v *= f);
        }
        Ok((out, self.scaled(1.0 / c)?))
    }
}

fn adjacency_entries(a: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    (0..a.nrows()).flat_map(move |i| (0..a.ncols()).map(move |j| ((i, j), a[(i, j)])))
}

/// Max eigenvalue modulus of a general square matrix.
pub fn dense_spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if let Some(r) = schur_radius(m) {
        return r;
    }
    // Highly structured inputs (nilpotent blocks, exact zeros) can stall the
    // shifted QR sweep; a fixed orthogonal similarity usually breaks the tie.
    let g = DMatrix::from_fn(n, n, |i, j| ((i * 7919 + j * 104_729 + 13) as f64).sin());
    let q = g.qr().q();
    if let Some(r) = schur_radius(&(q.transpose() * m * &q)) {
        return r;
    }
    gelfand_radius(m)
}

fn schur_radius(m: &DMatrix<f64>) -> Option<f64> {
    let max_niter = 200 * m.nrows().max(10);
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, max_niter)?;
    Some(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `lim ||M^k||^{1/k}` along `k = 2^j`, with rescaling to stay finite.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let mut x = m.clone();
    let mut log_scale = 0.0;
    let mut estimate = f64::INFINITY;
    for j in 0..60 {
        let norm = x.norm();
        if norm == 0.0 {
            return 0.0;
        }
        x /= norm;
        log_scale += norm.ln() / 2f64.powi(j);
        estimate = log_scale.exp();
        x = &x * &x;
    }
    estimate
}

/// Power iteration on `A + I` for a nonnegative `A`, stopped by the
/// Collatz–Wielandt bracket. Returns `None` if the bracket does not close.
fn perron_power_iteration(a: &DMatrix<f64>, max_iter: usize, rel_tol: f64) -> Option<f64> {
    let n = a.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let y = a * &x + &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi - lo <= rel_tol * hi {
            return Some(0.5 * (hi + lo) - 1.0);
        }
        let s = y.sum();
        if !(s.is_finite() && s > 0.0) {
            return None;
        }
        x = y / s;
    }
    None
}

/// Degree, distance and density summaries of a thresholded network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub labels: Vec<String>,
    /// Row sums `sum_j a_ij`.
    pub weighted_in_degrees: Vec<f64>,
    /// Column sums `sum_i a_ij`.
    pub weighted_out_degrees: Vec<f64>,
    /// Nonzero entries per column.
    pub out_degrees: Vec<usize>,
    /// Nonzero entries per row.
    pub in_degrees: Vec<usize>,
    /// `distances[i][j] = min { k : (A^k)_ij > 0 }`, `None` when unreachable.
    pub distances: Vec<Vec<Option<usize>>>,
    pub diameter: Option<usize>,
    /// Share of the `n^2` possible links that survive the threshold.
    pub density: f64,
    pub threshold: f64,
}
