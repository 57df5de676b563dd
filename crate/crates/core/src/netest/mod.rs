//! Estimating `(alpha, A, Sigma)` when the network is unknown.
//!
//! The penalised least-squares fit alternates exact coordinate updates for
//! the links of `A` with a ridge step for the lag weights `alpha`, keeping
//! `||alpha||_1 = 1`. Penalties use the scaled parameterisation
//! `lambda = (nT/2) lambda~` and `varphi = nT varphi~`, so that the internal
//! criterion is `SSR/2 + lambda sum a_ij + varphi/2 ||alpha||^2`.

mod gibbs;

pub use gibbs::{gibbs_nvar_p1, sample_inverse_wishart, sample_positive_normal, GibbsConfig, GibbsDraws};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::network::Network;
use crate::panel::Panel;

/// Penalty settings in the scaled parameterisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Lasso weight on the links, `lambda = (nT/2) lambda~`.
    pub lambda: f64,
    /// Ridge weight on `alpha`, `varphi = nT varphi~`.
    pub varphi: f64,
    /// Decreasing path for BIC selection; a default path is built when absent.
    pub lambda_path: Option<Vec<f64>>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { lambda: 0.0, varphi: 0.0, lambda_path: None }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NetvarError::Validation(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if !(self.varphi >= 0.0 && self.varphi.is_finite()) {
            return Err(NetvarError::Validation(format!("varphi = {} must be finite and >= 0", self.varphi)));
        }
        if let Some(path) = &self.lambda_path {
            check_path(path)?;
        }
        Ok(())
    }
}

fn check_path(path: &[f64]) -> Result<()> {
    if path.is_empty() {
        return Err(NetvarError::Validation("lambda path is empty".into()));
    }
    if path.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(NetvarError::Validation("lambda path entries must be positive".into()));
    }
    if path.windows(2).any(|w| w[1] >= w[0]) {
        return Err(NetvarError::Validation("lambda path must be strictly decreasing".into()));
    }
    Ok(())
}

/// Iteration control for [`fit_joint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    /// Stop when neither `alpha` nor `A` moves by more than this (sup norm).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl { tol: 1e-8, max_iter: 500 }
    }
}

/// Starting point for [`fit_joint`]; `alpha` is rescaled to unit `l1` norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInit {
    pub alpha: Vec<f64>,
    pub adjacency: DMatrix<f64>,
}

/// Output of [`fit_joint`].
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// `p x 1` lag weights with `||alpha||_1 = 1`.
    pub alpha: DMatrix<f64>,
    /// Estimated links; nonnegative, not bounded above.
    #[serde(skip)]
    pub network: Network,
    /// `(1/T) sum u_t u_t'` at the final estimates.
    pub sigma: DMatrix<f64>,
    /// Penalised criterion `(1/nT) SSR + lambda~ sum a_ij + varphi~ ||alpha||^2`
    /// at the start and after every sweep.
    pub objective_trace: Vec<f64>,
    pub n_nonzero: usize,
    pub converged: bool,
    pub iterations: usize,
    pub ssr: f64,
    /// Number of periods used, `T - p`.
    pub n_obs: usize,
    pub lambda: f64,
    pub varphi: f64,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.alpha.nrows()
    }

    /// `nT ln(SSR / nT) + (n_nonzero + p) ln(nT)`.
    pub fn bic(&self) -> f64 {
        let nt = (self.network.n() * self.n_obs) as f64;
        nt * (self.ssr / nt).ln() + (self.n_nonzero + self.p()) as f64 * nt.ln()
    }

    /// `Phi_l = alpha_l A`.
    pub fn lag_matrices(&self) -> Vec<DMatrix<f64>> {
        self.alpha.iter().map(|a| self.network.adjacency() * *a).collect()
    }

    pub fn init(&self) -> FitInit {
        FitInit { alpha: self.alpha.iter().cloned().collect(), adjacency: self.network.adjacency().clone() }
    }
}

/// Sample cross moments `L[l][m] = sum_t y_{t-l} y_{t-m}'` for `l, m = 0..=p`
/// over `t = p..T`.
#[derive(Debug, Clone)]
pub(crate) struct LagMoments {
    pub(crate) n: usize,
    pub(crate) p: usize,
    pub(crate) n_obs: usize,
    pub(crate) lag: Vec<Vec<DMatrix<f64>>>,
}

impl LagMoments {
    pub(crate) fn new(values: &DMatrix<f64>, p: usize) -> Result<Self> {
        let (n, t) = values.shape();
        if p == 0 {
            return Err(NetvarError::Validation("lag order p must be >= 1".into()));
        }
        if t <= p {
            return Err(NetvarError::Validation(format!("panel has {t} periods, needs more than p = {p}")));
        }
        let n_obs = t - p;
        let cols: Vec<_> = (0..=p).map(|l| values.columns(p - l, n_obs)).collect();
        let mut lag = vec![vec![DMatrix::zeros(n, n); p + 1]; p + 1];
        for l in 0..=p {
            for m in l..=p {
                let c = &cols[l] * cols[m].transpose();
                if m != l {
                    lag[m][l] = c.transpose();
                }
                lag[l][m] = c;
            }
        }
        Ok(LagMoments { n, p, n_obs, lag })
    }

    /// `(G, C)` with `G = sum z_t z_t'`, `C = sum y_t z_t'` and
    /// `z_t = sum_l alpha_l y_{t-l}`.
    pub(crate) fn z_moments(&self, alpha: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut g = DMatrix::zeros(self.n, self.n);
        let mut c = DMatrix::zeros(self.n, self.n);
        for l in 1..=self.p {
            c += &self.lag[0][l] * alpha[l - 1];
            for m in 1..=self.p {
                g += &self.lag[l][m] * (alpha[l - 1] * alpha[m - 1]);
            }
        }
        (g, c)
    }

    /// `sum_t u_t u_t'` for `u_t = y_t - A z_t`.
    pub(crate) fn residual_cross(&self, a: &DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let ca = c * a.transpose();
        let mut s = &self.lag[0][0] - &ca - ca.transpose() + a * g * a.transpose();
        crate::linalg::symmetrize(&mut s);
        s
    }

    pub(crate) fn ssr(&self, a: &DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        let ag = a * g;
        self.lag[0][0].trace() - 2.0 * a.dot(c) + ag.dot(a)
    }

    /// Normal equations for `alpha` given `A` and a weight matrix `W`
    /// (`Sigma^{-1}`, or the identity when `None`).
    pub(crate) fn alpha_system(&self, a: &DMatrix<f64>, w: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DVector<f64>) {
        let wa = match w {
            Some(w) => w * a,
            None => a.clone(),
        };
        let ata = a.transpose() * &wa;
        let mut h = DMatrix::zeros(self.p, self.p);
        let mut b = DVector::zeros(self.p);
        for l in 1..=self.p {
            // sum_t y_t' W A y_{t-l}
            b[l - 1] = wa.dot(&self.lag[0][l]);
            for m in 1..=self.p {
                // sum_t y_{t-l}' A'WA y_{t-m}
                h[(l - 1, m - 1)] = ata.dot(&self.lag[l][m]);
            }
        }
        (h, b)
    }
}

/// Ridge/GLS estimate of the `p x q` lag-weight grid given the network:
/// `[varphi I + sum X_t' S^{-1} X_t]^{-1} sum X_t' S^{-1} y_t` with
/// `X_t = [A y_{t-1}, A^2 y_{t-1}, ..., A^q y_{t-p}]`. `sigma = None` is OLS.
pub fn fit_alpha_given_a(
    panel: &Panel,
    net: &Network,
    p: usize,
    q: usize,
    varphi: f64,
    sigma: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let values = &panel.values;
    let (n, t) = values.shape();
    if net.n() != n {
        return Err(NetvarError::Validation(format!("panel has {n} units, network has {}", net.n())));
    }
    if p == 0 || q == 0 {
        return Err(NetvarError::Validation("orders p and q must be >= 1".into()));
    }
    if t <= p {
        return Err(NetvarError::Validation(format!("panel has {t} periods, needs more than p = {p}")));
    }
    if !(varphi >= 0.0 && varphi.is_finite()) {
        return Err(NetvarError::Validation(format!("varphi = {varphi} must be finite and >= 0")));
    }
    // whitening by the Cholesky factor of Sigma
    let l_inv = match sigma {
        Some(s) => {
            if s.shape() != (n, n) {
                return Err(NetvarError::Validation("sigma has the wrong shape".into()));
            }
            let chol = s
                .clone()
                .cholesky()
                .ok_or_else(|| NetvarError::Validation("sigma is not positive definite".into()))?;
            Some(chol.l().try_inverse().expect("triangular factor is invertible"))
        }
        None => None,
    };
    let whiten = |m: DMatrix<f64>| match &l_inv {
        Some(li) => li * m,
        None => m,
    };
    let k = p * q;
    let n_obs = t - p;
    let y = whiten(values.columns(p, n_obs).into_owned());
    // regressor (l, g) over all scored periods
    let mut regs = Vec::with_capacity(k);
    for l in 1..=p {
        let lagged = values.columns(p - l, n_obs).into_owned();
        for g in 1..=q {
            regs.push(whiten(&*net.power(g) * &lagged));
        }
    }
    let mut h = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for r in 0..k {
        b[r] = regs[r].dot(&y);
        for s in r..k {
            let v = regs[r].dot(&regs[s]);
            h[(r, s)] = v;
            h[(s, r)] = v;
        }
    }
    let coef = solve_ridge(&h, &b, varphi).map_err(|cond| {
        NetvarError::Estimation(format!(
            "network-lag regressors are multicollinear (condition number {cond:.3e}); \
             set varphi > 0 or use a smaller q"
        ))
    })?;
    Ok(DMatrix::from_fn(p, q, |l, g| coef[l * q + g]))
}

/// Solves `(H + varphi I) x = b`; the error carries the condition number.
fn solve_ridge(h: &DMatrix<f64>, b: &DVector<f64>, varphi: f64) -> std::result::Result<DVector<f64>, f64> {
    let k = h.nrows();
    let m = h + DMatrix::identity(k, k) * varphi;
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        let cond = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(cond);
    }
    match m.cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(f64::INFINITY),
    }
}

struct JointState<'a> {
    mom: &'a LagMoments,
    lambda: f64,
    varphi: f64,
}

impl JointState<'_> {
    /// Internal criterion `SSR/2 + lambda sum a + varphi/2 ||alpha||^2`.
    fn criterion(&self, alpha: &[f64], a: &DMatrix<f64>) -> f64 {
        let (g, c) = self.mom.z_moments(alpha);
        self.criterion_with(alpha, a, &g, &c)
    }

    fn criterion_with(&self, alpha: &[f64], a: &DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        let ridge: f64 = alpha.iter().map(|v| v * v).sum();
        0.5 * self.mom.ssr(a, g, c) + self.lambda * a.sum() + 0.5 * self.varphi * ridge
    }

    /// Criterion in the per-observation units of the penalised problem.
    fn reported(&self, j: f64) -> f64 {
        2.0 * j / (self.mom.n * self.mom.n_obs) as f64
    }

    /// One pass over the columns of `A` in label order.
    fn update_links(&self, a: &mut DMatrix<f64>, g: &DMatrix<f64>, c: &DMatrix<f64>) {
        let n = self.mom.n;
        for j in 0..n {
            let gjj = g[(j, j)];
            if !(gjj > 0.0) {
                continue;
            }
            for i in 0..n {
                let mut num = c[(i, j)] - self.lambda;
                for k in 0..n {
                    if k != j {
                        num -= a[(i, k)] * g[(k, j)];
                    }
                }
                a[(i, j)] = (num / gjj).max(0.0);
            }
        }
    }
}

fn normalise(alpha: &mut [f64], a: &mut DMatrix<f64>) -> bool {
    let c: f64 = alpha.iter().map(|v| v.abs()).sum();
    if !(c > 0.0 && c.is_finite()) {
        return false;
    }
    alpha.iter_mut().for_each(|v| *v /= c);
    *a *= c;
    true
}

/// Penalised least-squares estimate of an NVAR(p, 1) with unknown network.
///
/// Each sweep updates the columns of `A` by exact coordinate minimisation,
/// then `alpha` given `A`, then rescales to `||alpha||_1 = 1`. When the
/// rescaling would raise the penalty above the pre-step value, the `alpha`
/// step is shortened until it does not, so the criterion never increases.
pub fn fit_joint(
    panel: &Panel,
    p: usize,
    penalty: &PenaltyConfig,
    init: Option<&FitInit>,
    control: &FitControl,
) -> Result<FitResult> {
    penalty.validate()?;
    if !(control.tol > 0.0) || control.max_iter == 0 {
        return Err(NetvarError::Validation("tol must be positive and max_iter >= 1".into()));
    }
    let mom = LagMoments::new(&panel.values, p)?;
    fit_with_moments(&mom, panel, penalty.lambda, penalty.varphi, init, control)
}

fn fit_with_moments(
    mom: &LagMoments,
    panel: &Panel,
    lambda: f64,
    varphi: f64,
    init: Option<&FitInit>,
    control: &FitControl,
) -> Result<FitResult> {
    let n = mom.n;
    let p = mom.p;
    let (mut alpha, mut a) = match init {
        Some(fi) => {
            if fi.alpha.len() != p || fi.adjacency.shape() != (n, n) {
                return Err(NetvarError::Validation("initial values have the wrong shape".into()));
            }
            if fi.adjacency.iter().any(|v| !(*v >= 0.0)) {
                return Err(NetvarError::Validation("initial links must be nonnegative".into()));
            }
            let mut alpha = fi.alpha.clone();
            let mut a = fi.adjacency.clone();
            if !normalise(&mut alpha, &mut a) {
                return Err(NetvarError::Validation("initial alpha is zero".into()));
            }
            (alpha, a)
        }
        None => {
            let mut alpha = vec![0.0; p];
            alpha[0] = 1.0;
            (alpha, DMatrix::zeros(n, n))
        }
    };
    let state = JointState { mom, lambda, varphi };
    let scale = 0.5 * mom.lag[0][0].trace().abs().max(f64::MIN_POSITIVE);
    let slack = 1e-10 * scale;
    let mut j_prev = state.criterion(&alpha, &a);
    let mut trace = vec![state.reported(j_prev)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < control.max_iter {
        iterations += 1;
        let alpha_old = alpha.clone();
        let a_old = a.clone();

        let (g, c) = mom.z_moments(&alpha);
        state.update_links(&mut a, &g, &c);
        let j_links = state.criterion_with(&alpha, &a, &g, &c);
        assert!(j_links <= j_prev + slack, "link update raised the criterion: {j_prev} -> {j_links}");

        let (h, b) = mom.alpha_system(&a, None);
        let mut j_now = j_links;
        if let Ok(target) = solve_ridge(&h, &b, varphi) {
            let mut step = 1.0;
            for _ in 0..60 {
                let mut cand: Vec<f64> = alpha.iter().zip(target.iter()).map(|(o, t)| o + step * (t - o)).collect();
                let mut cand_a = a.clone();
                if normalise(&mut cand, &mut cand_a) {
                    let j = state.criterion(&cand, &cand_a);
                    if j <= j_links {
                        alpha = cand;
                        a = cand_a;
                        j_now = j;
                        break;
                    }
                }
                step *= 0.5;
            }
        }
        assert!(j_now <= j_prev + slack, "sweep {iterations} raised the criterion: {j_prev} -> {j_now}");
        if j_now > j_prev {
            // Rounding-level rise: keep the previous iterate and stop.
            alpha = alpha_old;
            a = a_old;
            trace.push(state.reported(j_prev));
            converged = true;
            break;
        }
        trace.push(state.reported(j_now));
        j_prev = j_now;

        let da = alpha.iter().zip(&alpha_old).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let dl = (&a - &a_old).amax();
        if da.max(dl) < control.tol {
            converged = true;
            break;
        }
    }
    let (g, c) = mom.z_moments(&alpha);
    let ssr = mom.ssr(&a, &g, &c).max(0.0);
    let sigma = mom.residual_cross(&a, &g, &c) / mom.n_obs as f64;
    let n_nonzero = a.iter().filter(|v| **v > 0.0).count();
    let network = Network::new(a, panel.unit_labels.clone())?;
    Ok(FitResult {
        alpha: DMatrix::from_column_slice(p, 1, &alpha),
        network,
        sigma,
        objective_trace: trace,
        n_nonzero,
        converged,
        iterations,
        ssr,
        n_obs: mom.n_obs,
        lambda,
        varphi,
    })
}

/// Smallest `lambda` at which every link stays zero from the default start.
pub fn lambda_max(panel: &Panel, p: usize) -> Result<f64> {
    let mom = LagMoments::new(&panel.values, p)?;
    let mut alpha = vec![0.0; p];
    alpha[0] = 1.0;
    let (_, c) = mom.z_moments(&alpha);
    Ok(c.max().max(0.0))
}

/// `points` log-spaced values from [`lambda_max`] down to `ratio` times it.
pub fn default_lambda_path(panel: &Panel, p: usize, points: usize, ratio: f64) -> Result<Vec<f64>> {
    if points == 0 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(NetvarError::Validation("path needs points >= 1 and 0 < ratio < 1".into()));
    }
    let top = lambda_max(panel, p)?;
    if !(top > 0.0) {
        return Err(NetvarError::Estimation("no positive cross moment: every lambda gives an empty network".into()));
    }
    if points == 1 {
        return Ok(vec![top]);
    }
    let step = ratio.ln() / (points - 1) as f64;
    Ok((0..points).map(|k| top * (step * k as f64).exp()).collect())
}

/// One point on a lambda path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub bic: f64,
    pub ssr: f64,
    pub n_nonzero: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of [`select_lambda_bic`].
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub fit: FitResult,
    pub path: Vec<PathPoint>,
    pub fits: Vec<FitResult>,
}

/// Fits along a decreasing path with warm starts and returns the fit that
/// minimises the BIC. Uses `penalty.lambda_path`, or the default 30-point
/// path when it is absent.
pub fn select_lambda_bic(
    panel: &Panel,
    p: usize,
    penalty: &PenaltyConfig,
    control: &FitControl,
) -> Result<LambdaSelection> {
    penalty.validate()?;
    let path = match &penalty.lambda_path {
        Some(path) => path.clone(),
        None => default_lambda_path(panel, p, 30, 1e-3)?,
    };
    check_path(&path)?;
    let mom = LagMoments::new(&panel.values, p)?;
    let mut fits: Vec<FitResult> = Vec::with_capacity(path.len());
    for &lambda in &path {
        let warm = fits.last().map(|f| f.init());
        fits.push(fit_with_moments(&mom, panel, lambda, penalty.varphi, warm.as_ref(), control)?);
    }
    let points: Vec<PathPoint> = fits
        .iter()
        .map(|f| PathPoint {
            lambda: f.lambda,
            bic: f.bic(),
            ssr: f.ssr,
            n_nonzero: f.n_nonzero,
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    let best = (0..points.len())
        .min_by(|a, b| points[*a].bic.total_cmp(&points[*b].bic))
        .expect("path is not empty");
    Ok(LambdaSelection { lambda: path[best], fit: fits[best].clone(), path: points, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, NvarModel};

    fn panel_from(model: &NvarModel, t: usize, seed: u64) -> Panel {
        simulate(model, t, None, seed, false).unwrap()
    }

    fn ring(n: usize, w: f64) -> Network {
        Network::from_matrix(DMatrix::from_fn(n, n, |i, j| if j == (i + 1) % n { w } else { 0.0 })).unwrap()
    }

    #[test]
    fn noiseless_single_lag_recovers_alpha_exactly() {
        let net = Network::from_rows(3, &[0.0, 0.5, 0.3, 0.2, 0.0, 0.6, 0.4, 0.1, 0.0]).unwrap();
        let mut values = DMatrix::zeros(3, 40);
        values.set_column(0, &DVector::from_vec(vec![1.0, -2.0, 0.5]));
        for t in 1..40 {
            let next = net.adjacency() * values.column(t - 1) * 0.9;
            values.set_column(t, &next);
        }
        let panel = Panel::from_values(values).unwrap();
        let alpha = fit_alpha_given_a(&panel, &net, 1, 1, 0.0, None).unwrap();
        assert!((alpha[(0, 0)] - 0.9).abs() < 1e-10);
    }

    #[test]
    fn dependent_powers_are_refused_without_ridge() {
        // idempotent A: A^2 = A
        let net = Network::from_rows(3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let values = DMatrix::from_fn(3, 60, |i, t| ((i * 7 + t * 3) as f64).sin());
        let panel = Panel::from_values(values).unwrap();
        let err = fit_alpha_given_a(&panel, &net, 1, 2, 0.0, None).unwrap_err();
        assert!(err.to_string().contains("multicollinear"), "{err}");
        assert!(fit_alpha_given_a(&panel, &net, 1, 2, 1.0, None).is_ok());
    }

    #[test]
    fn gls_weights_match_explicit_whitening() {
        let net = ring(3, 0.6);
        let model = NvarModel::p1(&[0.5, 0.3], net.clone(), DMatrix::identity(3, 3)).unwrap();
        let panel = panel_from(&model, 200, 3);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let got = fit_alpha_given_a(&panel, &net, 2, 1, 0.7, Some(&s)).unwrap();
        let mom = LagMoments::new(&panel.values, 2).unwrap();
        let w = s.clone().try_inverse().unwrap();
        let (h, b) = mom.alpha_system(net.adjacency(), Some(&w));
        let want = (h + DMatrix::identity(2, 2) * 0.7).try_inverse().unwrap() * b;
        assert!((got[(0, 0)] - want[0]).abs() < 1e-10 && (got[(1, 0)] - want[1]).abs() < 1e-10);
    }

    #[test]
    fn moment_ssr_matches_residual_loop() {
        let net = ring(4, 0.5);
        let model = NvarModel::p1(&[0.6, 0.2], net, DMatrix::identity(4, 4)).unwrap();
        let panel = panel_from(&model, 80, 1);
        let mom = LagMoments::new(&panel.values, 2).unwrap();
        let alpha = [0.7, -0.3];
        let a = DMatrix::from_fn(4, 4, |i, j| 0.1 * (i + 2 * j) as f64);
        let (g, c) = mom.z_moments(&alpha);
        let y = &panel.values;
        let mut want = 0.0;
        for t in 2..80 {
            let z = y.column(t - 1) * alpha[0] + y.column(t - 2) * alpha[1];
            want += (y.column(t) - &a * z).norm_squared();
        }
        assert!((mom.ssr(&a, &g, &c) - want).abs() < 1e-9 * want);
        assert!((mom.residual_cross(&a, &g, &c).trace() - want).abs() < 1e-9 * want);
    }

    #[test]
    fn soft_threshold_matches_grid_minimum() {
        let net = ring(3, 0.7);
        let model = NvarModel::p1(&[0.8], net, DMatrix::identity(3, 3)).unwrap();
        let panel = panel_from(&model, 150, 9);
        let mom = LagMoments::new(&panel.values, 1).unwrap();
        for lambda in [0.0, 5.0, 40.0, 400.0] {
            let state = JointState { mom: &mom, lambda, varphi: 0.0 };
            let alpha = [1.0];
            let (g, c) = mom.z_moments(&alpha);
            let mut a = DMatrix::from_fn(3, 3, |i, j| 0.05 * (1 + i + j) as f64);
            let start = a.clone();
            state.update_links(&mut a, &g, &c);
            // first entry was updated against the starting row
            let f = |v: f64| {
                let mut m = start.clone();
                m[(0, 0)] = v;
                state.criterion_with(&alpha, &m, &g, &c)
            };
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            for k in 0..=200_000 {
                let v = k as f64 * 1e-5;
                let val = f(v);
                if val < best {
                    best = val;
                    arg = v;
                }
            }
            assert!((a[(0, 0)] - arg).abs() < 1e-5 + 1e-6, "lambda {lambda}: {} vs {arg}", a[(0, 0)]);
        }
    }

    #[test]
    fn huge_lambda_keeps_everything_at_the_start() {
        let net = ring(4, 0.6);
        let model = NvarModel::p1(&[0.5, 0.3], net, DMatrix::identity(4, 4)).unwrap();
        let panel = panel_from(&model, 200, 2);
        let pen = PenaltyConfig { lambda: 1e12, ..Default::default() };
        let fit = fit_joint(&panel, 2, &pen, None, &FitControl::default()).unwrap();
        assert_eq!(fit.n_nonzero, 0);
        assert_eq!(fit.alpha.as_slice(), &[1.0, 0.0]);
        assert!(fit.converged);
    }

    #[test]
    fn unpenalised_fit_is_consistent() {
        let net = Network::from_rows(3, &[0.0, 0.6, 0.2, 0.3, 0.0, 0.5, 0.4, 0.2, 0.0]).unwrap();
        let model = NvarModel::p1(&[0.7], net.clone(), DMatrix::identity(3, 3)).unwrap();
        let panel = panel_from(&model, 5000, 11);
        let fit = fit_joint(&panel, 1, &PenaltyConfig::default(), None, &FitControl::default()).unwrap();
        assert!(fit.converged);
        let phi = &fit.lag_matrices()[0];
        let truth = net.adjacency() * 0.7;
        assert!((phi - truth).amax() < 0.05, "{phi}");
        assert!((fit.alpha.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn normalisation_keeps_lag_matrices() {
        let net = ring(4, 0.5);
        let model = NvarModel::p1(&[0.5, 0.3], net, DMatrix::identity(4, 4)).unwrap();
        let panel = panel_from(&model, 300, 5);
        let mom = LagMoments::new(&panel.values, 2).unwrap();
        let mut alpha = vec![1.5, -0.6];
        let mut a = DMatrix::from_fn(4, 4, |i, j| 0.1 * ((i * j) % 3) as f64);
        let before: Vec<_> = alpha.iter().map(|v| &a * *v).collect();
        assert!(normalise(&mut alpha, &mut a));
        for (l, m) in before.iter().enumerate() {
            assert!((m - &a * alpha[l]).amax() < 1e-10);
        }
        // the data fit is invariant too
        let state = JointState { mom: &mom, lambda: 0.0, varphi: 0.0 };
        let j1 = state.criterion(&alpha, &a);
        let j0 = state.criterion(&[1.5, -0.6], &(&a / 2.1));
        assert!((j1 - j0).abs() < 1e-8 * j0);
    }

    #[test]
    fn path_shape_and_single_point_selection() {
        let net = ring(4, 0.6);
        let model = NvarModel::p1(&[0.8], net, DMatrix::identity(4, 4)).unwrap();
        let panel = panel_from(&model, 300, 4);
        let path = default_lambda_path(&panel, 1, 30, 1e-3).unwrap();
        assert_eq!(path.len(), 30);
        assert!((path[29] / path[0] - 1e-3).abs() < 1e-12);
        let at_top = fit_joint(&panel, 1, &PenaltyConfig { lambda: path[0], ..Default::default() }, None, &FitControl::default()).unwrap();
        assert_eq!(at_top.n_nonzero, 0);
        let pen = PenaltyConfig { lambda_path: Some(vec![path[10]]), ..Default::default() };
        let sel = select_lambda_bic(&panel, 1, &pen, &FitControl::default()).unwrap();
        assert_eq!(sel.lambda, path[10]);
        assert!(select_lambda_bic(&panel, 1, &PenaltyConfig { lambda_path: Some(vec![1.0, 2.0]), ..Default::default() }, &FitControl::default()).is_err());
    }
}
