//! Time aggregation of a latent NVAR(p*, 1) observed every `q*` periods, the
//! resulting state-space form and its Kalman-filter likelihood.
//!
//! With `q* >= 2` the observed series follows (up to truncation at `p` lags)
//!
//! ```text
//! y_t = Phi_1 y_{t-1} + ... + Phi_p y_{t-p} + Theta_0 u_t + ... + Theta_{p-1} u_{t-p+1}
//! ```
//!
//! where `u_t` stacks the `q*` latent shocks between two observations.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{companion_blocks, ImpulseResponse, ShockScale};
use crate::error::{NetvarError, Result};
use crate::lagpoly::{substitute, APoly, Coeff, DeltaPoly};
use crate::linalg::{symmetrize, LN_2PI};
use crate::model::{HighFreqSpec, SamplingRatio};
use crate::network::Network;
use crate::panel::Panel;

/// Largest default truncation lag.
pub const MAX_DEFAULT_TRUNCATION: usize = 12;

/// Observed-frequency representation of a latent NVAR(p*, 1).
#[derive(Debug, Clone)]
pub struct AggregatedProcess {
    pub n: usize,
    /// Truncation lag.
    pub p: usize,
    /// Connection order `p q* - p + 1` (1 when no aggregation happens).
    pub q: usize,
    pub q_star: SamplingRatio,
    /// Number of latent shocks per observation (`q*` if aggregating, else 1).
    pub shock_blocks: usize,
    pub phi: Vec<DMatrix<f64>>,
    /// `theta[l]` is `n x (n * shock_blocks)`.
    pub theta: Vec<DMatrix<f64>>,
    /// `Phi_l` as polynomials in `A`.
    pub phi_poly: Vec<APoly<f64>>,
    /// `theta_poly[l][b]` is sub-block `b` of `Theta_l` as a polynomial in `A`.
    pub theta_poly: Vec<Vec<APoly<f64>>>,
    pub warnings: Vec<String>,
}

/// Coefficients of every `Phi_l` and `Theta_l` sub-block as polynomials in
/// `A` whose coefficients are polynomials in `delta`.
#[derive(Debug, Clone)]
pub struct SymbolicAggregation {
    pub p_star: usize,
    pub q_star: SamplingRatio,
    pub p: usize,
    pub phi: Vec<APoly<DeltaPoly>>,
    pub theta: Vec<Vec<APoly<DeltaPoly>>>,
}

impl SymbolicAggregation {
    /// Substitutes numeric `delta`.
    pub fn eval(&self, delta: &[f64]) -> (Vec<APoly<f64>>, Vec<Vec<APoly<f64>>>) {
        let phi = self.phi.iter().map(|c| c.eval(delta)).collect();
        let theta = self
            .theta
            .iter()
            .map(|blocks| blocks.iter().map(|c| c.eval(delta)).collect())
            .collect();
        (phi, theta)
    }
}

/// Generic aggregation over a coefficient ring. `lags[l]` is the latent
/// coefficient on `x_{tau-l-1}`.
fn aggregate_polys<C: Coeff>(
    lags: &[APoly<C>],
    q_star: SamplingRatio,
    p: usize,
) -> Result<(Vec<APoly<C>>, Vec<Vec<APoly<C>>>)> {
    let p_star = lags.len();
    match q_star {
        SamplingRatio::Every(k) if k >= 2 => {
            let sub = substitute(lags, p * k, |j| j % k == 0);
            let phi = (1..=p).map(|l| sub.v[l * k].clone()).collect();
            let theta = (0..p)
                .map(|l| (l * k + 1..=(l + 1) * k).map(|j| sub.w[j].clone()).collect())
                .collect();
            Ok((phi, theta))
        }
        _ => {
            let stride = match q_star {
                SamplingRatio::Slower(k) => k,
                _ => 1,
            };
            if p < p_star * stride {
                return Err(NetvarError::Validation(format!(
                    "lag order {p} is below the {} observed lags implied by p* = {p_star}, q* = {q_star}",
                    p_star * stride
                )));
            }
            let mut phi = vec![APoly::zero(); p];
            for (l, lag) in lags.iter().enumerate() {
                phi[(l + 1) * stride - 1] = lag.clone();
            }
            let theta = (0..p)
                .map(|l| vec![if l == 0 { APoly::identity() } else { APoly::zero() }])
                .collect();
            Ok((phi, theta))
        }
    }
}

/// Symbolic aggregation for timing weights `delta_1..delta_{p*}`.
pub fn aggregate_symbolic(p_star: usize, q_star: SamplingRatio, p: usize) -> Result<SymbolicAggregation> {
    if p_star == 0 || p == 0 {
        return Err(NetvarError::Validation("p* and p must be >= 1".into()));
    }
    let lags: Vec<APoly<DeltaPoly>> =
        (1..=p_star).map(|l| APoly::monomial(DeltaPoly::var(l), 1)).collect();
    let (phi, theta) = aggregate_polys(&lags, q_star, p)?;
    Ok(SymbolicAggregation { p_star, q_star, p, phi, theta })
}

/// Lag count needed for the smallest natural truncation.
pub fn natural_lags(spec: &HighFreqSpec) -> usize {
    match spec.q_star {
        SamplingRatio::Slower(k) => spec.p_star * k,
        SamplingRatio::Every(1) => spec.p_star,
        SamplingRatio::Every(_) => 1,
    }
}

/// Bound on the modulus of the latent companion matrix: the root `lambda` of
/// `rho sum_l |delta_l| lambda^-l = 1`. Exact for `delta >= 0` and `A >= 0`.
pub fn latent_decay(spec: &HighFreqSpec, net: &Network) -> Result<f64> {
    let rho = net.spectral_radius()?;
    let w: Vec<f64> = spec.delta.iter().map(|d| d.abs() * rho).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    if total >= 1.0 {
        return Ok(1.0);
    }
    let g = |lam: f64| -> f64 {
        w.iter().enumerate().map(|(l, wl)| wl / lam.powi(l as i32 + 1)).sum()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Smallest `p` whose `p q*` latent steps cover `ceil(ln 1e-8 / ln lambda)` for
/// the [`latent_decay`] bound, capped at [`MAX_DEFAULT_TRUNCATION`]. For
/// `q* <= 1` the exact lag count.
pub fn default_truncation(spec: &HighFreqSpec, net: &Network) -> Result<usize> {
    if !spec.q_star.aggregates() {
        return Ok(natural_lags(spec));
    }
    let k = spec.q_star.latent_steps();
    let decay = latent_decay(spec, net)?;
    if decay <= 0.0 {
        return Ok(1);
    }
    if decay >= 1.0 {
        return Ok(MAX_DEFAULT_TRUNCATION);
    }
    let steps = ((1e-8f64).ln() / decay.ln()).ceil().max(1.0) as usize;
    Ok(steps.div_ceil(k).clamp(1, MAX_DEFAULT_TRUNCATION))
}

/// `A^0..=A^max` for repeated materialisation.
pub fn powers_upto(net: &Network, max: usize) -> Vec<DMatrix<f64>> {
    (0..=max).map(|g| (*net.power(g)).clone()).collect()
}

fn materialize(poly: &APoly<f64>, powers: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (g, c) in poly.coeffs.iter().enumerate() {
        if *c != 0.0 {
            m += &powers[g] * *c;
        }
    }
    m
}

/// Observed process implied by `spec` with truncation lag `p`.
///
/// `q* = 1` passes the latent model through; `q* = 1/k` spreads the latent
/// lags `k` observed periods apart (and needs `p >= p* k`).
pub fn aggregate(spec: &HighFreqSpec, net: &Network, p: usize) -> Result<AggregatedProcess> {
    let powers = powers_upto(net, max_power(spec, p));
    aggregate_with_powers(spec, net, p, &powers)
}

/// Highest `A` power that [`aggregate`] needs.
pub fn max_power(spec: &HighFreqSpec, p: usize) -> usize {
    if spec.q_star.aggregates() {
        p * spec.q_star.latent_steps()
    } else {
        1
    }
}

/// [`aggregate`] with precomputed powers `A^0..`.
pub fn aggregate_with_powers(
    spec: &HighFreqSpec,
    net: &Network,
    p: usize,
    powers: &[DMatrix<f64>],
) -> Result<AggregatedProcess> {
    spec.validate()?;
    if p == 0 {
        return Err(NetvarError::Validation("truncation lag must be >= 1".into()));
    }
    let n = net.n();
    let lags: Vec<APoly<f64>> = spec.delta.iter().map(|d| APoly::monomial(*d, 1)).collect();
    let (phi_poly, theta_poly) = aggregate_polys(&lags, spec.q_star, p)?;
    let needed = phi_poly
        .iter()
        .chain(theta_poly.iter().flatten())
        .filter_map(|c| c.degree())
        .max()
        .unwrap_or(0);
    if needed >= powers.len() {
        return Err(NetvarError::Validation(format!(
            "need A powers up to {needed}, got {}",
            powers.len().saturating_sub(1)
        )));
    }
    let phi = phi_poly.iter().map(|c| materialize(c, powers, n)).collect();
    let shock_blocks = theta_poly[0].len();
    let theta = theta_poly
        .iter()
        .map(|blocks| {
            let mut m = DMatrix::zeros(n, n * shock_blocks);
            for (b, c) in blocks.iter().enumerate() {
                m.view_mut((0, b * n), (n, n)).copy_from(&materialize(c, powers, n));
            }
            m
        })
        .collect();
    let k = spec.q_star.latent_steps();
    let q = if spec.q_star.aggregates() { p * k - p + 1 } else { 1 };
    let mut warnings = Vec::new();
    if spec.q_star.aggregates() {
        let decay = net.spectral_radius()? * spec.delta.iter().map(|d| d.abs()).sum::<f64>();
        let residual = decay.powi((p * k) as i32);
        if residual > 1e-8 {
            warnings.push(format!(
                "truncation at p = {p} leaves (rho d)^(p q*) = {residual:.3e}; consider a larger p"
            ));
        }
    }
    Ok(AggregatedProcess {
        n,
        p,
        q,
        q_star: spec.q_star,
        shock_blocks,
        phi,
        theta,
        phi_poly,
        theta_poly,
        warnings,
    })
}

/// Linear Gaussian state space `z_t = F z_{t-1} + T u_t`, `y_t = M z_t`,
/// with the initial state conditioned on the presample.
#[derive(Debug, Clone, Serialize)]
pub struct StateSpace {
    pub n: usize,
    pub p: usize,
    #[serde(serialize_with = "ser_matrix")]
    pub f: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub t_mat: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub q: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub m: DMatrix<f64>,
    #[serde(serialize_with = "ser_vector")]
    pub init_mean: DVector<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub init_cov: DMatrix<f64>,
    /// `Phi_l`, kept for the structured filter.
    #[serde(skip)]
    phi: Vec<DMatrix<f64>>,
    /// `T Q T'`.
    #[serde(skip)]
    tqt: DMatrix<f64>,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().cloned().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

fn ser_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&v.iter().cloned().collect::<Vec<f64>>(), s)
}

/// Builds the state space. `presample` holds at least `p` observed vectors
/// in time order; the last `p` of them are `y_{-p+1}, ..., y_0`.
///
/// The hidden blocks of `z_0` are set to their conditional mean given the
/// presample, with the moving-average shocks they contain treated as
/// independent of the presample.
pub fn build_state_space(
    agg: &AggregatedProcess,
    sigma: &DMatrix<f64>,
    presample: &DMatrix<f64>,
) -> Result<StateSpace> {
    let (n, p) = (agg.n, agg.p);
    if sigma.shape() != (n, n) {
        return Err(NetvarError::Validation("sigma has the wrong shape".into()));
    }
    if presample.nrows() != n || presample.ncols() < p {
        return Err(NetvarError::Validation(format!(
            "presample needs {p} observations of {n} units, got {}x{}",
            presample.nrows(),
            presample.ncols()
        )));
    }
    let r = agg.shock_blocks;
    let m_dim = n * p;
    let mut f = DMatrix::zeros(m_dim, m_dim);
    let mut t_mat = DMatrix::zeros(m_dim, n * r);
    for l in 0..p {
        f.view_mut((l * n, 0), (n, n)).copy_from(&agg.phi[l]);
        if l + 1 < p {
            f.view_mut((l * n, (l + 1) * n), (n, n)).fill_with_identity();
        }
        t_mat.view_mut((l * n, 0), (n, n * r)).copy_from(&agg.theta[l]);
    }
    let mut q = DMatrix::zeros(n * r, n * r);
    for b in 0..r {
        q.view_mut((b * n, b * n), (n, n)).copy_from(sigma);
    }
    let mut tqt = &t_mat * &q * t_mat.transpose();
    symmetrize(&mut tqt);
    let mut m = DMatrix::zeros(n, m_dim);
    m.view_mut((0, 0), (n, n)).fill_with_identity();

    let last = presample.ncols() - 1;
    // y_{-k} for k = 0..p-1
    let y_lag = |k: usize| presample.column(last - k).into_owned();
    let mut init_mean = DVector::zeros(m_dim);
    init_mean.rows_mut(0, n).copy_from(&y_lag(0));
    let mut init_cov = DMatrix::zeros(m_dim, m_dim);
    if p > 1 {
        let h = m_dim - n;
        let base = tqt.view((n, n), (h, h)).into_owned();
        // The hidden block of F is a block shift, so F_{-1,-1} x moves every
        // block up by one and F_{-1,-1} C F_{-1,-1}' moves C up and left.
        let mut mean = DVector::zeros(h);
        let mut cov = DMatrix::zeros(h, h);
        for k in (1..p).rev() {
            let mut next_mean = DVector::zeros(h);
            next_mean.rows_mut(0, h - n).copy_from(&mean.rows(n, h - n));
            for b in 0..p - 1 {
                let add = &agg.phi[b + 1] * y_lag(k);
                let mut block = next_mean.rows_mut(b * n, n);
                block += add;
            }
            let mut next_cov = base.clone();
            {
                let mut view = next_cov.view_mut((0, 0), (h - n, h - n));
                view += cov.view((n, n), (h - n, h - n));
            }
            mean = next_mean;
            cov = next_cov;
        }
        symmetrize(&mut cov);
        init_mean.rows_mut(n, h).copy_from(&mean);
        init_cov.view_mut((n, n), (h, h)).copy_from(&cov);
    }
    Ok(StateSpace { n, p, f, t_mat, q, m, init_mean, init_cov, phi: agg.phi.clone(), tqt })
}

impl StateSpace {
    /// `F X` using the companion structure of `F`.
    fn apply_f(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let cols = x.ncols();
        let top = x.rows(0, n).into_owned();
        let mut out = DMatrix::zeros(n * p, cols);
        for l in 0..p {
            let mut block = &self.phi[l] * &top;
            if l + 1 < p {
                block += x.rows((l + 1) * n, n);
            }
            out.rows_mut(l * n, n).copy_from(&block);
        }
        out
    }
}

/// Exact log-likelihood of the observations (columns of `y`) given the
/// initial state. Uses the covariance form with re-symmetrisation and
/// switches to the steady-state gain once the covariance recursion settles.
pub fn kalman_loglik(ss: &StateSpace, y: &DMatrix<f64>) -> Result<f64> {
    let n = ss.n;
    if y.nrows() != n {
        return Err(NetvarError::Validation(format!(
            "observations have {} rows, model has {n} units",
            y.nrows()
        )));
    }
    let np = n * ss.p;
    let mut a = ss.init_mean.clone();
    let mut p_mat = ss.init_cov.clone();
    let mut ll = 0.0;
    let mut t = 0;
    // gain and factor of S once the covariance recursion has settled
    let mut steady: Option<(DMatrix<f64>, DMatrix<f64>, f64)> = None;
    while t < y.ncols() {
        let a_pred = {
            let a_m = DMatrix::from_column_slice(np, 1, a.as_slice());
            ss.apply_f(&a_m).column(0).into_owned()
        };
        let v = y.column(t) - a_pred.rows(0, n);
        // The observed block of the filtered covariance is zero, so
        // F P F' only shifts the hidden blocks up and left.
        let mut p_pred = ss.tqt.clone();
        if np > n {
            let mut view = p_pred.view_mut((0, 0), (np - n, np - n));
            view += p_mat.view((n, n), (np - n, np - n));
        }
        let s = p_pred.view((0, 0), (n, n)).into_owned();
        let l = s.cholesky().map(|c| c.l()).ok_or_else(|| {
            NetvarError::Numeric(format!(
                "predicted observation covariance is not positive definite at step {t}"
            ))
        })?;
        let logdet: f64 = l.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let z = l.solve_lower_triangular(&v).expect("triangular solve");
        ll -= 0.5 * (n as f64 * LN_2PI + logdet + z.norm_squared());
        let g = l
            .solve_lower_triangular(&p_pred.rows(0, n).into_owned())
            .expect("triangular solve");
        a = a_pred + g.transpose() * &z;
        let mut p_new = p_pred - g.transpose() * &g;
        symmetrize(&mut p_new);
        p_new.rows_mut(0, n).fill(0.0);
        p_new.columns_mut(0, n).fill(0.0);
        let (mut diff, mut scale) = (0.0f64, 1e-300f64);
        for (x, y) in p_new.as_slice().iter().zip(p_mat.as_slice()) {
            diff = diff.max((x - y).abs());
            scale = scale.max(x.abs());
        }
        let settled = diff <= 1e-14 * scale;
        p_mat = p_new;
        t += 1;
        if settled {
            let l_inv = l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("triangular solve");
            steady = Some((g.transpose() * &l_inv, l_inv, logdet));
            break;
        }
    }
    if let Some((gain, l_inv, logdet)) = steady {
        // a_{t|t-1} = Phi_stack a_top + shift(a); a_t = a_{t|t-1} + K v_t
        let mut phi_stack = DMatrix::zeros(np, n);
        for (l, phi) in ss.phi.iter().enumerate() {
            phi_stack.view_mut((l * n, 0), (n, n)).copy_from(phi);
        }
        let constant = n as f64 * LN_2PI + logdet;
        let mut a_pred = DVector::zeros(np);
        let mut v = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for t in t..y.ncols() {
            a_pred.gemv(1.0, &phi_stack, &a.rows(0, n), 0.0);
            for i in 0..np - n {
                a_pred[i] += a[i + n];
            }
            for i in 0..n {
                v[i] = y[(i, t)] - a_pred[i];
            }
            z.gemv(1.0, &l_inv, &v, 0.0);
            ll -= 0.5 * (constant + z.norm_squared());
            a.copy_from(&a_pred);
            a.gemv(1.0, &gain, &v, 1.0);
        }
    }
    Ok(ll)
}

/// Conditional log-likelihood of `panel` columns `start..` given the `p`
/// columns before `start` (which must satisfy `start >= p`).
pub fn conditional_loglik(
    agg: &AggregatedProcess,
    sigma: &DMatrix<f64>,
    panel: &DMatrix<f64>,
    start: usize,
) -> Result<f64> {
    if start < agg.p || start > panel.ncols() {
        return Err(NetvarError::Validation(format!(
            "scoring start {start} must lie in {}..={}",
            agg.p,
            panel.ncols()
        )));
    }
    let pre = panel.columns(start - agg.p, agg.p).into_owned();
    let ss = build_state_space(agg, sigma, &pre)?;
    kalman_loglik(&ss, &panel.columns(start, panel.ncols() - start).into_owned())
}

/// Convenience wrapper scoring every column after the first `p`.
pub fn panel_loglik(agg: &AggregatedProcess, sigma: &DMatrix<f64>, panel: &Panel) -> Result<f64> {
    conditional_loglik(agg, sigma, &panel.values, agg.p)
}

/// Responses of observations `h` periods ahead to a latent shock that hit
/// `sub_period` latent periods before an observation: `(F_x^{h q* + l})_11`.
pub fn timeagg_irf(
    spec: &HighFreqSpec,
    net: &Network,
    h_max: usize,
    sub_period: usize,
) -> Result<ImpulseResponse> {
    spec.validate()?;
    let report = spec.check_stationarity(net)?;
    if !report.is_stationary {
        return Err(NetvarError::NonStationary(format!(
            "binding modulus {:.6} >= 1",
            report.binding_modulus
        )));
    }
    let responses = match spec.observed_alpha() {
        Some(alpha) => {
            if sub_period != 0 {
                return Err(NetvarError::Validation(
                    "sub-period offsets need q* >= 2".into(),
                ));
            }
            let phi: Vec<DMatrix<f64>> = alpha.iter().map(|a| net.adjacency() * *a).collect();
            companion_blocks(&phi, h_max)
        }
        None => {
            let k = spec.q_star.latent_steps();
            if sub_period >= k {
                return Err(NetvarError::Validation(format!(
                    "sub-period {sub_period} must be below q* = {k}"
                )));
            }
            let phi: Vec<DMatrix<f64>> = spec.delta.iter().map(|d| net.adjacency() * *d).collect();
            let all = companion_blocks(&phi, h_max * k + sub_period);
            (0..=h_max).map(|h| all[h * k + sub_period].clone()).collect()
        }
    };
    Ok(ImpulseResponse { horizons: (0..=h_max).collect(), responses, shock_scale: ShockScale::Unit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_a() -> Network {
        Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0]).unwrap()
    }

    #[test]
    fn single_lag_two_step_aggregation() {
        let s = aggregate_symbolic(1, SamplingRatio::Every(2), 1).unwrap();
        let d1sq = DeltaPoly::from_terms(&[(1.0, &[2])]);
        assert_eq!(s.phi[0].coeffs.len(), 3);
        assert_eq!(s.phi[0].coeff(2), d1sq);
        assert!(s.phi[0].coeff(1).is_zero());
        assert_eq!(s.theta[0][0].coeff(0), DeltaPoly::constant(1.0));
        assert_eq!(s.theta[0][1].coeff(1), DeltaPoly::var(1));
    }

    #[test]
    fn unit_ratio_passes_through() {
        let spec = HighFreqSpec::new(SamplingRatio::Every(1), vec![0.6, 0.4], true).unwrap();
        let agg = aggregate(&spec, &paper_a(), 2).unwrap();
        assert_eq!(agg.q, 1);
        assert!((&agg.phi[1] - paper_a().adjacency() * 0.4).abs().max() < 1e-15);
        assert_eq!(agg.theta[0], DMatrix::identity(3, 3));
        assert!(agg.theta[1].iter().all(|v| *v == 0.0));
        assert!(aggregate(&spec, &paper_a(), 1).is_err());
    }

    #[test]
    fn slow_network_spreads_lags() {
        let spec = HighFreqSpec::new(SamplingRatio::Slower(2), vec![0.7], false).unwrap();
        let agg = aggregate(&spec, &paper_a(), 2).unwrap();
        assert!(agg.phi[0].iter().all(|v| *v == 0.0));
        assert!((&agg.phi[1] - paper_a().adjacency() * 0.7).abs().max() < 1e-15);
    }

    #[test]
    fn truncation_default() {
        let net = paper_a().scaled(0.5 / paper_a().spectral_radius().unwrap()).unwrap();
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.5, 0.5], true).unwrap();
        // ln(1e-8)/ln(0.5) = 26.6 -> 27 latent steps -> 14 observed lags -> cap
        assert_eq!(default_truncation(&spec, &net).unwrap(), 12);
        let net = paper_a().scaled(0.2 / paper_a().spectral_radius().unwrap()).unwrap();
        // lambda^2 = 0.1 lambda + 0.1 -> lambda = 0.3702, 19 latent steps -> 10 lags
        let lam = latent_decay(&spec, &net).unwrap();
        assert!((lam - (0.1 + 0.41f64.sqrt()) / 2.0).abs() < 1e-12);
        assert_eq!(default_truncation(&spec, &net).unwrap(), 10);
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.2], false).unwrap();
        // single lag: lambda = rho d = 0.04, 6 latent steps -> 3 lags
        assert_eq!(default_truncation(&spec, &net).unwrap(), 3);
    }

    #[test]
    fn latent_decay_matches_companion_modulus() {
        let net = paper_a().scaled(0.9 / paper_a().spectral_radius().unwrap()).unwrap();
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.3, 0.7], true).unwrap();
        let lam = latent_decay(&spec, &net).unwrap();
        // roots of lambda^2 - 0.27 lambda - 0.63
        let exact = (0.27 + (0.27f64 * 0.27 + 4.0 * 0.63).sqrt()) / 2.0;
        assert!((lam - exact).abs() < 1e-12);
        assert!(lam > 0.9);
    }

    #[test]
    fn fully_observed_state_has_zero_initial_covariance() {
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.5, 0.5], true).unwrap();
        let agg = aggregate(&spec, &paper_a(), 1).unwrap();
        let pre = DMatrix::from_element(3, 1, 0.3);
        let ss = build_state_space(&agg, &DMatrix::identity(3, 3), &pre).unwrap();
        assert!(ss.init_cov.iter().all(|v| *v == 0.0));
        let agg2 = aggregate(&spec, &paper_a(), 2).unwrap();
        let ss = build_state_space(&agg2, &DMatrix::zeros(3, 3), &DMatrix::from_element(3, 2, 1.0))
            .unwrap();
        assert!(ss.init_cov.iter().all(|v| *v == 0.0));
        assert!(build_state_space(&agg2, &DMatrix::identity(3, 3), &pre).is_err());
    }

    #[test]
    fn one_step_filter_matches_gaussian_density() {
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.5, 0.5], true).unwrap();
        let agg = aggregate(&spec, &paper_a(), 1).unwrap();
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 1.5]);
        let y0 = DVector::from_vec(vec![0.4, -0.3, 1.0]);
        let y1 = DVector::from_vec(vec![0.1, 0.2, -0.5]);
        let ss = build_state_space(&agg, &sigma, &DMatrix::from_column_slice(3, 1, y0.as_slice()))
            .unwrap();
        let ll = kalman_loglik(&ss, &DMatrix::from_column_slice(3, 1, y1.as_slice())).unwrap();
        let mean = &agg.phi[0] * &y0;
        let mut q = DMatrix::zeros(6, 6);
        q.view_mut((0, 0), (3, 3)).copy_from(&sigma);
        q.view_mut((3, 3), (3, 3)).copy_from(&sigma);
        let cov = &agg.theta[0] * q * agg.theta[0].transpose();
        let want = crate::linalg::mvn_logpdf(&y1, &mean, &cov).unwrap();
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_noise_is_reported() {
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.5, 0.5], true).unwrap();
        let agg = aggregate(&spec, &paper_a(), 1).unwrap();
        let ss =
            build_state_space(&agg, &DMatrix::zeros(3, 3), &DMatrix::from_element(3, 1, 1.0)).unwrap();
        let err = kalman_loglik(&ss, &DMatrix::from_element(3, 2, 0.0)).unwrap_err();
        assert!(err.to_string().contains("step 0"));
    }

    #[test]
    fn sub_period_irf() {
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.6, 0.4], true).unwrap();
        let irf = timeagg_irf(&spec, &paper_a(), 2, 1).unwrap();
        assert!((&irf.responses[0] - paper_a().adjacency() * 0.6).abs().max() < 1e-15);
        assert!(timeagg_irf(&spec, &paper_a(), 2, 2).is_err());
    }
}
