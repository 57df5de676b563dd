//! Log-likelihood of `theta = (delta, sigma)` given the network.

use nalgebra::DMatrix;

use crate::error::{NetvarError, Result};
use crate::linalg::LN_2PI;
use crate::model::{HighFreqSpec, SamplingRatio};
use crate::network::Network;
use crate::timeagg::{aggregate_with_powers, conditional_loglik, default_truncation, max_power, powers_upto};

use super::prior::ThetaParam;

/// Presample length a specification needs: the observed lag span for
/// `q* <= 1`, the truncation lag otherwise.
pub fn required_presample(
    p_star: usize,
    q_star: SamplingRatio,
    net: &Network,
    truncation: Option<usize>,
) -> Result<usize> {
    if p_star == 0 {
        return Err(NetvarError::Validation("p* must be >= 1".into()));
    }
    match q_star {
        SamplingRatio::Every(1) => Ok(p_star),
        SamplingRatio::Slower(k) => Ok(p_star * k),
        SamplingRatio::Every(_) => match truncation {
            Some(0) => Err(NetvarError::Validation("truncation lag must be >= 1".into())),
            Some(p) => Ok(p),
            None => default_truncation(&uniform_spec(p_star, q_star), net),
        },
    }
}

fn uniform_spec(p_star: usize, q_star: SamplingRatio) -> HighFreqSpec {
    HighFreqSpec {
        p_star,
        q_star,
        delta: vec![1.0 / p_star as f64; p_star],
        simplex_constrained: true,
    }
}

/// Per-unit sums of squares and cross products of `y_t` and the network
/// lags `z_{l,t} = A y_{t - l s}`.
#[derive(Debug, Clone)]
struct DirectStats {
    syy: Vec<f64>,
    /// `syz[i][l]`
    syz: Vec<Vec<f64>>,
    /// `szz[i][l][m]`
    szz: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
enum Backend {
    Direct(DirectStats),
    Kalman { powers: Vec<DMatrix<f64>>, p: usize, values: DMatrix<f64>, net: Network },
}

/// Evaluates `ln p(Y | theta)` for one `(p*, q*)` specification on a fixed
/// scoring window `start..T`.
#[derive(Debug, Clone)]
pub struct LikelihoodEvaluator {
    p_star: usize,
    q_star: SamplingRatio,
    n: usize,
    start: usize,
    n_obs: usize,
    backend: Backend,
}

impl LikelihoodEvaluator {
    /// `start` defaults to the specification's own presample length and
    /// must not be smaller than it.
    pub fn new(
        values: &DMatrix<f64>,
        net: &Network,
        p_star: usize,
        q_star: SamplingRatio,
        start: Option<usize>,
        truncation: Option<usize>,
    ) -> Result<Self> {
        let n = net.n();
        if values.nrows() != n {
            return Err(NetvarError::Validation(format!(
                "panel has {} units, network has {n}",
                values.nrows()
            )));
        }
        let need = required_presample(p_star, q_star, net, truncation)?;
        let start = start.unwrap_or(need);
        if start < need {
            return Err(NetvarError::Validation(format!(
                "scoring start {start} is below the {need} presample periods this specification needs"
            )));
        }
        if start >= values.ncols() {
            return Err(NetvarError::Validation(format!(
                "panel has {} periods, nothing left after a presample of {start}",
                values.ncols()
            )));
        }
        let n_obs = values.ncols() - start;
        let backend = if q_star.aggregates() {
            let powers = powers_upto(net, max_power(&uniform_spec(p_star, q_star), need));
            Backend::Kalman { powers, p: need, values: values.clone(), net: net.clone() }
        } else {
            let stride = match q_star {
                SamplingRatio::Slower(k) => k,
                _ => 1,
            };
            Backend::Direct(direct_stats(values, net, p_star, stride, start))
        };
        Ok(LikelihoodEvaluator { p_star, q_star, n, start, n_obs, backend })
    }

    pub fn p_star(&self) -> usize {
        self.p_star
    }

    pub fn q_star(&self) -> SamplingRatio {
        self.q_star
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Number of scored periods.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// `-inf` for infeasible parameters or numerical failure.
    pub fn loglik(&self, theta: &ThetaParam) -> f64 {
        if theta.p_star() != self.p_star || theta.sigma.len() != self.n || !theta.is_feasible() {
            return f64::NEG_INFINITY;
        }
        let mut delta = theta.full_delta();
        let last = delta.len() - 1;
        delta[last] = delta[last].max(0.0);
        match &self.backend {
            Backend::Direct(stats) => direct_loglik(stats, &delta, &theta.sigma, self.n_obs),
            Backend::Kalman { powers, p, values, net } => {
                let spec = HighFreqSpec { p_star: self.p_star, q_star: self.q_star, delta, simplex_constrained: true };
                let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    self.n,
                    theta.sigma.iter().map(|s| s * s),
                ));
                aggregate_with_powers(&spec, net, *p, powers)
                    .and_then(|agg| conditional_loglik(&agg, &sigma, values, self.start))
                    .ok()
                    .filter(|v| v.is_finite())
                    .unwrap_or(f64::NEG_INFINITY)
            }
        }
    }
}

fn direct_stats(values: &DMatrix<f64>, net: &Network, p_star: usize, stride: usize, start: usize) -> DirectStats {
    let n = values.nrows();
    let t_end = values.ncols();
    let a = net.adjacency();
    // network lag of every column once
    let z_all = a * values;
    let mut syy = vec![0.0; n];
    let mut syz = vec![vec![0.0; p_star]; n];
    let mut szz = vec![vec![vec![0.0; p_star]; p_star]; n];
    for t in start..t_end {
        for i in 0..n {
            let y = values[(i, t)];
            syy[i] += y * y;
            for l in 0..p_star {
                let zl = z_all[(i, t - (l + 1) * stride)];
                syz[i][l] += y * zl;
                for m in l..p_star {
                    let zm = z_all[(i, t - (m + 1) * stride)];
                    szz[i][l][m] += zl * zm;
                }
            }
        }
    }
    for unit in szz.iter_mut() {
        for l in 0..p_star {
            for m in 0..l {
                unit[l][m] = unit[m][l];
            }
        }
    }
    DirectStats { syy, syz, szz }
}

fn direct_loglik(stats: &DirectStats, delta: &[f64], sigma: &[f64], n_obs: usize) -> f64 {
    let t = n_obs as f64;
    let mut ll = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        let mut ssr = stats.syy[i];
        for (l, dl) in delta.iter().enumerate() {
            ssr -= 2.0 * dl * stats.syz[i][l];
            for (m, dm) in delta.iter().enumerate() {
                ssr += dl * dm * stats.szz[i][l][m];
            }
        }
        ll += -0.5 * t * LN_2PI - t * s.ln() - ssr.max(0.0) / (2.0 * s * s);
    }
    ll
}

/// Residual sum of squares per unit at the given full weights, for `q* <= 1`.
pub fn direct_ssr(
    values: &DMatrix<f64>,
    net: &Network,
    delta: &[f64],
    q_star: SamplingRatio,
    start: usize,
) -> Result<Vec<f64>> {
    let stride = match q_star {
        SamplingRatio::Every(1) => 1,
        SamplingRatio::Slower(k) => k,
        SamplingRatio::Every(_) => {
            return Err(NetvarError::Validation("direct residuals need q* <= 1".into()))
        }
    };
    if start < delta.len() * stride || start >= values.ncols() {
        return Err(NetvarError::Validation("scoring start out of range".into()));
    }
    let n = values.nrows();
    let mut ssr = vec![0.0; n];
    for t in start..values.ncols() {
        let mut fit = nalgebra::DVector::zeros(n);
        for (l, d) in delta.iter().enumerate() {
            fit += net.adjacency() * values.column(t - (l + 1) * stride) * *d;
        }
        for i in 0..n {
            ssr[i] += (values[(i, t)] - fit[i]).powi(2);
        }
    }
    Ok(ssr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mvn_logpdf;
    use crate::model::simulate_snapshots;

    #[test]
    fn direct_matches_gaussian_density() {
        let net = Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0]).unwrap();
        let spec = HighFreqSpec::new(SamplingRatio::Slower(2), vec![0.4, 0.3], false).unwrap();
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5, 2.0]));
        let (_, obs) = simulate_snapshots(&spec, &net, &sigma, 50, None, 4, false).unwrap();
        let ev = LikelihoodEvaluator::new(&obs.values, &net, 2, SamplingRatio::Slower(2), Some(6), None).unwrap();
        let theta = ThetaParam { delta: vec![0.35], sigma: vec![1.1, 0.6, 1.5] };
        let got = ev.loglik(&theta);
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.21, 0.36, 2.25]));
        let mut want = 0.0;
        for t in 6..50 {
            let mean = net.adjacency() * (obs.values.column(t - 2) * 0.35 + obs.values.column(t - 4) * 0.65);
            want += mvn_logpdf(&obs.values.column(t).into_owned(), &mean, &cov).unwrap();
        }
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert_eq!(ev.n_obs(), 44);
        assert!(LikelihoodEvaluator::new(&obs.values, &net, 2, SamplingRatio::Slower(2), Some(3), None).is_err());
    }

    #[test]
    fn infeasible_theta_has_zero_likelihood() {
        let net = Network::from_rows(2, &[0.0, 0.5, 0.5, 0.0]).unwrap();
        let y = DMatrix::from_fn(2, 30, |i, t| ((i + 3 * t) as f64).sin());
        let ev = LikelihoodEvaluator::new(&y, &net, 2, SamplingRatio::Every(1), None, None).unwrap();
        let bad = ThetaParam { delta: vec![1.2], sigma: vec![1.0, 1.0] };
        assert_eq!(ev.loglik(&bad), f64::NEG_INFINITY);
        let bad = ThetaParam { delta: vec![0.2], sigma: vec![1.0, -1.0] };
        assert_eq!(ev.loglik(&bad), f64::NEG_INFINITY);
    }
}
