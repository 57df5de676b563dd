//! Parameters, the truncated-simplex prior and the proposal used to start
//! the particle cloud.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{NetvarError, Result};
use crate::linalg::ln_factorial;
use crate::network::Network;

/// `theta = (delta, sigma)`. Only the first `p* - 1` timing weights are
/// free; the last one is `1 - sum(delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParam {
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ThetaParam {
    pub fn p_star(&self) -> usize {
        self.delta.len() + 1
    }

    /// All `p*` weights including the implied last one.
    pub fn full_delta(&self) -> Vec<f64> {
        let mut d = self.delta.clone();
        d.push(1.0 - self.delta.iter().sum::<f64>());
        d
    }

    /// `delta_l >= 0`, `sum <= 1`, `sigma_i > 0`.
    pub fn is_feasible(&self) -> bool {
        self.delta.iter().all(|d| *d >= 0.0 && d.is_finite())
            && self.delta.iter().sum::<f64>() <= 1.0
            && self.sigma.iter().all(|s| *s > 0.0 && s.is_finite())
    }

    /// Every weight, including the implied one, strictly positive.
    pub fn is_interior(&self) -> bool {
        self.full_delta().iter().all(|d| *d > 0.0) && self.is_feasible()
    }

    pub fn dim(&self) -> usize {
        self.delta.len() + self.sigma.len()
    }
}

/// Simplex point from uniforms `x_1..x_{p*-1}` by nested inverse CDFs.
pub fn simplex_from_uniforms(x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut delta = vec![0.0; k];
    let mut remaining = 1.0;
    for l in (1..=k).rev() {
        let frac = 1.0 - (1.0 - x[l - 1]).powf(1.0 / l as f64);
        delta[l - 1] = remaining * frac;
        remaining -= delta[l - 1];
    }
    delta
}

/// Uniform draw of the free weights; empty for `p* = 1`.
pub fn sample_simplex_prior<R: Rng + ?Sized>(p_star: usize, rng: &mut R) -> Vec<f64> {
    let x: Vec<f64> = (0..p_star.saturating_sub(1)).map(|_| rng.random::<f64>()).collect();
    simplex_from_uniforms(&x)
}

/// `s_bar_i = multiplier * Var(y_i)`.
pub fn sigma_bounds(values: &DMatrix<f64>, multiplier: f64) -> Vec<f64> {
    let t = values.ncols() as f64;
    values
        .row_iter()
        .map(|row| {
            let mean = row.sum() / t;
            multiplier * row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t
        })
        .collect()
}

/// `ln (p*-1)! - sum ln s_bar_i`: the log prior density on its support.
pub fn log_prior_constant(p_star: usize, s_bar: &[f64]) -> f64 {
    ln_factorial(p_star.saturating_sub(1)) - s_bar.iter().map(|s| s.ln()).sum::<f64>()
}

/// Log prior density. The upper bounds on `sigma` are not enforced, so the
/// density is constant wherever `theta` is feasible.
pub fn log_prior(theta: &ThetaParam, s_bar: &[f64]) -> f64 {
    if !theta.is_feasible() {
        return f64::NEG_INFINITY;
    }
    log_prior_constant(theta.p_star(), s_bar)
}

/// Indices `i` with `sigma_i > s_bar_i`.
pub fn bound_violations(theta: &ThetaParam, s_bar: &[f64]) -> Vec<usize> {
    theta.sigma.iter().zip(s_bar).enumerate().filter(|(_, (s, b))| s > b).map(|(i, _)| i).collect()
}

/// Diagonals of `V = Y Y' / T` and `A V A'`, enough to evaluate the
/// moment estimate of the innovation scales for any timing weights.
#[derive(Debug, Clone)]
pub struct SigmaMoments {
    v_diag: Vec<f64>,
    ava_diag: Vec<f64>,
}

impl SigmaMoments {
    pub fn new(net: &Network, values: &DMatrix<f64>) -> Result<Self> {
        let n = net.n();
        if values.nrows() != n || values.ncols() == 0 {
            return Err(NetvarError::Validation(format!(
                "panel is {}x{}, network has {n} units",
                values.nrows(),
                values.ncols()
            )));
        }
        let v = values * values.transpose() / values.ncols() as f64;
        let a = net.adjacency();
        let ava = a * &v * a.transpose();
        Ok(SigmaMoments { v_diag: v.diagonal().iter().cloned().collect(), ava_diag: ava.diagonal().iter().cloned().collect() })
    }

    /// `sqrt(diag(V - (sum delta_l^2) A V A'))`, floored at `1e-3` times the
    /// sample standard deviation. Floored units are listed separately.
    pub fn mode(&self, delta: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let s2: f64 = delta.iter().map(|d| d * d).sum();
        let mut floored = Vec::new();
        let sd = self
            .v_diag
            .iter()
            .zip(&self.ava_diag)
            .enumerate()
            .map(|(i, (v, ava))| {
                let floor = 1e-3 * v.sqrt().max(f64::MIN_POSITIVE);
                let s = v - s2 * ava;
                if s > 0.0 && s.sqrt() >= floor {
                    s.sqrt()
                } else {
                    floored.push(i);
                    floor
                }
            })
            .collect();
        (sd, floored)
    }
}

/// Method-of-moments innovation standard deviations given the timing
/// weights: `Sigma = V - (sum delta_l^2) A V A'`, `V = Y Y' / T`.
///
/// Diagonal entries that come out non-positive are floored at `1e-3` times
/// the sample standard deviation and reported in the second return value.
pub fn mm_sigma_proposal(
    delta: &[f64],
    net: &Network,
    values: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<usize>)> {
    Ok(SigmaMoments::new(net, values)?.mode(delta))
}

/// Shape of the inverse-gamma proposal for each `sigma_i`.
pub const PROPOSAL_SHAPE: f64 = 3.0;

/// Inverse-gamma proposal with shape [`PROPOSAL_SHAPE`] and mode `mode`.
#[derive(Debug, Clone, Copy)]
pub struct InvGammaProposal {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaProposal {
    pub fn with_mode(mode: f64) -> Self {
        InvGammaProposal { shape: PROPOSAL_SHAPE, scale: mode * (PROPOSAL_SHAPE + 1.0) }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("valid gamma parameters");
        1.0 / g.sample(rng)
    }
}

/// Start-up density `g(theta)`: uniform simplex weights times independent
/// inverse-gamma scales centred on the moment estimate.
#[derive(Debug, Clone)]
pub struct InitialProposal {
    pub moments: SigmaMoments,
    pub p_star: usize,
}

impl InitialProposal {
    pub fn new(net: &Network, values: &DMatrix<f64>, p_star: usize) -> Result<Self> {
        Ok(InitialProposal { moments: SigmaMoments::new(net, values)?, p_star })
    }

    fn scales(&self, full_delta: &[f64]) -> Vec<InvGammaProposal> {
        self.moments.mode(full_delta).0.into_iter().map(InvGammaProposal::with_mode).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ThetaParam {
        let delta = sample_simplex_prior(self.p_star, rng);
        let mut theta = ThetaParam { delta, sigma: Vec::new() };
        theta.sigma = self.scales(&theta.full_delta()).iter().map(|p| p.sample(rng)).collect();
        theta
    }

    pub fn ln_density(&self, theta: &ThetaParam) -> f64 {
        if !theta.is_feasible() {
            return f64::NEG_INFINITY;
        }
        let props = self.scales(&theta.full_delta());
        let sigma: f64 = props.iter().zip(&theta.sigma).map(|(p, s)| p.ln_pdf(*s)).sum();
        ln_factorial(self.p_star - 1) + sigma
    }
}

/// Maps interior `theta` to unconstrained coordinates
/// `(ln(delta_l / delta_{p*}), ln sigma_i)`.
pub fn to_unconstrained(theta: &ThetaParam) -> Vec<f64> {
    let full = theta.full_delta();
    let last = full[full.len() - 1];
    theta.delta.iter().map(|d| (d / last).ln()).chain(theta.sigma.iter().map(|s| s.ln())).collect()
}

/// Inverse of [`to_unconstrained`].
pub fn from_unconstrained(u: &[f64], p_star: usize) -> ThetaParam {
    let k = p_star - 1;
    let gamma = &u[..k];
    // softmax with an implicit zero for the last weight
    let top = gamma.iter().cloned().fold(0.0f64, f64::max);
    let e: Vec<f64> = gamma.iter().map(|g| (g - top).exp()).collect();
    let denom = (-top).exp() + e.iter().sum::<f64>();
    let delta = e.iter().map(|v| v / denom).collect();
    let sigma = u[k..].iter().map(|v| v.exp()).collect();
    ThetaParam { delta, sigma }
}

/// `ln |det d u / d theta| = -sum_{l<=p*} ln delta_l - sum_i ln sigma_i`.
pub fn log_jacobian(theta: &ThetaParam) -> f64 {
    -theta.full_delta().iter().map(|d| d.ln()).sum::<f64>()
        - theta.sigma.iter().map(|s| s.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_cdf_examples() {
        assert!((simplex_from_uniforms(&[0.37])[0] - 0.37).abs() < 1e-15);
        let d = simplex_from_uniforms(&[0.2, 0.75]);
        assert!((d[1] - 0.5).abs() < 1e-15);
        assert!((d[0] - 0.5 * 0.2).abs() < 1e-15);
        assert!(simplex_from_uniforms(&[]).is_empty());
    }

    #[test]
    fn prior_values() {
        let s_bar = [2.0, 3.0];
        let theta = ThetaParam { delta: vec![0.2, 0.3], sigma: vec![1.0, 10.0] };
        let want = 2f64.ln() - 6f64.ln();
        assert!((log_prior(&theta, &s_bar) - want).abs() < 1e-15);
        assert_eq!(bound_violations(&theta, &s_bar), vec![1]);
        let bad = ThetaParam { delta: vec![0.7, 0.6], sigma: vec![1.0, 1.0] };
        assert_eq!(log_prior(&bad, &s_bar), f64::NEG_INFINITY);
    }

    #[test]
    fn transform_round_trip() {
        let theta = ThetaParam { delta: vec![0.1, 0.6], sigma: vec![0.5, 2.0] };
        let back = from_unconstrained(&to_unconstrained(&theta), 3);
        for (a, b) in back.delta.iter().zip(&theta.delta) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in back.sigma.iter().zip(&theta.sigma) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_jacobian_matches_determinant() {
        let theta = ThetaParam { delta: vec![0.2, 0.5], sigma: vec![0.7] };
        let full = theta.full_delta();
        let mut j = DMatrix::from_element(3, 3, 0.0);
        for l in 0..2 {
            for m in 0..2 {
                j[(l, m)] = 1.0 / full[2] + if l == m { 1.0 / full[l] } else { 0.0 };
            }
        }
        j[(2, 2)] = 1.0 / theta.sigma[0];
        assert!((j.determinant().ln() - log_jacobian(&theta)).abs() < 1e-12);
    }

    #[test]
    fn moment_proposal_ar1_identity() {
        let net = Network::from_rows(1, &[1.0]).unwrap();
        let y = DMatrix::from_row_slice(1, 4, &[1.0, -2.0, 0.5, 1.5]);
        let (sd, floored) = mm_sigma_proposal(&[0.6], &net, &y).unwrap();
        let v: f64 = (1.0 + 4.0 + 0.25 + 2.25) / 4.0;
        assert!((sd[0] - ((1.0 - 0.36) * v).sqrt()).abs() < 1e-14);
        assert!(floored.is_empty());
        let (sd, floored) = mm_sigma_proposal(&[1.0], &net, &y).unwrap();
        assert_eq!(floored, vec![0]);
        assert!(sd[0] > 0.0);
    }

    #[test]
    fn inverse_gamma_mode_and_density() {
        let p = InvGammaProposal::with_mode(0.8);
        let at = |x: f64| p.ln_pdf(x);
        assert!(at(0.8) > at(0.79) && at(0.8) > at(0.81));
        // numerical normalisation check
        let h = 1e-3;
        let total: f64 = (1..40_000).map(|i| at(i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean: f64 = (0..20_000).map(|_| p.sample(&mut rng)).sum::<f64>() / 20_000.0;
        // mean of IG(3, b) is b / 2
        assert!((mean - p.scale / 2.0).abs() < 0.05 * p.scale);
    }
}
