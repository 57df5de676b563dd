//! Gibbs sampler for the NVAR(p, 1) with priors `alpha ~ N(0, I/varphi)`,
//! `a_ij ~ Exponential(lambda)` and a flat prior on `Sigma`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{NetvarError, Result};
use crate::panel::Panel;

use super::{fit_joint, FitControl, LagMoments, PenaltyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_draws: usize,
    pub burn: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig { n_draws: 2000, burn: 500, seed: 0 }
    }
}

/// Retained draws, each normalised to `||alpha||_1 = 1`.
#[derive(Debug, Clone)]
pub struct GibbsDraws {
    pub alpha: Vec<DVector<f64>>,
    pub adjacency: Vec<DMatrix<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

fn mean_of<T>(xs: &[T], f: impl Fn(&T) -> DMatrix<f64>) -> DMatrix<f64> {
    let mut it = xs.iter();
    let mut acc = f(it.next().expect("at least one draw"));
    for x in it {
        acc += f(x);
    }
    acc / xs.len() as f64
}

fn sd_of<T>(xs: &[T], f: impl Fn(&T) -> DMatrix<f64>) -> DMatrix<f64> {
    let m = mean_of(xs, &f);
    let var = mean_of(xs, |x| (f(x) - &m).map(|v| v * v));
    let k = xs.len() as f64;
    var.map(|v| (v * k / (k - 1.0).max(1.0)).sqrt())
}

impl GibbsDraws {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha_mean(&self) -> DVector<f64> {
        mean_of(&self.alpha, |a| DMatrix::from_column_slice(a.len(), 1, a.as_slice())).column(0).into_owned()
    }

    pub fn alpha_sd(&self) -> DVector<f64> {
        sd_of(&self.alpha, |a| DMatrix::from_column_slice(a.len(), 1, a.as_slice())).column(0).into_owned()
    }

    pub fn adjacency_mean(&self) -> DMatrix<f64> {
        mean_of(&self.adjacency, |a| a.clone())
    }

    pub fn adjacency_sd(&self) -> DMatrix<f64> {
        sd_of(&self.adjacency, |a| a.clone())
    }

    pub fn sigma_mean(&self) -> DMatrix<f64> {
        mean_of(&self.sigma, |s| s.clone())
    }
}

/// Draw from `N(mu, sd^2)` truncated to `[0, inf)`. Inverse CDF on the upper
/// tail when the truncation point is moderate, exponential rejection
/// sampling when it lies far in the tail.
pub fn sample_positive_normal<R: Rng + ?Sized>(mu: f64, sd: f64, rng: &mut R) -> f64 {
    let a = -mu / sd;
    let z = if a < 5.0 {
        let tail = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        let u: f64 = rng.random::<f64>();
        // upper-tail probability strictly inside (0, tail]
        let pr = (1.0 - u) * tail;
        (std::f64::consts::SQRT_2 * erfc_inv(2.0 * pr)).max(a)
    } else {
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = a + e / rate;
            let u: f64 = rng.random::<f64>();
            if u <= (-0.5 * (z - rate) * (z - rate)).exp() {
                break z;
            }
        }
    };
    (mu + sd * z).max(0.0)
}

/// Draw from `IW(s, nu)` through the Bartlett decomposition of the matching
/// Wishart draw for `Sigma^{-1}`. Needs `nu >= n`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(s: &DMatrix<f64>, nu: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if nu < n {
        return Err(NetvarError::Estimation(format!(
            "inverse-Wishart degrees of freedom {nu} are below the dimension {n}; the sample is too short"
        )));
    }
    let l = s
        .clone()
        .cholesky()
        .ok_or_else(|| NetvarError::Estimation("residual cross-product is not positive definite".into()))?
        .l();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new((nu - i) as f64).expect("positive degrees of freedom");
        b[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            b[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // Sigma = L B'^{-1} B^{-1} L'
    let b_inv = b
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| NetvarError::Numeric("Bartlett factor is singular".into()))?;
    let k = l * b_inv.transpose();
    let mut sigma = &k * k.transpose();
    crate::linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| NetvarError::Estimation(format!("{what} is not positive definite")))
}

/// Gibbs sampler for `(alpha, A, Sigma)` of an NVAR(p, 1).
///
/// The chain starts at the penalised least-squares fit. Each sweep draws
/// `Sigma | alpha, A`, every link `a_ij | rest` from its truncated normal
/// conditional, then `alpha | A, Sigma`, and finally rescales to
/// `||alpha||_1 = 1` (the likelihood is invariant to this rescaling).
pub fn gibbs_nvar_p1(panel: &Panel, p: usize, penalty: &PenaltyConfig, config: &GibbsConfig) -> Result<GibbsDraws> {
    penalty.validate()?;
    if config.n_draws == 0 {
        return Err(NetvarError::Validation("n_draws must be >= 1".into()));
    }
    let mom = LagMoments::new(&panel.values, p)?;
    let n = mom.n;
    if mom.n_obs < n {
        return Err(NetvarError::Estimation(format!(
            "inverse-Wishart degrees of freedom {} are below the dimension {n}; the sample is too short",
            mom.n_obs
        )));
    }
    let start = fit_joint(panel, p, penalty, None, &FitControl { tol: 1e-6, max_iter: 200 })?;
    let mut alpha: Vec<f64> = start.alpha.iter().cloned().collect();
    let mut a = start.network.adjacency().clone();
    let lambda = penalty.lambda;
    let varphi = penalty.varphi;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = GibbsDraws { alpha: Vec::new(), adjacency: Vec::new(), sigma: Vec::new() };
    for sweep in 0..config.burn + config.n_draws {
        // Sigma | alpha, A
        let (g, c) = mom.z_moments(&alpha);
        let s_bar = mom.residual_cross(&a, &g, &c);
        let sigma = sample_inverse_wishart(&s_bar, mom.n_obs, &mut rng)?;
        let w = spd_inverse(&sigma, "Sigma draw")?;

        // A' | alpha, Sigma: vec(A') ~ N(vec(M), Sigma (x) G^{-1}) on the
        // positive orthant, drawn one coordinate at a time
        let g_inv = spd_inverse(&g, "network-lag cross-product")?;
        let ones = DMatrix::from_element(n, n, 1.0);
        let mean = &g_inv * (c.transpose() - ones * &sigma * lambda);
        let mut d = a.transpose() - &mean;
        let mut r = &g * &d * &w;
        for k in 0..n {
            for i in 0..n {
                let prec = g[(k, k)] * w[(i, i)];
                let others = r[(k, i)] - prec * d[(k, i)];
                let mu = mean[(k, i)] - others / prec;
                let x = sample_positive_normal(mu, prec.sqrt().recip(), &mut rng);
                let delta = x - mean[(k, i)] - d[(k, i)];
                if delta != 0.0 {
                    d[(k, i)] += delta;
                    for kk in 0..n {
                        let gk = g[(kk, k)] * delta;
                        for ii in 0..n {
                            r[(kk, ii)] += gk * w[(i, ii)];
                        }
                    }
                }
            }
        }
        a = (&mean + &d).transpose();
        a.iter_mut().for_each(|v| *v = v.max(0.0));

        // alpha | A, Sigma
        let (h, b) = mom.alpha_system(&a, Some(&w));
        let prec = h + DMatrix::identity(p, p) * varphi;
        let chol = prec
            .cholesky()
            .ok_or_else(|| NetvarError::Estimation("alpha posterior precision is singular".into()))?;
        let centre = chol.solve(&b);
        let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let shift = chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("triangular factor is invertible");
        alpha = (centre + shift).iter().cloned().collect();

        let c1: f64 = alpha.iter().map(|v| v.abs()).sum();
        if c1 > 0.0 && c1.is_finite() {
            alpha.iter_mut().for_each(|v| *v /= c1);
            a *= c1;
        }
        if sweep >= config.burn {
            out.alpha.push(DVector::from_vec(alpha.clone()));
            out.adjacency.push(a.clone());
            out.sigma.push(sigma);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, NvarModel};
    use crate::network::Network;

    #[test]
    fn positive_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mu, sd) in [(1.0, 1.0), (-1.0, 0.5), (-8.0, 1.0), (0.0, 2.0)] {
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_positive_normal(mu, sd, &mut rng)).collect();
            assert!(draws.iter().all(|x| *x >= 0.0));
            let m = draws.iter().sum::<f64>() / n as f64;
            // E[X] = mu + sd phi(a) / (1 - Phi(a)), a = -mu / sd
            let a = -mu / sd;
            let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let tail = 0.5 * erfc(a / std::f64::consts::SQRT_2);
            let want = mu + sd * phi / tail;
            let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!((m - want).abs() < 4.0 * (var / n as f64).sqrt(), "mu {mu}: {m} vs {want}");
        }
    }

    #[test]
    fn inverse_wishart_mean() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let nu = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..k {
            acc += sample_inverse_wishart(&s, nu, &mut rng).unwrap();
        }
        let mean = acc / k as f64;
        // E = S / (nu - n - 1)
        let want = &s / (nu as f64 - 3.0);
        assert!((&mean - &want).amax() < 0.01, "{mean} vs {want}");
        assert!(sample_inverse_wishart(&s, 1, &mut rng).is_err());
    }

    #[test]
    fn huge_lambda_pins_links_at_zero() {
        let net = Network::from_rows(3, &[0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0]).unwrap();
        let model = NvarModel::p1(&[0.8], net, DMatrix::identity(3, 3)).unwrap();
        let panel = simulate(&model, 300, None, 1, false).unwrap();
        let pen = PenaltyConfig { lambda: 1e6, varphi: 1.0, lambda_path: None };
        let cfg = GibbsConfig { n_draws: 200, burn: 50, seed: 3 };
        let draws = gibbs_nvar_p1(&panel, 1, &pen, &cfg).unwrap();
        assert!(draws.adjacency_mean().max() < 0.01);
    }

    #[test]
    fn chain_is_deterministic() {
        let net = Network::from_rows(2, &[0.0, 0.6, 0.4, 0.0]).unwrap();
        let model = NvarModel::p1(&[0.6, 0.3], net, DMatrix::identity(2, 2)).unwrap();
        let panel = simulate(&model, 200, None, 4, false).unwrap();
        let pen = PenaltyConfig { lambda: 0.1, varphi: 0.01, lambda_path: None };
        let cfg = GibbsConfig { n_draws: 30, burn: 10, seed: 9 };
        let a = gibbs_nvar_p1(&panel, 2, &pen, &cfg).unwrap();
        let b = gibbs_nvar_p1(&panel, 2, &pen, &cfg).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.alpha, b.alpha);
        assert!(a.alpha.iter().all(|x| (x.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12));
    }
}
