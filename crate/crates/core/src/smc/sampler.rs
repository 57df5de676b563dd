//! Adaptive-tempering sequential Monte Carlo for `theta = (delta, sigma)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::model::SamplingRatio;
use crate::network::Network;
use crate::output::fmt_num;
use crate::panel::Panel;

use super::likelihood::LikelihoodEvaluator;
use super::prior::{
    bound_violations, from_unconstrained, log_jacobian, log_prior_constant, sigma_bounds,
    to_unconstrained, InitialProposal, ThetaParam,
};

/// Sampler settings. Every field has a default, so partial JSON works.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub particles: usize,
    /// Metropolis steps per particle per stage.
    pub n_mh: usize,
    /// Target effective sample size as a fraction of `particles`.
    pub ess_target: f64,
    pub seed: u64,
    /// `s_bar_i = sigma_bound_multiplier * Var(y_i)`.
    pub sigma_bound_multiplier: f64,
    pub initial_scale: f64,
    pub target_acceptance: f64,
    pub max_stages: usize,
    /// Truncation lag for `q* >= 2`; chosen from the network when absent.
    pub truncation: Option<usize>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 1024,
            n_mh: 2,
            ess_target: 0.8,
            seed: 0,
            sigma_bound_multiplier: 5.0,
            initial_scale: 0.5,
            target_acceptance: 0.25,
            max_stages: 500,
            truncation: None,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(NetvarError::Validation("need at least 2 particles".into()));
        }
        if !(self.ess_target > 0.0 && self.ess_target < 1.0) {
            return Err(NetvarError::Validation("ess_target must lie in (0, 1)".into()));
        }
        if !(self.sigma_bound_multiplier > 0.0) {
            return Err(NetvarError::Validation("sigma_bound_multiplier must be positive".into()));
        }
        if !(self.initial_scale > 0.0) || !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(NetvarError::Validation("invalid mutation tuning".into()));
        }
        if self.max_stages == 0 {
            return Err(NetvarError::Validation("max_stages must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weighted particle approximation of a tempered posterior.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleCloud {
    pub particles: Vec<ThetaParam>,
    pub log_weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    pub phi: f64,
    pub stage: usize,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Weights summing to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize(&self.log_weights)
    }

    /// `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        ess(&self.normalized_weights())
    }

    /// Weighted mean of the free weights and the scales.
    pub fn mean(&self) -> ThetaParam {
        let w = self.normalized_weights();
        let first = &self.particles[0];
        let mut delta = vec![0.0; first.delta.len()];
        let mut sigma = vec![0.0; first.sigma.len()];
        for (p, wi) in self.particles.iter().zip(&w) {
            for (acc, v) in delta.iter_mut().zip(&p.delta) {
                *acc += wi * v;
            }
            for (acc, v) in sigma.iter_mut().zip(&p.sigma) {
                *acc += wi * v;
            }
        }
        ThetaParam { delta, sigma }
    }
}

fn normalize(log_w: &[f64]) -> Vec<f64> {
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return vec![1.0 / log_w.len() as f64; log_w.len()];
    }
    let w: Vec<f64> = log_w.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

/// Information criteria and marginal likelihood for one specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub p_star: usize,
    pub q_star: SamplingRatio,
    /// Log marginal data density under the normalised prior.
    pub log_mdd: f64,
    /// The same without the prior normalising constant.
    pub log_mdd_raw: f64,
    pub loglik_max: f64,
    pub bic: f64,
    pub aic: f64,
    pub n_params: usize,
    /// Scored observations per unit.
    pub n_obs: usize,
}

impl ModelScore {
    pub fn new(p_star: usize, q_star: SamplingRatio, n: usize, n_obs: usize, loglik_max: f64, log_mdd: f64, log_mdd_raw: f64) -> Self {
        let n_params = n + p_star - 1;
        let k = n_params as f64;
        ModelScore {
            p_star,
            q_star,
            log_mdd,
            log_mdd_raw,
            loglik_max,
            bic: -2.0 * loglik_max + k * ((n * n_obs) as f64).ln(),
            aic: -2.0 * loglik_max + 2.0 * k,
            n_params,
            n_obs,
        }
    }
}

/// Per-stage diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub phi: f64,
    /// Effective sample size of the reweighted cloud before resampling.
    pub ess: f64,
    pub log_increment: f64,
    pub scale: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmcResult {
    pub cloud: ParticleCloud,
    pub score: ModelScore,
    /// Particle with the highest likelihood.
    pub map: ThetaParam,
    pub map_loglik: f64,
    pub posterior_mean: ThetaParam,
    pub stages: Vec<StageRecord>,
    pub sigma_bounds: Vec<f64>,
    /// Units whose posterior mean scale exceeds its prior bound.
    pub bound_exceeded: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SmcResult {
    /// Shortest interval holding `mass` of the draws of `delta_l`
    /// (`l` 1-based, the last weight included).
    pub fn delta_hpd(&self, l: usize, mass: f64) -> (f64, f64) {
        let draws: Vec<f64> = self.cloud.particles.iter().map(|p| p.full_delta()[l - 1]).collect();
        hpd_interval(&draws, &self.cloud.normalized_weights(), mass)
    }

    pub fn sigma_hpd(&self, i: usize, mass: f64) -> (f64, f64) {
        let draws: Vec<f64> = self.cloud.particles.iter().map(|p| p.sigma[i]).collect();
        hpd_interval(&draws, &self.cloud.normalized_weights(), mass)
    }

    /// CSV with columns `particle, weight, delta_1.., sigma_1.., loglik`.
    pub fn write_posterior_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let first = &self.cloud.particles[0];
        let mut header = vec!["particle".to_string(), "weight".to_string()];
        header.extend((1..=first.p_star()).map(|l| format!("delta_{l}")));
        header.extend((1..=first.sigma.len()).map(|i| format!("sigma_{i}")));
        header.push("loglik".into());
        w.write_record(&header)?;
        let weights = self.cloud.normalized_weights();
        for (i, p) in self.cloud.particles.iter().enumerate() {
            let mut row = vec![i.to_string(), fmt_num(weights[i])];
            row.extend(p.full_delta().iter().map(|v| fmt_num(*v)));
            row.extend(p.sigma.iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(self.cloud.log_likelihoods[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest weighted interval with at least `mass` probability.
pub fn hpd_interval(draws: &[f64], weights: &[f64], mass: f64) -> (f64, f64) {
    let mut idx: Vec<usize> = (0..draws.len()).collect();
    idx.sort_by(|a, b| draws[*a].total_cmp(&draws[*b]));
    let x: Vec<f64> = idx.iter().map(|i| draws[*i]).collect();
    let w: Vec<f64> = idx.iter().map(|i| weights[*i]).collect();
    let total: f64 = w.iter().sum();
    let need = mass * total;
    let mut best = (x[0], x[x.len() - 1]);
    let mut hi = 0;
    let mut acc = 0.0;
    for lo in 0..x.len() {
        while hi < x.len() && acc < need - 1e-12 * total {
            acc += w[hi];
            hi += 1;
        }
        if acc < need - 1e-12 * total {
            break;
        }
        if x[hi - 1] - x[lo] < best.1 - best.0 {
            best = (x[lo], x[hi - 1]);
        }
        acc -= w[lo];
    }
    best
}

/// RNG for particle `i` at `stage`, independent of thread scheduling.
pub fn particle_rng(seed: u64, stage: usize, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 32) | i as u64);
    rng
}

fn stage_rng(seed: u64, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - stage as u64);
    rng
}

/// Result of [`mutate_particle`].
#[derive(Debug, Clone)]
pub struct Mutation<T> {
    pub theta: ThetaParam,
    pub log_target: f64,
    pub aux: T,
    pub accepted: usize,
}

/// `n_mh` random-walk Metropolis steps on the tempered target.
///
/// Interior points move in `(ln(delta_l / delta_{p*}), ln sigma)` with
/// proposal `u + scale * chol * z` and the Jacobian term
/// `ln|J(theta)| - ln|J(v)|` in the acceptance ratio. Points with a zero
/// weight move by a reflected Gaussian step in the original coordinates.
/// `target` returns the log target and any by-products to keep.
#[allow(clippy::too_many_arguments)]
pub fn mutate_particle<T: Clone, F, R>(
    theta: &ThetaParam,
    current: (f64, T),
    target: &F,
    scale: f64,
    chol: &DMatrix<f64>,
    n_mh: usize,
    rng: &mut R,
) -> Mutation<T>
where
    F: Fn(&ThetaParam) -> (f64, T),
    R: Rng + ?Sized,
{
    let p_star = theta.p_star();
    let dim = theta.dim();
    let mut theta = theta.clone();
    let (mut log_target, mut aux) = current;
    let mut accepted = 0;
    for _ in 0..n_mh {
        let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = chol * z * scale;
        let (proposal, log_correction) = if theta.is_interior() {
            let u = to_unconstrained(&theta);
            let u_new: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let v = from_unconstrained(&u_new, p_star);
            if !v.is_interior() {
                // underflow to the boundary counts as a rejection
                continue;
            }
            let corr = log_jacobian(&theta) - log_jacobian(&v);
            (v, corr)
        } else {
            (reflected_step(&theta, step.as_slice()), 0.0)
        };
        let (lt, a) = target(&proposal);
        let log_alpha = lt - log_target + log_correction;
        let u: f64 = rng.random();
        if lt > f64::NEG_INFINITY && (log_alpha >= 0.0 || u.ln() < log_alpha) {
            theta = proposal;
            log_target = lt;
            aux = a;
            accepted += 1;
        }
    }
    Mutation { theta, log_target, aux, accepted }
}

/// Gaussian step with reflection into `delta >= 0, sum <= 1, sigma > 0`.
/// The `delta` part is scaled by `0.1` and `sigma_i` by `sigma_i`.
fn reflected_step(theta: &ThetaParam, step: &[f64]) -> ThetaParam {
    let k = theta.delta.len();
    let mut delta: Vec<f64> = theta.delta.iter().zip(step).map(|(d, s)| d + 0.1 * s).collect();
    for _ in 0..64 {
        for d in delta.iter_mut() {
            *d = d.abs();
        }
        let sum: f64 = delta.iter().sum();
        if sum <= 1.0 {
            break;
        }
        let shift = 2.0 * (sum - 1.0) / k as f64;
        for d in delta.iter_mut() {
            *d -= shift;
        }
    }
    if delta.iter().any(|d| *d < 0.0) || delta.iter().sum::<f64>() > 1.0 {
        delta = theta.delta.clone();
    }
    let sigma = theta
        .sigma
        .iter()
        .zip(&step[k..])
        .map(|(s, z)| {
            let v = (s + s * z).abs();
            if v > 0.0 { v } else { *s }
        })
        .collect();
    ThetaParam { delta, sigma }
}

fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = (u + i as f64) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Proposal factor from the cloud covariance in unconstrained coordinates.
fn proposal_factor(particles: &[ThetaParam]) -> DMatrix<f64> {
    let dim = particles[0].dim();
    let us: Vec<Vec<f64>> = particles.iter().filter(|p| p.is_interior()).map(to_unconstrained).collect();
    if us.len() < 2 {
        return DMatrix::identity(dim, dim) * 0.1;
    }
    let m = us.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| us.iter().map(|u| u[j]).sum::<f64>() / m).collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for u in &us {
        for a in 0..dim {
            for b in 0..=a {
                cov[(a, b)] += (u[a] - mean[a]) * (u[b] - mean[b]) / m;
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let jitter = 1e-10 * (cov.trace() / dim as f64).max(1e-12);
    let stabilized = &cov + DMatrix::identity(dim, dim) * jitter;
    match stabilized.clone().cholesky() {
        Some(c) => c.l(),
        None => DMatrix::from_diagonal(&stabilized.diagonal().map(|v| v.max(1e-12).sqrt())),
    }
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    loglik: f64,
    log_proposal: f64,
}

/// Runs the sampler on `panel` for the specification `(p*, q*)`.
///
/// `start` fixes the first scored period (several specifications compared
/// on one panel must share it); by default it is the specification's own
/// presample length.
pub fn run_smc(
    panel: &Panel,
    net: &Network,
    p_star: usize,
    q_star: SamplingRatio,
    config: &SmcConfig,
    start: Option<usize>,
) -> Result<SmcResult> {
    config.validate()?;
    let values = &panel.values;
    let ev = LikelihoodEvaluator::new(values, net, p_star, q_star, start, config.truncation)?;
    let s_bar = sigma_bounds(values, config.sigma_bound_multiplier);
    run_smc_with(&ev, &InitialProposal::new(net, values, p_star)?, &s_bar, config)
}

/// [`run_smc`] with a prepared likelihood, start-up proposal and bounds.
pub fn run_smc_with(
    ev: &LikelihoodEvaluator,
    proposal: &InitialProposal,
    s_bar: &[f64],
    config: &SmcConfig,
) -> Result<SmcResult> {
    config.validate()?;
    let n_part = config.particles;
    let p_star = ev.p_star();
    let lp = log_prior_constant(p_star, s_bar);
    let evaluate = |theta: &ThetaParam| Eval { loglik: ev.loglik(theta), log_proposal: proposal.ln_density(theta) };

    let initial: Vec<(ThetaParam, Eval)> = (0..n_part)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(config.seed, 0, i);
            let theta = proposal.sample(&mut rng);
            let e = evaluate(&theta);
            (theta, e)
        })
        .collect();
    let (mut particles, mut evals): (Vec<ThetaParam>, Vec<Eval>) = initial.into_iter().unzip();
    if evals.iter().all(|e| e.loglik == f64::NEG_INFINITY) {
        return Err(NetvarError::Estimation("likelihood is zero at every initial particle".into()));
    }

    let mut phi = 0.0;
    let mut scale = config.initial_scale;
    let mut log_mdd = 0.0;
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let mut stage = 0;
    while phi < 1.0 {
        stage += 1;
        if stage > config.max_stages {
            return Err(NetvarError::Estimation(format!(
                "tempering did not reach 1 within {} stages (phi = {phi:.3e})",
                config.max_stages
            )));
        }
        // log of p(Y|theta) p(theta) / g(theta)
        let ratio: Vec<f64> = evals
            .iter()
            .map(|e| {
                if e.loglik == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    e.loglik + lp - e.log_proposal
                }
            })
            .collect();
        let ess_at = |d: f64| -> f64 {
            let lw: Vec<f64> = ratio.iter().map(|r| d * r).collect();
            ess(&normalize(&lw))
        };
        let target = config.ess_target * n_part as f64;
        let remaining = 1.0 - phi;
        let delta = if ess_at(remaining) >= target {
            remaining
        } else {
            let (mut lo, mut hi) = (0.0, remaining);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if ess_at(mid) >= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo <= 1e-14 {
                return Err(NetvarError::Estimation(format!(
                    "effective sample size collapsed at phi = {phi:.6e}; tempering step at minimum"
                )));
            }
            lo
        };
        let new_phi = if delta == remaining { 1.0 } else { phi + delta };
        let log_inc: Vec<f64> = ratio.iter().map(|r| if *r == f64::NEG_INFINITY { *r } else { delta * r }).collect();
        let top = log_inc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let increment = top + (log_inc.iter().map(|v| (v - top).exp()).sum::<f64>() / n_part as f64).ln();
        log_mdd += increment;
        let weights = normalize(&log_inc);
        let stage_ess = ess(&weights);
        phi = new_phi;

        let idx = systematic_resample(&weights, stage_rng(config.seed, stage).random::<f64>());
        particles = idx.iter().map(|i| particles[*i].clone()).collect();
        evals = idx.iter().map(|i| evals[*i]).collect();

        let chol = proposal_factor(&particles);
        let tempered = |e: &Eval| phi * (e.loglik + lp) + (1.0 - phi) * e.log_proposal;
        let target_fn = |theta: &ThetaParam| {
            let e = evaluate(theta);
            let lt = if e.loglik == f64::NEG_INFINITY { f64::NEG_INFINITY } else { tempered(&e) };
            (lt, e)
        };
        let moved: Vec<Mutation<Eval>> = particles
            .par_iter()
            .zip(evals.par_iter())
            .enumerate()
            .map(|(i, (theta, e))| {
                let mut rng = particle_rng(config.seed, stage, i);
                let current = if e.loglik == f64::NEG_INFINITY { f64::NEG_INFINITY } else { tempered(e) };
                mutate_particle(theta, (current, *e), &target_fn, scale, &chol, config.n_mh, &mut rng)
            })
            .collect();
        let accepted: usize = moved.iter().map(|m| m.accepted).sum();
        let acceptance = accepted as f64 / (n_part * config.n_mh.max(1)) as f64;
        stages.push(StageRecord { phi, ess: stage_ess, log_increment: increment, scale, acceptance });
        particles = moved.iter().map(|m| m.theta.clone()).collect();
        evals = moved.iter().map(|m| m.aux).collect();
        let x = 16.0 * (acceptance - config.target_acceptance);
        scale *= 0.95 + 0.10 / (1.0 + (-x).exp());
    }

    let log_likelihoods: Vec<f64> = evals.iter().map(|e| e.loglik).collect();
    let best = (0..n_part)
        .max_by(|a, b| log_likelihoods[*a].total_cmp(&log_likelihoods[*b]))
        .expect("non-empty cloud");
    let cloud = ParticleCloud {
        particles,
        log_weights: vec![0.0; n_part],
        log_likelihoods,
        phi,
        stage,
    };
    let posterior_mean = cloud.mean();
    let bound_exceeded = bound_violations(&posterior_mean, s_bar);
    if !bound_exceeded.is_empty() {
        warnings.push(format!(
            "posterior mean scale exceeds its prior bound for units {bound_exceeded:?}"
        ));
    }
    let map = cloud.particles[best].clone();
    let map_loglik = cloud.log_likelihoods[best];
    let score = ModelScore::new(p_star, ev.q_star(), ev.n(), ev.n_obs(), map_loglik, log_mdd, log_mdd - lp);
    Ok(SmcResult {
        cloud,
        score,
        map,
        map_loglik,
        posterior_mean,
        stages,
        sigma_bounds: s_bar.to_vec(),
        bound_exceeded,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hpd_of_uniform_grid() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = vec![1.0; 100];
        let (lo, hi) = hpd_interval(&x, &w, 0.9);
        assert_eq!(hi - lo, 89.0);
        // skewed draws: interval hugs the mass
        let mut y: Vec<f64> = (0..90).map(|i| i as f64 * 0.01).collect();
        y.extend((0..10).map(|i| 100.0 + i as f64));
        let (lo, hi) = hpd_interval(&y, &vec![1.0; 100], 0.9);
        assert_eq!((lo, hi), (0.0, 0.89));
    }

    #[test]
    fn systematic_resampling_counts() {
        let idx = systematic_resample(&[0.5, 0.25, 0.25, 0.0], 0.5);
        assert_eq!(idx, vec![0, 0, 1, 2]);
    }

    #[test]
    fn identity_move_is_always_accepted() {
        let theta = ThetaParam { delta: vec![0.3], sigma: vec![1.0] };
        let target = |t: &ThetaParam| (-(t.sigma[0] - 2.0).powi(2), ());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chol = DMatrix::identity(2, 2);
        let out = mutate_particle(&theta, (target(&theta).0, ()), &target, 0.0, &chol, 10, &mut rng);
        assert_eq!(out.accepted, 10);
        assert_eq!(out.theta.sigma, theta.sigma);
    }

    #[test]
    fn jacobian_ratio_for_scale_only_move() {
        let a = ThetaParam { delta: vec![0.4], sigma: vec![0.5, 2.0] };
        let b = ThetaParam { delta: vec![0.4], sigma: vec![1.5, 2.0] };
        let ratio = log_jacobian(&a) - log_jacobian(&b);
        assert!((ratio - (1.5f64.ln() - 0.5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn reflected_step_stays_feasible() {
        let theta = ThetaParam { delta: vec![0.0, 0.9], sigma: vec![1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0).collect();
            assert!(reflected_step(&theta, &z).is_feasible());
        }
    }
}
