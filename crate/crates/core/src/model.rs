//! The NVAR(p, q) process `y_t = sum_l Phi_l y_{t-l} + u_t` with
//! `Phi_l = sum_g alpha_lg A^g`, its latent-frequency counterpart, stationarity
//! checks and Gaussian simulation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NetvarError, Result};
use crate::linalg::{check_covariance, symmetrize};
use crate::network::{dense_spectral_radius, Network};
use crate::panel::Panel;

/// An observed-frequency NVAR(p, q).
#[derive(Debug, Clone, PartialEq)]
pub struct NvarModel {
    /// `p x q` grid; row `l-1`, column `g-1` holds `alpha_lg`.
    alpha: DMatrix<f64>,
    network: Network,
    sigma: DMatrix<f64>,
}

impl NvarModel {
    /// Validates orders, the covariance and the bound `q <= n - 1`
    /// (relaxed to `q = 1` for a single unit).
    pub fn new(alpha: DMatrix<f64>, network: Network, sigma: DMatrix<f64>) -> Result<Self> {
        let (p, q) = alpha.shape();
        let n = network.n();
        if p == 0 || q == 0 {
            return Err(NetvarError::Validation("NVAR orders p and q must be >= 1".into()));
        }
        if q > (n.max(2) - 1) {
            return Err(NetvarError::Validation(format!(
                "connection order q = {q} exceeds n - 1 = {}",
                n.saturating_sub(1)
            )));
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(NetvarError::Validation("alpha has non-finite entries".into()));
        }
        if sigma.shape() != (n, n) {
            return Err(NetvarError::Validation(format!(
                "sigma is {}x{}, expected {n}x{n}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        check_covariance(&sigma, "sigma")?;
        Ok(NvarModel { alpha, network, sigma })
    }

    /// NVAR(p, 1) with lag weights `alpha`.
    pub fn p1(alpha: &[f64], network: Network, sigma: DMatrix<f64>) -> Result<Self> {
        NvarModel::new(DMatrix::from_column_slice(alpha.len(), 1, alpha), network, sigma)
    }

    pub fn p(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn q(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `Phi_l = sum_g alpha_lg A^g` for `l = 1..p`.
    pub fn lag_matrices(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        (0..self.p())
            .map(|l| {
                let mut m = DMatrix::zeros(n, n);
                for g in 0..self.q() {
                    let a = self.alpha[(l, g)];
                    if a != 0.0 {
                        m += &*self.network.power(g + 1) * a;
                    }
                }
                m
            })
            .collect()
    }

    /// `np x np` companion matrix with the `Phi_l` in the first block row and
    /// identities on the block sub-diagonal.
    pub fn companion_matrix(&self) -> DMatrix<f64> {
        companion(&self.lag_matrices())
    }

    /// Stationarity from the companion eigenvalues.
    pub fn check_stationarity(&self) -> StationarityReport {
        let rho = dense_spectral_radius(&self.companion_matrix());
        StationarityReport {
            is_stationary: rho < 1.0,
            binding_modulus: rho,
            condition_used: StationarityCondition::CompanionEigen,
        }
    }
}

/// Companion matrix of a list of `n x n` lag matrices.
pub fn companion(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phi.len();
    let n = phi.first().map_or(0, |m| m.nrows());
    let mut f = DMatrix::zeros(n * p, n * p);
    for (l, m) in phi.iter().enumerate() {
        f.view_mut((0, l * n), (n, n)).copy_from(m);
    }
    for l in 1..p {
        f.view_mut((l * n, (l - 1) * n), (n, n)).fill_with_identity();
    }
    f
}

/// Ratio between the latent and observed frequencies. `Every(k)` means the
/// network acts `k` times per observed period; `Slower(k)` means once every
/// `k` observed periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplingRatio {
    Every(usize),
    Slower(usize),
}

impl SamplingRatio {
    pub fn value(&self) -> f64 {
        match *self {
            SamplingRatio::Every(k) => k as f64,
            SamplingRatio::Slower(k) => 1.0 / k as f64,
        }
    }

    /// Latent periods per observation (1 when the latent process is slower).
    pub fn latent_steps(&self) -> usize {
        match *self {
            SamplingRatio::Every(k) => k,
            SamplingRatio::Slower(_) => 1,
        }
    }

    /// True when observations skip latent periods (`q* >= 2`).
    pub fn aggregates(&self) -> bool {
        matches!(*self, SamplingRatio::Every(k) if k >= 2)
    }

    fn normalized(self) -> Self {
        match self {
            SamplingRatio::Slower(1) => SamplingRatio::Every(1),
            other => other,
        }
    }
}

impl fmt::Display for SamplingRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SamplingRatio::Every(k) => write!(f, "{k}"),
            SamplingRatio::Slower(k) => write!(f, "1/{k}"),
        }
    }
}

impl FromStr for SamplingRatio {
    type Err = NetvarError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || NetvarError::Validation(format!("invalid sampling ratio {s:?}"));
        let s = s.trim();
        let r = if let Some(den) = s.strip_prefix("1/") {
            let k: usize = den.trim().parse().map_err(|_| bad())?;
            SamplingRatio::Slower(k)
        } else {
            SamplingRatio::Every(s.parse().map_err(|_| bad())?)
        };
        match r {
            SamplingRatio::Every(0) | SamplingRatio::Slower(0) => Err(bad()),
            r => Ok(r.normalized()),
        }
    }
}

impl Serialize for SamplingRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SamplingRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Int(k) => format!("{k}").parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Latent-frequency NVAR(p*, 1) `x_tau = sum_l delta_l A x_{tau-l} + v_tau`
/// observed with sampling ratio `q*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighFreqSpec {
    pub p_star: usize,
    pub q_star: SamplingRatio,
    pub delta: Vec<f64>,
    #[serde(default)]
    pub simplex_constrained: bool,
}

impl HighFreqSpec {
    pub fn new(q_star: SamplingRatio, delta: Vec<f64>, simplex_constrained: bool) -> Result<Self> {
        let spec = HighFreqSpec { p_star: delta.len(), q_star, delta, simplex_constrained };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_star == 0 || self.delta.len() != self.p_star {
            return Err(NetvarError::Validation(format!(
                "delta has {} entries for p* = {}",
                self.delta.len(),
                self.p_star
            )));
        }
        if self.delta.iter().any(|d| !d.is_finite()) {
            return Err(NetvarError::Validation("delta has non-finite entries".into()));
        }
        if self.simplex_constrained {
            let sum: f64 = self.delta.iter().sum();
            if self.delta.iter().any(|d| !(0.0..=1.0).contains(d)) || (sum - 1.0).abs() > 1e-12 {
                return Err(NetvarError::Validation(format!(
                    "delta {:?} is not on the unit simplex",
                    self.delta
                )));
            }
        } else if self.delta.iter().all(|d| *d == 0.0) {
            return Err(NetvarError::Validation("delta must have a nonzero entry".into()));
        }
        Ok(())
    }

    /// `d = sum_l delta_l`.
    pub fn delta_sum(&self) -> f64 {
        self.delta.iter().sum()
    }

    /// The latent process as an NVAR(p*, 1).
    pub fn latent_model(&self, net: &Network, sigma: &DMatrix<f64>) -> Result<NvarModel> {
        NvarModel::p1(&self.delta, net.clone(), sigma.clone())
    }

    /// Observed lag weights when `q* <= 1`: NVAR(p* k, 1) with `delta_l` at
    /// lag `l k` and zeros elsewhere.
    pub fn observed_alpha(&self) -> Option<Vec<f64>> {
        let k = match self.q_star {
            SamplingRatio::Every(1) => 1,
            SamplingRatio::Slower(k) => k,
            SamplingRatio::Every(_) => return None,
        };
        let mut alpha = vec![0.0; self.p_star * k];
        for (l, d) in self.delta.iter().enumerate() {
            alpha[(l + 1) * k - 1] = *d;
        }
        Some(alpha)
    }

    /// Stationarity using the sharpest applicable eigenvalue condition.
    pub fn check_stationarity(&self, net: &Network) -> Result<StationarityReport> {
        let rho = net.spectral_radius()?;
        if self.p_star == 1 {
            let m = rho * self.delta[0].abs();
            return Ok(StationarityReport {
                is_stationary: m < 1.0,
                binding_modulus: m,
                condition_used: StationarityCondition::ExactP1,
            });
        }
        if self.delta.iter().all(|d| *d >= 0.0) {
            let m = rho * self.delta_sum();
            return Ok(StationarityReport {
                is_stationary: m < 1.0,
                binding_modulus: m,
                condition_used: StationarityCondition::ExactPositiveDelta,
            });
        }
        let abs_sum: f64 = self.delta.iter().map(|d| d.abs()).sum();
        if rho * abs_sum < 1.0 {
            return Ok(StationarityReport {
                is_stationary: true,
                binding_modulus: rho * abs_sum,
                condition_used: StationarityCondition::SufficientAbsSum,
            });
        }
        Ok(self.companion_stationarity(net))
    }

    /// Authoritative check from the latent companion matrix.
    pub fn companion_stationarity(&self, net: &Network) -> StationarityReport {
        let a = net.adjacency();
        let phi: Vec<DMatrix<f64>> = self.delta.iter().map(|d| a * *d).collect();
        let rho = dense_spectral_radius(&companion(&phi));
        StationarityReport {
            is_stationary: rho < 1.0,
            binding_modulus: rho,
            condition_used: StationarityCondition::CompanionEigen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityCondition {
    ExactP1,
    ExactPositiveDelta,
    SufficientAbsSum,
    CompanionEigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub is_stationary: bool,
    pub binding_modulus: f64,
    pub condition_used: StationarityCondition,
}

/// A matrix `L` with `L L' = sigma`; falls back to an eigenvalue square root
/// when `sigma` is only semidefinite.
pub fn innovation_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = sigma.clone().cholesky() {
        return c.l();
    }
    let mut s = sigma.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Default burn-in `10 p max(1, q*)`.
pub fn default_burn_in(p: usize, q_star: SamplingRatio) -> usize {
    10 * p * q_star.latent_steps().max(1)
}

/// Iterates `y_t = sum_l Phi_l y_{t-l} + L e_t` from zero initial lags and
/// returns the last `t` values after `burn_in` discarded periods.
fn simulate_lags(
    phi: &[DMatrix<f64>],
    factor: &DMatrix<f64>,
    t: usize,
    burn_in: usize,
    seed: u64,
) -> DMatrix<f64> {
    let n = factor.nrows();
    let p = phi.len();
    let total = t + burn_in;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hist = DMatrix::zeros(n, total + p);
    for s in 0..total {
        let e = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut y = factor * e;
        for (l, m) in phi.iter().enumerate() {
            let col = hist.column(s + p - 1 - l);
            y.gemv(1.0, m, &col, 1.0);
        }
        hist.set_column(s + p, &y);
    }
    hist.columns(p + burn_in, t).into_owned()
}

/// Gaussian simulation of `model`. Non-stationary models are refused unless
/// `allow_nonstationary` is set.
pub fn simulate(
    model: &NvarModel,
    t: usize,
    burn_in: Option<usize>,
    seed: u64,
    allow_nonstationary: bool,
) -> Result<Panel> {
    if t == 0 {
        return Err(NetvarError::Validation("simulation length must be >= 1".into()));
    }
    let report = model.check_stationarity();
    if !report.is_stationary && !allow_nonstationary {
        return Err(NetvarError::NonStationary(format!(
            "companion spectral radius {:.6} >= 1",
            report.binding_modulus
        )));
    }
    let burn = burn_in.unwrap_or_else(|| default_burn_in(model.p(), SamplingRatio::Every(1)));
    let values = simulate_lags(&model.lag_matrices(), &innovation_factor(model.sigma()), t, burn, seed);
    let mut panel = Panel::new(values, model.network().labels().to_vec())?;
    panel.frequency_tag = "observed".into();
    Ok(panel)
}

/// Simulates the latent process and its observed snapshots.
///
/// For `q* = k >= 1` the latent panel has `k * t_obs` columns and the
/// observed panel keeps every `k`-th one (ending on the last latent period).
/// For `q* = 1/k` the observed process is the latent one with zero
/// coefficients between active lags, so both panels coincide.
pub fn simulate_snapshots(
    spec: &HighFreqSpec,
    net: &Network,
    sigma: &DMatrix<f64>,
    t_obs: usize,
    burn_in: Option<usize>,
    seed: u64,
    allow_nonstationary: bool,
) -> Result<(Panel, Panel)> {
    spec.validate()?;
    if t_obs == 0 {
        return Err(NetvarError::Validation("simulation length must be >= 1".into()));
    }
    let report = spec.check_stationarity(net)?;
    if !report.is_stationary && !allow_nonstationary {
        return Err(NetvarError::NonStationary(format!(
            "binding modulus {:.6} >= 1 ({:?})",
            report.binding_modulus, report.condition_used
        )));
    }
    let burn = burn_in.unwrap_or_else(|| default_burn_in(spec.p_star, spec.q_star));
    let factor = innovation_factor(sigma);
    let labels = net.labels().to_vec();
    match spec.observed_alpha() {
        Some(alpha) => {
            let phi: Vec<DMatrix<f64>> = alpha.iter().map(|a| net.adjacency() * *a).collect();
            let values = simulate_lags(&phi, &factor, t_obs, burn, seed);
            let mut panel = Panel::new(values, labels)?;
            panel.frequency_tag = "observed".into();
            Ok((panel.clone(), panel))
        }
        None => {
            let k = spec.q_star.latent_steps();
            let phi: Vec<DMatrix<f64>> = spec.delta.iter().map(|d| net.adjacency() * *d).collect();
            let latent_vals = simulate_lags(&phi, &factor, t_obs * k, burn, seed);
            let observed_vals =
                DMatrix::from_fn(net.n(), t_obs, |i, s| latent_vals[(i, (s + 1) * k - 1)]);
            let mut latent = Panel::new(latent_vals, labels.clone())?;
            latent.frequency_tag = "latent".into();
            let mut observed = Panel::new(observed_vals, labels)?;
            observed.frequency_tag = "observed".into();
            Ok((latent, observed))
        }
    }
}
