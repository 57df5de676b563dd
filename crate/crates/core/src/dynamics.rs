//! Impulse responses, their split into connection orders, and long-run effects.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::lagpoly::{substitute, APoly};
use crate::linalg::solve;
use crate::model::{HighFreqSpec, NvarModel};
use crate::network::Network;

/// Default horizon cap used by the command-line front end.
pub const DEFAULT_HORIZON: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockScale {
    Unit,
    OneStd,
}

/// `responses[h][(i, j)] = d y_{i, t+h} / d u_{j, t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub horizons: Vec<usize>,
    pub responses: Vec<DMatrix<f64>>,
    pub shock_scale: ShockScale,
}

impl ImpulseResponse {
    /// Running sums of the responses.
    pub fn cumulative(&self) -> Vec<DMatrix<f64>> {
        let mut acc: Option<DMatrix<f64>> = None;
        self.responses
            .iter()
            .map(|r| {
                let next = match acc.take() {
                    Some(a) => a + r,
                    None => r.clone(),
                };
                acc = Some(next.clone());
                next
            })
            .collect()
    }
}

/// Upper-left blocks of `F^h` for `h = 0..=H`, computed by pushing the first
/// block column of the companion matrix forward.
pub fn companion_blocks(phi: &[DMatrix<f64>], horizon: usize) -> Vec<DMatrix<f64>> {
    let p = phi.len();
    let n = phi.first().map_or(0, |m| m.nrows());
    // g[k] is block row k of F^h [I; 0; ...; 0].
    let mut g: Vec<DMatrix<f64>> = (0..p)
        .map(|k| if k == 0 { DMatrix::identity(n, n) } else { DMatrix::zeros(n, n) })
        .collect();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(g[0].clone());
    for _ in 0..horizon {
        let mut next = Vec::with_capacity(p);
        for k in 0..p {
            let mut b = &phi[k] * &g[0];
            if k + 1 < p {
                b += &g[k + 1];
            }
            next.push(b);
        }
        g = next;
        out.push(g[0].clone());
    }
    out
}

/// Generalized impulse responses of `model` up to horizon `h_max`.
pub fn girf(model: &NvarModel, h_max: usize, scale: ShockScale) -> ImpulseResponse {
    let mut responses = companion_blocks(&model.lag_matrices(), h_max);
    if scale == ShockScale::OneStd {
        let sd: Vec<f64> = (0..model.n()).map(|j| model.sigma()[(j, j)].max(0.0).sqrt()).collect();
        for r in &mut responses {
            for (j, s) in sd.iter().enumerate() {
                r.column_mut(j).iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    ImpulseResponse { horizons: (0..=h_max).collect(), responses, shock_scale: scale }
}

/// `[ceil(h / p), h q]`: the walk lengths that can carry a shock over `h`
/// periods in an NVAR(p, q).
pub fn granger_support(p: usize, q: usize, h: usize) -> Result<RangeInclusive<usize>> {
    if p == 0 || q == 0 || h == 0 {
        return Err(NetvarError::Validation("granger_support needs p, q, h >= 1".into()));
    }
    Ok(h.div_ceil(p)..=h * q)
}

/// Coefficients `c^h_k` on `A^k` for one horizon, stored over the support only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonOrders {
    pub h: usize,
    /// Smallest order stored.
    pub first_order: usize,
    /// `coeffs[i]` multiplies `A^(first_order + i)`.
    pub coeffs: Vec<f64>,
}

impl HorizonOrders {
    pub fn orders(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(i, c)| (self.first_order + i, *c))
    }

    /// `c^h_k`, zero outside the stored support.
    pub fn coeff(&self, k: usize) -> f64 {
        k.checked_sub(self.first_order)
            .and_then(|i| self.coeffs.get(i).copied())
            .unwrap_or(0.0)
    }
}

/// Responses written as `sum_k c^h_k(alpha) A^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderDecomposition {
    pub p: usize,
    pub q: usize,
    pub horizons: Vec<HorizonOrders>,
}

impl OrderDecomposition {
    /// The matrix contribution `c^h_k A^k`.
    pub fn contribution(&self, net: &Network, h: usize, k: usize) -> DMatrix<f64> {
        &*net.power(k) * self.horizons[h].coeff(k)
    }

    /// `sum_k c^h_k A^k`.
    pub fn total(&self, net: &Network, h: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(net.n(), net.n());
        for (k, c) in self.horizons[h].orders() {
            if c != 0.0 {
                m += &*net.power(k) * c;
            }
        }
        m
    }
}

/// Splits the impulse responses of `model` into connection orders by
/// carrying polynomial coefficients through the lag-substitution recursion
/// with no lag retained.
pub fn order_decompose(model: &NvarModel, h_max: usize) -> Result<OrderDecomposition> {
    if h_max == 0 {
        return Err(NetvarError::Validation("order decomposition needs H >= 1".into()));
    }
    let (p, q) = (model.p(), model.q());
    let lags: Vec<APoly<f64>> = (0..p)
        .map(|l| {
            let mut coeffs = vec![0.0; q + 1];
            for g in 0..q {
                coeffs[g + 1] = model.alpha()[(l, g)];
            }
            APoly { coeffs }
        })
        .collect();
    let sub = substitute(&lags, h_max + 1, |_| false);
    let mut horizons = Vec::with_capacity(h_max + 1);
    horizons.push(HorizonOrders { h: 0, first_order: 0, coeffs: vec![1.0] });
    for h in 1..=h_max {
        let poly = &sub.w[h + 1];
        let support = granger_support(p, q, h)?;
        if let (Some(lo), Some(hi)) = (poly.low_degree(), poly.degree()) {
            if lo < *support.start() || hi > *support.end() {
                return Err(NetvarError::Numeric(format!(
                    "order decomposition left its support at horizon {h}"
                )));
            }
        }
        let coeffs = support.clone().map(|k| poly.coeff(k)).collect();
        horizons.push(HorizonOrders { h, first_order: *support.start(), coeffs });
    }
    Ok(OrderDecomposition { p, q, horizons })
}

/// Long-run response to a permanent shock in the latent NVAR(p*, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LongRunResponse {
    /// `(I - d A)^{-1}` with `d = sum_l delta_l`.
    pub matrix: DMatrix<f64>,
    /// Cumulative impulse responses for `h = 0..=H`.
    pub partial_sums: Vec<DMatrix<f64>>,
}

fn latent_lags(spec: &HighFreqSpec, net: &Network) -> Vec<DMatrix<f64>> {
    spec.delta.iter().map(|d| net.adjacency() * *d).collect()
}

/// Leontief-type long-run multiplier and the cumulative responses leading to it.
pub fn long_run_response(spec: &HighFreqSpec, net: &Network, h_max: usize) -> Result<LongRunResponse> {
    spec.validate()?;
    let report = spec.check_stationarity(net)?;
    if !report.is_stationary {
        return Err(NetvarError::NonStationary(format!(
            "binding modulus {:.6} >= 1",
            report.binding_modulus
        )));
    }
    let n = net.n();
    let lhs = DMatrix::identity(n, n) - net.adjacency() * spec.delta_sum();
    let matrix = solve(&lhs, &DMatrix::identity(n, n))
        .map_err(|_| NetvarError::Numeric("I - dA is singular (near unit root)".into()))?;
    let responses = companion_blocks(&latent_lags(spec, net), h_max);
    let irf = ImpulseResponse {
        horizons: (0..=h_max).collect(),
        responses,
        shock_scale: ShockScale::Unit,
    };
    Ok(LongRunResponse { matrix, partial_sums: irf.cumulative() })
}

/// Share of the long-run response of a weighted aggregate that has
/// materialised by each horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub shock_unit: usize,
    pub path: Vec<f64>,
    pub long_run: f64,
    pub fraction_horizon: usize,
    /// `path[fraction_horizon]`, or the last value if the path is shorter.
    pub fraction: f64,
}

/// Weighted cumulative response to a permanent unit shock in `shock_unit`,
/// divided by its long-run value.
pub fn timing_profile(
    spec: &HighFreqSpec,
    net: &Network,
    weights: &[f64],
    shock_unit: usize,
    h_max: usize,
    fraction_horizon: usize,
) -> Result<TimingProfile> {
    let n = net.n();
    if weights.len() != n {
        return Err(NetvarError::Validation(format!("{} weights for {n} units", weights.len())));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(NetvarError::Validation("weights must be nonnegative and sum to 1".into()));
    }
    if shock_unit >= n {
        return Err(NetvarError::Validation(format!("shock unit {shock_unit} out of range")));
    }
    let lr = long_run_response(spec, net, h_max)?;
    let w = DVector::from_column_slice(weights);
    let aggregate = |m: &DMatrix<f64>| w.dot(&m.column(shock_unit));
    let long_run = aggregate(&lr.matrix);
    if long_run == 0.0 {
        return Err(NetvarError::Numeric("aggregate long-run response is zero".into()));
    }
    let path: Vec<f64> = lr.partial_sums.iter().map(|m| aggregate(m) / long_run).collect();
    let fraction = path[fraction_horizon.min(path.len() - 1)];
    Ok(TimingProfile { shock_unit, path, long_run, fraction_horizon, fraction })
}
