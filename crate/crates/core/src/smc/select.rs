//! Ranking `(p*, q*)` specifications by marginal likelihood or information
//! criteria.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::model::SamplingRatio;
use crate::network::Network;
use crate::panel::Panel;

use super::likelihood::{required_presample, LikelihoodEvaluator};
use super::prior::{sigma_bounds, InitialProposal};
use super::sampler::{run_smc_with, ModelScore, SmcConfig, SmcResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Mdd,
    Bic,
    Aic,
}

impl Criterion {
    /// Larger is better after this transformation.
    pub fn merit(&self, s: &ModelScore) -> f64 {
        match self {
            Criterion::Mdd => s.log_mdd,
            Criterion::Bic => -s.bic,
            Criterion::Aic => -s.aic,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criterion::Mdd => "mdd",
            Criterion::Bic => "bic",
            Criterion::Aic => "aic",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Criterion {
    type Err = NetvarError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mdd" => Ok(Criterion::Mdd),
            "bic" => Ok(Criterion::Bic),
            "aic" => Ok(Criterion::Aic),
            other => Err(NetvarError::Validation(format!("unknown criterion '{other}'"))),
        }
    }
}

/// One candidate. `p_star` may be fractional when it is built as a multiple
/// of `q*`; such entries are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p_star: f64,
    pub q_star: SamplingRatio,
}

/// `q* in {1/3, 1/2, 1, 2, 4}` crossed with `p* = m q*`, `m = 1..=6`.
pub fn default_grid() -> Vec<GridPoint> {
    let ratios = [
        SamplingRatio::Slower(3),
        SamplingRatio::Slower(2),
        SamplingRatio::Every(1),
        SamplingRatio::Every(2),
        SamplingRatio::Every(4),
    ];
    let mut grid = Vec::new();
    for q in ratios {
        for m in 1..=6 {
            grid.push(GridPoint { p_star: m as f64 * q.value(), q_star: q });
        }
    }
    grid
}

fn integer_p_star(g: &GridPoint) -> Option<usize> {
    let r = g.p_star.round();
    if g.p_star >= 1.0 && (g.p_star - r).abs() < 1e-9 {
        Some(r as usize)
    } else {
        None
    }
}

/// Every specification's score and the full sampler output.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Scores sorted best first under `criterion`.
    pub ranked: Vec<ModelScore>,
    pub results: Vec<SmcResult>,
    pub criterion: Criterion,
    /// Grid entries that were not run and why.
    pub skipped: Vec<String>,
    /// Common first scored period.
    pub start: usize,
}

impl Selection {
    pub fn best(&self) -> &ModelScore {
        &self.ranked[0]
    }

    /// Ranking under another criterion, best first.
    pub fn ranked_by(&self, criterion: Criterion) -> Vec<ModelScore> {
        rank(self.results.iter().map(|r| r.score.clone()).collect(), criterion)
    }
}

fn rank(mut scores: Vec<ModelScore>, criterion: Criterion) -> Vec<ModelScore> {
    scores.sort_by(|a, b| criterion.merit(b).total_cmp(&criterion.merit(a)));
    scores
}

/// Runs the sampler for every feasible grid entry on a common scoring
/// window and common prior bounds, then ranks them.
pub fn model_select(
    panel: &Panel,
    net: &Network,
    grid: &[GridPoint],
    criterion: Criterion,
    config: &SmcConfig,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(NetvarError::Validation("model grid is empty".into()));
    }
    config.validate()?;
    let mut skipped = Vec::new();
    let mut specs = Vec::new();
    for g in grid {
        match integer_p_star(g) {
            Some(p) => specs.push((p, g.q_star)),
            None => skipped.push(format!("p* = {} with q* = {} is not an integer lag count", g.p_star, g.q_star)),
        }
    }
    specs.dedup();
    if specs.is_empty() {
        return Err(NetvarError::Validation("no grid entry has an integer p*".into()));
    }
    let mut start = 0;
    for (p, q) in &specs {
        start = start.max(required_presample(*p, *q, net, config.truncation)?);
    }
    let values = &panel.values;
    let s_bar = sigma_bounds(values, config.sigma_bound_multiplier);
    let mut results = Vec::new();
    for (p, q) in specs {
        let ev = LikelihoodEvaluator::new(values, net, p, q, Some(start), config.truncation)?;
        let proposal = InitialProposal::new(net, values, p)?;
        results.push(run_smc_with(&ev, &proposal, &s_bar, config)?);
    }
    let ranked = rank(results.iter().map(|r| r.score.clone()).collect(), criterion);
    Ok(Selection { ranked, results, criterion, skipped, start })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 30);
        let feasible: Vec<_> = g.iter().filter_map(|x| integer_p_star(x).map(|p| (p, x.q_star))).collect();
        assert_eq!(feasible.len(), 2 + 3 + 6 + 6 + 6);
        assert!(feasible.contains(&(2, SamplingRatio::Every(1))));
        assert!(feasible.contains(&(24, SamplingRatio::Every(4))));
        assert!(feasible.contains(&(1, SamplingRatio::Slower(3))));
    }

    #[test]
    fn bic_prefers_fewer_parameters_at_equal_fit() {
        let a = ModelScore::new(1, SamplingRatio::Every(1), 3, 100, -50.0, -60.0, -60.0);
        let b = ModelScore::new(2, SamplingRatio::Every(1), 3, 100, -50.0, -60.0, -60.0);
        let ranked = rank(vec![b.clone(), a.clone()], Criterion::Bic);
        assert_eq!(ranked[0], a);
        assert!(b.bic > a.bic && b.aic > a.aic);
        assert!((b.bic - a.bic - (300f64).ln()).abs() < 1e-12);
    }
}
