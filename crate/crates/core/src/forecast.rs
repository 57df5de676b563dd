//! Rolling-origin out-of-sample comparison of forecasting models.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::factor::{fit_pca_factors, forecast_factors, FactorCount, FactorModel};
use crate::netest::{fit_joint, select_lambda_bic, FitControl, FitResult, PenaltyConfig};
use crate::output::fmt_num;
use crate::panel::Panel;

/// A fitted model able to produce `n x h_max` forecasts for the periods
/// after the end of its training sample.
pub trait Forecaster: Send {
    fn forecast(&self, h_max: usize) -> Result<DMatrix<f64>>;
}

/// Refits a model on a training slice.
pub trait ModelFactory: Sync {
    fn name(&self) -> String;
    fn fit(&self, train: &Panel, seed: u64) -> Result<Box<dyn Forecaster>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Last training period (0-based, inclusive) of the first origin.
    pub initial_train_end: usize,
    /// Last training period of the final origin.
    pub final_train_end: usize,
    pub horizons: Vec<usize>,
    /// Forecast targets after this period are not scored.
    pub exclusion_after: Option<usize>,
    /// Distance between consecutive origins.
    pub origin_step: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            initial_train_end: 0,
            final_train_end: 0,
            horizons: (1..=24).collect(),
            exclusion_after: None,
            origin_step: 1,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.initial_train_end > self.final_train_end || self.final_train_end >= t {
            return Err(NetvarError::Validation(format!(
                "origins {}..={} must be ordered and below T = {t}",
                self.initial_train_end, self.final_train_end
            )));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(NetvarError::Validation("horizons must be positive and non-empty".into()));
        }
        if self.origin_step == 0 {
            return Err(NetvarError::Validation("origin_step must be >= 1".into()));
        }
        Ok(())
    }

    pub fn origins(&self) -> Vec<usize> {
        (self.initial_train_end..=self.final_train_end).step_by(self.origin_step).collect()
    }
}

/// A model that could not be fitted at an origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub model: String,
    pub origin: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<String>,
    pub horizons: Vec<usize>,
    /// `mse[m][k]`: model `m`, horizon `horizons[k]`, averaged over units
    /// then over scored origins.
    pub mse: Vec<Vec<f64>>,
    /// `per_unit[m][k][i]`.
    pub per_unit: Vec<Vec<Vec<f64>>>,
    /// Scored origins per horizon (common to all models).
    pub counts: Vec<usize>,
    /// `mse[0] / mse[last] - 1` per horizon when at least two models ran;
    /// `None` entries where the baseline MSE is zero.
    pub relative_mse: Option<Vec<Option<f64>>>,
    pub failures: Vec<FitFailure>,
}

impl EvalReport {
    /// Long CSV: horizon, model, mse, relative (relative only on the first
    /// model's rows and only when a baseline exists).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["horizon", "model", "mse", "count"];
        if self.relative_mse.is_some() {
            header.push("relative");
        }
        w.write_record(&header)?;
        for (k, h) in self.horizons.iter().enumerate() {
            for (m, name) in self.models.iter().enumerate() {
                let mut row = vec![h.to_string(), name.clone(), fmt_num(self.mse[m][k]), self.counts[k].to_string()];
                if let Some(rel) = &self.relative_mse {
                    row.push(match (m, rel[k]) {
                        (0, Some(v)) => fmt_num(v),
                        _ => String::new(),
                    });
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Refits every model at every origin on the data up to that origin and
/// scores squared forecast errors. Origins are processed in parallel;
/// results are assembled in origin order.
pub fn rolling_evaluate(panel: &Panel, models: &[&dyn ModelFactory], config: &EvalConfig) -> Result<EvalReport> {
    let (n, t) = panel.values.shape();
    config.validate(t)?;
    if models.is_empty() {
        return Err(NetvarError::Validation("no models to evaluate".into()));
    }
    let origins = config.origins();
    let h_max = *config.horizons.iter().max().expect("validated");
    // per origin: per model either squared errors [k][i] or a failure
    type Scored = std::result::Result<Vec<Option<Vec<f64>>>, String>;
    let per_origin: Vec<Vec<Scored>> = origins
        .par_iter()
        .enumerate()
        .map(|(o_idx, &origin)| {
            let train = panel.slice(0, origin + 1);
            models
                .iter()
                .map(|m| {
                    let train = train.as_ref().map_err(|e| e.to_string())?;
                    let fc = m
                        .fit(train, config.seed.wrapping_add(o_idx as u64))
                        .and_then(|f| f.forecast(h_max))
                        .map_err(|e| e.to_string())?;
                    if fc.shape() != (n, h_max) {
                        return Err(format!("forecast has shape {:?}, expected ({n}, {h_max})", fc.shape()));
                    }
                    Ok(config
                        .horizons
                        .iter()
                        .map(|h| {
                            let target = origin + h;
                            let scored = target < t && config.exclusion_after.is_none_or(|e| target <= e);
                            scored.then(|| (0..n).map(|i| (panel.values[(i, target)] - fc[(i, h - 1)]).powi(2)).collect())
                        })
                        .collect())
                })
                .collect()
        })
        .collect();

    let n_models = models.len();
    let n_h = config.horizons.len();
    let mut failures = Vec::new();
    let mut sums = vec![vec![vec![0.0; n]; n_h]; n_models];
    let mut counts = vec![0usize; n_h];
    for (o_idx, row) in per_origin.iter().enumerate() {
        for (m, r) in row.iter().enumerate() {
            if let Err(msg) = r {
                failures.push(FitFailure { model: models[m].name(), origin: origins[o_idx], message: msg.clone() });
            }
        }
        if row.iter().any(|r| r.is_err()) {
            continue;
        }
        for k in 0..n_h {
            let errs: Vec<&Vec<f64>> = row.iter().filter_map(|r| r.as_ref().ok().and_then(|v| v[k].as_ref())).collect();
            if errs.len() != n_models {
                continue;
            }
            counts[k] += 1;
            for (m, e) in errs.iter().enumerate() {
                for i in 0..n {
                    sums[m][k][i] += e[i];
                }
            }
        }
    }
    let per_unit: Vec<Vec<Vec<f64>>> = sums
        .iter()
        .map(|model| {
            model
                .iter()
                .enumerate()
                .map(|(k, units)| units.iter().map(|s| if counts[k] > 0 { s / counts[k] as f64 } else { f64::NAN }).collect())
                .collect()
        })
        .collect();
    let mse: Vec<Vec<f64>> = per_unit
        .iter()
        .map(|model| model.iter().map(|units: &Vec<f64>| units.iter().sum::<f64>() / n as f64).collect())
        .collect();
    let relative_mse = (n_models >= 2).then(|| {
        (0..n_h)
            .map(|k| {
                let base = mse[n_models - 1][k];
                (base > 0.0).then(|| mse[0][k] / base - 1.0)
            })
            .collect()
    });
    Ok(EvalReport {
        models: models.iter().map(|m| m.name()).collect(),
        horizons: config.horizons.clone(),
        mse,
        per_unit,
        counts,
        relative_mse,
        failures,
    })
}

/// Iterates `y_{T+s} = mean + sum_l Phi_l (y_{T+s-l} - mean)`.
pub fn var_forecast(phi: &[DMatrix<f64>], values: &DMatrix<f64>, mean: &nalgebra::DVector<f64>, h: usize) -> DMatrix<f64> {
    let n = values.nrows();
    let t = values.ncols();
    let p = phi.len();
    let mut hist: Vec<nalgebra::DVector<f64>> =
        (0..p).map(|l| if l < t { values.column(t - 1 - l) - mean } else { nalgebra::DVector::zeros(n) }).collect();
    let mut out = DMatrix::zeros(n, h);
    for s in 0..h {
        let mut y = nalgebra::DVector::zeros(n);
        for (l, m) in phi.iter().enumerate() {
            y += m * &hist[l];
        }
        out.set_column(s, &(&y + mean));
        hist.insert(0, y);
        hist.truncate(p);
    }
    out
}

struct VarForecaster {
    phi: Vec<DMatrix<f64>>,
    values: DMatrix<f64>,
    mean: nalgebra::DVector<f64>,
}

impl Forecaster for VarForecaster {
    fn forecast(&self, h_max: usize) -> Result<DMatrix<f64>> {
        Ok(var_forecast(&self.phi, &self.values, &self.mean, h_max))
    }
}

/// How [`NvarFactory`] picks the Lasso penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    /// BIC over the default path.
    Bic,
}

/// NVAR(p, 1) with unknown network, fitted on demeaned training data.
#[derive(Debug, Clone)]
pub struct NvarFactory {
    pub p: usize,
    pub lambda: LambdaChoice,
    pub varphi: f64,
    pub control: FitControl,
}

impl NvarFactory {
    pub fn new(p: usize) -> Self {
        NvarFactory { p, lambda: LambdaChoice::Bic, varphi: 0.0, control: FitControl::default() }
    }

    pub fn fit_result(&self, demeaned: &Panel) -> Result<FitResult> {
        match self.lambda {
            LambdaChoice::Fixed(lambda) => {
                let pen = PenaltyConfig { lambda, varphi: self.varphi, lambda_path: None };
                fit_joint(demeaned, self.p, &pen, None, &self.control)
            }
            LambdaChoice::Bic => {
                let pen = PenaltyConfig { lambda: 0.0, varphi: self.varphi, lambda_path: None };
                Ok(select_lambda_bic(demeaned, self.p, &pen, &self.control)?.fit)
            }
        }
    }
}

fn demean(panel: &Panel) -> Result<(Panel, nalgebra::DVector<f64>)> {
    let n = panel.n();
    let mean = nalgebra::DVector::from_fn(n, |i, _| panel.values.row(i).mean());
    let mut out = panel.clone();
    for i in 0..n {
        out.values.row_mut(i).iter_mut().for_each(|v| *v -= mean[i]);
    }
    Ok((out, mean))
}

impl ModelFactory for NvarFactory {
    fn name(&self) -> String {
        "nvar".into()
    }

    fn fit(&self, train: &Panel, _seed: u64) -> Result<Box<dyn Forecaster>> {
        let (centred, mean) = demean(train)?;
        let fit = self.fit_result(&centred)?;
        Ok(Box::new(VarForecaster { phi: fit.lag_matrices(), values: train.values.clone(), mean }))
    }
}

/// Principal-components factor model with a VAR on the factors.
#[derive(Debug, Clone)]
pub struct FactorFactory {
    pub r_max: usize,
    pub count: FactorCount,
    pub var_lags: usize,
}

impl FactorFactory {
    pub fn new(r_max: usize, var_lags: usize) -> Self {
        FactorFactory { r_max, count: FactorCount::BaiNgIcp2, var_lags }
    }
}

struct FactorForecaster(FactorModel);

impl Forecaster for FactorForecaster {
    fn forecast(&self, h_max: usize) -> Result<DMatrix<f64>> {
        forecast_factors(&self.0, h_max)
    }
}

impl ModelFactory for FactorFactory {
    fn name(&self) -> String {
        "factor".into()
    }

    fn fit(&self, train: &Panel, _seed: u64) -> Result<Box<dyn Forecaster>> {
        let r_max = self.r_max.min(train.n().min(train.t()).saturating_sub(1)).max(1);
        Ok(Box::new(FactorForecaster(fit_pca_factors(train, r_max, self.count, self.var_lags)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Forecasts the realised values, read from the full panel.
    struct Oracle(DMatrix<f64>);
    struct OracleCast(DMatrix<f64>);
    impl Forecaster for OracleCast {
        fn forecast(&self, h: usize) -> Result<DMatrix<f64>> {
            Ok(self.0.columns(0, h).into_owned())
        }
    }
    impl ModelFactory for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn fit(&self, train: &Panel, _: u64) -> Result<Box<dyn Forecaster>> {
            let t = train.t();
            let n = self.0.nrows();
            let future = DMatrix::from_fn(n, 3, |i, s| self.0.get((i, t + s)).copied().unwrap_or(0.0));
            Ok(Box::new(OracleCast(future)))
        }
    }

    struct RandomWalk;
    struct Last(DMatrix<f64>);
    impl Forecaster for Last {
        fn forecast(&self, h: usize) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(self.0.nrows(), h, |i, _| self.0[(i, 0)]))
        }
    }
    impl ModelFactory for RandomWalk {
        fn name(&self) -> String {
            "rw".into()
        }
        fn fit(&self, train: &Panel, _: u64) -> Result<Box<dyn Forecaster>> {
            Ok(Box::new(Last(train.values.columns(train.t() - 1, 1).into_owned())))
        }
    }

    struct Failing;
    impl ModelFactory for Failing {
        fn name(&self) -> String {
            "broken".into()
        }
        fn fit(&self, train: &Panel, _: u64) -> Result<Box<dyn Forecaster>> {
            if train.t() % 2 == 0 {
                Err(NetvarError::Estimation("even sample".into()))
            } else {
                RandomWalk.fit(train, 0)
            }
        }
    }

    fn noise(n: usize, t: usize, seed: u64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Panel::from_values(DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))).unwrap()
    }

    #[test]
    fn perfect_foresight_scores_zero() {
        let panel = noise(3, 20, 1);
        let oracle = Oracle(panel.values.clone());
        let cfg = EvalConfig { initial_train_end: 10, final_train_end: 10, horizons: vec![1], ..Default::default() };
        let rep = rolling_evaluate(&panel, &[&oracle], &cfg).unwrap();
        assert_eq!(rep.mse[0][0], 0.0);
        assert_eq!(rep.counts, vec![1]);
        assert!(rep.relative_mse.is_none());
    }

    #[test]
    fn random_walk_on_white_noise_doubles_variance() {
        let panel = noise(10, 2000, 2);
        let cfg = EvalConfig { initial_train_end: 50, final_train_end: 1998, horizons: vec![1], ..Default::default() };
        let rep = rolling_evaluate(&panel, &[&RandomWalk], &cfg).unwrap();
        // (y_{t+1} - y_t)^2 has mean 2 and sd 2 sqrt 2 / sqrt(n), overlapping origins
        assert!((rep.mse[0][0] - 2.0).abs() < 0.1, "{}", rep.mse[0][0]);
        let mean_units: f64 = rep.per_unit[0][0].iter().sum::<f64>() / 10.0;
        assert!((mean_units - rep.mse[0][0]).abs() < 1e-12);
    }

    #[test]
    fn exclusion_and_horizon_counts() {
        let panel = noise(2, 30, 3);
        let cfg = EvalConfig {
            initial_train_end: 10,
            final_train_end: 20,
            horizons: vec![1, 3],
            exclusion_after: Some(22),
            origin_step: 2,
            seed: 0,
        };
        let rep = rolling_evaluate(&panel, &[&RandomWalk, &RandomWalk], &cfg).unwrap();
        // origins 10,12,...,20; h=1 targets <= 22 for all six, h=3 excludes origin 20
        assert_eq!(rep.counts, vec![6, 5]);
        assert_eq!(rep.relative_mse.as_ref().unwrap()[0], Some(0.0));
    }

    #[test]
    fn failures_are_flagged_not_dropped_silently() {
        let panel = noise(2, 30, 4);
        let cfg = EvalConfig { initial_train_end: 10, final_train_end: 15, horizons: vec![1], ..Default::default() };
        let rep = rolling_evaluate(&panel, &[&RandomWalk, &Failing], &cfg).unwrap();
        // training length origin + 1 is even at origins 11, 13, 15
        assert_eq!(rep.failures.len(), 3);
        assert_eq!(rep.counts, vec![3]);
        assert!(rep.failures.iter().all(|f| f.model == "broken"));
    }

    #[test]
    fn forecasts_ignore_data_after_the_origin() {
        let panel = noise(4, 80, 5);
        let mut spiked = panel.clone();
        spiked.values[(2, 61)] = 1e6;
        let factory = NvarFactory { lambda: LambdaChoice::Fixed(1.0), ..NvarFactory::new(1) };
        let a = factory.fit(&panel.slice(0, 61).unwrap(), 0).unwrap().forecast(3).unwrap();
        let b = factory.fit(&spiked.slice(0, 61).unwrap(), 0).unwrap().forecast(3).unwrap();
        assert_eq!(a, b);
        let f = FactorFactory::new(2, 1);
        let a = f.fit(&panel.slice(0, 61).unwrap(), 0).unwrap().forecast(3).unwrap();
        let b = f.fit(&spiked.slice(0, 61).unwrap(), 0).unwrap().forecast(3).unwrap();
        assert_eq!(a, b);
    }
}
