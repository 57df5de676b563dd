//! Principal-components factor model with a VAR on the factors, used as the
//! forecasting benchmark, and the factor representation of an NVAR(p, 1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::linalg::ols;
use crate::model::NvarModel;
use crate::panel::Panel;

/// How the number of factors is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorCount {
    /// Bai–Ng `IC_p2` over `1..=r_max`.
    BaiNgIcp2,
    /// A fixed count, up to `min(n, T - 1)`.
    Fixed(usize),
}

/// `y_t = mean + sd * (Lambda f_t + xi_t)` with `f_t` following a VAR(p).
#[derive(Debug, Clone, Serialize)]
pub struct FactorModel {
    pub r: usize,
    /// `n x r`, scaled so that `Lambda' Lambda / n = I`.
    pub loadings: DMatrix<f64>,
    /// `r x T`.
    pub factors: DMatrix<f64>,
    /// `r x r` lag matrices of the factor VAR.
    pub factor_var_coeffs: Vec<DMatrix<f64>>,
    /// Idiosyncratic variances in the units of the data.
    pub idio_cov: DVector<f64>,
    pub means: DVector<f64>,
    pub sds: DVector<f64>,
    /// Criterion value for every candidate count (empty for a fixed count).
    pub ic_values: Vec<f64>,
}

/// `IC_p2(k) = ln V(k) + k (n + T)/(nT) ln min(n, T)`.
pub fn ic_p2(v: f64, k: usize, n: usize, t: usize) -> f64 {
    let (nf, tf) = (n as f64, t as f64);
    v.max(f64::MIN_POSITIVE).ln() + k as f64 * (nf + tf) / (nf * tf) * nf.min(tf).ln()
}

/// Fits the factor model on standardised series.
pub fn fit_pca_factors(panel: &Panel, r_max: usize, count: FactorCount, var_lags: usize) -> Result<FactorModel> {
    let (n, t) = panel.values.shape();
    if var_lags == 0 {
        return Err(NetvarError::Validation("factor VAR needs at least one lag".into()));
    }
    let r_cap = match count {
        FactorCount::BaiNgIcp2 => {
            if r_max == 0 || r_max >= n.min(t) {
                return Err(NetvarError::Validation(format!(
                    "r_max = {r_max} must lie in 1..{} (min of n and T)",
                    n.min(t)
                )));
            }
            r_max
        }
        FactorCount::Fixed(r) => {
            if r == 0 || r > n || r >= t {
                return Err(NetvarError::Validation(format!("fixed factor count {r} must lie in 1..=min(n, T-1)")));
            }
            r
        }
    };
    let means = DVector::from_fn(n, |i, _| panel.values.row(i).mean());
    let sds = DVector::from_fn(n, |i, _| {
        let m = means[i];
        (panel.values.row(i).iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt()
    });
    if let Some(i) = sds.iter().position(|s| !(*s > 0.0)) {
        return Err(NetvarError::Validation(format!("series {} has zero variance", panel.unit_labels[i])));
    }
    let x = DMatrix::from_fn(n, t, |i, s| (panel.values[(i, s)] - means[i]) / sds[i]);
    let cov = &x * x.transpose() / t as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let values: Vec<f64> = order.iter().map(|k| eig.eigenvalues[*k].max(0.0)).collect();
    let (r, ic_values) = match count {
        FactorCount::Fixed(r) => (r, Vec::new()),
        FactorCount::BaiNgIcp2 => {
            let ic: Vec<f64> = (1..=r_cap)
                .map(|k| {
                    // standardised data have V(0) = 1; below 1e-12 is rounding
                    let v = (values[k..].iter().sum::<f64>() / n as f64).max(1e-12);
                    ic_p2(v, k, n, t)
                })
                .collect();
            let best = (0..ic.len()).min_by(|a, b| ic[*a].total_cmp(&ic[*b])).expect("r_max >= 1");
            (best + 1, ic)
        }
    };
    let mut vecs = DMatrix::zeros(n, r);
    for (c, k) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(*k).into_owned();
        // deterministic sign: largest entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        vecs.set_column(c, &v);
    }
    let loadings = &vecs * (n as f64).sqrt();
    let factors = loadings.transpose() * &x / n as f64;
    let resid = &x - &loadings * &factors;
    let idio_cov = DVector::from_fn(n, |i, _| resid.row(i).norm_squared() / t as f64 * sds[i] * sds[i]);
    let factor_var_coeffs = fit_var(&factors, var_lags)?;
    Ok(FactorModel { r, loadings, factors, factor_var_coeffs, idio_cov, means, sds, ic_values })
}

/// OLS VAR(p) without intercept on the columns of `f`.
pub fn fit_var(f: &DMatrix<f64>, p: usize) -> Result<Vec<DMatrix<f64>>> {
    let (r, t) = f.shape();
    if t <= p + r * p {
        return Err(NetvarError::Estimation(format!(
            "factor VAR({p}) with {r} factors needs more than {} periods, got {t}",
            p + r * p
        )));
    }
    let rows = t - p;
    let x = DMatrix::from_fn(rows, r * p, |s, c| {
        let (l, k) = (c / r, c % r);
        f[(k, s + p - 1 - l)]
    });
    let y = f.columns(p, rows).transpose();
    let b = ols(&x, &y)?;
    Ok((0..p).map(|l| b.rows(l * r, r).transpose()).collect())
}

impl FactorModel {
    /// Lags of the factor VAR.
    pub fn var_lags(&self) -> usize {
        self.factor_var_coeffs.len()
    }

    /// Factor forecasts `r x h` for periods `T+1..T+h`.
    pub fn forecast_factor_path(&self, h: usize) -> DMatrix<f64> {
        let p = self.var_lags();
        let t = self.factors.ncols();
        let mut hist: Vec<DVector<f64>> = (0..p.min(t)).map(|l| self.factors.column(t - 1 - l).into_owned()).collect();
        while hist.len() < p {
            hist.push(DVector::zeros(self.r));
        }
        let mut out = DMatrix::zeros(self.r, h);
        for s in 0..h {
            let mut f = DVector::zeros(self.r);
            for (l, m) in self.factor_var_coeffs.iter().enumerate() {
                f += m * &hist[l];
            }
            out.set_column(s, &f);
            hist.insert(0, f);
            hist.truncate(p);
        }
        out
    }
}

/// `n x h` forecasts of the data for periods `T+1..T+h`.
pub fn forecast_factors(model: &FactorModel, h: usize) -> Result<DMatrix<f64>> {
    if h == 0 {
        return Err(NetvarError::Validation("forecast horizon must be >= 1".into()));
    }
    let z = &model.loadings * model.forecast_factor_path(h);
    Ok(DMatrix::from_fn(z.nrows(), h, |i, s| model.means[i] + model.sds[i] * z[(i, s)]))
}

/// `A = B C` with `r = rank(A)`; the NVAR(p, 1) then has factors
/// `f_t = sum_l alpha_l C y_{t-l}` and loadings `B`.
#[derive(Debug, Clone)]
pub struct FactorRepresentation {
    pub r: usize,
    /// `n x r`.
    pub b: DMatrix<f64>,
    /// `r x n`.
    pub c: DMatrix<f64>,
    pub alpha: Vec<f64>,
}

impl FactorRepresentation {
    /// Factor values implied at period `t` (needs `t >= p`).
    pub fn factor_at(&self, values: &DMatrix<f64>, t: usize) -> DVector<f64> {
        let mut f = DVector::zeros(self.r);
        for (l, a) in self.alpha.iter().enumerate() {
            f += &self.c * values.column(t - 1 - l) * *a;
        }
        f
    }
}

/// Rank-revealing factorisation of the network of an NVAR(p, 1) through its
/// singular value decomposition; the rank counts singular values above
/// `1e-10` times the largest.
pub fn nvar_to_factor(model: &NvarModel) -> Result<FactorRepresentation> {
    if model.q() != 1 {
        return Err(NetvarError::Validation("the factor representation needs q = 1".into()));
    }
    let a = model.network().adjacency();
    let n = a.nrows();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V'");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|x, y| svd.singular_values[*y].total_cmp(&svd.singular_values[*x]));
    let top = order.first().map_or(0.0, |k| svd.singular_values[*k]);
    let keep: Vec<usize> = order.into_iter().filter(|k| svd.singular_values[*k] > 1e-10 * top).collect();
    let r = keep.len();
    let mut b = DMatrix::zeros(n, r);
    let mut c = DMatrix::zeros(r, n);
    for (col, k) in keep.iter().enumerate() {
        b.set_column(col, &(u.column(*k) * svd.singular_values[*k]));
        c.set_row(col, &vt.row(*k));
    }
    let err = if r == 0 { a.amax() } else { (a - &b * &c).amax() };
    if err >= 1e-8 {
        return Err(NetvarError::Numeric(format!("factorisation error {err:e} exceeds 1e-8")));
    }
    Ok(FactorRepresentation { r, b, c, alpha: model.alpha().column(0).iter().cloned().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rank_one_panel_is_reconstructed() {
        let lambda = DVector::from_fn(6, |i, _| 1.0 + i as f64 * 0.3);
        let f = DVector::from_fn(50, |s, _| (s as f64 * 0.7).sin() + 0.1 * s as f64 % 1.3);
        let values = &lambda * f.transpose();
        let panel = Panel::from_values(values.clone()).unwrap();
        let m = fit_pca_factors(&panel, 4, FactorCount::BaiNgIcp2, 1).unwrap();
        assert_eq!(m.r, 1);
        let z = &m.loadings * &m.factors;
        let back = DMatrix::from_fn(6, 50, |i, s| m.means[i] + m.sds[i] * z[(i, s)]);
        assert!((back - values).amax() < 1e-8);
    }

    #[test]
    fn full_count_reconstructs_exactly() {
        let values = noise(5, 40, 1);
        let panel = Panel::from_values(values.clone()).unwrap();
        let m = fit_pca_factors(&panel, 0, FactorCount::Fixed(5), 1).unwrap();
        let z = &m.loadings * &m.factors;
        let back = DMatrix::from_fn(5, 40, |i, s| m.means[i] + m.sds[i] * z[(i, s)]);
        assert!((back - values).amax() < 1e-8);
        let ll = m.loadings.transpose() * &m.loadings / 5.0;
        assert!((ll - DMatrix::identity(5, 5)).amax() < 1e-10);
        let ff = &m.factors * m.factors.transpose();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(ff[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn white_noise_selects_the_floor() {
        let panel = Panel::from_values(noise(30, 200, 2)).unwrap();
        let m = fit_pca_factors(&panel, 8, FactorCount::BaiNgIcp2, 1).unwrap();
        assert_eq!(m.r, 1);
        assert!(fit_pca_factors(&panel, 30, FactorCount::BaiNgIcp2, 1).is_err());
    }

    #[test]
    fn ar1_factor_forecast_is_geometric() {
        let mut model = fit_pca_factors(&Panel::from_values(noise(4, 60, 3)).unwrap(), 0, FactorCount::Fixed(1), 1).unwrap();
        model.factor_var_coeffs = vec![DMatrix::from_element(1, 1, 0.6)];
        let f_t = model.factors[(0, 59)];
        let path = model.forecast_factor_path(5);
        for h in 0..5 {
            assert!((path[(0, h)] - 0.6f64.powi(h as i32 + 1) * f_t).abs() < 1e-12);
        }
        model.factor_var_coeffs = vec![DMatrix::zeros(1, 1)];
        let fc = forecast_factors(&model, 3).unwrap();
        for s in 0..3 {
            assert!((fc.column(s) - &model.means).amax() < 1e-12);
        }
    }

    #[test]
    fn forecast_matches_companion_iteration() {
        let panel = Panel::from_values(noise(6, 120, 4)).unwrap();
        let m = fit_pca_factors(&panel, 0, FactorCount::Fixed(2), 2).unwrap();
        let comp = crate::model::companion(&m.factor_var_coeffs);
        let t = m.factors.ncols();
        let mut state = DVector::zeros(4);
        state.rows_mut(0, 2).copy_from(&m.factors.column(t - 1));
        state.rows_mut(2, 2).copy_from(&m.factors.column(t - 2));
        let path = m.forecast_factor_path(6);
        for h in 0..6 {
            state = &comp * state;
            assert!((path.column(h) - state.rows(0, 2)).amax() < 1e-10);
        }
    }

    #[test]
    fn network_rank_is_detected() {
        let paper = Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0]).unwrap();
        let m = NvarModel::p1(&[0.5, 0.3], paper, DMatrix::identity(3, 3)).unwrap();
        let rep = nvar_to_factor(&m).unwrap();
        assert_eq!(rep.r, 3);
        let b = DVector::from_vec(vec![1.0, 0.5, 0.2, 0.4]);
        let c = DVector::from_vec(vec![0.3, 0.0, 0.7, 0.1]);
        let rank1 = Network::from_matrix(&b * c.transpose()).unwrap();
        let m = NvarModel::p1(&[0.9], rank1, DMatrix::identity(4, 4)).unwrap();
        assert_eq!(nvar_to_factor(&m).unwrap().r, 1);
        let dup = Network::from_rows(3, &[0.2, 0.2, 0.5, 0.1, 0.1, 0.3, 0.4, 0.4, 0.0]).unwrap();
        let m = NvarModel::p1(&[0.9], dup, DMatrix::identity(3, 3)).unwrap();
        let rep = nvar_to_factor(&m).unwrap();
        assert_eq!(rep.r, 2);
        assert!((m.network().adjacency() - &rep.b * &rep.c).amax() < 1e-8);
    }
}
