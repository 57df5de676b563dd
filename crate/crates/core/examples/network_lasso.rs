//! Estimating an unknown network: penalised least squares along a lambda
//! path, then the Bayesian counterpart by Gibbs sampling.

use nalgebra::DMatrix;
use netvar::model::simulate;
use netvar::netest::{gibbs_nvar_p1, select_lambda_bic, FitControl, GibbsConfig, PenaltyConfig};
use netvar::{Network, NvarModel};

fn main() -> netvar::Result<()> {
    let net = Network::from_rows(4, &[0.0, 0.8, 0.0, 0.0, 0.0, 0.0, 0.6, 0.3, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0])?;
    let model = NvarModel::p1(&[0.5, 0.3], net.clone(), DMatrix::identity(4, 4))?;
    let panel = simulate(&model, 600, None, 5, false)?;

    let sel = select_lambda_bic(&panel, 2, &PenaltyConfig::default(), &FitControl::default())?;
    println!("BIC picks lambda {:.4} with {} links", sel.lambda, sel.fit.n_nonzero);
    println!("alpha {:.3?}", sel.fit.alpha.as_slice());
    println!("estimated links\n{:.3}", sel.fit.network.adjacency());
    println!("true links (alpha normalised to sum 1)\n{:.3}", net.adjacency() * 0.8);

    let penalty = PenaltyConfig { lambda: 1e-3, varphi: 1e-3, lambda_path: None };
    let draws = gibbs_nvar_p1(&panel, 2, &penalty, &GibbsConfig { n_draws: 1000, burn: 200, seed: 5 })?;
    println!("posterior mean alpha {:.3?} (sd {:.3?})", draws.alpha_mean().as_slice(), draws.alpha_sd().as_slice());
    println!("posterior mean links\n{:.3}", draws.adjacency_mean());
    Ok(())
}
