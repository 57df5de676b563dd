//! Posterior for the timing weights of an NVAR(2, 1) by sequential Monte Carlo.

use nalgebra::{DMatrix, DVector};
use netvar::model::simulate_snapshots;
use netvar::smc::{run_smc, SmcConfig};
use netvar::{HighFreqSpec, Network, SamplingRatio};

fn main() -> netvar::Result<()> {
    let net = Network::from_matrix(DMatrix::from_fn(5, 5, |i, j| if j == (i + 1) % 5 { 0.75 } else { 0.0 }))?;
    let spec = HighFreqSpec::new(SamplingRatio::Every(1), vec![0.3, 0.7], true)?;
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.8, 1.2, 0.9, 1.1]));
    let (_, panel) = simulate_snapshots(&spec, &net, &sigma, 500, None, 7, false)?;

    let result = run_smc(&panel, &net, 2, SamplingRatio::Every(1), &SmcConfig { seed: 7, ..Default::default() }, None)?;
    let (lo, hi) = result.delta_hpd(1, 0.95);
    println!("stages {}, log MDD {:.3}", result.stages.len(), result.score.log_mdd);
    println!("delta_1: MAP {:.4}, mean {:.4}, 95% HPD [{lo:.4}, {hi:.4}]", result.map.delta[0], result.posterior_mean.delta[0]);
    for i in 0..5 {
        let (lo, hi) = result.sigma_hpd(i, 0.95);
        println!("sigma_{}: mean {:.3}, 95% HPD [{lo:.3}, {hi:.3}]", i + 1, result.posterior_mean.sigma[i]);
    }
    Ok(())
}
