//! Ranking lag counts and sampling ratios by marginal likelihood.

use nalgebra::DMatrix;
use netvar::model::simulate_snapshots;
use netvar::smc::{model_select, Criterion, GridPoint, SmcConfig};
use netvar::{HighFreqSpec, Network, SamplingRatio};

fn main() -> netvar::Result<()> {
    let net = Network::from_matrix(DMatrix::from_fn(3, 3, |i, j| if j == (i + 1) % 3 { 0.8 } else { 0.0 }))?;
    let spec = HighFreqSpec::new(SamplingRatio::Every(1), vec![0.3, 0.7], true)?;
    let (_, panel) = simulate_snapshots(&spec, &net, &DMatrix::identity(3, 3), 300, None, 3, false)?;

    let grid: Vec<GridPoint> = [(1.0, 1), (2.0, 1), (3.0, 1), (2.0, 2), (4.0, 2)]
        .iter()
        .map(|&(p_star, k)| GridPoint { p_star, q_star: SamplingRatio::Every(k) })
        .collect();
    let config = SmcConfig { particles: 256, seed: 3, ..Default::default() };
    let selection = model_select(&panel, &net, &grid, Criterion::Mdd, &config)?;
    println!("scored from period {}", selection.start);
    for s in &selection.ranked {
        println!("p* = {}, q* = {}: log MDD {:.2}, BIC {:.2}, AIC {:.2}", s.p_star, s.q_star, s.log_mdd, s.bic, s.aic);
    }
    Ok(())
}
