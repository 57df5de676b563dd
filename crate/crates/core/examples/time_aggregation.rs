//! A latent NVAR(3, 1) observed every second period: the implied
//! NVAR(p, q) coefficients and the Kalman-filter likelihood of snapshots.

use nalgebra::DMatrix;
use netvar::model::simulate_snapshots;
use netvar::timeagg::{aggregate, aggregate_symbolic, conditional_loglik};
use netvar::{HighFreqSpec, Network, SamplingRatio};

fn main() -> netvar::Result<()> {
    let sym = aggregate_symbolic(3, SamplingRatio::Every(2), 2)?;
    for (l, phi) in sym.phi.iter().enumerate() {
        let terms: Vec<String> = phi
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.terms().next().is_some())
            .map(|(g, c)| format!("({c}) A^{g}"))
            .collect();
        println!("Phi_{} = {}", l + 1, terms.join(" + "));
    }

    let net = Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0])?.scaled(0.9)?;
    let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![0.2, 0.5, 0.3], true)?;
    let sigma = DMatrix::identity(3, 3);
    let (_, observed) = simulate_snapshots(&spec, &net, &sigma, 200, None, 1, false)?;
    for p in [2, 4, 8] {
        let agg = aggregate(&spec, &net, p)?;
        let ll = conditional_loglik(&agg, &sigma, &observed.values, 8)?;
        println!("truncation p = {p} (q = {}): log likelihood {ll:.6}", agg.q);
    }
    Ok(())
}
