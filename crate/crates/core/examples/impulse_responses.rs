//! Impulse responses of an NVAR(2, 2), split by connection order, and the
//! long-run response of a latent NVAR(2, 1).

use nalgebra::DMatrix;
use netvar::dynamics::{girf, long_run_response, order_decompose, ShockScale};
use netvar::{HighFreqSpec, Network, NvarModel, SamplingRatio};

fn main() -> netvar::Result<()> {
    let net = Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0])?.scaled(0.8)?;
    let alpha = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.05]);
    let model = NvarModel::new(alpha, net.clone(), DMatrix::identity(3, 3))?;
    println!("stationary: {:?}", model.check_stationarity());

    let irf = girf(&model, 6, ShockScale::Unit);
    let dec = order_decompose(&model, 6)?;
    for h in 1..=6 {
        let orders: Vec<String> = dec.horizons[h].orders().map(|(k, c)| format!("A^{k}: {c:.4}")).collect();
        println!("h = {h}: response of unit 1 to unit 2 = {:.5}; {}", irf.responses[h][(0, 1)], orders.join(", "));
    }

    let spec = HighFreqSpec::new(SamplingRatio::Every(1), vec![0.4, 0.5], false)?;
    let lr = long_run_response(&spec, &net, 400)?;
    println!("(I - dA)^-1 =\n{:.4}", lr.matrix);
    println!("cumulative response after 400 periods =\n{:.4}", lr.partial_sums[400]);
    Ok(())
}
