//! Rolling-origin forecast comparison of an NVAR against a principal
//! components factor model.

use nalgebra::DMatrix;
use netvar::forecast::{rolling_evaluate, EvalConfig, FactorFactory, ModelFactory, NvarFactory};
use netvar::model::simulate;
use netvar::{Network, NvarModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> netvar::Result<()> {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(0.85..1.0)
        } else if rng.random::<f64>() < 0.05 {
            rng.random_range(0.1..0.5)
        } else {
            0.0
        }
    });
    let net = Network::from_matrix(a)?;
    let net = net.scaled(1.0 / net.spectral_radius()?)?;
    let panel = simulate(&NvarModel::p1(&[0.95], net, DMatrix::identity(n, n))?, 300, None, 11, false)?;

    let config = EvalConfig {
        initial_train_end: 199,
        final_train_end: 293,
        horizons: (1..=6).collect(),
        origin_step: 4,
        ..Default::default()
    };
    let nvar = NvarFactory::new(1);
    let factor = FactorFactory::new(6, 1);
    let models: [&dyn ModelFactory; 2] = [&nvar, &factor];
    let report = rolling_evaluate(&panel, &models, &config)?;
    report.write_csv(std::io::stdout())?;
    Ok(())
}
