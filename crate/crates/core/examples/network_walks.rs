//! Higher-order connections and summary statistics of a small network.

use netvar::Network;

fn main() -> netvar::Result<()> {
    let net = Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0])?;
    for k in 1..=3 {
        println!("A^{k} =\n{:.3}", net.connection_order(k)?);
    }
    println!("spectral radius {:.4}", net.spectral_radius()?);

    let stats = net.compute_stats(0.0);
    println!("weighted in-degrees  {:?}", stats.weighted_in_degrees);
    println!("weighted out-degrees {:?}", stats.weighted_out_degrees);
    println!("density {:.3}, diameter {:?}", stats.density, stats.diameter);
    for (i, row) in stats.distances.iter().enumerate() {
        println!("shortest walks from unit {}: {row:?}", i + 1);
    }
    Ok(())
}
