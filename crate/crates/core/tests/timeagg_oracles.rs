use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use netvar::lagpoly::{Coeff, DeltaPoly};
use netvar::linalg::mvn_logpdf;
use netvar::model::{simulate_snapshots, HighFreqSpec, SamplingRatio};
use netvar::timeagg::{
    aggregate, aggregate_symbolic, build_state_space, conditional_loglik, kalman_loglik,
    timeagg_irf,
};
use netvar::Network;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn paper_a() -> Network {
    Network::from_rows(3, &[0.0, 0.0, 0.8, 0.7, 0.0, 0.6, 0.0, 0.8, 0.0]).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn random_network(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Network {
    let m = DMatrix::from_fn(n, n, |_, _| if rng.random::<f64>() < 0.6 { rng.random::<f64>() } else { 0.0 });
    let net = Network::from_matrix(m).unwrap();
    let r = net.spectral_radius().unwrap();
    if r == 0.0 {
        return net;
    }
    net.scaled(radius / r).unwrap()
}

/// Eliminates unobserved lags one matrix at a time, working directly with
/// `n x n` coefficients rather than polynomials in `A`.
fn brute_force_aggregation(
    delta: &[f64],
    a: &DMatrix<f64>,
    k: usize,
    p: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let n = a.nrows();
    let mut x: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    for (l, d) in delta.iter().enumerate() {
        x.insert(l + 1, a * *d);
    }
    let mut v: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    v.insert(0, DMatrix::identity(n, n));
    loop {
        let next = x.keys().cloned().find(|j| j % k != 0 && *j < p * k);
        let Some(j) = next else { break };
        let c = x.remove(&j).unwrap();
        for (l, d) in delta.iter().enumerate() {
            let e = x.entry(j + l + 1).or_insert_with(|| DMatrix::zeros(n, n));
            *e += &c * a * *d;
        }
        let e = v.entry(j).or_insert_with(|| DMatrix::zeros(n, n));
        *e += c;
    }
    let phi = (1..=p).map(|l| x.get(&(l * k)).cloned().unwrap_or_else(|| DMatrix::zeros(n, n))).collect();
    let theta = (0..p)
        .map(|l| {
            let mut m = DMatrix::zeros(n, n * k);
            for b in 0..k {
                if let Some(c) = v.get(&(l * k + b)) {
                    m.view_mut((0, b * n), (n, n)).copy_from(c);
                }
            }
            m
        })
        .collect();
    (phi, theta)
}

#[test]
fn three_lag_two_step_displayed_matrices() {
    let s = aggregate_symbolic(3, SamplingRatio::Every(2), 2).unwrap();
    let one = DeltaPoly::constant(1.0);
    let d = DeltaPoly::var;
    // Phi_1 = d2 A + d1^2 A^2
    assert_eq!(s.phi[0].coeffs.len(), 3);
    assert_eq!(s.phi[0].coeff(1), d(2));
    assert_eq!(s.phi[0].coeff(2), DeltaPoly::from_terms(&[(1.0, &[2])]));
    // Theta_0 = [I, d1 A]
    assert_eq!(s.theta[0][0].coeffs, vec![one]);
    assert_eq!(s.theta[0][1].coeffs.len(), 2);
    assert_eq!(s.theta[0][1].coeff(1), d(1));
    // Theta_1 = [0, d3 A + d1 d2 A^2]
    assert!(s.theta[1][0].is_zero());
    assert_eq!(s.theta[1][1].coeff(1), d(3));
    assert_eq!(s.theta[1][1].coeff(2), DeltaPoly::from_terms(&[(1.0, &[1, 1])]));
    // Phi_2 carries 2 d1 d3 A^2 and the third-order walk d1^2 d2 A^3.
    assert!(s.phi[1].coeff(1).is_zero());
    assert_eq!(s.phi[1].coeff(2), DeltaPoly::from_terms(&[(2.0, &[1, 0, 1])]));
    assert_eq!(s.phi[1].coeff(3), DeltaPoly::from_terms(&[(1.0, &[2, 1])]));
    assert_eq!(s.phi[1].degree(), Some(3));
}

#[test]
fn three_lag_two_step_numeric_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let delta = random_simplex(&mut rng, 3);
        let net = random_network(&mut rng, 4, 0.8);
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), delta.clone(), true).unwrap();
        let agg = aggregate(&spec, &net, 2).unwrap();
        let (phi, theta) = brute_force_aggregation(&delta, net.adjacency(), 2, 2);
        for l in 0..2 {
            assert!((&agg.phi[l] - &phi[l]).amax() < 1e-12);
            assert!((&agg.theta[l] - &theta[l]).amax() < 1e-12);
        }
        // Literal displayed forms.
        let a = net.adjacency();
        let (d1, d2, d3) = (delta[0], delta[1], delta[2]);
        let phi1 = a * d2 + a * a * (d1 * d1);
        assert!((&agg.phi[0] - phi1).amax() < 1e-12);
        let theta1 = a * d3 + a * a * (d1 * d2);
        assert!((agg.theta[1].view((0, 4), (4, 4)) - theta1).amax() < 1e-12);
    }
}

#[test]
fn aggregation_matches_brute_force_over_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p_star in 1..=4 {
        for k in 2..=4 {
            for p in 1..=4 {
                let delta = random_simplex(&mut rng, p_star);
                let net = random_network(&mut rng, 3, 0.9);
                let spec = HighFreqSpec::new(SamplingRatio::Every(k), delta.clone(), true).unwrap();
                let agg = aggregate(&spec, &net, p).unwrap();
                let (phi, theta) = brute_force_aggregation(&delta, net.adjacency(), k, p);
                for l in 0..p {
                    assert!((&agg.phi[l] - &phi[l]).amax() < 1e-12, "phi p*={p_star} q*={k} p={p}");
                    assert!((&agg.theta[l] - &theta[l]).amax() < 1e-12, "theta p*={p_star} q*={k} p={p}");
                }
                assert_eq!(agg.q, p * k - p + 1);
                // highest power in Phi_l is at most l q* - (l - 1)
                for (l, poly) in agg.phi_poly.iter().enumerate() {
                    if let Some(deg) = poly.degree() {
                        assert!(deg <= (l + 1) * k - l);
                    }
                }
            }
        }
    }
}

#[test]
fn order_bound_attained_by_last_lag() {
    for (p_star, k, p) in [(2, 2, 3), (3, 3, 2), (2, 4, 3)] {
        let s = aggregate_symbolic(p_star, SamplingRatio::Every(k), p).unwrap();
        assert_eq!(s.phi[p - 1].degree(), Some(p * k - (p - 1)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn symbolic_and_numeric_agree(seed in 0u64..10_000, p_star in 1usize..4, k in 2usize..4, p in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = random_simplex(&mut rng, p_star);
        let net = random_network(&mut rng, 3, 0.9);
        let spec = HighFreqSpec::new(SamplingRatio::Every(k), delta.clone(), true).unwrap();
        let agg = aggregate(&spec, &net, p).unwrap();
        let sym = aggregate_symbolic(p_star, SamplingRatio::Every(k), p).unwrap();
        let (phi, theta) = sym.eval(&delta);
        for l in 0..p {
            prop_assert!((phi[l].to_matrix(&net) - &agg.phi[l]).amax() < 1e-12);
            for b in 0..k {
                let block = agg.theta[l].view((0, b * 3), (3, 3)).into_owned();
                prop_assert!((theta[l][b].to_matrix(&net) - block).amax() < 1e-12);
            }
        }
        prop_assert_eq!(agg.theta[0].view((0, 0), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        for l in 1..p {
            prop_assert!(agg.theta[l].view((0, 0), (3, 3)).iter().all(|v| *v == 0.0));
        }
    }
}

/// Log density of `(y_1..y_T)` from the state-space model written out as one
/// joint Gaussian: `y_t = M F^t z_0 + sum_s M F^{t-s} T u_s`.
fn joint_gaussian_loglik(
    f: &DMatrix<f64>,
    t_mat: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mu0: &DVector<f64>,
    p0: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> f64 {
    let n = y.nrows();
    let t = y.ncols();
    let m = f.nrows();
    let mut fpow = vec![DMatrix::identity(m, m)];
    for s in 1..=t {
        let next = f * &fpow[s - 1];
        fpow.push(next);
    }
    let sel = |mat: &DMatrix<f64>| mat.rows(0, n).into_owned();
    let tqt = t_mat * q * t_mat.transpose();
    let mut mean = DVector::zeros(n * t);
    let mut cov = DMatrix::zeros(n * t, n * t);
    for a in 1..=t {
        mean.rows_mut((a - 1) * n, n).copy_from(&(sel(&fpow[a]) * mu0));
        for b in 1..=t {
            let mut c = sel(&fpow[a]) * p0 * sel(&fpow[b]).transpose();
            for r in 1..=a.min(b) {
                c += sel(&fpow[a - r]) * &tqt * sel(&fpow[b - r]).transpose();
            }
            cov.view_mut(((a - 1) * n, (b - 1) * n), (n, n)).copy_from(&c);
        }
    }
    let stacked = DVector::from_column_slice(y.as_slice());
    mvn_logpdf(&stacked, &mean, &cov).unwrap()
}

#[test]
fn kalman_matches_joint_gaussian_small_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let net = random_network(&mut rng, 2, 0.7);
        let delta = random_simplex(&mut rng, 2);
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), delta, true).unwrap();
        let agg = aggregate(&spec, &net, 2).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let (_, obs) =
            simulate_snapshots(&spec, &net, &sigma, 8, None, rng.random(), false).unwrap();
        let pre = obs.values.columns(0, 2).into_owned();
        let y = obs.values.columns(2, 6).into_owned();
        let ss = build_state_space(&agg, &sigma, &pre).unwrap();
        let ll = kalman_loglik(&ss, &y).unwrap();
        let want = joint_gaussian_loglik(&ss.f, &ss.t_mat, &ss.q, &ss.init_mean, &ss.init_cov, &y);
        assert!((ll - want).abs() < 1e-6, "{ll} vs {want}");
    }
}

#[test]
fn initial_state_matches_direct_construction() {
    // z_{k,0} = sum_{l>=k} Phi_l y_{k-1-l} + sum_{l>=k-1} Theta_l u_{k-1-l}
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for p in 2..=4 {
        let net = random_network(&mut rng, 3, 0.8);
        let spec = HighFreqSpec::new(SamplingRatio::Every(3), random_simplex(&mut rng, 2), true).unwrap();
        let agg = aggregate(&spec, &net, p).unwrap();
        let sigma = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 + i as f64 } else { 0.2 });
        let pre = DMatrix::from_fn(3, p, |_, _| rng.random::<f64>() - 0.5);
        let ss = build_state_space(&agg, &sigma, &pre).unwrap();
        let y_lag = |j: usize| pre.column(p - 1 - j).into_owned();
        let n = 3;
        let r = agg.shock_blocks;
        let mut q = DMatrix::zeros(n * r, n * r);
        for b in 0..r {
            q.view_mut((b * n, b * n), (n, n)).copy_from(&sigma);
        }
        // block k (1-based, k >= 2) of z_0
        let mut mean = DVector::zeros(n * p);
        mean.rows_mut(0, n).copy_from(&y_lag(0));
        let mut cov = DMatrix::zeros(n * p, n * p);
        for k in 2..=p {
            let mut mk = DVector::zeros(n);
            for l in k..=p {
                mk += &agg.phi[l - 1] * y_lag(l - k + 1);
            }
            mean.rows_mut((k - 1) * n, n).copy_from(&mk);
            for k2 in 2..=p {
                // shocks u_{-j}: block k loads Theta_{j+k-1} on u_{-j} for j >= 0
                let mut c = DMatrix::zeros(n, n);
                for j in 0..p {
                    let (l1, l2) = (j + k - 1, j + k2 - 1);
                    if l1 < p && l2 < p {
                        c += &agg.theta[l1] * &q * agg.theta[l2].transpose();
                    }
                }
                cov.view_mut(((k - 1) * n, (k2 - 1) * n), (n, n)).copy_from(&c);
            }
        }
        assert!((&ss.init_mean - mean).amax() < 1e-12);
        assert!((&ss.init_cov - cov).amax() < 1e-12);
    }
}

#[test]
fn kalman_equals_closed_form_without_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for p_star in 1..=3 {
        let net = random_network(&mut rng, 3, 0.8);
        let delta = random_simplex(&mut rng, p_star);
        let spec = HighFreqSpec::new(SamplingRatio::Every(1), delta.clone(), true).unwrap();
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 1.7]));
        let (_, obs) = simulate_snapshots(&spec, &net, &sigma, 60, None, 3, false).unwrap();
        let agg = aggregate(&spec, &net, p_star).unwrap();
        let ll = conditional_loglik(&agg, &sigma, &obs.values, p_star).unwrap();
        let mut want = 0.0;
        for t in p_star..60 {
            let mut mean = DVector::zeros(3);
            for (l, d) in delta.iter().enumerate() {
                mean += net.adjacency() * obs.values.column(t - l - 1) * *d;
            }
            want += mvn_logpdf(&obs.values.column(t).into_owned(), &mean, &sigma).unwrap();
        }
        assert!((ll - want).abs() < 1e-8, "{ll} vs {want}");
    }
}

#[test]
fn exact_aggregation_for_single_lag() {
    // p* = 1, q* = 2: y_t = d^2 A^2 y_{t-1} + v + d A v', exactly a VAR(1).
    let net = paper_a().scaled(0.9).unwrap();
    let d = 0.8;
    let spec = HighFreqSpec::new(SamplingRatio::Every(2), vec![d], false).unwrap();
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 0.6, 0.0, 0.0, 0.0, 0.9]);
    let (_, obs) = simulate_snapshots(&spec, &net, &sigma, 40, None, 9, false).unwrap();
    let agg = aggregate(&spec, &net, 1).unwrap();
    let ll = conditional_loglik(&agg, &sigma, &obs.values, 1).unwrap();
    let a = net.adjacency();
    let phi = a * a * (d * d);
    let cov = &sigma + a * &sigma * a.transpose() * (d * d);
    let mut want = 0.0;
    for t in 1..40 {
        let mean = &phi * obs.values.column(t - 1);
        want += mvn_logpdf(&obs.values.column(t).into_owned(), &mean, &cov).unwrap();
    }
    assert!((ll - want).abs() < 1e-9);
}

#[test]
fn truncation_changes_likelihood_little_at_moderate_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..4 {
        let net = random_network(&mut rng, 3, 0.7);
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), random_simplex(&mut rng, 2), true).unwrap();
        let sigma = DMatrix::identity(3, 3);
        let (_, obs) = simulate_snapshots(&spec, &net, &sigma, 200, None, rng.random(), false).unwrap();
        let start = 13;
        let mut prev: Option<f64> = None;
        for p in 8..=12 {
            let agg = aggregate(&spec, &net, p).unwrap();
            let ll = conditional_loglik(&agg, &sigma, &obs.values, start).unwrap();
            if let Some(pv) = prev {
                assert!((ll - pv).abs() < 1e-4 * ll.abs(), "p={p}: {ll} vs {pv}");
            }
            prev = Some(ll);
        }
    }
}

#[test]
fn stationarity_is_preserved_by_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut checked = 0;
    while checked < 60 {
        let p_star = rng.random_range(1..=3);
        let delta = random_simplex(&mut rng, p_star);
        let radius = if rng.random::<bool>() {
            rng.random_range(0.2..0.85)
        } else {
            rng.random_range(1.15..1.6)
        };
        let net = random_network(&mut rng, 3, radius);
        let spec = HighFreqSpec::new(SamplingRatio::Every(2), delta, true).unwrap();
        let latent = spec.companion_stationarity(&net).is_stationary;
        let agg = aggregate(&spec, &net, 12).unwrap();
        let observed = netvar::network::dense_spectral_radius(&netvar::model::companion(&agg.phi)) < 1.0;
        assert_eq!(latent, observed, "radius {radius}");
        checked += 1;
    }
}

#[test]
fn sub_period_responses_reach_the_leontief_inverse() {
    let net = paper_a().scaled(0.6).unwrap();
    let spec = HighFreqSpec::new(SamplingRatio::Every(3), vec![0.5, 0.3, 0.2], true).unwrap();
    let n = 3;
    let want = netvar::linalg::solve(
        &(DMatrix::identity(n, n) - net.adjacency()),
        &DMatrix::identity(n, n),
    )
    .unwrap();
    // Summing over every observation horizon and every sub-period offset
    // covers each latent horizon exactly once.
    let mut total = DMatrix::zeros(n, n);
    for l in 0..3 {
        let irf = timeagg_irf(&spec, &net, 150, l).unwrap();
        for r in &irf.responses {
            total += r;
        }
    }
    assert!((total - want).amax() < 1e-8);
    let unit = HighFreqSpec::new(SamplingRatio::Every(1), vec![0.5, 0.3, 0.2], true).unwrap();
    let model = unit.latent_model(&net, &DMatrix::identity(3, 3)).unwrap();
    let direct = netvar::dynamics::girf(&model, 6, netvar::dynamics::ShockScale::Unit);
    let irf = timeagg_irf(&unit, &net, 6, 0).unwrap();
    assert_eq!(irf.responses, direct.responses);
}
