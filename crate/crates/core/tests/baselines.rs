use nsstpp::baselines::{etas_fit, etas_kernel, etas_simulate, poisson_fit, EtasParams};
use nsstpp::geometry::BoundingBox;
use nsstpp::FitConfig;
use nsstpp_testkit as tk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn etas_spatial_slice_is_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let p = EtasParams {
            c_e: 1.0,
            beta: 1.0,
            sigma_x2: rng.random_range(0.2..2.0),
            sigma_y2: rng.random_range(0.2..2.0),
            mu: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            lambda0: 0.1,
        };
        let dt = rng.random_range(0.2..3.0);
        let r = 10.0 * (p.sigma_x2.max(p.sigma_y2) * dt).sqrt();
        let mass = tk::quad2d(|d| etas_kernel(dt, d, &p), [p.mu[0] - r, p.mu[0] + r], [p.mu[1] - r, p.mu[1] + r], 16, 12);
        let expected = (-p.beta * dt).exp();
        assert!((mass - expected).abs() / expected < 1e-5, "{mass} vs {expected}");
    }
}

#[test]
fn etas_decay_recovered() {
    let truth = EtasParams { c_e: 0.4, beta: 0.8, sigma_x2: 0.1, sigma_y2: 0.1, mu: [0.0, 0.0], lambda0: 0.005 };
    let bounds = BoundingBox { min: [0.0, 0.0], max: [20.0, 20.0] };
    let events = etas_simulate(&truth, &bounds, 200.0, 5, 100_000).unwrap();
    let cfg = FitConfig { lr_init: 0.1, max_epochs: 1500, ..FitConfig::default() };
    let fit = etas_fit(&events, bounds.area(), 200.0, &cfg).unwrap();
    assert!((fit.params.beta - 0.8).abs() < 0.2 * 0.8, "beta {}", fit.params.beta);
}

#[test]
fn poisson_estimator_unbiased() {
    let (rate, area, horizon) = (0.3, 4.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let est: Vec<f64> = (0..400)
        .map(|_| {
            let n = rand_distr::Distribution::sample(&rand_distr::Poisson::new(rate * area * horizon).unwrap(), &mut rng) as usize;
            poisson_fit(n, area, horizon).unwrap()
        })
        .collect();
    let m = est.iter().sum::<f64>() / est.len() as f64;
    let sd = (est.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
    assert!((m - rate).abs() < 3.0 * sd / (est.len() as f64).sqrt());
}
