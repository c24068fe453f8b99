use nsstpp::geometry::BoundingBox;
use nsstpp::neural::NetworkWeights;
use nsstpp::simulator::{branching_ratio, replicate, simulate, BoundStrategy, SimConfig};
use nsstpp::{KernelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn symmetric_params(lambda0: f64, c: f64, sigma0: f64, tau: f64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nets = (0..3).map(|_| NetworkWeights::symmetric(&[8, 4], &mut rng)).collect();
    ModelParams::new(lambda0, c, sigma0, tau, vec![], vec![], nets).unwrap()
}

fn sim_config<'a>(params: &'a ModelParams, kernel: &'a KernelConfig, side: f64, strategy: BoundStrategy) -> SimConfig<'a> {
    SimConfig {
        horizon: kernel.horizon,
        bounds: BoundingBox { min: [0.0, 0.0], max: [side, side] },
        regions: None,
        params,
        kernel,
        landmarks: &[],
        strategy,
        seed: 0,
        max_events: 100_000,
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn cluster_total_matches_branching_mean() {
    let kernel = KernelConfig::new(200.0, 1600.0);
    let m = 0.5;
    let sigma0 = 2.0;
    let c = m / ((std::f64::consts::PI / 2.0).sqrt() * sigma0);
    let params = symmetric_params(1.0 / 1600.0, c, sigma0, 0.3);
    assert!((branching_ratio(&params) - m).abs() < 1e-12);
    let sims = replicate(&sim_config(&params, &kernel, 40.0, BoundStrategy::Envelope), 7, 100).unwrap();
    let counts: Vec<f64> = sims.iter().map(|s| s.events.len() as f64).collect();
    let (mean, var) = mean_var(&counts);
    let expected = 200.0 / (1.0 - m);
    let se = (var / counts.len() as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");

    // offspring of events far from the horizon
    let (mut parents, mut children) = (0usize, 0usize);
    for s in &sims {
        let off = s.offspring_counts();
        for (e, k) in s.events.iter().zip(off) {
            if e.t < kernel.horizon - 8.0 * sigma0 {
                parents += 1;
                children += k;
            }
        }
    }
    let ratio = children as f64 / parents as f64;
    assert!((ratio - m).abs() < 0.1 * m, "offspring ratio {ratio}");
}

/// Asymptotic Kolmogorov survival function.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let x = d * (n as f64).sqrt();
    let p: f64 = (1..100).map(|k| 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn homogeneous_time_rescaling_passes_ks() {
    let kernel = KernelConfig::new(100.0, 25.0);
    let params = symmetric_params(0.2, 0.0, 1.0, 1.0);
    let rate = 0.2 * 25.0;
    let mut passed = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let sim = SimConfig { seed, ..sim_config(&params, &kernel, 5.0, BoundStrategy::UniformBox) };
        let events = simulate(&sim).unwrap().events;
        let mut u: Vec<f64> = std::iter::once(0.0)
            .chain(events.iter().map(|e| e.t))
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| 1.0 - (-(w[1] - w[0]) * rate).exp())
            .collect();
        u.sort_by(f64::total_cmp);
        let n = u.len();
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - x))
            .fold(0.0, f64::max);
        if kolmogorov_p(d, n) > 0.01 {
            passed += 1;
        }
    }
    assert!(passed as f64 >= 0.95 * seeds as f64, "{passed}/{seeds}");
}

#[test]
fn bound_strategies_agree_in_law() {
    let kernel = KernelConfig::new(60.0, 100.0);
    let params = symmetric_params(0.02, 0.15, 2.0, 0.5);
    let a = replicate(&sim_config(&params, &kernel, 10.0, BoundStrategy::UniformBox), 1, 150).unwrap();
    let b = replicate(&sim_config(&params, &kernel, 10.0, BoundStrategy::Envelope), 2, 150).unwrap();
    let ca: Vec<f64> = a.iter().map(|s| s.events.len() as f64).collect();
    let cb: Vec<f64> = b.iter().map(|s| s.events.len() as f64).collect();
    let ((ma, va), (mb, vb)) = (mean_var(&ca), mean_var(&cb));
    let se = (va / 150.0 + vb / 150.0).sqrt();
    assert!((ma - mb).abs() < 3.5 * se, "{ma} vs {mb}, se {se}");
    // the envelope wastes fewer proposals
    let pa: usize = a.iter().map(|s| s.proposals).sum();
    let pb: usize = b.iter().map(|s| s.proposals).sum();
    assert!(pb < pa);
}

#[test]
fn same_seed_same_stream() {
    let kernel = KernelConfig::new(30.0, 16.0);
    let params = symmetric_params(0.1, 0.2, 1.5, 0.8);
    let cfg = sim_config(&params, &kernel, 4.0, BoundStrategy::Envelope);
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
}
