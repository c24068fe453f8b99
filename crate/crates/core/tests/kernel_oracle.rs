use std::f64::consts::PI;

use nalgebra::DMatrix;
use nsstpp::kernels::{cov_from_focus, gaussian_product_integral, spatial_kernel};
use nsstpp::likelihood::integral_approx;
use nsstpp::neural::{NetworkWeights, DEFAULT_HIDDEN};
use nsstpp::{error_bound, KernelConfig, ModelParams, Point};
use nsstpp_testkit as tk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_psi(rng: &mut ChaCha8Rng, c: f64) -> Point {
    let r = c * rng.random::<f64>().sqrt();
    let th = rng.random_range(0.0..2.0 * PI);
    [r * th.cos(), r * th.sin()]
}

#[test]
fn product_integral_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (area, c) = (0.35, 0.1);
    for _ in 0..10 {
        let tau = rng.random_range(0.5..2.0);
        let s = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let sp = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let (pa, pb) = (random_psi(&mut rng, c), random_psi(&mut rng, c));
        let closed = gaussian_product_integral(s, sp, &cov_from_focus(pa, area, tau), &cov_from_focus(pb, area, tau)).unwrap();
        let (ma, mb) = (tk::ellipse_cov(pa, area, tau), tk::ellipse_cov(pb, area, tau));
        let half = 8.0 * tau;
        let quad = tk::quad2d(
            |u| tk::feature_function(u, s, &ma) * tk::feature_function(u, sp, &mb),
            [-half, 1.0 + half],
            [-half, 1.0 + half],
            24,
            12,
        );
        assert!((closed - quad).abs() / quad < 1e-6, "{closed} vs {quad}");
    }
}

#[test]
fn covariance_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (area, c) = (0.35, 0.1);
    for _ in 0..1000 {
        let tau = rng.random_range(0.2..3.0);
        let psi = random_psi(&mut rng, c);
        let m = cov_from_focus(psi, area, tau);
        let t2 = tau * tau;
        assert!((m.det() - (t2 * area / PI).powi(2)).abs() < 1e-10);
        let (hi, lo) = m.eigenvalues();
        assert!((hi - lo - t2 * (psi[0] * psi[0] + psi[1] * psi[1])).abs() < 1e-10);
        let naive = tk::ellipse_cov(psi, area, tau);
        assert!((m.xx - naive[0][0]).abs() < 1e-12 && (m.xy - naive[0][1]).abs() < 1e-12 && (m.yy - naive[1][1]).abs() < 1e-12);
    }
}

fn random_params(rng: &mut ChaCha8Rng, hidden: &[usize], tau: f64) -> ModelParams {
    let nets = (0..3).map(|_| NetworkWeights::glorot(hidden, rng)).collect();
    ModelParams::new(0.1, 0.5, 2.0, tau, vec![], vec![], nets).unwrap()
}

#[test]
fn spatial_kernel_is_symmetric_and_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let config = KernelConfig::new(30.0, 9.0);
    for _ in 0..20 {
        let tau = rng.random_range(0.3..1.5);
        let params = random_params(&mut rng, &[8, 8], tau);
        let pts: Vec<Point> = (0..25).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)]).collect();
        let feats: Vec<_> = pts.iter().map(|&p| params.local_features(p, &config)).collect();
        let k = DMatrix::from_fn(pts.len(), pts.len(), |i, j| spatial_kernel(pts[i], pts[j], &feats[i], &feats[j]).unwrap());
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_eq!(k[(i, j)].to_bits(), k[(j, i)].to_bits());
            }
        }
        let min = k.clone().symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10, "{min}");
        let naive = tk::spatial_kernel(pts[0], pts[1], &params, &config);
        assert!((k[(0, 1)] - naive).abs() <= 1e-12 * naive.abs().max(1e-300));
    }
}

#[test]
fn closed_form_integral_within_bound() {
    let bound = error_bound(0.35, 0.1).unwrap();
    let allowed = (bound.u - 1.0).max(1.0 - 1.0 / bound.u);
    for seed in 0..3 {
        let p = tk::random_problem(40, 2, &DEFAULT_HIDDEN, 100 + seed);
        let closed = integral_approx(&p.events, &p.params, &p.config).total();
        let (truth, se) = tk::mc_compensator(&p.events, &p.params, &p.config, 2000, seed);
        let rel = (closed - truth).abs() / truth;
        assert!(rel <= allowed + 3.0 * se / truth, "seed {seed}: rel {rel} se {}", se / truth);
    }
}
