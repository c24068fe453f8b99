//! Straight-line reference implementations used as oracles by the test
//! suites. Nothing here shares numerical code with the library: covariances
//! are built by rotating the ellipse axes, Gaussians use an explicit inverse,
//! Φ comes from quadrature, and there is no caching or history truncation.

use std::f64::consts::PI;

use nsstpp::neural::NetworkWeights;
use nsstpp::{Event, KernelConfig, Landmark, LandmarkCategory, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre over `[a, b]` with `tiles` panels of `order` nodes.
pub fn quad1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tiles: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / tiles as f64;
    let mut total = 0.0;
    for k in 0..tiles {
        let lo = a + k as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += wi * f(lo + (xi + 1.0) * h / 2.0) * h / 2.0;
        }
    }
    total
}

/// Tensor-product composite Gauss–Legendre over a rectangle.
pub fn quad2d(f: impl Fn(Point) -> f64, x: [f64; 2], y: [f64; 2], tiles: usize, order: usize) -> f64 {
    quad1d(|yy| quad1d(|xx| f([xx, yy]), x[0], x[1], tiles, order), y[0], y[1], tiles, order)
}

/// Φ(z) by quadrature of the normal density.
pub fn normal_cdf(z: f64) -> f64 {
    let half = quad1d(|u| (-0.5 * u * u).exp() / (2.0 * PI).sqrt(), 0.0, z.abs(), 16, 20);
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Central difference; `richardson` combines steps `h` and `h/2`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64, richardson: bool) -> f64 {
    let mut d = |h: f64| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    };
    if richardson {
        let d1 = d(h);
        let d2 = d(h / 2.0);
        (4.0 * d2 - d1) / 3.0
    } else {
        d(h)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Raw network output `(u_x, u_y, logit)` at `s`.
pub fn net_output(net: &NetworkWeights, s: Point) -> [f64; 3] {
    let sizes = net.sizes();
    let v = net.values();
    let mut x = s.to_vec();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = v[off + n_in * n_out + o];
            for k in 0..n_in {
                acc += v[off + o * n_in + k] * x[k];
            }
            z[o] = if l + 2 < sizes.len() { softplus(acc) } else { acc };
        }
        off += n_in * n_out + n_out;
        x = z;
    }
    [x[0], x[1], x[2]]
}

/// Focus points and weights at `s`.
pub fn focus_outputs(nets: &[NetworkWeights], s: Point, c: f64) -> Vec<(Point, f64)> {
    let raw: Vec<[f64; 3]> = nets.iter().map(|n| net_output(n, s)).collect();
    let z: f64 = raw.iter().map(|r| r[2].exp()).sum();
    raw.iter()
        .map(|r| {
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let psi = if n == 0.0 { [0.0, 0.0] } else { [c * n.tanh() * r[0] / n, c * n.tanh() * r[1] / n] };
            (psi, r[2].exp() / z)
        })
        .collect()
}

/// Covariance of the ellipse with area `A` and foci `±ψ`, scaled by `τz²`,
/// built from its semi-axes and rotation angle.
pub fn ellipse_cov(psi: Point, area: f64, tau_z: f64) -> Mat2 {
    let f2 = psi[0] * psi[0] + psi[1] * psi[1];
    let ab = area / PI;
    let a2 = (f2 + (f2 * f2 + 4.0 * ab * ab).sqrt()) / 2.0;
    let b2 = ab * ab / a2;
    let th = psi[1].atan2(psi[0]);
    let (c, s) = (th.cos(), th.sin());
    let t2 = tau_z * tau_z;
    [
        [t2 * (a2 * c * c + b2 * s * s), t2 * (a2 - b2) * c * s],
        [t2 * (a2 - b2) * c * s, t2 * (a2 * s * s + b2 * c * c)],
    ]
}

pub fn gaussian(d: Point, m: &Mat2) -> f64 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

/// `κ_s(u) = N(u; s, Σ(ψ))`.
pub fn feature_function(u: Point, s: Point, cov: &Mat2) -> f64 {
    gaussian([u[0] - s[0], u[1] - s[1]], cov)
}

/// `υ(s, s′)` from its definition as a weighted sum of Gaussian products.
pub fn spatial_kernel(s: Point, sp: Point, params: &ModelParams, config: &KernelConfig) -> f64 {
    let a = focus_outputs(params.nets(), s, config.focus_bound);
    let b = focus_outputs(params.nets(), sp, config.focus_bound);
    let tau = params.tau_z();
    let mut acc = 0.0;
    for (pa, wa) in &a {
        for (pb, wb) in &b {
            let m = add(&ellipse_cov(*pa, config.ellipse_area, tau), &ellipse_cov(*pb, config.ellipse_area, tau));
            acc += wa * wb * gaussian([s[0] - sp[0], s[1] - sp[1]], &m);
        }
    }
    acc
}

/// λ(t, s) summing over every event strictly before `t`.
pub fn intensity(t: f64, s: Point, events: &[Event], params: &ModelParams, config: &KernelConfig, landmarks: &[Landmark]) -> f64 {
    let mut lam = params.lambda0();
    for ((l, g), sd) in landmarks.iter().zip(params.gammas()).zip(params.sigmas()) {
        let d2 = (s[0] - l.location[0]).powi(2) + (s[1] - l.location[1]).powi(2);
        lam += g * (-d2 / (2.0 * sd * sd)).exp() / (2.0 * PI * sd * sd);
    }
    for e in events.iter().filter(|e| e.t < t) {
        let dt = t - e.t;
        let nu = params.magnitude() * (-dt * dt / (2.0 * params.sigma0().powi(2))).exp();
        lam += nu * spatial_kernel(s, e.s, params, config);
    }
    lam
}

/// Closed-form compensator written out term by term.
pub fn compensator(events: &[Event], params: &ModelParams, config: &KernelConfig) -> f64 {
    let t = config.horizon;
    let s0 = params.sigma0();
    let trig: f64 = events.iter().map(|e| normal_cdf((t - e.t) / s0) - 0.5).sum();
    params.lambda0() * config.area_s * t
        + t * params.gammas().iter().sum::<f64>()
        + (2.0 * PI).sqrt() * params.magnitude() * s0 * trig
}

pub fn log_likelihood(events: &[Event], params: &ModelParams, config: &KernelConfig, landmarks: &[Landmark]) -> f64 {
    let sum: f64 = events.iter().map(|e| intensity(e.t, e.s, events, params, config, landmarks).ln()).sum();
    sum - compensator(events, params, config)
}

/// Monte-Carlo estimate of `∫_0^T ∫_{R²} λ` with the background integrated
/// over `|S|` and the landmark bumps over R² analytically. Each event's
/// triggering mass is estimated with times uniform on `[t_j, T]` and locations
/// drawn from an isotropic Gaussian around `s_j`. Returns `(estimate, se)`.
pub fn mc_compensator(
    events: &[Event],
    params: &ModelParams,
    config: &KernelConfig,
    samples_per_event: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_end = config.horizon;
    let tau = params.tau_z();
    let var = 4.0 * tau * tau * config.ellipse_area / PI;
    let sd = var.sqrt();
    let mut total = params.lambda0() * config.area_s * t_end + t_end * params.gammas().iter().sum::<f64>();
    let mut var_total = 0.0;
    for e in events {
        let span = t_end - e.t;
        if span <= 0.0 {
            continue;
        }
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..samples_per_event {
            let t = e.t + rng.random::<f64>() * span;
            // Box–Muller
            let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
            let r = (-2.0 * u1.ln()).sqrt();
            let z = [r * (2.0 * PI * u2).cos(), r * (2.0 * PI * u2).sin()];
            let s = [e.s[0] + sd * z[0], e.s[1] + sd * z[1]];
            let q = (-(z[0] * z[0] + z[1] * z[1]) / 2.0).exp() / (2.0 * PI * var);
            let dt = t - e.t;
            let nu = params.magnitude() * (-dt * dt / (2.0 * params.sigma0().powi(2))).exp();
            let v = span * nu * spatial_kernel(s, e.s, params, config) / q;
            sum += v;
            sum2 += v * v;
        }
        let n = samples_per_event as f64;
        let mean = sum / n;
        total += mean;
        var_total += (sum2 / n - mean * mean) / n;
    }
    (total, var_total.max(0.0).sqrt())
}

/// A small synthetic likelihood problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub events: Vec<Event>,
    pub landmarks: Vec<Landmark>,
    pub params: ModelParams,
    pub config: KernelConfig,
}

/// `n_events` uniform events on `[0, 30] × [0, 3]²` with `n_landmarks`
/// landmarks, Glorot networks and randomized scalars.
pub fn random_problem(n_events: usize, n_landmarks: usize, hidden: &[usize], seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 3.0;
    let mut config = KernelConfig::new(30.0, side * side);
    config.tau_z_init = rng.random_range(0.5..2.0);
    let mut events: Vec<Event> = (0..n_events)
        .map(|_| Event::new(rng.random_range(0.0..config.horizon), rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let landmarks: Vec<Landmark> = (0..n_landmarks)
        .map(|l| Landmark {
            id: format!("l{l}"),
            category: LandmarkCategory::Other,
            location: [rng.random_range(0.0..side), rng.random_range(0.0..side)],
        })
        .collect();
    let nets = (0..config.components).map(|_| NetworkWeights::glorot(hidden, &mut rng)).collect();
    let gammas = (0..n_landmarks).map(|_| rng.random_range(0.05..0.5)).collect();
    let sigmas = (0..n_landmarks).map(|_| rng.random_range(0.3..1.5)).collect();
    let params = ModelParams::new(
        rng.random_range(0.05..0.3),
        rng.random_range(0.1..0.6),
        rng.random_range(1.0..5.0),
        config.tau_z_init,
        gammas,
        sigmas,
        nets,
    )
    .expect("random parameters are valid");
    Problem { events, landmarks, params, config }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let v = quad1d(|x| x.powi(7) - 3.0 * x * x, -1.0, 2.0, 1, 8);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn cdf_reference_values() {
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((normal_cdf(-2.5) - 0.006_209_665_325_776_132).abs() < 1e-14);
    }

    #[test]
    fn ellipse_area_and_foci() {
        let c = ellipse_cov([0.06, -0.08], 0.35, 1.0);
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        assert!((PI * det.sqrt() - 0.35).abs() < 1e-14);
    }
}
