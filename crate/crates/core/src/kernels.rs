//! Separable triggering kernel.
//!
//! The temporal factor is `C exp(-Δt² / 2σ0²)`. The spatial factor is the
//! L² inner product of two mixtures of Gaussian feature functions, each
//! centred at its own location with a covariance fixed by a focus point ψ
//! and the ellipse area A:
//!
//! ```text
//! υ(s, s') = Σ_{r1, r2} w_s^{r1} w_{s'}^{r2} N(s - s'; 0, Σ_s^{r1} + Σ_{s'}^{r2})
//! ```
//!
//! The focus-point covariance is evaluated in its polynomial form,
//! `(‖ψ‖²/2) cos 2α = (ψx² - ψy²)/2` and `(‖ψ‖²/2) sin 2α = ψx ψy`, which is
//! smooth through ψ = 0.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Tolerance on `Σ_r w^{(r)} = 1` before the spatial kernel rejects its input.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `C exp(-(t - t_prev)² / 2σ0²)` for a strictly earlier `t_prev`.
pub fn temporal_kernel(t: f64, t_prev: f64, magnitude: f64, sigma0: f64) -> Result<f64> {
    if t <= t_prev {
        return Err(Error::InvalidInput(format!(
            "temporal kernel needs t > t_prev (got t={t}, t_prev={t_prev})"
        )));
    }
    Ok(temporal_value(t - t_prev, magnitude, sigma0))
}

#[inline]
pub(crate) fn temporal_value(dt: f64, magnitude: f64, sigma0: f64) -> f64 {
    magnitude * (-0.5 * dt * dt / (sigma0 * sigma0)).exp()
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl CovMatrix {
    pub fn isotropic(var: f64) -> Self {
        Self { xx: var, xy: 0.0, yy: var }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { xx: self.xx + other.xx, xy: self.xy + other.xy, yy: self.yy + other.yy }
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (half_tr + disc, half_tr - disc)
    }

    /// Unit eigenvector of the larger eigenvalue.
    pub fn major_axis(&self) -> Point {
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        [angle.cos(), angle.sin()]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }

    /// `dᵀ Σ⁻¹ d`.
    pub fn quad_inverse(&self, d: Point) -> f64 {
        (self.yy * d[0] * d[0] - 2.0 * self.xy * d[0] * d[1] + self.xx * d[1] * d[1]) / self.det()
    }
}

/// Network output for one component at one location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusOutput {
    /// Focus point ψ_s, km.
    pub psi: Point,
    /// Component weight w_s^{(r)}.
    pub weight: f64,
}

/// `Q = sqrt(4A² + ‖ψ‖⁴π²) / 2π`.
#[inline]
pub fn focus_q(norm_sq: f64, area: f64) -> f64 {
    (4.0 * area * area + norm_sq * norm_sq * PI * PI).sqrt() / (2.0 * PI)
}

/// Rotation angle of the ellipse; zero for the isotropic case ψ = 0.
pub fn focus_angle(psi: Point) -> f64 {
    if psi == [0.0, 0.0] {
        0.0
    } else {
        psi[1].atan2(psi[0])
    }
}

/// Covariance of the feature function whose one-standard-deviation ellipse has
/// area `area` and foci at ±ψ, scaled by τz².
pub fn cov_from_focus(psi: Point, area: f64, tau_z: f64) -> CovMatrix {
    let norm_sq = psi[0] * psi[0] + psi[1] * psi[1];
    let q = focus_q(norm_sq, area);
    let half_diff = 0.5 * (psi[0] * psi[0] - psi[1] * psi[1]);
    let t2 = tau_z * tau_z;
    CovMatrix { xx: t2 * (q + half_diff), xy: t2 * psi[0] * psi[1], yy: t2 * (q - half_diff) }
}

/// Chains a gradient on the entries of `cov_from_focus(psi, area, tau_z)` back
/// to ψ. `g` holds ∂L/∂(xx, xy, yy) with xy treated as a single variable.
pub(crate) fn cov_focus_backward(psi: Point, area: f64, tau_z: f64, g: &[f64; 3]) -> Point {
    let norm_sq = psi[0] * psi[0] + psi[1] * psi[1];
    let q = focus_q(norm_sq, area);
    let t2 = tau_z * tau_z;
    // dQ/dψ = ‖ψ‖² ψ / 2Q
    let dqx = norm_sq * psi[0] / (2.0 * q);
    let dqy = norm_sq * psi[1] / (2.0 * q);
    let gx = g[0] * (dqx + psi[0]) + g[1] * psi[1] + g[2] * (dqx - psi[0]);
    let gy = g[0] * (dqy - psi[1]) + g[1] * psi[0] + g[2] * (dqy + psi[1]);
    [t2 * gx, t2 * gy]
}

/// Bivariate normal density `N(d; 0, m)`.
#[inline]
pub(crate) fn gaussian_density(d: Point, m: &CovMatrix) -> f64 {
    let det = m.det();
    (-0.5 * m.quad_inverse(d)).exp() / (2.0 * PI * det.sqrt())
}

/// Density and its gradient w.r.t. the entries (xx, xy, yy) of `m`.
#[inline]
pub(crate) fn gaussian_density_grad(d: Point, m: &CovMatrix) -> (f64, [f64; 3]) {
    let det = m.det();
    let num = m.yy * d[0] * d[0] - 2.0 * m.xy * d[0] * d[1] + m.xx * d[1] * d[1];
    let q = num / det;
    let g = (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
    let inv_det = 1.0 / det;
    let inv_det2 = inv_det * inv_det;
    let dq_xx = d[1] * d[1] * inv_det - num * m.yy * inv_det2;
    let dq_yy = d[0] * d[0] * inv_det - num * m.xx * inv_det2;
    let dq_xy = -2.0 * d[0] * d[1] * inv_det + num * 2.0 * m.xy * inv_det2;
    let dlog_xx = -0.5 * dq_xx - 0.5 * m.yy * inv_det;
    let dlog_yy = -0.5 * dq_yy - 0.5 * m.xx * inv_det;
    let dlog_xy = -0.5 * dq_xy + m.xy * inv_det;
    (g, [g * dlog_xx, g * dlog_xy, g * dlog_yy])
}

/// `⟨κ_s, κ_{s'}⟩`: the overlap of two Gaussian feature functions, which equals
/// the density of `N(0, Σ_s + Σ_{s'})` at `s - s'`.
pub fn gaussian_product_integral(s: Point, s_prime: Point, cov_s: &CovMatrix, cov_sp: &CovMatrix) -> Result<f64> {
    let sum = cov_s.add(cov_sp);
    if !sum.is_positive_definite() {
        return Err(Error::Numerical(format!("covariance sum {sum:?} is not positive definite")));
    }
    Ok(gaussian_density([s[0] - s_prime[0], s[1] - s_prime[1]], &sum))
}

/// One mixture component at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub psi: Point,
    pub weight: f64,
    pub cov: CovMatrix,
}

/// The R components of the feature mapping at a single location.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalFeatures {
    pub components: Vec<Component>,
}

impl LocalFeatures {
    pub fn from_outputs(outputs: &[FocusOutput], area: f64, tau_z: f64) -> Self {
        let components = outputs
            .iter()
            .map(|o| Component { psi: o.psi, weight: o.weight, cov: cov_from_focus(o.psi, area, tau_z) })
            .collect();
        Self { components }
    }

    /// Single isotropic component with unit weight.
    pub fn isotropic(area: f64, tau_z: f64) -> Self {
        Self::from_outputs(&[FocusOutput { psi: [0.0, 0.0], weight: 1.0 }], area, tau_z)
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Non-stationary spatial kernel υ(s, s'). Weights at each location must sum to one.
pub fn spatial_kernel(s: Point, s_prime: Point, fs: &LocalFeatures, fsp: &LocalFeatures) -> Result<f64> {
    for (label, f) in [("s", fs), ("s'", fsp)] {
        let sum = f.weight_sum();
        if f.is_empty() || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("weights at {label} sum to {sum}, expected 1")));
        }
    }
    Ok(spatial_value([s[0] - s_prime[0], s[1] - s_prime[1]], fs, fsp))
}

/// Unchecked υ for displacement `d = s - s'`.
#[inline]
pub(crate) fn spatial_value(d: Point, fs: &LocalFeatures, fsp: &LocalFeatures) -> f64 {
    let term = |a: &Component, b: &Component| a.weight * b.weight * gaussian_density(d, &a.cov.add(&b.cov));
    let (ca, cb) = (&fs.components, &fsp.components);
    if ca.len() != cb.len() {
        return ca.iter().flat_map(|a| cb.iter().map(move |b| term(a, b))).sum();
    }
    // pairing (r, q) with (q, r) makes the result bitwise symmetric in s, s'
    let mut acc = 0.0;
    for r in 0..ca.len() {
        acc += term(&ca[r], &cb[r]);
        for q in r + 1..ca.len() {
            acc += term(&ca[r], &cb[q]) + term(&ca[q], &cb[r]);
        }
    }
    acc
}

/// Per-location gradient accumulator: ∂L/∂w^{(r)} and ∂L/∂Σ^{(r)} entries.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LocalGrad {
    pub weight: Vec<f64>,
    pub cov: Vec<[f64; 3]>,
}

impl LocalGrad {
    pub fn zeros(components: usize) -> Self {
        Self { weight: vec![0.0; components], cov: vec![[0.0; 3]; components] }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.cov.iter_mut().zip(&other.cov) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }
}

/// Accumulates `upstream * ∂υ(s, s')/∂(w, Σ)` into the gradients of both
/// locations and returns υ.
pub(crate) fn spatial_backward(
    d: Point,
    fs: &LocalFeatures,
    fsp: &LocalFeatures,
    upstream: f64,
    gs: &mut LocalGrad,
    gsp: &mut LocalGrad,
) -> f64 {
    let mut acc = 0.0;
    for (r1, a) in fs.components.iter().enumerate() {
        for (r2, b) in fsp.components.iter().enumerate() {
            let (g, dm) = gaussian_density_grad(d, &a.cov.add(&b.cov));
            let ww = a.weight * b.weight;
            acc += ww * g;
            gs.weight[r1] += upstream * b.weight * g;
            gsp.weight[r2] += upstream * a.weight * g;
            let scale = upstream * ww;
            for (k, dk) in dm.iter().enumerate() {
                gs.cov[r1][k] += scale * dk;
                gsp.cov[r2][k] += scale * dk;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const A: f64 = 0.35;

    #[test]
    fn temporal_values() {
        assert!((temporal_kernel(1e-12, 0.0, 2.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let v = temporal_kernel(3.0, 1.0, 1.0, 2.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);
        assert!(temporal_kernel(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(temporal_kernel(0.5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn temporal_is_decreasing_in_lag() {
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let v = temporal_value(k as f64 * 0.1, 1.5, 2.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn isotropic_covariance() {
        let cov = cov_from_focus([0.0, 0.0], A, 1.0);
        assert!((cov.xx - A / PI).abs() < 1e-15);
        assert!((cov.yy - A / PI).abs() < 1e-15);
        assert_eq!(cov.xy, 0.0);
        assert!((cov.xx - 0.111408).abs() < 1e-6);
        assert_eq!(focus_angle([0.0, 0.0]), 0.0);
    }

    #[test]
    fn focus_along_x_axis() {
        let cov = cov_from_focus([0.1, 0.0], A, 1.0);
        let (l1, l2) = cov.eigenvalues();
        assert!((l1 - l2 - 0.01).abs() < 1e-14);
        let axis = cov.major_axis();
        assert!((axis[0].abs() - 1.0).abs() < 1e-14 && axis[1].abs() < 1e-14);
    }

    #[test]
    fn polynomial_form_matches_angle_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let psi = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let tau = rng.random_range(0.5..2.0);
            let cov = cov_from_focus(psi, A, tau);
            let n2 = psi[0] * psi[0] + psi[1] * psi[1];
            let alpha = focus_angle(psi);
            let q = focus_q(n2, A);
            let t2 = tau * tau;
            let xx = t2 * (q + 0.5 * n2 * (2.0 * alpha).cos());
            let xy = t2 * 0.5 * n2 * (2.0 * alpha).sin();
            let yy = t2 * (q - 0.5 * n2 * (2.0 * alpha).cos());
            assert!((cov.xx - xx).abs() < 1e-14 && (cov.xy - xy).abs() < 1e-14 && (cov.yy - yy).abs() < 1e-14);
            let det = (t2 * A / PI).powi(2);
            assert!((cov.det() - det).abs() < 1e-12);
            let (l1, l2) = cov.eigenvalues();
            assert!((cov.trace() / t2 - 2.0 * q).abs() < 1e-12);
            assert!((l1 - t2 * (q + n2 / 2.0)).abs() < 1e-12);
            assert!((l2 - t2 * (q - n2 / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn product_integral_coincident_isotropic() {
        let cov = CovMatrix::isotropic(A / PI);
        let v = gaussian_product_integral([1.0, 2.0], [1.0, 2.0], &cov, &cov).unwrap();
        assert!((v - 1.0 / (4.0 * A)).abs() < 1e-12);
        assert!((v - 0.714286).abs() < 1e-6);
    }

    #[test]
    fn product_integral_symmetry() {
        let c1 = cov_from_focus([0.05, -0.03], A, 1.1);
        let c2 = cov_from_focus([-0.02, 0.08], A, 1.1);
        let (s, sp) = ([0.3, -0.2], [-0.1, 0.4]);
        let a = gaussian_product_integral(s, sp, &c1, &c2).unwrap();
        let b = gaussian_product_integral(sp, s, &c2, &c1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singular_sum_rejected() {
        let z = CovMatrix { xx: 0.0, xy: 0.0, yy: 0.0 };
        assert!(gaussian_product_integral([0.0, 0.0], [1.0, 0.0], &z, &z).is_err());
    }

    #[test]
    fn single_component_reduces_to_product_integral() {
        let f1 = LocalFeatures::from_outputs(&[FocusOutput { psi: [0.07, 0.02], weight: 1.0 }], A, 0.9);
        let f2 = LocalFeatures::from_outputs(&[FocusOutput { psi: [-0.01, 0.05], weight: 1.0 }], A, 0.9);
        let (s, sp) = ([0.0, 0.1], [0.25, -0.3]);
        let v = spatial_kernel(s, sp, &f1, &f2).unwrap();
        let g = gaussian_product_integral(s, sp, &f1.components[0].cov, &f2.components[0].cov).unwrap();
        assert_eq!(v, g);
    }

    #[test]
    fn unnormalized_weights_rejected() {
        let f = LocalFeatures::from_outputs(
            &[FocusOutput { psi: [0.0, 0.0], weight: 0.6 }, FocusOutput { psi: [0.0, 0.0], weight: 0.6 }],
            A,
            1.0,
        );
        let ok = LocalFeatures::isotropic(A, 1.0);
        assert!(spatial_kernel([0.0, 0.0], [0.0, 0.0], &f, &ok).is_err());
        assert!(spatial_kernel([0.0, 0.0], [0.0, 0.0], &ok, &f).is_err());
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let m = CovMatrix { xx: 0.4, xy: 0.07, yy: 0.25 };
        let d = [0.3, -0.5];
        let (_, g) = gaussian_density_grad(d, &m);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> CovMatrix| {
            (gaussian_density(d, &f(h)) - gaussian_density(d, &f(-h))) / (2.0 * h)
        };
        let gxx = fd(&|e| CovMatrix { xx: m.xx + e, ..m });
        let gxy = fd(&|e| CovMatrix { xy: m.xy + e, ..m });
        let gyy = fd(&|e| CovMatrix { yy: m.yy + e, ..m });
        for (a, b) in g.iter().zip([gxx, gxy, gyy]) {
            assert!((a - b).abs() < 1e-7 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn focus_backward_matches_finite_differences() {
        let psi = [0.06, -0.04];
        let (area, tau) = (A, 1.3);
        let g = [0.7, -1.1, 0.4];
        let loss = |p: Point| {
            let c = cov_from_focus(p, area, tau);
            g[0] * c.xx + g[1] * c.xy + g[2] * c.yy
        };
        let an = cov_focus_backward(psi, area, tau, &g);
        let h = 1e-6;
        let fx = (loss([psi[0] + h, psi[1]]) - loss([psi[0] - h, psi[1]])) / (2.0 * h);
        let fy = (loss([psi[0], psi[1] + h]) - loss([psi[0], psi[1] - h])) / (2.0 * h);
        assert!((an[0] - fx).abs() < 1e-8 && (an[1] - fy).abs() < 1e-8);
    }
}
