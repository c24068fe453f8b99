//! Focus-point networks.
//!
//! Each of the R components owns a small fully connected network mapping a
//! location to three raw outputs `(ψx, ψy, ω)`. Hidden layers use softplus;
//! the output layer is linear. The raw focus vector is squashed radially into
//! the open disk of radius `c`, and the raw weights of all R networks at the
//! same location go through a joint softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{FocusOutput, LocalFeatures};
use crate::Point;

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 16];
const INPUTS: usize = 2;
const OUTPUTS: usize = 3;

/// Weights of one fully connected network. `values` stores, layer by layer,
/// the row-major `out × in` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl NetworkWeights {
    pub fn architecture(hidden: &[usize]) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(INPUTS);
        sizes.extend_from_slice(hidden);
        sizes.push(OUTPUTS);
        sizes
    }

    pub fn from_values(sizes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] != INPUTS || sizes[sizes.len() - 1] != OUTPUTS {
            return Err(Error::Shape(format!("architecture {sizes:?} must map {INPUTS} inputs to {OUTPUTS} outputs")));
        }
        if sizes.contains(&0) {
            return Err(Error::Shape(format!("architecture {sizes:?} has an empty layer")));
        }
        if values.len() != param_count(&sizes) {
            return Err(Error::Shape(format!(
                "architecture {sizes:?} needs {} values, got {}",
                param_count(&sizes),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("network weight {i} is not finite")));
        }
        Ok(Self { sizes, values })
    }

    pub fn zeros(hidden: &[usize]) -> Self {
        let sizes = Self::architecture(hidden);
        let values = vec![0.0; param_count(&sizes)];
        Self { sizes, values }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(hidden);
        let mut offset = 0;
        for w in net.sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut net.values[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-a..a);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    /// Glorot hidden layers with an all-zero output layer: every location maps to
    /// ψ = 0 and, jointly with the other components, uniform weights.
    pub fn symmetric<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::glorot(hidden, rng);
        let last = net.layer_offsets().pop().expect("at least one layer");
        for v in &mut net.values[last..] {
            *v = 0.0;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        offsets
    }

    /// Human-readable name of a flat parameter index.
    pub fn describe(&self, index: usize) -> String {
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if index < off + n_in * n_out {
                let k = index - off;
                return format!("layer{l}.w[{},{}]", k / n_in, k % n_in);
            }
            off += n_in * n_out;
            if index < off + n_out {
                return format!("layer{l}.b[{}]", index - off);
            }
            off += n_out;
        }
        format!("out-of-range[{index}]")
    }

    fn run(&self, s: Point) -> Trace {
        let layers = self.sizes.len() - 1;
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers + 1);
        post.push(s.to_vec());
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.values[off..off + n_in * n_out];
            let bias = &self.values[off + n_in * n_out..off + n_in * n_out + n_out];
            let x = &post[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| bias[o] + weights[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let a = if l + 1 < layers { z.iter().map(|&v| softplus(v)).collect() } else { z.clone() };
            pre.push(z);
            post.push(a);
            off += n_in * n_out + n_out;
        }
        Trace { pre, post }
    }
}

/// `log(1 + eˣ)`, stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Forward pass of all R networks at one location, with the activations needed
/// for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct NetEval {
    pub outputs: Vec<FocusOutput>,
    pub raw: Vec<[f64; 3]>,
    focus_bound: f64,
    traces: Vec<Trace>,
}

/// `tanh(n)/n` and `(d/dn)(tanh(n)/n) / n`.
fn squash_factors(n: f64) -> (f64, f64) {
    if n < 1e-2 {
        let n2 = n * n;
        let g = 1.0 - n2 / 3.0 + 2.0 * n2 * n2 / 15.0 - 17.0 * n2 * n2 * n2 / 315.0;
        let dg_over_n = -2.0 / 3.0 + 8.0 * n2 / 15.0 - 34.0 * n2 * n2 / 105.0;
        (g, dg_over_n)
    } else {
        let t = n.tanh();
        let sech2 = 1.0 - t * t;
        (t / n, (n * sech2 - t) / (n * n * n))
    }
}

/// `c tanh(‖u‖) u / ‖u‖`, mapping R² into the open disk of radius `c`.
pub fn squash_focus(u: [f64; 2], c: f64) -> Point {
    let (g, _) = squash_factors(u[0].hypot(u[1]));
    [c * g * u[0], c * g * u[1]]
}

pub fn forward(s: Point, nets: &[NetworkWeights], focus_bound: f64) -> NetEval {
    let traces: Vec<Trace> = nets.iter().map(|n| n.run(s)).collect();
    let raw: Vec<[f64; 3]> = traces
        .iter()
        .map(|t| {
            let out = t.post.last().expect("output layer");
            [out[0], out[1], out[2]]
        })
        .collect();
    let max = raw.iter().map(|r| r[2]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|r| (r[2] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let outputs = raw
        .iter()
        .zip(&exps)
        .map(|(r, e)| FocusOutput { psi: squash_focus([r[0], r[1]], focus_bound), weight: e / total })
        .collect();
    NetEval { outputs, raw, focus_bound, traces }
}

impl NetEval {
    pub fn features(&self, area: f64, tau_z: f64) -> LocalFeatures {
        LocalFeatures::from_outputs(&self.outputs, area, tau_z)
    }

    pub fn is_finite(&self) -> bool {
        self.outputs.iter().all(|o| o.psi[0].is_finite() && o.psi[1].is_finite() && o.weight.is_finite())
    }
}

/// Reverse-mode pass: accumulates ∂L/∂θ into `grads[r]` (same layout as
/// `nets[r].values()`), given ∂L/∂ψ and ∂L/∂w for every component.
pub fn backward(
    eval: &NetEval,
    nets: &[NetworkWeights],
    grad_psi: &[Point],
    grad_weight: &[f64],
    grads: &mut [Vec<f64>],
) -> Result<()> {
    let r = nets.len();
    if eval.traces.len() != r || grad_psi.len() != r || grad_weight.len() != r || grads.len() != r {
        return Err(Error::Shape(format!(
            "backward expects {r} components; got eval={}, grad_psi={}, grad_weight={}, grads={}",
            eval.traces.len(),
            grad_psi.len(),
            grad_weight.len(),
            grads.len()
        )));
    }
    let mean_gw: f64 = eval.outputs.iter().zip(grad_weight).map(|(o, g)| o.weight * g).sum();
    for k in 0..r {
        let net = &nets[k];
        if grads[k].len() != net.values.len() {
            return Err(Error::Shape(format!(
                "gradient buffer {k} has {} entries, network has {}",
                grads[k].len(),
                net.values.len()
            )));
        }
        let trace = &eval.traces[k];
        let u = [eval.raw[k][0], eval.raw[k][1]];
        let (g, dg_over_n) = squash_factors(u[0].hypot(u[1]));
        let gp = grad_psi[k];
        let c = eval.focus_bound;
        let u_dot = u[0] * gp[0] + u[1] * gp[1];
        let mut delta = vec![
            c * (g * gp[0] + dg_over_n * u_dot * u[0]),
            c * (g * gp[1] + dg_over_n * u_dot * u[1]),
            eval.outputs[k].weight * (grad_weight[k] - mean_gw),
        ];
        let offsets = net.layer_offsets();
        let buf = &mut grads[k];
        for l in (0..net.sizes.len() - 1).rev() {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.post[l];
            for o in 0..n_out {
                let row = &mut buf[off + o * n_in..off + (o + 1) * n_in];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += delta[o] * xi;
                }
                buf[off + n_in * n_out + o] += delta[o];
            }
            if l > 0 {
                let weights = &net.values[off..off + n_in * n_out];
                let pre = &trace.pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum();
                        back * sigmoid(pre[i])
                    })
                    .collect();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_at_zero() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn zero_network_gives_isotropic_uniform() {
        let nets = vec![NetworkWeights::zeros(&[32, 16]); 3];
        let eval = forward([1.3, -0.2], &nets, 0.1);
        for o in &eval.outputs {
            assert_eq!(o.psi, [0.0, 0.0]);
            assert!((o.weight - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_init_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets: Vec<_> = (0..3).map(|_| NetworkWeights::symmetric(&DEFAULT_HIDDEN, &mut rng)).collect();
        let eval = forward([4.0, 2.0], &nets, 0.1);
        assert!(eval.outputs.iter().all(|o| o.psi == [0.0, 0.0] && (o.weight - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn outputs_respect_disk_and_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let nets: Vec<_> = (0..3)
                .map(|_| {
                    let mut n = NetworkWeights::glorot(&[8, 4], &mut rng);
                    for v in n.values_mut() {
                        *v *= 5.0;
                    }
                    n
                })
                .collect();
            let s = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let eval = forward(s, &nets, 0.1);
            let sum: f64 = eval.outputs.iter().map(|o| o.weight).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for o in &eval.outputs {
                assert!(o.psi[0].hypot(o.psi[1]) <= 0.1 * (1.0 + 1e-12));
                assert!((0.0..=1.0).contains(&o.weight));
            }
        }
    }

    #[test]
    fn squash_series_matches_closed_form_at_threshold() {
        let n: f64 = 1e-2;
        let t = n.tanh();
        let closed = ((t / n), (n * (1.0 - t * t) - t) / (n * n * n));
        let series = squash_factors(n * (1.0 - 1e-12));
        assert!((closed.0 - series.0).abs() < 1e-12);
        assert!((closed.1 - series.1).abs() < 1e-7);
    }

    #[test]
    fn shape_validation() {
        assert!(NetworkWeights::from_values(vec![2, 3], vec![0.0; 9]).is_ok());
        assert!(NetworkWeights::from_values(vec![2, 3], vec![0.0; 8]).is_err());
        assert!(NetworkWeights::from_values(vec![3, 3], vec![0.0; 12]).is_err());
        assert!(NetworkWeights::from_values(vec![2, 3], vec![f64::NAN; 9]).is_err());
        let nets = vec![NetworkWeights::zeros(&[4]); 2];
        let eval = forward([0.0, 0.0], &nets, 0.1);
        let mut grads = vec![vec![0.0; nets[0].len()]; 1];
        assert!(backward(&eval, &nets, &[[0.0; 2]; 2], &[0.0; 2], &mut grads).is_err());
    }

    #[test]
    fn describe_indices() {
        let n = NetworkWeights::zeros(&[4]);
        assert_eq!(n.describe(0), "layer0.w[0,0]");
        assert_eq!(n.describe(8), "layer0.b[0]");
        assert_eq!(n.describe(12), "layer1.w[0,0]");
        assert_eq!(n.describe(24), "layer1.b[0]");
    }
}
