//! Model parameters.
//!
//! Every positive scalar is stored as its natural log so the optimizer can
//! move freely in R while positivity holds by construction. A stored log of
//! `-inf` represents an exact zero (C = 0 or γ_l = 0) and stays fixed under
//! additive updates.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::neural::{self, NetworkWeights};
use crate::kernels::LocalFeatures;
use crate::types::KernelConfig;
use crate::Point;

const SCALARS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(with = "log_scalar")]
    log_lambda0: f64,
    #[serde(with = "log_scalar")]
    log_magnitude: f64,
    #[serde(with = "log_scalar")]
    log_sigma0: f64,
    #[serde(with = "log_scalar")]
    log_tau_z: f64,
    #[serde(with = "log_vec")]
    log_gammas: Vec<f64>,
    #[serde(with = "log_vec")]
    log_sigmas: Vec<f64>,
    nets: Vec<NetworkWeights>,
}

/// Coarse grouping of flat parameter indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Background,
    Magnitude,
    Decay,
    TauZ,
    Gamma(usize),
    LandmarkSigma(usize),
    Net(usize),
}

fn log_nonneg(name: &str, v: f64) -> Result<f64> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(v.ln())
}

fn log_pos(name: &str, v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(format!("{name} must be finite and positive, got {v}")));
    }
    Ok(v.ln())
}

impl ModelParams {
    pub fn new(
        lambda0: f64,
        magnitude: f64,
        sigma0: f64,
        tau_z: f64,
        gammas: Vec<f64>,
        sigmas: Vec<f64>,
        nets: Vec<NetworkWeights>,
    ) -> Result<Self> {
        if gammas.len() != sigmas.len() {
            return Err(Error::Shape(format!("{} gammas but {} landmark sigmas", gammas.len(), sigmas.len())));
        }
        if nets.is_empty() {
            return Err(Error::Shape("at least one component network is required".into()));
        }
        if nets.iter().any(|n| n.sizes() != nets[0].sizes()) {
            return Err(Error::Shape("all component networks must share one architecture".into()));
        }
        Ok(Self {
            log_lambda0: log_pos("lambda0", lambda0)?,
            log_magnitude: log_nonneg("C", magnitude)?,
            log_sigma0: log_pos("sigma0", sigma0)?,
            log_tau_z: log_pos("tau_z", tau_z)?,
            log_gammas: gammas.iter().map(|&g| log_nonneg("gamma", g)).collect::<Result<_>>()?,
            log_sigmas: sigmas.iter().map(|&s| log_pos("landmark sigma", s)).collect::<Result<_>>()?,
            nets,
        })
    }

    /// Default starting point for a fit: λ0 = N/(|S|T), C = 1, σ0 = 7 days,
    /// τz from the config, γ_l = 1, σ_l = 1 km, Glorot-initialized networks.
    pub fn initial<R: Rng + ?Sized>(
        n_events: usize,
        config: &KernelConfig,
        n_landmarks: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let lambda0 = (n_events.max(1) as f64) / (config.area_s * config.horizon);
        let nets = (0..config.components).map(|_| NetworkWeights::glorot(hidden, rng)).collect();
        Self::new(lambda0, 1.0, 7.0, config.tau_z_init, vec![1.0; n_landmarks], vec![1.0; n_landmarks], nets)
    }

    pub fn lambda0(&self) -> f64 {
        self.log_lambda0.exp()
    }

    pub fn magnitude(&self) -> f64 {
        self.log_magnitude.exp()
    }

    pub fn sigma0(&self) -> f64 {
        self.log_sigma0.exp()
    }

    pub fn tau_z(&self) -> f64 {
        self.log_tau_z.exp()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.log_gammas.iter().map(|v| v.exp()).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigmas.iter().map(|v| v.exp()).collect()
    }

    pub fn n_landmarks(&self) -> usize {
        self.log_gammas.len()
    }

    pub fn components(&self) -> usize {
        self.nets.len()
    }

    pub fn nets(&self) -> &[NetworkWeights] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [NetworkWeights] {
        &mut self.nets
    }

    pub fn set_lambda0(&mut self, v: f64) -> Result<()> {
        self.log_lambda0 = log_pos("lambda0", v)?;
        Ok(())
    }

    pub fn set_magnitude(&mut self, v: f64) -> Result<()> {
        self.log_magnitude = log_nonneg("C", v)?;
        Ok(())
    }

    pub fn set_sigma0(&mut self, v: f64) -> Result<()> {
        self.log_sigma0 = log_pos("sigma0", v)?;
        Ok(())
    }

    pub fn set_tau_z(&mut self, v: f64) -> Result<()> {
        self.log_tau_z = log_pos("tau_z", v)?;
        Ok(())
    }

    pub fn set_landmark_effects(&mut self, gammas: &[f64], sigmas: &[f64]) -> Result<()> {
        if gammas.len() != sigmas.len() {
            return Err(Error::Shape("gamma/sigma length mismatch".into()));
        }
        self.log_gammas = gammas.iter().map(|&g| log_nonneg("gamma", g)).collect::<Result<_>>()?;
        self.log_sigmas = sigmas.iter().map(|&s| log_pos("landmark sigma", s)).collect::<Result<_>>()?;
        Ok(())
    }

    /// Number of unconstrained parameters.
    pub fn len(&self) -> usize {
        SCALARS + 2 * self.log_gammas.len() + self.nets.iter().map(NetworkWeights::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Offset of network `r` in the flat layout.
    pub fn net_offset(&self, r: usize) -> usize {
        SCALARS + 2 * self.log_gammas.len() + self.nets[..r].iter().map(NetworkWeights::len).sum::<usize>()
    }

    /// Flat unconstrained vector: `[log λ0, log C, log σ0, log τz, log γ.., log σ_l.., nets..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&[self.log_lambda0, self.log_magnitude, self.log_sigma0, self.log_tau_z]);
        v.extend_from_slice(&self.log_gammas);
        v.extend_from_slice(&self.log_sigmas);
        for n in &self.nets {
            v.extend_from_slice(n.values());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!("flat vector has {} entries, expected {}", flat.len(), self.len())));
        }
        let l = self.log_gammas.len();
        self.log_lambda0 = flat[0];
        self.log_magnitude = flat[1];
        self.log_sigma0 = flat[2];
        self.log_tau_z = flat[3];
        self.log_gammas.copy_from_slice(&flat[SCALARS..SCALARS + l]);
        self.log_sigmas.copy_from_slice(&flat[SCALARS + l..SCALARS + 2 * l]);
        let mut off = SCALARS + 2 * l;
        for n in &mut self.nets {
            let len = n.len();
            n.values_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        let l = self.log_gammas.len();
        match index {
            0 => ParamGroup::Background,
            1 => ParamGroup::Magnitude,
            2 => ParamGroup::Decay,
            3 => ParamGroup::TauZ,
            i if i < SCALARS + l => ParamGroup::Gamma(i - SCALARS),
            i if i < SCALARS + 2 * l => ParamGroup::LandmarkSigma(i - SCALARS - l),
            i => {
                let mut off = SCALARS + 2 * l;
                for (r, n) in self.nets.iter().enumerate() {
                    if i < off + n.len() {
                        return ParamGroup::Net(r);
                    }
                    off += n.len();
                }
                ParamGroup::Net(self.nets.len())
            }
        }
    }

    /// Human-readable name of a flat index, e.g. `log_gamma[3]` or `net[1].layer0.w[2,1]`.
    pub fn param_name(&self, index: usize) -> String {
        match self.group_of(index) {
            ParamGroup::Background => "log_lambda0".into(),
            ParamGroup::Magnitude => "log_C".into(),
            ParamGroup::Decay => "log_sigma0".into(),
            ParamGroup::TauZ => "log_tau_z".into(),
            ParamGroup::Gamma(l) => format!("log_gamma[{l}]"),
            ParamGroup::LandmarkSigma(l) => format!("log_landmark_sigma[{l}]"),
            ParamGroup::Net(r) if r < self.nets.len() => {
                format!("net[{r}].{}", self.nets[r].describe(index - self.net_offset(r)))
            }
            ParamGroup::Net(_) => format!("out-of-range[{index}]"),
        }
    }

    /// Feature-mapping components at `s` (network forward pass plus covariances).
    pub fn local_features(&self, s: Point, config: &KernelConfig) -> LocalFeatures {
        let eval = neural::forward(s, &self.nets, config.focus_bound);
        eval.features(config.ellipse_area, self.tau_z())
    }
}

mod log_scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Str(String),
    }

    pub(super) fn decode<E: serde::de::Error>(r: Repr) -> std::result::Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(E::custom(format!("unexpected log value `{s}`"))),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

}

mod log_vec {
    use super::log_scalar::{decode, Repr as LogRepr};
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if *x == f64::NEG_INFINITY {
                seq.serialize_element("-inf")?;
            } else {
                seq.serialize_element(x)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        Vec::<LogRepr>::deserialize(d)?.into_iter().map(decode).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = (0..2).map(|_| NetworkWeights::glorot(&[5, 3], &mut rng)).collect();
        ModelParams::new(0.3, 0.2, 2.5, 1.1, vec![0.5, 0.0], vec![1.0, 0.7], nets).unwrap()
    }

    #[test]
    fn constrained_round_trip() {
        let p = sample(1);
        assert!((p.lambda0() - 0.3).abs() < 1e-15);
        assert_eq!(p.gammas()[1], 0.0);
        assert_eq!(p.n_landmarks(), 2);
        assert!(ModelParams::new(-1.0, 0.1, 1.0, 1.0, vec![], vec![], p.nets().to_vec()).is_err());
        assert!(ModelParams::new(1.0, 0.1, 0.0, 1.0, vec![], vec![], p.nets().to_vec()).is_err());
        assert!(ModelParams::new(1.0, 0.1, 1.0, 1.0, vec![1.0], vec![], p.nets().to_vec()).is_err());
    }

    #[test]
    fn flat_layout_and_names() {
        let mut p = sample(2);
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.len());
        let q = p.with_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.param_name(0), "log_lambda0");
        assert_eq!(p.param_name(4), "log_gamma[0]");
        assert_eq!(p.param_name(7), "log_landmark_sigma[1]");
        assert_eq!(p.param_name(8), "net[0].layer0.w[0,0]");
        assert_eq!(p.group_of(p.net_offset(1)), ParamGroup::Net(1));
        assert!(p.set_flat(&flat[1..]).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in 0u64..1000, lam in 1e-6f64..1e3, c in 0.0f64..5.0) {
            let mut p = sample(seed);
            p.set_lambda0(lam).unwrap();
            p.set_magnitude(c).unwrap();
            let json = serde_json::to_string(&p).unwrap();
            let back: ModelParams = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            back.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_magnitude_survives_serialization() {
        let mut p = sample(3);
        p.set_magnitude(0.0).unwrap();
        let back: ModelParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back.magnitude(), 0.0);
    }
}
