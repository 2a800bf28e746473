//! Driving-noise increments: Wiener or bilateral gamma, and reproducible
//! random streams.
//!
//! A bilateral gamma law `bgamma(δ₁, γ₁, δ₂, γ₂)` is the law of `τ₁ − τ₂` for
//! independent gamma subordinators with Lévy densities `δᵢ z⁻¹ exp(−γᵢ z)`.
//! Its increment over a step `h` is exactly `G₁ − G₂` with
//! `Gᵢ ~ Gamma(shape = δᵢ h, rate = γᵢ)`, so no small-jump truncation is needed.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Law of the driving noise `Z`, normalized so that `E[Z₁] = 0`, `Var[Z₁] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    Wiener,
    BilateralGamma {
        delta1: f64,
        rate1: f64,
        delta2: f64,
        rate2: f64,
    },
}

impl NoiseKind {
    pub fn bilateral_gamma(delta1: f64, rate1: f64, delta2: f64, rate2: f64) -> Result<Self> {
        for (name, v) in [
            ("delta1", delta1),
            ("rate1", rate1),
            ("delta2", delta2),
            ("rate2", rate2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("bgamma {name} must be positive, got {v}")));
            }
        }
        let mean = delta1 / rate1 - delta2 / rate2;
        let var = delta1 / (rate1 * rate1) + delta2 / (rate2 * rate2);
        if mean.abs() > NORMALIZATION_TOL || (var - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Parameter(format!(
                "bgamma({delta1}, {rate1}, {delta2}, {rate2}) is not standardized: mean {mean:e}, variance {var}"
            )));
        }
        Ok(NoiseKind::BilateralGamma {
            delta1,
            rate1,
            delta2,
            rate2,
        })
    }

    /// `bgamma(1, √2, 1, √2)`.
    pub fn standard_bilateral_gamma() -> Self {
        let r = std::f64::consts::SQRT_2;
        NoiseKind::BilateralGamma {
            delta1: 1.0,
            rate1: r,
            delta2: 1.0,
            rate2: r,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            NoiseKind::Wiener => "wiener",
            NoiseKind::BilateralGamma { .. } => "bgamma",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::Wiener => f.write_str("wiener"),
            k if *k == NoiseKind::standard_bilateral_gamma() => f.write_str("bgamma"),
            NoiseKind::BilateralGamma {
                delta1,
                rate1,
                delta2,
                rate2,
            } => write!(f, "bgamma:{delta1},{rate1},{delta2},{rate2}"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    /// Accepts `wiener`, `bgamma` (the standard `bgamma(1, √2, 1, √2)`) or
    /// `bgamma:δ₁,γ₁,δ₂,γ₂`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "wiener" | "gaussian" => return Ok(NoiseKind::Wiener),
            "bgamma" => return Ok(NoiseKind::standard_bilateral_gamma()),
            _ => {}
        }
        let params = s
            .strip_prefix("bgamma:")
            .ok_or_else(|| Error::Config(format!("unknown noise kind '{s}'")))?;
        let values = params
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad bgamma parameter '{v}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match values[..] {
            [d1, r1, d2, r2] => NoiseKind::bilateral_gamma(d1, r1, d2, r2),
            _ => Err(Error::Config(format!(
                "bgamma needs four parameters, got {}",
                values.len()
            ))),
        }
    }
}

impl Serialize for NoiseKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoiseKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Purpose tags mixed into stream ids so that independent roles never share
/// a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Path = 0x7061_7468,
    Weights = 0x7765_6967,
    Auxiliary = 0x6175_7869,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable stream id for `(role, path index, replication index)`.
pub fn stream_id(role: StreamRole, path: u64, replication: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(role as u64) ^ path) ^ replication)
}

/// A seeded ChaCha8 generator on a selected stream. The same `(seed, stream)`
/// pair always yields the same sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn for_role(seed: u64, role: StreamRole, path: u64, replication: u64) -> Self {
        Self::new(seed, stream_id(role, path, replication))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn gamma_law(shape: f64, rate: f64) -> Result<Gamma<f64>> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(Error::Parameter(format!(
            "gamma shape and rate must be positive and finite, got shape {shape}, rate {rate}"
        )));
    }
    Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Parameter(e.to_string()))
}

/// One draw from `Gamma(shape, rate)`; exact for all shapes, including
/// `shape < 1`.
pub fn gamma_sample<R: RngCore + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    Ok(gamma_law(shape, rate)?.sample(rng))
}

/// Sampler of `Z_{t+h} − Z_t` for a fixed step.
#[derive(Clone, Debug)]
pub enum IncrementSampler {
    Wiener { sd: f64 },
    BilateralGamma { up: Gamma<f64>, down: Gamma<f64> },
}

impl IncrementSampler {
    pub fn new(kind: NoiseKind, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("step must be positive, got {h}")));
        }
        Ok(match kind {
            NoiseKind::Wiener => IncrementSampler::Wiener { sd: h.sqrt() },
            NoiseKind::BilateralGamma {
                delta1,
                rate1,
                delta2,
                rate2,
            } => IncrementSampler::BilateralGamma {
                up: gamma_law(delta1 * h, rate1)?,
                down: gamma_law(delta2 * h, rate2)?,
            },
        })
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            IncrementSampler::Wiener { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            IncrementSampler::BilateralGamma { up, down } => {
                let g1 = up.sample(rng);
                let g2 = down.sample(rng);
                g1 - g2
            }
        }
    }
}

/// `n` i.i.d. increments of the driving noise over a step `h`.
pub fn increments<R: RngCore + ?Sized>(
    kind: NoiseKind,
    h: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Parameter("increment count must be at least 1".into()));
    }
    let sampler = IncrementSampler::new(kind, h)?;
    Ok((0..n).map(|_| sampler.sample(rng)).collect())
}

/// `∫ z⁴ ν₀(dz)` of the Lévy measure, `6δ₁/γ₁⁴ + 6δ₂/γ₂⁴` for bilateral gamma.
pub fn levy_fourth_moment(kind: NoiseKind) -> Result<f64> {
    match kind {
        NoiseKind::Wiener => Err(Error::UnsupportedNoise(
            "Wiener noise has no jump measure".into(),
        )),
        NoiseKind::BilateralGamma {
            delta1,
            rate1,
            delta2,
            rate2,
        } => Ok(6.0 * delta1 / rate1.powi(4) + 6.0 * delta2 / rate2.powi(4)),
    }
}
