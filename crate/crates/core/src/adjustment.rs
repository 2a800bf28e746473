//! Data-driven adjustment term `bₙ = b₁,ₙ + b₂,ₙ` and the rate matrices
//! `Âₙ`, `B̂ₙ` that let the bootstrap work without knowing whether the data
//! come from a diffusion or a pure-jump process.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gqmle::GqmleFit;
use crate::model::CoefficientModel;
use crate::simulate::SamplePath;

/// Floor on `|Qₙ|` before inversion.
const Q_FLOOR: f64 = 1e-300;

/// Diagonals of `Âₙ` and `B̂ₙ`; γ-coordinates first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateScalings {
    pub b1: f64,
    pub b2: f64,
    pub b: f64,
    pub a_hat_diag: Vec<f64>,
    pub b_hat_diag: Vec<f64>,
}

impl RateScalings {
    /// Builds the diagonals from the adjustment terms. Invariant:
    /// `a_hat_diag[i] = T · b_hat_diag[i]`.
    pub fn new(b1: f64, b2: f64, horizon: f64, p_gamma: usize, p_alpha: usize) -> Result<Self> {
        let b = b1 + b2;
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::DegenerateData(format!("adjustment term b = {b}")));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        let gamma_b = 1.0 / (horizon * b).sqrt();
        let alpha_b = 1.0 / horizon.sqrt();
        let b_hat_diag: Vec<f64> = std::iter::repeat(gamma_b)
            .take(p_gamma)
            .chain(std::iter::repeat(alpha_b).take(p_alpha))
            .collect();
        let a_hat_diag = b_hat_diag.iter().map(|v| horizon * v).collect();
        Ok(Self {
            b1,
            b2,
            b,
            a_hat_diag,
            b_hat_diag,
        })
    }

    pub fn p(&self) -> usize {
        self.a_hat_diag.len()
    }
}

/// `b₁,ₙ = Σ(ΔX)⁴ / Σ(ΔX)²`.
pub fn b1n(path: &SamplePath) -> Result<f64> {
    let (mut s2, mut s4) = (0.0, 0.0);
    for (_, dx) in path.steps() {
        let d2 = dx * dx;
        s2 += d2;
        s4 += d2 * d2;
    }
    if s2 == 0.0 {
        return Err(Error::DegenerateData("zero quadratic variation".into()));
    }
    Ok(s4 / s2)
}

/// `Qₙ = (1/n) Σ [(ΔX)⁴/(3h²) − 2(ΔX)² c²/h + c⁴]` with `c = c(X_{t_{j-1}}, γ̂)`.
pub fn q_statistic(path: &SamplePath, model: &CoefficientModel, gamma_hat: &[f64]) -> Result<f64> {
    if gamma_hat.len() != model.p_gamma() {
        return Err(Error::Dimension {
            expected: model.p_gamma(),
            got: gamma_hat.len(),
        });
    }
    let h = path.h();
    let mut q = 0.0;
    for (x, dx) in path.steps() {
        let c2 = model.scale.eval(x, gamma_hat).powi(2);
        let d2 = dx * dx;
        q += d2 * d2 / (3.0 * h * h) - 2.0 * d2 * c2 / h + c2 * c2;
    }
    Ok(q / path.n() as f64)
}

/// `exp(−(|q| + 1/|q|))` with `|q|` floored at `1e−300`.
pub fn b2_from_q(q: f64) -> f64 {
    let a = q.abs().max(Q_FLOOR);
    (-(a + 1.0 / a)).exp()
}

/// `b₂,ₙ = exp(−(|Qₙ| + |Qₙ|⁻¹))`; lies in `[0, e⁻²]`.
pub fn b2n(path: &SamplePath, model: &CoefficientModel, gamma_hat: &[f64]) -> Result<f64> {
    Ok(b2_from_q(q_statistic(path, model, gamma_hat)?))
}

/// Adjustment term and rate diagonals at a fitted model.
pub fn scalings(path: &SamplePath, model: &CoefficientModel, fit: &GqmleFit) -> Result<RateScalings> {
    let b1 = b1n(path)?;
    let b2 = b2n(path, model, &fit.gamma_hat)?;
    RateScalings::new(b1, b2, path.horizon(), fit.gamma_hat.len(), fit.alpha_hat.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{registry, SamplingDesign};
    use crate::noise::RngStream;
    use crate::simulate::simulate;

    fn path_from_increments(dx: &[f64], h: f64) -> SamplePath {
        let mut v = vec![0.0];
        for d in dx {
            v.push(v.last().unwrap() + d);
        }
        SamplePath::new(v, SamplingDesign::new(dx.len(), h).unwrap()).unwrap()
    }

    #[test]
    fn b1_hand_values() {
        assert_eq!(b1n(&path_from_increments(&[2.0; 7], 0.1)).unwrap(), 4.0);
        assert_eq!(b1n(&path_from_increments(&[1.0, 2.0], 0.1)).unwrap(), 17.0 / 5.0);
        let flat = SamplePath::new(vec![1.0; 4], SamplingDesign::new(3, 0.1).unwrap()).unwrap();
        assert!(matches!(b1n(&flat), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn b2_hand_values() {
        assert!((b2_from_q(1.0) - (-2.0_f64).exp()).abs() < 1e-16);
        assert!((b2_from_q(-1.0) - (-2.0_f64).exp()).abs() < 1e-16);
        assert!((b2_from_q(4.0) - (-4.25_f64).exp()).abs() < 1e-16);
        assert!((b2_from_q(4.0) - 0.014264).abs() < 1e-6);
        assert_eq!(b2_from_q(0.0), 0.0);
        for q in [1e-3, 0.3, 0.9, 1.1, 7.0, 1e5] {
            assert!(b2_from_q(q) <= (-2.0_f64).exp());
        }
    }

    #[test]
    fn q_statistic_hand_value() {
        // c ≡ γ = 1, h = 1, ΔX = (1, 2): mean of (1/3 − 2 + 1, 16/3 − 8 + 1)
        let model = registry("ou_const_scale").unwrap().model;
        let path = path_from_increments(&[1.0, 2.0], 1.0);
        let q = q_statistic(&path, &model, &[1.0]).unwrap();
        let expected = ((1.0 / 3.0 - 1.0) + (16.0 / 3.0 - 7.0)) / 2.0;
        assert!((q - expected).abs() < 1e-14);
    }

    #[test]
    fn scalings_hand_values() {
        let s = RateScalings::new(0.5, 0.0, 500.0, 1, 0).unwrap();
        assert!((s.a_hat_diag[0] - 1000.0_f64.sqrt()).abs() < 1e-12);
        assert!((s.b_hat_diag[0] - 1.0 / 250.0_f64.sqrt()).abs() < 1e-15);
        let s = RateScalings::new(0.02, 0.01, 123.0, 2, 3).unwrap();
        assert_eq!(s.b, 0.02 + 0.01);
        for (a, b) in s.a_hat_diag.iter().zip(&s.b_hat_diag) {
            assert!((a - 123.0 * b).abs() <= 1e-14 * a);
        }
        assert!((s.b_hat_diag[4] - 1.0 / 123.0_f64.sqrt()).abs() < 1e-15);
        assert!(RateScalings::new(0.0, 0.0, 1.0, 1, 0).is_err());
    }

    #[test]
    fn correctly_specified_diffusion_limits() {
        let preset = registry("ou_const_scale").unwrap();
        let design = SamplingDesign::new(100_000, 0.005).unwrap();
        let path = simulate(&preset.dynamics, design, 1, &mut RngStream::new(77, 0)).unwrap();
        let b1 = b1n(&path).unwrap();
        assert!((b1 / (3.0 * path.h()) - 1.0).abs() < 0.05, "b1/3h = {}", b1 / (3.0 * path.h()));
        let fit = crate::gqmle::fit(&path, &preset.model, &Default::default()).unwrap();
        let b2 = b2n(&path, &preset.model, &fit.gamma_hat).unwrap();
        assert!(b2 < path.h() / 10.0, "b2 = {b2}");
    }
}
