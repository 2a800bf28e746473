//! Parametric coefficient models, data-generating dynamics and sampling designs.
//!
//! A statistical model is the pair `dX = a(X, α) dt + c(X-, γ) dZ`, where the
//! drift and scale coefficients are each a [`Coefficient`]: a scalar function of
//! the state and a parameter vector together with its first and second parameter
//! derivatives. Derivatives are supplied analytically by the model author.

use std::fmt;
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::noise::NoiseKind;

type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type DerivFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type StateFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Axis-aligned parameter box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Parameter(format!("bound {i} is not finite")));
            }
            if lo >= hi {
                return Err(Error::Parameter(format!(
                    "lower bound {lo} is not below upper bound {hi} in coordinate {i}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The zero-dimensional domain of a coefficient without free parameters.
    pub fn empty() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }
}

/// Componentwise projection of `theta` onto the box.
pub fn clamp_to_domain(theta: &[f64], domain: &ParamDomain) -> Result<Vec<f64>> {
    if theta.len() != domain.dim() {
        return Err(Error::Dimension {
            expected: domain.dim(),
            got: theta.len(),
        });
    }
    Ok(theta
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(t, (lo, hi))| t.clamp(*lo, *hi))
        .collect())
}

/// One coefficient function `f(x, θ)` with analytic parameter derivatives.
///
/// The gradient callback writes `p` entries, the Hessian callback writes a
/// row-major `p × p` block.
#[derive(Clone)]
pub struct Coefficient {
    value: Arc<ValueFn>,
    grad: Arc<DerivFn>,
    hess: Arc<DerivFn>,
    domain: ParamDomain,
    linear_factor: Option<Arc<StateFn>>,
}

impl Coefficient {
    pub fn new<V, G, H>(domain: ParamDomain, value: V, grad: G, hess: H) -> Self
    where
        V: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            domain,
            linear_factor: None,
        }
    }

    /// `θ · f(x)` with a scalar parameter. Fit and bootstrap use closed forms
    /// for such coefficients.
    pub fn linear<F>(domain: ParamDomain, factor: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if domain.dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: domain.dim(),
            });
        }
        let factor: Arc<StateFn> = Arc::new(factor);
        let f_value = Arc::clone(&factor);
        let f_grad = Arc::clone(&factor);
        Ok(Self {
            value: Arc::new(move |x, theta| theta[0] * f_value(x)),
            grad: Arc::new(move |x, _theta, out| out[0] = f_grad(x)),
            hess: Arc::new(|_x, _theta, out| out[0] = 0.0),
            domain,
            linear_factor: Some(factor),
        })
    }

    /// A coefficient with no free parameter.
    pub fn fixed<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(move |x, _theta| f(x)),
            grad: Arc::new(|_x, _theta, _out| {}),
            hess: Arc::new(|_x, _theta, _out| {}),
            domain: ParamDomain::empty(),
            linear_factor: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    #[inline]
    pub fn eval(&self, x: f64, theta: &[f64]) -> f64 {
        (self.value)(x, theta)
    }

    #[inline]
    pub fn grad_into(&self, x: f64, theta: &[f64], out: &mut [f64]) {
        (self.grad)(x, theta, out)
    }

    #[inline]
    pub fn hess_into(&self, x: f64, theta: &[f64], out: &mut [f64]) {
        (self.hess)(x, theta, out)
    }

    pub fn is_linear(&self) -> bool {
        self.linear_factor.is_some()
    }

    /// `f(x)` of a linear coefficient `θ · f(x)`.
    #[inline]
    pub fn factor(&self, x: f64) -> Option<f64> {
        self.linear_factor.as_ref().map(|f| f(x))
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("domain", &self.domain)
            .field("linear", &self.is_linear())
            .finish()
    }
}

/// Statistical model `dX = a(X, α) dt + c(X-, γ) dZ`.
#[derive(Clone, Debug)]
pub struct CoefficientModel {
    pub name: String,
    pub drift: Coefficient,
    pub scale: Coefficient,
}

impl CoefficientModel {
    pub fn new(name: impl Into<String>, drift: Coefficient, scale: Coefficient) -> Self {
        Self {
            name: name.into(),
            drift,
            scale,
        }
    }

    pub fn p_gamma(&self) -> usize {
        self.scale.dim()
    }

    pub fn p_alpha(&self) -> usize {
        self.drift.dim()
    }

    pub fn p(&self) -> usize {
        self.p_gamma() + self.p_alpha()
    }

    pub fn gamma_domain(&self) -> &ParamDomain {
        self.scale.domain()
    }

    pub fn alpha_domain(&self) -> &ParamDomain {
        self.drift.domain()
    }
}

/// Data-generating dynamics `dX = A(X) dt + C(X-) dZ`.
#[derive(Clone)]
pub struct TrueDynamics {
    drift: Arc<StateFn>,
    scale: Arc<StateFn>,
    pub noise: NoiseKind,
    pub x0: f64,
}

impl TrueDynamics {
    pub fn new<A, C>(drift: A, scale: C, noise: NoiseKind, x0: f64) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        C: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            drift: Arc::new(drift),
            scale: Arc::new(scale),
            noise,
            x0,
        }
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn scale(&self, x: f64) -> f64 {
        (self.scale)(x)
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }
}

impl fmt::Debug for TrueDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrueDynamics")
            .field("noise", &self.noise)
            .field("x0", &self.x0)
            .finish()
    }
}

/// Equally spaced design `t_j = j h`, `j = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingDesign {
    n: usize,
    h: f64,
    t: f64,
}

impl SamplingDesign {
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("sample size must be at least 2, got {n}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("step must be positive, got {h}")));
        }
        let t = n as f64 * h;
        if n as f64 * h * h > 1.0 {
            warn!("n·h² = {} is not small; the design is far from high-frequency", t * h);
        }
        Ok(Self { n, h, t })
    }

    /// Design with step `horizon / n`.
    pub fn from_horizon(n: usize, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Parameter(format!(
                "terminal time must be positive, got {horizon}"
            )));
        }
        Self::new(n, horizon / n as f64)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Terminal time `n · h`.
    pub fn horizon(&self) -> f64 {
        self.t
    }
}

/// A registered statistical model with its paired data-generating dynamics and
/// the optimal parameter `θ* = (γ*, α*)` for that pairing, when known.
#[derive(Clone, Debug)]
pub struct ModelPreset {
    pub model: CoefficientModel,
    pub dynamics: TrueDynamics,
    pub true_theta: Option<Vec<f64>>,
}

pub const REGISTERED_MODELS: &[&str] = &[
    "ou_sqrt_scale",
    "ou_const_scale",
    "ou_linear_drift",
    "tanh_rational",
];

fn ou_drift(x: f64) -> f64 {
    -0.5 * x
}

/// Known drift `-x/2`, scale `γ / sqrt(1 + x²)`, paired with an OU process of
/// unit scale started at zero. Only γ is estimated.
pub fn preset_experiment_model() -> (CoefficientModel, TrueDynamics) {
    let scale = Coefficient::linear(
        ParamDomain::interval(0.1, 10.0).expect("static domain"),
        |x| 1.0 / (1.0 + x * x).sqrt(),
    )
    .expect("scalar domain");
    let model = CoefficientModel::new("ou_sqrt_scale", Coefficient::fixed(ou_drift), scale);
    let dynamics = TrueDynamics::new(ou_drift, |_| 1.0, NoiseKind::Wiener, 0.0);
    (model, dynamics)
}

/// Drift `-α₁ tanh(α₂ x)`, scale `γ₁ + γ₂ / (1 + x²)`; two parameters each,
/// neither coefficient linear, so fitting goes through the numerical optimizer.
pub fn tanh_rational_model() -> CoefficientModel {
    let drift = Coefficient::new(
        ParamDomain::new(vec![0.05, 0.05], vec![10.0, 5.0]).expect("static domain"),
        |x, a| -a[0] * (a[1] * x).tanh(),
        |x, a, g| {
            let th = (a[1] * x).tanh();
            let sech2 = 1.0 - th * th;
            g[0] = -th;
            g[1] = -a[0] * x * sech2;
        },
        |x, a, h| {
            let th = (a[1] * x).tanh();
            let sech2 = 1.0 - th * th;
            h[0] = 0.0;
            h[1] = -x * sech2;
            h[2] = h[1];
            h[3] = 2.0 * a[0] * x * x * sech2 * th;
        },
    );
    let scale = Coefficient::new(
        ParamDomain::new(vec![0.05, 0.0], vec![5.0, 5.0]).expect("static domain"),
        |x, g| g[0] + g[1] / (1.0 + x * x),
        |x, _g, out| {
            out[0] = 1.0;
            out[1] = 1.0 / (1.0 + x * x);
        },
        |_x, _g, out| out.fill(0.0),
    );
    CoefficientModel::new("tanh_rational", drift, scale)
}

/// Looks up a model by registry name.
pub fn registry(name: &str) -> Result<ModelPreset> {
    let ou = || TrueDynamics::new(ou_drift, |_| 1.0, NoiseKind::Wiener, 0.0);
    let const_scale = || {
        Coefficient::linear(ParamDomain::interval(0.1, 10.0).expect("static domain"), |_| 1.0)
            .expect("scalar domain")
    };
    match name {
        "ou_sqrt_scale" => {
            let (model, dynamics) = preset_experiment_model();
            Ok(ModelPreset {
                model,
                dynamics,
                true_theta: Some(vec![std::f64::consts::SQRT_2]),
            })
        }
        "ou_const_scale" => Ok(ModelPreset {
            model: CoefficientModel::new(name, Coefficient::fixed(ou_drift), const_scale()),
            dynamics: ou(),
            true_theta: Some(vec![1.0]),
        }),
        "ou_linear_drift" => {
            let drift =
                Coefficient::linear(ParamDomain::interval(-10.0, 10.0).expect("static domain"), |x| x)
                    .expect("scalar domain");
            Ok(ModelPreset {
                model: CoefficientModel::new(name, drift, const_scale()),
                dynamics: ou(),
                true_theta: Some(vec![1.0, -0.5]),
            })
        }
        "tanh_rational" => {
            let model = tanh_rational_model();
            let dynamics = TrueDynamics::new(
                |x| -(0.8 * x).tanh(),
                |x| 0.6 + 0.5 / (1.0 + x * x),
                NoiseKind::Wiener,
                0.0,
            );
            Ok(ModelPreset {
                model,
                dynamics,
                true_theta: Some(vec![0.6, 0.5, 1.0, 0.8]),
            })
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}
