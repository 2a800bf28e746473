//! Stepwise Gaussian quasi-likelihood estimation.
//!
//! With `c_{j-1}(γ) = c(X_{t_{j-1}}, γ)` and `a_{j-1}(α) = a(X_{t_{j-1}}, α)`:
//!
//! ```text
//! H₁(γ)    = −1/(2h) Σ_j { h log c²_{j-1}(γ) + (Δ_j X)² / c²_{j-1}(γ) }
//! H₂(α, γ) = −1/(2h) Σ_j (Δ_j X − h a_{j-1}(α))² / c²_{j-1}(γ)
//! ```
//!
//! The scale estimate maximizes `H₁`; the drift estimate then maximizes
//! `H₂(·, γ̂)`. Both criteria accept per-observation weights so the same code
//! computes the bootstrap estimator.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{clamp_to_domain, Coefficient, CoefficientModel, ParamDomain};
use crate::optim::{golden_section_max, nelder_mead_max, OptimResult};
use crate::simulate::SamplePath;

/// Relative distance to a bound under which a coordinate is reported as
/// non-interior.
const BOUNDARY_TOL: f64 = 1e-6;
/// Normalized score size accepted as a stationary point.
const SCORE_TOL: f64 = 1e-6;

/// Multiplicative weights on the summands of the criteria.
#[derive(Clone, Copy, Debug)]
pub enum ObsWeights<'a> {
    Unit,
    /// Weight `weights[i]` on every summand of block `i` (blocks of
    /// `block_len` consecutive increments).
    Blocks { weights: &'a [f64], block_len: usize },
}

impl ObsWeights<'_> {
    /// Weight of the `j`-th increment (zero-based).
    #[inline]
    fn at(&self, j: usize) -> f64 {
        match self {
            ObsWeights::Unit => 1.0,
            ObsWeights::Blocks { weights, block_len } => weights[j / block_len],
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Parameter tolerance of the derivative-free search.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of Nelder–Mead starting points for vector parameters.
    pub starts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            starts: 5,
        }
    }
}

fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(matrix_rows(m))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Stepwise GQMLE together with the normalized Hessian blocks at the optimum.
#[derive(Clone, Debug, Serialize)]
pub struct GqmleFit {
    pub gamma_hat: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub h1_at_opt: f64,
    pub h2_at_opt: f64,
    /// `(1/n) ∂²_γ H₁(γ̂)`
    #[serde(serialize_with = "serialize_matrix")]
    pub gamma_hessian: DMatrix<f64>,
    /// `(1/(nh)) ∂²_α H₂(α̂, γ̂)`
    #[serde(serialize_with = "serialize_matrix")]
    pub alpha_hessian: DMatrix<f64>,
    /// `(1/(nh)) ∂_γ ∂_α H₂(α̂, γ̂)`, rows indexed by α, columns by γ.
    #[serde(serialize_with = "serialize_matrix")]
    pub cross_block: DMatrix<f64>,
    /// γ flags first, then α flags.
    pub interior: Vec<bool>,
}

impl GqmleFit {
    /// `θ̂ = (γ̂, α̂)`.
    pub fn theta(&self) -> Vec<f64> {
        self.gamma_hat
            .iter()
            .chain(&self.alpha_hat)
            .copied()
            .collect()
    }

    pub fn p(&self) -> usize {
        self.gamma_hat.len() + self.alpha_hat.len()
    }
}

#[inline]
fn checked_scale(scale: &Coefficient, x: f64, gamma: &[f64], index: usize) -> Result<f64> {
    let c = scale.eval(x, gamma);
    if c == 0.0 || !c.is_finite() {
        return Err(Error::SingularScale { index, state: x });
    }
    Ok(c)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

fn check_index(path: &SamplePath, j: usize) -> Result<()> {
    if j == 0 || j > path.n() {
        return Err(Error::Parameter(format!(
            "increment index {j} outside 1..={}",
            path.n()
        )));
    }
    Ok(())
}

/// Rejects paths with zero quadratic variation.
pub fn check_nondegenerate(path: &SamplePath) -> Result<()> {
    if path.steps().all(|(_, dx)| dx == 0.0) {
        return Err(Error::DegenerateData("all increments are zero".into()));
    }
    Ok(())
}

/// Value, gradient and Hessian (row-major) of a criterion.
#[derive(Clone, Debug)]
struct Derivs {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

/// Weighted `H₁` and, for `order ≥ 1`, its γ-derivatives.
fn scale_criterion(
    path: &SamplePath,
    model: &CoefficientModel,
    gamma: &[f64],
    w: ObsWeights,
    order: u8,
) -> Result<Derivs> {
    let p = model.p_gamma();
    let h = path.h();
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut dc = vec![0.0; p];
    let mut d2c = vec![0.0; p * p];
    for (j, (x, dx)) in path.steps().enumerate() {
        let wj = w.at(j);
        let c = checked_scale(&model.scale, x, gamma, j + 1)?;
        let c2 = c * c;
        let dx2 = dx * dx;
        value += wj * (h * c2.ln() + dx2 / c2);
        if order >= 1 {
            model.scale.grad_into(x, gamma, &mut dc);
            // ∂_γ {h log c² + ΔX²/c²} = 2h c'/c − 2ΔX² c'/c³
            let g_coef = 2.0 * h / c - 2.0 * dx2 / (c2 * c);
            for (g, d) in grad.iter_mut().zip(&dc) {
                *g += wj * g_coef * d;
            }
        }
        if order >= 2 {
            model.scale.hess_into(x, gamma, &mut d2c);
            let c4 = c2 * c2;
            let first = 2.0 * h / c - 2.0 * dx2 / (c2 * c);
            let outer = -2.0 * h / c2 + 6.0 * dx2 / c4;
            for a in 0..p {
                for b in 0..p {
                    hess[a * p + b] += wj * (first * d2c[a * p + b] + outer * dc[a] * dc[b]);
                }
            }
        }
    }
    let k = -1.0 / (2.0 * h);
    Ok(Derivs {
        value: k * value,
        grad: grad.into_iter().map(|g| k * g).collect(),
        hess: hess.into_iter().map(|v| k * v).collect(),
    })
}

/// Weighted `H₂(·, γ)` and, for `order ≥ 1`, its α-derivatives.
fn drift_criterion(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
    w: ObsWeights,
    order: u8,
) -> Result<Derivs> {
    let p = model.p_alpha();
    let h = path.h();
    let mut value = 0.0;
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut da = vec![0.0; p];
    let mut d2a = vec![0.0; p * p];
    for (j, (x, dx)) in path.steps().enumerate() {
        let wj = w.at(j);
        let c = checked_scale(&model.scale, x, gamma, j + 1)?;
        let c2 = c * c;
        let resid = dx - h * model.drift.eval(x, alpha);
        value += wj * resid * resid / c2;
        if order >= 1 {
            model.drift.grad_into(x, alpha, &mut da);
            // ∂_α (ΔX − h a)²/c² = −2h a' (ΔX − h a)/c²
            for (g, d) in grad.iter_mut().zip(&da) {
                *g += wj * (-2.0 * h) * d * resid / c2;
            }
        }
        if order >= 2 {
            model.drift.hess_into(x, alpha, &mut d2a);
            for a in 0..p {
                for b in 0..p {
                    hess[a * p + b] +=
                        wj * (-2.0 * h) * (d2a[a * p + b] * resid - h * da[a] * da[b]) / c2;
                }
            }
        }
    }
    let k = -1.0 / (2.0 * h);
    Ok(Derivs {
        value: k * value,
        grad: grad.into_iter().map(|g| k * g).collect(),
        hess: hess.into_iter().map(|v| k * v).collect(),
    })
}

/// `H₁(γ)`.
pub fn gql_scale(path: &SamplePath, model: &CoefficientModel, gamma: &[f64]) -> Result<f64> {
    check_dim(model.p_gamma(), gamma.len())?;
    Ok(scale_criterion(path, model, gamma, ObsWeights::Unit, 0)?.value)
}

/// `H₂(α, γ)`.
pub fn gql_drift(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<f64> {
    check_dim(model.p_alpha(), alpha.len())?;
    check_dim(model.p_gamma(), gamma.len())?;
    Ok(drift_criterion(path, model, alpha, gamma, ObsWeights::Unit, 0)?.value)
}

/// `∂_γ H₁(γ)` from the derivative of the criterion itself.
pub fn scale_score(path: &SamplePath, model: &CoefficientModel, gamma: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.p_gamma(), gamma.len())?;
    Ok(scale_criterion(path, model, gamma, ObsWeights::Unit, 1)?.grad)
}

/// `∂_α H₂(α, γ)` from the derivative of the criterion itself.
pub fn drift_score(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<Vec<f64>> {
    check_dim(model.p_alpha(), alpha.len())?;
    check_dim(model.p_gamma(), gamma.len())?;
    Ok(drift_criterion(path, model, alpha, gamma, ObsWeights::Unit, 1)?.grad)
}

/// `∂²_γ H₁(γ)` (unnormalized).
pub fn scale_hessian(
    path: &SamplePath,
    model: &CoefficientModel,
    gamma: &[f64],
) -> Result<DMatrix<f64>> {
    check_dim(model.p_gamma(), gamma.len())?;
    let p = model.p_gamma();
    let d = scale_criterion(path, model, gamma, ObsWeights::Unit, 2)?;
    Ok(DMatrix::from_row_slice(p, p, &d.hess))
}

/// `∂²_α H₂(α, γ)` (unnormalized).
pub fn drift_hessian(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<DMatrix<f64>> {
    check_dim(model.p_alpha(), alpha.len())?;
    check_dim(model.p_gamma(), gamma.len())?;
    let p = model.p_alpha();
    let d = drift_criterion(path, model, alpha, gamma, ObsWeights::Unit, 2)?;
    Ok(DMatrix::from_row_slice(p, p, &d.hess))
}

/// `∂_γ ∂_α H₂(α, γ)` (unnormalized), shape `p_α × p_γ`.
pub fn cross_hessian(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
) -> Result<DMatrix<f64>> {
    check_dim(model.p_alpha(), alpha.len())?;
    check_dim(model.p_gamma(), gamma.len())?;
    let (pa, pg) = (model.p_alpha(), model.p_gamma());
    let h = path.h();
    let mut out = DMatrix::zeros(pa, pg);
    let mut da = vec![0.0; pa];
    let mut dc = vec![0.0; pg];
    for (j, (x, dx)) in path.steps().enumerate() {
        let c = checked_scale(&model.scale, x, gamma, j + 1)?;
        model.drift.grad_into(x, alpha, &mut da);
        model.scale.grad_into(x, gamma, &mut dc);
        let resid = dx - h * model.drift.eval(x, alpha);
        // ∂_γ c⁻² = −2 c' / c³
        let k = -2.0 * resid / (c * c * c);
        for a in 0..pa {
            for b in 0..pg {
                out[(a, b)] += k * da[a] * dc[b];
            }
        }
    }
    Ok(out)
}

/// `ζ_j(γ) = (∂_γ c / c³)(X_{t_{j-1}}, γ) · [h c² − (Δ_j X)²]`, `j` one-based.
pub fn zeta(path: &SamplePath, model: &CoefficientModel, gamma: &[f64], j: usize) -> Result<Vec<f64>> {
    check_dim(model.p_gamma(), gamma.len())?;
    check_index(path, j)?;
    let mut out = vec![0.0; model.p_gamma()];
    zeta_into(path, model, gamma, j - 1, &mut out)?;
    Ok(out)
}

/// `ζ` for the zero-based increment `i`, written into `out`.
#[inline]
pub(crate) fn zeta_into(
    path: &SamplePath,
    model: &CoefficientModel,
    gamma: &[f64],
    i: usize,
    out: &mut [f64],
) -> Result<()> {
    let v = path.values();
    let (x, dx) = (v[i], v[i + 1] - v[i]);
    let c = checked_scale(&model.scale, x, gamma, i + 1)?;
    model.scale.grad_into(x, gamma, out);
    let k = (path.h() * c * c - dx * dx) / (c * c * c);
    out.iter_mut().for_each(|o| *o *= k);
    Ok(())
}

/// `η_j(α, γ) = (∂_α a / c²)(X_{t_{j-1}}) · [Δ_j X − h a(X_{t_{j-1}}, α)]`, `j` one-based.
pub fn eta(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
    j: usize,
) -> Result<Vec<f64>> {
    check_dim(model.p_alpha(), alpha.len())?;
    check_dim(model.p_gamma(), gamma.len())?;
    check_index(path, j)?;
    let mut out = vec![0.0; model.p_alpha()];
    eta_into(path, model, alpha, gamma, j - 1, &mut out)?;
    Ok(out)
}

#[inline]
pub(crate) fn eta_into(
    path: &SamplePath,
    model: &CoefficientModel,
    alpha: &[f64],
    gamma: &[f64],
    i: usize,
    out: &mut [f64],
) -> Result<()> {
    let v = path.values();
    let (x, dx) = (v[i], v[i + 1] - v[i]);
    let c = checked_scale(&model.scale, x, gamma, i + 1)?;
    model.drift.grad_into(x, alpha, out);
    let k = (dx - path.h() * model.drift.eval(x, alpha)) / (c * c);
    out.iter_mut().for_each(|o| *o *= k);
    Ok(())
}

/// Result of one criterion maximization.
#[derive(Clone, Debug)]
pub(crate) struct Estimate {
    pub theta: Vec<f64>,
    pub interior: Vec<bool>,
}

fn interior_flags(theta: &[f64], domain: &ParamDomain) -> Vec<bool> {
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let slack = BOUNDARY_TOL * domain.width(i);
            t - domain.lower()[i] > slack && domain.upper()[i] - t > slack
        })
        .collect()
}

/// Solves `hess · step = −grad` for a maximization Newton step; `None` unless
/// the Hessian is negative definite.
fn newton_step(grad: &[f64], hess: &[f64]) -> Option<Vec<f64>> {
    let p = grad.len();
    let neg = DMatrix::from_row_slice(p, p, hess).map(|v| -v);
    let chol = nalgebra::Cholesky::new(neg)?;
    let g = nalgebra::DVector::from_column_slice(grad);
    Some(chol.solve(&g).iter().copied().collect())
}

/// Maximizes a smooth criterion over a box: derivative-free search, then
/// Newton refinement with the analytic derivatives.
fn maximize<F>(criterion: F, domain: &ParamDomain, opts: &FitOptions, score_scale: f64) -> Result<Estimate>
where
    F: Fn(&[f64], u8) -> Result<Derivs>,
{
    let p = domain.dim();
    if p == 0 {
        return Ok(Estimate {
            theta: Vec::new(),
            interior: Vec::new(),
        });
    }

    // errors inside the search surface as -inf and are re-raised below
    let value = |t: &[f64]| criterion(t, 0).map(|d| d.value).unwrap_or(f64::NEG_INFINITY);
    let best: OptimResult = if p == 1 {
        golden_section_max(
            |t| value(&[t]),
            domain.lower()[0],
            domain.upper()[0],
            opts.tol,
            opts.max_iter,
        )
    } else {
        start_points(domain, opts.starts.max(1))
            .iter()
            .map(|s| nelder_mead_max(value, s, domain, opts.tol, opts.max_iter))
            .max_by(|a, b| a.value.total_cmp(&b.value))
            .expect("at least one start")
    };
    if !best.value.is_finite() {
        // reproduce the underlying error, if any
        criterion(&best.x, 0)?;
        return Err(Error::FitNonConvergence {
            iterations: best.iterations,
            diameter: best.spread,
            score_norm: f64::NAN,
        });
    }

    let mut theta = best.x.clone();
    let mut current = criterion(&theta, 2)?;
    for _ in 0..20 {
        let Some(step) = newton_step(&current.grad, &current.hess) else {
            break;
        };
        let proposal: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        let proposal = clamp_to_domain(&proposal, domain)?;
        let next = criterion(&proposal, 2)?;
        if next.value + 1e-12 * next.value.abs() < current.value {
            break;
        }
        let moved = proposal
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = proposal;
        current = next;
        if moved <= 1e-15 * theta.iter().map(|t| t.abs()).fold(1.0, f64::max) {
            break;
        }
    }

    let interior = interior_flags(&theta, domain);
    let score_norm = current
        .grad
        .iter()
        .zip(&interior)
        .filter(|(_, inside)| **inside)
        .map(|(g, _)| (g / score_scale).abs())
        .fold(0.0, f64::max);
    if !best.converged && score_norm > SCORE_TOL {
        return Err(Error::FitNonConvergence {
            iterations: best.iterations,
            diameter: best.spread,
            score_norm,
        });
    }
    Ok(Estimate { theta, interior })
}

fn start_points(domain: &ParamDomain, count: usize) -> Vec<Vec<f64>> {
    let p = domain.dim();
    let mut points = vec![domain.center()];
    for s in 1..count {
        points.push(
            (0..p)
                .map(|i| {
                    let frac = ((s * (i + 2)) as f64 * 0.618_033_988_749_894_9).fract();
                    domain.lower()[i] + (0.1 + 0.8 * frac) * domain.width(i)
                })
                .collect(),
        );
    }
    points
}

/// Maximizer of the weighted `H₁`.
pub(crate) fn estimate_scale(
    path: &SamplePath,
    model: &CoefficientModel,
    w: ObsWeights,
    opts: &FitOptions,
) -> Result<Estimate> {
    let domain = model.gamma_domain();
    if model.scale.is_linear() {
        // argmax of −Σ w {h log γ² + ΔX²/(γ² c₀²)} is γ² = Σ w ΔX²/c₀² / (h Σ w)
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (x, dx)) in path.steps().enumerate() {
            let c0 = model.scale.factor(x).expect("linear coefficient");
            if c0 == 0.0 || !c0.is_finite() {
                return Err(Error::SingularScale { index: j + 1, state: x });
            }
            let wj = w.at(j);
            num += wj * dx * dx / (c0 * c0);
            den += wj;
        }
        if !(den > 0.0) {
            return Err(Error::DegenerateData("weights sum to zero".into()));
        }
        let theta = clamp_to_domain(&[(num / (path.h() * den)).sqrt()], domain)?;
        let interior = interior_flags(&theta, domain);
        return Ok(Estimate { theta, interior });
    }
    estimate_scale_generic(path, model, w, opts)
}

/// Maximizer of the weighted `H₁` by numerical search, ignoring any closed form.
pub(crate) fn estimate_scale_generic(
    path: &SamplePath,
    model: &CoefficientModel,
    w: ObsWeights,
    opts: &FitOptions,
) -> Result<Estimate> {
    maximize(
        |g, order| scale_criterion(path, model, g, w, order),
        model.gamma_domain(),
        opts,
        path.n() as f64,
    )
}

/// Maximizer of the weighted `H₂(·, γ)`.
pub(crate) fn estimate_drift(
    path: &SamplePath,
    model: &CoefficientModel,
    gamma: &[f64],
    w: ObsWeights,
    opts: &FitOptions,
) -> Result<Estimate> {
    let domain = model.alpha_domain();
    if model.drift.is_linear() {
        // α = Σ w ΔX a₀/c² / (h Σ w a₀²/c²)
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (x, dx)) in path.steps().enumerate() {
            let c = checked_scale(&model.scale, x, gamma, j + 1)?;
            let a0 = model.drift.factor(x).expect("linear coefficient");
            let wj = w.at(j);
            num += wj * dx * a0 / (c * c);
            den += wj * a0 * a0 / (c * c);
        }
        if !(den > 0.0) {
            return Err(Error::DegenerateData(
                "drift regressor vanishes along the path".into(),
            ));
        }
        let theta = clamp_to_domain(&[num / (path.h() * den)], domain)?;
        let interior = interior_flags(&theta, domain);
        return Ok(Estimate { theta, interior });
    }
    estimate_drift_generic(path, model, gamma, w, opts)
}

/// Maximizer of the weighted `H₂(·, γ)` by numerical search.
pub(crate) fn estimate_drift_generic(
    path: &SamplePath,
    model: &CoefficientModel,
    gamma: &[f64],
    w: ObsWeights,
    opts: &FitOptions,
) -> Result<Estimate> {
    maximize(
        |a, order| drift_criterion(path, model, a, gamma, w, order),
        model.alpha_domain(),
        opts,
        path.horizon(),
    )
}

/// Stepwise GQMLE: γ̂ maximizes `H₁`, then α̂ maximizes `H₂(·, γ̂)`.
pub fn fit(path: &SamplePath, model: &CoefficientModel, opts: &FitOptions) -> Result<GqmleFit> {
    check_nondegenerate(path)?;
    let scale = estimate_scale(path, model, ObsWeights::Unit, opts)?;
    let drift = estimate_drift(path, model, &scale.theta, ObsWeights::Unit, opts)?;
    let (gamma_hat, alpha_hat) = (scale.theta, drift.theta);

    let n = path.n() as f64;
    let t = path.horizon();
    let gamma_hessian = scale_hessian(path, model, &gamma_hat)? / n;
    let alpha_hessian = drift_hessian(path, model, &alpha_hat, &gamma_hat)? / t;
    let cross_block = cross_hessian(path, model, &alpha_hat, &gamma_hat)? / t;

    Ok(GqmleFit {
        h1_at_opt: gql_scale(path, model, &gamma_hat)?,
        h2_at_opt: gql_drift(path, model, &alpha_hat, &gamma_hat)?,
        interior: scale.interior.into_iter().chain(drift.interior).collect(),
        gamma_hat,
        alpha_hat,
        gamma_hessian,
        alpha_hessian,
        cross_block,
    })
}

/// `(Γ̂ₙ, Γ̄ₙ)`: the lower block-triangular normalized Hessian and its
/// block-diagonal part.
pub fn hessians(fit: &GqmleFit) -> (DMatrix<f64>, DMatrix<f64>) {
    let (pg, pa) = (fit.gamma_hat.len(), fit.alpha_hat.len());
    let mut bar = DMatrix::zeros(pg + pa, pg + pa);
    bar.view_mut((0, 0), (pg, pg)).copy_from(&fit.gamma_hessian);
    bar.view_mut((pg, pg), (pa, pa)).copy_from(&fit.alpha_hessian);
    let mut full = bar.clone();
    full.view_mut((pg, 0), (pa, pg)).copy_from(&fit.cross_block);
    (full, bar)
}
