//! Weighted block bootstrap of the quasi-score.
//!
//! The `n` increments are split into `k` consecutive blocks of length
//! `c = n/k`. Each replication draws i.i.d. weights `w₁, …, w_k` with
//! `E[w] = 1`, `E[(w − 1)²] = 1` and reweights the per-block score sums.
//!
//! Two statistics approximate the law of `Âₙ Γ̄ₙ (θ̂ₙ − θ⋆)`:
//! * [`BootstrapMode::ScoreShortcut`]: the normalized weighted score,
//!   `O(k)` per replication;
//! * [`BootstrapMode::FullEstimator`]: `Âₙ Γ̄ₙ (θ̂ᴮ − θ̂ₙ)` from the re-solved
//!   weighted estimating equations.
//!
//! The drift score enters the shortcut with a negative sign so that both
//! modes estimate the same statistic: a first-order expansion of the weighted
//! drift equation gives `√T Γ̄_α (α̂ᴮ − α̂) ≈ −T^{-1/2} Σ (wᵢ − 1) Σ_{Bᵢ} η`.
//!
//! Intervals are inverted with `Γ̄ₙ` on both sides. For models without drift
//! parameters `Γ̄ₙ = Γ̂ₙ`; otherwise the two differ only in the α–γ block.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::adjustment::RateScalings;
use crate::error::{Error, Result};
use crate::gqmle::{self, eta_into, zeta_into, FitOptions, GqmleFit, ObsWeights};
use crate::model::{CoefficientModel, ParamDomain};
use crate::noise::{RngStream, StreamRole};
use crate::simulate::SamplePath;

/// Share of failed estimator replications above which a distribution is
/// rejected.
const MAX_DRAW_FAILURE_RATE: f64 = 0.01;

/// `k` consecutive blocks of equal length covering the increments `1..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockPartition {
    n: usize,
    k: usize,
    block_len: usize,
}

impl BlockPartition {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n || n % k != 0 {
            return Err(Error::Divisibility { n, k });
        }
        Ok(Self {
            n,
            k,
            block_len: n / k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// One-based increment indices of block `i` (zero-based block index).
    pub fn block(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        i * self.block_len + 1..=(i + 1) * self.block_len
    }

    /// `log_T k`, expected in `(1/2, 1)`.
    pub fn log_ratio(&self, horizon: f64) -> f64 {
        (self.k as f64).ln() / horizon.ln()
    }

    /// Logs a warning when `log_T k` falls outside `(1/2, 1)`.
    pub fn check_rate(&self, horizon: f64) {
        let r = self.log_ratio(horizon);
        if !(r > 0.5 && r < 1.0) {
            log::warn!(
                "block count k = {} gives log_T(k) = {r:.3} outside (1/2, 1) at T = {horizon}",
                self.k
            );
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// Two-point law on `(3 ∓ √5)/2` with `P(low) = (√5 + 1)/(2√5)`.
    ShiftedMammen,
    /// `4·B` with `B ~ Beta(1/2, 3/2)`.
    #[default]
    ScaledBeta,
    /// `w ≡ 1`.
    UnitWeights,
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::ShiftedMammen => "mammen",
            WeightScheme::ScaledBeta => "beta",
            WeightScheme::UnitWeights => "unit",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mammen" | "shifted_mammen" => Ok(WeightScheme::ShiftedMammen),
            "beta" | "scaled_beta" => Ok(WeightScheme::ScaledBeta),
            "unit" | "unit_weights" => Ok(WeightScheme::UnitWeights),
            other => Err(Error::Config(format!("unknown weight scheme '{other}'"))),
        }
    }
}

impl Serialize for WeightScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for WeightScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;

/// i.i.d. nonnegative weights.
pub fn draw_weights<R: RngCore + ?Sized>(scheme: WeightScheme, k: usize, rng: &mut R) -> Vec<f64> {
    match scheme {
        WeightScheme::UnitWeights => vec![1.0; k],
        WeightScheme::ShiftedMammen => {
            let p_low = (SQRT5 + 1.0) / (2.0 * SQRT5);
            let (low, high) = ((3.0 - SQRT5) / 2.0, (3.0 + SQRT5) / 2.0);
            (0..k)
                .map(|_| {
                    let u: f64 = rand::Rng::random(rng);
                    if u < p_low {
                        low
                    } else {
                        high
                    }
                })
                .collect()
        }
        WeightScheme::ScaledBeta => {
            let beta = Beta::new(0.5, 1.5).expect("valid beta parameters");
            (0..k).map(|_| 4.0 * beta.sample(rng)).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BootstrapMode {
    #[default]
    ScoreShortcut,
    FullEstimator,
}

impl BootstrapMode {
    pub fn name(&self) -> &'static str {
        match self {
            BootstrapMode::ScoreShortcut => "score",
            BootstrapMode::FullEstimator => "estimator",
        }
    }
}

impl fmt::Display for BootstrapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BootstrapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "score" | "score_shortcut" | "shortcut" => Ok(BootstrapMode::ScoreShortcut),
            "estimator" | "full_estimator" | "full" => Ok(BootstrapMode::FullEstimator),
            other => Err(Error::Config(format!("unknown bootstrap mode '{other}'"))),
        }
    }
}

impl Serialize for BootstrapMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BootstrapMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_partition(path: &SamplePath, part: &BlockPartition) -> Result<()> {
    if part.n() != path.n() {
        return Err(Error::Dimension {
            expected: path.n(),
            got: part.n(),
        });
    }
    Ok(())
}

/// Per-block score sums at `θ̂`: row `i` is
/// `(Σ_{Bᵢ} ζⱼ(γ̂), Σ_{Bᵢ} ηⱼ(α̂, γ̂))`, shape `k × p`.
pub fn block_sums(
    path: &SamplePath,
    model: &CoefficientModel,
    fit: &GqmleFit,
    part: &BlockPartition,
) -> Result<DMatrix<f64>> {
    check_partition(path, part)?;
    let (pg, pa) = (fit.gamma_hat.len(), fit.alpha_hat.len());
    let mut out = DMatrix::zeros(part.k(), pg + pa);
    let mut z = vec![0.0; pg];
    let mut e = vec![0.0; pa];
    for i in 0..part.k() {
        for j in part.block(i) {
            zeta_into(path, model, &fit.gamma_hat, j - 1, &mut z)?;
            eta_into(path, model, &fit.alpha_hat, &fit.gamma_hat, j - 1, &mut e)?;
            for (c, v) in z.iter().chain(&e).enumerate() {
                out[(i, c)] += v;
            }
        }
    }
    Ok(out)
}

/// `B̂ₙ Σᵢ (wᵢ − 1) sums[i]`.
pub fn score_draw(sums: &DMatrix<f64>, w: &[f64], s: &RateScalings) -> Result<Vec<f64>> {
    if w.len() != sums.nrows() {
        return Err(Error::Dimension {
            expected: sums.nrows(),
            got: w.len(),
        });
    }
    if s.p() != sums.ncols() {
        return Err(Error::Dimension {
            expected: sums.ncols(),
            got: s.p(),
        });
    }
    let mut out = vec![0.0; sums.ncols()];
    for (i, wi) in w.iter().enumerate() {
        let d = wi - 1.0;
        if d != 0.0 {
            for (c, o) in out.iter_mut().enumerate() {
                *o += d * sums[(i, c)];
            }
        }
    }
    for (o, b) in out.iter_mut().zip(&s.b_hat_diag) {
        *o *= b;
    }
    Ok(out)
}

/// Per-block statistics for the closed-form bootstrap estimators.
#[derive(Clone, Debug)]
struct LinearBlockStats {
    /// `Σ_{Bᵢ} (ΔX)² / c₀²`
    scale: Option<Vec<f64>>,
    /// `(Σ_{Bᵢ} ΔX a₀/c², Σ_{Bᵢ} a₀²/c²)` with `c = c(·, γ̂ₙ)`
    drift: Option<(Vec<f64>, Vec<f64>)>,
}

/// Reusable state for solving the weighted estimating equations.
pub struct EstimatorContext<'a> {
    path: &'a SamplePath,
    model: &'a CoefficientModel,
    fit: &'a GqmleFit,
    part: BlockPartition,
    opts: FitOptions,
    stats: LinearBlockStats,
}

impl<'a> EstimatorContext<'a> {
    pub fn new(
        path: &'a SamplePath,
        model: &'a CoefficientModel,
        fit: &'a GqmleFit,
        part: BlockPartition,
        opts: FitOptions,
    ) -> Result<Self> {
        check_partition(path, &part)?;
        let k = part.k();
        let scale = if model.scale.is_linear() {
            let mut s = vec![0.0; k];
            for (j, (x, dx)) in path.steps().enumerate() {
                let c0 = model.scale.factor(x).expect("linear coefficient");
                if c0 == 0.0 || !c0.is_finite() {
                    return Err(Error::SingularScale { index: j + 1, state: x });
                }
                s[j / part.block_len()] += dx * dx / (c0 * c0);
            }
            Some(s)
        } else {
            None
        };
        let drift = if model.drift.is_linear() {
            let (mut u, mut v) = (vec![0.0; k], vec![0.0; k]);
            for (j, (x, dx)) in path.steps().enumerate() {
                let c = model.scale.eval(x, &fit.gamma_hat);
                if c == 0.0 || !c.is_finite() {
                    return Err(Error::SingularScale { index: j + 1, state: x });
                }
                let a0 = model.drift.factor(x).expect("linear coefficient");
                u[j / part.block_len()] += dx * a0 / (c * c);
                v[j / part.block_len()] += a0 * a0 / (c * c);
            }
            Some((u, v))
        } else {
            None
        };
        Ok(Self {
            path,
            model,
            fit,
            part,
            opts,
            stats: LinearBlockStats { scale, drift },
        })
    }

    /// `θ̂ᴮ` for the weights `w`. The drift equation keeps `γ̂ₙ` in the
    /// denominator.
    pub fn solve(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.part.k() {
            return Err(Error::Dimension {
                expected: self.part.k(),
                got: w.len(),
            });
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::BootstrapDraw("weights sum to zero".into()));
        }
        let gamma = match &self.stats.scale {
            Some(s) => {
                let num: f64 = w.iter().zip(s).map(|(wi, si)| wi * si).sum();
                let k = self.part.k() as f64;
                let g = (k * num / (self.path.horizon() * total)).sqrt();
                vec![inside(g, self.model.gamma_domain(), 0)?]
            }
            None => self.generic_scale(w)?,
        };
        let alpha = match &self.stats.drift {
            Some((u, v)) => {
                let num: f64 = w.iter().zip(u).map(|(wi, ui)| wi * ui).sum();
                let den: f64 = w.iter().zip(v).map(|(wi, vi)| wi * vi).sum();
                if !(den > 0.0) {
                    return Err(Error::BootstrapDraw("weighted drift regressor vanishes".into()));
                }
                vec![inside(num / (self.path.h() * den), self.model.alpha_domain(), 0)?]
            }
            None => self.generic_drift(w)?,
        };
        Ok(gamma.into_iter().chain(alpha).collect())
    }

    /// Weighted scale equation solved by maximizing the weighted criterion.
    pub fn generic_scale(&self, w: &[f64]) -> Result<Vec<f64>> {
        let ow = ObsWeights::Blocks {
            weights: w,
            block_len: self.part.block_len(),
        };
        let est = gqmle::estimate_scale_generic(self.path, self.model, ow, &self.opts)
            .map_err(as_draw_error)?;
        require_interior(est)
    }

    pub fn generic_drift(&self, w: &[f64]) -> Result<Vec<f64>> {
        let ow = ObsWeights::Blocks {
            weights: w,
            block_len: self.part.block_len(),
        };
        let est = gqmle::estimate_drift_generic(
            self.path,
            self.model,
            &self.fit.gamma_hat,
            ow,
            &self.opts,
        )
        .map_err(as_draw_error)?;
        require_interior(est)
    }
}

fn as_draw_error(e: Error) -> Error {
    match e {
        Error::BootstrapDraw(_) => e,
        other => Error::BootstrapDraw(other.to_string()),
    }
}

fn inside(v: f64, domain: &ParamDomain, i: usize) -> Result<f64> {
    if v.is_finite() && v >= domain.lower()[i] && v <= domain.upper()[i] {
        Ok(v)
    } else {
        Err(Error::BootstrapDraw(format!(
            "root {v} outside [{}, {}]",
            domain.lower()[i],
            domain.upper()[i]
        )))
    }
}

fn require_interior(est: gqmle::Estimate) -> Result<Vec<f64>> {
    if est.interior.iter().all(|&b| b) {
        Ok(est.theta)
    } else {
        Err(Error::BootstrapDraw(format!(
            "no interior root; optimum {:?} on the boundary",
            est.theta
        )))
    }
}

/// `θ̂ᴮ` for a single weight vector.
pub fn estimator_draw(
    path: &SamplePath,
    model: &CoefficientModel,
    fit: &GqmleFit,
    part: &BlockPartition,
    w: &[f64],
) -> Result<Vec<f64>> {
    EstimatorContext::new(path, model, fit, *part, FitOptions::default())?.solve(w)
}

/// Replicated bootstrap draws of the normalized statistic.
#[derive(Clone, Debug, Serialize)]
pub struct BootstrapDistribution {
    /// `R × p`, failed replications omitted.
    #[serde(skip)]
    pub draws: DMatrix<f64>,
    pub mode: BootstrapMode,
    pub theta_hat: Vec<f64>,
    pub scalings: RateScalings,
    #[serde(skip)]
    pub gamma_bar: DMatrix<f64>,
    pub requested: usize,
    pub failures: usize,
}

impl BootstrapDistribution {
    pub fn replications(&self) -> usize {
        self.draws.nrows()
    }

    /// Draws of coordinate `c`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.draws.column(c).iter().copied().collect()
    }
}

/// Settings for [`distribution`].
#[derive(Clone, Debug)]
pub struct BootstrapSettings {
    pub scheme: WeightScheme,
    pub replications: usize,
    pub mode: BootstrapMode,
    pub seed: u64,
    /// Path index used to derive the per-replication weight streams.
    pub path_index: u64,
    pub fit_options: FitOptions,
}

/// Draws `R` replications. Replication `r` uses the weight stream
/// `(seed, path_index, r)`, so the result does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn distribution(
    path: &SamplePath,
    model: &CoefficientModel,
    fit: &GqmleFit,
    s: &RateScalings,
    gamma_bar: &DMatrix<f64>,
    part: &BlockPartition,
    settings: &BootstrapSettings,
) -> Result<BootstrapDistribution> {
    let r_total = settings.replications;
    if r_total == 0 {
        return Err(Error::Parameter("at least one bootstrap replication required".into()));
    }
    let p = fit.p();
    if s.p() != p || gamma_bar.shape() != (p, p) {
        return Err(Error::Dimension {
            expected: p,
            got: s.p(),
        });
    }
    let pg = fit.gamma_hat.len();
    let theta_hat = fit.theta();
    let weights_for = |r: usize| {
        let mut rng =
            RngStream::for_role(settings.seed, StreamRole::Weights, settings.path_index, r as u64);
        draw_weights(settings.scheme, part.k(), &mut rng)
    };

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(r_total);
    let mut failures = 0;
    match settings.mode {
        BootstrapMode::ScoreShortcut => {
            let sums = block_sums(path, model, fit, part)?;
            for r in 0..r_total {
                let mut d = score_draw(&sums, &weights_for(r), s)?;
                d[pg..].iter_mut().for_each(|v| *v = -*v);
                rows.push(d);
            }
        }
        BootstrapMode::FullEstimator => {
            let ctx = EstimatorContext::new(path, model, fit, *part, settings.fit_options.clone())?;
            let a_gamma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&s.a_hat_diag))
                * gamma_bar;
            for r in 0..r_total {
                match ctx.solve(&weights_for(r)) {
                    Ok(tb) => {
                        let diff = nalgebra::DVector::from_iterator(
                            p,
                            tb.iter().zip(&theta_hat).map(|(a, b)| a - b),
                        );
                        rows.push((&a_gamma * diff).iter().copied().collect());
                    }
                    Err(Error::BootstrapDraw(msg)) => {
                        log::debug!("replication {r} failed: {msg}");
                        failures += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if failures as f64 > MAX_DRAW_FAILURE_RATE * r_total as f64 {
                return Err(Error::Distribution {
                    failed: failures,
                    total: r_total,
                });
            }
        }
    }
    if let Some(bad) = rows.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
        return Err(Error::BootstrapDraw(format!("non-finite draw in replication {bad}")));
    }
    let draws = DMatrix::from_fn(rows.len(), p, |i, c| rows[i][c]);
    Ok(BootstrapDistribution {
        draws,
        mode: settings.mode,
        theta_hat,
        scalings: s.clone(),
        gamma_bar: gamma_bar.clone(),
        requested: r_total,
        failures,
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// (`q·(R−1)` positions). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Lower and upper percentile of every coordinate at the given level.
pub fn draw_quantiles(dist: &BootstrapDistribution, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("level must lie in (0, 1), got {level}")));
    }
    if dist.replications() == 0 {
        return Err(Error::Distribution {
            failed: dist.failures,
            total: dist.requested,
        });
    }
    let tail = (1.0 - level) / 2.0;
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for c in 0..dist.draws.ncols() {
        let mut col = dist.column(c);
        col.sort_by(f64::total_cmp);
        lo.push(quantile(&col, tail));
        hi.push(quantile(&col, 1.0 - tail));
    }
    Ok((lo, hi))
}

/// Componentwise interval for `θ⋆`
/// `sort(θ̂ − (ÂΓ̄)⁻¹ q_hi, θ̂ − (ÂΓ̄)⁻¹ q_lo)`.
pub fn confidence_interval(
    dist: &BootstrapDistribution,
    theta_hat: &[f64],
    gamma_bar: &DMatrix<f64>,
    s: &RateScalings,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    let p = theta_hat.len();
    if gamma_bar.shape() != (p, p) || s.p() != p || dist.draws.ncols() != p {
        return Err(Error::Dimension {
            expected: p,
            got: dist.draws.ncols(),
        });
    }
    let (q_lo, q_hi) = draw_quantiles(dist, level)?;
    let norm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&s.a_hat_diag)) * gamma_bar;
    let inv = norm
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularNormalization)?;
    let solve = |q: &[f64]| inv.clone() * nalgebra::DVector::from_column_slice(q);
    let (d_hi, d_lo) = (solve(&q_hi), solve(&q_lo));
    Ok((0..p)
        .map(|i| {
            let a = theta_hat[i] - d_hi[i];
            let b = theta_hat[i] - d_lo[i];
            (a.min(b), a.max(b))
        })
        .collect())
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
