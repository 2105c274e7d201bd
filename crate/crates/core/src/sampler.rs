//! Reverse-time generation.
//!
//! The aligned bridge is sampled in two stages. Above the threshold
//! `d = (1−α)/(2−α)` a standard transition
//! `X_s = X_t − ε·(t^α − s^α) + σ·Z` is used; its variance
//! `[k s(1−s)]² − [k s^α t^{1−α}(1−t)]²` is nonnegative only for `s ≥ d`.
//! Below `d` the endpoint-conditioned transition
//! `X_s = a·ε − b·X_t + c·X̂0 + σ_w·Z` takes over, with `w` scaling how much
//! of the current noise is carried forward.
//!
//! The Schrödinger-bridge baseline uses the Brownian-bridge posterior
//! `X_s | x0, X_t` in the `σ²` clock.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interpolant::{check_time, pow_time, BridgeKind, ScheduleSpec};
use crate::net::RegressorParams;
use crate::par::{self, Execution};
use crate::rng::{self, domain, StreamRng};
use crate::toy::Dataset;

/// Radicands in `[-RADICAND_TOL, 0)` are roundoff and clamp to zero.
pub const RADICAND_TOL: f64 = 1e-12;

/// Anything that predicts the regression target at `(x_t, t)`.
///
/// `reference` is the clean sample when the caller chooses to reveal it; only
/// analytic oracles look at it.
pub trait EpsModel: Sync {
    fn predict_eps(&self, xt: &[f64], t: f64, reference: Option<&[f64]>) -> Result<Vec<f64>>;
}

impl EpsModel for RegressorParams {
    fn predict_eps(&self, xt: &[f64], t: f64, _reference: Option<&[f64]>) -> Result<Vec<f64>> {
        self.predict(xt, Some(t))
    }
}

/// The exact target `(x_t − x0)/scale(t)` given the clean sample.
#[derive(Debug, Clone)]
pub struct AnalyticEps {
    pub spec: ScheduleSpec,
    /// Used when the caller does not reveal a reference (singleton tasks).
    pub fixed_x0: Option<Vec<f64>>,
}

impl AnalyticEps {
    pub fn new(spec: ScheduleSpec) -> Self {
        Self { spec, fixed_x0: None }
    }

    pub fn singleton(spec: ScheduleSpec, x0: Vec<f64>) -> Self {
        Self {
            spec,
            fixed_x0: Some(x0),
        }
    }
}

impl EpsModel for AnalyticEps {
    fn predict_eps(&self, xt: &[f64], t: f64, reference: Option<&[f64]>) -> Result<Vec<f64>> {
        let x0 = reference
            .or(self.fixed_x0.as_deref())
            .ok_or_else(|| Error::InvalidInput("analytic oracle needs the clean sample".into()))?;
        if x0.len() != xt.len() {
            return Err(Error::DimensionMismatch {
                expected: xt.len(),
                got: x0.len(),
            });
        }
        let scale = self.spec.target_scale(t)?;
        if scale <= 0.0 {
            return Err(Error::TimeOutOfRange { t, range: "(0,1]" });
        }
        Ok(xt.iter().zip(x0).map(|(x, c)| (x - c) / scale).collect())
    }
}

/// How `w` is chosen for endpoint-conditioned steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WRule {
    /// `w = s/t`.
    Ratio,
    Constant(f64),
    /// `w = s(1−s)/(t(1−t))`, which zeroes the injected noise. Falls back to
    /// `s/t` when `t(1−t) = 0`.
    Deterministic,
}

impl WRule {
    pub fn w(self, s: f64, t: f64) -> f64 {
        match self {
            WRule::Ratio => s / t,
            WRule::Constant(c) => c,
            WRule::Deterministic => {
                let denom = t * (1.0 - t);
                if denom > 0.0 {
                    s * (1.0 - s) / denom
                } else {
                    s / t
                }
            }
        }
    }
}

impl fmt::Display for WRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WRule::Ratio => f.write_str("ratio"),
            WRule::Constant(c) => write!(f, "constant:{c}"),
            WRule::Deterministic => f.write_str("deterministic"),
        }
    }
}

impl FromStr for WRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ratio" => Ok(WRule::Ratio),
            "deterministic" => Ok(WRule::Deterministic),
            _ => {
                let c = s
                    .strip_prefix("constant:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown w rule `{s}`")))?;
                Ok(WRule::Constant(c))
            }
        }
    }
}

/// Spacing of the reverse time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSpacing {
    Uniform,
    /// `t_i = (i/N)²`, denser near the clean endpoint.
    Quadratic,
}

impl FromStr for GridSpacing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(GridSpacing::Uniform),
            "quadratic" => Ok(GridSpacing::Quadratic),
            other => Err(Error::Config(format!("unknown grid spacing `{other}`"))),
        }
    }
}

impl fmt::Display for GridSpacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridSpacing::Uniform => "uniform",
            GridSpacing::Quadratic => "quadratic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPlan {
    grid: Vec<f64>,
    d: f64,
    w_rule: WRule,
    spec: ScheduleSpec,
}

impl SamplerPlan {
    /// `nfe` steps on the chosen spacing with the default threshold.
    pub fn new(spec: ScheduleSpec, nfe: usize, spacing: GridSpacing) -> Result<Self> {
        if nfe == 0 {
            return Err(Error::InvalidInput("need at least one sampling step".into()));
        }
        let grid = (0..=nfe)
            .map(|i| {
                let u = i as f64 / nfe as f64;
                match spacing {
                    GridSpacing::Uniform => u,
                    GridSpacing::Quadratic => u * u,
                }
            })
            .collect();
        let d = spec.stage1_threshold();
        Self::with_grid(spec, grid, d, WRule::Ratio)
    }

    pub fn with_grid(spec: ScheduleSpec, grid: Vec<f64>, d: f64, w_rule: WRule) -> Result<Self> {
        if grid.len() < 2 || grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("time grid must run from 0 to 1".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("time grid must increase strictly".into()));
        }
        if spec.kind() == BridgeKind::Nadb && d < spec.stage1_threshold() - RADICAND_TOL {
            return Err(Error::StageViolation {
                s: d,
                threshold: spec.stage1_threshold(),
            });
        }
        Ok(Self { grid, d, w_rule, spec })
    }

    pub fn with_threshold(mut self, d: f64) -> Result<Self> {
        if self.spec.kind() == BridgeKind::Nadb && d < self.spec.stage1_threshold() - RADICAND_TOL {
            return Err(Error::StageViolation {
                s: d,
                threshold: self.spec.stage1_threshold(),
            });
        }
        self.d = d;
        Ok(self)
    }

    pub fn with_w_rule(mut self, w_rule: WRule) -> Self {
        self.w_rule = w_rule;
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn threshold(&self) -> f64 {
        self.d
    }
    pub fn w_rule(&self) -> WRule {
        self.w_rule
    }
    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }
    pub fn nfe(&self) -> usize {
        self.grid.len() - 1
    }
}

fn check_pair(s: f64, t: f64) -> Result<()> {
    check_time(s)?;
    check_time(t)?;
    if s > t {
        return Err(Error::InvalidInput(format!("reverse step needs s <= t, got s={s}, t={t}")));
    }
    Ok(())
}

fn check_dims(expected: usize, others: &[&[f64]]) -> Result<()> {
    for v in others {
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn require_kind(spec: &ScheduleSpec, kind: BridgeKind) -> Result<()> {
    if spec.kind() != kind {
        return Err(Error::InvalidSchedule(format!(
            "sampler step needs a {kind} schedule, got {}",
            spec.kind()
        )));
    }
    Ok(())
}

/// Variance of the stage-1 transition; clamps roundoff negatives.
pub fn stage1_variance(spec: &ScheduleSpec, s: f64, t: f64) -> f64 {
    let k = spec.k();
    let a = k * s * (1.0 - s);
    let b = k * pow_time(s, spec.alpha()) * pow_time(t, 1.0 - spec.alpha()) * (1.0 - t);
    a * a - b * b
}

/// Variance of the endpoint-conditioned transition.
pub fn stage2_variance(spec: &ScheduleSpec, s: f64, t: f64, w: f64) -> f64 {
    let k = spec.k();
    let a = k * s * (1.0 - s);
    let b = k * w * t * (1.0 - t);
    a * a - b * b
}

fn clamp_radicand(r: f64) -> Option<f64> {
    if r >= 0.0 {
        Some(r)
    } else if r >= -RADICAND_TOL {
        Some(0.0)
    } else {
        None
    }
}

fn stage1_inner(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, f64)> {
    require_kind(spec, BridgeKind::Nadb)?;
    check_pair(s, t)?;
    check_dims(xt.len(), &[eps, z])?;
    let threshold = spec.stage1_threshold();
    if s < threshold - RADICAND_TOL {
        return Err(Error::StageViolation { s, threshold });
    }
    if s == t {
        return Ok((xt.to_vec(), 0.0));
    }
    let delta = pow_time(t, spec.alpha()) - pow_time(s, spec.alpha());
    let sigma = clamp_radicand(stage1_variance(spec, s, t))
        .ok_or(Error::StageViolation { s, threshold })?
        .sqrt();
    let out = xt
        .iter()
        .zip(eps)
        .zip(z)
        .map(|((x, e), z)| x - e * delta + sigma * z)
        .collect();
    Ok((out, sigma))
}

/// Standard transition from `t` down to `s ≥ (1−α)/(2−α)`.
pub fn stage1_step(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    stage1_inner(spec, s, t, xt, eps, z).map(|r| r.0)
}

#[allow(clippy::too_many_arguments)]
fn stage2_inner(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    xhat0: &[f64],
    w: f64,
    z: &[f64],
) -> Result<(Vec<f64>, f64)> {
    require_kind(spec, BridgeKind::Nadb)?;
    check_pair(s, t)?;
    check_dims(xt.len(), &[eps, xhat0, z])?;
    if !w.is_finite() {
        return Err(Error::NonFinite("w"));
    }
    if s == t {
        return Ok((xt.to_vec(), 0.0));
    }
    let sa = pow_time(s, spec.alpha());
    let ta = pow_time(t, spec.alpha());
    let a = ta * (w + sa - 1.0 - w * ta);
    let b = sa - 1.0 - w * ta;
    let c = sa - w * ta;
    let mut radicand = stage2_variance(spec, s, t, w);
    // Cancellation residue, e.g. from the deterministic rule.
    let full = (spec.k() * s * (1.0 - s)).powi(2);
    if radicand.abs() <= 64.0 * f64::EPSILON * full {
        radicand = 0.0;
    }
    let sigma = clamp_radicand(radicand)
        .ok_or(Error::InvalidW { w, s, t, radicand })?
        .sqrt();
    let out = (0..xt.len())
        .map(|i| a * eps[i] - b * xt[i] + c * xhat0[i] + sigma * z[i])
        .collect();
    Ok((out, sigma))
}

/// Endpoint-conditioned transition from `t` down to `s`.
#[allow(clippy::too_many_arguments)]
pub fn stage2_step(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    xhat0: &[f64],
    w: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    stage2_inner(spec, s, t, xt, eps, xhat0, w, z).map(|r| r.0)
}

fn i2sb_inner(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, f64)> {
    require_kind(spec, BridgeKind::I2sb)?;
    check_pair(s, t)?;
    check_dims(xt.len(), &[eps, z])?;
    if s == t {
        return Ok((xt.to_vec(), 0.0));
    }
    let var_t = spec.sigma2(t)?;
    let var_s = spec.sigma2(s)?;
    if var_t <= 0.0 {
        return Err(Error::InvalidSchedule(format!("σ²_t vanishes at t={t}")));
    }
    let sd_t = var_t.sqrt();
    let ratio = var_s / var_t;
    let sigma = (var_s * (var_t - var_s) / var_t).max(0.0).sqrt();
    let out = (0..xt.len())
        .map(|i| {
            let x0 = xt[i] - sd_t * eps[i];
            x0 + ratio * (xt[i] - x0) + sigma * z[i]
        })
        .collect();
    Ok((out, sigma))
}

/// Brownian-bridge posterior step `X_s | x̂0, X_t` with `x̂0 = X_t − σ_t·ε`.
pub fn i2sb_reverse_step(
    spec: &ScheduleSpec,
    s: f64,
    t: f64,
    xt: &[f64],
    eps: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    i2sb_inner(spec, s, t, xt, eps, z).map(|r| r.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Start,
    One,
    Two,
    Bridge,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Start => "start",
            Stage::One => "stage1",
            Stage::Two => "stage2",
            Stage::Bridge => "i2sb",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    /// Time of `state`.
    pub t: f64,
    pub state: Vec<f64>,
    /// Clean-sample estimate made at the previous time; empty at the start.
    pub predicted_x0: Vec<f64>,
    pub stage: Stage,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &[f64] {
        &self.steps.last().expect("trajectory has a start").state
    }

    /// CSV with columns `step, t, state_norm, stage, sigma`.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "step,t,state_norm,stage,sigma")?;
        for (i, s) in self.steps.iter().enumerate() {
            let norm = s.state.iter().map(|v| v * v).sum::<f64>().sqrt();
            writeln!(w, "{i},{},{norm},{},{}", s.t, s.stage, s.sigma)?;
        }
        Ok(())
    }
}

/// Run the reverse process from a degraded input down to `t = 0`.
///
/// The far endpoint is `M(x1)` when a mean network is supplied and `x1`
/// otherwise; it is computed once. For the aligned bridge each step uses the
/// endpoint-conditioned transition when its destination time lies below the
/// threshold and the standard transition otherwise.
pub fn generate(
    plan: &SamplerPlan,
    eps_model: &dyn EpsModel,
    mean: Option<&RegressorParams>,
    x1: &[f64],
    reference: Option<&[f64]>,
    rng: &mut StreamRng,
) -> Result<TrajectoryRecord> {
    let far = match mean {
        Some(m) => m.predict(x1, None)?,
        None => x1.to_vec(),
    };
    let spec = plan.spec();
    let grid = plan.grid();
    let n = grid.len() - 1;
    let mut x = far.clone();
    let mut steps = Vec::with_capacity(n + 1);
    steps.push(TrajectoryStep {
        t: 1.0,
        state: x.clone(),
        predicted_x0: Vec::new(),
        stage: Stage::Start,
        sigma: 0.0,
    });
    for i in (1..=n).rev() {
        let t = grid[i];
        let s = grid[i - 1];
        let step_index = n - i;
        let eps = eps_model.predict_eps(&x, t, reference)?;
        let z = rng::normal_vec(rng, x.len());
        let scale = spec.target_scale(t)?;
        let predicted_x0: Vec<f64> = x.iter().zip(&eps).map(|(v, e)| v - scale * e).collect();
        let (next, sigma, stage) = match spec.kind() {
            BridgeKind::Nadb if s < plan.threshold() => {
                let w = plan.w_rule().w(s, t);
                let (v, sg) = stage2_inner(spec, s, t, &x, &eps, &far, w, &z)?;
                (v, sg, Stage::Two)
            }
            BridgeKind::Nadb => {
                let (v, sg) = stage1_inner(spec, s, t, &x, &eps, &z)?;
                (v, sg, Stage::One)
            }
            BridgeKind::I2sb => {
                let (v, sg) = i2sb_inner(spec, s, t, &x, &eps, &z)?;
                (v, sg, Stage::Bridge)
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: step_index,
                what: format!("non-finite state at t={s}"),
            });
        }
        x = next;
        steps.push(TrajectoryStep {
            t: s,
            state: x.clone(),
            predicted_x0,
            stage,
            sigma,
        });
    }
    Ok(TrajectoryRecord { steps })
}

/// Generate one output per dataset row, each on its own random stream
/// (stream id = row index).
pub fn generate_batch(
    plan: &SamplerPlan,
    eps_model: &dyn EpsModel,
    mean: Option<&RegressorParams>,
    data: &Dataset,
    reveal_reference: bool,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    par::try_map_indexed(exec, data.len(), |i| {
        let mut r = rng::stream(seed, domain::SAMPLER + i as u64);
        let reference = reveal_reference.then(|| data.x0(i));
        generate(plan, eps_model, mean, data.x1(i), reference, &mut r)
            .map(|tr| tr.final_state().to_vec())
    })
}
