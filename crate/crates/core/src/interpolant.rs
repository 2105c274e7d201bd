//! Closed-form bridge interpolants and their regression targets.
//!
//! Two families are supported:
//!
//! * `I2sb`: the tractable Schrödinger bridge
//!   `X_t = σ̄²_t/(σ̄²_t+σ²_t)·X0 + σ²_t/(σ̄²_t+σ²_t)·X1 + sqrt(σ²_t σ̄²_t/(σ̄²_t+σ²_t))·Z`
//!   with `σ²_t = ∫₀ᵗ β` and `σ̄²_t = ∫ₜ¹ β`, regressed on `(X_t − X0)/σ_t`.
//! * `Nadb`: the noise-aligned bridge
//!   `X_t = (1 − t^α)·X0 + t^α·X̂0 + k·t(1−t)·Z`, regressed on `(X_t − X0)/t^α`.
//!
//! Both input and target noise coefficients of the aligned family vanish at
//! `t = 0` and `t = 1`; for the Schrödinger bridge the target coefficient
//! tends to one as `t → 0` while the input coefficient tends to zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of quadrature intervals of the default β table.
pub const DEFAULT_BETA_INTERVALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeKind {
    I2sb,
    Nadb,
}

impl fmt::Display for BridgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BridgeKind::I2sb => "i2sb",
            BridgeKind::Nadb => "nadb",
        })
    }
}

impl FromStr for BridgeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i2sb" => Ok(BridgeKind::I2sb),
            "nadb" => Ok(BridgeKind::Nadb),
            other => Err(Error::Config(format!("unknown bridge kind `{other}`"))),
        }
    }
}

/// Shape of the β integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaShape {
    /// `β_τ = β_max·min(τ, 1−τ)`.
    Triangular,
    /// `β_τ = const`.
    Constant,
    /// Caller-supplied table.
    Table,
}

impl fmt::Display for BetaShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaShape::Triangular => "triangular",
            BetaShape::Constant => "constant",
            BetaShape::Table => "table",
        })
    }
}

impl FromStr for BetaShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triangular" => Ok(BetaShape::Triangular),
            "constant" => Ok(BetaShape::Constant),
            other => Err(Error::Config(format!("unknown beta shape `{other}`"))),
        }
    }
}

/// Parameters of a bridge interpolant.
///
/// Both parameter sets are always carried so a schedule can be re-targeted
/// to the other family with [`ScheduleSpec::with_kind`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    kind: BridgeKind,
    alpha: f64,
    k: f64,
    t_min: f64,
    beta_shape: BetaShape,
    total_variance: f64,
    /// `(τ_i, β_i)` nodes, strictly increasing in τ, from 0 to 1.
    beta_table: Vec<(f64, f64)>,
    /// `∫₀^{τ_i} β` by the trapezoid rule.
    forward_cum: Vec<f64>,
    /// `∫_{τ_i}^1 β` by the trapezoid rule, accumulated from the right.
    backward_cum: Vec<f64>,
}

impl ScheduleSpec {
    pub const DEFAULT_ALPHA: f64 = 0.4;
    pub const DEFAULT_K: f64 = 0.75;
    pub const DEFAULT_T_MIN: f64 = 1e-4;
    pub const DEFAULT_TOTAL_VARIANCE: f64 = 1.0;

    pub fn new(
        kind: BridgeKind,
        alpha: f64,
        k: f64,
        beta_shape: BetaShape,
        total_variance: f64,
        t_min: f64,
    ) -> Result<Self> {
        let table = match beta_shape {
            BetaShape::Triangular => {
                let beta_max = 4.0 * total_variance;
                uniform_table(DEFAULT_BETA_INTERVALS, |tau| beta_max * tau.min(1.0 - tau))
            }
            BetaShape::Constant => uniform_table(DEFAULT_BETA_INTERVALS, |_| total_variance),
            BetaShape::Table => {
                return Err(Error::Config(
                    "use ScheduleSpec::with_beta_table for explicit tables".into(),
                ))
            }
        };
        Self::build(kind, alpha, k, beta_shape, total_variance, t_min, table)
    }

    /// Noise-aligned schedule with the given exponent and noise scale.
    pub fn nadb(alpha: f64, k: f64) -> Result<Self> {
        Self::new(
            BridgeKind::Nadb,
            alpha,
            k,
            BetaShape::Triangular,
            Self::DEFAULT_TOTAL_VARIANCE,
            Self::DEFAULT_T_MIN,
        )
    }

    /// Schrödinger-bridge schedule with a symmetric triangular β.
    pub fn i2sb(total_variance: f64) -> Result<Self> {
        Self::new(
            BridgeKind::I2sb,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_K,
            BetaShape::Triangular,
            total_variance,
            Self::DEFAULT_T_MIN,
        )
    }

    /// Schrödinger-bridge schedule from explicit `(τ, β)` samples.
    pub fn with_beta_table(table: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(
            BridgeKind::I2sb,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_K,
            BetaShape::Table,
            f64::NAN,
            Self::DEFAULT_T_MIN,
            table,
        )
    }

    fn build(
        kind: BridgeKind,
        alpha: f64,
        k: f64,
        beta_shape: BetaShape,
        total_variance: f64,
        t_min: f64,
        beta_table: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidSchedule(format!("alpha={alpha} must lie in (0,1)")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidSchedule(format!("k={k} must be positive")));
        }
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::InvalidSchedule(format!("t_min={t_min} must lie in [0,1)")));
        }
        if beta_shape != BetaShape::Table && !(total_variance >= 0.0 && total_variance.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "total variance {total_variance} must be finite and nonnegative"
            )));
        }
        validate_table(&beta_table)?;
        let (forward_cum, backward_cum) = cumulative(&beta_table);
        Ok(Self {
            kind,
            alpha,
            k,
            t_min,
            beta_shape,
            total_variance,
            beta_table,
            forward_cum,
            backward_cum,
        })
    }

    pub fn kind(&self) -> BridgeKind {
        self.kind
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn t_min(&self) -> f64 {
        self.t_min
    }
    pub fn beta_shape(&self) -> BetaShape {
        self.beta_shape
    }
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }
    pub fn beta_table(&self) -> &[(f64, f64)] {
        &self.beta_table
    }

    pub fn with_kind(&self, kind: BridgeKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    pub fn with_t_min(&self, t_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::InvalidSchedule(format!("t_min={t_min} must lie in [0,1)")));
        }
        Ok(Self {
            t_min,
            ..self.clone()
        })
    }

    pub fn with_alpha_k(&self, alpha: f64, k: f64) -> Result<Self> {
        Self::build(
            self.kind,
            alpha,
            k,
            self.beta_shape,
            self.total_variance,
            self.t_min,
            self.beta_table.clone(),
        )
    }

    /// `σ²_t = ∫₀ᵗ β_τ dτ`.
    pub fn sigma2(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let (i, beta_t) = self.locate(t);
        let (tau_i, beta_i) = self.beta_table[i];
        Ok(self.forward_cum[i] + 0.5 * (t - tau_i) * (beta_i + beta_t))
    }

    /// `σ̄²_t = ∫ₜ¹ β_τ dτ`.
    pub fn sigma_bar2(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let (i, beta_t) = self.locate(t);
        if i + 1 == self.beta_table.len() {
            return Ok(self.backward_cum[i]);
        }
        let (tau_j, beta_j) = self.beta_table[i + 1];
        Ok(self.backward_cum[i + 1] + 0.5 * (tau_j - t) * (beta_t + beta_j))
    }

    /// Interval index containing `t` and the linearly interpolated β there.
    fn locate(&self, t: f64) -> (usize, f64) {
        let tbl = &self.beta_table;
        let last = tbl.len() - 1;
        // Largest i with τ_i <= t.
        let i = tbl.partition_point(|&(tau, _)| tau <= t).saturating_sub(1).min(last);
        if i == last {
            return (i, tbl[last].1);
        }
        let (t0, b0) = tbl[i];
        let (t1, b1) = tbl[i + 1];
        let beta_t = b0 + (b1 - b0) * (t - t0) / (t1 - t0);
        (i, beta_t)
    }

    /// Schrödinger-bridge interpolation weights `(w0, w1, noise)`.
    pub fn i2sb_coefficients(&self, t: f64) -> Result<(f64, f64, f64)> {
        self.require(BridgeKind::I2sb)?;
        let s2 = self.sigma2(t)?;
        let sb2 = self.sigma_bar2(t)?;
        let denom = s2 + sb2;
        if denom <= 0.0 {
            return Err(Error::InvalidSchedule("σ²_t + σ̄²_t vanishes".into()));
        }
        Ok((sb2 / denom, s2 / denom, (s2 * sb2 / denom).sqrt()))
    }

    /// Noise-aligned interpolation weights `(1 − t^α, t^α, k·t·(1−t))`.
    pub fn nadb_coefficients(&self, t: f64) -> Result<(f64, f64, f64)> {
        self.require(BridgeKind::Nadb)?;
        check_time(t)?;
        let ta = pow_time(t, self.alpha);
        Ok((1.0 - ta, ta, self.k * t * (1.0 - t)))
    }

    /// Interpolation weights for whichever family this schedule is.
    pub fn coefficients(&self, t: f64) -> Result<(f64, f64, f64)> {
        match self.kind {
            BridgeKind::I2sb => self.i2sb_coefficients(t),
            BridgeKind::Nadb => self.nadb_coefficients(t),
        }
    }

    /// Coefficient of `Z` in the network input `X_t`.
    pub fn input_noise_coefficient(&self, t: f64) -> Result<f64> {
        Ok(self.coefficients(t)?.2)
    }

    /// Coefficient of `Z` in the regression target.
    ///
    /// Aligned family: `k·t^{1−α}·(1−t)`. Schrödinger bridge:
    /// `σ̄_t / sqrt(σ̄²_t + σ²_t)`, which equals one at `t = 0`.
    pub fn target_noise_coefficient(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match self.kind {
            BridgeKind::Nadb => Ok(self.k * pow_time(t, 1.0 - self.alpha) * (1.0 - t)),
            BridgeKind::I2sb => {
                let s2 = self.sigma2(t)?;
                let sb2 = self.sigma_bar2(t)?;
                let denom = s2 + sb2;
                if denom <= 0.0 {
                    return Err(Error::InvalidSchedule("σ²_t + σ̄²_t vanishes".into()));
                }
                Ok(sb2.sqrt() / denom.sqrt())
            }
        }
    }

    /// Coefficient of `(X1 − X0)` in the Schrödinger-bridge target,
    /// `σ_t/(σ̄²_t + σ²_t)`; for the aligned family the displacement enters
    /// with weight one.
    pub fn target_displacement_coefficient(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match self.kind {
            BridgeKind::Nadb => Ok(1.0),
            BridgeKind::I2sb => {
                let s2 = self.sigma2(t)?;
                let denom = s2 + self.sigma_bar2(t)?;
                if denom <= 0.0 {
                    return Err(Error::InvalidSchedule("σ²_t + σ̄²_t vanishes".into()));
                }
                Ok(s2.sqrt() / denom)
            }
        }
    }

    /// Divisor of the displacement in the regression target:
    /// `t^α` or `σ_t`.
    pub fn target_scale(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match self.kind {
            BridgeKind::Nadb => Ok(pow_time(t, self.alpha)),
            BridgeKind::I2sb => Ok(self.sigma2(t)?.sqrt()),
        }
    }

    /// Lowest destination time for which a stage-1 transition is real-valued.
    pub fn stage1_threshold(&self) -> f64 {
        stage1_threshold(self.alpha)
    }

    fn require(&self, kind: BridgeKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidSchedule(format!(
                "operation needs a {kind} schedule, got {}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// `(1 − α)/(2 − α)`, where `u^{1−α}(1−u)` peaks.
pub fn stage1_threshold(alpha: f64) -> f64 {
    (1.0 - alpha) / (2.0 - alpha)
}

/// `t^p` for `t ∈ [0,1]`, `p > 0`, via `exp(p·ln t)` with `0^p = 0`.
pub fn pow_time(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        (p * t.ln()).exp()
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange { t, range: "[0,1]" })
    }
}

fn uniform_table(intervals: usize, beta: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    (0..=intervals)
        .map(|i| {
            let tau = i as f64 / intervals as f64;
            (tau, beta(tau))
        })
        .collect()
}

fn validate_table(table: &[(f64, f64)]) -> Result<()> {
    if table.len() < 2 {
        return Err(Error::InvalidSchedule("beta table needs at least two nodes".into()));
    }
    if table[0].0 != 0.0 || table[table.len() - 1].0 != 1.0 {
        return Err(Error::InvalidSchedule("beta table must span [0,1]".into()));
    }
    for w in table.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidSchedule("beta table times must increase strictly".into()));
        }
    }
    if table.iter().any(|&(_, b)| !(b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidSchedule("beta values must be finite and nonnegative".into()));
    }
    Ok(())
}

fn cumulative(table: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let n = table.len();
    let mut fwd = vec![0.0; n];
    for i in 1..n {
        let (t0, b0) = table[i - 1];
        let (t1, b1) = table[i];
        fwd[i] = fwd[i - 1] + 0.5 * (t1 - t0) * (b0 + b1);
    }
    let mut bwd = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let (t0, b0) = table[i];
        let (t1, b1) = table[i + 1];
        bwd[i] = bwd[i + 1] + 0.5 * (t1 - t0) * (b0 + b1);
    }
    (fwd, bwd)
}

/// One training tuple with coupled noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub t: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    /// Far endpoint of the bridge: the mean-network output, or `x1`.
    pub xhat0: Vec<f64>,
    pub z: Vec<f64>,
    pub xt: Vec<f64>,
    pub yt: Vec<f64>,
}

/// Build `(X_t, Y_t)` from caller-supplied endpoints and noise.
///
/// The bridge runs from `x0` to `xhat0`; pass `x1` as `xhat0` when no mean
/// network is used. No randomness is drawn here.
pub fn make_bridge_sample(
    spec: &ScheduleSpec,
    t: f64,
    x0: &[f64],
    x1: &[f64],
    xhat0: &[f64],
    z: &[f64],
) -> Result<BridgeSample> {
    let d = x0.len();
    for v in [x1, xhat0, z] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    let mut xt = vec![0.0; d];
    let mut yt = vec![0.0; d];
    fill_bridge_pair(spec, t, x0, xhat0, z, &mut xt, &mut yt)?;
    Ok(BridgeSample {
        t,
        x0: x0.to_vec(),
        x1: x1.to_vec(),
        xhat0: xhat0.to_vec(),
        z: z.to_vec(),
        xt,
        yt,
    })
}

/// Allocation-free core of [`make_bridge_sample`]; slices must share a length.
pub(crate) fn fill_bridge_pair(
    spec: &ScheduleSpec,
    t: f64,
    x0: &[f64],
    far: &[f64],
    z: &[f64],
    xt: &mut [f64],
    yt: &mut [f64],
) -> Result<()> {
    let (w0, w1, g) = spec.coefficients(t)?;
    for i in 0..x0.len() {
        xt[i] = w0 * x0[i] + w1 * far[i] + g * z[i];
    }
    let scale = spec.target_scale(t)?;
    if scale > 0.0 {
        for i in 0..x0.len() {
            yt[i] = (xt[i] - x0[i]) / scale;
        }
    } else {
        // t = 0: the limit of the scaled displacement.
        match spec.kind() {
            BridgeKind::Nadb => {
                for i in 0..x0.len() {
                    yt[i] = far[i] - x0[i];
                }
            }
            BridgeKind::I2sb => yt.copy_from_slice(z),
        }
    }
    Ok(())
}

/// Invert the target definition: `x0 = xt − scale(t)·eps`.
pub fn predict_x0(spec: &ScheduleSpec, t: f64, xt: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::TimeOutOfRange { t, range: "(0,1]" });
    }
    if eps.len() != xt.len() {
        return Err(Error::DimensionMismatch {
            expected: xt.len(),
            got: eps.len(),
        });
    }
    let scale = spec.target_scale(t)?;
    Ok(xt.iter().zip(eps).map(|(x, e)| x - scale * e).collect())
}

/// Noise scale `k` whose aligned-bridge peak `k/4` matches the peak of the
/// Schrödinger-bridge noise coefficient over the β-table nodes.
pub fn calibrate_k(i2sb_spec: &ScheduleSpec) -> Result<f64> {
    i2sb_spec.require(BridgeKind::I2sb)?;
    let mut peak: f64 = 0.0;
    for &(tau, _) in i2sb_spec.beta_table() {
        let s2 = i2sb_spec.sigma2(tau)?;
        let sb2 = i2sb_spec.sigma_bar2(tau)?;
        let denom = s2 + sb2;
        if denom > 0.0 {
            peak = peak.max((s2 * sb2 / denom).sqrt());
        }
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidSchedule("schedule carries no noise".into()));
    }
    Ok(4.0 * peak)
}
