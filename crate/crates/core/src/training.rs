//! Mean-network pretraining and bridge regression training.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::interpolant::{fill_bridge_pair, make_bridge_sample, BridgeKind, BridgeSample, ScheduleSpec};
use crate::net::{adam_step, Activation, AdamState, BatchItem, RegressorParams};
use crate::par::{self, Execution};
use crate::rng::{self, domain, StreamRng};
use crate::toy::Dataset;

/// The four ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Schrödinger bridge between `x0` and `x1`.
    I2sb,
    /// Aligned bridge between `x0` and `M(x1)`.
    Nadb,
    /// Aligned bridge between `x0` and `x1`.
    NadbNoMean,
    /// Schrödinger bridge between `x0` and `M(x1)`.
    I2sbWithMean,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::I2sb,
        Variant::Nadb,
        Variant::I2sbWithMean,
        Variant::NadbNoMean,
    ];

    pub fn kind(self) -> BridgeKind {
        match self {
            Variant::I2sb | Variant::I2sbWithMean => BridgeKind::I2sb,
            Variant::Nadb | Variant::NadbNoMean => BridgeKind::Nadb,
        }
    }

    pub fn uses_mean(self) -> bool {
        matches!(self, Variant::Nadb | Variant::I2sbWithMean)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::I2sb => "i2sb",
            Variant::Nadb => "nadb",
            Variant::NadbNoMean => "nadb-nomean",
            Variant::I2sbWithMean => "i2sb-mean",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i2sb" => Ok(Variant::I2sb),
            "nadb" => Ok(Variant::Nadb),
            "nadb-nomean" => Ok(Variant::NadbNoMean),
            "i2sb-mean" => Ok(Variant::I2sbWithMean),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub hidden: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            time_embed_dim: 16,
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub t_min: f64,
    pub time_bins: usize,
    pub bridge: ScheduleSpec,
    pub use_mean_network: bool,
    pub net: NetConfig,
    pub exec: Execution,
}

impl TrainConfig {
    pub fn new(bridge: ScheduleSpec) -> Self {
        Self {
            batch_size: 64,
            steps: 1000,
            lr: 1e-4,
            seed: 0,
            t_min: bridge.t_min(),
            time_bins: 20,
            use_mean_network: bridge.kind() == BridgeKind::Nadb,
            bridge,
            net: NetConfig::default(),
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch size and steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..=0.01).contains(&self.t_min) {
            return Err(Error::Config(format!("t_min {} must lie in [0, 0.01]", self.t_min)));
        }
        if self.bridge.kind() == BridgeKind::I2sb && self.t_min <= 0.0 {
            return Err(Error::Config("the Schrödinger-bridge target needs t_min > 0".into()));
        }
        if self.time_bins < 2 {
            return Err(Error::Config("need at least two time bins".into()));
        }
        Ok(())
    }
}

/// Per-step loss history of mean-network training.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTrainLog {
    pub losses: Vec<f64>,
}

/// Fit `M(x1) ≈ E[x0 | x1]` by minibatch MSE regression.
pub fn train_mean_network(data: &Dataset, config: &TrainConfig) -> Result<(RegressorParams, MeanTrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let net = &config.net;
    let mut params = RegressorParams::mlp(
        data.dim,
        net.hidden,
        net.depth,
        0,
        net.activation,
        &mut rng::stream(config.seed, domain::INIT),
    )?;
    let mut adam = AdamState::new(&params);
    let mut losses = Vec::with_capacity(config.steps);
    let mut idx = vec![0usize; config.batch_size];
    for step in 0..config.steps {
        let mut r = rng::stream(config.seed, domain::MEAN_STEP + step as u64);
        for i in idx.iter_mut() {
            *i = r.random_range(0..data.len());
        }
        let batch: Vec<BatchItem> = idx
            .iter()
            .map(|&i| BatchItem {
                x: data.x1(i),
                t: None,
                target: data.x0(i),
            })
            .collect();
        let out = params.mse_batch(&batch, config.exec)?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence {
                step,
                what: "mean-network loss".into(),
            });
        }
        adam_step(&mut params, &out.grads, &mut adam, config.lr).map_err(|e| Error::Divergence {
            step,
            what: e.to_string(),
        })?;
        losses.push(out.loss);
    }
    Ok((params, MeanTrainLog { losses }))
}

/// Apply a (frozen) mean network to every `x1` of a dataset.
pub fn mean_outputs(mean: &RegressorParams, data: &Dataset, exec: Execution) -> Result<Vec<f64>> {
    let rows = par::try_map_indexed(exec, data.len(), |i| mean.predict(data.x1(i), None))?;
    Ok(rows.concat())
}

/// Far endpoints for a variant: `M(x1)` when the arm uses the mean network,
/// `x1` otherwise.
pub fn far_endpoints(
    variant: Variant,
    mean: Option<&RegressorParams>,
    data: &Dataset,
    exec: Execution,
) -> Result<Vec<f64>> {
    if variant.uses_mean() {
        let m = mean.ok_or_else(|| Error::Config(format!("variant {variant} needs a mean network")))?;
        mean_outputs(m, data, exec)
    } else {
        Ok(data.x1.clone())
    }
}

/// Optimiser-carrying bridge regressor.
#[derive(Debug, Clone)]
pub struct BridgeTrainer {
    pub params: RegressorParams,
    pub adam: AdamState,
}

impl BridgeTrainer {
    pub fn new(data_dim: usize, config: &TrainConfig) -> Result<Self> {
        let net = &config.net;
        if net.time_embed_dim == 0 {
            return Err(Error::Config("the bridge regressor needs a time embedding".into()));
        }
        let params = RegressorParams::mlp(
            data_dim,
            net.hidden,
            net.depth,
            net.time_embed_dim,
            net.activation,
            &mut rng::stream(config.seed, domain::INIT + 1),
        )?;
        let adam = AdamState::new(&params);
        Ok(Self { params, adam })
    }

    pub fn from_params(params: RegressorParams) -> Self {
        let adam = AdamState::new(&params);
        Self { params, adam }
    }
}

/// Result of one optimiser step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// `(t, mean squared residual)` per sample.
    pub per_sample: Vec<(f64, f64)>,
}

/// One Adam step on `E‖ε(X_t, t) − Y_t‖²` over prepared samples.
pub fn step_on_samples(
    trainer: &mut BridgeTrainer,
    samples: &[BridgeSample],
    lr: f64,
    exec: Execution,
) -> Result<StepOutcome> {
    let batch: Vec<BatchItem> = samples
        .iter()
        .map(|s| BatchItem {
            x: &s.xt,
            t: Some(s.t),
            target: &s.yt,
        })
        .collect();
    let out = trainer.params.mse_batch(&batch, exec)?;
    if !out.loss.is_finite() {
        return Err(Error::NonFinite("bridge loss"));
    }
    adam_step(&mut trainer.params, &out.grads, &mut trainer.adam, lr)?;
    Ok(StepOutcome {
        loss: out.loss,
        per_sample: samples.iter().map(|s| s.t).zip(out.per_sample).collect(),
    })
}

/// Draw `t ~ U[t_min, 1]` and `z ~ N(0, I)` per pair, build the coupled
/// samples for `spec`, with far endpoints given by `far`.
pub fn draw_samples(
    spec: &ScheduleSpec,
    t_min: f64,
    x0: &[&[f64]],
    x1: &[&[f64]],
    far: &[&[f64]],
    rng: &mut StreamRng,
) -> Result<Vec<BridgeSample>> {
    let mut out = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let t = rng::uniform(rng, t_min, 1.0);
        let z = rng::normal_vec(rng, x0[i].len());
        out.push(make_bridge_sample(spec, t, x0[i], x1[i], far[i], &z)?);
    }
    Ok(out)
}

fn training_step(
    kind: BridgeKind,
    trainer: &mut BridgeTrainer,
    mean: Option<&RegressorParams>,
    batch: &[(Vec<f64>, Vec<f64>)],
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<StepOutcome> {
    let spec = config.bridge.with_kind(kind);
    let far: Vec<Vec<f64>> = match mean {
        Some(m) => batch
            .iter()
            .map(|(_, x1)| m.predict(x1, None))
            .collect::<Result<_>>()?,
        None => batch.iter().map(|(_, x1)| x1.clone()).collect(),
    };
    let x0: Vec<&[f64]> = batch.iter().map(|(a, _)| a.as_slice()).collect();
    let x1: Vec<&[f64]> = batch.iter().map(|(_, b)| b.as_slice()).collect();
    let far: Vec<&[f64]> = far.iter().map(Vec::as_slice).collect();
    let samples = draw_samples(&spec, config.t_min, &x0, &x1, &far, rng)?;
    step_on_samples(trainer, &samples, config.lr, config.exec)
}

/// One noise-aligned training step on a batch of `(x0, x1)` pairs. The mean
/// network, when given, is only read.
pub fn nadb_training_step(
    trainer: &mut BridgeTrainer,
    mean: Option<&RegressorParams>,
    batch: &[(Vec<f64>, Vec<f64>)],
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<StepOutcome> {
    training_step(BridgeKind::Nadb, trainer, mean, batch, config, rng)
}

/// One Schrödinger-bridge training step on a batch of `(x0, x1)` pairs.
pub fn i2sb_training_step(
    trainer: &mut BridgeTrainer,
    batch: &[(Vec<f64>, Vec<f64>)],
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<StepOutcome> {
    training_step(BridgeKind::I2sb, trainer, None, batch, config, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Mean squared residual per time bin; `None` when no sample fell in it.
    pub bins: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub variant: Variant,
    pub time_bins: usize,
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Per-bin residual averaged over the steps of a window that populated it.
    pub fn window_bin_means(&self, steps: std::ops::Range<usize>) -> Vec<Option<f64>> {
        let mut sum = vec![0.0; self.time_bins];
        let mut cnt = vec![0usize; self.time_bins];
        for row in &self.rows[steps] {
            for (b, v) in row.bins.iter().enumerate() {
                if let Some(v) = v {
                    sum[b] += v;
                    cnt[b] += 1;
                }
            }
        }
        sum.iter()
            .zip(&cnt)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// CSV with columns `step, loss, bin_0 .. bin_{B-1}`; empty cells mark
    /// bins that received no samples at that step.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = vec!["step".to_string(), "loss".to_string()];
        header.extend((0..self.time_bins).map(|b| format!("bin_{b}")));
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cells = vec![row.step.to_string(), row.loss.to_string()];
            cells.extend(row.bins.iter().map(|b| b.map(|v| v.to_string()).unwrap_or_default()));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn time_bin(t: f64, bins: usize) -> usize {
    ((t * bins as f64) as usize).min(bins - 1)
}

/// Full training loop for one ablation arm.
///
/// Batches are drawn with replacement; each step uses its own random stream,
/// so runs are reproducible from `config.seed`.
pub fn train_bridge(
    data: &Dataset,
    config: &TrainConfig,
    variant: Variant,
    mean: Option<&RegressorParams>,
) -> Result<(RegressorParams, TrainingLog)> {
    let far = far_endpoints(variant, mean, data, config.exec)?;
    let trainer = BridgeTrainer::new(data.dim, config)?;
    train_bridge_from(trainer, data, &far, config, variant)
}

/// [`train_bridge`] from an existing trainer and precomputed far endpoints.
pub fn train_bridge_from(
    mut trainer: BridgeTrainer,
    data: &Dataset,
    far: &[f64],
    config: &TrainConfig,
    variant: Variant,
) -> Result<(RegressorParams, TrainingLog)> {
    let mut config = config.clone();
    config.bridge = config.bridge.with_kind(variant.kind());
    config.use_mean_network = variant.uses_mean();
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if far.len() != data.x0.len() {
        return Err(Error::DimensionMismatch {
            expected: data.x0.len(),
            got: far.len(),
        });
    }
    if trainer.params.data_dim() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: data.dim,
            got: trainer.params.data_dim(),
        });
    }
    let d = data.dim;
    let spec = &config.bridge;
    let bsz = config.batch_size;
    let mut rows = Vec::with_capacity(config.steps);
    let mut samples: Vec<BridgeSample> = (0..bsz)
        .map(|_| BridgeSample {
            t: 0.0,
            x0: vec![0.0; d],
            x1: vec![0.0; d],
            xhat0: vec![0.0; d],
            z: vec![0.0; d],
            xt: vec![0.0; d],
            yt: vec![0.0; d],
        })
        .collect();
    for step in 0..config.steps {
        let mut r = rng::stream(config.seed, domain::TRAIN_STEP + step as u64);
        for s in samples.iter_mut() {
            let i = r.random_range(0..data.len());
            s.t = rng::uniform(&mut r, config.t_min, 1.0);
            for z in s.z.iter_mut() {
                *z = rng::normal(&mut r);
            }
            s.x0.copy_from_slice(data.x0(i));
            s.x1.copy_from_slice(data.x1(i));
            s.xhat0.copy_from_slice(&far[i * d..(i + 1) * d]);
            fill_bridge_pair(spec, s.t, &s.x0, &s.xhat0, &s.z, &mut s.xt, &mut s.yt)?;
        }
        let out = step_on_samples(&mut trainer, &samples, config.lr, config.exec).map_err(|e| {
            Error::Divergence {
                step,
                what: e.to_string(),
            }
        })?;
        let mut sum = vec![0.0; config.time_bins];
        let mut cnt = vec![0usize; config.time_bins];
        for &(t, l) in &out.per_sample {
            let b = time_bin(t, config.time_bins);
            sum[b] += l;
            cnt[b] += 1;
        }
        rows.push(LogRow {
            step,
            loss: out.loss,
            bins: sum
                .iter()
                .zip(&cnt)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect(),
        });
    }
    Ok((
        trainer.params,
        TrainingLog {
            variant,
            time_bins: config.time_bins,
            rows,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::make_gauss_channel;

    fn cfg(kind: BridgeKind) -> TrainConfig {
        let spec = ScheduleSpec::nadb(0.4, 0.75).unwrap().with_kind(kind);
        let mut c = TrainConfig::new(spec);
        c.net = NetConfig {
            hidden: 16,
            depth: 2,
            time_embed_dim: 4,
            activation: Activation::Silu,
        };
        c.batch_size = 16;
        c.steps = 30;
        c.lr = 1e-3;
        c
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("ddbm".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(BridgeKind::Nadb);
        c.t_min = 0.02;
        assert!(c.validate().is_err());
        let mut c = cfg(BridgeKind::I2sb);
        c.t_min = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg(BridgeKind::Nadb);
        c.time_bins = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = Dataset::new(1, vec![], vec![]).unwrap();
        assert!(matches!(
            train_mean_network(&data, &cfg(BridgeKind::Nadb)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn mean_arm_requires_mean_network() {
        let data = make_gauss_channel(1, 1.0).unwrap().sample(0, 0, 32);
        assert!(train_bridge(&data, &cfg(BridgeKind::Nadb), Variant::Nadb, None).is_err());
    }

    #[test]
    fn log_has_one_row_per_step() {
        let data = make_gauss_channel(2, 1.0).unwrap().sample(0, 0, 64);
        let (_, log) = train_bridge(&data, &cfg(BridgeKind::Nadb), Variant::NadbNoMean, None).unwrap();
        assert_eq!(log.rows.len(), 30);
        assert!(log.rows.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.starts_with("step,loss,bin_0,"));
    }

    #[test]
    fn time_bins() {
        assert_eq!(time_bin(0.0, 20), 0);
        assert_eq!(time_bin(0.051, 20), 1);
        assert_eq!(time_bin(1.0, 20), 19);
    }
}
