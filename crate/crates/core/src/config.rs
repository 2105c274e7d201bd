//! Flat key-value run configuration.
//!
//! ```text
//! # comment
//! task = blur
//! task.patch_side = 8
//! [train]
//! steps = 20000        # same as train.steps
//! ```
//!
//! A `[section]` header prefixes the keys that follow it. Unknown or
//! duplicated keys are errors. See `RunConfig::KEYS` for the schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interpolant::{BetaShape, BridgeKind, ScheduleSpec};
use crate::net::Activation;
use crate::sampler::{GridSpacing, SamplerPlan, WRule};
use crate::toy::{self, BlurKernel, PairedDataset};
use crate::training::{NetConfig, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub name: String,
    pub dim: usize,
    pub noise_sigma: f64,
    pub patch_side: usize,
    pub kernel: BlurKernel,
    pub levels: usize,
    pub modes: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            name: "blur".into(),
            dim: 1,
            noise_sigma: 1.0,
            patch_side: 8,
            kernel: BlurKernel::Uniform3,
            levels: 4,
            modes: 4,
        }
    }
}

impl TaskConfig {
    pub fn build(&self) -> Result<PairedDataset> {
        match self.name.as_str() {
            "gauss" => toy::make_gauss_channel(self.dim, self.noise_sigma),
            "blur" => toy::make_patch_blur(self.patch_side, self.kernel),
            "quantize" => toy::make_patch_quantize(self.patch_side, self.levels),
            "clusters" => toy::make_2d_clusters(self.modes),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub train_size: usize,
    pub test_size: usize,

    pub kind: BridgeKind,
    pub alpha: f64,
    pub k: f64,
    pub beta_shape: BetaShape,
    pub total_variance: f64,
    pub t_min: f64,

    pub variant: Variant,

    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub time_bins: usize,
    pub net: NetConfig,

    pub mean_steps: usize,
    pub mean_lr: f64,
    pub mean_batch_size: usize,
    pub mean_hidden: usize,
    pub mean_depth: usize,

    pub nfe: usize,
    pub threshold: Option<f64>,
    pub w_rule: WRule,
    pub spacing: GridSpacing,

    pub probe_t_lo: f64,
    pub probe_points: usize,
    pub probe_samples: usize,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            train_size: 4096,
            test_size: 512,
            kind: BridgeKind::Nadb,
            alpha: ScheduleSpec::DEFAULT_ALPHA,
            k: ScheduleSpec::DEFAULT_K,
            beta_shape: BetaShape::Triangular,
            total_variance: ScheduleSpec::DEFAULT_TOTAL_VARIANCE,
            t_min: ScheduleSpec::DEFAULT_T_MIN,
            variant: Variant::Nadb,
            batch_size: 64,
            steps: 2000,
            lr: 1e-3,
            time_bins: 20,
            net: NetConfig::default(),
            mean_steps: 2000,
            mean_lr: 1e-3,
            mean_batch_size: 64,
            mean_hidden: 128,
            mean_depth: 2,
            nfe: 10,
            threshold: None,
            w_rule: WRule::Ratio,
            spacing: GridSpacing::Uniform,
            probe_t_lo: 1e-3,
            probe_points: 10,
            probe_samples: 256,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

impl RunConfig {
    /// Every accepted key.
    pub const KEYS: &'static [&'static str] = &[
        "task",
        "task.dim",
        "task.noise_sigma",
        "task.patch_side",
        "task.kernel",
        "task.levels",
        "task.modes",
        "data.train_size",
        "data.test_size",
        "kind",
        "alpha",
        "k",
        "beta.shape",
        "beta.total_variance",
        "t_min",
        "variant",
        "train.batch_size",
        "train.steps",
        "train.lr",
        "train.time_bins",
        "net.hidden",
        "net.depth",
        "net.time_embed_dim",
        "net.activation",
        "mean.steps",
        "mean.lr",
        "mean.batch_size",
        "mean.hidden",
        "mean.depth",
        "sampler.nfe",
        "sampler.d",
        "sampler.w_rule",
        "sampler.spacing",
        "probe.t_lo",
        "probe.points_per_side",
        "probe.samples_per_t",
        "seed",
    ];

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        let mut cfg = RunConfig::default();
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        // `variant` fixes the kind unless only `kind` was given.
        if !map.contains_key("variant") && map.contains_key("kind") {
            cfg.variant = match cfg.kind {
                BridgeKind::I2sb => Variant::I2sb,
                BridgeKind::Nadb => Variant::Nadb,
            };
        }
        cfg.kind = cfg.variant.kind();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "task" => self.task.name = v.trim().to_ascii_lowercase(),
            "task.dim" => self.task.dim = parse(key, v)?,
            "task.noise_sigma" => self.task.noise_sigma = parse(key, v)?,
            "task.patch_side" => self.task.patch_side = parse(key, v)?,
            "task.kernel" => self.task.kernel = v.parse()?,
            "task.levels" => self.task.levels = parse(key, v)?,
            "task.modes" => self.task.modes = parse(key, v)?,
            "data.train_size" => self.train_size = parse(key, v)?,
            "data.test_size" => self.test_size = parse(key, v)?,
            "kind" => self.kind = v.parse()?,
            "alpha" => self.alpha = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "beta.shape" => self.beta_shape = v.parse()?,
            "beta.total_variance" => self.total_variance = parse(key, v)?,
            "t_min" => self.t_min = parse(key, v)?,
            "variant" => {
                self.variant = v.parse()?;
                self.kind = self.variant.kind();
            }
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.steps" => self.steps = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.time_bins" => self.time_bins = parse(key, v)?,
            "net.hidden" => self.net.hidden = parse(key, v)?,
            "net.depth" => self.net.depth = parse(key, v)?,
            "net.time_embed_dim" => self.net.time_embed_dim = parse(key, v)?,
            "net.activation" => self.net.activation = v.parse::<Activation>()?,
            "mean.steps" => self.mean_steps = parse(key, v)?,
            "mean.lr" => self.mean_lr = parse(key, v)?,
            "mean.batch_size" => self.mean_batch_size = parse(key, v)?,
            "mean.hidden" => self.mean_hidden = parse(key, v)?,
            "mean.depth" => self.mean_depth = parse(key, v)?,
            "sampler.nfe" => self.nfe = parse(key, v)?,
            "sampler.d" => {
                self.threshold = match v.trim() {
                    "" | "auto" => None,
                    s => Some(parse(key, s)?),
                }
            }
            "sampler.w_rule" => self.w_rule = v.parse()?,
            "sampler.spacing" => self.spacing = v.parse()?,
            "probe.t_lo" => self.probe_t_lo = parse(key, v)?,
            "probe.points_per_side" => self.probe_points = parse(key, v)?,
            "probe.samples_per_t" => self.probe_samples = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.build()?;
        self.schedule()?;
        self.train_config()?.validate()?;
        self.mean_train_config()?.validate()?;
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.nfe == 0 {
            return Err(Error::Config("sampler.nfe must be at least 1".into()));
        }
        if !(self.probe_t_lo > 0.0 && self.probe_t_lo < 0.5) || self.probe_samples == 0 {
            return Err(Error::Config("bad probe settings".into()));
        }
        self.sampler_plan()?;
        Ok(())
    }

    /// Schedule of the configured variant.
    pub fn schedule(&self) -> Result<ScheduleSpec> {
        ScheduleSpec::new(
            self.variant.kind(),
            self.alpha,
            self.k,
            self.beta_shape,
            self.total_variance,
            self.t_min,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::new(self.schedule()?);
        c.batch_size = self.batch_size;
        c.steps = self.steps;
        c.lr = self.lr;
        c.seed = self.seed;
        c.t_min = self.t_min;
        c.time_bins = self.time_bins;
        c.use_mean_network = self.variant.uses_mean();
        c.net = self.net.clone();
        Ok(c)
    }

    pub fn mean_train_config(&self) -> Result<TrainConfig> {
        let mut c = self.train_config()?;
        c.batch_size = self.mean_batch_size;
        c.steps = self.mean_steps;
        c.lr = self.mean_lr;
        c.net = NetConfig {
            hidden: self.mean_hidden,
            depth: self.mean_depth,
            time_embed_dim: 0,
            activation: self.net.activation,
        };
        Ok(c)
    }

    pub fn sampler_plan(&self) -> Result<SamplerPlan> {
        let plan = SamplerPlan::new(self.schedule()?, self.nfe, self.spacing)
            .map_err(|e| Error::Config(e.to_string()))?
            .with_w_rule(self.w_rule);
        match self.threshold {
            Some(d) => plan.with_threshold(d).map_err(|e| Error::Config(e.to_string())),
            None => Ok(plan),
        }
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("task", self.task.name.clone());
        kv("task.dim", self.task.dim.to_string());
        kv("task.noise_sigma", self.task.noise_sigma.to_string());
        kv("task.patch_side", self.task.patch_side.to_string());
        kv(
            "task.kernel",
            match self.task.kernel {
                BlurKernel::Uniform3 => "uniform3".into(),
                BlurKernel::Gaussian3 => "gaussian3".into(),
            },
        );
        kv("task.levels", self.task.levels.to_string());
        kv("task.modes", self.task.modes.to_string());
        kv("data.train_size", self.train_size.to_string());
        kv("data.test_size", self.test_size.to_string());
        kv("kind", self.variant.kind().to_string());
        kv("alpha", self.alpha.to_string());
        kv("k", self.k.to_string());
        kv("beta.shape", self.beta_shape.to_string());
        kv("beta.total_variance", self.total_variance.to_string());
        kv("t_min", self.t_min.to_string());
        kv("variant", self.variant.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.steps", self.steps.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.time_bins", self.time_bins.to_string());
        kv("net.hidden", self.net.hidden.to_string());
        kv("net.depth", self.net.depth.to_string());
        kv("net.time_embed_dim", self.net.time_embed_dim.to_string());
        kv("net.activation", self.net.activation.to_string());
        kv("mean.steps", self.mean_steps.to_string());
        kv("mean.lr", self.mean_lr.to_string());
        kv("mean.batch_size", self.mean_batch_size.to_string());
        kv("mean.hidden", self.mean_hidden.to_string());
        kv("mean.depth", self.mean_depth.to_string());
        kv("sampler.nfe", self.nfe.to_string());
        kv("sampler.d", self.threshold.map_or("auto".into(), |d| d.to_string()));
        kv("sampler.w_rule", self.w_rule.to_string());
        kv("sampler.spacing", self.spacing.to_string());
        kv("probe.t_lo", self.probe_t_lo.to_string());
        kv("probe.points_per_side", self.probe_points.to_string());
        kv("probe.samples_per_t", self.probe_samples.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// First 16 hex digits of SHA-256 over the canonical text, excluding the
    /// seed (which is reported separately).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.task.name = "gauss".into();
        c.threshold = Some(0.5);
        c.w_rule = WRule::Constant(0.25);
        c.variant = Variant::I2sbWithMean;
        c.kind = BridgeKind::I2sb;
        c.seed = 17;
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sections_and_comments() {
        let c = RunConfig::from_text(
            "task = gauss # 1-D\n[task]\ndim = 1\n\n[train]\nsteps = 7\n; not a comment key\n",
        );
        assert!(c.is_err());
        let c = RunConfig::from_text("task = gauss\n[train]\nsteps = 7\n").unwrap();
        assert_eq!(c.steps, 7);
        assert_eq!(c.task.name, "gauss");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("nonsense = 1").is_err());
        assert!(RunConfig::from_text("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::from_text("alpha = 1.5").is_err());
        assert!(RunConfig::from_text("sampler.nfe = 0").is_err());
        assert!(RunConfig::from_text("sampler.d = 0.1").is_err());
        assert!(RunConfig::from_text("t_min = 0.5").is_err());
    }

    #[test]
    fn kind_alone_selects_the_plain_arm() {
        let c = RunConfig::from_text("kind = i2sb").unwrap();
        assert_eq!(c.variant, Variant::I2sb);
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.hash(), b.hash());
        b.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
