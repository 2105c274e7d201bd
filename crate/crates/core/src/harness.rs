//! Experiment commands shared by the `bridgelab` binary and the tests.
//!
//! Every CSV starts with a `#` metadata line carrying the config hash and the
//! seed, and its file name carries both as well, so reruns with the same
//! config and seed produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::diagnostics::{self, DiagnosticsReport, EndpointW2};
use crate::error::{Error, Result};
use crate::interpolant::BridgeKind;
use crate::net::RegressorParams;
use crate::par::Execution;
use crate::rng::domain;
use crate::sampler::{self, AnalyticEps, EpsModel};
use crate::toy::Dataset;
use crate::training::{self, Variant};

/// A validated config bound to an output directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub exec: Execution,
}

impl RunContext {
    /// Validates `config` and creates `out_dir` if needed.
    pub fn new(config: RunConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out_dir = out_dir.into();
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self {
            config,
            out_dir,
            exec: Execution::default(),
        })
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }

    pub fn csv_path(&self, stem: &str) -> PathBuf {
        self.out_dir
            .join(format!("{stem}_{}_s{}.csv", self.hash(), self.config.seed))
    }

    pub fn mean_path(&self) -> PathBuf {
        self.out_dir.join("mean.brlb")
    }

    pub fn bridge_path(&self, variant: Variant) -> PathBuf {
        self.out_dir.join(format!("bridge_{variant}.brlb"))
    }

    pub fn train_data(&self) -> Result<Dataset> {
        let task = self.config.task.build()?;
        Ok(task.sample(self.config.seed, domain::DATA_TRAIN, self.config.train_size))
    }

    pub fn test_data(&self) -> Result<Dataset> {
        let task = self.config.task.build()?;
        Ok(task.sample(self.config.seed, domain::DATA_TEST, self.config.test_size))
    }

    fn metadata(&self, extra: &str) -> String {
        let mut line = format!(
            "# bridgelab config_hash={} seed={} variant={}",
            self.hash(),
            self.config.seed,
            self.config.variant
        );
        if !extra.is_empty() {
            line.push(' ');
            line.push_str(extra);
        }
        line
    }

    /// Write a CSV with the metadata line; returns its path.
    pub fn write_csv<F>(&self, stem: &str, extra: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.csv_path(stem);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", self.metadata(extra))
            .and_then(|_| body(&mut w))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// The mean network, required when the variant uses one.
    pub fn load_mean(&self, path: Option<&Path>) -> Result<Option<RegressorParams>> {
        if !self.config.variant.uses_mean() {
            return Ok(None);
        }
        let path = path.map_or_else(|| self.mean_path(), Path::to_path_buf);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let mean = RegressorParams::load(&path)?;
        self.check_dim(&mean, &path)?;
        Ok(Some(mean))
    }

    fn load_bridge(&self, path: Option<&Path>) -> Result<RegressorParams> {
        let path = path.map_or_else(|| self.bridge_path(self.config.variant), Path::to_path_buf);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let p = RegressorParams::load(&path)?;
        self.check_dim(&p, &path)?;
        Ok(p)
    }

    fn check_dim(&self, p: &RegressorParams, path: &Path) -> Result<()> {
        let dim = self.config.task.build()?.dim;
        if p.data_dim() != dim || p.output_dim() != dim {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("checkpoint maps {} -> {}, task needs {dim}", p.data_dim(), p.output_dim()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MeanSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: f64,
    pub endpoint_w2: EndpointW2,
}

/// Fit the mean network on the training split, save it and its loss log.
pub fn train_mean(ctx: &RunContext) -> Result<MeanSummary> {
    let data = ctx.train_data()?;
    let mut cfg = ctx.config.mean_train_config()?;
    cfg.exec = ctx.exec;
    let (mean, log) = training::train_mean_network(&data, &cfg)?;
    let checkpoint = ctx.mean_path();
    mean.save(&checkpoint)?;
    let log_path = ctx.write_csv("mean_train", "", |w| {
        writeln!(w, "step,loss")?;
        for (i, l) in log.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })?;
    let endpoint_w2 = diagnostics::endpoint_w2_marginal(&mean, &ctx.test_data()?, ctx.exec)?;
    Ok(MeanSummary {
        checkpoint,
        log: log_path,
        final_loss: log.losses.last().copied().unwrap_or(f64::NAN),
        endpoint_w2,
    })
}

#[derive(Debug, Clone)]
pub struct BridgeSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: f64,
    pub training_log: training::TrainingLog,
}

/// Train the configured variant's bridge regressor.
pub fn train_bridge(ctx: &RunContext, mean_checkpoint: Option<&Path>) -> Result<BridgeSummary> {
    let mean = ctx.load_mean(mean_checkpoint)?;
    let data = ctx.train_data()?;
    let mut cfg = ctx.config.train_config()?;
    cfg.exec = ctx.exec;
    let variant = ctx.config.variant;
    let (params, log) = training::train_bridge(&data, &cfg, variant, mean.as_ref())?;
    let checkpoint = ctx.bridge_path(variant);
    params.save(&checkpoint)?;
    let log_path = ctx.write_csv(&format!("train_{variant}"), "", |w| log.write_csv(w))?;
    Ok(BridgeSummary {
        checkpoint,
        log: log_path,
        final_loss: log.final_loss(),
        training_log: log,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SampleOptions {
    pub checkpoint: Option<PathBuf>,
    pub mean_checkpoint: Option<PathBuf>,
    /// Use the exact target with the clean sample revealed (test hook).
    pub oracle: bool,
    /// Also record the full trajectory of the first held-out row.
    pub trajectory: bool,
}

#[derive(Debug, Clone)]
pub struct SampleSummary {
    pub samples: PathBuf,
    pub heldout: PathBuf,
    pub metrics: PathBuf,
    pub mse: f64,
    pub psnr: f64,
    pub input_mse: f64,
}

enum Model {
    Net(RegressorParams),
    Oracle(AnalyticEps),
}

impl Model {
    fn as_dyn(&self) -> &dyn EpsModel {
        match self {
            Model::Net(p) => p,
            Model::Oracle(o) => o,
        }
    }
}

fn model(ctx: &RunContext, opts: &SampleOptions) -> Result<Model> {
    if opts.oracle {
        Ok(Model::Oracle(AnalyticEps::new(ctx.config.schedule()?)))
    } else {
        Ok(Model::Net(ctx.load_bridge(opts.checkpoint.as_deref())?))
    }
}

/// Restore the held-out split. Writes `samples_<variant>…brds` (x0 = clean
/// reference, x1 = generated), `heldout…brds` and a metrics CSV.
pub fn sample(ctx: &RunContext, opts: &SampleOptions) -> Result<SampleSummary> {
    let plan = ctx.config.sampler_plan()?;
    let model = model(ctx, opts)?;
    let mean = ctx.load_mean(opts.mean_checkpoint.as_deref())?;
    let test = ctx.test_data()?;
    let seed = ctx.config.seed;
    let outputs = sampler::generate_batch(&plan, model.as_dyn(), mean.as_ref(), &test, opts.oracle, seed, ctx.exec)?;
    let generated = Dataset::new(test.dim, test.x0.clone(), outputs.concat())?;
    let variant = ctx.config.variant;
    let tag = format!("{}_s{}", ctx.hash(), seed);
    let samples = ctx.out_dir.join(format!("samples_{variant}_{tag}.brds"));
    let heldout = ctx.out_dir.join(format!("heldout_{tag}.brds"));
    generated.save(&samples)?;
    test.save(&heldout)?;

    let (mse, psnr) = diagnostics::restoration_metrics(&generated.x0, &generated.x1)?;
    let (input_mse, _) = diagnostics::restoration_metrics(&test.x0, &test.x1)?;
    let extra = format!("nfe={}", plan.nfe());
    let metrics = ctx.write_csv(&format!("sample_metrics_{variant}"), &extra, |w| {
        writeln!(w, "variant,nfe,oracle,mse,psnr,input_mse")?;
        writeln!(w, "{variant},{},{},{mse},{psnr},{input_mse}", plan.nfe(), opts.oracle)
    })?;
    if opts.trajectory {
        let mut r = crate::rng::stream(seed, domain::SAMPLER);
        let reference = opts.oracle.then(|| test.x0(0));
        let tr = sampler::generate(&plan, model.as_dyn(), mean.as_ref(), test.x1(0), reference, &mut r)?;
        ctx.write_csv(&format!("trajectory_{variant}"), &extra, |w| tr.write_csv(w))?;
    }
    Ok(SampleSummary {
        samples,
        heldout,
        metrics,
        mse,
        psnr,
        input_mse,
    })
}

#[derive(Debug, Clone)]
pub struct DiagnoseSummary {
    pub report: DiagnosticsReport,
    pub endpoint_w2: Option<EndpointW2>,
    pub files: Vec<PathBuf>,
}

/// Noise curves, the endpoint probe, the mean-network W2 check (when a mean
/// network is in play) and restoration metrics on the held-out split.
pub fn diagnose(ctx: &RunContext, opts: &SampleOptions) -> Result<DiagnoseSummary> {
    let cfg = &ctx.config;
    let spec = cfg.schedule()?;
    let grid = diagnostics::default_probe_grid(cfg.probe_t_lo, cfg.probe_points);
    let mut files = Vec::new();

    // The curves also cover both endpoints.
    let curve_grid: Vec<f64> = std::iter::once(0.0).chain(grid.iter().copied()).chain([1.0]).collect();
    let curves = diagnostics::noise_curves(
        &spec.with_kind(BridgeKind::I2sb),
        &spec.with_kind(BridgeKind::Nadb),
        &curve_grid,
    )?;
    files.push(ctx.write_csv("noise_curves", "", |w| diagnostics::write_noise_curves(&curves, w))?);

    let model = model(ctx, opts)?;
    let mean = ctx.load_mean(opts.mean_checkpoint.as_deref())?;
    let test = ctx.test_data()?;
    let far = training::far_endpoints(cfg.variant, mean.as_ref(), &test, ctx.exec)?;
    let mut report = diagnostics::endpoint_probe(
        model.as_dyn(),
        &spec,
        &test,
        &far,
        &grid,
        cfg.probe_samples,
        cfg.seed,
        ctx.exec,
    )?;

    let endpoint_w2 = match &mean {
        Some(m) => Some(diagnostics::endpoint_w2_marginal(m, &test, ctx.exec)?),
        None => None,
    };
    if let Some(th) = &endpoint_w2 {
        files.push(ctx.write_csv("endpoint_w2", "", |w| {
            writeln!(w, "w2_before,w2_after,w2_after_se,mse_before,mse_after,holds,premise_holds")?;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                th.w2_before, th.w2_after, th.w2_after_se, th.mse_before, th.mse_after, th.holds, th.premise_holds
            )
        })?);
    }

    let plan = cfg.sampler_plan()?;
    let outputs = sampler::generate_batch(&plan, model.as_dyn(), mean.as_ref(), &test, opts.oracle, cfg.seed, ctx.exec)?
        .concat();
    let (mse, psnr) = diagnostics::restoration_metrics(&test.x0, &outputs)?;
    report.mse = Some(mse);
    report.psnr_toy = Some(psnr);
    if test.dim == 1 {
        report.w2_rho0_rho1 = Some(diagnostics::w2_exact_1d(&test.x0, &test.x1)?);
        report.w2_rho0_rhohat0 = Some(diagnostics::w2_exact_1d(&test.x0, &far)?);
    }

    let variant = cfg.variant;
    files.push(ctx.write_csv(&format!("endpoint_probe_{variant}"), "", |w| report.write_probe_csv(w))?);
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    files.push(ctx.write_csv(&format!("metrics_{variant}"), &format!("nfe={}", plan.nfe()), |w| {
        writeln!(w, "metric,value")?;
        writeln!(w, "mse,{mse}")?;
        writeln!(w, "psnr_toy,{psnr}")?;
        writeln!(w, "w2_rho0_rho1,{}", opt(report.w2_rho0_rho1))?;
        writeln!(w, "w2_rho0_rhohat0,{}", opt(report.w2_rho0_rhohat0))
    })?);
    Ok(DiagnoseSummary {
        report,
        endpoint_w2,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_loss: f64,
    pub mse: f64,
    pub psnr: f64,
    pub variance_ratio_lo: f64,
    pub cosine_lo: f64,
}

/// Train and evaluate the aligned bridge once per exponent, each in its own
/// `alpha_<value>` subdirectory. The mean network is trained once (or reused
/// from the output directory).
pub fn sweep_alpha(ctx: &RunContext, alphas: &[f64]) -> Result<(Vec<SweepRow>, PathBuf)> {
    if alphas.is_empty() {
        return Err(Error::Config("sweep-alpha needs at least one exponent".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Config(format!("exponent {a} must lie in (0,1)")));
    }
    if ctx.config.variant.kind() != BridgeKind::Nadb {
        return Err(Error::Config(format!(
            "sweep-alpha needs an aligned-bridge variant, got {}",
            ctx.config.variant
        )));
    }
    let mean_path = ctx.mean_path();
    if ctx.config.variant.uses_mean() && !mean_path.exists() {
        train_mean(ctx)?;
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut cfg = ctx.config.clone();
        cfg.alpha = alpha;
        let child = RunContext::new(cfg, ctx.out_dir.join(format!("alpha_{alpha}")))?.with_exec(ctx.exec);
        let trained = train_bridge(&child, Some(&mean_path))?;
        let opts = SampleOptions {
            mean_checkpoint: Some(mean_path.clone()),
            ..Default::default()
        };
        let diag = diagnose(&child, &opts)?;
        let lo = diag.report.rows.first();
        rows.push(SweepRow {
            alpha,
            final_loss: trained.final_loss,
            mse: diag.report.mse.unwrap_or(f64::NAN),
            psnr: diag.report.psnr_toy.unwrap_or(f64::NAN),
            variance_ratio_lo: lo.map_or(f64::NAN, |r| r.variance_ratio()),
            cosine_lo: lo.map_or(f64::NAN, |r| r.cosine_similarity),
        });
    }
    let list = alphas.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    let path = ctx.write_csv("sweep_alpha", &format!("alphas={list}"), |w| {
        writeln!(w, "alpha,final_loss,mse,psnr,variance_ratio_tlo,cosine_tlo")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.alpha, r.final_loss, r.mse, r.psnr, r.variance_ratio_lo, r.cosine_lo
            )?;
        }
        Ok(())
    })?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::from_text(
            "task = gauss\ntrain.steps = 3\nmean.steps = 3\ndata.train_size = 32\ndata.test_size = 8\n\
             net.hidden = 8\nmean.hidden = 8\nprobe.samples_per_t = 4\nprobe.points_per_side = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn missing_mean_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(tiny(), dir.path()).unwrap();
        match train_bridge(&ctx, None) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("mean.brlb")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pipeline_writes_tagged_files() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(tiny(), dir.path().join("nested")).unwrap();
        train_mean(&ctx).unwrap();
        train_bridge(&ctx, None).unwrap();
        let s = sample(&ctx, &SampleOptions::default()).unwrap();
        assert!(s.samples.exists() && s.heldout.exists());
        let text = std::fs::read_to_string(&s.metrics).unwrap();
        assert!(text.starts_with(&format!("# bridgelab config_hash={} seed=0", ctx.hash())));
        let d = diagnose(&ctx, &SampleOptions::default()).unwrap();
        assert_eq!(d.files.len(), 4);
    }

    #[test]
    fn sweep_rejects_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::new(tiny(), dir.path()).unwrap();
        assert!(matches!(sweep_alpha(&ctx, &[]), Err(Error::Config(_))));
    }
}
