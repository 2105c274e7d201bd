//! Endpoint-underfitting probes, noise-coefficient curves, the Wasserstein
//! contraction check for the mean network, and toy restoration metrics.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::interpolant::{fill_bridge_pair, ScheduleSpec};
use crate::net::RegressorParams;
use crate::par::{self, Execution};
use crate::rng::{self, domain};
use crate::sampler::EpsModel;
use crate::toy::Dataset;

/// Vectors with norm below this count as zero for cosine similarity.
pub const ZERO_NORM: f64 = 1e-12;

/// Reported PSNR when the MSE is numerically zero.
pub const PSNR_PERFECT: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub t_center: f64,
    pub pred_variance: f64,
    pub target_variance: f64,
    pub cosine_similarity: f64,
    pub n_samples: usize,
}

impl ProbeRow {
    /// `pred_variance / target_variance`; NaN when the target is constant.
    pub fn variance_ratio(&self) -> f64 {
        if self.target_variance > 0.0 {
            self.pred_variance / self.target_variance
        } else {
            f64::NAN
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsReport {
    pub rows: Vec<ProbeRow>,
    pub w2_rho0_rho1: Option<f64>,
    pub w2_rho0_rhohat0: Option<f64>,
    pub mse: Option<f64>,
    pub psnr_toy: Option<f64>,
}

impl DiagnosticsReport {
    pub fn row_at(&self, t: f64) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| (r.t_center - t).abs() < 1e-12)
    }

    pub fn write_probe_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,pred_variance,target_variance,variance_ratio,cosine_similarity,n_samples"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t_center,
                r.pred_variance,
                r.target_variance,
                r.variance_ratio(),
                r.cosine_similarity,
                r.n_samples
            )?;
        }
        Ok(())
    }
}

/// Geometric grid from `t_lo` to 1/2, mirrored onto `(1/2, 1 − t_lo]`.
pub fn default_probe_grid(t_lo: f64, points_per_side: usize) -> Vec<f64> {
    let n = points_per_side.max(2);
    let ratio = (0.5 / t_lo).powf(1.0 / (n - 1) as f64);
    let mut lower: Vec<f64> = (0..n).map(|i| t_lo * ratio.powi(i as i32)).collect();
    lower[0] = t_lo;
    lower[n - 1] = 0.5;
    let mut grid = lower.clone();
    grid.extend(lower[..n - 1].iter().rev().map(|t| 1.0 - t));
    grid
}

/// Variance across the components of `v`.
fn component_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    c.clamp(-1.0, 1.0)
}

/// Prediction-vs-target statistics of a trained regressor across `t_grid`.
///
/// At each `t`, `samples_per_t` pairs are drawn with replacement from `data`
/// together with fresh noise; the bridge is built towards `far` (one row per
/// dataset row). Variance is the per-sample component variance averaged over
/// samples (across-sample variance when `d = 1`); cosine similarity is the
/// per-sample mean. Each grid point draws from its own random stream.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_probe(
    model: &dyn EpsModel,
    spec: &ScheduleSpec,
    data: &Dataset,
    far: &[f64],
    t_grid: &[f64],
    samples_per_t: usize,
    seed: u64,
    exec: Execution,
) -> Result<DiagnosticsReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if samples_per_t == 0 {
        return Err(Error::InvalidInput("samples_per_t must be positive".into()));
    }
    if far.len() != data.x0.len() {
        return Err(Error::DimensionMismatch {
            expected: data.x0.len(),
            got: far.len(),
        });
    }
    let d = data.dim;
    let rows = par::try_map_indexed(exec, t_grid.len(), |j| -> Result<ProbeRow> {
        let t = t_grid[j];
        let mut r = rng::stream(seed, domain::PROBE + j as u64);
        let mut xt = vec![0.0; d];
        let mut yt = vec![0.0; d];
        let mut pred_var = 0.0;
        let mut target_var = 0.0;
        let mut cos = 0.0;
        let mut preds: Vec<f64> = Vec::new();
        let mut targets: Vec<f64> = Vec::new();
        for _ in 0..samples_per_t {
            let i = r.random_range(0..data.len());
            let z = rng::normal_vec(&mut r, d);
            fill_bridge_pair(spec, t, data.x0(i), &far[i * d..(i + 1) * d], &z, &mut xt, &mut yt)?;
            let pred = model.predict_eps(&xt, t, Some(data.x0(i)))?;
            if d > 1 {
                pred_var += component_variance(&pred);
                target_var += component_variance(&yt);
            } else {
                preds.push(pred[0]);
                targets.push(yt[0]);
            }
            cos += cosine_similarity(&pred, &yt);
        }
        let n = samples_per_t as f64;
        let (pred_variance, target_variance) = if d > 1 {
            (pred_var / n, target_var / n)
        } else {
            (component_variance(&preds), component_variance(&targets))
        };
        Ok(ProbeRow {
            t_center: t,
            pred_variance,
            target_variance,
            cosine_similarity: cos / n,
            n_samples: samples_per_t,
        })
    })?;
    Ok(DiagnosticsReport {
        rows,
        ..Default::default()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCurveRow {
    pub t: f64,
    pub i2sb_input: f64,
    pub i2sb_target: f64,
    pub i2sb_mean_term: f64,
    pub nadb_input: f64,
    pub nadb_target: f64,
}

/// Input and target noise coefficients of both families on `t_grid`.
pub fn noise_curves(
    spec_i2sb: &ScheduleSpec,
    spec_nadb: &ScheduleSpec,
    t_grid: &[f64],
) -> Result<Vec<NoiseCurveRow>> {
    t_grid
        .iter()
        .map(|&t| {
            Ok(NoiseCurveRow {
                t,
                i2sb_input: spec_i2sb.input_noise_coefficient(t)?,
                i2sb_target: spec_i2sb.target_noise_coefficient(t)?,
                i2sb_mean_term: spec_i2sb.target_displacement_coefficient(t)?,
                nadb_input: spec_nadb.input_noise_coefficient(t)?,
                nadb_target: spec_nadb.target_noise_coefficient(t)?,
            })
        })
        .collect()
}

pub fn write_noise_curves<W: Write + ?Sized>(rows: &[NoiseCurveRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "t,i2sb_input_noise,i2sb_target_noise,i2sb_mean_term,nadb_input_noise,nadb_target_noise")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.t, r.i2sb_input, r.i2sb_target, r.i2sb_mean_term, r.nadb_input, r.nadb_target
        )?;
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact empirical 1-D Wasserstein-2 distance via the sorted coupling.
/// Inputs need not be pre-sorted.
pub fn w2_exact_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    Ok(w2_with_se(samples_a, samples_b)?.0)
}

/// W2 and a delta-method standard error from the spread of the squared
/// sorted gaps.
fn w2_with_se(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let n = a.len() as f64;
    let gaps: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).collect();
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let w2 = mean.sqrt();
    let se = if w2 > 0.0 {
        (var / n).sqrt() / (2.0 * w2)
    } else {
        0.0
    };
    Ok((w2, se))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointW2 {
    pub w2_before: f64,
    pub w2_after: f64,
    pub w2_after_se: f64,
    /// `E‖X0 − X1‖²`.
    pub mse_before: f64,
    /// `E‖X0 − M(X1)‖²`.
    pub mse_after: f64,
    /// `w2_after ≤ w2_before + 3·SE`.
    pub holds: bool,
    /// `mse_after ≤ mse_before`.
    pub premise_holds: bool,
}

/// Compare `W2(ρ0, ρ1)` with `W2(ρ0, M#ρ1)` on a 1-D paired dataset.
pub fn endpoint_w2_check(mean: &RegressorParams, data: &Dataset, exec: Execution) -> Result<EndpointW2> {
    if data.dim != 1 {
        return Err(Error::InvalidInput(format!(
            "the exact W2 check needs 1-D data, got dim {}",
            data.dim
        )));
    }
    let hat = par::try_map_indexed(exec, data.len(), |i| mean.predict(data.x1(i), None).map(|v| v[0]))?;
    let (w2_before, _) = w2_with_se(&data.x0, &data.x1)?;
    let (w2_after, se) = w2_with_se(&data.x0, &hat)?;
    let n = data.len() as f64;
    let mse_before = data.x0.iter().zip(&data.x1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mse_after = data.x0.iter().zip(&hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    Ok(EndpointW2 {
        w2_before,
        w2_after,
        w2_after_se: se,
        mse_before,
        mse_after,
        holds: w2_after <= w2_before + 3.0 * se,
        premise_holds: mse_after <= mse_before,
    })
}

/// Per-coordinate version of [`endpoint_w2_check`] for `d > 1`: W2 values are
/// root-mean-square over the coordinate marginals.
pub fn endpoint_w2_marginal(mean: &RegressorParams, data: &Dataset, exec: Execution) -> Result<EndpointW2> {
    if data.dim == 1 {
        return endpoint_w2_check(mean, data, exec);
    }
    let d = data.dim;
    let hat = crate::training::mean_outputs(mean, data, exec)?;
    let n = data.len();
    let column = |buf: &[f64], j: usize| -> Vec<f64> { (0..n).map(|i| buf[i * d + j]).collect() };
    let mut before2 = 0.0;
    let mut after2 = 0.0;
    let mut se2 = 0.0;
    for j in 0..d {
        let c0 = column(&data.x0, j);
        let (wb, _) = w2_with_se(&c0, &column(&data.x1, j))?;
        let (wa, se) = w2_with_se(&c0, &column(&hat, j))?;
        before2 += wb * wb;
        after2 += wa * wa;
        se2 += se * se;
    }
    let (w2_before, w2_after) = ((before2 / d as f64).sqrt(), (after2 / d as f64).sqrt());
    let se = (se2 / d as f64).sqrt();
    let total = (n * d) as f64;
    let mse_before = data.x0.iter().zip(&data.x1).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / total;
    let mse_after = data.x0.iter().zip(&hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / total;
    Ok(EndpointW2 {
        w2_before,
        w2_after,
        w2_after_se: se,
        mse_before,
        mse_after,
        holds: w2_after <= w2_before + 3.0 * se,
        premise_holds: mse_after <= mse_before,
    })
}

/// Mean squared error over all components and the toy PSNR computed on
/// values clipped to `[0,1]`.
pub fn restoration_metrics(reference: &[f64], output: &[f64]) -> Result<(f64, f64)> {
    if reference.len() != output.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: output.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = reference.len() as f64;
    let mse = reference.iter().zip(output).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let clipped = reference
        .iter()
        .zip(output)
        .map(|(a, b)| (a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0)).powi(2))
        .sum::<f64>()
        / n;
    let psnr = if clipped < 1e-12 {
        PSNR_PERFECT
    } else {
        10.0 * (1.0 / clipped).log10()
    };
    Ok((mse, psnr))
}
