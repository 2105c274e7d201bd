//! Monte-Carlo marginal oracle shared by the sampler tests and the
//! acceptance suite.
#![allow(dead_code)]

use bridgelab::net::{Activation, RegressorParams};
use bridgelab::interpolant::{make_bridge_sample, pow_time, BridgeKind, ScheduleSpec};
use bridgelab::rng;
use bridgelab::sampler::{i2sb_reverse_step, stage1_step, stage2_step, AnalyticEps, EpsModel};

/// Which transition carries the state from `t` to `s`.
#[derive(Debug, Clone, Copy)]
pub enum Step {
    One,
    Two { w: f64 },
    Bridge,
}

#[derive(Debug, Clone)]
pub struct MarginalCheck {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub want_var: f64,
}

impl MarginalCheck {
    pub fn mean_ok(&self) -> bool {
        self.mean.abs() <= 3.0 * self.mean_se
    }
    pub fn var_rel_err(&self) -> f64 {
        (self.var - self.want_var).abs() / self.want_var
    }
    pub fn passes(&self) -> bool {
        self.mean_ok() && self.var_rel_err() <= 0.02
    }
}

/// Variance of the interpolant at `s` on the unit Gaussian channel
/// (`x0 ~ N(0,1)`, `x1 = x0 + n`), with far endpoint `x1/2` for the aligned
/// bridge and `x1` for the Schrödinger bridge. The mean is zero.
pub fn gauss_marginal_variance(spec: &ScheduleSpec, s: f64) -> f64 {
    match spec.kind() {
        BridgeKind::Nadb => {
            let sa = pow_time(s, spec.alpha());
            let g = spec.k() * s * (1.0 - s);
            (1.0 - 0.5 * sa).powi(2) + 0.25 * sa * sa + g * g
        }
        BridgeKind::I2sb => {
            let (_, w1, g) = spec.i2sb_coefficients(s).unwrap();
            1.0 + w1 * w1 + g * g
        }
    }
}

/// Draw `n` scalar states at `t` from the interpolant, take one oracle step
/// to `s` and compare the empirical moments with the marginal at `s`.
pub fn single_step_marginal(spec: &ScheduleSpec, s: f64, t: f64, step: Step, n: usize, seed: u64) -> MarginalCheck {
    let oracle = AnalyticEps::new(spec.clone());
    let mut r = rng::stream(seed, 0);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n {
        let x0 = rng::normal(&mut r);
        let x1 = x0 + rng::normal(&mut r);
        let far = match spec.kind() {
            BridgeKind::Nadb => 0.5 * x1,
            BridgeKind::I2sb => x1,
        };
        let zt = rng::normal(&mut r);
        let zs = rng::normal(&mut r);
        let b = make_bridge_sample(spec, t, &[x0], &[x1], &[far], &[zt]).unwrap();
        let eps = oracle.predict_eps(&b.xt, t, Some(&[x0])).unwrap();
        let xs = match step {
            Step::One => stage1_step(spec, s, t, &b.xt, &eps, &[zs]),
            Step::Two { w } => stage2_step(spec, s, t, &b.xt, &eps, &[far], w, &[zs]),
            Step::Bridge => i2sb_reverse_step(spec, s, t, &b.xt, &eps, &[zs]),
        }
        .unwrap()[0];
        sum += xs;
        sum2 += xs * xs;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 - nf * mean * mean) / (nf - 1.0);
    MarginalCheck {
        mean,
        mean_se: (var / nf).sqrt(),
        var,
        want_var: gauss_marginal_variance(spec, s),
    }
}

/// `[8,16,16,4]` with a 4-wide time embedding (4 data inputs, 4 outputs)
/// and random biases.
pub fn random_net(seed: u64, act: Activation) -> RegressorParams {
    let mut r = rng::stream(seed, 0);
    let mut p = RegressorParams::init(&[8, 16, 16, 4], 4, act, &mut r).unwrap();
    for l in p.layers_mut() {
        for b in &mut l.biases {
            *b = rng::uniform(&mut r, -0.5, 0.5);
        }
    }
    p
}

fn param_mut(p: &mut RegressorParams, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let l = &mut p.layers_mut()[layer];
    if bias {
        &mut l.biases[i]
    } else {
        &mut l.weights[i]
    }
}

/// Worst relative disagreement between reverse-mode gradients and central
/// differences (step 1e-5, relative to max(|fd|, |analytic|, 1e-6)) over `cases` random nets.
pub fn max_gradient_error(cases: u64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Silu } else { Activation::Tanh };
        let mut p = random_net(100 + case, act);
        let mut r = rng::stream(200 + case, 1);
        let x = rng::normal_vec(&mut r, 4);
        let t = rng::uniform(&mut r, 0.0, 1.0);
        let g = rng::normal_vec(&mut r, 4);
        let objective = |p: &RegressorParams| -> f64 {
            let y = p.predict(&x, Some(t)).unwrap();
            y.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = p.forward(&x, Some(t)).unwrap();
        let grads = p.backward(&tape, &g).unwrap();
        for li in 0..p.layers().len() {
            for bias in [false, true] {
                let analytic = if bias { &grads.biases[li] } else { &grads.weights[li] };
                for (i, &an) in analytic.iter().enumerate() {
                    let orig = *param_mut(&mut p, li, bias, i);
                    *param_mut(&mut p, li, bias, i) = orig + h;
                    let up = objective(&p);
                    *param_mut(&mut p, li, bias, i) = orig - h;
                    let down = objective(&p);
                    *param_mut(&mut p, li, bias, i) = orig;
                    let fd = (up - down) / (2.0 * h);
                    let scale = fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max((fd - an).abs() / scale);
                }
            }
        }
    }
    worst
}
