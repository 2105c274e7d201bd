//! Synthetic paired-distribution tasks.
//!
//! Each task pairs a clean sample `x0` with a degraded `x1` produced by an
//! explicit operator, so the coupling is known exactly.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub const DATASET_MAGIC: &[u8; 4] = b"BRDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlurKernel {
    /// 3×3 box filter.
    Uniform3,
    /// `[1 2 1]ᵀ[1 2 1]/16`.
    Gaussian3,
}

impl BlurKernel {
    pub fn taps(self) -> [[f64; 3]; 3] {
        match self {
            BlurKernel::Uniform3 => [[1.0 / 9.0; 3]; 3],
            BlurKernel::Gaussian3 => {
                let r = [1.0, 2.0, 1.0];
                let mut k = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        k[i][j] = r[i] * r[j] / 16.0;
                    }
                }
                k
            }
        }
    }
}

impl std::str::FromStr for BlurKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform3" | "uniform" => Ok(BlurKernel::Uniform3),
            "gaussian3" | "gaussian" => Ok(BlurKernel::Gaussian3),
            other => Err(Error::Config(format!("unknown blur kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    GaussChannel { dim: usize, noise_sigma: f64 },
    PatchBlur { side: usize, kernel: BlurKernel },
    PatchQuantize { side: usize, levels: usize },
    Clusters2d { modes: usize },
}

/// A named generator of `(x0, x1)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub name: String,
    pub dim: usize,
    pub task: Task,
    pub description: String,
}

/// Radius of the mode ring for `x1` in the cluster task.
pub const CLUSTER_SOURCE_RADIUS: f64 = 2.0;
/// Radius of the paired target ring.
pub const CLUSTER_TARGET_RADIUS: f64 = 1.0;
/// Per-mode isotropic standard deviation.
pub const CLUSTER_SPREAD: f64 = 0.1;

pub fn make_gauss_channel(dim: usize, noise_sigma: f64) -> Result<PairedDataset> {
    if dim == 0 {
        return Err(Error::InvalidInput("dim must be positive".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    Ok(PairedDataset {
        name: "gauss".into(),
        dim,
        task: Task::GaussChannel { dim, noise_sigma },
        description: format!("x0 ~ N(0, I_{dim}), x1 = x0 + {noise_sigma}·N(0, I)"),
    })
}

pub fn make_patch_blur(patch_side: usize, kernel: BlurKernel) -> Result<PairedDataset> {
    check_side(patch_side)?;
    Ok(PairedDataset {
        name: "blur".into(),
        dim: patch_side * patch_side,
        task: Task::PatchBlur {
            side: patch_side,
            kernel,
        },
        description: format!("{patch_side}x{patch_side} rectangle patches, 3x3 {kernel:?} blur, symmetric padding"),
    })
}

pub fn make_patch_quantize(patch_side: usize, levels: usize) -> Result<PairedDataset> {
    check_side(patch_side)?;
    if levels < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 levels, got {levels}")));
    }
    Ok(PairedDataset {
        name: "quantize".into(),
        dim: patch_side * patch_side,
        task: Task::PatchQuantize {
            side: patch_side,
            levels,
        },
        description: format!("{patch_side}x{patch_side} rectangle patches quantized to {levels} levels"),
    })
}

/// Mode `m` of `x1` sits at angle `2πm/modes` on a ring of radius 2; its
/// paired `x0` mode sits half a sector further round on a ring of radius 1.
pub fn make_2d_clusters(modes: usize) -> Result<PairedDataset> {
    if modes == 0 {
        return Err(Error::InvalidInput("need at least one mode".into()));
    }
    Ok(PairedDataset {
        name: "clusters".into(),
        dim: 2,
        task: Task::Clusters2d { modes },
        description: format!("{modes}-mode ring translation"),
    })
}

fn check_side(side: usize) -> Result<()> {
    if (4..=32).contains(&side) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("patch side {side} outside [4, 32]")))
    }
}

/// Centres `(source, target)` of cluster mode `m`.
pub fn cluster_centers(modes: usize, m: usize) -> ([f64; 2], [f64; 2]) {
    if modes == 1 {
        return ([0.0, 0.0], [0.0, 0.0]);
    }
    let tau = std::f64::consts::TAU;
    let a1 = tau * m as f64 / modes as f64;
    let a0 = a1 + 0.5 * tau / modes as f64;
    (
        [CLUSTER_SOURCE_RADIUS * a1.cos(), CLUSTER_SOURCE_RADIUS * a1.sin()],
        [CLUSTER_TARGET_RADIUS * a0.cos(), CLUSTER_TARGET_RADIUS * a0.sin()],
    )
}

/// Materialised pairs, stored flat and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    /// Mode labels for the cluster task.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(dim: usize, x0: Vec<f64>, x1: Vec<f64>) -> Result<Self> {
        if dim == 0 || x0.len() != x1.len() || !x0.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput("inconsistent dataset buffers".into()));
        }
        Ok(Self {
            dim,
            x0,
            x1,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
    pub fn x0(&self, i: usize) -> &[f64] {
        &self.x0[i * self.dim..(i + 1) * self.dim]
    }
    pub fn x1(&self, i: usize) -> &[f64] {
        &self.x1[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            for v in self.x0(i).iter().chain(self.x1(i)) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 16 * self.x0.len());
        self.write_to(&mut buf).expect("Vec write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..4] != DATASET_MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err("zero dimension".into());
        }
        let body = &bytes[20..];
        let expect = count
            .checked_mul(2 * dim * 8)
            .ok_or_else(|| "size overflow".to_string())?;
        if body.len() != expect {
            return Err(format!("expected {expect} payload bytes, found {}", body.len()));
        }
        let mut x0 = Vec::with_capacity(count * dim);
        let mut x1 = Vec::with_capacity(count * dim);
        for (r, rec) in body.chunks_exact(16 * dim).enumerate() {
            let _ = r;
            let vals = rec.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
            for (j, v) in vals.enumerate() {
                if j < dim {
                    x0.push(v);
                } else {
                    x1.push(v);
                }
            }
        }
        Dataset::new(dim, x0, x1).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// CSV with columns `index, x0_0.., x1_0..`.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = vec!["index".to_string()];
        header.extend((0..self.dim).map(|j| format!("x0_{j}")));
        header.extend((0..self.dim).map(|j| format!("x1_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![i.to_string()];
            row.extend(self.x0(i).iter().chain(self.x1(i)).map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl PairedDataset {
    /// Draw one pair, consuming randomness from `rng`.
    pub fn draw(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>, Option<usize>) {
        match self.task {
            Task::GaussChannel { dim, noise_sigma } => {
                let x0 = rng::normal_vec(rng, dim);
                let x1 = x0.iter().map(|v| v + noise_sigma * rng::normal(rng)).collect();
                (x0, x1, None)
            }
            Task::PatchBlur { side, kernel } => {
                let x0 = random_patch(side, rng);
                let x1 = convolve3(&x0, side, &kernel.taps());
                (x0, x1, None)
            }
            Task::PatchQuantize { side, levels } => {
                let x0 = random_patch(side, rng);
                let x1 = quantize(&x0, levels);
                (x0, x1, None)
            }
            Task::Clusters2d { modes } => {
                let m = rng.random_range(0..modes);
                let (c1, c0) = cluster_centers(modes, m);
                let x1 = vec![
                    c1[0] + CLUSTER_SPREAD * rng::normal(rng),
                    c1[1] + CLUSTER_SPREAD * rng::normal(rng),
                ];
                let x0 = vec![
                    c0[0] + CLUSTER_SPREAD * rng::normal(rng),
                    c0[1] + CLUSTER_SPREAD * rng::normal(rng),
                ];
                (x0, x1, Some(m))
            }
        }
    }

    /// `count` pairs from the stream `(seed, stream_id)`.
    pub fn sample(&self, seed: u64, stream_id: u64, count: usize) -> Dataset {
        let mut rng = rng::stream(seed, stream_id);
        let mut x0 = Vec::with_capacity(count * self.dim);
        let mut x1 = Vec::with_capacity(count * self.dim);
        let mut labels = Vec::new();
        for _ in 0..count {
            let (a, b, l) = self.draw(&mut rng);
            x0.extend(a);
            x1.extend(b);
            if let Some(l) = l {
                labels.push(l);
            }
        }
        Dataset {
            dim: self.dim,
            x0,
            x1,
            labels: (!labels.is_empty()).then_some(labels),
        }
    }
}

/// Piecewise-constant patch: the clamped sum of 2–4 random axis-aligned
/// rectangles with amplitudes in `[0,1]`.
pub fn random_patch(side: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut p = vec![0.0; side * side];
    let n_rect = rng.random_range(2..=4);
    for _ in 0..n_rect {
        let r0 = rng.random_range(0..side);
        let r1 = rng.random_range(r0..side) + 1;
        let c0 = rng.random_range(0..side);
        let c1 = rng.random_range(c0..side) + 1;
        let amp: f64 = rng.random();
        for r in r0..r1 {
            for c in c0..c1 {
                p[r * side + c] += amp;
            }
        }
    }
    for v in &mut p {
        *v = v.min(1.0);
    }
    p
}

/// 3×3 convolution with half-sample symmetric padding
/// (`… b a | a b c … x y | y x …`). For symmetric kernels that sum to one
/// this padding preserves the patch mean.
pub fn convolve3(x: &[f64], side: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let reflect = |i: isize| -> usize {
        let n = side as isize;
        let j = if i < 0 {
            -i - 1
        } else if i >= n {
            2 * n - i - 1
        } else {
            i
        };
        j as usize
    };
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for (dr, krow) in k.iter().enumerate() {
                let rr = reflect(r as isize + dr as isize - 1);
                for (dc, &w) in krow.iter().enumerate() {
                    let cc = reflect(c as isize + dc as isize - 1);
                    acc += w * x[rr * side + cc];
                }
            }
            out[r * side + c] = acc;
        }
    }
    out
}

pub fn quantize(x: &[f64], levels: usize) -> Vec<f64> {
    let q = (levels - 1) as f64;
    x.iter().map(|&v| (v * q).round() / q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_channel_without_noise_is_identity() {
        let ds = make_gauss_channel(3, 0.0).unwrap().sample(1, 0, 50);
        assert_eq!(ds.x0, ds.x1);
    }

    #[test]
    fn constant_patch_survives_blur() {
        let x = vec![0.37; 64];
        for k in [BlurKernel::Uniform3, BlurKernel::Gaussian3] {
            let y = convolve3(&x, 8, &k.taps());
            for v in y {
                assert!((v - 0.37).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn impulse_response_of_box_filter() {
        let mut x = vec![0.0; 64];
        x[3 * 8 + 4] = 1.0;
        let y = convolve3(&x, 8, &BlurKernel::Uniform3.taps());
        for r in 0..8 {
            for c in 0..8 {
                let near = (r as isize - 3).abs() <= 1 && (c as isize - 4).abs() <= 1;
                let want = if near { 1.0 / 9.0 } else { 0.0 };
                assert_eq!(y[r * 8 + c], want);
            }
        }
    }

    #[test]
    fn quantize_examples() {
        let ds = make_patch_quantize(4, 2).unwrap().sample(3, 0, 100);
        assert!(ds.x1.iter().all(|&v| v == 0.0 || v == 1.0));
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(quantize(&grid, 5), grid);
    }

    #[test]
    fn bad_parameters() {
        assert!(make_patch_blur(3, BlurKernel::Uniform3).is_err());
        assert!(make_patch_blur(33, BlurKernel::Uniform3).is_err());
        assert!(make_patch_quantize(8, 1).is_err());
        assert!(make_gauss_channel(1, -1.0).is_err());
        assert!(make_2d_clusters(0).is_err());
    }

    #[test]
    fn single_mode_clusters_are_gaussian_pairs() {
        let ds = make_2d_clusters(1).unwrap().sample(1, 0, 10);
        assert!(ds.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn patches_in_unit_range() {
        let ds = make_patch_blur(8, BlurKernel::Gaussian3).unwrap().sample(2, 0, 200);
        assert!(ds.x0.iter().chain(&ds.x1).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn brds_rejects_truncation() {
        let ds = make_gauss_channel(2, 1.0).unwrap().sample(1, 0, 3);
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[..4], b"BRDS");
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut ds2 = Dataset::from_bytes(&bytes).unwrap();
        ds2.labels = None;
        assert_eq!(ds2.x0, ds.x0);
    }

    #[test]
    fn csv_export_shape() {
        let ds = make_gauss_channel(2, 1.0).unwrap().sample(1, 0, 3);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("index,x0_0,x0_1,x1_0,x1_1"));
    }
}
