//! Monte-Carlo checks of the synthetic paired tasks.

use bridgelab::rng::domain;
use bridgelab::toy::{self, cluster_centers, BlurKernel, Dataset};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn gauss_channel_moments_and_posterior_slope() {
    let ds = toy::make_gauss_channel(1, 1.0).unwrap().sample(11, domain::DATA_TRAIN, 100_000);
    let (m0, m1) = (mean(&ds.x0), mean(&ds.x1));
    let var1 = ds.x1.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / ds.len() as f64;
    assert!((var1 - 2.0).abs() < 0.03, "var(x1) = {var1}");
    // Least-squares slope of x0 on x1 is the posterior-mean slope 1/(1+σ²).
    let cov = ds
        .x0
        .iter()
        .zip(&ds.x1)
        .map(|(a, b)| (a - m0) * (b - m1))
        .sum::<f64>()
        / ds.len() as f64;
    let slope = cov / var1;
    assert!((slope - 0.5).abs() < 0.01, "slope {slope}");
}

#[test]
fn blur_preserves_patch_mean() {
    for kernel in [BlurKernel::Uniform3, BlurKernel::Gaussian3] {
        let ds = toy::make_patch_blur(8, kernel).unwrap().sample(5, domain::DATA_TRAIN, 1000);
        for i in 0..ds.len() {
            assert!((mean(ds.x0(i)) - mean(ds.x1(i))).abs() < 1e-10);
        }
    }
}

#[test]
fn quantization_error_is_bounded() {
    for levels in [2, 4, 9] {
        let ds = toy::make_patch_quantize(8, levels).unwrap().sample(6, domain::DATA_TRAIN, 10_000);
        let bound = 1.0 / (2.0 * (levels - 1) as f64) + 1e-12;
        let worst = ds
            .x0
            .iter()
            .zip(&ds.x1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= bound, "levels {levels}: {worst}");
        if levels == 2 {
            assert!(ds.x1.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}

#[test]
fn cluster_centroids_and_labels() {
    let modes = 4;
    let ds = toy::make_2d_clusters(modes).unwrap().sample(7, domain::DATA_TRAIN, 100_000);
    let labels = ds.labels.clone().unwrap();
    for m in 0..modes {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == m).collect();
        let (c1, c0) = cluster_centers(modes, m);
        let n = rows.len() as f64;
        for axis in 0..2 {
            let e0 = rows.iter().map(|&i| ds.x0(i)[axis]).sum::<f64>() / n;
            let e1 = rows.iter().map(|&i| ds.x1(i)[axis]).sum::<f64>() / n;
            assert!((e0 - c0[axis]).abs() < 0.05);
            assert!((e1 - c1[axis]).abs() < 0.05);
        }
        // Each pair stays within its own mode.
        for &i in rows.iter().take(200) {
            let d0 = ((ds.x0(i)[0] - c0[0]).powi(2) + (ds.x0(i)[1] - c0[1]).powi(2)).sqrt();
            let d1 = ((ds.x1(i)[0] - c1[0]).powi(2) + (ds.x1(i)[1] - c1[1]).powi(2)).sqrt();
            assert!(d0 < 0.6 && d1 < 0.6);
        }
    }
}

#[test]
fn brds_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy::make_patch_blur(4, BlurKernel::Gaussian3).unwrap().sample(1, domain::DATA_TEST, 9);
    let path = dir.path().join("d.brds");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.x0, ds.x0);
    assert_eq!(back.x1, ds.x1);
    assert_eq!(back.dim, 16);
}

#[test]
fn sampling_is_seeded() {
    let task = toy::make_patch_quantize(8, 4).unwrap();
    assert_eq!(task.sample(9, domain::DATA_TRAIN, 20), task.sample(9, domain::DATA_TRAIN, 20));
    assert_ne!(task.sample(9, domain::DATA_TRAIN, 20), task.sample(9, domain::DATA_TEST, 20));
}
