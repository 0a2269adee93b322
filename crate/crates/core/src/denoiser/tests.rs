use super::*;
use crate::rng::rng_from;

fn small_cfg(features: usize) -> DenoiserConfig {
    DenoiserConfig { hidden_width: 8, knn_k: 4, num_blocks: 2, time_dim: 8, feature_width: features }
}

fn random_cloud(n: usize, f: usize, seed: u64) -> PointCloud {
    let mut rng = rng_from(seed);
    let coords = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let feats = (0..n * f).map(|_| rng.random_range(0.0..1.0)).collect();
    PointCloud::with_features(coords, feats, f).unwrap()
}

/// Every parameter (head included) drawn at random, so all gradients are live.
fn random_params(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams {
    let mut p = DenoiserParams::zeros(*cfg).unwrap();
    let mut rng = rng_from(seed);
    for v in &mut p.values {
        *v = rng.random_range(-0.5..0.5);
    }
    p
}

#[test]
fn time_embedding() {
    assert_eq!(time_embed(0.0, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    assert!(time_embed(0.5, 5).is_err());
    let grid: Vec<Vec<f64>> = (1..10).map(|i| time_embed(i as f64 / 10.0, 64).unwrap()).collect();
    for e in &grid {
        for j in 0..32 {
            assert!((e[j] * e[j] + e[j + 32] * e[j + 32] - 1.0).abs() < 1e-12);
        }
    }
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let d: f64 = grid[a].iter().zip(&grid[b]).map(|(x, y)| (x - y).abs()).sum();
            assert!(d > 1e-3);
        }
    }
}

#[test]
fn config_validation() {
    let mut c = DenoiserConfig::default();
    c.time_dim = 7;
    assert!(c.validate().is_err());
    c.time_dim = 8;
    c.knn_k = 0;
    assert!(c.validate().is_err());
}

#[test]
fn parameter_count_matches_enumeration() {
    for cfg in [small_cfg(0), small_cfg(5), DenoiserConfig::default()] {
        // independent enumeration: count every scalar a forward pass touches
        let w = cfg.hidden_width;
        let mut count = 0;
        let mut c = 3 + cfg.feature_width;
        for _ in 0..cfg.num_blocks {
            count += c * w * 2 + 3 * w + w; // edge1: centre, neighbour diff, offset, bias
            count += w * w + w; // edge2
            count += cfg.time_dim * w + w; // time projection
            c = w;
        }
        count += w * w + w + w * 3 + w * 3 + 3;
        assert_eq!(parameter_count(&cfg), count);
        assert_eq!(init_params(&cfg, 0).unwrap().len(), count);
        assert_eq!(Layout::new(&cfg).total(), count);
    }
}

#[test]
fn init_is_deterministic_and_predicts_zero() {
    let cfg = small_cfg(2);
    let a = init_params(&cfg, 3).unwrap();
    assert_eq!(a, init_params(&cfg, 3).unwrap());
    assert_ne!(a, init_params(&cfg, 4).unwrap());
    let x = random_cloud(20, 2, 1);
    assert!(forward(&a, &x, 0.3).unwrap().iter().all(|p| *p == [0.0; 3]));
    // biases zero, weights bounded by the Glorot limit
    let e = a.layout().get("block0.edge1.weight");
    let lim = (6.0 / (e.rows + e.cols) as f64).sqrt();
    assert!(a.values[e.offset..e.offset + e.len()].iter().all(|v| v.abs() <= lim));
    assert!(a.slice("block1.edge2.bias").iter().all(|v| *v == 0.0));
}

#[test]
fn feature_width_mismatch() {
    let p = init_params(&small_cfg(3), 0).unwrap();
    let x = random_cloud(10, 2, 0);
    assert!(matches!(forward(&p, &x, 0.5), Err(Error::FeatureWidth { expected: 3, actual: 2 })));
}

#[test]
fn permutation_equivariance_is_exact() {
    let cfg = small_cfg(2);
    let p = random_params(&cfg, 5);
    let x = random_cloud(40, 2, 6);
    let base = forward(&p, &x, 0.4).unwrap();
    let mut rng = rng_from(7);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..x.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let out = forward(&p, &x.select(&perm), 0.4).unwrap();
        for (k, &src) in perm.iter().enumerate() {
            assert_eq!(out[k], base[src]);
        }
    }
}

#[test]
fn translation_then_recentering_is_bitwise_identical() {
    // dyadic coordinates and a power-of-two count keep centring exact
    let mut rng = rng_from(8);
    let coords: Vec<Vec3> = (0..16)
        .map(|_| {
            [
                rng.random_range(-512i32..512) as f64 / 1024.0,
                rng.random_range(-512i32..512) as f64 / 1024.0,
                rng.random_range(-512i32..512) as f64 / 1024.0,
            ]
        })
        .collect();
    let center = |pts: &[Vec3]| {
        let c = crate::cloud::centroid(pts);
        PointCloud::new(pts.iter().map(|p| crate::cloud::sub(*p, c)).collect()).unwrap()
    };
    let shifted: Vec<Vec3> = coords.iter().map(|p| [p[0] + 3.0, p[1] - 5.0, p[2] + 0.5]).collect();
    let p = random_params(&small_cfg(0), 9);
    let a = forward(&p, &center(&coords), 0.7).unwrap();
    let b = forward(&p, &center(&shifted), 0.7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn features_enter_only_through_their_weights() {
    let with = small_cfg(3);
    let without = small_cfg(0);
    let x = random_cloud(24, 0, 10);
    let xf = PointCloud::with_features(x.coords().to_vec(), x.coords().iter().flatten().copied().collect(), 3).unwrap();
    let mut p3 = random_params(&with, 11);
    let base = forward(&p3, &xf, 0.2).unwrap();

    // zero the feature rows of block0.edge1 (rows 3..6 of the centre part and of the difference part)
    let e = p3.layout().get("block0.edge1.weight").clone();
    let c = 6;
    let w = with.hidden_width;
    for part in [0, c] {
        for row in part + 3..part + 6 {
            for col in 0..w {
                p3.values[e.offset + row * w + col] = 0.0;
            }
        }
    }
    let masked = forward(&p3, &xf, 0.2).unwrap();
    assert_ne!(base, masked);

    // the masked network equals a feature-free network with the remaining weights
    let mut p0 = DenoiserParams::zeros(without).unwrap();
    for en in p0.layout().entries().to_vec() {
        let src = p3.layout().get(&en.name).clone();
        if en.name == "block0.edge1.weight" {
            let keep: Vec<usize> = (0..3).chain(c..c + 3).chain(2 * c..2 * c + 3).collect();
            for (dst_row, &src_row) in keep.iter().enumerate() {
                for col in 0..w {
                    p0.values[en.offset + dst_row * w + col] = p3.values[src.offset + src_row * w + col];
                }
            }
        } else {
            p0.values[en.offset..en.offset + en.len()].copy_from_slice(&p3.values[src.offset..src.offset + src.len()]);
        }
    }
    let plain = forward(&p0, &x, 0.2).unwrap();
    for (a, b) in plain.iter().zip(&masked) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_minimum_and_quadratic_scaling() {
    let cfg = small_cfg(0);
    let p = init_params(&cfg, 1).unwrap();
    let x = random_cloud(16, 0, 2);
    let (l, g) = forward_backward(&p, &x, 0.5, &vec![[0.0; 3]; 16]).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|v| *v == 0.0));
    let mut rng = rng_from(3);
    let target: Vec<Vec3> = (0..16).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let doubled: Vec<Vec3> = target.iter().map(|t| [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]]).collect();
    let (l1, _) = forward_backward(&p, &x, 0.5, &target).unwrap();
    let (l2, _) = forward_backward(&p, &x, 0.5, &doubled).unwrap();
    assert!((l2 - 4.0 * l1).abs() <= 1e-14 * l2);
    assert!(forward_backward(&p, &x, 0.5, &target[..3]).is_err());
}

pub(crate) fn finite_difference_check(seed: u64) -> (usize, f64) {
    let cfg = small_cfg(0);
    let mut p = random_params(&cfg, seed);
    let x = random_cloud(16, 0, seed + 100);
    let mut rng = rng_from(seed + 200);
    let target: Vec<Vec3> = (0..16).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let t = 0.37;
    let (_, grads) = forward_backward(&p, &x, t, &target).unwrap();
    let h = 1e-5;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p.values[i];
        p.values[i] = orig + h;
        let (lp, _) = forward_backward(&p, &x, t, &target).unwrap();
        p.values[i] = orig - h;
        let (lm, _) = forward_backward(&p, &x, t, &target).unwrap();
        p.values[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - grads[i]).abs();
        let rel = err / fd.abs().max(grads[i].abs());
        if err > 1e-8 && rel > 1e-4 {
            failures += 1;
        }
        if err > 1e-8 {
            worst = worst.max(rel);
        }
    }
    (failures, worst)
}

#[test]
fn gradients_match_finite_differences() {
    let (failures, worst) = finite_difference_check(1);
    assert_eq!(failures, 0, "worst relative error {worst}");
}
