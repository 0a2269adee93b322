//! Reverse bridge sampling over overlapping patches.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{draw_noise, BridgeSchedule};
use crate::cloud::{dist2, fps_points, scale, sub, PointCloud, Vec3};
use crate::denoiser::{forward, DenoiserParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};
use crate::spatial::{SpatialIndex, DEFAULT_LEAF_SIZE};

fn default_max_points() -> usize {
    1024
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub radius: f64,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    /// Centered patch coordinates are divided by this before entering the
    /// network and multiplied back afterwards.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PatchConfig {
    pub fn new(radius: f64) -> Self {
        PatchConfig { radius, max_points: default_max_points(), scale: default_scale(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::invalid(format!("patch radius must be positive, got {}", self.radius)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("patch scale must be positive, got {}", self.scale)));
        }
        if self.max_points == 0 {
            return Err(Error::invalid("max_points must be at least 1"));
        }
        Ok(())
    }
}

/// A neighbourhood of the parent cloud in network coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub indices: Vec<usize>,
    /// `(parent − centroid) / scale`, with the parent's features.
    pub cloud: PointCloud,
    pub centroid: Vec3,
    pub scale: f64,
    origin: Vec<Vec3>,
}

impl Patch {
    pub fn new(parent: &PointCloud, indices: Vec<usize>, scale_by: f64) -> Result<Self> {
        let sel = parent.select(&indices);
        let centroid = sel.centroid();
        let origin = sel.coords().to_vec();
        let cloud = sel.with_coords(origin.iter().map(|p| scale(sub(*p, centroid), 1.0 / scale_by)).collect())?;
        Ok(Patch { indices, cloud, centroid, scale: scale_by, origin })
    }

    pub fn coords(&self) -> &[Vec3] {
        self.cloud.coords()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Maps patch-frame points back to the parent frame as the parent
    /// coordinate plus the scaled displacement, so a point left where it
    /// started returns its parent coordinate bit for bit.
    pub fn decenter(&self, local: &[Vec3]) -> Result<Vec<Vec3>> {
        if local.len() != self.len() {
            return Err(Error::SizeMismatch(self.len(), local.len()));
        }
        Ok(local
            .iter()
            .zip(self.coords())
            .zip(&self.origin)
            .map(|((l, c), o)| {
                let d = sub(*l, *c);
                [o[0] + self.scale * d[0], o[1] + self.scale * d[1], o[2] + self.scale * d[2]]
            })
            .collect())
    }
}

/// Covers the cloud with radius balls around farthest-point centers, then
/// adds balls around any point dropped by subsampling, in index order.
pub fn extract_patches(cloud: &PointCloud, cfg: &PatchConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    let pts = cloud.coords();
    let n = pts.len();
    let r2 = cfg.radius * cfg.radius;
    let index = SpatialIndex::build(pts, DEFAULT_LEAF_SIZE)?;

    let mut centers = Vec::new();
    let mut mind = vec![f64::INFINITY; n];
    let mut next = extreme_point(pts, cfg.seed);
    loop {
        centers.push(next);
        let c = pts[next];
        let mut far = (0, f64::NEG_INFINITY);
        for (i, p) in pts.iter().enumerate() {
            mind[i] = mind[i].min(dist2(*p, c));
            if mind[i] > far.1 {
                far = (i, mind[i]);
            }
        }
        if far.1 <= r2 {
            break;
        }
        next = far.0;
    }

    let mut covered = vec![false; n];
    let mut patches = Vec::with_capacity(centers.len());
    let make = |center: usize, covered: &mut [bool]| -> Result<Patch> {
        let idx = ball(&index, pts, center, cfg)?;
        for &i in &idx {
            covered[i] = true;
        }
        Patch::new(cloud, idx, cfg.scale)
    };
    for &c in &centers {
        patches.push(make(c, &mut covered)?);
    }
    for i in 0..n {
        if !covered[i] {
            patches.push(make(i, &mut covered)?);
        }
    }
    Ok(patches)
}

// Farthest point along a seeded random direction, lowest index on ties.
// Depends on the point set and the seed, not on storage order.
fn extreme_point(pts: &[Vec3], seed: u64) -> usize {
    let u = draw_noise(1, &mut rng_from(derive_seed(seed, &[0x7a7c])))[0];
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in pts.iter().enumerate() {
        let d = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

// radius ball around `center`, FPS-thinned from the center when too large
fn ball(index: &SpatialIndex, pts: &[Vec3], center: usize, cfg: &PatchConfig) -> Result<Vec<usize>> {
    let mut idx = index.radius_query(pts[center], cfg.radius)?;
    if idx.len() > cfg.max_points {
        let local: Vec<Vec3> = idx.iter().map(|&i| pts[i]).collect();
        let start = idx.binary_search(&center).map_err(|_| Error::invalid("center missing from its own ball"))?;
        let keep = fps_points(&local, cfg.max_points, start)?;
        let mut thinned: Vec<usize> = keep.into_iter().map(|k| idx[k]).collect();
        thinned.sort_unstable();
        idx = thinned;
    }
    Ok(idx)
}

/// Runs the reverse bridge from `t = 1` to `0` on one patch and returns the
/// result in the parent frame.
pub fn denoise_patch<R: Rng + ?Sized>(
    params: &DenoiserParams,
    s: &BridgeSchedule,
    patch: &Patch,
    steps: usize,
    stochastic: bool,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    if steps < 1 {
        return Err(Error::invalid("denoising needs at least one step"));
    }
    check_features(params, &patch.cloud)?;
    let grid = crate::bridge::timestep_grid(steps);
    let mut x = patch.cloud.clone();
    for w in grid.windows(2) {
        let (t_hi, t_lo) = (w[0], w[1]);
        let eps = forward(params, &x, t_hi)?;
        let sigma = s.sigma(t_hi)?;
        let x0_hat: Vec<Vec3> = x
            .coords()
            .iter()
            .zip(&eps)
            .map(|(p, e)| [p[0] - sigma * e[0], p[1] - sigma * e[1], p[2] - sigma * e[2]])
            .collect();
        let next = s.ddpm_step(x.coords(), &x0_hat, t_hi, t_lo, stochastic, rng)?;
        x = x.with_coords(next)?;
    }
    patch.decenter(x.coords())
}

fn check_features(params: &DenoiserParams, cloud: &PointCloud) -> Result<()> {
    let expected = params.config.feature_width;
    if cloud.feature_width() != expected {
        return Err(Error::FeatureWidth { expected, actual: cloud.feature_width() });
    }
    Ok(())
}

/// Per-point mean of all patch predictions, visited in (patch, row) order.
/// The mean is taken as the first prediction plus the mean offset of the
/// others from it, so identical predictions reproduce exactly.
pub fn merge_patches(parent: &PointCloud, patches: &[Patch], outputs: &[Vec<Vec3>]) -> Result<PointCloud> {
    if patches.len() != outputs.len() {
        return Err(Error::SizeMismatch(patches.len(), outputs.len()));
    }
    let n = parent.len();
    let mut first: Vec<Option<Vec3>> = vec![None; n];
    let mut offset = vec![[0.0; 3]; n];
    let mut count = vec![0usize; n];
    for (patch, out) in patches.iter().zip(outputs) {
        if out.len() != patch.len() {
            return Err(Error::SizeMismatch(patch.len(), out.len()));
        }
        for (&i, p) in patch.indices.iter().zip(out) {
            if i >= n {
                return Err(Error::invalid(format!("patch index {i} outside a cloud of {n} points")));
            }
            match first[i] {
                None => first[i] = Some(*p),
                Some(f) => {
                    for a in 0..3 {
                        offset[i][a] += p[a] - f[a];
                    }
                }
            }
            count[i] += 1;
        }
    }
    let coords = (0..n)
        .map(|i| {
            let f = first[i].ok_or_else(|| Error::invalid(format!("point {i} is not covered by any patch")))?;
            let m = count[i] as f64;
            Ok([f[0] + offset[i][0] / m, f[1] + offset[i][1] / m, f[2] + offset[i][2] / m])
        })
        .collect::<Result<Vec<_>>>()?;
    parent.with_coords(coords)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub cloud: PointCloud,
    pub patches: usize,
}

/// Extract, denoise every patch with its own stream keyed by
/// `(seed, patch index)`, and merge. The result is independent of the
/// number of worker threads.
pub fn denoise_cloud(
    params: &DenoiserParams,
    s: &BridgeSchedule,
    cloud: &PointCloud,
    patch_cfg: &PatchConfig,
    steps: usize,
    stochastic: bool,
    seed: u64,
) -> Result<DenoiseOutput> {
    check_features(params, cloud)?;
    let patches = extract_patches(cloud, patch_cfg)?;
    let outputs = patches
        .par_iter()
        .enumerate()
        .map(|(k, p)| denoise_patch(params, s, p, steps, stochastic, &mut stream(seed, &[0xde, k as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(DenoiseOutput { cloud: merge_patches(cloud, &patches, &outputs)?, patches: patches.len() })
}
