//! Bridge training: patch sampling from aligned pairs, the noise-prediction
//! regression, and Adam.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{assignment_cost, Assignment};
use crate::bridge::{draw_noise, BridgeSchedule};
use crate::cloud::{fps_points, scale, sub, PointCloud, Vec3};
use crate::denoiser::{forward_backward, init_params, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};
use crate::spatial::{SpatialIndex, DEFAULT_LEAF_SIZE};

/// A noisy cloud and the clean cloud reordered so row `i` of each
/// describes the same surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub noisy: PointCloud,
    pub clean_aligned: PointCloud,
    pub assignment: Assignment,
    pub source_id: String,
}

impl PairedSample {
    pub fn new(noisy: PointCloud, clean_aligned: PointCloud, assignment: Assignment, source_id: String) -> Result<Self> {
        if noisy.len() != clean_aligned.len() {
            return Err(Error::SizeMismatch(noisy.len(), clean_aligned.len()));
        }
        if assignment.perm.len() != noisy.len() || !assignment.is_bijection() {
            return Err(Error::invalid(format!("pair '{source_id}' has an invalid assignment")));
        }
        Ok(PairedSample { noisy, clean_aligned, assignment, source_id })
    }

    /// The same pair with the clean rows randomly permuted, which discards
    /// the alignment. Used for ablations.
    pub fn shuffled(&self, seed: u64) -> Result<PairedSample> {
        let n = self.noisy.len();
        let mut s: Vec<usize> = (0..n).collect();
        s.shuffle(&mut rng_from(seed));
        let clean_aligned = self.clean_aligned.select(&s);
        let perm: Vec<usize> = s.iter().map(|&i| self.assignment.perm[i]).collect();
        let kind = self.assignment.cost_kind;
        let cost = assignment_cost(self.noisy.coords(), clean_aligned.coords(), &(0..n).collect::<Vec<_>>(), kind);
        let assignment = Assignment { perm, cost, cost_kind: kind };
        PairedSample::new(self.noisy.clone(), clean_aligned, assignment, self.source_id.clone())
    }
}

/// One regression example: the network sees `x_t` at time `t` and should
/// output `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x_t: PointCloud,
    pub t: f64,
    pub target: Vec<Vec3>,
}

/// Builds the example for a fixed `t` and standard-normal draw `z`, with
/// `x_0` the clean cloud and `x_T` the noisy one.
pub fn make_training_example_with_noise(
    pair: &PairedSample,
    s: &BridgeSchedule,
    t: f64,
    z: &[Vec3],
) -> Result<TrainingExample> {
    let sigma = s.sigma(t)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma_t must be positive, got {sigma} at t = {t}")));
    }
    let x_t = s.sample_xt_with_noise(&pair.clean_aligned, &pair.noisy, t, z)?;
    let target = x_t
        .coords()
        .iter()
        .zip(pair.clean_aligned.coords())
        .map(|(x, x0)| scale(sub(*x, *x0), 1.0 / sigma))
        .collect();
    Ok(TrainingExample { x_t, t, target })
}

/// Draws `t ~ U[t_min, 1]` and the bridge noise from `rng`.
pub fn make_training_example<R: Rng + ?Sized>(pair: &PairedSample, s: &BridgeSchedule, rng: &mut R) -> Result<TrainingExample> {
    s.validate()?;
    let t = rng.random_range(s.t_min..=1.0);
    let z = draw_noise(pair.noisy.len(), rng);
    make_training_example_with_noise(pair, s, t, &z)
}

/// Like [`make_training_example`] but on the vanishing-noise path, where
/// `x_t` is the posterior mean. Only `t` is drawn from `rng`.
pub fn make_ot_ode_example<R: Rng + ?Sized>(pair: &PairedSample, s: &BridgeSchedule, rng: &mut R) -> Result<TrainingExample> {
    s.validate()?;
    let t = rng.random_range(s.t_min..=1.0);
    make_training_example_with_noise(pair, s, t, &vec![[0.0; 3]; pair.noisy.len()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, h: AdamHyper) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::SizeMismatch(params.len(), grads.len()));
    }
    state.step += 1;
    let c1 = 1.0 - h.beta1.powi(state.step as i32);
    let c2 = 1.0 - h.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= h.lr * mh / (vh.sqrt() + h.eps);
    }
    Ok(())
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    8
}
fn default_patch_points() -> usize {
    1024
}
fn default_patch_scale() -> f64 {
    1.0
}
fn default_ot_ode() -> bool {
    true
}

/// Training hyperparameters. `t_min` is taken from the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub schedule: BridgeSchedule,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_batch")]
    pub batch_patches: usize,
    #[serde(default = "default_patch_points")]
    pub patch_points: usize,
    /// Crop radius around each patch center. Without it a patch is the
    /// `patch_points` nearest noisy points.
    #[serde(default)]
    pub patch_radius: Option<f64>,
    /// Factor applied to patches after centering.
    #[serde(default = "default_patch_scale")]
    pub patch_scale: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Train on the posterior-mean path (`x_t = μ_t`). When false, `x_t`
    /// is drawn from the full bridge posterior.
    #[serde(default = "default_ot_ode")]
    pub ot_ode: bool,
    /// Emit an intermediate checkpoint every this many steps (0 = only at
    /// the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        TrainConfig {
            schedule: BridgeSchedule::default(),
            denoiser: DenoiserConfig::default(),
            lr: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            batch_patches: default_batch(),
            patch_points: default_patch_points(),
            patch_radius: None,
            patch_scale: default_patch_scale(),
            steps,
            seed,
            ot_ode: true,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.denoiser.validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.batch_patches == 0 || self.patch_points == 0 {
            return Err(Error::invalid("batch_patches and patch_points must be at least 1"));
        }
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos("lr", self.lr)?;
        pos("adam_eps", self.adam_eps)?;
        pos("patch_scale", self.patch_scale)?;
        if let Some(r) = self.patch_radius {
            pos("patch_radius", r)?;
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// CSV with header `step,loss,wall_ms`.
pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut out = String::from("step,loss,wall_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.3}\n", r.step, r.loss, r.wall_ms));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Pair index structures reused across steps.
struct PreparedPair<'a> {
    pair: &'a PairedSample,
    index: SpatialIndex,
    centers: Vec<usize>,
}

// patch centers per pair: this many times N / patch_points, FPS-spread
const CENTER_OVERSAMPLE: usize = 8;

impl<'a> PreparedPair<'a> {
    fn new(pair: &'a PairedSample, patch_points: usize, seed: u64) -> Result<Self> {
        let n = pair.noisy.len();
        let k = (CENTER_OVERSAMPLE * n.div_ceil(patch_points)).clamp(1, n);
        let start = rng_from(seed).random_range(0..n);
        let centers = fps_points(pair.noisy.coords(), k, start)?;
        Ok(PreparedPair { pair, index: SpatialIndex::build(pair.noisy.coords(), DEFAULT_LEAF_SIZE)?, centers })
    }

    fn crop(&self, center: usize, cfg: &TrainConfig) -> Result<Vec<usize>> {
        let q = self.pair.noisy.coords()[center];
        let k = cfg.patch_points.min(self.pair.noisy.len());
        Ok(match cfg.patch_radius {
            Some(r) => {
                let inside = self.index.radius_query(q, r)?;
                if inside.len() > k {
                    self.index.knn(q, k, None).into_iter().map(|(i, _)| i).collect()
                } else {
                    inside
                }
            }
            None => self.index.knn(q, k, None).into_iter().map(|(i, _)| i).collect(),
        })
    }
}

/// Crops both clouds to `indices`, centers them on the noisy centroid and
/// multiplies by `factor`.
pub fn crop_pair(pair: &PairedSample, indices: &[usize], factor: f64) -> Result<PairedSample> {
    let noisy = pair.noisy.select(indices);
    let clean = pair.clean_aligned.select(indices);
    let c = noisy.centroid();
    let tf = |cl: &PointCloud| cl.with_coords(cl.coords().iter().map(|p| scale(sub(*p, c), factor)).collect());
    let perm: Vec<usize> = (0..indices.len()).collect();
    let kind = pair.assignment.cost_kind;
    let (noisy, clean) = (tf(&noisy)?, tf(&clean)?);
    let cost = assignment_cost(noisy.coords(), clean.coords(), &perm, kind);
    PairedSample::new(noisy, clean, Assignment { perm, cost, cost_kind: kind }, pair.source_id.clone())
}

/// Reported at the end of training and every `checkpoint_every` steps.
pub struct Snapshot<'a> {
    pub step: usize,
    pub loss: f64,
    pub params: &'a DenoiserParams,
    pub is_final: bool,
}

pub fn train(dataset: &[PairedSample], cfg: &TrainConfig) -> Result<(DenoiserParams, Vec<LogRow>)> {
    train_with(dataset, cfg, |_| Ok(()))
}

/// Runs the optimization. Every random draw comes from a stream keyed by
/// `(seed, step, slot)`, so results do not depend on thread count.
pub fn train_with<F>(dataset: &[PairedSample], cfg: &TrainConfig, mut on_snapshot: F) -> Result<(DenoiserParams, Vec<LogRow>)>
where
    F: FnMut(Snapshot<'_>) -> Result<()>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    for p in dataset {
        if p.noisy.feature_width() != cfg.denoiser.feature_width {
            return Err(Error::FeatureWidth { expected: cfg.denoiser.feature_width, actual: p.noisy.feature_width() });
        }
    }
    let prepared = dataset
        .iter()
        .enumerate()
        .map(|(i, p)| PreparedPair::new(p, cfg.patch_points, crate::rng::derive_seed(cfg.seed, &[0xce47e5, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut params = init_params(&cfg.denoiser, crate::rng::derive_seed(cfg.seed, &[0x1417]))?;
    let mut adam = AdamState::new(params.len());
    let mut log = Vec::with_capacity(cfg.steps);
    let clock = Instant::now();

    for step in 1..=cfg.steps {
        let slots: Vec<(f64, Vec<f64>, usize)> = (0..cfg.batch_patches)
            .into_par_iter()
            .map(|slot| {
                let mut rng = stream(cfg.seed, &[step as u64, slot as u64]);
                let prep = &prepared[rng.random_range(0..prepared.len())];
                let center = prep.centers[rng.random_range(0..prep.centers.len())];
                let patch = crop_pair(prep.pair, &prep.crop(center, cfg)?, cfg.patch_scale)?;
                let ex = if cfg.ot_ode {
                    make_ot_ode_example(&patch, &cfg.schedule, &mut rng)?
                } else {
                    make_training_example(&patch, &cfg.schedule, &mut rng)?
                };
                let (loss, grads) = forward_backward(&params, &ex.x_t, ex.t, &ex.target)?;
                Ok((loss, grads, 3 * patch.noisy.len()))
            })
            .collect::<Result<_>>()?;
        let entries: usize = slots.iter().map(|s| s.2).sum();
        let mut loss = 0.0;
        let mut grads = vec![0.0; params.len()];
        for (l, g, e) in &slots {
            let w = *e as f64 / entries as f64;
            loss += w * l;
            for (a, b) in grads.iter_mut().zip(g) {
                *a += w * b;
            }
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(step));
        }
        adam_step(&mut params.values, &grads, &mut adam, cfg.adam())?;
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(step));
        }
        log.push(LogRow { step, loss, wall_ms: clock.elapsed().as_secs_f64() * 1e3 });
        let is_final = step == cfg.steps;
        if is_final || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            on_snapshot(Snapshot { step, loss, params: &params, is_final })?;
        }
    }
    Ok((params, log))
}
