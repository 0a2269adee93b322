//! Closed-form diffusion bridge between Dirac endpoints.
//!
//! With zero drift and a linear diffusion coefficient `g²(t)` on `[0, 1]`,
//! the marginal of `x_t` given both endpoints is an isotropic Gaussian whose
//! mean interpolates between `x_0` (clean) and `x_T` (noisy). Everything here
//! is a pure function of the schedule and its inputs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Linear diffusion schedule `g²(t) = beta_min + (beta_max − beta_min)·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Number of reverse steps used when no explicit count is given.
    pub steps: usize,
    /// Smallest time drawn during training.
    pub t_min: f64,
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 0.3, steps: 10, t_min: 1e-3 }
    }
}

/// Mean and shared isotropic variance of `q(x_t | x_0, x_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mu: Vec<Vec3>,
    pub var: f64,
    /// Interpolation weights on (x_0, x_T).
    pub weights: (f64, f64),
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("time {t} outside [0, 1]")))
    }
}

fn check_len(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn blend(w0: f64, a: &[Vec3], w1: f64, b: &[Vec3]) -> Vec<Vec3> {
    a.iter()
        .zip(b)
        .map(|(p, q)| [w0 * p[0] + w1 * q[0], w0 * p[1] + w1 * q[1], w0 * p[2] + w1 * q[2]])
        .collect()
}

pub fn draw_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect()
}

impl BridgeSchedule {
    pub fn new(beta_min: f64, beta_max: f64, steps: usize, t_min: f64) -> Result<Self> {
        let s = Self { beta_min, beta_max, steps, t_min };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_min.is_finite()) {
            return Err(Error::invalid(format!("beta_min must be positive, got {}", self.beta_min)));
        }
        if !(self.beta_max >= self.beta_min && self.beta_max.is_finite()) {
            return Err(Error::invalid(format!("beta_max {} below beta_min {}", self.beta_max, self.beta_min)));
        }
        if self.steps < 1 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::invalid(format!("t_min must lie in (0, 1), got {}", self.t_min)));
        }
        Ok(())
    }

    /// Both betas multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { beta_min: self.beta_min * c, beta_max: self.beta_max * c, ..*self }
    }

    pub fn g2(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    /// `∫₀ᵗ g²(τ) dτ`.
    pub fn sigma2(&self, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.sigma2_at(t))
    }

    /// `∫ₜ¹ g²(τ) dτ`, computed as `sigma2(1) − sigma2(t)`.
    pub fn sigma_bar2(&self, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.sigma2_at(1.0) - self.sigma2_at(t))
    }

    pub(crate) fn sigma2_at(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / 2.0
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.sigma2(t)?.sqrt())
    }

    /// Posterior weights `(w0, w1)` on `(x_0, x_T)` and variance at `t`.
    pub fn posterior_coefficients(&self, t: f64) -> Result<(f64, f64, f64)> {
        let s2 = self.sigma2(t)?;
        let sb2 = self.sigma_bar2(t)?;
        let total = sb2 + s2;
        Ok((sb2 / total, s2 / total, s2 * sb2 / total))
    }

    pub fn posterior_points(&self, x0: &[Vec3], xt_end: &[Vec3], t: f64) -> Result<PosteriorMoments> {
        check_len(x0, xt_end)?;
        let (w0, w1, var) = self.posterior_coefficients(t)?;
        Ok(PosteriorMoments { mu: blend(w0, x0, w1, xt_end), var, weights: (w0, w1) })
    }

    pub fn posterior(&self, x0: &PointCloud, x_end: &PointCloud, t: f64) -> Result<PosteriorMoments> {
        self.posterior_points(x0.coords(), x_end.coords(), t)
    }

    /// `x_t = μ_t + sqrt(Σ_t)·z` for caller-supplied standard normal `z`.
    /// The returned cloud carries the features of `x_end`.
    pub fn sample_xt_with_noise(&self, x0: &PointCloud, x_end: &PointCloud, t: f64, z: &[Vec3]) -> Result<PointCloud> {
        let m = self.posterior(x0, x_end, t)?;
        check_len(&m.mu, z)?;
        let sd = m.var.sqrt();
        let coords = m
            .mu
            .iter()
            .zip(z)
            .map(|(mu, z)| [mu[0] + sd * z[0], mu[1] + sd * z[1], mu[2] + sd * z[2]])
            .collect();
        x_end.with_coords(coords)
    }

    pub fn sample_xt<R: Rng + ?Sized>(&self, x0: &PointCloud, x_end: &PointCloud, t: f64, rng: &mut R) -> Result<PointCloud> {
        let z = draw_noise(x0.len(), rng);
        self.sample_xt_with_noise(x0, x_end, t, &z)
    }

    /// Uniform grid `[1, (T−1)/T, …, 0]` with `T = self.steps`.
    pub fn timestep_grid(&self) -> Vec<f64> {
        timestep_grid(self.steps)
    }

    /// Coefficients of one reverse step from `t_hi` to `t_lo`: weights on
    /// `(x̂_0, x_t)` and the step variance. The step is the posterior of the
    /// sub-bridge on `[0, t_hi]` whose endpoints are `x̂_0` and `x_t`.
    pub fn step_coefficients(&self, t_hi: f64, t_lo: f64) -> Result<(f64, f64, f64)> {
        check_t(t_hi)?;
        check_t(t_lo)?;
        if !(t_lo < t_hi) {
            return Err(Error::invalid(format!("reverse step needs t_lo < t_hi, got {t_lo} >= {t_hi}")));
        }
        let s2_lo = self.sigma2_at(t_lo);
        let sb2_sub = self.sigma2_at(t_hi) - s2_lo;
        let total = sb2_sub + s2_lo;
        Ok((sb2_sub / total, s2_lo / total, s2_lo * sb2_sub / total))
    }

    /// One reverse step. With `stochastic == false` this is the deterministic
    /// (OT-ODE) update and `rng` is not touched.
    pub fn ddpm_step<R: Rng + ?Sized>(
        &self,
        x_t: &[Vec3],
        x0_hat: &[Vec3],
        t_hi: f64,
        t_lo: f64,
        stochastic: bool,
        rng: &mut R,
    ) -> Result<Vec<Vec3>> {
        check_len(x_t, x0_hat)?;
        let (_, w1, var) = self.step_coefficients(t_hi, t_lo)?;
        // x̂_0 + w1 (x_t − x̂_0): returns x̂_0 unchanged wherever it equals x_t
        let mut out: Vec<Vec3> = x0_hat
            .iter()
            .zip(x_t)
            .map(|(p, q)| [p[0] + w1 * (q[0] - p[0]), p[1] + w1 * (q[1] - p[1]), p[2] + w1 * (q[2] - p[2])])
            .collect();
        if stochastic && var > 0.0 {
            let sd = var.sqrt();
            for (p, z) in out.iter_mut().zip(draw_noise(x_t.len(), rng)) {
                for a in 0..3 {
                    p[a] += sd * z[a];
                }
            }
        }
        Ok(out)
    }

    /// Drift `(g²(t)/σ_t²)(x_t − x_0)` of the vanishing-noise limit.
    pub fn ot_ode_drift(&self, x_t: &[Vec3], x0: &[Vec3], t: f64) -> Result<Vec<Vec3>> {
        check_len(x_t, x0)?;
        let s2 = self.sigma2(t)?;
        if s2 == 0.0 {
            return Err(Error::invalid(format!("drift undefined at t={t} where sigma2 = 0")));
        }
        let k = self.g2(t) / s2;
        Ok(x_t
            .iter()
            .zip(x0)
            .map(|(a, b)| [k * (a[0] - b[0]), k * (a[1] - b[1]), k * (a[2] - b[2])])
            .collect())
    }
}

pub fn timestep_grid(steps: usize) -> Vec<f64> {
    let n = steps.max(1);
    (0..=n).rev().map(|k| k as f64 / n as f64).collect()
}
