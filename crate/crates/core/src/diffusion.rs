//! Conditional point-cloud diffusion with classifier-free guidance.
//!
//! The denoiser is a per-point MLP. The condition `y` and a sinusoidal
//! timestep embedding enter through one shared row added to the first
//! hidden layer, which equals concatenating them to every point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Linear, Mlp};
use crate::rng::{normals, seeded, SeededRng};
use crate::scalar::Scalar;
use crate::scene::{PointCloud, CHANNELS};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
/// Upper clamp on rescaled betas so very short schedules stay valid.
pub const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `1e-4` to `0.02`, both scaled by `1000 / T`.
    pub fn linear(t_steps: usize) -> Result<Self> {
        if t_steps == 0 {
            bail!(InvalidArgument, "diffusion needs at least one timestep");
        }
        let s = 1000.0 / t_steps as f64;
        let (lo, hi) = (BETA_START * s, BETA_END * s);
        let betas = (0..t_steps)
            .map(|i| {
                let f = if t_steps == 1 { 0.0 } else { i as f64 / (t_steps - 1) as f64 };
                (lo + (hi - lo) * f).min(BETA_MAX)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            bail!(InvalidArgument, "betas must be non-empty and inside (0, 1)");
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            bail!(Index, "timestep {t} of {}", self.steps());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub guidance_scale: f64,
    pub drop_prob: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            guidance_scale: 3.0,
            drop_prob: 0.1,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            bail!(InvalidArgument, "drop_prob {} outside [0, 1]", self.drop_prob);
        }
        if !self.guidance_scale.is_finite() {
            bail!(InvalidArgument, "guidance scale must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector<T> {
    pub y: Vec<T>,
    pub is_null: bool,
}

/// Random quantities of one training term, fixed up front so a loss can be
/// re-evaluated exactly.
#[derive(Debug, Clone)]
pub struct DiffusionDraw<T> {
    pub t: usize,
    pub noise: Tensor<T>,
    pub drop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub t_steps: usize,
    pub points: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub clip_x0: bool,
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · noise`.
pub fn forward_noise<T: Scalar>(schedule: &NoiseSchedule, x0: &Tensor<T>, t: usize, noise: &Tensor<T>) -> Result<Tensor<T>> {
    schedule.check_t(t)?;
    if x0.shape() != noise.shape() {
        bail!(Shape, "x0 {:?} vs noise {:?}", x0.shape(), noise.shape());
    }
    let ab = schedule.alpha_bars[t];
    let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    let data = x0.data().iter().zip(noise.data()).map(|(&x, &n)| a * x + b * n).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// `ε_c + (s − 1)(ε_c − ε_u)`, algebraically `ε_u + s(ε_c − ε_u)`; the
/// first form returns `ε_c` bit for bit at `s = 1`.
pub fn guide<T: Scalar>(eps_cond: &[T], eps_uncond: &[T], s: T) -> Vec<T> {
    let k = s - T::one();
    eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| c + k * (c - u))
        .collect()
}

/// Sinusoidal embedding of a timestep, `[sin(t·f_i) ‖ cos(t·f_i)]`.
pub fn timestep_embedding<T: Scalar>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = T::lit((t as f64 * f).sin());
        out[half + i] = T::lit((t as f64 * f).cos());
    }
    out
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub cond_mlp: Mlp,
    pub null: ParamId,
    pub point_in: Linear,
    pub cond_in: Linear,
    pub body: Mlp,
    pub d: usize,
    trained: bool,
}

impl DiffusionModel {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, cfg: &DiffusionConfig, rng: &mut SeededRng) -> Result<Self> {
        if cfg.points == 0 || cfg.hidden == 0 || cfg.time_dim < 2 || cfg.time_dim % 2 != 0 {
            bail!(InvalidArgument, "diffusion needs points, hidden > 0 and an even time_dim ≥ 2");
        }
        let schedule = NoiseSchedule::linear(cfg.t_steps)?;
        Ok(Self {
            config: cfg.clone(),
            schedule,
            cond_mlp: Mlp::new(store, &format!("{name}.cond"), &[d, d, d], rng)?,
            null: store.add_normal(format!("{name}.null"), 1, d, 0.5, rng)?,
            point_in: Linear::new(store, &format!("{name}.point_in"), CHANNELS, cfg.hidden, rng)?,
            cond_in: Linear::new(store, &format!("{name}.cond_in"), cfg.time_dim + d, cfg.hidden, rng)?,
            body: Mlp::new(store, &format!("{name}.body"), &[cfg.hidden, cfg.hidden, CHANNELS], rng)?,
            d,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks the weights as fit for sampling (after training or loading).
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// `y = MLP(z_ctx + z_text)`.
    pub fn condition<T: Scalar>(&self, g: &mut Graph<'_, T>, z_ctx: Var, z_text: Var) -> Result<Var> {
        let (a, b) = (g.value(z_ctx).numel(), g.value(z_text).numel());
        if a != self.d || b != self.d {
            bail!(Shape, "condition inputs of length {a} and {b}, expected {}", self.d);
        }
        let s = g.add(z_ctx, z_text)?;
        self.cond_mlp.forward(g, s)
    }

    pub fn condition_values<T: Scalar>(&self, store: &ParamStore<T>, z_ctx: &[T], z_text: &[T]) -> Result<ConditionVector<T>> {
        let mut g = Graph::with_params(store);
        let a = g.constant(Tensor::row(z_ctx.to_vec())?);
        let b = g.constant(Tensor::row(z_text.to_vec())?);
        let y = self.condition(&mut g, a, b)?;
        Ok(ConditionVector {
            y: g.value(y).data().to_vec(),
            is_null: false,
        })
    }

    pub fn null_condition<T: Scalar>(&self, store: &ParamStore<T>) -> ConditionVector<T> {
        ConditionVector {
            y: store.get(self.null).value.data().to_vec(),
            is_null: true,
        }
    }

    /// Noise prediction `ε(x_t, t, y)`, `P × C`.
    pub fn epsilon<T: Scalar>(&self, g: &mut Graph<'_, T>, x_t: Var, t: usize, y: Var) -> Result<Var> {
        self.schedule.check_t(t)?;
        if g.value(x_t).cols() != CHANNELS {
            bail!(Shape, "x_t has {} channels, expected {CHANNELS}", g.value(x_t).cols());
        }
        let temb = g.constant(Tensor::row(timestep_embedding(t, self.config.time_dim))?);
        let c = g.concat_cols(&[temb, y])?;
        let c = self.cond_in.forward(g, c)?;
        let h = self.point_in.forward(g, x_t)?;
        let h = g.add_row(h, c)?;
        let h = g.silu(h);
        self.body.forward(g, h)
    }

    fn epsilon_values<T: Scalar>(&self, store: &ParamStore<T>, x_t: &Tensor<T>, t: usize, y: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::with_params(store);
        let x = g.constant(x_t.clone());
        let y = g.constant(Tensor::row(y.to_vec())?);
        let e = self.epsilon(&mut g, x, t, y)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Guided noise prediction at scale `s`.
    pub fn cfg_epsilon<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x_t: &Tensor<T>,
        t: usize,
        y: &ConditionVector<T>,
        s: T,
    ) -> Result<Tensor<T>> {
        let ec = self.epsilon_values(store, x_t, t, &y.y)?;
        let null = self.null_condition(store);
        let eu = self.epsilon_values(store, x_t, t, &null.y)?;
        Tensor::new(x_t.shape().to_vec(), guide(&ec, &eu, s))
    }

    pub fn draw<T: Scalar>(&self, rng: &mut SeededRng, drop_prob: f64) -> Result<DiffusionDraw<T>> {
        let t = rng.random_range(0..self.schedule.steps());
        let drop = rng.random::<f64>() < drop_prob;
        let n = self.config.points * CHANNELS;
        Ok(DiffusionDraw {
            t,
            noise: Tensor::matrix(self.config.points, CHANNELS, normals(rng, n))?,
            drop,
        })
    }

    /// `MSE(ε(x_t, t, y or Ø), noise)` for one fixed draw.
    pub fn train_loss<T: Scalar>(&self, g: &mut Graph<'_, T>, x0: &Tensor<T>, y: Var, draw: &DiffusionDraw<T>) -> Result<Var> {
        let x_t = forward_noise(&self.schedule, x0, draw.t, &draw.noise)?;
        let x = g.constant(x_t);
        let cond = if draw.drop { g.param(self.null) } else { y };
        let eps = self.epsilon(g, x, draw.t, cond)?;
        let target = g.constant(draw.noise.clone());
        g.mse_loss(eps, target)
    }

    /// Draws `t`, noise and the drop decision from `rng`, then returns the
    /// training loss.
    pub fn diffusion_train_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x0: &Tensor<T>,
        y: Var,
        drop_prob: f64,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let draw = self.draw(rng, drop_prob)?;
        self.train_loss(g, x0, y, &draw)
    }

    /// Ancestral sampling from Gaussian noise with guidance scale `s`.
    pub fn sample<T: Scalar>(&self, store: &ParamStore<T>, y: &ConditionVector<T>, s: T, seed: u64) -> Result<PointCloud> {
        if !self.trained {
            bail!(State, "diffusion weights are untrained; train or load a checkpoint first");
        }
        if y.y.len() != self.d {
            bail!(Shape, "condition of length {}, expected {}", y.y.len(), self.d);
        }
        let p = self.config.points;
        let mut rng = seeded(seed);
        let mut x = Tensor::matrix(p, CHANNELS, normals(&mut rng, p * CHANNELS))?;
        let sch = &self.schedule;
        for t in (0..sch.steps()).rev() {
            let eps = self.cfg_epsilon(store, &x, t, y, s)?;
            let ab = sch.alpha_bars[t];
            let ab_prev = if t > 0 { sch.alpha_bars[t - 1] } else { 1.0 };
            let beta = sch.betas[t];
            let c_x0 = T::lit(beta * ab_prev.sqrt() / (1.0 - ab));
            let c_xt = T::lit((1.0 - ab_prev) * sch.alphas[t].sqrt() / (1.0 - ab));
            let sigma = T::lit((beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt());
            let (sa, sb) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
            let noise: Vec<T> = if t > 0 { normals(&mut rng, p * CHANNELS) } else { vec![T::zero(); p * CHANNELS] };
            let one = T::one();
            for ((xi, &ei), &zi) in x.data_mut().iter_mut().zip(eps.data()).zip(&noise) {
                let mut x0 = (*xi - sb * ei) / sa;
                if self.config.clip_x0 {
                    x0 = x0.max(-one).min(one);
                }
                *xi = c_x0 * x0 + c_xt * *xi + sigma * zi;
            }
        }
        let points = x
            .data()
            .chunks(CHANNELS)
            .map(|r| std::array::from_fn(|c| r[c].as_f64()))
            .collect();
        PointCloud::clamped(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = NoiseSchedule::linear(32).unwrap();
        assert!(s.betas.windows(2).all(|w| w[0] < w[1]));
        assert!(s.alpha_bars.windows(2).all(|w| w[0] > w[1]));
        assert!(s.alpha_bars[0] > 0.99);
        let s = NoiseSchedule::linear(1000).unwrap();
        assert_eq!(s.betas[0], 1e-4);
        assert!((s.betas[999] - 0.02).abs() < 1e-15);
        assert!(NoiseSchedule::linear(4).unwrap().betas.iter().all(|&b| b < 1.0));
    }

    #[test]
    fn forward_noise_cases() {
        let s = NoiseSchedule::linear(16).unwrap();
        let x0 = Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap();
        let zero = Tensor::zeros(vec![1, 2]);
        let n = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let a = forward_noise(&s, &x0, 3, &zero).unwrap();
        let k = s.alpha_bars[3].sqrt();
        assert_eq!(a.data(), &[0.5 * k, -1.0 * k]);
        let b = forward_noise(&s, &zero, 3, &n).unwrap();
        let k = (1.0 - s.alpha_bars[3]).sqrt();
        assert_eq!(b.data(), &[k, 2.0 * k]);
        assert!(forward_noise(&s, &x0, 16, &n).is_err());
        let c = forward_noise(&s, &x0, 0, &n).unwrap();
        let (a0, b0) = (s.alpha_bars[0].sqrt(), (1.0 - s.alpha_bars[0]).sqrt());
        assert_eq!(c.data(), &[a0 * 0.5 + b0 * 1.0, a0 * -1.0 + b0 * 2.0]);
    }

    #[test]
    fn guide_identities() {
        assert_eq!(guide(&[1.0f64], &[0.0], 2.0), vec![2.0]);
        let c = [0.3f64, -0.7];
        assert_eq!(guide(&c, &[9.0, 1.0], 1.0), c.to_vec());
        assert_eq!(guide(&c, &c, 5.5), c.to_vec());
    }
}
