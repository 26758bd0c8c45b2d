//! Loss composition and the seeded training loop.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionDraw;
use crate::error::{bail, Error, Result};
use crate::model::{Example, LossWeights, Model};
use crate::nn::Linear;
use crate::position::QuantizedCoord;
use crate::rng::{derive, SeededRng};
use crate::scalar::Scalar;
use crate::scene::{rotate_cloud_90k, rotate_point_90k, rotate_scene_90k};
use crate::tensor::{AdamWConfig, Graph, LinearSchedule, OptimizerState, ParamGrads, Var};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_obj: f64,
    pub l_lang: f64,
    pub l_loc: f64,
    pub l_scale: f64,
    pub l_mm: f64,
    pub l_pointe: f64,
    pub total: f64,
}

/// `L_mm = α_obj·L_obj + α_lang·L_lang + L_loc + L_scale`, `L = L_mm + L_point-e`.
pub fn compose_total(l_obj: f64, l_lang: f64, l_loc: f64, l_scale: f64, l_pointe: f64, w: LossWeights) -> LossBreakdown {
    let l_mm = w.alpha_obj * l_obj + w.alpha_lang * l_lang + l_loc + l_scale;
    LossBreakdown {
        l_obj,
        l_lang,
        l_loc,
        l_scale,
        l_mm,
        l_pointe,
        total: l_mm + l_pointe,
    }
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &Self, c: f64) {
        self.l_obj += o.l_obj * c;
        self.l_lang += o.l_lang * c;
        self.l_loc += o.l_loc * c;
        self.l_scale += o.l_scale * c;
        self.l_mm += o.l_mm * c;
        self.l_pointe += o.l_pointe * c;
        self.total += o.total * c;
    }

    pub fn is_finite(&self) -> bool {
        [self.l_obj, self.l_lang, self.l_loc, self.l_scale, self.l_mm, self.l_pointe, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mean cross-entropy of a shared linear head over the object rows.
pub fn loss_obj<T: Scalar>(g: &mut Graph<'_, T>, head: &Linear, x_obj: Var, labels: &[usize]) -> Result<Var> {
    let logits = head.forward(g, x_obj)?;
    g.cross_entropy_rows(logits, labels)
}

/// Cross-entropy of a linear head on the first text token.
pub fn loss_lang<T: Scalar>(g: &mut Graph<'_, T>, head: &Linear, x_lang: Var, target: usize) -> Result<Var> {
    let first = g.slice_rows(x_lang, 0, 1)?;
    let logits = head.forward(g, first)?;
    g.cross_entropy(logits, target)
}

/// `CE(xy, bx·B + by) + CE(z, bz)`.
pub fn loss_loc<T: Scalar>(g: &mut Graph<'_, T>, xy_logits: Var, z_logits: Var, q: QuantizedCoord, bins: usize) -> Result<Var> {
    if q.bx >= bins || q.by >= bins || q.bz >= bins {
        bail!(Index, "bins {q:?} with B = {bins}");
    }
    let a = g.cross_entropy(xy_logits, q.xy_index(bins))?;
    let b = g.cross_entropy(z_logits, q.bz)?;
    g.add(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr_fusion: f64,
    pub lr_diffusion: f64,
    /// Final learning rate as a fraction of the base rate.
    pub lr_end_ratio: f64,
    /// Multiplier for the text encoder and the fusion decoder blocks.
    pub encoder_lr_mult: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub rotate: bool,
    pub drop_prob: f64,
    pub seed: u64,
    pub log_every: usize,
    pub grad_clip: Option<f64>,
    pub adamw: AdamWConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_fusion > 0.0 && self.lr_diffusion > 0.0 && self.encoder_lr_mult > 0.0 && self.lr_end_ratio > 0.0) {
            bail!(InvalidArgument, "learning rates and multipliers must be positive");
        }
        if self.steps == 0 || self.batch_size == 0 {
            bail!(InvalidArgument, "steps and batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            bail!(InvalidArgument, "drop_prob {} outside [0, 1]", self.drop_prob);
        }
        Ok(())
    }

    pub fn fusion_schedule(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.lr_fusion,
            end: self.lr_fusion * self.lr_end_ratio,
            total_steps: self.steps,
        }
    }

    pub fn diffusion_schedule(&self) -> LinearSchedule {
        LinearSchedule {
            start: self.lr_diffusion,
            end: self.lr_diffusion * self.lr_end_ratio,
            total_steps: self.steps,
        }
    }

    /// Learning rate of parameter `name` at `step`.
    pub fn lr_for(&self, name: &str, step: usize) -> f64 {
        if name.starts_with("diffusion.") {
            self.diffusion_schedule().at(step)
        } else if name.starts_with("textenc.") || name.starts_with("fusion.block") {
            self.fusion_schedule().at(step) * self.encoder_lr_mult
        } else {
            self.fusion_schedule().at(step)
        }
    }
}

/// State captured when a step produces a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticDump {
    pub step: usize,
    pub batch: Vec<usize>,
    pub losses: Vec<LossBreakdown>,
    pub lr_fusion: f64,
    pub lr_diffusion: f64,
    pub grad_norm: f64,
    pub non_finite_params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr_fusion: f64,
    pub lr_diffusion: f64,
    pub grad_norm: f64,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch-mean losses of every step.
    pub history: Vec<StepLog>,
}

impl TrainReport {
    pub fn final_losses(&self) -> Option<LossBreakdown> {
        self.history.last().map(|s| s.losses)
    }
}

/// Example `ex` rotated by `k · 90°` about its scene centre.
pub fn rotate_example(ex: &Example, k: u8) -> Example {
    let c = ex.context.center();
    Example {
        context: rotate_scene_90k(&ex.context, k),
        target_location: rotate_point_90k(ex.target_location, c, k),
        target_cloud: rotate_cloud_90k(&ex.target_cloud, k),
        ..ex.clone()
    }
}

fn values<T: Scalar>(g: &Graph<'_, T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

/// Gradients and loss values of one example.
pub fn example_gradients<T: Scalar>(
    model: &Model<T>,
    ex: &Example,
    draw: &DiffusionDraw<T>,
    weights: LossWeights,
    scale: T,
) -> Result<(ParamGrads<T>, LossBreakdown)> {
    let mut g = Graph::with_params(&model.store);
    let f = model.forward_losses(&mut g, ex, draw, weights)?;
    let l = f.losses;
    let breakdown = compose_total(
        values(&g, l.l_obj),
        values(&g, l.l_lang),
        values(&g, l.l_loc),
        values(&g, l.l_scale),
        values(&g, l.l_pointe),
        weights,
    );
    let scaled = g.scale(l.total, scale);
    let grads = g.backward(scaled)?.into_param_grads();
    Ok((grads, breakdown))
}

fn batch_for(n: usize, batch: usize, rng: &mut SeededRng) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        let mut idx = sample_indices(rng, n, batch).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Runs `cfg.steps` AdamW steps. Every random choice derives from
/// `cfg.seed` and the step/slot position, so results do not depend on the
/// number of worker threads.
pub fn train_loop<T: Scalar>(
    model: &mut Model<T>,
    data: &[Example],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(EmptyInput, "training set is empty");
    }
    let mut opt = OptimizerState::new(&model.store, cfg.adamw);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let mut rng = derive(cfg.seed, step as u64);
        let batch = batch_for(data.len(), cfg.batch_size, &mut rng);
        let slot_seed: u64 = rng.random();
        let scale = T::one() / T::from_usize_lossy(batch.len());
        let m: &Model<T> = model;
        let results: Vec<Result<(ParamGrads<T>, LossBreakdown)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut r = derive(slot_seed, slot as u64);
                let k: u8 = if cfg.rotate { r.random_range(0..4) } else { 0 };
                let ex = if k == 0 { data[i].clone() } else { rotate_example(&data[i], k) };
                let draw = m.diffusion.draw(&mut r, cfg.drop_prob)?;
                example_gradients(m, &ex, &draw, cfg.weights, scale)
            })
            .collect();
        let mut total = ParamGrads::default();
        let mut mean = LossBreakdown::default();
        let mut per_example = Vec::with_capacity(batch.len());
        for r in results {
            let (gr, lb) = r?;
            total = total.merge(gr);
            mean.add_scaled(&lb, 1.0 / batch.len() as f64);
            per_example.push(lb);
        }
        model.store.zero_grad();
        model.store.accumulate(&total);
        let grad_norm = model.store.grad_norm().as_f64();
        let lr_fusion = cfg.fusion_schedule().at(step);
        let lr_diffusion = cfg.diffusion_schedule().at(step);
        if !mean.is_finite() || !grad_norm.is_finite() {
            let non_finite_params = model
                .store
                .iter()
                .filter(|(_, p)| !p.value.all_finite() || p.grad.iter().any(|g| !g.is_finite()))
                .map(|(_, p)| p.name.clone())
                .collect();
            return Err(Error::NonFinite {
                step,
                dump: Box::new(DiagnosticDump {
                    step,
                    batch,
                    losses: per_example,
                    lr_fusion,
                    lr_diffusion,
                    grad_norm,
                    non_finite_params,
                }),
            });
        }
        if let Some(c) = cfg.grad_clip {
            model.store.clip_grad_norm(T::lit(c));
        }
        opt.update(&mut model.store, |name| T::lit(cfg.lr_for(name, step)));
        let log = StepLog {
            step,
            lr_fusion,
            lr_diffusion,
            grad_norm,
            losses: mean,
        };
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            on_log(&log);
        }
        report.history.push(log);
    }
    model.diffusion.mark_trained();
    Ok(report)
}

/// Training-set top-1 accuracy of the xy and z heads.
pub fn bin_accuracy<T: Scalar>(model: &Model<T>, data: &[Example]) -> Result<(f64, f64)> {
    let bins = model.config().bins;
    let hits: Vec<(bool, bool)> = data
        .par_iter()
        .map(|ex| {
            let (_, pred, _) = model.infer_ids(&ex.context, &ex.token_ids)?;
            let q = ex.grid(bins)?.quantize(ex.target_location);
            Ok((argmax(&pred.xy_logits) == q.xy_index(bins), argmax(&pred.z_logits) == q.bz))
        })
        .collect::<Result<_>>()?;
    let n = data.len().max(1) as f64;
    Ok((
        hits.iter().filter(|h| h.0).count() as f64 / n,
        hits.iter().filter(|h| h.1).count() as f64 / n,
    ))
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Mean diffusion loss over `draws` fixed draws per example, seeded by
/// `seed` so two calls see identical noise.
pub fn diffusion_mse<T: Scalar>(model: &Model<T>, data: &[Example], draws: usize, seed: u64) -> Result<f64> {
    let per: Vec<f64> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = derive(seed, i as u64);
            let mut g = Graph::with_params(&model.store);
            let f = model.fuse(&mut g, &ex.context, &ex.token_ids, None)?;
            let z_text = model.text_embedding(&mut g, f.x_lang);
            let y = model.diffusion.condition(&mut g, f.z_ctx, z_text)?;
            let x0 = crate::model::cloud_tensor::<T>(&ex.target_cloud)?;
            let mut acc = 0.0;
            for _ in 0..draws {
                let draw = model.diffusion.draw(&mut r, 0.0)?;
                let l = model.diffusion.train_loss(&mut g, &x0, y, &draw)?;
                acc += values(&g, l);
            }
            Ok(acc / draws as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_examples() {
        let w = LossWeights::default();
        assert_eq!((w.alpha_obj, w.alpha_lang), (0.5, 0.5));
        let z = compose_total(0.0, 0.0, 0.0, 0.0, 0.0, w);
        assert_eq!(z.total, 0.0);
        let b = compose_total(2.0, 2.0, 1.0, 1.0, 0.5, w);
        assert_eq!(b.l_mm, 4.0);
        assert_eq!(b.total, 4.5);
    }

    #[test]
    fn loss_loc_uniform() {
        for bins in [4usize, 32] {
            let mut g = Graph::<f64>::new();
            let xy = g.constant(crate::tensor::Tensor::zeros(vec![1, bins * bins]));
            let z = g.constant(crate::tensor::Tensor::zeros(vec![1, bins]));
            let q = QuantizedCoord { bx: 1, by: 2, bz: 3 };
            let l = loss_loc(&mut g, xy, z, q, bins).unwrap();
            let expect = 3.0 * (bins as f64).ln();
            assert!((g.value(l).item().unwrap() - expect).abs() < 1e-12);
        }
    }
}
