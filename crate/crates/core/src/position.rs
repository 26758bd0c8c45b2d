//! Quantised position prediction: bin grid, xy/z classification heads,
//! scale regression and Top-K candidates.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::Mlp;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::scene::Vec3;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub bins: usize,
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedCoord {
    pub bx: usize,
    pub by: usize,
    pub bz: usize,
}

impl QuantizedCoord {
    /// Class index of the joint xy head: `bx · B + by`.
    pub fn xy_index(&self, bins: usize) -> usize {
        self.bx * bins + self.by
    }

    /// Index into the `B³` joint grid: `xy_index · B + bz`.
    pub fn linear_index(&self, bins: usize) -> usize {
        self.xy_index(bins) * bins + self.bz
    }

    pub fn from_linear(index: usize, bins: usize) -> Self {
        Self {
            bx: index / (bins * bins),
            by: (index / bins) % bins,
            bz: index % bins,
        }
    }
}

impl BinGrid {
    pub fn new(bins: usize, min: Vec3, max: Vec3) -> Result<Self> {
        if bins < 2 {
            bail!(InvalidArgument, "need at least 2 bins per axis, got {bins}");
        }
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            bail!(InvalidArgument, "grid range {min:?}..{max:?} is not increasing");
        }
        Ok(Self { bins, min, max })
    }

    pub fn bin_width(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / self.bins as f64
    }

    fn axis_bin(&self, v: f64, a: usize) -> f64 {
        ((v - self.min[a]) / (self.max[a] - self.min[a]) * self.bins as f64).floor()
    }

    /// `floor((l − min) / (max − min) · B)`, clamped into `[0, B − 1]`.
    pub fn quantize(&self, l: Vec3) -> QuantizedCoord {
        let top = (self.bins - 1) as f64;
        let b = |a: usize| {
            let v = self.axis_bin(l[a], a);
            if v.is_nan() {
                0
            } else {
                v.clamp(0.0, top) as usize
            }
        };
        QuantizedCoord {
            bx: b(0),
            by: b(1),
            bz: b(2),
        }
    }

    /// Like [`quantize`](Self::quantize) but rejects points outside
    /// `[min, max]`; `max` itself still maps to the last bin.
    pub fn quantize_strict(&self, l: Vec3) -> Result<QuantizedCoord> {
        for a in 0..3 {
            if !(l[a] >= self.min[a] && l[a] <= self.max[a]) {
                bail!(Index, "coordinate {} on axis {a} outside [{}, {}]", l[a], self.min[a], self.max[a]);
            }
        }
        Ok(self.quantize(l))
    }

    /// Bin centre `(q + 0.5) / B · (max − min) + min`.
    pub fn dequantize(&self, q: QuantizedCoord) -> Result<Vec3> {
        let idx = [q.bx, q.by, q.bz];
        if let Some(a) = (0..3).find(|&a| idx[a] >= self.bins) {
            bail!(Index, "bin {} on axis {a} with {} bins", idx[a], self.bins);
        }
        Ok(std::array::from_fn(|a| {
            (idx[a] as f64 + 0.5) / self.bins as f64 * (self.max[a] - self.min[a]) + self.min[a]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction<T> {
    /// Joint row-major `B × B` grid, index `bx · B + by`.
    pub xy_logits: Vec<T>,
    pub z_logits: Vec<T>,
    pub scale: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub location: Vec3,
    pub bins: QuantizedCoord,
    pub probability: f64,
}

/// Three MLP heads on `z_ctx`: xy bins (`B²`), z bins (`B`), scale.
#[derive(Debug, Clone)]
pub struct PositionHead {
    pub xy: Mlp,
    pub z: Mlp,
    pub scale: Mlp,
    pub bins: usize,
}

/// Graph handles of the head outputs.
#[derive(Debug, Clone, Copy)]
pub struct PositionVars {
    pub xy_logits: Var,
    pub z_logits: Var,
    pub scale: Var,
}

impl PositionHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, bins: usize, rng: &mut SeededRng) -> Result<Self> {
        if bins < 2 {
            bail!(InvalidArgument, "need at least 2 bins per axis, got {bins}");
        }
        Ok(Self {
            xy: Mlp::new(store, &format!("{name}.xy"), &[d, hidden, bins * bins], rng)?,
            z: Mlp::new(store, &format!("{name}.z"), &[d, hidden, bins], rng)?,
            scale: Mlp::new(store, &format!("{name}.scale"), &[d, hidden, 1], rng)?,
            bins,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z_ctx: Var) -> Result<PositionVars> {
        let xy_logits = self.xy.forward(g, z_ctx)?;
        let z_logits = self.z.forward(g, z_ctx)?;
        let s = self.scale.forward(g, z_ctx)?;
        let scale = g.softplus(s);
        Ok(PositionVars {
            xy_logits,
            z_logits,
            scale,
        })
    }

    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, z_ctx: &[T]) -> Result<PositionPrediction<T>> {
        let mut g = Graph::with_params(store);
        let z = g.constant(Tensor::row(z_ctx.to_vec())?);
        let v = self.forward(&mut g, z)?;
        Ok(PositionPrediction {
            xy_logits: g.value(v.xy_logits).data().to_vec(),
            z_logits: g.value(v.z_logits).data().to_vec(),
            scale: g.value(v.scale).item()?,
        })
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// The `k` bins with the largest `p(x, y) · p(z)`, most probable first;
/// ties go to the smaller linear index.
pub fn topk_positions<T: Scalar>(pred: &PositionPrediction<T>, grid: &BinGrid, k: usize) -> Result<Vec<Candidate>> {
    let b = grid.bins;
    if pred.xy_logits.len() != b * b || pred.z_logits.len() != b {
        bail!(
            Shape,
            "logit lengths {}/{} do not match {b} bins",
            pred.xy_logits.len(),
            pred.z_logits.len()
        );
    }
    let total = b * b * b;
    if k == 0 || k > total {
        bail!(InvalidArgument, "k = {k} outside 1..={total}");
    }
    let pxy = softmax(&pred.xy_logits.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    let pz = softmax(&pred.z_logits.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    let mut joint: Vec<(usize, f64)> = (0..total).map(|i| (i, pxy[i / b] * pz[i % b])).collect();
    let cmp = |a: &(usize, f64), c: &(usize, f64)| c.1.total_cmp(&a.1).then(a.0.cmp(&c.0));
    if k < total {
        joint.select_nth_unstable_by(k - 1, cmp);
        joint.truncate(k);
    }
    joint.sort_by(cmp);
    joint
        .into_iter()
        .map(|(i, p)| {
            let bins = QuantizedCoord::from_linear(i, b);
            Ok(Candidate {
                location: grid.dequantize(bins)?,
                bins,
                probability: p,
            })
        })
        .collect()
}

/// Minimum Euclidean distance from `truth` to any candidate.
pub fn topk_distance(candidates: &[Vec3], truth: Vec3) -> Result<f64> {
    if candidates.is_empty() {
        bail!(InvalidArgument, "no candidates");
    }
    Ok(candidates
        .iter()
        .map(|c| ((c[0] - truth[0]).powi(2) + (c[1] - truth[1]).powi(2) + (c[2] - truth[2]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min))
}
