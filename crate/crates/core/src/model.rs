//! The full scene-augmentation network: fusion encoders, classification
//! heads, position head and conditional diffusion, sharing one parameter
//! store.

use serde::{Deserialize, Serialize};

use crate::diffusion::{ConditionVector, DiffusionConfig, DiffusionDraw, DiffusionModel};
use crate::error::{bail, Error, Result};
use crate::fusion::{ContextView, FusionConfig, FusionVars, SceneEncoder};
use crate::nn::Linear;
use crate::position::{topk_positions, BinGrid, Candidate, PositionHead, PositionPrediction, QuantizedCoord};
use crate::rng::{derive, seeded};
use crate::scalar::Scalar;
use crate::scene::{PointCloud, Scene, SceneObject, Vec3, CHANNELS};
use crate::training::{loss_lang, loss_loc, loss_obj};
use crate::tensor::{Graph, ParamStore, ParamsFile, Tensor, Var};
use crate::text::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fusion: FusionConfig,
    pub bins: usize,
    pub head_hidden: usize,
    pub diffusion: DiffusionConfig,
    pub seed: u64,
}

/// Everything besides weights that a checkpoint must carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_obj: f64,
    pub alpha_lang: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_obj: 0.5,
            alpha_lang: 0.5,
        }
    }
}

/// One supervised example: a context scene (target removed), the
/// instruction and the held-out target.
#[derive(Debug, Clone)]
pub struct Example {
    pub context: Scene,
    pub token_ids: Vec<usize>,
    pub context_labels: Vec<usize>,
    pub target_class: usize,
    pub target_location: Vec3,
    pub target_size: f64,
    pub target_cloud: PointCloud,
}

impl Example {
    pub fn grid(&self, bins: usize) -> Result<BinGrid> {
        BinGrid::new(bins, self.context.bounds_min, self.context.bounds_max)
    }
}

/// Loss terms of one forward pass, as graph handles.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_obj: Var,
    pub l_lang: Var,
    pub l_loc: Var,
    pub l_scale: Var,
    pub l_mm: Var,
    pub l_pointe: Var,
    pub total: Var,
}

/// Forward products used by the training diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub fusion: FusionVars,
    pub xy_logits: Var,
    pub z_logits: Var,
    pub scale: Var,
    pub y: Var,
    pub losses: LossVars,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedCandidate {
    pub rank: usize,
    pub location: Vec3,
    pub probability: f64,
    pub size: f64,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub meta: ModelMeta,
    pub store: ParamStore<T>,
    pub encoder: SceneEncoder,
    pub obj_head: Linear,
    pub lang_head: Linear,
    pub position: PositionHead,
    pub diffusion: DiffusionModel,
}

pub fn cloud_tensor<T: Scalar>(cloud: &PointCloud) -> Result<Tensor<T>> {
    let data = cloud.points().iter().flatten().map(|&v| T::lit(v)).collect();
    Tensor::matrix(cloud.len(), CHANNELS, data)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            bail!(InvalidArgument, "need at least two object classes");
        }
        if config.fusion.text_vocab != vocab.len() {
            bail!(Consistency, "text_vocab {} but vocabulary has {} tokens", config.fusion.text_vocab, vocab.len());
        }
        let mut rng = seeded(config.seed);
        let mut store = ParamStore::new();
        let d = config.fusion.d;
        let k = classes.len();
        let encoder = SceneEncoder::new(&mut store, &config.fusion, &mut rng)?;
        let obj_head = Linear::new(&mut store, "heads.obj", d, k, &mut rng)?;
        let lang_head = Linear::new(&mut store, "heads.lang", d, k, &mut rng)?;
        let position = PositionHead::new(&mut store, "heads.pos", d, config.head_hidden, config.bins, &mut rng)?;
        let diffusion = DiffusionModel::new(&mut store, "diffusion", d, &config.diffusion, &mut rng)?;
        Ok(Self {
            meta: ModelMeta {
                config,
                vocab,
                classes,
            },
            store,
            encoder,
            obj_head,
            lang_head,
            position,
            diffusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.meta
            .classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown object class {name:?}")))
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        Ok(self.meta.vocab.encode(text, self.config().fusion.max_tokens)?.ids)
    }

    pub fn fuse(&self, g: &mut Graph<'_, T>, scene: &Scene, token_ids: &[usize], trace: Option<&mut Vec<Var>>) -> Result<FusionVars> {
        let clouds: Vec<&PointCloud> = scene.objects.iter().map(|o| &o.cloud).collect();
        let locations = scene.locations();
        let sizes = scene.sizes();
        let view = ContextView {
            clouds: &clouds,
            locations: &locations,
            sizes: &sizes,
        };
        self.encoder.forward(g, view, token_ids, trace)
    }

    /// Mean-pooled text encoding, the stand-in for an external sentence
    /// embedding.
    pub fn text_embedding(&self, g: &mut Graph<'_, T>, x_lang: Var) -> Var {
        g.mean_rows(x_lang)
    }

    /// Builds every loss term for one example with fixed diffusion draw.
    pub fn forward_losses(
        &self,
        g: &mut Graph<'_, T>,
        ex: &Example,
        draw: &DiffusionDraw<T>,
        weights: LossWeights,
    ) -> Result<ForwardVars> {
        let bins = self.config().bins;
        let grid = ex.grid(bins)?;
        if ex.context_labels.len() != ex.context.len() {
            bail!(Shape, "{} context labels for {} objects", ex.context_labels.len(), ex.context.len());
        }
        let fusion = self.fuse(g, &ex.context, &ex.token_ids, None)?;

        let l_obj = loss_obj(g, &self.obj_head, fusion.x_obj, &ex.context_labels)?;
        let l_lang = loss_lang(g, &self.lang_head, fusion.x_lang, ex.target_class)?;
        let pos = self.position.forward(g, fusion.z_ctx)?;
        let q = grid.quantize(ex.target_location);
        let l_loc = loss_loc(g, pos.xy_logits, pos.z_logits, q, bins)?;
        let size = g.constant(Tensor::scalar(T::lit(ex.target_size)));
        let l_scale = g.l1_loss(pos.scale, size)?;

        let a = g.scale(l_obj, T::lit(weights.alpha_obj));
        let b = g.scale(l_lang, T::lit(weights.alpha_lang));
        let ab = g.add(a, b)?;
        let ls = g.add(l_loc, l_scale)?;
        let l_mm = g.add(ab, ls)?;

        let z_text = self.text_embedding(g, fusion.x_lang);
        let y = self.diffusion.condition(g, fusion.z_ctx, z_text)?;
        let x0 = cloud_tensor::<T>(&ex.target_cloud)?;
        let l_pointe = self.diffusion.train_loss(g, &x0, y, draw)?;
        let total = g.add(l_mm, l_pointe)?;
        Ok(ForwardVars {
            fusion,
            xy_logits: pos.xy_logits,
            z_logits: pos.z_logits,
            scale: pos.scale,
            y,
            losses: LossVars {
                l_obj,
                l_lang,
                l_loc,
                l_scale,
                l_mm,
                l_pointe,
                total,
            },
        })
    }

    /// Context vector, position prediction and diffusion condition for an
    /// instruction on a scene.
    pub fn infer(&self, scene: &Scene, text: &str) -> Result<(Vec<T>, PositionPrediction<T>, ConditionVector<T>)> {
        let ids = self.encode_text(text)?;
        self.infer_ids(scene, &ids)
    }

    pub fn infer_ids(&self, scene: &Scene, ids: &[usize]) -> Result<(Vec<T>, PositionPrediction<T>, ConditionVector<T>)> {
        let mut g = Graph::with_params(&self.store);
        let f = self.fuse(&mut g, scene, ids, None)?;
        let pos = self.position.forward(&mut g, f.z_ctx)?;
        let z_text = self.text_embedding(&mut g, f.x_lang);
        let y = self.diffusion.condition(&mut g, f.z_ctx, z_text)?;
        let pred = PositionPrediction {
            xy_logits: g.value(pos.xy_logits).data().to_vec(),
            z_logits: g.value(pos.z_logits).data().to_vec(),
            scale: g.value(pos.scale).item()?,
        };
        Ok((
            g.value(f.z_ctx).data().to_vec(),
            pred,
            ConditionVector {
                y: g.value(y).data().to_vec(),
                is_null: false,
            },
        ))
    }

    pub fn top_candidates(&self, scene: &Scene, ids: &[usize], k: usize) -> Result<(Vec<Candidate>, PositionPrediction<T>)> {
        let (_, pred, _) = self.infer_ids(scene, ids)?;
        let grid = BinGrid::new(self.config().bins, scene.bounds_min, scene.bounds_max)?;
        Ok((topk_positions(&pred, &grid, k)?, pred))
    }

    /// Fuse → predict → Top-K → sample one object per candidate. Candidate
    /// `i` samples with seed stream `i` of `seed`.
    pub fn generate(&self, scene: &Scene, text: &str, k: usize, guidance_scale: f64, seed: u64) -> Result<Vec<GeneratedCandidate>> {
        let ids = self.encode_text(text)?;
        let (_, pred, y) = self.infer_ids(scene, &ids)?;
        let grid = BinGrid::new(self.config().bins, scene.bounds_min, scene.bounds_max)?;
        let cands = topk_positions(&pred, &grid, k)?;
        let size = pred.scale.as_f64();
        cands
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let stream_seed = {
                    use rand::RngCore;
                    derive(seed, i as u64).next_u64()
                };
                let cloud = self.diffusion.sample(&self.store, &y, T::lit(guidance_scale), stream_seed)?;
                Ok(GeneratedCandidate {
                    rank: i,
                    location: c.location,
                    probability: c.probability,
                    size,
                    cloud,
                })
            })
            .collect()
    }

    /// `scene` with the generated object of `candidate` appended.
    pub fn augment(&self, scene: &Scene, candidate: &GeneratedCandidate, class: &str) -> Result<Scene> {
        let obj = SceneObject::new(class, candidate.location, candidate.size, candidate.cloud.clone())?;
        scene.with_object(obj)
    }

    /// Predicted class of the instruction's target from the text head.
    pub fn predict_target_class(&self, ids: &[usize]) -> Result<usize> {
        let mut g = Graph::with_params(&self.store);
        let x = self.encoder.text.forward(&mut g, ids, None)?;
        let first = g.slice_rows(x, 0, 1)?;
        let logits = self.lang_head.forward(&mut g, first)?;
        let v = g.value(logits).data();
        Ok((0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b }))
    }

    pub fn to_checkpoint(&self) -> Result<ParamsFile> {
        let meta = serde_json::to_value(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        Ok(ParamsFile::from_store(&self.store, meta))
    }

    /// Rebuilds the architecture from the checkpoint's metadata and loads
    /// its weights; the result is ready for sampling.
    pub fn from_checkpoint(file: &ParamsFile) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(file.config.clone()).map_err(|e| Error::Parse {
            path: "config".into(),
            message: e.to_string(),
        })?;
        let mut m = Self::new(meta.config, meta.vocab, meta.classes)?;
        file.load_into(&mut m.store)?;
        m.diffusion.mark_trained();
        Ok(m)
    }

    /// Bins of `l` in the grid of `scene`.
    pub fn quantize_in(&self, scene: &Scene, l: Vec3) -> Result<QuantizedCoord> {
        Ok(BinGrid::new(self.config().bins, scene.bounds_min, scene.bounds_max)?.quantize(l))
    }
}
