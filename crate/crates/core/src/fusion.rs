//! Object, text and position encoders and the cross-attention fusion that
//! produces the context vector `z_ctx`.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Block, LayerNorm, Linear, Mlp};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::scene::{PointCloud, Vec3, CHANNELS};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    pub num_fusion_layers: usize,
    pub num_text_layers: usize,
    pub num_heads: usize,
    pub text_vocab: usize,
    pub max_tokens: usize,
    pub point_hidden: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("num_heads", self.num_heads),
            ("text_vocab", self.text_vocab),
            ("max_tokens", self.max_tokens),
            ("point_hidden", self.point_hidden),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            bail!(InvalidArgument, "fusion {k} must be positive");
        }
        if self.d % self.num_heads != 0 {
            bail!(InvalidArgument, "d = {} is not divisible by {} heads", self.d, self.num_heads);
        }
        if self.d < 2 {
            bail!(InvalidArgument, "d must be at least 2 for layer normalisation");
        }
        Ok(())
    }
}

/// Shared per-point MLP, channelwise max-pool per object, projection to D.
#[derive(Debug, Clone)]
pub struct ObjectEncoder {
    pub point_mlp: Mlp,
    pub proj: Linear,
}

impl ObjectEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, d: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            point_mlp: Mlp::new(store, &format!("{name}.points"), &[CHANNELS, hidden, hidden], rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), hidden, d, rng)?,
        })
    }

    /// `N × D`, row `i` for cloud `i`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, clouds: &[&PointCloud]) -> Result<Var> {
        if clouds.is_empty() {
            bail!(EmptyInput, "no objects to encode");
        }
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(clouds.len());
        for c in clouds {
            if c.is_empty() {
                bail!(DegenerateInput, "object cloud has no points");
            }
            sizes.push(c.len());
            data.extend(c.points().iter().flatten().map(|&v| T::lit(v)));
        }
        let rows: usize = sizes.iter().sum();
        let x = g.constant(Tensor::matrix(rows, CHANNELS, data)?);
        let h = self.point_mlp.forward(g, x)?;
        let pooled = g.group_max(h, &sizes)?;
        self.proj.forward(g, pooled)
    }
}

/// Token and position embeddings followed by self-attention blocks.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub token_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<Block>,
    pub ln_out: LayerNorm,
    pub max_tokens: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &FusionConfig, rng: &mut SeededRng) -> Result<Self> {
        let token_emb = store.add_normal(format!("{name}.token_emb"), cfg.text_vocab, cfg.d, 0.5, rng)?;
        let pos_emb = store.add_normal(format!("{name}.pos_emb"), cfg.max_tokens, cfg.d, 0.1, rng)?;
        let blocks = (0..cfg.num_text_layers)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), cfg.d, cfg.num_heads, false, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            token_emb,
            pos_emb,
            blocks,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), cfg.d)?,
            max_tokens: cfg.max_tokens,
        })
    }

    /// `T × D` for `1 ≤ T ≤ max_tokens` token ids.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize], mut trace: Option<&mut Vec<Var>>) -> Result<Var> {
        if ids.is_empty() {
            bail!(EmptyInput, "no tokens");
        }
        if ids.len() > self.max_tokens {
            bail!(InvalidArgument, "{} tokens exceed the maximum of {}", ids.len(), self.max_tokens);
        }
        let tok = g.param(self.token_emb);
        let pos = g.param(self.pos_emb);
        let t = g.gather_rows(tok, ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = g.gather_rows(pos, &positions)?;
        let mut x = g.add(t, p)?;
        for b in &self.blocks {
            x = b.forward(g, x, None, trace.as_deref_mut())?;
        }
        self.ln_out.forward(g, x)
    }
}

/// `LayerNorm(MLP([L ‖ s]))`.
#[derive(Debug, Clone)]
pub struct PositionEmbedding {
    pub mlp: Mlp,
    pub ln: LayerNorm,
}

impl PositionEmbedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[4, d, d], rng)?,
            ln: LayerNorm::new(store, &format!("{name}.ln"), d)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, locations: &[Vec3], sizes: &[f64]) -> Result<Var> {
        if locations.len() != sizes.len() || locations.is_empty() {
            bail!(Shape, "{} locations and {} sizes", locations.len(), sizes.len());
        }
        let data = locations
            .iter()
            .zip(sizes)
            .flat_map(|(l, &s)| [l[0], l[1], l[2], s])
            .map(T::lit)
            .collect();
        let x = g.constant(Tensor::matrix(locations.len(), 4, data)?);
        let h = self.mlp.forward(g, x)?;
        self.ln.forward(g, h)
    }
}

/// Learnable `[CTX]` row plus decoder blocks attending to the text.
#[derive(Debug, Clone)]
pub struct ContextFusion {
    pub ctx: ParamId,
    pub ctx_pos: ParamId,
    pub blocks: Vec<Block>,
}

impl ContextFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &FusionConfig, rng: &mut SeededRng) -> Result<Self> {
        let ctx = store.add_normal(format!("{name}.ctx"), 1, cfg.d, 0.5, rng)?;
        let ctx_pos = store.add_normal(format!("{name}.ctx_pos"), 1, cfg.d, 0.1, rng)?;
        let blocks = (0..cfg.num_fusion_layers)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), cfg.d, cfg.num_heads, true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { ctx, ctx_pos, blocks })
    }

    /// `x_mm = blocks([x_ctx ‖ x_obj] + [p_ctx ‖ PE], x_lang)`, `(N+1) × D`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x_obj: Var,
        pe: Var,
        x_lang: Var,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let (no, np) = (g.value(x_obj).rows(), g.value(pe).rows());
        if no != np || g.value(x_obj).cols() != g.value(pe).cols() {
            bail!(Shape, "object features {:?} vs position embedding {:?}", g.value(x_obj).shape(), g.value(pe).shape());
        }
        if g.value(x_lang).cols() != g.value(x_obj).cols() {
            bail!(Shape, "text width {} vs object width {}", g.value(x_lang).cols(), g.value(x_obj).cols());
        }
        let ctx = g.param(self.ctx);
        let ctx_pos = g.param(self.ctx_pos);
        let rows = g.concat_rows(&[ctx, x_obj])?;
        let pos = g.concat_rows(&[ctx_pos, pe])?;
        let mut x = g.add(rows, pos)?;
        for b in &self.blocks {
            x = b.forward(g, x, Some(x_lang), trace.as_deref_mut())?;
        }
        Ok(x)
    }
}

/// All encoders of the fusion stage.
#[derive(Debug, Clone)]
pub struct SceneEncoder {
    pub config: FusionConfig,
    pub objects: ObjectEncoder,
    pub text: TextEncoder,
    pub position: PositionEmbedding,
    pub fusion: ContextFusion,
}

/// Graph handles of one fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub x_obj: Var,
    pub x_lang: Var,
    pub pe: Var,
    pub x_mm: Var,
    pub z_ctx: Var,
}

/// Values of one fusion pass.
#[derive(Debug, Clone)]
pub struct FusionState<T> {
    pub x_obj: Tensor<T>,
    pub x_lang: Tensor<T>,
    pub x_mm: Tensor<T>,
    pub z_ctx: Vec<T>,
}

/// Context objects as the encoders see them.
#[derive(Debug, Clone, Copy)]
pub struct ContextView<'a> {
    pub clouds: &'a [&'a PointCloud],
    pub locations: &'a [Vec3],
    pub sizes: &'a [f64],
}

impl SceneEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &FusionConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: cfg.clone(),
            objects: ObjectEncoder::new(store, "objenc", cfg.point_hidden, cfg.d, rng)?,
            text: TextEncoder::new(store, "textenc", cfg, rng)?,
            position: PositionEmbedding::new(store, "fusion.pe", cfg.d, rng)?,
            fusion: ContextFusion::new(store, "fusion", cfg, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: ContextView<'_>,
        token_ids: &[usize],
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<FusionVars> {
        let x_obj = self.objects.forward(g, ctx.clouds)?;
        let x_lang = self.text.forward(g, token_ids, trace.as_deref_mut())?;
        let pe = self.position.forward(g, ctx.locations, ctx.sizes)?;
        let x_mm = self.fusion.forward(g, x_obj, pe, x_lang, trace)?;
        let z_ctx = extract_context(g, x_mm)?;
        Ok(FusionVars {
            x_obj,
            x_lang,
            pe,
            x_mm,
            z_ctx,
        })
    }

    /// Forward pass without gradients.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, ctx: ContextView<'_>, token_ids: &[usize]) -> Result<FusionState<T>> {
        let mut g = Graph::with_params(store);
        let v = self.forward(&mut g, ctx, token_ids, None)?;
        Ok(FusionState {
            x_obj: g.value(v.x_obj).clone(),
            x_lang: g.value(v.x_lang).clone(),
            x_mm: g.value(v.x_mm).clone(),
            z_ctx: g.value(v.z_ctx).data().to_vec(),
        })
    }
}

/// Row 0 of `x_mm`.
pub fn extract_context<T: Scalar>(g: &mut Graph<'_, T>, x_mm: Var) -> Result<Var> {
    g.slice_rows(x_mm, 0, 1)
}
