//! Flat key-value run configuration with a small desk preset and a full-scale preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionConfig, GuidanceConfig};
use crate::error::{bail, Error, Result};
use crate::fusion::FusionConfig;
use crate::metrics::ClassifierConfig;
use crate::model::{LossWeights, ModelConfig};
use crate::tensor::AdamWConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

/// Every tunable of a run. Unknown keys are rejected; missing keys take the
/// desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dtype: Dtype,
    // model
    pub d: usize,
    pub num_fusion_layers: usize,
    pub num_text_layers: usize,
    pub num_heads: usize,
    pub max_tokens: usize,
    pub point_hidden: usize,
    pub bins: usize,
    pub head_hidden: usize,
    pub points: usize,
    pub t_steps: usize,
    pub diffusion_hidden: usize,
    pub time_dim: usize,
    pub clip_x0: bool,
    pub model_seed: u64,
    // guidance and sampling
    pub guidance_scale: f64,
    pub drop_prob: f64,
    pub top_k: usize,
    // training
    pub alpha_obj: f64,
    pub alpha_lang: f64,
    pub lr_fusion: f64,
    pub lr_diffusion: f64,
    pub lr_end_ratio: f64,
    pub encoder_lr_mult: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub rotate: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub log_every: usize,
    pub train_seed: u64,
    // data
    pub n_scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub data_seed: u64,
    // evaluation
    pub classifier_steps: usize,
    pub classifier_refs_per_class: usize,
    pub jsd_resolution: usize,
    pub eval_seed: u64,
    // paths
    pub data_dir: Option<String>,
    pub output_dir: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self::desk()
    }
}

impl Config {
    /// Small CPU-friendly configuration.
    pub fn desk() -> Self {
        Self {
            dtype: Dtype::F64,
            d: 64,
            num_fusion_layers: 2,
            num_text_layers: 1,
            num_heads: 4,
            max_tokens: 24,
            point_hidden: 64,
            bins: 8,
            head_hidden: 64,
            points: 64,
            t_steps: 32,
            diffusion_hidden: 128,
            time_dim: 32,
            clip_x0: true,
            model_seed: 0,
            guidance_scale: 3.0,
            drop_prob: 0.1,
            top_k: 5,
            alpha_obj: 0.5,
            alpha_lang: 0.5,
            lr_fusion: 1e-3,
            lr_diffusion: 2e-3,
            lr_end_ratio: 0.05,
            encoder_lr_mult: 1.0,
            batch_size: 8,
            steps: 1500,
            rotate: false,
            grad_clip: 5.0,
            log_every: 100,
            train_seed: 1,
            n_scenes: 32,
            min_objects: 3,
            max_objects: 6,
            data_seed: 7,
            classifier_steps: 300,
            classifier_refs_per_class: 16,
            jsd_resolution: crate::metrics::JSD_RESOLUTION,
            eval_seed: 11,
            data_dir: None,
            output_dir: None,
        }
    }

    /// Full-size model and schedule; far beyond CPU budgets.
    pub fn full() -> Self {
        Self {
            d: 768,
            num_fusion_layers: 4,
            num_text_layers: 3,
            num_heads: 12,
            max_tokens: 64,
            point_hidden: 256,
            bins: 32,
            head_hidden: 768,
            points: 1024,
            t_steps: 1024,
            diffusion_hidden: 512,
            time_dim: 128,
            lr_fusion: 2e-4,
            lr_diffusion: 4e-5,
            lr_end_ratio: 0.05,
            encoder_lr_mult: 0.1,
            batch_size: 8,
            steps: 800_000,
            rotate: true,
            grad_clip: 0.0,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => bail!(InvalidArgument, "unknown preset {name:?} (expected desk or full)"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::desk().overlay(text)
    }

    /// `self` with the keys of the TOML document `text` replaced.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let parse = |e: &dyn std::fmt::Display| Error::Parse {
            path: String::new(),
            message: e.to_string(),
        };
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()?).map_err(|e| parse(&e))?;
        let top: toml::Table = toml::from_str(text).map_err(|e| parse(&e))?;
        table.extend(top);
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::desk().load_over(path)
    }

    pub fn load_over(&self, path: &Path) -> Result<Self> {
        self.overlay(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse { path: p, message } => Error::Parse {
                path: format!("{}: {p}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion(1).validate()?;
        if self.bins < 1 || self.points < 2 || self.t_steps < 1 || self.top_k < 1 {
            bail!(InvalidArgument, "bins, top_k and t_steps must be positive and points at least 2");
        }
        if self.diffusion_hidden == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 || self.head_hidden == 0 {
            bail!(InvalidArgument, "diffusion_hidden and head_hidden must be positive, time_dim even and at least 2");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            bail!(InvalidArgument, "object count range {}..={} is empty", self.min_objects, self.max_objects);
        }
        if self.jsd_resolution == 0 {
            bail!(InvalidArgument, "jsd_resolution must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            bail!(InvalidArgument, "grad_clip must be non-negative");
        }
        self.guidance().validate()?;
        self.train().validate()
    }

    pub fn fusion(&self, vocab_len: usize) -> FusionConfig {
        FusionConfig {
            d: self.d,
            num_fusion_layers: self.num_fusion_layers,
            num_text_layers: self.num_text_layers,
            num_heads: self.num_heads,
            text_vocab: vocab_len,
            max_tokens: self.max_tokens,
            point_hidden: self.point_hidden,
        }
    }

    pub fn model(&self, vocab_len: usize) -> ModelConfig {
        ModelConfig {
            fusion: self.fusion(vocab_len),
            bins: self.bins,
            head_hidden: self.head_hidden,
            diffusion: DiffusionConfig {
                t_steps: self.t_steps,
                points: self.points,
                hidden: self.diffusion_hidden,
                time_dim: self.time_dim,
                clip_x0: self.clip_x0,
            },
            seed: self.model_seed,
        }
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            guidance_scale: self.guidance_scale,
            drop_prob: self.drop_prob,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            weights: LossWeights {
                alpha_obj: self.alpha_obj,
                alpha_lang: self.alpha_lang,
            },
            lr_fusion: self.lr_fusion,
            lr_diffusion: self.lr_diffusion,
            lr_end_ratio: self.lr_end_ratio,
            encoder_lr_mult: self.encoder_lr_mult,
            batch_size: self.batch_size,
            steps: self.steps,
            rotate: self.rotate,
            drop_prob: self.drop_prob,
            seed: self.train_seed,
            log_every: self.log_every,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            adamw: AdamWConfig::default(),
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            steps: self.classifier_steps,
            seed: self.eval_seed,
            ..ClassifierConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for c in [Config::desk(), Config::full()] {
            c.validate().unwrap();
            assert_eq!(Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
        }
        let p = Config::full();
        assert_eq!((p.d, p.bins, p.points), (768, 32, 1024));
        assert!((p.lr_fusion * p.lr_end_ratio - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn partial_files_and_unknown_keys() {
        let c = Config::from_toml_str("d = 32\nbins = 16\n").unwrap();
        assert_eq!((c.d, c.bins, c.points), (32, 16, 64));
        assert!(matches!(Config::from_toml_str("bogus = 1\n"), Err(Error::Parse { .. })));
        let Err(Error::Parse { path, .. }) = Config::from_toml_str("bins = \"x\"\n") else { panic!() };
        assert_eq!(path, "bins");
        assert!(Config::from_toml_str("d = 30\nnum_heads = 4\n").is_err());
        assert!(Config::from_toml_str("drop_prob = 1.5\n").is_err());
        let p = Config::full().overlay("steps = 10\n").unwrap();
        assert_eq!((p.d, p.steps), (768, 10));
    }
}
