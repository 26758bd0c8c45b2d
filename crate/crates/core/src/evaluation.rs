//! End-to-end evaluation of a trained model on instruction examples.

use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::metrics::{evaluate_classes, ClassEval, ClassifierConfig, MetricReport, ShapeClassifier};
use crate::model::{Example, Model};
use crate::position::topk_distance;
use crate::rng::derive;
use crate::scalar::Scalar;
use crate::scene::PointCloud;
use crate::synthetic::gen_shape;

/// Per-entry outcome of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub index: usize,
    pub target_class: String,
    pub dl_at_1: f64,
    pub dl_at_k: f64,
    pub predicted_class: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub entries: Vec<EntryResult>,
    pub generated: Vec<PointCloud>,
}

/// Trains a classifier on `per_class` freshly generated shapes of every
/// class, with seeds drawn from `cfg.seed`.
pub fn reference_classifier(classes: &[String], points: usize, per_class: usize, cfg: &ClassifierConfig) -> Result<ShapeClassifier> {
    if per_class == 0 {
        bail!(InvalidArgument, "need at least one reference shape per class");
    }
    let data = classes
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..per_class).map(move |j| (ci, c, j)))
        .map(|(ci, c, j)| {
            let seed = derive(cfg.seed ^ 0x5eed, (ci * per_class + j) as u64).next_u64();
            Ok((gen_shape(c, seed, points)?, ci))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut clf = ShapeClassifier::new(classes.to_vec(), cfg)?;
    clf.fit(&data, cfg)?;
    Ok(clf)
}

/// Generates one object per example at its top-ranked position and scores
/// the results. Example `i` samples with seed stream `i` of `seed`;
/// reference sets are the ground-truth targets of each class.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[Example],
    classifier: Option<&ShapeClassifier>,
    top_k: usize,
    guidance_scale: f64,
    seed: u64,
    jsd_resolution: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        bail!(EmptyInput, "nothing to evaluate");
    }
    let classes = &model.meta.classes;
    let per: Vec<(PointCloud, f64, f64)> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let (cands, _) = model.top_candidates(&ex.context, &ex.token_ids, top_k)?;
            let locs: Vec<_> = cands.iter().map(|c| c.location).collect();
            let dl1 = topk_distance(&locs[..1], ex.target_location)?;
            let dlk = topk_distance(&locs, ex.target_location)?;
            let (_, _, y) = model.infer_ids(&ex.context, &ex.token_ids)?;
            let s = derive(seed, i as u64).next_u64();
            let cloud = model.diffusion.sample(&model.store, &y, T::lit(guidance_scale), s)?;
            Ok((cloud, dl1, dlk))
        })
        .collect::<Result<_>>()?;
    let generated: Vec<PointCloud> = per.iter().map(|p| p.0.clone()).collect();
    let logits = match classifier {
        Some(c) => Some(c.logits(&generated)?),
        None => None,
    };

    let mut groups: BTreeMap<String, ClassEval> = BTreeMap::new();
    let mut entries = Vec::with_capacity(data.len());
    for (i, (ex, (cloud, dl1, dlk))) in data.iter().zip(&per).enumerate() {
        let name = classes[ex.target_class].clone();
        let g = groups.entry(name.clone()).or_default();
        g.generated.push(cloud.clone());
        g.reference.push(ex.target_cloud.clone());
        g.dl_at_1.push(*dl1);
        g.dl_at_5.push(*dlk);
        let mut predicted = None;
        if let (Some(c), Some(l)) = (classifier, &logits) {
            g.label = c.class_index(&name)?;
            g.logits.push(l[i].clone());
            predicted = Some(c.classes[crate::training::argmax(&l[i])].clone());
        }
        entries.push(EntryResult {
            index: i,
            target_class: name,
            dl_at_1: *dl1,
            dl_at_k: *dlk,
            predicted_class: predicted,
        });
    }
    Ok(Evaluation {
        report: evaluate_classes(&groups, jsd_resolution)?,
        entries,
        generated,
    })
}
