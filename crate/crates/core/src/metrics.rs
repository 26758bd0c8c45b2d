//! Generative-quality metrics over sets of point clouds: MMD, COV, 1-NNA
//! and JSD under EMD, Acc@k through a reference classifier, and per-class
//! reports with frequency-weighted micro averages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::fusion::ObjectEncoder;
use crate::nn::Linear;
use crate::pointops::emd;
use crate::rng::{derive, normal, seeded};
use crate::scene::{PointCloud, Point};
use crate::tensor::{AdamWConfig, Graph, OptimizerState, ParamStore};

pub const JSD_RESOLUTION: usize = 28;
pub const JSD_EPS: f64 = 1e-10;

/// Mean per-point EMD between every cloud of `a` and every cloud of `b`.
pub fn emd_matrix(a: &[PointCloud], b: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
    let bx: Vec<_> = b.iter().map(PointCloud::xyz).collect();
    a.par_iter()
        .map(|ca| {
            let xa = ca.xyz();
            bx.iter().map(|xb| Ok(emd(&xa, xb)?.mean_cost)).collect()
        })
        .collect()
}

fn check_sets(generated: &[PointCloud], reference: &[PointCloud]) -> Result<()> {
    if generated.is_empty() || reference.is_empty() {
        bail!(InvalidArgument, "metric sets must be non-empty ({} generated, {} reference)", generated.len(), reference.len());
    }
    Ok(())
}

/// Index of the smallest entry; ties go to the smaller index.
fn argmin(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |b, i| if row[i] < row[b] { i } else { b })
}

pub fn mmd_from(d_gen_ref: &[Vec<f64>]) -> f64 {
    let refs = d_gen_ref[0].len();
    (0..refs)
        .map(|r| d_gen_ref.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / refs as f64
}

pub fn cov_from(d_gen_ref: &[Vec<f64>]) -> f64 {
    let refs = d_gen_ref[0].len();
    let mut hit = vec![false; refs];
    for row in d_gen_ref {
        hit[argmin(row)] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / refs as f64
}

/// Leave-one-out 1-NN accuracy on the union (generated first, then
/// reference).
pub fn one_nna_from(d_gg: &[Vec<f64>], d_gr: &[Vec<f64>], d_rr: &[Vec<f64>]) -> f64 {
    let ng = d_gg.len();
    let nr = d_rr.len();
    let n = ng + nr;
    let dist = |i: usize, j: usize| -> f64 {
        match (i < ng, j < ng) {
            (true, true) => d_gg[i][j],
            (true, false) => d_gr[i][j - ng],
            (false, true) => d_gr[j][i - ng],
            (false, false) => d_rr[i - ng][j - ng],
        }
    };
    let correct = (0..n)
        .filter(|&i| {
            let mut best = None::<(f64, usize)>;
            for j in (0..n).filter(|&j| j != i) {
                let d = dist(i, j);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            let j = best.expect("union has at least two items").1;
            (j < ng) == (i < ng)
        })
        .count();
    correct as f64 / n as f64
}

/// Mean over reference clouds of the smallest EMD to any generated cloud.
pub fn mmd(generated: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    check_sets(generated, reference)?;
    Ok(mmd_from(&emd_matrix(generated, reference)?))
}

/// Fraction of reference clouds that are the nearest reference of some
/// generated cloud.
pub fn cov(generated: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    check_sets(generated, reference)?;
    Ok(cov_from(&emd_matrix(generated, reference)?))
}

pub fn one_nna(generated: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    if generated.len() < 2 || reference.len() < 2 {
        bail!(InvalidArgument, "1-NNA needs at least two clouds per set");
    }
    Ok(one_nna_from(
        &emd_matrix(generated, generated)?,
        &emd_matrix(generated, reference)?,
        &emd_matrix(reference, reference)?,
    ))
}

fn voxel_distribution(set: &[PointCloud], res: usize) -> Vec<f64> {
    let mut h = vec![0.0; res * res * res];
    for c in set {
        for p in c.points() {
            let idx: [usize; 3] = std::array::from_fn(|a| (((p[a] + 1.0) / 2.0 * res as f64).floor() as usize).min(res - 1));
            h[(idx[0] * res + idx[1]) * res + idx[2]] += 1.0;
        }
    }
    let total: f64 = h.iter().map(|v| v + JSD_EPS).sum();
    h.iter().map(|v| (v + JSD_EPS) / total).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Jensen-Shannon divergence (natural log) between the pooled voxel
/// occupancy of both sets over `[-1, 1]^3`.
pub fn jsd(generated: &[PointCloud], reference: &[PointCloud], resolution: usize) -> Result<f64> {
    check_sets(generated, reference)?;
    if resolution == 0 {
        bail!(InvalidArgument, "voxel resolution must be positive");
    }
    let p = voxel_distribution(generated, resolution);
    let q = voxel_distribution(reference, resolution);
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0))
}

/// Position of `truth` when `logits` are sorted descending, ties to the
/// smaller index.
pub fn rank_of(logits: &[f64], truth: usize) -> usize {
    let t = logits[truth];
    logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || (v == t && i < truth))
        .count()
}

/// Fraction of rows whose label lies in the top `k` logits.
pub fn acc_at_k(logits: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::CardinalityMismatch {
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        bail!(InvalidArgument, "no predictions to score");
    }
    let classes = logits[0].len();
    if k == 0 || k > classes {
        bail!(InvalidArgument, "k = {k} outside 1..={classes}");
    }
    let hits = logits.iter().zip(labels).filter(|(l, &y)| rank_of(l, y) < k).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub d: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Std of Gaussian jitter added to xyz during training.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            d: 32,
            steps: 300,
            batch_size: 32,
            lr: 3e-3,
            jitter: 0.03,
            seed: 0,
        }
    }
}

/// Object encoder plus linear head, trained on reference shapes and used
/// to score generated ones.
#[derive(Debug, Clone)]
pub struct ShapeClassifier {
    pub classes: Vec<String>,
    pub store: ParamStore<f64>,
    encoder: ObjectEncoder,
    head: Linear,
}

impl ShapeClassifier {
    pub fn new(classes: Vec<String>, cfg: &ClassifierConfig) -> Result<Self> {
        if classes.len() < 2 {
            bail!(InvalidArgument, "a classifier needs at least two classes");
        }
        let mut rng = seeded(cfg.seed);
        let mut store = ParamStore::new();
        let encoder = ObjectEncoder::new(&mut store, "cls.enc", cfg.hidden, cfg.d, &mut rng)?;
        let head = Linear::new(&mut store, "cls.head", cfg.d, classes.len(), &mut rng)?;
        Ok(Self {
            classes,
            store,
            encoder,
            head,
        })
    }

    /// Trains on `(cloud, label)` pairs and returns the final mean loss.
    pub fn fit(&mut self, data: &[(PointCloud, usize)], cfg: &ClassifierConfig) -> Result<f64> {
        if data.is_empty() {
            bail!(EmptyInput, "classifier training set is empty");
        }
        if let Some((_, y)) = data.iter().find(|(_, y)| *y >= self.classes.len()) {
            bail!(Index, "label {y} outside {} classes", self.classes.len());
        }
        let mut opt = OptimizerState::new(&self.store, AdamWConfig::default());
        let mut last = f64::NAN;
        let mut order: Vec<usize> = (0..data.len()).collect();
        for step in 0..cfg.steps {
            let mut rng = derive(cfg.seed, step as u64);
            order.shuffle(&mut rng);
            let batch = &order[..cfg.batch_size.clamp(1, data.len())];
            let clouds: Vec<PointCloud> = batch
                .iter()
                .map(|&i| {
                    let pts: Vec<Point> = data[i]
                        .0
                        .points()
                        .iter()
                        .map(|p| {
                            let mut q = *p;
                            for v in q.iter_mut().take(3) {
                                *v += cfg.jitter * normal::<f64, _>(&mut rng);
                            }
                            q
                        })
                        .collect();
                    PointCloud::clamped(pts)
                })
                .collect::<Result<_>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data[i].1).collect();
            let refs: Vec<&PointCloud> = clouds.iter().collect();
            let mut g = Graph::with_params(&self.store);
            let x = self.encoder.forward(&mut g, &refs)?;
            let logits = self.head.forward(&mut g, x)?;
            let loss = g.cross_entropy_rows(logits, &labels)?;
            last = g.value(loss).item()?;
            let grads = g.backward(loss)?.into_param_grads();
            self.store.zero_grad();
            self.store.accumulate(&grads);
            let lr = cfg.lr * (1.0 - 0.9 * step as f64 / cfg.steps.max(1) as f64);
            opt.update(&mut self.store, |_| lr);
        }
        Ok(last)
    }

    pub fn logits(&self, clouds: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let mut g = Graph::with_params(&self.store);
        let x = self.encoder.forward(&mut g, &refs)?;
        let logits = self.head.forward(&mut g, x)?;
        let v = g.value(logits);
        Ok((0..v.rows()).map(|r| v.row_slice(r).to_vec()).collect())
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown object class {name:?}")))
    }
}

/// One value per metric; `None` where the metric is undefined for the class
/// (e.g. 1-NNA on a single cloud).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mmd: Option<f64>,
    pub cov: Option<f64>,
    pub one_nna: Option<f64>,
    pub jsd: Option<f64>,
    pub acc_at_1: Option<f64>,
    pub acc_at_5: Option<f64>,
    pub dl_at_1: Option<f64>,
    pub dl_at_5: Option<f64>,
}

impl MetricValues {
    fn fields(&self) -> [Option<f64>; 8] {
        [self.mmd, self.cov, self.one_nna, self.jsd, self.acc_at_1, self.acc_at_5, self.dl_at_1, self.dl_at_5]
    }

    fn from_fields(f: [Option<f64>; 8]) -> Self {
        Self {
            mmd: f[0],
            cov: f[1],
            one_nna: f[2],
            jsd: f[3],
            acc_at_1: f[4],
            acc_at_5: f[5],
            dl_at_1: f[6],
            dl_at_5: f[7],
        }
    }
}

/// Frequency-weighted mean of each metric. Weights are renormalised over
/// the classes where a metric is defined.
pub fn micro_average(per_class: &BTreeMap<String, MetricValues>, frequencies: &BTreeMap<String, f64>) -> Result<MetricValues> {
    if !per_class.keys().eq(frequencies.keys()) {
        bail!(Consistency, "metric classes and frequency classes differ");
    }
    if per_class.is_empty() {
        bail!(EmptyInput, "no classes to average");
    }
    let total: f64 = frequencies.values().sum();
    if frequencies.values().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        bail!(InvalidArgument, "class frequencies must be non-negative and sum to 1 (sum {total})");
    }
    let mut out = [None; 8];
    for (k, slot) in out.iter_mut().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for (c, v) in per_class {
            if let Some(x) = v.fields()[k] {
                num += frequencies[c] * x;
                den += frequencies[c];
            }
        }
        if den > 0.0 {
            *slot = Some(num / den);
        }
    }
    Ok(MetricValues::from_fields(out))
}

/// Per-class metrics, keyed by metric then class, plus the micro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub frequencies: BTreeMap<String, f64>,
    pub mmd: BTreeMap<String, Option<f64>>,
    pub cov: BTreeMap<String, Option<f64>>,
    pub one_nna: BTreeMap<String, Option<f64>>,
    pub jsd: BTreeMap<String, Option<f64>>,
    pub acc_at_1: BTreeMap<String, Option<f64>>,
    pub acc_at_5: BTreeMap<String, Option<f64>>,
    pub dl_at_1: BTreeMap<String, Option<f64>>,
    pub dl_at_5: BTreeMap<String, Option<f64>>,
    pub micro_avg: MetricValues,
}

impl MetricReport {
    pub fn new(per_class: BTreeMap<String, MetricValues>, frequencies: BTreeMap<String, f64>) -> Result<Self> {
        let micro_avg = micro_average(&per_class, &frequencies)?;
        let col = |k: usize| per_class.iter().map(|(c, v)| (c.clone(), v.fields()[k])).collect();
        Ok(Self {
            mmd: col(0),
            cov: col(1),
            one_nna: col(2),
            jsd: col(3),
            acc_at_1: col(4),
            acc_at_5: col(5),
            dl_at_1: col(6),
            dl_at_5: col(7),
            frequencies,
            micro_avg,
        })
    }

    pub fn class_values(&self, class: &str) -> Option<MetricValues> {
        let get = |m: &BTreeMap<String, Option<f64>>| m.get(class).copied().flatten();
        self.frequencies.contains_key(class).then(|| {
            MetricValues::from_fields([
                get(&self.mmd),
                get(&self.cov),
                get(&self.one_nna),
                get(&self.jsd),
                get(&self.acc_at_1),
                get(&self.acc_at_5),
                get(&self.dl_at_1),
                get(&self.dl_at_5),
            ])
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Aligned text table; MMD is shown ×10² and JSD ×10¹.
    pub fn to_table(&self) -> String {
        let head = ["class", "freq", "MMD(e-2)", "COV", "1-NNA", "JSD(e-1)", "Acc@1", "Acc@5", "dl@1", "dl@5"];
        let scale = [100.0, 1.0, 1.0, 10.0, 1.0, 1.0, 1.0, 1.0];
        let fmt_row = |name: &str, freq: Option<f64>, v: &MetricValues| -> Vec<String> {
            let mut r = vec![name.to_string(), freq.map_or("-".into(), |f| format!("{f:.3}"))];
            r.extend(v.fields().iter().zip(scale).map(|(x, s)| x.map_or("-".into(), |x| format!("{:.3}", x * s))));
            r
        };
        let mut rows: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
        for (c, f) in &self.frequencies {
            rows.push(fmt_row(c, Some(*f), &self.class_values(c).unwrap_or_default()));
        }
        rows.push(fmt_row("micro avg", None, &self.micro_avg));
        let widths: Vec<usize> = (0..head.len()).map(|k| rows.iter().map(|r| r[k].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (s, &w))| if k == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Generated and reference clouds of one class, with optional classifier
/// logits and Top-K location errors for the generated items.
#[derive(Debug, Clone, Default)]
pub struct ClassEval {
    pub generated: Vec<PointCloud>,
    pub reference: Vec<PointCloud>,
    pub logits: Vec<Vec<f64>>,
    pub label: usize,
    pub dl_at_1: Vec<f64>,
    pub dl_at_5: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// All metrics of one class.
pub fn class_metrics(e: &ClassEval, jsd_resolution: usize) -> Result<MetricValues> {
    check_sets(&e.generated, &e.reference)?;
    let d_gr = emd_matrix(&e.generated, &e.reference)?;
    let one_nna = if e.generated.len() >= 2 && e.reference.len() >= 2 {
        Some(one_nna_from(
            &emd_matrix(&e.generated, &e.generated)?,
            &d_gr,
            &emd_matrix(&e.reference, &e.reference)?,
        ))
    } else {
        None
    };
    let labels = vec![e.label; e.logits.len()];
    let acc = |k: usize| -> Result<Option<f64>> {
        if e.logits.is_empty() || e.logits[0].len() < k {
            Ok(None)
        } else {
            acc_at_k(&e.logits, &labels, k).map(Some)
        }
    };
    Ok(MetricValues {
        mmd: Some(mmd_from(&d_gr)),
        cov: Some(cov_from(&d_gr)),
        one_nna,
        jsd: Some(jsd(&e.generated, &e.reference, jsd_resolution)?),
        acc_at_1: acc(1)?,
        acc_at_5: acc(5)?,
        dl_at_1: mean(&e.dl_at_1),
        dl_at_5: mean(&e.dl_at_5),
    })
}

/// Report over classes; frequency is each class's share of generated
/// items.
pub fn evaluate_classes(per_class: &BTreeMap<String, ClassEval>, jsd_resolution: usize) -> Result<MetricReport> {
    let total: usize = per_class.values().map(|e| e.generated.len()).sum();
    if total == 0 {
        bail!(EmptyInput, "nothing to evaluate");
    }
    let mut values = BTreeMap::new();
    let mut freqs = BTreeMap::new();
    for (c, e) in per_class {
        values.insert(c.clone(), class_metrics(e, jsd_resolution)?);
        freqs.insert(c.clone(), e.generated.len() as f64 / total as f64);
    }
    MetricReport::new(values, freqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(seed: u64, n: usize, offset: f64) -> PointCloud {
        let mut r = seeded(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let p: [f64; 3] = std::array::from_fn(|_| (r.random::<f64>() * 0.4 - 0.2 + offset).clamp(-1.0, 1.0));
                    [p[0], p[1], p[2], 0.0, 0.0, 0.0]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_sets() {
        let a: Vec<_> = (0..4).map(|i| cloud(i, 6, 0.0)).collect();
        assert_eq!(mmd(&a, &a).unwrap(), 0.0);
        assert_eq!(cov(&a, &a).unwrap(), 1.0);
        assert_eq!(one_nna(&a, &a).unwrap(), 0.0);
        assert!(jsd(&a, &a, JSD_RESOLUTION).unwrap() < 1e-12);
    }

    #[test]
    fn collapsed_generation_covers_one() {
        let r: Vec<_> = (0..5).map(|i| cloud(i, 6, 0.0)).collect();
        let g = vec![r[2].clone(); 3];
        assert_eq!(cov(&g, &r).unwrap(), 0.2);
        assert!(mmd(&g[..1], &r).unwrap() >= mmd(&g, &r).unwrap());
    }

    #[test]
    fn jsd_disjoint_and_symmetric() {
        let a = vec![cloud(1, 32, -0.7)];
        let b = vec![cloud(2, 32, 0.7)];
        let d = jsd(&a, &b, JSD_RESOLUTION).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-6, "{d}");
        assert_eq!(d, jsd(&b, &a, JSD_RESOLUTION).unwrap());
    }

    #[test]
    fn accuracy_and_ranks() {
        let logits = vec![vec![0.1, 0.9, 0.0], vec![0.5, 0.5, 0.2]];
        assert_eq!(rank_of(&logits[1], 1), 1);
        assert_eq!(acc_at_k(&logits, &[1, 1], 1).unwrap(), 0.5);
        assert_eq!(acc_at_k(&logits, &[1, 1], 3).unwrap(), 1.0);
        assert!(acc_at_k(&logits, &[1, 1], 4).is_err());
        assert!(mmd(&[], &[cloud(0, 4, 0.0)]).is_err());
        assert!(one_nna(&[cloud(0, 4, 0.0)], &[cloud(1, 4, 0.0)]).is_err());
    }

    #[test]
    fn micro_average_examples() {
        let v = |x| MetricValues {
            mmd: Some(x),
            ..Default::default()
        };
        let per: BTreeMap<_, _> = [("a".to_string(), v(4.0)), ("b".to_string(), v(8.0))].into();
        let f: BTreeMap<_, _> = [("a".to_string(), 0.75), ("b".to_string(), 0.25)].into();
        assert_eq!(micro_average(&per, &f).unwrap().mmd, Some(5.0));
        let f2: BTreeMap<_, _> = [("a".to_string(), 1.0)].into();
        assert!(matches!(micro_average(&per, &f2), Err(Error::Consistency(_))));
        let report = MetricReport::new(per, f).unwrap();
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for k in ["mmd", "cov", "one_nna", "jsd", "acc_at_1", "acc_at_5", "dl_at_1", "dl_at_5", "micro_avg"] {
            assert!(json.get(k).is_some(), "{k}");
        }
        assert!(report.to_table().contains("500.000"));
    }
}
