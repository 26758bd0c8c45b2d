use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sceneaug_core::config::{Config, Dtype};
use sceneaug_core::dataset::{build_examples, build_vocab};
use sceneaug_core::evaluation::{evaluate, reference_classifier};
use sceneaug_core::io::{read_entries, read_ply_file, read_scene, scene_points, write_entries, write_ply_file, write_scene, PlyFormat};
use sceneaug_core::metrics::{evaluate_classes, ClassEval, MetricReport};
use sceneaug_core::model::Model;
use sceneaug_core::scene::{PointCloud, Scene};
use sceneaug_core::synthetic::{class_names, gen_dataset, InstructionEntry};
use sceneaug_core::tensor::ParamsFile;
use sceneaug_core::training::train_loop;
use sceneaug_core::Scalar;
use sceneaug_instruct::{read_jobs_jsonl, run_pipeline, write_jobs_jsonl, HttpClient, JobStatus, MockClient, ParaphraseClient, PipelineConfig, VerbTable};

use crate::{Command, Common, Preset};

const SCENES_DIR: &str = "scenes";
const INSTRUCTIONS_FILE: &str = "instructions.jsonl";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Datagen { common, out, scenes } => datagen(&common, &out, scenes),
        Command::Transform {
            common,
            input,
            output,
            endpoint,
            max_rounds,
            timeout_secs,
            entries_out,
        } => transform(&common, &input, &output, endpoint, max_rounds, timeout_secs, entries_out.as_deref()),
        Command::Train { common, data, out, log, steps } => train(&common, &data, &out, log.as_deref(), steps),
        Command::Generate {
            common,
            model,
            scene,
            text,
            out,
            k,
            guidance,
            class,
            ascii,
        } => generate(&common, &model, &scene, &text, &out, k, guidance, class, ascii),
        Command::Evaluate {
            common,
            model,
            data,
            generated,
            reference,
            out,
        } => match (model, data, generated, reference) {
            (Some(m), Some(d), None, None) => evaluate_model(&common, &m, &d, out.as_deref()),
            (None, None, Some(g), Some(r)) => evaluate_sets(&common, &g, &r, out.as_deref()),
            _ => bail!("evaluate needs either --model with --data, or --generated with --reference"),
        },
        Command::Inspect { path } => inspect(&path),
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let base = match common.preset {
        Preset::Desk => Config::desk(),
        Preset::Full => Config::full(),
    };
    Ok(match &common.config {
        Some(p) => base.load_over(p)?,
        None => base,
    })
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn datagen(common: &Common, out: &Path, scenes: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.data_seed = s;
    }
    let n = scenes.unwrap_or(cfg.n_scenes);
    let verbs = VerbTable::default();
    let data = gen_dataset(cfg.data_seed, n, (cfg.min_objects, cfg.max_objects), cfg.points, &verbs)?;
    let dir = out.join(SCENES_DIR);
    create_dir(&dir)?;
    let mut entries = Vec::with_capacity(data.len());
    for (scene, entry) in data {
        write_scene(&dir.join(format!("{}.json", scene.scene_id)), &scene)?;
        entries.push(entry);
    }
    write_entries(BufWriter::new(File::create(out.join(INSTRUCTIONS_FILE))?), &entries)?;
    println!("wrote {} scenes and {} instructions to {}", n, entries.len(), out.display());
    Ok(())
}

fn transform(
    common: &Common,
    input: &Path,
    output: &Path,
    endpoint: Option<String>,
    max_rounds: usize,
    timeout_secs: u64,
    entries_out: Option<&Path>,
) -> Result<()> {
    let jobs = read_jobs_jsonl(BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?))?;
    let cfg = PipelineConfig {
        max_rounds,
        seed: common.seed.unwrap_or(0),
        ..PipelineConfig::default()
    };
    let http;
    let client: &dyn ParaphraseClient = match endpoint {
        Some(url) => {
            http = HttpClient::new(url, Duration::from_secs(timeout_secs))?;
            &http
        }
        None => &MockClient,
    };
    let out = run_pipeline(jobs, client, None, &cfg)?;
    write_jobs_jsonl(BufWriter::new(File::create(output)?), &out.jobs)?;
    if let Some(path) = entries_out {
        let mut entries = read_entries(BufReader::new(File::open(input)?))?;
        let clean: BTreeMap<&str, &str> = out
            .jobs
            .iter()
            .filter(|j| j.status == JobStatus::Clean)
            .filter_map(|j| Some((j.id.as_str(), j.current_paraphrase.as_deref()?)))
            .collect();
        for e in &mut entries {
            if let Some(t) = clean.get(e.id.as_str()) {
                e.text = t.to_string();
            }
        }
        write_entries(BufWriter::new(File::create(path)?), &entries)?;
    }
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Vec<Scene>, Vec<InstructionEntry>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join(SCENES_DIR))
        .with_context(|| format!("reading {}", dir.join(SCENES_DIR).display()))?
        .map(|e| Ok(e?.path()))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    let scenes = paths.iter().map(|p| read_scene(p)).collect::<Result<Vec<_>, _>>()?;
    let path = dir.join(INSTRUCTIONS_FILE);
    let entries = read_entries(BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?))?;
    if entries.is_empty() {
        bail!("{} has no entries", path.display());
    }
    Ok((scenes, entries))
}

fn train(common: &Common, data: &Path, out: &Path, log: Option<&Path>, steps: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.train_seed = s;
        cfg.model_seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    match cfg.dtype {
        Dtype::F64 => train_typed::<f64>(&cfg, data, out, log),
        Dtype::F32 => train_typed::<f32>(&cfg, data, out, log),
    }
}

fn train_typed<T: Scalar>(cfg: &Config, data: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let (scenes, entries) = load_dataset(data)?;
    let verbs = VerbTable::default();
    let vocab = build_vocab(&entries, &verbs)?;
    let classes = class_names();
    let examples = build_examples(&scenes, &entries, &vocab, &classes, cfg.max_tokens, cfg.points)?;
    let mut model = Model::<T>::new(cfg.model(vocab.len()), vocab, classes)?;
    let mut log_file = log.map(File::create).transpose()?.map(BufWriter::new);
    let mut io_err = None;
    let report = train_loop(&mut model, &examples, &cfg.train(), |l| {
        eprintln!("step {:>6}  total {:.5}  mm {:.5}  point-e {:.5}", l.step, l.losses.total, l.losses.l_mm, l.losses.l_pointe);
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = serde_json::to_writer(&mut *f, l).map_err(std::io::Error::from).and_then(|_| writeln!(f)) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing the loss log");
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    std::fs::write(out, model.to_checkpoint()?.to_json()?)?;
    let last = report.final_losses().unwrap_or_default();
    println!("trained {} steps on {} examples; final total loss {:.5}; checkpoint {}", cfg.steps, examples.len(), last.total, out.display());
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<ParamsFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ParamsFile::from_json(&text)?)
}

#[derive(Serialize)]
struct CandidateSummary {
    rank: usize,
    location: [f64; 3],
    probability: f64,
    size: f64,
    class: String,
    ply: String,
    scene: String,
}

#[allow(clippy::too_many_arguments)]
fn generate(
    common: &Common,
    model: &Path,
    scene: &Path,
    text: &str,
    out: &Path,
    k: Option<usize>,
    guidance: Option<f64>,
    class: Option<String>,
    ascii: bool,
) -> Result<()> {
    let cfg = load_config(common)?;
    let file = read_checkpoint(model)?;
    let args = GenerateArgs {
        scene: read_scene(scene)?,
        text,
        out,
        k: k.unwrap_or(cfg.top_k),
        guidance: guidance.unwrap_or(cfg.guidance_scale),
        seed: common.seed.unwrap_or(cfg.eval_seed),
        class,
        format: if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian },
    };
    match file.dtype.as_str() {
        "f64" => generate_typed(&Model::<f64>::from_checkpoint(&file)?, args),
        "f32" => generate_typed(&Model::<f32>::from_checkpoint(&file)?, args),
        other => bail!("checkpoint has unsupported dtype {other:?}"),
    }
}

struct GenerateArgs<'a> {
    scene: Scene,
    text: &'a str,
    out: &'a Path,
    k: usize,
    guidance: f64,
    seed: u64,
    class: Option<String>,
    format: PlyFormat,
}

fn generate_typed<T: Scalar>(model: &Model<T>, a: GenerateArgs<'_>) -> Result<()> {
    let class = match a.class {
        Some(c) => {
            model.class_index(&c)?;
            c
        }
        None => model.meta.classes[model.predict_target_class(&model.encode_text(a.text)?)?].clone(),
    };
    let cands = model.generate(&a.scene, a.text, a.k, a.guidance, a.seed)?;
    create_dir(a.out)?;
    let mut summary = Vec::with_capacity(cands.len());
    for c in &cands {
        let augmented = model.augment(&a.scene, c, &class)?;
        let obj = augmented.objects.last().expect("augment appends an object");
        let ply = format!("candidate_{}.ply", c.rank);
        let json = format!("augmented_{}.json", c.rank);
        write_ply_file(&a.out.join(&ply), &obj.world_points(), a.format)?;
        write_scene(&a.out.join(&json), &augmented)?;
        summary.push(CandidateSummary {
            rank: c.rank,
            location: c.location,
            probability: c.probability,
            size: c.size,
            class: class.clone(),
            ply,
            scene: json,
        });
    }
    std::fs::write(a.out.join("candidates.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("wrote {} candidates for class {class} to {}", cands.len(), a.out.display());
    Ok(())
}

fn emit_report(report: &MetricReport, out: Option<&Path>) -> Result<()> {
    let json = report.to_json()?;
    match out {
        Some(p) => {
            std::fs::write(p, json + "\n")?;
            print!("{}", report.to_table());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn evaluate_model(common: &Common, model: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.eval_seed = s;
    }
    let file = read_checkpoint(model)?;
    match file.dtype.as_str() {
        "f64" => evaluate_typed(&Model::<f64>::from_checkpoint(&file)?, &cfg, data, out),
        "f32" => evaluate_typed(&Model::<f32>::from_checkpoint(&file)?, &cfg, data, out),
        other => bail!("checkpoint has unsupported dtype {other:?}"),
    }
}

fn evaluate_typed<T: Scalar>(model: &Model<T>, cfg: &Config, data: &Path, out: Option<&Path>) -> Result<()> {
    let (scenes, entries) = load_dataset(data)?;
    let mc = model.config();
    let examples = build_examples(&scenes, &entries, &model.meta.vocab, &model.meta.classes, mc.fusion.max_tokens, mc.diffusion.points)?;
    let clf = reference_classifier(&model.meta.classes, mc.diffusion.points, cfg.classifier_refs_per_class, &cfg.classifier())?;
    let ev = evaluate(model, &examples, Some(&clf), cfg.top_k, cfg.guidance_scale, cfg.eval_seed, cfg.jsd_resolution)?;
    emit_report(&ev.report, out)
}

fn sets_by_class(scene: &Scene) -> BTreeMap<String, Vec<PointCloud>> {
    let mut m: BTreeMap<String, Vec<PointCloud>> = BTreeMap::new();
    for o in &scene.objects {
        m.entry(o.class_label.clone()).or_default().push(o.cloud.clone());
    }
    m
}

fn evaluate_sets(common: &Common, generated: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let gen = sets_by_class(&read_scene(generated)?);
    let mut refs = sets_by_class(&read_scene(reference)?);
    let mut groups = BTreeMap::new();
    for (c, g) in gen {
        let Some(r) = refs.remove(&c) else {
            bail!("class {c:?} has generated objects but no reference objects");
        };
        groups.insert(
            c,
            ClassEval {
                generated: g,
                reference: r,
                ..ClassEval::default()
            },
        );
    }
    emit_report(&evaluate_classes(&groups, cfg.jsd_resolution)?, out)
}

fn inspect(path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "ply" => {
            let (pts, fmt) = read_ply_file(path)?;
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in &pts {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            println!("PLY ({fmt:?}): {} vertices, bounds {lo:?} .. {hi:?}", pts.len());
        }
        "jsonl" => {
            let jobs = read_jobs_jsonl(BufReader::new(File::open(path)?));
            match read_entries(BufReader::new(File::open(path)?)) {
                Ok(entries) => {
                    let mut by_rel: BTreeMap<String, usize> = BTreeMap::new();
                    let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
                    for e in &entries {
                        *by_rel.entry(serde_json::to_value(e.relation)?.as_str().unwrap_or_default().to_string()).or_default() += 1;
                        *by_class.entry(&e.target_class).or_default() += 1;
                    }
                    println!("{} instruction entries", entries.len());
                    println!("relations: {by_rel:?}");
                    println!("target classes: {by_class:?}");
                }
                Err(_) => {
                    let jobs = jobs?;
                    let summary = sceneaug_instruct::Summary::from_jobs(&jobs);
                    println!("{} paraphrase jobs", jobs.len());
                    println!("{}", serde_json::to_string_pretty(&summary)?);
                }
            }
        }
        _ => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let v: serde_json::Value = serde_json::from_str(&text).context("not a JSON document")?;
            if v.get("format").is_some() {
                let f = ParamsFile::from_json(&text)?;
                let scalars: usize = f.params.iter().map(|p| p.values.len()).sum();
                println!("checkpoint {} v{} ({}): {} tensors, {} scalars", f.format, f.version, f.dtype, f.params.len(), scalars);
                if let Some(c) = f.config.get("config") {
                    println!("config: {c}");
                }
            } else {
                let s = read_scene(path)?;
                println!("scene {}: {} objects, bounds {:?} .. {:?}", s.scene_id, s.len(), s.bounds_min, s.bounds_max);
                for (i, o) in s.objects.iter().enumerate() {
                    println!("  [{i}] {:<10} at {:?} size {:.3} ({} points)", o.class_label, o.location, o.size, o.cloud.len());
                }
                println!("total points: {}", scene_points(&s).len());
            }
        }
    }
    Ok(())
}
