//! Fusion stage: shapes, attention, order invariance and context sensitivity.

use sceneaug_core::scene::{Scene, DEFAULT_BOUNDS_MARGIN};
use sceneaug_core::synthetic::{class_names, gen_scene};
use sceneaug_core::tensor::Graph;
use sceneaug_core::text::Vocab;
use sceneaug_core::{Model32, Model64};
use sceneaug_core::config::Config;

const TEXT: &str = "place a red chair near the lamp";

fn setup() -> (Config, Vocab, Scene) {
    let mut cfg = Config::desk();
    cfg.d = 32;
    cfg.num_heads = 4;
    cfg.point_hidden = 32;
    cfg.points = 32;
    cfg.max_tokens = 12;
    let vocab = Vocab::build([TEXT]).unwrap();
    let scene = gen_scene(17, 5, cfg.points).unwrap();
    (cfg, vocab, scene)
}

fn model() -> (Model64, Scene) {
    let (cfg, vocab, scene) = setup();
    let m = Model64::new(cfg.model(vocab.len()), vocab, class_names()).unwrap();
    (m, scene)
}

fn z_ctx(m: &Model64, scene: &Scene) -> Vec<f64> {
    let ids = m.encode_text(TEXT).unwrap();
    let mut g = Graph::with_params(&m.store);
    let v = m.fuse(&mut g, scene, &ids, None).unwrap();
    g.value(v.z_ctx).data().to_vec()
}

#[test]
fn output_shapes() {
    let (m, scene) = model();
    let ids = m.encode_text(TEXT).unwrap();
    let mut g = Graph::with_params(&m.store);
    let v = m.fuse(&mut g, &scene, &ids, None).unwrap();
    let d = 32;
    assert_eq!(g.value(v.x_obj).shape(), &[scene.len(), d]);
    assert_eq!(g.value(v.pe).shape(), &[scene.len(), d]);
    assert_eq!(g.value(v.x_lang).shape(), &[ids.len(), d]);
    assert_eq!(g.value(v.x_mm).shape(), &[scene.len() + 1, d]);
    assert_eq!(g.value(v.z_ctx).shape(), &[1, d]);
    assert_eq!(g.value(v.z_ctx).data(), &g.value(v.x_mm).data()[..d]);
}

#[test]
fn attention_rows_are_distributions() {
    let (m, scene) = model();
    let ids = m.encode_text(TEXT).unwrap();
    let mut g = Graph::with_params(&m.store);
    let mut trace = Vec::new();
    m.fuse(&mut g, &scene, &ids, Some(&mut trace)).unwrap();
    assert!(!trace.is_empty());
    for a in trace {
        let t = g.value(a);
        for r in 0..t.rows() {
            let row = &t.data()[r * t.cols()..(r + 1) * t.cols()];
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn context_is_invariant_to_object_order() {
    let (m, scene) = model();
    let base = z_ctx(&m, &scene);
    let mut objects = scene.objects.clone();
    objects.reverse();
    objects.swap(0, 2);
    let permuted = Scene::with_bounds(scene.scene_id.clone(), objects, scene.bounds_min, scene.bounds_max).unwrap();
    let z = z_ctx(&m, &permuted);
    for (a, b) in base.iter().zip(&z) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn context_depends_on_scene_and_text() {
    let (m, scene) = model();
    let base = z_ctx(&m, &scene);
    let mut objects = scene.objects.clone();
    objects[1].location[0] += 0.7;
    let moved = Scene::new(scene.scene_id.clone(), objects, DEFAULT_BOUNDS_MARGIN).unwrap();
    let diff: f64 = base.iter().zip(z_ctx(&m, &moved)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
    let fewer = scene.without_object(0).unwrap();
    let diff: f64 = base.iter().zip(z_ctx(&m, &fewer)).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);

    let ids = m.encode_text("place a red chair").unwrap();
    let mut g = Graph::with_params(&m.store);
    let v = m.fuse(&mut g, &scene, &ids, None).unwrap();
    let diff: f64 = base.iter().zip(g.value(v.z_ctx).data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn single_and_double_precision_agree() {
    let (cfg, vocab, scene) = setup();
    let m64 = Model64::new(cfg.model(vocab.len()), vocab.clone(), class_names()).unwrap();
    let m32 = Model32::new(cfg.model(vocab.len()), vocab, class_names()).unwrap();
    let ids = m64.encode_text(TEXT).unwrap();
    let mut g = Graph::with_params(&m32.store);
    let v = m32.fuse(&mut g, &scene, &ids, None).unwrap();
    let z32 = g.value(v.z_ctx).data().to_vec();
    for (a, b) in z_ctx(&m64, &scene).iter().zip(&z32) {
        assert!((a - *b as f64).abs() < 1e-3, "{a} vs {b}");
    }
}
