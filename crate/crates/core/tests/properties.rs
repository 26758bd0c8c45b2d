//! Property tests for geometric, metric and data invariants.

use proptest::prelude::*;

use sceneaug_core::io::{read_ply, scene_from_json, scene_to_json, write_ply, PlyFormat};
use sceneaug_core::metrics::{acc_at_k, cov, jsd, mmd, one_nna, rank_of};
use sceneaug_core::pointops::{assignment_cost, emd, emd_bruteforce, farthest_point_sampling};
use sceneaug_core::position::BinGrid;
use sceneaug_core::scene::PointCloud;
use sceneaug_core::synthetic::{class_names, gen_instruction, gen_scene, gen_shape, relation_holds, Relation};
use sceneaug_instruct::VerbTable;

fn coord() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec([coord(), coord(), coord()], n)
}

fn shape_set(n: usize) -> impl Strategy<Value = Vec<PointCloud>> {
    prop::collection::vec((0..8usize, any::<u64>()), n).prop_map(|v| {
        let classes = class_names();
        v.into_iter().map(|(c, s)| gen_shape(&classes[c], s, 12).unwrap()).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantization_error_is_half_a_bin(
        bins in 1usize..40,
        min in [coord(), coord(), coord()],
        span in [0.1..5.0f64, 0.1..5.0f64, 0.1..5.0f64],
        frac in [0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64],
    ) {
        let max = [min[0] + span[0], min[1] + span[1], min[2] + span[2]];
        let grid = BinGrid::new(bins, min, max).unwrap();
        let l = [min[0] + frac[0] * span[0], min[1] + frac[1] * span[1], min[2] + frac[2] * span[2]];
        let q = grid.quantize(l);
        prop_assert!(q.bx < bins && q.by < bins && q.bz < bins);
        let back = grid.dequantize(q).unwrap();
        for a in 0..3 {
            prop_assert!((back[a] - l[a]).abs() <= span[a] / (2.0 * bins as f64) * (1.0 + 1e-12));
        }
        prop_assert_eq!(grid.quantize(back), q);
    }

    #[test]
    fn emd_is_optimal(a in points(1..=6), seed in any::<u64>()) {
        let b: Vec<[f64; 3]> = a.iter().map(|p| [p[2] * 0.5 + (seed % 7) as f64, p[0], -p[1]]).collect();
        let best = emd(&a, &b).unwrap();
        let oracle = emd_bruteforce(&a, &b).unwrap();
        prop_assert!((best.total_cost - oracle.total_cost).abs() <= 1e-9);
        prop_assert!((assignment_cost(&a, &b, &best.permutation) - best.total_cost).abs() <= 1e-9);
        let identity: Vec<usize> = (0..a.len()).collect();
        prop_assert!(best.total_cost <= assignment_cost(&a, &b, &identity) + 1e-12);
        let mut sorted = best.permutation.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, identity);
    }

    #[test]
    fn emd_is_symmetric_and_zero_on_self(a in points(2..=12), b in points(2..=12)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        prop_assert!(emd(a, a).unwrap().total_cost.abs() < 1e-12);
        let ab = emd(a, b).unwrap().total_cost;
        let ba = emd(b, a).unwrap().total_cost;
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
    }

    #[test]
    fn fps_picks_distinct_points(pts in points(1..=40), k in 1usize..40, start in 0usize..40) {
        let start = start % pts.len();
        let k = k.min(pts.len());
        let idx = farthest_point_sampling(&pts, k, start).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert_eq!(idx[0], start);
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
    }

    #[test]
    fn metrics_stay_in_range(g in shape_set(4), r in shape_set(5)) {
        let m = mmd(&g, &r).unwrap();
        let c = cov(&g, &r).unwrap();
        let o = one_nna(&g, &r).unwrap();
        let j = jsd(&g, &r, 12).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&j));
        prop_assert!((j - jsd(&r, &g, 12).unwrap()).abs() < 1e-12);
        prop_assert!(mmd(&r, &r).unwrap() == 0.0 && cov(&r, &r).unwrap() == 1.0);
    }

    #[test]
    fn accuracy_grows_with_k(logits in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 6), 1..20), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..logits.len()).map(|i| (seed as usize).wrapping_add(i * 7) % 6).collect();
        let mut last = 0.0;
        for k in 1..=6 {
            let a = acc_at_k(&logits, &labels, k).unwrap();
            prop_assert!(a >= last && a <= 1.0);
            last = a;
        }
        prop_assert_eq!(last, 1.0);
        for (l, &y) in logits.iter().zip(&labels) {
            prop_assert!(rank_of(l, y) < 6);
        }
    }

    #[test]
    fn generated_instructions_satisfy_their_relation(seed in any::<u64>(), rel in 0usize..5, n in 3usize..7) {
        let scene = gen_scene(seed, n, 8).unwrap();
        let relation = Relation::ALL[rel];
        if let Ok(e) = gen_instruction(&scene, relation, seed ^ 1, &VerbTable::default(), 8) {
            prop_assert_eq!(e.relation, relation);
            let anchors: Vec<_> = e
                .reference_object_ids
                .iter()
                .map(|&i| scene.objects[i].location)
                .collect();
            prop_assert!(relation_holds(relation, e.target_location, &anchors));
            prop_assert!(scene.contains(e.target_location));
        }
    }

    #[test]
    fn scenes_round_trip_through_json_and_ply(seed in any::<u64>(), n in 1usize..6) {
        let scene = gen_scene(seed, n, 8).unwrap();
        prop_assert_eq!(&scene_from_json(&scene_to_json(&scene).unwrap()).unwrap(), &scene);
        for o in &scene.objects {
            let pts = o.world_points();
            let mut text = Vec::new();
            write_ply(&mut text, &pts, PlyFormat::Ascii).unwrap();
            let (back, fmt) = read_ply(text.as_slice()).unwrap();
            prop_assert_eq!(fmt, PlyFormat::Ascii);
            prop_assert_eq!(back.len(), pts.len());
            for (p, q) in pts.iter().zip(&back) {
                for a in 0..3 {
                    prop_assert!((p[a] - q[a]).abs() <= 1e-6 * (1.0 + p[a].abs()));
                }
            }
        }
    }
}
