//! Procedural scenes, parametric object shapes and templated generative
//! instructions with ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use sceneaug_instruct::{run_filters, sample_verb, VerbTable};

use crate::error::{bail, Error, Result};
use crate::pointops::farthest_point_sampling;
use crate::rng::{derive, seeded, uniform, SeededRng};
use crate::scene::{normalize_cloud, Point, PointCloud, Scene, SceneObject, Vec3, DEFAULT_BOUNDS_MARGIN};

pub const NEAR_THRESHOLD: f64 = 0.8;
/// Minimum offset along the named direction for left/right/front.
pub const DIRECTION_MIN: f64 = 0.3;
/// Maximum sideways offset for left/right/front.
pub const DIRECTION_LATERAL: f64 = 0.6;
pub const BETWEEN_RANGE: (f64, f64) = (0.3, 0.7);
pub const BETWEEN_LATERAL: f64 = 0.4;
pub const ROOM_SIZE: f64 = 5.0;
/// Class re-draws for an object that does not fit.
const CLASS_TRIES: usize = 4;
/// Raw samples per output point before farthest point sampling.
const OVERSAMPLE: usize = 4;
const PLACEMENT_TRIES: usize = 200;
const RELATION_TRIES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Near,
    LeftOf,
    RightOf,
    Between,
    InFrontOf,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Near,
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Between,
        Relation::InFrontOf,
    ];

    pub fn anchors(self) -> usize {
        if self == Relation::Between {
            2
        } else {
            1
        }
    }
}

impl std::str::FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "near" => Relation::Near,
            "left_of" => Relation::LeftOf,
            "right_of" => Relation::RightOf,
            "between" => Relation::Between,
            "in_front_of" => Relation::InFrontOf,
            _ => bail!(InvalidArgument, "unknown relation {s:?}"),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Part {
    /// Box surface: centre and full extents.
    Cuboid { c: Vec3, e: Vec3 },
    /// Vertical cylinder: base centre, radius, height, capped ends.
    Cylinder { c: Vec3, r: f64, h: f64, caps: bool },
}

impl Part {
    fn area(&self) -> f64 {
        match *self {
            Part::Cuboid { e, .. } => 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2]),
            Part::Cylinder { r, h, caps, .. } => {
                std::f64::consts::TAU * r * h + if caps { 2.0 * std::f64::consts::PI * r * r } else { 0.0 }
            }
        }
    }

    fn sample(&self, rng: &mut SeededRng) -> Vec3 {
        match *self {
            Part::Cuboid { c, e } => {
                let areas = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (a, &ar) in areas.iter().enumerate() {
                    if pick < ar {
                        axis = a;
                        break;
                    }
                    pick -= ar;
                }
                let side = if rng.random::<bool>() { 0.5 } else { -0.5 };
                std::array::from_fn(|a| {
                    let u = if a == axis { side } else { rng.random::<f64>() - 0.5 };
                    c[a] + u * e[a]
                })
            }
            Part::Cylinder { c, r, h, caps } => {
                let side = std::f64::consts::TAU * r * h;
                let cap = if caps { std::f64::consts::PI * r * r } else { 0.0 };
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let pick = rng.random::<f64>() * (side + 2.0 * cap);
                if pick < side {
                    [c[0] + r * theta.cos(), c[1] + r * theta.sin(), c[2] + rng.random::<f64>() * h]
                } else {
                    let rr = r * rng.random::<f64>().sqrt();
                    let z = if pick < side + cap { c[2] } else { c[2] + h };
                    [c[0] + rr * theta.cos(), c[1] + rr * theta.sin(), z]
                }
            }
        }
    }
}

/// A parametric object class: base dimensions (w, d, h) in metres and two
/// named colours unique to the class.
#[derive(Debug, Clone, Copy)]
pub struct ShapeFamily {
    pub name: &'static str,
    pub dims: Vec3,
    pub colors: [(&'static str, [u8; 3]); 2],
}

pub const FAMILIES: [ShapeFamily; 8] = [
    ShapeFamily {
        name: "chair",
        dims: [0.5, 0.5, 0.9],
        colors: [("red", [200, 30, 30]), ("maroon", [128, 0, 0])],
    },
    ShapeFamily {
        name: "table",
        dims: [1.2, 0.8, 0.75],
        colors: [("brown", [139, 90, 43]), ("tan", [210, 180, 140])],
    },
    ShapeFamily {
        name: "lamp",
        dims: [0.4, 0.4, 1.5],
        colors: [("yellow", [240, 220, 40]), ("gold", [212, 175, 55])],
    },
    ShapeFamily {
        name: "box",
        dims: [0.5, 0.5, 0.5],
        colors: [("orange", [255, 140, 0]), ("pink", [255, 150, 200])],
    },
    ShapeFamily {
        name: "trash_can",
        dims: [0.36, 0.36, 0.45],
        colors: [("green", [30, 160, 60]), ("olive", [128, 128, 0])],
    },
    ShapeFamily {
        name: "shelf",
        dims: [0.8, 0.3, 1.6],
        colors: [("blue", [30, 80, 220]), ("navy", [0, 0, 128])],
    },
    ShapeFamily {
        name: "monitor",
        dims: [0.55, 0.2, 0.5],
        colors: [("black", [20, 20, 20]), ("gray", [128, 128, 128])],
    },
    ShapeFamily {
        name: "sofa",
        dims: [2.0, 0.9, 0.8],
        colors: [("purple", [128, 40, 160]), ("violet", [190, 120, 240])],
    },
];

pub fn class_names() -> Vec<String> {
    FAMILIES.iter().map(|f| f.name.to_string()).collect()
}

pub fn family(class: &str) -> Result<&'static ShapeFamily> {
    FAMILIES
        .iter()
        .find(|f| f.name == class)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown object class {class:?}")))
}

/// Display form of a class name (`trash_can` → `trash can`).
pub fn class_words(class: &str) -> String {
    class.replace('_', " ")
}

fn parts(class: &str, [w, d, h]: Vec3) -> Vec<Part> {
    let z0 = -h / 2.0;
    let cub = |c: Vec3, e: Vec3| Part::Cuboid { c, e };
    let leg = |x: f64, y: f64, t: f64, len: f64| cub([x, y, z0 + len / 2.0], [t, t, len]);
    match class {
        "chair" => {
            let seat = 0.5 * h;
            let t = 0.05 * w.min(d);
            let (lx, ly) = (w / 2.0 - t, d / 2.0 - t);
            vec![
                cub([0.0, 0.0, z0 + seat], [w, d, 0.06 * h]),
                cub([0.0, d / 2.0 - t, z0 + seat + (h - seat) / 2.0], [w, 2.0 * t, h - seat]),
                leg(lx, ly, 2.0 * t, seat),
                leg(-lx, ly, 2.0 * t, seat),
                leg(lx, -ly, 2.0 * t, seat),
                leg(-lx, -ly, 2.0 * t, seat),
            ]
        }
        "table" => {
            let t = 0.05;
            let (lx, ly) = (w / 2.0 - t, d / 2.0 - t);
            vec![
                cub([0.0, 0.0, h / 2.0 - 0.03], [w, d, 0.06]),
                leg(lx, ly, 2.0 * t, h - 0.06),
                leg(-lx, ly, 2.0 * t, h - 0.06),
                leg(lx, -ly, 2.0 * t, h - 0.06),
                leg(-lx, -ly, 2.0 * t, h - 0.06),
            ]
        }
        "lamp" => {
            let r = w.min(d) / 2.0;
            vec![
                Part::Cylinder { c: [0.0, 0.0, z0], r: 0.7 * r, h: 0.03 * h, caps: true },
                Part::Cylinder { c: [0.0, 0.0, z0], r: 0.06 * r, h: 0.8 * h, caps: false },
                Part::Cylinder { c: [0.0, 0.0, z0 + 0.8 * h], r, h: 0.2 * h, caps: false },
            ]
        }
        "box" => vec![cub([0.0; 3], [w, d, h])],
        "trash_can" => vec![Part::Cylinder { c: [0.0, 0.0, z0], r: w.min(d) / 2.0, h, caps: false }],
        "shelf" => {
            let t = 0.03;
            let mut v = vec![
                cub([w / 2.0 - t / 2.0, 0.0, 0.0], [t, d, h]),
                cub([-w / 2.0 + t / 2.0, 0.0, 0.0], [t, d, h]),
                cub([0.0, d / 2.0 - t / 2.0, 0.0], [w, t, h]),
            ];
            for i in 0..4 {
                let z = z0 + t / 2.0 + i as f64 * (h - t) / 3.0;
                v.push(cub([0.0, 0.0, z], [w, d, t]));
            }
            v
        }
        "monitor" => {
            let screen = 0.65 * h;
            vec![
                cub([0.0, 0.0, h / 2.0 - screen / 2.0], [w, 0.2 * d, screen]),
                cub([0.0, 0.0, z0 + (h - screen) / 2.0], [0.08 * w, 0.2 * d, h - screen]),
                cub([0.0, 0.0, z0 + 0.01], [0.4 * w, d, 0.02]),
            ]
        }
        _ => {
            // sofa
            let seat = 0.45 * h;
            let arm = 0.12 * w;
            vec![
                cub([0.0, 0.0, z0 + seat / 2.0], [w, d, seat]),
                cub([0.0, d / 2.0 - 0.1 * d, 0.0], [w, 0.2 * d, h]),
                cub([w / 2.0 - arm / 2.0, 0.0, z0 + 0.65 * h / 2.0], [arm, d, 0.65 * h]),
                cub([-w / 2.0 + arm / 2.0, 0.0, z0 + 0.65 * h / 2.0], [arm, d, 0.65 * h]),
            ]
        }
    }
}

/// A generated object before placement.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub cloud: PointCloud,
    pub size: f64,
    pub color: &'static str,
}

/// Samples `points` surface points of a jittered instance of `class`.
pub fn gen_object(class: &str, seed: u64, points: usize) -> Result<ShapeSample> {
    let fam = family(class)?;
    if points < 2 {
        bail!(InvalidArgument, "a shape needs at least two points");
    }
    let mut rng = seeded(seed);
    let dims: Vec3 = std::array::from_fn(|a| fam.dims[a] * uniform(&mut rng, 0.85, 1.15));
    let (color, rgb) = fam.colors[rng.random_range(0..2)];
    let parts = parts(class, dims);
    let areas: Vec<f64> = parts.iter().map(Part::area).collect();
    let total: f64 = areas.iter().sum();
    let n = points * OVERSAMPLE;
    let mut xyz = Vec::with_capacity(n);
    let mut raw: Vec<Point> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random::<f64>() * total;
        let mut part = parts.len() - 1;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                part = i;
                break;
            }
            pick -= a;
        }
        let p = parts[part].sample(&mut rng);
        let col: [f64; 3] = std::array::from_fn(|c| (rgb[c] as f64 + uniform(&mut rng, -8.0, 8.0)).clamp(0.0, 255.0));
        xyz.push(p);
        raw.push([p[0], p[1], p[2], col[0], col[1], col[2]]);
    }
    let keep = farthest_point_sampling(&xyz, points, 0)?;
    let chosen: Vec<Point> = keep.iter().map(|&i| raw[i]).collect();
    let (cloud, _, size) = normalize_cloud(&chosen)?;
    Ok(ShapeSample { cloud, size, color })
}

/// Normalised cloud of an instance of `class`; identical for equal seeds.
pub fn gen_shape(class: &str, seed: u64, points: usize) -> Result<PointCloud> {
    Ok(gen_object(class, seed, points)?.cloud)
}

fn footprint(obj: &SceneObject) -> (Vec3, Vec3) {
    obj.world_aabb()
}

fn overlaps_xy(a: &(Vec3, Vec3), b: &(Vec3, Vec3), gap: f64) -> bool {
    (0..2).all(|k| a.0[k] < b.1[k] + gap && b.0[k] < a.1[k] + gap)
}

/// Places `object` on the floor with its footprint centred at `(x, y)`.
fn place(sample: &ShapeSample, class: &str, x: f64, y: f64) -> Result<SceneObject> {
    let (lo, hi) = sample.cloud.extent();
    let half = sample.size / 2.0;
    let cx = -(lo[0] + hi[0]) / 2.0 * half;
    let cy = -(lo[1] + hi[1]) / 2.0 * half;
    let z = -lo[2] * half;
    SceneObject::new(class, [x + cx, y + cy, z], sample.size, sample.cloud.clone())
}

/// Scene of `n_objects` floor-standing objects with pairwise disjoint
/// bounding boxes inside a square room.
pub fn gen_scene(seed: u64, n_objects: usize, points: usize) -> Result<Scene> {
    if n_objects == 0 {
        bail!(InvalidArgument, "a scene needs at least one object");
    }
    let mut rng = seeded(seed);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    let mut boxes = Vec::with_capacity(n_objects);
    for i in 0..n_objects {
        let mut placed = None;
        for attempt in 0..CLASS_TRIES {
            let fam = &FAMILIES[rng.random_range(0..FAMILIES.len())];
            let stream = (i * CLASS_TRIES + attempt) as u64 + 1;
            let sample = gen_object(fam.name, derive(seed, stream).next_u64(), points)?;
            for _ in 0..PLACEMENT_TRIES {
                let x = uniform(&mut rng, 0.0, ROOM_SIZE);
                let y = uniform(&mut rng, 0.0, ROOM_SIZE);
                let obj = place(&sample, fam.name, x, y)?;
                let fp = footprint(&obj);
                let inside = fp.0[0] >= 0.0 && fp.0[1] >= 0.0 && fp.1[0] <= ROOM_SIZE && fp.1[1] <= ROOM_SIZE;
                if inside && !boxes.iter().any(|b| overlaps_xy(&fp, b, 0.05)) {
                    placed = Some((obj, fp));
                    break;
                }
            }
            if placed.is_some() {
                break;
            }
        }
        let Some((obj, fp)) = placed else {
            bail!(Capacity, "could not place object {i} of {n_objects} after {CLASS_TRIES} class draws");
        };
        objects.push(obj);
        boxes.push(fp);
    }
    Scene::new(format!("scene-{seed:016x}"), objects, DEFAULT_BOUNDS_MARGIN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionEntry {
    pub id: String,
    pub scene_id: String,
    pub text: String,
    pub target_class: String,
    pub target_location: Vec3,
    pub target_size: f64,
    pub reference_object_ids: Vec<usize>,
    pub relation: Relation,
    /// Seed that regenerates the target cloud with [`gen_object`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_shape_seed: Option<u64>,
}

fn horizontal(a: Vec3, b: Vec3) -> (f64, f64) {
    (a[0] - b[0], a[1] - b[1])
}

/// Whether `target` satisfies `relation` with respect to `anchors`.
pub fn relation_holds(relation: Relation, target: Vec3, anchors: &[Vec3]) -> bool {
    match (relation, anchors) {
        (Relation::Near, [a]) => {
            let d = ((target[0] - a[0]).powi(2) + (target[1] - a[1]).powi(2) + (target[2] - a[2]).powi(2)).sqrt();
            d <= NEAR_THRESHOLD
        }
        (Relation::LeftOf, [a]) => {
            let (dx, dy) = horizontal(target, *a);
            -dx >= DIRECTION_MIN && dy.abs() <= DIRECTION_LATERAL
        }
        (Relation::RightOf, [a]) => {
            let (dx, dy) = horizontal(target, *a);
            dx >= DIRECTION_MIN && dy.abs() <= DIRECTION_LATERAL
        }
        (Relation::InFrontOf, [a]) => {
            let (dx, dy) = horizontal(target, *a);
            -dy >= DIRECTION_MIN && dx.abs() <= DIRECTION_LATERAL
        }
        (Relation::Between, [a, b]) => {
            let (ux, uy) = horizontal(*b, *a);
            let len2 = ux * ux + uy * uy;
            if len2 == 0.0 {
                return false;
            }
            let (px, py) = horizontal(target, *a);
            let u = (px * ux + py * uy) / len2;
            let perp = (px * uy - py * ux).abs() / len2.sqrt();
            (BETWEEN_RANGE.0..=BETWEEN_RANGE.1).contains(&u) && perp <= BETWEEN_LATERAL
        }
        _ => false,
    }
}

fn propose(relation: Relation, anchors: &[Vec3], z: f64, rng: &mut SeededRng) -> Option<Vec3> {
    let a = anchors[0];
    let (x, y) = match relation {
        Relation::Near => {
            let dz = z - a[2];
            let reach = NEAR_THRESHOLD * NEAR_THRESHOLD - dz * dz;
            if reach <= 0.0 {
                return None;
            }
            let r = uniform(rng, 0.0, 0.999 * reach.sqrt());
            let th = uniform(rng, 0.0, std::f64::consts::TAU);
            (a[0] + r * th.cos(), a[1] + r * th.sin())
        }
        Relation::LeftOf => (a[0] - uniform(rng, DIRECTION_MIN, 1.2), a[1] + uniform(rng, -DIRECTION_LATERAL, DIRECTION_LATERAL)),
        Relation::RightOf => (a[0] + uniform(rng, DIRECTION_MIN, 1.2), a[1] + uniform(rng, -DIRECTION_LATERAL, DIRECTION_LATERAL)),
        Relation::InFrontOf => (a[0] + uniform(rng, -DIRECTION_LATERAL, DIRECTION_LATERAL), a[1] - uniform(rng, DIRECTION_MIN, 1.2)),
        Relation::Between => {
            let b = anchors[1];
            let (ux, uy) = horizontal(b, a);
            let len = (ux * ux + uy * uy).sqrt();
            if len < 1e-9 {
                return None;
            }
            let u = uniform(rng, BETWEEN_RANGE.0, BETWEEN_RANGE.1);
            let s = uniform(rng, -BETWEEN_LATERAL, BETWEEN_LATERAL) * 0.999;
            (a[0] + u * ux - s * uy / len, a[1] + u * uy + s * ux / len)
        }
    };
    Some([x, y, z])
}

fn with_article(words: &str) -> String {
    let vowel = words.chars().next().is_some_and(|c| "aeiou".contains(c));
    format!("{} {words}", if vowel { "an" } else { "a" })
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

/// Templated instruction that places a new object in `relation` to objects
/// of `scene`. The target is held out: it is not added to the scene.
pub fn gen_instruction(scene: &Scene, relation: Relation, seed: u64, verbs: &VerbTable, points: usize) -> Result<InstructionEntry> {
    let mut rng = seeded(seed);
    let fam = &FAMILIES[rng.random_range(0..FAMILIES.len())];
    let shape_seed = rng.next_u64();
    let sample = gen_object(fam.name, shape_seed, points)?;
    let (lo, hi) = sample.cloud.extent();
    let half = sample.size / 2.0;
    let z = -lo[2] * half + (lo[2] + hi[2]) / 2.0 * half;
    let z = z.max(0.0);
    let centers = scene.locations();

    let mut anchor_sets: Vec<Vec<usize>> = match relation.anchors() {
        1 => (0..scene.len()).map(|i| vec![i]).collect(),
        _ => (0..scene.len())
            .flat_map(|i| (0..scene.len()).filter(move |&j| j != i).map(move |j| vec![i, j]))
            .filter(|p| {
                let (dx, dy) = horizontal(centers[p[0]], centers[p[1]]);
                (dx * dx + dy * dy).sqrt() >= 1.0
            })
            .collect(),
    };
    anchor_sets.shuffle(&mut rng);

    let target_box = |loc: Vec3| -> (Vec3, Vec3) {
        let (clo, chi) = sample.cloud.extent();
        (std::array::from_fn(|a| loc[a] + clo[a] * half), std::array::from_fn(|a| loc[a] + chi[a] * half))
    };
    let others: Vec<(Vec3, Vec3)> = scene.objects.iter().map(|o| o.world_aabb()).collect();
    let mut chosen = None;
    'strict: for strict in [true, false] {
        for set in &anchor_sets {
            let anchors: Vec<Vec3> = set.iter().map(|&i| centers[i]).collect();
            for _ in 0..RELATION_TRIES {
                let Some(loc) = propose(relation, &anchors, z, &mut rng) else { break };
                if !scene.contains(loc) || !relation_holds(relation, loc, &anchors) {
                    continue;
                }
                if strict {
                    let tb = target_box(loc);
                    if others.iter().any(|o| overlaps_xy(&tb, o, 0.0)) {
                        continue;
                    }
                }
                chosen = Some((set.clone(), loc));
                break 'strict;
            }
        }
    }
    let Some((refs, location)) = chosen else {
        bail!(RelationUnsatisfiable, "no anchor in scene {} admits {relation:?}", scene.scene_id);
    };

    let verb = sample_verb(verbs, &mut rng).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let object = with_article(&format!("{} {}", sample.color, class_words(fam.name)));
    let anchor = |i: usize| format!("the {}", class_words(&scene.objects[i].class_label));
    let phrase = match relation {
        Relation::Near => format!("near {}", anchor(refs[0])),
        Relation::LeftOf => format!("to the left of {}", anchor(refs[0])),
        Relation::RightOf => format!("to the right of {}", anchor(refs[0])),
        Relation::InFrontOf => format!("in front of {}", anchor(refs[0])),
        Relation::Between => format!("between {} and {}", anchor(refs[0]), anchor(refs[1])),
    };
    let text = format!("{} {object} {phrase}", capitalize(verb));
    debug_assert!(run_filters(&text, &text, verbs).iter().all(|v| v.passed()));
    Ok(InstructionEntry {
        id: format!("{}-{seed:016x}", scene.scene_id),
        scene_id: scene.scene_id.clone(),
        text,
        target_class: fam.name.to_string(),
        target_location: location,
        target_size: sample.size,
        reference_object_ids: refs,
        relation,
        target_shape_seed: Some(shape_seed),
    })
}

/// `n_scenes` scenes with one instruction each. Scene `i` uses seed
/// stream `i`; relations rotate through all five, falling back to the next
/// satisfiable one.
pub fn gen_dataset(
    seed: u64,
    n_scenes: usize,
    objects: (usize, usize),
    points: usize,
    verbs: &VerbTable,
) -> Result<Vec<(Scene, InstructionEntry)>> {
    if objects.0 == 0 || objects.0 > objects.1 {
        bail!(InvalidArgument, "object count range {objects:?} is empty");
    }
    (0..n_scenes)
        .map(|i| {
            let mut rng = derive(seed, i as u64);
            let n = rng.random_range(objects.0..=objects.1);
            let scene_seed = rng.next_u64();
            let scene = gen_scene(scene_seed, n, points)?;
            let first = i % Relation::ALL.len();
            let inst_seed = rng.next_u64();
            for r in 0..Relation::ALL.len() {
                let rel = Relation::ALL[(first + r) % Relation::ALL.len()];
                match gen_instruction(&scene, rel, inst_seed, verbs, points) {
                    Ok(e) => return Ok((scene, e)),
                    Err(Error::RelationUnsatisfiable(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            bail!(RelationUnsatisfiable, "scene {} admits no relation", scene.scene_id)
        })
        .collect()
}

/// Words the generator can emit, for building a vocabulary that covers
/// unseen instructions.
pub fn generator_words(verbs: &VerbTable) -> Vec<String> {
    let mut w: Vec<String> = ["a", "an", "the", "near", "to", "left", "right", "of", "in", "front", "between", "and"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for f in &FAMILIES {
        w.extend(class_words(f.name).split(' ').map(str::to_string));
        w.extend(f.colors.iter().map(|c| c.0.to_string()));
    }
    w.extend(verbs.verbs().map(str::to_string));
    w.sort();
    w.dedup();
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointops::emd;

    #[test]
    fn shapes_are_deterministic_and_tight() {
        for f in &FAMILIES {
            let a = gen_shape(f.name, 7, 64).unwrap();
            assert_eq!(a, gen_shape(f.name, 7, 64).unwrap());
            assert_eq!(a.len(), 64);
            assert!(a.is_tight(1e-12));
        }
        assert!(gen_shape("zebra", 1, 8).is_err());
    }

    #[test]
    fn classes_differ() {
        for i in 0..FAMILIES.len() {
            for j in i + 1..FAMILIES.len() {
                let a = gen_shape(FAMILIES[i].name, 3, 64).unwrap().xyz();
                let b = gen_shape(FAMILIES[j].name, 3, 64).unwrap().xyz();
                let d = emd(&a, &b).unwrap().mean_cost;
                assert!(d > 0.05, "{} vs {}: {d}", FAMILIES[i].name, FAMILIES[j].name);
            }
        }
    }

    #[test]
    fn scenes_have_disjoint_footprints() {
        let s = gen_scene(11, 5, 32).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s, gen_scene(11, 5, 32).unwrap());
        let boxes: Vec<_> = s.objects.iter().map(|o| o.world_aabb()).collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                assert!(!overlaps_xy(&boxes[i], &boxes[j], 0.0));
            }
        }
        assert!(matches!(gen_scene(1, 60, 16), Err(Error::Capacity(_))));
    }

    #[test]
    fn instructions_hold_their_relation() {
        let verbs = VerbTable::default();
        let scene = gen_scene(5, 5, 32).unwrap();
        for (k, rel) in Relation::ALL.iter().enumerate() {
            let Ok(e) = gen_instruction(&scene, *rel, k as u64, &verbs, 32) else { continue };
            let anchors: Vec<Vec3> = e.reference_object_ids.iter().map(|&i| scene.objects[i].location).collect();
            assert!(relation_holds(*rel, e.target_location, &anchors), "{e:?}");
            assert!(scene.contains(e.target_location));
            assert!(run_filters(&e.text, &e.text, &verbs).iter().all(|v| v.passed()), "{}", e.text);
            assert_eq!(e, gen_instruction(&scene, *rel, k as u64, &verbs, 32).unwrap());
        }
    }

    #[test]
    fn relation_predicates() {
        let a = [0.0, 0.0, 0.0];
        assert!(relation_holds(Relation::Near, [0.5, 0.5, 0.0], &[a]));
        assert!(!relation_holds(Relation::Near, [0.7, 0.7, 0.0], &[a]));
        assert!(relation_holds(Relation::LeftOf, [-0.5, 0.2, 0.0], &[a]));
        assert!(!relation_holds(Relation::LeftOf, [0.5, 0.2, 0.0], &[a]));
        assert!(relation_holds(Relation::RightOf, [0.5, -0.2, 0.0], &[a]));
        assert!(relation_holds(Relation::InFrontOf, [0.1, -0.5, 0.0], &[a]));
        assert!(relation_holds(Relation::Between, [1.0, 0.2, 0.0], &[a, [2.0, 0.0, 0.0]]));
        assert!(!relation_holds(Relation::Between, [0.1, 0.0, 0.0], &[a, [2.0, 0.0, 0.0]]));
    }
}
