//! File formats: Scene JSON, InstructionEntry JSONL and PLY point clouds.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::scene::{Point, Scene, SceneObject, Vec3};
use crate::synthetic::InstructionEntry;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    min: Vec3,
    max: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    scene_id: String,
    bounds: BoundsFile,
    objects: Vec<SceneObject>,
}

fn parse_err(path: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.into(),
        message: message.to_string(),
    }
}

fn from_json_with_path<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(path, e.into_inner())
    })
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let file = SceneFile {
        scene_id: scene.scene_id.clone(),
        bounds: BoundsFile {
            min: scene.bounds_min,
            max: scene.bounds_max,
        },
        objects: scene.objects.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

/// Parses and validates a scene; schema violations name the offending path.
pub fn scene_from_json(text: &str) -> Result<Scene> {
    let f: SceneFile = from_json_with_path(text)?;
    if f.objects.is_empty() {
        return Err(parse_err("objects", "scene must contain at least one object"));
    }
    for (i, o) in f.objects.iter().enumerate() {
        if !(o.size > 0.0 && o.size.is_finite()) {
            return Err(parse_err(format!("objects[{i}].size"), Error::InvalidSize(o.size)));
        }
    }
    Scene::with_bounds(f.scene_id, f.objects, f.bounds.min, f.bounds.max)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    scene_from_json(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse { path: p, message } => parse_err(format!("{}: {p}", path.display()), message),
        other => other,
    })
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    std::fs::write(path, scene_to_json(scene)? + "\n")?;
    Ok(())
}

/// One entry per non-blank line; errors carry the line number and field.
pub fn read_entries<R: BufRead>(reader: R) -> Result<Vec<InstructionEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: InstructionEntry = from_json_with_path(&line).map_err(|e| match e {
            Error::Parse { path, message } => parse_err(format!("line {}: {path}", i + 1), message),
            other => other,
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_entries<W: Write>(mut w: W, entries: &[InstructionEntry]) -> Result<()> {
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Writes world rows (`xyz` in metres as float32, colours rounded to uint8).
pub fn write_ply<W: Write>(mut w: W, points: &[Point], format: PlyFormat) -> Result<()> {
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    let byte = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    for p in points {
        let xyz = [p[0] as f32, p[1] as f32, p[2] as f32];
        let rgb = [byte(p[3]), byte(p[4]), byte(p[5])];
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {} {} {} {}", xyz[0], xyz[1], xyz[2], rgb[0], rgb[1], rgb[2])?,
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&rgb)?;
            }
        }
    }
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut s = String::new();
    if r.read_line(&mut s)? == 0 {
        bail!(Format, "unexpected end of PLY header");
    }
    Ok(s.trim_end_matches(['\n', '\r']).to_string())
}

const PROPERTIES: [(&str, &[&str]); 6] = [
    ("x", &["float", "float32"]),
    ("y", &["float", "float32"]),
    ("z", &["float", "float32"]),
    ("red", &["uchar", "uint8"]),
    ("green", &["uchar", "uint8"]),
    ("blue", &["uchar", "uint8"]),
];

/// Reads the vertex layout written by [`write_ply`].
pub fn read_ply<R: BufRead>(mut r: R) -> Result<(Vec<Point>, PlyFormat)> {
    if read_line(&mut r)? != "ply" {
        bail!(Format, "missing PLY magic");
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let line = read_line(&mut r)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, "1.0"] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    _ => bail!(Format, "unsupported PLY format {f}"),
                })
            }
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad vertex count {n:?}")))?)
            }
            ["property", ty, name] if count.is_some() => props.push((ty.to_string(), name.to_string())),
            _ => bail!(Format, "unexpected PLY header line {line:?}"),
        }
    }
    let format = format.ok_or_else(|| Error::Format("PLY header has no format line".into()))?;
    let count = count.ok_or_else(|| Error::Format("PLY header has no vertex element".into()))?;
    let layout_ok = props.len() == PROPERTIES.len()
        && props
            .iter()
            .zip(PROPERTIES)
            .all(|((ty, name), (want, tys))| name == want && tys.contains(&ty.as_str()));
    if !layout_ok {
        bail!(Format, "PLY vertex properties must be x y z (float) red green blue (uchar)");
    }
    let mut points = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            for i in 0..count {
                let line = read_line(&mut r).map_err(|_| Error::Format(format!("PLY ends after {i} of {count} vertices")))?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 6 {
                    bail!(Format, "vertex {i} has {} values", f.len());
                }
                let mut p = [0.0; 6];
                for a in 0..3 {
                    p[a] = f[a].parse::<f32>().map_err(|_| Error::Format(format!("vertex {i}: bad float {:?}", f[a])))? as f64;
                }
                for c in 3..6 {
                    p[c] = f[c].parse::<u8>().map_err(|_| Error::Format(format!("vertex {i}: bad colour {:?}", f[c])))? as f64;
                }
                points.push(p);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = [0u8; 15];
            for i in 0..count {
                r.read_exact(&mut buf).map_err(|_| Error::Format(format!("PLY ends after {i} of {count} vertices")))?;
                let f = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
                points.push([f(0), f(1), f(2), buf[12] as f64, buf[13] as f64, buf[14] as f64]);
            }
        }
    }
    Ok((points, format))
}

pub fn write_ply_file(path: &Path, points: &[Point], format: PlyFormat) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(&mut w, points, format)?;
    w.flush()?;
    Ok(())
}

pub fn read_ply_file(path: &Path) -> Result<(Vec<Point>, PlyFormat)> {
    read_ply(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// World rows of every object of `scene`.
pub fn scene_points(scene: &Scene) -> Vec<Point> {
    scene.objects.iter().flat_map(SceneObject::world_points).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gen_scene;

    #[test]
    fn scene_json_round_trip() {
        let s = gen_scene(4, 3, 16).unwrap();
        let back = scene_from_json(&scene_to_json(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn schema_errors_name_the_path() {
        let s = gen_scene(4, 2, 8).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&scene_to_json(&s).unwrap()).unwrap();
        v["objects"] = serde_json::json!([]);
        let Err(Error::Parse { path, .. }) = scene_from_json(&v.to_string()) else { panic!() };
        assert_eq!(path, "objects");
        let mut v: serde_json::Value = serde_json::from_str(&scene_to_json(&s).unwrap()).unwrap();
        v["objects"][1]["points"][0][2] = serde_json::json!(3.0);
        let Err(Error::Parse { path, .. }) = scene_from_json(&v.to_string()) else { panic!() };
        assert!(path.starts_with("objects[1].points"), "{path}");
    }

    #[test]
    fn jsonl_missing_field() {
        let text = "{\"id\":\"a\",\"scene_id\":\"s\",\"text\":\"Add a box\",\"target_location\":[0,0,0],\"target_size\":1,\"reference_object_ids\":[0],\"relation\":\"near\"}\n";
        let err = read_entries(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("target_class"), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn ply_round_trips() {
        let pts = scene_points(&gen_scene(9, 2, 16).unwrap());
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut a = Vec::new();
            write_ply(&mut a, &pts, fmt).unwrap();
            let (back, f) = read_ply(a.as_slice()).unwrap();
            assert_eq!(f, fmt);
            assert_eq!(back.len(), pts.len());
            for (p, q) in pts.iter().zip(&back) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() <= 1e-6 * p[k].abs().max(1.0));
                }
            }
            let mut b = Vec::new();
            write_ply(&mut b, &back, fmt).unwrap();
            assert_eq!(a, b);
        }
        assert!(matches!(read_ply(&b"plx\n"[..]), Err(Error::Format(_))));
    }
}
