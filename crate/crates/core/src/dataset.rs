//! On-disk benchmark layout.
//!
//! ```text
//! <dir>/dataset.cfg                 canonical config the data was made with
//! <dir>/seq_0000/scene.txt          one primitive per line
//! <dir>/seq_0000/frame_00/meta.txt  timestamp and keyframe flag
//! <dir>/seq_0000/frame_00/cloud.uopc
//! <dir>/seq_0000/frame_00/pose.uops
//! <dir>/seq_0000/frame_00/cam_0.uoir ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{Frame, Vec3};
use crate::io;
use crate::labels::SemanticClass;
use crate::scene::{MultiCameraFrame, Scene, ScenePrimitive, Shape};
use crate::train::{Benchmark, Sequence};

pub const CONFIG_FILE: &str = "dataset.cfg";

fn text_error(format: &'static str, text: &str, line: usize, expected: impl Into<String>) -> Error {
    let offset: usize = text.split_inclusive('\n').take(line).map(str::len).sum();
    Error::Format {
        format,
        offset: offset as u64,
        expected: expected.into(),
    }
}

/// `ground <height>` or `box <class id> cx cy cz hx hy hz vx vy vz`.
pub fn encode_scene(scene: &Scene) -> String {
    let mut s = String::new();
    for p in &scene.primitives {
        match p.shape {
            Shape::GroundPlane { height } => {
                let _ = writeln!(s, "ground {height}");
            }
            Shape::Box {
                center: c,
                half_extents: h,
            } => {
                let v = p.velocity;
                let _ = writeln!(
                    s,
                    "box {} {} {} {} {} {} {} {} {} {}",
                    p.label.id(),
                    c.x,
                    c.y,
                    c.z,
                    h.x,
                    h.y,
                    h.z,
                    v.x,
                    v.y,
                    v.z
                );
            }
        }
    }
    s
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut prims = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nums = |from: usize| -> Option<Vec<f64>> { fields[from..].iter().map(|f| f.parse().ok()).collect() };
        let prim = match fields.first().copied() {
            Some("ground") if fields.len() == 2 => nums(1).map(|v| ScenePrimitive::ground(v[0])),
            Some("box") if fields.len() == 11 => {
                let label = fields[1].parse().ok().and_then(SemanticClass::from_id);
                match (label, nums(2)) {
                    (Some(label), Some(v)) => Some(ScenePrimitive {
                        shape: Shape::Box {
                            center: Vec3::new(v[0], v[1], v[2]),
                            half_extents: Vec3::new(v[3], v[4], v[5]),
                        },
                        velocity: Vec3::new(v[6], v[7], v[8]),
                        label,
                    }),
                    _ => None,
                }
            }
            _ => None,
        };
        prims.push(prim.ok_or_else(|| {
            text_error(
                "scene",
                text,
                i,
                "`ground <z>` or `box <class> <center> <half extents> <velocity>`",
            )
        })?);
    }
    Scene::new(prims)
}

fn encode_meta(frame: &MultiCameraFrame) -> String {
    format!("timestamp = {}\nkeyframe = {}\n", frame.timestamp, frame.is_keyframe)
}

fn parse_meta(text: &str) -> Result<(f64, bool)> {
    let mut timestamp = None;
    let mut keyframe = None;
    for (i, line) in text.lines().enumerate() {
        let bad = || text_error("frame meta", text, i, "`timestamp = <s>` or `keyframe = <bool>`");
        let (k, v) = line.split_once('=').ok_or_else(bad)?;
        match k.trim() {
            "timestamp" => timestamp = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
            "keyframe" => keyframe = Some(v.trim().parse::<bool>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    match (timestamp, keyframe) {
        (Some(t), Some(k)) => Ok((t, k)),
        _ => Err(text_error(
            "frame meta",
            text,
            text.lines().count(),
            "both timestamp and keyframe",
        )),
    }
}

fn seq_dir(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("seq_{i:04}"))
}

fn frame_dir(seq: &Path, k: usize) -> PathBuf {
    seq.join(format!("frame_{k:02}"))
}

fn write_into(dir: &Path, cfg: &RunConfig, bench: &Benchmark) -> Result<()> {
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::file(p, e));
    mk(dir)?;
    io::write_atomic(&dir.join(CONFIG_FILE), cfg.canonical().as_bytes())?;
    for (i, seq) in bench.sequences.iter().enumerate() {
        let sd = seq_dir(dir, i);
        mk(&sd)?;
        io::write_atomic(&sd.join("scene.txt"), encode_scene(&seq.scene).as_bytes())?;
        for (k, f) in seq.frames.iter().enumerate() {
            let fd = frame_dir(&sd, k);
            mk(&fd)?;
            io::write_atomic(&fd.join("meta.txt"), encode_meta(f).as_bytes())?;
            io::write_atomic(&fd.join("cloud.uopc"), &io::encode_point_cloud(&f.point_cloud))?;
            io::write_atomic(&fd.join("pose.uops"), &io::encode_pose(&f.ego_pose))?;
            for (c, img) in f.images.iter().enumerate() {
                io::write_atomic(&fd.join(format!("cam_{c}.uoir")), &io::encode_image(img))?;
            }
        }
    }
    Ok(())
}

/// Writes the benchmark under a temporary sibling of `dir`, then renames
/// it into place. `dir` must not exist or be empty.
pub fn write_dataset(dir: &Path, cfg: &RunConfig, bench: &Benchmark) -> Result<()> {
    if dir.exists() {
        let empty = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?.next().is_none();
        if !empty {
            return Err(Error::invalid(
                "out",
                format!("{} exists and is not empty", dir.display()),
            ));
        }
    }
    let name = dir
        .file_name()
        .ok_or_else(|| Error::invalid("out", format!("{} has no directory name", dir.display())))?;
    let tmp = dir.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = write_into(&tmp, cfg, bench).and_then(|()| {
        if dir.exists() {
            fs::remove_dir(dir).map_err(|e| Error::file(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::file(dir, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

/// Loads a dataset and the config it was synthesized with.
pub fn read_dataset(dir: &Path) -> Result<(RunConfig, Benchmark)> {
    let cfg = RunConfig::parse(&io::read_text(&dir.join(CONFIG_FILE))?)?;
    let rig = cfg.rig.build()?;
    let mut sequences = Vec::with_capacity(cfg.bench.sequences);
    for i in 0..cfg.bench.sequences {
        let sd = seq_dir(dir, i);
        let scene = parse_scene(&io::read_text(&sd.join("scene.txt"))?)?;
        let mut frames = Vec::with_capacity(cfg.bench.frames);
        for k in 0..cfg.bench.frames {
            let fd = frame_dir(&sd, k);
            let (timestamp, is_keyframe) = parse_meta(&io::read_text(&fd.join("meta.txt"))?)?;
            let images = (0..rig.len())
                .map(|c| io::decode_image(&io::read_file(&fd.join(format!("cam_{c}.uoir")))?))
                .collect::<Result<Vec<_>>>()?;
            frames.push(MultiCameraFrame {
                images,
                rig: rig.clone(),
                ego_pose: io::decode_pose(&io::read_file(&fd.join("pose.uops"))?)?,
                timestamp,
                point_cloud: io::decode_point_cloud(&io::read_file(&fd.join("cloud.uopc"))?, Frame::Ego(timestamp))?,
                is_keyframe,
            });
        }
        sequences.push(Sequence { scene, frames });
    }
    let bench = Benchmark::new(rig, sequences, cfg.bench.held_out)?;
    Ok((cfg, bench))
}
