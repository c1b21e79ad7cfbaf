//! Clip file format: one JSON document per clip, 64-bit floats as decimal
//! text (lossless round trip), flight-phase CoP demands stored as null.

use super::{MotionClip, MotionFrame};
use crate::error::{Error, Result};
use crate::model::Keypoints;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipJson {
    schema_version: u32,
    name: String,
    fps: f64,
    tags: Vec<String>,
    frames: Vec<FrameJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    root_pos: [f64; 2],
    root_ang: f64,
    joints: [f64; 2],
    joint_vel: [f64; 2],
    keypoints: KeypointsJson,
    lin_vel: [f64; 2],
    ang_vel: f64,
    contact: [u8; 2],
    com: [f64; 2],
    cop_x: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointsJson {
    ankle: [f64; 2],
    hip: [f64; 2],
    head: [f64; 2],
    heel: [f64; 2],
    toe: [f64; 2],
}

impl From<&MotionFrame> for FrameJson {
    fn from(f: &MotionFrame) -> Self {
        FrameJson {
            root_pos: f.root_pos,
            root_ang: f.root_ang,
            joints: f.joints,
            joint_vel: f.joint_vel,
            keypoints: KeypointsJson {
                ankle: f.keypoints.ankle,
                hip: f.keypoints.hip,
                head: f.keypoints.head,
                heel: f.keypoints.heel,
                toe: f.keypoints.toe,
            },
            lin_vel: f.lin_vel,
            ang_vel: f.ang_vel,
            contact: f.contact,
            com: f.com,
            cop_x: if f.cop_x.is_finite() { Some(f.cop_x) } else { None },
        }
    }
}

impl From<FrameJson> for MotionFrame {
    fn from(f: FrameJson) -> Self {
        MotionFrame {
            root_pos: f.root_pos,
            root_ang: f.root_ang,
            joints: f.joints,
            joint_vel: f.joint_vel,
            keypoints: Keypoints {
                ankle: f.keypoints.ankle,
                hip: f.keypoints.hip,
                head: f.keypoints.head,
                heel: f.keypoints.heel,
                toe: f.keypoints.toe,
            },
            lin_vel: f.lin_vel,
            ang_vel: f.ang_vel,
            contact: f.contact,
            com: f.com,
            cop_x: f.cop_x.unwrap_or(f64::NAN),
        }
    }
}

pub fn clip_to_json(clip: &MotionClip) -> String {
    let doc = ClipJson {
        schema_version: SCHEMA_VERSION,
        name: clip.name.clone(),
        fps: clip.fps,
        tags: clip.tags.iter().cloned().collect(),
        frames: clip.frames.iter().map(FrameJson::from).collect(),
    };
    serde_json::to_string(&doc).expect("clip serialization cannot fail")
}

pub fn clip_from_json(text: &str) -> Result<MotionClip> {
    let doc: ClipJson = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "schema_version: expected {SCHEMA_VERSION}, found {}",
            doc.schema_version
        )));
    }
    let clip = MotionClip {
        name: doc.name,
        fps: doc.fps,
        frames: doc.frames.into_iter().map(MotionFrame::from).collect(),
        tags: BTreeSet::from_iter(doc.tags),
    };
    clip.validate()?;
    Ok(clip)
}

pub fn write_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), clip_to_json(clip))?;
    Ok(())
}

/// Read a clip file. A frame rate other than the nominal 50 Hz is accepted
/// (the loader that builds libraries resamples); the caller can inspect
/// `clip.fps`.
pub fn read_clip(path: impl AsRef<Path>) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    clip_from_json(&text)
}

/// Re-time a clip onto the nominal 50 Hz grid, keeping real-time duration.
pub fn resample_to_nominal(clip: &MotionClip, model: &crate::model::PtbModel) -> Result<MotionClip> {
    use super::REF_FPS;
    let n = clip.frames.len();
    let n_new = ((n as f64) * REF_FPS / clip.fps).round().max(2.0) as usize;
    let mut frames = Vec::with_capacity(n_new);
    for i in 0..n_new {
        let src = (i as f64 * clip.fps / REF_FPS).min((n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = src - lo as f64;
        let (a, b) = (&clip.frames[lo], &clip.frames[hi]);
        let mut f = MotionFrame {
            joints: [
                a.joints[0] + w * (b.joints[0] - a.joints[0]),
                a.joints[1] + w * (b.joints[1] - a.joints[1]),
            ],
            ..Default::default()
        };
        f.contact = if w < 0.5 { a.contact } else { b.contact };
        f.keypoints.ankle[0] = a.keypoints.ankle[0] + w * (b.keypoints.ankle[0] - a.keypoints.ankle[0]);
        frames.push(f);
    }
    let mut out = MotionClip { name: clip.name.clone(), fps: REF_FPS, frames, tags: clip.tags.clone() };
    out = super::fk_fill(&out, model)?;
    super::curate::extract_com_cop(&out, model)
}

/// Load every `*.json` clip in a directory (sorted by filename). Clips at a
/// non-nominal frame rate are resampled to 50 Hz with a warning on stderr.
pub fn load_dir(dir: impl AsRef<Path>, model: &crate::model::PtbModel) -> Result<Vec<MotionClip>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", dir.as_ref().display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .filter(|p| p.file_name().map(|n| n != "manifest.json").unwrap_or(true))
        .collect();
    paths.sort();
    let mut clips = Vec::with_capacity(paths.len());
    for p in paths {
        let clip = read_clip(&p)?;
        if (clip.fps - super::REF_FPS).abs() > 1e-9 {
            eprintln!(
                "warning: {} is at {} fps; resampling to {} fps",
                p.display(),
                clip.fps,
                super::REF_FPS
            );
            clips.push(resample_to_nominal(&clip, model)?);
        } else {
            clips.push(clip);
        }
    }
    Ok(clips)
}
