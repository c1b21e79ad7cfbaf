//! Reference-motion data model, synthetic generators for the planar
//! balancer, and the curation pipeline (augmentation, height correction,
//! contact masks, CoM/CoP annotation, clip segmentation).

pub mod curate;
pub mod gen;
pub mod io;

pub use curate::{adjust_height, augment_joint_perturb, augment_speed, estimate_contacts, extract_com_cop};
pub use gen::{gen_lean_hold, gen_squat, gen_sway};
pub use io::{read_clip, write_clip};

use crate::error::{Error, Result};
use crate::model::{Keypoints, PtbModel};
use std::collections::BTreeSet;

pub const REF_FPS: f64 = 50.0;

/// One annotated frame of a reference trajectory.
///
/// `cop_x` is the pressure-point demand measured from the foot center and is
/// deliberately left unclamped; a demand beyond the foot half-length marks a
/// physically aggressive frame. A flight-phase demand (normal force ≤ 0) is
/// stored as NaN and treated as infinitely aggressive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionFrame {
    pub root_pos: [f64; 2],
    pub root_ang: f64,
    pub joints: [f64; 2],
    pub joint_vel: [f64; 2],
    pub keypoints: Keypoints,
    pub lin_vel: [f64; 2],
    pub ang_vel: f64,
    pub contact: [u8; 2],
    pub com: [f64; 2],
    pub cop_x: f64,
}

impl MotionFrame {
    pub fn cop_valid(&self) -> bool {
        self.cop_x.is_finite()
    }

    /// Horizontal distance from the CoM to the nearest physically realizable
    /// pressure point (the demand clamped to the foot). Zero for any frame a
    /// standing robot could hold; +∞ for flight-phase demands.
    pub fn dref(&self, d_f: f64) -> f64 {
        if !self.cop_valid() {
            return f64::INFINITY;
        }
        (self.com[0] - self.cop_x.clamp(-d_f, d_f)).abs()
    }
}

/// A fixed-rate reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
    pub tags: BTreeSet<String>,
}

impl MotionClip {
    pub fn new(name: impl Into<String>, frames: Vec<MotionFrame>) -> Self {
        MotionClip { name: name.into(), fps: REF_FPS, frames, tags: BTreeSet::new() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "clip '{}' has {} frames, need at least 2",
                self.name,
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            for c in f.contact {
                if c > 1 {
                    return Err(Error::Schema(format!("frames[{i}].contact: flag {c} is not binary")));
                }
            }
            let finite = f.root_pos.iter().all(|v| v.is_finite())
                && f.root_ang.is_finite()
                && f.joints.iter().all(|v| v.is_finite())
                && f.joint_vel.iter().all(|v| v.is_finite())
                && f.lin_vel.iter().all(|v| v.is_finite())
                && f.ang_vel.is_finite()
                && f.com.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Schema(format!("frames[{i}]: non-finite value")));
            }
        }
        Ok(())
    }
}

/// A set of clips plus the segment length used for training resets.
#[derive(Debug, Clone)]
pub struct MotionLibrary {
    pub clips: Vec<MotionClip>,
    pub clip_len: usize,
}

impl MotionLibrary {
    pub fn new(clips: Vec<MotionClip>, clip_len: usize) -> Result<Self> {
        if clip_len < 10 {
            return Err(Error::InvalidArgument(format!("clip_len {clip_len} < 10")));
        }
        if clips.is_empty() {
            return Err(Error::InvalidArgument("motion library is empty".into()));
        }
        Ok(MotionLibrary { clips, clip_len })
    }

    /// Segment ranges for every clip, in clip order.
    pub fn segments(&self) -> Vec<Vec<(usize, usize)>> {
        self.clips.iter().map(|c| segment_clips(c, self.clip_len)).collect()
    }
}

/// Contiguous non-overlapping index ranges of `clip_len` frames; a final
/// remainder shorter than `clip_len` is merged into the last segment.
pub fn segment_clips(clip: &MotionClip, clip_len: usize) -> Vec<(usize, usize)> {
    assert!(clip_len >= 10, "clip_len must be at least 10");
    let n = clip.frames.len();
    if n <= clip_len {
        return vec![(0, n)];
    }
    let full = n / clip_len;
    let mut out = Vec::with_capacity(full);
    for s in 0..full {
        out.push((s * clip_len, (s + 1) * clip_len));
    }
    // Merge the remainder (and guarantee the last segment reaches the end).
    let last = out.last_mut().expect("at least one segment");
    last.1 = n;
    out
}

/// Complete keypoints, root pose, and all velocity channels from the joint
/// trajectories: planar forward kinematics for positions, central finite
/// differences (one-sided at the ends) for velocities.
pub fn fk_fill(clip: &MotionClip, model: &PtbModel) -> Result<MotionClip> {
    if clip.frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fk_fill: clip '{}' has fewer than 2 frames",
            clip.name
        )));
    }
    let mut out = clip.clone();
    for f in out.frames.iter_mut() {
        let kp = model.keypoints(f.joints, f.keypoints.ankle[0]);
        f.keypoints = kp;
        f.root_pos = kp.hip;
        f.root_ang = f.joints[0] + f.joints[1];
    }
    let n = out.frames.len();
    let fps = out.fps;
    for i in 0..n {
        let (prev, next, scale) = if i == 0 {
            (0, 1, fps)
        } else if i == n - 1 {
            (n - 2, n - 1, fps)
        } else {
            (i - 1, i + 1, fps / 2.0)
        };
        let (a, b) = (&out.frames[prev].clone(), &out.frames[next].clone());
        let f = &mut out.frames[i];
        f.joint_vel = [
            (b.joints[0] - a.joints[0]) * scale,
            (b.joints[1] - a.joints[1]) * scale,
        ];
        f.lin_vel = [
            (b.root_pos[0] - a.root_pos[0]) * scale,
            (b.root_pos[1] - a.root_pos[1]) * scale,
        ];
        f.ang_vel = (b.root_ang - a.root_ang) * scale;
    }
    Ok(out)
}

/// Frames from a joint-angle trajectory sampled at the reference rate.
pub(crate) fn frames_from_joints(joints: &[[f64; 2]]) -> Vec<MotionFrame> {
    joints
        .iter()
        .map(|&q| MotionFrame { joints: q, cop_x: 0.0, ..Default::default() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standing_clip(n: usize) -> MotionClip {
        MotionClip::new("stand", frames_from_joints(&vec![[0.0, 0.0]; n]))
    }

    #[test]
    fn segment_arithmetic() {
        let c = standing_clip(500);
        assert_eq!(segment_clips(&c, 100).len(), 5);
        let c2 = standing_clip(120);
        let s2 = segment_clips(&c2, 100);
        assert_eq!(s2, vec![(0, 120)]);
        let c3 = standing_clip(80);
        assert_eq!(segment_clips(&c3, 100), vec![(0, 80)]);
        let c4 = standing_clip(250);
        assert_eq!(segment_clips(&c4, 100), vec![(0, 100), (100, 250)]);
    }

    #[test]
    fn fk_fill_constant_pose_zero_velocity() {
        let m = PtbModel::default();
        let c = fk_fill(&standing_clip(10), &m).unwrap();
        for f in &c.frames {
            assert_eq!(f.joint_vel, [0.0, 0.0]);
            assert_eq!(f.lin_vel, [0.0, 0.0]);
            assert_eq!(f.ang_vel, 0.0);
            assert_eq!(f.root_pos, [0.0, 0.5]);
        }
    }

    #[test]
    fn fk_fill_linear_ramp_exact_velocity() {
        let m = PtbModel::default();
        let omega = 0.37;
        let joints: Vec<[f64; 2]> = (0..50).map(|i| [omega * i as f64 / REF_FPS, 0.0]).collect();
        let c = fk_fill(&MotionClip::new("ramp", frames_from_joints(&joints)), &m).unwrap();
        for f in &c.frames {
            assert!((f.joint_vel[0] - omega).abs() < 1e-9, "vel {}", f.joint_vel[0]);
        }
    }

    #[test]
    fn fk_fill_head_height_upright() {
        let m = PtbModel::default();
        let c = fk_fill(&standing_clip(5), &m).unwrap();
        assert!((c.frames[0].keypoints.head[1] - (m.l1 + m.l2)).abs() < 1e-15);
    }

    #[test]
    fn fk_fill_rejects_short_clip() {
        let m = PtbModel::default();
        let c = standing_clip(1);
        assert!(fk_fill(&c, &m).is_err());
    }

    #[test]
    fn dref_clamps_to_foot() {
        let f = MotionFrame { com: [0.25, 0.5], cop_x: 0.25, ..Default::default() };
        // Demand beyond the foot: distance measured to the foot edge.
        assert!((f.dref(0.1) - 0.15).abs() < 1e-15);
        // Demand within the foot: any held pose has zero distance.
        let g = MotionFrame { com: [0.05, 0.5], cop_x: 0.05, ..Default::default() };
        assert_eq!(g.dref(0.1), 0.0);
        // Flight-phase demand.
        let h = MotionFrame { com: [0.0, 0.5], cop_x: f64::NAN, ..Default::default() };
        assert!(h.dref(0.1).is_infinite());
    }

    #[test]
    fn validate_rejects_non_binary_contact() {
        let mut c = standing_clip(3);
        c.frames[1].contact = [2, 0];
        assert!(c.validate().is_err());
    }
}
