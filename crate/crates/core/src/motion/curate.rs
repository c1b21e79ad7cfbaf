//! Curation pipeline: speed/joint augmentation, global height correction,
//! contact-mask estimation, and replay-based CoM/CoP annotation.

use super::{fk_fill, MotionClip, MotionFrame};
use crate::error::{Error, Result};
use crate::model::PtbModel;

/// Rescale the time axis by 1/factor at fixed frame rate, linearly
/// interpolating joints; velocities and derived channels are rebuilt.
/// Contact flags are carried by nearest neighbor.
pub fn augment_speed(clip: &MotionClip, factor: f64, model: &PtbModel) -> Result<MotionClip> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::InvalidArgument(format!("augment_speed: factor {factor} outside [0.5, 2]")));
    }
    let n = clip.frames.len();
    let n_new = (n as f64 / factor).round() as usize;
    if n_new < 2 {
        return Err(Error::InvalidArgument(format!(
            "augment_speed: result would have {n_new} frames"
        )));
    }
    let mut frames = Vec::with_capacity(n_new);
    for i in 0..n_new {
        let src = (i as f64 * factor).min((n - 1) as f64);
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
    let mut out = MotionClip { name: clip.name.clone(), fps: clip.fps, frames, tags: clip.tags.clone() };
    out = fk_fill(&out, model)?;
    extract_com_cop(&out, model)
}

/// Add `delta` to one joint and subtract `delta/2` from each compensating
/// joint on every frame, then rebuild the derived channels.
pub fn augment_joint_perturb(
    clip: &MotionClip,
    joint: usize,
    delta: f64,
    comp_joints: &[usize],
    model: &PtbModel,
) -> Result<MotionClip> {
    if joint >= 2 || comp_joints.iter().any(|&c| c >= 2) {
        return Err(Error::InvalidArgument("augment_joint_perturb: joint index out of range".into()));
    }
    if comp_joints.contains(&joint) {
        return Err(Error::InvalidArgument(
            "augment_joint_perturb: perturbed joint overlaps compensating set".into(),
        ));
    }
    let mut out = clip.clone();
    for f in out.frames.iter_mut() {
        f.joints[joint] += delta;
        for &c in comp_joints {
            f.joints[c] -= delta / 2.0;
        }
    }
    out = fk_fill(&out, model)?;
    extract_com_cop(&out, model)
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Apply one vertical offset to the root, keypoints, and CoM so the 25th
/// percentile of per-frame min(heel_z, toe_z) equals `clearance`.
pub fn adjust_height(clip: &MotionClip, clearance: f64) -> MotionClip {
    let lows: Vec<f64> = clip
        .frames
        .iter()
        .map(|f| f.keypoints.heel[1].min(f.keypoints.toe[1]))
        .collect();
    let offset = clearance - quantile(&lows, 0.25);
    let mut out = clip.clone();
    for f in out.frames.iter_mut() {
        f.root_pos[1] += offset;
        f.keypoints.ankle[1] += offset;
        f.keypoints.hip[1] += offset;
        f.keypoints.head[1] += offset;
        f.keypoints.heel[1] += offset;
        f.keypoints.toe[1] += offset;
        f.com[1] += offset;
    }
    out
}

/// Contact flags from foot height and the pressure-point side: heel iff the
/// heel is near the ground and the demand lies at or left of center, toe iff
/// the toe is near the ground and the demand lies right of center (ties go to
/// the toe). Flight-phase frames get no contact.
pub fn estimate_contacts(clip: &MotionClip, z_thresh: f64) -> MotionClip {
    let mut out = clip.clone();
    for f in out.frames.iter_mut() {
        let heel_down = f.keypoints.heel[1] < z_thresh;
        let toe_down = f.keypoints.toe[1] < z_thresh;
        let heel = heel_down && f.cop_x < 0.0;
        let toe = toe_down && f.cop_x >= 0.0 && f.cop_x.is_finite();
        f.contact = [heel as u8, toe as u8];
    }
    out
}

/// Annotate CoM and the unclamped CoP demand from planar inverse dynamics.
///
/// The normal force is F_n = M·(g + z̈_com) with z̈ from central second
/// differences of the CoM height; the demand is
/// cop_x = (g·M·com_x − dL/dt)/F_n with the angular momentum about the foot
/// center differentiated by central differences. Both reduce to
/// cop_x = com_x for held poses. A frame demanding F_n ≤ 0 gets cop_x = NaN
/// and tags the clip "aggressive".
pub fn extract_com_cop(clip: &MotionClip, model: &PtbModel) -> Result<MotionClip> {
    if clip.frames.len() < 2 {
        return Err(Error::InvalidArgument("extract_com_cop: need at least 2 frames".into()));
    }
    let mut out = clip.clone();
    let n = out.frames.len();
    let fps = out.fps;
    let mass = model.total_mass();

    // Per-frame CoM (world) and angular momentum about the foot center.
    let mut com = Vec::with_capacity(n);
    let mut ang_mom = Vec::with_capacity(n);
    for f in out.frames.iter() {
        let foot_x = f.keypoints.ankle[0];
        let foot_z = f.keypoints.ankle[1];
        let c = model.com(f.joints, foot_x);
        com.push([c[0], c[1] + foot_z]);
        ang_mom.push(model.angular_momentum_about_ankle(f.joints, f.joint_vel));
    }

    let mut any_invalid = false;
    for i in 0..n {
        let (zdd, ldot) = if n == 2 {
            (0.0, 0.0)
        } else {
            let j = i.clamp(1, n - 2);
            let zdd = (com[j + 1][1] - 2.0 * com[j][1] + com[j - 1][1]) * fps * fps;
            let ldot = (ang_mom[j + 1] - ang_mom[j - 1]) * fps / 2.0;
            (zdd, ldot)
        };
        let f = &mut out.frames[i];
        f.com = com[i];
        let fn_z = mass * (model.g + zdd);
        if fn_z <= 0.0 {
            f.cop_x = f64::NAN;
            any_invalid = true;
        } else {
            let com_x_rel = com[i][0] - f.keypoints.ankle[0];
            f.cop_x = (model.g * mass * com_x_rel - ldot) / fn_z;
        }
    }
    if any_invalid {
        out.tags.insert("aggressive".into());
    }
    Ok(out)
}
