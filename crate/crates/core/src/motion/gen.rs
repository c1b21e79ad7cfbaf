//! Synthetic reference generators for the planar balancer.
//!
//! These stand in for retargeted capture data: sways and squats form the
//! benign training distribution, faster sways the out-of-distribution one,
//! and lean-holds produce references whose pressure-point demand leaves the
//! foot entirely, so the aggressiveness signal and the adaptive tracking
//! weight have something real to react to.

use super::{curate, fk_fill, frames_from_joints, MotionClip, REF_FPS};
use crate::error::{Error, Result};
use crate::model::PtbModel;

fn annotate(mut clip: MotionClip, model: &PtbModel, z_thresh: f64) -> Result<MotionClip> {
    clip = fk_fill(&clip, model)?;
    clip = curate::extract_com_cop(&clip, model)?;
    Ok(curate::estimate_contacts(&clip, z_thresh))
}

const CONTACT_Z_THRESH: f64 = 0.01;

/// Ankle sway with the torso held vertical: q₁(t) = amp·sin(2πft + phase),
/// q₂ = −q₁.
pub fn gen_sway(amp: f64, freq: f64, duration: f64, phase: f64, model: &PtbModel) -> Result<MotionClip> {
    if !(amp > 0.0 && amp <= 0.6) {
        return Err(Error::InvalidArgument(format!("gen_sway: amp {amp} outside (0, 0.6]")));
    }
    if !(freq > 0.0 && freq <= 2.0) {
        return Err(Error::InvalidArgument(format!("gen_sway: freq {freq} outside (0, 2]")));
    }
    if duration < 1.0 {
        return Err(Error::InvalidArgument(format!("gen_sway: duration {duration} < 1 s")));
    }
    let n = (duration * REF_FPS).round() as usize;
    let joints: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 / REF_FPS;
            let q1 = amp * (std::f64::consts::TAU * freq * t + phase).sin();
            [q1, -q1]
        })
        .collect();
    let mut clip = MotionClip::new(
        format!("sway_a{amp:.3}_f{freq:.3}"),
        frames_from_joints(&joints),
    );
    clip.tags.insert("sway".into());
    annotate(clip, model, CONTACT_Z_THRESH)
}

/// Squat: hip flexion q₂(t) = −amp·(1 − cos(2πft))/2 with ankle compensation
/// q₁ = −q₂/2 keeping the CoM near the foot center.
pub fn gen_squat(amp: f64, freq: f64, duration: f64, model: &PtbModel) -> Result<MotionClip> {
    if !(amp > 0.0 && amp <= 0.8) {
        return Err(Error::InvalidArgument(format!("gen_squat: amp {amp} outside (0, 0.8]")));
    }
    if !(freq > 0.0 && freq <= 2.0) {
        return Err(Error::InvalidArgument(format!("gen_squat: freq {freq} outside (0, 2]")));
    }
    if duration < 1.0 {
        return Err(Error::InvalidArgument(format!("gen_squat: duration {duration} < 1 s")));
    }
    let n = (duration * REF_FPS).round() as usize;
    let joints: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 / REF_FPS;
            let q2 = -amp * (1.0 - (std::f64::consts::TAU * freq * t).cos()) / 2.0;
            [-q2 / 2.0, q2]
        })
        .collect();
    let mut clip = MotionClip::new(
        format!("squat_a{amp:.3}_f{freq:.3}"),
        frames_from_joints(&joints),
    );
    clip.tags.insert("squat".into());
    annotate(clip, model, CONTACT_Z_THRESH)
}

/// Ramp both joints to a constant lean over 1 s (smoothstep), then hold.
/// Large leans demand a pressure point beyond the foot, so the annotated
/// distance signal exceeds any reasonable stability threshold during the hold.
pub fn gen_lean_hold(lean: f64, hold: f64, model: &PtbModel) -> Result<MotionClip> {
    if !(lean > 0.0 && lean <= 0.5) {
        return Err(Error::InvalidArgument(format!("gen_lean_hold: lean {lean} outside (0, 0.5]")));
    }
    if hold < 0.0 {
        return Err(Error::InvalidArgument(format!("gen_lean_hold: hold {hold} < 0")));
    }
    let n = ((1.0 + hold) * REF_FPS).round() as usize;
    let joints: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 / REF_FPS;
            let u = t.min(1.0);
            let s = u * u * (3.0 - 2.0 * u);
            [lean * s, lean * s]
        })
        .collect();
    let mut clip = MotionClip::new(format!("lean_a{lean:.3}_h{hold:.1}"), frames_from_joints(&joints));
    clip.tags.insert("lean".into());
    annotate(clip, model, CONTACT_Z_THRESH)
}

/// Motion families used by the experiment presets. `seed` only perturbs sway
/// phases, so files regenerate identically for a given seed.
pub fn preset(name: &str, seed: u64, model: &PtbModel) -> Result<Vec<MotionClip>> {
    use crate::rng::{tags, Prng};
    let mut rng = Prng::derived(seed, tags::MOTION);
    let mut phase = || rng.uniform_in(0.0, std::f64::consts::TAU);
    let clips = match name {
        // Benign training distribution: slow sways and squats.
        "source" => vec![
            gen_sway(0.08, 0.30, 10.0, phase(), model)?,
            gen_sway(0.12, 0.40, 10.0, phase(), model)?,
            gen_sway(0.16, 0.25, 10.0, phase(), model)?,
            gen_sway(0.20, 0.50, 10.0, phase(), model)?,
            gen_sway(0.10, 0.45, 8.0, phase(), model)?,
            gen_squat(0.30, 0.25, 8.0, model)?,
            gen_squat(0.50, 0.30, 8.0, model)?,
            gen_squat(0.70, 0.25, 8.0, model)?,
        ],
        // Out-of-distribution: faster, larger sways plus moderate leans.
        "target" => vec![
            gen_sway(0.25, 0.80, 8.0, phase(), model)?,
            gen_sway(0.30, 1.00, 8.0, phase(), model)?,
            gen_sway(0.35, 1.20, 8.0, phase(), model)?,
            gen_sway(0.40, 1.00, 8.0, phase(), model)?,
            gen_sway(0.45, 1.50, 8.0, phase(), model)?,
            gen_sway(0.28, 1.40, 8.0, phase(), model)?,
            gen_lean_hold(0.15, 6.0, model)?,
            gen_lean_hold(0.25, 6.0, model)?,
        ],
        // High-dynamic distribution with physically untrackable holds.
        "aggressive" => vec![
            gen_lean_hold(0.30, 6.0, model)?,
            gen_lean_hold(0.35, 6.0, model)?,
            gen_lean_hold(0.40, 6.0, model)?,
            gen_lean_hold(0.45, 6.0, model)?,
            gen_sway(0.38, 1.40, 8.0, phase(), model)?,
            gen_sway(0.40, 1.20, 8.0, phase(), model)?,
            gen_sway(0.42, 1.00, 8.0, phase(), model)?,
            gen_sway(0.45, 1.50, 8.0, phase(), model)?,
        ],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected source, target, or aggressive)"
            )))
        }
    };
    Ok(clips)
}
