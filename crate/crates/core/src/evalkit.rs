//! Evaluation: tracking metrics with mean ± std over episodes, directional
//! ablation comparison, numerical verification of the Lipschitz and
//! residual-norm bounds, and report/trajectory emission.

use crate::env::{BalancerEnv, EnvCfg, EvalMode, Termination};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::PtbModel;
use crate::motion::{MotionClip, MotionFrame, MotionLibrary};
use crate::obsnorm::RunningNorm;
use crate::policy::{
    empirical_lipschitz, kl_shared_cov, lipschitz_bound, GaussianHead, PolicyView,
};
use crate::reward::RewardBreakdown;
use crate::rng::{tags, Prng};
use crate::trainer::Checkpoint;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Mean ± one standard deviation (population) over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MetricStat { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MetricStat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub name: String,
    pub episodes: usize,
    /// Percent of episodes reaching the final reference frame untriggered.
    pub succ: MetricStat,
    pub e_mpjpe: MetricStat,
    pub e_mpkpe: MetricStat,
    pub e_vel: MetricStat,
    pub slip: MetricStat,
    pub e_mpd: MetricStat,
    /// Mean episode length in control frames; per-frame error metrics are
    /// averaged only over these pre-termination frames, so short failed
    /// episodes can炒 look deceptively accurate.
    pub mean_alive_frames: f64,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint_id: String,
    pub mode: EvalMode,
    pub seed: u64,
    pub episodes_per_clip: usize,
    pub n_clips: usize,
    /// Joint error uses mean absolute error unless this flag asked for RMSE.
    pub mpjpe_rmse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub per_clip: Vec<ClipMetrics>,
    pub aggregate: ClipMetrics,
}

/// Mean |q − q_ref| (or RMSE) over joints and frames [rad].
pub fn mpjpe(robot: &[MotionFrame], reference: &[MotionFrame], rmse: bool) -> Result<f64> {
    check_aligned(robot, reference)?;
    let mut acc = 0.0;
    let mut n = 0.0f64;
    for (r, f) in robot.iter().zip(reference.iter()) {
        for j in 0..2 {
            let e = (r.joints[j] - f.joints[j]).abs();
            acc += if rmse { e * e } else { e };
            n += 1.0;
        }
    }
    let m = acc / n.max(1.0);
    Ok(if rmse { m.sqrt() } else { m })
}

/// Mean world-frame keypoint distance over {ankle, hip, head} and frames [m].
pub fn mpkpe(robot: &[MotionFrame], reference: &[MotionFrame]) -> Result<f64> {
    check_aligned(robot, reference)?;
    let mut acc = 0.0;
    let mut n = 0.0f64;
    for (r, f) in robot.iter().zip(reference.iter()) {
        for (a, b) in [
            (r.keypoints.ankle, f.keypoints.ankle),
            (r.keypoints.hip, f.keypoints.hip),
            (r.keypoints.head, f.keypoints.head),
        ] {
            acc += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            n += 1.0;
        }
    }
    Ok(acc / n.max(1.0))
}

/// Mean root linear-velocity error [m/s].
pub fn vel_error(robot: &[MotionFrame], reference: &[MotionFrame]) -> Result<f64> {
    check_aligned(robot, reference)?;
    let mut acc = 0.0;
    for (r, f) in robot.iter().zip(reference.iter()) {
        acc += ((r.lin_vel[0] - f.lin_vel[0]).powi(2) + (r.lin_vel[1] - f.lin_vel[1]).powi(2)).sqrt();
    }
    Ok(acc / robot.len().max(1) as f64)
}

/// Mean |support-foot ground velocity| over contact frames [m/s]. The foot
/// always touches the ground in this model, so every pre-termination frame
/// counts.
pub fn slip(foot_xd: &[f64]) -> f64 {
    if foot_xd.is_empty() {
        return 0.0;
    }
    foot_xd.iter().map(|v| v.abs()).sum::<f64>() / foot_xd.len() as f64
}

/// Mean |CoM_x − CoP_x| of the robot in world coordinates [m].
pub fn mpd(robot: &[MotionFrame]) -> f64 {
    if robot.is_empty() {
        return 0.0;
    }
    robot
        .iter()
        .map(|r| {
            let cop_world = r.keypoints.ankle[0] + r.cop_x;
            (r.com[0] - cop_world).abs()
        })
        .sum::<f64>()
        / robot.len() as f64
}

/// Success share in percent.
pub fn succ_rate(successes: &[bool]) -> f64 {
    if successes.is_empty() {
        return 0.0;
    }
    100.0 * successes.iter().filter(|s| **s).count() as f64 / successes.len() as f64
}

fn check_aligned(a: &[MotionFrame], b: &[MotionFrame]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "metric streams misaligned: robot {} frames vs reference {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// One evaluated episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub robot: Vec<MotionFrame>,
    pub reference: Vec<MotionFrame>,
    pub foot_xd: Vec<f64>,
    pub success: bool,
    pub termination: Termination,
}

/// Roll one episode with deterministic (mean) actions.
pub fn run_episode(
    policy: &PolicyView,
    norm_actor: &RunningNorm,
    model: &PtbModel,
    env_cfg: &EnvCfg,
    clip: &MotionClip,
    rng: Prng,
) -> Result<EpisodeRecord> {
    let mut env = BalancerEnv::new(model.clone(), env_cfg.clone(), rng);
    env.reset_to_frame(clip, (0, clip.len()), 0, 0);
    let mut rec = EpisodeRecord {
        robot: Vec::new(),
        reference: Vec::new(),
        foot_xd: Vec::new(),
        success: false,
        termination: Termination::None,
    };
    loop {
        let obs = env.build_actor_obs(clip)?;
        let mean = policy.mean(&norm_actor.normalize(&obs))?;
        let out = env.step(clip, [mean[0], mean[1]])?;
        rec.robot.push(out.robot.clone());
        rec.reference.push(clip.frames[env.state.frame_idx].clone());
        rec.foot_xd.push(env.state.foot_xd);
        if out.done {
            rec.success = out.success;
            rec.termination = out.termination;
            return Ok(rec);
        }
    }
}

fn clip_metrics(name: &str, records: &[EpisodeRecord], rmse: bool) -> Result<ClipMetrics> {
    let mut succ = Vec::new();
    let mut jp = Vec::new();
    let mut kp = Vec::new();
    let mut vel = Vec::new();
    let mut sl = Vec::new();
    let mut pd = Vec::new();
    let mut alive = 0.0;
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        succ.push(if r.success { 100.0 } else { 0.0 });
        jp.push(mpjpe(&r.robot, &r.reference, rmse)?);
        kp.push(mpkpe(&r.robot, &r.reference)?);
        vel.push(vel_error(&r.robot, &r.reference)?);
        sl.push(slip(&r.foot_xd));
        pd.push(mpd(&r.robot));
        alive += r.robot.len() as f64;
        if r.termination.is_failure() {
            *failures.entry(r.termination.name().to_string()).or_insert(0) += 1;
        }
    }
    Ok(ClipMetrics {
        name: name.to_string(),
        episodes: records.len(),
        succ: MetricStat::from_samples(&succ),
        e_mpjpe: MetricStat::from_samples(&jp),
        e_mpkpe: MetricStat::from_samples(&kp),
        e_vel: MetricStat::from_samples(&vel),
        slip: MetricStat::from_samples(&sl),
        e_mpd: MetricStat::from_samples(&pd),
        mean_alive_frames: alive / records.len().max(1) as f64,
        failures,
    })
}

/// Evaluate a policy over every clip in the library.
#[allow(clippy::too_many_arguments)]
pub fn run_eval(
    policy: &PolicyView,
    norm_actor: &RunningNorm,
    model: &PtbModel,
    env_cfg: &EnvCfg,
    library: &MotionLibrary,
    episodes_per_clip: usize,
    seed: u64,
    checkpoint_id: &str,
) -> Result<MetricsReport> {
    if library.clips.is_empty() {
        return Err(Error::InvalidArgument("evaluation library is empty".into()));
    }
    let mut per_clip = Vec::with_capacity(library.clips.len());
    let mut all_records = Vec::new();
    for (ci, clip) in library.clips.iter().enumerate() {
        let mut records = Vec::with_capacity(episodes_per_clip);
        for ep in 0..episodes_per_clip {
            let rng = Prng::derived_indexed(seed, tags::EVAL, ((ci as u64) << 32) | ep as u64);
            records.push(run_episode(policy, norm_actor, model, env_cfg, clip, rng)?);
        }
        per_clip.push(clip_metrics(&clip.name, &records, false)?);
        all_records.extend(records);
    }
    let aggregate = clip_metrics("aggregate", &all_records, false)?;
    Ok(MetricsReport {
        meta: ReportMeta {
            checkpoint_id: checkpoint_id.to_string(),
            mode: env_cfg.mode,
            seed,
            episodes_per_clip,
            n_clips: library.clips.len(),
            mpjpe_rmse: false,
        },
        per_clip,
        aggregate,
    })
}

/// Average several single-seed reports (means of per-episode statistics);
/// used for the multi-seed directional comparisons.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to average".into()));
    }
    for r in &reports[1..] {
        if r.meta.mode != reports[0].meta.mode
            || r.meta.n_clips != reports[0].meta.n_clips
            || r.meta.episodes_per_clip != reports[0].meta.episodes_per_clip
        {
            return Err(Error::InvalidArgument("reports averaged across mismatched settings".into()));
        }
    }
    let k = reports.len() as f64;
    let avg_stat = |f: &dyn Fn(&MetricsReport) -> MetricStat| MetricStat {
        mean: reports.iter().map(|r| f(r).mean).sum::<f64>() / k,
        std: reports.iter().map(|r| f(r).std).sum::<f64>() / k,
    };
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for r in reports {
        for (kind, n) in &r.aggregate.failures {
            *failures.entry(kind.clone()).or_insert(0) += n;
        }
    }
    let aggregate = ClipMetrics {
        name: "aggregate".into(),
        episodes: reports.iter().map(|r| r.aggregate.episodes).sum(),
        succ: avg_stat(&|r| r.aggregate.succ),
        e_mpjpe: avg_stat(&|r| r.aggregate.e_mpjpe),
        e_mpkpe: avg_stat(&|r| r.aggregate.e_mpkpe),
        e_vel: avg_stat(&|r| r.aggregate.e_vel),
        slip: avg_stat(&|r| r.aggregate.slip),
        e_mpd: avg_stat(&|r| r.aggregate.e_mpd),
        mean_alive_frames: reports.iter().map(|r| r.aggregate.mean_alive_frames).sum::<f64>() / k,
        failures,
    };
    Ok(MetricsReport {
        meta: ReportMeta {
            checkpoint_id: format!("mean-of-{}", reports.len()),
            seed: 0,
            ..reports[0].meta.clone()
        },
        per_clip: Vec::new(),
        aggregate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKey {
    Succ,
    Mpjpe,
    Mpkpe,
    Vel,
    Slip,
    Mpd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Higher,
    Lower,
}

fn metric_of(r: &MetricsReport, key: MetricKey) -> f64 {
    match key {
        MetricKey::Succ => r.aggregate.succ.mean,
        MetricKey::Mpjpe => r.aggregate.e_mpjpe.mean,
        MetricKey::Mpkpe => r.aggregate.e_mpkpe.mean,
        MetricKey::Vel => r.aggregate.e_vel.mean,
        MetricKey::Slip => r.aggregate.slip.mean,
        MetricKey::Mpd => r.aggregate.e_mpd.mean,
    }
}

/// Strict directional checks of report `a` against report `b` (ties fail).
pub fn ablation_compare(
    a: &MetricsReport,
    b: &MetricsReport,
    directions: &[(MetricKey, Direction)],
) -> Result<Vec<(MetricKey, bool)>> {
    if a.meta.mode != b.meta.mode
        || a.meta.n_clips != b.meta.n_clips
        || a.meta.episodes_per_clip != b.meta.episodes_per_clip
    {
        return Err(Error::InvalidArgument(
            "ablation_compare: reports come from mismatched settings".into(),
        ));
    }
    Ok(directions
        .iter()
        .map(|&(key, dir)| {
            let (va, vb) = (metric_of(a, key), metric_of(b, key));
            let pass = match dir {
                Direction::Higher => va > vb,
                Direction::Lower => va < vb,
            };
            (key, pass)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub bound: f64,
    pub empirical: f64,
    pub n_pairs: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualBoundCheck {
    pub n_states: usize,
    /// max(‖μ_r‖² − 2·KL·λmax(Σ), 0) over sampled rollout states.
    pub max_violation: f64,
    /// Max |‖μ_r‖² − 2·KL·λmax| under an isotropic head (equality case).
    pub max_isotropic_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checkpoint_id: String,
    pub seed: u64,
    pub lipschitz: LipschitzCheck,
    pub residual_bound: ResidualBoundCheck,
}

/// Numerically verify the two closed-form guarantees on an adapted
/// checkpoint: the product Lipschitz bound of the residual net, and the
/// per-state residual-output bound implied by the shared-covariance KL.
/// States are gathered by rolling out the composite policy; when no library
/// is supplied, the out-of-distribution preset provides one.
pub fn verify_propositions(
    ckpt: &Checkpoint,
    library: Option<&MotionLibrary>,
    n_states: usize,
    n_pairs: usize,
    seed: u64,
    checkpoint_id: &str,
) -> Result<VerificationReport> {
    let model = ckpt.to_model();
    let residual = model
        .residual
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("verification requires an adapted checkpoint with a residual".into()))?;

    let bound = lipschitz_bound(residual)?;
    let mut rng = Prng::derived(seed, tags::VERIFY);
    let empirical = empirical_lipschitz(&residual.net, n_pairs, &mut rng);

    let fallback;
    let lib = match library {
        Some(l) => l,
        None => {
            let clips = crate::motion::gen::preset("target", seed, &ckpt.model)?;
            fallback = MotionLibrary::new(clips, ckpt.config.clip_len)?;
            &fallback
        }
    };

    // Collect rollout observations under the composite policy.
    let view = model.view();
    let head = model.head();
    let iso = GaussianHead::new(head.act_dim(), head.log_std.iter().sum::<f64>() / head.act_dim() as f64);
    let mut states = 0usize;
    let mut max_violation: f64 = 0.0;
    let mut max_iso_gap: f64 = 0.0;
    let mut ep = 0u64;
    'outer: while states < n_states {
        let ci = (ep as usize) % lib.clips.len();
        let clip = &lib.clips[ci];
        let mut env = BalancerEnv::new(
            ckpt.model.clone(),
            ckpt.env_cfg.clone(),
            Prng::derived_indexed(seed, tags::VERIFY, ep),
        );
        env.reset_to_frame(clip, (0, clip.len()), ci, 0);
        loop {
            let obs = ckpt.norm_actor.normalize(&env.build_actor_obs(clip)?);
            let mu_b = model.actor.net.mean(&obs)?;
            let mu_r = residual.net.eval(&obs);
            let mu: Vec<f64> = mu_b.iter().zip(mu_r.iter()).map(|(b, r)| b + r).collect();

            let kl = kl_shared_cov(&mu, &mu_b, head);
            let lhs = dot(&mu_r, &mu_r);
            max_violation = max_violation.max(lhs - 2.0 * kl * head.lambda_max());

            let kl_iso = kl_shared_cov(&mu, &mu_b, &iso);
            max_iso_gap = max_iso_gap.max((lhs - 2.0 * kl_iso * iso.lambda_max()).abs());

            states += 1;
            if states >= n_states {
                break 'outer;
            }
            let (action, _) = {
                let mut r = env.rng.clone();
                let pair = view.head().sample(&mu, &mut r);
                env.rng = r;
                pair
            };
            let out = env.step(clip, [action[0], action[1]])?;
            if out.done {
                break;
            }
        }
        ep += 1;
    }

    Ok(VerificationReport {
        checkpoint_id: checkpoint_id.to_string(),
        seed,
        lipschitz: LipschitzCheck {
            bound,
            empirical,
            n_pairs,
            pass: empirical <= bound,
        },
        residual_bound: ResidualBoundCheck {
            n_states: states,
            max_violation: max_violation.max(0.0),
            max_isotropic_gap: max_iso_gap,
            pass: max_violation <= 1e-9,
        },
    })
}

const REPORT_CSV_COLUMNS: [&str; 16] = [
    "clip",
    "episodes",
    "succ_mean",
    "succ_std",
    "e_mpjpe_mean",
    "e_mpjpe_std",
    "e_mpkpe_mean",
    "e_mpkpe_std",
    "e_vel_mean",
    "e_vel_std",
    "slip_mean",
    "slip_std",
    "e_mpd_mean",
    "e_mpd_std",
    "mean_alive_frames",
    "failures",
];

fn csv_row(m: &ClipMetrics) -> String {
    let failures = if m.failures.is_empty() {
        String::new()
    } else {
        m.failures
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect::<Vec<_>>()
            .join(";")
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.name,
        m.episodes,
        m.succ.mean,
        m.succ.std,
        m.e_mpjpe.mean,
        m.e_mpjpe.std,
        m.e_mpkpe.mean,
        m.e_mpkpe.std,
        m.e_vel.mean,
        m.e_vel.std,
        m.slip.mean,
        m.slip.std,
        m.e_mpd.mean,
        m.e_mpd.std,
        m.mean_alive_frames,
        failures
    )
}

/// Write a metrics report as JSON (round-trippable) or CSV (one row per clip
/// plus an aggregate row).
pub fn emit_report(report: &MetricsReport, format: &str, path: impl AsRef<Path>) -> Result<()> {
    match format {
        "json" => {
            std::fs::write(path.as_ref(), report_to_json(report))?;
            Ok(())
        }
        "csv" => {
            let mut out = String::new();
            out.push_str(&REPORT_CSV_COLUMNS.join(","));
            out.push('\n');
            for m in &report.per_clip {
                out.push_str(&csv_row(m));
                out.push('\n');
            }
            out.push_str(&csv_row(&report.aggregate));
            out.push('\n');
            std::fs::write(path.as_ref(), out)?;
            Ok(())
        }
        other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
    }
}

pub fn report_to_json(report: &MetricsReport) -> String {
    serde_json::to_string(report).expect("report serialization")
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    Ok(serde_json::from_str(text)?)
}

/// Per-control-step trajectory dump for external plotting.
#[derive(Debug, Clone)]
pub struct TrajectoryDump {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn replay_trajectory(
    policy: &PolicyView,
    norm_actor: &RunningNorm,
    model: &PtbModel,
    env_cfg: &EnvCfg,
    clip: &MotionClip,
    seed: u64,
) -> Result<TrajectoryDump> {
    let rec = run_episode(policy, norm_actor, model, env_cfg, clip, Prng::derived(seed, tags::EVAL))?;
    let mut columns: Vec<String> = [
        "t", "q0", "q1", "q_ref0", "q_ref1", "root_x", "root_z", "root_ang", "ankle_x", "ankle_z",
        "hip_x", "hip_z", "head_x", "head_z", "com_x", "com_z", "cop_x", "ref_com_x", "ref_com_z",
        "ref_cop_x", "foot_xd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    columns.extend(RewardBreakdown::COLUMNS.iter().map(|s| s.to_string()));

    // Re-run to capture reward breakdowns alongside the kinematics.
    let mut env = BalancerEnv::new(model.clone(), env_cfg.clone(), Prng::derived(seed, tags::EVAL));
    env.reset_to_frame(clip, (0, clip.len()), 0, 0);
    let mut rows = Vec::new();
    for _ in 0..rec.robot.len() {
        let obs = env.build_actor_obs(clip)?;
        let mean = policy.mean(&norm_actor.normalize(&obs))?;
        let out = env.step(clip, [mean[0], mean[1]])?;
        let r = &out.robot;
        let f = &clip.frames[env.state.frame_idx];
        let mut row = vec![
            env.state.t,
            r.joints[0],
            r.joints[1],
            f.joints[0],
            f.joints[1],
            r.root_pos[0],
            r.root_pos[1],
            r.root_ang,
            r.keypoints.ankle[0],
            r.keypoints.ankle[1],
            r.keypoints.hip[0],
            r.keypoints.hip[1],
            r.keypoints.head[0],
            r.keypoints.head[1],
            r.com[0],
            r.com[1],
            r.cop_x,
            f.com[0],
            f.com[1],
            if f.cop_valid() { f.cop_x } else { f64::NAN },
            env.state.foot_xd,
        ];
        row.extend_from_slice(&out.breakdown.row());
        rows.push(row);
        if out.done {
            break;
        }
    }
    Ok(TrajectoryDump { columns, rows })
}

pub fn write_trajectory_csv(dump: &TrajectoryDump, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&dump.columns.join(","));
    out.push('\n');
    for row in &dump.rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(joints: [f64; 2]) -> MotionFrame {
        MotionFrame { joints, ..Default::default() }
    }

    #[test]
    fn identical_streams_zero_metrics() {
        let a: Vec<MotionFrame> = (0..10).map(|i| frame([i as f64 * 0.01, 0.0])).collect();
        assert_eq!(mpjpe(&a, &a, false).unwrap(), 0.0);
        assert_eq!(mpkpe(&a, &a).unwrap(), 0.0);
        assert_eq!(vel_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_joint_error() {
        let a: Vec<MotionFrame> = (0..10).map(|_| frame([0.1, 0.0])).collect();
        let b: Vec<MotionFrame> = (0..10).map(|_| frame([0.0, 0.0])).collect();
        assert!((mpjpe(&a, &b, false).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn constant_balance_gap() {
        let mut frames = Vec::new();
        for _ in 0..5 {
            let mut f = frame([0.0, 0.0]);
            f.com = [0.12, 0.5];
            f.cop_x = 0.0;
            frames.push(f);
        }
        assert!((mpd(&frames) - 0.12).abs() < 1e-15);
    }

    #[test]
    fn misaligned_streams_rejected() {
        let a: Vec<MotionFrame> = (0..10).map(|_| frame([0.0; 2])).collect();
        let b: Vec<MotionFrame> = (0..9).map(|_| frame([0.0; 2])).collect();
        assert!(mpjpe(&a, &b, false).is_err());
    }

    #[test]
    fn succ_rate_percent() {
        assert_eq!(succ_rate(&[true, true, false, false]), 50.0);
        assert_eq!(succ_rate(&[]), 0.0);
    }

    #[test]
    fn metric_stat_mean_std() {
        let s = MetricStat::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.std - (1.25f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_json_round_trip_byte_identical() {
        let m = ClipMetrics {
            name: "x".into(),
            episodes: 2,
            succ: MetricStat { mean: 50.0, std: 50.0 },
            e_mpjpe: MetricStat { mean: 0.1, std: 0.01 },
            e_mpkpe: MetricStat { mean: 0.2, std: 0.02 },
            e_vel: MetricStat { mean: 0.3, std: 0.03 },
            slip: MetricStat { mean: 0.0, std: 0.0 },
            e_mpd: MetricStat { mean: 0.05, std: 0.001 },
            mean_alive_frames: 123.0,
            failures: BTreeMap::from([("fall".to_string(), 1)]),
        };
        let report = MetricsReport {
            meta: ReportMeta {
                checkpoint_id: "test".into(),
                mode: EvalMode::Train,
                seed: 7,
                episodes_per_clip: 2,
                n_clips: 1,
                mpjpe_rmse: false,
            },
            per_clip: vec![m.clone()],
            aggregate: m,
        };
        let text = report_to_json(&report);
        let back = report_from_json(&text).unwrap();
        assert_eq!(report, back);
        assert_eq!(text, report_to_json(&back));
    }

    #[test]
    fn compare_ties_fail_strict_direction() {
        let report = {
            let m = ClipMetrics {
                name: "a".into(),
                episodes: 1,
                succ: MetricStat { mean: 50.0, std: 0.0 },
                e_mpjpe: MetricStat { mean: 0.1, std: 0.0 },
                e_mpkpe: MetricStat { mean: 0.1, std: 0.0 },
                e_vel: MetricStat { mean: 0.1, std: 0.0 },
                slip: MetricStat { mean: 0.1, std: 0.0 },
                e_mpd: MetricStat { mean: 0.1, std: 0.0 },
                mean_alive_frames: 10.0,
                failures: BTreeMap::new(),
            };
            MetricsReport {
                meta: ReportMeta {
                    checkpoint_id: "t".into(),
                    mode: EvalMode::Train,
                    seed: 1,
                    episodes_per_clip: 1,
                    n_clips: 1,
                    mpjpe_rmse: false,
                },
                per_clip: vec![m.clone()],
                aggregate: m,
            }
        };
        let checks = ablation_compare(
            &report,
            &report,
            &[(MetricKey::Succ, Direction::Higher), (MetricKey::Mpd, Direction::Lower)],
        )
        .unwrap();
        assert!(checks.iter().all(|(_, pass)| !pass));
    }

    #[test]
    fn compare_table_values_pass() {
        let mk = |succ: f64| {
            let m = ClipMetrics {
                name: "a".into(),
                episodes: 1,
                succ: MetricStat { mean: succ, std: 0.0 },
                e_mpjpe: MetricStat { mean: 0.1, std: 0.0 },
                e_mpkpe: MetricStat { mean: 0.1, std: 0.0 },
                e_vel: MetricStat { mean: 0.1, std: 0.0 },
                slip: MetricStat { mean: 0.1, std: 0.0 },
                e_mpd: MetricStat { mean: 0.1, std: 0.0 },
                mean_alive_frames: 10.0,
                failures: BTreeMap::new(),
            };
            MetricsReport {
                meta: ReportMeta {
                    checkpoint_id: "t".into(),
                    mode: EvalMode::Eval1p5m,
                    seed: 1,
                    episodes_per_clip: 1,
                    n_clips: 1,
                    mpjpe_rmse: false,
                },
                per_clip: vec![m.clone()],
                aggregate: m,
            }
        };
        let a = mk(97.56);
        let b = mk(84.15);
        let checks = ablation_compare(&a, &b, &[(MetricKey::Succ, Direction::Higher)]).unwrap();
        assert!(checks[0].1);
    }

    #[test]
    fn compare_rejects_mismatched_modes() {
        let mk = |mode: EvalMode| {
            let m = ClipMetrics {
                name: "a".into(),
                episodes: 1,
                succ: MetricStat { mean: 1.0, std: 0.0 },
                e_mpjpe: MetricStat { mean: 0.1, std: 0.0 },
                e_mpkpe: MetricStat { mean: 0.1, std: 0.0 },
                e_vel: MetricStat { mean: 0.1, std: 0.0 },
                slip: MetricStat { mean: 0.1, std: 0.0 },
                e_mpd: MetricStat { mean: 0.1, std: 0.0 },
                mean_alive_frames: 10.0,
                failures: BTreeMap::new(),
            };
            MetricsReport {
                meta: ReportMeta {
                    checkpoint_id: "t".into(),
                    mode,
                    seed: 1,
                    episodes_per_clip: 1,
                    n_clips: 1,
                    mpjpe_rmse: false,
                },
                per_clip: vec![m.clone()],
                aggregate: m,
            }
        };
        assert!(ablation_compare(&mk(EvalMode::Train), &mk(EvalMode::Eval2m), &[]).is_err());
    }
}
