//! Shaped tracking reward: Gaussian-scored task terms, contact matching,
//! regularization and penalty rows, the balance distance penalty, and the
//! adaptive tracking weight that relaxes tracking when the reference itself
//! demands a pressure point the foot cannot supply.

use serde::{Deserialize, Serialize};

/// Weights and Gaussian length scales for every reward term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub joint_pos: f64,
    pub joint_pos_sigma_sq: f64,
    pub body_pos: f64,
    pub body_pos_sigma_sq: f64,
    pub body_orient: f64,
    pub body_orient_sigma_sq: f64,
    pub body_linvel: f64,
    pub body_linvel_sigma_sq: f64,
    pub body_angvel: f64,
    pub body_angvel_sigma_sq: f64,
    pub anchor_pos: f64,
    pub anchor_pos_sigma_sq: f64,
    pub anchor_orient: f64,
    pub anchor_orient_sigma_sq: f64,
    pub contact: f64,
    pub action_smooth: f64,
    pub self_contact: f64,
    pub balance_weight: f64,
    pub balance_thresh: f64,
    /// Divisor of the balance score exponent; the non-squared numerator over
    /// 0.08² gives an effective length scale of 0.0064 m.
    pub balance_divisor: f64,
    pub termination: f64,
    pub joint_limit: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            joint_pos: 1.0,
            joint_pos_sigma_sq: 0.4 * 0.4,
            body_pos: 1.0,
            body_pos_sigma_sq: 0.3 * 0.3,
            body_orient: 1.0,
            body_orient_sigma_sq: 0.4 * 0.4,
            body_linvel: 1.0,
            body_linvel_sigma_sq: 1.0,
            body_angvel: 1.0,
            body_angvel_sigma_sq: 3.14 * 3.14,
            anchor_pos: 0.5,
            anchor_pos_sigma_sq: 0.3 * 0.3,
            anchor_orient: 0.5,
            anchor_orient_sigma_sq: 0.4 * 0.4,
            contact: 1.0,
            action_smooth: -0.1,
            self_contact: -0.1,
            balance_weight: 2.0,
            balance_thresh: 0.12,
            balance_divisor: 0.08 * 0.08,
            termination: -1.0,
            joint_limit: -10.0,
        }
    }
}

/// Adaptive tracking-weight parameters: weight 1 while the reference CoM-CoP
/// distance stays under `tau`, exponential decay with rate `kappa` beyond it,
/// floored at `w_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveWeightCfg {
    pub tau: f64,
    pub kappa: f64,
    pub w_min: f64,
}

impl Default for AdaptiveWeightCfg {
    fn default() -> Self {
        AdaptiveWeightCfg { tau: 0.12, kappa: 0.05, w_min: 0.1 }
    }
}

/// Full reward configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardCfg {
    pub weights: RewardWeights,
    pub adaptive: AdaptiveWeightCfg,
    /// Master switch for the balance-aware machinery: when false the balance
    /// term is dropped and the tracking weight pins to 1 (ablation arm).
    pub com_aware: bool,
    /// Score the balance row exactly as the weight table reads (−2·score)
    /// instead of the penalty form −2·(1 − score).
    pub balance_sign_literal: bool,
}

impl Default for RewardCfg {
    fn default() -> Self {
        RewardCfg {
            weights: RewardWeights::default(),
            adaptive: AdaptiveWeightCfg::default(),
            com_aware: true,
            balance_sign_literal: false,
        }
    }
}

/// exp(−sq_err/σ²) ∈ (0, 1].
#[inline]
pub fn gauss_score(sq_err: f64, sigma_sq: f64) -> f64 {
    debug_assert!(sq_err >= 0.0 && sigma_sq > 0.0);
    (-sq_err / sigma_sq).exp()
}

/// Wrap to (−π, π].
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

/// Kinematic snapshot of one side (robot or reference) with everything the
/// tracking terms need. Bodies are ordered (ankle, hip, head) and link frames
/// (foot, leg, torso).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyKin {
    pub joints: [f64; 2],
    pub joint_vel: [f64; 2],
    pub bodies: [[f64; 2]; 3],
    pub body_vels: [[f64; 2]; 3],
    pub link_angs: [f64; 3],
    pub link_angvels: [f64; 3],
    pub contact: [u8; 2],
}

/// Gaussian tracking scores plus the contact score, each in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingTerms {
    pub joint_pos: f64,
    pub body_pos: f64,
    pub body_orient: f64,
    pub body_linvel: f64,
    pub body_angvel: f64,
    pub anchor_pos: f64,
    pub anchor_orient: f64,
    pub contact: f64,
}

const ANCHOR: usize = 1; // hip

pub fn tracking_terms(robot: &BodyKin, reference: &BodyKin, w: &RewardWeights) -> TrackingTerms {
    let sq = |a: f64| a * a;
    let dist_sq = |a: [f64; 2], b: [f64; 2]| sq(a[0] - b[0]) + sq(a[1] - b[1]);

    let joint_mse = (0..2).map(|j| sq(robot.joints[j] - reference.joints[j])).sum::<f64>() / 2.0;
    let body_mse = (0..3).map(|b| dist_sq(robot.bodies[b], reference.bodies[b])).sum::<f64>() / 3.0;
    let orient_mse =
        (0..3).map(|b| sq(wrap_angle(robot.link_angs[b] - reference.link_angs[b]))).sum::<f64>() / 3.0;
    let linvel_mse = (0..3).map(|b| dist_sq(robot.body_vels[b], reference.body_vels[b])).sum::<f64>() / 3.0;
    let angvel_mse =
        (0..3).map(|b| sq(robot.link_angvels[b] - reference.link_angvels[b])).sum::<f64>() / 3.0;

    TrackingTerms {
        joint_pos: gauss_score(joint_mse, w.joint_pos_sigma_sq),
        body_pos: gauss_score(body_mse, w.body_pos_sigma_sq),
        body_orient: gauss_score(orient_mse, w.body_orient_sigma_sq),
        body_linvel: gauss_score(linvel_mse, w.body_linvel_sigma_sq),
        body_angvel: gauss_score(angvel_mse, w.body_angvel_sigma_sq),
        anchor_pos: gauss_score(dist_sq(robot.bodies[ANCHOR], reference.bodies[ANCHOR]), w.anchor_pos_sigma_sq),
        anchor_orient: gauss_score(
            sq(wrap_angle(robot.link_angs[2] - reference.link_angs[2])),
            w.anchor_orient_sigma_sq,
        ),
        contact: contact_reward(robot.contact, reference.contact),
    }
}

/// 1 − ‖c − c_ref‖₁/2 ∈ {0, ½, 1}.
pub fn contact_reward(c: [u8; 2], c_ref: [u8; 2]) -> f64 {
    debug_assert!(c.iter().all(|&v| v <= 1) && c_ref.iter().all(|&v| v <= 1));
    let l1 = (c[0] as i8 - c_ref[0] as i8).abs() + (c[1] as i8 - c_ref[1] as i8).abs();
    1.0 - l1 as f64 / 2.0
}

/// Balance score exp(−max(d − thresh, 0)/divisor) for d = |com_x − cop_x|.
pub fn balance_score(com: [f64; 2], cop_x: f64, w: &RewardWeights) -> f64 {
    let d = (com[0] - cop_x).abs();
    gauss_score((d - w.balance_thresh).max(0.0), w.balance_divisor)
}

/// Balance contribution to the reward: zero when the distance stays inside
/// the threshold, approaching −weight when far outside. The literal-table
/// form −weight·score is selectable for ablation.
pub fn balance_penalty(com: [f64; 2], cop_x: f64, cfg: &RewardCfg) -> f64 {
    let score = balance_score(com, cop_x, &cfg.weights);
    if cfg.balance_sign_literal {
        -cfg.weights.balance_weight * score
    } else {
        -cfg.weights.balance_weight * (1.0 - score)
    }
}

/// w_track = clip(exp(−max(0, d_ref − τ)/κ), w_min, 1).
/// Invalid or flight-phase frames are passed in as d_ref = +∞.
pub fn adaptive_weight(d_ref: f64, cfg: &AdaptiveWeightCfg) -> f64 {
    debug_assert!(d_ref >= 0.0);
    if d_ref.is_infinite() {
        return cfg.w_min;
    }
    (-(d_ref - cfg.tau).max(0.0) / cfg.kappa).exp().clamp(cfg.w_min, 1.0)
}

/// Non-tracking inputs of the per-step reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardAux {
    pub action: [f64; 2],
    pub prev_action: [f64; 2],
    pub terminated: bool,
    pub joints: [f64; 2],
    pub joint_lower: [f64; 2],
    pub joint_upper: [f64; 2],
    /// Non-foot keypoints (hip, head) currently below the ground plane.
    pub ground_collisions: usize,
    pub com: [f64; 2],
    pub cop_x: f64,
}

/// Per-step reward decomposition; `total` is the training signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub joint_pos: f64,
    pub body_pos: f64,
    pub body_orient: f64,
    pub body_linvel: f64,
    pub body_angvel: f64,
    pub anchor_pos: f64,
    pub anchor_orient: f64,
    pub contact: f64,
    pub action_smooth: f64,
    pub self_contact: f64,
    pub balance: f64,
    pub termination: f64,
    pub joint_limit: f64,
    pub w_track: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const COLUMNS: [&'static str; 15] = [
        "r_joint_pos",
        "r_body_pos",
        "r_body_orient",
        "r_body_linvel",
        "r_body_angvel",
        "r_anchor_pos",
        "r_anchor_orient",
        "r_contact",
        "r_action_smooth",
        "r_self_contact",
        "r_balance",
        "r_termination",
        "r_joint_limit",
        "w_track",
        "r_total",
    ];

    pub fn row(&self) -> [f64; 15] {
        [
            self.joint_pos,
            self.body_pos,
            self.body_orient,
            self.body_linvel,
            self.body_angvel,
            self.anchor_pos,
            self.anchor_orient,
            self.contact,
            self.action_smooth,
            self.self_contact,
            self.balance,
            self.termination,
            self.joint_limit,
            self.w_track,
            self.total,
        ]
    }
}

/// Weighted sum of every term. The adaptive weight multiplies exactly the
/// joint-position, body-position, and anchor-position rows.
pub fn total_reward(terms: &TrackingTerms, w_track: f64, cfg: &RewardCfg, aux: &RewardAux) -> RewardBreakdown {
    let w = &cfg.weights;
    let w_track = if cfg.com_aware { w_track } else { 1.0 };

    let joint_pos = w_track * w.joint_pos * terms.joint_pos;
    let body_pos = w_track * w.body_pos * terms.body_pos;
    let anchor_pos = w_track * w.anchor_pos * terms.anchor_pos;
    let body_orient = w.body_orient * terms.body_orient;
    let body_linvel = w.body_linvel * terms.body_linvel;
    let body_angvel = w.body_angvel * terms.body_angvel;
    let anchor_orient = w.anchor_orient * terms.anchor_orient;
    let contact = w.contact * terms.contact;

    let da = [
        aux.action[0] - aux.prev_action[0],
        aux.action[1] - aux.prev_action[1],
    ];
    let action_smooth = w.action_smooth * (da[0] * da[0] + da[1] * da[1]);
    let self_contact = w.self_contact * aux.ground_collisions as f64;
    let balance = if cfg.com_aware { balance_penalty(aux.com, aux.cop_x, cfg) } else { 0.0 };
    let termination = if aux.terminated { w.termination } else { 0.0 };
    let overrun: f64 = (0..2)
        .map(|j| {
            (aux.joint_lower[j] - aux.joints[j]).max(0.0) + (aux.joints[j] - aux.joint_upper[j]).max(0.0)
        })
        .sum();
    let joint_limit = w.joint_limit * overrun;

    let total = joint_pos
        + body_pos
        + body_orient
        + body_linvel
        + body_angvel
        + anchor_pos
        + anchor_orient
        + contact
        + action_smooth
        + self_contact
        + balance
        + termination
        + joint_limit;

    RewardBreakdown {
        joint_pos,
        body_pos,
        body_orient,
        body_linvel,
        body_angvel,
        anchor_pos,
        anchor_orient,
        contact,
        action_smooth,
        self_contact,
        balance,
        termination,
        joint_limit,
        w_track,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect_aux() -> RewardAux {
        RewardAux {
            action: [0.0; 2],
            prev_action: [0.0; 2],
            terminated: false,
            joints: [0.0; 2],
            joint_lower: [-1.2; 2],
            joint_upper: [1.2; 2],
            ground_collisions: 0,
            com: [0.0, 0.5625],
            cop_x: 0.0,
        }
    }

    fn perfect_terms() -> TrackingTerms {
        TrackingTerms {
            joint_pos: 1.0,
            body_pos: 1.0,
            body_orient: 1.0,
            body_linvel: 1.0,
            body_angvel: 1.0,
            anchor_pos: 1.0,
            anchor_orient: 1.0,
            contact: 1.0,
        }
    }

    #[test]
    fn gauss_score_values() {
        assert_eq!(gauss_score(0.0, 0.16), 1.0);
        assert!((gauss_score(0.16, 0.16) - (-1.0f64).exp()).abs() < 1e-15);
        let mut prev = 2.0;
        for i in 0..20 {
            let s = gauss_score(i as f64 * 0.1, 0.16);
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn joint_term_mean_over_joints() {
        let w = RewardWeights::default();
        let robot = BodyKin { joints: [0.4, 0.0], ..Default::default() };
        let reference = BodyKin::default();
        let t = tracking_terms(&robot, &reference, &w);
        let expect = (-0.5f64).exp(); // exp(−(0.16/2)/0.16)
        assert!((t.joint_pos - expect).abs() < 1e-12, "{} vs {expect}", t.joint_pos);
    }

    #[test]
    fn angvel_term_mean_over_bodies() {
        let w = RewardWeights::default();
        let robot = BodyKin { link_angvels: [0.0, 0.0, 3.14], ..Default::default() };
        let reference = BodyKin::default();
        let t = tracking_terms(&robot, &reference, &w);
        let expect = (-1.0f64 / 3.0).exp();
        assert!((t.body_angvel - expect).abs() < 1e-12, "{} vs {expect}", t.body_angvel);
    }

    #[test]
    fn exact_tracking_all_ones() {
        let w = RewardWeights::default();
        let k = BodyKin { contact: [0, 1], ..Default::default() };
        let t = tracking_terms(&k, &k, &w);
        for v in [
            t.joint_pos,
            t.body_pos,
            t.body_orient,
            t.body_linvel,
            t.body_angvel,
            t.anchor_pos,
            t.anchor_orient,
            t.contact,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn contact_reward_table() {
        assert_eq!(contact_reward([1, 0], [1, 0]), 1.0);
        assert_eq!(contact_reward([1, 0], [0, 1]), 0.0);
        assert_eq!(contact_reward([1, 1], [1, 0]), 0.5);
    }

    #[test]
    fn balance_penalty_values() {
        let cfg = RewardCfg::default();
        // Inside the threshold: no penalty.
        assert_eq!(balance_penalty([0.0, 0.5], 0.0, &cfg), 0.0);
        assert_eq!(balance_penalty([0.12, 0.5], 0.0, &cfg), 0.0);
        // One length scale beyond: −2·(1 − e⁻¹).
        let p = balance_penalty([0.12 + 0.0064, 0.5], 0.0, &cfg);
        let expect = -2.0 * (1.0 - (-1.0f64).exp());
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        assert!((p - (-1.2642)).abs() < 1e-4);
    }

    #[test]
    fn balance_strictly_decreasing_beyond_threshold() {
        let cfg = RewardCfg::default();
        let mut prev = 0.1;
        for i in 0..100 {
            let d = 0.12 + (i + 1) as f64 * 0.001;
            let p = balance_penalty([d, 0.5], 0.0, &cfg);
            assert!(p < prev, "penalty must strictly decrease, {p} !< {prev}");
            prev = p;
        }
    }

    #[test]
    fn balance_literal_flag() {
        let cfg = RewardCfg { balance_sign_literal: true, ..Default::default() };
        assert_eq!(balance_penalty([0.0, 0.5], 0.0, &cfg), -2.0);
    }

    #[test]
    fn adaptive_weight_values() {
        let cfg = AdaptiveWeightCfg::default();
        assert_eq!(adaptive_weight(0.0, &cfg), 1.0);
        assert_eq!(adaptive_weight(0.12, &cfg), 1.0);
        assert_eq!(adaptive_weight(0.05, &cfg), 1.0);
        let w = adaptive_weight(0.12 + 0.05, &cfg);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);
        assert!((w - 0.3679).abs() < 1e-4);
        assert_eq!(adaptive_weight(f64::INFINITY, &cfg), cfg.w_min);
        assert_eq!(adaptive_weight(10.0, &cfg), cfg.w_min);
    }

    #[test]
    fn adaptive_weight_monotone_continuous() {
        let cfg = AdaptiveWeightCfg::default();
        let mut prev = 1.0;
        for i in 0..1000 {
            let d = i as f64 * 0.002;
            let w = adaptive_weight(d, &cfg);
            assert!(w <= prev + 1e-12);
            prev = w;
        }
    }

    #[test]
    fn total_reward_perfect_sum() {
        let cfg = RewardCfg::default();
        let b = total_reward(&perfect_terms(), 1.0, &cfg, &perfect_aux());
        assert!((b.total - 7.0).abs() < 1e-12, "total {}", b.total);
    }

    #[test]
    fn total_reward_downweighted_sum() {
        let cfg = RewardCfg::default();
        let b = total_reward(&perfect_terms(), 0.1, &cfg, &perfect_aux());
        assert!((b.total - 4.75).abs() < 1e-12, "total {}", b.total);
    }

    #[test]
    fn downweight_touches_exactly_three_terms() {
        let cfg = RewardCfg::default();
        let full = total_reward(&perfect_terms(), 1.0, &cfg, &perfect_aux());
        let half = total_reward(&perfect_terms(), 0.5, &cfg, &perfect_aux());
        assert!((half.joint_pos - 0.5 * full.joint_pos).abs() < 1e-15);
        assert!((half.body_pos - 0.5 * full.body_pos).abs() < 1e-15);
        assert!((half.anchor_pos - 0.5 * full.anchor_pos).abs() < 1e-15);
        assert_eq!(half.body_orient, full.body_orient);
        assert_eq!(half.body_linvel, full.body_linvel);
        assert_eq!(half.body_angvel, full.body_angvel);
        assert_eq!(half.anchor_orient, full.anchor_orient);
        assert_eq!(half.contact, full.contact);
        assert_eq!(half.balance, full.balance);
    }

    #[test]
    fn joint_limit_penalty_value() {
        let cfg = RewardCfg::default();
        let mut aux = perfect_aux();
        aux.joints = [1.3, 0.0]; // 0.1 rad beyond the upper limit
        let b = total_reward(&perfect_terms(), 1.0, &cfg, &aux);
        assert!((b.joint_limit - (-1.0)).abs() < 1e-12);
        assert!((b.total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn termination_penalty_applied() {
        let cfg = RewardCfg::default();
        let mut aux = perfect_aux();
        aux.terminated = true;
        let b = total_reward(&perfect_terms(), 1.0, &cfg, &aux);
        assert_eq!(b.termination, -1.0);
    }

    #[test]
    fn com_aware_off_disables_balance_and_weight() {
        let cfg = RewardCfg { com_aware: false, ..Default::default() };
        let mut aux = perfect_aux();
        aux.com = [0.5, 0.5]; // far from the pressure point
        let b = total_reward(&perfect_terms(), 0.1, &cfg, &aux);
        assert_eq!(b.balance, 0.0);
        assert_eq!(b.w_track, 1.0);
        assert!((b.total - 7.0).abs() < 1e-12);
    }

    #[test]
    fn action_smoothness_quadratic() {
        let cfg = RewardCfg::default();
        let mut aux = perfect_aux();
        aux.action = [0.3, -0.4];
        let b = total_reward(&perfect_terms(), 1.0, &cfg, &aux);
        assert!((b.action_smooth - (-0.1 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_branch_cut() {
        assert!((wrap_angle(3.5 * std::f64::consts::PI) - (-0.5 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
    }
}
