//! Planar two-link balancer model: geometry, forward kinematics, mass
//! properties, and the rigid-body dynamics shared by the simulator and the
//! reference-motion annotation pipeline.
//!
//! The robot is an ankle + hip chain standing on a flat foot of half-length
//! `d_f`, pinned at the ankle (origin) until it tips. Joint angles are
//! measured from vertical; `q[0]` is the ankle (absolute lean of the leg
//! link), `q[1]` the hip (torso angle relative to the leg). The torso's
//! absolute angle `q[0] + q[1]` doubles as the root orientation, and the hip
//! joint position is the root.
//!
//! Planar moments use the convention conjugate to these angles: a positive
//! ankle torque accelerates the leg toward +x. In that convention the ground
//! pressure point obeys `cop_x = −τ_ankle / F_n` (the foot feels the
//! reaction), which reduces to `cop_x = com_x` for any held pose.

use serde::{Deserialize, Serialize};

/// Physical parameters of the balancer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtbModel {
    /// Leg and torso link lengths [m].
    pub l1: f64,
    pub l2: f64,
    /// Link masses [kg].
    pub m1: f64,
    pub m2: f64,
    /// Foot half-length [m]; the CoP can physically lie in [−d_f, d_f].
    pub d_f: f64,
    /// Per-joint torque limits [N·m].
    pub tau_max: [f64; 2],
    /// PD gains.
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    /// Default joint configuration used by action scaling.
    pub q_default: [f64; 2],
    /// Gravity [m/s²].
    pub g: f64,
    /// Joint position limits [rad].
    pub joint_lower: [f64; 2],
    pub joint_upper: [f64; 2],
    /// Body-frame x-offset of the torso CoM [m] (domain randomization).
    pub com_offset_x: f64,
}

impl Default for PtbModel {
    fn default() -> Self {
        PtbModel {
            l1: 0.5,
            l2: 0.5,
            m1: 3.0,
            m2: 5.0,
            d_f: 0.1,
            tau_max: [30.0, 20.0],
            kp: [60.0, 40.0],
            kd: [5.0, 3.0],
            q_default: [0.0, 0.0],
            g: 9.81,
            joint_lower: [-1.2, -1.2],
            joint_upper: [1.2, 1.2],
            com_offset_x: 0.0,
        }
    }
}

/// Named keypoint positions, each (x, z) in world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoints {
    pub ankle: [f64; 2],
    pub hip: [f64; 2],
    pub head: [f64; 2],
    pub heel: [f64; 2],
    pub toe: [f64; 2],
}

impl PtbModel {
    pub fn total_mass(&self) -> f64 {
        self.m1 + self.m2
    }

    /// Rod inertias about each link's own CoM.
    pub fn link_inertias(&self) -> [f64; 2] {
        [self.m1 * self.l1 * self.l1 / 12.0, self.m2 * self.l2 * self.l2 / 12.0]
    }

    /// Torso CoM polar offset (radius, angle) induced by `com_offset_x`.
    fn torso_com_polar(&self) -> (f64, f64) {
        let half = self.l2 / 2.0;
        let r = (half * half + self.com_offset_x * self.com_offset_x).sqrt();
        let phi = self.com_offset_x.atan2(half);
        (r, phi)
    }

    /// Absolute link angles (leg, torso) for joint angles `q`.
    #[inline]
    pub fn absolute_angles(&self, q: [f64; 2]) -> [f64; 2] {
        [q[0], q[0] + q[1]]
    }

    /// World keypoints for joint angles `q` with the foot centered at `foot_x`.
    pub fn keypoints(&self, q: [f64; 2], foot_x: f64) -> Keypoints {
        let [t1, t2] = self.absolute_angles(q);
        let ankle = [foot_x, 0.0];
        let hip = [ankle[0] + self.l1 * t1.sin(), ankle[1] + self.l1 * t1.cos()];
        let head = [hip[0] + self.l2 * t2.sin(), hip[1] + self.l2 * t2.cos()];
        Keypoints {
            ankle,
            hip,
            head,
            heel: [foot_x - self.d_f, 0.0],
            toe: [foot_x + self.d_f, 0.0],
        }
    }

    /// Mass-weighted CoM (x, z), including the randomized torso offset.
    pub fn com(&self, q: [f64; 2], foot_x: f64) -> [f64; 2] {
        let [t1, t2] = self.absolute_angles(q);
        let (r2, phi) = self.torso_com_polar();
        let c1 = [foot_x + 0.5 * self.l1 * t1.sin(), 0.5 * self.l1 * t1.cos()];
        let c2 = [
            foot_x + self.l1 * t1.sin() + r2 * (t2 + phi).sin(),
            self.l1 * t1.cos() + r2 * (t2 + phi).cos(),
        ];
        let m = self.total_mass();
        [
            (self.m1 * c1[0] + self.m2 * c2[0]) / m,
            (self.m1 * c1[1] + self.m2 * c2[1]) / m,
        ]
    }

    /// CoM velocity for joint state (q, q̇), foot stationary.
    pub fn com_velocity(&self, q: [f64; 2], qd: [f64; 2]) -> [f64; 2] {
        let [t1, t2] = self.absolute_angles(q);
        let [w1, w2] = [qd[0], qd[0] + qd[1]];
        let (r2, phi) = self.torso_com_polar();
        let v1 = [0.5 * self.l1 * t1.cos() * w1, -0.5 * self.l1 * t1.sin() * w1];
        let v2 = [
            self.l1 * t1.cos() * w1 + r2 * (t2 + phi).cos() * w2,
            -self.l1 * t1.sin() * w1 - r2 * (t2 + phi).sin() * w2,
        ];
        let m = self.total_mass();
        [
            (self.m1 * v1[0] + self.m2 * v2[0]) / m,
            (self.m1 * v1[1] + self.m2 * v2[1]) / m,
        ]
    }

    /// Vertical CoM acceleration given accelerations of the absolute angles.
    pub fn com_z_accel(&self, q: [f64; 2], qd: [f64; 2], theta_dd: [f64; 2]) -> f64 {
        let [t1, t2] = self.absolute_angles(q);
        let [w1, w2] = [qd[0], qd[0] + qd[1]];
        let (r2, phi) = self.torso_com_polar();
        let z1dd = -0.5 * self.l1 * (t1.cos() * w1 * w1 + t1.sin() * theta_dd[0]);
        let z2dd = -self.l1 * (t1.cos() * w1 * w1 + t1.sin() * theta_dd[0])
            - r2 * ((t2 + phi).cos() * w2 * w2 + (t2 + phi).sin() * theta_dd[1]);
        (self.m1 * z1dd + self.m2 * z2dd) / self.total_mass()
    }

    /// Angular momentum about the ankle in the planar convention conjugate to
    /// the joint angles: Σ mᵢ(r_z v_x − r_x v_z) + Σ Iᵢωᵢ.
    pub fn angular_momentum_about_ankle(&self, q: [f64; 2], qd: [f64; 2]) -> f64 {
        let [t1, t2] = self.absolute_angles(q);
        let [w1, w2] = [qd[0], qd[0] + qd[1]];
        let (r2, phi) = self.torso_com_polar();
        let [i1, i2] = self.link_inertias();

        let r1 = [0.5 * self.l1 * t1.sin(), 0.5 * self.l1 * t1.cos()];
        let v1 = [0.5 * self.l1 * t1.cos() * w1, -0.5 * self.l1 * t1.sin() * w1];
        let r2v = [
            self.l1 * t1.sin() + r2 * (t2 + phi).sin(),
            self.l1 * t1.cos() + r2 * (t2 + phi).cos(),
        ];
        let v2 = [
            self.l1 * t1.cos() * w1 + r2 * (t2 + phi).cos() * w2,
            -self.l1 * t1.sin() * w1 - r2 * (t2 + phi).sin() * w2,
        ];
        self.m1 * (r1[1] * v1[0] - r1[0] * v1[1])
            + self.m2 * (r2v[1] * v2[0] - r2v[0] * v2[1])
            + i1 * w1
            + i2 * w2
    }

    /// Mass matrix, velocity terms, and gravity terms in absolute angles:
    /// M·θ̈ + c + gv = Q with Q = (τ_ankle − τ_hip, τ_hip).
    #[allow(clippy::type_complexity)]
    pub fn dynamics_terms(&self, q: [f64; 2], qd: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2], [f64; 2]) {
        let [t1, t2] = self.absolute_angles(q);
        let [w1, w2] = [qd[0], qd[0] + qd[1]];
        let (r2, phi) = self.torso_com_polar();
        let [i1, i2] = self.link_inertias();

        let m11 = self.m1 * 0.25 * self.l1 * self.l1 + i1 + self.m2 * self.l1 * self.l1;
        let m12 = self.m2 * self.l1 * r2 * (t1 - t2 - phi).cos();
        let m22 = self.m2 * r2 * r2 + i2;
        let h = self.m2 * self.l1 * r2 * (t1 - t2 - phi).sin();
        let c = [h * w2 * w2, -h * w1 * w1];
        let gv = [
            -(self.m1 * 0.5 * self.l1 + self.m2 * self.l1) * self.g * t1.sin(),
            -self.m2 * self.g * r2 * (t2 + phi).sin(),
        ];
        ([[m11, m12], [m12, m22]], c, gv)
    }

    /// Absolute-angle accelerations for joint torques τ = (ankle, hip).
    pub fn forward_dynamics(&self, q: [f64; 2], qd: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
        let (m, c, gv) = self.dynamics_terms(q, qd);
        let rhs = [tau[0] - tau[1] - c[0] - gv[0], tau[1] - c[1] - gv[1]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [
            (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det,
            (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
        ]
    }

    /// Joint torques (ankle, hip) that realize the given absolute-angle
    /// accelerations at state (q, q̇).
    pub fn inverse_dynamics(&self, q: [f64; 2], qd: [f64; 2], theta_dd: [f64; 2]) -> [f64; 2] {
        let (m, c, gv) = self.dynamics_terms(q, qd);
        let q1 = m[0][0] * theta_dd[0] + m[0][1] * theta_dd[1] + c[0] + gv[0];
        let q2 = m[1][0] * theta_dd[0] + m[1][1] * theta_dd[1] + c[1] + gv[1];
        // Q1 = τ_a − τ_h, Q2 = τ_h.
        [q1 + q2, q2]
    }

    /// Total mechanical energy (for integrator drift checks).
    pub fn energy(&self, q: [f64; 2], qd: [f64; 2]) -> f64 {
        let (m, _, _) = self.dynamics_terms(q, qd);
        let [t1, t2] = self.absolute_angles(q);
        let w = [qd[0], qd[0] + qd[1]];
        let kin = 0.5
            * (m[0][0] * w[0] * w[0] + 2.0 * m[0][1] * w[0] * w[1] + m[1][1] * w[1] * w[1]);
        let (r2, phi) = self.torso_com_polar();
        let pot = self.g
            * (self.m1 * 0.5 * self.l1 * t1.cos()
                + self.m2 * (self.l1 * t1.cos() + r2 * (t2 + phi).cos()));
        kin + pot
    }
}
