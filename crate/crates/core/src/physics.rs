//! Motion correction with PD tracking and a PD-residual root force.
//!
//! The simulated character is deliberately simple: every joint-angle channel
//! is an independent double integrator driven by a clamped PD torque, and the
//! root is a point mass pushed by gravity and by a clamped PD force toward
//! the goal root position. The ground is an inelastic floor under the lowest
//! joint. There is no articulated rigid-body coupling and no learned policy.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bvh::{wrap_angle, Motion, Pose, Skeleton};
use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;

/// Scalar controller parameters shared by every DOF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    pub inertia: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub root_mass: f64,
    pub root_kp: f64,
    pub root_kd: f64,
    pub residual_force_limit: f64,
    pub gravity: [f64; 3],
    pub ground_height: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            inertia: 1.0,
            kp: 300.0,
            kd: 30.0,
            torque_limit: 200.0,
            // heavier than the residual force can lift
            root_mass: 60.0,
            root_kp: 500.0,
            root_kd: 50.0,
            residual_force_limit: 300.0,
            gravity: [0.0, -9.81, 0.0],
            ground_height: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCharacter {
    pub dof_count: usize,
    pub inertia: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub torque_limit: Vec<f64>,
    pub root_mass: f64,
    pub root_kp: f64,
    pub root_kd: f64,
    pub residual_force_limit: f64,
    pub gravity: Vector3<f64>,
    pub ground_height: f64,
    /// Height of the root above its lowest contact point, used by
    /// [`sim_step`]. [`track_motion`] recomputes it from the pose.
    pub root_contact_offset: f64,
}

impl SimCharacter {
    pub fn uniform(dof_count: usize, params: &ControllerParams) -> Result<Self> {
        let c = SimCharacter {
            dof_count,
            inertia: vec![params.inertia; dof_count],
            kp: vec![params.kp; dof_count],
            kd: vec![params.kd; dof_count],
            torque_limit: vec![params.torque_limit; dof_count],
            root_mass: params.root_mass,
            root_kp: params.root_kp,
            root_kd: params.root_kd,
            residual_force_limit: params.residual_force_limit,
            gravity: Vector3::from(params.gravity),
            ground_height: params.ground_height,
            root_contact_offset: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    /// One DOF per joint-angle channel of `skeleton`.
    pub fn for_skeleton(skeleton: &Skeleton, params: &ControllerParams) -> Result<Self> {
        Self::uniform(3 * skeleton.len(), params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive and finite")));
        for (name, values) in [
            ("inertia", &self.inertia),
            ("kp", &self.kp),
            ("kd", &self.kd),
            ("torque_limit", &self.torque_limit),
        ] {
            if values.len() != self.dof_count {
                return Err(Error::Dimension {
                    expected: self.dof_count,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(name);
            }
        }
        for (name, v) in [
            ("root_mass", self.root_mass),
            ("root_kp", self.root_kp),
            ("root_kd", self.root_kd),
            ("residual_force_limit", self.residual_force_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name);
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite())
            || !self.ground_height.is_finite()
            || !self.root_contact_offset.is_finite()
        {
            return Err(Error::InvalidArgument("gravity and ground must be finite".into()));
        }
        let under = self.underdamped_dofs();
        if !under.is_empty() {
            log::debug!("{} DOFs have underdamped PD gains", under.len());
        }
        Ok(())
    }

    /// DOFs with `kd^2 < 4 kp I`.
    pub fn underdamped_dofs(&self) -> Vec<usize> {
        (0..self.dof_count)
            .filter(|&i| self.kd[i] * self.kd[i] < 4.0 * self.kp[i] * self.inertia[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub root_pos: Vector3<f64>,
    pub root_vel: Vector3<f64>,
    pub time: f64,
}

impl SimState {
    pub fn at_rest(q: Vec<f64>, root_pos: Vector3<f64>) -> Self {
        let n = q.len();
        SimState {
            q,
            qdot: vec![0.0; n],
            root_pos,
            root_vel: Vector3::zeros(),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
            && self.root_pos.iter().chain(self.root_vel.iter()).all(|v| v.is_finite())
            && self.time.is_finite()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Clamped PD torque with wrapped angle errors.
pub fn pd_torque(character: &SimCharacter, q: &[f64], qdot: &[f64], q_target: &[f64]) -> Result<Vec<f64>> {
    check_len(character.dof_count, q.len())?;
    check_len(character.dof_count, qdot.len())?;
    check_len(character.dof_count, q_target.len())?;
    Ok((0..character.dof_count)
        .map(|i| {
            let tau = character.kp[i] * wrap_angle(q_target[i] - q[i]) - character.kd[i] * qdot[i];
            let lim = character.torque_limit[i];
            tau.clamp(-lim, lim)
        })
        .collect())
}

/// PD force on the root toward `goal`, scaled down to at most `limit` in
/// magnitude.
pub fn pd_residual_force(
    root_pos: &Vector3<f64>,
    root_vel: &Vector3<f64>,
    goal: &Vector3<f64>,
    kp: f64,
    kd: f64,
    limit: f64,
) -> Vector3<f64> {
    let f = kp * (goal - root_pos) - kd * root_vel;
    let norm = f.norm();
    if norm > limit {
        f * (limit / norm)
    } else {
        f
    }
}

fn step_dofs(character: &SimCharacter, state: &mut SimState, torques: &[f64], dt: f64) {
    for i in 0..character.dof_count {
        state.qdot[i] += torques[i] / character.inertia[i] * dt;
        state.q[i] += state.qdot[i] * dt;
    }
}

fn step_root(character: &SimCharacter, state: &mut SimState, force: &Vector3<f64>, dt: f64, contact_offset: f64) {
    state.root_vel += (character.gravity + force / character.root_mass) * dt;
    state.root_pos += state.root_vel * dt;
    let floor = character.ground_height + contact_offset;
    if state.root_pos.y < floor {
        state.root_pos.y = floor;
        state.root_vel.y = 0.0;
    }
    state.time += dt;
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt <= 0.01 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time step {dt} must lie in (0, 0.01]")))
    }
}

/// One semi-implicit Euler step. A divergence error reports frame 0 and the
/// step index implied by `state.time`.
pub fn sim_step(
    character: &SimCharacter,
    state: &SimState,
    torques: &[f64],
    residual_force: &Vector3<f64>,
    dt: f64,
) -> Result<SimState> {
    check_dt(dt)?;
    check_len(character.dof_count, state.q.len())?;
    check_len(character.dof_count, state.qdot.len())?;
    check_len(character.dof_count, torques.len())?;
    let mut next = state.clone();
    step_dofs(character, &mut next, torques, dt);
    step_root(character, &mut next, residual_force, dt, character.root_contact_offset);
    if !next.is_finite() {
        return Err(Error::Divergence {
            frame: 0,
            step: (state.time / dt).round() as usize,
        });
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Reward

/// Surrogate imitation reward `w_pose exp(-a_pose |dq|^2) + w_root exp(-a_root |droot|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub w_pose: f64,
    pub a_pose: f64,
    pub w_root: f64,
    pub a_root: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_pose: 0.65,
            a_pose: 2.0,
            w_root: 0.35,
            a_root: 10.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if (self.w_pose + self.w_root - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "reward weights sum to {}, expected 1",
                self.w_pose + self.w_root
            )));
        }
        if [self.w_pose, self.w_root, self.a_pose, self.a_root]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reward in `(0, 1]`; exactly 1 when both errors vanish. Underflow is
/// clamped to the smallest positive double.
pub fn imitation_reward(
    sim_q: &[f64],
    goal_q: &[f64],
    sim_root: &Vector3<f64>,
    goal_root: &Vector3<f64>,
    weights: &RewardWeights,
) -> Result<f64> {
    weights.validate()?;
    check_len(goal_q.len(), sim_q.len())?;
    let dq: f64 = sim_q
        .iter()
        .zip(goal_q)
        .map(|(a, b)| wrap_angle(a - b).powi(2))
        .sum();
    let droot = (sim_root - goal_root).norm_squared();
    let r = weights.w_pose * (-weights.a_pose * dq).exp() + weights.w_root * (-weights.a_root * droot).exp();
    Ok(r.clamp(f64::MIN_POSITIVE, 1.0))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTrace {
    pub reward: Vec<f64>,
    pub max_reward: Vec<f64>,
}

impl RewardTrace {
    pub fn push(&mut self, reward: f64, max_reward: f64) {
        self.reward.push(reward);
        self.max_reward.push(max_reward);
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

/// Mean over frames of `reward / max_reward`.
pub fn normalized_reward(trace: &RewardTrace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("reward trace is empty".into()));
    }
    check_len(trace.reward.len(), trace.max_reward.len())?;
    let mut sum = 0.0;
    for (t, (r, m)) in trace.reward.iter().zip(&trace.max_reward).enumerate() {
        if !(*r > 0.0 && r <= m && m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frame {t}: reward {r} outside (0, {m}]"
            )));
        }
        sum += r / m;
    }
    Ok(sum / trace.len() as f64)
}

// ---------------------------------------------------------------------------
// Plausibility

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlausibilityThresholds {
    pub ground_height: f64,
    pub ground_epsilon: f64,
    /// Foot height below which a foot counts as in contact.
    pub contact_height: f64,
    /// Horizontal foot speed (m/s) allowed while in contact.
    pub footskate_speed: f64,
    pub bone_radius: f64,
    /// Per-channel angular speed limit (rad/s).
    pub max_angular_speed: f64,
    /// Joints checked for footskate. Empty selects end effectors at the
    /// lowest rest height.
    pub foot_joints: Vec<usize>,
}

impl Default for PlausibilityThresholds {
    fn default() -> Self {
        PlausibilityThresholds {
            ground_height: 0.0,
            ground_epsilon: 1e-3,
            contact_height: 0.05,
            footskate_speed: 0.5,
            bone_radius: 0.03,
            max_angular_speed: 25.0,
            foot_joints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    GroundPenetration,
    Footskate,
    Interpenetration,
    VelocitySpike,
}

impl DiagnosticKind {
    pub fn label(self) -> &'static str {
        match self {
            DiagnosticKind::GroundPenetration => "ground_penetration",
            DiagnosticKind::Footskate => "footskate",
            DiagnosticKind::Interpenetration => "interpenetration",
            DiagnosticKind::VelocitySpike => "velocity_spike",
        }
    }
}

/// A run of consecutive flagged frames, `end_frame` inclusive. `magnitude`
/// is the worst value in the run: penetration depth, foot speed, overlap
/// depth or angular speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    #[serde(rename = "type")]
    pub kind: DiagnosticKind,
    pub start_frame: usize,
    pub end_frame: usize,
    pub magnitude: f64,
}

/// Closest distance between segments `[p1, q1]` and `[p2, q2]`.
pub fn segment_distance(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> f64 {
    const EPS: f64 = 1e-12;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

fn default_feet(skeleton: &Skeleton, contact_height: f64) -> Result<Vec<usize>> {
    let rest = forward_kinematics(skeleton, &Pose::zeros(skeleton.len()))?;
    let lowest = rest.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    Ok((0..skeleton.len())
        .filter(|&j| skeleton.joint(j).is_end_effector() && rest.positions[j].y <= lowest + contact_height)
        .collect())
}

fn runs(kind: DiagnosticKind, per_frame: &[Option<f64>], out: &mut Vec<Diagnostic>) {
    let mut current: Option<Diagnostic> = None;
    for (t, m) in per_frame.iter().enumerate() {
        match (m, current.as_mut()) {
            (Some(m), Some(d)) => {
                d.end_frame = t;
                d.magnitude = d.magnitude.max(*m);
            }
            (Some(m), None) => {
                current = Some(Diagnostic {
                    kind,
                    start_frame: t,
                    end_frame: t,
                    magnitude: *m,
                })
            }
            (None, _) => out.extend(current.take()),
        }
    }
    out.extend(current);
}

fn worst(slot: &mut Option<f64>, value: f64) {
    *slot = Some(slot.map_or(value, |v| v.max(value)));
}

/// Flags ground penetration, footskate, limb interpenetration and angular
/// velocity spikes, grouped into runs of consecutive frames and sorted by
/// type then start frame.
pub fn validate_plausibility(
    skeleton: &Skeleton,
    motion: &Motion,
    thresholds: &PlausibilityThresholds,
) -> Result<Vec<Diagnostic>> {
    motion.validate()?;
    motion.check_skeleton(skeleton)?;
    let n = motion.len();
    let ft = motion.frame_time;
    let fk = motion
        .frames
        .iter()
        .map(|p| forward_kinematics(skeleton, p))
        .collect::<Result<Vec<_>>>()?;
    let feet = if thresholds.foot_joints.is_empty() {
        default_feet(skeleton, thresholds.contact_height)?
    } else {
        thresholds.foot_joints.clone()
    };
    if let Some(&bad) = feet.iter().find(|&&j| j >= skeleton.len()) {
        return Err(Error::InvalidArgument(format!("foot joint {bad} out of range")));
    }
    let bones: Vec<(usize, usize)> = (1..skeleton.len())
        .filter_map(|j| skeleton.joint(j).parent.map(|p| (p, j)))
        .collect();

    let mut ground = vec![None; n];
    let mut skate = vec![None; n];
    let mut overlap = vec![None; n];
    let mut spike = vec![None; n];
    let floor = thresholds.ground_height;
    for t in 0..n {
        let pos = &fk[t].positions;
        for p in pos {
            let depth = floor - p.y;
            if depth > thresholds.ground_epsilon {
                worst(&mut ground[t], depth);
            }
        }
        for (a, &(p1, c1)) in bones.iter().enumerate() {
            for &(p2, c2) in &bones[a + 1..] {
                if p1 == p2 || p1 == c2 || c1 == p2 || c1 == c2 {
                    continue;
                }
                let d = segment_distance(&pos[p1], &pos[c1], &pos[p2], &pos[c2]);
                if d < 2.0 * thresholds.bone_radius {
                    worst(&mut overlap[t], 2.0 * thresholds.bone_radius - d);
                }
            }
        }
        if t == 0 {
            continue;
        }
        let prev = &fk[t - 1].positions;
        for &f in &feet {
            let low = pos[f].y - floor < thresholds.contact_height && prev[f].y - floor < thresholds.contact_height;
            let speed = (pos[f] - prev[f]).xz().norm() / ft;
            if low && speed > thresholds.footskate_speed {
                worst(&mut skate[t], speed);
            }
        }
        for (a, b) in motion.frames[t].joint_angles.iter().zip(&motion.frames[t - 1].joint_angles) {
            for c in 0..3 {
                let w = wrap_angle(a[c] - b[c]).abs() / ft;
                if w > thresholds.max_angular_speed {
                    worst(&mut spike[t], w);
                }
            }
        }
    }
    let mut out = Vec::new();
    runs(DiagnosticKind::GroundPenetration, &ground, &mut out);
    runs(DiagnosticKind::Footskate, &skate, &mut out);
    runs(DiagnosticKind::Interpenetration, &overlap, &mut out);
    runs(DiagnosticKind::VelocitySpike, &spike, &mut out);
    Ok(out)
}

/// Largest per-channel angular speed between consecutive frames (rad/s).
pub fn max_angular_speed(motion: &Motion) -> f64 {
    motion
        .frames
        .windows(2)
        .flat_map(|w| {
            w[1].joint_angles
                .iter()
                .zip(&w[0].joint_angles)
                .flat_map(|(a, b)| (0..3).map(move |c| wrap_angle(a[c] - b[c]).abs()))
        })
        .fold(0.0, f64::max)
        / motion.frame_time
}

// ---------------------------------------------------------------------------
// Tracking

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSettings {
    pub dt: f64,
    pub substeps: usize,
    pub residual_force: bool,
    pub reward: RewardWeights,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        TrackingSettings {
            dt: 1.0 / 300.0,
            substeps: 10,
            residual_force: true,
            reward: RewardWeights::default(),
        }
    }
}

impl TrackingSettings {
    /// Keeps the other settings and picks the smallest substep count whose
    /// step does not exceed the current `dt`.
    pub fn matching(self, frame_time: f64) -> Self {
        let substeps = (frame_time / self.dt - 1e-9).ceil().max(1.0) as usize;
        TrackingSettings {
            dt: frame_time / substeps as f64,
            substeps,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracking {
    pub motion: Motion,
    pub trace: RewardTrace,
    pub normalized_reward: f64,
    pub diagnostics: Vec<Diagnostic>,
}

fn flat_angles(pose: &Pose) -> Vec<f64> {
    pose.joint_angles.iter().flatten().copied().collect()
}

fn state_pose(state: &SimState) -> Pose {
    Pose {
        root_translation: state.root_pos,
        joint_angles: state
            .q
            .chunks_exact(3)
            .map(|c| [wrap_angle(c[0]), wrap_angle(c[1]), wrap_angle(c[2])])
            .collect(),
    }
}

/// Root height above the lowest joint for joint angles `q`.
pub fn contact_offset(skeleton: &Skeleton, q: &[f64]) -> Result<f64> {
    let pose = Pose {
        root_translation: Vector3::zeros(),
        joint_angles: q.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    };
    let fk = forward_kinematics(skeleton, &pose)?;
    Ok(-fk.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min))
}

/// Tracks `goal` frame by frame: the character starts at rest in the first
/// goal pose, and each following frame runs `substeps` steps toward the
/// next goal pose. The floor is placed under the lowest joint after every
/// step, so the result never penetrates the ground.
pub fn track_motion(
    character: &SimCharacter,
    skeleton: &Skeleton,
    goal: &Motion,
    settings: &TrackingSettings,
    thresholds: &PlausibilityThresholds,
) -> Result<Tracking> {
    goal.validate()?;
    goal.check_skeleton(skeleton)?;
    character.validate()?;
    settings.reward.validate()?;
    check_len(3 * skeleton.len(), character.dof_count)?;
    check_dt(settings.dt)?;
    if settings.substeps == 0
        || (settings.dt * settings.substeps as f64 - goal.frame_time).abs() > 1e-9 * goal.frame_time.max(1.0)
    {
        return Err(Error::InvalidArgument(format!(
            "dt {} x {} substeps does not match frame time {}",
            settings.dt, settings.substeps, goal.frame_time
        )));
    }
    let dt = settings.dt;
    let first = &goal.frames[0];
    let mut state = SimState::at_rest(flat_angles(first), first.root_translation);
    let floor = character.ground_height + contact_offset(skeleton, &state.q)?;
    state.root_pos.y = state.root_pos.y.max(floor);

    let mut frames = Vec::with_capacity(goal.len());
    let mut trace = RewardTrace::default();
    let record = |state: &SimState, target: &Pose, frames: &mut Vec<Pose>, trace: &mut RewardTrace| -> Result<()> {
        let pose = state_pose(state);
        let r = imitation_reward(
            &flat_angles(&pose),
            &flat_angles(target),
            &pose.root_translation,
            &target.root_translation,
            &settings.reward,
        )?;
        trace.push(r, 1.0);
        frames.push(pose);
        Ok(())
    };
    record(&state, first, &mut frames, &mut trace)?;
    for (k, target) in goal.frames.iter().enumerate().skip(1) {
        let q_target = flat_angles(target);
        for step in 0..settings.substeps {
            let tau = pd_torque(character, &state.q, &state.qdot, &q_target)?;
            let force = if settings.residual_force {
                pd_residual_force(
                    &state.root_pos,
                    &state.root_vel,
                    &target.root_translation,
                    character.root_kp,
                    character.root_kd,
                    character.residual_force_limit,
                )
            } else {
                Vector3::zeros()
            };
            step_dofs(character, &mut state, &tau, dt);
            let offset = if state.q.iter().all(|v| v.is_finite()) {
                contact_offset(skeleton, &state.q)?
            } else {
                0.0
            };
            step_root(character, &mut state, &force, dt, offset);
            if !state.is_finite() {
                return Err(Error::Divergence { frame: k, step });
            }
        }
        record(&state, target, &mut frames, &mut trace)?;
    }
    let mut motion = Motion::new(goal.frame_time, frames)?;
    motion.action_label = goal.action_label.clone();
    let diagnostics = validate_plausibility(skeleton, &motion, thresholds)?;
    Ok(Tracking {
        normalized_reward: normalized_reward(&trace)?,
        motion,
        trace,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn one_dof(kp: f64, kd: f64) -> SimCharacter {
        SimCharacter::uniform(
            1,
            &ControllerParams {
                kp,
                kd,
                torque_limit: 1e9,
                gravity: [0.0; 3],
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn torque_law_and_clamp() {
        let c = one_dof(2.0, 1e-12);
        assert_eq!(pd_torque(&c, &[0.3], &[0.0], &[0.3]).unwrap(), vec![0.0]);
        assert!((pd_torque(&c, &[0.0], &[0.0], &[0.5]).unwrap()[0] - 1.0).abs() < 1e-12);
        let mut clamped = one_dof(300.0, 30.0);
        clamped.torque_limit = vec![5.0];
        assert_eq!(pd_torque(&clamped, &[0.0], &[0.0], &[1.0]).unwrap(), vec![5.0]);
        assert_eq!(pd_torque(&clamped, &[0.0], &[0.0], &[-1.0]).unwrap(), vec![-5.0]);
        // the error wraps the short way round
        let t = pd_torque(&c, &[3.0], &[0.0], &[-3.0]).unwrap()[0];
        assert!((t - 2.0 * (2.0 * std::f64::consts::PI - 6.0)).abs() < 1e-12);
        assert!(pd_torque(&c, &[0.0, 1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn residual_force_clamps_magnitude() {
        let z = Vector3::zeros();
        assert_eq!(pd_residual_force(&z, &z, &z, 100.0, 10.0, 50.0), z);
        let f = pd_residual_force(&z, &z, &Vector3::new(1.0, 0.0, 0.0), 100.0, 0.0, 50.0);
        assert!((f - Vector3::new(50.0, 0.0, 0.0)).norm() < 1e-12);
        let g = pd_residual_force(&z, &Vector3::new(0.0, 1.0, 0.0), &Vector3::new(3.0, 0.0, 4.0), 100.0, 10.0, 1e6);
        assert!((g - Vector3::new(300.0, -10.0, 400.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_input_step_only_advances_time() {
        let c = one_dof(1.0, 1.0);
        let mut s = SimState::at_rest(vec![0.4], Vector3::new(0.0, 2.0, 0.0));
        s.qdot = vec![0.7];
        s.root_vel = Vector3::new(0.1, 0.0, -0.2);
        let ke = |s: &SimState| 0.5 * s.qdot[0].powi(2) + 0.5 * s.root_vel.norm_squared();
        let next = sim_step(&c, &s, &[0.0], &Vector3::zeros(), 0.005).unwrap();
        assert_eq!(ke(&next), ke(&s));
        assert!((next.time - 0.005).abs() < 1e-15);
        let still = SimState::at_rest(vec![0.4], Vector3::new(0.0, 2.0, 0.0));
        let next = sim_step(&c, &still, &[0.0], &Vector3::zeros(), 0.005).unwrap();
        assert_eq!(next.q, still.q);
        assert_eq!(next.root_pos, still.root_pos);
        assert!(sim_step(&c, &still, &[0.0], &Vector3::zeros(), 0.02).is_err());
    }

    #[test]
    fn free_fall_lands_and_stays() {
        let c = SimCharacter::uniform(1, &ControllerParams::default()).unwrap();
        let mut s = SimState::at_rest(vec![0.0], Vector3::new(0.0, 1.0, 0.0));
        for _ in 0..2000 {
            s = sim_step(&c, &s, &[0.0], &Vector3::zeros(), 1e-3).unwrap();
        }
        assert_eq!(s.root_pos.y, 0.0);
        assert_eq!(s.root_vel.y, 0.0);
    }

    #[test]
    fn constant_torque_matches_kinematics() {
        let c = one_dof(1.0, 1.0);
        let dt = 1e-3;
        let mut s = SimState::at_rest(vec![0.0], Vector3::zeros());
        for _ in 0..1000 {
            s = sim_step(&c, &s, &[2.0], &Vector3::zeros(), dt).unwrap();
        }
        // semi-implicit Euler overshoots 0.5 a t^2 by 0.5 a t dt
        let exact = 0.5 * 2.0 * 1.0;
        assert!((s.q[0] - exact).abs() <= 2.0 * dt + 1e-12);
    }

    #[test]
    fn reward_cases() {
        let w = RewardWeights::default();
        let z = Vector3::zeros();
        assert_eq!(imitation_reward(&[0.1, 0.2], &[0.1, 0.2], &z, &z, &w).unwrap(), 1.0);
        let pose_only = RewardWeights { w_pose: 1.0, a_pose: 2.0, w_root: 0.0, a_root: 1.0 };
        let r = imitation_reward(&[0.5, 0.5], &[0.0, 0.0], &z, &z, &pose_only).unwrap();
        assert!((r - (-1.0f64).exp()).abs() < 1e-15);
        let far = imitation_reward(&[0.0], &[3.0], &z, &Vector3::new(1e6, 0.0, 0.0), &w).unwrap();
        assert!(far > 0.0 && far < 1e-3);
        let bad = RewardWeights { w_pose: 0.5, w_root: 0.6, ..w };
        assert!(imitation_reward(&[0.0], &[0.0], &z, &z, &bad).is_err());
    }

    #[test]
    fn normalized_reward_cases() {
        let t = RewardTrace { reward: vec![1.0, 0.5], max_reward: vec![1.0, 1.0] };
        assert_eq!(normalized_reward(&t).unwrap(), 0.75);
        assert!(normalized_reward(&RewardTrace::default()).is_err());
        let bad = RewardTrace { reward: vec![0.0], max_reward: vec![1.0] };
        assert!(normalized_reward(&bad).is_err());
    }

    #[test]
    fn segment_distance_cases() {
        let v = |x, y, z| Vector3::new(x, y, z);
        // skew perpendicular lines one unit apart
        assert!((segment_distance(&v(-1., 0., 0.), &v(1., 0., 0.), &v(0., -1., 1.), &v(0., 1., 1.)) - 1.0).abs() < 1e-12);
        // parallel, overlapping
        assert!((segment_distance(&v(0., 0., 0.), &v(2., 0., 0.), &v(1., 0.5, 0.), &v(3., 0.5, 0.)) - 0.5).abs() < 1e-12);
        // endpoint to endpoint
        assert!((segment_distance(&v(0., 0., 0.), &v(1., 0., 0.), &v(2., 0., 0.), &v(3., 0., 0.)) - 1.0).abs() < 1e-12);
        // degenerate point
        assert!((segment_distance(&v(0., 1., 0.), &v(0., 1., 0.), &v(-1., 0., 0.), &v(1., 0., 0.)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standing_pose_is_plausible() {
        let skel = synthetic::humanoid();
        let m = Motion::new(1.0 / 30.0, vec![synthetic::rest_pose(); 10]).unwrap();
        assert!(validate_plausibility(&skel, &m, &PlausibilityThresholds::default()).unwrap().is_empty());
    }

    #[test]
    fn sliding_foot_is_footskate() {
        let skel = synthetic::humanoid();
        let frames = (0..10)
            .map(|i| {
                let mut p = synthetic::rest_pose();
                p.root_translation.x = i as f64 / 30.0;
                p
            })
            .collect();
        let m = Motion::new(1.0 / 30.0, frames).unwrap();
        let d = validate_plausibility(&skel, &m, &PlausibilityThresholds::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::Footskate);
        assert_eq!((d[0].start_frame, d[0].end_frame), (1, 9));
        assert!((d[0].magnitude - 1.0).abs() < 1e-9);
    }

    #[test]
    fn crossed_legs_interpenetrate() {
        let skel = synthetic::humanoid();
        let mut p = synthetic::rest_pose();
        // swing both thighs inward about Z so the legs cross
        p.joint_angles[synthetic::LEFT_UP_LEG][0] = -0.35;
        p.joint_angles[synthetic::RIGHT_UP_LEG][0] = 0.35;
        let m = Motion::new(1.0 / 30.0, vec![p]).unwrap();
        let d = validate_plausibility(&skel, &m, &PlausibilityThresholds::default()).unwrap();
        assert!(d.iter().any(|d| d.kind == DiagnosticKind::Interpenetration), "{d:?}");
    }

    #[test]
    fn rest_goal_is_tracked_in_place() {
        let skel = synthetic::humanoid();
        let goal = Motion::new(1.0 / 30.0, vec![synthetic::rest_pose(); 20]).unwrap();
        let c = SimCharacter::for_skeleton(&skel, &ControllerParams::default()).unwrap();
        let out = track_motion(&c, &skel, &goal, &TrackingSettings::default(), &PlausibilityThresholds::default()).unwrap();
        for (a, b) in out.motion.frames.iter().zip(&goal.frames) {
            for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
                assert!((x - y).abs() < 1e-3);
            }
        }
        assert!(out.normalized_reward > 0.99);
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn tracking_is_deterministic() {
        let skel = synthetic::humanoid();
        let goal = synthetic::kick(30, 2);
        let c = SimCharacter::for_skeleton(&skel, &ControllerParams::default()).unwrap();
        let s = TrackingSettings::default();
        let th = PlausibilityThresholds::default();
        assert_eq!(track_motion(&c, &skel, &goal, &s, &th).unwrap(), track_motion(&c, &skel, &goal, &s, &th).unwrap());
        let wrong = TrackingSettings { substeps: 3, ..s };
        assert!(track_motion(&c, &skel, &goal, &wrong, &th).is_err());
        let m = TrackingSettings::default().matching(1.0 / 120.0);
        assert_eq!(m.substeps, 3);
        assert!((m.dt * 3.0 - 1.0 / 120.0).abs() < 1e-15);
    }
}
