//! Forward kinematics, FABRIK and the per-frame IK edit `x' = IK(x, p)`.
//!
//! Each joint's local rotation is the product of its rotation channels in
//! declaration order, `R = R(c0) * R(c1) * R(c2)`, and a child sits at
//! `parent_pos + parent_world_rot * child_offset`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::bvh::{Joint, Pose, Skeleton};
use crate::error::{Error, Result};

/// World-space joint positions, one per skeleton joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPositions {
    pub positions: Vec<Vector3<f64>>,
}

impl JointPositions {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn restrict(&self, chain: &IkChain) -> Vec<Vector3<f64>> {
        chain
            .joint_indices
            .iter()
            .map(|&j| self.positions[j])
            .collect()
    }
}

/// World positions and orientations of every joint.
#[derive(Debug, Clone)]
pub struct WorldTransforms {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Rotation3<f64>>,
}

pub fn axis_rotation(axis: usize, angle: f64) -> Rotation3<f64> {
    let unit = match axis {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        _ => Vector3::z_axis(),
    };
    Rotation3::from_axis_angle(&unit, angle)
}

pub fn local_rotation(joint: &Joint, angles: &[f64; 3]) -> Rotation3<f64> {
    let order = joint.rotation_order();
    axis_rotation(order[0], angles[0])
        * axis_rotation(order[1], angles[1])
        * axis_rotation(order[2], angles[2])
}

fn is_cyclic(order: [usize; 3]) -> bool {
    matches!(order, [0, 1, 2] | [1, 2, 0] | [2, 0, 1])
}

/// Moves `angle` by whole turns to the representative nearest `reference`.
fn unwrap_near(angle: f64, reference: f64) -> f64 {
    let turns = ((reference - angle) / std::f64::consts::TAU).round();
    angle + turns * std::f64::consts::TAU
}

/// Decomposes `rotation` into angles `(a, b, c)` with
/// `rotation = R(order[0], a) * R(order[1], b) * R(order[2], c)`.
///
/// Of the two equivalent decompositions, the one closest to `reference`
/// (after unwrapping each angle by whole turns) is returned. At gimbal lock
/// the last angle is pinned to its reference value.
pub fn euler_from_rotation(rotation: &Rotation3<f64>, order: [usize; 3], reference: &[f64; 3]) -> [f64; 3] {
    let m: &Matrix3<f64> = rotation.matrix();
    let [i, j, k] = order;
    let s = if is_cyclic(order) { 1.0 } else { -1.0 };
    let sin_b = (s * m[(i, k)]).clamp(-1.0, 1.0);
    let b = sin_b.asin();
    let candidates = if b.cos() > 1e-9 {
        let a = (-s * m[(j, k)]).atan2(m[(k, k)]);
        let c = (-s * m[(i, j)]).atan2(m[(i, i)]);
        vec![
            [a, b, c],
            [a + std::f64::consts::PI, std::f64::consts::PI - b, c + std::f64::consts::PI],
        ]
    } else {
        let c = reference[2];
        let rest = rotation * axis_rotation(k, c).inverse() * axis_rotation(j, b).inverse();
        let r = rest.matrix();
        let a = (s * r[(k, j)]).atan2(r[(j, j)]);
        vec![[a, b, c]]
    };
    candidates
        .into_iter()
        .map(|cand| {
            [
                unwrap_near(cand[0], reference[0]),
                unwrap_near(cand[1], reference[1]),
                unwrap_near(cand[2], reference[2]),
            ]
        })
        .min_by(|x, y| {
            let dx: f64 = (0..3).map(|n| (x[n] - reference[n]).powi(2)).sum();
            let dy: f64 = (0..3).map(|n| (y[n] - reference[n]).powi(2)).sum();
            dx.total_cmp(&dy)
        })
        .expect("at least one candidate")
}

fn check_pose(skeleton: &Skeleton, pose: &Pose) -> Result<()> {
    if pose.joint_count() != skeleton.len() {
        return Err(Error::Dimension {
            expected: skeleton.pose_dim(),
            found: pose.dim(),
        });
    }
    Ok(())
}

pub fn world_transforms(skeleton: &Skeleton, pose: &Pose) -> Result<WorldTransforms> {
    check_pose(skeleton, pose)?;
    let n = skeleton.len();
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Rotation3<f64>> = Vec::with_capacity(n);
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let local = local_rotation(joint, &pose.joint_angles[j]);
        match joint.parent {
            None => {
                positions.push(pose.root_translation + joint.offset);
                rotations.push(local);
            }
            Some(p) => {
                positions.push(positions[p] + rotations[p] * joint.offset);
                rotations.push(rotations[p] * local);
            }
        }
    }
    Ok(WorldTransforms {
        positions,
        rotations,
    })
}

pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<JointPositions> {
    Ok(JointPositions {
        positions: world_transforms(skeleton, pose)?.positions,
    })
}

/// A parent-to-child joint path from a fixed base to an end effector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkChain {
    pub joint_indices: Vec<usize>,
    pub bone_lengths: Vec<f64>,
}

impl IkChain {
    pub fn new(skeleton: &Skeleton, joint_indices: Vec<usize>) -> Result<Self> {
        if joint_indices.len() < 2 {
            return Err(Error::Kinematics("a chain needs at least two joints".into()));
        }
        let mut bone_lengths = Vec::with_capacity(joint_indices.len() - 1);
        for pair in joint_indices.windows(2) {
            if pair[1] >= skeleton.len() || skeleton.joint(pair[1]).parent != Some(pair[0]) {
                return Err(Error::Kinematics(format!(
                    "joint {} is not a child of joint {}",
                    pair[1], pair[0]
                )));
            }
            let len = skeleton.joint(pair[1]).offset.norm();
            if len <= 0.0 {
                return Err(Error::Kinematics(format!(
                    "bone ending at '{}' has zero length",
                    skeleton.joint(pair[1]).name
                )));
            }
            bone_lengths.push(len);
        }
        Ok(IkChain {
            joint_indices,
            bone_lengths,
        })
    }

    /// Builds the chain by walking parents from `end` up to `base`.
    pub fn from_names(skeleton: &Skeleton, base: &str, end: &str) -> Result<Self> {
        let lookup = |name: &str| {
            skeleton
                .joint_index(name)
                .ok_or_else(|| Error::Kinematics(format!("no joint named '{name}'")))
        };
        let base_index = lookup(base)?;
        let mut cursor = lookup(end)?;
        let mut path = vec![cursor];
        while cursor != base_index {
            cursor = skeleton.joint(cursor).parent.ok_or_else(|| {
                Error::Kinematics(format!("'{base}' is not an ancestor of '{end}'"))
            })?;
            path.push(cursor);
        }
        path.reverse();
        IkChain::new(skeleton, path)
    }

    pub fn len(&self) -> usize {
        self.joint_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_indices.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.bone_lengths.iter().sum()
    }

    pub fn end_effector(&self) -> usize {
        *self.joint_indices.last().expect("chain is non-empty")
    }

    pub fn base(&self) -> usize {
        self.joint_indices[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FabrikSettings {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FabrikSettings {
    fn default() -> Self {
        FabrikSettings {
            tolerance: 1e-4,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabrikResult {
    pub positions: Vec<Vector3<f64>>,
    pub iterations: usize,
    /// Final end-effector to target distance.
    pub error: f64,
    pub reachable: bool,
    /// End-effector error before the first and after every iteration.
    pub error_trace: Vec<f64>,
}

/// Places `len` units from `from` toward `to`, keeping `fallback` as the
/// direction when the points coincide.
fn reach(from: Vector3<f64>, to: Vector3<f64>, len: f64, fallback: Vector3<f64>) -> Vector3<f64> {
    let delta = to - from;
    let norm = delta.norm();
    let dir = if norm > 1e-300 { delta / norm } else { fallback };
    from + dir * len
}

/// Middle joint of a two-bone limb from `a` with its end at `target`: the
/// point of the solution circle nearest `hint`. `None` when the target lies
/// outside the limb's annulus.
fn two_bone(
    a: Vector3<f64>,
    hint: Vector3<f64>,
    target: Vector3<f64>,
    l1: f64,
    l2: f64,
    fallback: Vector3<f64>,
) -> Option<Vector3<f64>> {
    let delta = target - a;
    let d = delta.norm();
    if d < 1e-12 || d > l1 + l2 || d < (l1 - l2).abs() {
        return None;
    }
    let u = delta / d;
    let along = (d * d + l1 * l1 - l2 * l2) / (2.0 * d);
    let radius = (l1 * l1 - along * along).max(0.0).sqrt();
    let perp = |v: Vector3<f64>| v - u * u.dot(&v);
    let mut side = perp(hint - a);
    if side.norm() < 1e-9 * l1 {
        side = perp(fallback);
    }
    if side.norm() < 1e-9 {
        let axis = u.iamin();
        side = perp(Vector3::ith(axis, 1.0));
    }
    Some(a + u * along + side.normalize() * radius)
}

/// FABRIK from `initial`. The forward pass places the last two bones in
/// closed form whenever the target lies within their reach, which removes
/// the slow convergence of plain FABRIK near full extension or folding.
pub fn fabrik_solve(
    chain: &IkChain,
    initial: &[Vector3<f64>],
    target: Vector3<f64>,
    settings: FabrikSettings,
) -> Result<FabrikResult> {
    if initial.len() != chain.len() {
        return Err(Error::Dimension {
            expected: chain.len(),
            found: initial.len(),
        });
    }
    if !target.iter().all(|v| v.is_finite()) {
        return Err(Error::Kinematics("target is not finite".into()));
    }
    let mut fallback = Vec::with_capacity(chain.bone_lengths.len());
    for (k, &len) in chain.bone_lengths.iter().enumerate() {
        let bone = initial[k + 1] - initial[k];
        if (bone.norm() - len).abs() > 1e-6 {
            return Err(Error::Kinematics(format!(
                "bone {k} has length {} but the chain expects {len}",
                bone.norm()
            )));
        }
        fallback.push(bone / bone.norm());
    }

    let last = chain.len() - 1;
    let base = initial[0];
    let mut p = initial.to_vec();
    let mut error = (p[last] - target).norm();
    let mut trace = vec![error];
    let reachable = (target - base).norm() < chain.total_length();
    if error < settings.tolerance {
        return Ok(FabrikResult {
            positions: p,
            iterations: 0,
            error,
            reachable,
            error_trace: trace,
        });
    }

    if !reachable {
        for k in 0..last {
            p[k + 1] = reach(p[k], target, chain.bone_lengths[k], fallback[k]);
        }
        error = (p[last] - target).norm();
        trace.push(error);
        return Ok(FabrikResult {
            positions: p,
            iterations: 1,
            error,
            reachable,
            error_trace: trace,
        });
    }

    let mut iterations = 0;
    while iterations < settings.max_iters && error >= settings.tolerance {
        p[last] = target;
        for k in (0..last).rev() {
            p[k] = reach(p[k + 1], p[k], chain.bone_lengths[k], -fallback[k]);
        }
        p[0] = base;
        for k in 0..last {
            if k + 2 == last {
                let (l1, l2) = (chain.bone_lengths[k], chain.bone_lengths[k + 1]);
                if let Some(mid) = two_bone(p[k], p[k + 1], target, l1, l2, fallback[k]) {
                    p[k + 1] = mid;
                    p[last] = target;
                    break;
                }
            }
            p[k + 1] = reach(p[k], p[k + 1], chain.bone_lengths[k], fallback[k]);
        }
        iterations += 1;
        error = (p[last] - target).norm();
        trace.push(error);
    }
    Ok(FabrikResult {
        positions: p,
        iterations,
        error,
        reachable,
        error_trace: trace,
    })
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
/// Opposite vectors turn half a revolution about `tie_axis` projected
/// perpendicular to `from` (or about `fallback_axis` if that projection
/// vanishes).
fn minimal_rotation(
    from: &Vector3<f64>,
    to: &Vector3<f64>,
    tie_axis: &Vector3<f64>,
    fallback_axis: &Vector3<f64>,
) -> Rotation3<f64> {
    let cross = from.cross(to);
    let sin = cross.norm();
    let cos = from.dot(to);
    if sin > 1e-12 {
        return Rotation3::from_axis_angle(&Unit::new_normalize(cross), sin.atan2(cos));
    }
    if cos > 0.0 {
        return Rotation3::identity();
    }
    let mut axis = tie_axis - from * from.dot(tie_axis);
    if axis.norm() < 1e-6 {
        axis = fallback_axis - from * from.dot(fallback_axis);
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), std::f64::consts::PI)
}

/// Converts solved chain positions back into joint angles.
///
/// Only the rotations of chain joints that drive a chain bone change; every
/// other angle, and the root translation, is copied from `reference`. Each
/// bone is turned by the minimal rotation from its reference direction, and
/// a bone pointing exactly backwards turns about the joint's local X axis.
/// When the next bone is bent, the turn also twists about the bone so the
/// bend plane matches the solution; a hinge-like child then keeps bending
/// about its own axis.
pub fn positions_to_pose(
    skeleton: &Skeleton,
    chain: &IkChain,
    solved: &[Vector3<f64>],
    reference: &Pose,
) -> Result<Pose> {
    if solved.len() != chain.len() {
        return Err(Error::Dimension {
            expected: chain.len(),
            found: solved.len(),
        });
    }
    let transforms = world_transforms(skeleton, reference)?;
    let mut pose = reference.clone();
    let base = chain.base();
    let mut parent_rot = match skeleton.joint(base).parent {
        Some(p) => transforms.rotations[p],
        None => Rotation3::identity(),
    };
    for k in 0..chain.len() - 1 {
        let j = chain.joint_indices[k];
        let joint = skeleton.joint(j);
        let child = chain.joint_indices[k + 1];
        let child_offset = skeleton.joint(child).offset;
        let world = parent_rot * local_rotation(joint, &pose.joint_angles[j]);
        let current = world * child_offset;
        let desired = solved[k + 1] - solved[k];
        if current.norm() < 1e-12 || desired.norm() < 1e-12 {
            return Err(Error::Kinematics(format!(
                "bone below '{}' has no direction",
                joint.name
            )));
        }
        let from = current.normalize();
        let to = desired.normalize();
        let mut turn = if (from - to).norm() < 1e-12 {
            Rotation3::identity()
        } else {
            minimal_rotation(&from, &to, &(world * Vector3::x()), &(world * Vector3::y()))
        };
        if k + 2 < chain.len() {
            let next_offset = skeleton.joint(chain.joint_indices[k + 2]).offset;
            let next = turn * world * local_rotation(skeleton.joint(child), &pose.joint_angles[child]) * next_offset;
            let next_desired = solved[k + 2] - solved[k + 1];
            let a = next - to * to.dot(&next);
            let b = next_desired - to * to.dot(&next_desired);
            if a.norm() > 1e-6 * next.norm() && b.norm() > 1e-6 * next_desired.norm() {
                let angle = a.cross(&b).dot(&to).atan2(a.dot(&b));
                turn = Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(to), angle) * turn;
            }
        }
        if turn.angle() == 0.0 {
            parent_rot = world;
            continue;
        }
        let local = parent_rot.inverse() * turn * world;
        let angles = euler_from_rotation(&local, joint.rotation_order(), &pose.joint_angles[j]);
        pose.joint_angles[j] = angles;
        parent_rot *= local_rotation(joint, &angles);
    }
    Ok(pose)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub pose: Pose,
    pub reachable: bool,
    /// Distance between the edited end effector and the target.
    pub error: f64,
    pub iterations: usize,
}

/// Edits `pose` so the chain's end effector reaches `target`.
pub fn ik_frame(
    skeleton: &Skeleton,
    pose: &Pose,
    chain: &IkChain,
    target: Vector3<f64>,
    settings: FabrikSettings,
) -> Result<IkSolution> {
    let fk = forward_kinematics(skeleton, pose)?;
    let solved = fabrik_solve(chain, &fk.restrict(chain), target, settings)?;
    if solved.iterations == 0 {
        return Ok(IkSolution {
            pose: pose.clone(),
            reachable: solved.reachable,
            error: solved.error,
            iterations: 0,
        });
    }
    let new_pose = positions_to_pose(skeleton, chain, &solved.positions, pose)?;
    let end = forward_kinematics(skeleton, &new_pose)?.positions[chain.end_effector()];
    Ok(IkSolution {
        pose: new_pose,
        reachable: solved.reachable,
        error: (end - target).norm(),
        iterations: solved.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::Channel;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn joint(name: &str, parent: Option<usize>, offset: [f64; 3], channels: &[Channel]) -> Joint {
        Joint {
            name: name.into(),
            parent,
            offset: Vector3::from(offset),
            channels: channels.to_vec(),
            end_site: None,
        }
    }

    const ROOT: [Channel; 6] = [
        Channel::Xposition,
        Channel::Yposition,
        Channel::Zposition,
        Channel::Zrotation,
        Channel::Xrotation,
        Channel::Yrotation,
    ];
    const ZXY: [Channel; 3] = [Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];

    /// Planar arm along +X: shoulder at origin, elbow at 1, hand at 2.
    fn planar_arm() -> Skeleton {
        Skeleton::new(vec![
            joint("Base", None, [0.0, 0.0, 0.0], &ROOT),
            joint("Elbow", Some(0), [1.0, 0.0, 0.0], &ZXY),
            joint("Hand", Some(1), [1.0, 0.0, 0.0], &ZXY),
        ])
        .unwrap()
    }

    #[test]
    fn zero_pose_sums_offsets() {
        let skel = planar_arm();
        let fk = forward_kinematics(&skel, &Pose::zeros(3)).unwrap();
        assert_eq!(fk.positions[2], Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn planar_two_link_fk() {
        let skel = planar_arm();
        let mut pose = Pose::zeros(3);
        pose.joint_angles[0][0] = FRAC_PI_2;
        let fk = forward_kinematics(&skel, &pose).unwrap();
        assert!((fk.positions[2] - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-9);
        pose.joint_angles[1][0] = -FRAC_PI_2;
        let fk = forward_kinematics(&skel, &pose).unwrap();
        assert!((fk.positions[2] - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn translation_shifts_everything() {
        let skel = planar_arm();
        let mut pose = Pose::zeros(3);
        let base = forward_kinematics(&skel, &pose).unwrap();
        pose.root_translation = Vector3::new(1.0, 2.0, 3.0);
        let moved = forward_kinematics(&skel, &pose).unwrap();
        for (a, b) in base.positions.iter().zip(&moved.positions) {
            assert_eq!(b - a, Vector3::new(1.0, 2.0, 3.0));
        }
    }

    #[test]
    fn euler_round_trip_all_orders() {
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let angles = [0.3, -0.7, 1.9];
        for order in orders {
            let r = axis_rotation(order[0], angles[0])
                * axis_rotation(order[1], angles[1])
                * axis_rotation(order[2], angles[2]);
            let got = euler_from_rotation(&r, order, &angles);
            for k in 0..3 {
                assert!((got[k] - angles[k]).abs() < 1e-12, "{order:?}: {got:?}");
            }
            // from a far reference, the matrix still matches
            let got = euler_from_rotation(&r, order, &[0.0; 3]);
            let back = axis_rotation(order[0], got[0])
                * axis_rotation(order[1], got[1])
                * axis_rotation(order[2], got[2]);
            assert!((back.matrix() - r.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn euler_gimbal_lock_keeps_reference_third_angle() {
        let r = axis_rotation(2, 0.4) * axis_rotation(0, FRAC_PI_2) * axis_rotation(1, 0.1);
        let got = euler_from_rotation(&r, [2, 0, 1], &[0.0, FRAC_PI_2, 0.1]);
        let back = axis_rotation(2, got[0]) * axis_rotation(0, got[1]) * axis_rotation(1, got[2]);
        assert!((back.matrix() - r.matrix()).amax() < 1e-9);
        assert_eq!(got[2], 0.1);
    }

    #[test]
    fn fabrik_already_solved() {
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let init = forward_kinematics(&skel, &Pose::zeros(3)).unwrap().restrict(&chain);
        let r = fabrik_solve(&chain, &init, init[2], FabrikSettings::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.positions, init);
    }

    #[test]
    fn fabrik_reachable_two_link() {
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let init = forward_kinematics(&skel, &Pose::zeros(3)).unwrap().restrict(&chain);
        // bend the initial guess slightly so the pole is defined
        let init = vec![init[0], Vector3::new(0.8, 0.6, 0.0), Vector3::new(1.8, 0.6, 0.0)];
        let target = Vector3::new(1.5 * (0.3f64).cos(), 1.5 * (0.3f64).sin(), 0.0);
        let r = fabrik_solve(&chain, &init, target, FabrikSettings::default()).unwrap();
        assert!(r.reachable);
        assert!(r.error < 1e-4);
        assert_eq!(r.positions[0], init[0]);
        for k in 0..2 {
            assert!(((r.positions[k + 1] - r.positions[k]).norm() - 1.0).abs() < 1e-9);
        }
        // analytic two-link elbow: |elbow| = 1 and |target - elbow| = 1
        let elbow = r.positions[1];
        assert!((elbow.norm() - 1.0).abs() < 1e-9);
        assert!(((target - elbow).norm() - 1.0).abs() < 1e-4);
        for w in r.error_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn fabrik_unreachable_straightens() {
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let init = forward_kinematics(&skel, &Pose::zeros(3)).unwrap().restrict(&chain);
        let target = Vector3::new(0.0, 3.0, 0.0);
        let r = fabrik_solve(&chain, &init, target, FabrikSettings::default()).unwrap();
        assert!(!r.reachable);
        assert!((r.error - 1.0).abs() < 1e-9);
        assert!((r.positions[2] - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn fabrik_rejects_bad_inputs() {
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let bad = vec![Vector3::zeros(), Vector3::x(), Vector3::new(3.0, 0.0, 0.0)];
        assert!(fabrik_solve(&chain, &bad, Vector3::y(), FabrikSettings::default()).is_err());
        let good = forward_kinematics(&skel, &Pose::zeros(3)).unwrap().restrict(&chain);
        let nan = Vector3::new(f64::NAN, 0.0, 0.0);
        assert!(fabrik_solve(&chain, &good, nan, FabrikSettings::default()).is_err());
    }

    #[test]
    fn chain_from_names() {
        let skel = planar_arm();
        let chain = IkChain::from_names(&skel, "Base", "Hand").unwrap();
        assert_eq!(chain.joint_indices, vec![0, 1, 2]);
        assert_eq!(chain.bone_lengths, vec![1.0, 1.0]);
        assert!(IkChain::from_names(&skel, "Hand", "Base").is_err());
        assert!(IkChain::new(&skel, vec![0, 2]).is_err());
    }

    #[test]
    fn positions_to_pose_fixed_point() {
        let skel = planar_arm();
        let mut pose = Pose::zeros(3);
        pose.joint_angles[0] = [0.3, -0.2, 0.5];
        pose.joint_angles[1] = [0.7, 0.1, -0.4];
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let solved = forward_kinematics(&skel, &pose).unwrap().restrict(&chain);
        let back = positions_to_pose(&skel, &chain, &solved, &pose).unwrap();
        for (a, b) in back.to_vec().iter().zip(pose.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn positions_to_pose_planar_elbow_up() {
        // target (1.5, 0, 0) with elbow up: shoulder angle acos(0.75), elbow -2*acos(0.75)
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let shoulder = (0.75f64).acos();
        let solved = vec![
            Vector3::zeros(),
            Vector3::new(shoulder.cos(), shoulder.sin(), 0.0),
            Vector3::new(1.5, 0.0, 0.0),
        ];
        let pose = positions_to_pose(&skel, &chain, &solved, &Pose::zeros(3)).unwrap();
        assert!((pose.joint_angles[0][0] - shoulder).abs() < 1e-6);
        assert!((pose.joint_angles[1][0] + 2.0 * shoulder).abs() < 1e-6);
        for k in 1..3 {
            assert!(pose.joint_angles[0][k].abs() < 1e-9);
            assert!(pose.joint_angles[1][k].abs() < 1e-9);
        }
    }

    #[test]
    fn antipodal_bone_turns_about_local_x() {
        // single bone along +Y flipped to -Y: a half turn about local X
        let skel = Skeleton::new(vec![
            joint("Base", None, [0.0, 0.0, 0.0], &ROOT),
            joint("Tip", Some(0), [0.0, 1.0, 0.0], &ZXY),
        ])
        .unwrap();
        let chain = IkChain::new(&skel, vec![0, 1]).unwrap();
        let solved = vec![Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)];
        let pose = positions_to_pose(&skel, &chain, &solved, &Pose::zeros(2)).unwrap();
        let rot = local_rotation(skel.joint(0), &pose.joint_angles[0]);
        let expected = axis_rotation(0, PI);
        assert!((rot.matrix() - expected.matrix()).amax() < 1e-9);
        let fk = forward_kinematics(&skel, &pose).unwrap();
        assert!((fk.positions[1] - solved[1]).norm() < 1e-9);
    }

    #[test]
    fn ik_frame_cases() {
        let skel = planar_arm();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let mut pose = Pose::zeros(3);
        pose.joint_angles[1][0] = 0.5;
        let fk = forward_kinematics(&skel, &pose).unwrap();

        let same = ik_frame(&skel, &pose, &chain, fk.positions[2], FabrikSettings::default()).unwrap();
        assert_eq!(same.pose, pose);

        let target = fk.positions[2] + Vector3::new(-0.05, 0.0, 0.03);
        let moved = ik_frame(&skel, &pose, &chain, target, FabrikSettings::default()).unwrap();
        assert!(moved.error < 1e-4);
        assert_eq!(moved.pose.joint_angles[2], pose.joint_angles[2]);
        assert_eq!(moved.pose.root_translation, pose.root_translation);

        let twice = ik_frame(&skel, &moved.pose, &chain, target, FabrikSettings::default()).unwrap();
        for (a, b) in twice.pose.to_vec().iter().zip(moved.pose.to_vec()) {
            assert!((a - b).abs() < 1e-4);
        }

        let far = ik_frame(&skel, &pose, &chain, Vector3::new(0.0, 0.0, 5.0), FabrikSettings::default()).unwrap();
        assert!(!far.reachable);
        let end = forward_kinematics(&skel, &far.pose).unwrap().positions[2];
        assert!((end - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-9);
    }
}
