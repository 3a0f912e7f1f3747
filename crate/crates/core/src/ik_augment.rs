//! IK-based motion synthesis.
//!
//! A keyframe is the frame where the chain's end effector is farthest from
//! the root. A new end-effector target for that frame is drawn from a
//! cylindrical sampling space around the root, the offset is spread over
//! the clip with weights that fall linearly to zero at the first and last
//! frames, and every frame is re-solved with IK.
//!
//! Cylindrical coordinates are taken about the vertical (Y) axis through the
//! root joint of the same frame: `r` is the horizontal radius, `h` the
//! height above the root and `theta = atan2(z, x)`.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::{Motion, Skeleton};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, ik_frame, FabrikSettings, IkChain};

/// Box of multipliers and offsets in cylindrical coordinates around the
/// keyframe position `(r, h, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSamplingSpace {
    /// Multipliers of the keyframe radius.
    pub radial_range: [f64; 2],
    /// Multipliers of the keyframe height.
    pub height_range: [f64; 2],
    /// Offsets in radians added to the keyframe azimuth.
    pub angle_range: [f64; 2],
}

impl TargetSamplingSpace {
    pub fn identity() -> Self {
        TargetSamplingSpace {
            radial_range: [1.0, 1.0],
            height_range: [1.0, 1.0],
            angle_range: [0.0, 0.0],
        }
    }

    pub fn punch() -> Self {
        TargetSamplingSpace {
            radial_range: [0.5, 2.0],
            height_range: [1.0, 1.0],
            angle_range: [-1.7, 1.7],
        }
    }

    pub fn kick() -> Self {
        TargetSamplingSpace {
            radial_range: [0.8, 1.2],
            height_range: [0.8, 1.2],
            angle_range: [-0.785, 0.785],
        }
    }

    pub fn walk() -> Self {
        TargetSamplingSpace {
            radial_range: [0.5, 2.0],
            height_range: [1.0, 1.0],
            angle_range: [-0.3, 0.3],
        }
    }

    /// Built-in spaces for the `punch`, `kick` and `walk` classes.
    pub fn presets() -> BTreeMap<String, TargetSamplingSpace> {
        [
            ("punch", Self::punch()),
            ("kick", Self::kick()),
            ("walk", Self::walk()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("radial_range", self.radial_range),
            ("height_range", self.height_range),
            ("angle_range", self.angle_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} [{lo}, {hi}] must be finite with lo <= hi"
                )));
            }
        }
        let [lo, hi] = self.angle_range;
        let pi = std::f64::consts::PI;
        if lo <= -pi || hi > pi {
            return Err(Error::InvalidArgument(format!(
                "angle_range [{lo}, {hi}] must lie in (-pi, pi]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylindrical {
    pub r: f64,
    pub h: f64,
    pub theta: f64,
}

impl Cylindrical {
    pub fn from_local(v: &Vector3<f64>) -> Self {
        Cylindrical {
            r: v.x.hypot(v.z),
            h: v.y,
            theta: v.z.atan2(v.x),
        }
    }

    pub fn to_local(self) -> Vector3<f64> {
        Vector3::new(self.r * self.theta.cos(), self.h, self.r * self.theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeInfo {
    pub t_key: usize,
    /// World position of the end effector at the keyframe.
    pub p_key: Vector3<f64>,
    /// World position of the root joint at the keyframe.
    pub root: Vector3<f64>,
    pub p_key_cylindrical: Cylindrical,
}

fn end_effector_and_root(skeleton: &Skeleton, motion: &Motion, chain: &IkChain) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let root = skeleton.root_index();
    motion
        .frames
        .iter()
        .map(|pose| {
            let fk = forward_kinematics(skeleton, pose)?;
            Ok((fk.positions[chain.end_effector()], fk.positions[root]))
        })
        .collect()
}

/// Finds the frame where the end effector is farthest from the root
/// (earliest frame on ties).
pub fn detect_keyframe(skeleton: &Skeleton, motion: &Motion, chain: &IkChain) -> Result<KeyframeInfo> {
    if motion.is_empty() {
        return Err(Error::Motion("motion has no frames".into()));
    }
    let samples = end_effector_and_root(skeleton, motion, chain)?;
    let mut best = 0;
    let mut best_dist = f64::NEG_INFINITY;
    for (t, (ee, root)) in samples.iter().enumerate() {
        let d = (ee - root).norm();
        if d > best_dist {
            best = t;
            best_dist = d;
        }
    }
    let (p_key, root) = samples[best];
    let cyl = Cylindrical::from_local(&(p_key - root));
    if cyl.r < 1e-9 {
        return Err(Error::DegenerateKeyframe { radius: cyl.r });
    }
    Ok(KeyframeInfo {
        t_key: best,
        p_key,
        root,
        p_key_cylindrical: cyl,
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a keyframe target uniformly from the box
/// `(u_r * r, u_h * h, theta + u_theta)`.
pub fn sample_target<R: Rng + ?Sized>(space: &TargetSamplingSpace, key: &KeyframeInfo, rng: &mut R) -> Vector3<f64> {
    let u_r = uniform(rng, space.radial_range);
    let u_h = uniform(rng, space.height_range);
    let u_theta = uniform(rng, space.angle_range);
    let local = key.p_key - key.root;
    // rotate the horizontal part by u_theta and scale it by u_r
    let (sin, cos) = u_theta.sin_cos();
    let moved = Vector3::new(
        u_r * (local.x * cos - local.z * sin),
        u_h * local.y,
        u_r * (local.x * sin + local.z * cos),
    );
    key.p_key + (moved - local)
}

/// Weight of the keyframe offset at frame `t` of a `frames`-long clip.
pub fn propagation_weight(t_key: usize, t: usize, frames: usize) -> f64 {
    let last = frames - 1;
    if t == t_key {
        1.0
    } else if t < t_key {
        t as f64 / t_key as f64
    } else {
        (last - t) as f64 / (last - t_key) as f64
    }
}

/// Per-frame targets `p_t + (p_sample - p_{t_key}) * w(t)`.
pub fn propagate_targets(trajectory: &[Vector3<f64>], t_key: usize, p_sample: Vector3<f64>) -> Result<Vec<Vector3<f64>>> {
    if t_key >= trajectory.len() {
        return Err(Error::InvalidArgument(format!(
            "keyframe {t_key} outside a {}-frame trajectory",
            trajectory.len()
        )));
    }
    let diff = p_sample - trajectory[t_key];
    Ok(trajectory
        .iter()
        .enumerate()
        .map(|(t, p)| {
            if t == t_key {
                p_sample
            } else {
                p + diff * propagation_weight(t_key, t, trajectory.len())
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkAugmentation {
    pub motion: Motion,
    pub keyframe: KeyframeInfo,
    pub sampled_target: Vector3<f64>,
    /// End-effector distance to the sampled target at the keyframe.
    pub keyframe_error: f64,
    /// Frames whose target lay beyond the chain's reach.
    pub unreachable_frames: Vec<usize>,
}

impl IkAugmentation {
    pub fn reachable(&self) -> bool {
        self.unreachable_frames.is_empty()
    }
}

/// Produces one augmented motion. Unreachable targets are solved at full
/// extension and listed in `unreachable_frames`.
pub fn synthesize_ik_motion<R: Rng + ?Sized>(
    skeleton: &Skeleton,
    motion: &Motion,
    chain: &IkChain,
    space: &TargetSamplingSpace,
    settings: FabrikSettings,
    rng: &mut R,
) -> Result<IkAugmentation> {
    space.validate()?;
    motion.check_skeleton(skeleton)?;
    let keyframe = detect_keyframe(skeleton, motion, chain)?;
    let sampled_target = sample_target(space, &keyframe, rng);
    let trajectory: Vec<Vector3<f64>> = end_effector_and_root(skeleton, motion, chain)?
        .into_iter()
        .map(|(ee, _)| ee)
        .collect();
    let targets = propagate_targets(&trajectory, keyframe.t_key, sampled_target)?;

    let mut frames = Vec::with_capacity(motion.len());
    let mut unreachable_frames = Vec::new();
    let mut keyframe_error = 0.0;
    for (t, (pose, target)) in motion.frames.iter().zip(&targets).enumerate() {
        let solution = ik_frame(skeleton, pose, chain, *target, settings)?;
        if !solution.reachable && solution.error >= settings.tolerance {
            unreachable_frames.push(t);
        }
        if t == keyframe.t_key {
            keyframe_error = solution.error;
        }
        frames.push(solution.pose);
    }
    Ok(IkAugmentation {
        motion: Motion {
            frame_time: motion.frame_time,
            frames,
            action_label: motion.action_label.clone(),
        },
        keyframe,
        sampled_target,
        keyframe_error,
        unreachable_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::Pose;
    use crate::synthetic::{self, LEFT_FOOT, LEFT_UP_LEG};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leg(skel: &Skeleton) -> IkChain {
        IkChain::from_names(skel, "LeftUpLeg", "LeftFoot").unwrap()
    }

    #[test]
    fn presets_match_published_ranges() {
        let p = TargetSamplingSpace::presets();
        assert_eq!(p["kick"].radial_range, [0.8, 1.2]);
        assert_eq!(p["kick"].height_range, [0.8, 1.2]);
        assert_eq!(p["kick"].angle_range, [-0.785, 0.785]);
        assert_eq!(p["punch"].angle_range, [-1.7, 1.7]);
        assert_eq!(p["walk"].radial_range, [0.5, 2.0]);
        for space in p.values() {
            space.validate().unwrap();
        }
        let bad = TargetSamplingSpace {
            radial_range: [2.0, 1.0],
            ..TargetSamplingSpace::identity()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn keyframe_at_kick_apex() {
        let skel = synthetic::humanoid();
        let m = synthetic::kick(40, 0);
        let key = detect_keyframe(&skel, &m, &leg(&skel)).unwrap();
        let dists: Vec<f64> = m
            .frames
            .iter()
            .map(|p| {
                let fk = forward_kinematics(&skel, p).unwrap();
                (fk.positions[LEFT_FOOT] - fk.positions[0]).norm()
            })
            .collect();
        let apex = (0..dists.len()).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
        assert_eq!(key.t_key, apex);
        assert!(key.t_key > 5 && key.t_key < 34);
    }

    #[test]
    fn keyframe_ties_pick_first_frame() {
        let skel = synthetic::humanoid();
        let mut pose = synthetic::rest_pose();
        pose.joint_angles[LEFT_UP_LEG][1] = -0.5;
        let m = Motion::new(1.0 / 30.0, vec![pose; 5]).unwrap();
        assert_eq!(detect_keyframe(&skel, &m, &leg(&skel)).unwrap().t_key, 0);
    }

    #[test]
    fn keyframe_brute_force_argmax() {
        // two unit bones from the root; bending the middle joint by phi puts
        // the tip at distance 2*cos(phi/2)
        use crate::bvh::{Channel, Joint};
        let rot = vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
        let mut root_ch = vec![Channel::Xposition, Channel::Yposition, Channel::Zposition];
        root_ch.extend(&rot);
        let bone = |name: &str, parent| Joint {
            name: name.into(),
            parent: Some(parent),
            offset: Vector3::new(1.0, 0.0, 0.0),
            channels: rot.clone(),
            end_site: None,
        };
        let skel = Skeleton::new(vec![
            Joint { name: "Root".into(), parent: None, offset: Vector3::zeros(), channels: root_ch, end_site: None },
            bone("Mid", 0),
            bone("Tip", 1),
        ])
        .unwrap();
        let chain = IkChain::new(&skel, vec![0, 1, 2]).unwrap();
        let dists = [1.0f64, 2.0, 1.5];
        let frames: Vec<Pose> = dists
            .iter()
            .map(|d| {
                let mut p = Pose::zeros(3);
                p.joint_angles[1][0] = 2.0 * (d / 2.0).acos();
                p
            })
            .collect();
        let m = Motion::new(0.1, frames).unwrap();
        let oracle = (0..dists.len()).fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
        let key = detect_keyframe(&skel, &m, &chain).unwrap();
        assert_eq!(key.t_key, oracle);
        assert_eq!(key.t_key, 1);
        assert!((key.p_key_cylindrical.r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_keyframe_is_reported() {
        use crate::bvh::{Channel, Joint};
        let rot = vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
        let skel = Skeleton::new(vec![
            Joint { name: "Root".into(), parent: None, offset: Vector3::zeros(), channels: rot.clone(), end_site: None },
            Joint { name: "Up".into(), parent: Some(0), offset: Vector3::new(0.0, 1.0, 0.0), channels: rot, end_site: None },
        ])
        .unwrap();
        let chain = IkChain::new(&skel, vec![0, 1]).unwrap();
        let m = Motion::new(0.1, vec![Pose::zeros(2); 3]).unwrap();
        assert!(matches!(detect_keyframe(&skel, &m, &chain), Err(Error::DegenerateKeyframe { .. })));
    }

    #[test]
    fn identity_space_returns_keyframe_position() {
        let skel = synthetic::humanoid();
        let m = synthetic::kick(30, 1);
        let key = detect_keyframe(&skel, &m, &leg(&skel)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_target(&TargetSamplingSpace::identity(), &key, &mut rng);
        assert_eq!(p, key.p_key);
    }

    #[test]
    fn kick_samples_stay_inside_space() {
        let skel = synthetic::humanoid();
        let m = synthetic::kick(30, 2);
        let key = detect_keyframe(&skel, &m, &leg(&skel)).unwrap();
        let space = TargetSamplingSpace::kick();
        let c = key.p_key_cylindrical;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = sample_target(&space, &key, &mut rng);
            let s = Cylindrical::from_local(&(p - key.root));
            assert!(s.r >= 0.8 * c.r - 1e-12 && s.r <= 1.2 * c.r + 1e-12);
            let (lo, hi) = (0.8 * c.h, 1.2 * c.h);
            assert!(s.h >= lo.min(hi) - 1e-12 && s.h <= lo.max(hi) + 1e-12);
            let dtheta = crate::bvh::wrap_angle(s.theta - c.theta);
            assert!(dtheta.abs() <= 0.785 + 1e-12);
        }
    }

    #[test]
    fn propagation_weights() {
        assert_eq!(propagation_weight(10, 10, 21), 1.0);
        assert_eq!(propagation_weight(10, 0, 21), 0.0);
        assert_eq!(propagation_weight(10, 20, 21), 0.0);
        assert_eq!(propagation_weight(10, 5, 21), 0.5);
        // keyframe at either end leaves that side empty
        assert_eq!(propagation_weight(0, 0, 5), 1.0);
        assert_eq!(propagation_weight(0, 4, 5), 0.0);
        assert_eq!(propagation_weight(4, 4, 5), 1.0);
        assert_eq!(propagation_weight(4, 0, 5), 0.0);
        assert_eq!(propagation_weight(0, 0, 1), 1.0);
    }

    #[test]
    fn propagate_midpoint() {
        let traj = vec![Vector3::zeros(); 21];
        let targets = propagate_targets(&traj, 10, Vector3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!(targets[5], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(targets[10], Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(targets[0], Vector3::zeros());
        assert_eq!(targets[20], Vector3::zeros());
        assert!(propagate_targets(&traj, 21, Vector3::zeros()).is_err());
    }

    #[test]
    fn identity_space_reproduces_motion() {
        let skel = synthetic::humanoid();
        let m = synthetic::kick(30, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = synthesize_ik_motion(&skel, &m, &leg(&skel), &TargetSamplingSpace::identity(), FabrikSettings::default(), &mut rng).unwrap();
        for (a, b) in out.motion.frames.iter().zip(&m.frames) {
            let fa = forward_kinematics(&skel, a).unwrap();
            let fb = forward_kinematics(&skel, b).unwrap();
            for (x, y) in fa.positions.iter().zip(&fb.positions) {
                assert!((x - y).norm() < 1e-4);
            }
        }
    }

    #[test]
    fn kick_synthesis_hits_target_and_keeps_endpoints() {
        let skel = synthetic::humanoid();
        let chain = leg(&skel);
        let m = synthetic::kick(40, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = synthesize_ik_motion(&skel, &m, &chain, &TargetSamplingSpace::kick(), FabrikSettings::default(), &mut rng).unwrap();
        assert!(out.reachable());
        let key = forward_kinematics(&skel, &out.motion.frames[out.keyframe.t_key]).unwrap();
        assert!((key.positions[LEFT_FOOT] - out.sampled_target).norm() < 1e-3);
        for t in [0, m.len() - 1] {
            let a = forward_kinematics(&skel, &out.motion.frames[t]).unwrap();
            let b = forward_kinematics(&skel, &m.frames[t]).unwrap();
            assert!((a.positions[LEFT_FOOT] - b.positions[LEFT_FOOT]).norm() < 1e-4);
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_targets() {
        let skel = synthetic::humanoid();
        let chain = leg(&skel);
        let m = synthetic::kick(30, 0);
        let feet: Vec<Vector3<f64>> = (0..10)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = synthesize_ik_motion(&skel, &m, &chain, &TargetSamplingSpace::kick(), FabrikSettings::default(), &mut rng).unwrap();
                forward_kinematics(&skel, &out.motion.frames[out.keyframe.t_key]).unwrap().positions[LEFT_FOOT]
            })
            .collect();
        for i in 0..feet.len() {
            for j in i + 1..feet.len() {
                assert!((feet[i] - feet[j]).norm() > 0.0);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let skel = synthetic::humanoid();
        let chain = leg(&skel);
        let m = synthetic::walk(30, 0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            synthesize_ik_motion(&skel, &m, &chain, &TargetSamplingSpace::walk(), FabrikSettings::default(), &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
