//! Small procedurally generated humanoid and action clips.
//!
//! These stand in for a mocap corpus in examples and tests: a 13-joint
//! Y-up skeleton in meters and 30 Hz kick, punch and walk clips.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde_json::json;

use crate::bvh::{write_bvh_file, Channel, Joint, Motion, Pose, Skeleton};
use crate::error::Result;

const ROOT_CHANNELS: [Channel; 6] = [
    Channel::Xposition,
    Channel::Yposition,
    Channel::Zposition,
    Channel::Zrotation,
    Channel::Xrotation,
    Channel::Yrotation,
];
const JOINT_CHANNELS: [Channel; 3] = [Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];

/// Standing root height: the feet rest on `y = 0` in the zero pose.
pub const HIP_HEIGHT: f64 = 0.95;

pub const LEFT_UP_LEG: usize = 1;
pub const LEFT_LEG: usize = 2;
pub const LEFT_FOOT: usize = 3;
pub const RIGHT_UP_LEG: usize = 4;
pub const RIGHT_LEG: usize = 5;
pub const RIGHT_FOOT: usize = 6;
pub const LEFT_ARM: usize = 9;
pub const LEFT_FORE_ARM: usize = 10;
pub const RIGHT_ARM: usize = 11;
pub const RIGHT_FORE_ARM: usize = 12;

fn joint(name: &str, parent: Option<usize>, offset: [f64; 3], end: Option<[f64; 3]>) -> Joint {
    Joint {
        name: name.to_string(),
        parent,
        offset: Vector3::from(offset),
        channels: if parent.is_none() {
            ROOT_CHANNELS.to_vec()
        } else {
            JOINT_CHANNELS.to_vec()
        },
        end_site: end.map(Vector3::from),
    }
}

/// Hips, two 3-joint legs, spine, neck/head and two 2-joint arms.
pub fn humanoid() -> Skeleton {
    Skeleton::new(vec![
        joint("Hips", None, [0.0, 0.0, 0.0], None),
        joint("LeftUpLeg", Some(0), [0.1, -0.05, 0.0], None),
        joint("LeftLeg", Some(1), [0.0, -0.45, 0.0], None),
        joint("LeftFoot", Some(2), [0.0, -0.45, 0.0], Some([0.0, 0.0, 0.12])),
        joint("RightUpLeg", Some(0), [-0.1, -0.05, 0.0], None),
        joint("RightLeg", Some(4), [0.0, -0.45, 0.0], None),
        joint("RightFoot", Some(5), [0.0, -0.45, 0.0], Some([0.0, 0.0, 0.12])),
        joint("Spine", Some(0), [0.0, 0.1, 0.0], None),
        joint("Neck", Some(7), [0.0, 0.45, 0.0], Some([0.0, 0.2, 0.0])),
        joint("LeftArm", Some(7), [0.18, 0.4, 0.0], None),
        joint("LeftForeArm", Some(9), [0.0, -0.3, 0.0], Some([0.0, -0.25, 0.0])),
        joint("RightArm", Some(7), [-0.18, 0.4, 0.0], None),
        joint("RightForeArm", Some(11), [0.0, -0.3, 0.0], Some([0.0, -0.25, 0.0])),
    ])
    .expect("humanoid skeleton is well formed")
}

fn standing(skeleton: &Skeleton) -> Pose {
    let mut pose = Pose::zeros(skeleton.len());
    pose.root_translation = Vector3::new(0.0, HIP_HEIGHT, 0.0);
    pose
}

/// Rest pose with feet on the ground.
pub fn rest_pose() -> Pose {
    standing(&humanoid())
}

fn bump(t: f64, center: f64, width: f64) -> f64 {
    let x = (t - center) / width;
    if x.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * x).cos())
    }
}

/// Front kick with the left leg from a crouched stance on the right leg:
/// the left foot extends forward to a single apex and returns. `variant`
/// shifts timing and amplitude slightly.
pub fn kick(frames: usize, variant: u32) -> Motion {
    let skel = humanoid();
    let v = variant as f64;
    let apex = 0.45 + 0.03 * (v % 3.0);
    let lift = 0.6 - 0.04 * (v % 4.0);
    let extend = 0.3 - 0.02 * (v % 3.0);
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / (frames.max(2) - 1) as f64;
            let mut p = standing(&skel);
            let b = bump(t, apex, 0.4);
            // hip flexion swings the thigh forward (+Z) while the knee opens
            p.joint_angles[LEFT_UP_LEG][1] = -0.9 - lift * b;
            p.joint_angles[LEFT_LEG][1] = 1.8 - extend * b;
            p.joint_angles[RIGHT_ARM][0] = -0.3 * b;
            p.joint_angles[LEFT_ARM][0] = 0.3 * b;
            p
        })
        .collect();
    Motion::new(1.0 / 30.0, poses)
        .expect("kick clip is valid")
        .with_label("kick")
}

/// Right-arm punch; the legs shift weight a little.
pub fn punch(frames: usize, variant: u32) -> Motion {
    let skel = humanoid();
    let v = variant as f64;
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / (frames.max(2) - 1) as f64;
            let mut p = standing(&skel);
            let b = bump(t, 0.5 + 0.02 * (v % 3.0), 0.35);
            p.joint_angles[RIGHT_ARM][1] = -1.4 * b;
            p.joint_angles[RIGHT_FORE_ARM][1] = -0.6 * (1.0 - b) * bump(t, 0.5, 0.5);
            p.joint_angles[LEFT_UP_LEG][1] = -0.25 * b;
            p.joint_angles[LEFT_LEG][1] = 0.3 * b;
            p.joint_angles[0][2] = 0.2 * b;
            p
        })
        .collect();
    Motion::new(1.0 / 30.0, poses)
        .expect("punch clip is valid")
        .with_label("punch")
}

/// Hip flexion and knee flexion (X rotations) placing an ankle at `foot`
/// for a leg whose hip sits at `hip`, both legs kept in their sagittal plane.
fn leg_angles(hip: Vector3<f64>, foot: Vector3<f64>) -> (f64, f64) {
    let (thigh, shin) = (0.45, 0.45);
    let (dz, dy) = (foot.z - hip.z, foot.y - hip.y);
    let r = dz.hypot(dy).min(thigh + shin);
    let toward = dz.atan2(-dy);
    let at_hip = ((thigh * thigh + r * r - shin * shin) / (2.0 * thigh * r)).clamp(-1.0, 1.0).acos();
    let at_knee = ((thigh * thigh + shin * shin - r * r) / (2.0 * thigh * shin)).clamp(-1.0, 1.0).acos();
    (-(toward + at_hip), PI - at_knee)
}

/// Ground position of a foot at time `t` in a one-second gait cycle:
/// planted for the first half, then swung forward by `stride`.
fn foot_track(t: f64, start_z: f64, stride: f64) -> (f64, f64) {
    let n = t.floor();
    let f = t - n;
    let z = start_z + stride * n;
    if f < 0.5 {
        return (z, 0.0);
    }
    let u = 2.0 * (f - 0.5);
    let ease = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    (z + stride * ease, 0.12 * (PI * u).sin())
}

/// A few walking steps moving along +Z: one stance foot planted at all
/// times, the other swinging clear of the ground.
pub fn walk(frames: usize, variant: u32) -> Motion {
    let skel = humanoid();
    let stride = 0.6 + 0.04 * (variant % 4) as f64;
    let speed = stride;
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / 30.0;
            let root_z = speed * t;
            let left = foot_track(t, 0.25 * stride, stride);
            let right = foot_track(t + 0.5, -0.25 * stride, stride);
            let planted = if left.1 == 0.0 { left.0 } else { right.0 };
            let lean = planted - root_z;
            let hip_y = (0.895f64.powi(2) - lean * lean).sqrt();
            let mut p = Pose::zeros(skel.len());
            p.root_translation = Vector3::new(0.0, hip_y + 0.05, root_z);
            for ((z, y), up, knee) in [(left, LEFT_UP_LEG, LEFT_LEG), (right, RIGHT_UP_LEG, RIGHT_LEG)] {
                let hip = Vector3::new(0.0, hip_y, root_z);
                let (flex, bend) = leg_angles(hip, Vector3::new(0.0, y, z));
                p.joint_angles[up][1] = flex;
                p.joint_angles[knee][1] = bend;
            }
            let arm = 0.3 * (2.0 * PI * t).cos();
            p.joint_angles[LEFT_ARM][1] = arm;
            p.joint_angles[RIGHT_ARM][1] = -arm;
            p
        })
        .collect();
    Motion::new(1.0 / 30.0, poses)
        .expect("walk clip is valid")
        .with_label("walk")
}

/// Writes a small corpus under `dir`: one kick, punch and walk clip for
/// training, one of each for testing, a `corpus.json` manifest and a
/// `config.json` with seed 7 and multiplier 10. Returns the config path.
pub fn write_demo_corpus(dir: &Path) -> Result<PathBuf> {
    let skel = humanoid();
    let motions = dir.join("motions");
    fs::create_dir_all(&motions)?;
    let clips = [
        ("kick_a", kick(40, 0), "train"),
        ("punch_a", punch(40, 0), "train"),
        ("walk_a", walk(40, 0), "train"),
        ("kick_b", kick(40, 5), "test"),
        ("punch_b", punch(40, 4), "test"),
        ("walk_b", walk(40, 3), "test"),
    ];
    let mut entries = Vec::new();
    for (id, motion, split) in &clips {
        write_bvh_file(motions.join(format!("{id}.bvh")), &skel, motion)?;
        entries.push(json!({
            "path": format!("motions/{id}.bvh"),
            "label": motion.action_label,
            "split": split,
        }));
    }
    fs::write(
        dir.join("corpus.json"),
        serde_json::to_string_pretty(&json!({ "motions": entries }))?,
    )?;
    let config = json!({
        "corpus": "corpus.json",
        "output_dir": "out",
        "seed": 7,
        "multiplier": 10,
        "ik": {
            "chains": {
                "default": { "base": "LeftUpLeg", "end": "LeftFoot" },
                "punch": { "base": "RightArm", "end": "RightForeArm" }
            }
        }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::physics::{validate_plausibility, PlausibilityThresholds};

    #[test]
    fn rest_pose_feet_touch_ground() {
        let skel = humanoid();
        let fk = forward_kinematics(&skel, &rest_pose()).unwrap();
        assert!(fk.positions[LEFT_FOOT].y.abs() < 1e-12);
        assert!(fk.positions[RIGHT_FOOT].y.abs() < 1e-12);
        let min = fk.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-12);
    }

    #[test]
    fn joint_constants_match_names() {
        let skel = humanoid();
        for (index, name) in [
            (LEFT_UP_LEG, "LeftUpLeg"),
            (LEFT_LEG, "LeftLeg"),
            (LEFT_FOOT, "LeftFoot"),
            (RIGHT_UP_LEG, "RightUpLeg"),
            (RIGHT_LEG, "RightLeg"),
            (RIGHT_FOOT, "RightFoot"),
            (LEFT_ARM, "LeftArm"),
            (LEFT_FORE_ARM, "LeftForeArm"),
            (RIGHT_ARM, "RightArm"),
            (RIGHT_FORE_ARM, "RightForeArm"),
        ] {
            assert_eq!(skel.joint_index(name), Some(index));
        }
        for clip in [kick(20, 1), punch(20, 2), walk(20, 3)] {
            clip.check_skeleton(&skel).unwrap();
        }
    }

    #[test]
    fn kick_foot_moves_forward() {
        let skel = humanoid();
        let m = kick(40, 0);
        let z: Vec<f64> = m
            .frames
            .iter()
            .map(|p| forward_kinematics(&skel, p).unwrap().positions[LEFT_FOOT].z)
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max > 0.4, "{max}");
        assert!(z[0].abs() < 1e-12 && z[39].abs() < 1e-12);
    }

    #[test]
    fn clips_are_plausible() {
        let skel = humanoid();
        let thresholds = PlausibilityThresholds::default();
        for motion in [walk(40, 0), walk(40, 3), kick(40, 0), punch(40, 0)] {
            let found = validate_plausibility(&skel, &motion, &thresholds).unwrap();
            assert!(found.is_empty(), "{:?}: {found:?}", motion.action_label);
        }
    }
}
