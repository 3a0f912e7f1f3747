use std::f64::consts::PI;

use mocap_augment::bvh::{parse_bvh, resample, time_warp, wrap_angle, write_bvh, Motion, Pose};
use mocap_augment::ik_augment::propagate_targets;
use mocap_augment::kinematics::{fabrik_solve, forward_kinematics, ik_frame, FabrikSettings, IkChain};
use mocap_augment::latent::{kmeans_fit, LatentEmbedding};
use mocap_augment::metrics::{dtw, dtw_from_matrix, DistanceMatrix};
use mocap_augment::physics::{normalized_reward, RewardTrace};
use mocap_augment::synthetic::{self, LEFT_FOOT, LEFT_LEG, LEFT_UP_LEG};
use nalgebra::Vector3;
use proptest::prelude::*;

const JOINTS: usize = 13;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-5.0..5.0f64),
        prop::collection::vec(prop::array::uniform3(-PI..PI), JOINTS),
    )
        .prop_map(|(t, joint_angles)| Pose {
            root_translation: Vector3::from(t),
            joint_angles,
        })
}

fn motion_strategy(max_frames: usize) -> impl Strategy<Value = Motion> {
    prop::collection::vec(pose_strategy(), 1..=max_frames).prop_map(|frames| Motion::new(1.0 / 30.0, frames).unwrap())
}

fn leg() -> IkChain {
    IkChain::new(&synthetic::humanoid(), vec![LEFT_UP_LEG, LEFT_LEG, LEFT_FOOT]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bvh_text_is_a_fixed_point(motion in motion_strategy(8)) {
        let skel = synthetic::humanoid();
        let once = write_bvh(&skel, &motion).unwrap();
        let (s1, m1) = parse_bvh(&once).unwrap();
        let twice = write_bvh(&s1, &m1).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn wrap_angle_lands_in_half_open_interval(a in -1e3..1e3f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn fabrik_keeps_bones_and_never_gets_worse(pose in pose_strategy(), dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64) {
        let skel = synthetic::humanoid();
        let chain = leg();
        let fk = forward_kinematics(&skel, &pose).unwrap();
        let initial = fk.restrict(&chain);
        let target = initial[0] + Vector3::new(dx, dy, dz);
        let solved = fabrik_solve(&chain, &initial, target, FabrikSettings::default()).unwrap();
        prop_assert_eq!(solved.positions[0], initial[0]);
        for (w, len) in solved.positions.windows(2).zip(&chain.bone_lengths) {
            prop_assert!(((w[1] - w[0]).norm() - len).abs() < 1e-9);
        }
        if solved.reachable {
            prop_assert!(solved.error_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn ik_frame_leaves_other_joints_alone(pose in pose_strategy(), dz in -0.05..0.05f64) {
        let skel = synthetic::humanoid();
        let chain = leg();
        let fk = forward_kinematics(&skel, &pose).unwrap();
        let target = fk.positions[LEFT_FOOT] + Vector3::new(0.0, 0.0, dz);
        let solution = ik_frame(&skel, &pose, &chain, target, FabrikSettings::default()).unwrap();
        prop_assert_eq!(solution.pose.root_translation, pose.root_translation);
        for j in 0..JOINTS {
            if j != LEFT_UP_LEG && j != LEFT_LEG {
                prop_assert_eq!(solution.pose.joint_angles[j], pose.joint_angles[j]);
            }
        }
        if solution.reachable {
            let moved = forward_kinematics(&skel, &solution.pose).unwrap();
            prop_assert!((moved.positions[LEFT_FOOT] - target).norm() < 1e-4);
        }
    }

    #[test]
    fn propagation_keeps_endpoints(
        path in prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 3..30),
        key_frac in 0.01..0.99f64,
        sample in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let traj: Vec<Vector3<f64>> = path.into_iter().map(Vector3::from).collect();
        let t_key = ((traj.len() - 1) as f64 * key_frac).round().clamp(1.0, (traj.len() - 2) as f64) as usize;
        let out = propagate_targets(&traj, t_key, Vector3::from(sample)).unwrap();
        prop_assert_eq!(out[0], traj[0]);
        prop_assert_eq!(out[traj.len() - 1], traj[traj.len() - 1]);
        prop_assert_eq!(out[t_key], Vector3::from(sample));
    }

    #[test]
    fn dtw_is_symmetric_and_bounded(a in motion_strategy(6), b in motion_strategy(6)) {
        let skel = synthetic::humanoid();
        let ab = dtw(&a, &b, &skel).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dtw(&b, &a, &skel).unwrap()).abs() < 1e-12);
        prop_assert_eq!(dtw(&a, &a, &skel).unwrap(), 0.0);
        // the path along the first row then the last column is one alignment
        let costs = DistanceMatrix::from_motions(&a, &b, &skel).unwrap();
        let mut edge = 0.0;
        for j in 0..costs.cols() {
            edge += costs.get(0, j);
        }
        for i in 1..costs.rows() {
            edge += costs.get(i, costs.cols() - 1);
        }
        prop_assert!(dtw_from_matrix(&costs) <= edge + 1e-12);
    }

    #[test]
    fn resampling_keeps_the_first_frame(motion in motion_strategy(12), hz in 10.0..120.0f64) {
        prop_assume!(motion.len() >= 2);
        let out = resample(&motion, hz).unwrap();
        prop_assert_eq!(&out.frames[0], &motion.frames[0]);
        prop_assert!((out.frame_time - 1.0 / hz).abs() < 1e-12);
    }

    #[test]
    fn time_warp_keeps_the_first_frame(motion in motion_strategy(12), scale in 0.9..1.1f64) {
        let out = time_warp(&motion, scale).unwrap();
        prop_assert_eq!(&out.frames[0], &motion.frames[0]);
        prop_assert_eq!(out.frame_time, motion.frame_time);
    }

    #[test]
    fn normalized_reward_stays_in_unit_interval(
        entries in prop::collection::vec((1e-300..1.0f64, 1.0..3.0f64), 1..50)
    ) {
        let mut trace = RewardTrace::default();
        for (r, m) in entries {
            trace.push(r * m, m);
        }
        let v = normalized_reward(&trace).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn kmeans_assigns_each_point_to_its_nearest_centroid(
        points in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 6..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let embs: Vec<LatentEmbedding> = points
            .iter()
            .enumerate()
            .map(|(i, mu)| LatentEmbedding { motion_id: format!("m{i}"), mu: mu.clone(), sigma2: vec![1.0; 3] })
            .collect();
        let model = kmeans_fit(&embs, k, seed).unwrap();
        prop_assert!(model.sse_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for (p, &c) in points.iter().zip(&model.assignments) {
            let own = d2(p, &model.centroids[c]);
            prop_assert!(model.centroids.iter().all(|other| own <= d2(p, other) + 1e-9));
        }
    }
}
