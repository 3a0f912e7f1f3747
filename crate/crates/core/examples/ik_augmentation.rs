//! IK-based synthesis: find the kick's keyframe, sample a new foot target in
//! the kick sampling space and re-solve every frame with FABRIK.

use std::error::Error;

use mocap_augment::ik_augment::{detect_keyframe, synthesize_ik_motion, TargetSamplingSpace};
use mocap_augment::kinematics::{FabrikSettings, IkChain};
use mocap_augment::synthetic;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let kick = synthetic::kick(40, 0);
    let leg = IkChain::from_names(&skeleton, "LeftUpLeg", "LeftFoot")?;

    let key = detect_keyframe(&skeleton, &kick, &leg)?;
    println!(
        "keyframe {} at r={:.3} h={:.3} theta={:.3}",
        key.t_key, key.p_key_cylindrical.r, key.p_key_cylindrical.h, key.p_key_cylindrical.theta
    );

    let space = TargetSamplingSpace::kick();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in 0..5 {
        let aug = synthesize_ik_motion(&skeleton, &kick, &leg, &space, FabrikSettings::default(), &mut rng)?;
        let t = aug.sampled_target;
        println!(
            "variant {variant}: target ({:.3}, {:.3}, {:.3}), keyframe error {:.2e}, unreachable frames {}",
            t.x,
            t.y,
            t.z,
            aug.keyframe_error,
            aug.unreachable_frames.len()
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
