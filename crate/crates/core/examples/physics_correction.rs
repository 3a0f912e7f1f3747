//! Track a floating kick with the PD controller and PD-residual root force,
//! then compare validator output before and after.

use std::error::Error;

use mocap_augment::physics::{
    max_angular_speed, track_motion, validate_plausibility, ControllerParams, PlausibilityThresholds, SimCharacter,
    TrackingSettings,
};
use mocap_augment::synthetic;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let mut goal = synthetic::kick(45, 1);
    // lift the whole clip off the ground and add a one-frame glitch
    for pose in &mut goal.frames {
        pose.root_translation.y += 0.3;
    }
    goal.frames[20].joint_angles[synthetic::RIGHT_ARM][1] += 1.2;

    let thresholds = PlausibilityThresholds::default();
    let before = validate_plausibility(&skeleton, &goal, &thresholds)?;
    println!("goal diagnostics: {before:?}");

    let character = SimCharacter::for_skeleton(&skeleton, &ControllerParams::default())?;
    let out = track_motion(&character, &skeleton, &goal, &TrackingSettings::default(), &thresholds)?;
    println!("normalized reward {:.4}", out.normalized_reward);
    println!(
        "max angular speed {:.1} -> {:.1} rad/s",
        max_angular_speed(&goal),
        max_angular_speed(&out.motion)
    );
    println!(
        "root height {:.3} -> {:.3} m at the last frame",
        goal.frames.last().unwrap().root_translation.y,
        out.motion.frames.last().unwrap().root_translation.y
    );
    println!("rectified diagnostics: {:?}", out.diagnostics);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
