//! Fit a framewise debias map on (tracked, original) pairs and apply it to a
//! motion the model has not seen.

use std::error::Error;

use mocap_augment::debias::{apply_debias, fit_debias, mean_frame_error, DebiasSettings, TrainingPair};
use mocap_augment::physics::{track_motion, ControllerParams, PlausibilityThresholds, SimCharacter, TrackingSettings};
use mocap_augment::synthetic;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let character = SimCharacter::for_skeleton(&skeleton, &ControllerParams::default())?;
    let track = |m: &mocap_augment::bvh::Motion| {
        track_motion(&character, &skeleton, m, &TrackingSettings::default(), &PlausibilityThresholds::default())
            .map(|t| t.motion)
    };

    let mut pairs = Vec::new();
    for v in 0..4 {
        for original in [synthetic::kick(40, v), synthetic::punch(40, v)] {
            pairs.push(TrainingPair::new(track(&original)?, original)?);
        }
    }
    let model = fit_debias(&pairs, &DebiasSettings::default(), 0)?;

    let unseen = synthetic::kick(40, 7);
    let tracked = track(&unseen)?;
    let fixed = apply_debias(&model, &tracked)?;
    println!(
        "framewise error to the original: tracked {:.4}, debiased {:.4}",
        mean_frame_error(&tracked, &unseen)?,
        mean_frame_error(&fixed, &unseen)?
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
