//! Parse a BVH document, write it back, then resample and time-warp it.

use std::error::Error;

use mocap_augment::bvh::{parse_bvh, resample, time_warp, write_bvh};
use mocap_augment::synthetic;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let clip = synthetic::walk(31, 0);
    let text = write_bvh(&skeleton, &clip)?;

    let (parsed_skel, parsed) = parse_bvh(&text)?;
    assert!(parsed_skel.same_structure(&skeleton, 1e-9));
    println!(
        "{} joints, {} frames at {:.1} Hz ({:.2} s)",
        parsed_skel.len(),
        parsed.len(),
        1.0 / parsed.frame_time,
        parsed.duration()
    );

    let slow = resample(&parsed, 60.0)?;
    println!("resampled to 60 Hz: {} frames", slow.len());

    let warped = time_warp(&parsed, 1.1)?;
    println!("time-warped by 1.1: {} frames", warped.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
