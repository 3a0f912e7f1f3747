//! World joint positions of the demo humanoid, at rest and mid-kick.

use std::error::Error;

use mocap_augment::kinematics::forward_kinematics;
use mocap_augment::synthetic;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let rest = forward_kinematics(&skeleton, &synthetic::rest_pose())?;
    let kick = synthetic::kick(40, 0);
    let apex = forward_kinematics(&skeleton, &kick.frames[18])?;
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let (a, b) = (rest.positions[j], apex.positions[j]);
        println!(
            "{:<13} rest ({:6.3} {:6.3} {:6.3})  kick ({:6.3} {:6.3} {:6.3})",
            joint.name, a.x, a.y, a.z, b.x, b.y, b.z
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
