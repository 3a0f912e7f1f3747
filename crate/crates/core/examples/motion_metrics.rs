//! DTW, minimum DTW and MMD between a test set and synthesized candidates.

use std::error::Error;

use mocap_augment::metrics::{dtw, evaluate};
use mocap_augment::synthetic;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let skeleton = synthetic::humanoid();
    let a = synthetic::kick(40, 0);
    let b = synthetic::kick(36, 1);
    println!("dtw(kick0, kick1) = {:.4}", dtw(&a, &b, &skeleton)?);

    let test = vec![
        ("kick".to_string(), synthetic::kick(40, 5)),
        ("punch".to_string(), synthetic::punch(40, 5)),
    ];
    let candidates: Vec<_> = (0..3)
        .flat_map(|v| {
            [
                (format!("kick{v}"), synthetic::kick(40, v)),
                (format!("walk{v}"), synthetic::walk(40, v)),
            ]
        })
        .collect();
    let report = evaluate(&test, &candidates, &skeleton, None)?;
    println!("min DTW {:.4}, MMD {:.4} (bandwidth {:.4})", report.min_dtw, report.mmd, report.bandwidth);
    for n in &report.nearest {
        println!("  {} -> {} ({:.4})", n.test_id, n.nearest_id, n.distance);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
