//! The whole batch pipeline on a generated corpus: augment, correct,
//! debias, evaluate. `cargo run --example pipeline -- <dir>` keeps the
//! output in `<dir>`.

use std::error::Error;
use std::path::Path;

use mocap_augment::pipeline::{self, Pipeline};
use mocap_augment::synthetic;

fn run_in(dir: &Path) -> Result<(), Box<dyn Error>> {
    let config = synthetic::write_demo_corpus(dir)?;
    let p = Pipeline::new(Some(&config), None, None)?;

    let manifest = pipeline::augment(&p)?;
    println!("augment: {} motions, {} failures", manifest.outputs.len(), manifest.failures.len());

    let corrected = pipeline::correct(&p, &p.out_dir.join("augment/ik"))?;
    let mean_reward = corrected
        .motions
        .iter()
        .filter_map(|m| m.row.normalized_reward)
        .sum::<f64>()
        / corrected.motions.len() as f64;
    println!("correct: mean normalized reward {mean_reward:.4}");

    let debiased = pipeline::debias(&p, &p.out_dir.join("correct/pairs"), &p.out_dir.join("correct/rectified"))?;
    if let Some(h) = &debiased.held_out {
        println!("debias: held-out error {:.4} -> {:.4}", h.error_before, h.error_after);
    }

    let report = pipeline::evaluate(&p, None, &p.out_dir.join("debias/motions"))?;
    println!("evaluate: min DTW {:.4}, MMD {:.4}", report.min_dtw, report.mmd);
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run_with(None)
}

fn run_with(dir: Option<String>) -> Result<(), Box<dyn Error>> {
    match dir {
        Some(dir) => run_in(Path::new(&dir)),
        None => {
            let tmp = tempfile::tempdir()?;
            run_in(tmp.path())
        }
    }
}

fn main() -> Result<(), Box<dyn Error>> {
    run_with(std::env::args().nth(1))
}
