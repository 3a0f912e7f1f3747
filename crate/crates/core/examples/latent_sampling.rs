//! Sampling near samples: cluster encoded means, average a few members of a
//! cluster into a Gaussian and decode draws from it.

use std::error::Error;

use mocap_augment::latent::{generate_batch, kmeans_fit, LatentEmbedding, LinearDecoder, SamplerSettings};
use mocap_augment::synthetic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // stand-in encoder output: three groups of 8-dimensional codes
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let embeddings: Vec<LatentEmbedding> = (0..30)
        .map(|i| {
            let center = (i % 3) as f64 * 4.0;
            LatentEmbedding {
                motion_id: format!("clip{i:02}"),
                mu: (0..8).map(|_| center + rng.random_range(-0.5..0.5)).collect(),
                sigma2: vec![0.05; 8],
            }
        })
        .collect();

    let model = kmeans_fit(&embeddings, 3, 0)?;
    for c in 0..model.n_clusters() {
        println!("cluster {c}: {} members", model.members(c).len());
    }
    println!("k-means SSE per iteration: {:?}", model.sse_history);

    let decoder = LinearDecoder::around(&synthetic::punch(30, 0), 8, 0.02, 5)?;
    let settings = SamplerSettings { n_clusters: 3, n_samples: 2, reuse_gaussian: false };
    for g in generate_batch(&embeddings, &decoder, settings, 4, 42)? {
        println!("cluster {} -> {} frames, z[0] = {:.3}", g.cluster, g.motion.len(), g.z[0]);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
