//! Sampling near training samples in a learned latent space.
//!
//! Training motions are represented by their encoded Gaussian `(mu, sigma2)`.
//! The means are clustered with k-means; each draw picks a cluster, averages
//! the means and variances of a few of its members, samples
//! `z ~ N(mean_mu, mean_sigma2)` and decodes it. Encoders are trained
//! elsewhere and exported to the JSON format read by [`load_embeddings`].

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Motion, Pose};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentEmbedding {
    pub motion_id: String,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl LatentEmbedding {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| Error::Embedding {
            motion_id: self.motion_id.clone(),
            message,
        };
        if self.mu.is_empty() {
            return Err(err("empty mean vector".into()));
        }
        if self.mu.len() != self.sigma2.len() {
            return Err(err(format!(
                "mu has {} entries but sigma2 has {}",
                self.mu.len(),
                self.sigma2.len()
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(err("mu is not finite".into()));
        }
        if let Some(v) = self.sigma2.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(err(format!("variance {v} is not strictly positive")));
        }
        Ok(())
    }
}

/// Validates a set and returns its shared dimension.
pub fn validate_embeddings(embeddings: &[LatentEmbedding]) -> Result<usize> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidArgument("embedding set is empty".into()))?;
    let dim = first.dim();
    for e in embeddings {
        e.validate()?;
        if e.dim() != dim {
            return Err(Error::Embedding {
                motion_id: e.motion_id.clone(),
                message: format!("dimension {} differs from {dim}", e.dim()),
            });
        }
    }
    Ok(dim)
}

pub fn parse_embeddings(text: &str) -> Result<Vec<LatentEmbedding>> {
    let embeddings: Vec<LatentEmbedding> = serde_json::from_str(text)?;
    validate_embeddings(&embeddings)?;
    Ok(embeddings)
}

/// Reads a JSON array of `{motion_id, mu, sigma2}` records.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<LatentEmbedding>> {
    let path = path.as_ref();
    fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|text| parse_embeddings(&text))
        .map_err(|e| e.in_file(path))
}

pub fn save_embeddings(path: impl AsRef<Path>, embeddings: &[LatentEmbedding]) -> Result<()> {
    validate_embeddings(embeddings)?;
    fs::write(path, serde_json::to_string_pretty(embeddings)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// k-means

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub sse_history: Vec<f64>,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

pub const KMEANS_MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng + ?Sized>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (c, d) = nearest(p, centroids);
            sse += d;
            c
        })
        .collect();
    (labels, sse)
}

/// Recomputes centroids as member means. An empty cluster takes over the
/// point farthest from its current centroid.
fn update(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = points[0].len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let far = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(points[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(points[b], &centroids[labels[b]]))
            })
            .expect("k <= number of points leaves a donor cluster");
        labels[far] = empty;
        centroids[empty] = points[far].to_vec();
    }
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let mut sum = vec![0.0; dim];
        let mut n = 0usize;
        for (p, &l) in points.iter().zip(labels.iter()) {
            if l == c {
                for (s, v) in sum.iter_mut().zip(p.iter()) {
                    *s += v;
                }
                n += 1;
            }
        }
        *centroid = sum.into_iter().map(|s| s / n as f64).collect();
    }
}

/// Clusters embedding means with k-means++ seeding and Lloyd iterations,
/// stopping at an assignment fixpoint or after [`KMEANS_MAX_ITERS`].
pub fn kmeans_fit(embeddings: &[LatentEmbedding], n_clusters: usize, seed: u64) -> Result<ClusterModel> {
    validate_embeddings(embeddings)?;
    if n_clusters == 0 || n_clusters > embeddings.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot make {n_clusters} clusters from {} embeddings",
            embeddings.len()
        )));
    }
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.mu.as_slice()).collect();
    let mut rng = rng_for(seed, &[0x6b6d]);
    let mut centroids = kmeans_plus_plus(&points, n_clusters, &mut rng);
    let (mut labels, sse) = assign(&points, &centroids);
    let mut sse_history = vec![sse];
    for _ in 0..KMEANS_MAX_ITERS {
        update(&points, &mut labels, &mut centroids);
        let (next, sse) = assign(&points, &centroids);
        sse_history.push(sse);
        if next == labels {
            break;
        }
        labels = next;
    }
    update(&points, &mut labels, &mut centroids);
    Ok(ClusterModel {
        centroids,
        assignments: labels,
        sse_history,
    })
}

// ---------------------------------------------------------------------------
// Sampling

/// Gaussian built from a few members of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearSampleGaussian {
    pub cluster: usize,
    pub members: Vec<usize>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl NearSampleGaussian {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * eps
            })
            .collect()
    }
}

fn non_empty_clusters(model: &ClusterModel) -> Vec<usize> {
    (0..model.n_clusters())
        .filter(|&c| model.assignments.contains(&c))
        .collect()
}

/// Averages `n_s` members of `cluster` (without replacement when the
/// cluster is large enough).
pub fn cluster_gaussian<R: Rng + ?Sized>(
    embeddings: &[LatentEmbedding],
    model: &ClusterModel,
    cluster: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<NearSampleGaussian> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_s must be at least 1".into()));
    }
    let pool = model.members(cluster);
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!("cluster {cluster} is empty")));
    }
    let members: Vec<usize> = if pool.len() >= n_samples {
        index::sample(rng, pool.len(), n_samples)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..n_samples)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    };
    let dim = embeddings[members[0]].dim();
    let mut mean = vec![0.0; dim];
    let mut variance = vec![0.0; dim];
    for &m in &members {
        for d in 0..dim {
            mean[d] += embeddings[m].mu[d];
            variance[d] += embeddings[m].sigma2[d];
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    variance.iter_mut().for_each(|v| *v /= n);
    Ok(NearSampleGaussian {
        cluster,
        members,
        mean,
        variance,
    })
}

/// Picks a non-empty cluster uniformly and builds its near-sample Gaussian.
pub fn near_sample_gaussian<R: Rng + ?Sized>(
    embeddings: &[LatentEmbedding],
    model: &ClusterModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<NearSampleGaussian> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("embedding set is empty".into()));
    }
    if model.assignments.len() != embeddings.len() {
        return Err(Error::Dimension {
            expected: model.assignments.len(),
            found: embeddings.len(),
        });
    }
    let clusters = non_empty_clusters(model);
    let cluster = clusters[rng.random_range(0..clusters.len())];
    cluster_gaussian(embeddings, model, cluster, n_samples, rng)
}

/// One sampling-near-samples draw: returns `z` and the cluster it came from.
pub fn sample_near_samples<R: Rng + ?Sized>(
    embeddings: &[LatentEmbedding],
    model: &ClusterModel,
    n_samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    let gaussian = near_sample_gaussian(embeddings, model, n_samples, rng)?;
    Ok((gaussian.draw(rng), gaussian.cluster))
}

// ---------------------------------------------------------------------------
// Decoding

pub trait MotionDecoder: Sync {
    fn latent_dim(&self) -> usize;
    fn decode(&self, z: &[f64]) -> Result<Motion>;
}

/// `z -> W z + b`, reshaped into `frames` poses of `joints` joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDecoder {
    pub latent_dim: usize,
    pub frames: usize,
    pub joints: usize,
    pub frame_time: f64,
    /// Row-major `(frames * (3 + 3 * joints)) x latent_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearDecoder {
    fn output_dim(&self) -> usize {
        self.frames * (3 + 3 * self.joints)
    }

    pub fn validate(&self) -> Result<()> {
        let out = self.output_dim();
        if self.latent_dim == 0 || self.frames == 0 || !(self.frame_time > 0.0) {
            return Err(Error::InvalidArgument(
                "decoder needs a positive latent size, frame count and frame time".into(),
            ));
        }
        if self.weights.len() != out * self.latent_dim {
            return Err(Error::Dimension {
                expected: out * self.latent_dim,
                found: self.weights.len(),
            });
        }
        if self.bias.len() != out {
            return Err(Error::Dimension {
                expected: out,
                found: self.bias.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("decoder parameters are not finite".into()));
        }
        Ok(())
    }

    /// Decoder whose output at `z = 0` is `template`, with random weights of
    /// standard deviation `scale` on the joint angles. Root translation does
    /// not depend on `z`.
    pub fn around(template: &Motion, latent_dim: usize, scale: f64, seed: u64) -> Result<Self> {
        template.validate()?;
        let bias: Vec<f64> = template.frames.iter().flat_map(Pose::to_vec).collect();
        let pose_dim = template.pose_dim();
        let mut rng = rng_for(seed, &[0xdec0]);
        let mut weights = vec![0.0; bias.len() * latent_dim];
        for (row, chunk) in weights.chunks_mut(latent_dim).enumerate() {
            if row % pose_dim >= 3 {
                for w in chunk {
                    let eps: f64 = rng.sample(StandardNormal);
                    *w = scale * eps;
                }
            }
        }
        let decoder = LinearDecoder {
            latent_dim,
            frames: template.len(),
            joints: template.frames[0].joint_count(),
            frame_time: template.frame_time,
            weights,
            bias,
        };
        decoder.validate()?;
        Ok(decoder)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let read = || -> Result<Self> {
            let decoder: LinearDecoder = serde_json::from_str(&fs::read_to_string(path)?)?;
            decoder.validate()?;
            Ok(decoder)
        };
        read().map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

impl MotionDecoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn decode(&self, z: &[f64]) -> Result<Motion> {
        if z.len() != self.latent_dim {
            return Err(Error::Dimension {
                expected: self.latent_dim,
                found: z.len(),
            });
        }
        let out: Vec<f64> = self
            .weights
            .chunks_exact(self.latent_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let frames = out
            .chunks_exact(3 + 3 * self.joints)
            .map(Pose::from_slice)
            .collect::<Result<Vec<_>>>()?;
        Motion::new(self.frame_time, frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub n_clusters: usize,
    pub n_samples: usize,
    /// Build one Gaussian per cluster and reuse it for every draw instead of
    /// re-sampling members per draw.
    pub reuse_gaussian: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            n_clusters: 3,
            n_samples: 2,
            reuse_gaussian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMotion {
    pub motion: Motion,
    pub z: Vec<f64>,
    pub cluster: usize,
}

/// Decodes `count` independent sampling-near-samples draws. Draw `i` uses
/// its own stream derived from `seed`, so the result does not depend on
/// thread scheduling.
pub fn generate_batch(
    embeddings: &[LatentEmbedding],
    decoder: &dyn MotionDecoder,
    settings: SamplerSettings,
    count: usize,
    seed: u64,
) -> Result<Vec<GeneratedMotion>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let dim = validate_embeddings(embeddings)?;
    if decoder.latent_dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: decoder.latent_dim(),
        });
    }
    let model = kmeans_fit(embeddings, settings.n_clusters, seed)?;
    let shared: Option<Vec<NearSampleGaussian>> = if settings.reuse_gaussian {
        Some(
            (0..model.n_clusters())
                .map(|c| {
                    let mut rng = rng_for(seed, &[1, c as u64]);
                    cluster_gaussian(embeddings, &model, c, settings.n_samples, &mut rng)
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &[2, i as u64]);
            let gaussian = match &shared {
                Some(per_cluster) => per_cluster[rng.random_range(0..per_cluster.len())].clone(),
                None => near_sample_gaussian(embeddings, &model, settings.n_samples, &mut rng)?,
            };
            let z = gaussian.draw(&mut rng);
            Ok(GeneratedMotion {
                motion: decoder.decode(&z)?,
                z,
                cluster: gaussian.cluster,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(id: &str, mu: &[f64], s2: f64) -> LatentEmbedding {
        LatentEmbedding {
            motion_id: id.into(),
            mu: mu.to_vec(),
            sigma2: vec![s2; mu.len()],
        }
    }

    fn three_clouds() -> (Vec<LatentEmbedding>, Vec<usize>) {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            let jitter: [f64; 2] = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            out.push(emb(&format!("m{i}"), &[centers[c][0] + jitter[0], centers[c][1] + jitter[1]], 0.1));
            truth.push(c);
        }
        (out, truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (e, _) = three_clouds();
        let m = kmeans_fit(&e, 1, 0).unwrap();
        for d in 0..2 {
            let mean = e.iter().map(|x| x.mu[d]).sum::<f64>() / e.len() as f64;
            assert!((m.centroids[0][d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_clouds_recover_partition() {
        let (e, truth) = three_clouds();
        let m = kmeans_fit(&e, 3, 1).unwrap();
        // same partition up to relabeling
        for i in 0..e.len() {
            for j in 0..e.len() {
                assert_eq!(truth[i] == truth[j], m.assignments[i] == m.assignments[j]);
            }
        }
        // nearest-centroid oracle at convergence
        for (i, x) in e.iter().enumerate() {
            let best = (0..3)
                .min_by(|&a, &b| sq_dist(&x.mu, &m.centroids[a]).total_cmp(&sq_dist(&x.mu, &m.centroids[b])))
                .unwrap();
            assert_eq!(m.assignments[i], best);
        }
        for w in m.sse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn too_many_clusters_is_rejected() {
        let (e, _) = three_clouds();
        assert!(kmeans_fit(&e[..2], 3, 0).is_err());
        assert!(kmeans_fit(&e, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters() {
        let e: Vec<_> = (0..5).map(|i| emb(&i.to_string(), &[1.0, 1.0], 1.0)).collect();
        let m = kmeans_fit(&e, 3, 3).unwrap();
        for c in 0..3 {
            assert!(!m.members(c).is_empty());
        }
    }

    #[test]
    fn degenerate_gaussian_returns_member_mean() {
        let e = vec![emb("a", &[1.0, 2.0], 1e-300), emb("b", &[5.0, 6.0], 1e-300)];
        let m = kmeans_fit(&e, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (z, c) = sample_near_samples(&e, &m, 1, &mut rng).unwrap();
        let member = m.members(c)[0];
        for d in 0..2 {
            assert!((z[d] - e[member].mu[d]).abs() < 1e-100);
        }
    }

    #[test]
    fn small_cluster_samples_with_replacement() {
        let e = vec![emb("a", &[0.0], 1.0), emb("b", &[100.0], 1.0)];
        let m = kmeans_fit(&e, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = near_sample_gaussian(&e, &m, 3, &mut rng).unwrap();
        assert_eq!(g.members.len(), 3);
        assert!(g.members.iter().all(|&i| i == g.members[0]));
        assert!(near_sample_gaussian(&e, &m, 0, &mut rng).is_err());
    }

    #[test]
    fn invalid_embeddings_rejected() {
        let zero_var = r#"[{"motion_id": "a", "mu": [0, 1], "sigma2": [1, 0]}]"#;
        assert!(matches!(parse_embeddings(zero_var), Err(Error::Embedding { .. })));
        let mixed = r#"[{"motion_id": "a", "mu": [0, 1], "sigma2": [1, 1]},
                        {"motion_id": "b", "mu": [0], "sigma2": [1]}]"#;
        assert!(matches!(parse_embeddings(mixed), Err(Error::Embedding { .. })));
        let ok = r#"[{"motion_id": "a", "mu": [0, 1, 2, 3], "sigma2": [1, 1, 1, 1]},
                     {"motion_id": "b", "mu": [4, 5, 6, 7], "sigma2": [2, 2, 2, 2]}]"#;
        assert_eq!(parse_embeddings(ok).unwrap().len(), 2);
        assert!(parse_embeddings("[]").is_err());
    }

    #[test]
    fn linear_decoder_shapes() {
        let template = crate::synthetic::kick(4, 0);
        let dec = LinearDecoder::around(&template, 3, 0.1, 1).unwrap();
        let m = dec.decode(&[0.0; 3]).unwrap();
        for (a, b) in m.frames.iter().zip(&template.frames) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
        assert!(dec.decode(&[0.0; 2]).is_err());
    }

    #[test]
    fn batch_is_reproducible() {
        let (e, _) = three_clouds();
        let template = crate::synthetic::kick(2, 0);
        let dec = LinearDecoder::around(&template, 2, 0.05, 9).unwrap();
        assert!(generate_batch(&e, &dec, SamplerSettings::default(), 0, 1).unwrap().is_empty());
        let a = generate_batch(&e, &dec, SamplerSettings::default(), 10, 1).unwrap();
        let b = generate_batch(&e, &dec, SamplerSettings::default(), 10, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let reuse = SamplerSettings { reuse_gaussian: true, ..Default::default() };
        assert_eq!(generate_batch(&e, &dec, reuse, 5, 1).unwrap(), generate_batch(&e, &dec, reuse, 5, 1).unwrap());
        let wrong = LinearDecoder::around(&template, 3, 0.05, 9).unwrap();
        assert!(matches!(generate_batch(&e, &wrong, SamplerSettings::default(), 1, 1), Err(Error::Dimension { .. })));
    }
}
