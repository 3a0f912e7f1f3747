//! Motion distances and corpus-level scores.
//!
//! Every distance here works on Euler angles in radians over the non-root
//! joints; the root translation and root rotation never contribute.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{wrap_angle, Motion, Pose, Skeleton};
use crate::error::{Error, Result};

/// Euclidean distance between two poses over all non-root joint angles,
/// with each angle difference wrapped to `(-pi, pi]`.
pub fn frame_distance(a: &Pose, b: &Pose, skeleton: &Skeleton) -> Result<f64> {
    for p in [a, b] {
        if p.joint_count() != skeleton.len() {
            return Err(Error::Dimension {
                expected: skeleton.pose_dim(),
                found: p.dim(),
            });
        }
    }
    Ok(frame_distance_unchecked(a, b, skeleton.root_index()))
}

fn frame_distance_unchecked(a: &Pose, b: &Pose, root: usize) -> f64 {
    let mut sum = 0.0;
    for (j, (x, y)) in a.joint_angles.iter().zip(&b.joint_angles).enumerate() {
        if j == root {
            continue;
        }
        for k in 0..3 {
            let d = wrap_angle(x[k] - y[k]);
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Local costs between every frame of `a` (rows) and `b` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_motions(a: &Motion, b: &Motion, skeleton: &Skeleton) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("DTW needs non-empty motions".into()));
        }
        a.check_skeleton(skeleton)?;
        b.check_skeleton(skeleton)?;
        let root = skeleton.root_index();
        let mut values = Vec::with_capacity(a.len() * b.len());
        for pa in &a.frames {
            for pb in &b.frames {
                values.push(frame_distance_unchecked(pa, pb, root));
            }
        }
        Ok(DistanceMatrix {
            rows: a.len(),
            cols: b.len(),
            values,
        })
    }

    /// Wraps precomputed costs given row by row.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("cost matrix must be non-empty and rectangular".into()));
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("costs must be finite and non-negative".into()));
        }
        Ok(DistanceMatrix {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Classic DTW: cumulative cost of the cheapest monotone alignment using
/// match, insertion and deletion steps, no window.
pub fn dtw_from_matrix(costs: &DistanceMatrix) -> f64 {
    let (n, m) = (costs.rows, costs.cols);
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { curr[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            curr[j] = costs.get(i, j) + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

pub fn dtw(a: &Motion, b: &Motion, skeleton: &Skeleton) -> Result<f64> {
    Ok(dtw_from_matrix(&DistanceMatrix::from_motions(a, b, skeleton)?))
}

/// `table[i][j] = dtw(rows[i], cols[j])`, computed in parallel.
pub fn dtw_table(rows: &[Motion], cols: &[Motion], skeleton: &Skeleton) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|a| cols.iter().map(|b| dtw(a, b, skeleton)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDtw {
    /// Mean over test motions of the distance to their nearest candidate.
    pub mean: f64,
    pub nearest: Vec<Nearest>,
}

/// Row minima of a test-by-candidate DTW table and their mean. Ties go to
/// the lowest candidate index.
pub fn min_dtw_from_table(table: &[Vec<f64>]) -> Result<MinDtw> {
    if table.is_empty() || table.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("min-DTW needs non-empty sets".into()));
    }
    let nearest: Vec<Nearest> = table
        .iter()
        .map(|row| {
            let (index, &distance) = row
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("row is non-empty");
            Nearest { index, distance }
        })
        .collect();
    let mean = nearest.iter().map(|n| n.distance).sum::<f64>() / nearest.len() as f64;
    Ok(MinDtw { mean, nearest })
}

pub fn min_dtw(test: &[Motion], synthesized: &[Motion], skeleton: &Skeleton) -> Result<MinDtw> {
    if test.is_empty() || synthesized.is_empty() {
        return Err(Error::InvalidArgument("min-DTW needs non-empty sets".into()));
    }
    min_dtw_from_table(&dtw_table(test, synthesized, skeleton)?)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of all pairwise distances in the pooled sample: pairs inside each
/// set (each unordered pair once) and every cross pair.
pub fn median_bandwidth(within_a: &[Vec<f64>], within_b: &[Vec<f64>], cross: &[Vec<f64>]) -> f64 {
    let mut all = Vec::new();
    for within in [within_a, within_b] {
        for (i, row) in within.iter().enumerate() {
            all.extend(row.iter().skip(i + 1).copied());
        }
    }
    all.extend(cross.iter().flatten().copied());
    if all.is_empty() {
        0.0
    } else {
        median(all)
    }
}

fn mean_kernel(distances: &[Vec<f64>], sigma: f64) -> f64 {
    let denom = 2.0 * sigma * sigma;
    let count: usize = distances.iter().map(Vec::len).sum();
    let total: f64 = distances
        .iter()
        .flatten()
        .map(|d| (-d * d / denom).exp())
        .sum();
    total / count as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Biased (V-statistic) squared MMD, clamped at zero.
    pub value: f64,
    pub bandwidth: f64,
}

/// Squared MMD from precomputed distance blocks with the Gaussian kernel
/// `exp(-d^2 / (2 sigma^2))`.
///
/// DTW is not a metric, so the kernel need not be positive definite and the
/// raw estimate can dip below zero; it is clamped.
pub fn mmd_from_distances(
    within_a: &[Vec<f64>],
    within_b: &[Vec<f64>],
    cross: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<MmdEstimate> {
    if within_a.is_empty() || within_b.is_empty() {
        return Err(Error::InvalidArgument("MMD needs non-empty sets".into()));
    }
    let sigma = match bandwidth {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {s}")))
        }
        None => {
            let s = median_bandwidth(within_a, within_b, cross);
            if s <= 0.0 {
                return Err(Error::InvalidArgument(
                    "median pairwise distance is zero; pass an explicit bandwidth".into(),
                ));
            }
            s
        }
    };
    let value = mean_kernel(within_a, sigma) + mean_kernel(within_b, sigma) - 2.0 * mean_kernel(cross, sigma);
    Ok(MmdEstimate {
        value: value.max(0.0),
        bandwidth: sigma,
    })
}

/// Squared MMD between two motion sets with a Gaussian kernel on DTW
/// distances. Without an explicit bandwidth the median heuristic is used.
pub fn mmd(set_a: &[Motion], set_b: &[Motion], skeleton: &Skeleton, bandwidth: Option<f64>) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::InvalidArgument("MMD needs non-empty sets".into()));
    }
    let aa = dtw_table(set_a, set_a, skeleton)?;
    let bb = dtw_table(set_b, set_b, skeleton)?;
    let ab = dtw_table(set_a, set_b, skeleton)?;
    Ok(mmd_from_distances(&aa, &bb, &ab, bandwidth)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestEntry {
    pub test_id: String,
    pub nearest_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub min_dtw: f64,
    pub mmd: f64,
    pub bandwidth: f64,
    pub nearest: Vec<NearestEntry>,
}

/// Scores candidate motions against a test set: mean minimum DTW and MMD.
pub fn evaluate(
    test: &[(String, Motion)],
    candidates: &[(String, Motion)],
    skeleton: &Skeleton,
    bandwidth: Option<f64>,
) -> Result<MetricReport> {
    let t: Vec<Motion> = test.iter().map(|(_, m)| m.clone()).collect();
    let c: Vec<Motion> = candidates.iter().map(|(_, m)| m.clone()).collect();
    if t.is_empty() || c.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs non-empty sets".into()));
    }
    let cross = dtw_table(&t, &c, skeleton)?;
    let within_t = dtw_table(&t, &t, skeleton)?;
    let within_c = dtw_table(&c, &c, skeleton)?;
    let min = min_dtw_from_table(&cross)?;
    let mmd = mmd_from_distances(&within_t, &within_c, &cross, bandwidth)?;
    Ok(MetricReport {
        min_dtw: min.mean,
        mmd: mmd.value,
        bandwidth: mmd.bandwidth,
        nearest: min
            .nearest
            .iter()
            .zip(test)
            .map(|(n, (id, _))| NearestEntry {
                test_id: id.clone(),
                nearest_id: candidates[n.index].0.clone(),
                distance: n.distance,
            })
            .collect(),
    })
}

/// Number of frames covered by a horizon in milliseconds.
pub fn horizon_frames(horizon_ms: f64, frame_time: f64) -> usize {
    (horizon_ms / 1000.0 / frame_time).round() as usize
}

/// Mean per-frame angle error from the first predicted frame up to each
/// horizon.
pub fn prediction_error(
    predicted: &Motion,
    ground_truth: &Motion,
    skeleton: &Skeleton,
    horizons_ms: &[f64],
) -> Result<Vec<f64>> {
    if (predicted.frame_time - ground_truth.frame_time).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "frame times differ: {} vs {}",
            predicted.frame_time, ground_truth.frame_time
        )));
    }
    let available = predicted.len().min(ground_truth.len());
    let errors = predicted
        .frames
        .iter()
        .zip(&ground_truth.frames)
        .map(|(p, g)| frame_distance(p, g, skeleton))
        .collect::<Result<Vec<f64>>>()?;
    horizons_ms
        .iter()
        .map(|&h| {
            let n = horizon_frames(h, predicted.frame_time);
            if n == 0 || n > available {
                return Err(Error::InvalidArgument(format!(
                    "horizon {h} ms spans {n} frames but {available} are available"
                )));
            }
            Ok(errors[..n].iter().sum::<f64>() / n as f64)
        })
        .collect()
}
