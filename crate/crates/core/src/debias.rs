//! Framewise debiasing: a map from poses produced by physics correction back
//! to the poses of the original capture.
//!
//! Models are fitted on pairs `(tracked original, original)` and applied to
//! tracked synthesized motions. Two model kinds are available: an affine map
//! fitted by closed-form ridge regression, and a one-hidden-layer ReLU
//! network trained by full-batch gradient descent with backtracking.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{wrap_angle, Motion, Pose};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Output of tracking the original motion.
    pub biased: Motion,
    pub unbiased: Motion,
}

impl TrainingPair {
    pub fn new(biased: Motion, unbiased: Motion) -> Result<Self> {
        biased.validate()?;
        unbiased.validate()?;
        if biased.len() != unbiased.len() {
            return Err(Error::Dimension {
                expected: unbiased.len(),
                found: biased.len(),
            });
        }
        if biased.pose_dim() != unbiased.pose_dim() {
            return Err(Error::Dimension {
                expected: unbiased.pose_dim(),
                found: biased.pose_dim(),
            });
        }
        Ok(TrainingPair { biased, unbiased })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasKind {
    Affine,
    OneHiddenLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebiasSettings {
    pub kind: DebiasKind,
    pub lambda: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DebiasSettings {
    fn default() -> Self {
        DebiasSettings {
            kind: DebiasKind::Affine,
            lambda: 1e-6,
            hidden: 512,
            epochs: 200,
            learning_rate: 0.1,
        }
    }
}

/// Row-major matrix as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols || self.data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: self.data.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DebiasParams {
    /// `y = W x + b`.
    Affine { weight: Matrix, bias: Vec<f64> },
    /// On standardized frames: `y = W2 relu(W1 x + b1) + b2`.
    OneHiddenLayer {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        output_mean: Vec<f64>,
        output_scale: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasModel {
    pub dim: usize,
    pub lambda: f64,
    pub params: DebiasParams,
    /// Training loss after each accepted step (network only).
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

fn frames_matrix<'a>(motions: impl Iterator<Item = &'a Motion>, dim: usize) -> DMatrix<f64> {
    let cols: Vec<f64> = motions.flat_map(|m| m.frames.iter().flat_map(Pose::to_vec)).collect();
    let n = cols.len() / dim;
    DMatrix::from_column_slice(dim, n, &cols)
}

impl DebiasModel {
    pub fn kind(&self) -> DebiasKind {
        match self.params {
            DebiasParams::Affine { .. } => DebiasKind::Affine,
            DebiasParams::OneHiddenLayer { .. } => DebiasKind::OneHiddenLayer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match &self.params {
            DebiasParams::Affine { weight, bias } => {
                weight.check(d, d)?;
                check_len(d, bias.len())?;
                finite(&weight.data) && finite(bias)
            }
            DebiasParams::OneHiddenLayer {
                w1,
                b1,
                w2,
                b2,
                input_mean,
                input_scale,
                output_mean,
                output_scale,
            } => {
                let h = w1.rows;
                w1.check(h, d)?;
                w2.check(d, h)?;
                check_len(h, b1.len())?;
                for v in [b2, input_mean, input_scale, output_mean, output_scale] {
                    check_len(d, v.len())?;
                }
                [&w1.data, b1, &w2.data, b2, input_mean, input_scale, output_mean, output_scale]
                    .iter()
                    .all(|v| finite(v))
                    && input_scale.iter().chain(output_scale).all(|s| *s > 0.0)
            }
        };
        if !ok {
            return Err(Error::InvalidArgument("debias parameters are not finite".into()));
        }
        Ok(())
    }

    /// Maps one frame vector.
    pub fn apply_frame(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let xs = DMatrix::from_column_slice(self.dim, 1, x);
        Ok(self.apply_columns(&xs).as_slice().to_vec())
    }

    fn apply_columns(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.params {
            DebiasParams::Affine { weight, bias } => {
                let mut y = weight.to_dmatrix() * xs;
                let b = DVector::from_column_slice(bias);
                for mut col in y.column_iter_mut() {
                    col += &b;
                }
                y
            }
            DebiasParams::OneHiddenLayer { .. } => {
                let net = Network::from_params(&self.params);
                let (mean_in, scale_in, mean_out, scale_out) = standardization(&self.params);
                let xt = standardize(xs, mean_in, scale_in);
                let yt = net.forward(&xt).2;
                unstandardize(&yt, mean_out, scale_out)
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let read = || -> Result<Self> {
            let model: DebiasModel = serde_json::from_str(&fs::read_to_string(path)?)?;
            model.validate()?;
            Ok(model)
        };
        read().map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Network with He-initialized random weights and identity
    /// standardization.
    pub fn random_network(dim: usize, hidden: usize, lambda: f64, seed: u64) -> Self {
        let net = Network::random(dim, hidden, seed);
        DebiasModel {
            dim,
            lambda,
            params: net.into_params(vec![0.0; dim], vec![1.0; dim], vec![0.0; dim], vec![1.0; dim]),
            loss_history: Vec::new(),
        }
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Fits a debias model on all frames of all pairs, pooled.
pub fn fit_debias(pairs: &[TrainingPair], settings: &DebiasSettings, seed: u64) -> Result<DebiasModel> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training pairs".into()))?;
    if !(settings.lambda >= 0.0 && settings.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", settings.lambda)));
    }
    let dim = first.unbiased.pose_dim();
    for p in pairs {
        check_len(dim, p.biased.pose_dim())?;
        check_len(dim, p.unbiased.pose_dim())?;
        check_len(p.unbiased.len(), p.biased.len())?;
    }
    let x = frames_matrix(pairs.iter().map(|p| &p.biased), dim);
    let y = frames_matrix(pairs.iter().map(|p| &p.unbiased), dim);
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training frames are not finite".into()));
    }
    match settings.kind {
        DebiasKind::Affine => fit_affine(&x, &y, settings.lambda),
        DebiasKind::OneHiddenLayer => fit_network(&x, &y, settings, seed),
    }
}

fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_mean()
}

fn center(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        col -= mean;
    }
    c
}

/// Ridge regression with an unpenalized intercept: solves
/// `(Xc Xc^T + lambda I) W^T = Xc Yc^T` on centered frames, falling back to
/// the minimum-norm least-squares solution when the system is singular.
fn fit_affine(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DebiasModel> {
    let dim = x.nrows();
    let mx = column_mean(x);
    let my = column_mean(y);
    let xc = center(x, &mx);
    let yc = center(y, &my);
    let gram = &xc * xc.transpose() + DMatrix::identity(dim, dim) * lambda;
    let rhs = &xc * yc.transpose();
    let wt = match gram.clone().cholesky() {
        Some(ch) if lambda > 0.0 => ch.solve(&rhs),
        _ => {
            let svd = gram.svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            svd.solve(&rhs, tol).map_err(|e| Error::InvalidArgument(e.to_string()))?
        }
    };
    let w = wt.transpose();
    let b = &my - &w * &mx;
    let model = DebiasModel {
        dim,
        lambda,
        params: DebiasParams::Affine {
            weight: Matrix::from_dmatrix(&w),
            bias: b.as_slice().to_vec(),
        },
        loss_history: Vec::new(),
    };
    model.validate()?;
    Ok(model)
}

/// Scaled residual of the centered normal equations for an affine model.
pub fn normal_equation_residual(model: &DebiasModel, pairs: &[TrainingPair]) -> Result<f64> {
    let DebiasParams::Affine { weight, .. } = &model.params else {
        return Err(Error::InvalidArgument("normal equations apply to affine models".into()));
    };
    let x = frames_matrix(pairs.iter().map(|p| &p.biased), model.dim);
    let y = frames_matrix(pairs.iter().map(|p| &p.unbiased), model.dim);
    let xc = center(&x, &column_mean(&x));
    let yc = center(&y, &column_mean(&y));
    let gram = &xc * xc.transpose() + DMatrix::identity(model.dim, model.dim) * model.lambda;
    let rhs = &xc * yc.transpose();
    let r = &gram * weight.to_dmatrix().transpose() - &rhs;
    Ok(r.norm() / rhs.norm().max(gram.norm()).max(1.0))
}

// ---------------------------------------------------------------------------
// Network

#[derive(Debug, Clone, PartialEq)]
struct Network {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

struct Gradient {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

fn add_columns(m: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += v;
    }
}

impl Network {
    fn random(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0xde_b1a5]);
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
        let s1 = (2.0 / dim as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, dim, |_, _| normal(s1));
        let w2 = DMatrix::from_fn(dim, hidden, |_, _| normal(s2));
        Network {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: DVector::zeros(dim),
        }
    }

    fn from_params(params: &DebiasParams) -> Self {
        match params {
            DebiasParams::OneHiddenLayer { w1, b1, w2, b2, .. } => Network {
                w1: w1.to_dmatrix(),
                b1: DVector::from_column_slice(b1),
                w2: w2.to_dmatrix(),
                b2: DVector::from_column_slice(b2),
            },
            DebiasParams::Affine { .. } => unreachable!("affine parameters are not a network"),
        }
    }

    fn into_params(
        self,
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        output_mean: Vec<f64>,
        output_scale: Vec<f64>,
    ) -> DebiasParams {
        DebiasParams::OneHiddenLayer {
            w1: Matrix::from_dmatrix(&self.w1),
            b1: self.b1.as_slice().to_vec(),
            w2: Matrix::from_dmatrix(&self.w2),
            b2: self.b2.as_slice().to_vec(),
            input_mean,
            input_scale,
            output_mean,
            output_scale,
        }
    }

    /// Returns pre-activations, activations and outputs for column frames.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut a = &self.w1 * x;
        add_columns(&mut a, &self.b1);
        let h = a.map(|v| v.max(0.0));
        let mut y = &self.w2 * &h;
        add_columns(&mut y, &self.b2);
        (a, h, y)
    }

    /// `(1/N) sum 0.5 |y - t|^2 + 0.5 lambda (|W1|^2 + |W2|^2)`.
    fn loss(&self, x: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> f64 {
        let n = x.ncols() as f64;
        let e = self.forward(x).2 - t;
        0.5 * e.norm_squared() / n + 0.5 * lambda * (self.w1.norm_squared() + self.w2.norm_squared())
    }

    fn gradient(&self, x: &DMatrix<f64>, t: &DMatrix<f64>, lambda: f64) -> Gradient {
        let n = x.ncols() as f64;
        let (a, h, y) = self.forward(x);
        let e = (y - t) / n;
        let w2 = &e * h.transpose() + &self.w2 * lambda;
        let b2 = e.column_sum();
        let mut da = self.w2.transpose() * &e;
        da.zip_apply(&a, |d, pre| {
            if pre <= 0.0 {
                *d = 0.0
            }
        });
        let w1 = &da * x.transpose() + &self.w1 * lambda;
        let b1 = da.column_sum();
        Gradient { w1, b1, w2, b2 }
    }

    fn step(&self, g: &Gradient, lr: f64) -> Network {
        Network {
            w1: &self.w1 - &g.w1 * lr,
            b1: &self.b1 - &g.b1 * lr,
            w2: &self.w2 - &g.w2 * lr,
            b2: &self.b2 - &g.b2 * lr,
        }
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for block in [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice()] {
            if i < block.len() {
                return &mut block[i];
            }
            i -= block.len();
        }
        &mut self.b2.as_mut_slice()[i]
    }
}

impl Gradient {
    fn get(&self, mut i: usize) -> f64 {
        for block in [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice()] {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        self.b2.as_slice()[i]
    }
}

fn standardization(params: &DebiasParams) -> (&[f64], &[f64], &[f64], &[f64]) {
    match params {
        DebiasParams::OneHiddenLayer {
            input_mean,
            input_scale,
            output_mean,
            output_scale,
            ..
        } => (input_mean, input_scale, output_mean, output_scale),
        DebiasParams::Affine { .. } => unreachable!("affine models are not standardized"),
    }
}

fn standardize(m: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| (m[(r, c)] - mean[r]) / scale[r])
}

fn unstandardize(m: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * scale[r] + mean[r])
}

fn moments(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.ncols() as f64;
    m.row_iter()
        .map(|row| {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // constant channels pass through unscaled
            (mean, if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 })
        })
        .unzip()
}

fn fit_network(x: &DMatrix<f64>, y: &DMatrix<f64>, settings: &DebiasSettings, seed: u64) -> Result<DebiasModel> {
    if settings.hidden == 0 {
        return Err(Error::InvalidArgument("hidden width must be positive".into()));
    }
    let dim = x.nrows();
    let (mean_in, scale_in) = moments(x);
    let (mean_out, scale_out) = moments(y);
    let xt = standardize(x, &mean_in, &scale_in);
    let yt = standardize(y, &mean_out, &scale_out);
    let mut net = Network::random(dim, settings.hidden, seed);
    let mut loss = net.loss(&xt, &yt, settings.lambda);
    let mut history = vec![loss];
    let mut lr = settings.learning_rate;
    for _ in 0..settings.epochs {
        let g = net.gradient(&xt, &yt, settings.lambda);
        let mut accepted = false;
        for _ in 0..40 {
            let trial = net.step(&g, lr);
            let trial_loss = trial.loss(&xt, &yt, settings.lambda);
            if trial_loss <= loss {
                net = trial;
                loss = trial_loss;
                lr *= 1.2;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(loss);
    }
    let model = DebiasModel {
        dim,
        lambda: settings.lambda,
        params: net.into_params(mean_in, scale_in, mean_out, scale_out),
        loss_history: history,
    };
    model.validate()?;
    Ok(model)
}

/// Maps every frame of `motion` independently.
pub fn apply_debias(model: &DebiasModel, motion: &Motion) -> Result<Motion> {
    motion.validate()?;
    check_len(model.dim, motion.pose_dim())?;
    let frames = motion
        .frames
        .par_iter()
        .map(|p| model.apply_frame(&p.to_vec()).and_then(|v| Pose::from_slice(&v)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Motion::new(motion.frame_time, frames)?;
    out.action_label = motion.action_label.clone();
    Ok(out)
}

/// Mean over frames of the Euclidean distance between pose vectors, with
/// angle differences wrapped.
pub fn mean_frame_error(a: &Motion, b: &Motion) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.pose_dim(), b.pose_dim())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    let total: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(p, q)| {
            let (u, v) = (p.to_vec(), q.to_vec());
            u.iter()
                .zip(&v)
                .enumerate()
                .map(|(i, (x, y))| if i < 3 { (x - y).powi(2) } else { wrap_angle(x - y).powi(2) })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// Largest relative difference between the analytic loss gradient of a
/// network model and central differences with step `1e-5`, on the model's
/// standardized frames. The relative error of a parameter is
/// `|g - g_fd| / max(|g|, |g_fd|, 1e-6)`.
pub fn gradient_check(model: &DebiasModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if model.kind() != DebiasKind::OneHiddenLayer {
        return Err(Error::InvalidArgument("gradient check needs a network model".into()));
    }
    let (x, t) = standardized_batch(model, inputs, targets)?;
    let net = Network::from_params(&model.params);
    let g = net.gradient(&x, &t, model.lambda);
    const STEP: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + STEP;
        let up = probe.loss(&x, &t, model.lambda);
        *probe.param_mut(i) = orig - STEP;
        let down = probe.loss(&x, &t, model.lambda);
        *probe.param_mut(i) = orig;
        let fd = (up - down) / (2.0 * STEP);
        let an = g.get(i);
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
    }
    Ok(worst)
}

fn standardized_batch(model: &DebiasModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len(inputs.len(), targets.len())?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    for v in inputs.iter().chain(targets) {
        check_len(model.dim, v.len())?;
    }
    let (mi, si, mo, so) = standardization(&model.params);
    let x = DMatrix::from_fn(model.dim, inputs.len(), |r, c| inputs[c][r]);
    let t = DMatrix::from_fn(model.dim, targets.len(), |r, c| targets[c][r]);
    Ok((standardize(&x, mi, si), standardize(&t, mo, so)))
}

/// Analytic gradient blocks `(dW1, db1, dW2, db2)` as row-major vectors.
pub fn network_gradient(
    model: &DebiasModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<(Matrix, Vec<f64>, Matrix, Vec<f64>)> {
    if model.kind() != DebiasKind::OneHiddenLayer {
        return Err(Error::InvalidArgument("gradient needs a network model".into()));
    }
    let (x, t) = standardized_batch(model, inputs, targets)?;
    let g = Network::from_params(&model.params).gradient(&x, &t, model.lambda);
    Ok((
        Matrix::from_dmatrix(&g.w1),
        g.b1.as_slice().to_vec(),
        Matrix::from_dmatrix(&g.w2),
        g.b2.as_slice().to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_motion(frames: usize, joints: usize, seed: u64) -> Motion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = (0..frames)
            .map(|_| {
                let v: Vec<f64> = (0..3 + 3 * joints).map(|_| rng.random_range(-1.0..1.0)).collect();
                Pose::from_slice(&v).unwrap()
            })
            .collect();
        Motion::new(1.0 / 30.0, poses).unwrap()
    }

    fn map_motion(m: &Motion, f: impl Fn(&[f64]) -> Vec<f64>) -> Motion {
        let frames = m.frames.iter().map(|p| Pose::from_slice(&f(&p.to_vec())).unwrap()).collect();
        Motion::new(m.frame_time, frames).unwrap()
    }

    #[test]
    fn identity_pairs_give_identity() {
        let m = random_motion(40, 2, 1);
        let pairs = vec![TrainingPair::new(m.clone(), m.clone()).unwrap()];
        let s = DebiasSettings { lambda: 0.0, ..Default::default() };
        let model = fit_debias(&pairs, &s, 0).unwrap();
        let out = apply_debias(&model, &m).unwrap();
        for (a, b) in out.frames.iter().zip(&m.frames) {
            for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_offset_is_recovered() {
        let clean = random_motion(50, 2, 2);
        let c: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let biased = map_motion(&clean, |v| v.iter().zip(&c).map(|(x, o)| x + o).collect());
        let pairs = vec![TrainingPair::new(biased.clone(), clean.clone()).unwrap()];
        let s = DebiasSettings { lambda: 1e-8, ..Default::default() };
        let model = fit_debias(&pairs, &s, 0).unwrap();
        let DebiasParams::Affine { weight, bias } = &model.params else { panic!() };
        let w = weight.to_dmatrix();
        assert!((w - DMatrix::identity(9, 9)).amax() < 1e-6);
        for (b, o) in bias.iter().zip(&c) {
            assert!((b + o).abs() < 1e-6);
        }
        let fixed = apply_debias(&model, &biased).unwrap();
        for (a, b) in fixed.frames.iter().zip(&clean.frames) {
            for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(normal_equation_residual(&model, &pairs).unwrap() < 1e-8);
    }

    #[test]
    fn network_loss_never_increases() {
        let clean = random_motion(30, 1, 3);
        let biased = map_motion(&clean, |v| v.iter().map(|x| 0.9 * x + 0.05).collect());
        let pairs = vec![TrainingPair::new(biased, clean).unwrap()];
        let s = DebiasSettings {
            kind: DebiasKind::OneHiddenLayer,
            hidden: 16,
            epochs: 50,
            lambda: 1e-4,
            ..Default::default()
        };
        let model = fit_debias(&pairs, &s, 4).unwrap();
        assert!(model.loss_history.len() > 10);
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(model.loss_history.last().unwrap() < &(0.5 * model.loss_history[0]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = DebiasModel::random_network(4, 6, 1e-3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut frame = || (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let xs: Vec<_> = (0..10).map(|_| frame()).collect();
        let ts: Vec<_> = (0..10).map(|_| frame()).collect();
        let err = gradient_check(&model, &xs, &ts).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = DebiasModel::random_network(3, 4, 0.0, 1);
        model.save(&path).unwrap();
        assert_eq!(DebiasModel::load(&path).unwrap(), model);
        let m = random_motion(3, 2, 0);
        assert!(matches!(apply_debias(&model, &m), Err(Error::Dimension { .. })));
    }
}
