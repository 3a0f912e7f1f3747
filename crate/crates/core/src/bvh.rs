//! Skeleton and motion model plus BVH (Biovision Hierarchy) reading, writing,
//! resampling and time warping.
//!
//! Angles are stored in radians. BVH files carry degrees; conversion happens
//! only in [`parse_bvh`] and [`write_bvh`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single BVH channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    /// Axis index: 0 for X, 1 for Y, 2 for Z.
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(
            self,
            Channel::Xrotation | Channel::Yrotation | Channel::Zrotation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vector3<f64>,
    pub channels: Vec<Channel>,
    /// Offset of the BVH `End Site` below this joint, if any.
    pub end_site: Option<Vector3<f64>>,
}

impl Joint {
    pub fn is_end_effector(&self) -> bool {
        self.end_site.is_some()
    }

    /// Rotation axes in declaration order; the local rotation is
    /// `R(axis[0]) * R(axis[1]) * R(axis[2])`.
    pub fn rotation_order(&self) -> [usize; 3] {
        let mut order = [0; 3];
        for (slot, ch) in order
            .iter_mut()
            .zip(self.channels.iter().filter(|c| c.is_rotation()))
        {
            *slot = ch.axis();
        }
        order
    }
}

/// Joint hierarchy. Joints are stored in depth-first pre-order (the order
/// BVH declares them), so the root is always index 0 and every parent
/// precedes its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("skeleton has no joints".into()));
        }
        for (i, joint) in joints.iter().enumerate() {
            match (i, joint.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::Skeleton("first joint must be the root".into()))
                }
                (_, None) => {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' is a second root",
                        joint.name
                    )))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' precedes its parent",
                        joint.name
                    )))
                }
                (_, Some(p)) => {
                    // depth-first pre-order: the parent is the previous joint
                    // or one of its ancestors
                    let mut cursor = Some(i - 1);
                    while let Some(c) = cursor {
                        if c == p {
                            break;
                        }
                        cursor = joints[c].parent;
                    }
                    if cursor.is_none() {
                        return Err(Error::Skeleton(format!(
                            "joint '{}' breaks depth-first joint order",
                            joint.name
                        )));
                    }
                }
            }
            let finite = joint.offset.iter().all(|v| v.is_finite())
                && joint
                    .end_site
                    .is_none_or(|e| e.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Skeleton(format!(
                    "joint '{}' has a non-finite offset",
                    joint.name
                )));
            }
            let mut seen = [false; 6];
            for ch in &joint.channels {
                let slot = *ch as usize;
                if seen[slot] {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' repeats channel {}",
                        joint.name,
                        ch.label()
                    )));
                }
                seen[slot] = true;
            }
            let rotations = joint.channels.iter().filter(|c| c.is_rotation()).count();
            let positions = joint.channels.len() - rotations;
            let valid = rotations == 3 && (positions == 0 || (i == 0 && positions == 3));
            if !valid {
                return Err(Error::Skeleton(format!(
                    "joint '{}' must have 3 rotation channels (root may add 3 position channels)",
                    joint.name
                )));
            }
            if joints[..i].iter().any(|j| j.name == joint.name) {
                return Err(Error::Skeleton(format!(
                    "duplicate joint name '{}'",
                    joint.name
                )));
            }
        }
        Ok(Skeleton { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, index: usize) -> &Joint {
        &self.joints[index]
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root_index(&self) -> usize {
        0
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn children(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == Some(index))
            .map(|(i, _)| i)
    }

    /// Total number of BVH channels per frame.
    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    /// Width of the flattened pose vector: root translation plus three
    /// angles per joint.
    pub fn pose_dim(&self) -> usize {
        3 + 3 * self.joints.len()
    }

    /// Same names, parents, channels and end-effector tags; offsets compared
    /// within `tol`.
    pub fn same_structure(&self, other: &Skeleton, tol: f64) -> bool {
        self.joints.len() == other.joints.len()
            && self.joints.iter().zip(&other.joints).all(|(a, b)| {
                a.name == b.name
                    && a.parent == b.parent
                    && a.channels == b.channels
                    && (a.offset - b.offset).amax() <= tol
                    && match (a.end_site, b.end_site) {
                        (None, None) => true,
                        (Some(x), Some(y)) => (x - y).amax() <= tol,
                        _ => false,
                    }
            })
    }
}

/// One frame: root translation plus per-joint Euler angles (radians) in each
/// joint's rotation-channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root_translation: Vector3<f64>,
    pub joint_angles: Vec<[f64; 3]>,
}

impl Pose {
    pub fn zeros(joint_count: usize) -> Self {
        Pose {
            root_translation: Vector3::zeros(),
            joint_angles: vec![[0.0; 3]; joint_count],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_angles.len()
    }

    pub fn dim(&self) -> usize {
        3 + 3 * self.joint_angles.len()
    }

    /// Flattened `[tx, ty, tz, j0a0, j0a1, j0a2, j1a0, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.root_translation.iter());
        for angles in &self.joint_angles {
            out.extend_from_slice(angles);
        }
        out
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 3 || !(values.len() - 3).is_multiple_of(3) {
            return Err(Error::Motion(format!(
                "pose vector of length {} is not 3 + 3*joints",
                values.len()
            )));
        }
        Ok(Pose {
            root_translation: Vector3::new(values[0], values[1], values[2]),
            joint_angles: values[3..]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.root_translation.iter().all(|v| v.is_finite())
            && self.joint_angles.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub frame_time: f64,
    pub frames: Vec<Pose>,
    pub action_label: Option<String>,
}

impl Motion {
    pub fn new(frame_time: f64, frames: Vec<Pose>) -> Result<Self> {
        let motion = Motion {
            frame_time,
            frames,
            action_label: None,
        };
        motion.validate()?;
        Ok(motion)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.action_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_time > 0.0 && self.frame_time.is_finite()) {
            return Err(Error::Motion(format!(
                "frame time must be positive, got {}",
                self.frame_time
            )));
        }
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::Motion("motion has no frames".into()))?;
        let joints = first.joint_count();
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.joint_count() != joints {
                return Err(Error::Motion(format!(
                    "frame {i} has {} joints, expected {joints}",
                    frame.joint_count()
                )));
            }
            if !frame.is_finite() {
                return Err(Error::Motion(format!("frame {i} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Checks the motion against a skeleton's joint count.
    pub fn check_skeleton(&self, skeleton: &Skeleton) -> Result<()> {
        match self.frames.first() {
            Some(f) if f.joint_count() != skeleton.len() => Err(Error::Dimension {
                expected: skeleton.pose_dim(),
                found: f.dim(),
            }),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time between the first and the last frame.
    pub fn duration(&self) -> f64 {
        self.frames.len().saturating_sub(1) as f64 * self.frame_time
    }

    pub fn pose_dim(&self) -> usize {
        self.frames.first().map_or(0, Pose::dim)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

// ---------------------------------------------------------------------------
// Parsing

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: &[(usize, &'a str)]) -> Self {
        let items = lines
            .iter()
            .flat_map(|&(n, l)| l.split_whitespace().map(move |t| (n, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map_or(1, |t| t.0)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        let line = self.line();
        let tok = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::parse(line, format!("unexpected end of hierarchy, expected {what}")))?;
        self.pos += 1;
        Ok(tok.1)
    }

    fn expect(&mut self, keyword: &str) -> Result<()> {
        let line = self.line();
        let tok = self.next(keyword)?;
        if tok != keyword {
            return Err(Error::parse(
                line,
                format!("expected '{keyword}', found '{tok}'"),
            ));
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let line = self.line();
        let tok = self.next(what)?;
        parse_number(tok, line)
    }

    fn vector(&mut self, what: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(
            self.number(what)?,
            self.number(what)?,
            self.number(what)?,
        ))
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("'{tok}' is not finite")));
    }
    Ok(v)
}

fn parse_joint(tokens: &mut Tokens<'_>, parent: Option<usize>, joints: &mut Vec<Joint>) -> Result<()> {
    let name = tokens.next("joint name")?.to_string();
    tokens.expect("{")?;
    tokens.expect("OFFSET")?;
    let offset = tokens.vector("OFFSET value")?;
    tokens.expect("CHANNELS")?;
    let line = tokens.line();
    let count = tokens.next("channel count")?;
    let count: usize = count
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid channel count '{count}'")))?;
    let mut channels = Vec::with_capacity(count);
    for _ in 0..count {
        let line = tokens.line();
        let label = tokens.next("channel label")?;
        channels.push(
            Channel::from_label(label)
                .ok_or_else(|| Error::parse(line, format!("unknown channel '{label}'")))?,
        );
    }
    let index = joints.len();
    joints.push(Joint {
        name,
        parent,
        offset,
        channels,
        end_site: None,
    });
    loop {
        let line = tokens.line();
        match tokens.next("'}'")? {
            "JOINT" => parse_joint(tokens, Some(index), joints)?,
            "End" => {
                tokens.expect("Site")?;
                tokens.expect("{")?;
                tokens.expect("OFFSET")?;
                let end = tokens.vector("End Site OFFSET value")?;
                tokens.expect("}")?;
                if joints[index].end_site.replace(end).is_some() {
                    return Err(Error::parse(line, "joint has two End Sites"));
                }
            }
            "}" => return Ok(()),
            other => {
                return Err(Error::parse(
                    line,
                    format!("unexpected '{other}' in joint body"),
                ))
            }
        }
    }
}

/// Reorders raw channel values of one frame into a [`Pose`]; degrees are
/// converted to radians.
fn pose_from_channels(skeleton: &Skeleton, row: &[f64]) -> Pose {
    let mut pose = Pose::zeros(skeleton.len());
    let mut k = 0;
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let mut slot = 0;
        for ch in &joint.channels {
            if ch.is_rotation() {
                pose.joint_angles[j][slot] = row[k].to_radians();
                slot += 1;
            } else {
                pose.root_translation[ch.axis()] = row[k];
            }
            k += 1;
        }
    }
    pose
}

fn channels_from_pose(skeleton: &Skeleton, pose: &Pose, out: &mut Vec<f64>) {
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let mut slot = 0;
        for ch in &joint.channels {
            if ch.is_rotation() {
                out.push(pose.joint_angles[j][slot].to_degrees());
                slot += 1;
            } else {
                out.push(pose.root_translation[ch.axis()]);
            }
        }
    }
}

/// Parses a complete BVH document.
pub fn parse_bvh(text: &str) -> Result<(Skeleton, Motion)> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .collect();
    let motion_at = lines
        .iter()
        .position(|(_, l)| *l == "MOTION")
        .ok_or_else(|| Error::parse(lines.len().max(1), "missing MOTION section"))?;

    let mut tokens = Tokens::new(&lines[..motion_at]);
    tokens.expect("HIERARCHY")?;
    tokens.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut tokens, None, &mut joints)?;
    if let Some(extra) = tokens.peek() {
        return Err(Error::parse(
            tokens.line(),
            format!("unexpected '{extra}' after root joint (unbalanced braces or second root)"),
        ));
    }
    let skeleton = Skeleton::new(joints)?;

    let mut body = lines[motion_at + 1..]
        .iter()
        .filter(|(_, l)| !l.is_empty());
    let (n, frames_line) = body
        .next()
        .ok_or_else(|| Error::parse(motion_at + 1, "missing 'Frames:' line"))?;
    let declared: usize = frames_line
        .strip_prefix("Frames:")
        .ok_or_else(|| Error::parse(*n, "expected 'Frames:'"))?
        .trim()
        .parse()
        .map_err(|_| Error::parse(*n, "invalid frame count"))?;
    let (n, time_line) = body
        .next()
        .ok_or_else(|| Error::parse(*n + 1, "missing 'Frame Time:' line"))?;
    let frame_time = parse_number(
        time_line
            .strip_prefix("Frame Time:")
            .ok_or_else(|| Error::parse(*n, "expected 'Frame Time:'"))?
            .trim(),
        *n,
    )?;

    let width = skeleton.channel_count();
    let mut frames = Vec::with_capacity(declared);
    let mut row = Vec::with_capacity(width);
    for (n, line) in body {
        row.clear();
        for tok in line.split_whitespace() {
            row.push(parse_number(tok, *n)?);
        }
        if row.len() != width {
            return Err(Error::parse(
                *n,
                format!("frame has {} values, expected {width}", row.len()),
            ));
        }
        frames.push(pose_from_channels(&skeleton, &row));
    }
    if frames.len() != declared {
        return Err(Error::parse(
            lines.len(),
            format!("declared {declared} frames but found {}", frames.len()),
        ));
    }
    let motion = Motion::new(frame_time, frames)?;
    Ok((skeleton, motion))
}

fn write_joint(skeleton: &Skeleton, index: usize, depth: usize, out: &mut String) {
    let joint = skeleton.joint(index);
    let indent = "\t".repeat(depth);
    let keyword = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{indent}{keyword} {}", joint.name);
    let _ = writeln!(out, "{indent}{{");
    let o = joint.offset;
    let _ = writeln!(out, "{indent}\tOFFSET {:.6} {:.6} {:.6}", o.x, o.y, o.z);
    let labels: Vec<&str> = joint.channels.iter().map(|c| c.label()).collect();
    let _ = writeln!(
        out,
        "{indent}\tCHANNELS {} {}",
        joint.channels.len(),
        labels.join(" ")
    );
    for child in skeleton.children(index) {
        write_joint(skeleton, child, depth + 1, out);
    }
    if let Some(e) = joint.end_site {
        let _ = writeln!(out, "{indent}\tEnd Site");
        let _ = writeln!(out, "{indent}\t{{");
        let _ = writeln!(out, "{indent}\t\tOFFSET {:.6} {:.6} {:.6}", e.x, e.y, e.z);
        let _ = writeln!(out, "{indent}\t}}");
    }
    let _ = writeln!(out, "{indent}}}");
}

/// Serializes a skeleton and motion as BVH text with six-decimal values.
pub fn write_bvh(skeleton: &Skeleton, motion: &Motion) -> Result<String> {
    motion.validate()?;
    motion.check_skeleton(skeleton)?;
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_joint(skeleton, 0, 0, &mut out);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", motion.frames.len());
    let _ = writeln!(out, "Frame Time: {:.8}", motion.frame_time);
    let mut row = Vec::with_capacity(skeleton.channel_count());
    for pose in &motion.frames {
        row.clear();
        channels_from_pose(skeleton, pose, &mut row);
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Reads and parses a BVH file; errors carry the path.
pub fn read_bvh(path: impl AsRef<Path>) -> Result<(Skeleton, Motion)> {
    let path = path.as_ref();
    fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|text| parse_bvh(&text))
        .map_err(|e| e.in_file(path))
}

pub fn write_bvh_file(path: impl AsRef<Path>, skeleton: &Skeleton, motion: &Motion) -> Result<()> {
    let path = path.as_ref();
    write_bvh(skeleton, motion)
        .and_then(|text| fs::write(path, text).map_err(Error::from))
        .map_err(|e| e.in_file(path))
}

// ---------------------------------------------------------------------------
// Resampling

/// Interpolates between two poses: linear on translation, shortest arc on
/// every angle.
pub fn interpolate_pose(a: &Pose, b: &Pose, frac: f64) -> Pose {
    Pose {
        root_translation: a.root_translation + (b.root_translation - a.root_translation) * frac,
        joint_angles: a
            .joint_angles
            .iter()
            .zip(&b.joint_angles)
            .map(|(x, y)| {
                let mut out = [0.0; 3];
                for k in 0..3 {
                    out[k] = x[k] + wrap_angle(y[k] - x[k]) * frac;
                }
                out
            })
            .collect(),
    }
}

/// Samples the motion at a fractional frame position.
fn sample_at(motion: &Motion, position: f64) -> Pose {
    let last = motion.frames.len() - 1;
    let nearest = position.round();
    if (position - nearest).abs() < 1e-9 {
        return motion.frames[(nearest.max(0.0) as usize).min(last)].clone();
    }
    let i = (position.floor().max(0.0) as usize).min(last);
    if i >= last {
        return motion.frames[last].clone();
    }
    interpolate_pose(&motion.frames[i], &motion.frames[i + 1], position - i as f64)
}

/// Resamples to `target_hz`, keeping the first frame and producing
/// `floor(duration * target_hz) + 1` frames.
pub fn resample(motion: &Motion, target_hz: f64) -> Result<Motion> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    if motion.frames.len() < 2 {
        return Err(Error::InvalidArgument(
            "resampling needs at least 2 frames".into(),
        ));
    }
    let count = (motion.duration() * target_hz + 1e-9).floor() as usize + 1;
    let ratio = 1.0 / (target_hz * motion.frame_time);
    let frames = (0..count)
        .map(|k| sample_at(motion, k as f64 * ratio))
        .collect();
    Ok(Motion {
        frame_time: 1.0 / target_hz,
        frames,
        action_label: motion.action_label.clone(),
    })
}

/// Allowed range for [`time_warp`] scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWarpBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for TimeWarpBounds {
    fn default() -> Self {
        TimeWarpBounds { min: 0.9, max: 1.1 }
    }
}

/// Stretches or compresses a motion to `round(T * scale)` frames at the same
/// frame time, with first and last frames kept.
pub fn time_warp(motion: &Motion, scale: f64) -> Result<Motion> {
    time_warp_with_bounds(motion, scale, TimeWarpBounds::default())
}

pub fn time_warp_with_bounds(motion: &Motion, scale: f64, bounds: TimeWarpBounds) -> Result<Motion> {
    if !(scale >= bounds.min && scale <= bounds.max) {
        return Err(Error::InvalidArgument(format!(
            "time-warp scale {scale} outside [{}, {}]",
            bounds.min, bounds.max
        )));
    }
    motion.validate()?;
    let src = motion.frames.len();
    let count = ((src as f64 * scale).round() as usize).max(1);
    let frames = if count == 1 || src == 1 {
        vec![motion.frames[0].clone(); count]
    } else {
        let step = (src - 1) as f64 / (count - 1) as f64;
        (0..count).map(|k| sample_at(motion, k as f64 * step)).collect()
    };
    Ok(Motion {
        frame_time: motion.frame_time,
        frames,
        action_label: motion.action_label.clone(),
    })
}
