//! Batch driver: augment, correct, debias, evaluate, validate and resample
//! directories of BVH files from one JSON config.
//!
//! Every command writes under `<out>/<command>/`. Reports are sorted by file
//! name and contain no timestamps, so a run is a pure function of the
//! config, the input files and the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{read_bvh, resample as resample_motion, time_warp_with_bounds, write_bvh_file, Motion, Skeleton, TimeWarpBounds};
use crate::debias::{apply_debias, fit_debias, mean_frame_error, DebiasKind, DebiasModel, DebiasSettings, TrainingPair};
use crate::error::{Error, Result};
use crate::ik_augment::{synthesize_ik_motion, TargetSamplingSpace};
use crate::kinematics::{FabrikSettings, IkChain};
use crate::latent::{generate_batch, load_embeddings, LinearDecoder, SamplerSettings};
use crate::metrics::{evaluate as score, MetricReport};
use crate::physics::{track_motion, validate_plausibility, ControllerParams, Diagnostic, PlausibilityThresholds, SimCharacter, TrackingSettings};
use crate::seed::{derive_seed, rng_for};

pub const LABELS_FILE: &str = "labels.json";

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub base: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkConfig {
    pub enabled: bool,
    /// Chain per action label; `default` is used for other labels.
    pub chains: BTreeMap<String, ChainSpec>,
    /// Sampling spaces per label, on top of the built-in presets. Labels
    /// without a space use the identity space.
    pub spaces: BTreeMap<String, TargetSamplingSpace>,
    pub time_warp: Option<TimeWarpBounds>,
    pub fabrik: FabrikSettings,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            enabled: true,
            chains: BTreeMap::from([(
                "default".to_string(),
                ChainSpec {
                    base: "LeftUpLeg".into(),
                    end: "LeftFoot".into(),
                },
            )]),
            spaces: BTreeMap::new(),
            time_warp: None,
            fabrik: FabrikSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentConfig {
    pub enabled: bool,
    pub embeddings: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub n_clusters: usize,
    pub n_samples: usize,
    pub reuse_gaussian: bool,
}

impl Default for LatentConfig {
    fn default() -> Self {
        let s = SamplerSettings::default();
        LatentConfig {
            enabled: false,
            embeddings: None,
            decoder: None,
            n_clusters: s.n_clusters,
            n_samples: s.n_samples,
            reuse_gaussian: s.reuse_gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebiasConfig {
    pub kind: DebiasKind,
    pub lambda: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fit one extra model per action label.
    pub per_class: bool,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        let s = DebiasSettings::default();
        DebiasConfig {
            kind: s.kind,
            lambda: s.lambda,
            hidden: s.hidden,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            per_class: false,
        }
    }
}

impl DebiasConfig {
    pub fn settings(&self) -> DebiasSettings {
        DebiasSettings {
            kind: self.kind,
            lambda: self.lambda,
            hidden: self.hidden,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Kernel bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
}

/// Pipeline config file. Relative paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    /// BVH file whose hierarchy every input must share. Defaults to the
    /// first corpus motion.
    pub skeleton: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub multiplier: usize,
    pub ik: IkConfig,
    pub latent: LatentConfig,
    pub controller: ControllerParams,
    pub tracking: TrackingSettings,
    pub validation: PlausibilityThresholds,
    pub debias: DebiasConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            skeleton: None,
            output_dir: None,
            seed: None,
            multiplier: 10,
            ik: IkConfig::default(),
            latent: LatentConfig::default(),
            controller: ControllerParams::default(),
            tracking: TrackingSettings::default(),
            validation: PlausibilityThresholds::default(),
            debias: DebiasConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_error)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.skeleton,
            &mut self.output_dir,
            &mut self.latent.embeddings,
            &mut self.latent.decoder,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn check(&self) -> Result<()> {
        for space in self.ik.spaces.values() {
            space.validate().map_err(config_error)?;
        }
        if let Some(b) = self.ik.time_warp {
            if !(b.min > 0.0 && b.min <= b.max && b.max.is_finite()) {
                return Err(config_error("time_warp needs 0 < min <= max"));
            }
        }
        self.tracking.reward.validate().map_err(config_error)?;
        if !(self.tracking.dt > 0.0 && self.tracking.dt <= 0.01) {
            return Err(config_error("tracking.dt must lie in (0, 0.01]"));
        }
        if let Some(bw) = self.metrics.bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(config_error("metrics.bandwidth must be positive"));
            }
        }
        if self.latent.enabled {
            if self.latent.n_clusters == 0 || self.latent.n_samples == 0 {
                return Err(config_error("latent n_clusters and n_samples must be positive"));
            }
            for (name, path) in [("embeddings", &self.latent.embeddings), ("decoder", &self.latent.decoder)] {
                match path {
                    Some(p) if p.exists() => {}
                    Some(p) => return Err(config_error(format!("latent {name} {} does not exist", p.display()))),
                    None => return Err(config_error(format!("latent synthesis needs an {name} file"))),
                }
            }
        }
        for path in [&self.corpus, &self.skeleton].into_iter().flatten() {
            if !path.exists() {
                return Err(config_error(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    /// Defaults to the file stem.
    #[serde(default)]
    pub id: Option<String>,
    pub path: PathBuf,
    #[serde(default)]
    pub label: Option<String>,
    pub split: Split,
}

/// `{"motions": [{"path", "label", "split"}]}`, paths relative to the
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub motions: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMotion {
    pub id: String,
    pub label: Option<String>,
    pub split: Split,
    pub motion: Motion,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub skeleton: Skeleton,
    /// Sorted by id.
    pub motions: Vec<CorpusMotion>,
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::from(e).in_file(manifest_path))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| config_error(format!("{}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut skeleton: Option<Skeleton> = None;
        let mut motions = Vec::new();
        for entry in manifest.motions {
            let path = base.join(&entry.path);
            if !path.exists() {
                return Err(config_error(format!("corpus file {} does not exist", path.display())));
            }
            let (skel, mut motion) = read_bvh(&path)?;
            match &skeleton {
                Some(s) if !s.same_structure(&skel, 1e-9) => {
                    return Err(Error::Skeleton("hierarchy differs from the first corpus motion".into()).in_file(&path))
                }
                Some(_) => {}
                None => skeleton = Some(skel),
            }
            motion.action_label = entry.label.clone();
            let id = entry.id.unwrap_or_else(|| file_stem(&path));
            motions.push(CorpusMotion {
                id,
                label: entry.label,
                split: entry.split,
                motion,
            });
        }
        let skeleton = skeleton.ok_or_else(|| config_error("corpus has no motions"))?;
        motions.sort_by(|a, b| a.id.cmp(&b.id));
        if motions.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(config_error("corpus motion ids are not unique"));
        }
        Ok(Corpus { skeleton, motions })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusMotion> {
        self.motions.iter().filter(move |m| m.split == split)
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Context

/// Resolved config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl Pipeline {
    /// `seed` and `out` override the config values.
    pub fn new(config_path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let config = match config_path {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
                let mut config: PipelineConfig = serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
                config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
                config
            }
            None => PipelineConfig::default(),
        };
        Self::from_config(config, seed, out)
    }

    pub fn from_config(config: PipelineConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        config.check()?;
        let out_dir = out
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Pipeline {
            seed: seed.or(config.seed),
            config,
            out_dir,
        })
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| config_error("no seed given in the config or on the command line"))
    }

    fn corpus(&self) -> Result<Corpus> {
        let path = self
            .config
            .corpus
            .as_ref()
            .ok_or_else(|| config_error("config names no corpus manifest"))?;
        Corpus::load(path)
    }

    /// Configured skeleton, else the corpus skeleton, else none.
    fn reference_skeleton(&self) -> Result<Option<Skeleton>> {
        if let Some(path) = &self.config.skeleton {
            return Ok(Some(read_bvh(path)?.0));
        }
        if self.config.corpus.is_some() {
            return Ok(Some(self.corpus()?.skeleton));
        }
        Ok(None)
    }

    fn command_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out_dir.join(name);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

// ---------------------------------------------------------------------------
// Shared I/O

#[derive(Debug, Clone)]
pub struct InputMotion {
    pub name: String,
    pub skeleton: Skeleton,
    pub motion: Motion,
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(config_error(format!("{what} directory {} does not exist", dir.display())))
    }
}

/// `.bvh` file names in `dir`, sorted.
pub fn bvh_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh")) {
            names.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn read_labels(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(LABELS_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))
}

fn write_labels(dir: &Path, labels: &BTreeMap<String, String>) -> Result<()> {
    if !labels.is_empty() {
        write_json(&dir.join(LABELS_FILE), labels)?;
    }
    Ok(())
}

/// Reads every BVH file in `dir`, attaching labels from `labels.json`.
pub fn read_bvh_dir(dir: &Path) -> Result<Vec<InputMotion>> {
    let labels = read_labels(dir)?;
    bvh_files(dir)?
        .into_par_iter()
        .map(|name| {
            let (skeleton, mut motion) = read_bvh(dir.join(&name))?;
            motion.action_label = labels.get(&name).cloned();
            Ok(InputMotion { name, skeleton, motion })
        })
        .collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn check_against(reference: Option<&Skeleton>, skeleton: &Skeleton) -> Result<()> {
    match reference {
        Some(r) if !r.same_structure(skeleton, 1e-9) => {
            Err(Error::Skeleton("hierarchy differs from the configured skeleton".into()))
        }
        _ => Ok(()),
    }
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    let ms = start.elapsed().as_secs_f64() * 1e3;
    match &out {
        Ok(_) => log::info!("{what}: ok ({ms:.1} ms)"),
        Err(e) => log::warn!("{what}: {e} ({ms:.1} ms)"),
    }
    out
}

// ---------------------------------------------------------------------------
// augment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub file: String,
    pub method: String,
    pub source_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyframe: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_target: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_warp: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unreachable_frames: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub seed: u64,
    pub multiplier: usize,
    pub train: Vec<String>,
    pub outputs: Vec<AugmentRecord>,
    pub failures: Vec<SoftFailure>,
}

fn sampling_spaces(config: &IkConfig) -> BTreeMap<String, TargetSamplingSpace> {
    let mut spaces = TargetSamplingSpace::presets();
    spaces.extend(config.spaces.clone());
    spaces
}

/// Writes `multiplier` IK variants of every training motion to `ik/` and,
/// when enabled, `multiplier x |train|` decoded latent samples to `latent/`.
pub fn augment(p: &Pipeline) -> Result<AugmentManifest> {
    let seed = p.require_seed()?;
    let corpus = p.corpus()?;
    let skel = &corpus.skeleton;
    let train: Vec<&CorpusMotion> = corpus.split(Split::Train).collect();
    let dir = p.command_dir("augment")?;
    let cfg = &p.config;
    let mut outputs = Vec::new();
    let mut failures = Vec::new();

    if cfg.ik.enabled && cfg.multiplier > 0 {
        let ik_dir = dir.join("ik");
        fs::create_dir_all(&ik_dir)?;
        let spaces = sampling_spaces(&cfg.ik);
        let jobs: Vec<(usize, usize)> = (0..train.len())
            .flat_map(|i| (0..cfg.multiplier).map(move |j| (i, j)))
            .collect();
        let results: Vec<Result<AugmentRecord>> = jobs
            .par_iter()
            .map(|&(i, j)| {
                let src = train[i];
                let file = format!("{}_ik{:02}.bvh", src.id, j);
                timed(&format!("augment {file}"), || {
                    let label = src.label.as_deref().unwrap_or("default");
                    let spec = cfg
                        .ik
                        .chains
                        .get(label)
                        .or_else(|| cfg.ik.chains.get("default"))
                        .ok_or_else(|| config_error(format!("no IK chain for label {label}")))?;
                    let chain = IkChain::from_names(skel, &spec.base, &spec.end).map_err(config_error)?;
                    let space = spaces.get(label).copied().unwrap_or_else(TargetSamplingSpace::identity);
                    let motion_seed = derive_seed(seed, &[0, i as u64, j as u64]);
                    let mut rng = rng_for(motion_seed, &[]);
                    let aug = synthesize_ik_motion(skel, &src.motion, &chain, &space, cfg.ik.fabrik, &mut rng)?;
                    let (motion, warp) = match cfg.ik.time_warp {
                        Some(bounds) => {
                            let scale = rng.random_range(bounds.min..=bounds.max);
                            (time_warp_with_bounds(&aug.motion, scale, bounds)?, Some(scale))
                        }
                        None => (aug.motion, None),
                    };
                    write_bvh_file(ik_dir.join(&file), skel, &motion)?;
                    Ok(AugmentRecord {
                        file: format!("ik/{file}"),
                        method: "ik".into(),
                        source_id: src.id.clone(),
                        label: src.label.clone(),
                        seed: motion_seed,
                        keyframe: Some(aug.keyframe.t_key),
                        sampled_target: Some(aug.sampled_target.into()),
                        time_warp: warp,
                        unreachable_frames: aug.unreachable_frames,
                        z: None,
                        cluster: None,
                        diagnostics: validate_plausibility(skel, &motion, &cfg.validation)?,
                    })
                })
                .map_err(|e| match e {
                    Error::Config(_) => e,
                    other => Error::InvalidArgument(format!("{}: {other}", file)),
                })
            })
            .collect();
        for r in results {
            match r {
                Ok(rec) => outputs.push(rec),
                Err(e @ Error::Config(_)) => return Err(e),
                Err(e) => failures.push(SoftFailure {
                    item: "ik".into(),
                    error: e.to_string(),
                }),
            }
        }
        let labels: BTreeMap<String, String> = outputs
            .iter()
            .filter_map(|r| Some((r.file.trim_start_matches("ik/").to_string(), r.label.clone()?)))
            .collect();
        write_labels(&ik_dir, &labels)?;
    }

    if cfg.latent.enabled && cfg.multiplier > 0 && !train.is_empty() {
        let latent_dir = dir.join("latent");
        fs::create_dir_all(&latent_dir)?;
        let embeddings = load_embeddings(cfg.latent.embeddings.as_ref().expect("checked at load"))?;
        let decoder = LinearDecoder::load(cfg.latent.decoder.as_ref().expect("checked at load"))?;
        if decoder.joints != skel.len() {
            return Err(config_error(format!(
                "decoder produces {} joints but the skeleton has {}",
                decoder.joints,
                skel.len()
            )));
        }
        let settings = SamplerSettings {
            n_clusters: cfg.latent.n_clusters,
            n_samples: cfg.latent.n_samples,
            reuse_gaussian: cfg.latent.reuse_gaussian,
        };
        let count = cfg.multiplier * train.len();
        let batch_seed = derive_seed(seed, &[1]);
        let batch = generate_batch(&embeddings, &decoder, settings, count, batch_seed)?;
        for (k, g) in batch.into_iter().enumerate() {
            let file = format!("latent_{k:04}.bvh");
            write_bvh_file(latent_dir.join(&file), skel, &g.motion)?;
            outputs.push(AugmentRecord {
                file: format!("latent/{file}"),
                method: "latent".into(),
                source_id: format!("cluster{}", g.cluster),
                label: None,
                seed: batch_seed,
                keyframe: None,
                sampled_target: None,
                time_warp: None,
                unreachable_frames: Vec::new(),
                diagnostics: validate_plausibility(skel, &g.motion, &cfg.validation)?,
                z: Some(g.z),
                cluster: Some(g.cluster),
            });
        }
    }

    outputs.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = AugmentManifest {
        seed,
        multiplier: cfg.multiplier,
        train: train.iter().map(|m| m.id.clone()).collect(),
        outputs,
        failures,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// correct

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectRow {
    pub file: String,
    pub frames: usize,
    pub normalized_reward: Option<f64>,
    pub diagnostics: usize,
    pub diagnostic_types: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectEntry {
    #[serde(flatten)]
    pub row: CorrectRow,
    pub details: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectReport {
    pub motions: Vec<CorrectEntry>,
    /// Tracked corpus training motions written as debias pairs.
    pub pairs: Vec<String>,
}

fn track(p: &Pipeline, skeleton: &Skeleton, motion: &Motion) -> Result<crate::physics::Tracking> {
    let character = SimCharacter::for_skeleton(skeleton, &p.config.controller).map_err(config_error)?;
    let settings = p.config.tracking.matching(motion.frame_time);
    track_motion(&character, skeleton, motion, &settings, &p.config.validation)
}

fn correct_entry(name: &str, result: &Result<crate::physics::Tracking>, frames: usize) -> CorrectEntry {
    match result {
        Ok(t) => {
            let mut types: Vec<&str> = t.diagnostics.iter().map(|d| d.kind.label()).collect();
            types.dedup();
            CorrectEntry {
                row: CorrectRow {
                    file: name.to_string(),
                    frames,
                    normalized_reward: Some(t.normalized_reward),
                    diagnostics: t.diagnostics.len(),
                    diagnostic_types: types.join(";"),
                    status: "ok".into(),
                },
                details: t.diagnostics.clone(),
            }
        }
        Err(e) => CorrectEntry {
            row: CorrectRow {
                file: name.to_string(),
                frames,
                normalized_reward: None,
                diagnostics: 0,
                diagnostic_types: String::new(),
                status: format!("failed: {e}"),
            },
            details: Vec::new(),
        },
    }
}

/// Tracks every motion in `input` and writes the results to `rectified/`.
/// With a corpus configured, also tracks the training motions and writes
/// `pairs/biased` and `pairs/unbiased` for [`debias`].
pub fn correct(p: &Pipeline, input: &Path) -> Result<CorrectReport> {
    require_dir(input, "input")?;
    let reference = p.reference_skeleton()?;
    let dir = p.command_dir("correct")?;
    let out = dir.join("rectified");
    fs::create_dir_all(&out)?;
    let labels = read_labels(input)?;
    let names = bvh_files(input)?;
    let motions: Vec<CorrectEntry> = names
        .par_iter()
        .map(|name| {
            let mut frames = 0;
            let result = timed(&format!("correct {name}"), || {
                let (skel, goal) = read_bvh(input.join(name))?;
                frames = goal.len();
                check_against(reference.as_ref(), &skel)?;
                let t = track(p, &skel, &goal)?;
                write_bvh_file(out.join(name), &skel, &t.motion)?;
                Ok(t)
            });
            correct_entry(name, &result, frames)
        })
        .collect();
    let kept: BTreeMap<String, String> = labels
        .into_iter()
        .filter(|(n, _)| motions.iter().any(|m| &m.row.file == n && m.row.status == "ok"))
        .collect();
    write_labels(&out, &kept)?;

    let mut pairs = Vec::new();
    if p.config.corpus.is_some() {
        let corpus = p.corpus()?;
        let biased = dir.join("pairs").join("biased");
        let unbiased = dir.join("pairs").join("unbiased");
        fs::create_dir_all(&biased)?;
        fs::create_dir_all(&unbiased)?;
        let train: Vec<&CorpusMotion> = corpus.split(Split::Train).collect();
        let tracked: Vec<Result<Motion>> = train
            .par_iter()
            .map(|m| timed(&format!("track {}", m.id), || Ok(track(p, &corpus.skeleton, &m.motion)?.motion)))
            .collect();
        let mut pair_labels = BTreeMap::new();
        for (m, t) in train.iter().zip(tracked) {
            let name = format!("{}.bvh", m.id);
            write_bvh_file(biased.join(&name), &corpus.skeleton, &t?)?;
            write_bvh_file(unbiased.join(&name), &corpus.skeleton, &m.motion)?;
            if let Some(l) = &m.label {
                pair_labels.insert(name.clone(), l.clone());
            }
            pairs.push(name);
        }
        write_labels(&biased, &pair_labels)?;
    }

    let rows: Vec<CorrectRow> = motions.iter().map(|m| m.row.clone()).collect();
    write_csv(
        &dir.join("report.csv"),
        &rows,
        &["file", "frames", "normalized_reward", "diagnostics", "diagnostic_types", "status"],
    )?;
    let report = CorrectReport { motions, pairs };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// debias

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub file: String,
    pub error_before: f64,
    pub error_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    pub kind: DebiasKind,
    pub pairs: Vec<String>,
    pub held_out: Option<HeldOut>,
    pub per_class: Vec<String>,
    pub outputs: Vec<String>,
}

fn load_pairs(pairs_dir: &Path) -> Result<Vec<(String, TrainingPair, Option<String>)>> {
    require_dir(pairs_dir, "pairs")?;
    let biased_dir = pairs_dir.join("biased");
    let unbiased_dir = pairs_dir.join("unbiased");
    require_dir(&biased_dir, "pairs/biased")?;
    require_dir(&unbiased_dir, "pairs/unbiased")?;
    let biased = read_bvh_dir(&biased_dir)?;
    let unbiased = read_bvh_dir(&unbiased_dir)?;
    let names_b: Vec<&str> = biased.iter().map(|m| m.name.as_str()).collect();
    let names_u: Vec<&str> = unbiased.iter().map(|m| m.name.as_str()).collect();
    if names_b != names_u {
        return Err(config_error("pairs/biased and pairs/unbiased hold different file names"));
    }
    biased
        .into_iter()
        .zip(unbiased)
        .map(|(b, u)| {
            let label = b.motion.action_label.clone();
            let pair = TrainingPair::new(b.motion, u.motion).map_err(|e| e.in_file(biased_dir.join(&b.name)))?;
            Ok((b.name, pair, label))
        })
        .collect()
}

/// Fits a debias model on `pairs/{biased,unbiased}` and applies it to every
/// motion in `input`. With two or more pairs, the error on the last pair is
/// also reported for a model fitted without it.
pub fn debias(p: &Pipeline, pairs_dir: &Path, input: &Path) -> Result<DebiasReport> {
    require_dir(input, "input")?;
    let seed = p.require_seed()?;
    let pairs = load_pairs(pairs_dir)?;
    if pairs.is_empty() {
        return Err(config_error(format!("no pairs in {}", pairs_dir.display())));
    }
    let settings = p.config.debias.settings();
    let all: Vec<TrainingPair> = pairs.iter().map(|(_, pair, _)| pair.clone()).collect();
    let held_out = if all.len() >= 2 {
        let (name, last, _) = pairs.last().unwrap();
        let model = fit_debias(&all[..all.len() - 1], &settings, derive_seed(seed, &[2, 0]))?;
        let fixed = apply_debias(&model, &last.biased)?;
        let h = HeldOut {
            file: name.clone(),
            error_before: mean_frame_error(&last.biased, &last.unbiased)?,
            error_after: mean_frame_error(&fixed, &last.unbiased)?,
        };
        log::info!(
            "held-out {}: framewise error {:.6} -> {:.6}",
            h.file,
            h.error_before,
            h.error_after
        );
        Some(h)
    } else {
        None
    };
    let pooled = fit_debias(&all, &settings, derive_seed(seed, &[2, 1]))?;
    let dir = p.command_dir("debias")?;
    pooled.save(dir.join("model.json"))?;

    let mut per_class: BTreeMap<String, DebiasModel> = BTreeMap::new();
    if p.config.debias.per_class {
        let mut by_label: BTreeMap<String, Vec<TrainingPair>> = BTreeMap::new();
        for (_, pair, label) in &pairs {
            if let Some(l) = label {
                by_label.entry(l.clone()).or_default().push(pair.clone());
            }
        }
        for (k, (label, group)) in by_label.into_iter().enumerate() {
            let model = fit_debias(&group, &settings, derive_seed(seed, &[2, 2, k as u64]))?;
            model.save(dir.join(format!("model_{label}.json")))?;
            per_class.insert(label, model);
        }
    }

    let out = dir.join("motions");
    fs::create_dir_all(&out)?;
    let inputs = read_bvh_dir(input)?;
    let written: Vec<String> = inputs
        .par_iter()
        .map(|m| {
            timed(&format!("debias {}", m.name), || {
                let model = m
                    .motion
                    .action_label
                    .as_ref()
                    .and_then(|l| per_class.get(l))
                    .unwrap_or(&pooled);
                let fixed = apply_debias(model, &m.motion).map_err(|e| e.in_file(input.join(&m.name)))?;
                write_bvh_file(out.join(&m.name), &m.skeleton, &fixed)?;
                Ok(m.name.clone())
            })
        })
        .collect::<Result<_>>()?;
    let labels: BTreeMap<String, String> = inputs
        .iter()
        .filter_map(|m| Some((m.name.clone(), m.motion.action_label.clone()?)))
        .collect();
    write_labels(&out, &labels)?;
    let report = DebiasReport {
        kind: settings.kind,
        pairs: pairs.into_iter().map(|(n, _, _)| n).collect(),
        held_out,
        per_class: per_class.into_keys().collect(),
        outputs: written,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryRow<'a> {
    metric: &'a str,
    value: f64,
}

/// Scores `candidates` against `test` (or the corpus test split) with mean
/// minimum DTW and MMD.
pub fn evaluate(p: &Pipeline, test: Option<&Path>, candidates: &Path) -> Result<MetricReport> {
    require_dir(candidates, "candidate")?;
    let (skeleton, test_set): (Skeleton, Vec<(String, Motion)>) = match test {
        Some(dir) => {
            require_dir(dir, "test")?;
            let motions = read_bvh_dir(dir)?;
            let skel = motions
                .first()
                .map(|m| m.skeleton.clone())
                .ok_or_else(|| config_error(format!("no test motions in {}", dir.display())))?;
            for m in &motions {
                check_against(Some(&skel), &m.skeleton).map_err(|e| e.in_file(dir.join(&m.name)))?;
            }
            (skel, motions.into_iter().map(|m| (m.name, m.motion)).collect())
        }
        None => {
            let corpus = p.corpus()?;
            let set = corpus.split(Split::Test).map(|m| (m.id.clone(), m.motion.clone())).collect();
            (corpus.skeleton, set)
        }
    };
    if test_set.is_empty() {
        return Err(config_error("test set is empty"));
    }
    let cands = read_bvh_dir(candidates)?;
    if cands.is_empty() {
        return Err(config_error(format!("no candidate motions in {}", candidates.display())));
    }
    for m in &cands {
        check_against(Some(&skeleton), &m.skeleton).map_err(|e| e.in_file(candidates.join(&m.name)))?;
    }
    let cand_set: Vec<(String, Motion)> = cands.into_iter().map(|m| (m.name, m.motion)).collect();
    let report = timed("evaluate", || score(&test_set, &cand_set, &skeleton, p.config.metrics.bandwidth))?;
    let dir = p.command_dir("evaluate")?;
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("nearest.csv"), &report.nearest, &["test_id", "nearest_id", "distance"])?;
    write_csv(
        &dir.join("summary.csv"),
        &[
            SummaryRow { metric: "min_dtw", value: report.min_dtw },
            SummaryRow { metric: "mmd", value: report.mmd },
            SummaryRow { metric: "bandwidth", value: report.bandwidth },
        ],
        &["metric", "value"],
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// validate / resample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateEntry {
    pub file: String,
    pub status: String,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct DiagnosticRow<'a> {
    file: &'a str,
    #[serde(rename = "type")]
    kind: &'a str,
    start_frame: usize,
    end_frame: usize,
    magnitude: f64,
}

/// Runs the plausibility validators on every motion in `input`.
pub fn validate(p: &Pipeline, input: &Path) -> Result<Vec<ValidateEntry>> {
    require_dir(input, "input")?;
    let reference = p.reference_skeleton()?;
    let entries: Vec<ValidateEntry> = bvh_files(input)?
        .par_iter()
        .map(|name| {
            let result = timed(&format!("validate {name}"), || {
                let (skel, motion) = read_bvh(input.join(name))?;
                check_against(reference.as_ref(), &skel)?;
                validate_plausibility(&skel, &motion, &p.config.validation)
            });
            match result {
                Ok(d) => ValidateEntry {
                    file: name.clone(),
                    status: "ok".into(),
                    diagnostics: d,
                },
                Err(e) => ValidateEntry {
                    file: name.clone(),
                    status: format!("failed: {e}"),
                    diagnostics: Vec::new(),
                },
            }
        })
        .collect();
    let dir = p.command_dir("validate")?;
    write_json(&dir.join("report.json"), &entries)?;
    let rows: Vec<DiagnosticRow> = entries
        .iter()
        .flat_map(|e| {
            e.diagnostics.iter().map(|d| DiagnosticRow {
                file: &e.file,
                kind: d.kind.label(),
                start_frame: d.start_frame,
                end_frame: d.end_frame,
                magnitude: d.magnitude,
            })
        })
        .collect();
    write_csv(
        &dir.join("diagnostics.csv"),
        &rows,
        &["file", "type", "start_frame", "end_frame", "magnitude"],
    )?;
    Ok(entries)
}

/// Resamples every motion in `input` to `hz` frames per second.
pub fn resample(p: &Pipeline, input: &Path, hz: f64) -> Result<Vec<String>> {
    require_dir(input, "input")?;
    if !(hz > 0.0 && hz.is_finite()) {
        return Err(config_error(format!("target rate {hz} must be positive")));
    }
    let dir = p.command_dir("resample")?;
    let inputs = read_bvh_dir(input)?;
    let written = inputs
        .par_iter()
        .map(|m| {
            timed(&format!("resample {}", m.name), || {
                let out = resample_motion(&m.motion, hz).map_err(|e| e.in_file(input.join(&m.name)))?;
                write_bvh_file(dir.join(&m.name), &m.skeleton, &out)?;
                Ok(m.name.clone())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: BTreeMap<String, String> = inputs
        .iter()
        .filter_map(|m| Some((m.name.clone(), m.motion.action_label.clone()?)))
        .collect();
    write_labels(&dir, &labels)?;
    Ok(written)
}
