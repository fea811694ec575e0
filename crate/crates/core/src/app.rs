//! Subcommand implementations. Every command writes its output directory
//! or file atomically, so a failed run leaves no partial artifacts.
//!
//! Exit codes used by the binary:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime failure (numerics, pipeline) |
//! | 2 | invalid configuration or arguments |
//! | 3 | unreadable or malformed input files |

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::io::ply::{read_ply, write_ply, PointCloud};
use crate::io::{write_dir_atomic, write_json_atomic};
use crate::memory::{MemoryBank, MemoryConfig};
use crate::model::{Model, Pointmap};
use crate::pipeline::{self, ConfidenceScore, Reconstruction, Strategy};
use crate::rng::{stream, Stream};
use crate::scenes::{dump_scene, generate_scene, load_scene, SceneParams, SceneSample};
use crate::tensor::Tensor;
use crate::train::{train, TrainData};

pub const REPORT_VERSION: u32 = 1;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InsufficientLength(_) | Error::OutOfRange(_) => 2,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => 3,
        _ => 1,
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} does not exist", path.display()))))
}

/// Scene seeds for a run, drawn from the data stream.
pub fn scene_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = stream(seed, Stream::Data);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn generate_scenes(seed: u64, n: usize, params: &SceneParams) -> Result<Vec<SceneSample>> {
    scene_seeds(seed, n).into_iter().map(|s| generate_scene(s, params)).collect()
}

fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:04}")
}

pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let scenes = generate_scenes(cfg.seed, cfg.data.n_scenes, &cfg.data.scene)?;
    write_dir_atomic(out_dir, |tmp| {
        for (i, s) in scenes.iter().enumerate() {
            dump_scene(s, &tmp.join(scene_dir_name(i)))?;
        }
        fs::write(tmp.join("config.json"), cfg.to_json()? + "\n")?;
        Ok(())
    })
}

/// Scene directories under `dir`, sorted by name.
pub fn load_scenes(dir: &Path) -> Result<Vec<SceneSample>> {
    require(dir)?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("cameras.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("{} holds no scene directories", dir.display())));
    }
    dirs.iter().map(|d| load_scene(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: u32,
    pub steps: usize,
    pub final_loss: f64,
    pub alpha_warning: bool,
    pub num_params: usize,
}

/// Trains from `data_dir` scenes if given, else from freshly generated ones.
/// Writes `checkpoint/`, `train_log.jsonl`, `config.json` and `summary.json`.
pub fn cmd_train(cfg: &RunConfig, data_dir: Option<&Path>, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let scenes = match data_dir {
        Some(d) => load_scenes(d)?,
        None => generate_scenes(cfg.seed, cfg.data.n_scenes, &cfg.data.scene)?,
    };
    let model = Model::new(cfg.model.clone(), &mut stream(cfg.seed, Stream::Init))?;
    let num_params = model.num_params();
    let mut log = String::new();
    let out = train(model, cfg, TrainData::Scenes(&scenes), &mut |l| {
        log.push_str(&serde_json::to_string(l).expect("log line serializes"));
        log.push('\n');
        if l.step % 50 == 0 {
            log::info!("step {} T={} loss {:.4}", l.step, l.interval, l.loss_total);
        }
    })?;
    let summary = TrainSummary {
        version: REPORT_VERSION,
        steps: out.logs.len(),
        final_loss: out.logs.last().map_or(f64::NAN, |l| l.loss_total),
        alpha_warning: out.alpha_warning,
        num_params,
    };
    write_dir_atomic(out_dir, |tmp| {
        checkpoint::save(&out.model, &tmp.join("checkpoint"), summary.steps as u64, serde_json::to_value(cfg)?)?;
        fs::write(tmp.join("train_log.jsonl"), &log)?;
        fs::write(tmp.join("config.json"), cfg.to_json()? + "\n")?;
        fs::write(tmp.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ordered,
    Unordered(Strategy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    pub mode: Mode,
    pub clip: bool,
    pub lt_max_tokens: Option<usize>,
    pub long_term: bool,
    pub score: ConfidenceScore,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions { mode: Mode::Ordered, clip: true, lt_max_tokens: None, long_term: true, score: ConfidenceScore::Sigmoid }
    }
}

impl ReconstructOptions {
    pub fn memory(&self, base: &MemoryConfig) -> MemoryConfig {
        MemoryConfig {
            clip_enabled: self.clip,
            long_term_enabled: self.long_term,
            lt_max_tokens: self.lt_max_tokens.unwrap_or(base.lt_max_tokens),
            topk_keep: if self.lt_max_tokens.is_some() { None } else { base.topk_keep },
            ..base.clone()
        }
    }
}

pub fn reconstruct(model: &Model, frames: &[crate::model::Image], opts: &ReconstructOptions, base: &MemoryConfig) -> Result<Reconstruction> {
    let memory = opts.memory(base);
    match opts.mode {
        Mode::Ordered => pipeline::reconstruct_ordered(model, frames, &memory),
        Mode::Unordered(s) => Ok(pipeline::reconstruct_unordered(model, frames, &memory, s, opts.score)?.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub version: u32,
    pub options: ReconstructOptions,
    pub memory_config: MemoryConfig,
    pub order: Vec<usize>,
    pub step_seconds: Vec<f64>,
    pub memory: crate::memory::MemoryStats,
}

fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.ply")
}

/// Writes one PLY per input frame (`frame_NNNN.ply`) plus `report.json`.
pub fn write_reconstruction(rec: &Reconstruction, report: &ReconstructReport, out_dir: &Path) -> Result<()> {
    write_dir_atomic(out_dir, |tmp| {
        for f in &rec.frames {
            let m = &f.prediction.pointmap;
            let cloud = PointCloud {
                points: (0..m.valid.len()).map(|i| m.point(i)).collect(),
                quality: f.prediction.confidence.mapped.data().to_vec(),
                grid: Some((m.width(), m.height())),
            };
            write_ply(&tmp.join(frame_file(f.frame_index)), &cloud)?;
        }
        fs::write(tmp.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
        Ok(())
    })
}

pub fn cmd_reconstruct(checkpoint_dir: &Path, input: &Path, opts: &ReconstructOptions, out_dir: &Path) -> Result<()> {
    require(checkpoint_dir)?;
    require(input)?;
    let (model, _) = checkpoint::load(checkpoint_dir)?;
    let scene = load_scene(input)?;
    let base = MemoryConfig::default();
    let rec = reconstruct(&model, &scene.frames, opts, &base)?;
    let report = ReconstructReport {
        version: REPORT_VERSION,
        options: opts.clone(),
        memory_config: opts.memory(&base),
        order: rec.order.clone(),
        step_seconds: rec.step_seconds.clone(),
        memory: rec.memory.clone(),
    };
    write_reconstruction(&rec, &report, out_dir)
}

/// Reads `frame_NNNN.ply` grids for every ground-truth frame.
pub fn load_predictions(dir: &Path, n: usize) -> Result<Vec<Pointmap>> {
    (0..n)
        .map(|i| {
            let path = dir.join(frame_file(i));
            let cloud = read_ply(&path)?;
            let (w, h) = cloud
                .grid
                .ok_or_else(|| Error::Format(format!("{} carries no pixel grid", path.display())))?;
            Pointmap::from_points(w, h, &cloud.points, vec![true; w * h])
        })
        .collect()
}

fn viewpoints(scene: &SceneSample) -> Vec<[f64; 3]> {
    scene.poses.iter().map(|p| [p.translation[0], p.translation[1], p.translation[2]]).collect()
}

pub fn evaluate_scene(preds: &[Pointmap], scene: &SceneSample) -> Result<MetricsReport> {
    eval::evaluate(preds, &scene.gt_pointmaps, &viewpoints(scene))
}

pub fn evaluate_reconstruction(rec: &Reconstruction, scene: &SceneSample) -> Result<MetricsReport> {
    let preds: Vec<Pointmap> = (0..scene.len())
        .map(|i| {
            rec.frame(i)
                .map(|f| f.prediction.pointmap.clone())
                .ok_or_else(|| Error::PipelineOrder(format!("frame {i} missing from reconstruction")))
        })
        .collect::<Result<_>>()?;
    evaluate_scene(&preds, scene)
}

pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, report: &Path) -> Result<MetricsReport> {
    require(pred_dir)?;
    require(gt_dir)?;
    let scene = load_scene(gt_dir)?;
    let preds = load_predictions(pred_dir, scene.len())?;
    let metrics = evaluate_scene(&preds, &scene)?;
    write_json_atomic(report, &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Clip,
    Lm,
    Memsize,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(Suite::Clip),
            "lm" => Ok(Suite::Lm),
            "memsize" => Ok(Suite::Memsize),
            other => Err(Error::Config(format!("unknown ablation suite `{other}` (clip|lm|memsize)"))),
        }
    }
}

/// Distractor tokens added to long-term memory before a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    pub count: usize,
    /// Logit offset below a neutral key; see [`outlier_tokens`].
    pub key_scale: f64,
    /// Per-channel magnitude of the values; signs are shared within a set.
    pub value_scale: f64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        OutlierSpec { count: 1024, key_scale: 8.0, value_scale: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub scene: SceneParams,
    pub outliers: Option<OutlierSpec>,
    pub memsize_settings: Vec<usize>,
    /// Similarity gate on working-memory insertion. Off by default, as in
    /// training: small models learn near-constant keys that the gate rejects.
    pub gate_enabled: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seed: 100,
            n_sequences: 6,
            scene: SceneParams { n_frames: 20, ..SceneParams::default() },
            outliers: None,
            memsize_settings: vec![64, 256, 1024, 4096],
            gate_enabled: false,
        }
    }
}

impl AblationConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("ablation config schema: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub clip: bool,
    pub long_term: bool,
    pub lt_max_tokens: usize,
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub nc_mean: f64,
    /// Largest token count seen after any insertion, over all sequences.
    pub max_total_tokens: usize,
    pub token_bound: usize,
    pub bound_held: bool,
    /// Consolidation events summed over sequences.
    pub consolidations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub version: u32,
    pub suite: Suite,
    pub n_sequences: usize,
    pub n_frames: usize,
    pub outliers: Option<OutlierSpec>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn validate(&self) -> Result<()> {
        let ok = self.version == REPORT_VERSION
            && !self.rows.is_empty()
            && self.rows.iter().all(|r| {
                r.acc_mean.is_finite() && r.acc_mean >= 0.0 && r.comp_mean.is_finite() && (-1.0..=1.0).contains(&r.nc_mean)
            });
        if !ok {
            return Err(Error::Format("ablation report fails its schema checks".into()));
        }
        Ok(())
    }

    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }
}

/// Builds distractor tokens against `query`, the query grid that reads them
/// first. Keys are the minimum-norm solution of `q_r . k / sqrt(C) = -key_scale`
/// for every query row, plus small noise, so each row scores them
/// `key_scale` below a zero key.
pub fn outlier_tokens<R: Rng>(query: &Tensor, spec: &OutlierSpec, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let (p, c) = query.dims2()?;
    let q = nalgebra::DMatrix::from_row_slice(p, c, query.data());
    let pinv = q.pseudo_inverse(1e-10).map_err(|e| Error::Degenerate(format!("query pseudo-inverse: {e}")))?;
    let target = nalgebra::DVector::from_element(p, -spec.key_scale * (c as f64).sqrt());
    let base = pinv * target;
    let noise = Normal::new(0.0, 0.01).expect("valid std");
    // one sign pattern for the whole set so the distractors add up coherently
    let signs: Vec<f64> = (0..c).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut keys = Vec::with_capacity(spec.count * c);
    let mut values = Vec::with_capacity(spec.count * c);
    for _ in 0..spec.count {
        for (b, s) in base.iter().zip(&signs) {
            keys.push(b + noise.sample(rng));
            values.push(s * spec.value_scale);
        }
    }
    Ok((Tensor::new(keys, &[spec.count, c])?, Tensor::new(values, &[spec.count, c])?))
}

/// Frame index tagging distractor tokens in long-term memory.
pub const OUTLIER_FRAME: usize = usize::MAX;

/// Ordered reconstruction with distractors in long-term memory. Before every
/// read the previous distractors are replaced by a fresh set built against
/// the current query.
pub fn reconstruct_with_outliers(
    model: &Model,
    frames: &[crate::model::Image],
    memory: &MemoryConfig,
    outliers: Option<&OutlierSpec>,
    seed: u64,
) -> Result<Reconstruction> {
    let Some(spec) = outliers else {
        return pipeline::reconstruct_ordered(model, frames, memory);
    };
    if frames.len() < 2 {
        return Err(Error::InsufficientLength(format!("need at least 2 frames, got {}", frames.len())));
    }
    let _g = crate::tensor::no_grad();
    let mut s = pipeline::Session::new(model, MemoryBank::new(memory.clone())?, None);
    s.initialize(&frames[0], &frames[1], 0, 1)?;
    let mut rng = stream(seed, Stream::Eval);
    for (i, f) in frames.iter().enumerate().skip(2) {
        let query = s.state().expect("initialized").query.tokens.clone();
        let (k, v) = outlier_tokens(&query, spec, &mut rng)?;
        s.bank.remove_long_term_frame(OUTLIER_FRAME)?;
        s.bank.inject_long_term(k, v, OUTLIER_FRAME)?;
        s.push(f, i)?;
    }
    let run = s.finish()?;
    let order: Vec<usize> = (0..frames.len()).collect();
    Ok(pipeline::into_reconstruction(run, order))
}

fn setting_row(
    model: &Model,
    scenes: &[SceneSample],
    setting: String,
    memory: MemoryConfig,
    outliers: Option<&OutlierSpec>,
    seed: u64,
) -> Result<AblationRow> {
    let p = model.config.num_patches();
    let bound = memory.working_max_frames * p
        + if memory.long_term_enabled { memory.lt_max_tokens } else { 0 }
        + outliers.map_or(0, |o| o.count);
    let mut acc = Vec::new();
    let mut acc_med = Vec::new();
    let mut comp = Vec::new();
    let mut nc = Vec::new();
    let mut max_tokens = 0;
    let mut consolidations = 0;
    for (i, scene) in scenes.iter().enumerate() {
        let rec = reconstruct_with_outliers(model, &scene.frames, &memory, outliers, seed.wrapping_add(i as u64))?;
        let m = evaluate_reconstruction(&rec, scene)?;
        // accuracy relative to scene size so sequences weigh equally
        acc.push(m.acc_mean / scene.diameter);
        acc_med.push(m.acc_median / scene.diameter);
        comp.push(m.comp_mean / scene.diameter);
        nc.push(m.nc_mean);
        max_tokens = max_tokens.max(rec.memory.max_total_tokens);
        consolidations += rec.memory.consolidations.len();
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(AblationRow {
        setting,
        clip: memory.clip_enabled,
        long_term: memory.long_term_enabled,
        lt_max_tokens: memory.lt_max_tokens,
        acc_mean: mean(&acc),
        acc_median: mean(&acc_med),
        comp_mean: mean(&comp),
        nc_mean: mean(&nc),
        max_total_tokens: max_tokens,
        token_bound: bound,
        bound_held: max_tokens <= bound,
        consolidations,
    })
}

/// Runs one ablation suite. Accuracies are divided by each scene's diameter.
pub fn run_ablation(model: &Model, suite: Suite, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.n_sequences == 0 {
        return Err(Error::Config("ablation needs at least one sequence".into()));
    }
    let scenes = generate_scenes(cfg.seed, cfg.n_sequences, &cfg.scene)?;
    let base = MemoryConfig { gate_enabled: cfg.gate_enabled, ..MemoryConfig::default() };
    let outliers = match suite {
        Suite::Clip => Some(cfg.outliers.clone().unwrap_or_default()),
        _ => cfg.outliers.clone(),
    };
    let o = outliers.as_ref();
    let rows = match suite {
        Suite::Clip => vec![
            setting_row(model, &scenes, "clip".into(), base.clone(), o, cfg.seed)?,
            setting_row(model, &scenes, "no_clip".into(), MemoryConfig { clip_enabled: false, ..base }, o, cfg.seed)?,
        ],
        Suite::Lm => vec![
            setting_row(model, &scenes, "full".into(), base.clone(), o, cfg.seed)?,
            setting_row(model, &scenes, "working_only".into(), MemoryConfig { long_term_enabled: false, ..base }, o, cfg.seed)?,
        ],
        Suite::Memsize => {
            if cfg.memsize_settings.is_empty() {
                return Err(Error::Config("memsize sweep needs at least one setting".into()));
            }
            cfg.memsize_settings
                .iter()
                .map(|&n| {
                    let memory = MemoryConfig { lt_max_tokens: n, topk_keep: None, ..base.clone() };
                    memory.validate()?;
                    setting_row(model, &scenes, format!("lt_max_{n}"), memory, o, cfg.seed)
                })
                .collect::<Result<_>>()?
        }
    };
    let report = AblationReport {
        version: REPORT_VERSION,
        suite,
        n_sequences: cfg.n_sequences,
        n_frames: cfg.scene.n_frames,
        outliers,
        rows,
    };
    report.validate()?;
    Ok(report)
}

pub fn cmd_ablate(checkpoint_dir: &Path, suite: Suite, cfg: &AblationConfig, out: &Path) -> Result<AblationReport> {
    require(checkpoint_dir)?;
    let (model, _) = checkpoint::load(checkpoint_dir)?;
    let scene = SceneParams { image_size: model.config.image_size, ..cfg.scene.clone() };
    let cfg = AblationConfig { scene, ..cfg.clone() };
    let report = run_ablation(&model, suite, &cfg)?;
    write_json_atomic(out, &report)?;
    Ok(report)
}

/// Recipe for the model the ablation suites run on: clips of 8 frames so
/// frames drain into long-term memory during training.
pub fn ablation_training_config(steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        epochs: 1,
        steps_per_epoch: steps,
        curriculum: crate::objective::CurriculumConfig { t_min: 1, t_max: 2, n_frames: 8 },
        optimizer: crate::optim::AdamWConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() },
        data: crate::config::DataConfig { scene: SceneParams { n_frames: 20, ..SceneParams::default() }, n_scenes: 4 },
        ..RunConfig::default()
    }
}
