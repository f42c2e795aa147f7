//! Experiment orchestration: named presets, per-seed pipeline runs
//! (dataset, captions, embeddings, training, evaluation), aggregate
//! summaries, and variant-comparison reports.
//!
//! One seed drives everything inside a run: the scene population, the
//! model initialization, and the sampling streams. Paired variants that
//! share a seed therefore see identical data and identical initial
//! weights, isolating the configuration difference under test.

use crate::captions::{
    caption_bank_store, class_names_from_mask, CaptionMode, CaptionPipeline, CaptionRecord,
    MockLlm, MockVlm, Provider, Tokenizer,
};
use crate::embedding::{bank_store, build_embedding_bank, EmbeddingBank, HashEncoder, TextEncoder};
use crate::engine::{train, CaptionSide, StepRecord, TrainConfig};
use crate::network::checkpoint::load_checkpoint;
use crate::network::{AlignMode, NetworkConfig};
use crate::scene::{build_dataset, default_street_spec, load_dataset, DatasetBundle, DomainShift};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("preset invalid: {0}")]
    BadPreset(String),
    #[error("[{stage}, seed {seed}] {message}")]
    Stage {
        stage: String,
        seed: u64,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn stage<E: std::fmt::Display>(name: &str, seed: u64) -> impl Fn(E) -> ExperimentError + '_ {
    move |e| ExperimentError::Stage {
        stage: name.to_string(),
        seed,
        message: e.to_string(),
    }
}

/// Which method variant a preset runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full method: context captions, image-level alignment.
    #[default]
    None,
    /// lambda_p = 0; no language steering.
    NoLang,
    /// Per-image mean of "a photo of a {class}" prompt embeddings instead
    /// of caption embeddings.
    ClassPrompt,
    /// Per-class pixel-feature alignment against per-class prompts.
    PixelAlign,
}

impl Ablation {
    pub fn label(&self) -> &'static str {
        match self {
            Ablation::None => "langda",
            Ablation::NoLang => "baseline",
            Ablation::ClassPrompt => "class-prompt",
            Ablation::PixelAlign => "pixel-align",
        }
    }
}

/// Parameters for the built-in street-scene generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub n_source: usize,
    pub n_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    /// Generate scenes with the built-in generator...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneParams>,
    /// ...or load a pre-built dataset directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub shift: DomainShift,
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: Ablation,
    pub seeds: Vec<u64>,
}

impl ExperimentPreset {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::BadPreset(
                "seed list must be non-empty".into(),
            ));
        }
        match (&self.scene, &self.manifest) {
            (None, None) => Err(ExperimentError::BadPreset(
                "preset needs either scene parameters or a manifest path".into(),
            )),
            (Some(_), Some(_)) => Err(ExperimentError::BadPreset(
                "scene parameters and manifest path are mutually exclusive".into(),
            )),
            (_, Some(path)) if !path.exists() => Err(ExperimentError::BadPreset(format!(
                "manifest path {} does not exist",
                path.display()
            ))),
            _ => Ok(()),
        }
    }
}

/// The scaled-down benchmark: 32x32 street scenes, 6 classes, 200 source
/// and 200 target images, 2000 training steps.
pub fn benchmark_preset() -> ExperimentPreset {
    let network = NetworkConfig::new(6, 64);
    let mut train = TrainConfig::new(network);
    train.total_steps = 2000;
    train.warmup_steps = 250;
    train.checkpoint_every = 500;
    ExperimentPreset {
        name: "synthetic-street-langda".into(),
        scene: Some(SceneParams {
            height: 32,
            width: 32,
            n_source: 200,
            n_target: 200,
        }),
        manifest: None,
        shift: benchmark_shift(),
        train,
        ablation: Ablation::None,
        seeds: vec![0, 1, 2, 3, 4],
    }
}

/// Domain gap of the benchmark: strong hue rotation, darkening, sensor
/// noise, and a texture field.
pub fn benchmark_shift() -> DomainShift {
    DomainShift {
        hue_shift: 40.0,
        brightness_scale: 0.6,
        noise_sigma: 0.05,
        texture_freq: 3.0,
    }
}

/// Same protocol with a variant applied. Paired ablations keep the seed
/// list so per-seed deltas are meaningful; one-shot ablations run seed 0.
pub fn ablation_preset(ablation: Ablation) -> ExperimentPreset {
    let mut preset = benchmark_preset();
    preset.ablation = ablation;
    preset.name = format!("synthetic-street-{}", ablation.label());
    match ablation {
        Ablation::None | Ablation::NoLang => {}
        Ablation::ClassPrompt | Ablation::PixelAlign => preset.seeds = vec![0],
    }
    if ablation == Ablation::NoLang {
        preset.train.lambda_p = 0.0;
    }
    if ablation == Ablation::PixelAlign {
        preset.train.network.align_mode = AlignMode::PixelAlign;
    }
    preset
}

/// Lambda sweep over the benchmark protocol at seed 0.
pub fn lambda_sweep_presets(values: &[f64]) -> Vec<ExperimentPreset> {
    values
        .iter()
        .map(|&v| {
            let mut preset = benchmark_preset();
            preset.name = format!("synthetic-street-lambda-{v}");
            preset.train.lambda_p = v;
            preset.seeds = vec![0];
            preset
        })
        .collect()
}

/// Looks up a built-in preset by name.
pub fn builtin_preset(name: &str) -> Option<ExperimentPreset> {
    match name {
        "langda" | "synthetic-street-langda" => Some(benchmark_preset()),
        "baseline" | "synthetic-street-baseline" => Some(ablation_preset(Ablation::NoLang)),
        "class-prompt" | "synthetic-street-class-prompt" => {
            Some(ablation_preset(Ablation::ClassPrompt))
        }
        "pixel-align" | "synthetic-street-pixel-align" => {
            Some(ablation_preset(Ablation::PixelAlign))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub target_miou: f64,
    /// Mean alignment loss over the first and last 10% of steps.
    pub l_p_first_decile: f64,
    pub l_p_last_decile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub ablation: Ablation,
    pub per_seed: Vec<SeedSummary>,
    pub mean_miou: f64,
    /// Population standard deviation across seeds.
    pub std_miou: f64,
}

impl ExperimentSummary {
    fn from_runs(name: &str, ablation: Ablation, per_seed: Vec<SeedSummary>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|r| r.target_miou).sum::<f64>() / n;
        let var = per_seed
            .iter()
            .map(|r| (r.target_miou - mean).powi(2))
            .sum::<f64>()
            / n;
        Self {
            name: name.to_string(),
            ablation,
            per_seed,
            mean_miou: mean,
            std_miou: var.sqrt(),
        }
    }
}

fn decile_means(history: &[StepRecord]) -> (f64, f64) {
    if history.is_empty() {
        return (0.0, 0.0);
    }
    let k = (history.len() / 10).max(1);
    let first = history[..k].iter().map(|r| r.l_p).sum::<f64>() / k as f64;
    let last = history[history.len() - k..]
        .iter()
        .map(|r| r.l_p)
        .sum::<f64>()
        / k as f64;
    (first, last)
}

/// Caption generation for a bundle: grounded source captions, and (when
/// the config trains with target-side alignment) unconditioned target
/// captions whose mock vision model reads the held-out masks.
pub fn caption_bundle(
    bundle: &DatasetBundle,
    caption_mode: CaptionSide,
) -> Result<Vec<CaptionRecord>, crate::captions::CaptionError> {
    let mut records = Vec::new();
    let (want_source, want_target) = match caption_mode {
        CaptionSide::SourceOnly => (true, false),
        CaptionSide::TargetOnly => (false, true),
        CaptionSide::SourceAndTarget => (true, true),
    };
    if want_source {
        let mut vlm = MockVlm::new(bundle.class_set.clone());
        for s in &bundle.source {
            if let Some(mask) = &s.mask {
                vlm.register(&s.id, mask.clone());
            }
        }
        let mut pipeline = CaptionPipeline::new(
            Box::new(vlm),
            Box::new(MockLlm),
            Tokenizer::Whitespace,
            CaptionMode::SourceGrounded,
            Provider::TemplateMock,
        );
        for s in &bundle.source {
            let mask = s.mask.as_ref().expect("source masks always present");
            let names = class_names_from_mask(mask, &bundle.class_set);
            records.push(pipeline.caption_image(&s.id, &names)?);
        }
    }
    if want_target {
        let mut vlm = MockVlm::new(bundle.class_set.clone());
        for (s, mask) in bundle.target.iter().zip(&bundle.target_eval) {
            vlm.register(&s.id, mask.clone());
        }
        let mut pipeline = CaptionPipeline::new(
            Box::new(vlm),
            Box::new(MockLlm),
            Tokenizer::Whitespace,
            CaptionMode::TargetUnconditioned,
            Provider::TemplateMock,
        );
        for s in &bundle.target {
            records.push(pipeline.caption_image(&s.id, &[])?);
        }
    }
    Ok(records)
}

/// Normalized mean of class-prompt embeddings for one set of classes.
fn mean_class_embedding(
    classes: &[String],
    encoder: &HashEncoder,
) -> Result<Vec<f32>, crate::embedding::EmbedError> {
    let dim = encoder.dim();
    let mut acc = vec![0.0f64; dim];
    for name in classes {
        let v = encoder.encode(&format!("a photo of a {name}"))?;
        for (a, x) in acc.iter_mut().zip(v.values.iter()) {
            *a += *x as f64;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(acc
        .iter()
        .map(|x| {
            if norm > 0.0 {
                (x / norm) as f32
            } else {
                0.0f32
            }
        })
        .collect())
}

/// Builds the embedding bank a variant trains against.
fn build_bank(
    preset: &ExperimentPreset,
    bundle: &DatasetBundle,
    records: &[CaptionRecord],
) -> Result<EmbeddingBank, String> {
    let encoder = HashEncoder::new(preset.train.network.embed_dim);
    match preset.ablation {
        Ablation::None | Ablation::NoLang => {
            build_embedding_bank(records, &encoder).map_err(|e| e.to_string())
        }
        Ablation::ClassPrompt => {
            let mut bank = EmbeddingBank::new(&encoder.backend_id(), encoder.dim());
            let mut add = |id: &str, mask: &ndarray::Array2<u32>| -> Result<(), String> {
                let names = class_names_from_mask(mask, &bundle.class_set);
                let v = mean_class_embedding(&names, &encoder).map_err(|e| e.to_string())?;
                bank.insert(id, v).map_err(|e| e.to_string())
            };
            for s in &bundle.source {
                add(&s.id, s.mask.as_ref().expect("source mask"))?;
            }
            if preset.train.caption_mode != CaptionSide::SourceOnly {
                for (s, mask) in bundle.target.iter().zip(&bundle.target_eval) {
                    add(&s.id, mask)?;
                }
            }
            Ok(bank)
        }
        Ablation::PixelAlign => {
            let mut bank = EmbeddingBank::new(&encoder.backend_id(), encoder.dim());
            for name in &bundle.class_set {
                let v = encoder
                    .encode(&format!("a photo of a {name}"))
                    .map_err(|e| e.to_string())?;
                bank.insert(name, v.values).map_err(|e| e.to_string())?;
            }
            Ok(bank)
        }
    }
}

/// Steps per checkpoint plus the final model, evaluated on the held-out
/// target masks, as CSV rows of `step,miou`.
fn miou_curve(dir: &Path, bundle: &DatasetBundle, total_steps: usize) -> Result<String, String> {
    let mut rows: Vec<(usize, f64)> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("checkpoint_") && n.ends_with(".ldck"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let step: usize = name
            .trim_start_matches("checkpoint_")
            .trim_end_matches(".ldck")
            .parse()
            .map_err(|_| format!("unparseable checkpoint name {name}"))?;
        let model = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let report =
            crate::engine::evaluate_bundle(&model.student, bundle).map_err(|e| e.to_string())?;
        rows.push((step, report.miou));
    }
    let final_model = load_checkpoint(&dir.join("final.ldck")).map_err(|e| e.to_string())?;
    let report =
        crate::engine::evaluate_bundle(&final_model.student, bundle).map_err(|e| e.to_string())?;
    if rows.last().map(|(s, _)| *s) != Some(total_steps) {
        rows.push((total_steps, report.miou));
    }
    let mut csv = String::from("step,miou\n");
    for (s, m) in rows {
        csv.push_str(&format!("{s},{m}\n"));
    }
    Ok(csv)
}

/// One full pipeline run for one seed, writing into `dir`.
fn run_seed(
    preset: &ExperimentPreset,
    seed: u64,
    dir: &Path,
) -> Result<SeedSummary, ExperimentError> {
    // Scene stage: generated scenes take the run seed so different seeds
    // see freshly drawn populations; a manifest is fixed data.
    let bundle = match (&preset.scene, &preset.manifest) {
        (Some(p), None) => {
            let spec = default_street_spec(p.height, p.width, seed);
            build_dataset(&spec, p.n_source, p.n_target, &preset.shift, seed)
                .map_err(stage("scene", seed))?
        }
        (None, Some(path)) => load_dataset(path).map_err(stage("scene", seed))?,
        _ => unreachable!("validated"),
    };
    std::fs::create_dir_all(dir)?;

    // Caption stage. Prompt-based variants skip captioning entirely.
    let records = match preset.ablation {
        Ablation::ClassPrompt | Ablation::PixelAlign => Vec::new(),
        _ => caption_bundle(&bundle, preset.train.caption_mode).map_err(stage("captions", seed))?,
    };
    if !records.is_empty() {
        caption_bank_store(&records, &dir.join("captions.jsonl"))
            .map_err(stage("captions", seed))?;
    }

    // Embedding stage.
    let bank = build_bank(preset, &bundle, &records).map_err(stage("embeddings", seed))?;
    bank_store(&bank, &dir.join("embeddings.ldeb")).map_err(stage("embeddings", seed))?;

    // Train stage.
    let mut config = preset.train.clone();
    config.seed = seed;
    let out = train(&bundle, Some(&bank), &config, Some(dir)).map_err(stage("train", seed))?;

    // Eval stage: the final report was written by train; the curve adds
    // one row per checkpoint.
    let report = out.eval.ok_or_else(|| ExperimentError::Stage {
        stage: "eval".into(),
        seed,
        message: "dataset carries no held-out target masks".into(),
    })?;
    let curve = miou_curve(dir, &bundle, config.total_steps).map_err(stage("eval", seed))?;
    std::fs::write(dir.join("miou_curve.csv"), curve)?;

    let (first, last) = decile_means(&out.history);
    Ok(SeedSummary {
        seed,
        target_miou: report.miou,
        l_p_first_decile: first,
        l_p_last_decile: last,
    })
}

/// Runs every seed of a preset under `out_root/{name}/seed-{s}` and
/// writes the aggregate summary.
pub fn run_experiment(
    preset: &ExperimentPreset,
    out_root: &Path,
) -> Result<ExperimentSummary, ExperimentError> {
    preset.validate()?;
    let exp_dir = out_root.join(&preset.name);
    std::fs::create_dir_all(&exp_dir)?;
    let mut per_seed = Vec::new();
    for &seed in &preset.seeds {
        let dir = exp_dir.join(format!("seed-{seed}"));
        per_seed.push(run_seed(preset, seed, &dir)?);
    }
    let summary = ExperimentSummary::from_runs(&preset.name, preset.ablation, per_seed);
    let mut f = std::fs::File::create(exp_dir.join("summary.json"))?;
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(summary)
}

/// Paired per-seed mIoU differences (a minus b); the seed lists must
/// match element for element.
pub fn paired_deltas(
    a: &ExperimentSummary,
    b: &ExperimentSummary,
) -> Result<Vec<f64>, ExperimentError> {
    if a.per_seed.len() != b.per_seed.len()
        || a.per_seed
            .iter()
            .zip(&b.per_seed)
            .any(|(x, y)| x.seed != y.seed)
    {
        return Err(ExperimentError::BadPreset(format!(
            "cannot pair {} with {}: seed lists differ",
            a.name, b.name
        )));
    }
    Ok(a.per_seed
        .iter()
        .zip(&b.per_seed)
        .map(|(x, y)| x.target_miou - y.target_miou)
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub seeds: usize,
    pub mean_miou: f64,
    pub std_miou: f64,
    /// Difference to the first (reference) row's mean.
    pub delta_vs_reference: f64,
}

/// Variant table in the usual ablation layout: the first summary is the
/// reference row, every later row reports its mean gap to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn new(summaries: &[ExperimentSummary]) -> Self {
        let reference = summaries.first().map(|s| s.mean_miou).unwrap_or(0.0);
        let rows = summaries
            .iter()
            .map(|s| ComparisonRow {
                variant: s.name.clone(),
                seeds: s.per_seed.len(),
                mean_miou: s.mean_miou,
                std_miou: s.std_miou,
                delta_vs_reference: s.mean_miou - reference,
            })
            .collect();
        Self { rows }
    }

    pub fn render_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.variant.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = format!(
            "{:<width$}  {:>5}  {:>16}  {:>8}\n",
            "variant",
            "seeds",
            "target mIoU",
            "delta",
            width = width
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>5}  {:>7.2} ± {:>5.2}  {:>+8.2}\n",
                r.variant,
                r.seeds,
                r.mean_miou,
                r.std_miou,
                r.delta_vs_reference,
                width = width
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_preset(name: &str, seeds: Vec<u64>) -> ExperimentPreset {
        let network = NetworkConfig {
            widths: vec![4, 8],
            pool_heads: 2,
            ..NetworkConfig::new(6, 32)
        };
        let mut train = TrainConfig::new(network);
        train.total_steps = 4;
        train.warmup_steps = 2;
        ExperimentPreset {
            name: name.into(),
            scene: Some(SceneParams {
                height: 24,
                width: 24,
                n_source: 6,
                n_target: 6,
            }),
            manifest: None,
            shift: benchmark_shift(),
            train,
            ablation: Ablation::None,
            seeds,
        }
    }

    #[test]
    fn single_seed_creates_one_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let preset = tiny_preset("one", vec![0]);
        let summary = run_experiment(&preset, dir.path()).unwrap();
        assert_eq!(summary.per_seed.len(), 1);
        let runs: Vec<_> = std::fs::read_dir(dir.path().join("one"))
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        assert_eq!(runs.len(), 1);
        assert!(dir.path().join("one/seed-0/metrics.csv").exists());
        assert!(dir.path().join("one/seed-0/captions.jsonl").exists());
        assert!(dir.path().join("one/seed-0/embeddings.ldeb").exists());
        assert!(dir.path().join("one/seed-0/miou_curve.csv").exists());
        assert!(dir.path().join("one/summary.json").exists());
    }

    #[test]
    fn repeated_preset_gives_identical_aggregate() {
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let preset = tiny_preset("rep", vec![0, 1]);
        let a = run_experiment(&preset, da.path()).unwrap();
        let b = run_experiment(&preset, db.path()).unwrap();
        assert_eq!(a, b);
        let ca = std::fs::read(da.path().join("rep/seed-1/metrics.csv")).unwrap();
        let cb = std::fs::read(db.path().join("rep/seed-1/metrics.csv")).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let preset = tiny_preset("bad", vec![]);
        assert!(matches!(
            run_experiment(&preset, Path::new("/tmp/unused")),
            Err(ExperimentError::BadPreset(_))
        ));
    }

    #[test]
    fn stage_errors_carry_stage_and_seed() {
        let mut preset = tiny_preset("badcfg", vec![3]);
        preset.train.tau = 1.5;
        let dir = tempfile::tempdir().unwrap();
        match run_experiment(&preset, dir.path()) {
            Err(ExperimentError::Stage {
                stage,
                seed,
                message,
            }) => {
                assert_eq!(stage, "train");
                assert_eq!(seed, 3);
                assert!(message.contains("tau"), "{message}");
            }
            other => panic!("expected stage error, got {other:?}"),
        }
    }

    #[test]
    fn paired_deltas_require_matching_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&tiny_preset("a", vec![0, 1]), dir.path()).unwrap();
        let b = run_experiment(&tiny_preset("b", vec![0, 1]), dir.path()).unwrap();
        let deltas = paired_deltas(&a, &b).unwrap();
        assert_eq!(deltas.len(), 2);
        // Identical protocol, identical seeds: the deltas vanish.
        assert!(deltas.iter().all(|d| d.abs() < 1e-12));
        let c = run_experiment(&tiny_preset("c", vec![5]), dir.path()).unwrap();
        assert!(paired_deltas(&a, &c).is_err());
    }

    #[test]
    fn ablation_variants_run_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut summaries = Vec::new();
        for ablation in [
            Ablation::None,
            Ablation::NoLang,
            Ablation::ClassPrompt,
            Ablation::PixelAlign,
        ] {
            let mut preset = tiny_preset(ablation.label(), vec![0]);
            preset.ablation = ablation;
            if ablation == Ablation::NoLang {
                preset.train.lambda_p = 0.0;
            }
            if ablation == Ablation::PixelAlign {
                preset.train.network.align_mode = AlignMode::PixelAlign;
            }
            summaries.push(run_experiment(&preset, dir.path()).unwrap());
        }
        let report = ComparisonReport::new(&summaries);
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.rows[0].delta_vs_reference, 0.0);
        let table = report.render_table();
        for label in ["langda", "baseline", "class-prompt", "pixel-align"] {
            assert!(table.contains(label), "{table}");
        }
    }

    #[test]
    fn builtin_presets_resolve_and_validate() {
        for name in ["langda", "baseline", "class-prompt", "pixel-align"] {
            let preset = builtin_preset(name).unwrap();
            preset.validate().unwrap();
            assert!(preset.name.contains(name));
        }
        assert!(builtin_preset("unknown").is_none());
        let sweeps = lambda_sweep_presets(&[0.01, 0.1, 1.0]);
        assert_eq!(sweeps.len(), 3);
        assert!((sweeps[2].train.lambda_p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn manifest_presets_load_prebuilt_data() {
        let dir = tempfile::tempdir().unwrap();
        let spec = default_street_spec(24, 24, 11);
        let bundle = build_dataset(&spec, 4, 4, &benchmark_shift(), 11).unwrap();
        let data_dir = dir.path().join("data");
        crate::scene::export_dataset(&bundle, &data_dir).unwrap();
        let mut preset = tiny_preset("from-manifest", vec![0]);
        preset.scene = None;
        preset.manifest = Some(data_dir);
        let summary = run_experiment(&preset, dir.path()).unwrap();
        assert_eq!(summary.per_seed.len(), 1);
    }
}
