//! Self-training engine: the teacher-student adaptation loop.
//!
//! Each step draws a rarity-weighted source batch and a uniform target
//! batch, computes the supervised loss on source, lets the frozen teacher
//! pseudo-label the targets (argmax, no gradient), mixes source classes
//! into the target images, applies the quality-weighted target loss, adds
//! the caption-alignment loss through the pool and adapter, takes one
//! AdamW step with split encoder/decoder rates under linear warmup, and
//! finally advances the teacher by exponential moving average.

pub mod losses;
pub mod mix;
pub mod optimizer;
pub mod sampler;

pub use losses::{
    language_consistency_loss, language_consistency_loss_grad, pseudo_labels, quality_estimate,
    softmax, supervised_loss, supervised_loss_grad, target_loss, target_loss_grad, total_loss,
};
pub use mix::{classmix, classmix_with_classes, select_mix_classes, MixedSample};
pub use optimizer::{warmup_factor, AdamW, ADAM_WEIGHT_DECAY};
pub use sampler::RareClassSampler;

use crate::embedding::EmbeddingBank;
use crate::metrics::{ConfusionMatrix, EvalReport, MetricsError};
use crate::network::checkpoint::save_checkpoint;
use crate::network::params::Params;
use crate::network::{
    ema_update, init_model, Adapter, AlignMode, AttentionPool, ModelPair, NetworkConfig,
    NetworkError, SegBackbone,
};
use crate::rng::stream_rng;
use crate::scene::{DatasetBundle, SegSample};
use ndarray::{Array1, Array2, Array3, ArrayD, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {field} = {got}, {requirement}")]
    BadConfigField {
        field: String,
        requirement: String,
        got: String,
    },
    #[error("shape mismatch: {what}")]
    Shape { what: String },
    #[error("label {value} out of range for {num_classes} classes")]
    BadLabel { value: u32, num_classes: usize },
    #[error("every pixel is ignored")]
    AllIgnored,
    #[error("bad probabilities: {what}")]
    BadProbs { what: String },
    #[error("quality {quality} outside [0, 1]")]
    BadQuality { quality: f64 },
    #[error("zero-norm vector in cosine alignment")]
    ZeroNorm,
    #[error("no embedding found for {id}")]
    MissingEmbedding { id: String },
    #[error("sample {id} carries no mask")]
    MissingMask { id: String },
    #[error("{split} split is empty")]
    EmptyDataset { split: String },
    #[error("non-finite {what} at step {step}; aborting")]
    NonFinite { step: usize, what: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which images the caption-alignment loss attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSide {
    #[default]
    SourceOnly,
    TargetOnly,
    /// Both sides accumulate into the same step's gradient before the
    /// single optimizer update.
    SourceAndTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub total_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Pseudo-label confidence threshold; a pixel counts as confident
    /// only when its top probability strictly exceeds this.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Teacher EMA momentum.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight on the caption-alignment loss.
    #[serde(default = "default_lambda_p")]
    pub lambda_p: f64,
    #[serde(default = "default_lr_encoder")]
    pub lr_encoder: f64,
    #[serde(default = "default_lr_decoder")]
    pub lr_decoder: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_rcs_temperature")]
    pub rcs_temperature: f64,
    #[serde(default = "default_true")]
    pub mix_enabled: bool,
    #[serde(default)]
    pub caption_mode: CaptionSide,
    pub network: NetworkConfig,
}

fn default_batch_size() -> usize {
    2
}
fn default_tau() -> f64 {
    0.968
}
fn default_alpha() -> f64 {
    0.999
}
fn default_lambda_p() -> f64 {
    0.1
}
fn default_lr_encoder() -> f64 {
    6e-5
}
fn default_lr_decoder() -> f64 {
    6e-4
}
fn default_warmup_steps() -> usize {
    1500
}
fn default_rcs_temperature() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(network: NetworkConfig) -> Self {
        Self {
            seed: 0,
            total_steps: 0,
            batch_size: default_batch_size(),
            tau: default_tau(),
            alpha: default_alpha(),
            lambda_p: default_lambda_p(),
            lr_encoder: default_lr_encoder(),
            lr_decoder: default_lr_decoder(),
            warmup_steps: default_warmup_steps(),
            checkpoint_every: 0,
            rcs_temperature: default_rcs_temperature(),
            mix_enabled: true,
            caption_mode: CaptionSide::SourceOnly,
            network,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let field = |field: &str, requirement: &str, got: String| {
            Err(EngineError::BadConfigField {
                field: field.into(),
                requirement: requirement.into(),
                got,
            })
        };
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return field("tau", "must lie in (0, 1)", self.tau.to_string());
        }
        if !(0.0..=1.0).contains(&self.alpha) || self.alpha.is_nan() {
            return field("alpha", "must lie in [0, 1]", self.alpha.to_string());
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return field(
                "lambda_p",
                "must be finite and >= 0",
                self.lambda_p.to_string(),
            );
        }
        if !(self.lr_encoder > 0.0 && self.lr_encoder.is_finite()) {
            return field(
                "lr_encoder",
                "must be finite and > 0",
                self.lr_encoder.to_string(),
            );
        }
        if !(self.lr_decoder > 0.0 && self.lr_decoder.is_finite()) {
            return field(
                "lr_decoder",
                "must be finite and > 0",
                self.lr_decoder.to_string(),
            );
        }
        if self.batch_size == 0 {
            return field("batch_size", "must be >= 1", "0".into());
        }
        if !(self.rcs_temperature > 0.0 && self.rcs_temperature.is_finite()) {
            return field(
                "rcs_temperature",
                "must be finite and > 0",
                self.rcs_temperature.to_string(),
            );
        }
        self.network.validate()?;
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_s: f64,
    pub l_t: f64,
    pub l_p: f64,
    pub q_mean: f64,
    /// Warmed-up decoder learning rate at this step.
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: ModelPair,
    pub history: Vec<StepRecord>,
    pub eval: Option<EvalReport>,
    pub warnings: Vec<String>,
}

/// Flattened analytic gradients keyed by parameter name, as returned by
/// `Trainer::gradient_probe`.
pub type NamedGrads = Vec<(String, ArrayD<f64>)>;

/// Gradient accumulator congruent with the trainable side of a model.
struct GradHolder {
    backbone: SegBackbone,
    pool: AttentionPool,
    adapter: Adapter,
}

impl GradHolder {
    fn zeroed(config: &NetworkConfig) -> Result<Self, EngineError> {
        let m = ModelPair::zeroed(config)?;
        Ok(Self {
            backbone: m.student,
            pool: m.pool,
            adapter: m.adapter,
        })
    }

    fn views(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v = Vec::new();
        self.backbone.visit("student", &mut v);
        self.pool.visit("pool", &mut v);
        self.adapter.visit("adapter", &mut v);
        v
    }
}

fn trainable_layout(model: &ModelPair) -> Vec<(String, usize)> {
    let mut v = Vec::new();
    model.student.visit("student", &mut v);
    model.pool.visit("pool", &mut v);
    model.adapter.visit("adapter", &mut v);
    v.into_iter().map(|(n, a)| (n, a.len())).collect()
}

fn trainable_views_mut(model: &mut ModelPair) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
    let mut v = Vec::new();
    model.student.visit_mut("student", &mut v);
    model.pool.visit_mut("pool", &mut v);
    model.adapter.visit_mut("adapter", &mut v);
    v
}

fn lookup(bank: &EmbeddingBank, id: &str) -> Result<Array1<f64>, EngineError> {
    bank.get(id)
        .map(|v| Array1::from_iter(v.iter().map(|&x| x as f64)))
        .ok_or_else(|| EngineError::MissingEmbedding { id: id.to_string() })
}

/// Caption alignment through pool and adapter. Returns the loss and, when
/// `scale` is nonzero, the feature-map gradient to feed the backbone.
/// `scale` already folds in lambda_p and the per-term averaging.
#[allow(clippy::too_many_arguments)]
fn pooled_lang_chain(
    pool: &AttentionPool,
    adapter: &Adapter,
    adapter_on_text: bool,
    features: &Array3<f64>,
    v: &Array1<f64>,
    scale: f64,
    grad_pool: &mut AttentionPool,
    grad_adapter: &mut Adapter,
) -> Result<(f64, Option<Array3<f64>>), EngineError> {
    let (pooled, pool_trace) = pool.forward(features)?;
    if adapter_on_text {
        // Image side is the raw pooled vector; the adapter reshapes the
        // frozen text embedding instead.
        let (text, adapter_trace) = adapter.forward(v);
        let (loss, g_pooled) = language_consistency_loss_grad(&pooled, &text)?;
        if scale == 0.0 {
            return Ok((loss, None));
        }
        // Cosine distance is symmetric, so the text-side gradient is the
        // same expression with the arguments swapped.
        let (_, g_text) = language_consistency_loss_grad(&text, &pooled)?;
        adapter.backward(&adapter_trace, &(g_text * scale), grad_adapter);
        let g_feat = pool.backward(&pool_trace, features.dim(), &(g_pooled * scale), grad_pool);
        Ok((loss, Some(g_feat)))
    } else {
        let (emb, adapter_trace) = adapter.forward(&pooled);
        let (loss, g_emb) = language_consistency_loss_grad(&emb, v)?;
        if scale == 0.0 {
            return Ok((loss, None));
        }
        let g_pooled = adapter.backward(&adapter_trace, &(g_emb * scale), grad_adapter);
        let g_feat = pool.backward(&pool_trace, features.dim(), &g_pooled, grad_pool);
        Ok((loss, Some(g_feat)))
    }
}

/// Per-class alignment: mean feature over each class's pixels (at feature
/// resolution) against that class's prompt embedding, averaged over the
/// classes present. The bank is keyed by class name in this mode.
#[allow(clippy::too_many_arguments)]
fn pixel_lang_chain(
    adapter: &Adapter,
    features: &Array3<f64>,
    mask: &Array2<u32>,
    class_set: &[String],
    ignore_index: u32,
    bank: &EmbeddingBank,
    scale: f64,
    grad_adapter: &mut Adapter,
) -> Result<(f64, Option<Array3<f64>>), EngineError> {
    let (cf, fh, fw) = features.dim();
    let down = crate::metrics::resize_mask_nearest(mask, fh, fw);
    let mut member_pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); class_set.len()];
    for y in 0..fh {
        for x in 0..fw {
            let v = down[(y, x)];
            if v != ignore_index {
                member_pixels[v as usize].push((y, x));
            }
        }
    }
    let present: Vec<usize> = (0..class_set.len())
        .filter(|&c| !member_pixels[c].is_empty())
        .collect();
    if present.is_empty() {
        return Err(EngineError::AllIgnored);
    }
    let mut loss_sum = 0.0;
    let mut g_feat = Array3::zeros((cf, fh, fw));
    let n_classes = present.len() as f64;
    for &c in &present {
        let pixels = &member_pixels[c];
        let count = pixels.len() as f64;
        let mut mean = Array1::zeros(cf);
        for &(y, x) in pixels {
            for ch in 0..cf {
                mean[ch] += features[(ch, y, x)];
            }
        }
        mean.mapv_inplace(|v| v / count);
        let (emb, adapter_trace) = adapter.forward(&mean);
        let v_c = lookup(bank, &class_set[c])?;
        let (loss, g_emb) = language_consistency_loss_grad(&emb, &v_c)?;
        loss_sum += loss;
        if scale != 0.0 {
            let term_scale = scale / n_classes;
            let g_mean = adapter.backward(&adapter_trace, &(g_emb * term_scale), grad_adapter);
            for &(y, x) in pixels {
                for ch in 0..cf {
                    g_feat[(ch, y, x)] += g_mean[ch] / count;
                }
            }
        }
    }
    let loss = loss_sum / n_classes;
    Ok((loss, if scale != 0.0 { Some(g_feat) } else { None }))
}

/// Per-pixel argmax of logits; ties resolve to the lowest class index.
pub fn argmax_labels(logits: &Array3<f64>) -> Array2<u32> {
    let (k, h, w) = logits.dim();
    let mut labels = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for c in 1..k {
                if logits[(c, y, x)] > logits[(best, y, x)] {
                    best = c;
                }
            }
            labels[(y, x)] = best as u32;
        }
    }
    labels
}

/// Runs the student over labeled samples and scores mean IoU.
pub fn evaluate(
    backbone: &SegBackbone,
    samples: &[SegSample],
    class_set: &[String],
) -> Result<EvalReport, EngineError> {
    if samples.is_empty() {
        return Err(EngineError::EmptyDataset {
            split: "eval".into(),
        });
    }
    let k = class_set.len();
    let mut cm = ConfusionMatrix::new(k);
    for sample in samples {
        let mask = sample
            .mask
            .as_ref()
            .ok_or_else(|| EngineError::MissingMask {
                id: sample.id.clone(),
            })?;
        let (logits, _) = backbone.forward(&sample.image);
        let pred = argmax_labels(&logits);
        cm.accumulate(&pred, mask, k as u32)?;
    }
    Ok(EvalReport::from_matrix(&cm, class_set, None)?)
}

/// Scores the student on the held-out target ground truth.
pub fn evaluate_bundle(
    backbone: &SegBackbone,
    bundle: &DatasetBundle,
) -> Result<EvalReport, EngineError> {
    if bundle.target_eval.len() != bundle.target.len() {
        return Err(EngineError::Shape {
            what: format!(
                "{} target images but {} eval masks",
                bundle.target.len(),
                bundle.target_eval.len()
            ),
        });
    }
    let samples: Vec<SegSample> = bundle
        .target
        .iter()
        .zip(&bundle.target_eval)
        .map(|(s, mask)| SegSample {
            image: s.image.clone(),
            mask: Some(mask.clone()),
            id: s.id.clone(),
        })
        .collect();
    evaluate(backbone, &samples, &bundle.class_set)
}

/// Stateful trainer exposing single steps so tests can inspect the model
/// between updates. `train` wraps it with run-directory bookkeeping.
pub struct Trainer<'a> {
    config: TrainConfig,
    bundle: &'a DatasetBundle,
    bank: Option<&'a EmbeddingBank>,
    model: ModelPair,
    opt: AdamW,
    sampler: RareClassSampler,
    warnings: Vec<String>,
    history: Vec<StepRecord>,
    steps_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        bundle: &'a DatasetBundle,
        bank: Option<&'a EmbeddingBank>,
        config: &TrainConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if bundle.source.is_empty() {
            return Err(EngineError::EmptyDataset {
                split: "source".into(),
            });
        }
        if bundle.target.is_empty() {
            return Err(EngineError::EmptyDataset {
                split: "target".into(),
            });
        }
        if bundle.class_set.len() != config.network.num_classes {
            return Err(EngineError::Shape {
                what: format!(
                    "dataset has {} classes, network expects {}",
                    bundle.class_set.len(),
                    config.network.num_classes
                ),
            });
        }
        let masks: Vec<&Array2<u32>> = bundle
            .source
            .iter()
            .map(|s| {
                s.mask
                    .as_ref()
                    .ok_or_else(|| EngineError::MissingMask { id: s.id.clone() })
            })
            .collect::<Result<_, _>>()?;
        let (sampler, warnings) = RareClassSampler::new(
            &masks,
            config.network.num_classes,
            bundle.ignore_index(),
            config.rcs_temperature,
        )?;
        let model = init_model(&config.network, config.seed)?;
        let opt = AdamW::new(&trainable_layout(&model));
        Ok(Self {
            config: config.clone(),
            bundle,
            bank,
            model,
            opt,
            sampler,
            warnings,
            history: Vec::new(),
            steps_done: 0,
        })
    }

    pub fn model(&self) -> &ModelPair {
        &self.model
    }

    /// Direct access to the model, e.g. for resuming from a checkpoint.
    pub fn model_mut(&mut self) -> &mut ModelPair {
        &mut self.model
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_model(self) -> ModelPair {
        self.model
    }

    /// Which sides carry the alignment loss. Pixel alignment needs ground
    /// truth for its per-class means, so it always runs on source.
    fn lang_sides(&self) -> (bool, bool) {
        if self.config.network.align_mode == AlignMode::PixelAlign {
            return (true, false);
        }
        match self.config.caption_mode {
            CaptionSide::SourceOnly => (true, false),
            CaptionSide::TargetOnly => (false, true),
            CaptionSide::SourceAndTarget => (true, true),
        }
    }

    fn lang_chain(
        &self,
        features: &Array3<f64>,
        mask: Option<&Array2<u32>>,
        image_id: &str,
        scale: f64,
        grad: &mut GradHolder,
    ) -> Result<(f64, Option<Array3<f64>>), EngineError> {
        let bank = self.bank.expect("caller checked lang_active");
        if self.config.network.align_mode == AlignMode::PixelAlign {
            let mask = mask.ok_or_else(|| EngineError::MissingMask {
                id: image_id.to_string(),
            })?;
            pixel_lang_chain(
                &self.model.adapter,
                features,
                mask,
                &self.bundle.class_set,
                self.bundle.ignore_index(),
                bank,
                scale,
                &mut grad.adapter,
            )
        } else {
            let v = lookup(bank, image_id)?;
            pooled_lang_chain(
                &self.model.pool,
                &self.model.adapter,
                self.config.network.adapter_on_text,
                features,
                &v,
                scale,
                &mut grad.pool,
                &mut grad.adapter,
            )
        }
    }

    /// One full forward/backward over a batch drawn from the `step/{t}`
    /// stream. Returns (L_S, L_T, L_p, q_mean) plus the accumulated
    /// gradient of L_S + L_T + lambda_p * L_p over student parameters.
    /// Reads the model but mutates nothing.
    fn accumulate(&self, t: usize) -> Result<(f64, f64, f64, f64, GradHolder), EngineError> {
        let b = self.config.batch_size;
        let ignore = self.bundle.ignore_index();
        let (lang_src, lang_tgt) = self.lang_sides();
        let lang_active = self.bank.is_some();
        let n_lang_terms = ((lang_src as usize) + (lang_tgt as usize)) * b;
        let lambda = self.config.lambda_p;
        let scale = if lang_active && n_lang_terms > 0 {
            lambda / n_lang_terms as f64
        } else {
            0.0
        };

        let mut rng = stream_rng(self.config.seed, &format!("step/{t}"));
        let mut grad = GradHolder::zeroed(&self.config.network)?;
        let mut ls_sum = 0.0;
        let mut lt_sum = 0.0;
        let mut lp_sum = 0.0;
        let mut q_sum = 0.0;

        for _ in 0..b {
            let si = self.sampler.sample(&mut rng);
            let ti = rng.random_range(0..self.bundle.target.len());
            let src = &self.bundle.source[si];
            let tgt = &self.bundle.target[ti];
            let src_mask = src
                .mask
                .as_ref()
                .ok_or_else(|| EngineError::MissingMask { id: src.id.clone() })?;

            // Supervised pass, with the source-side alignment sharing the
            // same forward.
            let (logits, trace) = self.model.student.forward(&src.image);
            let (ls, mut g_logits) = supervised_loss_grad(&logits, src_mask, ignore)?;
            ls_sum += ls;
            g_logits.mapv_inplace(|v| v / b as f64);
            let mut g_feat = None;
            if lang_active && lang_src {
                let (lp, gf) =
                    self.lang_chain(&trace.features, Some(src_mask), &src.id, scale, &mut grad)?;
                lp_sum += lp;
                g_feat = gf;
            }
            self.model.student.backward(
                &trace,
                Some(&g_logits),
                g_feat.as_ref(),
                &mut grad.backbone,
            );

            // Teacher pass: forward only, by construction no gradient path.
            let (t_logits, _) = self.model.teacher.forward(&tgt.image);
            let probs = softmax(&t_logits);
            let pseudo = pseudo_labels(&probs)?;
            let q = quality_estimate(&probs, self.config.tau);
            q_sum += q;

            if self.config.mix_enabled {
                let mixed = classmix(&src.image, src_mask, &tgt.image, &pseudo, ignore, &mut rng)?;
                let (m_logits, m_trace) = self.model.student.forward(&mixed.image);
                let (lt, mut g_t) = target_loss_grad(&m_logits, &mixed.label, q)?;
                lt_sum += lt;
                g_t.mapv_inplace(|v| v / b as f64);
                self.model
                    .student
                    .backward(&m_trace, Some(&g_t), None, &mut grad.backbone);
                if lang_active && lang_tgt {
                    // Alignment sees the clean target image, not the mix.
                    let (_, clean_trace) = self.model.student.forward(&tgt.image);
                    let (lp, gf) =
                        self.lang_chain(&clean_trace.features, None, &tgt.id, scale, &mut grad)?;
                    lp_sum += lp;
                    if let Some(gf) = gf {
                        self.model.student.backward(
                            &clean_trace,
                            None,
                            Some(&gf),
                            &mut grad.backbone,
                        );
                    }
                }
            } else {
                let (s_logits, s_trace) = self.model.student.forward(&tgt.image);
                let (lt, mut g_t) = target_loss_grad(&s_logits, &pseudo, q)?;
                lt_sum += lt;
                g_t.mapv_inplace(|v| v / b as f64);
                let mut g_feat = None;
                if lang_active && lang_tgt {
                    let (lp, gf) =
                        self.lang_chain(&s_trace.features, None, &tgt.id, scale, &mut grad)?;
                    lp_sum += lp;
                    g_feat = gf;
                }
                self.model.student.backward(
                    &s_trace,
                    Some(&g_t),
                    g_feat.as_ref(),
                    &mut grad.backbone,
                );
            }
        }

        let l_s = ls_sum / b as f64;
        let l_t = lt_sum / b as f64;
        let l_p = if n_lang_terms > 0 && lang_active {
            lp_sum / n_lang_terms as f64
        } else {
            0.0
        };
        let q_mean = q_sum / b as f64;
        for (what, v) in [("L_S", l_s), ("L_T", l_t), ("L_p", l_p)] {
            if !v.is_finite() {
                return Err(EngineError::NonFinite {
                    step: t,
                    what: what.into(),
                });
            }
        }
        Ok((l_s, l_t, l_p, q_mean, grad))
    }

    /// Losses and analytic gradients for the step the trainer would take
    /// next, without touching the optimizer, the teacher, or the step
    /// counter. Gradient names match `trainable_params_mut`, and the
    /// gradient is taken on L_S + L_T + lambda_p * L_p.
    pub fn gradient_probe(&self) -> Result<(StepRecord, NamedGrads), EngineError> {
        let t = self.steps_done;
        let (l_s, l_t, l_p, q_mean, grad) = self.accumulate(t)?;
        let lr = self.config.lr_decoder * warmup_factor(t, self.config.warmup_steps);
        let grads = grad
            .views()
            .into_iter()
            .map(|(name, v)| (name, v.to_owned()))
            .collect();
        let record = StepRecord {
            step: t,
            l_s,
            l_t,
            l_p,
            q_mean,
            lr,
        };
        Ok((record, grads))
    }

    /// Named trainable student tensors, for probes that nudge weights.
    pub fn trainable_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        trainable_views_mut(&mut self.model)
    }

    pub fn step(&mut self) -> Result<StepRecord, EngineError> {
        let t = self.steps_done;
        let (l_s, l_t, l_p, q_mean, grad) = self.accumulate(t)?;

        let factor = warmup_factor(t, self.config.warmup_steps);
        let lr_enc = self.config.lr_encoder * factor;
        let lr_dec = self.config.lr_decoder * factor;
        {
            let grads = grad.views();
            let mut params = trainable_views_mut(&mut self.model);
            self.opt.step(
                &mut params,
                &grads,
                &|name| {
                    if name.starts_with("student.stages.") {
                        lr_enc
                    } else {
                        lr_dec
                    }
                },
                ADAM_WEIGHT_DECAY,
            )?;
        }
        ema_update(
            &mut self.model.teacher,
            &self.model.student,
            self.config.alpha,
        )?;

        self.steps_done += 1;
        let record = StepRecord {
            step: t,
            l_s,
            l_t,
            l_p,
            q_mean,
            lr: lr_dec,
        };
        self.history.push(record.clone());
        Ok(record)
    }
}

pub const METRICS_CSV_HEADER: &str = "step,L_S,L_T,L_p,q_T_mean,lr";

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.l_s, r.l_t, r.l_p, r.q_mean, r.lr
        ));
    }
    out
}

/// Full training run. When `run_dir` is given it receives a config
/// snapshot, the metrics CSV, periodic plus final checkpoints, and the
/// final evaluation report.
pub fn train(
    bundle: &DatasetBundle,
    bank: Option<&EmbeddingBank>,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutput, EngineError> {
    let mut trainer = Trainer::new(bundle, bank, config)?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("config.json"))?;
        f.write_all(serde_json::to_string_pretty(config)?.as_bytes())?;
        f.write_all(b"\n")?;
    }
    for t in 0..config.total_steps {
        trainer.step()?;
        if let Some(dir) = run_dir {
            if config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0 {
                let name = format!("checkpoint_{:06}.ldck", t + 1);
                save_checkpoint(trainer.model(), &dir.join(name))?;
            }
        }
    }
    let eval = if bundle.target_eval.is_empty() {
        None
    } else {
        Some(evaluate_bundle(&trainer.model().student, bundle)?)
    };
    if let Some(dir) = run_dir {
        std::fs::write(dir.join("metrics.csv"), history_csv(trainer.history()))?;
        save_checkpoint(trainer.model(), &dir.join("final.ldck"))?;
        if let Some(report) = &eval {
            let mut f = std::fs::File::create(dir.join("eval.json"))?;
            f.write_all(serde_json::to_string_pretty(report)?.as_bytes())?;
            f.write_all(b"\n")?;
            std::fs::write(dir.join("eval.txt"), report.render_table())?;
        }
    }
    let warnings = trainer.warnings().to_vec();
    let history = trainer.history().to_vec();
    Ok(TrainOutput {
        model: trainer.into_model(),
        history,
        eval,
        warnings,
    })
}
