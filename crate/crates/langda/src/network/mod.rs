//! Segmentation network: a small strided-convolution encoder with a
//! bilinear-upsampling decoder head, plus the attention pool and adapter
//! that project pooled features into the text embedding space.
//!
//! Two shape-congruent parameter sets coexist: the student (trained by
//! gradient) and the teacher (updated only by exponential moving average
//! of the student). The pool and adapter belong to the student side only.
//! All parameters live as f64; seeded initial draws are snapped to the
//! nearest f32 so fresh models survive an f32 checkpoint round trip
//! bit-exactly.

pub mod adapter;
pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod pool;

pub use adapter::{Adapter, AdapterTrace};
pub use pool::{AttentionPool, PoolTrace};

use layers::{bilinear_resize, bilinear_resize_backward, silu, silu_backward, Conv2d};
use ndarray::{Array3, ArrayViewD, ArrayViewMutD};
use params::{join, Params};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {reason}")]
    BadConfig { reason: String },
    #[error("shape mismatch: {what}")]
    ShapeMismatch { what: String },
    #[error("feature map has {tokens} tokens but the positional table holds {max}")]
    TooManyTokens { tokens: usize, max: usize },
    #[error("ema momentum {alpha} outside [0, 1]")]
    BadMomentum { alpha: f64 },
    #[error("checkpoint magic mismatch (not an LDCK file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated: {what}")]
    Truncated { what: String },
    #[error("checkpoint tensor {name} has shape {got:?}, expected {want:?}")]
    TensorShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unknown tensor {0}")]
    UnknownTensor(String),
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where the text-alignment signal attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// One pooled feature per image against its caption embedding.
    #[default]
    Pooled,
    /// Per-class mean pixel features against per-class prompt embeddings.
    PixelAlign,
}

/// Architecture description. `widths` lists the encoder stage output
/// channels; the first stage keeps resolution and every later stage
/// halves it, so the feature map is input size over 2^(stages-1). The
/// tapped feature width equals the last entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// Text embedding width C produced by the adapter.
    pub embed_dim: usize,
    #[serde(default = "default_pool_heads")]
    pub pool_heads: usize,
    /// Capacity of the learned positional table (max H'*W' tokens).
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Project text embeddings through the adapter instead of pooled
    /// image features. Off by default: the adapter sits on the image side.
    #[serde(default)]
    pub adapter_on_text: bool,
    #[serde(default)]
    pub align_mode: AlignMode,
}

fn default_in_channels() -> usize {
    3
}

fn default_widths() -> Vec<usize> {
    vec![8, 16, 32, 32]
}

fn default_pool_heads() -> usize {
    4
}

fn default_max_tokens() -> usize {
    256
}

impl NetworkConfig {
    pub fn new(num_classes: usize, embed_dim: usize) -> Self {
        Self {
            in_channels: default_in_channels(),
            num_classes,
            widths: default_widths(),
            embed_dim,
            pool_heads: default_pool_heads(),
            max_tokens: default_max_tokens(),
            adapter_on_text: false,
            align_mode: AlignMode::Pooled,
        }
    }

    /// Input width of the adapter: the pool output (embed_dim) in pooled
    /// mode, or raw feature channels when aligning per-class pixel means.
    pub fn adapter_in_dim(&self) -> usize {
        match self.align_mode {
            AlignMode::Pooled => self.embed_dim,
            AlignMode::PixelAlign => self.feature_dim(),
        }
    }

    /// Tapped feature channel count C_f.
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |reason: String| Err(NetworkError::BadConfig { reason });
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.widths.is_empty() {
            return bad("widths must list at least one stage".into());
        }
        if let Some(pos) = self.widths.iter().position(|&w| w == 0) {
            return bad(format!("widths[{pos}] must be >= 1"));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        if self.pool_heads == 0 {
            return bad("pool_heads must be >= 1".into());
        }
        if !self.feature_dim().is_multiple_of(self.pool_heads) {
            return bad(format!(
                "pool_heads {} must divide the feature width {}",
                self.pool_heads,
                self.feature_dim()
            ));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be >= 1".into());
        }
        if self.adapter_on_text && self.align_mode == AlignMode::PixelAlign {
            return bad("adapter_on_text cannot combine with pixel_align".into());
        }
        Ok(())
    }
}

/// Encoder-decoder segmentation trunk. Owned twice per model pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SegBackbone {
    pub stages: Vec<Conv2d>,
    pub head: Conv2d,
    pub classifier: Conv2d,
}

/// Saved activations from one backbone forward pass.
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    stage_inputs: Vec<Array3<f64>>,
    stage_pre: Vec<Array3<f64>>,
    /// Bottleneck tap: activation after the last encoder stage.
    pub features: Array3<f64>,
    head_pre: Array3<f64>,
    head_out: Array3<f64>,
    in_size: (usize, usize),
}

impl SegBackbone {
    pub fn zeroed(config: &NetworkConfig) -> Self {
        let mut stages = Vec::new();
        let mut prev = config.in_channels;
        for (i, &w) in config.widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push(Conv2d::new(w, prev, 3, stride));
            prev = w;
        }
        let cf = config.feature_dim();
        SegBackbone {
            stages,
            head: Conv2d::new(cf, cf, 3, 1),
            classifier: Conv2d::new(config.num_classes, cf, 1, 1),
        }
    }

    /// Runs the full trunk. Returns logits at the input resolution and a
    /// trace whose `features` field is the bottleneck tap.
    pub fn forward(&self, image: &Array3<f64>) -> (Array3<f64>, BackboneTrace) {
        let (_, h, w) = image.dim();
        let mut stage_inputs = Vec::with_capacity(self.stages.len());
        let mut stage_pre = Vec::with_capacity(self.stages.len());
        let mut x = image.clone();
        for stage in &self.stages {
            stage_inputs.push(x.clone());
            let pre = stage.forward(&x);
            x = silu(&pre);
            stage_pre.push(pre);
        }
        let features = x;
        let head_pre = self.head.forward(&features);
        let head_out = silu(&head_pre);
        let logits_small = self.classifier.forward(&head_out);
        let logits = bilinear_resize(&logits_small, h, w);
        (
            logits,
            BackboneTrace {
                stage_inputs,
                stage_pre,
                features,
                head_pre,
                head_out,
                in_size: (h, w),
            },
        )
    }

    /// Backpropagates a logits gradient plus an optional extra gradient
    /// arriving directly at the feature tap (the pooling path).
    pub fn backward(
        &self,
        trace: &BackboneTrace,
        g_logits: Option<&Array3<f64>>,
        g_features_extra: Option<&Array3<f64>>,
        grad: &mut SegBackbone,
    ) {
        let (fh, fw) = (trace.features.dim().1, trace.features.dim().2);
        let mut g_features = match g_logits {
            Some(gl) => {
                debug_assert_eq!((gl.dim().1, gl.dim().2), trace.in_size);
                let g_small = bilinear_resize_backward(gl, fh, fw);
                let g_head_out =
                    self.classifier
                        .backward(&trace.head_out, &g_small, &mut grad.classifier);
                let g_head_pre = silu_backward(&trace.head_pre, &g_head_out);
                self.head
                    .backward(&trace.features, &g_head_pre, &mut grad.head)
            }
            None => Array3::zeros(trace.features.dim()),
        };
        if let Some(extra) = g_features_extra {
            g_features += extra;
        }
        let mut g = g_features;
        for i in (0..self.stages.len()).rev() {
            let g_pre = silu_backward(&trace.stage_pre[i], &g);
            g = self.stages[i].backward(&trace.stage_inputs[i], &g_pre, &mut grad.stages[i]);
        }
    }
}

impl Params for SegBackbone {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.visit(&join(prefix, &format!("stages.{i}")), out);
        }
        self.head.visit(&join(prefix, "head"), out);
        self.classifier.visit(&join(prefix, "classifier"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.visit_mut(&join(prefix, &format!("stages.{i}")), out);
        }
        self.head.visit_mut(&join(prefix, "head"), out);
        self.classifier.visit_mut(&join(prefix, "classifier"), out);
    }
}

/// Student and teacher trunks plus the student-only pool and adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub config: NetworkConfig,
    pub student: SegBackbone,
    pub teacher: SegBackbone,
    pub pool: AttentionPool,
    pub adapter: Adapter,
}

impl ModelPair {
    pub fn zeroed(config: &NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let cf = config.feature_dim();
        Ok(ModelPair {
            config: config.clone(),
            student: SegBackbone::zeroed(config),
            teacher: SegBackbone::zeroed(config),
            pool: AttentionPool::new(cf, config.embed_dim, config.pool_heads, config.max_tokens),
            adapter: Adapter::new(config.adapter_in_dim(), config.embed_dim),
        })
    }
}

impl Params for ModelPair {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.student.visit(&join(prefix, "student"), out);
        self.teacher.visit(&join(prefix, "teacher"), out);
        self.pool.visit(&join(prefix, "pool"), out);
        self.adapter.visit(&join(prefix, "adapter"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.student.visit_mut(&join(prefix, "student"), out);
        self.teacher.visit_mut(&join(prefix, "teacher"), out);
        self.pool.visit_mut(&join(prefix, "pool"), out);
        self.adapter.visit_mut(&join(prefix, "adapter"), out);
    }
}

/// Builds a freshly initialized model: Kaiming fan-in normal weights,
/// zero biases, N(0, 0.02) positional rows, every draw snapped to its
/// nearest f32. The teacher starts as an exact copy of the student; each
/// tensor consumes its own named random stream so adding or removing a
/// tensor leaves the others' values unchanged.
pub fn init_model(config: &NetworkConfig, seed: u64) -> Result<ModelPair, NetworkError> {
    let mut model = ModelPair::zeroed(config)?;
    {
        let mut views = Vec::new();
        model.student.visit_mut("student", &mut views);
        model.pool.visit_mut("pool", &mut views);
        model.adapter.visit_mut("adapter", &mut views);
        for (name, view) in views.iter_mut() {
            init_tensor(name, view, seed);
        }
    }
    params::copy_params(&mut model.teacher, &model.student);
    Ok(model)
}

fn init_tensor(name: &str, view: &mut ArrayViewMutD<f64>, seed: u64) {
    let mut rng = crate::rng::stream_rng(seed, &format!("init/{name}"));
    if name.ends_with(".bias") {
        view.fill(0.0);
    } else if name.ends_with(".pos") || name == "pos" {
        view.mapv_inplace(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            snap_f32(0.02 * v)
        });
    } else {
        // Weight tensors: fan_in is input channels times kernel area for
        // conv [o, i, kh, kw], or the input width for linear [o, i].
        let shape = view.shape().to_vec();
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        view.mapv_inplace(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            snap_f32(std * v)
        });
    }
}

fn snap_f32(v: f64) -> f64 {
    (v as f32) as f64
}

/// Exponential moving average: phi' = alpha * phi + (1 - alpha) * theta,
/// elementwise in f64. The student is untouched; the two trunks must be
/// shape-congruent.
pub fn ema_update(
    teacher: &mut SegBackbone,
    student: &SegBackbone,
    alpha: f64,
) -> Result<(), NetworkError> {
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(NetworkError::BadMomentum { alpha });
    }
    let src = params::collect(student, "");
    let mut dst = Vec::new();
    teacher.visit_mut("", &mut dst);
    if src.len() != dst.len() {
        return Err(NetworkError::ShapeMismatch {
            what: format!(
                "teacher has {} tensors, student has {}",
                dst.len(),
                src.len()
            ),
        });
    }
    for ((sn, sv), (dn, dv)) in src.iter().zip(dst.iter_mut()) {
        if sn != dn || sv.shape() != dv.shape() {
            return Err(NetworkError::ShapeMismatch {
                what: format!(
                    "tensor {dn} {:?} vs student {sn} {:?}",
                    dv.shape(),
                    sv.shape()
                ),
            });
        }
        ndarray::Zip::from(dv).and(sv).for_each(|phi, &theta| {
            *phi = alpha * *phi + (1.0 - alpha) * theta;
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::Array3;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            in_channels: 3,
            num_classes: 2,
            widths: vec![2, 4],
            embed_dim: 4,
            pool_heads: 2,
            max_tokens: 64,
            adapter_on_text: false,
            align_mode: AlignMode::Pooled,
        }
    }

    fn randn_image(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = stream_rng(seed, "net-test");
        Array3::from_shape_fn((3, h, w), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            0.5 + 0.2 * v
        })
    }

    #[test]
    fn config_validation_names_the_offending_field() {
        let mut c = tiny_config();
        c.num_classes = 1;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("num_classes"), "{msg}");

        let mut c = tiny_config();
        c.widths = vec![2, 0];
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("widths[1]"), "{msg}");

        let mut c = tiny_config();
        c.pool_heads = 3;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("pool_heads"), "{msg}");
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let config = tiny_config();
        let mut model = init_model(&config, 0).unwrap();
        model.student.classifier.weight.fill(0.0);
        model.student.classifier.bias.fill(0.0);
        let (logits, _) = model.student.forward(&randn_image(8, 8, 1));
        assert!(logits.iter().all(|&v| v == 0.0));
        // Zero logits softmax to exactly uniform over K classes.
        let k = config.num_classes as f64;
        let p = (0.0f64).exp() / (k * (0.0f64).exp());
        assert!((p - 1.0 / k).abs() < 1e-15);
    }

    #[test]
    fn doubling_input_doubles_logit_dims() {
        let model = init_model(&tiny_config(), 2).unwrap();
        let (logits, trace) = model.student.forward(&randn_image(8, 6, 3));
        assert_eq!(logits.dim(), (2, 8, 6));
        assert_eq!(trace.features.dim(), (4, 4, 3));
        let (logits, trace) = model.student.forward(&randn_image(16, 12, 3));
        assert_eq!(logits.dim(), (2, 16, 12));
        assert_eq!(trace.features.dim(), (4, 8, 6));
    }

    #[test]
    fn teacher_starts_as_exact_copy_with_student_only_extras() {
        let model = init_model(&tiny_config(), 4).unwrap();
        let s = params::collect(&model.student, "");
        let t = params::collect(&model.teacher, "");
        assert_eq!(s.len(), t.len());
        for ((sn, sv), (tn, tv)) in s.iter().zip(t.iter()) {
            assert_eq!(sn, tn);
            assert_eq!(sv, tv);
        }
        // Pool and adapter only appear once in the pair's full listing.
        let all = params::collect(&model, "");
        let pools = all.iter().filter(|(n, _)| n.starts_with("pool.")).count();
        let adapters = all
            .iter()
            .filter(|(n, _)| n.starts_with("adapter."))
            .count();
        assert_eq!(pools, 9);
        assert_eq!(adapters, 4);
    }

    #[test]
    fn init_draws_are_f32_exact_and_reproducible() {
        let a = init_model(&tiny_config(), 7).unwrap();
        let b = init_model(&tiny_config(), 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&tiny_config(), 8).unwrap();
        assert_ne!(a, c);
        for (name, view) in params::collect(&a, "") {
            for &v in view.iter() {
                assert_eq!(v, (v as f32) as f64, "{name} holds non-f32 value {v}");
            }
        }
    }

    #[test]
    fn ema_matches_loop_oracle_exactly() {
        let config = tiny_config();
        let mut model = init_model(&config, 9).unwrap();
        // Perturb the student so the trunks differ.
        let mut rng = stream_rng(10, "perturb");
        {
            let mut views = Vec::new();
            model.student.visit_mut("", &mut views);
            for (_, view) in views.iter_mut() {
                view.mapv_inplace(|v| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    v + 0.01 * n
                });
            }
        }
        let alpha = 0.999;
        let expected: Vec<(String, Vec<f64>)> = {
            let t = params::collect(&model.teacher, "");
            let s = params::collect(&model.student, "");
            t.iter()
                .zip(s.iter())
                .map(|((n, tv), (_, sv))| {
                    let vals = tv
                        .iter()
                        .zip(sv.iter())
                        .map(|(&phi, &theta)| alpha * phi + (1.0 - alpha) * theta)
                        .collect();
                    (n.clone(), vals)
                })
                .collect()
        };
        let student_before = model.student.clone();
        ema_update(&mut model.teacher, &model.student, alpha).unwrap();
        assert_eq!(model.student, student_before, "student must be untouched");
        for ((name, want), (gn, got)) in expected
            .iter()
            .zip(params::collect(&model.teacher, "").iter())
        {
            assert_eq!(name, gn);
            for (w, g) in want.iter().zip(got.iter()) {
                assert_eq!(w.to_bits(), g.to_bits(), "{name}: 0 ulp required");
            }
        }
    }

    #[test]
    fn ema_boundary_momenta_and_worked_example() {
        let config = tiny_config();
        let mut model = init_model(&config, 11).unwrap();
        model.teacher.head.bias.fill(1.0);
        model.student.head.bias.fill(0.0);
        ema_update(&mut model.teacher, &model.student, 0.999).unwrap();
        assert!((model.teacher.head.bias[0] - 0.999).abs() < 1e-15);

        // alpha = 0 copies the student outright.
        let mut model = init_model(&config, 12).unwrap();
        model.student.head.bias.fill(3.5);
        ema_update(&mut model.teacher, &model.student, 0.0).unwrap();
        assert_eq!(
            params::collect(&model.teacher, ""),
            params::collect(&model.student, "")
        );

        // alpha = 1 leaves the teacher untouched.
        let mut model = init_model(&config, 13).unwrap();
        let before = model.teacher.clone();
        model.student.head.bias.fill(-2.0);
        ema_update(&mut model.teacher, &model.student, 1.0).unwrap();
        assert_eq!(model.teacher, before);

        // Out-of-range momentum is rejected.
        assert!(matches!(
            ema_update(&mut model.teacher, &model.student, 1.5),
            Err(NetworkError::BadMomentum { .. })
        ));
    }

    #[test]
    fn ema_rejects_shape_incongruence() {
        let a = init_model(&tiny_config(), 14).unwrap();
        let mut other_cfg = tiny_config();
        other_cfg.widths = vec![2, 4, 4];
        let mut b = init_model(&other_cfg, 15).unwrap();
        assert!(matches!(
            ema_update(&mut b.teacher, &a.student, 0.5),
            Err(NetworkError::ShapeMismatch { .. })
        ));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn golden_logits_regression() {
        // Frozen output of the default architecture on a fixed synthetic
        // scene. Any change to layout generation, jitter, initialization,
        // or the forward pass moves these numbers.
        use crate::scene::{default_street_spec, generate_scene, Domain, DomainShift};
        let spec = default_street_spec(16, 16, 42);
        let sample = generate_scene(&spec, Domain::Source, &DomainShift::neutral()).unwrap();
        let config = NetworkConfig::new(6, 64);
        let model = init_model(&config, 0).unwrap();
        let (logits, trace) = model.student.forward(&sample.image);
        assert_eq!(logits.dim(), (6, 16, 16));
        assert_eq!(trace.features.dim(), (32, 2, 2));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
        assert!(close(logits.sum(), 1.09734839649013423e2));
        assert!(close(logits[(0, 0, 0)], 3.16674632774338161e-1));
        assert!(close(logits[(1, 7, 3)], -8.32039620863772450e-2));
        assert!(close(logits[(3, 15, 15)], -3.99130610963705112e-1));
        assert!(close(logits[(5, 8, 8)], -1.82690106515756012e-2));
        assert!(close(logits[(2, 3, 12)], 8.98964888450449751e-2));
        assert!(close(trace.features.sum(), 2.36826522773959169e0));
    }

    #[test]
    fn backbone_gradients_match_finite_differences() {
        let model = init_model(&tiny_config(), 16).unwrap();
        let image = randn_image(6, 6, 17);
        // Loss: weighted sum of logits plus weighted sum of features, so
        // both backward entry points are exercised together.
        let (logits, trace) = model.student.forward(&image);
        let wl = {
            let mut rng = stream_rng(18, "wl");
            Array3::from_shape_fn(logits.dim(), |_| StandardNormal.sample(&mut rng))
        };
        let wf = {
            let mut rng = stream_rng(19, "wf");
            Array3::from_shape_fn(trace.features.dim(), |_| StandardNormal.sample(&mut rng))
        };
        let loss = |net: &SegBackbone| {
            let (l, t) = net.forward(&image);
            (&l * &wl).sum() + (&t.features * &wf).sum()
        };
        let mut grad = SegBackbone::zeroed(&tiny_config());
        model
            .student
            .backward(&trace, Some(&wl), Some(&wf), &mut grad);

        let eps = 1e-5;
        let flat_g = params::collect(&grad, "");
        let base_names: Vec<String> = flat_g.iter().map(|(n, _)| n.clone()).collect();
        for name in &base_names {
            let analytic = flat_g
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.iter().next().copied().unwrap())
                .unwrap();
            let mut np = model.student.clone();
            let mut nm = model.student.clone();
            for (net, delta) in [(&mut np, eps), (&mut nm, -eps)] {
                let mut views = Vec::new();
                net.visit_mut("", &mut views);
                for (n, view) in views.iter_mut() {
                    if n == name {
                        if let Some(first) = view.iter_mut().next() {
                            *first += delta;
                        }
                    }
                }
            }
            let fd = (loss(&np) - loss(&nm)) / (2.0 * eps);
            let rel = (analytic - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-4, "{name}: analytic {analytic} vs fd {fd}");
        }
    }
}
