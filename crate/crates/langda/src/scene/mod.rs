//! Synthetic paired source/target segmentation scenes.
//!
//! A [`SceneSpec`] lists layout rules that paint class regions onto a mask
//! (class 0 is the background fill), the mask is rendered to RGB through a
//! fixed palette with per-pixel jitter, and target-domain images additionally
//! pass through a photometric [`DomainShift`]. Masks are never touched by the
//! shift. Everything is a pure function of (spec, seed, shift).

mod caption;
mod dataset;
mod shift;

pub use caption::{mentioned_classes, template_caption};
pub use dataset::{export_dataset, load_dataset, Manifest, ManifestSample};
pub use shift::apply_shift;

use crate::rng::stream_rng;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible layout: {rule}")]
    InfeasibleLayout { rule: String },
    #[error("mask is empty (all pixels ignored)")]
    EmptyMask,
    #[error("mask value {value} invalid for {num_classes} classes")]
    BadMaskValue { value: u32, num_classes: usize },
    #[error("dataset counts must be at least 1 (got source={0}, target={1})")]
    BadCounts(usize, usize),
    #[error("manifest error: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Placement rules, applied in order onto a mask prefilled with class 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LayoutRule {
    /// Full-width horizontal band covering rows `[from*H, to*H)`.
    Band { class: String, from: f64, to: f64 },
    /// Full-width band of the given thickness stacked directly above the
    /// topmost row currently occupied by `anchor`.
    BandAbove {
        class: String,
        anchor: String,
        thickness: f64,
    },
    /// `count` roughly circular patches painted only over pixels currently
    /// labeled `on`; each patch must stay 4-connected and leave some `on`
    /// pixels adjacent to it.
    Blob {
        class: String,
        on: String,
        count: usize,
        radius_frac: f64,
    },
    /// Post-generation check that `a` and `b` share a 4-connected boundary.
    RequireAdjacent { a: String, b: String },
}

impl LayoutRule {
    fn describe(&self) -> String {
        match self {
            LayoutRule::Band { class, from, to } => {
                format!("band '{class}' rows [{from}, {to})")
            }
            LayoutRule::BandAbove { class, anchor, .. } => {
                format!("band '{class}' above '{anchor}'")
            }
            LayoutRule::Blob { class, on, .. } => format!("blob '{class}' on '{on}'"),
            LayoutRule::RequireAdjacent { a, b } => {
                format!("require '{a}' adjacent to '{b}'")
            }
        }
    }

    fn class_refs(&self) -> Vec<&str> {
        match self {
            LayoutRule::Band { class, .. } => vec![class],
            LayoutRule::BandAbove { class, anchor, .. } => vec![class, anchor],
            LayoutRule::Blob { class, on, .. } => vec![class, on],
            LayoutRule::RequireAdjacent { a, b } => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Ordered class names; the index is the class id and index 0 is the
    /// background fill.
    pub class_set: Vec<String>,
    pub layout_rules: Vec<LayoutRule>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.height == 0 || self.width == 0 {
            return Err(SceneError::InvalidSpec("zero-sized scene".into()));
        }
        if self.class_set.is_empty() {
            return Err(SceneError::InvalidSpec("empty class set".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &self.class_set {
            if !seen.insert(name.as_str()) {
                return Err(SceneError::InvalidSpec(format!(
                    "duplicate class name '{name}'"
                )));
            }
        }
        for rule in &self.layout_rules {
            for name in rule.class_refs() {
                if !seen.contains(name) {
                    return Err(SceneError::InvalidSpec(format!(
                        "rule references unknown class '{name}'"
                    )));
                }
            }
            match rule {
                LayoutRule::Band { from, to, .. } => {
                    if !(0.0..=1.0).contains(from) || !(0.0..=1.0).contains(to) || from >= to {
                        return Err(SceneError::InvalidSpec(format!(
                            "band range [{from}, {to}) out of order or out of [0, 1]"
                        )));
                    }
                }
                LayoutRule::BandAbove { thickness, .. } => {
                    if *thickness <= 0.0 || *thickness > 1.0 {
                        return Err(SceneError::InvalidSpec(format!(
                            "band thickness {thickness} outside (0, 1]"
                        )));
                    }
                }
                LayoutRule::Blob {
                    count, radius_frac, ..
                } => {
                    if *count == 0 || *radius_frac <= 0.0 {
                        return Err(SceneError::InvalidSpec(
                            "blob needs count >= 1 and a positive radius".into(),
                        ));
                    }
                }
                LayoutRule::RequireAdjacent { .. } => {}
            }
        }
        Ok(())
    }

    pub fn class_id(&self, name: &str) -> u32 {
        self.class_set
            .iter()
            .position(|n| n == name)
            .expect("validated rule class") as u32
    }

    /// One past the last class id; masks use it for unlabeled pixels.
    pub fn ignore_index(&self) -> u32 {
        self.class_set.len() as u32
    }
}

/// Photometric target-domain corruption. Stages run in the fixed order
/// hue rotation, brightness scaling, additive Gaussian noise, low-frequency
/// multiplicative texture; a stage with its neutral parameter is skipped, so
/// the all-neutral shift is the exact identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Rotation around the gray axis, in degrees. Neutral: 0.
    pub hue_shift: f64,
    /// Multiplies all channels. Neutral: 1.
    pub brightness_scale: f64,
    /// Standard deviation of per-pixel additive noise. Neutral: 0.
    pub noise_sigma: f64,
    /// Cycles per image of the multiplicative texture field. Neutral: 0.
    pub texture_freq: f64,
}

impl DomainShift {
    pub fn neutral() -> Self {
        Self {
            hue_shift: 0.0,
            brightness_scale: 1.0,
            noise_sigma: 0.0,
            texture_freq: 0.0,
        }
    }

    pub fn is_neutral(&self) -> bool {
        self.hue_shift == 0.0
            && self.brightness_scale == 1.0
            && self.noise_sigma == 0.0
            && self.texture_freq == 0.0
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        // NaN must be rejected alongside out-of-range values.
        if self.brightness_scale <= 0.0 || self.brightness_scale.is_nan() {
            return Err(SceneError::InvalidSpec(
                "brightness_scale must be positive".into(),
            ));
        }
        if self.noise_sigma < 0.0
            || self.noise_sigma.is_nan()
            || self.texture_freq < 0.0
            || self.texture_freq.is_nan()
        {
            return Err(SceneError::InvalidSpec(
                "noise_sigma and texture_freq must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// One image with an optional dense mask. Mask values are class ids below K
/// or the ignore index K.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    /// Channels-first RGB, values in [0, 1].
    pub image: Array3<f64>,
    pub mask: Option<Array2<u32>>,
    pub id: String,
}

/// Base RGB colors per class id; ids beyond the table cycle.
pub const PALETTE: [[f64; 3]; 12] = [
    [0.53, 0.81, 0.92], // sky blue
    [0.55, 0.35, 0.25], // building brown
    [0.29, 0.29, 0.33], // road asphalt
    [0.48, 0.44, 0.40], // sidewalk concrete
    [0.85, 0.15, 0.15], // car red
    [0.95, 0.80, 0.20], // person yellow
    [0.20, 0.60, 0.25], // vegetation green
    [0.60, 0.60, 0.55], // wall
    [0.70, 0.50, 0.30], // fence
    [0.40, 0.40, 0.42], // pole
    [0.20, 0.20, 0.80], // motorcycle
    [0.80, 0.40, 0.70], // bicycle
];

pub fn class_color(id: u32) -> [f64; 3] {
    PALETTE[id as usize % PALETTE.len()]
}

const JITTER_SIGMA: f64 = 0.02;
const BLOB_ATTEMPTS: usize = 64;

/// Generates one scene. The mask is always returned (for target scenes the
/// caller is expected to divert it into an evaluation sidecar).
pub fn generate_scene(
    spec: &SceneSpec,
    domain: Domain,
    shift: &DomainShift,
) -> Result<SegSample, SceneError> {
    spec.validate()?;
    shift.validate()?;
    let mask = layout_mask(spec)?;
    let mut image = render_image(&mask, spec.seed);
    if domain == Domain::Target {
        apply_shift(&mut image, shift, spec.seed);
    }
    let tag = match domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    };
    Ok(SegSample {
        image,
        mask: Some(mask),
        id: format!("scene-{:016x}-{tag}", spec.seed),
    })
}

fn layout_mask(spec: &SceneSpec) -> Result<Array2<u32>, SceneError> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = stream_rng(spec.seed, "layout");
    let mut mask = Array2::<u32>::zeros((h, w));
    for rule in &spec.layout_rules {
        match rule {
            LayoutRule::Band { class, from, to } => {
                let id = spec.class_id(class);
                let start = (from * h as f64).round() as usize;
                let end = ((to * h as f64).round() as usize).min(h);
                for y in start..end {
                    for x in 0..w {
                        mask[(y, x)] = id;
                    }
                }
            }
            LayoutRule::BandAbove {
                class,
                anchor,
                thickness,
            } => {
                let id = spec.class_id(class);
                let anchor_id = spec.class_id(anchor);
                let top = (0..h)
                    .find(|&y| (0..w).any(|x| mask[(y, x)] == anchor_id))
                    .ok_or_else(|| SceneError::InfeasibleLayout {
                        rule: format!("{} (anchor absent)", rule.describe()),
                    })?;
                let t = ((thickness * h as f64).round() as usize).max(1);
                if top == 0 {
                    return Err(SceneError::InfeasibleLayout {
                        rule: format!("{} (no room above anchor)", rule.describe()),
                    });
                }
                let start = top.saturating_sub(t);
                for y in start..top {
                    for x in 0..w {
                        mask[(y, x)] = id;
                    }
                }
            }
            LayoutRule::Blob {
                class,
                on,
                count,
                radius_frac,
            } => {
                let id = spec.class_id(class);
                let on_id = spec.class_id(on);
                for _ in 0..*count {
                    place_blob(&mut mask, id, on_id, *radius_frac, &mut rng).map_err(|_| {
                        SceneError::InfeasibleLayout {
                            rule: rule.describe(),
                        }
                    })?;
                }
            }
            LayoutRule::RequireAdjacent { a, b } => {
                let ia = spec.class_id(a);
                let ib = spec.class_id(b);
                let pair = (ia.min(ib), ia.max(ib));
                if !adjacent_class_pairs(&mask, spec.ignore_index()).contains(&pair) {
                    return Err(SceneError::InfeasibleLayout {
                        rule: rule.describe(),
                    });
                }
            }
        }
    }
    Ok(mask)
}

/// Paints one connected patch of `class` over `on` pixels. Retries until the
/// patch is nonempty, strictly smaller than the `on` region, 4-connected, and
/// adjacent to at least one surviving `on` pixel.
fn place_blob(
    mask: &mut Array2<u32>,
    class: u32,
    on: u32,
    radius_frac: f64,
    rng: &mut impl Rng,
) -> Result<(), ()> {
    let (h, w) = mask.dim();
    for _ in 0..BLOB_ATTEMPTS {
        let on_pixels: Vec<(usize, usize)> = mask
            .indexed_iter()
            .filter(|(_, &v)| v == on)
            .map(|(p, _)| p)
            .collect();
        if on_pixels.is_empty() {
            return Err(());
        }
        let radius = radius_frac * h.min(w) as f64 * rng.random_range(0.7..1.3);
        let center = on_pixels[rng.random_range(0..on_pixels.len())];
        let r2 = radius * radius;
        let candidate: Vec<(usize, usize)> = on_pixels
            .iter()
            .copied()
            .filter(|&(y, x)| {
                let dy = y as f64 - center.0 as f64;
                let dx = x as f64 - center.1 as f64;
                dy * dy + dx * dx <= r2
            })
            .collect();
        if candidate.is_empty() || candidate.len() == on_pixels.len() {
            continue;
        }
        if !is_connected(&candidate, h, w) {
            continue;
        }
        let set: BTreeSet<(usize, usize)> = candidate.iter().copied().collect();
        let touches_rest = candidate.iter().any(|&(y, x)| {
            neighbors4(y, x, h, w)
                .into_iter()
                .any(|p| mask[p] == on && !set.contains(&p))
        });
        if !touches_rest {
            continue;
        }
        for &p in &candidate {
            mask[p] = class;
        }
        return Ok(());
    }
    Err(())
}

fn neighbors4(y: usize, x: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if y > 0 {
        out.push((y - 1, x));
    }
    if y + 1 < h {
        out.push((y + 1, x));
    }
    if x > 0 {
        out.push((y, x - 1));
    }
    if x + 1 < w {
        out.push((y, x + 1));
    }
    out
}

fn is_connected(pixels: &[(usize, usize)], h: usize, w: usize) -> bool {
    let set: BTreeSet<(usize, usize)> = pixels.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut stack = vec![pixels[0]];
    seen.insert(pixels[0]);
    while let Some((y, x)) = stack.pop() {
        for p in neighbors4(y, x, h, w) {
            if set.contains(&p) && seen.insert(p) {
                stack.push(p);
            }
        }
    }
    seen.len() == set.len()
}

/// Unordered pairs of distinct classes sharing a 4-connected boundary.
pub fn adjacent_class_pairs(mask: &Array2<u32>, ignore: u32) -> BTreeSet<(u32, u32)> {
    let (h, w) = mask.dim();
    let mut pairs = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = mask[(y, x)];
            if a == ignore {
                continue;
            }
            for (ny, nx) in [(y + 1, x), (y, x + 1)] {
                if ny < h && nx < w {
                    let b = mask[(ny, nx)];
                    if b != ignore && b != a {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    }
    pairs
}

fn render_image(mask: &Array2<u32>, seed: u64) -> Array3<f64> {
    let (h, w) = mask.dim();
    let mut rng = stream_rng(seed, "jitter");
    let normal = Normal::new(0.0, JITTER_SIGMA).unwrap();
    let mut image = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let base = class_color(mask[(y, x)]);
            for c in 0..3 {
                image[(c, y, x)] = (base[c] + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    image
}

/// Source scenes, target scenes (masks removed), and the evaluation-only
/// target masks kept aside for scoring.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub class_set: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub source: Vec<SegSample>,
    pub target: Vec<SegSample>,
    /// Ground-truth masks for `target`, index-aligned; never given to the
    /// trainer.
    pub target_eval: Vec<Array2<u32>>,
    pub spec_hash: String,
}

impl DatasetBundle {
    pub fn ignore_index(&self) -> u32 {
        self.class_set.len() as u32
    }
}

/// Builds `n_source` clean scenes and `n_target` shifted scenes. Every scene
/// gets its own seed derived from `seed`, so source and target populations
/// are independent draws from the spec's layout distribution.
pub fn build_dataset(
    spec: &SceneSpec,
    n_source: usize,
    n_target: usize,
    shift: &DomainShift,
    seed: u64,
) -> Result<DatasetBundle, SceneError> {
    if n_source == 0 || n_target == 0 {
        return Err(SceneError::BadCounts(n_source, n_target));
    }
    spec.validate()?;
    shift.validate()?;
    let mut source = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let mut sub = spec.clone();
        sub.seed = crate::rng::derive_seed(seed, &format!("src/{i}"));
        let mut sample = generate_scene(&sub, Domain::Source, shift)?;
        sample.id = format!("s{i:04}");
        source.push(sample);
    }
    let mut target = Vec::with_capacity(n_target);
    let mut target_eval = Vec::with_capacity(n_target);
    for i in 0..n_target {
        let mut sub = spec.clone();
        sub.seed = crate::rng::derive_seed(seed, &format!("tgt/{i}"));
        let mut sample = generate_scene(&sub, Domain::Target, shift)?;
        sample.id = format!("t{i:04}");
        target_eval.push(sample.mask.take().expect("generator always yields a mask"));
        target.push(sample);
    }
    Ok(DatasetBundle {
        class_set: spec.class_set.clone(),
        height: spec.height,
        width: spec.width,
        source,
        target,
        target_eval,
        spec_hash: spec_hash(spec, n_source, n_target, shift, seed)?,
    })
}

fn spec_hash(
    spec: &SceneSpec,
    n_source: usize,
    n_target: usize,
    shift: &DomainShift,
    seed: u64,
) -> Result<String, SceneError> {
    #[derive(Serialize)]
    struct Request<'a> {
        spec: &'a SceneSpec,
        n_source: usize,
        n_target: usize,
        shift: &'a DomainShift,
        seed: u64,
    }
    let json = serde_json::to_vec(&Request {
        spec,
        n_source,
        n_target,
        shift,
        seed,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&json);
    Ok(format!("{:x}", hasher.finalize()))
}

/// The scene spec used by the built-in benchmark preset: a six-class street
/// layout where every class appears in every scene.
pub fn default_street_spec(height: usize, width: usize, seed: u64) -> SceneSpec {
    let names = ["sky", "building", "road", "sidewalk", "car", "person"];
    SceneSpec {
        height,
        width,
        class_set: names.iter().map(|s| s.to_string()).collect(),
        layout_rules: vec![
            LayoutRule::Band {
                class: "building".into(),
                from: 0.3,
                to: 0.55,
            },
            LayoutRule::Band {
                class: "road".into(),
                from: 0.75,
                to: 1.0,
            },
            LayoutRule::BandAbove {
                class: "sidewalk".into(),
                anchor: "road".into(),
                thickness: 0.2,
            },
            LayoutRule::Blob {
                class: "car".into(),
                on: "road".into(),
                count: 2,
                radius_frac: 0.08,
            },
            LayoutRule::Blob {
                class: "person".into(),
                on: "sidewalk".into(),
                count: 2,
                radius_frac: 0.05,
            },
            LayoutRule::RequireAdjacent {
                a: "road".into(),
                b: "sidewalk".into(),
            },
        ],
        seed,
    }
}
