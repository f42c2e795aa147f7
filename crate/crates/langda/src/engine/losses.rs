//! Training objectives and their analytic gradients.
//!
//! All pixel losses work on one image at a time: logits are [K, H, W],
//! labels are [H, W]. Batch averaging is the trainer's job. Cross-entropy
//! uses the log-sum-exp form throughout, so saturated logits produce large
//! finite losses instead of infinities.

use super::EngineError;
use ndarray::{Array1, Array2, Array3};

/// Per-pixel softmax over the class axis.
pub fn softmax(logits: &Array3<f64>) -> Array3<f64> {
    let (k, h, w) = logits.dim();
    let mut out = Array3::zeros((k, h, w));
    for y in 0..h {
        for x in 0..w {
            let m = (0..k)
                .map(|c| logits[(c, y, x)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..k {
                let e = (logits[(c, y, x)] - m).exp();
                out[(c, y, x)] = e;
                z += e;
            }
            for c in 0..k {
                out[(c, y, x)] /= z;
            }
        }
    }
    out
}

fn log_softmax_at(logits: &Array3<f64>, c: usize, y: usize, x: usize) -> f64 {
    let k = logits.dim().0;
    let m = (0..k)
        .map(|i| logits[(i, y, x)])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = (0..k)
        .map(|i| (logits[(i, y, x)] - m).exp())
        .sum::<f64>()
        .ln()
        + m;
    logits[(c, y, x)] - lse
}

fn check_labels(labels: &Array2<u32>, k: usize, ignore_index: u32) -> Result<(), EngineError> {
    for &v in labels.iter() {
        if v != ignore_index && v as usize >= k {
            return Err(EngineError::BadLabel {
                value: v,
                num_classes: k,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy over non-ignored pixels.
pub fn supervised_loss(
    logits: &Array3<f64>,
    labels: &Array2<u32>,
    ignore_index: u32,
) -> Result<f64, EngineError> {
    supervised_loss_grad(logits, labels, ignore_index).map(|(v, _)| v)
}

/// Loss plus dL/dlogits. Ignored pixels contribute zero gradient.
pub fn supervised_loss_grad(
    logits: &Array3<f64>,
    labels: &Array2<u32>,
    ignore_index: u32,
) -> Result<(f64, Array3<f64>), EngineError> {
    let (k, h, w) = logits.dim();
    if labels.dim() != (h, w) {
        return Err(EngineError::Shape {
            what: format!("labels {:?} vs logits {:?}", labels.dim(), logits.dim()),
        });
    }
    check_labels(labels, k, ignore_index)?;
    let valid = labels.iter().filter(|&&v| v != ignore_index).count();
    if valid == 0 {
        return Err(EngineError::AllIgnored);
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = Array3::zeros((k, h, w));
    let scale = 1.0 / valid as f64;
    for y in 0..h {
        for x in 0..w {
            let lbl = labels[(y, x)];
            if lbl == ignore_index {
                continue;
            }
            loss -= log_softmax_at(logits, lbl as usize, y, x);
            for c in 0..k {
                let onehot = if c as u32 == lbl { 1.0 } else { 0.0 };
                grad[(c, y, x)] = (probs[(c, y, x)] - onehot) * scale;
            }
        }
    }
    Ok((loss * scale, grad))
}

fn check_probs(probs: &Array3<f64>) -> Result<(), EngineError> {
    let (k, h, w) = probs.dim();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for c in 0..k {
                let p = probs[(c, y, x)];
                if p.is_nan() {
                    return Err(EngineError::BadProbs {
                        what: format!("NaN probability at pixel ({y}, {x})"),
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(EngineError::BadProbs {
                    what: format!("pixel ({y}, {x}) probabilities sum to {sum}"),
                });
            }
        }
    }
    Ok(())
}

/// Per-pixel argmax of a probability map; ties resolve to the lowest
/// class index. No gradient flows through this by construction.
pub fn pseudo_labels(probs: &Array3<f64>) -> Result<Array2<u32>, EngineError> {
    check_probs(probs)?;
    let (k, h, w) = probs.dim();
    let mut labels = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for c in 1..k {
                if probs[(c, y, x)] > probs[(best, y, x)] {
                    best = c;
                }
            }
            labels[(y, x)] = best as u32;
        }
    }
    Ok(labels)
}

/// Fraction of pixels whose top probability strictly exceeds `tau`.
/// Every pixel counts; the target domain has no ignore labels.
pub fn quality_estimate(probs: &Array3<f64>, tau: f64) -> f64 {
    let (k, h, w) = probs.dim();
    let mut confident = 0usize;
    for y in 0..h {
        for x in 0..w {
            let top = (0..k)
                .map(|c| probs[(c, y, x)])
                .fold(f64::NEG_INFINITY, f64::max);
            if top > tau {
                confident += 1;
            }
        }
    }
    confident as f64 / (h * w) as f64
}

/// Quality-weighted cross-entropy against pseudo-labels, averaged over
/// all pixels. A zero quality yields exactly zero without evaluating the
/// cross-entropy.
pub fn target_loss(
    logits: &Array3<f64>,
    pseudo: &Array2<u32>,
    quality: f64,
) -> Result<f64, EngineError> {
    target_loss_grad(logits, pseudo, quality).map(|(v, _)| v)
}

pub fn target_loss_grad(
    logits: &Array3<f64>,
    pseudo: &Array2<u32>,
    quality: f64,
) -> Result<(f64, Array3<f64>), EngineError> {
    let (k, h, w) = logits.dim();
    if pseudo.dim() != (h, w) {
        return Err(EngineError::Shape {
            what: format!(
                "pseudo-labels {:?} vs logits {:?}",
                pseudo.dim(),
                logits.dim()
            ),
        });
    }
    if !(0.0..=1.0).contains(&quality) {
        return Err(EngineError::BadQuality { quality });
    }
    // Pseudo-labels cover every pixel, so the ignore check degenerates to
    // a class-range check.
    check_labels(pseudo, k, u32::MAX)?;
    if quality == 0.0 {
        return Ok((0.0, Array3::zeros((k, h, w))));
    }
    let probs = softmax(logits);
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Array3::zeros((k, h, w));
    let scale = quality / n;
    for y in 0..h {
        for x in 0..w {
            let lbl = pseudo[(y, x)] as usize;
            loss -= log_softmax_at(logits, lbl, y, x);
            for c in 0..k {
                let onehot = if c == lbl { 1.0 } else { 0.0 };
                grad[(c, y, x)] = (probs[(c, y, x)] - onehot) * scale;
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Cosine-distance alignment: 1 - cos(f, v). The text embedding `v` is a
/// frozen constant; only `f` receives gradient.
pub fn language_consistency_loss(f: &Array1<f64>, v: &Array1<f64>) -> Result<f64, EngineError> {
    language_consistency_loss_grad(f, v).map(|(l, _)| l)
}

pub fn language_consistency_loss_grad(
    f: &Array1<f64>,
    v: &Array1<f64>,
) -> Result<(f64, Array1<f64>), EngineError> {
    if f.len() != v.len() {
        return Err(EngineError::Shape {
            what: format!("feature dim {} vs embedding dim {}", f.len(), v.len()),
        });
    }
    let nf = f.dot(f).sqrt();
    let nv = v.dot(v).sqrt();
    if nf == 0.0 || nv == 0.0 {
        return Err(EngineError::ZeroNorm);
    }
    let dot = f.dot(v);
    let cos = dot / (nf * nv);
    // d(1 - cos)/df = -v / (|f||v|) + cos * f / |f|^2.
    let grad = v.mapv(|vi| -vi / (nf * nv)) + f.mapv(|fi| cos * fi / (nf * nf));
    Ok((1.0 - cos, grad))
}

/// L = L_S + L_T + lambda_p * L_p.
pub fn total_loss(l_s: f64, l_t: f64, l_p: f64, lambda_p: f64) -> f64 {
    l_s + l_t + lambda_p * l_p
}
