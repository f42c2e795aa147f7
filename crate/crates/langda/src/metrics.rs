//! Confusion-matrix segmentation metrics: per-class IoU, mIoU, and grouped
//! reports (e.g. per weather condition).
//!
//! Rows of the matrix are ground truth, columns are predictions. Classes that
//! never occur in either role have undefined IoU and are excluded from the
//! mean. mIoU is reported in percent.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and ground-truth masks have different shapes: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("class id {id} out of range for {num_classes} classes")]
    ClassOutOfRange { id: u32, num_classes: usize },
    #[error("all classes are undefined; nothing to average")]
    AllUndefined,
    #[error("group '{0}' label count does not match sample count")]
    GroupMismatch(String),
}

/// Pixel-count confusion matrix over `K` classes plus an ignored-pixel tally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: Array2::zeros((num_classes, num_classes)),
            ignored: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[(gt, pred)]
    }

    /// Total pixels accumulated, counted plus ignored.
    pub fn total_pixels(&self) -> u64 {
        self.counts.sum() + self.ignored
    }

    /// Accumulates one prediction/ground-truth mask pair.
    ///
    /// Pixels whose ground truth equals `ignore_index` only bump the ignore
    /// tally. Any other out-of-range id is an error.
    pub fn accumulate(
        &mut self,
        pred: &Array2<u32>,
        gt: &Array2<u32>,
        ignore_index: u32,
    ) -> Result<(), MetricsError> {
        if pred.dim() != gt.dim() {
            return Err(MetricsError::ShapeMismatch(pred.dim(), gt.dim()));
        }
        let k = self.num_classes();
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if g == ignore_index {
                self.ignored += 1;
                continue;
            }
            if g as usize >= k {
                return Err(MetricsError::ClassOutOfRange {
                    id: g,
                    num_classes: k,
                });
            }
            if p as usize >= k {
                return Err(MetricsError::ClassOutOfRange {
                    id: p,
                    num_classes: k,
                });
            }
            self.counts[(g as usize, p as usize)] += 1;
        }
        Ok(())
    }

    /// Elementwise sum; matrices must agree on K.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes(), other.num_classes());
        self.counts += &other.counts;
        self.ignored += other.ignored;
    }

    /// Per-class IoU as `intersection / union`; `None` where the union is
    /// empty (class absent from both ground truth and predictions).
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let k = self.num_classes();
        (0..k)
            .map(|c| {
                let tp = self.counts[(c, c)];
                let row: u64 = self.counts.row(c).sum();
                let col: u64 = self.counts.column(c).sum();
                let union = row + col - tp;
                if union == 0 {
                    None
                } else {
                    Some(tp as f64 / union as f64)
                }
            })
            .collect()
    }

    /// Mean of the defined per-class IoUs, in percent.
    pub fn miou(&self) -> Result<f64, MetricsError> {
        let defined: Vec<f64> = self.iou_per_class().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(MetricsError::AllUndefined);
        }
        Ok(100.0 * defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Nearest-neighbor resize of an integer mask, used to bring predictions to
/// ground-truth resolution before accumulation.
pub fn resize_mask_nearest(mask: &Array2<u32>, out_h: usize, out_w: usize) -> Array2<u32> {
    let (in_h, in_w) = mask.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = ((y as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5).round();
        let sx = ((x as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5).round();
        let sy = sy.clamp(0.0, (in_h - 1) as f64) as usize;
        let sx = sx.clamp(0.0, (in_w - 1) as f64) as usize;
        mask[(sy, sx)]
    })
}

/// One group row of a [`GroupedReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub samples: usize,
    pub miou: f64,
}

/// Per-group mIoU table with an "All" row over the summed matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupedReport {
    pub groups: Vec<GroupEntry>,
    pub all: GroupEntry,
    /// Groups dropped because every class in them was undefined.
    pub skipped: Vec<String>,
}

/// Aggregates per-sample confusion matrices by group label.
///
/// Empty or fully-undefined groups are omitted (listed in `skipped`).
pub fn grouped_report(
    per_sample: &[ConfusionMatrix],
    groups: &[String],
) -> Result<GroupedReport, MetricsError> {
    if per_sample.len() != groups.len() {
        return Err(MetricsError::GroupMismatch(format!(
            "{} cms vs {} labels",
            per_sample.len(),
            groups.len()
        )));
    }
    let mut by_group: BTreeMap<&str, (ConfusionMatrix, usize)> = BTreeMap::new();
    let mut all: Option<ConfusionMatrix> = None;
    for (cm, group) in per_sample.iter().zip(groups) {
        match all.as_mut() {
            Some(total) => total.merge(cm),
            None => all = Some(cm.clone()),
        }
        by_group
            .entry(group.as_str())
            .and_modify(|(acc, n)| {
                acc.merge(cm);
                *n += 1;
            })
            .or_insert_with(|| (cm.clone(), 1));
    }
    let all = all.ok_or(MetricsError::AllUndefined)?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (name, (cm, n)) in &by_group {
        match cm.miou() {
            Ok(miou) => entries.push(GroupEntry {
                name: name.to_string(),
                samples: *n,
                miou,
            }),
            Err(_) => skipped.push(name.to_string()),
        }
    }
    Ok(GroupedReport {
        groups: entries,
        all: GroupEntry {
            name: "All".to_string(),
            samples: per_sample.len(),
            miou: all.miou()?,
        },
        skipped,
    })
}

/// Full evaluation report: per-class IoU, mIoU, optional group table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub iou_per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub groups: Option<GroupedReport>,
}

impl EvalReport {
    pub fn from_matrix(
        cm: &ConfusionMatrix,
        class_names: &[String],
        groups: Option<GroupedReport>,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            class_names: class_names.to_vec(),
            iou_per_class: cm.iou_per_class(),
            miou: cm.miou()?,
            groups,
        })
    }

    /// Renders the per-class table in the usual benchmark layout: one column
    /// per class, IoU in percent with one decimal, mIoU last.
    pub fn render_table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for (name, iou) in self.class_names.iter().zip(&self.iou_per_class) {
            header.push_str(&format!("{:>10}", truncate_label(name)));
            match iou {
                Some(v) => row.push_str(&format!("{:>10.1}", 100.0 * v)),
                None => row.push_str(&format!("{:>10}", "-")),
            }
        }
        header.push_str(&format!("{:>10}", "mIoU"));
        row.push_str(&format!("{:>10.1}", self.miou));
        let mut out = format!("{header}\n{row}\n");
        if let Some(groups) = &self.groups {
            out.push('\n');
            for g in &groups.groups {
                out.push_str(&format!(
                    "{:<12} {:>6.1}  ({} samples)\n",
                    g.name, g.miou, g.samples
                ));
            }
            out.push_str(&format!(
                "{:<12} {:>6.1}  ({} samples)\n",
                groups.all.name, groups.all.miou, groups.all.samples
            ));
        }
        out
    }
}

fn truncate_label(name: &str) -> String {
    if name.len() <= 9 {
        name.to_string()
    } else {
        name[..9].to_string()
    }
}
