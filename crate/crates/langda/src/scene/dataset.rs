//! Dataset directory format: 8-bit PNGs plus a JSON manifest.
//!
//! ```text
//! out/
//!   manifest.json        ids, split, class set, spec hash
//!   images/{id}.png      RGB
//!   masks/{id}.png       grayscale class ids, 255 = ignore (source only)
//!   eval/{id}.png        target ground truth, referenced only from
//!   eval_masks.json      the evaluation sidecar, never from the manifest
//! ```
//!
//! The loader accepts any directory following this layout, so externally
//! prepared data can be adapted by writing the same manifest.

use super::{DatasetBundle, SceneError, SegSample};
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// In files the ignore index is pinned to 255 regardless of K; in memory it
/// is K.
pub const FILE_IGNORE: u8 = 255;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub split: String,
    pub image: String,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_hash: String,
    pub class_set: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<ManifestSample>,
}

/// Writes images, source masks, the manifest, and the target-mask sidecar.
pub fn export_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<Manifest, SceneError> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    fs::create_dir_all(dir.join("eval"))?;
    let k = bundle.class_set.len() as u32;
    let mut samples = Vec::new();
    for sample in &bundle.source {
        let image_rel = format!("images/{}.png", sample.id);
        let mask_rel = format!("masks/{}.png", sample.id);
        write_image(&sample.image, &dir.join(&image_rel))?;
        let mask = sample.mask.as_ref().ok_or_else(|| {
            SceneError::BadManifest(format!("source sample {} has no mask", sample.id))
        })?;
        write_mask(mask, k, &dir.join(&mask_rel))?;
        samples.push(ManifestSample {
            id: sample.id.clone(),
            split: "source".into(),
            image: image_rel,
            mask: Some(mask_rel),
        });
    }
    let mut eval_masks = BTreeMap::new();
    for (sample, gt) in bundle.target.iter().zip(&bundle.target_eval) {
        let image_rel = format!("images/{}.png", sample.id);
        write_image(&sample.image, &dir.join(&image_rel))?;
        let eval_rel = format!("eval/{}.png", sample.id);
        write_mask(gt, k, &dir.join(&eval_rel))?;
        eval_masks.insert(sample.id.clone(), eval_rel);
        samples.push(ManifestSample {
            id: sample.id.clone(),
            split: "target".into(),
            image: image_rel,
            mask: None,
        });
    }
    let manifest = Manifest {
        spec_hash: bundle.spec_hash.clone(),
        class_set: bundle.class_set.clone(),
        height: bundle.height,
        width: bundle.width,
        samples,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(
        dir.join("eval_masks.json"),
        serde_json::to_vec_pretty(&eval_masks)?,
    )?;
    Ok(manifest)
}

/// Reads a dataset directory back into memory. Target ground truth is pulled
/// from the sidecar when present; without it the bundle has no `target_eval`
/// entries and evaluation is impossible.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle, SceneError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.class_set.is_empty() {
        return Err(SceneError::BadManifest("empty class set".into()));
    }
    let k = manifest.class_set.len() as u32;
    let sidecar: BTreeMap<String, String> = match fs::read(dir.join("eval_masks.json")) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(e.into()),
    };
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut target_eval = Vec::new();
    for entry in &manifest.samples {
        let image = read_image(&dir.join(&entry.image))?;
        match entry.split.as_str() {
            "source" => {
                let mask_rel = entry.mask.as_ref().ok_or_else(|| {
                    SceneError::BadManifest(format!("source sample {} has no mask", entry.id))
                })?;
                let mask = read_mask(&dir.join(mask_rel), k)?;
                source.push(SegSample {
                    image,
                    mask: Some(mask),
                    id: entry.id.clone(),
                });
            }
            "target" => {
                if let Some(rel) = sidecar.get(&entry.id) {
                    target_eval.push(read_mask(&dir.join(rel), k)?);
                }
                target.push(SegSample {
                    image,
                    mask: None,
                    id: entry.id.clone(),
                });
            }
            other => {
                return Err(SceneError::BadManifest(format!(
                    "unknown split '{other}' for sample {}",
                    entry.id
                )));
            }
        }
    }
    if !target_eval.is_empty() && target_eval.len() != target.len() {
        return Err(SceneError::BadManifest(
            "eval sidecar covers only part of the target split".into(),
        ));
    }
    Ok(DatasetBundle {
        class_set: manifest.class_set,
        height: manifest.height,
        width: manifest.width,
        source,
        target,
        target_eval,
        spec_hash: manifest.spec_hash,
    })
}

fn write_image(image: &Array3<f64>, path: &Path) -> Result<(), SceneError> {
    let (_, h, w) = image.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(image[(0, y, x)]),
                to_u8(image[(1, y, x)]),
                to_u8(image[(2, y, x)]),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

fn read_image(path: &Path) -> Result<Array3<f64>, SceneError> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn(
        (3, h as usize, w as usize),
        |(c, y, x)| img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0,
    ))
}

fn write_mask(mask: &Array2<u32>, k: u32, path: &Path) -> Result<(), SceneError> {
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = mask[(y, x)];
            let byte = if v == k {
                FILE_IGNORE
            } else if v < k {
                v as u8
            } else {
                return Err(SceneError::BadMaskValue {
                    value: v,
                    num_classes: k as usize,
                });
            };
            img.put_pixel(x as u32, y as u32, image::Luma([byte]));
        }
    }
    img.save(path)?;
    Ok(())
}

fn read_mask(path: &Path, k: u32) -> Result<Array2<u32>, SceneError> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut mask = Array2::<u32>::zeros((h as usize, w as usize));
    for y in 0..h {
        for x in 0..w {
            let byte = img.get_pixel(x, y).0[0];
            mask[(y as usize, x as usize)] = if byte == FILE_IGNORE {
                k
            } else if (byte as u32) < k {
                byte as u32
            } else {
                return Err(SceneError::BadMaskValue {
                    value: byte as u32,
                    num_classes: k as usize,
                });
            };
        }
    }
    Ok(mask)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_dataset, default_street_spec, DomainShift};
    use tempfile::TempDir;

    fn small_bundle() -> DatasetBundle {
        let spec = default_street_spec(16, 16, 0);
        let shift = DomainShift {
            brightness_scale: 0.6,
            noise_sigma: 0.04,
            ..DomainShift::neutral()
        };
        build_dataset(&spec, 3, 2, &shift, 7).unwrap()
    }

    #[test]
    fn export_then_load_round_trips_masks_exactly() {
        let bundle = small_bundle();
        let dir = TempDir::new().unwrap();
        export_dataset(&bundle, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.class_set, bundle.class_set);
        assert_eq!(loaded.spec_hash, bundle.spec_hash);
        assert_eq!(loaded.source.len(), 3);
        assert_eq!(loaded.target.len(), 2);
        // Masks are integers: PNG round-trip is lossless.
        for (a, b) in loaded.source.iter().zip(&bundle.source) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.id, b.id);
        }
        assert_eq!(loaded.target_eval, bundle.target_eval);
        // Images are 8-bit quantized: equal to within half a step.
        for (a, b) in loaded.source.iter().zip(&bundle.source) {
            for (x, y) in a.image.iter().zip(b.image.iter()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn manifest_never_references_target_masks() {
        let bundle = small_bundle();
        let dir = TempDir::new().unwrap();
        let manifest = export_dataset(&bundle, dir.path()).unwrap();
        for entry in &manifest.samples {
            if entry.split == "target" {
                assert!(entry.mask.is_none());
            } else {
                assert!(entry.mask.is_some());
            }
        }
        let raw = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(!raw.contains("eval/"));
    }

    #[test]
    fn export_is_byte_deterministic() {
        let bundle = small_bundle();
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        export_dataset(&bundle, a.path()).unwrap();
        export_dataset(&bundle, b.path()).unwrap();
        for rel in [
            "manifest.json",
            "eval_masks.json",
            "images/s0000.png",
            "masks/s0001.png",
            "images/t0001.png",
            "eval/t0000.png",
        ] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel} differs between exports");
        }
    }

    #[test]
    fn loader_without_sidecar_yields_no_eval_masks() {
        let bundle = small_bundle();
        let dir = TempDir::new().unwrap();
        export_dataset(&bundle, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("eval_masks.json")).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert!(loaded.target_eval.is_empty());
        assert_eq!(loaded.target.len(), 2);
    }

    #[test]
    fn mask_file_ignore_byte_maps_to_k() {
        let dir = TempDir::new().unwrap();
        let mut mask = ndarray::Array2::<u32>::zeros((4, 4));
        mask[(0, 0)] = 6; // ignore index for K=6
        write_mask(&mask, 6, &dir.path().join("m.png")).unwrap();
        let img = image::open(dir.path().join("m.png")).unwrap().into_luma8();
        assert_eq!(img.get_pixel(0, 0).0[0], FILE_IGNORE);
        let back = read_mask(&dir.path().join("m.png"), 6).unwrap();
        assert_eq!(back, mask);
    }
}
