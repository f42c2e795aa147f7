//! Rare-class sampling over the labeled source split.
//!
//! Class pixel frequencies f_c are measured once over all source masks.
//! A class is drawn with probability proportional to exp((1 - f_c) / T),
//! then an image containing that class is drawn uniformly. Small T
//! sharpens the distribution toward rare classes; T -> infinity recovers
//! a uniform class draw. Classes no image contains are excluded and
//! reported as warnings.

use super::EngineError;
use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct RareClassSampler {
    /// P(c) for every class id; excluded classes hold 0.
    class_probs: Vec<f64>,
    /// Image indices containing each class.
    class_images: Vec<Vec<usize>>,
    /// Class ids with at least one image, in id order.
    present: Vec<usize>,
}

impl RareClassSampler {
    /// Builds the sampler from source masks. Returns one warning line per
    /// excluded class.
    pub fn new(
        masks: &[&Array2<u32>],
        num_classes: usize,
        ignore_index: u32,
        temperature: f64,
    ) -> Result<(Self, Vec<String>), EngineError> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(EngineError::BadConfigField {
                field: "rcs_temperature".into(),
                requirement: "must be a finite value > 0".into(),
                got: temperature.to_string(),
            });
        }
        if masks.is_empty() {
            return Err(EngineError::EmptyDataset {
                split: "source".into(),
            });
        }
        let mut pixel_counts = vec![0u64; num_classes];
        let mut class_images = vec![Vec::new(); num_classes];
        let mut total_pixels = 0u64;
        for (i, mask) in masks.iter().enumerate() {
            let mut seen = vec![false; num_classes];
            for &v in mask.iter() {
                if v == ignore_index {
                    continue;
                }
                let c = v as usize;
                if c >= num_classes {
                    return Err(EngineError::BadLabel {
                        value: v,
                        num_classes,
                    });
                }
                pixel_counts[c] += 1;
                total_pixels += 1;
                seen[c] = true;
            }
            for (c, &s) in seen.iter().enumerate() {
                if s {
                    class_images[c].push(i);
                }
            }
        }
        if total_pixels == 0 {
            return Err(EngineError::AllIgnored);
        }

        let present: Vec<usize> = (0..num_classes)
            .filter(|&c| !class_images[c].is_empty())
            .collect();
        let warnings: Vec<String> = (0..num_classes)
            .filter(|&c| class_images[c].is_empty())
            .map(|c| format!("class {c} appears in no source image; excluded from sampling"))
            .collect();
        if present.is_empty() {
            return Err(EngineError::AllIgnored);
        }

        // Softmax over (1 - f_c) / T, restricted to present classes.
        let logits: Vec<f64> = present
            .iter()
            .map(|&c| {
                let f = pixel_counts[c] as f64 / total_pixels as f64;
                (1.0 - f) / temperature
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let mut class_probs = vec![0.0; num_classes];
        for (&c, l) in present.iter().zip(&logits) {
            class_probs[c] = (l - m).exp() / z;
        }
        Ok((
            Self {
                class_probs,
                class_images,
                present,
            },
            warnings,
        ))
    }

    pub fn class_probs(&self) -> &[f64] {
        &self.class_probs
    }

    /// Draws a class id according to the rarity distribution.
    pub fn sample_class<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &c in &self.present {
            acc += self.class_probs[c];
            if u < acc {
                return c;
            }
        }
        *self.present.last().expect("nonempty")
    }

    /// Draws an image index: a rarity-weighted class, then a uniform image
    /// containing it.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let c = self.sample_class(rng);
        let images = &self.class_images[c];
        images[rng.random_range(0..images.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// One mask per class, each purely that class, with chosen pixel counts.
    fn masks_with_areas(areas: &[usize]) -> Vec<Array2<u32>> {
        areas
            .iter()
            .enumerate()
            .map(|(c, &n)| Array2::from_elem((1, n), c as u32))
            .collect()
    }

    #[test]
    fn equal_frequencies_give_uniform_probs() {
        let masks = masks_with_areas(&[10, 10, 10, 10]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, warnings) = RareClassSampler::new(&refs, 4, 4, 0.5).unwrap();
        assert!(warnings.is_empty());
        for &p in s.class_probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_temperature_flattens_any_distribution() {
        let masks = masks_with_areas(&[1000, 10, 300]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, _) = RareClassSampler::new(&refs, 3, 3, 1e6).unwrap();
        for &p in s.class_probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn two_class_hand_softmax() {
        // f = {0.9, 0.1}, T = 0.5: weights exp(0.2), exp(1.8).
        let masks = masks_with_areas(&[90, 10]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, _) = RareClassSampler::new(&refs, 2, 2, 0.5).unwrap();
        let w0 = (0.2f64).exp();
        let w1 = (1.8f64).exp();
        assert!((s.class_probs()[0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((s.class_probs()[1] - w1 / (w0 + w1)).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded_with_warning_and_probs_sum_to_one() {
        let masks = masks_with_areas(&[50, 50]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, warnings) = RareClassSampler::new(&refs, 3, 3, 0.5).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("class 2"), "{}", warnings[0]);
        assert_eq!(s.class_probs()[2], 0.0);
        let sum: f64 = s.class_probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_images_contain_the_sampled_class() {
        // Image 0 holds classes {0}, image 1 holds {1}, image 2 holds {0, 1}.
        let masks = [
            Array2::from_elem((2, 2), 0u32),
            Array2::from_elem((2, 2), 1u32),
            Array2::from_shape_fn((2, 2), |(y, _)| y as u32),
        ];
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, _) = RareClassSampler::new(&refs, 2, 2, 0.5).unwrap();
        let mut rng = stream_rng(0, "rcs");
        let mut seen = [false; 3];
        for _ in 0..500 {
            let i = s.sample(&mut rng);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s), "all images reachable: {seen:?}");
    }

    #[test]
    fn empirical_class_draws_match_probs() {
        let masks = masks_with_areas(&[80, 15, 5]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let (s, _) = RareClassSampler::new(&refs, 3, 3, 0.5).unwrap();
        let mut rng = stream_rng(1, "rcs-mc");
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[s.sample_class(&mut rng)] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            let emp = count as f64 / n as f64;
            assert!(
                (emp - s.class_probs()[c]).abs() < 0.01,
                "class {c}: {emp} vs {}",
                s.class_probs()[c]
            );
        }
    }

    #[test]
    fn bad_temperature_is_rejected_by_name() {
        let masks = masks_with_areas(&[10]);
        let refs: Vec<&Array2<u32>> = masks.iter().collect();
        let err = RareClassSampler::new(&refs, 1, 1, 0.0).unwrap_err();
        assert!(err.to_string().contains("rcs_temperature"));
    }
}
