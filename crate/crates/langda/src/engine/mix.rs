//! Class-mix augmentation: a random half of the classes present in a
//! source label are cut out and pasted onto a target image, carrying
//! their ground-truth labels with them; the remaining pixels keep the
//! target image and its pseudo-labels.

use super::EngineError;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct MixedSample {
    pub image: Array3<f64>,
    pub label: Array2<u32>,
    /// 1 where the pixel came from the source image.
    pub from_source: Array2<u8>,
}

/// Uniformly selects ceil(n/2) of the classes present in the label
/// (ignored pixels never count as a class).
pub fn select_mix_classes<R: Rng>(
    source_label: &Array2<u32>,
    ignore_index: u32,
    rng: &mut R,
) -> BTreeSet<u32> {
    let present: BTreeSet<u32> = source_label
        .iter()
        .cloned()
        .filter(|&v| v != ignore_index)
        .collect();
    let mut pool: Vec<u32> = present.into_iter().collect();
    let take = pool.len().div_ceil(2);
    pool.shuffle(rng);
    pool.into_iter().take(take).collect()
}

/// Pastes the pixels of `classes` (by source label) from the source pair
/// onto the target pair.
pub fn classmix_with_classes(
    source_image: &Array3<f64>,
    source_label: &Array2<u32>,
    target_image: &Array3<f64>,
    target_label: &Array2<u32>,
    classes: &BTreeSet<u32>,
) -> Result<MixedSample, EngineError> {
    if source_image.dim() != target_image.dim()
        || source_label.dim() != target_label.dim()
        || (source_image.dim().1, source_image.dim().2) != source_label.dim()
    {
        return Err(EngineError::Shape {
            what: format!(
                "classmix shapes: source {:?}/{:?}, target {:?}/{:?}",
                source_image.dim(),
                source_label.dim(),
                target_image.dim(),
                target_label.dim()
            ),
        });
    }
    let (c, h, w) = source_image.dim();
    let mut image = target_image.clone();
    let mut label = target_label.clone();
    let mut from_source = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if classes.contains(&source_label[(y, x)]) {
                for ch in 0..c {
                    image[(ch, y, x)] = source_image[(ch, y, x)];
                }
                label[(y, x)] = source_label[(y, x)];
                from_source[(y, x)] = 1;
            }
        }
    }
    Ok(MixedSample {
        image,
        label,
        from_source,
    })
}

/// Random-selection front door used by the trainer.
pub fn classmix<R: Rng>(
    source_image: &Array3<f64>,
    source_label: &Array2<u32>,
    target_image: &Array3<f64>,
    target_label: &Array2<u32>,
    ignore_index: u32,
    rng: &mut R,
) -> Result<MixedSample, EngineError> {
    let classes = select_mix_classes(source_label, ignore_index, rng);
    classmix_with_classes(
        source_image,
        source_label,
        target_image,
        target_label,
        &classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fixtures(seed: u64) -> (Array3<f64>, Array2<u32>, Array3<f64>, Array2<u32>) {
        let mut rng = stream_rng(seed, "mix-test");
        let src_img = Array3::from_shape_fn((3, 4, 5), |_| StandardNormal.sample(&mut rng));
        let tgt_img = Array3::from_shape_fn((3, 4, 5), |_| StandardNormal.sample(&mut rng));
        let src_lbl = Array2::from_shape_fn((4, 5), |_| rng.random_range(0..4u32));
        let tgt_lbl = Array2::from_shape_fn((4, 5), |_| rng.random_range(0..4u32));
        (src_img, src_lbl, tgt_img, tgt_lbl)
    }

    #[test]
    fn pixel_membership_oracle() {
        let (si, sl, ti, tl) = fixtures(0);
        let classes: BTreeSet<u32> = [1u32, 3].into_iter().collect();
        let mixed = classmix_with_classes(&si, &sl, &ti, &tl, &classes).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let from_src = classes.contains(&sl[(y, x)]);
                assert_eq!(mixed.from_source[(y, x)] == 1, from_src);
                for c in 0..3 {
                    let want = if from_src {
                        si[(c, y, x)]
                    } else {
                        ti[(c, y, x)]
                    };
                    assert_eq!(mixed.image[(c, y, x)], want);
                }
                let want = if from_src { sl[(y, x)] } else { tl[(y, x)] };
                assert_eq!(mixed.label[(y, x)], want);
            }
        }
    }

    #[test]
    fn all_classes_copies_source_none_copies_target() {
        let (si, sl, ti, tl) = fixtures(1);
        let all: BTreeSet<u32> = (0..4).collect();
        let mixed = classmix_with_classes(&si, &sl, &ti, &tl, &all).unwrap();
        assert_eq!(mixed.image, si);
        assert_eq!(mixed.label, sl);
        assert!(mixed.from_source.iter().all(|&v| v == 1));

        let none = BTreeSet::new();
        let mixed = classmix_with_classes(&si, &sl, &ti, &tl, &none).unwrap();
        assert_eq!(mixed.image, ti);
        assert_eq!(mixed.label, tl);
        assert!(mixed.from_source.iter().all(|&v| v == 0));
    }

    #[test]
    fn selection_takes_ceil_half_of_present_classes() {
        let mut label = Array2::zeros((2, 5));
        for (i, v) in [0u32, 1, 2, 3, 4].iter().enumerate() {
            label[(0, i)] = *v;
            label[(1, i)] = *v;
        }
        let mut rng = stream_rng(2, "sel");
        for _ in 0..20 {
            let picked = select_mix_classes(&label, 5, &mut rng);
            assert_eq!(picked.len(), 3, "ceil(5/2)");
            assert!(picked.iter().all(|&c| c < 5));
        }
        // Ignored pixels do not contribute a class.
        let mut label = Array2::from_elem((2, 2), 7u32);
        label[(0, 0)] = 1;
        let picked = select_mix_classes(&label, 7, &mut rng);
        assert_eq!(picked.len(), 1);
        assert!(picked.contains(&1));
    }

    #[test]
    fn selection_varies_across_draws() {
        let mut label = Array2::zeros((1, 4));
        for i in 0..4 {
            label[(0, i)] = i as u32;
        }
        let mut rng = stream_rng(3, "sel-var");
        let mut distinct = BTreeSet::new();
        for _ in 0..50 {
            distinct.insert(select_mix_classes(&label, 4, &mut rng));
        }
        assert!(distinct.len() > 1, "selection should not be constant");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (si, sl, _, tl) = fixtures(4);
        let small = Array3::zeros((3, 2, 2));
        assert!(matches!(
            classmix_with_classes(&si, &sl, &small, &tl, &BTreeSet::new()),
            Err(EngineError::Shape { .. })
        ));
    }
}
