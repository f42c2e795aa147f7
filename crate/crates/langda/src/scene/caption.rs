//! Rule-derived scene captions, used both as the offline stand-in for a real
//! VLM and as the grounding oracle in tests.
//!
//! The caption is a pure function of the mask: which classes are present,
//! roughly where each sits, and which pairs share a boundary. A single-class
//! mask collapses to the short form "The image shows {name}.".

use super::{adjacent_class_pairs, SceneError};
use ndarray::Array2;

/// Describes the classes present in `mask` with one location sentence per
/// class and one "A {a} is next to {b}." clause per 4-adjacent class pair.
pub fn template_caption(mask: &Array2<u32>, class_set: &[String]) -> Result<String, SceneError> {
    let k = class_set.len() as u32;
    let ignore = k;
    let (h, _) = mask.dim();
    let mut counts = vec![0usize; class_set.len()];
    let mut row_sums = vec![0f64; class_set.len()];
    let mut valid = 0usize;
    for ((y, _), &v) in mask.indexed_iter() {
        if v == ignore {
            continue;
        }
        if v > k {
            return Err(SceneError::BadMaskValue {
                value: v,
                num_classes: class_set.len(),
            });
        }
        counts[v as usize] += 1;
        row_sums[v as usize] += y as f64;
        valid += 1;
    }
    if valid == 0 {
        return Err(SceneError::EmptyMask);
    }
    let present: Vec<usize> = (0..class_set.len()).filter(|&c| counts[c] > 0).collect();
    if present.len() == 1 {
        return Ok(format!("The image shows {}.", class_set[present[0]]));
    }

    let names: Vec<&str> = present.iter().map(|&c| class_set[c].as_str()).collect();
    let mut caption = format!(
        "The image depicts a synthetic street scene with regions of {}.",
        join_names(&names)
    );
    for &c in &present {
        let percent = (100.0 * counts[c] as f64 / valid as f64).round() as u32;
        let centroid = row_sums[c] / counts[c] as f64;
        let location = if centroid < h as f64 / 3.0 {
            "near the top"
        } else if centroid < 2.0 * h as f64 / 3.0 {
            "across the middle"
        } else {
            "near the bottom"
        };
        caption.push_str(&format!(
            " The {} region covers about {} percent of the image {}.",
            class_set[c], percent, location
        ));
    }
    for (a, b) in adjacent_class_pairs(mask, ignore) {
        caption.push_str(&format!(
            " A {} is next to {}.",
            class_set[a as usize], class_set[b as usize]
        ));
    }
    caption.push_str(" The regions are drawn as flat colored areas.");
    Ok(caption)
}

fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [only] => (*only).to_string(),
        [head @ .., last] => format!("{} and {last}", head.join(", ")),
    }
}

/// Class names from `class_set` that occur in `text` as whole words (or whole
/// word sequences for multi-word names), case-insensitive.
pub fn mentioned_classes(text: &str, class_set: &[String]) -> Vec<String> {
    let words: Vec<String> = text
        .to_lowercase()
        .split(|ch: char| !ch.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_string())
        .collect();
    class_set
        .iter()
        .filter(|name| {
            let target: Vec<String> = name
                .to_lowercase()
                .split_whitespace()
                .map(str::to_string)
                .collect();
            !target.is_empty() && words.windows(target.len()).any(|w| w == target.as_slice())
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_street_spec, generate_scene, Domain, DomainShift};
    use ndarray::array;
    use std::collections::BTreeSet;

    #[test]
    fn single_class_short_form() {
        let mask = array![[1u32, 1], [1, 1]];
        let class_set = vec!["sky".to_string(), "road".to_string()];
        assert_eq!(
            template_caption(&mask, &class_set).unwrap(),
            "The image shows road."
        );
    }

    #[test]
    fn all_ignore_mask_is_an_error() {
        let mask = array![[2u32, 2], [2, 2]];
        let class_set = vec!["sky".to_string(), "road".to_string()];
        assert!(matches!(
            template_caption(&mask, &class_set),
            Err(SceneError::EmptyMask)
        ));
    }

    #[test]
    fn adjacent_pair_produces_one_clause() {
        let mask = array![[0u32, 0], [1, 1]];
        let class_set = vec!["road".to_string(), "sidewalk".to_string()];
        let caption = template_caption(&mask, &class_set).unwrap();
        assert!(caption.contains("road"));
        assert!(caption.contains("sidewalk"));
        assert_eq!(caption.matches("is next to").count(), 1);
        assert!(caption.contains("A road is next to sidewalk."));
    }

    #[test]
    fn clause_set_equals_adjacency_oracle() {
        for seed in [1u64, 5, 9, 33] {
            let spec = default_street_spec(32, 32, seed);
            let mask = generate_scene(&spec, Domain::Source, &DomainShift::neutral())
                .unwrap()
                .mask
                .unwrap();
            let caption = template_caption(&mask, &spec.class_set).unwrap();
            // Clauses found in the text.
            let mut emitted = BTreeSet::new();
            for sentence in caption.split(". ") {
                if let Some(rest) = sentence.strip_prefix("A ") {
                    if let Some((a, b)) = rest.split_once(" is next to ") {
                        let b = b.trim_end_matches('.');
                        emitted.insert((
                            spec.class_id(a).min(spec.class_id(b)),
                            spec.class_id(a).max(spec.class_id(b)),
                        ));
                    }
                }
            }
            let oracle = adjacent_class_pairs(&mask, spec.ignore_index());
            assert_eq!(emitted, oracle, "seed {seed}");
        }
    }

    #[test]
    fn mentions_exactly_present_classes() {
        for seed in [2u64, 4, 8] {
            let spec = default_street_spec(32, 32, seed);
            let mask = generate_scene(&spec, Domain::Source, &DomainShift::neutral())
                .unwrap()
                .mask
                .unwrap();
            let caption = template_caption(&mask, &spec.class_set).unwrap();
            let present: BTreeSet<String> = mask
                .iter()
                .map(|&v| spec.class_set[v as usize].clone())
                .collect();
            let mentioned: BTreeSet<String> = mentioned_classes(&caption, &spec.class_set)
                .into_iter()
                .collect();
            assert_eq!(mentioned, present, "seed {seed}");
        }
    }

    #[test]
    fn caption_depends_only_on_mask() {
        let mask = array![[0u32, 1], [1, 2]];
        let class_set = vec!["sky".to_string(), "road".to_string(), "car".to_string()];
        let a = template_caption(&mask, &class_set).unwrap();
        let b = template_caption(&mask.clone(), &class_set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn name_joining_uses_and() {
        assert_eq!(join_names(&["a"]), "a");
        assert_eq!(join_names(&["a", "b"]), "a and b");
        assert_eq!(join_names(&["a", "b", "c"]), "a, b and c");
    }
}
