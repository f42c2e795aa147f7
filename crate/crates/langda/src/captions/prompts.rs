//! Prompt templates for the two caption stages.
//!
//! The wording is part of the method contract and is pinned by golden-string
//! tests; edits here are protocol changes, not refactors. In target-caption
//! mode ground-truth masks are treated as unavailable, so both prompts drop
//! their class-name sentence entirely.

use super::CaptionError;

pub const VLM_QUERY_PREFIX: &str = "Describe the image in detail for semantic segmentation tasks.";

pub const LLM_SYSTEM: &str = "You are a helpful assistant for refining and condensing \
detailed image caption descriptions for semantic segmentation.";

pub const LLM_QUERY_PREFIX: &str = "Shorten the description to less than 77 tokens. \
Do not use quotation marks or parentheses.";

/// Appended to the user prompt on refinement retries.
pub const RETRY_SUFFIX: &str = "Your previous answer was too long; use fewer than 70 tokens.";

/// `['road', 'car']` style rendering used inside both prompts.
pub fn render_class_list(class_names: &[String]) -> String {
    let quoted: Vec<String> = class_names.iter().map(|n| format!("'{n}'")).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn make_vlm_prompt(class_names: &[String]) -> Result<String, CaptionError> {
    if class_names.is_empty() {
        return Err(CaptionError::EmptyClassList);
    }
    Ok(format!(
        "{VLM_QUERY_PREFIX} Be sure to include the class names {} and their pixel locations.",
        render_class_list(class_names)
    ))
}

/// Target-caption mode: no ground truth, so no class grounding.
pub fn make_vlm_prompt_unconditioned() -> String {
    VLM_QUERY_PREFIX.to_string()
}

pub fn make_llm_prompt(
    class_names: &[String],
    vlm_caption: &str,
) -> Result<(String, String), CaptionError> {
    if vlm_caption.is_empty() {
        return Err(CaptionError::EmptyCaption);
    }
    if class_names.is_empty() {
        return Err(CaptionError::EmptyClassList);
    }
    let user = format!(
        "{LLM_QUERY_PREFIX} Be sure to include the class name {} and their pixel locations. \
The description is {vlm_caption}",
        render_class_list(class_names)
    );
    Ok((LLM_SYSTEM.to_string(), user))
}

pub fn make_llm_prompt_unconditioned(vlm_caption: &str) -> Result<(String, String), CaptionError> {
    if vlm_caption.is_empty() {
        return Err(CaptionError::EmptyCaption);
    }
    let user = format!("{LLM_QUERY_PREFIX} The description is {vlm_caption}");
    Ok((LLM_SYSTEM.to_string(), user))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vlm_prompt_golden_string() {
        let prompt = make_vlm_prompt(&names(&["road", "car"])).unwrap();
        assert_eq!(
            prompt,
            "Describe the image in detail for semantic segmentation tasks. Be sure to \
include the class names ['road', 'car'] and their pixel locations."
        );
    }

    #[test]
    fn vlm_prompt_single_class() {
        let prompt = make_vlm_prompt(&names(&["sky"])).unwrap();
        assert!(prompt.contains("['sky']"));
        assert!(!prompt.contains("{CLASS_NAMES}"));
    }

    #[test]
    fn vlm_prompt_rejects_empty_list() {
        assert!(matches!(
            make_vlm_prompt(&[]),
            Err(CaptionError::EmptyClassList)
        ));
    }

    #[test]
    fn llm_prompt_golden_strings() {
        let (system, user) =
            make_llm_prompt(&names(&["road", "sidewalk"]), "A long description.").unwrap();
        assert_eq!(
            system,
            "You are a helpful assistant for refining and condensing detailed image \
caption descriptions for semantic segmentation."
        );
        assert_eq!(
            user,
            "Shorten the description to less than 77 tokens. Do not use quotation marks \
or parentheses. Be sure to include the class name ['road', 'sidewalk'] and their pixel \
locations. The description is A long description."
        );
    }

    #[test]
    fn llm_prompt_rejects_empty_caption() {
        assert!(matches!(
            make_llm_prompt(&names(&["road"]), ""),
            Err(CaptionError::EmptyCaption)
        ));
    }

    #[test]
    fn no_placeholders_survive() {
        let (system, user) = make_llm_prompt(&names(&["a", "b"]), "text").unwrap();
        for s in [&system, &user] {
            assert!(!s.contains("{CLASS_NAMES}"));
            assert!(!s.contains("{VLM_CAPTION}"));
        }
    }

    #[test]
    fn unconditioned_prompts_have_no_class_sentence() {
        assert_eq!(
            make_vlm_prompt_unconditioned(),
            "Describe the image in detail for semantic segmentation tasks."
        );
        let (_, user) = make_llm_prompt_unconditioned("Some text.").unwrap();
        assert_eq!(
            user,
            "Shorten the description to less than 77 tokens. Do not use quotation marks \
or parentheses. The description is Some text."
        );
        assert!(!user.contains("class name"));
    }
}
