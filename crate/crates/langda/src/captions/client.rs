//! Caption providers: the HTTP chat contract and the offline mocks.
//!
//! Both stages speak the same JSON shape, POSTed to an endpoint:
//! request `{model, messages: [{role, content}], temperature: 0, seed}`,
//! response `{text}`. Temperature is pinned to 0 and the seed is fixed so a
//! cooperating provider is reproducible.
//!
//! The mocks make the pipeline runnable offline: the VLM mock answers with
//! the rule-derived scene caption for the image's mask, and the LLM mock
//! writes a short grounded summary built only from the class list and the
//! location phrases found in the description.

use super::CaptionError;
use crate::scene::template_caption;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CHAT_TEMPERATURE: f64 = 0.0;
pub const CHAT_SEED: u64 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

/// Vision stage: describes one image. `image_id` lets offline providers look
/// up what the "camera" saw; HTTP providers receive only the prompt.
pub trait VlmClient {
    fn describe(&mut self, image_id: &str, prompt: &str) -> Result<String, CaptionError>;
    fn provider_id(&self) -> String;
}

/// Refinement stage: rewrites a description under the token budget.
pub trait LlmClient {
    fn refine(&mut self, system: &str, user: &str) -> Result<String, CaptionError>;
    fn provider_id(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
}

/// Blocking HTTP client implementing both stage traits.
pub struct HttpChatClient {
    config: HttpChatConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: HttpChatConfig) -> Self {
        Self {
            config,
            http: reqwest::blocking::Client::new(),
        }
    }

    fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, CaptionError> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: CHAT_TEMPERATURE,
            seed: CHAT_SEED,
        };
        let mut builder = self.http.post(&self.config.endpoint).json(&request);
        if let Some(token) = &self.config.auth_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| CaptionError::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| CaptionError::Transport(e.to_string()))?;
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| CaptionError::Transport(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}

impl VlmClient for HttpChatClient {
    fn describe(&mut self, _image_id: &str, prompt: &str) -> Result<String, CaptionError> {
        self.complete(vec![ChatMessage {
            role: "user".into(),
            content: prompt.to_string(),
        }])
    }

    fn provider_id(&self) -> String {
        format!("http:{}:{}", self.config.endpoint, self.config.model)
    }
}

impl LlmClient for HttpChatClient {
    fn refine(&mut self, system: &str, user: &str) -> Result<String, CaptionError> {
        self.complete(vec![
            ChatMessage {
                role: "system".into(),
                content: system.to_string(),
            },
            ChatMessage {
                role: "user".into(),
                content: user.to_string(),
            },
        ])
    }

    fn provider_id(&self) -> String {
        format!("http:{}:{}", self.config.endpoint, self.config.model)
    }
}

/// Offline VLM: answers with the deterministic rule-derived caption of the
/// mask registered for the image id. Target-mode callers register the
/// evaluation-sidecar masks, mirroring what a real VLM would "see".
pub struct MockVlm {
    masks: BTreeMap<String, Array2<u32>>,
    class_set: Vec<String>,
}

impl MockVlm {
    pub fn new(class_set: Vec<String>) -> Self {
        Self {
            masks: BTreeMap::new(),
            class_set,
        }
    }

    pub fn register(&mut self, image_id: &str, mask: Array2<u32>) {
        self.masks.insert(image_id.to_string(), mask);
    }
}

impl VlmClient for MockVlm {
    fn describe(&mut self, image_id: &str, _prompt: &str) -> Result<String, CaptionError> {
        let mask = self
            .masks
            .get(image_id)
            .ok_or_else(|| CaptionError::MissingMask(image_id.to_string()))?;
        template_caption(mask, &self.class_set).map_err(|e| CaptionError::Scene(e.to_string()))
    }

    fn provider_id(&self) -> String {
        "template-mock-vlm".into()
    }
}

/// Offline LLM: condenses a rule-derived description into one short sentence
/// per class, never inventing class names that are not in the prompt.
pub struct MockLlm;

impl MockLlm {
    /// `['a', 'b']` occurrences in the user prompt, if any.
    fn parse_class_list(user: &str) -> Option<Vec<String>> {
        let start = user.find("[")?;
        let end = user[start..].find(']')? + start;
        let inner = &user[start + 1..end];
        let names: Vec<String> = inner
            .split(',')
            .map(|part| part.trim().trim_matches('\'').to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if names.is_empty() {
            None
        } else {
            Some(names)
        }
    }

    /// Class -> location phrase pairs recovered from the template caption's
    /// "The {name} region covers about N percent of the image {loc}."
    /// sentences, in order of appearance.
    fn parse_locations(description: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for sentence in description.split(". ") {
            let Some(rest) = sentence.strip_prefix("The ") else {
                continue;
            };
            let Some((name, tail)) = rest.split_once(" region covers about ") else {
                continue;
            };
            let location = tail
                .split_once(" of the image ")
                .map(|(_, loc)| loc.trim_end_matches('.').to_string());
            if let Some(loc) = location {
                out.push((name.to_string(), loc));
            }
        }
        out
    }
}

impl LlmClient for MockLlm {
    fn refine(&mut self, _system: &str, user: &str) -> Result<String, CaptionError> {
        let description = user
            .split_once("The description is ")
            .map(|(_, d)| d)
            .unwrap_or(user);
        // Single-class short form passes through.
        if let Some(rest) = description.strip_prefix("The image shows ") {
            let name = rest.trim_end_matches('.');
            return Ok(format!("The scene shows the {name}."));
        }
        let located = Self::parse_locations(description);
        let allowed = Self::parse_class_list(user);
        let parts: Vec<String> = located
            .iter()
            .filter(|(name, _)| {
                allowed
                    .as_ref()
                    .map(|list| list.contains(name))
                    .unwrap_or(true)
            })
            .map(|(name, loc)| format!("the {name} {loc}"))
            .collect();
        if parts.is_empty() {
            return Ok("The scene shows flat colored regions.".into());
        }
        Ok(format!("The scene shows {}.", parts.join(", ")))
    }

    fn provider_id(&self) -> String {
        "template-mock-llm".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_street_spec, generate_scene, Domain, DomainShift};

    #[test]
    fn mock_vlm_equals_template_caption() {
        let spec = default_street_spec(32, 32, 3);
        let sample = generate_scene(&spec, Domain::Source, &DomainShift::neutral()).unwrap();
        let mask = sample.mask.unwrap();
        let expected = template_caption(&mask, &spec.class_set).unwrap();
        let mut vlm = MockVlm::new(spec.class_set.clone());
        vlm.register("img0", mask);
        assert_eq!(vlm.describe("img0", "any prompt").unwrap(), expected);
    }

    #[test]
    fn mock_vlm_unknown_id_errors() {
        let mut vlm = MockVlm::new(vec!["road".into()]);
        assert!(matches!(
            vlm.describe("nope", "p"),
            Err(CaptionError::MissingMask(_))
        ));
    }

    #[test]
    fn mock_llm_mentions_only_listed_classes() {
        let user = "Shorten the description to less than 77 tokens. Do not use quotation \
marks or parentheses. Be sure to include the class name ['road', 'sky'] and their pixel \
locations. The description is The image depicts a synthetic street scene with regions \
of sky, road and car. The sky region covers about 40 percent of the image near the top. \
The road region covers about 50 percent of the image near the bottom. The car region \
covers about 10 percent of the image across the middle. A sky is next to road. The \
regions are drawn as flat colored areas.";
        let mut llm = MockLlm;
        let out = llm.refine("system", user).unwrap();
        assert!(out.contains("road"));
        assert!(out.contains("sky"));
        // "car" is in the description but not in the class list.
        assert!(!out.contains("car"));
        assert!(out.contains("near the bottom"));
    }

    #[test]
    fn mock_llm_single_class_form() {
        let user = "Shorten the description to less than 77 tokens. Do not use quotation \
marks or parentheses. Be sure to include the class name ['road'] and their pixel \
locations. The description is The image shows road.";
        let mut llm = MockLlm;
        assert_eq!(llm.refine("s", user).unwrap(), "The scene shows the road.");
    }

    #[test]
    fn mock_llm_without_class_list_uses_description_classes() {
        let user = "Shorten the description to less than 77 tokens. Do not use quotation \
marks or parentheses. The description is The image depicts a synthetic street scene \
with regions of sky and road. The sky region covers about 60 percent of the image near \
the top. The road region covers about 40 percent of the image near the bottom. A road \
is next to sky. The regions are drawn as flat colored areas.";
        let mut llm = MockLlm;
        let out = llm.refine("s", user).unwrap();
        assert!(out.contains("the sky near the top"));
        assert!(out.contains("the road near the bottom"));
    }

    #[test]
    fn chat_request_serializes_per_contract() {
        let request = ChatRequest {
            model: "llava".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: "hi".into(),
            }],
            temperature: CHAT_TEMPERATURE,
            seed: CHAT_SEED,
        };
        let json = serde_json::to_value(&request).unwrap();
        assert_eq!(json["model"], "llava");
        assert_eq!(json["messages"][0]["role"], "user");
        assert_eq!(json["messages"][0]["content"], "hi");
        assert_eq!(json["temperature"], 0.0);
        assert_eq!(json["seed"], 0);
        let response: ChatResponse = serde_json::from_str(r#"{"text": "a caption"}"#).unwrap();
        assert_eq!(response.text, "a caption");
    }
}
