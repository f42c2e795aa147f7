//! The two-stage caption pipeline: a vision-language model describes each
//! source image, a language model condenses the description under the
//! 77-token budget, and the results are cached in a JSONL caption bank.
//!
//! Class names are read off the ground-truth mask, so the prompts ground the
//! caption in exactly the classes present. Records are cached by
//! (image id, prompt, provider): regenerating with unchanged inputs performs
//! no client calls and returns byte-identical records.

mod bank;
mod client;
mod prompts;
mod tokenizer;

pub use bank::{caption_bank_load, caption_bank_store};
pub use client::{
    ChatMessage, ChatRequest, ChatResponse, HttpChatClient, HttpChatConfig, LlmClient, MockLlm,
    MockVlm, VlmClient, CHAT_SEED, CHAT_TEMPERATURE,
};
pub use prompts::{
    make_llm_prompt, make_llm_prompt_unconditioned, make_vlm_prompt, make_vlm_prompt_unconditioned,
    render_class_list, LLM_QUERY_PREFIX, LLM_SYSTEM, RETRY_SUFFIX, VLM_QUERY_PREFIX,
};
pub use tokenizer::Tokenizer;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOKEN_BUDGET: usize = 77;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("class name list is empty")]
    EmptyClassList,
    #[error("caption text is empty")]
    EmptyCaption,
    #[error("provider returned an empty response for image '{0}'")]
    EmptyResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("transport failed for image '{image_id}' after {attempts} attempts: {message}")]
    TransportExhausted {
        image_id: String,
        attempts: usize,
        message: String,
    },
    #[error("mock provider has no mask registered for image '{0}'")]
    MissingMask(String),
    #[error("scene error: {0}")]
    Scene(String),
    #[error("caption bank line {line}: {message}")]
    BankLine { line: usize, message: String },
    #[error("caption bank is empty")]
    EmptyBank,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provider {
    #[serde(rename = "vlm+llm")]
    VlmLlm,
    #[serde(rename = "template-mock")]
    TemplateMock,
}

/// Where captions are taken from: grounded source images (default) or
/// unannotated target images (the caption-domain ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    SourceGrounded,
    TargetUnconditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    /// Classes present in the ground-truth mask, ordered by class id; empty
    /// in target-caption mode.
    pub class_names: Vec<String>,
    pub raw_caption: String,
    pub raw_tokens: usize,
    pub refined_caption: String,
    pub refined_tokens: usize,
    pub provider: Provider,
    pub created_at: String,
    /// Set when refinement never fit the budget and the text was cut at a
    /// token boundary instead.
    #[serde(default)]
    pub truncated: bool,
    /// SHA-256 over (image_id, rendered prompt, provider id); changing the
    /// prompt or provider invalidates cached records.
    pub cache_key: String,
}

pub fn cache_key(image_id: &str, prompt: &str, provider_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image_id.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hasher.update([0]);
    hasher.update(provider_id.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Ordered class names present in a mask (ignore pixels skipped).
pub fn class_names_from_mask(mask: &Array2<u32>, class_set: &[String]) -> Vec<String> {
    let ignore = class_set.len() as u32;
    let mut present = vec![false; class_set.len()];
    for &v in mask.iter() {
        if v != ignore {
            present[v as usize] = true;
        }
    }
    class_set
        .iter()
        .zip(&present)
        .filter(|(_, &p)| p)
        .map(|(n, _)| n.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    pub vlm_calls: usize,
    pub vlm_attempts: usize,
    pub llm_calls: usize,
    pub cache_hits: usize,
}

/// Drives both stages and maintains the cache. The cache is primed from an
/// existing bank so reruns are free.
pub struct CaptionPipeline {
    vlm: Box<dyn VlmClient>,
    llm: Box<dyn LlmClient>,
    pub tokenizer: Tokenizer,
    pub mode: CaptionMode,
    pub provider: Provider,
    /// Total refinement attempts before falling back to truncation.
    pub refine_attempts: usize,
    /// Transport retries per VLM call.
    pub transport_retries: usize,
    cache: std::collections::BTreeMap<String, CaptionRecord>,
    pub stats: PipelineStats,
}

impl CaptionPipeline {
    pub fn new(
        vlm: Box<dyn VlmClient>,
        llm: Box<dyn LlmClient>,
        tokenizer: Tokenizer,
        mode: CaptionMode,
        provider: Provider,
    ) -> Self {
        Self {
            vlm,
            llm,
            tokenizer,
            mode,
            provider,
            refine_attempts: 3,
            transport_retries: 3,
            cache: Default::default(),
            stats: PipelineStats::default(),
        }
    }

    /// Seeds the cache with previously completed records.
    pub fn prime_cache(&mut self, records: &[CaptionRecord]) {
        for record in records {
            self.cache.insert(record.cache_key.clone(), record.clone());
        }
    }

    fn vlm_prompt(&self, class_names: &[String]) -> Result<String, CaptionError> {
        match self.mode {
            CaptionMode::SourceGrounded => make_vlm_prompt(class_names),
            CaptionMode::TargetUnconditioned => Ok(make_vlm_prompt_unconditioned()),
        }
    }

    fn llm_prompt(
        &self,
        class_names: &[String],
        raw: &str,
    ) -> Result<(String, String), CaptionError> {
        match self.mode {
            CaptionMode::SourceGrounded => make_llm_prompt(class_names, raw),
            CaptionMode::TargetUnconditioned => make_llm_prompt_unconditioned(raw),
        }
    }

    /// Stage one: obtains the raw caption, retrying transport failures up to
    /// the budget. A cached record short-circuits both stages.
    pub fn generate_caption(
        &mut self,
        image_id: &str,
        class_names: &[String],
    ) -> Result<(String, Option<CaptionRecord>), CaptionError> {
        let prompt = self.vlm_prompt(class_names)?;
        let key = cache_key(image_id, &prompt, &self.vlm.provider_id());
        if let Some(hit) = self.cache.get(&key) {
            self.stats.cache_hits += 1;
            return Ok((hit.raw_caption.clone(), Some(hit.clone())));
        }
        self.stats.vlm_calls += 1;
        let mut last_error = String::new();
        for _ in 0..self.transport_retries.max(1) {
            self.stats.vlm_attempts += 1;
            match self.vlm.describe(image_id, &prompt) {
                Ok(text) if text.is_empty() => {
                    return Err(CaptionError::EmptyResponse(image_id.to_string()));
                }
                Ok(text) => return Ok((text, None)),
                Err(CaptionError::Transport(message)) => last_error = message,
                Err(other) => return Err(other),
            }
        }
        Err(CaptionError::TransportExhausted {
            image_id: image_id.to_string(),
            attempts: self.transport_retries.max(1),
            message: last_error,
        })
    }

    /// Stage two: condenses `raw` under the budget, retrying with a brevity
    /// reminder, then truncating at a token boundary as the last resort.
    /// Returns (refined text, truncated flag).
    pub fn refine_caption(
        &mut self,
        class_names: &[String],
        raw: &str,
    ) -> Result<(String, bool), CaptionError> {
        let (system, user) = self.llm_prompt(class_names, raw)?;
        let mut refined = String::new();
        for attempt in 0..self.refine_attempts.max(1) {
            let prompt = if attempt == 0 {
                user.clone()
            } else {
                format!("{user} {RETRY_SUFFIX}")
            };
            self.stats.llm_calls += 1;
            refined = self.llm.refine(&system, &prompt)?;
            if refined.is_empty() {
                return Err(CaptionError::EmptyCaption);
            }
            if self.tokenizer.count(&refined) <= TOKEN_BUDGET {
                return Ok((refined, false));
            }
        }
        Ok((self.tokenizer.truncate(&refined, TOKEN_BUDGET), true))
    }

    /// Runs both stages for one image and assembles the record.
    pub fn caption_image(
        &mut self,
        image_id: &str,
        class_names: &[String],
    ) -> Result<CaptionRecord, CaptionError> {
        let (raw, cached) = self.generate_caption(image_id, class_names)?;
        if let Some(record) = cached {
            return Ok(record);
        }
        let (refined, truncated) = self.refine_caption(class_names, &raw)?;
        let prompt = self.vlm_prompt(class_names)?;
        let key = cache_key(image_id, &prompt, &self.vlm.provider_id());
        let record = CaptionRecord {
            image_id: image_id.to_string(),
            class_names: class_names.to_vec(),
            raw_tokens: self.tokenizer.count(&raw),
            raw_caption: raw,
            refined_tokens: self.tokenizer.count(&refined),
            refined_caption: refined,
            provider: self.provider,
            created_at: chrono::Utc::now().to_rfc3339(),
            truncated,
            cache_key: key.clone(),
        };
        self.cache.insert(key, record.clone());
        Ok(record)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionStats {
    pub count: usize,
    pub mean_raw_tokens: f64,
    pub mean_refined_tokens: f64,
    /// 30 bins of width 10 covering 0..300; counts past the range land in
    /// the last bin so the bins always sum to `count`.
    pub histogram_raw: Vec<u64>,
    pub histogram_refined: Vec<u64>,
}

pub const HISTOGRAM_BINS: usize = 30;
pub const HISTOGRAM_BIN_WIDTH: usize = 10;

pub fn caption_stats(records: &[CaptionRecord]) -> Result<CaptionStats, CaptionError> {
    if records.is_empty() {
        return Err(CaptionError::EmptyBank);
    }
    let mut histogram_raw = vec![0u64; HISTOGRAM_BINS];
    let mut histogram_refined = vec![0u64; HISTOGRAM_BINS];
    let mut sum_raw = 0usize;
    let mut sum_refined = 0usize;
    for record in records {
        sum_raw += record.raw_tokens;
        sum_refined += record.refined_tokens;
        histogram_raw[bin_of(record.raw_tokens)] += 1;
        histogram_refined[bin_of(record.refined_tokens)] += 1;
    }
    let n = records.len() as f64;
    Ok(CaptionStats {
        count: records.len(),
        mean_raw_tokens: sum_raw as f64 / n,
        mean_refined_tokens: sum_refined as f64 / n,
        histogram_raw,
        histogram_refined,
    })
}

fn bin_of(tokens: usize) -> usize {
    (tokens / HISTOGRAM_BIN_WIDTH).min(HISTOGRAM_BINS - 1)
}
