//! Language-guided unsupervised domain adaptation for semantic segmentation.
//!
//! The crate wires together five stages that can each be driven from the CLI
//! or called as a library:
//!
//! 1. [`scene`]: synthetic paired source/target segmentation datasets with a
//!    controllable domain shift and rule-derived ground truth.
//! 2. [`captions`]: per-image scene captions; a VLM describes the image, an
//!    LLM condenses the description under the text-encoder token budget.
//! 3. [`embedding`]: frozen text encoders turning refined captions into
//!    fixed-dimension vectors, persisted in a binary embedding bank.
//! 4. [`network`] / [`engine`]: a student/teacher segmentation pair trained
//!    by online self-training (pseudo-labels, EMA teacher) plus an
//!    image-level caption-alignment loss on pooled encoder features.
//! 5. [`metrics`] / [`experiment`]: confusion-matrix mIoU evaluation and the
//!    seeded experiment runner with ablation presets and plots.

pub mod captions;
pub mod config;
pub mod embedding;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod plots;
pub mod rng;
pub mod scene;
