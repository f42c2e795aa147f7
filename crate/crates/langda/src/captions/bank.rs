//! Caption bank persistence: JSONL, one record per line, ordered by image id.

use super::{CaptionError, CaptionRecord};
use std::fs;
use std::path::Path;

pub fn caption_bank_store(records: &[CaptionRecord], path: &Path) -> Result<(), CaptionError> {
    let mut sorted: Vec<&CaptionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut out = String::new();
    for record in sorted {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn caption_bank_load(path: &Path) -> Result<Vec<CaptionRecord>, CaptionError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionRecord =
            serde_json::from_str(line).map_err(|e| CaptionError::BankLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::{CaptionRecord, Provider};
    use tempfile::TempDir;

    fn record(id: &str) -> CaptionRecord {
        CaptionRecord {
            image_id: id.to_string(),
            class_names: vec!["road".into(), "sky".into()],
            raw_caption: "A long description.".into(),
            raw_tokens: 4,
            refined_caption: "Short.".into(),
            refined_tokens: 2,
            provider: Provider::TemplateMock,
            created_at: "2026-01-01T00:00:00+00:00".into(),
            truncated: false,
            cache_key: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_lossless_and_sorted() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.jsonl");
        let records = vec![record("b"), record("a"), record("c")];
        caption_bank_store(&records, &path).unwrap();
        let loaded = caption_bank_load(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        let ids: Vec<&str> = loaded.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(&loaded[0], &record("a"));
    }

    #[test]
    fn corrupted_line_reports_its_number() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.jsonl");
        caption_bank_store(&[record("a"), record("b")], &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let second_start = text.find('\n').unwrap() + 1;
        text.insert_str(second_start, "not json ");
        std::fs::write(&path, text).unwrap();
        match caption_bank_load(&path) {
            Err(CaptionError::BankLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected BankLine error, got {other:?}"),
        }
    }

    #[test]
    fn large_bank_preserves_ids_exactly_once() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.jsonl");
        let records: Vec<CaptionRecord> =
            (0..1000).map(|i| record(&format!("img{i:04}"))).collect();
        caption_bank_store(&records, &path).unwrap();
        let loaded = caption_bank_load(&path).unwrap();
        let mut ids: Vec<String> = loaded.into_iter().map(|r| r.image_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
    }
}
