//! Token counting for the 77-token caption budget.
//!
//! The budget exists to satisfy the downstream text encoder, so the counter
//! must match the encoder family: the hash backend consumes whitespace
//! tokens, the pretrained-style backends count subword pieces. The subword
//! scheme here is a deterministic stand-in for byte-pair encoding: words
//! split into alphanumeric chunks of at most nine characters, and every
//! punctuation character is its own token.

use serde::{Deserialize, Serialize};

const MAX_PIECE_CHARS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    Whitespace,
    Subword,
}

impl Tokenizer {
    /// Byte ranges of each token, in order.
    pub fn token_spans(&self, text: &str) -> Vec<(usize, usize)> {
        match self {
            Tokenizer::Whitespace => whitespace_spans(text),
            Tokenizer::Subword => subword_spans(text),
        }
    }

    pub fn count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }

    /// Cuts the text after the `max`-th token boundary. Token boundaries are
    /// local, so re-tokenizing the result yields exactly `min(count, max)`
    /// tokens.
    pub fn truncate(&self, text: &str, max: usize) -> String {
        let spans = self.token_spans(text);
        if spans.len() <= max {
            return text.to_string();
        }
        if max == 0 {
            return String::new();
        }
        text[..spans[max - 1].1].to_string()
    }
}

fn whitespace_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn subword_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |idx: usize| {
        chars
            .get(idx + 1)
            .map(|&(pos, _)| pos)
            .unwrap_or(text.len())
    };
    let mut i = 0;
    while i < chars.len() {
        let (_, ch) = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_alphanumeric() {
            let run_start = i;
            while i < chars.len() && chars[i].1.is_alphanumeric() {
                i += 1;
            }
            // Greedy fixed-width chunks over the alphanumeric run.
            let mut piece = run_start;
            while piece < i {
                let piece_end = (piece + MAX_PIECE_CHARS).min(i);
                spans.push((chars[piece].0, end_of(piece_end - 1)));
                piece = piece_end;
            }
        } else {
            spans.push((chars[i].0, end_of(i)));
            i += 1;
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_string_has_zero_tokens() {
        assert_eq!(Tokenizer::Whitespace.count(""), 0);
        assert_eq!(Tokenizer::Subword.count(""), 0);
    }

    #[test]
    fn whitespace_counts_words() {
        assert_eq!(Tokenizer::Whitespace.count("road sidewalk building"), 3);
        assert_eq!(Tokenizer::Whitespace.count("  road\tsidewalk \n"), 2);
    }

    #[test]
    fn subword_separates_punctuation() {
        // "tasks." -> "tasks" + "."
        assert_eq!(Tokenizer::Subword.count("tasks."), 2);
        // "['road', 'car']" -> [ ' road ' , ' car ' ]
        assert_eq!(Tokenizer::Subword.count("['road', 'car']"), 9);
    }

    #[test]
    fn subword_chunks_long_words() {
        // 12 letters -> 9 + 3.
        assert_eq!(Tokenizer::Subword.count("segmentation"), 2);
        assert_eq!(Tokenizer::Subword.count("a"), 1);
        let spans = Tokenizer::Subword.token_spans("segmentation");
        assert_eq!(spans, vec![(0, 9), (9, 12)]);
    }

    #[test]
    fn truncate_cuts_at_token_boundary() {
        let text = "one two three four";
        let cut = Tokenizer::Whitespace.truncate(text, 2);
        assert_eq!(cut, "one two");
        assert_eq!(Tokenizer::Whitespace.count(&cut), 2);
        assert_eq!(Tokenizer::Whitespace.truncate(text, 10), text);
        assert_eq!(Tokenizer::Whitespace.truncate(text, 0), "");
    }

    #[test]
    fn truncate_count_is_exact_for_subword() {
        let text = "Shorten the description, please; segmentation matters.";
        for max in 1..Tokenizer::Subword.count(text) {
            let cut = Tokenizer::Subword.truncate(text, max);
            assert_eq!(Tokenizer::Subword.count(&cut), max, "max={max}");
            assert!(text.starts_with(&cut));
        }
    }

    #[test]
    fn multibyte_text_is_handled() {
        let text = "caf\u{e9} r\u{f4}le";
        assert_eq!(Tokenizer::Whitespace.count(text), 2);
        assert_eq!(Tokenizer::Subword.count(text), 2);
        let cut = Tokenizer::Subword.truncate(text, 1);
        assert_eq!(cut, "caf\u{e9}");
    }
}
