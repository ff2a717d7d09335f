//! Tokenization and sentence splitting shared by chunking, BM25, the mock
//! embedder and the evaluation metrics.
//!
//! A token is either a maximal run of non-whitespace, non-CJK characters or a
//! single CJK character. Spans are byte offsets into the source string.

use std::ops::Range;

/// Whether `c` is tokenized as a standalone character.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F      // CJK symbols and punctuation
        | 0x3040..=0x30FF    // hiragana, katakana
        | 0x3400..=0x4DBF    // extension A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF00..=0xFFEF    // halfwidth and fullwidth forms
        | 0x20000..=0x2FA1F)
}

/// Byte spans of every token in `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
        } else if is_cjk(c) {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
            spans.push(i..i + c.len_utf8());
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<&str> {
    token_spans(text).into_iter().map(|r| &text[r]).collect()
}

/// Search terms: tokens lowercased with surrounding ASCII punctuation removed.
/// Tokens that are pure punctuation are dropped.
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter_map(|t| {
            let trimmed = t.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

/// Splits on terminal punctuation followed by whitespace or end of text.
/// Each sentence keeps its terminator and is trimmed; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_terminal(c) {
            continue;
        }
        let end = i + c.len_utf8();
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_and_cjk_tokens() {
        assert_eq!(
            tokenize("brake  line\tpressure"),
            ["brake", "line", "pressure"]
        );
        assert_eq!(
            tokenize("ABS制动系统 ok"),
            ["ABS", "制", "动", "系", "统", "ok"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn spans_point_into_source() {
        let text = "a 中b";
        let spans = token_spans(text);
        let got: Vec<&str> = spans.iter().map(|r| &text[r.clone()]).collect();
        assert_eq!(got, ["a", "中", "b"]);
    }

    #[test]
    fn terms_normalize() {
        assert_eq!(terms("Brake, PRESSURE? | --"), ["brake", "pressure"]);
    }

    #[test]
    fn sentences() {
        assert_eq!(
            split_sentences("One. Two! Three? v1.2 stays"),
            ["One.", "Two!", "Three?", "v1.2 stays"]
        );
        assert_eq!(split_sentences("第一。 第二。"), ["第一。", "第二。"]);
        assert!(split_sentences("  ").is_empty());
    }
}
