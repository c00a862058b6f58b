//! The pipeline tokenizer.
//!
//! One deterministic rule used everywhere token counts matter (chunk sizing,
//! window expansion, ROUGE-L): Unicode whitespace separates tokens, each
//! non-alphanumeric non-whitespace character is a token of its own, and
//! maximal alphanumeric runs are single tokens. So `"a,b"` is three tokens.

/// Byte span of one token within its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// Returns the byte spans of all tokens in `text`, in order.
pub fn token_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(start) = run_start.take() {
                spans.push(TokenSpan { start, end: idx });
            }
        } else if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(idx);
            }
        } else {
            // punctuation/symbol: closes any run and stands alone
            if let Some(start) = run_start.take() {
                spans.push(TokenSpan { start, end: idx });
            }
            spans.push(TokenSpan {
                start: idx,
                end: idx + ch.len_utf8(),
            });
        }
    }
    if let Some(start) = run_start {
        spans.push(TokenSpan {
            start,
            end: text.len(),
        });
    }
    spans
}

/// Returns the tokens of `text` as string slices.
pub fn tokens(text: &str) -> Vec<&str> {
    token_spans(text)
        .into_iter()
        .map(|s| &text[s.start..s.end])
        .collect()
}

/// Number of tokens in `text` under the pipeline tokenizer.
pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_tokens() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("   \n\t"), 0);
    }

    #[test]
    fn whitespace_separated_words() {
        assert_eq!(count_tokens("relay trips breaker"), 3);
        assert_eq!(tokens("relay trips breaker"), vec!["relay", "trips", "breaker"]);
    }

    #[test]
    fn punctuation_is_its_own_token() {
        assert_eq!(tokens("a,b"), vec!["a", ",", "b"]);
        assert_eq!(count_tokens("a,b"), 3);
        assert_eq!(tokens("end."), vec!["end", "."]);
    }

    #[test]
    fn spans_index_back_into_text() {
        let text = "x1 (y) z";
        let spans = token_spans(text);
        let toks: Vec<&str> = spans.iter().map(|s| &text[s.start..s.end]).collect();
        assert_eq!(toks, vec!["x1", "(", "y", ")", "z"]);
    }

    #[test]
    fn unicode_words_count_once() {
        assert_eq!(count_tokens("déjà vu"), 2);
    }
}
