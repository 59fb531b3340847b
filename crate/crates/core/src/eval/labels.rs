use crate::dump::{LabelSpan, Token};
use crate::error::{Error, Result};

/// Token `[start, end)` is positive iff it shares at least one character with
/// some span.
pub fn spans_to_labels(spans: &[LabelSpan], tokens: &[Token]) -> Result<Vec<u8>> {
    if let Some(s) = spans.iter().find(|s| s.start >= s.end) {
        return Err(Error::MalformedSpan(format!("[{}, {})", s.start, s.end)));
    }
    Ok(tokens
        .iter()
        .map(|t| spans.iter().any(|s| s.start < t.end && t.start < s.end) as u8)
        .collect())
}

/// Index of every span overlapping each token.
pub fn span_membership(spans: &[LabelSpan], tokens: &[Token]) -> Vec<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.start < t.end && t.start < s.end)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks() -> Vec<Token> {
        (0..4)
            .map(|i| Token {
                text: "abc".into(),
                start: 3 * i,
                end: 3 * i + 3,
                id: 0,
            })
            .collect()
    }

    fn span(start: usize, end: usize) -> LabelSpan {
        LabelSpan {
            start,
            end,
            error_type: "e".into(),
        }
    }

    #[test]
    fn overlap_rule() {
        assert_eq!(spans_to_labels(&[span(3, 6)], &toks()).unwrap(), [0, 1, 0, 0]);
        assert_eq!(spans_to_labels(&[span(7, 8)], &toks()).unwrap(), [0, 0, 1, 0]);
        assert_eq!(spans_to_labels(&[], &toks()).unwrap(), [0, 0, 0, 0]);
        assert_eq!(spans_to_labels(&[span(5, 7)], &toks()).unwrap(), [0, 1, 1, 0]);
        assert_eq!(spans_to_labels(&[span(4, 4)], &toks()).unwrap_err().code(), "MALFORMED_SPAN");
    }

    #[test]
    fn order_independent_and_idempotent() {
        let a = [span(0, 2), span(9, 12)];
        let b = [span(9, 12), span(0, 2), span(0, 2)];
        assert_eq!(spans_to_labels(&a, &toks()).unwrap(), spans_to_labels(&b, &toks()).unwrap());
        assert_eq!(span_membership(&b, &toks())[0], [1, 2]);
    }
}
