use super::text::{normalize_token, normalized_tokens};

/// Inclusive token range of the most recent occurrence of `value` in
/// `tokens`, compared after lowercasing and punctuation stripping.
pub fn find_span(value: &str, tokens: &[String]) -> Option<(usize, usize)> {
    let needle = normalized_tokens(value);
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    let hay: Vec<String> = tokens.iter().map(|t| normalize_token(t)).collect();
    (0..=hay.len() - needle.len())
        .rev()
        .find(|&start| hay[start..start + needle.len()] == needle[..])
        .map(|start| (start, start + needle.len() - 1))
}

/// Most recent occurrence of any of several surface forms; later end wins,
/// then the longer span.
pub fn find_span_any<S: AsRef<str>>(forms: &[S], tokens: &[String]) -> Option<(usize, usize)> {
    forms
        .iter()
        .filter_map(|f| find_span(f.as_ref(), tokens))
        .max_by_key(|&(s, e)| (e, e - s))
}
