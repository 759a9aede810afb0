//! Tokenization and value normalization shared by every module.

use std::sync::OnceLock;

use regex::Regex;

fn token_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[\p{L}\p{N}]+(?:[:'][\p{L}\p{N}]+)*|\S").expect("static token regex")
    })
}

/// Lowercased whitespace + punctuation tokenization. Times such as `19:45`
/// and contractions such as `don't` stay single tokens; any other punctuation
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    token_pattern()
        .find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Lowercase and drop punctuation characters from a single token.
pub fn normalize_token(token: &str) -> String {
    token
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Normalized token sequence of a value; punctuation-only tokens vanish.
pub fn normalized_tokens(value: &str) -> Vec<String> {
    tokenize(value)
        .iter()
        .map(|t| normalize_token(t))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Canonical surface form used for value comparison (synonyms not applied).
pub fn normalize_text(value: &str) -> String {
    normalized_tokens(value).join(" ")
}

/// Tokens of a slot name: `restaurant-day` becomes `["restaurant", "day"]`.
pub fn slot_name_tokens(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Join tokens back into a readable value string.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
