use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, AGENT, CLS, STATE, USER};
use crate::corpus::Dialogue;
use crate::error::{DstError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    User,
}

/// Segment ids fed to the encoder next to token and position ids.
pub mod segment {
    pub const HISTORY: usize = 0;
    pub const CURRENT_AGENT: usize = 1;
    pub const CURRENT_USER: usize = 2;
    pub const STATE: usize = 3;
    pub const COUNT: usize = 4;
}

/// One utterance of the observable context, already tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub turn: usize,
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

/// Where one utterance landed in the (possibly truncated) token list.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnBoundary {
    pub turn: usize,
    pub speaker: Speaker,
    pub range: Range<usize>,
}

/// Encoder input: classification token at position 0, then the most recent
/// context tokens, then (optionally) a serialized dialogue state.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedContext {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub text: Vec<String>,
    pub boundaries: Vec<TurnBoundary>,
    /// Token range (in `text`) of the appended state string, if any.
    pub state_range: Option<Range<usize>>,
    /// Number of stream tokens dropped from the front.
    pub dropped: usize,
}

impl TokenizedContext {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Tokens after the classification token; span indices refer to these.
    pub fn content(&self) -> &[String] {
        &self.text[1..]
    }

    /// Whether content position `i` lies inside the appended state string.
    pub fn in_state(&self, i: usize) -> bool {
        self.state_range
            .as_ref()
            .map_or(false, |r| r.contains(&(i + 1)))
    }
}

/// Utterances observable at turn `t` (0-based, inclusive).
pub fn context_utterances(dialogue: &Dialogue, t: usize) -> Vec<Utterance> {
    let mut out = Vec::with_capacity(2 * (t + 1));
    for (i, turn) in dialogue.turns[..=t].iter().enumerate() {
        out.push(Utterance {
            turn: i + 1,
            speaker: Speaker::Agent,
            tokens: turn.agent.clone(),
        });
        out.push(Utterance {
            turn: i + 1,
            speaker: Speaker::User,
            tokens: turn.user.clone(),
        });
    }
    out
}

/// Join utterances behind speaker markers and keep the newest tokens.
pub fn tokenize_context(
    context: &[Utterance],
    max_len: usize,
    vocab: &Vocab,
) -> Result<TokenizedContext> {
    tokenize_context_with_state(context, &[], max_len, vocab)
}

/// Like [`tokenize_context`], with `state` appended after the context. The
/// state string is never truncated; the context gives way first.
pub fn tokenize_context_with_state(
    context: &[Utterance],
    state: &[String],
    max_len: usize,
    vocab: &Vocab,
) -> Result<TokenizedContext> {
    if max_len < 2 {
        return Err(DstError::Config(format!("max_len must be >= 2, got {max_len}")));
    }
    if context.is_empty() {
        return Err(DstError::EmptyContext);
    }
    let current = context.iter().map(|u| u.turn).max().unwrap_or(0);
    let mut stream: Vec<(String, usize)> = Vec::new();
    let mut spans: Vec<(usize, Speaker, Range<usize>)> = Vec::new();
    for u in context {
        let seg = match (u.turn == current, u.speaker) {
            (true, Speaker::Agent) => segment::CURRENT_AGENT,
            (true, Speaker::User) => segment::CURRENT_USER,
            _ => segment::HISTORY,
        };
        let marker = match u.speaker {
            Speaker::Agent => AGENT,
            Speaker::User => USER,
        };
        let start = stream.len();
        stream.push((marker.to_string(), seg));
        stream.extend(u.tokens.iter().map(|t| (t.clone(), seg)));
        spans.push((u.turn, u.speaker, start..stream.len()));
    }

    let mut state_tokens: Vec<(String, usize)> = Vec::new();
    if !state.is_empty() {
        state_tokens.push((STATE.to_string(), segment::STATE));
        state_tokens.extend(state.iter().map(|t| (t.clone(), segment::STATE)));
    }
    let budget = (max_len - 1).saturating_sub(state_tokens.len());
    if budget == 0 && !state_tokens.is_empty() {
        return Err(DstError::Config(format!(
            "state string of {} tokens leaves no room in max_len {max_len}",
            state_tokens.len()
        )));
    }
    let dropped = stream.len().saturating_sub(budget);

    let mut text = Vec::with_capacity(1 + stream.len() - dropped + state_tokens.len());
    let mut segments = Vec::with_capacity(text.capacity());
    text.push(CLS.to_string());
    segments.push(segment::HISTORY);
    for (tok, seg) in stream.into_iter().skip(dropped) {
        text.push(tok);
        segments.push(seg);
    }
    let boundaries = spans
        .into_iter()
        .filter(|(_, _, r)| r.end > dropped)
        .map(|(turn, speaker, r)| TurnBoundary {
            turn,
            speaker,
            range: (r.start.max(dropped) - dropped + 1)..(r.end - dropped + 1),
        })
        .collect();
    let state_range = if state_tokens.is_empty() {
        None
    } else {
        let start = text.len();
        for (tok, seg) in state_tokens {
            text.push(tok);
            segments.push(seg);
        }
        Some(start..text.len())
    };
    let ids = text.iter().map(|t| vocab.id(t)).collect();
    Ok(TokenizedContext {
        ids,
        segments,
        text,
        boundaries,
        state_range,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from(
            [CLS, "[UNK]", AGENT, USER, "[SEP]", STATE]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>(),
        )
    }

    fn numbered(n: usize) -> Vec<Utterance> {
        // one user utterance whose stream (marker + tokens) has n tokens
        vec![Utterance {
            turn: 1,
            speaker: Speaker::User,
            tokens: (1..n).map(|i| format!("w{i}")).collect(),
        }]
    }

    #[test]
    fn short_context_gets_classification_token() {
        let ctx = tokenize_context(&numbered(3), 512, &vocab()).unwrap();
        assert_eq!(ctx.len(), 4);
        assert_eq!(ctx.text[0], CLS);
        assert_eq!(ctx.content(), &[USER.to_string(), "w1".into(), "w2".into()]);
    }

    #[test]
    fn long_context_keeps_latest_tokens() {
        let ctx = tokenize_context(&numbered(600), 512, &vocab()).unwrap();
        assert_eq!(ctx.len(), 512);
        assert_eq!(ctx.dropped, 89);
        assert_eq!(ctx.text[1], "w89");
        assert_eq!(ctx.text[511], "w599");
        let short = tokenize_context(&numbered(600), 128, &vocab()).unwrap();
        assert_eq!(short.len(), 128);
        assert_eq!(short.text[1], "w473");
    }

    #[test]
    fn state_string_survives_truncation() {
        let state: Vec<String> = ["train", "-", "day", "=", "monday"].map(String::from).into();
        let ctx = tokenize_context_with_state(&numbered(50), &state, 20, &vocab()).unwrap();
        assert_eq!(ctx.len(), 20);
        assert_eq!(ctx.text.last().unwrap(), "monday");
        assert_eq!(ctx.state_range, Some(14..20));
        assert!(ctx.in_state(13) && !ctx.in_state(12));
    }

    #[test]
    fn rejects_empty_and_tiny_budgets() {
        assert!(matches!(
            tokenize_context(&[], 16, &vocab()),
            Err(DstError::EmptyContext)
        ));
        assert!(tokenize_context(&numbered(3), 1, &vocab()).is_err());
    }

    #[test]
    fn boundaries_are_clipped() {
        let utts = vec![
            Utterance { turn: 1, speaker: Speaker::Agent, tokens: vec!["a".into(); 5] },
            Utterance { turn: 1, speaker: Speaker::User, tokens: vec!["b".into(); 3] },
        ];
        let ctx = tokenize_context(&utts, 7, &vocab()).unwrap();
        // stream: 6 agent + 4 user = 10; keep 6
        assert_eq!(ctx.boundaries.len(), 2);
        assert_eq!(ctx.boundaries[0].range, 1..3);
        assert_eq!(ctx.boundaries[1].range, 3..7);
        assert!(ctx.segments[1..].iter().all(|&s| s != segment::HISTORY));
    }
}
