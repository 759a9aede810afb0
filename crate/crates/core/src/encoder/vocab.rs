use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::text::{slot_name_tokens, tokenize};
use crate::corpus::{Dialogue, Schema};

pub const CLS: &str = "[CLS]";
pub const UNK: &str = "[UNK]";
pub const AGENT: &str = "[AGT]";
pub const USER: &str = "[USR]";
pub const SEP: &str = "[SEP]";
pub const STATE: &str = "[STATE]";

const SPECIALS: [&str; 6] = [CLS, UNK, AGENT, USER, SEP, STATE];

/// Closed token inventory with an unknown-token bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens, schema slot-name and ontology tokens, then every token
    /// of the given dialogues in first-seen order.
    pub fn build(schema: &Schema, dialogues: &[Dialogue]) -> Vocab {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut push = |t: String, tokens: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        };
        for t in ["=", "-", "dontcare"] {
            push(t.to_string(), &mut tokens);
        }
        for slot in schema.slots() {
            for t in slot_name_tokens(&slot.name) {
                push(t, &mut tokens);
            }
            for t in tokenize(&slot.name) {
                push(t, &mut tokens);
            }
            for value in &slot.ontology {
                for t in tokenize(value) {
                    push(t, &mut tokens);
                }
            }
        }
        for (variant, canonical) in schema.synonyms() {
            for t in tokenize(variant).into_iter().chain(tokenize(canonical)) {
                push(t, &mut tokens);
            }
        }
        for d in dialogues {
            for turn in &d.turns {
                for t in turn.agent.iter().chain(&turn.user) {
                    push(t.clone(), &mut tokens);
                }
                for (_, v) in turn.gold_state.filled() {
                    for t in tokenize(v.as_annotation()) {
                        push(t, &mut tokens);
                    }
                }
            }
        }
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or of the unknown bucket.
    pub fn id(&self, token: &str) -> usize {
        self.get(token)
            .unwrap_or_else(|| self.index[UNK])
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
