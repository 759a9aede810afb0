use super::{SlotDecision, TurnInput, TurnPredictor, UpdateStrategy};
use crate::corpus::labels::label_slot;
use crate::corpus::text::detokenize;
use crate::corpus::{Schema, SlotValue};
use crate::encoder::Vocab;
use crate::error::Result;
use crate::heads::HitType;

/// Predictor that answers with the gold labels of the dialogue being
/// tracked, derived against whatever pool and context the tracker built.
pub struct OracleHeads<'a> {
    pub schema: &'a Schema,
    pub vocab: &'a Vocab,
    pub strategy: UpdateStrategy,
    pub categorical_heads: bool,
}

impl TurnPredictor for OracleHeads<'_> {
    fn strategy(&self) -> Option<UpdateStrategy> {
        None
    }

    fn vocab(&self) -> &Vocab {
        self.vocab
    }

    fn predict_turn(&self, input: &TurnInput<'_>) -> Result<Vec<SlotDecision>> {
        let gold = &input.dialogue.turns[input.turn].gold_state;
        let prev_gold = input.dialogue.gold_before(input.turn, self.schema.len());
        let content = input.context.content();
        Ok((0..self.schema.len())
            .map(|s| {
                let ex = label_slot(
                    self.strategy,
                    self.schema,
                    input.turn,
                    s,
                    gold.get(s),
                    prev_gold.get(s),
                    &input.pools[s],
                    content,
                    self.categorical_heads,
                );
                let mut decision = SlotDecision::of_type(ex.hit_type);
                decision.mention_index = ex.mention_index;
                if ex.hit_type == HitType::Hit {
                    if let Some(c) = ex.categorical_label {
                        decision.value = SlotValue::Text(self.schema.slot(s).ontology[c].clone());
                    } else if let Some((a, b)) = ex.span_label {
                        decision.value = SlotValue::Text(detokenize(&content[a..=b]));
                        decision.span = Some((a, b));
                    }
                }
                decision
            })
            .collect())
    }
}
