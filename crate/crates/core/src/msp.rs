//! The mentioned slot pool: per-slot memory of inheritable values taken from
//! the previous state of the slot itself and of its relevant slots, plus the
//! bilinear attention that fuses the pool into one vector.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueState, Schema, SlotValue};
use crate::encoder::EmbeddingTable;
use crate::error::{DstError, Result};
use crate::nn::{masked_softmax, Real};

/// Default pool capacity.
pub const DEFAULT_POOL_SIZE: usize = 4;

/// Which slots feed a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Only the previous value of the target slot.
    #[serde(rename = "self")]
    SelfOnly,
    /// Target slot plus its relevant slots.
    #[default]
    Full,
}

impl std::str::FromStr for PoolMode {
    type Err = DstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(PoolMode::SelfOnly),
            "full" => Ok(PoolMode::Full),
            other => Err(DstError::Config(format!("unknown pool mode '{other}'"))),
        }
    }
}

/// A value that may enter a pool, before representations are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolCandidate {
    pub source_slot: usize,
    pub value: String,
    pub updated_turn: usize,
}

/// Candidates for `slot`: its own previous value first, then the values of
/// its relevant slots in schema order. None and dontcare never qualify.
pub fn pool_candidates(
    slot: usize,
    prev_state: &DialogueState,
    schema: &Schema,
    mode: PoolMode,
) -> Vec<PoolCandidate> {
    let mut sources = vec![slot];
    if mode == PoolMode::Full {
        let mut relevant = schema.relevant(slot).to_vec();
        relevant.sort_unstable();
        sources.extend(relevant);
    }
    sources
        .into_iter()
        .filter_map(|s| match prev_state.get(s) {
            SlotValue::Text(v) => Some(PoolCandidate {
                source_slot: s,
                value: v.clone(),
                updated_turn: prev_state.last_updated(s).unwrap_or(0),
            }),
            _ => None,
        })
        .collect()
}

/// Keep the `k` most recently updated candidates, preserving their order.
/// Among equal update turns, earlier candidates (self first, then schema
/// order) are kept.
pub fn select_latest(candidates: &[PoolCandidate], k: usize) -> Vec<PoolCandidate> {
    if candidates.len() <= k {
        return candidates.to_vec();
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .updated_turn
            .cmp(&candidates[a].updated_turn)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Value-level pool of capacity `k` (no padding, no representations).
pub fn pool_values(
    slot: usize,
    prev_state: &DialogueState,
    schema: &Schema,
    k: usize,
    mode: PoolMode,
) -> Vec<PoolCandidate> {
    select_latest(&pool_candidates(slot, prev_state, schema, mode), k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<F> {
    /// Slot the value came from; `None` for padding.
    pub source_slot: Option<usize>,
    pub value: String,
    pub representation: Array1<F>,
    pub updated_turn: usize,
}

/// Fixed-capacity pool: exactly `k` entries, padding masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionedSlotPool<F> {
    pub entries: Vec<PoolEntry<F>>,
    pub mask: Vec<bool>,
}

impl<F: Real> MentionedSlotPool<F> {
    /// Pad real entries with masked zero vectors up to `k`.
    pub fn from_candidates(
        candidates: &[PoolCandidate],
        k: usize,
        table: &EmbeddingTable<'_, F>,
    ) -> Result<Self> {
        let n = table.dim();
        let mut entries = Vec::with_capacity(k);
        let mut mask = Vec::with_capacity(k);
        for c in candidates.iter().take(k) {
            entries.push(PoolEntry {
                source_slot: Some(c.source_slot),
                value: c.value.clone(),
                representation: table.value_representation(&c.value)?,
                updated_turn: c.updated_turn,
            });
            mask.push(true);
        }
        while entries.len() < k {
            entries.push(PoolEntry {
                source_slot: None,
                value: String::new(),
                representation: Array1::zeros(n),
                updated_turn: 0,
            });
            mask.push(false);
        }
        Ok(MentionedSlotPool { entries, mask })
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.real_count() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.representation.len())
    }

    /// `K x n` matrix of entry representations.
    pub fn matrix(&self) -> Array2<F> {
        let n = self.dim();
        let mut m = Array2::zeros((self.entries.len(), n));
        for (mut row, e) in m.rows_mut().into_iter().zip(&self.entries) {
            row.assign(&e.representation);
        }
        m
    }

    pub fn real_entries(&self) -> impl Iterator<Item = (usize, &PoolEntry<F>)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mask[*i])
    }
}

/// Build the pool of `slot` from the previous dialogue state.
pub fn build_msp<F: Real>(
    slot: usize,
    prev_state: &DialogueState,
    schema: &Schema,
    k: usize,
    table: &EmbeddingTable<'_, F>,
    mode: PoolMode,
) -> Result<MentionedSlotPool<F>> {
    let values = pool_values(slot, prev_state, schema, k, mode);
    MentionedSlotPool::from_candidates(&values, k, table)
}

/// Attention weights of the fused pool representation. With `mask_pads`
/// padding gets weight zero; without it padding competes with score zero
/// but still contributes a zero vector.
pub fn fusion_weights<F: Real>(
    pool: &MentionedSlotPool<F>,
    r_slot: &Array1<F>,
    r_cls: &Array1<F>,
    w_fused: &Array2<F>,
    mask_pads: bool,
) -> Result<Vec<F>> {
    let n = pool.dim();
    for len in [r_slot.len(), r_cls.len(), w_fused.nrows(), w_fused.ncols()] {
        if len != n {
            return Err(DstError::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if pool.is_empty() {
        return Ok(vec![F::zero(); pool.capacity()]);
    }
    let query = (r_slot + r_cls).dot(w_fused);
    let scores: Vec<F> = pool
        .entries
        .iter()
        .map(|e| query.dot(&e.representation))
        .collect();
    Ok(masked_softmax(&scores, mask_pads.then_some(pool.mask.as_slice())))
}

/// Fused pool vector: attention-weighted sum of entry representations. An
/// all-padding pool fuses to the zero vector.
pub fn fuse<F: Real>(
    pool: &MentionedSlotPool<F>,
    r_slot: &Array1<F>,
    r_cls: &Array1<F>,
    w_fused: &Array2<F>,
) -> Result<Array1<F>> {
    fuse_with(pool, r_slot, r_cls, w_fused, true)
}

pub fn fuse_with<F: Real>(
    pool: &MentionedSlotPool<F>,
    r_slot: &Array1<F>,
    r_cls: &Array1<F>,
    w_fused: &Array2<F>,
    mask_pads: bool,
) -> Result<Array1<F>> {
    let weights = fusion_weights(pool, r_slot, r_cls, w_fused, mask_pads)?;
    let mut out = Array1::zeros(pool.dim());
    for (w, e) in weights.iter().zip(&pool.entries) {
        out.scaled_add(*w, &e.representation);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SchemaFile, SlotDef, SlotKind};
    use crate::encoder::Vocab;
    use ndarray::array;

    fn schema() -> Schema {
        let slot = |name: &str, rel: &[&str]| SlotDef {
            name: name.into(),
            domain: name.split('-').next().unwrap().into(),
            kind: SlotKind::Span,
            ontology: vec![],
            relevant_slots: rel.iter().map(|s| s.to_string()).collect(),
        };
        Schema::new(SchemaFile {
            slots: vec![
                slot("train-day", &["restaurant-day"]),
                slot("restaurant-day", &["train-day", "hotel-day"]),
                slot("hotel-day", &[]),
            ],
            synonyms: Default::default(),
        })
        .unwrap()
    }

    fn table_parts() -> (Vocab, Array2<f64>) {
        let vocab = Vocab::from(
            ["[CLS]", "[UNK]", "monday", "tuesday"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>(),
        );
        let m = array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        (vocab, m)
    }

    #[test]
    fn relevant_value_enters_pool_with_padding() {
        let schema = schema();
        let (vocab, m) = table_parts();
        let table = EmbeddingTable { vocab: &vocab, vectors: &m, frozen: true };
        let mut prev = DialogueState::empty(3);
        prev.set(0, SlotValue::Text("monday".into()), 1);
        let pool = build_msp(1, &prev, &schema, 4, &table, PoolMode::Full).unwrap();
        assert_eq!(pool.capacity(), 4);
        assert_eq!(pool.mask, vec![true, false, false, false]);
        assert_eq!(pool.entries[0].source_slot, Some(0));
        assert_eq!(pool.entries[0].value, "monday");
        assert_eq!(pool.entries[1].representation, array![0.0, 0.0]);

        let empty = build_msp(2, &prev, &schema, 4, &table, PoolMode::Full).unwrap();
        assert_eq!(empty.real_count(), 0);
        let self_only = build_msp(1, &prev, &schema, 4, &table, PoolMode::SelfOnly).unwrap();
        assert!(self_only.is_empty());
    }

    #[test]
    fn dontcare_is_never_pooled() {
        let schema = schema();
        let mut prev = DialogueState::empty(3);
        prev.set(1, SlotValue::DontCare, 1);
        prev.set(0, SlotValue::Text("monday".into()), 2);
        let vals = pool_values(1, &prev, &schema, 4, PoolMode::Full);
        assert_eq!(vals.len(), 1);
        assert_eq!(vals[0].source_slot, 0);
    }

    #[test]
    fn latest_four_are_kept() {
        let cands: Vec<PoolCandidate> = (1..=5)
            .map(|t| PoolCandidate { source_slot: t, value: format!("v{t}"), updated_turn: t })
            .collect();
        let kept = select_latest(&cands, 4);
        let turns: Vec<usize> = kept.iter().map(|c| c.updated_turn).collect();
        assert_eq!(turns, vec![2, 3, 4, 5]);
        // ties keep the earlier candidate
        let tied: Vec<PoolCandidate> = (0..3)
            .map(|i| PoolCandidate { source_slot: i, value: format!("v{i}"), updated_turn: 7 })
            .collect();
        let kept = select_latest(&tied, 2);
        assert_eq!(kept.iter().map(|c| c.source_slot).collect::<Vec<_>>(), vec![0, 1]);
    }

    fn pool_of(reps: &[[f64; 2]], real: usize) -> MentionedSlotPool<f64> {
        let entries = reps
            .iter()
            .enumerate()
            .map(|(i, r)| PoolEntry {
                source_slot: (i < real).then_some(i),
                value: format!("v{i}"),
                representation: array![r[0], r[1]],
                updated_turn: 1,
            })
            .collect();
        MentionedSlotPool { entries, mask: (0..reps.len()).map(|i| i < real).collect() }
    }

    #[test]
    fn fusion_matches_hand_computation() {
        let pool = pool_of(&[[1.0, 0.0], [0.0, 1.0]], 2);
        let eye = Array2::eye(2);
        let out = fuse(&pool, &array![0.5, 0.0], &array![0.5, 0.0], &eye).unwrap();
        // softmax(1, 0) = (e/(e+1), 1/(e+1))
        let e = std::f64::consts::E;
        assert!((out[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((out[0] - 0.7311).abs() < 1e-4 && (out[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn singleton_and_empty_pools() {
        let one = pool_of(&[[0.3, -0.7], [0.0, 0.0], [0.0, 0.0]], 1);
        let w = array![[2.0, 1.0], [-1.0, 0.5]];
        let out = fuse(&one, &array![1.0, 2.0], &array![0.1, 0.1], &w).unwrap();
        assert_eq!(out, array![0.3, -0.7]);
        let none = pool_of(&[[0.0, 0.0], [0.0, 0.0]], 0);
        assert_eq!(fuse(&none, &array![1.0, 2.0], &array![0.0, 0.0], &w).unwrap(), array![0.0, 0.0]);
        assert!(fuse(&one, &array![1.0], &array![0.0, 0.0], &w).is_err());
    }
}
