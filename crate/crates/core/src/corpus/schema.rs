use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::normalize_text;
use crate::error::{DstError, Result};

/// Longest relevant-slot list a slot may declare.
pub const MAX_RELEVANT_SLOTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Categorical,
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub domain: String,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ontology: Vec<String>,
    #[serde(default)]
    pub relevant_slots: Vec<String>,
}

impl SlotDef {
    pub fn is_categorical(&self) -> bool {
        self.kind == SlotKind::Categorical
    }
}

/// On-disk schema document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub slots: Vec<SlotDef>,
    /// variant surface form -> canonical value
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

/// Validated slot inventory with the relevant-slot dictionary.
#[derive(Debug, Clone)]
pub struct Schema {
    slots: Vec<SlotDef>,
    synonyms: BTreeMap<String, String>,
    index: HashMap<String, usize>,
    relevant: Vec<Vec<usize>>,
    variants: HashMap<String, Vec<String>>,
    canon: HashMap<String, String>,
}

impl Schema {
    pub fn new(file: SchemaFile) -> Result<Self> {
        if file.slots.is_empty() {
            return Err(DstError::EmptySchema);
        }
        let mut index = HashMap::new();
        for (i, slot) in file.slots.iter().enumerate() {
            if slot.name.trim().is_empty() {
                return Err(DstError::InvalidSchema(format!("slot #{i} has an empty name")));
            }
            if index.insert(slot.name.clone(), i).is_some() {
                return Err(DstError::InvalidSchema(format!(
                    "duplicate slot name '{}'",
                    slot.name
                )));
            }
        }
        let mut relevant = Vec::with_capacity(file.slots.len());
        for slot in &file.slots {
            match slot.kind {
                SlotKind::Categorical if slot.ontology.is_empty() => {
                    return Err(DstError::InvalidSchema(format!(
                        "categorical slot '{}' has an empty ontology",
                        slot.name
                    )))
                }
                SlotKind::Span if !slot.ontology.is_empty() => {
                    return Err(DstError::InvalidSchema(format!(
                        "span slot '{}' must not declare an ontology",
                        slot.name
                    )))
                }
                _ => {}
            }
            if slot.relevant_slots.len() > MAX_RELEVANT_SLOTS {
                return Err(DstError::InvalidSchema(format!(
                    "slot '{}' declares {} relevant slots (at most {MAX_RELEVANT_SLOTS})",
                    slot.name,
                    slot.relevant_slots.len()
                )));
            }
            let mut seen = HashSet::new();
            let mut ids = Vec::with_capacity(slot.relevant_slots.len());
            for name in &slot.relevant_slots {
                let id = *index.get(name).ok_or_else(|| {
                    DstError::InvalidSchema(format!(
                        "slot '{}' references unknown relevant slot '{name}'",
                        slot.name
                    ))
                })?;
                if name == &slot.name {
                    return Err(DstError::InvalidSchema(format!(
                        "slot '{}' lists itself as a relevant slot",
                        slot.name
                    )));
                }
                if seen.insert(id) {
                    ids.push(id);
                }
            }
            relevant.push(ids);
        }
        let mut variants: HashMap<String, Vec<String>> = HashMap::new();
        let mut canon = HashMap::new();
        for (variant, canonical) in &file.synonyms {
            canon.insert(normalize_text(variant), normalize_text(canonical));
            variants
                .entry(normalize_text(canonical))
                .or_default()
                .push(variant.clone());
        }
        Ok(Schema {
            slots: file.slots,
            synonyms: file.synonyms,
            index,
            relevant,
            variants,
            canon,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| DstError::malformed("schema", e))?;
        Schema::new(file)
    }

    pub fn to_file(&self) -> SchemaFile {
        SchemaFile {
            slots: self.slots.clone(),
            synonyms: self.synonyms.clone(),
        }
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: usize) -> &SlotDef {
        &self.slots[id]
    }

    pub fn slot_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Relevant slots of `id`, as slot ids in dictionary order.
    pub fn relevant(&self, id: usize) -> &[usize] {
        &self.relevant[id]
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    /// Domains in first-appearance order.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for slot in &self.slots {
            if !out.contains(&slot.domain) {
                out.push(slot.domain.clone());
            }
        }
        out
    }

    /// Lowercase, punctuation strip, then map through the synonym table.
    pub fn canonical_value(&self, value: &str) -> String {
        let norm = normalize_text(value);
        match self.canon.get(&norm) {
            Some(canonical) => canonical.clone(),
            None => norm,
        }
    }

    /// The value itself plus every synonym variant mapping onto it.
    pub fn surface_forms(&self, value: &str) -> Vec<String> {
        let mut forms = vec![value.to_string()];
        let canonical = self.canonical_value(value);
        if canonical != normalize_text(value) {
            forms.push(canonical.clone());
        }
        if let Some(vs) = self.variants.get(&canonical) {
            for v in vs {
                if !forms.contains(v) {
                    forms.push(v.clone());
                }
            }
        }
        forms
    }

    /// Ontology index of `value` for a categorical slot, compared canonically.
    pub fn ontology_index(&self, id: usize, value: &str) -> Option<usize> {
        let target = self.canonical_value(value);
        self.slots[id]
            .ontology
            .iter()
            .position(|v| self.canonical_value(v) == target)
    }

    /// Stable digest of the schema document, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.to_file()).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Read and validate a schema file.
pub fn parse_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    Schema::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(name: &str, relevant: &[&str]) -> SlotDef {
        SlotDef {
            name: name.into(),
            domain: name.split('-').next().unwrap().into(),
            kind: SlotKind::Span,
            ontology: vec![],
            relevant_slots: relevant.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn empty_schema_rejected() {
        let err = Schema::new(SchemaFile {
            slots: vec![],
            synonyms: BTreeMap::new(),
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "empty schema");
    }

    #[test]
    fn dangling_relevant_slot_names_the_slot() {
        let err = Schema::new(SchemaFile {
            slots: vec![slot("restaurant-day", &["train-day"])],
            synonyms: BTreeMap::new(),
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("restaurant-day") && msg.contains("train-day"), "{msg}");
    }

    #[test]
    fn more_than_three_relevant_slots_rejected() {
        let slots = vec![
            slot("a-x", &["b-x", "c-x", "d-x", "e-x"]),
            slot("b-x", &[]),
            slot("c-x", &[]),
            slot("d-x", &[]),
            slot("e-x", &[]),
        ];
        assert!(Schema::new(SchemaFile {
            slots,
            synonyms: BTreeMap::new()
        })
        .is_err());
    }

    #[test]
    fn categorical_requires_ontology() {
        let mut s = slot("hotel-parking", &[]);
        s.kind = SlotKind::Categorical;
        assert!(Schema::new(SchemaFile {
            slots: vec![s],
            synonyms: BTreeMap::new()
        })
        .is_err());
    }

    #[test]
    fn synonyms_canonicalize() {
        let schema = Schema::new(SchemaFile {
            slots: vec![slot("hotel-area", &[])],
            synonyms: [("center".to_string(), "centre".to_string())].into(),
        })
        .unwrap();
        assert_eq!(schema.canonical_value("Center"), "centre");
        assert_eq!(schema.canonical_value("centre"), "centre");
        assert!(schema.surface_forms("centre").contains(&"center".to_string()));
    }
}
