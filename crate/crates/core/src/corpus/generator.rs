//! Templated two-party dialogues with logged corrections, indirect mentions
//! and distractor offers.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dialogue::{write_dialogues, Dialogue, DialogueRecord, TurnRecord};
use super::events::{write_events, EventKind, PhenomenonEvent};
use super::schema::Schema;
use crate::error::{DstError, Result};

/// Surface templates of one slot. `{v}` stands for a value and `{d}` for
/// the domain of the slot an indirect mention points at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLexicon {
    /// Values to draw from; categorical slots fall back to their ontology.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
    pub inform: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indirect: Option<String>,
    /// Noun phrase used in agent requests and user corrections.
    pub attr: String,
    /// Agent offer of a value.
    pub offer: String,
}

impl SlotLexicon {
    fn new(inform: &str, indirect: Option<&str>, attr: &str, offer: &str, values: &[&str]) -> Self {
        SlotLexicon {
            values: values.iter().map(|v| v.to_string()).collect(),
            inform: inform.into(),
            indirect: indirect.map(Into::into),
            attr: attr.into(),
            offer: offer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub dialogues: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// Per goal slot: probability of a later change of mind.
    pub correction_rate: f64,
    /// Per inform of a slot whose relevant slot is already filled:
    /// probability of referring to that slot instead of stating the value.
    pub indirect_rate: f64,
    /// Per agent turn with a filled state: probability of offering a wrong
    /// value that the user rejects.
    pub distractor_rate: f64,
    /// Probability that the agent repeats the values of the previous turn.
    pub confirmation_rate: f64,
    /// Probability that a slot of an active domain belongs to the goal.
    pub slot_rate: f64,
    /// Probability that a dialogue covers every domain rather than one.
    pub multi_domain_rate: f64,
    pub max_closing_turns: usize,
    pub lexicon: BTreeMap<String, SlotLexicon>,
}

const DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const TIMES: [&str; 16] = [
    "05:15", "06:30", "07:45", "08:15", "09:00", "10:30", "11:45", "12:15", "13:30", "14:00", "15:45",
    "16:15", "17:30", "18:00", "19:45", "21:15",
];
const PLACES: [&str; 10] = [
    "cambridge", "london kings cross", "ely", "norwich", "stevenage", "peterborough", "bishops stortford",
    "broxbourne", "kings lynn", "stansted airport",
];
const FOODS: [&str; 10] = [
    "italian", "chinese", "indian", "british", "modern european", "french", "thai", "spanish", "gastropub",
    "japanese",
];

/// Lexicon of the bundled train/restaurant schema.
pub fn desk_lexicon() -> BTreeMap<String, SlotLexicon> {
    let entries = [
        ("train-day", SlotLexicon::new("a train on {v}", Some("a train on the same day as the {d}"), "train day", "there is a train on {v} .", &DAYS)),
        ("train-leaveat", SlotLexicon::new("leaving after {v}", None, "departure time", "there is a train leaving at {v} .", &TIMES)),
        ("train-destination", SlotLexicon::new("going to {v}", None, "destination", "how about a train to {v} ?", &PLACES)),
        ("train-people", SlotLexicon::new("tickets for {v} people", Some("tickets for the same group as the {d}"), "number of tickets", "shall i book {v} tickets ?", &[])),
        ("restaurant-day", SlotLexicon::new("a table on {v}", Some("a table on the same day as the {d}"), "booking day", "i have a table on {v} .", &DAYS)),
        ("restaurant-people", SlotLexicon::new("a table for {v} people", Some("a table for the same group as the {d}"), "party size", "is that a table for {v} people ?", &[])),
        ("restaurant-food", SlotLexicon::new("{v} food", None, "food type", "how about {v} food ?", &FOODS)),
        ("restaurant-pricerange", SlotLexicon::new("a {v} place", None, "price range", "there is a {v} place nearby .", &[])),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// The bundled two-domain, eight-slot schema the default lexicon covers.
pub fn desk_schema() -> Schema {
    Schema::from_json(include_str!("../../data/desk_schema.json")).expect("bundled schema is valid")
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dialogues: 2000,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            correction_rate: 0.2,
            indirect_rate: 0.3,
            distractor_rate: 0.3,
            confirmation_rate: 0.5,
            slot_rate: 0.75,
            multi_domain_rate: 0.8,
            max_closing_turns: 2,
            lexicon: desk_lexicon(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let rates = [
            ("correction_rate", self.correction_rate),
            ("indirect_rate", self.indirect_rate),
            ("distractor_rate", self.distractor_rate),
            ("confirmation_rate", self.confirmation_rate),
            ("slot_rate", self.slot_rate),
            ("multi_domain_rate", self.multi_domain_rate),
            ("dev_fraction", self.dev_fraction),
            ("test_fraction", self.test_fraction),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(DstError::Config(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.dev_fraction + self.test_fraction > 1.0 {
            return Err(DstError::Config("dev and test fractions exceed 1".into()));
        }
        for id in 0..schema.len() {
            let slot = schema.slot(id);
            let lex = self
                .lexicon
                .get(&slot.name)
                .ok_or_else(|| DstError::Config(format!("no lexicon entry for slot '{}'", slot.name)))?;
            if !lex.inform.contains("{v}") || !lex.offer.contains("{v}") {
                return Err(DstError::Config(format!("templates of '{}' lack {{v}}", slot.name)));
            }
            let values = self.values(schema, id);
            if values.len() < 2 {
                return Err(DstError::Config(format!("slot '{}' needs at least two values", slot.name)));
            }
            if slot.is_categorical() {
                if let Some(v) = values.iter().find(|v| schema.ontology_index(id, v).is_none()) {
                    return Err(DstError::Config(format!("value '{v}' not in the ontology of '{}'", slot.name)));
                }
            }
        }
        Ok(())
    }

    fn values<'a>(&'a self, schema: &'a Schema, slot: usize) -> &'a [String] {
        let lex = &self.lexicon[&schema.slot(slot).name];
        if lex.values.is_empty() {
            &schema.slot(slot).ontology
        } else {
            &lex.values
        }
    }
}

/// Event totals and the number of chances each event had to occur.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub counts: BTreeMap<EventKind, usize>,
    pub opportunities: BTreeMap<EventKind, usize>,
}

impl EventStats {
    fn chance(&mut self, kind: EventKind, happened: bool) {
        *self.opportunities.entry(kind).or_default() += 1;
        if happened {
            *self.counts.entry(kind).or_default() += 1;
        }
    }

    fn merge(&mut self, other: EventStats) {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        for (k, v) in other.opportunities {
            *self.opportunities.entry(k).or_default() += v;
        }
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn opportunity(&self, kind: EventKind) -> usize {
        self.opportunities.get(&kind).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub events: Vec<PhenomenonEvent>,
    pub stats: EventStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Act {
    Inform(usize),
    Correct(usize),
}

fn dialogue_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn fill(template: &str, value: &str, domain: &str) -> String {
    template.replace("{v}", value).replace("{d}", domain)
}

struct Builder<'a> {
    config: &'a GeneratorConfig,
    schema: &'a Schema,
    id: String,
    rng: ChaCha8Rng,
    state: Vec<Option<String>>,
    events: Vec<PhenomenonEvent>,
    stats: EventStats,
}

impl Builder<'_> {
    fn lex(&self, slot: usize) -> &SlotLexicon {
        &self.config.lexicon[&self.schema.slot(slot).name]
    }

    fn pick(&mut self, slot: usize, except: Option<&str>) -> String {
        let values: Vec<&String> = self
            .config
            .values(self.schema, slot)
            .iter()
            .filter(|v| Some(v.as_str()) != except)
            .collect();
        values.choose(&mut self.rng).expect("validated value list").to_string()
    }

    fn log(&mut self, turn: usize, slot: usize, event: EventKind, source: Option<usize>) {
        self.events.push(PhenomenonEvent {
            dialogue_id: self.id.clone(),
            turn: turn + 1,
            slot: self.schema.slot(slot).name.clone(),
            event,
            source_slot: source.map(|s| self.schema.slot(s).name.clone()),
        });
    }

    fn plan(&mut self) -> Vec<Vec<Act>> {
        let mut domains = self.schema.domains();
        domains.shuffle(&mut self.rng);
        if !self.rng.gen_bool(self.config.multi_domain_rate) {
            domains.truncate(1);
        }
        let mut turns: Vec<Vec<Act>> = Vec::new();
        let mut informed_at = Vec::new();
        for d in &domains {
            let mut slots: Vec<usize> = (0..self.schema.len())
                .filter(|&s| &self.schema.slot(s).domain == d)
                .filter(|_| self.rng.gen_bool(self.config.slot_rate))
                .collect();
            if slots.is_empty() {
                let all: Vec<usize> = (0..self.schema.len()).filter(|&s| &self.schema.slot(s).domain == d).collect();
                slots.push(*all.choose(&mut self.rng).expect("domain has slots"));
            }
            slots.shuffle(&mut self.rng);
            let mut rest = slots.as_slice();
            while !rest.is_empty() {
                let n = self.rng.gen_range(1..=2).min(rest.len());
                for &s in &rest[..n] {
                    informed_at.push((s, turns.len()));
                }
                turns.push(rest[..n].iter().map(|&s| Act::Inform(s)).collect());
                rest = &rest[n..];
            }
        }
        let informs = turns.len();
        for (s, t) in informed_at {
            let happened = self.rng.gen_bool(self.config.correction_rate);
            self.stats.chance(EventKind::Correction, happened);
            if happened {
                let at = self.rng.gen_range(t + 1..=informs);
                if at == turns.len() {
                    turns.push(Vec::new());
                }
                turns[at].push(Act::Correct(s));
            }
        }
        let closing = self.rng.gen_range(0..=self.config.max_closing_turns);
        turns.extend((0..closing).map(|_| Vec::new()));
        turns
    }

    fn build(mut self) -> (DialogueRecord, Vec<PhenomenonEvent>, EventStats) {
        let plan = self.plan();
        let mut records = Vec::with_capacity(plan.len());
        let mut last_informed: Vec<usize> = Vec::new();
        for (t, acts) in plan.iter().enumerate() {
            let mut user: Vec<String> = Vec::new();
            let agent = self.agent_turn(t, acts, &last_informed, &mut user);
            let mut informs = Vec::new();
            let mut corrections = Vec::new();
            last_informed.clear();
            for act in acts {
                match *act {
                    Act::Inform(s) => {
                        informs.push(self.inform(t, s));
                        last_informed.push(s);
                    }
                    Act::Correct(s) => {
                        let old = self.state[s].clone();
                        let v = self.pick(s, old.as_deref());
                        corrections.push(format!("actually , change the {} to {v} .", self.lex(s).attr));
                        self.state[s] = Some(v);
                        self.log(t, s, EventKind::Correction, None);
                    }
                }
            }
            if !informs.is_empty() {
                let lead = ["i need", "i would like", "i am looking for", "please find me"]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                user.push(format!("{lead} {} .", informs.join(" and ")));
            }
            user.extend(corrections);
            if user.is_empty() {
                user.push(
                    ["no , that is all . thank you .", "that is everything , thanks .", "great , thank you ."]
                        .choose(&mut self.rng)
                        .expect("non-empty")
                        .to_string(),
                );
            }
            let state = self
                .state
                .iter()
                .enumerate()
                .filter_map(|(s, v)| v.as_ref().map(|v| (self.schema.slot(s).name.clone(), v.clone())))
                .collect();
            records.push(TurnRecord {
                agent,
                user: user.join(" "),
                state,
            });
        }
        (
            DialogueRecord {
                id: self.id,
                turns: records,
            },
            self.events,
            self.stats,
        )
    }

    fn agent_turn(&mut self, t: usize, acts: &[Act], last_informed: &[usize], user: &mut Vec<String>) -> String {
        if t == 0 {
            return "hello , how can i help you ?".into();
        }
        let filled: Vec<usize> = (0..self.schema.len())
            .filter(|&s| self.state[s].is_some() && !acts.contains(&Act::Correct(s)))
            .collect();
        if !filled.is_empty() {
            let happened = self.rng.gen_bool(self.config.distractor_rate);
            self.stats.chance(EventKind::Distractor, happened);
            if happened {
                let s = *filled.choose(&mut self.rng).expect("non-empty");
                let right = self.state[s].clone().expect("filled");
                let wrong = self.pick(s, Some(&right));
                let domain = self.schema.slot(s).domain.clone();
                user.push(format!("no , {} .", fill(&self.lex(s).inform, &right, &domain)));
                self.log(t, s, EventKind::Distractor, None);
                return fill(&self.lex(s).offer, &wrong, &domain);
            }
        }
        let mut out = String::new();
        if !last_informed.is_empty() && self.rng.gen_bool(self.config.confirmation_rate) {
            let parts: Vec<String> = last_informed
                .iter()
                .filter_map(|&s| self.state[s].as_ref().map(|v| fill(&self.lex(s).inform, v, "")))
                .collect();
            out = format!("ok , {} . ", parts.join(" and "));
        }
        match acts.iter().find_map(|a| match a {
            Act::Inform(s) => Some(*s),
            Act::Correct(_) => None,
        }) {
            Some(s) => out.push_str(&format!("what {} would you like ?", self.lex(s).attr)),
            None => out.push_str("is there anything else ?"),
        }
        out
    }

    fn inform(&mut self, t: usize, s: usize) -> String {
        let source = self
            .schema
            .relevant(s)
            .iter()
            .copied()
            .find(|&r| self.state[r].is_some());
        if let (Some(r), Some(template)) = (source, self.lex(s).indirect.clone()) {
            let happened = self.rng.gen_bool(self.config.indirect_rate);
            self.stats.chance(EventKind::Indirect, happened);
            if happened {
                self.state[s] = self.state[r].clone();
                self.log(t, s, EventKind::Indirect, Some(r));
                let domain = self.schema.slot(r).domain.clone();
                return fill(&template, "", &domain);
            }
        }
        let v = self.pick(s, None);
        let phrase = fill(&self.lex(s).inform, &v, "");
        self.state[s] = Some(v);
        phrase
    }
}

/// Generate `config.dialogues` dialogues. Each dialogue draws from its own
/// generator seeded by `(seed, index)`.
pub fn generate_corpus(config: &GeneratorConfig, schema: &Schema, seed: u64) -> Result<GeneratedCorpus> {
    config.validate(schema)?;
    let mut dialogues = Vec::with_capacity(config.dialogues);
    let mut events = Vec::new();
    let mut stats = EventStats::default();
    for i in 0..config.dialogues {
        let builder = Builder {
            config,
            schema,
            id: format!("syn-{i:05}"),
            rng: dialogue_rng(seed, i),
            state: vec![None; schema.len()],
            events: Vec::new(),
            stats: EventStats::default(),
        };
        let (record, ev, st) = builder.build();
        dialogues.push(record.into_dialogue(schema)?);
        events.extend(ev);
        stats.merge(st);
    }
    let n = dialogues.len();
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let n_dev = (n as f64 * config.dev_fraction).round() as usize;
    let test = dialogues.split_off(n - n_test);
    let dev = dialogues.split_off(n - n_test - n_dev);
    Ok(GeneratedCorpus {
        train: dialogues,
        dev,
        test,
        events,
        stats,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub stats: EventStats,
    pub config: GeneratorConfig,
}

/// Write train/dev/test dialogue files, the event sidecar, the schema and a
/// manifest into `dir`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    corpus: &GeneratedCorpus,
    schema: &Schema,
    config: &GeneratorConfig,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DstError::io(dir, e))?;
    write_dialogues(dir.join("train.jsonl"), &corpus.train, schema)?;
    write_dialogues(dir.join("dev.jsonl"), &corpus.dev, schema)?;
    write_dialogues(dir.join("test.jsonl"), &corpus.test, schema)?;
    write_events(dir.join("events.jsonl"), &corpus.events)?;
    let manifest = Manifest {
        seed,
        train: corpus.train.len(),
        dev: corpus.dev.len(),
        test: corpus.test.len(),
        stats: corpus.stats.clone(),
        config: config.clone(),
    };
    let write_json = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text + "\n").map_err(|e| DstError::io(&path, e))
    };
    write_json("manifest.json", serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write_json("schema.json", serde_json::to_string_pretty(&schema.to_file()).expect("schema serializes"))
}
