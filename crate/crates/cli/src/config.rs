//! Flat run configuration: defaults, then an optional JSON file, then
//! command-line flags of the same names.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use msp_dst::corpus::generator::GeneratorConfig;
use msp_dst::encoder::EncoderConfig;
use msp_dst::model::ModelConfig;
use msp_dst::msp::PoolMode;
use msp_dst::tracker::UpdateStrategy;
use msp_dst::training::{LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Schema file; defaults to the schema stored with the corpus, then to
    /// the bundled train/restaurant schema.
    pub schema: Option<PathBuf>,
    /// Corpus directory holding train/dev/test.jsonl and events.jsonl.
    pub data: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Split scored by eval, analyze and compare.
    pub split: String,
    /// Defaults to msp for training and to the checkpoint's strategy
    /// elsewhere.
    pub strategy: Option<UpdateStrategy>,
    pub seed: u64,

    pub max_len: usize,
    pub pool_mode: PoolMode,
    pub pool_size: usize,
    pub categorical_heads: bool,
    pub fusion_mask: bool,
    pub slot_aware_entries: bool,
    pub freeze_embeddings: bool,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub sinusoidal_positions: bool,
    pub head_init_std: f64,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup: f64,
    pub patience: usize,
    pub pool_noise: f64,
    pub grad_clip: Option<f64>,

    pub dialogues: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub correction_rate: f64,
    pub indirect_rate: f64,
    pub distractor_rate: f64,
    pub confirmation_rate: f64,
    pub slot_rate: f64,
    pub multi_domain_rate: f64,
    pub max_closing_turns: usize,
    /// JSON file with per-slot surface templates for custom schemas.
    pub lexicon: Option<PathBuf>,

    /// Track with gold-label heads instead of a checkpoint.
    pub oracle: bool,
    /// Force wrong extractions within this many opening turns (0 = off).
    pub noise_turns: usize,
    pub noise_seed: u64,

    pub strategies: Vec<UpdateStrategy>,
    pub seeds: Vec<u64>,
    /// Root of `<strategy>/seed-<n>/checkpoint.json` for compare.
    pub runs: PathBuf,
    /// Trace file for analyze; defaults to `<out>/trace.jsonl`.
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            schema: None,
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            checkpoint: None,
            split: "test".into(),
            strategy: None,
            seed: 0,
            max_len: 64,
            pool_mode: PoolMode::Full,
            pool_size: 4,
            categorical_heads: true,
            fusion_mask: true,
            slot_aware_entries: true,
            freeze_embeddings: false,
            dim: 32,
            layers: 1,
            heads: 2,
            ffn_dim: 64,
            sinusoidal_positions: false,
            head_init_std: 0.1,
            alpha: train.weights.alpha,
            beta: train.weights.beta,
            gamma: train.weights.gamma,
            learning_rate: 3e-3,
            epochs: 25,
            warmup: train.warmup,
            patience: 5,
            pool_noise: 0.2,
            grad_clip: None,
            dialogues: gen.dialogues,
            dev_fraction: gen.dev_fraction,
            test_fraction: gen.test_fraction,
            correction_rate: gen.correction_rate,
            indirect_rate: gen.indirect_rate,
            distractor_rate: gen.distractor_rate,
            confirmation_rate: gen.confirmation_rate,
            slot_rate: gen.slot_rate,
            multi_domain_rate: gen.multi_domain_rate,
            max_closing_turns: gen.max_closing_turns,
            lexicon: None,
            oracle: false,
            noise_turns: 0,
            noise_seed: 99,
            strategies: UpdateStrategy::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            runs: PathBuf::from("runs"),
            trace: None,
        }
    }
}

/// One flag per configuration field.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    /// Flat JSON configuration file
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<UpdateStrategy>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[arg(long, global = true, value_parser = parse_pool_mode)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_mode: Option<PoolMode>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categorical_heads: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_mask: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_aware_entries: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_embeddings: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffn_dim: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinusoidal_positions: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_init_std: Option<f64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_noise: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dialogues: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_fraction: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indirect_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distractor_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confirmation_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_domain_rate: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_closing_turns: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_turns: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,

    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<UpdateStrategy>>,
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

fn parse_pool_mode(s: &str) -> Result<PoolMode, String> {
    s.parse().map_err(|e: msp_dst::DstError| e.to_string())
}

/// A configuration problem the user has to fix (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

impl RunConfig {
    pub fn resolve(overrides: &Overrides) -> anyhow::Result<RunConfig> {
        let Value::Object(mut fields) = serde_json::to_value(RunConfig::default())? else {
            unreachable!("config serializes to an object")
        };
        if let Some(path) = &overrides.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(file)) => merge(&mut fields, file),
                Ok(_) => bail!(UsageError(format!("config {} is not a JSON object", path.display()))),
                Err(e) => bail!(UsageError(format!("config {}: {e}", path.display()))),
            }
        }
        let Value::Object(flags) = serde_json::to_value(overrides)? else {
            unreachable!("overrides serialize to an object")
        };
        merge(&mut fields, flags);
        serde_json::from_value(Value::Object(fields)).map_err(|e| UsageError(format!("invalid config: {e}")).into())
    }

    pub fn model_config(&self, strategy: UpdateStrategy) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                dim: self.dim,
                layers: self.layers,
                heads: self.heads,
                ffn_dim: self.ffn_dim,
                max_len: self.max_len,
                sinusoidal_positions: self.sinusoidal_positions,
            },
            strategy,
            pool_size: self.pool_size,
            pool_mode: self.pool_mode,
            categorical_heads: self.categorical_heads,
            fusion_mask: self.fusion_mask,
            slot_aware_entries: self.slot_aware_entries,
            freeze_embeddings: self.freeze_embeddings,
            head_init_std: self.head_init_std,
        }
    }

    pub fn train_config(&self, strategy: UpdateStrategy) -> TrainConfig {
        TrainConfig {
            weights: LossWeights {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
            },
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            warmup: self.warmup,
            patience: self.patience,
            seed: self.seed,
            pool_noise: if strategy == UpdateStrategy::Msp { self.pool_noise } else { 0.0 },
            grad_clip: self.grad_clip,
        }
    }

    pub fn generator_config(&self) -> anyhow::Result<GeneratorConfig> {
        let mut gen = GeneratorConfig {
            dialogues: self.dialogues,
            dev_fraction: self.dev_fraction,
            test_fraction: self.test_fraction,
            correction_rate: self.correction_rate,
            indirect_rate: self.indirect_rate,
            distractor_rate: self.distractor_rate,
            confirmation_rate: self.confirmation_rate,
            slot_rate: self.slot_rate,
            multi_domain_rate: self.multi_domain_rate,
            max_closing_turns: self.max_closing_turns,
            ..GeneratorConfig::default()
        };
        if let Some(path) = &self.lexicon {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read lexicon {}: {e}", path.display())))?;
            gen.lexicon = serde_json::from_str(&text).map_err(|e| UsageError(format!("lexicon: {e}")))?;
        }
        Ok(gen)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    pub fn trace_path(&self) -> PathBuf {
        self.trace.clone().unwrap_or_else(|| self.out.join("trace.jsonl"))
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.data.join(format!("{split}.jsonl"))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{CommandFactory, Parser};

    #[derive(Parser)]
    struct Probe {
        #[command(flatten)]
        o: Overrides,
    }

    #[test]
    fn every_field_has_a_flag() {
        let Value::Object(fields) = serde_json::to_value(RunConfig::default()).unwrap() else { panic!() };
        let cmd = Probe::command();
        let flags: Vec<String> = cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
        for name in fields.keys() {
            assert!(flags.contains(&name.replace('_', "-")), "no flag for {name}");
        }
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 3, "seed": 4, "pool_mode": "self"}"#).unwrap();
        let p = Probe::try_parse_from(["x", "--config", path.to_str().unwrap(), "--seed", "9", "--max-len", "128"]).unwrap();
        let c = RunConfig::resolve(&p.o).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seed, 9);
        assert_eq!(c.max_len, 128);
        assert_eq!(c.pool_mode, PoolMode::SelfOnly);
        assert_eq!(c.dim, RunConfig::default().dim);
    }

    #[test]
    fn unknown_fields_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochz": 3}"#).unwrap();
        let p = Probe::try_parse_from(["x", "--config", path.to_str().unwrap()]).unwrap();
        let err = RunConfig::resolve(&p.o).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
