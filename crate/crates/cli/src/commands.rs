use std::collections::BTreeMap;
use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;

use anyhow::Context;
use log::info;
use msp_dst::corpus::events::{read_events, PhenomenonEvent};
use msp_dst::corpus::generator::{desk_schema, generate_corpus, write_corpus};
use msp_dst::corpus::{parse_dialogues, parse_schema, Dialogue, DialogueState, Schema, SlotValue};
use msp_dst::encoder::Vocab;
use msp_dst::eval::{
    compare_strategies, evaluate, inherit_analysis, render_comparison, render_slot_table, slot_metrics,
    CompareEntry, InheritCounters, SlotReport,
};
use msp_dst::model::Model;
use msp_dst::tracker::{
    read_trace, write_trace, Disposition, NoiseConfig, OracleHeads, TraceRecord, TrackerConfig, TrackerSession,
    UpdateStrategy,
};
use msp_dst::training::{load_checkpoint, save_checkpoint, tracker_config, train, write_history};
use serde::Serialize;

use crate::config::{RunConfig, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Explicit schema, else the one stored with the corpus, else the bundled one.
fn load_schema(cfg: &RunConfig) -> anyhow::Result<Schema> {
    if let Some(path) = &cfg.schema {
        return Ok(parse_schema(path)?);
    }
    let stored = cfg.data.join("schema.json");
    if stored.is_file() {
        return Ok(parse_schema(stored)?);
    }
    Ok(desk_schema())
}

fn load_split(cfg: &RunConfig, split: &str, schema: &Schema) -> anyhow::Result<Vec<Dialogue>> {
    let path = cfg.split_path(split);
    if !path.is_file() {
        return Err(usage(format!("missing corpus file {}", path.display())));
    }
    Ok(parse_dialogues(&path, schema)?)
}

fn load_events(cfg: &RunConfig) -> anyhow::Result<Vec<PhenomenonEvent>> {
    let path = cfg.data.join("events.jsonl");
    if path.is_file() {
        Ok(read_events(path)?)
    } else {
        Ok(Vec::new())
    }
}

fn load_model(cfg: &RunConfig, schema: &Schema) -> anyhow::Result<Model<f32>> {
    let path = cfg.checkpoint_path();
    if !path.is_file() {
        return Err(usage(format!("missing checkpoint {}", path.display())));
    }
    let model = load_checkpoint(&path, schema)?;
    if let Some(s) = cfg.strategy {
        if s != model.config.strategy {
            return Err(usage(format!(
                "--strategy {} does not match checkpoint strategy {}",
                s.as_str(),
                model.config.strategy.as_str()
            )));
        }
    }
    Ok(model)
}

fn create_out(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let gen = cfg.generator_config()?;
    let corpus = generate_corpus(&gen, &schema, cfg.seed)?;
    write_corpus(&cfg.data, &corpus, &schema, &gen, cfg.seed)?;
    println!(
        "wrote {} train, {} dev, {} test dialogues and {} events to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.events.len(),
        cfg.data.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let train_set = load_split(cfg, "train", &schema)?;
    let dev_set = load_split(cfg, "dev", &schema)?;
    let strategy = cfg.strategy.unwrap_or(UpdateStrategy::Msp);
    let tc = cfg.train_config(strategy);
    let mc = cfg.model_config(strategy);
    create_out(cfg)?;
    cfg.write(&cfg.out.join("config.json"))?;
    info!("training {} on {} dialogues", strategy.as_str(), train_set.len());
    let outcome = train(&tc, mc, &schema, &train_set, &dev_set)?;
    let ckpt = cfg.checkpoint_path();
    save_checkpoint(&outcome.model, Some(&tc), &ckpt)?;
    write_history(&outcome.history, cfg.out.join("history.jsonl"))?;
    println!(
        "best epoch {} dev JGA {:.2}; checkpoint {}",
        outcome.best_epoch,
        100.0 * outcome.best_dev_jga,
        ckpt.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct StateRow<'a> {
    dialogue_id: &'a str,
    states: Vec<BTreeMap<String, String>>,
}

fn write_states(path: &Path, dialogues: &[Dialogue], states: &[Vec<DialogueState>], schema: &Schema) -> anyhow::Result<()> {
    let mut out = String::new();
    for (d, s) in dialogues.iter().zip(states) {
        let row = StateRow {
            dialogue_id: &d.id,
            states: s.iter().map(|st| st.to_map(schema)).collect(),
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn noise_config(cfg: &RunConfig, schema: &Schema, fallback: &[Dialogue]) -> anyhow::Result<Option<NoiseConfig>> {
    if cfg.noise_turns == 0 {
        return Ok(None);
    }
    let inventory_source = if cfg.split_path("train").is_file() {
        load_split(cfg, "train", schema)?
    } else {
        fallback.to_vec()
    };
    Ok(Some(NoiseConfig::from_corpus(schema, &inventory_source, cfg.noise_seed, cfg.noise_turns)))
}

pub fn eval_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let dialogues = load_split(cfg, &cfg.split, &schema)?;
    let events = load_events(cfg)?;
    let noise = noise_config(cfg, &schema, &dialogues)?;
    let evaluation = if cfg.oracle {
        let strategy = cfg.strategy.unwrap_or(UpdateStrategy::Msp);
        let vocab = Vocab::build(&schema, &dialogues);
        let oracle = OracleHeads {
            schema: &schema,
            vocab: &vocab,
            strategy,
            categorical_heads: cfg.categorical_heads,
        };
        let tc = TrackerConfig {
            strategy,
            max_len: cfg.max_len,
            pool_size: cfg.pool_size,
            pool_mode: cfg.pool_mode,
            noise,
        };
        evaluate(&oracle, &dialogues, &schema, &tc, &events)?
    } else {
        let model = load_model(cfg, &schema)?;
        let tc = TrackerConfig {
            noise,
            ..tracker_config(&model.config)
        };
        evaluate(&model, &dialogues, &schema, &tc, &events)?
    };
    create_out(cfg)?;
    write_json(&cfg.out.join("report.json"), &evaluation.report)?;
    write_trace(cfg.out.join("trace.jsonl"), &evaluation.traces)?;
    write_states(&cfg.out.join("states.jsonl"), &dialogues, &evaluation.states, &schema)?;
    print!("{}", render_slot_table(&evaluation.report));
    Ok(())
}

pub fn compare_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let dialogues = load_split(cfg, &cfg.split, &schema)?;
    let mut entries = Vec::new();
    for &strategy in &cfg.strategies {
        for &seed in &cfg.seeds {
            let checkpoint = cfg.runs.join(strategy.as_str()).join(format!("seed-{seed}")).join("checkpoint.json");
            if !checkpoint.is_file() {
                return Err(usage(format!("missing checkpoint {}", checkpoint.display())));
            }
            entries.push(CompareEntry { strategy, seed, checkpoint });
        }
    }
    let comparison = compare_strategies(&entries, &dialogues, &schema)?;
    create_out(cfg)?;
    write_json(&cfg.out.join("comparison.json"), &comparison)?;
    print!("{}", render_comparison(&comparison));
    let mut ranked: Vec<(UpdateStrategy, f64)> = comparison.medians.iter().map(|(s, m)| (*s, *m)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let ordering: Vec<String> = ranked.iter().map(|(s, m)| format!("{} {:.2}", s.as_str(), 100.0 * m)).collect();
    println!("median ordering: {}", ordering.join(" >= "));
    Ok(())
}

#[derive(Serialize)]
struct Analysis {
    inherit: InheritCounters,
    /// Wrong (turn, slot) predictions by how the value was produced.
    errors_by_disposition: BTreeMap<String, usize>,
    slots: Vec<SlotReport>,
}

fn disposition_name(d: Disposition) -> &'static str {
    match d {
        Disposition::Inherited => "inherited",
        Disposition::Revised => "revised",
        Disposition::Extracted => "extracted",
        Disposition::None => "none",
    }
}

pub fn analyze_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let dialogues = load_split(cfg, &cfg.split, &schema)?;
    let events = load_events(cfg)?;
    let trace_path = cfg.trace_path();
    if !trace_path.is_file() {
        return Err(usage(format!("missing trace {}", trace_path.display())));
    }
    let traces = read_trace(&trace_path)?;
    let inherit = inherit_analysis(&traces, &dialogues, &events, &schema)?;

    let by_key: BTreeMap<(&str, usize, &str), &TraceRecord> =
        traces.iter().map(|r| ((r.dialogue_id.as_str(), r.turn, r.slot.as_str()), r)).collect();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut errors_by_disposition = BTreeMap::new();
    for d in &dialogues {
        for (t, turn) in d.turns.iter().enumerate() {
            let mut values = Vec::with_capacity(schema.len());
            for s in 0..schema.len() {
                let r = by_key[&(d.id.as_str(), t + 1, schema.slot(s).name.as_str())];
                let v = SlotValue::parse(&r.value);
                if !v.matches(turn.gold_state.get(s), &schema) {
                    *errors_by_disposition.entry(disposition_name(r.disposition).to_string()).or_insert(0) += 1;
                }
                values.push(v);
            }
            preds.push(DialogueState::advance(&DialogueState::empty(schema.len()), values, t + 1));
            golds.push(turn.gold_state.clone());
        }
    }
    let analysis = Analysis {
        inherit,
        errors_by_disposition,
        slots: slot_metrics(&preds, &golds, &schema)?,
    };
    create_out(cfg)?;
    write_json(&cfg.out.join("analysis.json"), &analysis)?;

    let i = &analysis.inherit;
    println!("errors {}  inherited errors {}", i.error_count, i.inherit_error_count);
    println!("revision successes {}", i.revision_success);
    println!("indirect mentions tracked {}/{}", i.indirect_tracked, i.indirect_total);
    for (k, v) in &analysis.errors_by_disposition {
        println!("errors from {k}: {v}");
    }
    println!("{:<28} {:>6} {:>6} {:>6}", "slot", "FP", "FN", "PLFP");
    for s in &analysis.slots {
        println!("{:<28} {:>6} {:>6} {:>6}", s.slot, s.counts.fp, s.counts.fn_, s.counts.plfp);
    }
    Ok(())
}

fn print_turn(out: &mut impl Write, turn: usize, state: &DialogueState, records: &[TraceRecord], schema: &Schema) -> std::io::Result<()> {
    writeln!(out, "turn {turn} {}", serde_json::to_string(&state.to_map(schema)).expect("state serializes"))?;
    for r in records.iter().filter(|r| r.disposition != Disposition::None) {
        writeln!(out, "  {} = {} [{}]", r.slot, r.value, disposition_name(r.disposition))?;
    }
    out.flush()
}

/// Read alternating agent and user lines; `:reset` starts a new dialogue
/// and `:quit` ends the session.
pub fn repl_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let schema = load_schema(cfg)?;
    let model = load_model(cfg, &schema)?;
    let mut session = TrackerSession::new(&model, &schema, tracker_config(&model.config), "repl")?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut agent: Option<String> = None;
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            eprint!("{}", if agent.is_none() { "agent> " } else { "user> " });
        }
        let Some(line) = lines.next() else { break };
        let line = line.context("reading stdin")?;
        match line.trim() {
            ":quit" => break,
            ":reset" => {
                session.reset();
                agent = None;
                writeln!(out, "reset")?;
                continue;
            }
            _ => {}
        }
        match agent.take() {
            None => agent = Some(line),
            Some(a) => {
                let (state, records) = session.step(&a, &line)?;
                print_turn(&mut out, session.turns(), &state, &records, &schema)?;
            }
        }
    }
    Ok(())
}
