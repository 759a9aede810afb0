//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use msp_dst::corpus::generator::{desk_schema, generate_corpus, write_corpus, GeneratorConfig};
use msp_dst::corpus::labels::derive_labels;
use msp_dst::corpus::{parse_dialogues, parse_schema, Dialogue, DialogueRecord, DialogueState, Schema, SlotValue};
use msp_dst::encoder::{EmbeddingTable, EncoderConfig, Vocab};
use msp_dst::eval::{evaluate, joint_goal_accuracy, median, slot_metrics, MetricsReport};
use msp_dst::heads::HitType;
use msp_dst::model::{Model, ModelConfig};
use msp_dst::msp::{build_msp, select_latest, PoolCandidate, PoolMode};
use msp_dst::tracker::{update_slot, NoiseConfig, OracleHeads, SlotDecision, TrackerConfig, UpdateStrategy};
use msp_dst::training::{
    dialogue_objective, grad_check, joint_loss, label_config, tracker_config, train, write_history, LossWeights,
    TrainConfig,
};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn micro_schema() -> Schema {
    Schema::from_json(
        r#"{"slots":[
            {"name":"train-day","domain":"train","kind":"categorical",
             "ontology":["monday","tuesday","friday"],"relevant_slots":["train-leaveat"]},
            {"name":"train-leaveat","domain":"train","kind":"span","relevant_slots":["train-day"]}]}"#,
    )
    .unwrap()
}

fn parse(schema: &Schema, json: &str) -> Dialogue {
    serde_json::from_str::<DialogueRecord>(json).unwrap().into_dialogue(schema).unwrap()
}

fn micro_dialogue(schema: &Schema) -> Dialogue {
    parse(
        schema,
        r#"{"id":"g","turns":[
            {"agent":"","user":"a train on monday after 19:45","state":{"train-day":"monday","train-leaveat":"19:45"}},
            {"agent":"there is one at 21:00 .","user":"yes 21:00 but on friday","state":{"train-day":"friday","train-leaveat":"21:00"}},
            {"agent":"booked .","user":"thanks","state":{"train-day":"friday","train-leaveat":"21:00"}}]}"#,
    )
}

/// Vocabulary of the micro schema and dialogue padded to exactly `size`.
fn padded_vocab(schema: &Schema, dialogues: &[Dialogue], size: usize) -> Vocab {
    let mut tokens = Vocab::build(schema, dialogues).tokens().to_vec();
    assert!(tokens.len() <= size, "base vocabulary has {} tokens", tokens.len());
    let mut i = 0;
    while tokens.len() < size {
        tokens.push(format!("filler{i}"));
        i += 1;
    }
    Vocab::from(tokens)
}

fn micro_config(strategy: UpdateStrategy) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { dim: 8, layers: 1, heads: 2, ffn_dim: 16, max_len: 64, sinusoidal_positions: false },
        strategy,
        head_init_std: 0.5,
        freeze_embeddings: false,
        slot_aware_entries: true,
        ..ModelConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let schema = micro_schema();
    let d = micro_dialogue(&schema);
    let vocab = padded_vocab(&schema, std::slice::from_ref(&d), 50);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for strategy in UpdateStrategy::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = Model::<f64>::init(micro_config(strategy), schema.clone(), vocab.clone(), &mut rng).unwrap();
        let turns = derive_labels(&d, &schema, &model.vocab, &label_config(&model.config)).unwrap();
        let r = grad_check(&model, &turns, &LossWeights::default(), 1e-4, 120, &mut rng).unwrap();
        check(r.checked == 120, format!("{strategy}: only {} coordinates checked", r.checked))?;
        check(r.max_relative_error < 1e-5, format!("{strategy}: {r:?}"))?;
        worst = worst.max(r.max_relative_error);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{checked} coordinates over 4 strategies, max relative error {worst:.2e}, {secs:.1}s"))
}

fn criterion_2() -> Outcome {
    let schema = micro_schema();
    // the span slot is never extracted, so every hit term is categorical
    let d = parse(
        &schema,
        r#"{"id":"z","turns":[
            {"agent":"","user":"a train on monday","state":{"train-day":"monday"}},
            {"agent":"ok .","user":"make it tuesday","state":{"train-day":"tuesday"}},
            {"agent":"ok .","user":"thanks","state":{"train-day":"tuesday"}}]}"#,
    );
    let vocab = Vocab::build(&schema, std::slice::from_ref(&d));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Model::<f64>::init(micro_config(UpdateStrategy::Msp), schema.clone(), vocab, &mut rng).unwrap();
    model.zero_heads();
    let w = LossWeights::default();
    let mut type_terms = 0;
    let mut hit_terms = 0;
    let mut mention_expected = 0.0;
    let labels = derive_labels(&d, &schema, &model.vocab, &label_config(&model.config)).unwrap();
    for tl in &labels {
        for ex in &tl.examples {
            type_terms += 1;
            match ex.hit_type {
                HitType::Hit => hit_terms += 1,
                HitType::Mentioned => mention_expected += (tl.pools[ex.slot].len() as f64).ln(),
                _ => {}
            }
        }
    }
    let (parts, _) = dialogue_objective(&model, &model.store, &labels, &w, false).unwrap();
    let per_type = parts.l_type / type_terms as f64;
    let per_hit = parts.l_hit / hit_terms as f64;
    check((per_type - 4f64.ln()).abs() < 1e-9, format!("L_type per example {per_type}"))?;
    check(hit_terms > 0 && (per_hit - 3f64.ln()).abs() < 1e-9, format!("L_hit per example {per_hit}"))?;
    check((parts.l_mention - mention_expected).abs() < 1e-9, format!("L_mention {}", parts.l_mention))?;
    let recomposed = 0.6 * parts.l_type + 0.2 * parts.l_mention + 0.2 * parts.l_hit;
    check((parts.joint - recomposed).abs() < 1e-9, format!("joint {} vs {recomposed}", parts.joint))?;
    check(joint_loss(1.0, 1.0, 1.0, &w) == 0.6 + 0.2 + 0.2, "unit composition")?;
    check(joint_loss(0.0, 0.0, 0.0, &w) == 0.0, "zero composition")?;
    for (a, b, c) in [(2.0, 0.0, 0.0), (0.0, 5.0, 0.0), (0.0, 0.0, 0.5), (1.5, 2.5, 3.5)] {
        check(joint_loss(a, b, c, &w) == 0.6 * a + 0.2 * b + 0.2 * c, format!("composition at ({a}, {b}, {c})"))?;
    }
    Ok(format!(
        "L_type/example {per_type:.12}, L_hit/example {per_hit:.12} over {type_terms} type and {hit_terms} hit terms"
    ))
}

fn random_value(rng: &mut ChaCha8Rng) -> SlotValue {
    match rng.gen_range(0..6) {
        0 | 1 => SlotValue::None,
        2 => SlotValue::DontCare,
        i => SlotValue::Text(["a", "b", "c"][i - 3].to_string()),
    }
}

/// Recount of the five outcomes written without the library's classifier.
fn recount(preds: &[DialogueState], golds: &[DialogueState], slot: usize) -> [usize; 5] {
    let mut c = [0usize; 5];
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p.get(slot), g.get(slot));
        let i = if *g == SlotValue::None && *p == SlotValue::None {
            1
        } else if *g == SlotValue::None {
            2
        } else if *p == SlotValue::None {
            3
        } else if p == g {
            0
        } else {
            4
        };
        c[i] += 1;
    }
    c
}

fn criterion_3() -> Outcome {
    let slots: Vec<String> = (0..5)
        .map(|i| format!(r#"{{"name":"d{}-s{i}","domain":"d{}","kind":"span","relevant_slots":[]}}"#, i % 2, i % 2))
        .collect();
    let schema = Schema::from_json(&format!(r#"{{"slots":[{}]}}"#, slots.join(","))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let turns = rng.gen_range(1..=10);
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for t in 0..turns {
            let mut p = DialogueState::empty(5);
            let mut g = DialogueState::empty(5);
            for s in 0..5 {
                g.set(s, random_value(&mut rng), t + 1);
                let v = if rng.gen_bool(0.5) { g.get(s).clone() } else { random_value(&mut rng) };
                p.set(s, v, t + 1);
            }
            preds.push(p);
            golds.push(g);
        }
        let jga = joint_goal_accuracy(&preds, &golds, &schema).unwrap();
        let right = preds.iter().zip(&golds).filter(|(p, g)| (0..5).all(|s| p.get(s) == g.get(s))).count();
        check(jga == right as f64 / turns as f64, format!("case {case}: JGA {jga} vs {right}/{turns}"))?;
        let report = slot_metrics(&preds, &golds, &schema).unwrap();
        for (s, r) in report.iter().enumerate() {
            let [tp, tn, fp, fn_, plfp] = recount(&preds, &golds, s);
            let c = r.counts;
            check(
                [c.tp, c.tn, c.fp, c.fn_, c.plfp] == [tp, tn, fp, fn_, plfp],
                format!("case {case} slot {s}: counts {c:?}"),
            )?;
            check(tp + tn + fp + fn_ + plfp == turns, format!("case {case} slot {s}: partition"))?;
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ + plfp == 0 { 0.0 } else { tp as f64 / (tp + fn_ + plfp) as f64 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            let accuracy = (tp + tn) as f64 / turns as f64;
            check(
                [r.precision, r.recall, r.f1, r.accuracy] == [precision, recall, f1, accuracy],
                format!("case {case} slot {s}: metrics {r:?}"),
            )?;
        }
    }
    Ok("1000 tables, zero mismatches".into())
}

/// Expected pool by direct enumeration: every qualifying source slot, then
/// the four most recently updated, in source order.
fn expected_pool(slot: usize, prev: &DialogueState, schema: &Schema, k: usize) -> Vec<(usize, String)> {
    let mut sources = vec![slot];
    let mut rel = schema.relevant(slot).to_vec();
    rel.sort();
    sources.extend(rel);
    let cands: Vec<(usize, usize, String)> = sources
        .into_iter()
        .enumerate()
        .filter_map(|(pos, s)| match prev.get(s) {
            SlotValue::Text(v) => Some((pos, s, v.clone())),
            _ => None,
        })
        .collect();
    let mut keep: Vec<usize> = (0..cands.len()).collect();
    keep.sort_by_key(|&i| (std::cmp::Reverse(prev.last_updated(cands[i].1)), cands[i].0));
    keep.truncate(k);
    keep.sort();
    keep.into_iter().map(|i| (cands[i].1, cands[i].2.clone())).collect()
}

fn criterion_4() -> Outcome {
    let schema = parse_schema(data("mini_schema.json")).map_err(|e| e.to_string())?;
    let n_slots = schema.len();
    let vocab = Vocab::build(&schema, &[]);
    let vectors = Array2::from_shape_fn((vocab.len(), 4), |(i, j)| 1.0 + (i * 4 + j) as f64);
    let table = EmbeddingTable { vocab: &vocab, vectors: &vectors, frozen: true };
    let values = ["none", "dontcare", "monday", "cheap", "3", "centre"];
    let state = prop::collection::vec((0..values.len(), 1usize..12), n_slots);
    let case = (state, 0..n_slots, prop::collection::vec(1usize..20, 0..9), any::<Option<usize>>());
    let mut runner = TestRunner::new(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() });
    runner
        .run(&case, |(assign, slot, turns, index)| {
            // states are built turn by turn so last_updated is genuine
            let mut prev = DialogueState::empty(n_slots);
            let mut order: Vec<usize> = (0..n_slots).collect();
            order.sort_by_key(|&s| assign[s].1);
            for s in order {
                prev.set(s, SlotValue::parse(values[assign[s].0]), assign[s].1);
            }
            let pool = build_msp(slot, &prev, &schema, 4, &table, PoolMode::Full).unwrap();
            prop_assert_eq!(pool.entries.len(), 4);
            prop_assert_eq!(pool.mask.len(), 4);
            let expected = expected_pool(slot, &prev, &schema, 4);
            prop_assert_eq!(pool.real_count(), expected.len());
            for (i, e) in pool.entries.iter().enumerate() {
                prop_assert_eq!(pool.mask[i], i < expected.len());
                if i < expected.len() {
                    prop_assert_eq!(e.source_slot, Some(expected[i].0));
                    prop_assert_eq!(&e.value, &expected[i].1);
                    prop_assert!(SlotValue::parse(&e.value) != SlotValue::None);
                    prop_assert!(SlotValue::parse(&e.value) != SlotValue::DontCare);
                } else {
                    prop_assert!(e.representation.iter().all(|&x| x == 0.0));
                }
            }

            // more candidates than capacity: the latest four survive in order
            let cands: Vec<PoolCandidate> = turns
                .iter()
                .enumerate()
                .map(|(i, &t)| PoolCandidate { source_slot: i, value: format!("v{i}"), updated_turn: t })
                .collect();
            let kept = select_latest(&cands, 4);
            let mut ranked: Vec<usize> = (0..cands.len()).collect();
            ranked.sort_by_key(|&i| (std::cmp::Reverse(turns[i]), i));
            ranked.truncate(4);
            ranked.sort();
            prop_assert_eq!(kept.iter().map(|c| c.source_slot).collect::<Vec<_>>(), ranked);

            let mut d = SlotDecision::of_type(HitType::Mentioned);
            d.mention_index = index.map(|i| i % 4);
            prop_assert_eq!(update_slot(&d, &[]), SlotValue::None);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 cases, zero violations".into())
}

fn desk_generator(dialogues: usize) -> GeneratorConfig {
    GeneratorConfig {
        dialogues,
        correction_rate: 0.2,
        indirect_rate: 0.3,
        distractor_rate: 0.3,
        ..GeneratorConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let schema = desk_schema();
    let corpus = generate_corpus(&desk_generator(300), &schema, 5).map_err(|e| e.to_string())?;
    let all: Vec<Dialogue> = corpus.train.iter().chain(&corpus.dev).chain(&corpus.test).cloned().collect();
    let vocab = Vocab::build(&schema, &all);
    let oracle = OracleHeads { schema: &schema, vocab: &vocab, strategy: UpdateStrategy::Msp, categorical_heads: true };
    let config = TrackerConfig::new(UpdateStrategy::Msp, 512);
    let ev = evaluate(&oracle, &all, &schema, &config, &corpus.events).map_err(|e| e.to_string())?;
    check(ev.report.jga == 1.0, format!("oracle JGA {}", ev.report.jga))?;
    Ok(format!("{} dialogues, {} turns, JGA {}", all.len(), ev.report.turns, ev.report.jga))
}

/// Desk-scale encoder and training budget used for the strategy comparison.
fn desk_model(strategy: UpdateStrategy) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig { dim: 32, layers: 1, heads: 2, ffn_dim: 64, max_len: 64, sinusoidal_positions: false },
        strategy,
        freeze_embeddings: false,
        slot_aware_entries: true,
        ..ModelConfig::default()
    }
}

fn desk_training(strategy: UpdateStrategy, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        epochs: 25,
        patience: 25,
        seed,
        pool_noise: if strategy == UpdateStrategy::Msp { 0.2 } else { 0.0 },
        ..TrainConfig::default()
    }
}

struct RunResult {
    strategy: UpdateStrategy,
    clean: MetricsReport,
    noisy: MetricsReport,
}

/// Train every compared strategy on three seeds and score the test split
/// with and without forced extraction errors.
fn strategy_runs() -> Result<(Vec<RunResult>, Duration), String> {
    let start = Instant::now();
    let schema = desk_schema();
    let corpus = generate_corpus(&desk_generator(2000), &schema, 1).map_err(|e| e.to_string())?;
    let noise = NoiseConfig::from_corpus(&schema, &corpus.train, 99, 3);
    let mut runs = Vec::new();
    for strategy in [UpdateStrategy::Msp, UpdateStrategy::ChangedState, UpdateStrategy::PureContext] {
        for seed in 0..3 {
            let out = train(&desk_training(strategy, seed), desk_model(strategy), &schema, &corpus.train, &corpus.dev)
                .map_err(|e| e.to_string())?;
            let tc = tracker_config(&out.model.config);
            let clean = evaluate(&out.model, &corpus.test, &schema, &tc, &corpus.events).map_err(|e| e.to_string())?;
            let noisy_cfg = TrackerConfig { noise: Some(noise.clone()), ..tc };
            let noisy = evaluate(&out.model, &corpus.test, &schema, &noisy_cfg, &corpus.events).map_err(|e| e.to_string())?;
            println!(
                "    {strategy} seed {seed}: best epoch {}, test JGA {:.4}, indirect {}/{}, forced-noise revisions {}",
                out.best_epoch,
                clean.report.jga,
                clean.report.inherit.indirect_tracked,
                clean.report.inherit.indirect_total,
                noisy.report.inherit.revision_success
            );
            runs.push(RunResult { strategy, clean: clean.report, noisy: noisy.report });
        }
    }
    Ok((runs, start.elapsed()))
}

fn medians(runs: &[RunResult], f: impl Fn(&RunResult) -> f64) -> BTreeMap<UpdateStrategy, f64> {
    let mut by: BTreeMap<UpdateStrategy, Vec<f64>> = BTreeMap::new();
    for r in runs {
        by.entry(r.strategy).or_default().push(f(r));
    }
    by.into_iter().map(|(k, v)| (k, median(&v).unwrap())).collect()
}

fn criterion_6(runs: &[RunResult], elapsed: Duration) -> Outcome {
    let m = medians(runs, |r| r.clean.jga);
    let (msp, changed, pure) = (m[&UpdateStrategy::Msp], m[&UpdateStrategy::ChangedState], m[&UpdateStrategy::PureContext]);
    let summary = format!(
        "median JGA msp {:.2}, changed_state {:.2}, pure_context {:.2}; {:.0}s",
        100.0 * msp,
        100.0 * changed,
        100.0 * pure,
        elapsed.as_secs_f64()
    );
    check(msp >= changed && changed >= pure, format!("ordering violated: {summary}"))?;
    check(msp - pure >= 0.02, format!("gap below 2 points: {summary}"))?;
    check(elapsed < Duration::from_secs(30 * 60), format!("over 30 minutes: {summary}"))?;
    Ok(summary)
}

fn criterion_7(runs: &[RunResult]) -> Outcome {
    let m = medians(runs, |r| {
        let i = &r.clean.inherit;
        i.indirect_tracked as f64 / i.indirect_total.max(1) as f64
    });
    let rate = m[&UpdateStrategy::Msp];
    let total = runs.iter().find(|r| r.strategy == UpdateStrategy::Msp).map_or(0, |r| r.clean.inherit.indirect_total);
    check(total > 0, "no indirect events in the test split")?;
    let summary = format!("median {:.1}% of {total} indirect events tracked", 100.0 * rate);
    check(rate >= 0.9, summary.clone())?;
    Ok(summary)
}

fn criterion_8(runs: &[RunResult]) -> Outcome {
    let m = medians(runs, |r| r.noisy.inherit.revision_success as f64);
    let (msp, changed) = (m[&UpdateStrategy::Msp], m[&UpdateStrategy::ChangedState]);
    let summary = format!("median revisions msp {msp}, changed_state {changed}");
    check(msp >= 1.05 * changed, summary.clone())?;
    Ok(format!("{summary} (+{:.1}%)", 100.0 * (msp / changed - 1.0)))
}

fn read_dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let schema = desk_schema();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gen = desk_generator(120);
    let mut snapshots = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let corpus = generate_corpus(&gen, &schema, 42).map_err(|e| e.to_string())?;
        write_corpus(out.join("corpus"), &corpus, &schema, &gen, 42).map_err(|e| e.to_string())?;
        let strategy = UpdateStrategy::Msp;
        let mc = ModelConfig {
            encoder: EncoderConfig { dim: 16, layers: 1, heads: 2, ffn_dim: 32, max_len: 64, sinusoidal_positions: false },
            ..desk_model(strategy)
        };
        let tc = TrainConfig { epochs: 2, ..desk_training(strategy, 7) };
        let trained = train(&tc, mc, &schema, &corpus.train, &corpus.dev).map_err(|e| e.to_string())?;
        write_history(&trained.history, out.join("history.jsonl")).map_err(|e| e.to_string())?;
        let ev = evaluate(&trained.model, &corpus.test, &schema, &tracker_config(&trained.model.config), &corpus.events)
            .map_err(|e| e.to_string())?;
        std::fs::write(out.join("report.json"), serde_json::to_vec_pretty(&ev.report).unwrap()).unwrap();
        let mut files = read_dir_bytes(&out.join("corpus"));
        files.extend(read_dir_bytes(&out));
        snapshots.push(files);
    }
    check(snapshots[0].len() == 8, format!("expected 8 files, found {}", snapshots[0].len()))?;
    for (name, bytes) in &snapshots[0] {
        check(snapshots[1].get(name) == Some(bytes), format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", snapshots[0].len()))
}

fn criterion_10() -> Outcome {
    let schema = parse_schema(data("mini_schema.json")).map_err(|e| e.to_string())?;
    check(schema.len() == 30, format!("{} slots", schema.len()))?;
    check(schema.domains() == ["attraction", "hotel", "restaurant", "taxi", "train"], "domains")?;
    let relevant: BTreeMap<&str, Vec<&str>> = [
        ("attraction-area", vec!["hotel-area", "restaurant-area"]),
        ("hotel-area", vec!["attraction-area", "restaurant-area"]),
        ("hotel-book day", vec!["restaurant-book day", "train-day"]),
        ("hotel-book people", vec!["restaurant-book people", "train-book people"]),
        ("hotel-pricerange", vec!["restaurant-pricerange"]),
        ("restaurant-area", vec!["attraction-area", "hotel-area"]),
        ("restaurant-book day", vec!["hotel-book day", "train-day"]),
        ("restaurant-book people", vec!["hotel-book people", "train-book people"]),
        ("restaurant-book time", vec!["taxi-arriveby"]),
        ("restaurant-pricerange", vec!["hotel-pricerange"]),
        ("taxi-arriveby", vec!["restaurant-book time", "train-leaveat"]),
        ("taxi-departure", vec!["hotel-name", "restaurant-name", "attraction-name"]),
        ("taxi-destination", vec!["hotel-name", "restaurant-name", "attraction-name"]),
        ("taxi-leaveat", vec!["train-arriveby"]),
        ("train-arriveby", vec!["restaurant-book time"]),
        ("train-book people", vec!["hotel-book people", "restaurant-book people"]),
        ("train-day", vec!["hotel-book day", "restaurant-book day"]),
    ]
    .into_iter()
    .collect();
    for slot in schema.slots() {
        let want = relevant.get(slot.name.as_str()).cloned().unwrap_or_default();
        check(slot.relevant_slots == want, format!("relevant slots of {}: {:?}", slot.name, slot.relevant_slots))?;
    }

    let dialogues = parse_dialogues(data("mini_dialogues.jsonl"), &schema).map_err(|e| e.to_string())?;
    check(dialogues.len() == 3, format!("{} dialogues", dialogues.len()))?;
    let train = [
        ("train-destination", "cambridge"),
        ("train-day", "tuesday"),
        ("train-departure", "london kings cross"),
        ("train-leaveat", "09:15"),
        ("train-book people", "3"),
        ("hotel-pricerange", "cheap"),
        ("hotel-area", "centre"),
        ("hotel-book day", "tuesday"),
        ("hotel-book people", "3"),
        ("hotel-book stay", "2"),
        ("hotel-name", "alexander"),
    ];
    let restaurant = [
        ("restaurant-food", "italian"),
        ("restaurant-pricerange", "dontcare"),
        ("restaurant-name", "pizza hut city centre"),
        ("restaurant-area", "center"),
        ("restaurant-book people", "4"),
        ("restaurant-book time", "18:30"),
        ("restaurant-book day", "friday"),
    ];
    let museum = [
        ("attraction-type", "museum"),
        ("attraction-name", "fitzwilliam museum"),
        ("taxi-destination", "fitzwilliam museum"),
        ("taxi-arriveby", "14:00"),
    ];
    let prefix = |pairs: &[(&str, &str)], n: usize| -> BTreeMap<String, String> {
        pairs[..n].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    };
    let mut corrected = prefix(&restaurant, 7);
    corrected.insert("restaurant-book people".into(), "5".into());
    let expected: Vec<Vec<BTreeMap<String, String>>> = vec![
        vec![prefix(&train, 2), prefix(&train, 4), prefix(&train, 8), prefix(&train, 11)],
        vec![prefix(&restaurant, 2), prefix(&restaurant, 7), corrected],
        vec![prefix(&museum, 1), prefix(&museum, 4), prefix(&museum, 4)],
    ];
    for (d, want) in dialogues.iter().zip(&expected) {
        check(d.turns.len() == want.len(), format!("{}: {} turns", d.id, d.turns.len()))?;
        for (t, (turn, w)) in d.turns.iter().zip(want).enumerate() {
            let got = turn.gold_state.to_map(&schema);
            check(&got == w, format!("{} turn {}: {got:?}", d.id, t + 1))?;
        }
    }
    let people = schema.slot_id("restaurant-book people").unwrap();
    let day = schema.slot_id("restaurant-book day").unwrap();
    let last = &dialogues[1].turns[2].gold_state;
    check(last.last_updated(people) == Some(3) && last.last_updated(day) == Some(2), "restaurant last_updated")?;
    let pricerange = schema.slot_id("restaurant-pricerange").unwrap();
    check(*last.get(pricerange) == SlotValue::DontCare, "dontcare parsed")?;
    let museum_end = &dialogues[2].turns[2].gold_state;
    let taxi_dest = schema.slot_id("taxi-destination").unwrap();
    check(museum_end.last_updated(taxi_dest) == Some(2), "unchanged turn keeps last_updated")?;
    Ok("30 slots, 17 relevant-slot entries, 10 turns across 3 dialogues match".into())
}

fn report(n: usize, name: &str, outcome: std::thread::Result<Outcome>, failures: &mut usize) {
    let line = match outcome {
        Ok(Ok(detail)) => format!("criterion {n:>2} PASS  {name}: {detail}"),
        Ok(Err(detail)) => {
            *failures += 1;
            format!("criterion {n:>2} FAIL  {name}: {detail}")
        }
        Err(_) => {
            *failures += 1;
            format!("criterion {n:>2} FAIL  {name}: panicked")
        }
    };
    println!("{line}");
}

/// Criteria named by numeric arguments, or all of them.
fn selected() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=10).collect()
    } else {
        picked
    }
}

fn main() {
    let wanted = selected();
    let mut failures = 0;
    let quick: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "gradient check", criterion_1),
        (2, "analytic loss values", criterion_2),
        (3, "metric oracle equivalence", criterion_3),
        (4, "pool rules", criterion_4),
        (5, "oracle end-to-end", criterion_5),
    ];
    for (n, name, f) in quick {
        if wanted.contains(&n) {
            report(n, name, catch_unwind(f), &mut failures);
        }
    }
    let trained = [(6, "strategy ordering"), (7, "indirect mentions"), (8, "revision under forced noise")];
    if trained.iter().any(|(n, _)| wanted.contains(n)) {
        match catch_unwind(strategy_runs) {
            Ok(Ok((runs, elapsed))) => {
                report(6, trained[0].1, catch_unwind(AssertUnwindSafe(|| criterion_6(&runs, elapsed))), &mut failures);
                report(7, trained[1].1, catch_unwind(AssertUnwindSafe(|| criterion_7(&runs))), &mut failures);
                report(8, trained[2].1, catch_unwind(AssertUnwindSafe(|| criterion_8(&runs))), &mut failures);
            }
            other => {
                let detail = match other {
                    Ok(Err(e)) => e,
                    _ => "panicked".into(),
                };
                for (n, name) in trained {
                    report(n, name, Ok(Err(format!("training failed: {detail}"))), &mut failures);
                }
            }
        }
    }
    if wanted.contains(&9) {
        report(9, "determinism", catch_unwind(criterion_9), &mut failures);
    }
    if wanted.contains(&10) {
        report(10, "ingestion fixture", catch_unwind(criterion_10), &mut failures);
    }
    if failures > 0 {
        println!("{failures} of {} criteria failed", wanted.len());
        std::process::exit(1);
    }
    println!("{} criteria passed", wanted.len());
}
