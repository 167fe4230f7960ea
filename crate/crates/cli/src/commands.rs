use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use grouping::GroupBy;
use stilts_core::datakit::{write_tsv, Dataset, SynthConfig};
use stilts_core::encoder::Head;
use stilts_core::harness::{
    epsilon_sensitivity, grid_from_records, materialize, pretrain_corpus, run_restarts_with,
    stability_export, Experiment, RunRecord, EPSILON_SWEEP,
};
use stilts_core::pipeline::{lm_corpus, pretrain_lm, RegimeOutcome, RegimePlan};
use stilts_core::selfcheck::{
    max_encoder_error, metric_oracle_check, op_grad_checks, ENCODER_TOLERANCE, METRIC_TOLERANCE,
    OP_TOLERANCE,
};
use stilts_core::store::{
    append_result, read_results, save_checkpoint, single_manifest, Checkpoint, Manifest,
    Provenance, TaskSource,
};
use stilts_core::{Error, Result};

use crate::{Cli, Command, EXIT_RUNTIME};

pub const THREADS_ENV: &str = "STILTS_LAB_THREADS";
pub const RESULTS_FILE: &str = "results.jsonl";

/// Flag values as manifest overrides, followed by every `--set`.
fn overrides(cli: &Cli) -> Vec<String> {
    let mut o = Vec::new();
    if let Some(r) = cli.restarts {
        o.push(format!("restarts={r}"));
    }
    if let Some(c) = &cli.cap {
        o.push(if c == "full" {
            "cap=null".to_owned()
        } else {
            format!("cap={c}")
        });
    }
    if let Some(s) = cli.seed {
        o.push(format!("seed={s}"));
    }
    if let Some(w) = cli.workers {
        o.push(format!("workers={w}"));
    }
    if let Some(d) = &cli.out {
        o.push(format!(
            "out={}",
            serde_json::Value::String(d.display().to_string())
        ));
    }
    o.extend(cli.set.iter().cloned());
    o
}

fn load_manifest(cli: &Cli) -> Result<Manifest> {
    let o = overrides(cli);
    if let Some(c) = &cli.cap {
        if c != "full" && c.parse::<usize>().is_err() {
            return Err(Error::Config(format!(
                "--cap takes a count or `full`, got {c:?}"
            )));
        }
    }
    match &cli.manifest {
        Some(p) => Manifest::load(p, &o),
        None => Manifest::desk().with_overrides(&o),
    }
}

fn workers(m: &Manifest) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Config(format!("{THREADS_ENV}={v:?} is not a positive count"))
            })?;
            Ok(m.workers.min(cap))
        }
        Err(_) => Ok(m.workers),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_owned(),
        source: e,
    })
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::Io {
        path: p.to_owned(),
        source: e,
    })
}

/// Creates the output directory and stores the effective manifest there.
fn prepare_out(m: &Manifest) -> Result<PathBuf> {
    mkdir(&m.out)?;
    write(&m.out.join("manifest.json"), &(m.to_json_pretty() + "\n"))?;
    Ok(m.out.clone())
}

pub fn dispatch(cli: &Cli) -> Result<u8> {
    if let Command::Check = cli.command {
        return check();
    }
    let m = load_manifest(cli)?;
    match &cli.command {
        Command::GenFake => gen_tasks(&m, true),
        Command::GenSynth => gen_tasks(&m, false),
        Command::BuildVocab => build_vocab(&m),
        Command::Pretrain => pretrain(&m),
        Command::Run { plan } => run(&m, *plan),
        Command::Sweep { plan, checkpoints } => sweep(&m, Some(*plan), *checkpoints),
        Command::Grid { checkpoints } => sweep(&m, None, *checkpoints),
        Command::Report { results } => report(&m, results.as_deref()),
        Command::Check => unreachable!("handled above"),
    }
}

fn gen_tasks(m: &Manifest, fake: bool) -> Result<u8> {
    let mut sources: Vec<TaskSource> = m
        .tasks
        .iter()
        .filter(|s| {
            matches!(
                (s, fake),
                (TaskSource::Fake { .. }, true) | (TaskSource::Synth { .. }, false)
            )
        })
        .cloned()
        .collect();
    if sources.is_empty() {
        sources.push(if fake {
            TaskSource::Fake {
                name: "real_fake".into(),
                corpus_sentences: 2000,
                corpus_seed: 0,
                train: 2000,
                dev: 400,
                seed: 0,
            }
        } else {
            TaskSource::Synth {
                grammar_seed: 7,
                config: SynthConfig::default(),
            }
        });
    }
    let out = prepare_out(m)?;
    for s in &sources {
        for d in materialize(s)? {
            write_dataset(&out, &d)?;
        }
    }
    Ok(0)
}

fn write_dataset(out: &Path, d: &Dataset) -> Result<()> {
    let dir = out.join("data").join(&d.task.name);
    mkdir(&dir)?;
    write_tsv(&dir.join("train.tsv"), &d.train, d.task.arity)?;
    write_tsv(&dir.join("dev.tsv"), &d.dev, d.task.arity)?;
    println!(
        "{}: {} train, {} dev -> {}",
        d.task.name,
        d.train.len(),
        d.dev.len(),
        dir.display()
    );
    Ok(())
}

fn build_vocab(m: &Manifest) -> Result<u8> {
    let (_, vocab, _) = Experiment::data(m)?;
    let out = prepare_out(m)?;
    let path = out.join("vocab.txt");
    vocab.save(&path)?;
    println!("{} tokens -> {}", vocab.len(), path.display());
    Ok(0)
}

fn pretrain(m: &Manifest) -> Result<u8> {
    let (datasets, vocab, config) = Experiment::data(m)?;
    let sentences = pretrain_corpus(&datasets, m.pretrain.sentences);
    let corpus = lm_corpus(&vocab, &config, &sentences);
    let (params, outcome) = pretrain_lm(&config, &corpus, &m.pretrain.phase)?;
    let out = prepare_out(m)?;
    let path = out.join("pretrained.stlt");
    save_checkpoint(
        &Checkpoint {
            config,
            params,
            head: None,
            provenance: Provenance {
                phases: vec!["pretrain".into()],
                seeds: vec![m.pretrain.phase.seed],
                manifest_hash: m.hash(),
            },
        },
        &path,
    )?;
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {}: lm loss {l:.4}", i + 1);
    }
    println!(
        "{} sentences, {} steps -> {}",
        corpus.len(),
        outcome.steps,
        path.display()
    );
    Ok(0)
}

fn checkpoint_of(exp: &Experiment, record: &RunRecord, outcome: &RegimeOutcome) -> Checkpoint {
    let mut phases = vec!["pretrain".to_owned()];
    phases.extend(outcome.phases.iter().map(|p| p.name.clone()));
    Checkpoint {
        config: exp.config.clone(),
        params: outcome.params.clone(),
        head: Some(Head::clone(&outcome.head)),
        provenance: Provenance {
            phases,
            seeds: vec![exp.manifest.pretrain.phase.seed, record.seed],
            manifest_hash: exp.hash.clone(),
        },
    }
}

fn store_record(out: &Path, r: &RunRecord) -> Result<()> {
    let runs = out.join("runs");
    mkdir(&runs)?;
    write(
        &runs.join(format!("{}.json", r.file_stem())),
        &(serde_json::to_string_pretty(r)? + "\n"),
    )?;
    append_result(r, &out.join(RESULTS_FILE))
}

fn fmt_scores(s: &[f64]) -> String {
    s.iter()
        .map(|v| format!("{v:.2}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn plan_at(plans: &[RegimePlan], i: usize) -> Result<&RegimePlan> {
    plans.get(i).ok_or_else(|| {
        Error::Config(format!(
            "plan {i} does not exist; the manifest has {}",
            plans.len()
        ))
    })
}

fn run(m: &Manifest, plan: usize) -> Result<u8> {
    let exp = Experiment::prepare(m.clone())?;
    let plans = exp.plans()?;
    let plan = plan_at(&plans, plan)?;
    let out = prepare_out(m)?;
    let ckpt_dir = out.join("checkpoints");
    mkdir(&ckpt_dir)?;
    let save = |r: &RunRecord, o: Option<&RegimeOutcome>| -> Result<()> {
        match o {
            Some(o) => save_checkpoint(
                &checkpoint_of(&exp, r, o),
                &ckpt_dir.join(format!("{}.stlt", r.file_stem())),
            ),
            None => Ok(()),
        }
    };
    let s = run_restarts_with(&exp.ctx(), plan, 1, m.seed, &exp.restart_options(1), &save)?;
    let r = &s.records[0];
    store_record(&out, r)?;
    match &r.aborted {
        Some(why) => println!("{} seed {}: aborted ({why})", plan.label(), r.seed),
        None => println!(
            "{} seed {}: {} (trained on {})",
            plan.label(),
            r.seed,
            fmt_scores(&r.scores),
            r.train_size
        ),
    }
    Ok(0)
}

/// `sweep` when `only` names a plan, `grid` otherwise.
fn sweep(m: &Manifest, only: Option<usize>, checkpoints: bool) -> Result<u8> {
    let exp = Experiment::prepare(m.clone())?;
    let all = exp.plans()?;
    let plans: Vec<&RegimePlan> = match only {
        Some(i) => vec![plan_at(&all, i)?],
        None => all.iter().collect(),
    };
    let out = prepare_out(m)?;
    let ckpt_dir = out.join("checkpoints");
    if checkpoints {
        mkdir(&ckpt_dir)?;
    }
    let opts = exp.restart_options(workers(m)?);
    let mut records = Vec::new();
    let mut text = String::new();
    for plan in plans {
        let save = |r: &RunRecord, o: Option<&RegimeOutcome>| -> Result<()> {
            match (checkpoints, o) {
                (true, Some(o)) => save_checkpoint(
                    &checkpoint_of(&exp, r, o),
                    &ckpt_dir.join(format!("{}.stlt", r.file_stem())),
                ),
                _ => Ok(()),
            }
        };
        let s = run_restarts_with(&exp.ctx(), plan, m.restarts, m.seed, &opts, &save)?;
        for r in &s.records {
            store_record(&out, r)?;
        }
        let _ = writeln!(text, "{}", summary_line(&plan.label(), &s.records));
        records.extend(s.records);
    }
    if only.is_none() {
        let grid = grid_from_records(&records)?;
        text.push('\n');
        text.push_str(&grid.render());
        write(&out.join("grid.csv"), &grid.csv()?)?;
    }
    write(&out.join("stability.csv"), &stability_export(&records)?)?;
    print!("{text}");
    Ok(0)
}

/// `label: mean 61.20 std 3.10 min .. max .. best seed 4, degenerate 2 (eps 1/2/5: 1/2/3)`
fn summary_line(label: &str, records: &[RunRecord]) -> String {
    let scores: Vec<f64> = records.iter().map(RunRecord::primary).collect();
    let (mean, std) = stilts_core::harness::mean_std(&scores);
    let best = records
        .iter()
        .fold(None, |b: Option<&RunRecord>, r| match b {
            Some(b)
                if b.primary() > r.primary()
                    || (b.primary() == r.primary() && b.seed <= r.seed) =>
            {
                Some(b)
            }
            _ => Some(r),
        })
        .expect("at least one record");
    let chance = records[0].chance;
    let sens: Vec<String> = epsilon_sensitivity(&scores, chance)
        .iter()
        .map(|(_, n)| n.to_string())
        .collect();
    let eps: Vec<String> = EPSILON_SWEEP.iter().map(|e| format!("{e}")).collect();
    format!(
        "{label} [{} runs]: mean {mean:.2} std {std:.2} min {:.2} max {:.2} best seed {}; degenerate {} (eps {}: {})",
        records.len(),
        scores.iter().copied().fold(f64::INFINITY, f64::min),
        best.primary(),
        best.seed,
        records.iter().filter(|r| r.degenerate).count(),
        eps.join("/"),
        sens.join("/"),
    )
}

/// Later records replace earlier ones with the same plan, cap and seed.
fn dedupe(records: Vec<RunRecord>) -> Vec<RunRecord> {
    let key = |r: &RunRecord| {
        (
            r.regime,
            r.intermediate.clone(),
            r.target.clone(),
            r.cap,
            r.seed,
        )
    };
    let mut out: Vec<RunRecord> = Vec::with_capacity(records.len());
    for r in records {
        match out.iter().position(|o| key(o) == key(&r)) {
            Some(i) => out[i] = r,
            None => out.push(r),
        }
    }
    out
}

fn report(m: &Manifest, results: Option<&Path>) -> Result<u8> {
    let path = results.map_or_else(|| m.out.join(RESULTS_FILE), Path::to_owned);
    let records = dedupe(read_results::<RunRecord>(&path)?);
    if records.is_empty() {
        return Err(Error::Data(format!("{} holds no results", path.display())));
    }
    single_manifest(records.iter().map(|r| r.manifest_hash.as_str()))?;
    let out = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_owned);

    let mut text = String::new();
    for (cap, group) in records.group_by_key(|r| r.cap_tag()) {
        let grid = grid_from_records(&group)?;
        let _ = writeln!(text, "cap {cap}");
        text.push_str(&grid.render());
        text.push('\n');
        write(&out.join(format!("report_{cap}.csv")), &grid.csv()?)?;
        for (plan, runs) in group.group_by_key(|r| (r.regime_tag(), r.target.clone())) {
            let _ = writeln!(
                text,
                "{}",
                summary_line(&format!("{}/{}", plan.1, plan.0), &runs)
            );
        }
        text.push('\n');
    }
    write(&out.join("report.txt"), &text)?;
    write(&out.join("stability.csv"), &stability_export(&records)?)?;
    print!("{text}");
    Ok(0)
}

fn check() -> Result<u8> {
    let enc = max_encoder_error(11)?;
    let ops = op_grad_checks(1)?;
    let (worst_op, op_err) = ops
        .iter()
        .map(|(n, r)| (*n, r.max_relative_error))
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let metrics = metric_oracle_check(100, 5)?;
    let ok = [
        enc < ENCODER_TOLERANCE,
        op_err < OP_TOLERANCE,
        metrics.max() < METRIC_TOLERANCE,
    ];
    let mark = |b: bool| if b { "ok" } else { "FAIL" };
    println!(
        "encoder grad check: max relative error {enc:.3e} (< {ENCODER_TOLERANCE:e}) {}",
        mark(ok[0])
    );
    println!(
        "op grad checks ({} ops): max relative error {op_err:.3e} in {worst_op} (< {OP_TOLERANCE:e}) {}",
        ops.len(),
        mark(ok[1])
    );
    println!(
        "metric oracles ({} cases): max difference {:.3e} (< {METRIC_TOLERANCE:e}) {}",
        metrics.cases,
        metrics.max(),
        mark(ok[2])
    );
    Ok(if ok.iter().all(|&b| b) {
        0
    } else {
        EXIT_RUNTIME
    })
}

mod grouping {
    /// Groups in first-seen order, keeping each group's element order.
    pub trait GroupBy<T: Clone> {
        fn group_by_key<K: PartialEq>(&self, key: impl Fn(&T) -> K) -> Vec<(K, Vec<T>)>;
    }

    impl<T: Clone> GroupBy<T> for [T] {
        fn group_by_key<K: PartialEq>(&self, key: impl Fn(&T) -> K) -> Vec<(K, Vec<T>)> {
            let mut groups: Vec<(K, Vec<T>)> = Vec::new();
            for x in self {
                let k = key(x);
                match groups.iter_mut().find(|(g, _)| *g == k) {
                    Some((_, v)) => v.push(x.clone()),
                    None => groups.push((k, vec![x.clone()])),
                }
            }
            groups
        }
    }
}
