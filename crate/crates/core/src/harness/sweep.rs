use std::time::Instant;

use rayon::prelude::*;

use super::{RunRecord, SweepSummary, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::pipeline::{run_regime, RegimeOutcome, RegimePlan, RunContext};

#[derive(Clone, Debug, PartialEq)]
pub struct RestartOptions {
    /// Runs executed concurrently.
    pub workers: usize,
    pub epsilon: f64,
    pub manifest_hash: String,
}

impl Default for RestartOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            epsilon: DEFAULT_EPSILON,
            manifest_hash: String::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub plan: RegimePlan,
    /// Sorted by seed.
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
}

impl Sweep {
    pub fn best(&self) -> &RunRecord {
        self.records
            .iter()
            .find(|r| r.seed == self.summary.best_seed)
            .expect("best seed is one of the records")
    }
}

pub fn run_restarts(
    ctx: &RunContext<'_>,
    plan: &RegimePlan,
    n: usize,
    seed_base: u64,
    opts: &RestartOptions,
) -> Result<Sweep> {
    run_restarts_with(ctx, plan, n, seed_base, opts, &|_, _| Ok(()))
}

/// Runs seeds `seed_base..seed_base + n`, up to `opts.workers` at a time.
/// `on_run` sees every record with its outcome (`None` for an aborted run)
/// as runs finish, in no particular order. Results do not depend on the
/// worker count.
pub fn run_restarts_with(
    ctx: &RunContext<'_>,
    plan: &RegimePlan,
    n: usize,
    seed_base: u64,
    opts: &RestartOptions,
    on_run: &(dyn Fn(&RunRecord, Option<&RegimeOutcome>) -> Result<()> + Sync),
) -> Result<Sweep> {
    if n == 0 {
        return Err(Error::Config("a sweep needs at least one restart".into()));
    }
    plan.validate()?;
    let target = ctx.dataset(&plan.target.name)?;
    let chance = target.task.primary_chance();
    let cap = plan.target_phase.train_cap;

    let one = |seed: u64| -> Result<RunRecord> {
        let t = Instant::now();
        let (outcome, aborted) = match run_regime(ctx, plan, seed) {
            Ok(o) => (Some(o), None),
            Err(e @ Error::NonFinite(_)) => {
                log::warn!("{} seed {seed} aborted: {e}", plan.label());
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        let (scores, train_size) = match &outcome {
            Some(o) => (o.scores.clone(), o.target_train_size),
            None => (
                target.task.chance_scores.clone(),
                cap.map_or(target.train.len(), |c| c.min(target.train.len())),
            ),
        };
        let primary = scores[0];
        let record = RunRecord {
            regime: plan.regime,
            intermediate: plan.intermediate.as_ref().map(|t| t.name.clone()),
            target: plan.target.name.clone(),
            seed,
            cap,
            train_size,
            chance,
            degenerate: aborted.is_some() || (primary - chance).abs() <= opts.epsilon,
            scores,
            aborted,
            wall_seconds: t.elapsed().as_secs_f64(),
            manifest_hash: opts.manifest_hash.clone(),
        };
        on_run(&record, outcome.as_ref())?;
        Ok(record)
    };

    let seeds: Vec<u64> = (0..n as u64).map(|i| seed_base + i).collect();
    let records: Result<Vec<RunRecord>> = if opts.workers <= 1 {
        seeds.iter().map(|&s| one(s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| one(s)).collect())
    };
    let mut records = records?;
    records.sort_by_key(|r| r.seed);
    let pairs: Vec<(u64, f64)> = records.iter().map(|r| (r.seed, r.primary())).collect();
    let summary = SweepSummary::from_scores(&pairs, chance, opts.epsilon)?;
    Ok(Sweep {
        plan: plan.clone(),
        records,
        summary,
    })
}
