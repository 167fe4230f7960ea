use serde::{Deserialize, Serialize};

use super::phase::{
    capped_train, dev_set, head_seed, run_phase_on, task_source, train, PhaseOutcome, Work,
};
use super::PhaseConfig;
use crate::datakit::{Dataset, TaskSpec, Vocab};
use crate::encoder::{EncoderConfig, EncoderParams, Head};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Target fine-tuning only.
    Baseline,
    /// Intermediate task, then the target task.
    Stilts,
    /// One phase on both tasks at once.
    Multitask,
    /// The multitask phase followed by a target-only phase.
    MultitaskThenTarget,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Baseline,
        Regime::Stilts,
        Regime::Multitask,
        Regime::MultitaskThenTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Stilts => "stilts",
            Regime::Multitask => "multitask",
            Regime::MultitaskThenTarget => "multitask_then_target",
        }
    }

    pub fn needs_intermediate(self) -> bool {
        self != Regime::Baseline
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimePlan {
    pub regime: Regime,
    #[serde(default)]
    pub intermediate: Option<TaskSpec>,
    pub target: TaskSpec,
    /// Used by the intermediate phase and by the joint multitask phase.
    #[serde(default)]
    pub intermediate_phase: PhaseConfig,
    #[serde(default)]
    pub target_phase: PhaseConfig,
}

impl RegimePlan {
    pub fn baseline(target: TaskSpec, target_phase: PhaseConfig) -> Self {
        Self {
            regime: Regime::Baseline,
            intermediate: None,
            target,
            intermediate_phase: PhaseConfig::default(),
            target_phase,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.intermediate, self.regime.needs_intermediate()) {
            (None, true) => {
                return Err(Error::Config(format!(
                    "regime {} needs an intermediate task",
                    self.regime
                )));
            }
            (Some(t), false) => {
                return Err(Error::Config(format!(
                    "regime {} takes no intermediate task, got {}",
                    self.regime, t.name
                )));
            }
            _ => {}
        }
        if let Some(int) = &self.intermediate {
            if int.name == self.target.name {
                return Err(Error::Config(format!(
                    "intermediate and target are both {}; report the baseline result for this cell instead",
                    int.name
                )));
            }
        }
        self.target.validate()?;
        self.intermediate_phase.validate()?;
        self.target_phase.validate()
    }

    /// Row label such as `a->b`, `{a, b}` or `{a, b}->b`.
    pub fn label(&self) -> String {
        let t = &self.target.name;
        let i = self
            .intermediate
            .as_ref()
            .map(|x| x.name.as_str())
            .unwrap_or("");
        match self.regime {
            Regime::Baseline => t.clone(),
            Regime::Stilts => format!("{i}->{t}"),
            Regime::Multitask => format!("{{{i}, {t}}}"),
            Regime::MultitaskThenTarget => format!("{{{i}, {t}}}->{t}"),
        }
    }
}

/// Everything a regime run reads but never modifies.
#[derive(Clone, Copy, Debug)]
pub struct RunContext<'a> {
    pub config: &'a EncoderConfig,
    pub vocab: &'a Vocab,
    pub pretrained: &'a EncoderParams,
    pub datasets: &'a [Dataset],
}

impl<'a> RunContext<'a> {
    pub fn dataset(&self, name: &str) -> Result<&'a Dataset> {
        self.datasets
            .iter()
            .find(|d| d.task.name == name)
            .ok_or_else(|| Error::Config(format!("no dataset loaded for task {name}")))
    }
}

#[derive(Clone, Debug)]
pub struct RegimeOutcome {
    pub regime: Regime,
    pub seed: u64,
    /// Final target dev scores, one per target metric.
    pub scores: Vec<f64>,
    /// Target examples trained on after any cap.
    pub target_train_size: usize,
    pub phases: Vec<PhaseOutcome>,
    pub params: EncoderParams,
    pub head: Head,
}

fn final_scores(outcome: &PhaseOutcome) -> Result<Vec<f64>> {
    outcome.dev_trace.last().cloned().ok_or_else(|| {
        Error::Config(format!(
            "{}: the target phase needs at least one epoch",
            outcome.name
        ))
    })
}

/// Seed of the target-task subsample for restart `seed`, shared by every regime.
pub fn target_subsample_seed(seed: u64) -> u64 {
    derive_seed(seed, tags::SUBSAMPLE)
}

fn with_seed(phase: &PhaseConfig, seed: u64) -> PhaseConfig {
    PhaseConfig {
        seed,
        ..phase.clone()
    }
}

/// Runs one regime for restart `seed`. Phase seeds are derived from `seed`
/// and the phase role, so the target phase is seeded identically across
/// regimes; the `seed` fields inside the plan's phase configs are ignored.
pub fn run_regime(ctx: &RunContext<'_>, plan: &RegimePlan, seed: u64) -> Result<RegimeOutcome> {
    plan.validate()?;
    match plan.regime {
        Regime::Baseline => {
            let target = ctx.dataset(&plan.target.name)?;
            let phase = with_seed(&plan.target_phase, derive_seed(seed, tags::TARGET_PHASE));
            let r = run_phase_on(
                ctx.pretrained,
                ctx.config,
                ctx.vocab,
                target,
                &phase,
                target_subsample_seed(seed),
            )?;
            Ok(RegimeOutcome {
                regime: plan.regime,
                seed,
                scores: final_scores(&r.outcome)?,
                target_train_size: r.outcome.train_sizes[0],
                phases: vec![r.outcome],
                params: r.params,
                head: r.head,
            })
        }
        Regime::Stilts => {
            let int = plan.intermediate.as_ref().expect("validated");
            run_stilts(
                ctx,
                &int.name,
                &plan.target.name,
                &plan.intermediate_phase,
                &plan.target_phase,
                seed,
            )
        }
        Regime::Multitask | Regime::MultitaskThenTarget => run_multitask(ctx, plan, seed),
    }
}

/// Intermediate phase (own head, discarded), then target phase with a new head.
pub fn run_stilts(
    ctx: &RunContext<'_>,
    intermediate: &str,
    target: &str,
    intermediate_phase: &PhaseConfig,
    target_phase: &PhaseConfig,
    seed: u64,
) -> Result<RegimeOutcome> {
    if intermediate == target {
        return Err(Error::Config(format!(
            "intermediate and target are both {target}; report the baseline result for this cell instead"
        )));
    }
    let int_ds = ctx.dataset(intermediate)?;
    let tgt_ds = ctx.dataset(target)?;
    let p2 = with_seed(
        intermediate_phase,
        derive_seed(seed, tags::INTERMEDIATE_PHASE),
    );
    let mid = run_phase_on(
        ctx.pretrained,
        ctx.config,
        ctx.vocab,
        int_ds,
        &p2,
        derive_seed(target_subsample_seed(seed), 1),
    )?;
    let p3 = with_seed(target_phase, derive_seed(seed, tags::TARGET_PHASE));
    let last = run_phase_on(
        &mid.params,
        ctx.config,
        ctx.vocab,
        tgt_ds,
        &p3,
        target_subsample_seed(seed),
    )?;
    Ok(RegimeOutcome {
        regime: Regime::Stilts,
        seed,
        scores: final_scores(&last.outcome)?,
        target_train_size: last.outcome.train_sizes[0],
        phases: vec![mid.outcome, last.outcome],
        params: last.params,
        head: last.head,
    })
}

/// Joint phase with per-step proportional task draws and one head per task,
/// optionally followed by a fresh target-only phase.
pub fn run_multitask(ctx: &RunContext<'_>, plan: &RegimePlan, seed: u64) -> Result<RegimeOutcome> {
    plan.validate()?;
    if !matches!(plan.regime, Regime::Multitask | Regime::MultitaskThenTarget) {
        return Err(Error::Config(format!(
            "{} is not a multitask regime",
            plan.regime
        )));
    }
    let int_task = plan.intermediate.as_ref().expect("validated");
    let int_ds = ctx.dataset(&int_task.name)?;
    let tgt_ds = ctx.dataset(&plan.target.name)?;
    let (cfg, vocab) = (ctx.config, ctx.vocab);

    let joint = with_seed(
        &plan.intermediate_phase,
        derive_seed(seed, tags::MULTITASK_PHASE),
    );
    let int_train = capped_train(
        int_ds,
        plan.intermediate_phase.train_cap,
        derive_seed(target_subsample_seed(seed), 1),
    )?;
    let tgt_train = capped_train(
        tgt_ds,
        plan.target_phase.train_cap,
        target_subsample_seed(seed),
    )?;
    let target_train_size = tgt_train.len();
    let sources = vec![
        task_source(vocab, cfg, &int_train)?,
        task_source(vocab, cfg, &tgt_train)?,
    ];
    let dev = dev_set(vocab, cfg, &tgt_ds.task, &tgt_ds.dev, 1)?;
    let seeds = vec![head_seed(joint.seed, 0), head_seed(joint.seed, 1)];
    let mut heads = vec![
        Head::new(&int_ds.task, cfg.pooled_dim(), seeds[0]),
        Head::new(&tgt_ds.task, cfg.pooled_dim(), seeds[1]),
    ];
    let mut params = ctx.pretrained.clone();
    let name = format!("{{{}, {}}}", int_ds.task.name, tgt_ds.task.name);
    let outcome = train(
        &name,
        cfg,
        &mut params,
        &mut heads,
        seeds,
        &Work::Tasks(sources),
        Some(&dev),
        &joint,
    )?;

    if plan.regime == Regime::Multitask {
        return Ok(RegimeOutcome {
            regime: plan.regime,
            seed,
            scores: final_scores(&outcome)?,
            target_train_size,
            phases: vec![outcome],
            params,
            head: heads.pop().expect("two heads"),
        });
    }
    let p3 = with_seed(&plan.target_phase, derive_seed(seed, tags::TARGET_PHASE));
    let last = run_phase_on(
        &params,
        cfg,
        vocab,
        tgt_ds,
        &p3,
        target_subsample_seed(seed),
    )?;
    Ok(RegimeOutcome {
        regime: plan.regime,
        seed,
        scores: final_scores(&last.outcome)?,
        target_train_size,
        phases: vec![outcome, last.outcome],
        params: last.params,
        head: last.head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{build_vocab, gen_synthetic_pair_tasks, Relatedness, SynthConfig};
    use crate::encoder::{init_params, ObjectiveStyle, Pooling};

    struct Fixture {
        cfg: EncoderConfig,
        vocab: Vocab,
        params: EncoderParams,
        datasets: Vec<Dataset>,
    }

    fn fixture() -> Fixture {
        let sc = SynthConfig {
            intermediate_train: 90,
            target_train: 30,
            dev: 20,
            ..SynthConfig::default()
        };
        let (int, tgt) = gen_synthetic_pair_tasks(1, Relatedness::Related, &sc).unwrap();
        let sents: Vec<Vec<String>> = int
            .train
            .iter()
            .chain(&tgt.train)
            .flat_map(|e| [e.text_a.clone(), e.text_b.clone().unwrap()])
            .collect();
        let vocab = build_vocab(sents.iter().map(|s| s.as_slice()), 200).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            max_len: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            dropout_rate: 0.1,
            pooling: Pooling::ClsToken,
            objective_style: ObjectiveStyle::MaskedLm,
        };
        let params = init_params(&cfg, 3).unwrap();
        Fixture {
            cfg,
            vocab,
            params,
            datasets: vec![int, tgt],
        }
    }

    fn plan(f: &Fixture, regime: Regime) -> RegimePlan {
        let phase = PhaseConfig {
            epochs: 1,
            batch_size: 8,
            ..PhaseConfig::default()
        };
        RegimePlan {
            regime,
            intermediate: regime
                .needs_intermediate()
                .then(|| f.datasets[0].task.clone()),
            target: f.datasets[1].task.clone(),
            intermediate_phase: phase.clone(),
            target_phase: phase,
        }
    }

    fn ctx(f: &Fixture) -> RunContext<'_> {
        RunContext {
            config: &f.cfg,
            vocab: &f.vocab,
            pretrained: &f.params,
            datasets: &f.datasets,
        }
    }

    #[test]
    fn zero_epoch_intermediate_reproduces_baseline() {
        let f = fixture();
        let base = run_regime(&ctx(&f), &plan(&f, Regime::Baseline), 5).unwrap();
        let mut p = plan(&f, Regime::Stilts);
        p.intermediate_phase.epochs = 0;
        let st = run_regime(&ctx(&f), &p, 5).unwrap();
        assert_eq!(base.scores, st.scores);
        assert_eq!(base.params, st.params);
        assert_eq!(base.phases[0].epoch_losses, st.phases[1].epoch_losses);
    }

    #[test]
    fn every_phase_starts_fresh() {
        let f = fixture();
        for regime in Regime::ALL {
            let out = run_regime(&ctx(&f), &plan(&f, regime), 2).unwrap();
            let mut seen = Vec::new();
            for ph in &out.phases {
                assert_eq!(ph.start.optimizer_step, 0);
                assert!(ph.start.moments_zero);
                for (s, w) in ph.start.head_seeds.iter().zip(&ph.start.head_weights) {
                    assert!(
                        !seen.iter().any(|(s2, w2)| s2 == s || w2 == w),
                        "{regime}: head reused"
                    );
                    seen.push((*s, w.clone()));
                }
            }
            assert_eq!(
                out.phases.len(),
                if matches!(regime, Regime::Stilts | Regime::MultitaskThenTarget) {
                    2
                } else {
                    1
                }
            );
        }
    }

    #[test]
    fn intermediate_phase_changes_params_but_not_pretrained() {
        let f = fixture();
        let before = f.params.clone();
        let out = run_regime(&ctx(&f), &plan(&f, Regime::Stilts), 2).unwrap();
        assert_eq!(f.params, before);
        assert_ne!(out.params, before);
    }

    #[test]
    fn multitask_draws_follow_sizes_and_caps() {
        let f = fixture();
        let mut p = plan(&f, Regime::Multitask);
        p.target_phase.train_cap = Some(10);
        let out = run_regime(&ctx(&f), &p, 1).unwrap();
        let ph = &out.phases[0];
        assert_eq!(ph.train_sizes, vec![90, 10]);
        assert_eq!(ph.task_draws.iter().sum::<usize>(), 13);
        assert_eq!(out.target_train_size, 10);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let f = fixture();
        for regime in Regime::ALL {
            let a = run_regime(&ctx(&f), &plan(&f, regime), 9).unwrap();
            let b = run_regime(&ctx(&f), &plan(&f, regime), 9).unwrap();
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn same_task_and_missing_intermediate_rejected() {
        let f = fixture();
        let mut p = plan(&f, Regime::Stilts);
        p.intermediate = Some(p.target.clone());
        let err = run_regime(&ctx(&f), &p, 0).unwrap_err().to_string();
        assert!(err.contains("baseline"), "{err}");
        let mut p = plan(&f, Regime::Multitask);
        p.intermediate = None;
        assert!(p.validate().is_err());
        let mut p = plan(&f, Regime::Baseline);
        p.intermediate = Some(f.datasets[0].task.clone());
        assert!(p.validate().is_err());
    }

    #[test]
    fn labels_name_the_table_rows() {
        let f = fixture();
        let labels: Vec<String> = Regime::ALL.iter().map(|&r| plan(&f, r).label()).collect();
        assert_eq!(
            labels,
            vec![
                "synth_target",
                "synth_related->synth_target",
                "{synth_related, synth_target}",
                "{synth_related, synth_target}->synth_target"
            ]
        );
        assert_eq!(
            "multitask_then_target".parse::<Regime>().unwrap(),
            Regime::MultitaskThenTarget
        );
    }
}
