//! Named end-to-end experiments: generate, cluster, train, index, predict and score
//! several model variants over a list of seeds, then check the expected trend.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use trajrank_core::bank::{build_bank, ClusterMethod};
use trajrank_core::inference::{PredictionRecord, Predictor, Strategy};
use trajrank_core::metrics::{ade, evaluate_subset, group_predictions, per_example, EvalReport};
use trajrank_core::mips::{IndexVariant, MipsIndex};
use trajrank_core::synth::{analytic_trajectory, generate, Branch, ScenarioKind};
use trajrank_core::trainer::{train_with_progress, TrainConfig, TrainStatus};
use trajrank_core::types::Example;

use crate::commands::write_log;
use crate::config::{ClusterConfig, GenConfig, PredictConfig};
use crate::error::{CliError, CliResult};

/// Offset between the training-set seed and the test-set seed of one run.
pub const TEST_SEED_OFFSET: u64 = 1000;

/// Required seed-averaged gain of the bimodal mixture over the unimodal model, nats per timestamp.
pub const MIXTURE_LL_GAIN: f64 = 2.0;
/// Largest tolerated ADE between a mixture mode and the fork branch it covers, meters.
pub const BRANCH_ADE_LIMIT: f64 = 1.0;
/// Standard errors of slack allowed when a larger candidate set should not hurt the mean.
pub const TOP_K_NOISE_SE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Forks with two equally likely branches: unimodal versus two-mode mixture.
    ForkBimodal,
    /// Rare turns among straight driving: clustered versus uniform bank density.
    Imbalanced,
    /// Noisy fork-free scenes: top-1 versus posterior-mean readouts.
    Noisy,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::ForkBimodal, Preset::Imbalanced, Preset::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ForkBimodal => "fork-bimodal",
            Preset::Imbalanced => "imbalanced",
            Preset::Noisy => "noisy",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {s:?}")))
    }
}

/// A prediction readout scored for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutPlan {
    pub name: String,
    pub predict: PredictConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantPlan {
    pub name: String,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
    pub readouts: Vec<ReadoutPlan>,
}

/// Fully resolved experiment; written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePlan {
    pub preset: Preset,
    /// Each seed replaces the generator, clustering and training seeds of every variant.
    pub seeds: Vec<u64>,
    /// Training-set generator; the test set uses the same mix with `n_test` examples.
    pub gen: GenConfig,
    pub n_test: usize,
    pub variants: Vec<VariantPlan>,
}

/// Overrides applied on top of a preset, mainly to shrink runs.
#[derive(Debug, Clone, Default)]
pub struct PlanOverrides {
    pub seeds: Option<Vec<u64>>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub max_steps: Option<usize>,
}

fn readout(name: &str, strategy: Strategy, top_k: usize) -> ReadoutPlan {
    ReadoutPlan {
        name: name.into(),
        predict: PredictConfig {
            strategy,
            top_k,
            h_weighted: true,
            ..PredictConfig::default()
        },
    }
}

impl PipelinePlan {
    pub fn for_preset(preset: Preset, overrides: &PlanOverrides) -> Self {
        let base_gen = GenConfig {
            n: 10_000,
            speed: 8.0,
            noise: 0.1,
            ..GenConfig::default()
        };
        let clustered = ClusterConfig::default();
        let train = TrainConfig {
            max_steps: 4000,
            ..TrainConfig::default()
        };
        let (gen, variants) = match preset {
            Preset::ForkBimodal => {
                let train = TrainConfig {
                    train_beta: false,
                    ..train
                };
                (
                    GenConfig {
                        mix: "fork:0.6,turn_left:0.15,turn_right:0.15,straight:0.1".into(),
                        ..base_gen
                    },
                    vec![
                        VariantPlan {
                            name: "m1".into(),
                            cluster: clustered.clone(),
                            train: TrainConfig {
                                modes: 1,
                                ..train.clone()
                            },
                            readouts: vec![readout("mean", Strategy::Mean, 150)],
                        },
                        VariantPlan {
                            name: "m2".into(),
                            cluster: clustered,
                            train: TrainConfig {
                                modes: 2,
                                mixture_warmup_steps: 2000,
                                ..train
                            },
                            readouts: vec![readout("mixture", Strategy::Mixture, 150)],
                        },
                    ],
                )
            }
            Preset::Imbalanced => {
                let train = TrainConfig {
                    max_steps: 2000,
                    ..train
                };
                let readouts = vec![readout("mean", Strategy::Mean, 150)];
                (
                    GenConfig {
                        mix: "straight:0.95:8:0.3,turn_left:0.0125:6:0.3,turn_left:0.0125:10:0.3,\
                              turn_right:0.0125:6:0.3,turn_right:0.0125:10:0.3"
                            .into(),
                        ..base_gen
                    },
                    vec![
                        VariantPlan {
                            name: "clustered".into(),
                            cluster: clustered.clone(),
                            train: train.clone(),
                            readouts: readouts.clone(),
                        },
                        VariantPlan {
                            name: "none".into(),
                            cluster: ClusterConfig {
                                method: ClusterMethod::None,
                                k: 1,
                                ..clustered
                            },
                            train,
                            readouts,
                        },
                    ],
                )
            }
            Preset::Noisy => (
                GenConfig {
                    mix: "straight:0.25:8:0.5,turn_left:0.2:8:0.5,turn_right:0.2:8:0.5,\
                          stop:0.15:8:0.5,straight:0.2:12:0.5"
                        .into(),
                    ..base_gen
                },
                vec![VariantPlan {
                    name: "m1".into(),
                    cluster: clustered,
                    train,
                    readouts: vec![
                        readout("top1", Strategy::Top1, 150),
                        readout("mean150", Strategy::Mean, 150),
                        readout("mean500", Strategy::Mean, 500),
                    ],
                }],
            ),
        };
        let mut plan = PipelinePlan {
            preset,
            seeds: vec![1, 2, 3],
            gen,
            n_test: 1000,
            variants,
        };
        if let Some(seeds) = &overrides.seeds {
            plan.seeds = seeds.clone();
        }
        if let Some(n) = overrides.n_train {
            plan.gen.n = n;
        }
        if let Some(n) = overrides.n_test {
            plan.n_test = n;
        }
        if let Some(steps) = overrides.max_steps {
            for v in &mut plan.variants {
                v.train.max_steps = steps;
                v.train.mixture_warmup_steps = v.train.mixture_warmup_steps.min(steps / 2);
            }
        }
        plan
    }

    fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        for v in &self.variants {
            v.train
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        self.gen.scenarios().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub name: String,
    pub overall: EvalReport,
    /// Reports restricted to one scenario kind, plus `turn` for both turn directions.
    pub subsets: BTreeMap<String, EvalReport>,
    /// Mean ADE of each mode's prediction to the analytic left and right fork branch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_branch_ade: Option<Vec<[f64; 2]>>,
    /// Per-example ADE in test-set order.
    pub example_ade: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub variant: String,
    pub status: TrainStatus,
    pub steps: usize,
    pub best_val_nll: f64,
    pub readouts: Vec<ReadoutReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub criteria: Vec<Criterion>,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn readout(&self, seed: u64, variant: &str, readout: &str) -> Option<&ReadoutReport> {
        self.runs
            .iter()
            .find(|r| r.seed == seed && r.variant == variant)?
            .readouts
            .iter()
            .find(|r| r.name == readout)
    }

    /// Mean of `f` over seeds for one variant and readout.
    fn seed_mean(
        &self,
        variant: &str,
        readout: &str,
        f: impl Fn(&ReadoutReport) -> Option<f64>,
    ) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .seeds
            .iter()
            .map(|&s| self.readout(s, variant, readout).and_then(&f))
            .collect();
        let values = values?;
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs every seed and variant of `plan`, writing artifacts under `out_dir`.
pub fn run(plan: &PipelinePlan, out_dir: &Path) -> CliResult<PipelineReport> {
    plan.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let plan_path = out_dir.join("pipeline.toml");
    let plan_text = toml::to_string(plan).expect("pipeline plan always serializes");
    fs::write(&plan_path, plan_text).map_err(|e| CliError::io(&plan_path, e))?;

    let grid = plan.gen.grid();
    let scenarios = plan.gen.scenarios()?;
    let mut runs = Vec::new();
    for &seed in &plan.seeds {
        let seed_dir = out_dir.join(format!("seed{seed}"));
        fs::create_dir_all(&seed_dir).map_err(|e| CliError::io(&seed_dir, e))?;
        let train_set = generate(&scenarios, plan.gen.n, seed, grid)?;
        let test_set = generate(&scenarios, plan.n_test, seed + TEST_SEED_OFFSET, grid)?;
        for variant in &plan.variants {
            eprintln!("[{}] seed {seed} variant {}", plan.preset, variant.name);
            let c = &variant.cluster;
            let bank = build_bank(&train_set, grid.dt, c.k, c.method, seed, c.options())?;
            let train_cfg = TrainConfig {
                seed,
                ..variant.train.clone()
            };
            let outcome = train_with_progress(&train_cfg, &train_set, &bank, |_| {})?;
            outcome
                .params
                .save(&seed_dir.join(format!("{}.ckpt", variant.name)))?;
            write_log(
                &seed_dir.join(format!("{}.log.jsonl", variant.name)),
                &outcome.log,
            )?;
            if let TrainStatus::Aborted { step, message } = &outcome.status {
                return Err(CliError::Aborted {
                    step: *step,
                    message: message.clone(),
                });
            }
            let index = MipsIndex::build(&bank, &outcome.params, IndexVariant::Exact, seed)?;
            let predictor = Predictor::new(&outcome.params, &index, &bank)?;
            let mut readouts = Vec::new();
            for r in &variant.readouts {
                let p = &r.predict;
                let records = predictor.predict_all(&test_set, p.strategy, &p.options(), p.seed)?;
                readouts.push(score(&r.name, &records, &test_set, plan)?);
            }
            runs.push(RunReport {
                seed,
                variant: variant.name.clone(),
                status: outcome.status,
                steps: outcome.steps,
                best_val_nll: outcome.best_val_nll,
                readouts,
            });
        }
    }
    let mut report = PipelineReport {
        preset: plan.preset,
        seeds: plan.seeds.clone(),
        runs,
        criteria: Vec::new(),
    };
    report.criteria = criteria(&report);
    let report_path = out_dir.join("report.json");
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::io(&report_path, e.into()))?;
    fs::write(&report_path, text + "\n").map_err(|e| CliError::io(&report_path, e))?;
    Ok(report)
}

fn is_turn(kind: Option<ScenarioKind>) -> bool {
    matches!(kind, Some(ScenarioKind::TurnLeft | ScenarioKind::TurnRight))
}

fn score(
    name: &str,
    records: &[PredictionRecord],
    test_set: &[Example],
    plan: &PipelinePlan,
) -> CliResult<ReadoutReport> {
    let kind_of = |e: &Example| ScenarioKind::from_example_id(&e.id);
    let overall = evaluate_subset(records, test_set, |_| true)?;
    let mut subsets = BTreeMap::new();
    for kind in ScenarioKind::ALL {
        if test_set.iter().any(|e| kind_of(e) == Some(kind)) {
            subsets.insert(
                kind.name().to_string(),
                evaluate_subset(records, test_set, |e| kind_of(e) == Some(kind))?,
            );
        }
    }
    if test_set.iter().any(|e| is_turn(kind_of(e))) {
        subsets.insert(
            "turn".into(),
            evaluate_subset(records, test_set, |e| is_turn(kind_of(e)))?,
        );
    }
    let example_ade = per_example(records, test_set, |_| true)?
        .into_iter()
        .map(|(_, m)| m.ade)
        .collect();
    Ok(ReadoutReport {
        name: name.into(),
        overall,
        subsets,
        mode_branch_ade: mode_branch_ade(records, test_set, plan)?,
        example_ade,
    })
}

/// For multi-mode readouts on data with forks: the mean ADE of each mode to each branch.
fn mode_branch_ade(
    records: &[PredictionRecord],
    test_set: &[Example],
    plan: &PipelinePlan,
) -> CliResult<Option<Vec<[f64; 2]>>> {
    let n_modes = records.iter().map(|r| r.mode_index + 1).max().unwrap_or(0);
    let forks: Vec<&Example> = test_set
        .iter()
        .filter(|e| ScenarioKind::from_example_id(&e.id) == Some(ScenarioKind::Fork))
        .collect();
    if n_modes < 2 || forks.is_empty() {
        return Ok(None);
    }
    let grid = plan.gen.grid();
    let branches = [Branch::Left, Branch::Right]
        .map(|b| analytic_trajectory(ScenarioKind::Fork, plan.gen.speed, b, grid));
    let grouped = group_predictions(records);
    let mut sums = vec![[0.0; 2]; n_modes];
    for e in &forks {
        let preds = grouped.get(e.id.as_str()).ok_or_else(|| {
            CliError::Core(trajrank_core::Error::Argument(format!(
                "no predictions for {}",
                e.id
            )))
        })?;
        for p in preds {
            for (b, branch) in branches.iter().enumerate() {
                sums[p.mode_index][b] += ade(&p.trajectory, branch)?;
            }
        }
    }
    let n = forks.len() as f64;
    Ok(Some(
        sums.into_iter().map(|[l, r]| [l / n, r / n]).collect(),
    ))
}

/// Of the two modes, the assignment to branches with the smaller worst-case ADE.
fn matched_branch_ade(m: &[[f64; 2]]) -> Option<f64> {
    if m.len() < 2 {
        return None;
    }
    let straight = m[0][0].max(m[1][1]);
    let crossed = m[0][1].max(m[1][0]);
    Some(straight.min(crossed))
}

fn criterion(name: &str, passed: bool, detail: String) -> Criterion {
    Criterion {
        name: name.into(),
        passed,
        detail,
    }
}

fn missing(name: &str) -> Criterion {
    criterion(
        name,
        false,
        "required runs are missing from the report".into(),
    )
}

/// Trend checks for the preset, computed from seed averages.
pub fn criteria(report: &PipelineReport) -> Vec<Criterion> {
    match report.preset {
        Preset::ForkBimodal => {
            let ll = |v, r| report.seed_mean(v, r, |x| Some(x.overall.ll_per_timestamp));
            let gain = match (ll("m2", "mixture"), ll("m1", "mean")) {
                (Some(m2), Some(m1)) => criterion(
                    "mixture_ll_gain",
                    m2 - m1 >= MIXTURE_LL_GAIN,
                    format!("ll per timestamp m2 {m2:.3} vs m1 {m1:.3}, gain {:.3} (need >= {MIXTURE_LL_GAIN})", m2 - m1),
                ),
                _ => missing("mixture_ll_gain"),
            };
            let branch = match report.seed_mean("m2", "mixture", |x| x.mode_branch_ade.as_deref().and_then(matched_branch_ade)) {
                Some(worst) => criterion(
                    "modes_match_branches",
                    worst <= BRANCH_ADE_LIMIT,
                    format!("worst matched mode-to-branch ADE {worst:.3} m (need <= {BRANCH_ADE_LIMIT})"),
                ),
                None => missing("modes_match_branches"),
            };
            vec![gain, branch]
        }
        Preset::Imbalanced => {
            let turn = |v| report.seed_mean(v, "mean", |x| x.subsets.get("turn").map(|r| r.ade));
            vec![match (turn("clustered"), turn("none")) {
                (Some(c), Some(n)) => criterion(
                    "rebalancing_turn_ade",
                    c < n,
                    format!("turn-subset ADE clustered {c:.4} vs none {n:.4}"),
                ),
                _ => missing("rebalancing_turn_ade"),
            }]
        }
        Preset::Noisy => {
            let a = |r| report.seed_mean("m1", r, |x| Some(x.overall.ade));
            let order = match (a("mean150"), a("top1")) {
                (Some(mean), Some(top1)) => criterion(
                    "mean_beats_top1",
                    mean < top1,
                    format!("ADE mean@150 {mean:.4} vs top1 {top1:.4}"),
                ),
                _ => missing("mean_beats_top1"),
            };
            let diffs: Option<Vec<f64>> = report
                .seeds
                .iter()
                .map(|&s| {
                    let small = report.readout(s, "m1", "mean150")?;
                    let large = report.readout(s, "m1", "mean500")?;
                    Some(
                        large
                            .example_ade
                            .iter()
                            .zip(&small.example_ade)
                            .map(|(l, s)| l - s)
                            .collect::<Vec<_>>(),
                    )
                })
                .collect::<Option<Vec<_>>>()
                .map(|v| v.concat());
            let growth = match diffs.filter(|d| d.len() >= 2) {
                Some(d) => {
                    let (mean, se) = mean_and_standard_error(&d);
                    criterion(
                        "mean_top_k_non_increasing",
                        mean <= TOP_K_NOISE_SE * se,
                        format!("ADE change mean@500 minus mean@150 {mean:.5} (standard error {se:.5}, slack {TOP_K_NOISE_SE} SE)"),
                    )
                }
                None => missing("mean_top_k_non_increasing"),
            };
            vec![order, growth]
        }
    }
}

fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Tab-separated trend table: one row per seed, variant and readout.
pub fn plot_report(report: &PipelineReport) -> String {
    let mut out = String::from("seed\tvariant\treadout\tade\tfde\thit_rate\tll_per_timestamp\n");
    for run in &report.runs {
        for r in &run.readouts {
            let o = &r.overall;
            out += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                run.seed, run.variant, r.name, o.ade, o.fde, o.hit_rate, o.ll_per_timestamp
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fork".parse::<Preset>().is_err());
    }

    #[test]
    fn plans_serialize_and_validate() {
        for p in Preset::ALL {
            let plan = PipelinePlan::for_preset(p, &PlanOverrides::default());
            plan.validate().unwrap();
            assert_eq!(plan.seeds, vec![1, 2, 3]);
            let back: PipelinePlan = toml::from_str(&toml::to_string(&plan).unwrap()).unwrap();
            assert_eq!(back, plan);
        }
    }

    #[test]
    fn overrides_shrink_runs() {
        let o = PlanOverrides {
            seeds: Some(vec![9]),
            n_train: Some(50),
            n_test: Some(10),
            max_steps: Some(20),
        };
        let plan = PipelinePlan::for_preset(Preset::ForkBimodal, &o);
        assert_eq!(
            (plan.seeds.clone(), plan.gen.n, plan.n_test),
            (vec![9], 50, 10)
        );
        assert!(plan
            .variants
            .iter()
            .all(|v| v.train.max_steps == 20 && v.train.mixture_warmup_steps <= 10));
    }

    #[test]
    fn branch_matching_picks_the_better_permutation() {
        assert_eq!(matched_branch_ade(&[[0.2, 5.0], [4.0, 0.3]]), Some(0.3));
        assert_eq!(matched_branch_ade(&[[5.0, 0.4], [0.1, 6.0]]), Some(0.4));
        assert_eq!(matched_branch_ade(&[[2.0, 2.0], [2.0, 2.0]]), Some(2.0));
        assert_eq!(matched_branch_ade(&[[0.0, 0.0]]), None);
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        assert_eq!(mean_and_standard_error(&[1.5, 1.5, 1.5]), (1.5, 0.0));
        let (m, se) = mean_and_standard_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
    }

    fn eval_report(ade: f64, llpt: f64) -> EvalReport {
        EvalReport {
            ade,
            fde: ade,
            hit_rate: 0.0,
            ll: llpt * 25.0,
            ll_per_timestamp: llpt,
            n_examples: 1,
        }
    }

    fn run(
        seed: u64,
        variant: &str,
        readout: &str,
        ade: f64,
        llpt: f64,
        branch: Option<Vec<[f64; 2]>>,
    ) -> RunReport {
        RunReport {
            seed,
            variant: variant.into(),
            status: TrainStatus::Completed,
            steps: 1,
            best_val_nll: 0.0,
            readouts: vec![ReadoutReport {
                name: readout.into(),
                overall: eval_report(ade, llpt),
                subsets: BTreeMap::new(),
                mode_branch_ade: branch,
                example_ade: vec![ade],
            }],
        }
    }

    #[test]
    fn fork_criteria_use_seed_averages() {
        let report = PipelineReport {
            preset: Preset::ForkBimodal,
            seeds: vec![1, 2],
            runs: vec![
                run(1, "m1", "mean", 1.0, -8.0, None),
                run(
                    1,
                    "m2",
                    "mixture",
                    1.0,
                    -7.0,
                    Some(vec![[0.1, 5.0], [5.0, 0.2]]),
                ),
                run(2, "m1", "mean", 1.0, -8.0, None),
                run(
                    2,
                    "m2",
                    "mixture",
                    1.0,
                    -4.0,
                    Some(vec![[5.0, 1.5], [0.1, 5.0]]),
                ),
            ],
            criteria: Vec::new(),
        };
        let c = criteria(&report);
        assert!(c[0].passed, "{c:?}");
        assert!(c[1].passed, "{c:?}");
        let mut worse = report.clone();
        worse.runs[3].readouts[0].overall.ll_per_timestamp = -6.0;
        assert!(!criteria(&worse)[0].passed);
    }

    #[test]
    fn missing_runs_fail_rather_than_pass() {
        let report = PipelineReport {
            preset: Preset::Imbalanced,
            seeds: vec![1],
            runs: vec![run(1, "clustered", "mean", 1.0, -2.0, None)],
            criteria: Vec::new(),
        };
        assert!(!criteria(&report)[0].passed);
    }
}
