//! Scenario runner and conditional-bias aggregation.
//!
//! Each simulation draws a trial, applies the selection rule, and records
//! the MLE (plus any configured corrections) of the selected subset together
//! with the true effect at the selected cutoff. Conditional bias for
//! estimator `e` given cutoff `k` is the mean of `estimate − truth` over the
//! `N_k` simulations that selected `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abc::{abc_adjust, AbcPriorSpec, AbcSettings, PriorRegime};
use crate::bootstrap::{bootstrap_correct, BootstrapSettings};
use crate::error::{Error, Result};
use crate::estimators::{mle_selected_estimate, summarize_subsets};
use crate::model::{fit_logistic, true_subset_effect, CutoffSet, EffectSetting};
use crate::selection::{Rule2Params, RuleSpec, SelectionRule, Selector};
use crate::simulate::{generate_trial, Allocation, SeedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mle,
    Bootstrap,
    Abc,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mle => "mle",
            Estimator::Bootstrap => "bootstrap",
            Estimator::Abc => "abc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mle" => Some(Estimator::Mle),
            "bootstrap" => Some(Estimator::Bootstrap),
            "abc" => Some(Estimator::Abc),
            _ => None,
        }
    }
}

fn default_n_simulations() -> usize {
    10_000
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Mle]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub effect_setting: EffectSetting,
    pub n_per_arm: usize,
    pub cutoffs: CutoffSet,
    pub rule: SelectionRule,
    #[serde(default)]
    pub rule2_params: Rule2Params,
    #[serde(default = "default_n_simulations")]
    pub n_simulations: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub abc: AbcSettings,
    pub master_seed: u64,
    #[serde(default)]
    pub allocation: Allocation,
}

impl ScenarioConfig {
    /// A Rule 1 / MLE-only scenario with default settings elsewhere.
    pub fn new(effect_setting: EffectSetting, n_per_arm: usize, cutoffs: CutoffSet, master_seed: u64) -> Self {
        Self {
            effect_setting,
            n_per_arm,
            cutoffs,
            rule: SelectionRule::Rule1,
            rule2_params: Rule2Params::default(),
            n_simulations: default_n_simulations(),
            estimators: default_estimators(),
            bootstrap: BootstrapSettings::default(),
            abc: AbcSettings::default(),
            master_seed,
            allocation: Allocation::FixedEqual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_arm == 0 {
            return Err(Error::InvalidConfig("n_per_arm must be positive".into()));
        }
        if self.n_simulations == 0 {
            return Err(Error::InvalidConfig("n_simulations must be positive".into()));
        }
        if self.rule == SelectionRule::Rule2 {
            self.rule2_params.validate()?;
        }
        if self.uses(Estimator::Bootstrap) {
            self.bootstrap.validate()?;
        }
        if self.uses(Estimator::Abc) {
            self.abc.validate()?;
        }
        Ok(())
    }

    pub fn uses(&self, estimator: Estimator) -> bool {
        estimator == Estimator::Mle || self.estimators.contains(&estimator)
    }

    pub fn rule_spec(&self) -> RuleSpec {
        match self.rule {
            SelectionRule::Rule1 => RuleSpec::Rule1,
            SelectionRule::Rule2 => RuleSpec::Rule2(self.rule2_params),
        }
    }

    /// SHA-256 of the canonical JSON form (keys sorted), hex encoded.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Outcome of one simulated trial. Every estimate is present iff a cutoff
/// was selected and that estimator was configured.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub sim_index: u64,
    pub selected_cutoff: Option<f64>,
    pub theta_true_selected: Option<f64>,
    pub estimate_mle: Option<f64>,
    pub estimate_bootstrap: Option<f64>,
    pub bootstrap_fallback: Option<bool>,
    pub estimate_abc: Option<f64>,
    pub abc_failed: Option<bool>,
}

impl SimulationRecord {
    pub fn estimate(&self, estimator: Estimator) -> Option<f64> {
        match estimator {
            Estimator::Mle => self.estimate_mle,
            Estimator::Bootstrap => self.estimate_bootstrap,
            Estimator::Abc => self.estimate_abc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub records: Vec<SimulationRecord>,
    /// Simulations whose logistic fit failed, so the ABC step used the
    /// standard-normal prior instead of the fitted one.
    pub abc_prior_substitutions: usize,
}

/// Runs every simulation of a scenario on the current rayon pool. Output is
/// identical for any pool size.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    config.validate()?;
    let coef = config.effect_setting.coefficients();
    let selector = Selector::new(config.rule_spec());
    let outcomes: Vec<Result<(SimulationRecord, bool)>> = (0..config.n_simulations as u64)
        .into_par_iter()
        .map(|sim| {
            let seed = SeedSpec::new(config.master_seed, sim);
            let trial = generate_trial(&coef, config.n_per_arm, seed, config.allocation);
            let summaries = summarize_subsets(&trial, &config.cutoffs);
            let selection = selector.select(&summaries);
            let mut record = SimulationRecord {
                sim_index: sim,
                selected_cutoff: selection.selected_cutoff,
                theta_true_selected: None,
                estimate_mle: None,
                estimate_bootstrap: None,
                bootstrap_fallback: None,
                estimate_abc: None,
                abc_failed: None,
            };
            let mut substituted = false;
            let Some(cutoff) = selection.selected_cutoff else {
                return Ok((record, substituted));
            };
            let mle = mle_selected_estimate(&summaries, &selection)?.expect("a cutoff was selected");
            record.theta_true_selected = Some(true_subset_effect(&coef, cutoff)?);
            record.estimate_mle = Some(mle);

            if config.uses(Estimator::Bootstrap) {
                let bs = config.bootstrap.with_seed(seed.substream(1))?;
                let res = bootstrap_correct(&trial, &config.cutoffs, &selector, &selection, mle, &bs)?;
                record.estimate_bootstrap = Some(res.corrected);
                record.bootstrap_fallback = Some(res.fallback_used);
            }
            if config.uses(Estimator::Abc) {
                let prior = match config.abc.prior {
                    PriorRegime::TrueCentered => AbcPriorSpec::TrueCentered {
                        coefficients: coef,
                        variance: config.abc.true_centered_variance,
                    },
                    PriorRegime::StandardNormal => AbcPriorSpec::StandardNormal,
                    PriorRegime::LogitFitted => {
                        let fit = fit_logistic(&trial);
                        if fit.converged {
                            AbcPriorSpec::LogitFitted(fit)
                        } else {
                            substituted = true;
                            AbcPriorSpec::StandardNormal
                        }
                    }
                };
                let abc = config.abc.with_seed(seed.substream(2))?;
                let res = abc_adjust(&trial, &config.cutoffs, &selection, &prior, &abc)?;
                record.estimate_abc = Some(res.adjusted_estimate);
                record.abc_failed = Some(res.failed);
            }
            Ok((record, substituted))
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut abc_prior_substitutions = 0;
    for outcome in outcomes {
        let (record, substituted) = outcome?;
        abc_prior_substitutions += usize::from(substituted);
        records.push(record);
    }
    Ok(ScenarioRun {
        records,
        abc_prior_substitutions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffSelection {
    pub cutoff: f64,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCell {
    pub estimator: Estimator,
    pub cutoff: f64,
    pub n_selected: usize,
    /// Absent when no simulation selected this cutoff.
    pub conditional_bias: Option<f64>,
    /// Sample standard deviation of `estimate − truth`; needs two values.
    pub sd: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub n_simulations: usize,
    pub estimators: Vec<Estimator>,
    pub selections: Vec<CutoffSelection>,
    pub none_count: usize,
    pub none_probability: f64,
    pub cells: Vec<BiasCell>,
}

impl BiasReport {
    pub fn cell(&self, estimator: Estimator, cutoff: f64) -> Option<&BiasCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.cutoff == cutoff)
    }

    pub fn selection_probability(&self, cutoff: f64) -> Option<f64> {
        self.selections.iter().find(|s| s.cutoff == cutoff).map(|s| s.probability)
    }
}

/// Truth used by [`aggregate_bias`]: the value carried by each record, or a
/// recomputation from the selected cutoff.
pub enum Truth<'a> {
    Recorded,
    Oracle(&'a (dyn Fn(f64) -> Result<f64> + Sync)),
}

/// Conditional bias per (estimator, cutoff) and selection probabilities.
/// Estimators are those with at least one estimate in `records`, plus MLE.
pub fn aggregate_bias(records: &[SimulationRecord], cutoffs: &[f64], truth: Truth<'_>) -> Result<BiasReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = records.len();
    let mut estimators = vec![Estimator::Mle];
    for e in [Estimator::Bootstrap, Estimator::Abc] {
        if records.iter().any(|r| r.estimate(e).is_some()) {
            estimators.push(e);
        }
    }

    let mut counts = vec![0usize; cutoffs.len()];
    let mut none_count = 0;
    for r in records {
        match r.selected_cutoff {
            None => none_count += 1,
            Some(c) => {
                let k = cutoffs.iter().position(|&x| x == c).ok_or(Error::InconsistentSelection(c))?;
                counts[k] += 1;
            }
        }
    }

    let truth_of = |r: &SimulationRecord, cutoff: f64| -> Result<f64> {
        match &truth {
            Truth::Recorded => r
                .theta_true_selected
                .ok_or_else(|| Error::Parse(format!("record {} has no true effect", r.sim_index))),
            Truth::Oracle(f) => f(cutoff),
        }
    };

    let mut cells = Vec::with_capacity(estimators.len() * cutoffs.len());
    for &estimator in &estimators {
        for &cutoff in cutoffs {
            let mut errors = Vec::new();
            for r in records.iter().filter(|r| r.selected_cutoff == Some(cutoff)) {
                let est = r.estimate(estimator).ok_or_else(|| {
                    Error::Parse(format!(
                        "record {} selected {cutoff} but has no {} estimate",
                        r.sim_index,
                        estimator.name()
                    ))
                })?;
                errors.push(est - truth_of(r, cutoff)?);
            }
            let (bias, sd) = mean_sd(&errors);
            cells.push(BiasCell {
                estimator,
                cutoff,
                n_selected: errors.len(),
                conditional_bias: bias,
                sd,
                se: sd.map(|s| s / (errors.len() as f64).sqrt()),
            });
        }
    }

    Ok(BiasReport {
        n_simulations: n,
        estimators,
        selections: cutoffs
            .iter()
            .zip(&counts)
            .map(|(&cutoff, &count)| CutoffSelection {
                cutoff,
                count,
                probability: count as f64 / n as f64,
            })
            .collect(),
        none_count,
        none_probability: none_count as f64 / n as f64,
        cells,
    })
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

/// One scenario's result within a grid run.
#[derive(Debug)]
pub struct GridEntry {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub outcome: Result<(ScenarioRun, BiasReport)>,
}

/// Runs scenarios in order; a failing scenario is reported in its entry and
/// does not stop the rest of the batch.
pub fn run_grid(configs: &[ScenarioConfig]) -> Result<Vec<GridEntry>> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("the scenario list is empty".into()));
    }
    Ok(configs
        .iter()
        .map(|config| {
            let outcome = run_scenario(config).and_then(|run| {
                let report = aggregate_bias(&run.records, config.cutoffs.as_slice(), Truth::Recorded)?;
                Ok((run, report))
            });
            GridEntry {
                config: config.clone(),
                config_hash: config.config_hash(),
                outcome,
            }
        })
        .collect())
}
