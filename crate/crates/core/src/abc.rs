//! ABC rejection adjustment of the selected subset's treatment effect.
//!
//! For each draw, coefficients come from the prior, a synthetic trial of the
//! observed size is simulated (uniform biomarker, Bernoulli(0.5) arms), and
//! the draw is accepted when every full-population and per-subset response
//! rate, in both arms, lies within `ε` of the observed rate. Each accepted
//! draw contributes the true subset effect at the observed selected cutoff
//! under its coefficients; the adjusted estimate is the median of those.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::summarize_subsets;
use crate::model::{true_subset_effect, CutoffSet, FittedLogistic, ModelCoefficients};
use crate::selection::SelectionOutcome;
use crate::simulate::{generate_with, Allocation, SeedSpec, TrialData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorRegime {
    TrueCentered,
    StandardNormal,
    LogitFitted,
}

/// Independent normal priors on the four coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum AbcPriorSpec {
    /// `N(β_j, variance)` around the generating coefficients.
    TrueCentered {
        coefficients: ModelCoefficients,
        variance: f64,
    },
    /// `N(0, 1)` for every coefficient.
    StandardNormal,
    /// `N(β̂_j, se(β̂_j)²)` from a logistic fit of the observed trial.
    LogitFitted(FittedLogistic),
}

impl AbcPriorSpec {
    pub fn regime(&self) -> PriorRegime {
        match self {
            AbcPriorSpec::TrueCentered { .. } => PriorRegime::TrueCentered,
            AbcPriorSpec::StandardNormal => PriorRegime::StandardNormal,
            AbcPriorSpec::LogitFitted(_) => PriorRegime::LogitFitted,
        }
    }

    /// Per-coefficient (mean, standard deviation).
    fn moments(&self) -> Result<[(f64, f64); 4]> {
        match self {
            AbcPriorSpec::TrueCentered { coefficients, variance } => {
                let sd = variance.sqrt();
                Ok(coefficients.as_array().map(|b| (b, sd)))
            }
            AbcPriorSpec::StandardNormal => Ok([(0.0, 1.0); 4]),
            AbcPriorSpec::LogitFitted(fit) => {
                let se = fit.standard_errors.filter(|_| fit.converged).ok_or(Error::NonConvergedFit)?;
                let mean = fit.coefficients.as_array();
                Ok([0, 1, 2, 3].map(|j| (mean[j], se[j])))
            }
        }
    }
}

/// Scenario-level ABC settings; the seed is supplied per simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcSettings {
    pub prior: PriorRegime,
    pub true_centered_variance: f64,
    pub draws: usize,
    pub epsilon: f64,
    pub min_accepted: usize,
    pub max_epsilon_doublings: u32,
}

impl Default for AbcSettings {
    fn default() -> Self {
        Self {
            prior: PriorRegime::LogitFitted,
            true_centered_variance: 0.2,
            draws: 100_000,
            epsilon: 0.05,
            min_accepted: 50,
            max_epsilon_doublings: 3,
        }
    }
}

impl AbcSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.true_centered_variance > 0.0 && self.true_centered_variance.is_finite()) {
            return Err(Error::InvalidConfig("true_centered_variance must be positive".into()));
        }
        self.with_seed(SeedSpec::new(0, 0)).map(|_| ())
    }

    pub fn with_seed(&self, seed: SeedSpec) -> Result<AbcConfig> {
        AbcConfig::new(self.draws, self.epsilon, self.min_accepted, self.max_epsilon_doublings, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcConfig {
    pub draws: usize,
    pub epsilon: f64,
    pub min_accepted: usize,
    pub max_epsilon_doublings: u32,
    pub seed: SeedSpec,
}

impl AbcConfig {
    pub fn new(
        draws: usize,
        epsilon: f64,
        min_accepted: usize,
        max_epsilon_doublings: u32,
        seed: SeedSpec,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if min_accepted == 0 || draws < min_accepted {
            return Err(Error::InvalidConfig(format!(
                "need draws >= min_accepted > 0, got draws {draws}, min_accepted {min_accepted}"
            )));
        }
        Ok(Self {
            draws,
            epsilon,
            min_accepted,
            max_epsilon_doublings,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcResult {
    /// Posterior median of the selected-subset effect, or the observed MLE
    /// when `failed`.
    pub adjusted_estimate: f64,
    pub accepted_count: usize,
    pub effective_epsilon: f64,
    /// Accepted effects in ascending order.
    pub accepted_thetas: Vec<f64>,
    pub failed: bool,
}

/// Response rates by arm for the full population and each subset.
/// `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub full_exp_rate: Option<f64>,
    pub full_ctrl_rate: Option<f64>,
    pub subset_exp_rates: Vec<Option<f64>>,
    pub subset_ctrl_rates: Vec<Option<f64>>,
}

impl SummaryStats {
    fn cells(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        [self.full_exp_rate, self.full_ctrl_rate]
            .into_iter()
            .chain(self.subset_exp_rates.iter().copied())
            .chain(self.subset_ctrl_rates.iter().copied())
    }

    /// Largest absolute difference over cells defined in `self`; infinite
    /// if `other` is undefined where `self` is defined.
    fn max_distance(&self, other: &SummaryStats) -> f64 {
        self.cells()
            .zip(other.cells())
            .filter_map(|(obs, sim)| obs.map(|o| sim.map_or(f64::INFINITY, |s| (o - s).abs())))
            .fold(0.0, f64::max)
    }
}

pub fn compute_summary_stats(trial: &TrialData, cutoffs: &CutoffSet) -> SummaryStats {
    let rate = |r: u32, n: u32| (n > 0).then(|| f64::from(r) / f64::from(n));
    let mut full = [[0u32; 2]; 2];
    for (&m, &y) in trial.arm.iter().zip(&trial.response) {
        full[m as usize][y as usize] += 1;
    }
    let subsets = summarize_subsets(trial, cutoffs);
    SummaryStats {
        full_exp_rate: rate(full[1][1], full[1][0] + full[1][1]),
        full_ctrl_rate: rate(full[0][1], full[0][0] + full[0][1]),
        subset_exp_rates: subsets.iter().map(|s| rate(s.exp_responders, s.exp_size())).collect(),
        subset_ctrl_rates: subsets.iter().map(|s| rate(s.ctrl_responders, s.ctrl_size())).collect(),
    }
}

pub fn draw_prior(spec: &AbcPriorSpec, seed: SeedSpec) -> Result<ModelCoefficients> {
    let moments = spec.moments()?;
    Ok(draw_from_moments(&moments, &mut seed.rng()))
}

fn draw_from_moments<R: Rng>(moments: &[(f64, f64); 4], rng: &mut R) -> ModelCoefficients {
    let v = moments.map(|(mean, sd)| mean + sd * rng.sample::<f64, _>(StandardNormal));
    ModelCoefficients {
        intercept: v[0],
        biomarker: v[1],
        treatment: v[2],
        interaction: v[3],
    }
}

/// True iff every observed cell is within `epsilon` of the simulated one.
/// An undefined simulated cell fails the comparison.
pub fn abc_accept(observed: &SummaryStats, simulated: &SummaryStats, epsilon: f64) -> bool {
    observed.max_distance(simulated) <= epsilon
}

pub fn abc_adjust(
    trial: &TrialData,
    cutoffs: &CutoffSet,
    observed_selection: &SelectionOutcome,
    prior: &AbcPriorSpec,
    config: &AbcConfig,
) -> Result<AbcResult> {
    let selected = observed_selection
        .selected_cutoff
        .ok_or_else(|| Error::InvalidConfig("ABC adjustment needs a selected cutoff".into()))?;
    let observed_mle = summarize_subsets(trial, cutoffs)
        .iter()
        .find(|s| s.cutoff == selected)
        .ok_or(Error::InconsistentSelection(selected))?
        .orr_diff()
        .ok_or(Error::UndefinedSummary(selected))?;
    let moments = prior.moments()?;
    let observed = compute_summary_stats(trial, cutoffs);
    let n = trial.len();

    // (distance to observed stats, effect at the selected cutoff) per draw
    let draws: Vec<(f64, f64)> = (0..config.draws as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = config.seed.substream(j).rng();
            let coef = draw_from_moments(&moments, &mut rng);
            let synthetic = generate_with(&coef, n, Allocation::BernoulliHalf, &mut rng);
            let distance = observed.max_distance(&compute_summary_stats(&synthetic, cutoffs));
            let theta = true_subset_effect(&coef, selected).expect("selected cutoff lies in [0, 1)");
            (distance, theta)
        })
        .collect();

    let mut epsilon = config.epsilon;
    let mut accepted = accept_within(&draws, epsilon);
    for _ in 0..config.max_epsilon_doublings {
        if accepted.len() >= config.min_accepted {
            break;
        }
        epsilon *= 2.0;
        accepted = accept_within(&draws, epsilon);
    }
    accepted.sort_by(f64::total_cmp);
    let failed = accepted.len() < config.min_accepted;
    let adjusted_estimate = if failed { observed_mle } else { lower_median(&accepted) };
    Ok(AbcResult {
        adjusted_estimate,
        accepted_count: accepted.len(),
        effective_epsilon: epsilon,
        accepted_thetas: accepted,
        failed,
    })
}

fn accept_within(draws: &[(f64, f64)], epsilon: f64) -> Vec<f64> {
    draws
        .iter()
        .filter(|(d, _)| *d <= epsilon)
        .map(|&(_, theta)| theta)
        .collect()
}

/// `inf{m : #{θ ≤ m} / n ≥ 1/2}` for sorted, non-empty `sorted`.
fn lower_median(sorted: &[f64]) -> f64 {
    sorted[sorted.len().div_ceil(2) - 1]
}
