//! Conditional bootstrap bias correction of the selected-subset estimate.
//!
//! With `u_k` the selection indicator and `s(Z)` the selected estimate, the
//! conditional mean over bootstrap replicates that reselect the observed
//! cutoff is
//!
//! ```text
//! h*_k = Σ_b s(Z*_b) u_k(Z*_b) / Σ_b u_k(Z*_b)
//! ```
//!
//! and the corrected estimate is `2·θ̂ − h*_k`. Replicates are drawn
//! nonparametrically: (biomarker, response) pairs are resampled with
//! replacement within each arm, keeping arm sizes fixed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::summarize_subsets;
use crate::model::CutoffSet;
use crate::selection::{SelectionOutcome, Selector};
use crate::simulate::{SeedSpec, TrialData};

pub const MIN_REPLICATES: usize = 100;

/// What to do when no replicate reselects the observed cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapFallback {
    #[default]
    ReturnUncorrected,
    /// Use every replicate that selected some cutoff.
    UnconditionalBias,
}

/// Scenario-level bootstrap settings; the seed is supplied per simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub fallback: BootstrapFallback,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 2000,
            fallback: BootstrapFallback::ReturnUncorrected,
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::InvalidConfig(format!(
                "bootstrap replicates must be at least {MIN_REPLICATES}, got {}",
                self.replicates
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: SeedSpec) -> Result<BootstrapConfig> {
        BootstrapConfig::new(self.replicates, self.fallback, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub fallback: BootstrapFallback,
    pub seed: SeedSpec,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, fallback: BootstrapFallback, seed: SeedSpec) -> Result<Self> {
        BootstrapSettings { replicates, fallback }.validate()?;
        Ok(Self {
            replicates,
            fallback,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    pub corrected: f64,
    pub uncorrected: f64,
    /// `h*_k − θ̂`; zero when the fallback returned the uncorrected value.
    pub conditional_bias_estimate: f64,
    /// Conditional mean `h*_k` (or the fallback mean).
    pub h_star: f64,
    pub replicates_matching_selection: usize,
    pub replicates_other_selection: usize,
    pub replicates_no_selection: usize,
    pub fallback_used: bool,
}

/// Resamples (biomarker, response) pairs with replacement within each arm.
/// Subject `i` of the output is in the same arm as subject `i` of the input.
pub fn resample_trial(trial: &TrialData, seed: SeedSpec) -> Result<TrialData> {
    let mut rng = seed.rng();
    resample_with(trial, &arm_pools(trial)?, &mut rng)
}

fn arm_pools(trial: &TrialData) -> Result<[Vec<usize>; 2]> {
    let mut pools = [Vec::new(), Vec::new()];
    for (i, &m) in trial.arm.iter().enumerate() {
        pools[m as usize].push(i);
    }
    if pools[1].is_empty() {
        return Err(Error::EmptyArm("experimental"));
    }
    if pools[0].is_empty() {
        return Err(Error::EmptyArm("control"));
    }
    Ok(pools)
}

fn resample_with<R: Rng>(trial: &TrialData, pools: &[Vec<usize>; 2], rng: &mut R) -> Result<TrialData> {
    let n = trial.len();
    let mut biomarker = Vec::with_capacity(n);
    let mut response = Vec::with_capacity(n);
    for &m in &trial.arm {
        let pool = &pools[m as usize];
        let j = pool[rng.random_range(0..pool.len())];
        biomarker.push(trial.biomarker[j]);
        response.push(trial.response[j]);
    }
    Ok(TrialData {
        biomarker,
        arm: trial.arm.clone(),
        response,
    })
}

/// What one replicate's selection produced: `(cutoff, estimate)` or nothing.
type ReplicateOutcome = Option<(f64, f64)>;

fn replicate_outcome(replicate: &TrialData, cutoffs: &CutoffSet, selector: &Selector) -> ReplicateOutcome {
    let summaries = summarize_subsets(replicate, cutoffs);
    let selection = selector.select(&summaries);
    let cutoff = selection.selected_cutoff?;
    let estimate = summaries.iter().find(|s| s.cutoff == cutoff)?.orr_diff()?;
    Some((cutoff, estimate))
}

/// Bootstrap-corrected estimate of the selected subset's effect using
/// `config.replicates` Monte Carlo replicates.
pub fn bootstrap_correct(
    trial: &TrialData,
    cutoffs: &CutoffSet,
    selector: &Selector,
    observed_selection: &SelectionOutcome,
    observed_estimate: f64,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let selected = observed_selection
        .selected_cutoff
        .ok_or_else(|| Error::InvalidConfig("bootstrap correction needs a selected cutoff".into()))?;
    let pools = arm_pools(trial)?;
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = config.seed.substream(b).rng();
            let replicate = resample_with(trial, &pools, &mut rng).expect("pools are non-empty");
            replicate_outcome(&replicate, cutoffs, selector)
        })
        .collect();
    Ok(combine(
        outcomes.into_iter().map(|o| (o, 1.0)),
        selected,
        observed_estimate,
        config.fallback,
    ))
}

/// Bootstrap correction over an explicit, weighted set of replicate
/// datasets (for example the full enumerated resample space of a small
/// trial). Weights need not be normalized.
pub fn bootstrap_correct_weighted(
    replicates: &[(TrialData, f64)],
    cutoffs: &CutoffSet,
    selector: &Selector,
    observed_selection: &SelectionOutcome,
    observed_estimate: f64,
    fallback: BootstrapFallback,
) -> Result<BootstrapResult> {
    let selected = observed_selection
        .selected_cutoff
        .ok_or_else(|| Error::InvalidConfig("bootstrap correction needs a selected cutoff".into()))?;
    Ok(combine(
        replicates
            .iter()
            .map(|(t, w)| (replicate_outcome(t, cutoffs, selector), *w)),
        selected,
        observed_estimate,
        fallback,
    ))
}

fn combine<I>(outcomes: I, selected: f64, observed: f64, fallback: BootstrapFallback) -> BootstrapResult
where
    I: Iterator<Item = (ReplicateOutcome, f64)>,
{
    let (mut match_sum, mut match_w) = (0.0, 0.0);
    let (mut any_sum, mut any_w) = (0.0, 0.0);
    let (mut matching, mut other, mut none) = (0, 0, 0);
    for (outcome, w) in outcomes {
        match outcome {
            Some((c, est)) => {
                any_sum += w * est;
                any_w += w;
                if c == selected {
                    match_sum += w * est;
                    match_w += w;
                    matching += 1;
                } else {
                    other += 1;
                }
            }
            None => none += 1,
        }
    }
    let correct = |h_star: f64, fallback_used| BootstrapResult {
        corrected: 2.0 * observed - h_star,
        uncorrected: observed,
        conditional_bias_estimate: h_star - observed,
        h_star,
        replicates_matching_selection: matching,
        replicates_other_selection: other,
        replicates_no_selection: none,
        fallback_used,
    };
    if matching > 0 {
        return correct(match_sum / match_w, false);
    }
    match fallback {
        BootstrapFallback::UnconditionalBias if any_w > 0.0 => correct(any_sum / any_w, true),
        _ => correct(observed, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::mle_selected_estimate;
    use crate::model::EffectSetting;
    use crate::selection::RuleSpec;
    use crate::simulate::{generate_trial, Allocation};

    fn cutoffs(v: &[f64]) -> CutoffSet {
        CutoffSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn config_enforces_minimum_replicates() {
        assert!(BootstrapConfig::new(99, BootstrapFallback::ReturnUncorrected, SeedSpec::new(0, 0)).is_err());
        assert!(BootstrapConfig::new(100, BootstrapFallback::ReturnUncorrected, SeedSpec::new(0, 0)).is_ok());
    }

    #[test]
    fn single_subject_arm_is_repeated() {
        let t = TrialData::new(vec![0.2, 0.5, 0.7, 0.9], vec![1, 0, 0, 0], vec![1, 0, 1, 0]).unwrap();
        let r = resample_trial(&t, SeedSpec::new(4, 4)).unwrap();
        assert_eq!(r.arm, t.arm);
        assert_eq!((r.biomarker[0], r.response[0]), (0.2, 1));
        assert_eq!(r, resample_trial(&t, SeedSpec::new(4, 4)).unwrap());
    }

    #[test]
    fn resample_rejects_empty_arm() {
        let t = TrialData::new(vec![0.2, 0.5], vec![1, 1], vec![1, 0]).unwrap();
        assert!(matches!(resample_trial(&t, SeedSpec::new(0, 0)), Err(Error::EmptyArm("control"))));
    }

    #[test]
    fn resampled_pairs_come_from_the_same_arm() {
        let coef = EffectSetting::MoreOrLess2.coefficients();
        let t = generate_trial(&coef, 30, SeedSpec::new(1, 1), Allocation::FixedEqual);
        let r = resample_trial(&t, SeedSpec::new(9, 2)).unwrap();
        for i in 0..r.len() {
            let found = (0..t.len()).any(|j| {
                t.arm[j] == r.arm[i] && t.biomarker[j] == r.biomarker[i] && t.response[j] == r.response[i]
            });
            assert!(found);
        }
    }

    #[test]
    fn identical_subjects_leave_estimate_unchanged() {
        let t = TrialData::new(
            vec![0.8, 0.8, 0.8, 0.8, 0.8, 0.8],
            vec![1, 1, 1, 0, 0, 0],
            vec![1, 1, 1, 0, 0, 0],
        )
        .unwrap();
        let cut = cutoffs(&[0.3, 0.6]);
        let selector = Selector::new(RuleSpec::Rule1);
        let summaries = summarize_subsets(&t, &cut);
        let sel = selector.select(&summaries);
        let est = mle_selected_estimate(&summaries, &sel).unwrap().unwrap();
        let cfg = BootstrapConfig::new(200, BootstrapFallback::ReturnUncorrected, SeedSpec::new(3, 0)).unwrap();
        let res = bootstrap_correct(&t, &cut, &selector, &sel, est, &cfg).unwrap();
        assert_eq!(res.h_star, est);
        assert_eq!(res.corrected, est);
        assert!(!res.fallback_used);
    }

    #[test]
    fn linearity_identity_and_replicate_accounting() {
        let coef = EffectSetting::MoreOrLess1.coefficients();
        let t = generate_trial(&coef, 20, SeedSpec::new(10, 0), Allocation::FixedEqual);
        let cut = cutoffs(&[0.3, 0.6]);
        let selector = Selector::new(RuleSpec::Rule1);
        let summaries = summarize_subsets(&t, &cut);
        let sel = selector.select(&summaries);
        let est = mle_selected_estimate(&summaries, &sel).unwrap().unwrap();
        let cfg = BootstrapConfig::new(500, BootstrapFallback::ReturnUncorrected, SeedSpec::new(10, 0).substream(1)).unwrap();
        let res = bootstrap_correct(&t, &cut, &selector, &sel, est, &cfg).unwrap();
        assert_eq!(res.corrected - res.uncorrected, res.uncorrected - res.h_star);
        assert_eq!(
            res.replicates_matching_selection + res.replicates_other_selection + res.replicates_no_selection,
            500
        );
        let again = bootstrap_correct(&t, &cut, &selector, &sel, est, &cfg).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn zero_match_fallbacks() {
        let outcomes = || vec![(Some((0.3, 0.1)), 1.0), (Some((0.3, 0.3)), 1.0), (None, 1.0)];
        let r = combine(outcomes().into_iter(), 0.6, 0.25, BootstrapFallback::ReturnUncorrected);
        assert!(r.fallback_used);
        assert_eq!(r.corrected, 0.25);
        let r = combine(outcomes().into_iter(), 0.6, 0.25, BootstrapFallback::UnconditionalBias);
        assert!(r.fallback_used);
        assert!((r.h_star - 0.2).abs() < 1e-15);
        assert!((r.corrected - 0.3).abs() < 1e-15);
        assert_eq!((r.replicates_other_selection, r.replicates_no_selection), (2, 1));
    }

    #[test]
    fn conditioning_excludes_other_selections() {
        let outcomes = vec![
            (Some((0.6, 0.5)), 1.0),
            (Some((0.3, -0.9)), 1.0),
            (None, 1.0),
            (Some((0.6, 0.3)), 1.0),
        ];
        let r = combine(outcomes.into_iter(), 0.6, 0.35, BootstrapFallback::ReturnUncorrected);
        assert!((r.h_star - 0.4).abs() < 1e-15);
        assert_eq!(r.replicates_matching_selection, 2);
        assert!((r.corrected - 0.3).abs() < 1e-15);
    }

    #[test]
    fn requires_a_selection() {
        let t = TrialData::new(vec![0.8, 0.7], vec![1, 0], vec![1, 0]).unwrap();
        let sel = SelectionOutcome::none(crate::selection::SelectionRule::Rule1, vec![]);
        let cfg = BootstrapConfig::new(100, BootstrapFallback::ReturnUncorrected, SeedSpec::new(0, 0)).unwrap();
        let selector = Selector::new(RuleSpec::Rule1);
        assert!(bootstrap_correct(&t, &cutoffs(&[0.3]), &selector, &sel, 0.0, &cfg).is_err());
    }
}
