//! Checks against oracles that share no code with the library: Monte Carlo
//! from a different sampler, and exhaustive enumeration of small resample
//! spaces.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use cutoff_bias::abc::{draw_prior, AbcPriorSpec};
use cutoff_bias::bootstrap::{bootstrap_correct, bootstrap_correct_weighted, resample_trial, BootstrapConfig, BootstrapFallback};
use cutoff_bias::estimators::{mle_selected_estimate, summarize_subsets, SubsetSummary};
use cutoff_bias::model::{CutoffSet, ModelCoefficients};
use cutoff_bias::selection::{posterior_prob_exceeds, Rule2Params, RuleSpec, Selector};
use cutoff_bias::simulate::{SeedSpec, TrialData};

fn summary(er: u32, en: u32, cr: u32, cn: u32) -> SubsetSummary {
    SubsetSummary {
        cutoff: 0.3,
        exp_responders: er,
        exp_non_responders: en,
        ctrl_responders: cr,
        ctrl_non_responders: cn,
        prevalence: 0.7,
    }
}

fn beta_monte_carlo(s: &SubsetSummary, threshold: f64, draws: usize, seed: u64) -> f64 {
    let e = Beta::new(1.0 + f64::from(s.exp_responders), 1.0 + f64::from(s.exp_non_responders)).unwrap();
    let c = Beta::new(1.0 + f64::from(s.ctrl_responders), 1.0 + f64::from(s.ctrl_non_responders)).unwrap();
    let mut rng = SeedSpec::new(seed, 0).rng();
    let hits = (0..draws)
        .filter(|_| e.sample(&mut rng) - c.sample(&mut rng) > threshold)
        .count();
    hits as f64 / draws as f64
}

#[test]
fn posterior_matches_beta_monte_carlo() {
    let params = Rule2Params::default();
    let s = summary(14, 6, 6, 14);
    let quad = posterior_prob_exceeds(&s, &params, params.quadrature_resolution).unwrap();
    let mc = beta_monte_carlo(&s, 0.15, 10_000_000, 11);
    assert!((quad - mc).abs() < 1e-3, "quadrature {quad} vs Monte Carlo {mc}");
}

#[test]
fn posterior_matches_monte_carlo_on_uneven_arms_and_negative_threshold() {
    let params = Rule2Params {
        effect_threshold: -0.1,
        ..Rule2Params::default()
    };
    let s = summary(3, 5, 1, 8);
    let quad = posterior_prob_exceeds(&s, &params, params.quadrature_resolution).unwrap();
    let mc = beta_monte_carlo(&s, -0.1, 2_000_000, 12);
    assert!((quad - mc).abs() < 2e-3, "quadrature {quad} vs Monte Carlo {mc}");
}

/// Two subjects per arm. Arm 1 is experimental.
fn tiny_trial() -> TrialData {
    TrialData::new(vec![0.75, 0.35, 0.55, 0.85], vec![1, 1, 0, 0], vec![1, 0, 0, 1]).unwrap()
}

/// Every ordered with-replacement draw of each arm, weight 1/16.
fn enumerate(trial: &TrialData) -> Vec<(TrialData, f64)> {
    let exp: Vec<usize> = (0..trial.len()).filter(|&i| trial.arm[i] == 1).collect();
    let ctrl: Vec<usize> = (0..trial.len()).filter(|&i| trial.arm[i] == 0).collect();
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            let idx = [exp[a / 2], exp[a % 2], ctrl[b / 2], ctrl[b % 2]];
            let t = TrialData::new(
                idx.iter().map(|&i| trial.biomarker[i]).collect(),
                idx.iter().map(|&i| trial.arm[i]).collect(),
                idx.iter().map(|&i| trial.response[i]).collect(),
            )
            .unwrap();
            out.push((t, 1.0 / 16.0));
        }
    }
    out
}

/// Rule 1 written out by hand: largest defined difference, ties to the
/// smaller cutoff.
fn hand_rule1(t: &TrialData, cutoffs: &[f64]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &c in cutoffs {
        let rate = |arm: u8| {
            let ys: Vec<f64> = (0..t.len())
                .filter(|&i| t.arm[i] == arm && t.biomarker[i] > c)
                .map(|i| f64::from(t.response[i]))
                .collect();
            (!ys.is_empty()).then(|| ys.iter().sum::<f64>() / ys.len() as f64)
        };
        if let (Some(e), Some(k)) = (rate(1), rate(0)) {
            if best.is_none_or(|(_, d)| e - k > d) {
                best = Some((c, e - k));
            }
        }
    }
    best
}

#[test]
fn bootstrap_conditional_mean_equals_enumeration_with_two_cutoffs() {
    let trial = tiny_trial();
    let cut = [0.5, 0.8];
    let cutoffs = CutoffSet::new(cut.to_vec()).unwrap();
    let selector = Selector::new(RuleSpec::Rule1);
    let summaries = summarize_subsets(&trial, &cutoffs);
    let selection = selector.select(&summaries);
    let estimate = mle_selected_estimate(&summaries, &selection).unwrap().unwrap();
    let (observed_cut, observed_est) = hand_rule1(&trial, &cut).unwrap();
    assert_eq!(selection.selected_cutoff, Some(observed_cut));
    assert_eq!(estimate, observed_est);

    let space = enumerate(&trial);
    let (mut sum, mut n) = (0.0, 0.0);
    for (t, _) in &space {
        if let Some((c, d)) = hand_rule1(t, &cut) {
            if c == observed_cut {
                sum += d;
                n += 1.0;
            }
        }
    }
    let h_star = sum / n;
    let res = bootstrap_correct_weighted(&space, &cutoffs, &selector, &selection, estimate, BootstrapFallback::ReturnUncorrected)
        .unwrap();
    assert!((res.h_star - h_star).abs() < 1e-12, "{} vs {h_star}", res.h_star);
    assert_eq!(res.corrected, 2.0 * estimate - res.h_star);
    assert_eq!(
        res.replicates_matching_selection + res.replicates_other_selection + res.replicates_no_selection,
        16
    );

    // the Monte Carlo bootstrap converges to the same conditional mean
    let config = BootstrapConfig::new(40_000, BootstrapFallback::ReturnUncorrected, SeedSpec::new(5, 0)).unwrap();
    let mc = bootstrap_correct(&trial, &cutoffs, &selector, &selection, estimate, &config).unwrap();
    assert!((mc.h_star - h_star).abs() < 0.01, "{} vs {h_star}", mc.h_star);
}

#[test]
fn resampling_draws_each_subject_uniformly_within_its_arm() {
    // three experimental subjects, two controls; distinct biomarkers identify subjects
    let trial = TrialData::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![1, 1, 1, 0, 0], vec![0, 1, 0, 1, 0]).unwrap();
    let reps = 100_000u64;
    let mut counts = [0usize; 5];
    for r in 0..reps {
        let t = resample_trial(&trial, SeedSpec::new(9, r)).unwrap();
        assert_eq!(t.arm_size(1), 3);
        assert_eq!(t.arm_size(0), 2);
        for i in 0..t.len() {
            let k = ((t.biomarker[i] * 10.0).round() as usize) - 1;
            assert_eq!(t.arm[i], trial.arm[k]);
            assert_eq!(t.response[i], trial.response[k]);
            counts[k] += 1;
        }
    }
    // each slot of an arm of size m picks a given member with probability 1/m
    for (k, &count) in counts.iter().enumerate() {
        let (m, slots) = if k < 3 { (3.0, 3.0) } else { (2.0, 2.0) };
        let freq = count as f64 / (reps as f64 * slots);
        assert!((freq - 1.0 / m).abs() < 0.01, "subject {k}: {freq}");
    }
}

fn moments(spec: &AbcPriorSpec, draws: u64, seed: u64) -> ([f64; 4], [f64; 4]) {
    let samples: Vec<[f64; 4]> = (0..draws)
        .map(|j| draw_prior(spec, SeedSpec::new(seed, j)).unwrap().as_array())
        .collect();
    let n = draws as f64;
    let mut mean = [0.0; 4];
    let mut var = [0.0; 4];
    for k in 0..4 {
        mean[k] = samples.iter().map(|s| s[k]).sum::<f64>() / n;
        var[k] = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
    }
    (mean, var)
}

#[test]
fn standard_normal_prior_moments() {
    let (mean, var) = moments(&AbcPriorSpec::StandardNormal, 100_000, 21);
    for k in 0..4 {
        assert!(mean[k].abs() < 0.02, "{mean:?}");
        assert!((var[k] - 1.0).abs() < 0.02, "{var:?}");
    }
}

#[test]
fn true_centered_prior_moments() {
    let coefficients = ModelCoefficients::new(-0.4, 0.0, 0.2, 0.2).unwrap();
    let spec = AbcPriorSpec::TrueCentered {
        coefficients,
        variance: 0.2,
    };
    let (mean, var) = moments(&spec, 100_000, 22);
    for k in 0..4 {
        assert!((mean[k] - coefficients.as_array()[k]).abs() < 0.01, "{mean:?}");
        assert!((var[k] - 0.2).abs() < 0.01, "{var:?}");
    }
}

#[test]
fn logit_fitted_prior_uses_standard_errors_as_spread() {
    let trial = cutoff_bias::simulate::generate_trial(
        &ModelCoefficients::new(-0.4, 0.3, 0.2, 0.5).unwrap(),
        200,
        SeedSpec::new(23, 0),
        Default::default(),
    );
    let fit = cutoff_bias::model::fit_logistic(&trial);
    assert!(fit.converged);
    let se = fit.standard_errors.unwrap();
    let centre = fit.coefficients.as_array();
    let (mean, var) = moments(&AbcPriorSpec::LogitFitted(fit), 100_000, 24);
    for k in 0..4 {
        assert!((mean[k] - centre[k]).abs() < 0.02 * se[k].max(1.0), "{mean:?} vs {centre:?}");
        assert!((var[k].sqrt() / se[k] - 1.0).abs() < 0.01, "{var:?} vs {se:?}");
    }
}

#[test]
fn uniform_biomarker_sampler_is_unbiased() {
    // sanity check of the sampler the Monte Carlo oracles above rely on
    let mut rng = SeedSpec::new(30, 0).rng();
    let n = 1_000_000;
    let mean = (0..n).map(|_| rng.random::<f64>()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 2e-3);
}
