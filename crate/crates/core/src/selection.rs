//! Cutoff selection rules.
//!
//! Rule 1 picks the subset with the largest observed ORR difference. Rule 2
//! keeps subsets whose posterior probability of exceeding a minimum effect
//! passes a threshold, then picks the one with the largest prevalence.
//! Either rule selects at most one subset.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::estimators::SubsetSummary;
use crate::numeric::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Rule1,
    Rule2,
}

/// Parameters of the posterior-probability rule. Each arm of each subset
/// gets an independent Beta(prior_alpha, prior_beta) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rule2Params {
    pub effect_threshold: f64,
    pub probability_threshold: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    /// Gauss–Legendre panels used for the posterior integral.
    pub quadrature_resolution: usize,
}

impl Default for Rule2Params {
    fn default() -> Self {
        Self {
            effect_threshold: 0.15,
            probability_threshold: 0.7,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            quadrature_resolution: 32,
        }
    }
}

impl Rule2Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.probability_threshold > 0.0 && self.probability_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "probability_threshold must lie in (0, 1), got {}",
                self.probability_threshold
            )));
        }
        if !(self.prior_alpha > 0.0 && self.prior_beta > 0.0) {
            return Err(Error::InvalidConfig("Beta prior parameters must be positive".into()));
        }
        if !self.effect_threshold.is_finite() || self.quadrature_resolution == 0 {
            return Err(Error::InvalidConfig(
                "effect_threshold must be finite and quadrature_resolution positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetDiagnostic {
    pub cutoff: f64,
    pub orr_diff: Option<f64>,
    pub posterior_probability: Option<f64>,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub selected_cutoff: Option<f64>,
    pub rule: SelectionRule,
    pub diagnostics: Vec<SubsetDiagnostic>,
}

impl SelectionOutcome {
    pub fn none(rule: SelectionRule, diagnostics: Vec<SubsetDiagnostic>) -> Self {
        Self {
            selected_cutoff: None,
            rule,
            diagnostics,
        }
    }

    /// Selection indicator u_k for the candidate at `index`.
    pub fn indicator(&self, index: usize) -> bool {
        match (self.selected_cutoff, self.diagnostics.get(index)) {
            (Some(c), Some(d)) => d.cutoff == c,
            _ => false,
        }
    }
}

/// Max observed ORR difference among subsets with both arms non-empty;
/// ties go to the smaller cutoff.
pub fn select_rule1(summaries: &[SubsetSummary]) -> SelectionOutcome {
    let diagnostics: Vec<SubsetDiagnostic> = summaries
        .iter()
        .map(|s| SubsetDiagnostic {
            cutoff: s.cutoff,
            orr_diff: s.orr_diff(),
            posterior_probability: None,
            eligible: s.is_defined(),
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for d in &diagnostics {
        if let Some(diff) = d.orr_diff {
            // strict comparison keeps the earlier (smaller) cutoff on ties
            if best.is_none_or(|(_, b)| diff > b) {
                best = Some((d.cutoff, diff));
            }
        }
    }
    SelectionOutcome {
        selected_cutoff: best.map(|(c, _)| c),
        rule: SelectionRule::Rule1,
        diagnostics,
    }
}

/// P(p_E − p_C > effect_threshold) under independent Beta posteriors,
/// computed by composite Gauss–Legendre integration of
/// `f_C(p) · P(p_E > p + t)` over `p`.
///
/// Accurate to well below 1e-6 whenever both posterior shape parameters are
/// at least 1 (always true with the default uniform prior).
pub fn posterior_prob_exceeds(
    summary: &SubsetSummary,
    params: &Rule2Params,
    quadrature_resolution: usize,
) -> Result<f64> {
    if !summary.is_defined() {
        return Err(Error::UndefinedSummary(summary.cutoff));
    }
    let exp = (
        params.prior_alpha + f64::from(summary.exp_responders),
        params.prior_beta + f64::from(summary.exp_non_responders),
    );
    let ctrl = (
        params.prior_alpha + f64::from(summary.ctrl_responders),
        params.prior_beta + f64::from(summary.ctrl_non_responders),
    );
    Ok(prob_difference_exceeds(exp, ctrl, params.effect_threshold, quadrature_resolution))
}

fn gl_rule() -> &'static GaussLegendre {
    static RULE: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(10))
}

fn prob_difference_exceeds(exp: (f64, f64), ctrl: (f64, f64), t: f64, panels: usize) -> f64 {
    if t <= -1.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let (ae, be) = exp;
    let (ac, bc) = ctrl;
    let ln_norm = ln_beta(ac, bc);
    let density = |p: f64| ((ac - 1.0) * p.ln() + (bc - 1.0) * (-p).ln_1p() - ln_norm).exp();
    let survival = |z: f64| 1.0 - beta_reg(ae, be, z.clamp(0.0, 1.0));
    // below p = -t the survival term is identically 1
    let (lower, head) = if t < 0.0 { (-t, beta_reg(ac, bc, -t)) } else { (0.0, 0.0) };
    let upper = (1.0 - t).min(1.0);
    let body = gl_rule().integrate_composite(lower, upper, panels, |p| density(p) * survival(p + t));
    (head + body).clamp(0.0, 1.0)
}

/// Rule 2 given precomputed posterior probabilities (one per summary,
/// `None` for ineligible subsets).
pub fn select_rule2_from_probabilities(
    summaries: &[SubsetSummary],
    probabilities: &[Option<f64>],
    params: &Rule2Params,
) -> SelectionOutcome {
    let diagnostics: Vec<SubsetDiagnostic> = summaries
        .iter()
        .zip(probabilities)
        .map(|(s, &p)| SubsetDiagnostic {
            cutoff: s.cutoff,
            orr_diff: s.orr_diff(),
            posterior_probability: p,
            eligible: s.is_defined() && p.is_some(),
        })
        .collect();
    let mut best: Option<(f64, f64)> = None; // (cutoff, prevalence)
    for (s, d) in summaries.iter().zip(&diagnostics) {
        let passes = d.eligible && d.posterior_probability.is_some_and(|p| p > params.probability_threshold);
        if !passes {
            continue;
        }
        let better = match best {
            None => true,
            Some((c, prev)) => s.prevalence > prev || (s.prevalence == prev && s.cutoff < c),
        };
        if better {
            best = Some((s.cutoff, s.prevalence));
        }
    }
    SelectionOutcome {
        selected_cutoff: best.map(|(c, _)| c),
        rule: SelectionRule::Rule2,
        diagnostics,
    }
}

pub fn select_rule2(summaries: &[SubsetSummary], params: &Rule2Params) -> SelectionOutcome {
    let probs: Vec<Option<f64>> = summaries
        .iter()
        .map(|s| posterior_prob_exceeds(s, params, params.quadrature_resolution).ok())
        .collect();
    select_rule2_from_probabilities(summaries, &probs, params)
}

/// A selection rule together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleSpec {
    Rule1,
    Rule2(Rule2Params),
}

impl RuleSpec {
    pub fn rule(&self) -> SelectionRule {
        match self {
            RuleSpec::Rule1 => SelectionRule::Rule1,
            RuleSpec::Rule2(_) => SelectionRule::Rule2,
        }
    }
}

/// Applies a [`RuleSpec`], memoizing Rule 2 posterior probabilities by
/// subset counts. Safe to share across threads; cached values are exactly
/// the values [`posterior_prob_exceeds`] returns, so results do not depend
/// on evaluation order.
#[derive(Debug)]
pub struct Selector {
    spec: RuleSpec,
    cache: RwLock<HashMap<[u32; 4], f64>>,
}

impl Selector {
    pub fn new(spec: RuleSpec) -> Self {
        Self {
            spec,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    pub fn select(&self, summaries: &[SubsetSummary]) -> SelectionOutcome {
        match &self.spec {
            RuleSpec::Rule1 => select_rule1(summaries),
            RuleSpec::Rule2(params) => {
                let probs: Vec<Option<f64>> = summaries
                    .iter()
                    .map(|s| s.is_defined().then(|| self.posterior(s, params)))
                    .collect();
                select_rule2_from_probabilities(summaries, &probs, params)
            }
        }
    }

    fn posterior(&self, s: &SubsetSummary, params: &Rule2Params) -> f64 {
        let key = [s.exp_responders, s.exp_non_responders, s.ctrl_responders, s.ctrl_non_responders];
        if let Some(&p) = self.cache.read().expect("posterior cache poisoned").get(&key) {
            return p;
        }
        let p = posterior_prob_exceeds(s, params, params.quadrature_resolution)
            .expect("defined summaries always have a posterior");
        self.cache.write().expect("posterior cache poisoned").insert(key, p);
        p
    }
}
