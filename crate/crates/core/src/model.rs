//! Logistic response model, the exact subset-effect oracle, and an IRLS
//! logistic-regression fitter.
//!
//! The response model is
//! `logit P(y = 1 | x, m) = intercept + biomarker·x + treatment·m + interaction·x·m`
//! with the biomarker `x` on the quantile scale, `x ~ Uniform(0, 1)`. Because
//! the biomarker law is known, the true treatment effect in the subset
//! `{x > c}` is a one-dimensional integral with a closed form in `softplus`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{expit, integrate_adaptive, softplus};
use crate::simulate::TrialData;

/// Coefficients of the logistic response model, on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub intercept: f64,
    pub biomarker: f64,
    pub treatment: f64,
    pub interaction: f64,
}

impl ModelCoefficients {
    pub fn new(intercept: f64, biomarker: f64, treatment: f64, interaction: f64) -> Result<Self> {
        let coef = Self {
            intercept,
            biomarker,
            treatment,
            interaction,
        };
        if coef.as_array().iter().all(|v| v.is_finite()) {
            Ok(coef)
        } else {
            Err(Error::InvalidCoefficients(format!(
                "all four values must be finite, got {:?}",
                coef.as_array()
            )))
        }
    }

    pub fn from_array(values: [f64; 4]) -> Result<Self> {
        Self::new(values[0], values[1], values[2], values[3])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.intercept, self.biomarker, self.treatment, self.interaction]
    }

    /// Linear predictor for a subject with biomarker `x` in arm `arm` (0/1).
    pub fn linear_predictor(&self, x: f64, arm: u8) -> f64 {
        let m = f64::from(arm);
        self.intercept + self.biomarker * x + self.treatment * m + self.interaction * x * m
    }
}

/// The two named magnitude-of-predictive-effect settings, or user coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectSetting {
    MoreOrLess1,
    MoreOrLess2,
    Custom(ModelCoefficients),
}

impl EffectSetting {
    pub fn coefficients(&self) -> ModelCoefficients {
        match self {
            EffectSetting::MoreOrLess1 => ModelCoefficients {
                intercept: -0.4,
                biomarker: 0.0,
                treatment: 0.2,
                interaction: 0.2,
            },
            EffectSetting::MoreOrLess2 => ModelCoefficients {
                intercept: -0.4,
                biomarker: 0.0,
                treatment: 0.2,
                interaction: 0.5,
            },
            EffectSetting::Custom(c) => *c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EffectSetting::MoreOrLess1 => "more_or_less_1",
            EffectSetting::MoreOrLess2 => "more_or_less_2",
            EffectSetting::Custom(_) => "custom",
        }
    }

    /// Parses `more_or_less_1`, `more_or_less_2`, or four comma-separated
    /// coefficients (optionally prefixed with `custom:`).
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "more_or_less_1" => Ok(EffectSetting::MoreOrLess1),
            "more_or_less_2" => Ok(EffectSetting::MoreOrLess2),
            other => {
                let list = other.strip_prefix("custom:").unwrap_or(other);
                let values: Vec<f64> = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        Error::InvalidCoefficients(format!(
                            "expected a named setting or four comma-separated numbers, got `{s}`"
                        ))
                    })?;
                let values: [f64; 4] = values.try_into().map_err(|v: Vec<f64>| {
                    Error::InvalidCoefficients(format!("expected 4 coefficients, got {}", v.len()))
                })?;
                Ok(EffectSetting::Custom(ModelCoefficients::from_array(values)?))
            }
        }
    }
}

impl Serialize for EffectSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            EffectSetting::Custom(c) => {
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry("custom", &c.as_array())?;
                map.end()
            }
            named => s.serialize_str(named.name()),
        }
    }
}

/// Accepts `"more_or_less_1"`, `"more_or_less_2"`, `{"custom": [b0, b1, b2, b3]}`
/// or a bare four-element array.
impl<'de> Deserialize<'de> for EffectSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Custom { custom: [f64; 4] },
            Array([f64; 4]),
        }
        let coef = |v: [f64; 4]| {
            ModelCoefficients::from_array(v)
                .map(EffectSetting::Custom)
                .map_err(serde::de::Error::custom)
        };
        match Repr::deserialize(d).map_err(|_| {
            serde::de::Error::custom(
                "expected \"more_or_less_1\", \"more_or_less_2\" or {\"custom\": [b0, b1, b2, b3]}",
            )
        })? {
            Repr::Name(name) => EffectSetting::parse(&name).map_err(serde::de::Error::custom),
            Repr::Custom { custom } => coef(custom),
            Repr::Array(v) => coef(v),
        }
    }
}

/// Strictly increasing candidate cutoffs on the biomarker quantile scale.
///
/// Each cutoff lies in `[0, 1)`; a cutoff of 0 stands for the full population.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CutoffSet(Vec<f64>);

impl CutoffSet {
    pub fn new(cutoffs: Vec<f64>) -> Result<Self> {
        if cutoffs.is_empty() {
            return Err(Error::InvalidCutoffs("at least one cutoff is required".into()));
        }
        if let Some(c) = cutoffs.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return Err(Error::InvalidCutoffs(format!("cutoff {c} is outside [0, 1)")));
        }
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCutoffs(format!(
                "cutoffs must be strictly increasing, got {cutoffs:?}"
            )));
        }
        Ok(Self(cutoffs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, cutoff: f64) -> Option<usize> {
        self.0.iter().position(|&c| c == cutoff)
    }
}

impl<'de> Deserialize<'de> for CutoffSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        CutoffSet::new(raw).map_err(serde::de::Error::custom)
    }
}

/// P(y = 1 | x, m) under the logistic model.
pub fn response_probability(coef: &ModelCoefficients, x: f64, arm: u8) -> f64 {
    expit(coef.linear_predictor(x, arm))
}

/// Mean of `expit(a + b·x)` over `x ~ Uniform(c, 1)`.
fn mean_expit_over_tail(a: f64, b: f64, c: f64) -> f64 {
    let len = 1.0 - c;
    if (b * len).abs() < 1e-4 {
        // midpoint expansion; the quartic remainder is below 1e-16 here
        let z = a + b * 0.5 * (1.0 + c);
        let p = expit(z);
        let second = p * (1.0 - p) * (1.0 - 2.0 * p);
        p + second * (b * len).powi(2) / 24.0
    } else {
        (softplus(a + b) - softplus(a + b * c)) / (b * len)
    }
}

/// True ORR difference in the subset `{x > cutoff}`, averaged over the
/// uniform biomarker law. A cutoff of 0 gives the full-population effect.
pub fn true_subset_effect(coef: &ModelCoefficients, cutoff: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&cutoff) {
        return Err(Error::EmptySubset(cutoff));
    }
    let exp = mean_expit_over_tail(
        coef.intercept + coef.treatment,
        coef.biomarker + coef.interaction,
        cutoff,
    );
    let ctrl = mean_expit_over_tail(coef.intercept, coef.biomarker, cutoff);
    Ok(exp - ctrl)
}

/// The same subset effect computed by adaptive Gauss–Kronrod quadrature to an
/// absolute tolerance of 1e-12. Used to cross-check [`true_subset_effect`].
pub fn true_subset_effect_quadrature(coef: &ModelCoefficients, cutoff: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&cutoff) {
        return Err(Error::EmptySubset(cutoff));
    }
    let integral = integrate_adaptive(
        |x| response_probability(coef, x, 1) - response_probability(coef, x, 0),
        cutoff,
        1.0,
        1e-12 * (1.0 - cutoff),
    );
    Ok(integral / (1.0 - cutoff))
}

/// Result of a maximum-likelihood logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLogistic {
    pub coefficients: ModelCoefficients,
    /// Present only for converged fits.
    pub standard_errors: Option<[f64; 4]>,
    pub converged: bool,
    pub iterations: usize,
}

const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;
const SEPARATION_COEF_BOUND: f64 = 15.0;
const SEPARATION_PROB_EPS: f64 = 1e-10;

/// Fits the four-coefficient model by IRLS (Newton–Raphson on the logistic
/// log-likelihood). Never fails: separation, rank deficiency and the
/// iteration cap all yield `converged == false`.
pub fn fit_logistic(trial: &TrialData) -> FittedLogistic {
    let rows: Vec<[f64; 4]> = trial
        .biomarker
        .iter()
        .zip(&trial.arm)
        .map(|(&x, &m)| {
            let m = f64::from(m);
            [1.0, x, m, x * m]
        })
        .collect();
    let y = &trial.response;

    let mut beta = [0.0f64; 4];
    let not_converged = |beta: [f64; 4], iterations| FittedLogistic {
        coefficients: coef_from(beta),
        standard_errors: None,
        converged: false,
        iterations,
    };

    for iter in 1..=IRLS_MAX_ITER {
        let (info, score) = information_and_score(&rows, y, &beta);
        let Some(chol) = cholesky(&info) else {
            return not_converged(beta, iter);
        };
        let step = chol_solve(&chol, &score);
        for (b, s) in beta.iter_mut().zip(step) {
            *b += s;
        }
        if !beta.iter().all(|b| b.is_finite()) || separated(&rows, &beta) {
            return not_converged(beta, iter);
        }
        if step.iter().all(|s| s.abs() < IRLS_TOL) {
            let (info, _) = information_and_score(&rows, y, &beta);
            let Some(chol) = cholesky(&info) else {
                return not_converged(beta, iter);
            };
            let mut se = [0.0; 4];
            for (j, se_j) in se.iter_mut().enumerate() {
                let mut e = [0.0; 4];
                e[j] = 1.0;
                *se_j = chol_solve(&chol, &e)[j].sqrt();
            }
            return FittedLogistic {
                coefficients: coef_from(beta),
                standard_errors: Some(se),
                converged: true,
                iterations: iter,
            };
        }
    }
    not_converged(beta, IRLS_MAX_ITER)
}

fn coef_from(beta: [f64; 4]) -> ModelCoefficients {
    ModelCoefficients {
        intercept: beta[0],
        biomarker: beta[1],
        treatment: beta[2],
        interaction: beta[3],
    }
}

fn separated(rows: &[[f64; 4]], beta: &[f64; 4]) -> bool {
    if beta.iter().any(|b| b.abs() > SEPARATION_COEF_BOUND) {
        return true;
    }
    rows.iter().any(|r| {
        let p = expit(dot(r, beta));
        !(SEPARATION_PROB_EPS..=1.0 - SEPARATION_PROB_EPS).contains(&p)
    })
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn information_and_score(rows: &[[f64; 4]], y: &[u8], beta: &[f64; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
    let mut info = [[0.0; 4]; 4];
    let mut score = [0.0; 4];
    for (r, &yi) in rows.iter().zip(y) {
        let p = expit(dot(r, beta));
        let w = p * (1.0 - p);
        let resid = f64::from(yi) - p;
        for i in 0..4 {
            score[i] += r[i] * resid;
            for j in 0..=i {
                info[i][j] += w * r[i] * r[j];
            }
        }
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            info[i][j] = info[j][i];
        }
    }
    (info, score)
}

/// Lower-triangular Cholesky factor, or `None` if the matrix is not
/// numerically positive definite.
fn cholesky(a: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut l = [[0.0; 4]; 4];
    let scale = (0..4).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for i in 0..4 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[[f64; 4]; 4], b: &[f64; 4]) -> [f64; 4] {
    let mut z = [0.0; 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let mut s = z[i];
        for k in (i + 1)..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}
