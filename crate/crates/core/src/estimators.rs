//! Per-subset 2×2 counts and the ORR-difference MLE.

use crate::error::{Error, Result};
use crate::model::CutoffSet;
use crate::selection::SelectionOutcome;
use crate::simulate::TrialData;

/// Response counts for the subset `{x > cutoff}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSummary {
    pub cutoff: f64,
    pub exp_responders: u32,
    pub exp_non_responders: u32,
    pub ctrl_responders: u32,
    pub ctrl_non_responders: u32,
    /// Fraction of all trial subjects falling in the subset.
    pub prevalence: f64,
}

impl SubsetSummary {
    pub fn exp_size(&self) -> u32 {
        self.exp_responders + self.exp_non_responders
    }

    pub fn ctrl_size(&self) -> u32 {
        self.ctrl_responders + self.ctrl_non_responders
    }

    /// True when both arms within the subset are non-empty.
    pub fn is_defined(&self) -> bool {
        self.exp_size() > 0 && self.ctrl_size() > 0
    }

    /// Experimental minus control response rate; `None` if an arm is empty.
    pub fn orr_diff(&self) -> Option<f64> {
        self.is_defined().then(|| {
            f64::from(self.exp_responders) / f64::from(self.exp_size())
                - f64::from(self.ctrl_responders) / f64::from(self.ctrl_size())
        })
    }
}

/// One summary per cutoff, in cutoff order. Membership is strict: `x > c`.
pub fn summarize_subsets(trial: &TrialData, cutoffs: &CutoffSet) -> Vec<SubsetSummary> {
    let n = trial.len() as f64;
    cutoffs
        .as_slice()
        .iter()
        .map(|&cutoff| {
            let mut counts = [[0u32; 2]; 2]; // [arm][response]
            for ((&x, &m), &y) in trial.biomarker.iter().zip(&trial.arm).zip(&trial.response) {
                if x > cutoff {
                    counts[m as usize][y as usize] += 1;
                }
            }
            let size = counts.iter().flatten().sum::<u32>();
            SubsetSummary {
                cutoff,
                exp_responders: counts[1][1],
                exp_non_responders: counts[1][0],
                ctrl_responders: counts[0][1],
                ctrl_non_responders: counts[0][0],
                prevalence: f64::from(size) / n,
            }
        })
        .collect()
}

/// MLE of the selected subset's ORR difference, `None` when nothing was selected.
pub fn mle_selected_estimate(
    summaries: &[SubsetSummary],
    selection: &SelectionOutcome,
) -> Result<Option<f64>> {
    let Some(cutoff) = selection.selected_cutoff else {
        return Ok(None);
    };
    let summary = summaries
        .iter()
        .find(|s| s.cutoff == cutoff)
        .ok_or(Error::InconsistentSelection(cutoff))?;
    summary
        .orr_diff()
        .map(Some)
        .ok_or(Error::UndefinedSummary(cutoff))
}
