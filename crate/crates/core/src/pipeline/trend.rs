//! Learning-curve summaries used to compare the two fine-tuning arms.

use serde::{Deserialize, Serialize};

use super::phases::MeanCurveRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveTrend {
    /// Mean EE over the first `window` episodes.
    pub start_ee: f64,
    pub start_viol: f64,
    /// Mean EE over the last `window` episodes.
    pub final_ee: f64,
    pub final_viol: f64,
    /// First episode whose trailing `window`-episode mean reaches 95% of
    /// `final_ee`.
    pub episodes_to_95: usize,
}

fn mean(rows: &[MeanCurveRow], f: impl Fn(&MeanCurveRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

pub fn curve_trend(curve: &[MeanCurveRow], window: usize) -> Result<CurveTrend> {
    if window == 0 || curve.len() < window {
        return Err(Error::InsufficientData(format!(
            "curve of {} episodes, window {window}",
            curve.len()
        )));
    }
    let head = &curve[..window];
    let tail = &curve[curve.len() - window..];
    let final_ee = mean(tail, |r| r.reward_mean);
    let target = 0.95 * final_ee;
    // the last window always qualifies, so this never falls through
    let reached = curve
        .windows(window)
        .find(|w| mean(w, |r| r.reward_mean) >= target)
        .map_or(curve[curve.len() - 1].episode, |w| w[window - 1].episode);
    Ok(CurveTrend {
        start_ee: mean(head, |r| r.reward_mean),
        start_viol: mean(head, |r| r.cost_mean),
        final_ee,
        final_viol: mean(tail, |r| r.cost_mean),
        episodes_to_95: reached,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmComparison {
    pub pretrained: CurveTrend,
    pub scratch: CurveTrend,
    pub start_ee_ratio: f64,
    pub start_viol_ratio: f64,
    /// `1 - pretrained / scratch` episodes to 95% of the final EE.
    pub episode_reduction: f64,
}

pub fn compare_arms(pretrained: &[MeanCurveRow], scratch: &[MeanCurveRow], window: usize) -> Result<ArmComparison> {
    let p = curve_trend(pretrained, window)?;
    let s = curve_trend(scratch, window)?;
    Ok(ArmComparison {
        pretrained: p,
        scratch: s,
        start_ee_ratio: p.start_ee / s.start_ee,
        start_viol_ratio: p.start_viol / s.start_viol,
        episode_reduction: 1.0 - p.episodes_to_95 as f64 / s.episodes_to_95 as f64,
    })
}
