//! Automatic proxies for judging decoupling results.

use serde::{Deserialize, Serialize};

use super::metrics::correlation;
use crate::error::{Error, Result};
use crate::imagecore::{Image, LightImage};
use crate::scalar::Scalar;
use crate::triplets::light_saliency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessCriteria {
    /// Content succeeds when its saliency stays below this.
    pub content_saliency_max: f64,
    /// True-light pixels with max channel below this count as dark.
    pub dark_threshold: f64,
    pub dark_mean_max: f64,
    pub correlation_min: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self { content_saliency_max: 0.12, dark_threshold: 0.02, dark_mean_max: 0.05, correlation_min: 0.7 }
    }
}

/// One decoupled image with its ground truth light.
pub struct DecoupleOutcome<'a, S> {
    pub content_pred: &'a Image<S>,
    pub light_pred: &'a LightImage<S>,
    pub light_true: &'a LightImage<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightScore {
    pub dark_mean: f64,
    /// `None` when either image is constant.
    pub correlation: Option<f64>,
}

/// Mean predicted value over pixels dark in the truth, and the correlation
/// between predicted and true light.
pub fn light_score<S: Scalar>(pred: &LightImage<S>, truth: &LightImage<S>, dark_threshold: f64) -> Result<LightScore> {
    pred.as_image().ensure_same_dims(truth.as_image(), "light score")?;
    let tmax = truth.as_image().max_channel();
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, &m) in tmax.iter().enumerate() {
        if m.as_f64() < dark_threshold {
            sum += pred.data()[p * 3..p * 3 + 3].iter().map(|v| v.as_f64()).sum::<f64>();
            count += 3;
        }
    }
    let a: Vec<f64> = pred.data().iter().map(|v| v.as_f64()).collect();
    let b: Vec<f64> = truth.data().iter().map(|v| v.as_f64()).collect();
    Ok(LightScore { dark_mean: if count == 0 { 0.0 } else { sum / count as f64 }, correlation: correlation(&a, &b) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub count: usize,
    /// Percentages in [0, 100].
    pub content: f64,
    pub light: f64,
    pub total: f64,
}

pub fn success_rates<S: Scalar>(outcomes: &[DecoupleOutcome<'_, S>], c: &SuccessCriteria) -> Result<SuccessRates> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no outcomes to score"));
    }
    let (mut content, mut light, mut total) = (0usize, 0usize, 0usize);
    for o in outcomes {
        let ok_c = light_saliency(o.content_pred) < c.content_saliency_max;
        let s = light_score(o.light_pred, o.light_true, c.dark_threshold)?;
        let ok_l = s.dark_mean < c.dark_mean_max && s.correlation.is_some_and(|r| r > c.correlation_min);
        content += usize::from(ok_c);
        light += usize::from(ok_l);
        total += usize::from(ok_c && ok_l);
    }
    let pct = |k: usize| 100.0 * k as f64 / outcomes.len() as f64;
    Ok(SuccessRates { count: outcomes.len(), content: pct(content), light: pct(light), total: pct(total) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub filtered: SuccessRates,
    pub unfiltered: SuccessRates,
}

impl SuccessReport {
    /// Filtered is at least as good on all three rates.
    pub fn ordering_holds(&self) -> bool {
        self.filtered.content >= self.unfiltered.content
            && self.filtered.light >= self.unfiltered.light
            && self.filtered.total >= self.unfiltered.total
    }
}

/// Rates for the filter-accepted subset and for the whole population.
pub fn success_rate_harness<S: Scalar>(
    outcomes: &[DecoupleOutcome<'_, S>],
    accepted: &[bool],
    c: &SuccessCriteria,
) -> Result<SuccessReport> {
    if accepted.len() != outcomes.len() {
        return Err(Error::dims("one acceptance flag per outcome is required"));
    }
    let kept: Vec<DecoupleOutcome<'_, S>> = outcomes
        .iter()
        .zip(accepted)
        .filter(|(_, &a)| a)
        .map(|(o, _)| DecoupleOutcome { content_pred: o.content_pred, light_pred: o.light_pred, light_true: o.light_true })
        .collect();
    Ok(SuccessReport { filtered: success_rates(&kept, c)?, unfiltered: success_rates(outcomes, c)? })
}
