//! Mid-price returns, the class threshold α and three-class labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnVariant {
    /// `(m̄^{(k)}_{t+h} − m_t)/m_t` with a centred `(2k+1)`-point average.
    Smoothed,
    /// Mean of the next `h` mids against `m_t`.
    Fi2010,
    /// Mean of the next `h` mids against the mean of the last `h` (including `m_t`).
    DeepLob,
}

impl ReturnVariant {
    pub fn name(self) -> &'static str {
        match self {
            ReturnVariant::Smoothed => "smoothed",
            ReturnVariant::Fi2010 => "fi2010",
            ReturnVariant::DeepLob => "deeplob",
        }
    }
}

impl fmt::Display for ReturnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReturnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ReturnVariant::Smoothed, ReturnVariant::Fi2010, ReturnVariant::DeepLob]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown return variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnSpec {
    pub variant: ReturnVariant,
    pub horizon: usize,
    /// Smoothing half-width, smoothed variant only.
    pub smoothing: usize,
}

impl ReturnSpec {
    pub const DEFAULT_SMOOTHING: usize = 5;

    pub fn smoothed(horizon: usize) -> Self {
        ReturnSpec { variant: ReturnVariant::Smoothed, horizon, smoothing: Self::DEFAULT_SMOOTHING }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Events needed before and after the anchor.
    pub fn stencil(&self) -> (usize, usize) {
        match self.variant {
            ReturnVariant::Smoothed => {
                (self.smoothing.saturating_sub(self.horizon), self.horizon + self.smoothing)
            }
            ReturnVariant::Fi2010 => (0, self.horizon),
            ReturnVariant::DeepLob => (self.horizon - 1, self.horizon),
        }
    }
}

/// Multi-horizon default for the sequence decoder.
pub const DEFAULT_HORIZONS: [usize; 5] = [10, 20, 30, 50, 100];

/// Return at anchor `t`, or `None` when the stencil leaves the series.
pub fn compute_return(mids: &[f64], spec: &ReturnSpec, t: usize) -> Option<f64> {
    let (before, after) = spec.stencil();
    if t < before || t + after >= mids.len() || spec.horizon == 0 {
        return None;
    }
    let h = spec.horizon;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let m = mids[t];
    Some(match spec.variant {
        ReturnVariant::Smoothed => {
            let centre = t + h;
            let smoothed = mean(&mids[centre - spec.smoothing..=centre + spec.smoothing]);
            (smoothed - m) / m
        }
        ReturnVariant::Fi2010 => (mean(&mids[t + 1..=t + h]) - m) / m,
        ReturnVariant::DeepLob => {
            let past = mean(&mids[t + 1 - h..=t]);
            (mean(&mids[t + 1..=t + h]) - past) / past
        }
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// placed at probabilities `(i−1)/(n−1)`. `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThreshold {
    pub alpha: f64,
    pub horizon: usize,
    pub window: Option<usize>,
    pub ticker: Option<String>,
    /// The quantile formula gave α ≤ 0 and a fallback was used.
    pub fallback: bool,
}

impl ClassThreshold {
    pub fn new(alpha: f64, horizon: usize) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::Invalid(format!("class threshold must be positive, got {alpha}")));
        }
        Ok(ClassThreshold { alpha, horizon, window: None, ticker: None, fallback: false })
    }

    pub fn with_context(mut self, ticker: impl Into<String>, window: usize) -> Self {
        self.ticker = Some(ticker.into());
        self.window = Some(window);
        self
    }

    pub fn classify(&self, r: f64) -> Class {
        classify(r, self.alpha)
    }
}

/// `α̂ = (|Q̂(0.33)| + Q̂(0.66)) / 2` over training returns.
///
/// When that is not positive, half the smallest nonzero |r| is used instead
/// (machine epsilon if every return is zero) and `fallback` is set.
pub fn alpha_hat(returns: &[f64], horizon: usize) -> Result<ClassThreshold> {
    if returns.is_empty() {
        return Err(Error::Invalid("no training returns to fit the class threshold".into()));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Invalid("non-finite training return".into()));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (quantile(&sorted, 0.33).abs() + quantile(&sorted, 0.66)) / 2.0;
    if alpha > 0.0 {
        return Ok(ClassThreshold { alpha, horizon, window: None, ticker: None, fallback: false });
    }
    let min_nonzero = sorted.iter().map(|r| r.abs()).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
    let alpha = if min_nonzero.is_finite() { min_nonzero / 2.0 } else { f64::EPSILON };
    Ok(ClassThreshold { alpha, horizon, window: None, ticker: None, fallback: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    Down = 0,
    Flat = 1,
    Up = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Down, Class::Flat, Class::Up];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Class::Down => "down",
            Class::Flat => "flat",
            Class::Up => "up",
        }
    }
}

/// Down below −α, up above +α, flat on the closed interval between.
pub fn classify(r: f64, alpha: f64) -> Class {
    if r < -alpha {
        Class::Down
    } else if r > alpha {
        Class::Up
    } else {
        Class::Flat
    }
}

pub fn classify_returns(returns: &[f64], alpha: f64) -> Vec<Class> {
    returns.iter().map(|&r| classify(r, alpha)).collect()
}

/// Labels for one anchor at one or several horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub anchor: usize,
    pub classes: Vec<Class>,
    pub returns: Vec<f64>,
}

/// Returns at every horizon of `specs`, or `None` if any stencil leaves the series.
pub fn multi_horizon_returns(mids: &[f64], specs: &[ReturnSpec], t: usize) -> Option<Vec<f64>> {
    specs.iter().map(|s| compute_return(mids, s, t)).collect()
}

pub fn label_anchor(mids: &[f64], specs: &[ReturnSpec], thresholds: &[ClassThreshold], t: usize) -> Option<LabelSet> {
    let returns = multi_horizon_returns(mids, specs, t)?;
    let classes = returns.iter().zip(thresholds).map(|(&r, th)| th.classify(r)).collect();
    Some(LabelSet { anchor: t, classes, returns })
}

pub fn validate_horizons(horizons: &[usize]) -> Result<()> {
    if horizons.is_empty() || horizons[0] == 0 || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!("horizons must be positive and strictly increasing: {horizons:?}")));
    }
    Ok(())
}

/// Class frequencies `(down, flat, up)` of a label list.
pub fn class_counts(labels: &[Class]) -> [usize; 3] {
    let mut counts = [0; 3];
    for c in labels {
        counts[c.index()] += 1;
    }
    counts
}
