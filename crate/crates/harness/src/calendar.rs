//! Trading calendar and the non-overlapping rolling-window layout.

use chrono::{Datelike, NaiveDate};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{mix_seed, HarnessError, Result};

/// Sorted, de-duplicated trading days (`YYYY-MM-DD`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub days: Vec<String>,
}

impl Calendar {
    pub fn new<S: Into<String>>(days: impl IntoIterator<Item = S>) -> Self {
        let mut days: Vec<String> = days.into_iter().map(Into::into).collect();
        days.sort();
        days.dedup();
        Calendar { days }
    }

    pub fn from_dates(dates: &[NaiveDate]) -> Self {
        Calendar::new(dates.iter().map(|d| d.format("%Y-%m-%d").to_string()))
    }

    /// Days grouped by ISO week. Dates that do not parse fall back to
    /// consecutive runs of five.
    pub fn weeks(&self) -> Vec<Vec<String>> {
        let parsed: Option<Vec<NaiveDate>> =
            self.days.iter().map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok()).collect();
        let Some(parsed) = parsed else {
            return self.days.chunks(5).map(<[String]>::to_vec).collect();
        };
        let mut weeks: Vec<Vec<String>> = Vec::new();
        let mut current = None;
        for (day, date) in self.days.iter().zip(parsed) {
            let key = (date.iso_week().year(), date.iso_week().week());
            if current != Some(key) {
                weeks.push(Vec::new());
                current = Some(key);
            }
            weeks.last_mut().expect("pushed").push(day.clone());
        }
        weeks
    }

    pub fn position(&self, day: &str) -> Option<usize> {
        self.days.binary_search_by(|d| d.as_str().cmp(day)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowLayout {
    /// Leading weeks only used to seed the rolling standardisation.
    pub warmup_weeks: usize,
    pub train_weeks: usize,
    pub test_weeks: usize,
    /// Validation days drawn from the training weeks of each window.
    pub val_days: usize,
}

impl Default for WindowLayout {
    fn default() -> Self {
        WindowLayout { warmup_weeks: 0, train_weeks: 4, test_weeks: 1, val_days: 5 }
    }
}

impl WindowLayout {
    pub fn window_weeks(&self) -> usize {
        self.train_weeks + self.test_weeks
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub index: usize,
    /// Training days (validation days removed).
    pub train_days: Vec<String>,
    pub val_days: Vec<String>,
    pub test_days: Vec<String>,
}

impl WindowSpec {
    /// Training and validation days in calendar order.
    pub fn train_val_days(&self) -> Vec<String> {
        let mut all: Vec<String> = self.train_days.iter().chain(&self.val_days).cloned().collect();
        all.sort();
        all
    }
}

/// Cuts the calendar into `⌊weeks / 5⌋` windows of four training-validation
/// weeks and one test week, counting weeks after any warm-up. Validation days
/// are a seeded draw per window.
pub fn build_windows(calendar: &Calendar, layout: &WindowLayout, seed: u64) -> Result<Vec<WindowSpec>> {
    if layout.train_weeks == 0 || layout.test_weeks == 0 {
        return Err(HarnessError::Invalid("windows need training and test weeks".into()));
    }
    let weeks = calendar.weeks();
    let usable = weeks.len().saturating_sub(layout.warmup_weeks);
    let count = usable / layout.window_weeks();
    if count == 0 {
        return Err(HarnessError::Invalid(format!(
            "calendar has {} weeks; need {} warm-up plus {} per window",
            weeks.len(),
            layout.warmup_weeks,
            layout.window_weeks()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let first = layout.warmup_weeks + w * layout.window_weeks();
        let train_val: Vec<String> = weeks[first..first + layout.train_weeks].concat();
        let test_days = weeks[first + layout.train_weeks..first + layout.window_weeks()].concat();
        if layout.val_days >= train_val.len() {
            return Err(HarnessError::Invalid(format!(
                "window {w}: {} validation days out of {} training days",
                layout.val_days,
                train_val.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &["validation", &w.to_string()]));
        let mut picked = sample(&mut rng, train_val.len(), layout.val_days).into_vec();
        picked.sort_unstable();
        let val_days: Vec<String> = picked.iter().map(|&i| train_val[i].clone()).collect();
        let train_days = train_val.iter().filter(|d| !val_days.contains(d)).cloned().collect();
        out.push(WindowSpec { index: w, train_days, val_days, test_days });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::business_days;

    fn calendar(weeks: usize) -> Calendar {
        let start = NaiveDate::from_ymd_opt(2019, 1, 7).unwrap();
        Calendar::from_dates(&business_days(start, 5 * weeks))
    }

    #[test]
    fn window_counts() {
        let layout = WindowLayout::default();
        assert_eq!(build_windows(&calendar(55), &layout, 0).unwrap().len(), 11);
        assert_eq!(build_windows(&calendar(59), &layout, 0).unwrap().len(), 11);
        assert_eq!(build_windows(&calendar(10), &layout, 0).unwrap().len(), 2);
        assert!(build_windows(&calendar(4), &layout, 0).is_err());
        let warm = WindowLayout { warmup_weeks: 1, ..layout };
        assert_eq!(build_windows(&calendar(55), &warm, 0).unwrap().len(), 10);
        assert_eq!(build_windows(&calendar(56), &warm, 0).unwrap().len(), 11);
    }

    #[test]
    fn windows_partition_their_weeks() {
        let cal = calendar(21);
        let layout = WindowLayout { warmup_weeks: 1, ..WindowLayout::default() };
        let windows = build_windows(&cal, &layout, 3).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for w in &windows {
            assert_eq!(w.val_days.len(), 5);
            assert_eq!(w.train_days.len(), 15);
            assert_eq!(w.test_days.len(), 5);
            let last_train = w.train_val_days().last().unwrap().clone();
            assert!(w.test_days.iter().all(|d| *d > last_train));
            for d in w.train_val_days().iter().chain(&w.test_days) {
                assert!(seen.insert(d.clone()), "{d} in two windows");
                assert!(cal.position(d).unwrap() >= 5, "warm-up day used");
            }
        }
    }

    #[test]
    fn validation_draw_is_seeded() {
        let cal = calendar(11);
        let a = build_windows(&cal, &WindowLayout::default(), 9).unwrap();
        let b = build_windows(&cal, &WindowLayout::default(), 9).unwrap();
        let c = build_windows(&cal, &WindowLayout::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.iter().map(|w| &w.val_days).collect::<Vec<_>>(), c.iter().map(|w| &w.val_days).collect::<Vec<_>>());
    }

    #[test]
    fn weeks_follow_iso_weeks() {
        let cal = Calendar::new(["2024-01-04", "2024-01-05", "2024-01-08", "2024-01-02"]);
        assert_eq!(cal.weeks(), vec![vec!["2024-01-02", "2024-01-04", "2024-01-05"], vec!["2024-01-08"]]);
        let odd = Calendar::new(["d1", "d2", "d3", "d4", "d5", "d6"]);
        assert_eq!(odd.weeks().len(), 2);
    }
}
