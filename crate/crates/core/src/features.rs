//! Order book representations over a look-back window of `T` events.
//!
//! A session is first reduced to one [`Frame`] per retained event (L2 levels,
//! mid-relative tick volumes and optionally queue slots). Windows are then cut
//! from the frame sequence. Window tensors are stored oldest event first, so
//! row `r` of a window anchored at `t` holds event `t − (T−1) + r` (τ = T−1−r).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::book::{relative_tick_grid, replay_session, tick_grid_around, BookState, TickGrid};
use crate::ingest::{CleanSession, MessageRecord, Quote, SnapshotRecord};
use crate::{Error, Price, Qty, Result, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    RawLob,
    OrderFlow,
    Volume,
    VolumeL3,
}

impl Representation {
    pub const ALL: [Representation; 4] =
        [Representation::RawLob, Representation::OrderFlow, Representation::Volume, Representation::VolumeL3];

    pub fn name(self) -> &'static str {
        match self {
            Representation::RawLob => "raw-lob",
            Representation::OrderFlow => "order-flow",
            Representation::Volume => "volume",
            Representation::VolumeL3 => "volume-l3",
        }
    }

    /// Per-event shape (without the leading `T`).
    pub fn frame_shape(self, levels: usize, window: usize, depth: usize) -> Vec<usize> {
        match self {
            Representation::RawLob => vec![4 * levels],
            Representation::OrderFlow => vec![2 * levels],
            Representation::Volume => vec![window, 2],
            Representation::VolumeL3 => vec![window, 2, depth],
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown representation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub levels: usize,
    pub window: usize,
    /// Queue depth for the L3 slots; 0 skips them.
    pub depth: usize,
    pub grid: TickGrid,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { levels: 10, window: 20, depth: 10, grid: TickGrid::CENT }
    }
}

/// Per-event summary that every representation is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub mid_doubled: Price,
    /// `L` levels per side; absent levels extrapolated one tick per level
    /// beyond the deepest quote with size 0.
    pub asks: Vec<Quote>,
    pub bids: Vec<Quote>,
    pub extrapolated: usize,
    /// `s^{(j)}_x` at index `2j + x`, `x = 0` bid, `x = 1` ask.
    pub volume: Vec<u32>,
    /// Queue slots at index `(2j + x)·D + d`.
    pub slots: Vec<u32>,
}

fn fill_levels(quotes: &[Option<Quote>], side: Side, levels: usize, tick: Price) -> (Vec<Quote>, usize) {
    let mut out = Vec::with_capacity(levels);
    let mut extrapolated = 0;
    let step = match side {
        Side::Ask => tick,
        Side::Bid => -tick,
    };
    for l in 0..levels {
        match quotes.get(l).copied().flatten() {
            Some(q) => out.push(q),
            None => {
                let prev: Option<Quote> = out.last().copied();
                let price = prev.map_or(0, |q| q.price + step);
                out.push(Quote { price, size: 0 });
                extrapolated += 1;
            }
        }
    }
    (out, extrapolated)
}

fn to_u32(v: Qty) -> u32 {
    u32::try_from(v).unwrap_or(u32::MAX)
}

impl Frame {
    /// Builds a frame from a live book, including queue slots when `cfg.depth > 0`.
    pub fn from_book(book: &BookState, cfg: &FrameConfig) -> Result<Frame> {
        let l2 = book.l2(cfg.levels);
        let mut frame = Frame::from_levels(&l2, cfg, |side, price| book.tick_volume(side, price))?;
        if cfg.depth > 0 {
            let (pb, pa) = relative_tick_grid(book, cfg.window, cfg.grid)?;
            frame.slots = Vec::with_capacity(2 * cfg.window * cfg.depth);
            for j in 0..cfg.window {
                for (side, price) in [(Side::Bid, pb[j]), (Side::Ask, pa[j])] {
                    frame.slots.extend(book.queue_slots(side, price, cfg.depth).into_iter().map(to_u32));
                }
            }
        }
        Ok(frame)
    }

    /// Builds a frame from an L2 snapshot alone (no queue slots).
    pub fn from_snapshot(snap: &SnapshotRecord, cfg: &FrameConfig) -> Result<Frame> {
        Frame::from_levels(snap, cfg, |side, price| {
            snap.side(side).iter().flatten().filter(|q| q.price == price).map(|q| q.size).sum()
        })
    }

    fn from_levels<F>(l2: &SnapshotRecord, cfg: &FrameConfig, volume_at: F) -> Result<Frame>
    where
        F: Fn(Side, Price) -> Qty,
    {
        let (bid, ask) = match (l2.best_bid(), l2.best_ask()) {
            (Some(b), Some(a)) => (b.price, a.price),
            _ => return Err(Error::OneSided),
        };
        let (asks, ea) = fill_levels(&l2.asks, Side::Ask, cfg.levels, cfg.grid.tick);
        let (bids, eb) = fill_levels(&l2.bids, Side::Bid, cfg.levels, cfg.grid.tick);
        let (pb, pa) = tick_grid_around(bid, ask, cfg.window, cfg.grid)?;
        let mut volume = Vec::with_capacity(2 * cfg.window);
        for j in 0..cfg.window {
            volume.push(to_u32(volume_at(Side::Bid, pb[j])));
            volume.push(to_u32(volume_at(Side::Ask, pa[j])));
        }
        Ok(Frame { mid_doubled: bid + ask, asks, bids, extrapolated: ea + eb, volume, slots: Vec::new() })
    }

    pub fn mid(&self) -> f64 {
        self.mid_doubled as f64 / 2.0
    }

    /// `(p_a^{(l)}, v_a^{(l)}, p_b^{(l)}, v_b^{(l)})` for `l = 1..L`, prices in dollars.
    pub fn raw_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.asks.len());
        for (a, b) in self.asks.iter().zip(&self.bids) {
            out.extend([price_dollars(a.price), a.size as f64, price_dollars(b.price), b.size as f64]);
        }
        out
    }
}

pub fn price_dollars(p: Price) -> f64 {
    p as f64 / 10_000.0
}

/// Multi-level order flow between consecutive frames, `(aOF^{(l)}, bOF^{(l)})`
/// for `l = 1..L`.
pub fn order_flow_vector(prev: &Frame, cur: &Frame) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * cur.asks.len());
    for l in 0..cur.asks.len() {
        let (a0, a1) = (prev.asks[l], cur.asks[l]);
        let (b0, b1) = (prev.bids[l], cur.bids[l]);
        let aof = if a1.price > a0.price {
            -(a0.size as f64)
        } else if a1.price == a0.price {
            a1.size as f64 - a0.size as f64
        } else {
            a1.size as f64
        };
        let bof = if b1.price > b0.price {
            b1.size as f64
        } else if b1.price == b0.price {
            b1.size as f64 - b0.size as f64
        } else {
            -(b0.size as f64)
        };
        out.push(aof);
        out.push(bof);
    }
    out
}

/// `OFI^{(l)} = bOF^{(l)} − aOF^{(l)}` from an order flow vector.
pub fn ofi(flow: &[f64]) -> Vec<f64> {
    flow.chunks_exact(2).map(|c| c[1] - c[0]).collect()
}

/// Running count / mean / sum of squared deviations, mergeable across days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }
}

/// Per-feature mean and (population) standard deviation used for z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero spread; they are centred but not scaled.
    pub constant: Vec<bool>,
}

impl RollingStats {
    pub const DAYS: usize = 5;

    /// Combines the moments of the prior trading days (exactly [`Self::DAYS`] expected).
    pub fn from_days(days: &[Moments]) -> Result<Self> {
        if days.len() < Self::DAYS {
            return Err(Error::InsufficientHistory { needed: Self::DAYS, available: days.len() });
        }
        let dim = days[0].mean.len();
        let mut total = Moments::new(dim);
        for d in &days[days.len() - Self::DAYS..] {
            total.merge(d);
        }
        RollingStats::from_moments(&total)
    }

    pub fn from_moments(m: &Moments) -> Result<Self> {
        if m.count == 0 {
            return Err(Error::InsufficientHistory { needed: 1, available: 0 });
        }
        let std: Vec<f64> = m.m2.iter().map(|s| (s / m.count as f64).sqrt()).collect();
        let constant = std.iter().map(|&s| s.is_nan() || s <= 0.0).collect();
        Ok(RollingStats { mean: m.mean.clone(), std, constant })
    }

    /// Identity transform of the given width.
    pub fn identity(dim: usize) -> Self {
        RollingStats { mean: vec![0.0; dim], std: vec![1.0; dim], constant: vec![false; dim] }
    }

    pub fn standardize(&self, x: &[f64], out: &mut Vec<f32>) {
        for (i, &v) in x.iter().enumerate() {
            let z = if self.constant[i] { v - self.mean[i] } else { (v - self.mean[i]) / self.std[i] };
            out.push(z as f32);
        }
    }

    pub fn constant_count(&self) -> usize {
        self.constant.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowFlags {
    /// Absent levels replaced by extrapolated prices within the window.
    pub extrapolated_levels: usize,
    pub constant_features: usize,
    /// Volume window held no liquidity; gray-scale scaling skipped.
    pub all_zero: bool,
}

/// One normalized look-back window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub representation: Representation,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub anchor: usize,
    /// Divisor applied by the gray-scale normalization (volume kinds only).
    pub scale: Option<f64>,
    pub flags: WindowFlags,
}

/// Frames of one cleaned session, one per order book clock index.
#[derive(Debug, Clone)]
pub struct SessionFrames {
    pub ticker: String,
    pub date: String,
    pub config: FrameConfig,
    pub frames: Vec<Frame>,
}

impl SessionFrames {
    /// Replays the raw stream and summarises the book at every retained row.
    pub fn extract(
        messages: &[MessageRecord],
        snapshots: &[SnapshotRecord],
        clean: &CleanSession,
        config: FrameConfig,
    ) -> Result<SessionFrames> {
        let rows = clean.rows();
        let mut frames = Vec::with_capacity(rows.len());
        let mut next = 0;
        let mut failure = None;
        replay_session(messages, snapshots, config.levels, false, |row, book| {
            if failure.is_some() || next >= rows.len() || rows[next] != row {
                return;
            }
            next += 1;
            match Frame::from_book(book, &config) {
                Ok(f) => frames.push(f),
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(SessionFrames { ticker: clean.ticker.clone(), date: clean.date.clone(), config, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn mids(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::mid).collect()
    }

    /// Moments of the raw-LOB features over the whole session.
    pub fn raw_moments(&self) -> Moments {
        let mut m = Moments::new(4 * self.config.levels);
        for f in &self.frames {
            m.push(&f.raw_vector());
        }
        m
    }

    /// Moments of the order flow features over every event with a predecessor.
    pub fn order_flow_moments(&self) -> Moments {
        let mut m = Moments::new(2 * self.config.levels);
        for w in self.frames.windows(2) {
            m.push(&order_flow_vector(&w[0], &w[1]));
        }
        m
    }

    /// Earliest anchor at which a window of `representation` with length `t_len` exists.
    pub fn first_anchor(representation: Representation, t_len: usize) -> usize {
        match representation {
            Representation::OrderFlow => t_len,
            _ => t_len.saturating_sub(1),
        }
    }

    fn check_anchor(&self, representation: Representation, anchor: usize, t_len: usize) -> Result<()> {
        if t_len == 0 {
            return Err(Error::Invalid("window length must be positive".into()));
        }
        if anchor >= self.frames.len() {
            return Err(Error::Invalid(format!("anchor {anchor} beyond session of {} events", self.frames.len())));
        }
        let needed = Self::first_anchor(representation, t_len);
        if anchor < needed {
            return Err(Error::InsufficientHistory { needed, available: anchor });
        }
        Ok(())
    }

    pub fn raw_lob(&self, anchor: usize, t_len: usize, stats: &RollingStats) -> Result<FeatureWindow> {
        self.check_anchor(Representation::RawLob, anchor, t_len)?;
        let levels = self.config.levels;
        let mut data = Vec::with_capacity(t_len * 4 * levels);
        let mut flags = WindowFlags { constant_features: stats.constant_count(), ..Default::default() };
        for f in &self.frames[anchor + 1 - t_len..=anchor] {
            flags.extrapolated_levels += f.extrapolated;
            stats.standardize(&f.raw_vector(), &mut data);
        }
        Ok(FeatureWindow {
            representation: Representation::RawLob,
            shape: vec![t_len, 4 * levels],
            data,
            anchor,
            scale: None,
            flags,
        })
    }

    pub fn order_flow(&self, anchor: usize, t_len: usize, stats: &RollingStats) -> Result<FeatureWindow> {
        self.check_anchor(Representation::OrderFlow, anchor, t_len)?;
        let levels = self.config.levels;
        let mut data = Vec::with_capacity(t_len * 2 * levels);
        let mut flags = WindowFlags { constant_features: stats.constant_count(), ..Default::default() };
        for i in anchor + 1 - t_len..=anchor {
            flags.extrapolated_levels += self.frames[i].extrapolated;
            stats.standardize(&order_flow_vector(&self.frames[i - 1], &self.frames[i]), &mut data);
        }
        Ok(FeatureWindow {
            representation: Representation::OrderFlow,
            shape: vec![t_len, 2 * levels],
            data,
            anchor,
            scale: None,
            flags,
        })
    }

    /// Volume window `(T, W, 2)` or, with `l3`, `(T, W, 2, D)`, divided by its maximum.
    pub fn volume(&self, anchor: usize, t_len: usize, l3: bool) -> Result<FeatureWindow> {
        let representation = if l3 { Representation::VolumeL3 } else { Representation::Volume };
        self.check_anchor(representation, anchor, t_len)?;
        let (w, d) = (self.config.window, self.config.depth);
        if l3 && d == 0 {
            return Err(Error::Invalid("frames were extracted without queue slots".into()));
        }
        let mut raw: Vec<u32> = Vec::with_capacity(t_len * 2 * w * if l3 { d } else { 1 });
        for f in &self.frames[anchor + 1 - t_len..=anchor] {
            raw.extend_from_slice(if l3 { &f.slots } else { &f.volume });
        }
        let (data, scale, all_zero) = gray_scale(&raw);
        let mut shape = vec![t_len, w, 2];
        if l3 {
            shape.push(d);
        }
        Ok(FeatureWindow {
            representation,
            shape,
            data,
            anchor,
            scale,
            flags: WindowFlags { all_zero, ..Default::default() },
        })
    }

    pub fn window(
        &self,
        representation: Representation,
        anchor: usize,
        t_len: usize,
        stats: Option<&RollingStats>,
    ) -> Result<FeatureWindow> {
        let need = || Error::Invalid(format!("{representation} needs rolling statistics"));
        match representation {
            Representation::RawLob => self.raw_lob(anchor, t_len, stats.ok_or_else(need)?),
            Representation::OrderFlow => self.order_flow(anchor, t_len, stats.ok_or_else(need)?),
            Representation::Volume => self.volume(anchor, t_len, false),
            Representation::VolumeL3 => self.volume(anchor, t_len, true),
        }
    }
}

/// Divides by the maximum entry; all-zero input is returned unscaled.
pub fn gray_scale(raw: &[u32]) -> (Vec<f32>, Option<f64>, bool) {
    let max = raw.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return (vec![0.0; raw.len()], None, true);
    }
    let m = max as f64;
    (raw.iter().map(|&v| (v as f64 / m) as f32).collect(), Some(m), false)
}

/// Flattens one `(W, 2)` volume frame to the gray-scale strip
/// `(s_b^{(W)}, …, s_b^{(1)}, s_a^{(1)}, …, s_a^{(W)})`.
pub fn volume_strip(volume: &[u32]) -> Vec<u32> {
    let w = volume.len() / 2;
    let mut out: Vec<u32> = (0..w).rev().map(|j| volume[2 * j]).collect();
    out.extend((0..w).map(|j| volume[2 * j + 1]));
    out
}
