//! Synthetic LOBSTER sessions.
//!
//! The simulator keeps a dense book (every tick occupied) of `levels +
//! hidden_levels` prices per side with a one-tick spread. Three kinds of
//! event drive it:
//!
//! * price moves: a marketable order executes the whole best queue on one side
//!   and a new order is posted on the other side at the vacated price, so the
//!   mid moves by exactly one tick. An upward move happens with probability
//!   `0.5 + imbalance_coef · imb`, where `imb` is the bid/ask volume imbalance
//!   over the first `imbalance_levels` levels;
//! * limit submissions and cancellations inside the visible levels. A level
//!   holding `n` orders receives a submission with probability `n₀ / (n + n₀)`
//!   and a cancellation otherwise, which keeps queues near `n₀` orders.
//!   Cancellations never empty a level;
//! * refills beyond the visible levels, which are not recorded, as in a
//!   level-`L` LOBSTER extract.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use lobscope_core::ingest::{
    lobster_file_names, write_session, EventType, MessageRecord, Quote, SnapshotRecord, Timestamp, NANOS_PER_SEC,
};
use lobscope_core::{Price, Qty, Side};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::{mix_seed, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub ticker: String,
    pub date: String,
    /// Mean events per second.
    pub event_rate: f64,
    pub tick: Price,
    /// Best bid of the initial book; the best ask sits one tick above.
    pub initial_bid: Price,
    /// Levels per side written to the orderbook file.
    pub levels: usize,
    /// Extra levels per side simulated beyond the written ones.
    pub hidden_levels: usize,
    /// Equilibrium number of orders per level (`n₀`).
    pub orders_per_level: usize,
    pub lot: Qty,
    /// Order sizes are uniform on `lot × {1, …, max_lots}`.
    pub max_lots: u64,
    /// Probability that an event is a price move.
    pub move_prob: f64,
    /// Imbalance feedback; 0 gives a driftless mid independent of the book.
    pub imbalance_coef: f64,
    pub imbalance_levels: usize,
    /// Session open, seconds after midnight.
    pub open_secs: u64,
    pub session_secs: u64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            ticker: "SYN".into(),
            date: "2024-01-02".into(),
            event_rate: 5.0,
            tick: 100,
            initial_bid: 500_000,
            levels: 10,
            hidden_levels: 10,
            orders_per_level: 3,
            lot: 100,
            max_lots: 5,
            move_prob: 0.1,
            imbalance_coef: 0.0,
            imbalance_levels: 3,
            open_secs: 34_200,
            session_secs: 23_400,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Invalid(format!("synthetic spec: {m}")));
        if !(self.event_rate > 0.0 && self.event_rate.is_finite()) {
            return bad("event rate must be positive");
        }
        if self.tick <= 0 || self.initial_bid <= 0 || self.initial_bid % self.tick != 0 {
            return bad("initial bid must be a positive multiple of a positive tick");
        }
        if self.initial_bid <= (self.levels + self.hidden_levels) as Price * self.tick {
            return bad("initial bid too close to zero for the simulated depth");
        }
        if self.levels == 0 || self.hidden_levels == 0 {
            return bad("levels and hidden levels must be positive");
        }
        if self.orders_per_level == 0 || self.lot == 0 || self.max_lots == 0 {
            return bad("orders per level, lot and max lots must be positive");
        }
        if !(self.move_prob > 0.0 && self.move_prob < 1.0) {
            return bad("move probability must lie in (0, 1)");
        }
        if !(self.imbalance_coef >= 0.0 && self.imbalance_coef < 0.5) {
            return bad("imbalance coefficient must lie in [0, 0.5)");
        }
        if self.imbalance_levels == 0 || self.imbalance_levels > self.levels {
            return bad("imbalance levels must lie in 1..=levels");
        }
        if self.session_secs == 0 {
            return bad("session length must be positive");
        }
        Ok(())
    }

    pub fn open(&self) -> Timestamp {
        Timestamp::from_secs(self.open_secs)
    }

    pub fn close(&self) -> Timestamp {
        Timestamp::from_secs(self.open_secs + self.session_secs)
    }

    /// LOBSTER message and orderbook file names for this session.
    pub fn file_names(&self) -> (String, String) {
        lobster_file_names(
            &self.ticker,
            &self.date,
            self.open_secs * 1000,
            (self.open_secs + self.session_secs) * 1000,
            self.levels,
        )
    }
}

#[derive(Debug, Clone, Default)]
struct Level {
    orders: VecDeque<(u64, Qty)>,
    volume: Qty,
}

impl Level {
    fn push(&mut self, id: u64, size: Qty) {
        self.orders.push_back((id, size));
        self.volume += size;
    }
}

struct Simulator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    bid: Price,
    ask: Price,
    /// Index 0 is the best level.
    bids: VecDeque<Level>,
    asks: VecDeque<Level>,
    next_id: u64,
    time: u64,
    gap: Exp<f64>,
    messages: Vec<MessageRecord>,
    snapshots: Vec<SnapshotRecord>,
}

impl<'a> Simulator<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let mut sim = Simulator {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            bid: spec.initial_bid,
            ask: spec.initial_bid + spec.tick,
            bids: VecDeque::new(),
            asks: VecDeque::new(),
            next_id: 1,
            time: spec.open().0,
            gap: Exp::new(spec.event_rate).expect("positive rate"),
            messages: Vec::new(),
            snapshots: Vec::new(),
        };
        let depth = spec.levels + spec.hidden_levels;
        for _ in 0..depth {
            let b = sim.fresh_level();
            sim.bids.push_back(b);
            let a = sim.fresh_level();
            sim.asks.push_back(a);
        }
        sim
    }

    fn price(&self, side: Side, level: usize) -> Price {
        let offset = level as Price * self.spec.tick;
        match side {
            Side::Bid => self.bid - offset,
            Side::Ask => self.ask + offset,
        }
    }

    fn size(&mut self) -> Qty {
        self.spec.lot * self.rng.random_range(1..=self.spec.max_lots)
    }

    fn id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn fresh_level(&mut self) -> Level {
        let mut level = Level::default();
        let n = self.rng.random_range(1..=2 * self.spec.orders_per_level - 1);
        for _ in 0..n {
            let (id, size) = (self.id(), self.size());
            level.push(id, size);
        }
        level
    }

    fn levels_mut(&mut self, side: Side) -> &mut VecDeque<Level> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    fn advance_clock(&mut self) {
        let secs: f64 = self.gap.sample(&mut self.rng);
        self.time += ((secs * NANOS_PER_SEC as f64) as u64).max(1);
    }

    fn record(&mut self, event_type: EventType, order_id: u64, size: Qty, price: Price, side: Side) {
        self.messages.push(MessageRecord { time: Timestamp(self.time), event_type, order_id, size, price, side });
        let l = self.spec.levels;
        let mut snap = SnapshotRecord::empty(l);
        for i in 0..l {
            snap.bids[i] = Some(Quote { price: self.price(Side::Bid, i), size: self.bids[i].volume });
            snap.asks[i] = Some(Quote { price: self.price(Side::Ask, i), size: self.asks[i].volume });
        }
        self.snapshots.push(snap);
    }

    fn imbalance(&self) -> f64 {
        let k = self.spec.imbalance_levels;
        let vb: Qty = self.bids.iter().take(k).map(|l| l.volume).sum();
        let va: Qty = self.asks.iter().take(k).map(|l| l.volume).sum();
        (vb as f64 - va as f64) / (vb + va) as f64
    }

    fn submit(&mut self, side: Side, level: usize) {
        let (id, size) = (self.id(), self.size());
        let price = self.price(side, level);
        self.levels_mut(side)[level].push(id, size);
        self.record(EventType::Submit, id, size, price, side);
    }

    /// Cancels part or all of one order without emptying the level; falls
    /// back to a submission when the level is a single one-lot order.
    fn cancel(&mut self, side: Side, level: usize) {
        let lot = self.spec.lot;
        let n = self.levels_mut(side)[level].orders.len();
        let i = self.rng.random_range(0..n);
        let (id, size) = self.levels_mut(side)[level].orders[i];
        let price = self.price(side, level);
        if n > 1 && (size == lot || self.rng.random_bool(0.7)) {
            let q = &mut self.levels_mut(side)[level];
            q.orders.remove(i);
            q.volume -= size;
            self.record(EventType::Delete, id, size, price, side);
        } else if size > lot {
            let cut = lot * self.rng.random_range(1..size / lot);
            let q = &mut self.levels_mut(side)[level];
            q.orders[i].1 -= cut;
            q.volume -= cut;
            self.record(EventType::PartialCancel, id, cut, price, side);
        } else {
            self.submit(side, level);
        }
    }

    /// Sweeps the best queue of `side` and re-quotes the vacated price on the
    /// opposite side. Execution rows share the market order's timestamp.
    fn sweep(&mut self, side: Side) {
        let tick = self.spec.tick;
        let price = self.price(side, 0);
        loop {
            let q = &mut self.levels_mut(side)[0];
            let (id, size) = q.orders.pop_front().expect("levels are never empty");
            q.volume -= size;
            let done = q.orders.is_empty();
            if done {
                self.levels_mut(side).pop_front();
                let fresh = self.fresh_level();
                self.levels_mut(side).push_back(fresh);
                match side {
                    Side::Ask => self.ask += tick,
                    Side::Bid => self.bid -= tick,
                }
            }
            self.record(EventType::ExecuteVisible, id, size, price, side);
            if done {
                break;
            }
        }
        self.advance_clock();
        let other = side.opposite();
        let (id, size) = (self.id(), self.size());
        let mut quote = Level::default();
        quote.push(id, size);
        self.levels_mut(other).push_front(quote);
        self.levels_mut(other).pop_back();
        match other {
            Side::Ask => self.ask = price,
            Side::Bid => self.bid = price,
        }
        self.record(EventType::Submit, id, size, price, other);
    }

    fn run(mut self) -> (Vec<MessageRecord>, Vec<SnapshotRecord>) {
        let close = self.spec.close().0;
        let n0 = self.spec.orders_per_level as f64;
        self.advance_clock();
        self.submit(Side::Bid, 0);
        loop {
            self.advance_clock();
            if self.time > close {
                break;
            }
            if self.rng.random_bool(self.spec.move_prob) {
                let p_up = 0.5 + self.spec.imbalance_coef * self.imbalance();
                let side = if self.rng.random_bool(p_up) { Side::Ask } else { Side::Bid };
                self.sweep(side);
                continue;
            }
            let side = if self.rng.random_bool(0.5) { Side::Bid } else { Side::Ask };
            let level = self.rng.random_range(0..self.spec.levels);
            let n = self.levels_mut(side)[level].orders.len() as f64;
            if self.rng.random_bool(n0 / (n + n0)) {
                self.submit(side, level);
            } else {
                self.cancel(side, level);
            }
        }
        (self.messages, self.snapshots)
    }
}

/// Simulates one session in memory.
pub fn synth_session(spec: &SynthSpec) -> Result<(Vec<MessageRecord>, Vec<SnapshotRecord>)> {
    spec.validate()?;
    Ok(Simulator::new(spec).run())
}

/// Simulates one session and writes its LOBSTER file pair into `dir`.
pub fn synth_generate(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (messages, snapshots) = synth_session(spec)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let (m, s) = spec.file_names();
    let (mp, sp) = (dir.join(m), dir.join(s));
    write_session(&mp, &sp, &messages, &snapshots)?;
    Ok((mp, sp))
}

/// `n` consecutive weekdays starting at `start` (inclusive if a weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Writes one session per (ticker, day) under `root/<ticker>/`. Each session
/// gets its own seed derived from `base.seed`, the ticker and the date, and
/// `coefs[i]` as the imbalance coefficient of `tickers[i]`.
pub fn synth_universe(root: &Path, tickers: &[String], coefs: &[f64], days: &[NaiveDate], base: &SynthSpec) -> Result<()> {
    if tickers.len() != coefs.len() {
        return Err(HarnessError::Invalid("one imbalance coefficient per ticker expected".into()));
    }
    for (ticker, &coef) in tickers.iter().zip(coefs) {
        for day in days {
            let date = day.format("%Y-%m-%d").to_string();
            let spec = SynthSpec {
                ticker: ticker.clone(),
                date: date.clone(),
                imbalance_coef: coef,
                seed: mix_seed(base.seed, &[ticker.as_str(), date.as_str()]),
                ..base.clone()
            };
            synth_generate(&spec, &root.join(ticker))?;
        }
    }
    Ok(())
}
