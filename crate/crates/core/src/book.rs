//! Event-sourced L3 order book.
//!
//! Each side is an ordered map from price to a FIFO queue of resting orders.
//! Only the top `L` price levels are tracked: liquidity that falls out of the
//! range is dropped and, when a price re-enters, its queue is rebuilt as one
//! aggregated order holding the snapshot's visible volume.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ingest::{EventType, MessageRecord, Quote, SnapshotRecord};
use crate::{Error, Price, Qty, Result, Side};

/// Ids handed to aggregated orders never collide with exchange ids.
pub const SYNTHETIC_ID_BASE: u64 = 1 << 63;

pub fn is_synthetic(id: u64) -> bool {
    id >= SYNTHETIC_ID_BASE
}

/// Price grid {kϑ}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickGrid {
    pub tick: Price,
}

impl TickGrid {
    /// One cent in LOBSTER price units.
    pub const CENT: TickGrid = TickGrid { tick: 100 };

    pub fn new(tick: Price) -> Result<Self> {
        if tick <= 0 {
            return Err(Error::Invalid(format!("tick size must be positive, got {tick}")));
        }
        Ok(TickGrid { tick })
    }

    pub fn contains(&self, price: Price) -> bool {
        price.rem_euclid(self.tick) == 0
    }

    pub fn check(&self, price: Price) -> Result<()> {
        if self.contains(price) {
            Ok(())
        } else {
            Err(Error::OffGrid { price, tick: self.tick })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RestingOrder {
    pub id: u64,
    pub size: Qty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BookFlags {
    pub crosses: usize,
    pub halts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookState {
    levels: usize,
    bids: BTreeMap<Price, VecDeque<RestingOrder>>,
    asks: BTreeMap<Price, VecDeque<RestingOrder>>,
    index: HashMap<u64, (Side, Price)>,
    next_synthetic: u64,
    pub flags: BookFlags,
}

impl BookState {
    pub fn new(levels: usize) -> Self {
        BookState {
            levels,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            index: HashMap::new(),
            next_synthetic: SYNTHETIC_ID_BASE,
            flags: BookFlags::default(),
        }
    }

    /// Book whose levels are each a single aggregated order.
    pub fn from_snapshot(snap: &SnapshotRecord) -> Self {
        let mut book = BookState::new(snap.levels());
        for side in [Side::Bid, Side::Ask] {
            for q in snap.side(side).iter().flatten() {
                if q.size > 0 {
                    book.insert_synthetic(side, q.price, q.size);
                }
            }
        }
        book
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn side_map(&self, side: Side) -> &BTreeMap<Price, VecDeque<RestingOrder>> {
        match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        }
    }

    fn side_map_mut(&mut self, side: Side) -> &mut BTreeMap<Price, VecDeque<RestingOrder>> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    /// Occupied prices from best to worst.
    pub fn prices(&self, side: Side) -> Box<dyn Iterator<Item = Price> + '_> {
        match side {
            Side::Bid => Box::new(self.bids.keys().rev().copied()),
            Side::Ask => Box::new(self.asks.keys().copied()),
        }
    }

    pub fn depth(&self, side: Side) -> usize {
        self.side_map(side).len()
    }

    pub fn order_count(&self) -> usize {
        self.index.len()
    }

    pub fn best(&self, side: Side) -> Option<Quote> {
        let (price, queue) = match side {
            Side::Bid => self.bids.last_key_value()?,
            Side::Ask => self.asks.first_key_value()?,
        };
        Some(Quote { price: *price, size: queue_volume(queue) })
    }

    pub fn best_bid(&self) -> Option<Quote> {
        self.best(Side::Bid)
    }

    pub fn best_ask(&self) -> Option<Quote> {
        self.best(Side::Ask)
    }

    /// `l`-th level (1-based) of one side.
    pub fn level(&self, side: Side, l: usize) -> Option<Quote> {
        if l == 0 {
            return None;
        }
        let price = self.prices(side).nth(l - 1)?;
        Some(Quote { price, size: self.tick_volume(side, price) })
    }

    /// Twice the mid-price, exact in integer units.
    pub fn mid_doubled(&self) -> Option<Price> {
        Some(self.best_bid()?.price + self.best_ask()?.price)
    }

    pub fn mid(&self) -> Option<f64> {
        self.mid_doubled().map(|m| m as f64 / 2.0)
    }

    /// Volume resting at one price, 0 if unoccupied.
    pub fn tick_volume(&self, side: Side, price: Price) -> Qty {
        self.side_map(side).get(&price).map_or(0, queue_volume)
    }

    pub fn queue(&self, side: Side, price: Price) -> Vec<RestingOrder> {
        self.side_map(side).get(&price).map(|q| q.iter().copied().collect()).unwrap_or_default()
    }

    /// Queue sizes at `price` cut at depth `d`: the first `d−1` orders, then
    /// the sum of everything behind them. Empty slots are zero.
    pub fn queue_slots(&self, side: Side, price: Price, d: usize) -> Vec<Qty> {
        let mut slots = vec![0; d];
        if d == 0 {
            return slots;
        }
        if let Some(queue) = self.side_map(side).get(&price) {
            for (k, o) in queue.iter().enumerate() {
                slots[k.min(d - 1)] += o.size;
            }
        }
        slots
    }

    /// L2 view of the first `levels` levels in snapshot layout.
    pub fn l2(&self, levels: usize) -> SnapshotRecord {
        let mut snap = SnapshotRecord::empty(levels);
        for side in [Side::Bid, Side::Ask] {
            let map = self.side_map(side);
            let quotes = self.prices(side).take(levels).map(|p| Some(Quote { price: p, size: queue_volume(&map[&p]) }));
            let slot = match side {
                Side::Bid => &mut snap.bids,
                Side::Ask => &mut snap.asks,
            };
            for (l, q) in quotes.enumerate() {
                slot[l] = q;
            }
        }
        snap
    }

    fn insert_synthetic(&mut self, side: Side, price: Price, size: Qty) {
        let id = self.next_synthetic;
        self.next_synthetic += 1;
        self.side_map_mut(side).entry(price).or_default().push_back(RestingOrder { id, size });
        self.index.insert(id, (side, price));
    }

    /// Sets the size of one resting order, for tests that need to corrupt a book.
    pub fn set_order_size(&mut self, id: u64, size: Qty) -> bool {
        let Some(&(side, price)) = self.index.get(&id) else { return false };
        let queue = self.side_map_mut(side).get_mut(&price).expect("indexed price exists");
        match queue.iter_mut().find(|o| o.id == id) {
            Some(o) => {
                o.size = size;
                true
            }
            None => false,
        }
    }

    fn reduce_order(&mut self, event: usize, id: u64, size: Qty) -> Result<()> {
        let (side, price) = self.index[&id];
        let map = self.side_map_mut(side);
        let queue = map.get_mut(&price).expect("indexed price exists");
        let pos = queue.iter().position(|o| o.id == id).expect("indexed order exists");
        let remaining = queue[pos].size;
        if size > remaining {
            return Err(Error::SizeExceeded { event, order_id: id, requested: size, remaining });
        }
        if size == remaining {
            queue.remove(pos);
            if queue.is_empty() {
                map.remove(&price);
            }
            self.index.remove(&id);
        } else {
            queue[pos].size -= size;
        }
        Ok(())
    }

    fn delete_order(&mut self, id: u64) {
        let (side, price) = self.index.remove(&id).expect("indexed order");
        let map = self.side_map_mut(side);
        let queue = map.get_mut(&price).expect("indexed price exists");
        queue.retain(|o| o.id != id);
        if queue.is_empty() {
            map.remove(&price);
        }
    }

    /// Consumes `size` from the front of the queue at `price`.
    pub fn execute_fifo(&mut self, event: usize, side: Side, price: Price, size: Qty) -> Result<()> {
        let available = self.tick_volume(side, price);
        if size > available {
            return Err(Error::SizeExceeded { event, order_id: 0, requested: size, remaining: available });
        }
        let map = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        let queue = map.get_mut(&price).expect("positive volume");
        let mut left = size;
        while left > 0 {
            let front = queue.front_mut().expect("volume checked");
            if front.size <= left {
                left -= front.size;
                let id = front.id;
                queue.pop_front();
                self.index.remove(&id);
            } else {
                front.size -= left;
                left = 0;
            }
        }
        if queue.is_empty() {
            map.remove(&price);
        }
        Ok(())
    }

    /// Removes `size` from aggregated orders at `price`, back to front.
    fn consume_synthetic(&mut self, side: Side, price: Price, size: Qty) -> bool {
        let map = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        let Some(queue) = map.get_mut(&price) else { return false };
        let available: Qty = queue.iter().filter(|o| is_synthetic(o.id)).map(|o| o.size).sum();
        if available < size {
            return false;
        }
        let mut left = size;
        for o in queue.iter_mut().rev().filter(|o| is_synthetic(o.id)) {
            let take = o.size.min(left);
            o.size -= take;
            left -= take;
            if left == 0 {
                break;
            }
        }
        let index = &mut self.index;
        queue.retain(|o| {
            let keep = o.size > 0;
            if !keep {
                index.remove(&o.id);
            }
            keep
        });
        if queue.is_empty() {
            map.remove(&price);
        }
        true
    }

    /// Worst tracked price on a side, if the side holds its full `L` levels.
    fn range_limit(&self, side: Side) -> Option<Price> {
        if self.depth(side) < self.levels {
            None
        } else {
            self.prices(side).nth(self.levels - 1)
        }
    }

    fn outside_range(&self, side: Side, price: Price) -> bool {
        match self.range_limit(side) {
            Some(limit) => match side {
                Side::Bid => price < limit,
                Side::Ask => price > limit,
            },
            None => false,
        }
    }

    /// Applies one message. `event` is only used to label errors.
    pub fn apply(&mut self, event: usize, msg: &MessageRecord) -> Result<()> {
        let side = msg.side;
        match msg.event_type {
            EventType::Submit => {
                if self.index.contains_key(&msg.order_id) {
                    return Err(Error::DuplicateOrder { event, order_id: msg.order_id });
                }
                if msg.size > 0 {
                    self.side_map_mut(side)
                        .entry(msg.price)
                        .or_default()
                        .push_back(RestingOrder { id: msg.order_id, size: msg.size });
                    self.index.insert(msg.order_id, (side, msg.price));
                }
            }
            EventType::PartialCancel | EventType::Delete | EventType::ExecuteVisible => {
                if self.index.contains_key(&msg.order_id) {
                    if msg.event_type == EventType::Delete {
                        self.delete_order(msg.order_id);
                    } else {
                        self.reduce_order(event, msg.order_id, msg.size)?;
                    }
                } else if msg.event_type == EventType::ExecuteVisible && self.tick_volume(side, msg.price) > 0 {
                    self.execute_fifo(event, side, msg.price, msg.size)?;
                } else if !self.consume_synthetic(side, msg.price, msg.size)
                    && !(self.tick_volume(side, msg.price) == 0 && self.outside_range(side, msg.price))
                {
                    return Err(Error::UnknownOrder { event, order_id: msg.order_id, side, price: msg.price });
                }
            }
            EventType::ExecuteHidden => {}
            EventType::Cross => self.flags.crosses += 1,
            EventType::Halt => self.flags.halts += 1,
        }
        Ok(())
    }

    /// Trims depth beyond the snapshot's `L`-th level and rebuilds prices
    /// that re-entered the tracked range from beyond the current worst level.
    pub fn sync_range(&mut self, snap: &SnapshotRecord) {
        for side in [Side::Bid, Side::Ask] {
            let quotes = snap.side(side);
            if let Some(Some(last)) = quotes.get(self.levels.saturating_sub(1)).filter(|_| quotes.len() >= self.levels) {
                let drop: Vec<Price> = match side {
                    Side::Bid => self.bids.range(..last.price).map(|(p, _)| *p).collect(),
                    Side::Ask => self.asks.range(last.price + 1..).map(|(p, _)| *p).collect(),
                };
                for p in drop {
                    let queue = self.side_map_mut(side).remove(&p).expect("collected key");
                    for o in queue {
                        self.index.remove(&o.id);
                    }
                }
            }
            let worst = self.prices(side).last();
            for q in quotes.iter().flatten() {
                let beyond = match (side, worst) {
                    (_, None) => true,
                    (Side::Bid, Some(w)) => q.price < w,
                    (Side::Ask, Some(w)) => q.price > w,
                };
                if beyond && q.size > 0 && !self.side_map(side).contains_key(&q.price) {
                    self.insert_synthetic(side, q.price, q.size);
                }
            }
        }
    }
}

fn queue_volume(queue: &VecDeque<RestingOrder>) -> Qty {
    queue.iter().map(|o| o.size).sum()
}

/// Relative tick prices around the mid: `(π_b^{(1..W)}, π_a^{(1..W)})`.
///
/// When the mid sits on the grid both first ticks equal it; otherwise they
/// are the grid points half a tick either side.
pub fn relative_tick_grid(state: &BookState, window: usize, grid: TickGrid) -> Result<(Vec<Price>, Vec<Price>)> {
    let (bid, ask) = match (state.best_bid(), state.best_ask()) {
        (Some(b), Some(a)) => (b.price, a.price),
        _ => return Err(Error::OneSided),
    };
    tick_grid_around(bid, ask, window, grid)
}

/// [`relative_tick_grid`] from the best quotes alone.
pub fn tick_grid_around(bid: Price, ask: Price, window: usize, grid: TickGrid) -> Result<(Vec<Price>, Vec<Price>)> {
    grid.check(bid)?;
    grid.check(ask)?;
    let sum = bid + ask;
    let (b1, a1) = if sum.rem_euclid(2 * grid.tick) == 0 {
        (sum / 2, sum / 2)
    } else {
        ((sum - grid.tick) / 2, (sum + grid.tick) / 2)
    };
    let bids = (0..window as Price).map(|j| b1 - j * grid.tick).collect();
    let asks = (0..window as Price).map(|j| a1 + j * grid.tick).collect();
    Ok((bids, asks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDiff {
    pub side: Side,
    /// 1-based level.
    pub level: usize,
    pub expected: Option<Quote>,
    pub actual: Option<Quote>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    /// Event index of the first mismatch, filled in by replay drivers.
    pub event: Option<usize>,
    pub diffs: Vec<LevelDiff>,
}

impl ReconcileReport {
    pub fn matches(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Compares the book's first `levels` levels against a snapshot.
pub fn reconcile(state: &BookState, snap: &SnapshotRecord, levels: usize) -> ReconcileReport {
    let derived = state.l2(levels);
    let mut diffs = Vec::new();
    for side in [Side::Ask, Side::Bid] {
        let expected = snap.side(side);
        let actual = derived.side(side);
        for l in 0..levels {
            let e = expected.get(l).copied().flatten();
            let a = actual[l];
            if e != a {
                diffs.push(LevelDiff { side, level: l + 1, expected: e, actual: a });
            }
        }
    }
    ReconcileReport { event: None, diffs }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub events: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<ReconcileReport>,
    pub flags: BookFlags,
}

impl ReplaySummary {
    pub fn all_matched(&self) -> bool {
        self.mismatches == 0
    }
}

/// Replays a session from its first snapshot, calling `observe(row, book)`
/// after each row has been applied and synced. Row 0 is the initial state.
pub fn replay_session<F>(
    messages: &[MessageRecord],
    snapshots: &[SnapshotRecord],
    levels: usize,
    check: bool,
    mut observe: F,
) -> Result<ReplaySummary>
where
    F: FnMut(usize, &BookState),
{
    if messages.len() != snapshots.len() {
        return Err(Error::Misaligned(format!("{} messages vs {} snapshots", messages.len(), snapshots.len())));
    }
    let mut summary = ReplaySummary::default();
    let Some(first) = snapshots.first() else { return Ok(summary) };
    let mut book = BookState::from_snapshot(first);
    book.levels = levels;
    observe(0, &book);
    summary.events = 1;
    for row in 1..messages.len() {
        book.apply(row, &messages[row])?;
        book.sync_range(&snapshots[row]);
        if check {
            let mut report = reconcile(&book, &snapshots[row], levels);
            if !report.matches() {
                summary.mismatches += 1;
                if summary.first_mismatch.is_none() {
                    report.event = Some(row);
                    summary.first_mismatch = Some(report);
                }
            }
        }
        observe(row, &book);
        summary.events += 1;
    }
    summary.flags = book.flags;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Timestamp;

    fn msg(event_type: EventType, id: u64, size: Qty, price: Price, side: Side) -> MessageRecord {
        MessageRecord { time: Timestamp(0), event_type, order_id: id, size, price, side }
    }

    fn two_sided(levels: usize) -> BookState {
        let mut snap = SnapshotRecord::empty(levels);
        snap.bids[0] = Some(Quote { price: 1_000_000, size: 500 });
        snap.asks[0] = Some(Quote { price: 1_000_200, size: 400 });
        BookState::from_snapshot(&snap)
    }

    #[test]
    fn submit_at_new_best_bid() {
        let mut book = two_sided(10);
        book.apply(1, &msg(EventType::Submit, 7, 300, 1_000_100, Side::Bid)).unwrap();
        assert_eq!(book.best_bid(), Some(Quote { price: 1_000_100, size: 300 }));
        assert_eq!(book.queue(Side::Bid, 1_000_100), vec![RestingOrder { id: 7, size: 300 }]);
    }

    #[test]
    fn execution_walks_the_queue_in_time_priority() {
        let mut book = BookState::new(10);
        book.apply(0, &msg(EventType::Submit, 1, 60, 1_000_200, Side::Ask)).unwrap();
        book.apply(1, &msg(EventType::Submit, 2, 90, 1_000_200, Side::Ask)).unwrap();
        book.apply(2, &msg(EventType::ExecuteVisible, 99, 100, 1_000_200, Side::Ask)).unwrap();
        assert_eq!(book.queue(Side::Ask, 1_000_200), vec![RestingOrder { id: 2, size: 50 }]);
        assert_eq!(book.order_count(), 1);
    }

    #[test]
    fn partial_cancel_keeps_priority() {
        let mut book = BookState::new(10);
        for id in 1..=3 {
            book.apply(0, &msg(EventType::Submit, id, 100, 500, Side::Bid)).unwrap();
        }
        book.apply(1, &msg(EventType::PartialCancel, 2, 40, 500, Side::Bid)).unwrap();
        let ids: Vec<u64> = book.queue(Side::Bid, 500).iter().map(|o| o.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(book.tick_volume(Side::Bid, 500), 260);
    }

    #[test]
    fn oversized_cancel_is_an_error() {
        let mut book = BookState::new(10);
        book.apply(0, &msg(EventType::Submit, 1, 100, 500, Side::Bid)).unwrap();
        let err = book.apply(3, &msg(EventType::PartialCancel, 1, 101, 500, Side::Bid)).unwrap_err();
        assert!(matches!(err, Error::SizeExceeded { event: 3, remaining: 100, .. }));
    }

    #[test]
    fn unknown_cancel_inside_book_is_an_error() {
        let mut book = BookState::new(10);
        book.apply(0, &msg(EventType::Submit, 1, 100, 500, Side::Bid)).unwrap();
        let err = book.apply(1, &msg(EventType::Delete, 42, 100, 500, Side::Bid)).unwrap_err();
        assert!(matches!(err, Error::UnknownOrder { order_id: 42, .. }));
    }

    #[test]
    fn duplicate_submit_is_an_error() {
        let mut book = BookState::new(10);
        book.apply(0, &msg(EventType::Submit, 1, 100, 500, Side::Bid)).unwrap();
        assert!(book.apply(1, &msg(EventType::Submit, 1, 100, 400, Side::Bid)).is_err());
    }

    #[test]
    fn unknown_cancel_draws_on_aggregated_volume() {
        let mut book = two_sided(10);
        book.apply(1, &msg(EventType::Submit, 5, 100, 1_000_000, Side::Bid)).unwrap();
        book.apply(2, &msg(EventType::PartialCancel, 77, 200, 1_000_000, Side::Bid)).unwrap();
        let q = book.queue(Side::Bid, 1_000_000);
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].size, 300);
        assert_eq!(q[1], RestingOrder { id: 5, size: 100 });
    }

    #[test]
    fn hidden_cross_and_halt_leave_book_unchanged() {
        let mut book = two_sided(10);
        let before = book.l2(10);
        book.apply(1, &msg(EventType::ExecuteHidden, 0, 50, 1_000_100, Side::Bid)).unwrap();
        book.apply(2, &msg(EventType::Cross, 0, 0, 1_000_100, Side::Bid)).unwrap();
        book.apply(3, &msg(EventType::Halt, 0, 0, -1, Side::Bid)).unwrap();
        assert_eq!(book.l2(10), before);
        assert_eq!(book.flags, BookFlags { crosses: 1, halts: 1 });
    }

    #[test]
    fn re_entering_price_becomes_one_aggregated_order() {
        let levels = 2;
        let mut snap = SnapshotRecord::empty(levels);
        snap.bids[0] = Some(Quote { price: 1_000, size: 100 });
        snap.bids[1] = Some(Quote { price: 900, size: 100 });
        snap.asks[0] = Some(Quote { price: 1_100, size: 100 });
        let mut book = BookState::from_snapshot(&snap);
        let best_id = book.queue(Side::Bid, 1_000)[0].id;
        book.apply(1, &msg(EventType::Delete, best_id, 100, 1_000, Side::Bid)).unwrap();
        let mut next = snap.clone();
        next.bids[0] = Some(Quote { price: 900, size: 100 });
        next.bids[1] = Some(Quote { price: 800, size: 450 });
        book.sync_range(&next);
        let q = book.queue(Side::Bid, 800);
        assert_eq!(q.len(), 1);
        assert!(is_synthetic(q[0].id));
        assert_eq!(q[0].size, 450);
        assert!(reconcile(&book, &next, levels).matches());
    }

    #[test]
    fn depth_beyond_range_is_dropped() {
        let mut snap = SnapshotRecord::empty(1);
        snap.bids[0] = Some(Quote { price: 1_000, size: 100 });
        snap.asks[0] = Some(Quote { price: 1_100, size: 100 });
        let mut book = BookState::from_snapshot(&snap);
        book.apply(1, &msg(EventType::Submit, 1, 30, 900, Side::Bid)).unwrap();
        book.sync_range(&snap);
        assert_eq!(book.depth(Side::Bid), 1);
        // later cancel of the dropped order is untracked depth
        book.apply(2, &msg(EventType::Delete, 1, 30, 900, Side::Bid)).unwrap();
    }

    #[test]
    fn grid_off_mid() {
        let mut snap = SnapshotRecord::empty(1);
        snap.bids[0] = Some(Quote { price: 999_900, size: 200 });
        snap.asks[0] = Some(Quote { price: 1_000_200, size: 100 });
        let book = BookState::from_snapshot(&snap);
        let (b, a) = relative_tick_grid(&book, 3, TickGrid::CENT).unwrap();
        assert_eq!(b, vec![1_000_000, 999_900, 999_800]);
        assert_eq!(a, vec![1_000_100, 1_000_200, 1_000_300]);
    }

    #[test]
    fn grid_on_mid() {
        let mut snap = SnapshotRecord::empty(1);
        snap.bids[0] = Some(Quote { price: 1_000_000, size: 200 });
        snap.asks[0] = Some(Quote { price: 1_000_200, size: 100 });
        let book = BookState::from_snapshot(&snap);
        let (b, a) = relative_tick_grid(&book, 3, TickGrid::CENT).unwrap();
        assert_eq!(b[0], 1_000_100);
        assert_eq!(a[0], 1_000_100);
        assert!(b.windows(2).all(|w| w[0] - w[1] == 100));
        assert!(a.windows(2).all(|w| w[1] - w[0] == 100));
    }

    #[test]
    fn grid_needs_both_sides() {
        let mut book = BookState::new(1);
        book.apply(0, &msg(EventType::Submit, 1, 10, 500_000, Side::Bid)).unwrap();
        assert!(matches!(relative_tick_grid(&book, 3, TickGrid::CENT), Err(Error::OneSided)));
    }

    #[test]
    fn empty_book_matches_all_sentinel_snapshot() {
        assert!(reconcile(&BookState::new(10), &SnapshotRecord::empty(10), 10).matches());
    }

    #[test]
    fn queue_slots_aggregate_the_tail() {
        let mut book = BookState::new(10);
        for (id, size) in [(1, 60), (2, 90), (3, 10)] {
            book.apply(0, &msg(EventType::Submit, id, size, 700, Side::Ask)).unwrap();
        }
        assert_eq!(book.queue_slots(Side::Ask, 700, 2), vec![60, 100]);
        assert_eq!(book.queue_slots(Side::Ask, 700, 4), vec![60, 90, 10, 0]);
        assert_eq!(book.queue_slots(Side::Ask, 800, 2), vec![0, 0]);
    }

    #[test]
    fn perturbation_is_reported_at_its_event() {
        let mut snap = SnapshotRecord::empty(2);
        snap.bids[0] = Some(Quote { price: 1_000, size: 100 });
        snap.asks[0] = Some(Quote { price: 1_100, size: 100 });
        let messages: Vec<MessageRecord> = (0..6)
            .map(|i| msg(EventType::Submit, 10 + i, 5, 900, Side::Bid))
            .collect();
        let mut snaps = vec![snap.clone()];
        let mut running = snap.clone();
        for i in 1..6u64 {
            running.bids[1] = Some(Quote { price: 900, size: 5 * i });
            snaps.push(running.clone());
        }
        let clean = replay_session(&messages, &snaps, 2, true, |_, _| {}).unwrap();
        assert!(clean.all_matched());

        let mut corrupted = snaps.clone();
        corrupted[3].bids[1] = Some(Quote { price: 900, size: 999 });
        let summary = replay_session(&messages, &corrupted, 2, true, |_, _| {}).unwrap();
        assert_eq!(summary.first_mismatch.unwrap().event, Some(3));
    }
}
