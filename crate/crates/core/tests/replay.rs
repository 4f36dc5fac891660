use std::collections::{BTreeMap, HashMap};

use lobscope_core::book::replay_session;
use lobscope_core::ingest::{EventType, MessageRecord, Quote, SnapshotRecord, Timestamp};
use lobscope_core::{Price, Qty, Side};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Price-time priority book kept as plain FIFO vectors.
#[derive(Default)]
struct Oracle {
    bids: BTreeMap<Price, Vec<(u64, Qty)>>,
    asks: BTreeMap<Price, Vec<(u64, Qty)>>,
    live: HashMap<u64, (Side, Price)>,
}

impl Oracle {
    fn side(&mut self, side: Side) -> &mut BTreeMap<Price, Vec<(u64, Qty)>> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    fn best(&self, side: Side) -> Option<Price> {
        match side {
            Side::Bid => self.bids.keys().next_back().copied(),
            Side::Ask => self.asks.keys().next().copied(),
        }
    }

    fn queue(&self, side: Side, price: Price) -> Vec<(u64, Qty)> {
        let map = if side == Side::Bid { &self.bids } else { &self.asks };
        map.get(&price).cloned().unwrap_or_default()
    }

    /// Removes `size` from order `id`, deleting it when exhausted.
    fn reduce(&mut self, id: u64, size: Qty) {
        let (side, price) = self.live[&id];
        let q = self.side(side).get_mut(&price).unwrap();
        let k = q.iter().position(|o| o.0 == id).unwrap();
        q[k].1 -= size;
        let gone = q[k].1 == 0;
        if gone {
            q.remove(k);
        }
        let empty = q.is_empty();
        if gone {
            self.live.remove(&id);
        }
        if empty {
            self.side(side).remove(&price);
        }
    }

    fn snapshot(&self, levels: usize) -> SnapshotRecord {
        let mut s = SnapshotRecord::empty(levels);
        let vol = |q: &Vec<(u64, Qty)>| q.iter().map(|o| o.1).sum();
        for (l, (p, q)) in self.bids.iter().rev().take(levels).enumerate() {
            s.bids[l] = Some(Quote { price: *p, size: vol(q) });
        }
        for (l, (p, q)) in self.asks.iter().take(levels).enumerate() {
            s.asks[l] = Some(Quote { price: *p, size: vol(q) });
        }
        s
    }
}

fn msg(event_type: EventType, order_id: u64, size: Qty, price: Price, side: Side) -> MessageRecord {
    MessageRecord { time: Timestamp(0), event_type, order_id, size, price, side }
}

/// A random valid message stream over `ticks` prices per side and the
/// oracle's snapshot after each message. Row 0 leaves the book empty.
fn stream(seed: u64, events: usize, ticks: i64, levels: usize) -> (Vec<MessageRecord>, Vec<SnapshotRecord>, Vec<Oracle>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut book = Oracle::default();
    let mut messages = vec![msg(EventType::ExecuteHidden, 0, 10, 1_000_000, Side::Bid)];
    let mut snaps = vec![SnapshotRecord::empty(levels)];
    let mut states = Vec::new();
    let mut next_id = 1;
    for _ in 1..events {
        let side = if rng.random_bool(0.5) { Side::Bid } else { Side::Ask };
        let live: Vec<u64> = {
            let mut v: Vec<u64> = book.live.keys().copied().collect();
            v.sort_unstable();
            v
        };
        let op = if live.len() < 4 { 0 } else { rng.random_range(0..5) };
        let m = match op {
            0 => {
                let k = rng.random_range(0..ticks);
                let price = match side {
                    Side::Bid => 1_000_000 - 100 * k,
                    Side::Ask => 1_000_100 + 100 * k,
                };
                let size = rng.random_range(1..500);
                book.side(side).entry(price).or_default().push((next_id, size));
                book.live.insert(next_id, (side, price));
                next_id += 1;
                msg(EventType::Submit, next_id - 1, size, price, side)
            }
            1 | 2 => {
                let id = live[rng.random_range(0..live.len())];
                let (side, price) = book.live[&id];
                let rest = book.queue(side, price).iter().find(|o| o.0 == id).unwrap().1;
                if op == 1 && rest > 1 {
                    let size = rng.random_range(1..rest);
                    book.reduce(id, size);
                    msg(EventType::PartialCancel, id, size, price, side)
                } else {
                    book.reduce(id, rest);
                    msg(EventType::Delete, id, rest, price, side)
                }
            }
            3 => {
                let Some(price) = book.best(side) else { continue };
                let (id, rest) = book.queue(side, price)[0];
                let size = rng.random_range(1..=rest);
                book.reduce(id, size);
                msg(EventType::ExecuteVisible, id, size, price, side)
            }
            _ => {
                // Aggregated execution without an order id walks the queue.
                let Some(price) = book.best(side) else { continue };
                let total: Qty = book.queue(side, price).iter().map(|o| o.1).sum();
                let mut left = rng.random_range(1..=total);
                let size = left;
                while left > 0 {
                    let (id, rest) = book.queue(side, price)[0];
                    let take = rest.min(left);
                    book.reduce(id, take);
                    left -= take;
                }
                msg(EventType::ExecuteVisible, 0, size, price, side)
            }
        };
        messages.push(m);
        snaps.push(book.snapshot(levels));
        states.push(Oracle { bids: book.bids.clone(), asks: book.asks.clone(), live: HashMap::new() });
    }
    (messages, snaps, states)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_matches_a_fifo_oracle(seed in any::<u64>()) {
        let (m, o, states) = stream(seed, 400, 5, 10);
        let mut failures = Vec::new();
        let summary = replay_session(&m, &o, 10, true, |row, book| {
            if row == 0 {
                return;
            }
            let want = &states[row - 1];
            for (side, map) in [(Side::Bid, &want.bids), (Side::Ask, &want.asks)] {
                let prices: Vec<Price> = book.prices(side).collect();
                let mut expected: Vec<Price> = map.keys().copied().collect();
                if side == Side::Bid {
                    expected.reverse();
                }
                if prices != expected {
                    failures.push(format!("row {row} {side:?} prices {prices:?} vs {expected:?}"));
                }
                for (&price, q) in map {
                    let got: Vec<(u64, Qty)> = book.queue(side, price).iter().map(|o| (o.id, o.size)).collect();
                    if &got != q {
                        failures.push(format!("row {row} {side:?} {price}: {got:?} vs {q:?}"));
                    }
                }
            }
        })
        .unwrap();
        prop_assert!(summary.all_matched(), "{:?}", summary.first_mismatch);
        prop_assert!(failures.is_empty(), "{}", failures[..failures.len().min(3)].join("\n"));
    }

    #[test]
    fn queue_slots_partition_the_fifo_queue(seed in any::<u64>(), d in 1usize..6) {
        let (m, o, _) = stream(seed, 300, 4, 10);
        let mut bad = 0;
        replay_session(&m, &o, 10, false, |_, book| {
            for side in [Side::Bid, Side::Ask] {
                for price in book.prices(side) {
                    let q = book.queue(side, price);
                    let slots = book.queue_slots(side, price, d);
                    let mut want = vec![0; d];
                    for (k, o) in q.iter().enumerate() {
                        want[k.min(d - 1)] += o.size;
                    }
                    if slots != want || slots.iter().sum::<Qty>() != book.tick_volume(side, price) {
                        bad += 1;
                    }
                }
            }
        })
        .unwrap();
        prop_assert_eq!(bad, 0);
    }

    #[test]
    fn truncated_snapshots_still_reconcile(seed in any::<u64>()) {
        // Twelve prices per side but only three visible levels: the replay
        // never sees the deep book and has to rebuild levels as they surface.
        let (m, o, _) = stream(seed, 500, 12, 3);
        let summary = replay_session(&m, &o, 3, true, |_, _| {}).unwrap();
        prop_assert!(summary.all_matched(), "{:?}", summary.first_mismatch);
    }
}

#[test]
fn halts_and_crosses_are_counted_without_touching_the_book() {
    let (mut m, mut o, _) = stream(5, 50, 3, 10);
    let last = o.last().unwrap().clone();
    m.push(msg(EventType::Cross, 0, 100, 1_000_000, Side::Bid));
    m.push(msg(EventType::Halt, 0, 0, -1, Side::Bid));
    o.extend([last.clone(), last]);
    let summary = replay_session(&m, &o, 10, true, |_, _| {}).unwrap();
    assert!(summary.all_matched());
    assert_eq!((summary.flags.crosses, summary.flags.halts), (1, 1));
}
