use lobscope_core::book::TickGrid;
use lobscope_core::features::{ofi, order_flow_vector, Frame, FrameConfig};
use lobscope_core::ingest::{Quote, SnapshotRecord};
use proptest::prelude::*;

const LEVELS: usize = 3;

fn cfg() -> FrameConfig {
    FrameConfig { levels: LEVELS, window: 4, depth: 0, grid: TickGrid::new(100).unwrap() }
}

/// Best bid at `bid`, best ask `gap` ticks above, level sizes as given.
fn frame(bid: i64, gap: i64, bids: &[u64], asks: &[u64]) -> Frame {
    let mut s = SnapshotRecord::empty(LEVELS);
    for l in 0..LEVELS {
        s.bids[l] = Some(Quote { price: bid - 100 * l as i64, size: bids[l] });
        s.asks[l] = Some(Quote { price: bid + 100 * (gap + l as i64), size: asks[l] });
    }
    Frame::from_snapshot(&s, &cfg()).unwrap()
}

fn sizes() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..10_000, LEVELS)
}

proptest! {
    #[test]
    fn flow_telescopes_while_prices_stand_still(
        bid in 10_000i64..20_000,
        gap in 1i64..4,
        path in prop::collection::vec((sizes(), sizes()), 2..30),
    ) {
        let bid = bid * 100;
        let frames: Vec<Frame> = path.iter().map(|(b, a)| frame(bid, gap, b, a)).collect();
        let n = frames.len() - 1;
        for l in 0..LEVELS {
            let (mut a, mut b) = (0.0, 0.0);
            for w in frames.windows(2) {
                let f = order_flow_vector(&w[0], &w[1]);
                a += f[2 * l];
                b += f[2 * l + 1];
            }
            prop_assert_eq!(b, path[n].0[l] as f64 - path[0].0[l] as f64);
            prop_assert_eq!(a, path[n].1[l] as f64 - path[0].1[l] as f64);
        }
    }

    #[test]
    fn price_moves_count_whole_queues(bid in 10_000i64..20_000, b0 in sizes(), a0 in sizes(), b1 in sizes(), a1 in sizes()) {
        let bid = bid * 100;
        let before = frame(bid, 2, &b0, &a0);
        // Whole book one tick up: bids improve, asks retreat.
        let up = order_flow_vector(&before, &frame(bid + 100, 2, &b1, &a1));
        // One tick down: bids retreat, asks improve.
        let down = order_flow_vector(&before, &frame(bid - 100, 2, &b1, &a1));
        for l in 0..LEVELS {
            prop_assert_eq!(up[2 * l + 1], b1[l] as f64);
            prop_assert_eq!(up[2 * l], -(a0[l] as f64));
            prop_assert_eq!(down[2 * l + 1], -(b0[l] as f64));
            prop_assert_eq!(down[2 * l], a1[l] as f64);
        }
        let imbalance = ofi(&up);
        prop_assert_eq!(imbalance[0], up[1] - up[0]);
    }
}
