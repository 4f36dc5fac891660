use lobscope_core::book::replay_session;
use lobscope_core::ingest::{clean_session, parse_session, EventType, MessageRecord, SessionTimes, SnapshotRecord};
use lobscope_core::Side;
use lobscope_harness::synth::{synth_generate, synth_session, SynthSpec};

fn spec(seed: u64, coef: f64, rate: f64) -> SynthSpec {
    SynthSpec { seed, imbalance_coef: coef, event_rate: rate, ..SynthSpec::default() }
}

#[test]
fn every_stream_reconciles() {
    for (seed, coef) in [(1, 0.0), (2, 0.3), (3, 0.45)] {
        let s = SynthSpec { levels: 5, hidden_levels: 3, ..spec(seed, coef, 2.0) };
        let (m, o) = synth_session(&s).unwrap();
        assert!(m.len() > 20_000);
        let summary = replay_session(&m, &o, s.levels, true, |_, _| {}).unwrap();
        assert!(summary.all_matched(), "seed {seed}: {:?}", summary.first_mismatch);
        assert_eq!(summary.events, m.len());
        assert!(o.iter().all(SnapshotRecord::is_two_sided_uncrossed));
        assert!(m.windows(2).all(|w| w[0].time <= w[1].time));
    }
}

#[test]
fn files_round_trip_through_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(4, 0.2, 0.5);
    let (mp, op) = synth_generate(&s, dir.path()).unwrap();
    let (m, o) = parse_session(&mp, &op, s.levels).unwrap();
    assert_eq!((m, o), synth_session(&s).unwrap());
    let (m, o) = parse_session(&mp, &op, s.levels).unwrap();
    let times = SessionTimes::new(&s.ticker, &s.date, s.open(), s.close());
    let clean = clean_session(&m, &o, &times, &[]).unwrap();
    assert_eq!(clean.stats.crossed_or_one_sided, 0);
    assert!(clean.len() > 8_000);
}

#[test]
fn same_seed_same_stream() {
    let a = synth_session(&spec(9, 0.1, 0.3)).unwrap();
    let b = synth_session(&spec(9, 0.1, 0.3)).unwrap();
    let c = synth_session(&spec(10, 0.1, 0.3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn rejects_invalid_specs() {
    assert!(synth_session(&SynthSpec { imbalance_coef: 0.5, ..SynthSpec::default() }).is_err());
    assert!(synth_session(&SynthSpec { move_prob: 0.0, ..SynthSpec::default() }).is_err());
    assert!(synth_session(&SynthSpec { event_rate: 0.0, ..SynthSpec::default() }).is_err());
    assert!(synth_session(&SynthSpec { imbalance_levels: 11, ..SynthSpec::default() }).is_err());
}

/// Top-3 volume imbalance before each sweep and whether the sweep lifted the ask.
fn sweeps(m: &[MessageRecord], o: &[SnapshotRecord]) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    for i in 1..m.len() {
        let first = m[i].event_type == EventType::ExecuteVisible
            && !(m[i - 1].event_type == EventType::ExecuteVisible && m[i - 1].time == m[i].time);
        if first {
            let vol = |q: &[Option<lobscope_core::ingest::Quote>]| q[..3].iter().flatten().map(|q| q.size as f64).sum::<f64>();
            let (vb, va) = (vol(&o[i - 1].bids), vol(&o[i - 1].asks));
            out.push(((vb - va) / (vb + va), m[i].side == Side::Ask));
        }
    }
    out
}

/// Logistic regression of `y` on `x` by Newton's method: (slope, z-score).
fn logistic_slope(data: &[(f64, bool)]) -> (f64, f64) {
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    let mut cov11 = 0.0;
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in data {
            let p = 1.0 / (1.0 + (-(b0 + b1 * x)).exp());
            let r = y as u8 as f64 - p;
            g0 += r;
            g1 += r * x;
            let w = p * (1.0 - p);
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        b0 += (h11 * g0 - h01 * g1) / det;
        b1 += (h00 * g1 - h01 * g0) / det;
        cov11 = h00 / det;
    }
    (b1, b1 / cov11.sqrt())
}

#[test]
fn imbalance_feedback_plants_predictability() {
    let (m, o) = synth_session(&spec(21, 0.4, 2.0)).unwrap();
    let (slope, z) = logistic_slope(&sweeps(&m, &o));
    // p = 0.5 + 0.4·imb has logistic slope ≈ 4·0.4 near imb = 0.
    assert!(slope > 0.8 && z > 10.0, "slope {slope}, z {z}");

    let (m, o) = synth_session(&spec(21, 0.0, 2.0)).unwrap();
    let (slope, z) = logistic_slope(&sweeps(&m, &o));
    assert!(z.abs() < 3.5, "null slope {slope}, z {z}");
}
