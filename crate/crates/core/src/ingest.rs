//! LOBSTER message / orderbook file parsing and the session cleaning pass.
//!
//! Prices stay as integer 10⁻⁴-dollar units all the way through; timestamps
//! are kept as integer nanoseconds after midnight so equal-timestamp runs can
//! be detected exactly.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Price, Qty, Result, Side};

/// LOBSTER placeholder price for an absent ask level.
pub const ASK_SENTINEL: Price = 9_999_999_999;
/// LOBSTER placeholder price for an absent bid level.
pub const BID_SENTINEL: Price = -9_999_999_999;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Nanoseconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs(secs: u64) -> Self {
        Timestamp(secs * NANOS_PER_SEC)
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Parses `34200.000000001` without going through floating point.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let secs: u64 = int.parse().ok()?;
        let mut nanos: u64 = 0;
        for i in 0..9 {
            let digit = frac.as_bytes().get(i).map_or(0, |b| u64::from(b - b'0'));
            nanos = nanos * 10 + digit;
        }
        secs.checked_mul(NANOS_PER_SEC)?.checked_add(nanos).map(Timestamp)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / NANOS_PER_SEC, self.0 % NANOS_PER_SEC)
    }
}

/// LOBSTER event type codes 1..7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    Submit,
    PartialCancel,
    Delete,
    ExecuteVisible,
    ExecuteHidden,
    Cross,
    Halt,
}

impl EventType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => EventType::Submit,
            2 => EventType::PartialCancel,
            3 => EventType::Delete,
            4 => EventType::ExecuteVisible,
            5 => EventType::ExecuteHidden,
            6 => EventType::Cross,
            7 => EventType::Halt,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        match self {
            EventType::Submit => 1,
            EventType::PartialCancel => 2,
            EventType::Delete => 3,
            EventType::ExecuteVisible => 4,
            EventType::ExecuteHidden => 5,
            EventType::Cross => 6,
            EventType::Halt => 7,
        }
    }
}

/// One row of a LOBSTER message file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub time: Timestamp,
    pub event_type: EventType,
    pub order_id: u64,
    pub size: Qty,
    pub price: Price,
    pub side: Side,
}

impl MessageRecord {
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() < 6 {
            return Err(format!("expected 6 columns, found {}", cols.len()));
        }
        let time = Timestamp::parse(cols[0]).ok_or_else(|| format!("bad timestamp {:?}", cols[0]))?;
        let code: u8 = cols[1].trim().parse().map_err(|_| format!("bad event type {:?}", cols[1]))?;
        let event_type = EventType::from_code(code).ok_or_else(|| format!("event type {code} out of range"))?;
        let order_id = cols[2].trim().parse().map_err(|_| format!("bad order id {:?}", cols[2]))?;
        let size = cols[3].trim().parse().map_err(|_| format!("bad size {:?}", cols[3]))?;
        let price = cols[4].trim().parse().map_err(|_| format!("bad price {:?}", cols[4]))?;
        let dir: i8 = cols[5].trim().parse().map_err(|_| format!("bad direction {:?}", cols[5]))?;
        let side = Side::from_direction(dir).ok_or_else(|| format!("direction {dir} not in {{-1, 1}}"))?;
        Ok(MessageRecord { time, event_type, order_id, size, price, side })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time,
            self.event_type.code(),
            self.order_id,
            self.size,
            self.price,
            self.side.direction()
        )
    }
}

/// A visible price level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quote {
    pub price: Price,
    pub size: Qty,
}

/// One row of a LOBSTER orderbook file: the top `L` levels after the
/// corresponding message. Absent levels are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub asks: Vec<Option<Quote>>,
    pub bids: Vec<Option<Quote>>,
}

impl SnapshotRecord {
    pub fn empty(levels: usize) -> Self {
        SnapshotRecord { asks: vec![None; levels], bids: vec![None; levels] }
    }

    pub fn levels(&self) -> usize {
        self.asks.len()
    }

    pub fn side(&self, side: Side) -> &[Option<Quote>] {
        match side {
            Side::Ask => &self.asks,
            Side::Bid => &self.bids,
        }
    }

    pub fn best_bid(&self) -> Option<Quote> {
        self.bids.first().copied().flatten()
    }

    pub fn best_ask(&self) -> Option<Quote> {
        self.asks.first().copied().flatten()
    }

    /// Both sides present and best bid strictly below best ask.
    pub fn is_two_sided_uncrossed(&self) -> bool {
        match (self.best_bid(), self.best_ask()) {
            (Some(b), Some(a)) => b.price < a.price,
            _ => false,
        }
    }

    pub fn parse_line(line: &str, levels: usize) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 4 * levels {
            return Err(format!("expected {} columns for {levels} levels, found {}", 4 * levels, cols.len()));
        }
        let num = |i: usize| -> std::result::Result<i64, String> {
            cols[i].trim().parse::<i64>().map_err(|_| format!("bad number {:?} in column {}", cols[i], i + 1))
        };
        let mut snap = SnapshotRecord::empty(levels);
        for l in 0..levels {
            let (ap, asz, bp, bsz) = (num(4 * l)?, num(4 * l + 1)?, num(4 * l + 2)?, num(4 * l + 3)?);
            if asz < 0 || bsz < 0 {
                return Err(format!("negative size at level {}", l + 1));
            }
            if ap < ASK_SENTINEL && ap > BID_SENTINEL {
                snap.asks[l] = Some(Quote { price: ap, size: asz as Qty });
            }
            if bp > BID_SENTINEL && bp < ASK_SENTINEL {
                snap.bids[l] = Some(Quote { price: bp, size: bsz as Qty });
            }
        }
        Ok(snap)
    }

    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(self.levels() * 40);
        for l in 0..self.levels() {
            if l > 0 {
                out.push(',');
            }
            let (ap, asz) = self.asks[l].map_or((ASK_SENTINEL, 0), |q| (q.price, q.size));
            let (bp, bsz) = self.bids[l].map_or((BID_SENTINEL, 0), |q| (q.price, q.size));
            out.push_str(&format!("{ap},{asz},{bp},{bsz}"));
        }
        out
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

pub fn parse_messages(path: &Path) -> Result<Vec<MessageRecord>> {
    let name = path.display().to_string();
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            MessageRecord::parse_line(line).map_err(|msg| Error::Parse { file: name.clone(), line: i + 1, msg })
        })
        .collect()
}

pub fn parse_snapshots(path: &Path, levels: usize) -> Result<Vec<SnapshotRecord>> {
    let name = path.display().to_string();
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            SnapshotRecord::parse_line(line, levels).map_err(|msg| Error::Parse { file: name.clone(), line: i + 1, msg })
        })
        .collect()
}

/// Parses a message/orderbook file pair. Records come back in file order.
pub fn parse_session(
    message_path: &Path,
    snapshot_path: &Path,
    levels: usize,
) -> Result<(Vec<MessageRecord>, Vec<SnapshotRecord>)> {
    if levels == 0 {
        return Err(Error::Invalid("levels must be positive".into()));
    }
    let messages = parse_messages(message_path)?;
    let snapshots = parse_snapshots(snapshot_path, levels)?;
    if messages.len() != snapshots.len() {
        return Err(Error::RowCountMismatch { messages: messages.len(), snapshots: snapshots.len() });
    }
    Ok((messages, snapshots))
}

pub fn write_session(
    message_path: &Path,
    snapshot_path: &Path,
    messages: &[MessageRecord],
    snapshots: &[SnapshotRecord],
) -> Result<()> {
    let mut mw = BufWriter::new(File::create(message_path).map_err(|e| Error::io(message_path, e))?);
    for m in messages {
        writeln!(mw, "{}", m.to_line()).map_err(|e| Error::io(message_path, e))?;
    }
    mw.flush().map_err(|e| Error::io(message_path, e))?;
    let mut sw = BufWriter::new(File::create(snapshot_path).map_err(|e| Error::io(snapshot_path, e))?);
    for s in snapshots {
        writeln!(sw, "{}", s.to_line()).map_err(|e| Error::io(snapshot_path, e))?;
    }
    sw.flush().map_err(|e| Error::io(snapshot_path, e))
}

/// LOBSTER file stem convention: `TICKER_DATE_START_END_message_L.csv`.
pub fn lobster_file_names(ticker: &str, date: &str, open_ms: u64, close_ms: u64, levels: usize) -> (String, String) {
    let stem = format!("{ticker}_{date}_{open_ms}_{close_ms}");
    (format!("{stem}_message_{levels}.csv"), format!("{stem}_orderbook_{levels}.csv"))
}

/// A time range dropped from one (ticker, date) session, e.g. around a halt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRange {
    pub ticker: String,
    pub date: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl ExclusionRange {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Identity and trading hours of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTimes {
    pub ticker: String,
    pub date: String,
    pub open: Timestamp,
    pub close: Timestamp,
    /// Trimmed from both ends of the session (10 minutes by default).
    pub edge_trim_ns: u64,
}

impl SessionTimes {
    pub const DEFAULT_TRIM_NS: u64 = 600 * NANOS_PER_SEC;

    pub fn new(ticker: impl Into<String>, date: impl Into<String>, open: Timestamp, close: Timestamp) -> Self {
        SessionTimes { ticker: ticker.into(), date: date.into(), open, close, edge_trim_ns: Self::DEFAULT_TRIM_NS }
    }

    /// Regular Nasdaq hours, 09:30 to 16:00.
    pub fn regular(ticker: impl Into<String>, date: impl Into<String>) -> Self {
        Self::new(ticker, date, Timestamp::from_secs(34_200), Timestamp::from_secs(57_600))
    }

    fn retained(&self, t: Timestamp) -> bool {
        t.0 >= self.open.0 + self.edge_trim_ns && t.0 + self.edge_trim_ns <= self.close.0
    }
}

/// Builds exclusion ranges from LOBSTER type-7 rows: price −1 opens a halt,
/// price 1 ends it. An unterminated halt runs to the session close.
pub fn halt_exclusions(messages: &[MessageRecord], session: &SessionTimes) -> Vec<ExclusionRange> {
    let mut out = Vec::new();
    let mut open: Option<Timestamp> = None;
    for m in messages.iter().filter(|m| m.event_type == EventType::Halt) {
        match m.price {
            -1 => open = open.or(Some(m.time)),
            1 => {
                if let Some(start) = open.take() {
                    out.push(ExclusionRange { ticker: session.ticker.clone(), date: session.date.clone(), start, end: m.time });
                }
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push(ExclusionRange { ticker: session.ticker.clone(), date: session.date.clone(), start, end: session.close });
    }
    out
}

/// One retained order book state on the order book clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanEntry {
    /// Order book clock index, consecutive from 0.
    pub index: usize,
    /// Raw row (into the parsed files) of the state this entry holds.
    pub row: usize,
    pub time: Timestamp,
    /// Every message of the collapsed equal-timestamp run, in file order.
    pub messages: Vec<MessageRecord>,
    pub snapshot: SnapshotRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanWarning {
    /// Every row was filtered out.
    EmptySession,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub input_rows: usize,
    pub collapsed_rows: usize,
    pub crossed_or_one_sided: usize,
    pub outside_hours: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct CleanSession {
    pub ticker: String,
    pub date: String,
    pub entries: Vec<CleanEntry>,
    pub excluded: Vec<ExclusionRange>,
    pub stats: CleanStats,
    pub warnings: Vec<CleanWarning>,
}

impl CleanSession {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Raw row indices of the retained states, ascending.
    pub fn rows(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.row).collect()
    }

    /// Flattens back to aligned message/snapshot rows (last message of each
    /// collapsed group), which re-cleans to the same session.
    pub fn to_rows(&self) -> (Vec<MessageRecord>, Vec<SnapshotRecord>) {
        self.entries
            .iter()
            .map(|e| (*e.messages.last().expect("non-empty group"), e.snapshot.clone()))
            .unzip()
    }
}

/// Applies the cleaning pipeline: collapse equal-timestamp runs onto their
/// last state, drop crossed (or one-sided) states, trim the session edges,
/// drop configured exclusion ranges, then number the survivors 0..n−1.
pub fn clean_session(
    messages: &[MessageRecord],
    snapshots: &[SnapshotRecord],
    session: &SessionTimes,
    exclusions: &[ExclusionRange],
) -> Result<CleanSession> {
    if messages.len() != snapshots.len() {
        return Err(Error::Misaligned(format!("{} messages vs {} snapshots", messages.len(), snapshots.len())));
    }
    for (row, pair) in messages.windows(2).enumerate() {
        if pair[1].time < pair[0].time {
            return Err(Error::NonMonotoneTime { row: row + 1 });
        }
    }
    let excluded: Vec<ExclusionRange> = exclusions
        .iter()
        .filter(|x| x.ticker == session.ticker && x.date == session.date)
        .cloned()
        .collect();

    let mut stats = CleanStats { input_rows: messages.len(), ..Default::default() };
    let mut entries = Vec::new();
    let mut start = 0;
    while start < messages.len() {
        let time = messages[start].time;
        let mut end = start + 1;
        while end < messages.len() && messages[end].time == time {
            end += 1;
        }
        let last = end - 1;
        stats.collapsed_rows += end - start - 1;
        let snap = &snapshots[last];
        if !snap.is_two_sided_uncrossed() {
            stats.crossed_or_one_sided += 1;
        } else if !session.retained(time) {
            stats.outside_hours += 1;
        } else if excluded.iter().any(|x| x.contains(time)) {
            stats.excluded += 1;
        } else {
            entries.push(CleanEntry {
                index: entries.len(),
                row: last,
                time,
                messages: messages[start..end].to_vec(),
                snapshot: snap.clone(),
            });
        }
        start = end;
    }
    let warnings = if entries.is_empty() { vec![CleanWarning::EmptySession] } else { Vec::new() };
    Ok(CleanSession {
        ticker: session.ticker.clone(),
        date: session.date.clone(),
        entries,
        excluded,
        stats,
        warnings,
    })
}
