//! Cleaning of raw trade and quote records, removal of duplicate time
//! stamps, and trade–quote matching.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, parse_time};
use crate::model::{TickObservation, GRID_TOLERANCE};

/// Trade or quote payload of a raw record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordKind {
    Trade,
    Quote { bid: f64, ask: f64 },
}

/// One raw record. For quotes `price` is the mid-quote.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub time: f64,
    pub price: f64,
    pub exchange: String,
    pub sale_condition: String,
    pub corrected: bool,
    pub kind: RecordKind,
}

impl RawRecord {
    pub fn trade(time: f64, price: f64, exchange: &str) -> Self {
        RawRecord {
            time,
            price,
            exchange: exchange.to_string(),
            sale_condition: String::new(),
            corrected: false,
            kind: RecordKind::Trade,
        }
    }

    pub fn quote(time: f64, bid: f64, ask: f64, exchange: &str) -> Self {
        RawRecord {
            time,
            price: 0.5 * (bid + ask),
            exchange: exchange.to_string(),
            sale_condition: String::new(),
            corrected: false,
            kind: RecordKind::Quote { bid, ask },
        }
    }
}

/// Session 09:30:00 to 16:00:00, both ends kept.
pub const DEFAULT_SESSION: (f64, f64) = (34_200.0, 57_600.0);

/// Sale conditions dropped by default: out-of-sequence, bunched, average
/// price, sold-last and extended-hours prints.
pub const DEFAULT_BAD_CONDITIONS: [&str; 6] = ["G", "L", "T", "U", "W", "Z"];

#[derive(Debug, Clone, PartialEq)]
pub struct CleanConfig {
    /// Closed interval of accepted time stamps, seconds since midnight.
    pub session: (f64, f64),
    /// Accepted exchange tags; `None` keeps every exchange.
    pub exchanges: Option<Vec<String>>,
    pub bad_conditions: Vec<String>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            session: DEFAULT_SESSION,
            exchanges: Some(vec!["N".to_string()]),
            bad_conditions: DEFAULT_BAD_CONDITIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Records removed per rule (each record counts for the first rule it
/// fails).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleanAudit {
    pub input: usize,
    pub unparseable: usize,
    pub session: usize,
    pub exchange: usize,
    pub condition: usize,
    pub kept: usize,
}

impl CleanAudit {
    /// Audit sidecar rows `(rule, count)`.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("input", self.input.to_string()),
            ("unparseable", self.unparseable.to_string()),
            ("session", self.session.to_string()),
            ("exchange", self.exchange.to_string()),
            ("condition", self.condition.to_string()),
            ("kept", self.kept.to_string()),
        ]
    }
}

/// Applies the session window, the exchange whitelist and the condition
/// blacklist (which also drops corrected trades). Input is stably sorted by
/// time first; order is otherwise preserved.
pub fn clean(records: &[RawRecord], cfg: &CleanConfig) -> (Vec<RawRecord>, CleanAudit) {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut audit = CleanAudit {
        input: records.len(),
        ..CleanAudit::default()
    };
    let (lo, hi) = cfg.session;
    let mut out = Vec::with_capacity(sorted.len());
    for r in sorted {
        if !(r.time >= lo && r.time <= hi) {
            audit.session += 1;
        } else if cfg
            .exchanges
            .as_ref()
            .is_some_and(|ex| !ex.contains(&r.exchange))
        {
            audit.exchange += 1;
        } else if r.corrected || cfg.bad_conditions.contains(&r.sale_condition) {
            audit.condition += 1;
        } else {
            out.push(r);
        }
    }
    audit.kept = out.len();
    (out, audit)
}

/// Spreads every run of equal time stamps evenly up to the next distinct
/// stamp: `t'_l = t_j + (l−j)(t_k−t_j)/(k−j)`. A run at the end of the
/// stream uses the gap before it (one second if there is none).
pub fn despread_timestamps(times: &[f64]) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("time stamps must be sorted".into()));
    }
    let n = times.len();
    let mut out = times.to_vec();
    let mut j = 0;
    let mut prev_gap = 1.0;
    while j < n {
        let mut k = j + 1;
        while k < n && times[k] == times[j] {
            k += 1;
        }
        let (end, span) = if k < n {
            (k, times[k] - times[j])
        } else {
            (n, prev_gap)
        };
        let len = (end - j) as f64;
        for (l, slot) in out.iter_mut().enumerate().take(end).skip(j + 1) {
            *slot = times[j] + (l - j) as f64 * span / len;
        }
        if k < n {
            prev_gap = times[k] - times[j];
        }
        j = k;
    }
    Ok(out)
}

/// [`despread_timestamps`] applied to records.
pub fn despread_records(records: &mut [RawRecord]) -> Result<()> {
    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    for (r, t) in records.iter_mut().zip(despread_timestamps(&times)?) {
        r.time = t;
    }
    Ok(())
}

/// Trade side after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bid,
    Ask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedTrade {
    /// Carries `bid`/`ask` when matched.
    pub obs: TickObservation,
    pub side: Option<Side>,
}

impl MatchedTrade {
    pub fn matched(&self) -> bool {
        self.side.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchAudit {
    pub trades: usize,
    pub no_quote: usize,
    pub off_quote: usize,
    pub latency_offset: f64,
}

impl MatchAudit {
    pub fn unmatched_fraction(&self) -> f64 {
        if self.trades == 0 {
            0.0
        } else {
            (self.no_quote + self.off_quote) as f64 / self.trades as f64
        }
    }

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("trades", self.trades.to_string()),
            ("no_quote", self.no_quote.to_string()),
            ("off_quote", self.off_quote.to_string()),
            ("unmatched_fraction", fmt_f64(self.unmatched_fraction())),
            ("latency_offset", fmt_f64(self.latency_offset)),
        ]
    }
}

/// Attaches to each trade the latest quote with
/// `quote_time ≤ trade_time − latency_offset`. Trades without such a quote,
/// or whose price is neither bid nor ask, are returned unmatched.
pub fn match_quotes(
    trades: &[RawRecord],
    quotes: &[RawRecord],
    latency_offset: f64,
) -> Result<(Vec<MatchedTrade>, MatchAudit)> {
    let q: Vec<(f64, f64, f64)> = quotes
        .iter()
        .filter_map(|r| match r.kind {
            RecordKind::Quote { bid, ask } => Some((r.time, bid, ask)),
            RecordKind::Trade => None,
        })
        .collect();
    if q.windows(2).any(|w| w[1].0 < w[0].0) || trades.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::InvalidParameter(
            "trades and quotes must be sorted".into(),
        ));
    }
    let mut audit = MatchAudit {
        trades: trades.len(),
        latency_offset,
        ..MatchAudit::default()
    };
    let close = |a: f64, b: f64| (a - b).abs() <= GRID_TOLERANCE * b.abs().max(1.0);
    let mut qi = 0;
    let mut out = Vec::with_capacity(trades.len());
    for t in trades {
        let cutoff = t.time - latency_offset;
        while qi < q.len() && q[qi].0 <= cutoff {
            qi += 1;
        }
        let mut obs = TickObservation::new(t.time, t.price);
        obs.exchange = t.exchange.clone();
        obs.sale_condition = t.sale_condition.clone();
        let side = if qi == 0 {
            audit.no_quote += 1;
            None
        } else {
            let (_, bid, ask) = q[qi - 1];
            let side = if close(t.price, bid) {
                Some(Side::Bid)
            } else if close(t.price, ask) {
                Some(Side::Ask)
            } else {
                None
            };
            if side.is_some() && bid < ask {
                obs = obs.with_quotes(bid, ask);
                side
            } else {
                audit.off_quote += 1;
                None
            }
        };
        out.push(MatchedTrade { obs, side });
    }
    Ok((out, audit))
}

/// Reads `time,price,exchange,cond,corr`. Unparseable rows are skipped and
/// counted.
pub fn read_trades<R: Read>(r: R) -> Result<(Vec<RawRecord>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let h = rdr.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name);
    let (time, price) = match (col("time"), col("price")) {
        (Some(t), Some(p)) => (t, p),
        _ => {
            return Err(Error::Parse(
                "trade file needs time and price columns".into(),
            ))
        }
    };
    let (exch, cond, corr) = (col("exchange"), col("cond"), col("corr"));
    let mut out = Vec::new();
    let mut bad = 0;
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            bad += 1;
            continue;
        };
        let field = |i: Option<usize>| i.and_then(|i| rec.get(i)).unwrap_or("").to_string();
        let parsed = (|| -> Result<RawRecord> {
            let mut r = RawRecord::trade(
                parse_time(rec.get(time).unwrap_or(""))?,
                parse_f64(rec.get(price).unwrap_or(""), "price")?,
                &field(exch),
            );
            r.sale_condition = field(cond);
            let c = field(corr);
            r.corrected = !(c.is_empty() || c == "0" || c == "00");
            if !(r.price > 0.0) {
                return Err(Error::NonPositivePrice(r.price));
            }
            Ok(r)
        })();
        match parsed {
            Ok(r) => out.push(r),
            Err(_) => bad += 1,
        }
    }
    Ok((out, bad))
}

/// Reads `time,bid,ask,exchange`. Unparseable or crossed rows are skipped
/// and counted.
pub fn read_quotes<R: Read>(r: R) -> Result<(Vec<RawRecord>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let h = rdr.headers()?.clone();
    let col = |name: &str| h.iter().position(|c| c == name);
    let (time, bid, ask) = match (col("time"), col("bid"), col("ask")) {
        (Some(t), Some(b), Some(a)) => (t, b, a),
        _ => {
            return Err(Error::Parse(
                "quote file needs time, bid and ask columns".into(),
            ))
        }
    };
    let exch = col("exchange");
    let mut out = Vec::new();
    let mut bad = 0;
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            bad += 1;
            continue;
        };
        let parsed = (|| -> Result<RawRecord> {
            let b = parse_f64(rec.get(bid).unwrap_or(""), "bid")?;
            let a = parse_f64(rec.get(ask).unwrap_or(""), "ask")?;
            if !(b > 0.0 && b < a) {
                return Err(Error::CrossedQuotes { bid: b, ask: a });
            }
            Ok(RawRecord::quote(
                parse_time(rec.get(time).unwrap_or(""))?,
                b,
                a,
                exch.and_then(|i| rec.get(i)).unwrap_or(""),
            ))
        })();
        match parsed {
            Ok(r) => out.push(r),
            Err(_) => bad += 1,
        }
    }
    Ok((out, bad))
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Writes trades in the input schema.
pub fn write_trades<W: Write>(w: W, records: &[RawRecord]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["time", "price", "exchange", "cond", "corr"])?;
    for r in records {
        wtr.write_record([
            fmt_f64(r.time),
            fmt_f64(r.price),
            r.exchange.clone(),
            r.sale_condition.clone(),
            if r.corrected { "1" } else { "0" }.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes quotes in the input schema.
pub fn write_quotes<W: Write>(w: W, records: &[RawRecord]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["time", "bid", "ask", "exchange"])?;
    for r in records {
        if let RecordKind::Quote { bid, ask } = r.kind {
            wtr.write_record([
                fmt_f64(r.time),
                fmt_f64(bid),
                fmt_f64(ask),
                r.exchange.clone(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `rule,count` audit rows.
pub fn write_audit<W: Write>(w: W, rows: &[(&str, String)]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["rule", "count"])?;
    for (k, v) in rows {
        wtr.write_record([*k, v.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}
