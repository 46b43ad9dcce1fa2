//! CSV formats shared by the simulator, the cleaner and the estimator.
//!
//! Tick files have a header with at least `time` and `price`; optional
//! columns are `exchange`, `cond`, `corr`, `bid`, `ask` and `book` (levels
//! separated by `;`). Truth files hold `time,x` with latent log-prices.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::TickObservation;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Seconds since midnight from either a decimal number or
/// `HH:MM:SS[.fff]`.
pub fn parse_time(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("bad time stamp {s:?}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let h: u32 = parts[0].parse().map_err(|_| bad())?;
        let m: u32 = parts[1].parse().map_err(|_| bad())?;
        let sec: f64 = parts[2].parse().map_err(|_| bad())?;
        if m >= 60 || !(0.0..60.0).contains(&sec) {
            return Err(bad());
        }
        Ok(h as f64 * 3600.0 + m as f64 * 60.0 + sec)
    } else {
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(v)
    }
}

pub(crate) fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} {s:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!("non-finite {what} {s:?}")))
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn non_empty(rec: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| rec.get(i))
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Reads a tick file.
pub fn read_ticks<R: Read>(r: R) -> Result<Vec<TickObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let time = column(&headers, "time")
        .ok_or_else(|| Error::Parse("tick file needs a time column".into()))?;
    let price = column(&headers, "price")
        .ok_or_else(|| Error::Parse("tick file needs a price column".into()))?;
    let (exch, cond) = (column(&headers, "exchange"), column(&headers, "cond"));
    let (bid, ask, book) = (
        column(&headers, "bid"),
        column(&headers, "ask"),
        column(&headers, "book"),
    );
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = |e: Error| Error::Parse(format!("row {}: {e}", line + 2));
        let mut obs = TickObservation::new(
            parse_time(rec.get(time).unwrap_or("")).map_err(ctx)?,
            parse_f64(rec.get(price).unwrap_or(""), "price").map_err(ctx)?,
        );
        obs.exchange = non_empty(&rec, exch).unwrap_or("").to_string();
        obs.sale_condition = non_empty(&rec, cond).unwrap_or("").to_string();
        if let (Some(b), Some(a)) = (non_empty(&rec, bid), non_empty(&rec, ask)) {
            obs.bid = Some(parse_f64(b, "bid").map_err(ctx)?);
            obs.ask = Some(parse_f64(a, "ask").map_err(ctx)?);
        }
        if let Some(levels) = non_empty(&rec, book) {
            let v: Result<Vec<f64>> = levels
                .split(';')
                .map(|s| parse_f64(s, "book level"))
                .collect();
            obs.book_levels = Some(v.map_err(ctx)?);
        }
        out.push(obs);
    }
    Ok(out)
}

/// Writes a tick file; quote and book columns appear only if some tick
/// carries them.
pub fn write_ticks<W: Write>(w: W, ticks: &[TickObservation]) -> Result<()> {
    let quotes = ticks.iter().any(|t| t.bid.is_some());
    let book = ticks.iter().any(|t| t.book_levels.is_some());
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let mut header = vec!["time", "price", "exchange", "cond", "corr"];
    if quotes {
        header.extend(["bid", "ask"]);
    }
    if book {
        header.push("book");
    }
    wtr.write_record(&header)?;
    for t in ticks {
        let mut row = vec![
            fmt_f64(t.time),
            fmt_f64(t.price),
            t.exchange.clone(),
            t.sale_condition.clone(),
            "0".into(),
        ];
        if quotes {
            row.push(t.bid.map(fmt_f64).unwrap_or_default());
            row.push(t.ask.map(fmt_f64).unwrap_or_default());
        }
        if book {
            let levels = t
                .book_levels
                .as_ref()
                .map(|l| l.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            row.push(levels);
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes latent log-prices.
pub fn write_truth<W: Write>(w: W, times: &[f64], x: &[f64]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(["time", "x"])?;
    for (t, v) in times.iter().zip(x) {
        wtr.write_record([fmt_f64(*t), fmt_f64(*v)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads latent log-prices; returns `(times, x)`.
pub fn read_truth<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let time = column(&headers, "time")
        .ok_or_else(|| Error::Parse("truth file needs a time column".into()))?;
    let x =
        column(&headers, "x").ok_or_else(|| Error::Parse("truth file needs an x column".into()))?;
    let (mut ts, mut xs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        ts.push(parse_time(rec.get(time).unwrap_or(""))?);
        xs.push(parse_f64(rec.get(x).unwrap_or(""), "log price")?);
    }
    Ok((ts, xs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_formats() {
        assert_eq!(parse_time("34200").unwrap(), 34200.0);
        assert_eq!(parse_time("09:30:00").unwrap(), 34200.0);
        assert_eq!(parse_time("16:00:00.250").unwrap(), 57600.25);
        assert_eq!(parse_time(" 1.5 ").unwrap(), 1.5);
        for bad in ["", "9:30", "09:61:00", "x", "NaN", "10:00:60"] {
            assert!(parse_time(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn tick_round_trip() {
        let ticks = vec![
            TickObservation::new(34200.0, 50.01).with_quotes(50.01, 50.03),
            TickObservation::new(34200.5, 50.02).with_book(vec![50.01, 50.02]),
            TickObservation::new(34201.0, 0.1 + 0.2),
        ];
        let mut buf = Vec::new();
        write_ticks(&mut buf, &ticks).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,price,exchange,cond,corr,bid,ask,book\n"));
        assert!(!text.contains('\r'));
        let back = read_ticks(buf.as_slice()).unwrap();
        assert_eq!(back, ticks);
    }

    #[test]
    fn minimal_tick_file() {
        let t = read_ticks("time,price\n09:30:00,50.00\n34201,50.01\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].time, 34200.0);
        assert!(read_ticks("time,price\n1,abc\n".as_bytes()).is_err());
        assert!(read_ticks("t,price\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn truth_round_trip() {
        let (t, x) = (vec![1.0, 2.0], vec![3.9, 3.9000001]);
        let mut buf = Vec::new();
        write_truth(&mut buf, &t, &x).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), (t, x));
    }
}
