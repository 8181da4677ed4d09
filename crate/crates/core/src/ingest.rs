//! Event-log parsing and tumbling-window aggregation.
//!
//! The input is one JSON object per line, `{"ts": <seconds>, "kind":
//! "request" | "bind"}`. A `bind` is a marked request: it counts toward both
//! `n_requests` and `n_marked`.
//!
//! Windows are half-open `[start, start + T)` intervals anchored at the
//! earliest timestamp. Timestamps may regress by up to
//! [`REORDER_TOLERANCE_S`]; larger regressions are rejected.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use thiserror::Error;

use crate::estimator::WindowStats;

/// Largest timestamp regression that is silently reordered.
pub const REORDER_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("invalid window parameters: {0}")]
    InvalidArgs(String),

    #[error("reading events: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Request,
    Bind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn is_marked(&self) -> bool {
        self.kind == EventKind::Bind
    }

    /// The event as a single log line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Decodes one log line. `line_no` is 1-based and only used in errors.
pub fn parse_event(line: &str, line_no: u64) -> Result<Event, IngestError> {
    let event: Event = serde_json::from_str(line).map_err(|e| IngestError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if !(event.ts.is_finite() && event.ts >= 0.0) {
        return Err(IngestError::Parse {
            line: line_no,
            message: format!("timestamp must be finite and >= 0, got {}", event.ts),
        });
    }
    Ok(event)
}

/// Iterates over the events of a reader, skipping blank lines.
pub fn read_events<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Event, IngestError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_event(&l, i as u64 + 1)),
            Err(e) => Some(Err(IngestError::Io(e))),
        })
}

fn check_window_args(window_s: f64, n_users: u64) -> Result<(), IngestError> {
    if !(window_s.is_finite() && window_s > 0.0) {
        return Err(IngestError::InvalidArgs(format!(
            "window length must be positive, got {window_s}"
        )));
    }
    if n_users == 0 {
        return Err(IngestError::InvalidArgs("n_users must be at least 1".into()));
    }
    Ok(())
}

fn stats_from_counts(
    window_start_ts: f64,
    window_s: f64,
    n_users: u64,
    n_requests: u64,
    n_marked: u64,
) -> WindowStats {
    let chi = if n_requests == 0 {
        0.0
    } else {
        n_marked as f64 / n_requests as f64
    };
    WindowStats {
        window_start_ts,
        window_s,
        n_requests,
        n_marked,
        chi,
        theta: n_requests as f64 / (n_users as f64 * window_s),
        zero_traffic: n_requests == 0,
    }
}

/// Aggregates the events of a single window `[window_start_ts, window_start_ts + window_s)`.
pub fn window_stats(
    events: &[Event],
    window_s: f64,
    n_users: u64,
    window_start_ts: f64,
) -> Result<WindowStats, IngestError> {
    check_window_args(window_s, n_users)?;
    let end = window_start_ts + window_s;
    let mut prev = f64::NEG_INFINITY;
    let mut marked = 0;
    for e in events {
        if e.ts < window_start_ts || e.ts >= end {
            return Err(IngestError::Sequencing(format!(
                "event at {} outside window [{window_start_ts}, {end})",
                e.ts
            )));
        }
        if e.ts < prev {
            return Err(IngestError::Sequencing(format!(
                "event at {} follows event at {prev}",
                e.ts
            )));
        }
        prev = e.ts;
        marked += u64::from(e.is_marked());
    }
    Ok(stats_from_counts(
        window_start_ts,
        window_s,
        n_users,
        events.len() as u64,
        marked,
    ))
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    requests: u64,
    marked: u64,
}

/// Streaming tumbling-window aggregator; see [`windowize`].
pub struct Windowizer<I> {
    events: I,
    window_s: f64,
    n_users: u64,
    /// Events seen before the anchor is settled.
    pending: Vec<Event>,
    anchor: Option<f64>,
    min_seen: f64,
    max_seen: f64,
    open: BTreeMap<u64, Counts>,
    next_index: u64,
    last_index: Option<u64>,
    exhausted: bool,
    failed: bool,
}

/// Groups a time-ordered event stream into contiguous windows of `window_s`
/// seconds, emitting zero-traffic windows for gaps.
pub fn windowize<I>(events: I, window_s: f64, n_users: u64) -> Result<Windowizer<I::IntoIter>, IngestError>
where
    I: IntoIterator<Item = Result<Event, IngestError>>,
{
    check_window_args(window_s, n_users)?;
    Ok(Windowizer {
        events: events.into_iter(),
        window_s,
        n_users,
        pending: Vec::new(),
        anchor: None,
        min_seen: f64::INFINITY,
        max_seen: f64::NEG_INFINITY,
        open: BTreeMap::new(),
        next_index: 0,
        last_index: None,
        exhausted: false,
        failed: false,
    })
}

impl<I> Windowizer<I>
where
    I: Iterator<Item = Result<Event, IngestError>>,
{
    fn index_of(&self, anchor: f64, ts: f64) -> u64 {
        ((ts - anchor) / self.window_s).floor().max(0.0) as u64
    }

    fn count(&mut self, anchor: f64, event: Event) {
        let idx = self.index_of(anchor, event.ts);
        let slot = self.open.entry(idx).or_default();
        slot.requests += 1;
        slot.marked += u64::from(event.is_marked());
        self.last_index = Some(self.last_index.map_or(idx, |l| l.max(idx)));
    }

    fn settle_anchor(&mut self) {
        let anchor = self.min_seen;
        self.anchor = Some(anchor);
        for event in std::mem::take(&mut self.pending) {
            self.count(anchor, event);
        }
    }

    fn accept(&mut self, event: Event) -> Result<(), IngestError> {
        if event.ts < self.max_seen - REORDER_TOLERANCE_S {
            return Err(IngestError::Sequencing(format!(
                "timestamp {} regresses more than {REORDER_TOLERANCE_S} s behind {}",
                event.ts, self.max_seen
            )));
        }
        self.min_seen = self.min_seen.min(event.ts);
        self.max_seen = self.max_seen.max(event.ts);
        match self.anchor {
            Some(anchor) => self.count(anchor, event),
            None => {
                self.pending.push(event);
                // No later event can precede max_seen - tolerance.
                if self.max_seen - REORDER_TOLERANCE_S >= self.min_seen {
                    self.settle_anchor();
                }
            }
        }
        Ok(())
    }

    /// Window `next_index` is closed once no admissible event can fall in it.
    fn next_closed(&self) -> bool {
        let Some(anchor) = self.anchor else {
            return false;
        };
        let end = anchor + (self.next_index + 1) as f64 * self.window_s;
        if self.exhausted {
            self.last_index.is_some_and(|last| self.next_index <= last)
        } else {
            self.max_seen - REORDER_TOLERANCE_S >= end
        }
    }

    fn emit(&mut self) -> WindowStats {
        let anchor = self.anchor.expect("anchor settled");
        let idx = self.next_index;
        self.next_index += 1;
        let counts = self.open.remove(&idx).unwrap_or_default();
        stats_from_counts(
            anchor + idx as f64 * self.window_s,
            self.window_s,
            self.n_users,
            counts.requests,
            counts.marked,
        )
    }
}

impl<I> Iterator for Windowizer<I>
where
    I: Iterator<Item = Result<Event, IngestError>>,
{
    type Item = Result<WindowStats, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if self.next_closed() {
                return Some(Ok(self.emit()));
            }
            if self.exhausted {
                return None;
            }
            match self.events.next() {
                Some(Ok(event)) => {
                    if let Err(e) = self.accept(event) {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
                Some(Err(e)) => {
                    self.failed = true;
                    return Some(Err(e));
                }
                None => {
                    self.exhausted = true;
                    if self.anchor.is_none() && !self.pending.is_empty() {
                        self.settle_anchor();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ts: f64, bind: bool) -> Event {
        Event {
            ts,
            kind: if bind { EventKind::Bind } else { EventKind::Request },
        }
    }

    fn collect(events: Vec<Event>, window_s: f64) -> Result<Vec<WindowStats>, IngestError> {
        windowize(events.into_iter().map(Ok), window_s, 10)?.collect()
    }

    #[test]
    fn parses_both_kinds() {
        assert_eq!(
            parse_event(r#"{"ts": 100.5, "kind": "request"}"#, 1).unwrap(),
            ev(100.5, false)
        );
        assert_eq!(
            parse_event(r#"{"ts": 100.5, "kind": "bind"}"#, 1).unwrap(),
            ev(100.5, true)
        );
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn parse_preserves_precision() {
        let e = parse_event(r#"{"ts": 1700000000.123456789, "kind": "bind"}"#, 1).unwrap();
        assert_eq!(e.ts, 1_700_000_000.123_456_789);
        assert_eq!(parse_event(&e.to_line(), 1).unwrap(), e);
    }

    #[test]
    fn parse_errors_carry_line_number() {
        for bad in [
            r#"{"ts": "abc"}"#,
            r#"{"ts": 1.0, "kind": "search"}"#,
            r#"{"ts": -1.0, "kind": "bind"}"#,
            "not json",
        ] {
            match parse_event(bad, 7) {
                Err(IngestError::Parse { line, .. }) => assert_eq!(line, 7),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn read_events_skips_blank_lines() {
        let text = "{\"ts\":1,\"kind\":\"request\"}\n\n{\"ts\":2,\"kind\":\"bind\"}\nbad\n";
        let out: Vec<_> = read_events(text.as_bytes()).collect();
        assert_eq!(out.len(), 3);
        assert!(matches!(out[2], Err(IngestError::Parse { line: 4, .. })));
    }

    #[test]
    fn single_window_counts() {
        let events: Vec<Event> = (0..100).map(|i| ev(i as f64, i % 100 < 27)).collect();
        let w = window_stats(&events, 600.0, 50, 0.0).unwrap();
        assert_eq!((w.n_requests, w.n_marked), (100, 27));
        assert!((w.chi - 0.27).abs() < 1e-15);
        assert!((w.theta - 100.0 / 30_000.0).abs() < 1e-18);
        assert!(!w.zero_traffic);
    }

    #[test]
    fn single_window_edge_cases() {
        let w = window_stats(&[], 600.0, 50, 0.0).unwrap();
        assert!(w.zero_traffic);
        assert_eq!((w.chi, w.theta), (0.0, 0.0));

        let all: Vec<Event> = (0..5).map(|i| ev(i as f64, true)).collect();
        assert_eq!(window_stats(&all, 600.0, 50, 0.0).unwrap().chi, 1.0);

        assert!(matches!(
            window_stats(&[ev(600.0, false)], 600.0, 50, 0.0),
            Err(IngestError::Sequencing(_))
        ));
        assert!(matches!(
            window_stats(&[ev(5.0, false), ev(4.0, false)], 600.0, 50, 0.0),
            Err(IngestError::Sequencing(_))
        ));
        assert!(window_stats(&[], 0.0, 50, 0.0).is_err());
        assert!(window_stats(&[], 10.0, 0, 0.0).is_err());
    }

    #[test]
    fn hour_of_uniform_events_gives_six_windows() {
        let events: Vec<Event> = (0..3600).map(|i| ev(i as f64, false)).collect();
        let windows = collect(events, 600.0).unwrap();
        assert_eq!(windows.len(), 6);
        assert!(windows.iter().all(|w| w.n_requests == 600));
    }

    #[test]
    fn gaps_emit_zero_traffic_windows() {
        let events = vec![ev(0.0, false), ev(10.0, true), ev(2400.0, false)];
        let windows = collect(events, 600.0).unwrap();
        let counts: Vec<u64> = windows.iter().map(|w| w.n_requests).collect();
        assert_eq!(counts, vec![2, 0, 0, 0, 1]);
        assert_eq!(windows.iter().filter(|w| w.zero_traffic).count(), 3);
        assert_eq!(windows[4].window_start_ts, 2400.0);
    }

    #[test]
    fn boundary_is_half_open() {
        let windows = collect(vec![ev(0.0, false), ev(599.9, false), ev(600.0, false)], 600.0).unwrap();
        let counts: Vec<u64> = windows.iter().map(|w| w.n_requests).collect();
        assert_eq!(counts, vec![2, 1]);
    }

    #[test]
    fn small_regressions_are_reordered() {
        let events = vec![ev(10.0, false), ev(9.5, true), ev(600.2, false), ev(599.5, true)];
        let windows = collect(events, 600.0).unwrap();
        assert_eq!(windows[0].window_start_ts, 9.5);
        let counts: Vec<(u64, u64)> = windows.iter().map(|w| (w.n_requests, w.n_marked)).collect();
        assert_eq!(counts, vec![(4, 2)]);

        let events = vec![ev(0.0, false), ev(700.0, false), ev(699.0, true)];
        let windows = collect(events, 600.0).unwrap();
        let counts: Vec<(u64, u64)> = windows.iter().map(|w| (w.n_requests, w.n_marked)).collect();
        assert_eq!(counts, vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn large_regression_is_rejected() {
        let events = vec![ev(0.0, false), ev(100.0, false), ev(98.5, false)];
        let out: Vec<_> = windowize(events.into_iter().map(Ok), 600.0, 10).unwrap().collect();
        assert!(matches!(out.last(), Some(Err(IngestError::Sequencing(_)))));
    }

    #[test]
    fn empty_stream_yields_nothing() {
        assert!(collect(vec![], 600.0).unwrap().is_empty());
    }

    #[test]
    fn parse_error_stops_stream() {
        let text = "{\"ts\":1,\"kind\":\"request\"}\n{\"ts\":\"x\"}\n{\"ts\":2,\"kind\":\"bind\"}\n";
        let out: Vec<_> = windowize(read_events(text.as_bytes()), 600.0, 10).unwrap().collect();
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0], Err(IngestError::Parse { line: 2, .. })));
    }

    #[test]
    fn pooled_chi_needs_weighting() {
        // 10 events at chi=1.0, then 90 events at chi=0.0.
        let mut events: Vec<Event> = (0..10).map(|i| ev(i as f64, true)).collect();
        events.extend((0..90).map(|i| ev(600.0 + i as f64, false)));
        let windows = collect(events, 600.0).unwrap();
        let total: u64 = windows.iter().map(|w| w.n_requests).sum();
        let marked: u64 = windows.iter().map(|w| w.n_marked).sum();
        let pooled = marked as f64 / total as f64;
        let weighted: f64 =
            windows.iter().map(|w| w.chi * w.n_requests as f64).sum::<f64>() / total as f64;
        let unweighted: f64 = windows.iter().map(|w| w.chi).sum::<f64>() / windows.len() as f64;
        assert!((pooled - 0.1).abs() < 1e-15);
        assert!((weighted - pooled).abs() < 1e-15);
        assert!((unweighted - 0.5).abs() < 1e-15);
    }
}
