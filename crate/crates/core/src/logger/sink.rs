use std::sync::{Arc, Mutex};

use chrono::{NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LogEntry, LogRecord, RecordError, Timestamp};

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_datetime(Utc::now())
    }
}

/// Deterministic clock: each reading moves forward by a seeded step of up
/// to two milliseconds.
#[derive(Debug)]
pub struct SimClock {
    state: Mutex<(i64, ChaCha8Rng)>,
}

impl SimClock {
    pub fn new(seed: u64) -> Self {
        let start = NaiveDate::from_ymd_opt(2020, 4, 22)
            .and_then(|d| d.and_hms_milli_opt(23, 44, 30, 514))
            .expect("valid date")
            .and_utc()
            .timestamp_micros();
        Self::starting_at(Timestamp::from_unix_micros(start), seed)
    }

    pub fn starting_at(start: Timestamp, seed: u64) -> Self {
        SimClock {
            state: Mutex::new((start.unix_micros(), ChaCha8Rng::seed_from_u64(seed))),
        }
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        let mut guard = self.state.lock().expect("clock lock");
        let (micros, rng) = &mut *guard;
        *micros += rng.random_range(0..=2_000);
        Timestamp::from_unix_micros(*micros)
    }
}

struct SinkInner {
    records: Mutex<Vec<LogRecord>>,
    clock: Box<dyn Clock>,
}

/// Shared, append-only capture log.
///
/// Any number of producers may append concurrently; the position in the log
/// (the sequence number returned by [`CaptureSink::append`]) fixes the total
/// order, and timestamps never go backwards along it.
#[derive(Clone)]
pub struct CaptureSink {
    inner: Arc<SinkInner>,
}

impl std::fmt::Debug for CaptureSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaptureSink").field("len", &self.len()).finish()
    }
}

impl CaptureSink {
    pub fn new(clock: impl Clock + 'static) -> Self {
        CaptureSink {
            inner: Arc::new(SinkInner {
                records: Mutex::new(Vec::new()),
                clock: Box::new(clock),
            }),
        }
    }

    pub fn simulated(seed: u64) -> Self {
        Self::new(SimClock::new(seed))
    }

    pub fn system() -> Self {
        Self::new(SystemClock)
    }

    /// Stamps and appends an entry, returning its sequence number.
    pub fn append(&self, entry: LogEntry) -> Result<usize, RecordError> {
        let mut records = self.inner.records.lock().expect("capture lock");
        let mut ts = self.inner.clock.now();
        if let Some(last) = records.last() {
            ts = ts.max(last.timestamp());
        }
        records.push(LogRecord::new(ts, entry)?);
        Ok(records.len() - 1)
    }

    pub fn note(&self, text: impl Into<String>) -> usize {
        self.append(LogEntry::Note(text.into())).expect("notes are always valid")
    }

    pub fn len(&self) -> usize {
        self.inner.records.lock().expect("capture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LogRecord> {
        self.inner.records.lock().expect("capture lock").clone()
    }

    /// Records with sequence number `seq` and later.
    pub fn since(&self, seq: usize) -> Vec<LogRecord> {
        let records = self.inner.records.lock().expect("capture lock");
        records.get(seq..).map(<[LogRecord]>::to_vec).unwrap_or_default()
    }

    pub fn tail(&self, n: usize) -> Vec<LogRecord> {
        let records = self.inner.records.lock().expect("capture lock");
        records[records.len().saturating_sub(n)..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_is_seeded_and_monotonic() {
        let a = SimClock::new(3);
        let b = SimClock::new(3);
        let mut prev = Timestamp::default();
        for _ in 0..100 {
            let t = a.now();
            assert_eq!(t, b.now());
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn sequence_numbers_and_windows() {
        let sink = CaptureSink::simulated(1);
        assert!(sink.is_empty());
        assert_eq!(sink.note("a"), 0);
        assert_eq!(sink.note("b"), 1);
        assert_eq!(sink.append(LogEntry::Error("c".into())).unwrap(), 2);
        assert!(sink.append(LogEntry::Error(String::new())).is_err());
        assert_eq!(sink.since(1).len(), 2);
        assert!(sink.since(10).is_empty());
        assert_eq!(sink.tail(1)[0].message(), "c");
        assert_eq!(sink.tail(10).len(), 3);
    }

    #[test]
    fn concurrent_producers_keep_time_order() {
        let sink = CaptureSink::system();
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let sink = sink.clone();
                std::thread::spawn(move || {
                    for j in 0..200 {
                        sink.note(format!("{i}:{j}"));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let records = sink.snapshot();
        assert_eq!(records.len(), 800);
        assert!(records.windows(2).all(|w| w[0].timestamp() <= w[1].timestamp()));
    }
}
