use super::{Aggregation, QuerySpec, StoreConnector, StoreError, TelemetryPoint};
use async_trait::async_trait;
use parking_lot::{Mutex, RwLock};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct SeriesKey {
    measurement: String,
    tags: BTreeMap<String, String>,
}

type Row = (i64, BTreeMap<String, f64>);

/// In-memory store, one ts-sorted vector per series, with an optional
/// append-only journal that is replayed on open.
#[derive(Default)]
pub struct MemoryStore {
    series: RwLock<BTreeMap<SeriesKey, Vec<Row>>>,
    journal: Option<Mutex<BufWriter<File>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_journal(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut store = Self::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let p: TelemetryPoint = serde_json::from_str(&line)
                    .map_err(|source| StoreError::JournalDecode { line: i + 1, source })?;
                store.insert(p)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.journal = Some(Mutex::new(BufWriter::new(file)));
        Ok(store)
    }

    pub fn write(&self, point: TelemetryPoint) -> Result<(), StoreError> {
        point.validate()?;
        if let Some(j) = &self.journal {
            let mut j = j.lock();
            serde_json::to_writer(&mut *j, &point).map_err(std::io::Error::from)?;
            j.write_all(b"\n")?;
        }
        self.insert(point)
    }

    fn insert(&self, point: TelemetryPoint) -> Result<(), StoreError> {
        point.validate()?;
        let key = SeriesKey {
            measurement: point.measurement,
            tags: point.tags,
        };
        let mut series = self.series.write();
        let rows = series.entry(key).or_default();
        match rows.last() {
            Some((last, _)) if *last < point.ts => rows.push((point.ts, point.fields)),
            None => rows.push((point.ts, point.fields)),
            _ => match rows.binary_search_by_key(&point.ts, |r| r.0) {
                // same series and timestamp: upsert
                Ok(i) => rows[i].1 = point.fields,
                Err(i) => rows.insert(i, (point.ts, point.fields)),
            },
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        if let Some(j) = &self.journal {
            j.lock().flush()?;
        }
        Ok(())
    }

    pub fn query(&self, q: &QuerySpec, now_ms: i64) -> Option<f64> {
        let lo = now_ms - q.window_ms();
        let series = self.series.read();
        let start = SeriesKey {
            measurement: q.measurement.clone(),
            tags: BTreeMap::new(),
        };
        let mut acc = Acc::new(q.aggregation);
        for (key, rows) in series.range(start..) {
            if key.measurement != q.measurement {
                break;
            }
            if !q.tag_filter.iter().all(|(k, v)| key.tags.get(k) == Some(v)) {
                continue;
            }
            let from = rows.partition_point(|r| r.0 <= lo);
            let to = rows.partition_point(|r| r.0 <= now_ms);
            for (ts, fields) in &rows[from..to.max(from)] {
                if let Some(&v) = fields.get(&q.field) {
                    acc.push(*ts, v);
                }
            }
        }
        acc.finish()
    }

    pub fn len(&self) -> usize {
        self.series.read().values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored points in one measurement (all series).
    pub fn count_measurement(&self, measurement: &str) -> usize {
        self.series
            .read()
            .iter()
            .filter(|(k, _)| k.measurement == measurement)
            .map(|(_, v)| v.len())
            .sum()
    }

    /// All points, ordered by series key then timestamp.
    pub fn points(&self) -> Vec<TelemetryPoint> {
        let series = self.series.read();
        let mut out = Vec::new();
        for (key, rows) in series.iter() {
            for (ts, fields) in rows {
                out.push(TelemetryPoint {
                    measurement: key.measurement.clone(),
                    tags: key.tags.clone(),
                    fields: fields.clone(),
                    ts: *ts,
                });
            }
        }
        out
    }

    /// Writes every point as one JSON line in canonical order.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        for p in self.points() {
            serde_json::to_writer(&mut w, &p).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Drop for MemoryStore {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

struct Acc {
    agg: Aggregation,
    n: usize,
    sum: f64,
    min: f64,
    max: f64,
    last: Option<(i64, f64)>,
}

impl Acc {
    fn new(agg: Aggregation) -> Self {
        Self {
            agg,
            n: 0,
            sum: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            last: None,
        }
    }

    fn push(&mut self, ts: i64, v: f64) {
        self.n += 1;
        self.sum += v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        // ties across series resolve to the later series in key order
        if self.last.is_none_or(|(t, _)| ts >= t) {
            self.last = Some((ts, v));
        }
    }

    fn finish(self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        Some(match self.agg {
            Aggregation::Last => self.last.expect("n > 0").1,
            Aggregation::Mean => self.sum / self.n as f64,
            Aggregation::Min => self.min,
            Aggregation::Max => self.max,
            Aggregation::Count => self.n as f64,
        })
    }
}

#[async_trait]
impl StoreConnector for MemoryStore {
    async fn write(&self, point: TelemetryPoint) -> Result<(), StoreError> {
        MemoryStore::write(self, point)
    }

    async fn query(&self, q: &QuerySpec, now_ms: i64) -> Result<Option<f64>, StoreError> {
        Ok(MemoryStore::query(self, q, now_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(text: &str) -> QuerySpec {
        QuerySpec::parse(text).unwrap()
    }

    const NOW: i64 = 1_700_000_000_000;

    #[test]
    fn single_point_last() {
        let s = MemoryStore::new();
        s.write(TelemetryPoint::new("fps", NOW).field("value", 25.0)).unwrap();
        assert_eq!(s.query(&q("last(fps.value, 10s)"), NOW), Some(25.0));
    }

    #[test]
    fn upsert_on_same_key() {
        let s = MemoryStore::new();
        s.write(TelemetryPoint::new("fps", NOW).field("value", 1.0)).unwrap();
        s.write(TelemetryPoint::new("fps", NOW).field("value", 2.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.query(&q("last(fps.value, 10s)"), NOW), Some(2.0));
        assert_eq!(s.query(&q("count(fps.value, 10s)"), NOW), Some(1.0));
    }

    #[test]
    fn empty_fields_rejected() {
        let s = MemoryStore::new();
        assert!(matches!(
            s.write(TelemetryPoint::new("fps", NOW)),
            Err(StoreError::InvalidPoint(_))
        ));
        assert!(s.write(TelemetryPoint::new("", NOW).field("v", 1.0)).is_err());
    }

    #[test]
    fn window_membership() {
        let s = MemoryStore::new();
        s.write(TelemetryPoint::new("fps", NOW - 60_000).field("value", 24.0)).unwrap();
        s.write(TelemetryPoint::new("fps", NOW - 30_000).field("value", 26.0)).unwrap();
        assert_eq!(s.query(&q("mean(fps.value, 300s)"), NOW), Some(25.0));
        assert_eq!(s.query(&q("mean(fps.value, 45s)"), NOW), Some(26.0));
        // half-open: a point exactly at now - window is excluded
        assert_eq!(s.query(&q("count(fps.value, 60s)"), NOW), Some(1.0));
        assert_eq!(s.query(&q("count(fps.value, 30s)"), NOW - 30_000), Some(1.0));
    }

    #[test]
    fn empty_store_is_absent() {
        assert_eq!(MemoryStore::new().query(&q("mean(fps.value, 300s)"), NOW), None);
    }

    #[test]
    fn tag_filter_and_out_of_order_insert() {
        let s = MemoryStore::new();
        s.write(TelemetryPoint::new("p", 20).field("w", 2.0).tag("host", "a")).unwrap();
        s.write(TelemetryPoint::new("p", 10).field("w", 1.0).tag("host", "a")).unwrap();
        s.write(TelemetryPoint::new("p", 15).field("w", 9.0).tag("host", "b")).unwrap();
        assert_eq!(s.query(&q("last(p.w, 1s) where host=a"), 20), Some(2.0));
        assert_eq!(s.query(&q("min(p.w, 1s) where host=a"), 20), Some(1.0));
        assert_eq!(s.query(&q("max(p.w, 1s)"), 20), Some(9.0));
        assert_eq!(s.query(&q("last(p.w, 1s)"), 16), Some(9.0));
    }

    #[test]
    fn journal_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let s = MemoryStore::with_journal(&path).unwrap();
            s.write(TelemetryPoint::new("fps", 5).field("value", 3.0).tag("c", "1")).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"m\":\"fps\",\"tg\":{\"c\":\"1\"},\"f\":{\"value\":3.0},\"ts\":5}\n");
        let s = MemoryStore::with_journal(&path).unwrap();
        assert_eq!(s.query(&q("last(fps.value, 1s)"), 5), Some(3.0));
    }

    proptest! {
        #[test]
        fn identical_queries_agree(vals in prop::collection::vec((0i64..100, -5.0f64..5.0), 0..50)) {
            let s = MemoryStore::new();
            for (ts, v) in &vals {
                s.write(TelemetryPoint::new("m", *ts).field("f", *v)).unwrap();
            }
            let query = q("mean(m.f, 1s)");
            prop_assert_eq!(s.query(&query, 60), s.query(&query, 60));
        }
    }
}
