//! Event streams and their static summaries.
//!
//! An [`EventStream`] is the continuous-time view of a directed network: a
//! time-ordered table of `(sender, receiver, time)` triplets among `N` nodes
//! observed over `[0, T]`. The same data can be collapsed into a binary
//! [`AdjacencyMatrix`] over a half-open window, into a [`WeightedAdjacency`]
//! of event counts, or split per ordered block pair into a [`BlockPairView`]
//! once a [`ClassAssignment`] is fixed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A single directed, timestamped interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub sender: usize,
    pub receiver: usize,
    pub time: f64,
}

impl Event {
    pub fn new(sender: usize, receiver: usize, time: f64) -> Self {
        Self {
            sender,
            receiver,
            time,
        }
    }
}

/// Time-ordered events among `num_nodes` nodes over `[0, horizon]`.
///
/// Construction validates every event and stable-sorts by time, so ties keep
/// their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    horizon: f64,
}

impl EventStream {
    pub fn new(mut events: Vec<Event>, num_nodes: usize, horizon: f64) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Validation("number of nodes must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation(format!(
                "horizon must be a positive finite time, got {horizon}"
            )));
        }
        for (k, e) in events.iter().enumerate() {
            if e.sender == e.receiver {
                return Err(Error::Validation(format!(
                    "event {k}: self-loop on node {}",
                    e.sender
                )));
            }
            if e.sender >= num_nodes || e.receiver >= num_nodes {
                return Err(Error::Validation(format!(
                    "event {k}: node index out of range for {num_nodes} nodes"
                )));
            }
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::Validation(format!(
                    "event {k}: time {} is negative or not finite",
                    e.time
                )));
            }
            if e.time > horizon {
                return Err(Error::Validation(format!(
                    "event {k}: time {} exceeds horizon {horizon}",
                    e.time
                )));
            }
        }
        // stable: ties stay in input order
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            events,
            num_nodes,
            horizon,
        })
    }

    /// Builds a stream inferring `N` as one past the largest node index and
    /// `T` as the last event time.
    pub fn from_events(events: Vec<Event>) -> Result<Self> {
        let n = events
            .iter()
            .map(|e| e.sender.max(e.receiver) + 1)
            .max()
            .unwrap_or(0);
        let t = events.iter().map(|e| e.time).fold(0.0_f64, f64::max);
        Self::new(events, n, t)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    /// Time of the last event, or 0 for an empty stream.
    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    /// Events with `t1 <= time < t2`.
    pub fn window(&self, t1: f64, t2: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.time < t1);
        let hi = self.events.partition_point(|e| e.time < t2);
        &self.events[lo..hi.max(lo)]
    }

    /// The prefix of the stream with `time <= t`, observed over `[0, t]`.
    pub fn prefix(&self, t: f64) -> Result<Self> {
        let hi = self.events.partition_point(|e| e.time <= t);
        Ok(Self {
            events: self.events[..hi].to_vec(),
            num_nodes: self.num_nodes,
            horizon: if t > 0.0 {
                t
            } else {
                return invalid("prefix time must be positive");
            },
        })
    }

    /// Same events observed over a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.events.clone(), self.num_nodes, horizon)
    }

    /// Applies a node relabelling `perm[old] = new`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return invalid("permutation length must equal the number of nodes");
        }
        let events = self
            .events
            .iter()
            .map(|e| Event::new(perm[e.sender], perm[e.receiver], e.time))
            .collect();
        Self::new(events, self.num_nodes, self.horizon)
    }
}

/// Bidirectional map between external node identifiers and dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity map `"0" .. "n-1"`.
    pub fn dense(n: usize) -> Self {
        let mut map = Self::new();
        for i in 0..n {
            map.get_or_insert(&i.to_string());
        }
        map
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// External identifier for an index. Indices beyond the mapped range
    /// (isolated nodes added through an explicit node count) are rendered as
    /// their decimal index.
    pub fn id_of(&self, index: usize) -> String {
        self.ids
            .get(index)
            .cloned()
            .unwrap_or_else(|| index.to_string())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["original_id", "index"])?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_record([id.as_str(), &i.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Overrides applied when loading an event CSV.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub num_nodes: Option<usize>,
    pub horizon: Option<f64>,
}

/// Loads an event CSV with header `sender,receiver,time`.
///
/// Node identifiers are arbitrary strings, mapped to dense indices in order of
/// first appearance in the time-sorted stream (sender before receiver).
pub fn load_events(path: impl AsRef<Path>, opts: LoadOptions) -> Result<(EventStream, NodeMap)> {
    let file = File::open(path.as_ref())?;
    read_events(BufReader::new(file), opts)
}

pub fn read_events<R: Read>(reader: R, opts: LoadOptions) -> Result<(EventStream, NodeMap)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["sender", "receiver", "time"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `sender,receiver,time`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut raw: Vec<(String, String, f64)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let time: f64 = rec[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid time `{}`", &rec[2]),
        })?;
        if !time.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("time `{}` is not finite", &rec[2]),
            });
        }
        if time < 0.0 {
            return Err(Error::Validation(format!("line {line}: negative time {time}")));
        }
        if rec[0] == rec[1] {
            return Err(Error::Validation(format!(
                "line {line}: self-loop on node `{}`",
                &rec[0]
            )));
        }
        raw.push((rec[0].to_string(), rec[1].to_string(), time));
    }
    raw.sort_by(|a, b| a.2.total_cmp(&b.2));

    let mut map = NodeMap::new();
    let mut events = Vec::with_capacity(raw.len());
    for (s, r, t) in &raw {
        let u = map.get_or_insert(s);
        let v = map.get_or_insert(r);
        events.push(Event::new(u, v, *t));
    }
    let n = match opts.num_nodes {
        Some(n) if n < map.len() => {
            return Err(Error::Validation(format!(
                "node count override {n} is smaller than the {} distinct nodes present",
                map.len()
            )))
        }
        Some(n) => n,
        None => map.len(),
    };
    let horizon = opts
        .horizon
        .unwrap_or_else(|| events.last().map_or(0.0, |e| e.time));
    Ok((EventStream::new(events, n, horizon)?, map))
}

/// Writes the stream as an event CSV, translating indices through `map` when
/// given. Times use the shortest representation that parses back exactly.
pub fn write_events<W: Write>(stream: &EventStream, map: Option<&NodeMap>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sender", "receiver", "time"])?;
    let id = |i: usize| map.map_or_else(|| i.to_string(), |m| m.id_of(i));
    for e in stream.events() {
        w.write_record([id(e.sender), id(e.receiver), format!("{}", e.time)])?;
    }
    w.flush()?;
    Ok(())
}

/// Hard class labels in `0..num_classes`. Empty classes are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAssignment {
    labels: Vec<usize>,
    num_classes: usize,
}

impl ClassAssignment {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return invalid("number of classes must be at least 1");
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Validation(format!(
                "node {i} has label {l} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    /// Infers `K` as one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |&m| m + 1);
        Self::new(labels, k)
    }

    /// All nodes in class 0.
    pub fn uniform(num_nodes: usize, num_classes: usize) -> Result<Self> {
        Self::new(vec![0; num_nodes], num_classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.num_classes * self.num_classes
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Moves `node` to `class`.
    pub fn set(&mut self, node: usize, class: usize) {
        assert!(class < self.num_classes);
        self.labels[node] = class;
    }

    /// Number of node pairs in ordered block pair `(q, l)` given class sizes.
    pub fn pair_size(sizes: &[usize], q: usize, l: usize) -> usize {
        if q == l {
            sizes[q] * sizes[q].saturating_sub(1)
        } else {
            sizes[q] * sizes[l]
        }
    }
}

/// Index of the ordered block pair `(q, l)` in row-major `K x K` layout.
#[inline]
pub fn pair_index(q: usize, l: usize, num_classes: usize) -> usize {
    q * num_classes + l
}

/// Events split by ordered block pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPairView {
    pub num_classes: usize,
    /// Ascending event times per pair, row-major over `(q, l)`.
    pub times: Vec<Vec<f64>>,
    /// Pair sizes `n_b`.
    pub sizes: Vec<usize>,
}

impl BlockPairView {
    pub fn count(&self, q: usize, l: usize) -> usize {
        self.times[pair_index(q, l, self.num_classes)].len()
    }

    pub fn size(&self, q: usize, l: usize) -> usize {
        self.sizes[pair_index(q, l, self.num_classes)]
    }

    pub fn pair_times(&self, q: usize, l: usize) -> &[f64] {
        &self.times[pair_index(q, l, self.num_classes)]
    }
}

/// Splits the stream's events by the ordered block pair of their endpoints.
pub fn partition_by_blocks(stream: &EventStream, c: &ClassAssignment) -> Result<BlockPairView> {
    if c.num_nodes() != stream.num_nodes() {
        return invalid(format!(
            "class assignment covers {} nodes but the stream has {}",
            c.num_nodes(),
            stream.num_nodes()
        ));
    }
    let k = c.num_classes();
    let mut times = vec![Vec::new(); k * k];
    for e in stream.events() {
        times[pair_index(c.label(e.sender), c.label(e.receiver), k)].push(e.time);
    }
    let class_sizes = c.class_sizes();
    let mut sizes = Vec::with_capacity(k * k);
    for q in 0..k {
        for l in 0..k {
            sizes.push(ClassAssignment::pair_size(&class_sizes, q, l));
        }
    }
    Ok(BlockPairView {
        num_classes: k,
        times,
        sizes,
    })
}

/// Binary adjacency matrix aggregated over a time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<u8>,
    /// Aggregation window `[t1, t2)`.
    pub interval: (f64, f64),
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0; n * n],
            interval: (0.0, 0.0),
        }
    }

    /// Builds from explicit directed edges. Self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::zeros(n);
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return invalid(format!("invalid edge ({i}, {j}) for {n} nodes"));
            }
            a.entries[i * n + j] = 1;
        }
        Ok(a)
    }

    /// Every event in the stream, including any at the horizon itself.
    pub fn from_stream(stream: &EventStream) -> Self {
        let n = stream.num_nodes();
        let mut a = Self::zeros(n);
        for e in stream.events() {
            a.entries[e.sender * n + e.receiver] = 1;
        }
        a.interval = (0.0, stream.horizon());
        a
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j] != 0
    }

    pub fn num_edges(&self) -> usize {
        self.entries.iter().filter(|&&x| x != 0).count()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| (0..self.n).filter(|&j| self.get(i, j)).count())
            .collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|j| (0..self.n).filter(|&i| self.get(i, j)).count())
            .collect()
    }

    /// Applies a node relabelling `perm[old] = new`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.entries[perm[i] * self.n + perm[j]] = 1;
                }
            }
        }
        out.interval = self.interval;
        out
    }
}

/// Aggregates events in `[t1, t2)` into a binary adjacency matrix.
pub fn aggregate(stream: &EventStream, t1: f64, t2: f64) -> Result<AdjacencyMatrix> {
    if !(t1 < t2) {
        return invalid(format!("aggregation window needs t1 < t2, got [{t1}, {t2})"));
    }
    if t1 < 0.0 || t2 > stream.horizon() {
        return invalid(format!(
            "aggregation window [{t1}, {t2}) is outside [0, {}]",
            stream.horizon()
        ));
    }
    let n = stream.num_nodes();
    let mut a = AdjacencyMatrix::zeros(n);
    for e in stream.window(t1, t2) {
        a.entries[e.sender * n + e.receiver] = 1;
    }
    a.interval = (t1, t2);
    Ok(a)
}

/// Per node-pair event counts over the whole stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency {
    n: usize,
    counts: Vec<u32>,
}

impl WeightedAdjacency {
    pub fn from_stream(stream: &EventStream) -> Self {
        let n = stream.num_nodes();
        let mut counts = vec![0u32; n * n];
        for e in stream.events() {
            counts[e.sender * n + e.receiver] += 1;
        }
        Self { n, counts }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.n + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Nonzero entries as `(sender, receiver, count)`.
    pub fn nonzero(&self) -> Vec<(usize, usize, u32)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let c = self.get(i, j);
                if c > 0 {
                    out.push((i, j, c));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1A: &str = "sender,receiver,time\n1,2,0.1\n2,3,0.4\n3,2,0.6\n1,2,1.2\n1,3,1.3\n2,1,1.6\n";

    fn fig1a() -> EventStream {
        read_events(FIG1A.as_bytes(), LoadOptions::default()).unwrap().0
    }

    #[test]
    fn loads_event_table() {
        let (s, map) = read_events(FIG1A.as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(s.num_nodes(), 3);
        assert_eq!(s.len(), 6);
        assert_eq!(s.horizon(), 1.6);
        assert_eq!(map.index_of("1"), Some(0));
        assert_eq!(map.index_of("3"), Some(2));
    }

    #[test]
    fn empty_file_with_overrides() {
        let opts = LoadOptions {
            num_nodes: Some(5),
            horizon: Some(10.0),
        };
        let (s, _) = read_events("sender,receiver,time\n".as_bytes(), opts).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.num_nodes(), 5);
        assert_eq!(s.horizon(), 10.0);
    }

    #[test]
    fn unsorted_rows_match_sorted() {
        let shuffled = "sender,receiver,time\n1,3,1.3\n2,1,1.6\n1,2,0.1\n3,2,0.6\n2,3,0.4\n1,2,1.2\n";
        let (a, _) = read_events(shuffled.as_bytes(), LoadOptions::default()).unwrap();
        assert_eq!(a, fig1a());
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = "sender,receiver,time\n1,2,0.1\n2,3,abc\n";
        match read_events(bad.as_bytes(), LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let self_loop = "sender,receiver,time\n2,2,0.1\n";
        assert!(matches!(
            read_events(self_loop.as_bytes(), LoadOptions::default()),
            Err(Error::Validation(_))
        ));
        let negative = "sender,receiver,time\n1,2,-0.5\n";
        assert!(matches!(
            read_events(negative.as_bytes(), LoadOptions::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn aggregates_figure_windows() {
        let s = fig1a();
        let a = aggregate(&s, 0.0, 1.0).unwrap();
        let ones: Vec<_> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| a.get(i, j))
            .collect();
        assert_eq!(ones, vec![(0, 1), (1, 2), (2, 1)]);

        let b = aggregate(&s, 1.0, 1.6).unwrap();
        let ones: Vec<_> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| b.get(i, j))
            .collect();
        // the 1.6 event sits on the excluded right endpoint
        assert_eq!(ones, vec![(0, 1), (0, 2)]);

        let s2 = s.with_horizon(2.0).unwrap();
        let c = aggregate(&s2, 1.0, 2.0).unwrap();
        let ones: Vec<_> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| c.get(i, j))
            .collect();
        assert_eq!(ones, vec![(0, 1), (0, 2), (1, 0)]);
    }

    #[test]
    fn aggregate_rejects_empty_window() {
        let s = fig1a();
        assert!(aggregate(&s, 1.0, 1.0).is_err());
        assert!(aggregate(&s, 1.2, 1.0).is_err());
        let z = aggregate(&s, 0.7, 1.1).unwrap();
        assert_eq!(z.num_edges(), 0);
    }

    #[test]
    fn partitions_figure_events() {
        let s = fig1a();
        let one = partition_by_blocks(&s, &ClassAssignment::uniform(3, 1).unwrap()).unwrap();
        assert_eq!(one.count(0, 0), 6);
        assert_eq!(one.size(0, 0), 6);

        let c = ClassAssignment::new(vec![0, 1, 1], 2).unwrap();
        let v = partition_by_blocks(&s, &c).unwrap();
        assert_eq!(
            [v.count(0, 1), v.count(1, 1), v.count(1, 0), v.count(0, 0)],
            [3, 2, 1, 0]
        );
        assert_eq!(
            [v.size(0, 1), v.size(1, 1), v.size(1, 0), v.size(0, 0)],
            [2, 2, 2, 0]
        );
        assert_eq!(v.pair_times(0, 1), &[0.1, 1.2, 1.3]);
    }

    #[test]
    fn weighted_adjacency_totals() {
        let s = fig1a();
        let w = WeightedAdjacency::from_stream(&s);
        assert_eq!(w.total(), 6);
        assert_eq!(w.get(0, 1), 2);
    }

    #[test]
    fn round_trips_through_csv() {
        let (s, map) = read_events(FIG1A.as_bytes(), LoadOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_events(&s, Some(&map), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), FIG1A);
    }

    #[test]
    fn labels_must_fit_classes() {
        assert!(ClassAssignment::new(vec![0, 2], 2).is_err());
        let c = ClassAssignment::new(vec![0, 0, 0], 3).unwrap();
        assert_eq!(c.class_sizes(), vec![3, 0, 0]);
    }
}
