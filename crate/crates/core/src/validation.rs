//! Dependency validation with statistics fast paths.
//!
//! Each validator first tries to decide from per-segment statistics and
//! dictionaries and falls back to a full hash set, probe, or sort only when
//! the metadata is inconclusive. [`ValidationConfig::fallback_only`] turns
//! every shortcut off; both configurations return the same verdicts.
//!
//! Any null in a validated column rejects the candidate.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::Serialize;
use thiserror::Error;

use crate::candidates::{Candidate, Status};
use crate::catalog::{Catalog, CatalogError, Dependency, DependencyKind, MetadataStore, Verdict};
use crate::storage::{Database, SegmentStats, StorageError, Table, Value};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

pub type Result<T, E = ValidationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    /// Decided from segment statistics (nulls, distinct counts).
    StatsReject,
    /// Non-overlapping segment domains prove uniqueness.
    IndexConfirm,
    #[serde(rename = "hashset")]
    HashSet,
    SampleReject,
    Chunkwise,
    FullSort,
    #[serde(rename = "minmax_reject")]
    MinMaxReject,
    ContinuityConfirm,
    DictProbe,
    FullProbe,
    /// The FD determinant is a known UCC.
    DeterminantKnown,
    /// The FD determinant was checked for uniqueness.
    DeterminantChecked,
    /// N-ary FD determinants are never confirmed.
    NaryReject,
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializable");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationConfig {
    /// Use statistics, indexes, sampling, and already known dependencies.
    pub metadata_aware: bool,
    /// Validators may read segment dictionaries directly.
    pub use_dictionaries: bool,
    pub od_sample_size: usize,
    pub seed: u64,
    /// Validate candidates of one kind concurrently.
    pub parallel: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            metadata_aware: true,
            use_dictionaries: true,
            od_sample_size: 100,
            seed: 0,
            parallel: false,
        }
    }
}

impl ValidationConfig {
    pub fn fallback_only() -> ValidationConfig {
        ValidationConfig {
            metadata_aware: false,
            use_dictionaries: false,
            ..ValidationConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub verdict: Verdict,
    pub path: Path,
    /// Row values (or dictionary entries) read from table data.
    pub rows_touched: u64,
    /// A dependency decided along the way, e.g. the UCC checked for
    /// continuity during IND validation.
    pub byproduct: Option<(Dependency, Verdict)>,
}

impl Validation {
    fn new(verdict: Verdict, path: Path, rows_touched: u64) -> Validation {
        Validation {
            verdict,
            path,
            rows_touched,
            byproduct: None,
        }
    }

    fn valid(path: Path, rows: u64) -> Validation {
        Validation::new(Verdict::Valid, path, rows)
    }

    fn rejected(path: Path, rows: u64) -> Validation {
        Validation::new(Verdict::Rejected, path, rows)
    }
}

/// Ordered map of segment bounds: the min and max of every segment map to
/// its chunk id.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    keys: BTreeMap<Value, usize>,
    bounds: Vec<Option<(Value, Value)>>,
    collision: bool,
}

impl SegmentIndex {
    /// Builds the index over `(chunk_id, stats)`; all-null segments are
    /// left out.
    pub fn build<'a>(segments: impl IntoIterator<Item = (usize, &'a SegmentStats)>) -> SegmentIndex {
        let mut index = SegmentIndex {
            keys: BTreeMap::new(),
            bounds: Vec::new(),
            collision: false,
        };
        for (chunk, s) in segments {
            if index.bounds.len() <= chunk {
                index.bounds.resize(chunk + 1, None);
            }
            if s.all_null() {
                continue;
            }
            index.bounds[chunk] = Some((s.min.clone(), s.max.clone()));
            for key in [&s.min, &s.max] {
                if let Some(prev) = index.keys.insert(key.clone(), chunk) {
                    index.collision |= prev != chunk;
                }
            }
        }
        index
    }

    /// Whether no two segment domains share a value: walking the keys in
    /// order, each segment's min key is immediately followed by its max key.
    pub fn disjoint(&self) -> bool {
        if self.collision {
            return false;
        }
        let mut open: Option<usize> = None;
        for (key, &chunk) in &self.keys {
            let Some((min, max)) = &self.bounds[chunk] else { return false };
            match open {
                None if key == min && key == max => {}
                None if key == min => open = Some(chunk),
                Some(o) if o == chunk && key == max => open = None,
                _ => return false,
            }
        }
        open.is_none()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Default)]
struct Counters {
    ucc: AtomicUsize,
    fd: AtomicUsize,
    od: AtomicUsize,
    ind: AtomicUsize,
}

pub struct Validator<'a> {
    db: &'a Database,
    config: ValidationConfig,
    counters: Counters,
}

fn column(table: &Table, name: &str) -> Result<usize> {
    Ok(table.column_index(name)?)
}

fn has_nulls(table: &Table, col: usize) -> bool {
    table.segments(col).any(|s| s.stats().null_count > 0)
}

/// Global (min, max) over non-null segment stats.
fn bounds(table: &Table, col: usize) -> Option<(Value, Value)> {
    let mut out: Option<(Value, Value)> = None;
    for s in table.segments(col).map(|s| s.stats()).filter(|s| !s.all_null()) {
        out = Some(match out {
            None => (s.min.clone(), s.max.clone()),
            Some((lo, hi)) => (lo.min(s.min.clone()), hi.max(s.max.clone())),
        });
    }
    out
}

/// Checks `a1 < a2 ⇒ b1 <= b2` over pairs already sorted by `a`.
fn ordered_by_groups<A: PartialEq, B: PartialOrd + Clone>(pairs: impl IntoIterator<Item = (A, B)>) -> bool {
    let mut prev_groups_max: Option<B> = None;
    let mut group: Option<(A, B)> = None;
    for (a, b) in pairs {
        if let Some(m) = &prev_groups_max {
            if b < *m {
                return false;
            }
        }
        match &mut group {
            Some((ga, gmax)) if *ga == a => {
                if b > *gmax {
                    *gmax = b;
                }
            }
            _ => {
                if let Some((_, gmax)) = group.take() {
                    prev_groups_max = Some(match prev_groups_max {
                        Some(m) if m > gmax => m,
                        _ => gmax,
                    });
                    if let Some(m) = &prev_groups_max {
                        if b < *m {
                            return false;
                        }
                    }
                }
                group = Some((a, b));
            }
        }
    }
    true
}

impl<'a> Validator<'a> {
    pub fn new(db: &'a Database, config: ValidationConfig) -> Validator<'a> {
        Validator {
            db,
            config,
            counters: Counters::default(),
        }
    }

    pub fn config(&self) -> &ValidationConfig {
        &self.config
    }

    /// Number of validator invocations for one dependency kind.
    pub fn calls(&self, kind: DependencyKind) -> usize {
        let c = match kind {
            DependencyKind::Ucc => &self.counters.ucc,
            DependencyKind::Fd => &self.counters.fd,
            DependencyKind::Od => &self.counters.od,
            DependencyKind::Ind => &self.counters.ind,
        };
        c.load(Ordering::Relaxed)
    }

    pub fn total_calls(&self) -> usize {
        [DependencyKind::Ucc, DependencyKind::Fd, DependencyKind::Od, DependencyKind::Ind]
            .into_iter()
            .map(|k| self.calls(k))
            .sum()
    }

    pub fn validate(&self, dep: &Dependency, store: &MetadataStore) -> Result<Validation> {
        match dep {
            Dependency::Ucc { table, columns } => {
                let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
                self.validate_ucc(table, &cols)
            }
            Dependency::Fd {
                table, determinant, ..
            } => {
                let det: Vec<&str> = determinant.iter().map(String::as_str).collect();
                self.validate_fd(table, &det, store)
            }
            Dependency::Od {
                table,
                ordering,
                ordered,
            } => {
                let a: Vec<&str> = ordering.iter().map(String::as_str).collect();
                let b: Vec<&str> = ordered.iter().map(String::as_str).collect();
                self.validate_od(table, &a, &b)
            }
            Dependency::Ind {
                from_table,
                from_columns,
                to_table,
                to_columns,
            } => {
                let a: Vec<&str> = from_columns.iter().map(String::as_str).collect();
                let x: Vec<&str> = to_columns.iter().map(String::as_str).collect();
                self.validate_ind(from_table, &a, to_table, &x, store)
            }
        }
    }

    // -- UCC ---------------------------------------------------------------

    pub fn validate_ucc(&self, table: &str, columns: &[&str]) -> Result<Validation> {
        self.counters.ucc.fetch_add(1, Ordering::Relaxed);
        let t = self.db.table(table)?;
        let cols = columns.iter().map(|c| column(t, c)).collect::<Result<Vec<_>>>()?;
        Ok(match cols.as_slice() {
            [c] => self.unary_unique(t, *c),
            _ => tuple_unique(t, &cols),
        })
    }

    fn unary_unique(&self, t: &Table, col: usize) -> Validation {
        if !self.config.metadata_aware {
            let mut set = FxHashSet::with_capacity_and_hasher(t.row_count(), Default::default());
            let mut touched = 0;
            for v in t.column_values(col) {
                touched += 1;
                if v.is_null() || !set.insert(v) {
                    return Validation::rejected(Path::HashSet, touched);
                }
            }
            return Validation::valid(Path::HashSet, touched);
        }
        // Phase 1: a duplicate or null inside one segment shows in its stats.
        for seg in t.segments(col) {
            let s = seg.stats();
            if s.null_count > 0 || s.distinct_count != s.size {
                return Validation::rejected(Path::StatsReject, 0);
            }
        }
        // Phase 2: segments whose domains do not overlap cannot share values.
        let index = SegmentIndex::build(t.segments(col).enumerate().map(|(i, s)| (i, s.stats())));
        if index.disjoint() {
            return Validation::valid(Path::IndexConfirm, 0);
        }
        // Phase 3: every segment is duplicate-free, so its dictionary holds
        // exactly its values.
        let mut set = FxHashSet::with_capacity_and_hasher(t.row_count(), Default::default());
        let mut touched = 0;
        for seg in t.segments(col) {
            if self.config.use_dictionaries {
                for v in seg.dictionary() {
                    touched += 1;
                    if !set.insert(v) {
                        return Validation::rejected(Path::HashSet, touched);
                    }
                }
            } else {
                for v in seg.iter() {
                    touched += 1;
                    if !set.insert(v) {
                        return Validation::rejected(Path::HashSet, touched);
                    }
                }
            }
        }
        Validation::valid(Path::HashSet, touched)
    }

    // -- FD ----------------------------------------------------------------

    /// Validates an FD from `determinant` to any dependents: only unary
    /// determinants that are unique are confirmed.
    pub fn validate_fd(&self, table: &str, determinant: &[&str], store: &MetadataStore) -> Result<Validation> {
        self.counters.fd.fetch_add(1, Ordering::Relaxed);
        let t = self.db.table(table)?;
        for c in determinant {
            column(t, c)?;
        }
        let [det] = determinant else {
            return Ok(Validation::rejected(Path::NaryReject, 0));
        };
        let ucc = Dependency::ucc(table, [*det]);
        if self.config.metadata_aware {
            match store.verdict(&ucc) {
                Some(Verdict::Valid) => return Ok(Validation::valid(Path::DeterminantKnown, 0)),
                Some(Verdict::Rejected) => return Ok(Validation::rejected(Path::DeterminantKnown, 0)),
                None if store.implied(&ucc) => return Ok(Validation::valid(Path::DeterminantKnown, 0)),
                None => {}
            }
        }
        let check = self.unary_unique(t, column(t, det)?);
        let mut out = Validation::new(check.verdict, Path::DeterminantChecked, check.rows_touched);
        if self.config.metadata_aware {
            out.byproduct = Some((ucc, check.verdict));
        }
        Ok(out)
    }

    // -- OD ----------------------------------------------------------------

    pub fn validate_od(&self, table: &str, ordering: &[&str], ordered: &[&str]) -> Result<Validation> {
        self.counters.od.fetch_add(1, Ordering::Relaxed);
        let t = self.db.table(table)?;
        let a = ordering.iter().map(|c| column(t, c)).collect::<Result<Vec<_>>>()?;
        let b = ordered.iter().map(|c| column(t, c)).collect::<Result<Vec<_>>>()?;
        if self.config.metadata_aware {
            if a.iter().chain(&b).any(|&c| has_nulls(t, c)) {
                return Ok(Validation::rejected(Path::StatsReject, 0));
            }
            let mut touched = 0;
            if self.config.od_sample_size > 0 && t.row_count() > 0 {
                let n = self.config.od_sample_size.min(t.row_count());
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                let cap = t.chunk_capacity();
                let mut sample: Vec<(Vec<&Value>, Vec<&Value>)> = rand::seq::index::sample(&mut rng, t.row_count(), n)
                    .into_iter()
                    .map(|row| {
                        let chunk = &t.chunks()[row / cap];
                        let pos = row % cap;
                        let get = |cols: &[usize]| cols.iter().map(|&c| chunk.segment(c).get(pos)).collect::<Vec<_>>();
                        (get(&a), get(&b))
                    })
                    .collect();
                touched += n as u64;
                sample.sort();
                if !ordered_by_groups(sample) {
                    return Ok(Validation::rejected(Path::SampleReject, touched));
                }
            }
            if let ([a], [b]) = (a.as_slice(), b.as_slice()) {
                if let Some(order) = chunk_order(t, *a, *b) {
                    let mut ok = true;
                    for chunk in order {
                        let (sa, sb) = (t.chunks()[chunk].segment(*a), t.chunks()[chunk].segment(*b));
                        touched += sa.len() as u64;
                        let sorted = sa.offsets().windows(2).all(|w| w[0] <= w[1]);
                        ok = if sorted {
                            ordered_by_groups(sa.iter().zip(sb.iter()))
                        } else {
                            let mut pairs: Vec<(&Value, &Value)> = sa.iter().zip(sb.iter()).collect();
                            pairs.sort();
                            ordered_by_groups(pairs)
                        };
                        if !ok {
                            break;
                        }
                    }
                    let verdict = if ok { Verdict::Valid } else { Verdict::Rejected };
                    return Ok(Validation::new(verdict, Path::Chunkwise, touched));
                }
            }
            return Ok(full_sort(t, &a, &b, touched));
        }
        Ok(full_sort(t, &a, &b, 0))
    }

    // -- IND ---------------------------------------------------------------

    pub fn validate_ind(
        &self,
        from_table: &str,
        from_columns: &[&str],
        to_table: &str,
        to_columns: &[&str],
        store: &MetadataStore,
    ) -> Result<Validation> {
        self.counters.ind.fetch_add(1, Ordering::Relaxed);
        let r = self.db.table(from_table)?;
        let s = self.db.table(to_table)?;
        let a = from_columns.iter().map(|c| column(r, c)).collect::<Result<Vec<_>>>()?;
        let x = to_columns.iter().map(|c| column(s, c)).collect::<Result<Vec<_>>>()?;
        if a.len() != x.len() || a.is_empty() {
            return Err(ValidationError::TypeMismatch("IND sides differ in arity".into()));
        }
        for (&ac, &xc) in a.iter().zip(&x) {
            if r.dtype(ac) != s.dtype(xc) {
                return Err(ValidationError::TypeMismatch(format!(
                    "{from_table}.{} is {} but {to_table}.{} is {}",
                    r.schema().columns[ac].name,
                    r.dtype(ac),
                    s.schema().columns[xc].name,
                    s.dtype(xc)
                )));
            }
        }
        if a.len() > 1 {
            return Ok(tuple_inclusion(r, &a, s, &x));
        }
        let (a, x) = (a[0], x[0]);
        if !self.config.metadata_aware {
            return Ok(self.probe(r, a, s, x, 0, false));
        }
        if has_nulls(r, a) {
            return Ok(Validation::rejected(Path::StatsReject, 0));
        }
        let Some((a_min, a_max)) = bounds(r, a) else {
            return Ok(self.probe(r, a, s, x, 0, self.config.use_dictionaries));
        };
        let Some((x_min, x_max)) = bounds(s, x) else {
            return Ok(Validation::rejected(Path::MinMaxReject, 0));
        };
        if a_min < x_min || a_max > x_max {
            return Ok(Validation::rejected(Path::MinMaxReject, 0));
        }
        let mut touched = 0;
        let mut byproduct = None;
        if s.dtype(x).is_integral() {
            let ucc = Dependency::ucc(to_table, [to_columns[0]]);
            let unique = match store.verdict(&ucc) {
                Some(v) => v == Verdict::Valid,
                None if store.implied(&ucc) => true,
                None => {
                    let check = self.unary_unique(s, x);
                    touched += check.rows_touched;
                    byproduct = Some((ucc, check.verdict));
                    check.verdict == Verdict::Valid
                }
            };
            if unique {
                let distinct: usize = s.segments(x).map(|seg| seg.stats().size).sum();
                let (lo, hi) = (x_min.as_i64().unwrap_or(0), x_max.as_i64().unwrap_or(0));
                if (hi as i128 - lo as i128 + 1) == distinct as i128 {
                    let mut v = Validation::valid(Path::ContinuityConfirm, touched);
                    v.byproduct = byproduct;
                    return Ok(v);
                }
            }
        }
        let mut v = self.probe(r, a, s, x, touched, self.config.use_dictionaries);
        v.byproduct = byproduct;
        Ok(v)
    }

    /// Hash set over `x`, then probes of `a`'s dictionary entries (or rows).
    fn probe(&self, r: &Table, a: usize, s: &Table, x: usize, mut touched: u64, dictionaries: bool) -> Validation {
        let mut set: FxHashSet<&Value> = FxHashSet::with_capacity_and_hasher(s.row_count(), Default::default());
        for seg in s.segments(x) {
            if dictionaries {
                touched += seg.dictionary().len() as u64;
                set.extend(seg.dictionary());
            } else {
                touched += seg.len() as u64;
                set.extend(seg.iter().filter(|v| !v.is_null()));
            }
        }
        let path = if dictionaries { Path::DictProbe } else { Path::FullProbe };
        for seg in r.segments(a) {
            if dictionaries {
                for v in seg.dictionary() {
                    touched += 1;
                    if !set.contains(v) {
                        return Validation::rejected(path, touched);
                    }
                }
            } else {
                for v in seg.iter() {
                    touched += 1;
                    if v.is_null() || !set.contains(v) {
                        return Validation::rejected(path, touched);
                    }
                }
            }
        }
        Validation::valid(path, touched)
    }
}

fn tuple_unique(t: &Table, cols: &[usize]) -> Validation {
    let mut set = FxHashSet::with_capacity_and_hasher(t.row_count(), Default::default());
    let mut touched = 0;
    for chunk in t.chunks() {
        for pos in 0..chunk.row_count() {
            touched += 1;
            let tuple: Vec<&Value> = cols.iter().map(|&c| chunk.segment(c).get(pos)).collect();
            if tuple.iter().any(|v| v.is_null()) || !set.insert(tuple) {
                return Validation::rejected(Path::HashSet, touched);
            }
        }
    }
    Validation::valid(Path::HashSet, touched)
}

fn tuple_inclusion(r: &Table, a: &[usize], s: &Table, x: &[usize]) -> Validation {
    let mut set = FxHashSet::with_capacity_and_hasher(s.row_count(), Default::default());
    let mut touched = 0;
    for chunk in s.chunks() {
        for pos in 0..chunk.row_count() {
            touched += 1;
            set.insert(x.iter().map(|&c| chunk.segment(c).get(pos)).collect::<Vec<_>>());
        }
    }
    for chunk in r.chunks() {
        for pos in 0..chunk.row_count() {
            touched += 1;
            let tuple: Vec<&Value> = a.iter().map(|&c| chunk.segment(c).get(pos)).collect();
            if tuple.iter().any(|v| v.is_null()) || !set.contains(&tuple) {
                return Validation::rejected(Path::FullProbe, touched);
            }
        }
    }
    Validation::valid(Path::FullProbe, touched)
}

fn full_sort(t: &Table, a: &[usize], b: &[usize], mut touched: u64) -> Validation {
    let mut pairs = Vec::with_capacity(t.row_count());
    for chunk in t.chunks() {
        for pos in 0..chunk.row_count() {
            let av: Vec<&Value> = a.iter().map(|&c| chunk.segment(c).get(pos)).collect();
            let bv: Vec<&Value> = b.iter().map(|&c| chunk.segment(c).get(pos)).collect();
            if av.iter().chain(&bv).any(|v| v.is_null()) {
                return Validation::rejected(Path::FullSort, touched + pairs.len() as u64 + 1);
            }
            pairs.push((av, bv));
        }
    }
    touched += pairs.len() as u64;
    pairs.sort();
    let verdict = if ordered_by_groups(pairs) {
        Verdict::Valid
    } else {
        Verdict::Rejected
    };
    Validation::new(verdict, Path::FullSort, touched)
}

/// Chunk order for the chunkwise OD check: sorting chunks by their `a`
/// domain must also sort their `b` domains, where adjacent domains may
/// share one boundary value. Then checking every chunk on its own decides
/// the OD for the whole table.
fn chunk_order(t: &Table, a: usize, b: usize) -> Option<Vec<usize>> {
    let mut chunks: Vec<(usize, &SegmentStats, &SegmentStats)> = t
        .chunks()
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.segment(a).stats(), c.segment(b).stats()))
        .collect();
    chunks.sort_by(|x, y| (&x.1.min, &x.1.max, &x.2.min, &x.2.max).cmp(&(&y.1.min, &y.1.max, &y.2.min, &y.2.max)));
    for w in chunks.windows(2) {
        let (p, n) = (&w[0], &w[1]);
        if p.1.max > n.1.min || p.2.max > n.2.min {
            return None;
        }
    }
    Some(chunks.into_iter().map(|c| c.0).collect())
}

// ---------------------------------------------------------------------------
// Discovery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub id: usize,
    pub candidate: String,
    pub kind: String,
    pub status: String,
    pub verdict: Option<String>,
    pub path: Option<Path>,
    pub micros: f64,
    pub rows_touched: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DiscoveryReport {
    pub entries: Vec<ReportEntry>,
    pub candidates: Vec<Candidate>,
    pub newly_valid: Vec<Dependency>,
    pub invalidated_plans: usize,
    pub micros: f64,
}

impl DiscoveryReport {
    pub fn validated(&self) -> usize {
        self.entries.iter().filter(|e| e.path.is_some()).count()
    }

    pub fn valid_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.status == Status::Valid).count()
    }

    pub fn status_of(&self, dep: &Dependency) -> Option<Status> {
        self.candidates.iter().find(|c| &c.dependency == dep).map(|c| c.status)
    }

    pub fn entry_of(&self, dep: &Dependency) -> Option<&ReportEntry> {
        let text = dep.to_string();
        self.entries.iter().find(|e| e.candidate == text)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<4} {:<52} {:<4} {:<8} {:<9} {:<19} {:>10}\n",
            "id", "candidate", "kind", "status", "verdict", "path", "us"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<4} {:<52} {:<4} {:<8} {:<9} {:<19} {:>10.1}\n",
                e.id,
                e.candidate,
                e.kind,
                e.status,
                e.verdict.as_deref().unwrap_or("-"),
                e.path.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                e.micros
            ));
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }
}

enum Decision {
    Skip(Option<Verdict>),
    Validate,
}

fn decide(c: &Candidate, store: &MetadataStore, statuses: &[(usize, Status)], metadata_aware: bool) -> Decision {
    if let Some(v) = store.verdict(&c.dependency) {
        return Decision::Skip(Some(v));
    }
    if !metadata_aware {
        return Decision::Validate;
    }
    if store.implied(&c.dependency) {
        return Decision::Skip(Some(Verdict::Valid));
    }
    if !c.depends_on.is_empty()
        && c.depends_on.iter().all(|d| {
            statuses
                .iter()
                .any(|(id, s)| id == d && *s == Status::Rejected)
        })
    {
        return Decision::Skip(None);
    }
    Decision::Validate
}

/// Validates `candidates` in the given order, recording verdicts in the
/// catalog and evicting cached plans affected by new valid dependencies.
///
/// Candidates already decided in the store, implied by valid dependencies,
/// or whose OD dependencies were all rejected are skipped.
pub fn run_discovery(validator: &Validator<'_>, catalog: &Catalog, candidates: Vec<Candidate>) -> Result<DiscoveryReport> {
    let start = Instant::now();
    let mut report = DiscoveryReport::default();
    let mut statuses: Vec<(usize, Status)> = Vec::new();
    let metadata_aware = validator.config().metadata_aware;

    let finish = |c: &mut Candidate,
                      status: Status,
                      verdict: Option<Verdict>,
                      validation: Option<&Validation>,
                      micros: f64,
                      report: &mut DiscoveryReport|
     -> Result<()> {
        if let Some(v) = validation {
            if let Some((dep, verdict)) = &v.byproduct {
                if catalog.store_mut().record(dep.clone(), *verdict)? && *verdict == Verdict::Valid {
                    report.newly_valid.push(dep.clone());
                }
            }
        }
        if let Some(verdict) = verdict {
            if catalog.store_mut().record(c.dependency.clone(), verdict)? && verdict == Verdict::Valid {
                report.newly_valid.push(c.dependency.clone());
            }
        }
        c.status = status;
        report.entries.push(ReportEntry {
            id: c.id,
            candidate: c.dependency.to_string(),
            kind: c.dependency.kind().to_string(),
            status: match (status, verdict) {
                (Status::Skipped, Some(v)) => format!("skipped-{v}"),
                _ => status.to_string(),
            },
            verdict: verdict.map(|v| v.to_string()),
            path: validation.map(|v| v.path),
            micros,
            rows_touched: validation.map_or(0, |v| v.rows_touched),
        });
        Ok(())
    };

    let mut remaining: Vec<Candidate> = candidates;
    let mut done: Vec<Candidate> = Vec::new();
    while !remaining.is_empty() {
        // Sequential mode handles one candidate per round; parallel mode the
        // leading run of candidates of one kind.
        let kind = remaining[0].dependency.kind();
        let take = if validator.config().parallel {
            remaining.iter().take_while(|c| c.dependency.kind() == kind).count()
        } else {
            1
        };
        let mut batch: Vec<Candidate> = remaining.drain(..take).collect();
        let decisions: Vec<Decision> = {
            let store = catalog.store();
            batch.iter().map(|c| decide(c, &store, &statuses, metadata_aware)).collect()
        };
        let results: Vec<Option<(Result<Validation>, f64)>> = {
            let store = catalog.store().clone();
            let run = |(c, d): (&Candidate, &Decision)| match d {
                Decision::Validate => {
                    let t = Instant::now();
                    let v = validator.validate(&c.dependency, &store);
                    Some((v, t.elapsed().as_secs_f64() * 1e6))
                }
                Decision::Skip(_) => None,
            };
            if batch.len() > 1 {
                batch.par_iter().zip(decisions.par_iter()).map(run).collect()
            } else {
                batch.iter().zip(decisions.iter()).map(run).collect()
            }
        };
        for ((c, d), r) in batch.iter_mut().zip(&decisions).zip(results) {
            match (d, r) {
                (Decision::Skip(verdict), _) => {
                    // A byproduct recorded earlier in this batch may have
                    // decided it already.
                    finish(c, Status::Skipped, *verdict, None, 0.0, &mut report)?;
                }
                (Decision::Validate, Some((v, micros))) => {
                    let v = v?;
                    // In a parallel batch an earlier byproduct may have
                    // recorded this dependency in the meantime.
                    if catalog.store().verdict(&c.dependency).is_some_and(|known| known != v.verdict) {
                        return Err(ValidationError::Catalog(CatalogError::Conflict {
                            dependency: c.dependency.clone(),
                            existing: catalog.store().verdict(&c.dependency).expect("known"),
                        }));
                    }
                    let status = match v.verdict {
                        Verdict::Valid => Status::Valid,
                        Verdict::Rejected => Status::Rejected,
                    };
                    finish(c, status, Some(v.verdict), Some(&v), micros, &mut report)?;
                }
                (Decision::Validate, None) => unreachable!("validated candidates carry a result"),
            }
            statuses.push((c.id, c.status));
        }
        done.extend(batch);
    }
    report.invalidated_plans = catalog.invalidate_affected(report.newly_valid.iter());
    report.candidates = done;
    report.micros = start.elapsed().as_secs_f64() * 1e6;
    Ok(report)
}
