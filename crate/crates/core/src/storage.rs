//! Immutable columnar storage.
//!
//! A [`Table`] is split into horizontal chunks of at most `chunk_capacity`
//! rows. Every chunk holds one [`Segment`] per column. Segments are
//! dictionary encoded: a sorted dictionary of the distinct non-null values
//! plus one dictionary offset per row. Because the dictionary is sorted, the
//! segment's minimum and maximum are its first and last dictionary entries
//! and its distinct count is the dictionary length, so [`SegmentStats`] never
//! require a row scan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use chrono::{Days, NaiveDate};
use rustc_hash::FxHashSet;
use thiserror::Error;

/// Rows per chunk unless configured otherwise.
pub const DEFAULT_CHUNK_CAPACITY: usize = 65535;

/// Attribute-vector sentinel for a null row.
pub const NULL_OFFSET: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: line {line}: malformed row: {message}")]
    MalformedRow {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{file}: line {line}: column `{column}`: cannot parse `{text}` as {dtype}")]
    TypeMismatch {
        file: String,
        line: u64,
        column: String,
        text: String,
        dtype: DataType,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{table}` has no column `{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("table `{table}` has no chunk {chunk}")]
    UnknownChunk { table: String, chunk: usize },
    #[error("column `{column}` of type {dtype} cannot be compared with {value:?}")]
    IncomparableType {
        column: String,
        dtype: DataType,
        value: Value,
    },
}

pub type Result<T, E = StorageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataType {
    Int,
    Utf8,
    Date,
}

impl DataType {
    pub fn parse(name: &str) -> Option<DataType> {
        match name.trim().to_ascii_lowercase().as_str() {
            "int" | "integer" | "int64" => Some(DataType::Int),
            "string" | "utf8" | "text" => Some(DataType::Utf8),
            "date" => Some(DataType::Date),
            _ => None,
        }
    }

    /// Integer-backed types, for which continuity arguments apply.
    pub fn is_integral(self) -> bool {
        matches!(self, DataType::Int | DataType::Date)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Int => "int",
            DataType::Utf8 => "string",
            DataType::Date => "date",
        })
    }
}

/// A single cell value.
///
/// The derived ordering places `Null` first and orders values of one type
/// naturally. Values of different non-null types never meet in one column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Null,
    Int(i64),
    /// Days since 1970-01-01.
    Date(i32),
    Utf8(Arc<str>),
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

pub fn parse_date(text: &str) -> Option<i32> {
    let date = NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d").ok()?;
    i32::try_from(date.signed_duration_since(epoch()).num_days()).ok()
}

pub fn format_date(days: i32) -> String {
    let date = if days >= 0 {
        epoch().checked_add_days(Days::new(days as u64))
    } else {
        epoch().checked_sub_days(Days::new(days.unsigned_abs() as u64))
    };
    match date {
        Some(d) => d.format("%Y-%m-%d").to_string(),
        None => format!("date({days})"),
    }
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Utf8(Arc::from(s))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn data_type(&self) -> Option<DataType> {
        match self {
            Value::Null => None,
            Value::Int(_) => Some(DataType::Int),
            Value::Date(_) => Some(DataType::Date),
            Value::Utf8(_) => Some(DataType::Utf8),
        }
    }

    /// Integer view of integer-backed values.
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Date(d) => Some(i64::from(*d)),
            _ => None,
        }
    }

    /// Parses a CSV field. The empty string is null.
    pub fn parse(text: &str, dtype: DataType) -> Option<Value> {
        if text.is_empty() {
            return Some(Value::Null);
        }
        match dtype {
            DataType::Int => text.trim().parse().ok().map(Value::Int),
            DataType::Date => parse_date(text).map(Value::Date),
            DataType::Utf8 => Some(Value::str(text)),
        }
    }

    /// Whether a value may be stored in a column of `dtype`.
    pub fn conforms_to(&self, dtype: DataType) -> bool {
        self.data_type().is_none_or(|t| t == dtype)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Int(v) => write!(f, "{v}"),
            Value::Date(d) => f.write_str(&format_date(*d)),
            Value::Utf8(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentStats {
    pub min: Value,
    pub max: Value,
    pub distinct_count: usize,
    pub size: usize,
    pub null_count: usize,
}

impl SegmentStats {
    /// True when every row is null (min and max are then `Null`).
    pub fn all_null(&self) -> bool {
        self.null_count == self.size
    }
}

/// One column's slice of one chunk.
#[derive(Debug, Clone)]
pub struct Segment {
    dictionary: Vec<Value>,
    offsets: Vec<u32>,
    stats: SegmentStats,
}

impl Segment {
    pub fn encode(values: &[Value]) -> Segment {
        let mut dictionary: Vec<Value> = values.iter().filter(|v| !v.is_null()).cloned().collect();
        dictionary.sort_unstable();
        dictionary.dedup();
        let mut null_count = 0;
        let offsets = values
            .iter()
            .map(|v| {
                if v.is_null() {
                    null_count += 1;
                    NULL_OFFSET
                } else {
                    dictionary.binary_search(v).expect("value in dictionary") as u32
                }
            })
            .collect::<Vec<_>>();
        let stats = SegmentStats {
            min: dictionary.first().cloned().unwrap_or(Value::Null),
            max: dictionary.last().cloned().unwrap_or(Value::Null),
            distinct_count: dictionary.len(),
            size: offsets.len(),
            null_count,
        };
        Segment {
            dictionary,
            offsets,
            stats,
        }
    }

    pub fn dictionary(&self) -> &[Value] {
        &self.dictionary
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn stats(&self) -> &SegmentStats {
        &self.stats
    }

    pub fn get(&self, position: usize) -> &Value {
        const NULL: Value = Value::Null;
        match self.offsets[position] {
            NULL_OFFSET => &NULL,
            offset => &self.dictionary[offset as usize],
        }
    }

    pub fn decode(&self) -> Vec<Value> {
        (0..self.len()).map(|p| self.get(p).clone()).collect()
    }

    /// Iterates the row values without materializing them.
    pub fn iter(&self) -> impl Iterator<Item = &Value> + '_ {
        (0..self.len()).map(move |p| self.get(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub dtype: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    pub columns: Vec<ColumnDef>,
}

impl Schema {
    pub fn new(columns: impl IntoIterator<Item = (impl Into<String>, DataType)>) -> Schema {
        Schema {
            columns: columns
                .into_iter()
                .map(|(name, dtype)| ColumnDef {
                    name: name.into(),
                    dtype,
                })
                .collect(),
        }
    }

    /// Parses the schema file format: one `name type` pair per line,
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Schema> {
        let mut columns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(ty), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(StorageError::Schema(format!(
                    "line {}: expected `<column> <type>`",
                    lineno + 1
                )));
            };
            let dtype = DataType::parse(ty).ok_or_else(|| {
                StorageError::Schema(format!("line {}: unknown type `{ty}`", lineno + 1))
            })?;
            if columns.iter().any(|c: &ColumnDef| c.name == name) {
                return Err(StorageError::Schema(format!("duplicate column `{name}`")));
            }
            columns.push(ColumnDef {
                name: name.to_string(),
                dtype,
            });
        }
        Ok(Schema { columns })
    }

    pub fn to_text(&self) -> String {
        self.columns
            .iter()
            .map(|c| format!("{} {}\n", c.name, c.dtype))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Chunk {
    segments: Vec<Segment>,
}

impl Chunk {
    pub fn segment(&self, column: usize) -> &Segment {
        &self.segments[column]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn row_count(&self) -> usize {
        self.segments.first().map_or(0, Segment::len)
    }
}

/// Column-level statistics derived from all segments; used by estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub min: Value,
    pub max: Value,
    pub distinct_count: usize,
    pub null_count: usize,
}

#[derive(Debug)]
pub struct Table {
    name: String,
    schema: Schema,
    chunks: Vec<Chunk>,
    chunk_capacity: usize,
    row_count: usize,
    column_stats: OnceLock<Vec<ColumnStats>>,
}

impl Table {
    /// Builds a table from column-major data.
    pub fn from_columns(
        name: impl Into<String>,
        schema: Schema,
        columns: Vec<Vec<Value>>,
        chunk_capacity: usize,
    ) -> Result<Table> {
        let name = name.into();
        if chunk_capacity == 0 {
            return Err(StorageError::Schema("chunk capacity must be positive".into()));
        }
        if columns.len() != schema.len() {
            return Err(StorageError::Schema(format!(
                "table `{name}`: {} columns given for a schema of {}",
                columns.len(),
                schema.len()
            )));
        }
        let row_count = columns.first().map_or(0, Vec::len);
        for (def, values) in schema.columns.iter().zip(&columns) {
            if values.len() != row_count {
                return Err(StorageError::Schema(format!(
                    "table `{name}`: column `{}` has {} rows, expected {row_count}",
                    def.name,
                    values.len()
                )));
            }
            if let Some(bad) = values.iter().find(|v| !v.conforms_to(def.dtype)) {
                return Err(StorageError::IncomparableType {
                    column: def.name.clone(),
                    dtype: def.dtype,
                    value: bad.clone(),
                });
            }
        }
        let chunks = (0..row_count)
            .step_by(chunk_capacity)
            .map(|start| {
                let end = (start + chunk_capacity).min(row_count);
                Chunk {
                    segments: columns
                        .iter()
                        .map(|values| Segment::encode(&values[start..end]))
                        .collect(),
                }
            })
            .collect();
        Ok(Table {
            name,
            schema,
            chunks,
            chunk_capacity,
            row_count,
            column_stats: OnceLock::new(),
        })
    }

    /// Builds a table from row-major data.
    pub fn from_rows(
        name: impl Into<String>,
        schema: Schema,
        rows: impl IntoIterator<Item = Vec<Value>>,
        chunk_capacity: usize,
    ) -> Result<Table> {
        let mut columns = vec![Vec::new(); schema.len()];
        for row in rows {
            if row.len() != schema.len() {
                return Err(StorageError::Schema(format!(
                    "row of arity {} for a schema of {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (column, value) in columns.iter_mut().zip(row) {
                column.push(value);
            }
        }
        Table::from_columns(name, schema, columns, chunk_capacity)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk_capacity(&self) -> usize {
        self.chunk_capacity
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_index(&self, column: &str) -> Result<usize> {
        self.schema
            .index_of(column)
            .ok_or_else(|| StorageError::UnknownColumn {
                table: self.name.clone(),
                column: column.to_string(),
            })
    }

    pub fn dtype(&self, column: usize) -> DataType {
        self.schema.columns[column].dtype
    }

    /// The segments of one column, in chunk order.
    pub fn segments(&self, column: usize) -> impl Iterator<Item = &Segment> + '_ {
        self.chunks.iter().map(move |c| c.segment(column))
    }

    /// All values of one column in storage order.
    pub fn column_values(&self, column: usize) -> impl Iterator<Item = &Value> + '_ {
        self.segments(column).flat_map(Segment::iter)
    }

    pub fn segment_stats(&self, column: &str, chunk_id: usize) -> Result<&SegmentStats> {
        let column = self.column_index(column)?;
        let chunk = self.chunks.get(chunk_id).ok_or_else(|| StorageError::UnknownChunk {
            table: self.name.clone(),
            chunk: chunk_id,
        })?;
        Ok(chunk.segment(column).stats())
    }

    pub fn column_stats(&self, column: usize) -> &ColumnStats {
        &self.column_stats.get_or_init(|| {
            (0..self.schema.len())
                .map(|c| {
                    let mut distinct = FxHashSet::default();
                    let mut null_count = 0;
                    let mut min = Value::Null;
                    let mut max = Value::Null;
                    for seg in self.segments(c) {
                        let s = seg.stats();
                        null_count += s.null_count;
                        if s.all_null() {
                            continue;
                        }
                        if min.is_null() || s.min < min {
                            min = s.min.clone();
                        }
                        if max.is_null() || s.max > max {
                            max = s.max.clone();
                        }
                        distinct.extend(seg.dictionary().iter());
                    }
                    ColumnStats {
                        min,
                        max,
                        distinct_count: distinct.len(),
                        null_count,
                    }
                })
                .collect()
        })[column]
    }

    /// Materializes all rows; intended for tests and small tables.
    pub fn rows(&self) -> Vec<Vec<Value>> {
        let mut rows = Vec::with_capacity(self.row_count);
        for chunk in &self.chunks {
            for p in 0..chunk.row_count() {
                rows.push(chunk.segments.iter().map(|s| s.get(p).clone()).collect());
            }
        }
        rows
    }

    /// Writes the table as CSV with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| StorageError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut writer = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        let header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        writer.write_record(&header).map_err(|e| io(e.into()))?;
        let mut record = Vec::with_capacity(header.len());
        for chunk in &self.chunks {
            for p in 0..chunk.row_count() {
                record.clear();
                record.extend(chunk.segments.iter().map(|s| s.get(p).to_string()));
                writer.write_record(&record).map_err(|e| io(e.into()))?;
            }
        }
        writer.flush().map_err(io)
    }
}

/// Loads `path` as a table named after the file stem.
pub fn load_csv(path: &Path, schema: &Schema, chunk_capacity: usize) -> Result<Table> {
    let file = path.display().to_string();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("table")
        .to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| StorageError::Io {
            path: file.clone(),
            source: e.into(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| StorageError::MalformedRow {
            file: file.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    // Map schema columns to CSV positions by name.
    let mut positions = Vec::with_capacity(schema.len());
    for def in &schema.columns {
        let pos = header.iter().position(|h| h.trim() == def.name).ok_or_else(|| {
            StorageError::Schema(format!("{file}: header lacks column `{}`", def.name))
        })?;
        positions.push(pos);
    }
    let mut columns: Vec<Vec<Value>> = vec![Vec::new(); schema.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            StorageError::MalformedRow {
                file: file.clone(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for ((def, &pos), column) in schema.columns.iter().zip(&positions).zip(&mut columns) {
            let text = record.get(pos).unwrap_or("");
            let value = Value::parse(text, def.dtype).ok_or_else(|| StorageError::TypeMismatch {
                file: file.clone(),
                line,
                column: def.name.clone(),
                text: text.to_string(),
                dtype: def.dtype,
            })?;
            column.push(value);
        }
    }
    Table::from_columns(name, schema.clone(), columns, chunk_capacity)
}

/// A row test against a single column value.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueTest {
    Eq(Value),
    Lt(Value),
    Le(Value),
    Gt(Value),
    Ge(Value),
    Between(Value, Value),
    IsNotNull,
    /// Matches nothing, e.g. a comparison against an empty subquery.
    Never,
}

impl ValueTest {
    pub fn matches(&self, v: &Value) -> bool {
        if v.is_null() {
            return false;
        }
        match self {
            ValueTest::Eq(c) => v == c,
            ValueTest::Lt(c) => v < c,
            ValueTest::Le(c) => v <= c,
            ValueTest::Gt(c) => v > c,
            ValueTest::Ge(c) => v >= c,
            ValueTest::Between(lo, hi) => lo <= v && v <= hi,
            ValueTest::IsNotNull => true,
            ValueTest::Never => false,
        }
    }

    fn operands(&self) -> impl Iterator<Item = &Value> {
        let (a, b) = match self {
            ValueTest::Eq(c) | ValueTest::Lt(c) | ValueTest::Le(c) | ValueTest::Gt(c) | ValueTest::Ge(c) => {
                (Some(c), None)
            }
            ValueTest::Between(lo, hi) => (Some(lo), Some(hi)),
            ValueTest::IsNotNull | ValueTest::Never => (None, None),
        };
        a.into_iter().chain(b)
    }

    /// Comparisons against null never hold.
    pub fn is_unsatisfiable(&self) -> bool {
        matches!(self, ValueTest::Never) || self.operands().any(Value::is_null)
    }

    /// Zone-map check: false only when no row of the segment can match.
    pub fn may_match(&self, stats: &SegmentStats) -> bool {
        if self.is_unsatisfiable() || stats.all_null() {
            return false;
        }
        let (min, max) = (&stats.min, &stats.max);
        match self {
            ValueTest::Eq(c) => min <= c && c <= max,
            ValueTest::Lt(c) => min < c,
            ValueTest::Le(c) => min <= c,
            ValueTest::Gt(c) => max > c,
            ValueTest::Ge(c) => max >= c,
            ValueTest::Between(lo, hi) => lo <= max && min <= hi && lo <= hi,
            ValueTest::IsNotNull => true,
            ValueTest::Never => false,
        }
    }

    /// The contiguous range of sorted-dictionary offsets whose values match.
    pub fn offset_range(&self, dictionary: &[Value]) -> Range<u32> {
        let lower = |c: &Value, inclusive: bool| {
            dictionary.partition_point(|v| if inclusive { v < c } else { v <= c })
        };
        let upper = |c: &Value, inclusive: bool| {
            dictionary.partition_point(|v| if inclusive { v <= c } else { v < c })
        };
        let (lo, hi) = if self.is_unsatisfiable() {
            (0, 0)
        } else {
            match self {
                ValueTest::Eq(c) => (lower(c, true), upper(c, true)),
                ValueTest::Lt(c) => (0, upper(c, false)),
                ValueTest::Le(c) => (0, upper(c, true)),
                ValueTest::Gt(c) => (lower(c, false), dictionary.len()),
                ValueTest::Ge(c) => (lower(c, true), dictionary.len()),
                ValueTest::Between(a, b) => (lower(a, true), upper(b, true)),
                ValueTest::IsNotNull => (0, dictionary.len()),
                ValueTest::Never => (0, 0),
            }
        };
        lo as u32..hi.max(lo) as u32
    }

    fn check_type(&self, column: &str, dtype: DataType) -> Result<()> {
        for v in self.operands() {
            if !v.conforms_to(dtype) {
                return Err(StorageError::IncomparableType {
                    column: column.to_string(),
                    dtype,
                    value: v.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPredicate {
    pub column: usize,
    pub test: ValueTest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkScan {
    pub positions: Vec<u32>,
    /// Rows whose attribute-vector entries were read.
    pub rows_read: usize,
    /// The chunk was skipped, either as requested or by its zone maps.
    pub pruned: bool,
}

/// True if the zone maps of `chunk_id` rule out every predicate match.
pub fn chunk_excluded(table: &Table, chunk_id: usize, predicates: &[ScanPredicate]) -> bool {
    let chunk = &table.chunks[chunk_id];
    predicates
        .iter()
        .any(|p| !p.test.may_match(chunk.segment(p.column).stats()))
}

/// Evaluates conjunctive `predicates` on one chunk.
///
/// Chunks listed in `pruned`, or excluded by segment statistics, are not
/// touched. Otherwise each predicate is translated into a dictionary offset
/// range and only the attribute vectors are read.
pub fn scan_chunk(
    table: &Table,
    chunk_id: usize,
    predicates: &[ScanPredicate],
    pruned: &BTreeSet<usize>,
) -> Result<ChunkScan> {
    let chunk = table.chunks.get(chunk_id).ok_or_else(|| StorageError::UnknownChunk {
        table: table.name.clone(),
        chunk: chunk_id,
    })?;
    for p in predicates {
        let def = table.schema.columns.get(p.column).ok_or_else(|| StorageError::UnknownColumn {
            table: table.name.clone(),
            column: format!("#{}", p.column),
        })?;
        p.test.check_type(&def.name, def.dtype)?;
    }
    if pruned.contains(&chunk_id) || chunk_excluded(table, chunk_id, predicates) {
        return Ok(ChunkScan {
            pruned: true,
            ..ChunkScan::default()
        });
    }
    let mut rows_read = 0;
    let mut positions: Option<Vec<u32>> = None;
    for p in predicates {
        let segment = chunk.segment(p.column);
        let range = p.test.offset_range(segment.dictionary());
        let offsets = segment.offsets();
        let hit = |pos: u32| range.contains(&offsets[pos as usize]);
        positions = Some(match positions {
            None => {
                rows_read += offsets.len();
                (0..offsets.len() as u32).filter(|&pos| hit(pos)).collect()
            }
            Some(current) => {
                rows_read += current.len();
                current.into_iter().filter(|&pos| hit(pos)).collect()
            }
        });
        if positions.as_ref().is_some_and(Vec::is_empty) {
            break;
        }
    }
    let positions = positions.unwrap_or_else(|| (0..chunk.row_count() as u32).collect());
    Ok(ChunkScan {
        positions,
        rows_read,
        pruned: false,
    })
}

/// Named, immutable tables.
#[derive(Debug, Default, Clone)]
pub struct Database {
    tables: BTreeMap<String, Arc<Table>>,
}

impl Database {
    pub fn new() -> Database {
        Database::default()
    }

    pub fn add(&mut self, table: Table) -> Arc<Table> {
        let table = Arc::new(table);
        self.tables.insert(table.name().to_string(), table.clone());
        table
    }

    pub fn table(&self, name: &str) -> Result<&Arc<Table>> {
        self.tables
            .get(name)
            .ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn tables(&self) -> impl Iterator<Item = &Arc<Table>> {
        self.tables.values()
    }

    /// Loads every `<name>.csv` in `dir` that has a `<name>.schema` next to it.
    pub fn load_dir(dir: &Path, chunk_capacity: usize) -> Result<Database> {
        let io = |source| StorageError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        let mut db = Database::new();
        for csv_path in paths {
            let schema_path = csv_path.with_extension("schema");
            if !schema_path.exists() {
                continue;
            }
            let text = fs::read_to_string(&schema_path).map_err(|source| StorageError::Io {
                path: schema_path.display().to_string(),
                source,
            })?;
            let schema = Schema::parse(&text)?;
            db.add(load_csv(&csv_path, &schema, chunk_capacity)?);
        }
        Ok(db)
    }
}
