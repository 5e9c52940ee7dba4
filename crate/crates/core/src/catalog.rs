//! Dependency metadata and the plan cache.
//!
//! The [`MetadataStore`] keeps every dependency with its verdict, split into
//! schema-declared constraints, discovered valid dependencies and rejected
//! candidates. It serializes to a line-oriented text file:
//!
//! ```text
//! [schema]
//! UCC date_dim(d_sk)
//! IND sales(s_sold_date) -> date_dim(d_sk)
//! [valid]
//! OD date_dim(d_sk) |-> (d_year)
//! FD customer(c_sk) -> (c_name)
//! [rejected]
//! UCC sales(s_customer)
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use thiserror::Error;

use crate::plan::LogicalPlan;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CatalogError {
    #[error("malformed dependency: {0}")]
    Malformed(String),
    #[error("cannot parse `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("{dependency} is already recorded as {existing}")]
    Conflict {
        dependency: Dependency,
        existing: Verdict,
    },
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

/// A data dependency over base-table columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dependency {
    Ucc {
        table: String,
        columns: BTreeSet<String>,
    },
    Fd {
        table: String,
        determinant: BTreeSet<String>,
        dependents: BTreeSet<String>,
    },
    Od {
        table: String,
        ordering: Vec<String>,
        ordered: Vec<String>,
    },
    Ind {
        from_table: String,
        from_columns: Vec<String>,
        to_table: String,
        to_columns: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DependencyKind {
    Od,
    Ind,
    Ucc,
    Fd,
}

impl fmt::Display for DependencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DependencyKind::Ucc => "UCC",
            DependencyKind::Fd => "FD",
            DependencyKind::Od => "OD",
            DependencyKind::Ind => "IND",
        })
    }
}

fn names<I: IntoIterator<Item = S>, S: Into<String>>(cols: I) -> Vec<String> {
    cols.into_iter().map(Into::into).collect()
}

impl Dependency {
    pub fn ucc<I: IntoIterator<Item = S>, S: Into<String>>(table: &str, columns: I) -> Dependency {
        Dependency::Ucc {
            table: table.to_string(),
            columns: names(columns).into_iter().collect(),
        }
    }

    pub fn fd<I, J, S, T>(table: &str, determinant: I, dependents: J) -> Dependency
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        Dependency::Fd {
            table: table.to_string(),
            determinant: names(determinant).into_iter().collect(),
            dependents: names(dependents).into_iter().collect(),
        }
    }

    pub fn od<I, J, S, T>(table: &str, ordering: I, ordered: J) -> Dependency
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        Dependency::Od {
            table: table.to_string(),
            ordering: names(ordering),
            ordered: names(ordered),
        }
    }

    pub fn ind<I, J, S, T>(from_table: &str, from_columns: I, to_table: &str, to_columns: J) -> Dependency
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        Dependency::Ind {
            from_table: from_table.to_string(),
            from_columns: names(from_columns),
            to_table: to_table.to_string(),
            to_columns: names(to_columns),
        }
    }

    pub fn kind(&self) -> DependencyKind {
        match self {
            Dependency::Ucc { .. } => DependencyKind::Ucc,
            Dependency::Fd { .. } => DependencyKind::Fd,
            Dependency::Od { .. } => DependencyKind::Od,
            Dependency::Ind { .. } => DependencyKind::Ind,
        }
    }

    /// Tables whose data the dependency describes.
    pub fn tables(&self) -> Vec<&str> {
        match self {
            Dependency::Ucc { table, .. } | Dependency::Fd { table, .. } | Dependency::Od { table, .. } => {
                vec![table]
            }
            Dependency::Ind {
                from_table, to_table, ..
            } => vec![from_table, to_table],
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(CatalogError::Malformed(format!("{msg}: {self}")));
        match self {
            Dependency::Ucc { columns, .. } if columns.is_empty() => bad("empty UCC"),
            Dependency::Fd {
                determinant,
                dependents,
                ..
            } => {
                if determinant.is_empty() || dependents.is_empty() {
                    bad("FD with an empty side")
                } else if !determinant.is_disjoint(dependents) {
                    bad("FD sides overlap")
                } else {
                    Ok(())
                }
            }
            Dependency::Od { ordering, ordered, .. } if ordering.is_empty() || ordered.is_empty() => {
                bad("OD with an empty side")
            }
            Dependency::Ind {
                from_columns,
                to_columns,
                ..
            } if from_columns.is_empty() || from_columns.len() != to_columns.len() => {
                bad("IND column lists differ in arity")
            }
            _ => Ok(()),
        }
    }
}

fn join_cols<'a>(cols: impl IntoIterator<Item = &'a String>) -> String {
    cols.into_iter().map(String::as_str).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Dependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dependency::Ucc { table, columns } => write!(f, "UCC {table}({})", join_cols(columns)),
            Dependency::Fd {
                table,
                determinant,
                dependents,
            } => write!(f, "FD {table}({}) -> ({})", join_cols(determinant), join_cols(dependents)),
            Dependency::Od {
                table,
                ordering,
                ordered,
            } => write!(f, "OD {table}({}) |-> ({})", join_cols(ordering), join_cols(ordered)),
            Dependency::Ind {
                from_table,
                from_columns,
                to_table,
                to_columns,
            } => write!(
                f,
                "IND {from_table}({}) -> {to_table}({})",
                join_cols(from_columns),
                join_cols(to_columns)
            ),
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses `name(a,b)` or `(a,b)` into the optional name and column list.
fn parse_group(text: &str) -> Option<(&str, Vec<String>)> {
    let text = text.trim();
    let open = text.find('(')?;
    let body = text[open + 1..].strip_suffix(')')?;
    let name = text[..open].trim();
    let cols: Vec<String> = body.split(',').map(|c| c.trim().to_string()).collect();
    if cols.iter().any(|c| !is_ident(c)) || !(name.is_empty() || is_ident(name)) {
        return None;
    }
    Some((name, cols))
}

impl FromStr for Dependency {
    type Err = CatalogError;

    fn from_str(text: &str) -> Result<Dependency> {
        let err = |message: &str| CatalogError::Parse {
            text: text.to_string(),
            message: message.to_string(),
        };
        let text_t = text.trim();
        let (kind, rest) = text_t.split_once(' ').ok_or_else(|| err("missing kind"))?;
        let named = |s: &str| -> Result<(String, Vec<String>)> {
            match parse_group(s) {
                Some((name, cols)) if !name.is_empty() => Ok((name.to_string(), cols)),
                _ => Err(err("expected `table(columns)`")),
            }
        };
        let bare = |s: &str| -> Result<Vec<String>> {
            match parse_group(s) {
                Some(("", cols)) => Ok(cols),
                _ => Err(err("expected `(columns)`")),
            }
        };
        let dep = match kind {
            "UCC" => {
                let (table, cols) = named(rest)?;
                Dependency::ucc(&table, cols)
            }
            "FD" => {
                let (lhs, rhs) = rest.split_once("->").ok_or_else(|| err("missing `->`"))?;
                let (table, det) = named(lhs)?;
                Dependency::fd(&table, det, bare(rhs)?)
            }
            "OD" => {
                let (lhs, rhs) = rest.split_once("|->").ok_or_else(|| err("missing `|->`"))?;
                let (table, ordering) = named(lhs)?;
                Dependency::od(&table, ordering, bare(rhs)?)
            }
            "IND" => {
                let (lhs, rhs) = rest.split_once("->").ok_or_else(|| err("missing `->`"))?;
                let (ft, fc) = named(lhs)?;
                let (tt, tc) = named(rhs)?;
                Dependency::ind(&ft, fc, &tt, tc)
            }
            _ => return Err(err("unknown dependency kind")),
        };
        dep.check()?;
        Ok(dep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Valid,
    Rejected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Valid => "valid",
            Verdict::Rejected => "rejected",
        })
    }
}

/// Verdicts for every dependency the engine knows about.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataStore {
    valid: BTreeSet<Dependency>,
    rejected: BTreeSet<Dependency>,
    schema: BTreeSet<Dependency>,
}

impl MetadataStore {
    pub fn new() -> MetadataStore {
        MetadataStore::default()
    }

    /// Records a verdict. Returns `true` if the dependency was new.
    pub fn record(&mut self, dep: Dependency, verdict: Verdict) -> Result<bool> {
        dep.check()?;
        if let Some(existing) = self.verdict(&dep) {
            if existing != verdict {
                return Err(CatalogError::Conflict {
                    dependency: dep,
                    existing,
                });
            }
            return Ok(false);
        }
        match verdict {
            Verdict::Valid => self.valid.insert(dep),
            Verdict::Rejected => self.rejected.insert(dep),
        };
        Ok(true)
    }

    /// Declares a schema constraint (primary or foreign key), which is valid.
    pub fn declare(&mut self, dep: Dependency) -> Result<bool> {
        let new = self.record(dep.clone(), Verdict::Valid)?;
        self.schema.insert(dep);
        Ok(new)
    }

    pub fn verdict(&self, dep: &Dependency) -> Option<Verdict> {
        if self.valid.contains(dep) {
            Some(Verdict::Valid)
        } else if self.rejected.contains(dep) {
            Some(Verdict::Rejected)
        } else {
            None
        }
    }

    /// Whether `dep` follows from recorded valid dependencies: it is recorded
    /// itself, is a UCC containing a valid UCC, or is an FD whose determinant
    /// contains a valid UCC or a recorded FD's determinant covering it.
    pub fn implied(&self, dep: &Dependency) -> bool {
        if self.valid.contains(dep) {
            return true;
        }
        match dep {
            Dependency::Ucc { table, columns } => self.has_ucc_within(table, columns),
            Dependency::Fd {
                table,
                determinant,
                dependents,
            } => {
                self.has_ucc_within(table, determinant)
                    || self.valid.iter().any(|v| match v {
                        Dependency::Fd {
                            table: t,
                            determinant: d,
                            dependents: s,
                        } => t == table && d.is_subset(determinant) && dependents.is_subset(s),
                        _ => false,
                    })
            }
            _ => false,
        }
    }

    fn has_ucc_within(&self, table: &str, columns: &BTreeSet<String>) -> bool {
        self.valid.iter().any(|v| match v {
            Dependency::Ucc { table: t, columns: c } => t == table && c.is_subset(columns),
            _ => false,
        })
    }

    pub fn is_schema_constraint(&self, dep: &Dependency) -> bool {
        self.schema.contains(dep)
    }

    pub fn valid(&self) -> impl Iterator<Item = &Dependency> {
        self.valid.iter()
    }

    pub fn rejected(&self) -> impl Iterator<Item = &Dependency> {
        self.rejected.iter()
    }

    pub fn schema_constraints(&self) -> impl Iterator<Item = &Dependency> {
        self.schema.iter()
    }

    /// Valid dependencies involving `table` (for INDs, as either endpoint).
    pub fn valid_for_table<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a Dependency> + 'a {
        self.valid.iter().filter(move |d| d.tables().contains(&table))
    }

    pub fn len(&self) -> usize {
        self.valid.len() + self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[schema]\n");
        for d in &self.schema {
            out.push_str(&format!("{d}\n"));
        }
        out.push_str("[valid]\n");
        for d in self.valid.difference(&self.schema) {
            out.push_str(&format!("{d}\n"));
        }
        out.push_str("[rejected]\n");
        for d in &self.rejected {
            out.push_str(&format!("{d}\n"));
        }
        out
    }

    /// Parses the sectioned text format. Lines before any section header are
    /// treated as schema constraints, so a plain list of keys also loads.
    pub fn parse(text: &str) -> Result<MetadataStore> {
        #[derive(Clone, Copy)]
        enum Section {
            Schema,
            Valid,
            Rejected,
        }
        let mut store = MetadataStore::new();
        let mut section = Section::Schema;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            match line {
                "" => continue,
                "[schema]" => section = Section::Schema,
                "[valid]" => section = Section::Valid,
                "[rejected]" => section = Section::Rejected,
                _ => {
                    let dep: Dependency = line.parse()?;
                    match section {
                        Section::Schema => store.declare(dep)?,
                        Section::Valid => store.record(dep, Verdict::Valid)?,
                        Section::Rejected => store.record(dep, Verdict::Rejected)?,
                    };
                }
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Clone)]
pub struct CachedPlan {
    pub original: Arc<LogicalPlan>,
    pub optimized: Arc<LogicalPlan>,
    pub tables: BTreeSet<String>,
}

/// Optimized plans keyed by the fingerprint of the unoptimized plan.
#[derive(Debug, Default)]
pub struct PlanCache {
    entries: HashMap<u64, CachedPlan>,
}

impl PlanCache {
    pub fn new() -> PlanCache {
        PlanCache::default()
    }

    pub fn get(&self, plan: &LogicalPlan) -> Option<&CachedPlan> {
        self.entries
            .get(&plan.fingerprint())
            .filter(|c| *c.original == *plan)
    }

    pub fn insert(&mut self, original: Arc<LogicalPlan>, optimized: Arc<LogicalPlan>) {
        let tables = original.tables();
        self.entries.insert(
            original.fingerprint(),
            CachedPlan {
                original,
                optimized,
                tables,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn plans(&self) -> impl Iterator<Item = &CachedPlan> {
        self.entries.values()
    }

    /// Evicts every plan reading a table named by a newly valid dependency.
    pub fn invalidate_affected<'a>(&mut self, newly_valid: impl IntoIterator<Item = &'a Dependency>) -> usize {
        let affected: BTreeSet<&str> = newly_valid.into_iter().flat_map(|d| d.tables()).collect();
        let before = self.entries.len();
        self.entries
            .retain(|_, c| !c.tables.iter().any(|t| affected.contains(t.as_str())));
        before - self.entries.len()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Store and cache shared between query threads and discovery.
#[derive(Debug, Default)]
pub struct Catalog {
    store: RwLock<MetadataStore>,
    cache: RwLock<PlanCache>,
    optimizer_calls: AtomicUsize,
}

impl Catalog {
    pub fn new(store: MetadataStore) -> Catalog {
        Catalog {
            store: RwLock::new(store),
            ..Catalog::default()
        }
    }

    pub fn store(&self) -> RwLockReadGuard<'_, MetadataStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn store_mut(&self) -> RwLockWriteGuard<'_, MetadataStore> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn cache(&self) -> RwLockReadGuard<'_, PlanCache> {
        self.cache.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn cache_mut(&self) -> RwLockWriteGuard<'_, PlanCache> {
        self.cache.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn invalidate_affected<'a>(&self, newly_valid: impl IntoIterator<Item = &'a Dependency>) -> usize {
        self.cache_mut().invalidate_affected(newly_valid)
    }

    /// Returns the cached optimized plan or runs `optimize` and caches it.
    pub fn optimized_plan(
        &self,
        plan: &Arc<LogicalPlan>,
        optimize: impl FnOnce(&MetadataStore) -> Arc<LogicalPlan>,
    ) -> Arc<LogicalPlan> {
        if let Some(hit) = self.cache().get(plan) {
            return hit.optimized.clone();
        }
        self.optimizer_calls.fetch_add(1, Ordering::Relaxed);
        let optimized = optimize(&self.store());
        self.cache_mut().insert(plan.clone(), optimized.clone());
        optimized
    }

    pub fn optimizer_calls(&self) -> usize {
        self.optimizer_calls.load(Ordering::Relaxed)
    }
}
