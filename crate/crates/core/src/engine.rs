//! Embedding API: tables, metadata, optimization, execution, and discovery
//! behind one handle.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::candidates::{self, Candidate};
use crate::catalog::{Catalog, CatalogError, MetadataStore};
use crate::executor::{ExecConfig, ExecError, Executor, QueryResult};
use crate::optimizer::{explain, Optimized, Optimizer, OptimizerConfig};
use crate::plan::{self, LogicalPlan, NamedPlan, PlanError};
use crate::storage::{Database, StorageError};
use crate::validation::{run_discovery, DiscoveryReport, ValidationConfig, ValidationError, Validator};

pub const CONSTRAINTS_FILE: &str = "constraints.txt";
pub const METADATA_FILE: &str = "metadata.txt";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{0}")]
    Usage(String),
    #[error("query `{query}` returned different rows in {left} and {right} mode")]
    ResultMismatch { query: String, left: Mode, right: Mode },
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// Which dependencies the optimizer may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// None.
    Baseline,
    /// Declared primary and foreign keys.
    Schema,
    /// Dependencies found by discovery.
    Discovered,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Schema, Mode::Discovered];
}

impl FromStr for Mode {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "schema" => Ok(Mode::Schema),
            "discovered" => Ok(Mode::Discovered),
            other => Err(EngineError::Usage(format!(
                "unknown mode `{other}` (expected baseline, schema, or discovered)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Schema => "schema",
            Mode::Discovered => "discovered",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub optimized: Arc<LogicalPlan>,
    pub result: QueryResult,
}

pub struct Engine {
    db: Database,
    constraints: MetadataStore,
    catalog: Catalog,
    pub exec: ExecConfig,
    pub validation: ValidationConfig,
    pub optimizer: OptimizerConfig,
}

fn read_store(path: &Path) -> Result<Option<MetadataStore>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|source| StorageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Some(MetadataStore::parse(&text)?))
}

impl Engine {
    pub fn new(db: Database) -> Engine {
        Engine {
            db,
            constraints: MetadataStore::new(),
            catalog: Catalog::default(),
            exec: ExecConfig::default(),
            validation: ValidationConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Declared constraints, used in [`Mode::Schema`].
    pub fn with_constraints(mut self, constraints: MetadataStore) -> Engine {
        self.constraints = constraints;
        self
    }

    /// Loads tables from `dir`, plus declared constraints and previously
    /// discovered metadata when present.
    pub fn open(dir: &Path, chunk_capacity: usize) -> Result<Engine> {
        let db = Database::load_dir(dir, chunk_capacity)?;
        let mut engine = Engine::new(db);
        if let Some(c) = read_store(&dir.join(CONSTRAINTS_FILE))? {
            engine.constraints = c;
        }
        if let Some(m) = read_store(&dir.join(METADATA_FILE))? {
            engine.catalog = Catalog::new(m);
        }
        Ok(engine)
    }

    pub fn save_metadata(&self, dir: &Path) -> Result<()> {
        let path = dir.join(METADATA_FILE);
        std::fs::write(&path, self.catalog.store().to_text()).map_err(|source| StorageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn constraints(&self) -> &MetadataStore {
        &self.constraints
    }

    /// Forgets discovered dependencies and cached plans.
    pub fn reset_discovery(&mut self) {
        self.catalog = Catalog::default();
    }

    pub fn plan(&self, text: &str) -> Result<Arc<LogicalPlan>> {
        Ok(plan::build(text, &self.db)?)
    }

    pub fn workload(&self, text: &str) -> Result<Vec<NamedPlan>> {
        Ok(plan::build_workload(text, &self.db)?)
    }

    fn store_for(&self, mode: Mode) -> MetadataStore {
        match mode {
            Mode::Baseline => MetadataStore::new(),
            Mode::Schema => self.constraints.clone(),
            Mode::Discovered => self.catalog.store().clone(),
        }
    }

    /// Optimizes without the plan cache, reporting fired rules.
    pub fn optimize(&self, plan: &Arc<LogicalPlan>, mode: Mode) -> Optimized {
        let store = self.store_for(mode);
        Optimizer::with_config(&self.db, &store, self.optimizer).optimize(plan)
    }

    /// The optimized plan; discovered mode goes through the plan cache.
    pub fn optimized_plan(&self, plan: &Arc<LogicalPlan>, mode: Mode) -> Arc<LogicalPlan> {
        match mode {
            Mode::Discovered => self.catalog.optimized_plan(plan, |store| {
                Optimizer::with_config(&self.db, store, self.optimizer).optimize(plan).plan
            }),
            _ => self.optimize(plan, mode).plan,
        }
    }

    pub fn executor(&self) -> Result<Executor<'_>> {
        Ok(Executor::new(&self.db, self.exec)?)
    }

    /// Executes `plan` as given.
    pub fn execute(&self, plan: &Arc<LogicalPlan>) -> Result<QueryResult> {
        Ok(self.executor()?.run(plan)?)
    }

    pub fn run(&self, plan: &Arc<LogicalPlan>, mode: Mode) -> Result<Execution> {
        let optimized = self.optimized_plan(plan, mode);
        let result = self.execute(&optimized)?;
        Ok(Execution { optimized, result })
    }

    /// The optimized plan annotated with cardinality estimates, followed by
    /// the rules that fired.
    pub fn explain(&self, plan: &Arc<LogicalPlan>, mode: Mode) -> String {
        let store = self.store_for(mode);
        let optimizer = Optimizer::with_config(&self.db, &store, self.optimizer);
        let out = optimizer.optimize(plan);
        let mut text = explain(&out.plan, optimizer.estimator());
        for f in &out.fired {
            text.push_str(&format!("# {}: {}\n", f.rule, f.detail));
        }
        text
    }

    /// Ordered candidates for `plans` not yet decided in the catalog.
    pub fn candidates(&self, plans: &[Arc<LogicalPlan>]) -> Vec<Candidate> {
        candidates::order(candidates::generate(plans, &self.catalog.store()))
    }

    /// Generates and validates candidates for `plans`.
    pub fn discover(&self, plans: &[Arc<LogicalPlan>]) -> Result<DiscoveryReport> {
        let start = std::time::Instant::now();
        let candidates = self.candidates(plans);
        let validator = Validator::new(&self.db, self.validation);
        let mut report = run_discovery(&validator, &self.catalog, candidates)?;
        report.micros = start.elapsed().as_secs_f64() * 1e6;
        Ok(report)
    }

    /// Discovery over the plans currently in the plan cache.
    pub fn discover_cached(&self) -> Result<DiscoveryReport> {
        let plans: Vec<Arc<LogicalPlan>> = self.catalog.cache().plans().map(|c| c.original.clone()).collect();
        self.discover(&plans)
    }
}
