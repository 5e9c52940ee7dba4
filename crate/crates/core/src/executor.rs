//! Materialized execution of logical plans as an operator DAG.
//!
//! Selections directly above a table access are fused into its scan. Scalar
//! subqueries become operators of their own that are scheduled before every
//! scan consuming their value, so the scan can skip chunks whose zone maps
//! rule out the evaluated predicate.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::optimizer::{all_columns, selection_chain, visit_required};
use crate::plan::{
    AggFunc, ArithOp, ColumnRef, CompareOp, Comparison, Field, JoinCondition, JoinKind, LogicalPlan, Operand,
    PlanNode, Predicate, ProjectExpr, ScalarSubquery, SubqueryAgg,
};
use crate::propagation::ColumnSet;
use crate::storage::{chunk_excluded, scan_chunk, Database, ScanPredicate, StorageError, Table, Value, ValueTest};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("scalar subquery returned multiple rows")]
    MultipleRows,
    #[error("unknown column `{0}` during scheduling")]
    UnknownColumn(String),
    #[error("operator graph contains a cycle")]
    Cycle,
    #[error("chunk {chunk} of `{table}` was pruned but contains matching rows")]
    UnsoundPruning { table: String, chunk: usize },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T, E = ExecError> = std::result::Result<T, E>;

pub type OpId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Constant(Value),
    /// The value produced by a subquery operator.
    Subquery(OpId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredTest {
    Compare(CompareOp, Arg),
    Between(Arg, Arg),
    IsNotNull,
}

impl PredTest {
    fn is_dynamic(&self) -> bool {
        self.args().iter().any(|a| matches!(a, Arg::Subquery(_)))
    }

    fn args(&self) -> Vec<&Arg> {
        match self {
            PredTest::Compare(_, a) => vec![a],
            PredTest::Between(a, b) => vec![a, b],
            PredTest::IsNotNull => vec![],
        }
    }

    /// Binds subquery values; an empty subquery makes the test match nothing.
    fn resolve(&self, outputs: &[OnceLock<Output>]) -> ValueTest {
        let value = |a: &Arg| -> Option<Value> {
            match a {
                Arg::Constant(v) => Some(v.clone()),
                Arg::Subquery(id) => match outputs[*id].get() {
                    Some(Output::Scalar(v)) => v.clone(),
                    _ => unreachable!("subquery {id} scheduled after its consumer"),
                },
            }
        };
        match self {
            PredTest::Compare(op, a) => match value(a) {
                None => ValueTest::Never,
                Some(v) => match op {
                    CompareOp::Eq => ValueTest::Eq(v),
                    CompareOp::Lt => ValueTest::Lt(v),
                    CompareOp::Le => ValueTest::Le(v),
                    CompareOp::Gt => ValueTest::Gt(v),
                    CompareOp::Ge => ValueTest::Ge(v),
                },
            },
            PredTest::Between(a, b) => match (value(a), value(b)) {
                (Some(lo), Some(hi)) => ValueTest::Between(lo, hi),
                _ => ValueTest::Never,
            },
            PredTest::IsNotNull => ValueTest::IsNotNull,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPred {
    pub column: usize,
    pub test: PredTest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Scan {
        table: Arc<str>,
        predicates: Vec<ScanPred>,
        /// Columns materialized for consumers; others stay unread.
        materialize: Vec<bool>,
    },
    Filter {
        column: usize,
        test: PredTest,
    },
    HashJoin {
        kind: JoinKind,
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
    },
    ThetaJoin {
        left: usize,
        op: CompareOp,
        right: usize,
    },
    Aggregate {
        group_by: Vec<usize>,
        aggregates: Vec<(AggFunc, usize)>,
    },
    Project(Vec<(usize, Option<(ArithOp, i64)>)>),
    Union,
    Sort(Vec<(usize, bool)>),
    /// Evaluates a scalar subquery over its input.
    Subquery {
        column: usize,
        agg: SubqueryAgg,
    },
}

#[derive(Debug, Clone)]
pub struct Operator {
    pub id: OpId,
    pub kind: OpKind,
    /// Data inputs.
    pub inputs: Vec<OpId>,
    /// Subquery operators that must finish first.
    pub after: Vec<OpId>,
    pub fields: Vec<Field>,
}

impl Operator {
    pub fn label(&self) -> String {
        match &self.kind {
            OpKind::Scan { table, .. } => format!("scan {table}"),
            OpKind::Filter { .. } => "filter".into(),
            OpKind::HashJoin { kind, .. } => match kind {
                JoinKind::Inner => "hash_join".into(),
                JoinKind::Semi => "semi_join".into(),
                JoinKind::Left => "left_join".into(),
            },
            OpKind::ThetaJoin { .. } => "theta_join".into(),
            OpKind::Aggregate { .. } => "aggregate".into(),
            OpKind::Project(_) => "project".into(),
            OpKind::Union => "union".into(),
            OpKind::Sort(_) => "sort".into(),
            OpKind::Subquery { agg, .. } => format!("subquery {agg:?}").to_lowercase(),
        }
    }

    pub fn is_scan(&self) -> bool {
        matches!(self.kind, OpKind::Scan { .. })
    }

    pub fn is_subquery(&self) -> bool {
        matches!(self.kind, OpKind::Subquery { .. })
    }

    fn predecessors(&self) -> impl Iterator<Item = OpId> + '_ {
        self.inputs.iter().chain(&self.after).copied()
    }
}

/// An acyclic graph of physical operators; ids are a topological order.
#[derive(Debug, Clone)]
pub struct OperatorGraph {
    ops: Vec<Operator>,
    root: OpId,
}

impl OperatorGraph {
    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn root(&self) -> OpId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Topological levels: every operator sits one level above its deepest
    /// predecessor. Fails on a cycle.
    pub fn levels(&self) -> Result<Vec<Vec<OpId>>> {
        let n = self.ops.len();
        let mut indegree = vec![0usize; n];
        let mut successors = vec![Vec::new(); n];
        for op in &self.ops {
            for p in op.predecessors() {
                indegree[op.id] += 1;
                successors[p].push(op.id);
            }
        }
        let mut level: Vec<OpId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut levels = Vec::new();
        let mut seen = 0;
        while !level.is_empty() {
            seen += level.len();
            let mut next = Vec::new();
            for &id in &level {
                for &s in &successors[id] {
                    indegree[s] -= 1;
                    if indegree[s] == 0 {
                        next.push(s);
                    }
                }
            }
            levels.push(std::mem::take(&mut level));
            level = next;
        }
        if seen != n {
            return Err(ExecError::Cycle);
        }
        Ok(levels)
    }

    pub fn describe(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            out.push_str(&format!("#{} {}", op.id, op.label()));
            if !op.inputs.is_empty() {
                let ids: Vec<String> = op.inputs.iter().map(|i| format!("#{i}")).collect();
                out.push_str(&format!(" <- {}", ids.join(",")));
            }
            if !op.after.is_empty() {
                let ids: Vec<String> = op.after.iter().map(|i| format!("#{i}")).collect();
                out.push_str(&format!(" after {}", ids.join(",")));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub dynamic_pruning: bool,
    /// Re-checks every dynamically pruned chunk row by row.
    pub verify_pruning: bool,
    pub threads: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            dynamic_pruning: true,
            verify_pruning: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OperatorRows {
    pub id: OpId,
    pub operator: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExecMetrics {
    pub chunks_scanned: usize,
    pub chunks_pruned_static: usize,
    pub chunks_pruned_dynamic: usize,
    pub rows_read: usize,
    pub rows_per_operator: Vec<OperatorRows>,
    /// Operator ids in completion order.
    pub execution_order: Vec<OpId>,
    pub micros: f64,
}

impl ExecMetrics {
    /// Sum of rows produced by all operators.
    pub fn total_rows(&self) -> usize {
        self.rows_per_operator.iter().map(|o| o.rows).sum()
    }

    /// Position of `id` in the completion order.
    pub fn finished_at(&self, id: OpId) -> Option<usize> {
        self.execution_order.iter().position(|&i| i == id)
    }

    fn merge(&mut self, other: &ScanCounts) {
        self.chunks_scanned += other.scanned;
        self.chunks_pruned_static += other.pruned_static;
        self.chunks_pruned_dynamic += other.pruned_dynamic;
        self.rows_read += other.rows_read;
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub fields: Vec<Field>,
    pub columns: Vec<Vec<Value>>,
    pub metrics: ExecMetrics,
}

impl QueryResult {
    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.row_count())
            .map(|r| self.columns.iter().map(|c| c[r].clone()).collect())
            .collect()
    }

    /// Rows in sorted order, for multiset comparison.
    pub fn sorted_rows(&self) -> Vec<Vec<Value>> {
        let mut rows = self.rows();
        rows.sort();
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = self.fields.iter().map(|f| f.column.name.to_string()).collect();
        w.write_record(&header).expect("in-memory write");
        for row in self.rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| if v.is_null() { String::new() } else { v.to_string() })
                .collect();
            w.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

// ---------------------------------------------------------------------------
// Scheduling
// ---------------------------------------------------------------------------

fn index_of(fields: &[Field], column: &ColumnRef) -> Result<usize> {
    fields
        .iter()
        .position(|f| &f.column == column)
        .ok_or_else(|| ExecError::UnknownColumn(column.to_string()))
}

struct Scheduler<'a> {
    db: &'a Database,
    ops: Vec<Operator>,
    plans: HashMap<Arc<LogicalPlan>, OpId>,
    subqueries: HashMap<Arc<ScalarSubquery>, OpId>,
    required: HashMap<Arc<LogicalPlan>, ColumnSet>,
}

impl Scheduler<'_> {
    fn push(&mut self, kind: OpKind, inputs: Vec<OpId>, after: Vec<OpId>, fields: Vec<Field>) -> OpId {
        let id = self.ops.len();
        self.ops.push(Operator {
            id,
            kind,
            inputs,
            after,
            fields,
        });
        id
    }

    fn test(&mut self, pred: &Predicate, after: &mut Vec<OpId>) -> Result<PredTest> {
        let mut arg = |o: &Operand, after: &mut Vec<OpId>| -> Result<Arg> {
            Ok(match o {
                Operand::Constant(v) => Arg::Constant(v.clone()),
                Operand::Subquery(sq) => {
                    let id = self.subquery(sq)?;
                    if !after.contains(&id) {
                        after.push(id);
                    }
                    Arg::Subquery(id)
                }
            })
        };
        Ok(match &pred.comparison {
            Comparison::Compare(op, o) => PredTest::Compare(*op, arg(o, after)?),
            Comparison::Between(lo, hi) => {
                let lo = arg(lo, after)?;
                PredTest::Between(lo, arg(hi, after)?)
            }
            Comparison::IsNotNull => PredTest::IsNotNull,
        })
    }

    fn subquery(&mut self, sq: &Arc<ScalarSubquery>) -> Result<OpId> {
        if let Some(&id) = self.subqueries.get(sq) {
            return Ok(id);
        }
        let input = self.plan(&sq.input)?;
        let column = index_of(self.ops[input].fields.as_slice(), &sq.column)?;
        let field = self.ops[input].fields[column].clone();
        let id = self.push(OpKind::Subquery { column, agg: sq.agg }, vec![input], vec![], vec![field]);
        self.subqueries.insert(sq.clone(), id);
        Ok(id)
    }

    fn plan(&mut self, plan: &Arc<LogicalPlan>) -> Result<OpId> {
        if let Some(&id) = self.plans.get(plan) {
            return Ok(id);
        }
        let fields = plan.fields().to_vec();
        let id = match plan.node() {
            PlanNode::Get { .. } | PlanNode::Select(_)
                if matches!(selection_chain(plan).1.node(), PlanNode::Get { .. }) =>
            {
                let (chain, base) = selection_chain(plan);
                let PlanNode::Get { table } = base.node() else { unreachable!() };
                let t = self.db.table(table)?;
                let mut after = Vec::new();
                let mut predicates = Vec::new();
                // Innermost selection first.
                for pred in chain.iter().rev() {
                    let column = t.column_index(&pred.column.name)?;
                    let test = self.test(pred, &mut after)?;
                    predicates.push(ScanPred { column, test });
                }
                let required = self.required.get(plan);
                let materialize = base
                    .fields()
                    .iter()
                    .map(|f| required.is_none_or(|r| r.contains(&f.column)))
                    .collect();
                self.push(
                    OpKind::Scan {
                        table: table.clone(),
                        predicates,
                        materialize,
                    },
                    vec![],
                    after,
                    fields,
                )
            }
            PlanNode::Get { .. } => unreachable!("handled above"),
            PlanNode::Select(pred) => {
                let input = self.plan(&plan.inputs()[0])?;
                let column = index_of(&self.ops[input].fields, &pred.column)?;
                let mut after = Vec::new();
                let test = self.test(pred, &mut after)?;
                self.push(OpKind::Filter { column, test }, vec![input], after, fields)
            }
            PlanNode::Join { kind, condition } => {
                let l = self.plan(&plan.inputs()[0])?;
                let r = self.plan(&plan.inputs()[1])?;
                let (lf, rf) = (&self.ops[l].fields, &self.ops[r].fields);
                let kind = match condition {
                    JoinCondition::Equi { left, right } => OpKind::HashJoin {
                        kind: *kind,
                        left_keys: left.iter().map(|c| index_of(lf, c)).collect::<Result<_>>()?,
                        right_keys: right.iter().map(|c| index_of(rf, c)).collect::<Result<_>>()?,
                    },
                    JoinCondition::Theta { left, op, right } => OpKind::ThetaJoin {
                        left: index_of(lf, left)?,
                        op: *op,
                        right: index_of(rf, right)?,
                    },
                };
                self.push(kind, vec![l, r], vec![], fields)
            }
            PlanNode::Aggregate { group_by, aggregates } => {
                let input = self.plan(&plan.inputs()[0])?;
                let f = &self.ops[input].fields;
                let kind = OpKind::Aggregate {
                    group_by: group_by.iter().map(|c| index_of(f, c)).collect::<Result<_>>()?,
                    aggregates: aggregates
                        .iter()
                        .map(|a| Ok((a.func, index_of(f, &a.input)?)))
                        .collect::<Result<_>>()?,
                };
                self.push(kind, vec![input], vec![], fields)
            }
            PlanNode::Project(exprs) => {
                let input = self.plan(&plan.inputs()[0])?;
                let f = &self.ops[input].fields;
                let cols = exprs
                    .iter()
                    .map(|e| {
                        let idx = index_of(f, e.input())?;
                        Ok(match e {
                            ProjectExpr::Column(_) => (idx, None),
                            ProjectExpr::Arith { op, constant, .. } => (idx, Some((*op, *constant))),
                        })
                    })
                    .collect::<Result<_>>()?;
                self.push(OpKind::Project(cols), vec![input], vec![], fields)
            }
            PlanNode::Union => {
                let l = self.plan(&plan.inputs()[0])?;
                let r = self.plan(&plan.inputs()[1])?;
                self.push(OpKind::Union, vec![l, r], vec![], fields)
            }
            PlanNode::Sort(keys) => {
                let input = self.plan(&plan.inputs()[0])?;
                let f = &self.ops[input].fields;
                let keys = keys
                    .iter()
                    .map(|k| Ok((index_of(f, &k.column)?, k.descending)))
                    .collect::<Result<_>>()?;
                self.push(OpKind::Sort(keys), vec![input], vec![], fields)
            }
        };
        self.plans.insert(plan.clone(), id);
        Ok(id)
    }
}

/// Translates `plan` into an operator graph. Structurally equal subplans
/// and subqueries are scheduled once.
pub fn schedule(db: &Database, plan: &Arc<LogicalPlan>) -> Result<OperatorGraph> {
    let mut required: HashMap<Arc<LogicalPlan>, ColumnSet> = HashMap::new();
    visit_required(plan, &all_columns(plan), &mut |p, req| {
        required.entry(p.clone()).or_default().extend(req.iter().cloned());
    });
    let mut s = Scheduler {
        db,
        ops: Vec::new(),
        plans: HashMap::new(),
        subqueries: HashMap::new(),
        required,
    };
    let root = s.plan(plan)?;
    let graph = OperatorGraph { ops: s.ops, root };
    graph.levels()?;
    Ok(graph)
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Materialized intermediate result. Columns nobody reads are `None`.
#[derive(Debug, Clone)]
struct Batch {
    rows: usize,
    columns: Vec<Option<Arc<Vec<Value>>>>,
}

impl Batch {
    fn col(&self, i: usize) -> &[Value] {
        self.columns[i].as_deref().expect("column was not materialized")
    }

    fn gather(&self, rows: &[u32]) -> Vec<Option<Arc<Vec<Value>>>> {
        self.columns
            .iter()
            .map(|c| c.as_ref().map(|c| Arc::new(rows.iter().map(|&r| c[r as usize].clone()).collect())))
            .collect()
    }

    /// Like `gather`, with `None` rows becoming nulls.
    fn gather_optional(&self, rows: &[Option<u32>]) -> Vec<Option<Arc<Vec<Value>>>> {
        self.columns
            .iter()
            .map(|c| {
                c.as_ref().map(|c| {
                    Arc::new(
                        rows.iter()
                            .map(|r| r.map_or(Value::Null, |r| c[r as usize].clone()))
                            .collect(),
                    )
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Output {
    Batch(Batch),
    Scalar(Option<Value>),
}

#[derive(Debug, Default, Clone, Copy)]
struct ScanCounts {
    scanned: usize,
    pruned_static: usize,
    pruned_dynamic: usize,
    rows_read: usize,
}

pub struct Executor<'a> {
    db: &'a Database,
    config: ExecConfig,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Executor<'a> {
    pub fn new(db: &'a Database, config: ExecConfig) -> Result<Executor<'a>> {
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| ExecError::ThreadPool(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Executor { db, config, pool })
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn schedule(&self, plan: &Arc<LogicalPlan>) -> Result<OperatorGraph> {
        schedule(self.db, plan)
    }

    pub fn run(&self, plan: &Arc<LogicalPlan>) -> Result<QueryResult> {
        self.execute(&self.schedule(plan)?)
    }

    pub fn execute(&self, graph: &OperatorGraph) -> Result<QueryResult> {
        let start = Instant::now();
        let levels = graph.levels()?;
        let outputs: Vec<OnceLock<Output>> = (0..graph.len()).map(|_| OnceLock::new()).collect();
        let mut metrics = ExecMetrics::default();
        let mut rows = vec![0usize; graph.len()];
        for level in levels {
            let run = |&id: &OpId| -> Result<(OpId, ScanCounts)> {
                let (out, counts) = self.run_op(&graph.ops[id], &outputs)?;
                outputs[id].set(out).expect("each operator runs once");
                Ok((id, counts))
            };
            let done: Vec<(OpId, ScanCounts)> = match &self.pool {
                Some(pool) if level.len() > 1 => pool.install(|| level.par_iter().map(run).collect::<Result<_>>())?,
                _ => level.iter().map(run).collect::<Result<_>>()?,
            };
            for (id, counts) in done {
                metrics.merge(&counts);
                metrics.execution_order.push(id);
            }
        }
        for op in &graph.ops {
            rows[op.id] = match outputs[op.id].get() {
                Some(Output::Batch(b)) => b.rows,
                Some(Output::Scalar(v)) => usize::from(v.is_some()),
                None => 0,
            };
            metrics.rows_per_operator.push(OperatorRows {
                id: op.id,
                operator: op.label(),
                rows: rows[op.id],
            });
        }
        let root = graph.ops[graph.root].clone();
        let Some(Output::Batch(batch)) = outputs[graph.root].get() else {
            unreachable!("plans produce batches")
        };
        let columns = batch
            .columns
            .iter()
            .map(|c| c.as_ref().expect("root columns are materialized").as_ref().clone())
            .collect();
        metrics.micros = start.elapsed().as_secs_f64() * 1e6;
        Ok(QueryResult {
            fields: root.fields,
            columns,
            metrics,
        })
    }

    fn run_op(&self, op: &Operator, outputs: &[OnceLock<Output>]) -> Result<(Output, ScanCounts)> {
        let input = |i: usize| -> &Batch {
            match outputs[op.inputs[i]].get() {
                Some(Output::Batch(b)) => b,
                _ => unreachable!("inputs finish before their consumers"),
            }
        };
        let mut counts = ScanCounts::default();
        let out = match &op.kind {
            OpKind::Scan {
                table,
                predicates,
                materialize,
            } => Output::Batch(self.scan(self.db.table(table)?, predicates, materialize, outputs, &mut counts)?),
            OpKind::Filter { column, test } => {
                let b = input(0);
                let test = test.resolve(outputs);
                let values = b.col(*column);
                let keep: Vec<u32> = (0..b.rows as u32).filter(|&r| test.matches(&values[r as usize])).collect();
                Output::Batch(Batch {
                    rows: keep.len(),
                    columns: b.gather(&keep),
                })
            }
            OpKind::HashJoin {
                kind,
                left_keys,
                right_keys,
            } => Output::Batch(hash_join(*kind, input(0), left_keys, input(1), right_keys)),
            OpKind::ThetaJoin { left, op, right } => Output::Batch(theta_join(input(0), *left, *op, input(1), *right)),
            OpKind::Aggregate { group_by, aggregates } => Output::Batch(aggregate(input(0), group_by, aggregates)),
            OpKind::Project(cols) => {
                let b = input(0);
                let columns = cols
                    .iter()
                    .map(|(idx, arith)| match arith {
                        None => b.columns[*idx].clone(),
                        Some((op, c)) => Some(Arc::new(
                            b.col(*idx)
                                .iter()
                                .map(|v| match v {
                                    Value::Int(x) => Value::Int(op.apply(*x, *c)),
                                    Value::Date(d) => Value::Date(op.apply(*d as i64, *c) as i32),
                                    other => other.clone(),
                                })
                                .collect(),
                        )),
                    })
                    .collect();
                Output::Batch(Batch { rows: b.rows, columns })
            }
            OpKind::Union => {
                let (l, r) = (input(0), input(1));
                let columns = (0..l.columns.len())
                    .map(|i| {
                        let mut c = l.col(i).to_vec();
                        c.extend_from_slice(r.col(i));
                        Some(Arc::new(c))
                    })
                    .collect();
                Output::Batch(Batch {
                    rows: l.rows + r.rows,
                    columns,
                })
            }
            OpKind::Sort(keys) => {
                let b = input(0);
                let mut order: Vec<u32> = (0..b.rows as u32).collect();
                order.sort_by(|&x, &y| {
                    for &(k, desc) in keys {
                        let c = b.col(k);
                        let o = c[x as usize].cmp(&c[y as usize]);
                        let o = if desc { o.reverse() } else { o };
                        if o.is_ne() {
                            return o;
                        }
                    }
                    std::cmp::Ordering::Equal
                });
                Output::Batch(Batch {
                    rows: b.rows,
                    columns: b.gather(&order),
                })
            }
            OpKind::Subquery { column, agg } => {
                let b = input(0);
                let values = b.col(*column);
                Output::Scalar(match agg {
                    SubqueryAgg::Value => match values {
                        [] => None,
                        [v] => Some(v.clone()).filter(|v| !v.is_null()),
                        _ => return Err(ExecError::MultipleRows),
                    },
                    SubqueryAgg::Min => values.iter().filter(|v| !v.is_null()).min().cloned(),
                    SubqueryAgg::Max => values.iter().filter(|v| !v.is_null()).max().cloned(),
                })
            }
        };
        Ok((out, counts))
    }

    fn scan(
        &self,
        table: &Table,
        predicates: &[ScanPred],
        materialize: &[bool],
        outputs: &[OnceLock<Output>],
        counts: &mut ScanCounts,
    ) -> Result<Batch> {
        let mut fixed = Vec::new();
        let mut dynamic = Vec::new();
        for p in predicates {
            let sp = ScanPredicate {
                column: p.column,
                test: p.test.resolve(outputs),
            };
            if p.test.is_dynamic() {
                dynamic.push(sp);
            } else {
                fixed.push(sp);
            }
        }
        let all: Vec<ScanPredicate> = fixed.iter().chain(&dynamic).cloned().collect();
        let pushed = if self.config.dynamic_pruning { &all } else { &fixed };
        let none = BTreeSet::new();
        let mut columns: Vec<Option<Vec<Value>>> = materialize.iter().map(|&m| m.then(Vec::new)).collect();
        let mut rows = 0;
        for chunk_id in 0..table.chunks().len() {
            if chunk_excluded(table, chunk_id, &fixed) {
                counts.pruned_static += 1;
                continue;
            }
            if self.config.dynamic_pruning && chunk_excluded(table, chunk_id, &dynamic) {
                counts.pruned_dynamic += 1;
                if self.config.verify_pruning {
                    let chunk = &table.chunks()[chunk_id];
                    let hit = (0..chunk.row_count())
                        .any(|pos| all.iter().all(|p| p.test.matches(chunk.segment(p.column).get(pos))));
                    if hit {
                        return Err(ExecError::UnsoundPruning {
                            table: table.name().to_string(),
                            chunk: chunk_id,
                        });
                    }
                }
                continue;
            }
            counts.scanned += 1;
            let scan = scan_chunk(table, chunk_id, pushed, &none)?;
            counts.rows_read += scan.rows_read;
            let chunk = &table.chunks()[chunk_id];
            let positions: Vec<u32> = if self.config.dynamic_pruning || dynamic.is_empty() {
                scan.positions
            } else {
                counts.rows_read += scan.positions.len();
                scan.positions
                    .into_iter()
                    .filter(|&pos| dynamic.iter().all(|p| p.test.matches(chunk.segment(p.column).get(pos as usize))))
                    .collect()
            };
            rows += positions.len();
            for (c, out) in columns.iter_mut().enumerate() {
                if let Some(out) = out {
                    let seg = chunk.segment(c);
                    let (dict, offsets) = (seg.dictionary(), seg.offsets());
                    out.extend(positions.iter().map(|&p| {
                        let o = offsets[p as usize];
                        if o == u32::MAX {
                            Value::Null
                        } else {
                            dict[o as usize].clone()
                        }
                    }));
                }
            }
        }
        Ok(Batch {
            rows,
            columns: columns.into_iter().map(|c| c.map(Arc::new)).collect(),
        })
    }
}

fn key_of<'b>(b: &'b Batch, keys: &[usize], row: usize) -> Option<Vec<&'b Value>> {
    let k: Vec<&Value> = keys.iter().map(|&c| &b.col(c)[row]).collect();
    (!k.iter().any(|v| v.is_null())).then_some(k)
}

fn build_index<'b>(b: &'b Batch, keys: &[usize]) -> FxHashMap<Vec<&'b Value>, Vec<u32>> {
    let mut index: FxHashMap<Vec<&Value>, Vec<u32>> = FxHashMap::default();
    index.reserve(b.rows);
    for row in 0..b.rows {
        if let Some(k) = key_of(b, keys, row) {
            index.entry(k).or_default().push(row as u32);
        }
    }
    index
}

fn hash_join(kind: JoinKind, l: &Batch, lk: &[usize], r: &Batch, rk: &[usize]) -> Batch {
    match kind {
        JoinKind::Semi => {
            let index = build_index(r, rk);
            let keep: Vec<u32> = (0..l.rows)
                .filter(|&row| key_of(l, lk, row).is_some_and(|k| index.contains_key(&k)))
                .map(|row| row as u32)
                .collect();
            Batch {
                rows: keep.len(),
                columns: l.gather(&keep),
            }
        }
        JoinKind::Inner => {
            let (mut li, mut ri) = (Vec::new(), Vec::new());
            if r.rows <= l.rows {
                let index = build_index(r, rk);
                for row in 0..l.rows {
                    if let Some(matches) = key_of(l, lk, row).and_then(|k| index.get(&k)) {
                        for &m in matches {
                            li.push(row as u32);
                            ri.push(m);
                        }
                    }
                }
            } else {
                let index = build_index(l, lk);
                for row in 0..r.rows {
                    if let Some(matches) = key_of(r, rk, row).and_then(|k| index.get(&k)) {
                        for &m in matches {
                            li.push(m);
                            ri.push(row as u32);
                        }
                    }
                }
            }
            let mut columns = l.gather(&li);
            columns.extend(r.gather(&ri));
            Batch { rows: li.len(), columns }
        }
        JoinKind::Left => {
            let index = build_index(r, rk);
            let (mut li, mut ri) = (Vec::new(), Vec::new());
            for row in 0..l.rows {
                match key_of(l, lk, row).and_then(|k| index.get(&k)) {
                    Some(matches) => {
                        for &m in matches {
                            li.push(row as u32);
                            ri.push(Some(m));
                        }
                    }
                    None => {
                        li.push(row as u32);
                        ri.push(None);
                    }
                }
            }
            let mut columns = l.gather(&li);
            columns.extend(r.gather_optional(&ri));
            Batch { rows: li.len(), columns }
        }
    }
}

fn theta_join(l: &Batch, lc: usize, op: CompareOp, r: &Batch, rc: usize) -> Batch {
    let (lv, rv) = (l.col(lc), r.col(rc));
    // Sort the right side once so each left row matches a contiguous range.
    let mut order: Vec<u32> = (0..r.rows as u32).filter(|&i| !rv[i as usize].is_null()).collect();
    order.sort_by(|&a, &b| rv[a as usize].cmp(&rv[b as usize]));
    let sorted: Vec<&Value> = order.iter().map(|&i| &rv[i as usize]).collect();
    let (mut li, mut ri) = (Vec::new(), Vec::new());
    for (row, v) in lv.iter().enumerate() {
        if v.is_null() {
            continue;
        }
        let range = match op {
            CompareOp::Eq => sorted.partition_point(|x| *x < v)..sorted.partition_point(|x| *x <= v),
            // l < r
            CompareOp::Lt => sorted.partition_point(|x| *x <= v)..sorted.len(),
            CompareOp::Le => sorted.partition_point(|x| *x < v)..sorted.len(),
            CompareOp::Gt => 0..sorted.partition_point(|x| *x < v),
            CompareOp::Ge => 0..sorted.partition_point(|x| *x <= v),
        };
        for &m in &order[range] {
            li.push(row as u32);
            ri.push(m);
        }
    }
    let mut columns = l.gather(&li);
    columns.extend(r.gather(&ri));
    Batch { rows: li.len(), columns }
}

enum Acc<'b> {
    Sum(Vec<Option<i64>>),
    Count(Vec<i64>),
    Min(Vec<Option<&'b Value>>),
    Max(Vec<Option<&'b Value>>),
    /// The value of the group's first row.
    Any,
}

fn aggregate(b: &Batch, group_by: &[usize], aggregates: &[(AggFunc, usize)]) -> Batch {
    let mut groups: FxHashMap<Vec<&Value>, usize> = FxHashMap::default();
    let mut first_rows: Vec<u32> = Vec::new();
    let mut assignment: Vec<usize> = Vec::with_capacity(b.rows);
    if group_by.is_empty() {
        first_rows.push(0);
        assignment.resize(b.rows, 0);
    } else {
        for row in 0..b.rows {
            let key: Vec<&Value> = group_by.iter().map(|&c| &b.col(c)[row]).collect();
            let next = first_rows.len();
            let g = *groups.entry(key).or_insert_with(|| {
                first_rows.push(row as u32);
                next
            });
            assignment.push(g);
        }
    }
    let n = first_rows.len();
    let mut columns: Vec<Option<Arc<Vec<Value>>>> = group_by
        .iter()
        .map(|&c| Some(Arc::new(first_rows.iter().map(|&r| b.col(c)[r as usize].clone()).collect())))
        .collect();
    for &(func, c) in aggregates {
        let values = b.col(c);
        let mut acc = match func {
            AggFunc::Sum => Acc::Sum(vec![None; n]),
            AggFunc::Count => Acc::Count(vec![0; n]),
            AggFunc::Min => Acc::Min(vec![None; n]),
            AggFunc::Max => Acc::Max(vec![None; n]),
            AggFunc::Any => Acc::Any,
        };
        if !matches!(acc, Acc::Any) {
            for (row, &g) in assignment.iter().enumerate() {
                let v = &values[row];
                if v.is_null() {
                    continue;
                }
                match &mut acc {
                    Acc::Sum(s) => s[g] = Some(s[g].unwrap_or(0).wrapping_add(v.as_i64().unwrap_or(0))),
                    Acc::Count(s) => s[g] += 1,
                    Acc::Min(s) => {
                        if s[g].is_none_or(|m| v < m) {
                            s[g] = Some(v)
                        }
                    }
                    Acc::Max(s) => {
                        if s[g].is_none_or(|m| v > m) {
                            s[g] = Some(v)
                        }
                    }
                    Acc::Any => {}
                }
            }
        }
        let out: Vec<Value> = match acc {
            Acc::Sum(s) => s.into_iter().map(|x| x.map_or(Value::Null, Value::Int)).collect(),
            Acc::Count(s) => s.into_iter().map(Value::Int).collect(),
            Acc::Min(s) | Acc::Max(s) => s.into_iter().map(|x| x.cloned().unwrap_or(Value::Null)).collect(),
            Acc::Any => first_rows
                .iter()
                .map(|&r| values.get(r as usize).cloned().unwrap_or(Value::Null))
                .collect(),
        };
        columns.push(Some(Arc::new(out)));
    }
    Batch { rows: n, columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::build;
    use crate::storage::{DataType, Schema};

    fn ints(vals: impl IntoIterator<Item = i64>) -> Vec<Value> {
        vals.into_iter().map(Value::Int).collect()
    }

    /// Ten chunks of 10 fact rows each, clustered by `f_date` 1..=100.
    fn db() -> Database {
        let mut db = Database::new();
        db.add(
            Table::from_columns(
                "fact",
                Schema::new([("f_date", DataType::Int), ("f_amount", DataType::Int)]),
                vec![ints(1..=100), ints((1..=100).map(|v| v % 7))],
                10,
            )
            .unwrap(),
        );
        db.add(
            Table::from_columns(
                "dim",
                Schema::new([("d_sk", DataType::Int), ("d_month", DataType::Int)]),
                vec![ints(1..=100), ints((1..=100).map(|v| (v - 1) / 10))],
                100,
            )
            .unwrap(),
        );
        db
    }

    fn run(db: &Database, text: &str, config: ExecConfig) -> QueryResult {
        let plan = build(text, db).unwrap();
        Executor::new(db, config).unwrap().run(&plan).unwrap()
    }

    #[test]
    fn between_subquery_prunes_nine_of_ten_chunks() {
        let db = db();
        let text = "select f_date between $0.min(d_sk) and $0.max(d_sk)\n  subquery $0\n    select d_month = 3\n      get dim\n  get fact\n";
        let out = run(&db, text, ExecConfig { verify_pruning: true, ..ExecConfig::default() });
        assert_eq!(out.row_count(), 10);
        assert_eq!(out.metrics.chunks_pruned_dynamic, 9);
        // One dim chunk plus one fact chunk.
        assert_eq!(out.metrics.chunks_scanned, 2);
        let off = run(&db, text, ExecConfig { dynamic_pruning: false, ..ExecConfig::default() });
        assert_eq!(off.sorted_rows(), out.sorted_rows());
        assert_eq!(off.metrics.chunks_scanned, 11);
    }

    #[test]
    fn shared_subquery_is_scheduled_once_and_first() {
        let db = db();
        let plan = build(
            "select f_date between $0.min(d_sk) and $0.max(d_sk)\n  subquery $0\n    select d_month = 3\n      get dim\n  get fact\n",
            &db,
        )
        .unwrap();
        let graph = schedule(&db, &plan).unwrap();
        let dim_scans = graph.ops().iter().filter(|o| o.label() == "scan dim").count();
        assert_eq!(dim_scans, 1);
        assert_eq!(graph.ops().iter().filter(|o| o.is_subquery()).count(), 2);
        let out = Executor::new(&db, ExecConfig::default()).unwrap().execute(&graph).unwrap();
        let fact = graph.ops().iter().find(|o| o.label() == "scan fact").unwrap().id;
        for sq in graph.ops().iter().filter(|o| o.is_subquery()) {
            assert!(out.metrics.finished_at(sq.id) < out.metrics.finished_at(fact));
        }
    }

    #[test]
    fn scalar_subquery_errors_and_empty() {
        let db = db();
        let plan = build("select f_date = $0.value(d_sk)\n  subquery $0\n    select d_month = 3\n      get dim\n  get fact\n", &db).unwrap();
        let err = Executor::new(&db, ExecConfig::default()).unwrap().run(&plan).unwrap_err();
        assert_eq!(err.to_string(), "scalar subquery returned multiple rows");
        let out = run(&db, "select f_date = $0.value(d_sk)\n  subquery $0\n    select d_month = 99\n      get dim\n  get fact\n", ExecConfig::default());
        assert_eq!(out.row_count(), 0);
    }

    #[test]
    fn joins() {
        let db = db();
        let inner = run(&db, "join inner on=[f_date=d_sk]\n  get fact\n  select d_month = 2\n    get dim\n", ExecConfig::default());
        assert_eq!(inner.row_count(), 10);
        assert_eq!(inner.fields.len(), 4);
        let semi = run(&db, "join semi on=[f_date=d_sk]\n  get fact\n  select d_month = 2\n    get dim\n", ExecConfig::default());
        assert_eq!(semi.sorted_rows(), {
            let mut rows: Vec<Vec<Value>> = inner.rows().into_iter().map(|r| r[..2].to_vec()).collect();
            rows.sort();
            rows
        });
        let left = run(&db, "join left on=[f_date=d_sk]\n  get fact\n  select d_month = 2\n    get dim\n", ExecConfig::default());
        assert_eq!(left.row_count(), 100);
        assert_eq!(left.rows().iter().filter(|r| r[2].is_null()).count(), 90);
        let theta = run(&db, "join inner theta=[f_date<d_sk]\n  select f_date <= 3\n    get fact\n  select d_sk <= 3\n    get dim\n", ExecConfig::default());
        assert_eq!(theta.row_count(), 3);
    }

    #[test]
    fn aggregate_any_takes_first_row() {
        let db = db();
        let out = run(&db, "aggregate group=[d_month] aggs=[any(d_sk),count(d_sk),sum(d_sk),min(d_sk)]\n  get dim\n", ExecConfig::default());
        assert_eq!(out.row_count(), 10);
        let row = out.rows().into_iter().find(|r| r[0] == Value::Int(0)).unwrap();
        assert_eq!(row[1..], [Value::Int(1), Value::Int(10), Value::Int(55), Value::Int(1)]);
        let empty = run(&db, "aggregate group=[] aggs=[count(d_sk),sum(d_sk)]\n  select d_sk > 1000\n    get dim\n", ExecConfig::default());
        assert_eq!(empty.rows(), vec![vec![Value::Int(0), Value::Null]]);
    }

    #[test]
    fn threads_agree_with_single_threaded() {
        let db = db();
        let text = "union\n  project cols=[f_date]\n    select f_date < 30\n      get fact\n  project cols=[d_sk]\n    select d_month = 5\n      get dim\n";
        let single = run(&db, text, ExecConfig::default());
        let multi = run(&db, text, ExecConfig { threads: 4, ..ExecConfig::default() });
        assert_eq!(single.sorted_rows(), multi.sorted_rows());
        assert_eq!(single.row_count(), 39);
    }

    #[test]
    fn sort_and_project() {
        let db = db();
        let out = run(&db, "sort keys=[f_amount desc,f_date]\n  project cols=[f_date,f_amount,x=f_date*2]\n    select f_date <= 8\n      get fact\n", ExecConfig::default());
        let first: Vec<i64> = out.rows().iter().map(|r| r[0].as_i64().unwrap()).collect();
        assert_eq!(first, vec![6, 5, 4, 3, 2, 1, 8, 7]);
        assert_eq!(out.rows()[0][2], Value::Int(12));
    }
}
