//! Rule-based plan optimization using propagated dependencies.
//!
//! The pipeline is fixed: predicate pushdown, group-by reduction, join to
//! predicate, join to semi-join, and selection ordering by estimated
//! selectivity. Join to predicate runs before join to semi-join so a join
//! that qualifies for both becomes a predicate.
//!
//! Estimates use uniform-distribution heuristics over base-table column
//! statistics. A predicate produced by the join-to-predicate rewrite is
//! estimated with the same function as the semi-join it stands for, so the
//! estimate does not change when the rewrite fires.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::catalog::MetadataStore;
use crate::plan::{
    AggFunc, AggregateExpr, ColumnRef, CompareOp, Comparison, JoinCondition, JoinKind, LogicalPlan, Operand,
    PlanNode, Predicate, ProjectExpr, ScalarSubquery, SubqueryAgg,
};
use crate::propagation::{lineage, ColumnSet, PlanDependencies, Propagator};
use crate::storage::{Database, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    PredicatePushdown,
    GroupByReduction,
    JoinToPredicateEq,
    JoinToPredicateRange,
    JoinToSemiJoin,
    SelectionOrdering,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::PredicatePushdown => "predicate-pushdown",
            Rule::GroupByReduction => "groupby-reduction",
            Rule::JoinToPredicateEq => "join-to-predicate-eq",
            Rule::JoinToPredicateRange => "join-to-predicate-range",
            Rule::JoinToSemiJoin => "join-to-semijoin",
            Rule::SelectionOrdering => "selection-ordering",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizerConfig {
    pub group_by_reduction: bool,
    pub join_to_predicate: bool,
    pub join_to_semijoin: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            group_by_reduction: true,
            join_to_predicate: true,
            join_to_semijoin: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiredRule {
    pub rule: Rule,
    pub detail: String,
}

/// A join replaced by a subquery predicate, kept for estimate comparisons.
#[derive(Debug, Clone)]
pub struct PredicateRewrite {
    pub fact: Arc<LogicalPlan>,
    pub fact_key: ColumnRef,
    pub side: Arc<LogicalPlan>,
    pub side_key: ColumnRef,
    pub result: Arc<LogicalPlan>,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub plan: Arc<LogicalPlan>,
    pub fired: Vec<FiredRule>,
    pub predicate_rewrites: Vec<PredicateRewrite>,
}

impl Optimized {
    pub fn count(&self, rule: Rule) -> usize {
        self.fired.iter().filter(|f| f.rule == rule).count()
    }
}

pub struct Optimizer<'a> {
    store: &'a MetadataStore,
    estimator: Estimator<'a>,
    config: OptimizerConfig,
}

impl<'a> Optimizer<'a> {
    pub fn new(db: &'a Database, store: &'a MetadataStore) -> Optimizer<'a> {
        Optimizer::with_config(db, store, OptimizerConfig::default())
    }

    pub fn with_config(db: &'a Database, store: &'a MetadataStore, config: OptimizerConfig) -> Optimizer<'a> {
        Optimizer {
            store,
            estimator: Estimator::new(db),
            config,
        }
    }

    pub fn estimator(&self) -> &Estimator<'a> {
        &self.estimator
    }

    pub fn optimize(&self, plan: &Arc<LogicalPlan>) -> Optimized {
        let mut fired = Vec::new();
        let mut predicate_rewrites = Vec::new();
        let mut plan = plan.clone();
        let pushed = pushdown(&plan);
        if *pushed != *plan {
            fired.push(FiredRule {
                rule: Rule::PredicatePushdown,
                detail: "selections moved towards scans".into(),
            });
            plan = pushed;
        }
        if self.config.group_by_reduction {
            let props = Propagator::new(self.store);
            plan = rewrite_tree(&plan, &all_columns(&plan), &mut |node, _| {
                let (new, detail) = reduce_group_by(node, &props)?;
                fired.push(FiredRule {
                    rule: Rule::GroupByReduction,
                    detail,
                });
                Some(new)
            });
        }
        if self.config.join_to_predicate {
            let props = Propagator::new(self.store);
            plan = rewrite_tree(&plan, &all_columns(&plan), &mut |node, required| {
                let (new, rule, rewrite) = join_to_predicate(node, required, &props)?;
                fired.push(FiredRule {
                    rule,
                    detail: format!("{} = {}", rewrite.fact_key, rewrite.side_key),
                });
                predicate_rewrites.push(rewrite);
                Some(new)
            });
        }
        if self.config.join_to_semijoin {
            let props = Propagator::new(self.store);
            plan = rewrite_tree(&plan, &all_columns(&plan), &mut |node, required| {
                let (new, detail) = join_to_semijoin(node, required, &props)?;
                fired.push(FiredRule {
                    rule: Rule::JoinToSemiJoin,
                    detail,
                });
                Some(new)
            });
        }
        let estimator = &self.estimator;
        plan = rewrite_tree(&plan, &all_columns(&plan), &mut |node, _| {
            let new = order_selections(node, estimator)?;
            fired.push(FiredRule {
                rule: Rule::SelectionOrdering,
                detail: "selection chain reordered".into(),
            });
            Some(new)
        });
        Optimized {
            plan,
            fired,
            predicate_rewrites,
        }
    }
}

pub(crate) fn all_columns(plan: &LogicalPlan) -> ColumnSet {
    plan.output_columns().into_iter().collect()
}

/// Columns each input must provide so that `required` output columns and
/// the node itself can be computed.
fn input_requirements(plan: &LogicalPlan, required: &ColumnSet) -> Vec<ColumnSet> {
    let inputs = plan.inputs();
    let restrict = |cols: ColumnSet, p: &LogicalPlan| -> ColumnSet { cols.into_iter().filter(|c| p.has_column(c)).collect() };
    match plan.node() {
        PlanNode::Get { .. } => vec![],
        PlanNode::Select(pred) => {
            let mut r = required.clone();
            r.insert(pred.column.clone());
            vec![r]
        }
        PlanNode::Sort(keys) => {
            let mut r = required.clone();
            r.extend(keys.iter().map(|k| k.column.clone()));
            vec![r]
        }
        PlanNode::Project(exprs) => vec![exprs.iter().map(|e| e.input().clone()).collect()],
        PlanNode::Aggregate { group_by, aggregates } => {
            let mut r: ColumnSet = group_by.iter().cloned().collect();
            r.extend(aggregates.iter().map(|a| a.input.clone()));
            vec![r]
        }
        PlanNode::Union => inputs.iter().map(|p| all_columns(p)).collect(),
        PlanNode::Join { kind, condition } => {
            let (mut l, mut r) = (restrict(required.clone(), &inputs[0]), restrict(required.clone(), &inputs[1]));
            match condition {
                JoinCondition::Equi { left, right } => {
                    l.extend(left.iter().cloned());
                    r.extend(right.iter().cloned());
                }
                JoinCondition::Theta { left, right, .. } => {
                    l.insert(left.clone());
                    r.insert(right.clone());
                }
            }
            if *kind == JoinKind::Semi {
                r = match condition {
                    JoinCondition::Equi { right, .. } => right.iter().cloned().collect(),
                    JoinCondition::Theta { right, .. } => BTreeSet::from([right.clone()]),
                };
            }
            vec![l, r]
        }
    }
}

/// Calls `f` on every node (and subquery plan node) with the columns its
/// ancestors need from it.
pub(crate) fn visit_required(plan: &Arc<LogicalPlan>, required: &ColumnSet, f: &mut dyn FnMut(&Arc<LogicalPlan>, &ColumnSet)) {
    f(plan, required);
    if let PlanNode::Select(pred) = plan.node() {
        for sq in pred.subqueries() {
            visit_required(&sq.input, &all_columns(&sq.input), f);
        }
    }
    for (input, req) in plan.inputs().iter().zip(input_requirements(plan, required)) {
        visit_required(input, &req, f);
    }
}

type RewriteFn<'f> = dyn FnMut(&Arc<LogicalPlan>, &ColumnSet) -> Option<Arc<LogicalPlan>> + 'f;

/// Rewrites bottom-up: inputs (and subquery plans) first, then `f` on the
/// rebuilt node, which sees the columns its ancestors need in `required`.
fn rewrite_tree(plan: &Arc<LogicalPlan>, required: &ColumnSet, f: &mut RewriteFn<'_>) -> Arc<LogicalPlan> {
    let reqs = input_requirements(plan, required);
    let mut changed = false;
    let mut inputs = Vec::with_capacity(plan.inputs().len());
    for (input, req) in plan.inputs().iter().zip(&reqs) {
        let new = rewrite_tree(input, req, f);
        changed |= !Arc::ptr_eq(&new, input);
        inputs.push(new);
    }
    let mut node = plan.node().clone();
    if let PlanNode::Select(pred) = plan.node() {
        let mut mapped: HashMap<*const LogicalPlan, Arc<LogicalPlan>> = HashMap::new();
        let mut map_operand = |o: &Operand| -> Operand {
            match o {
                Operand::Subquery(sq) => {
                    let key = Arc::as_ptr(&sq.input);
                    let input = match mapped.get(&key) {
                        Some(p) => p.clone(),
                        None => {
                            let p = rewrite_tree(&sq.input, &all_columns(&sq.input), f);
                            mapped.insert(key, p.clone());
                            p
                        }
                    };
                    if Arc::ptr_eq(&input, &sq.input) {
                        o.clone()
                    } else {
                        changed = true;
                        Operand::Subquery(Arc::new(ScalarSubquery {
                            input,
                            column: sq.column.clone(),
                            agg: sq.agg,
                        }))
                    }
                }
                Operand::Constant(_) => o.clone(),
            }
        };
        let comparison = match &pred.comparison {
            Comparison::Compare(op, o) => Comparison::Compare(*op, map_operand(o)),
            Comparison::Between(lo, hi) => {
                let lo = map_operand(lo);
                Comparison::Between(lo, map_operand(hi))
            }
            Comparison::IsNotNull => Comparison::IsNotNull,
        };
        node = PlanNode::Select(Predicate::new(pred.column.clone(), comparison));
    }
    let rebuilt = if changed {
        LogicalPlan::build(node, inputs).expect("rewrites preserve required columns")
    } else {
        plan.clone()
    };
    f(&rebuilt, required).unwrap_or(rebuilt)
}

// ---------------------------------------------------------------------------
// Predicate pushdown
// ---------------------------------------------------------------------------

/// Moves every selection as close to the scans as its column allows.
pub fn pushdown(plan: &Arc<LogicalPlan>) -> Arc<LogicalPlan> {
    let inputs: Vec<_> = plan.inputs().iter().map(pushdown).collect();
    let changed = inputs.iter().zip(plan.inputs()).any(|(a, b)| !Arc::ptr_eq(a, b));
    match plan.node() {
        PlanNode::Select(pred) => push_into(&inputs[0], pred),
        _ if changed => plan.with_inputs(inputs).expect("same columns"),
        _ => plan.clone(),
    }
}

fn push_into(node: &Arc<LogicalPlan>, pred: &Predicate) -> Arc<LogicalPlan> {
    let here = || LogicalPlan::select(node.clone(), pred.clone()).expect("column present");
    let rebuild_at = |i: usize| -> Arc<LogicalPlan> {
        let mut inputs = node.inputs().to_vec();
        inputs[i] = push_into(&inputs[i], pred);
        node.with_inputs(inputs).expect("same columns")
    };
    match node.node() {
        PlanNode::Select(_) | PlanNode::Sort(_) => rebuild_at(0),
        PlanNode::Project(exprs) => {
            if exprs
                .iter()
                .any(|e| matches!(e, ProjectExpr::Column(c) if *c == pred.column))
            {
                rebuild_at(0)
            } else {
                here()
            }
        }
        PlanNode::Aggregate { group_by, .. } if group_by.contains(&pred.column) => rebuild_at(0),
        PlanNode::Join { kind, .. } => {
            if node.inputs()[0].has_column(&pred.column) {
                rebuild_at(0)
            } else if *kind == JoinKind::Inner && node.inputs()[1].has_column(&pred.column) {
                rebuild_at(1)
            } else {
                here()
            }
        }
        _ => here(),
    }
}

// ---------------------------------------------------------------------------
// Dependency-based rewrites
// ---------------------------------------------------------------------------

/// Removes grouping columns determined by other grouping columns and
/// recovers them with `any()`, restoring the output order with a projection.
fn reduce_group_by(node: &Arc<LogicalPlan>, props: &Propagator<'_>) -> Option<(Arc<LogicalPlan>, String)> {
    let PlanNode::Aggregate { group_by, aggregates } = node.node() else {
        return None;
    };
    if group_by.len() < 2 {
        return None;
    }
    let deps = props.dependencies_of(&node.inputs()[0]);
    let mut keep: Vec<ColumnRef> = group_by.clone();
    let mut removed = Vec::new();
    for c in group_by.iter().rev() {
        let others: ColumnSet = keep.iter().filter(|k| *k != c).cloned().collect();
        if !others.is_empty() && deps.closure(&others).contains(c) {
            keep.retain(|k| k != c);
            removed.push(c.clone());
        }
    }
    if removed.is_empty() {
        return None;
    }
    removed.reverse();
    let mut aggs = aggregates.clone();
    aggs.extend(removed.iter().map(|c| AggregateExpr::new(AggFunc::Any, c.clone())));
    let reduced = LogicalPlan::aggregate(node.inputs()[0].clone(), keep.clone(), aggs).ok()?;
    let restored = LogicalPlan::project(
        reduced,
        node.output_columns().into_iter().map(ProjectExpr::Column).collect(),
    )
    .ok()?;
    let names = |cs: &[ColumnRef]| cs.iter().map(|c| c.name.to_string()).collect::<Vec<_>>().join(",");
    Some((restored, format!("group [{}] -> [{}]", names(group_by), names(&keep))))
}

/// A side of a join that contributes nothing above the join.
pub(crate) fn unused(side: &LogicalPlan, required: &ColumnSet) -> bool {
    side.output_columns().iter().all(|c| !required.contains(c))
}

/// Splits a chain of selections into its predicates (top first) and base.
pub(crate) fn selection_chain(plan: &Arc<LogicalPlan>) -> (Vec<&Predicate>, &Arc<LogicalPlan>) {
    let mut preds = Vec::new();
    let mut cur = plan;
    while let PlanNode::Select(p) = cur.node() {
        preds.push(p);
        cur = &cur.inputs()[0];
    }
    (preds, cur)
}

fn key_subquery(side: &Arc<LogicalPlan>, key: &ColumnRef) -> Arc<LogicalPlan> {
    LogicalPlan::project(side.clone(), vec![ProjectExpr::Column(key.clone())]).expect("key present")
}

fn join_to_predicate(
    node: &Arc<LogicalPlan>,
    required: &ColumnSet,
    props: &Propagator<'_>,
) -> Option<(Arc<LogicalPlan>, Rule, PredicateRewrite)> {
    let PlanNode::Join {
        kind: JoinKind::Inner,
        condition: JoinCondition::Equi { left, right },
    } = node.node()
    else {
        return None;
    };
    let ([lk], [rk]) = (left.as_slice(), right.as_slice()) else {
        return None;
    };
    let (l, r) = (&node.inputs()[0], &node.inputs()[1]);
    for (fact, fact_key, side, side_key) in [(l, lk, r, rk), (r, rk, l, lk)] {
        if !unused(side, required) {
            continue;
        }
        let (preds, base) = selection_chain(side);
        if preds.is_empty() {
            continue;
        }
        let rewrite = |pred: Predicate, rule: Rule| {
            let result = LogicalPlan::select(fact.clone(), pred).ok()?;
            Some((
                result.clone(),
                rule,
                PredicateRewrite {
                    fact: fact.clone(),
                    fact_key: fact_key.clone(),
                    side: side.clone(),
                    side_key: side_key.clone(),
                    result,
                },
            ))
        };
        let top = props.dependencies_of(side);
        let unique_equality = preds.iter().any(|p| {
            matches!(&p.comparison, Comparison::Compare(CompareOp::Eq, Operand::Constant(_)))
                && top.is_unique([&p.column])
        });
        if unique_equality && top.is_unique([side_key]) {
            let sq = Operand::Subquery(Arc::new(ScalarSubquery {
                input: key_subquery(side, side_key),
                column: side_key.clone(),
                agg: SubqueryAgg::Value,
            }));
            let pred = Predicate::new(fact_key.clone(), Comparison::Compare(CompareOp::Eq, sq));
            return rewrite(pred, Rule::JoinToPredicateEq);
        }
        let [pred] = preds.as_slice() else {
            continue;
        };
        if !pred.is_constant_range() || pred.column == *side_key {
            continue;
        }
        let deps = props.dependencies_of(base);
        let Some((fact_table, fact_col)) = lineage(fact, fact_key) else {
            continue;
        };
        if deps.is_unique([side_key])
            && deps.has_od(std::slice::from_ref(side_key), std::slice::from_ref(&pred.column))
            && deps.has_ind(&fact_table, &[fact_col], std::slice::from_ref(side_key))
        {
            let input = key_subquery(side, side_key);
            let bound = |agg| {
                Operand::Subquery(Arc::new(ScalarSubquery {
                    input: input.clone(),
                    column: side_key.clone(),
                    agg,
                }))
            };
            let pred = Predicate::new(
                fact_key.clone(),
                Comparison::Between(bound(SubqueryAgg::Min), bound(SubqueryAgg::Max)),
            );
            return rewrite(pred, Rule::JoinToPredicateRange);
        }
    }
    None
}

fn join_to_semijoin(
    node: &Arc<LogicalPlan>,
    required: &ColumnSet,
    props: &Propagator<'_>,
) -> Option<(Arc<LogicalPlan>, String)> {
    let PlanNode::Join {
        kind: JoinKind::Inner,
        condition: JoinCondition::Equi { left, right },
    } = node.node()
    else {
        return None;
    };
    let (l, r) = (&node.inputs()[0], &node.inputs()[1]);
    for (fact, fact_keys, side, side_keys) in [(l, left, r, right), (r, right, l, left)] {
        if unused(side, required) && props.dependencies_of(side).is_unique(side_keys.iter()) {
            let semi = LogicalPlan::equi_join(
                JoinKind::Semi,
                fact.clone(),
                side.clone(),
                fact_keys.clone(),
                side_keys.clone(),
            )
            .ok()?;
            let keys: Vec<String> = side_keys.iter().map(|k| k.name.to_string()).collect();
            return Some((semi, format!("filter-only side keyed by [{}]", keys.join(","))));
        }
    }
    None
}

/// Applies the most selective predicate of a selection chain first.
fn order_selections(node: &Arc<LogicalPlan>, estimator: &Estimator<'_>) -> Option<Arc<LogicalPlan>> {
    let PlanNode::Select(_) = node.node() else {
        return None;
    };
    let (preds, base) = selection_chain(node);
    if preds.len() < 2 {
        return None;
    }
    let base_rows = estimator.estimate(base).max(1.0);
    let mut scored: Vec<(usize, f64, &Predicate)> = preds
        .iter()
        .rev()
        .enumerate()
        .map(|(i, p)| {
            let sel = LogicalPlan::select(base.clone(), (*p).clone())
                .map(|s| estimator.estimate(&s) / base_rows)
                .unwrap_or(1.0);
            (i, sel, *p)
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if scored.iter().enumerate().all(|(pos, (i, _, _))| pos == *i) {
        return None;
    }
    let mut plan = base.clone();
    for (_, _, p) in scored {
        plan = LogicalPlan::select(plan, p.clone()).ok()?;
    }
    Some(plan)
}

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

/// Uniform-distribution cardinality estimates over base-table statistics.
pub struct Estimator<'a> {
    db: &'a Database,
}

const DEFAULT_SELECTIVITY: f64 = 1.0 / 3.0;

impl<'a> Estimator<'a> {
    pub fn new(db: &'a Database) -> Estimator<'a> {
        Estimator { db }
    }

    fn base_stats(&self, plan: &LogicalPlan, column: &ColumnRef) -> Option<(f64, f64, Value, Value, f64)> {
        let (table, col) = lineage(plan, column)?;
        let t = self.db.table(&table).ok()?;
        let idx = t.column_index(&col).ok()?;
        let s = t.column_stats(idx);
        Some((
            t.row_count() as f64,
            s.distinct_count as f64,
            s.min.clone(),
            s.max.clone(),
            s.null_count as f64,
        ))
    }

    /// Estimated distinct values of `column` in the output of `plan`.
    pub fn distinct(&self, plan: &LogicalPlan, column: &ColumnRef) -> f64 {
        let rows = self.estimate(plan);
        match self.base_stats(plan, column) {
            Some((_, d, ..)) => d.min(rows).max(if rows > 0.0 { 1.0 } else { 0.0 }),
            None => rows,
        }
    }

    /// Rows of `fact` with a partner for `fact_key` among `side_key` values
    /// of `side`.
    pub fn semijoin(&self, fact: &LogicalPlan, fact_key: &ColumnRef, side: &LogicalPlan, side_key: &ColumnRef) -> f64 {
        let rows = self.estimate(fact);
        let df = self.distinct(fact, fact_key);
        if df <= 0.0 {
            return 0.0;
        }
        rows * (self.distinct(side, side_key) / df).min(1.0)
    }

    pub fn estimate(&self, plan: &LogicalPlan) -> f64 {
        let inputs = plan.inputs();
        match plan.node() {
            PlanNode::Get { table } => self.db.table(table).map(|t| t.row_count() as f64).unwrap_or(0.0),
            PlanNode::Select(pred) => self.select(&inputs[0], pred),
            PlanNode::Sort(_) | PlanNode::Project(_) => self.estimate(&inputs[0]),
            PlanNode::Union => self.estimate(&inputs[0]) + self.estimate(&inputs[1]),
            PlanNode::Aggregate { group_by, .. } => {
                let rows = self.estimate(&inputs[0]);
                if group_by.is_empty() {
                    return 1.0;
                }
                let groups = group_by
                    .iter()
                    .map(|g| self.distinct(&inputs[0], g))
                    .fold(1.0, |acc, d| acc * d);
                groups.min(rows)
            }
            PlanNode::Join { kind, condition } => {
                let (l, r) = (&inputs[0], &inputs[1]);
                match (kind, condition) {
                    (JoinKind::Semi, JoinCondition::Equi { left, right }) => {
                        self.semijoin(l, &left[0], r, &right[0])
                    }
                    (JoinKind::Inner | JoinKind::Left, JoinCondition::Equi { left, right }) => {
                        let (lr, rr) = (self.estimate(l), self.estimate(r));
                        let d = self.distinct(l, &left[0]).max(self.distinct(r, &right[0])).max(1.0);
                        let inner = lr * rr / d;
                        if *kind == JoinKind::Left {
                            inner.max(lr)
                        } else {
                            inner
                        }
                    }
                    _ => self.estimate(l) * self.estimate(r) * DEFAULT_SELECTIVITY,
                }
            }
        }
    }

    fn select(&self, input: &Arc<LogicalPlan>, pred: &Predicate) -> f64 {
        let rows = self.estimate(input);
        if let Some((side, side_key)) = semijoin_shape(pred) {
            return self.semijoin(input, &pred.column, side, side_key);
        }
        let stats = self.base_stats(input, &pred.column);
        let selectivity = match (&pred.comparison, &stats) {
            (Comparison::IsNotNull, Some((n, _, _, _, nulls))) if *n > 0.0 => (n - nulls) / n,
            (Comparison::IsNotNull, _) => 1.0,
            (Comparison::Compare(CompareOp::Eq, _), Some((_, d, ..))) => 1.0 / d.max(1.0),
            (Comparison::Compare(op, Operand::Constant(v)), Some((_, _, min, max, _))) => {
                let (lo, hi) = match op {
                    CompareOp::Lt | CompareOp::Le => (None, Some((v, *op == CompareOp::Le))),
                    _ => (Some((v, *op == CompareOp::Ge)), None),
                };
                range_fraction(min, max, lo, hi)
            }
            (Comparison::Between(Operand::Constant(lo), Operand::Constant(hi)), Some((_, _, min, max, _))) => {
                range_fraction(min, max, Some((lo, true)), Some((hi, true)))
            }
            _ => DEFAULT_SELECTIVITY,
        };
        rows * selectivity
    }
}

/// The semi-join a subquery predicate stands for: `value` equality or a
/// `min`/`max` range over one key subquery.
fn semijoin_shape(pred: &Predicate) -> Option<(&Arc<LogicalPlan>, &ColumnRef)> {
    match &pred.comparison {
        Comparison::Compare(CompareOp::Eq, Operand::Subquery(sq)) if sq.agg == SubqueryAgg::Value => {
            Some((&sq.input, &sq.column))
        }
        Comparison::Between(Operand::Subquery(lo), Operand::Subquery(hi))
            if lo.agg == SubqueryAgg::Min
                && hi.agg == SubqueryAgg::Max
                && lo.input == hi.input
                && lo.column == hi.column =>
        {
            Some((&lo.input, &lo.column))
        }
        _ => None,
    }
}

/// Fraction of `[min, max]` inside the bounds, for integer-backed values;
/// `(value, inclusive)` bounds.
fn range_fraction(min: &Value, max: &Value, lo: Option<(&Value, bool)>, hi: Option<(&Value, bool)>) -> f64 {
    let (Some(min), Some(max)) = (min.as_i64(), max.as_i64()) else {
        return DEFAULT_SELECTIVITY;
    };
    let mut a = min as f64;
    let mut b = max as f64;
    if let Some((v, inclusive)) = lo {
        let Some(v) = v.as_i64() else { return DEFAULT_SELECTIVITY };
        a = a.max(if inclusive { v as f64 } else { v as f64 + 1.0 });
    }
    if let Some((v, inclusive)) = hi {
        let Some(v) = v.as_i64() else { return DEFAULT_SELECTIVITY };
        b = b.min(if inclusive { v as f64 } else { v as f64 - 1.0 });
    }
    let width = max as f64 - min as f64 + 1.0;
    ((b - a + 1.0) / width).clamp(0.0, 1.0)
}

/// Renders `plan` with the estimated row count of every node.
pub fn explain(plan: &LogicalPlan, estimator: &Estimator<'_>) -> String {
    plan.display_with(&|node| Some(format!("est={:.0}", estimator.estimate(node))))
}

pub fn plan_dependencies(plan: &Arc<LogicalPlan>, store: &MetadataStore) -> Arc<PlanDependencies> {
    Propagator::new(store).dependencies_of(plan)
}
