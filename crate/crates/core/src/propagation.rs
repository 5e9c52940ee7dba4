//! Derives the dependencies that hold on the output of every plan node.
//!
//! Dependencies are computed bottom-up from the valid base-table
//! dependencies in the metadata store. Nodes forward the dependencies of
//! their inputs whenever every involved column survives unchanged, and the
//! rules below add or remove dependencies:
//!
//! * aggregates make their grouping columns unique, and an ungrouped
//!   aggregate produces a single row in which every column is unique;
//! * an inner equi-join keeps one side's UCCs when the other side's key is
//!   unique and degrades them to FDs otherwise; theta and left joins always
//!   degrade; the join keys form FDs and ODs in both directions, and ODs of
//!   one key carry over to the other;
//! * unions drop UCCs, FDs and ODs;
//! * an IND `R.a ⊆ S.x` travels with `S`: it is dropped by any filter on `S`
//!   other than `x IS NOT NULL` and by inner and semi joins, unless the join
//!   key of `S` itself has an IND into the other side, so no row of `S` is
//!   lost.
//!
//! ODs do not imply FDs here: an OD `a ↦ b` only orders `b` across distinct
//! values of `a` and allows different `b` for equal `a`.
//!
//! `any(x)` aggregates take all values of a group from its first row, so the
//! non-computed columns of an aggregate output are a projection of a subset
//! of the input rows.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::catalog::{Dependency, MetadataStore};
use crate::plan::{
    AggFunc, ColumnRef, Comparison, JoinCondition, JoinKind, LogicalPlan, PlanNode, ProjectExpr,
};

pub type ColumnSet = BTreeSet<ColumnRef>;

/// An IND whose referenced side is the node output: every value of the base
/// columns `from_table(from_columns)` occurs in the output columns `to`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeInd {
    pub from_table: String,
    pub from_columns: Vec<String>,
    pub to: Vec<ColumnRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanDependencies {
    pub uccs: BTreeSet<ColumnSet>,
    /// Determinant to the union of its dependents.
    pub fds: BTreeMap<ColumnSet, ColumnSet>,
    pub ods: BTreeSet<(Vec<ColumnRef>, Vec<ColumnRef>)>,
    pub inds: BTreeSet<NodeInd>,
}

impl PlanDependencies {
    fn add_fd(&mut self, determinant: ColumnSet, dependents: impl IntoIterator<Item = ColumnRef>) {
        let deps: ColumnSet = dependents
            .into_iter()
            .filter(|c| !determinant.contains(c))
            .collect();
        if deps.is_empty() || determinant.is_empty() {
            return;
        }
        self.fds.entry(determinant).or_default().extend(deps);
    }

    /// Whether some UCC is contained in `columns`.
    pub fn is_unique<'a>(&self, columns: impl IntoIterator<Item = &'a ColumnRef>) -> bool {
        let cols: ColumnSet = columns.into_iter().cloned().collect();
        self.uccs.iter().any(|u| u.is_subset(&cols))
    }

    /// Columns functionally determined by `determinant` (its FD closure).
    pub fn closure(&self, determinant: &ColumnSet) -> ColumnSet {
        let mut closure = determinant.clone();
        loop {
            let before = closure.len();
            for (lhs, rhs) in &self.fds {
                if lhs.is_subset(&closure) {
                    closure.extend(rhs.iter().cloned());
                }
            }
            if closure.len() == before {
                return closure;
            }
        }
    }

    pub fn has_od(&self, ordering: &[ColumnRef], ordered: &[ColumnRef]) -> bool {
        self.ods
            .iter()
            .any(|(a, b)| a.as_slice() == ordering && b.as_slice() == ordered)
    }

    pub fn has_ind(&self, from_table: &str, from_columns: &[String], to: &[ColumnRef]) -> bool {
        self.inds
            .iter()
            .any(|i| i.from_table == from_table && i.from_columns == from_columns && i.to == to)
    }

    /// Restricts every dependency to the columns in `keep`.
    fn restricted(&self, keep: &ColumnSet) -> PlanDependencies {
        let mut out = PlanDependencies {
            uccs: self.uccs.iter().filter(|u| u.is_subset(keep)).cloned().collect(),
            ods: self
                .ods
                .iter()
                .filter(|(a, b)| a.iter().chain(b).all(|c| keep.contains(c)))
                .cloned()
                .collect(),
            inds: self
                .inds
                .iter()
                .filter(|i| i.to.iter().all(|c| keep.contains(c)))
                .cloned()
                .collect(),
            fds: BTreeMap::new(),
        };
        for (lhs, rhs) in &self.fds {
            if lhs.is_subset(keep) {
                out.add_fd(lhs.clone(), rhs.intersection(keep).cloned());
            }
        }
        out
    }

    /// Adds the FD `K -> outputs \ K` for every UCC `K`.
    fn with_ucc_fds(mut self, outputs: &[ColumnRef]) -> PlanDependencies {
        let uccs: Vec<ColumnSet> = self.uccs.iter().cloned().collect();
        for u in uccs {
            self.add_fd(u, outputs.iter().cloned());
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.uccs.is_empty() && self.fds.is_empty() && self.ods.is_empty() && self.inds.is_empty()
    }

    /// One dependency per line, for plan annotations and golden tests.
    pub fn describe(&self) -> Vec<String> {
        let cols = |c: &mut dyn Iterator<Item = &ColumnRef>| -> String {
            c.map(|c| c.name.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut out = Vec::new();
        for u in &self.uccs {
            out.push(format!("UCC({})", cols(&mut u.iter())));
        }
        for (l, r) in &self.fds {
            out.push(format!("FD({} -> {})", cols(&mut l.iter()), cols(&mut r.iter())));
        }
        for (a, b) in &self.ods {
            out.push(format!("OD({} |-> {})", cols(&mut a.iter()), cols(&mut b.iter())));
        }
        for i in &self.inds {
            out.push(format!(
                "IND({}({}) -> {})",
                i.from_table,
                i.from_columns.join(","),
                cols(&mut i.to.iter())
            ));
        }
        out
    }
}

/// The base column whose value set contains every non-null value of
/// `column` in the output of `plan`, if values pass through unchanged and no
/// row can be null-extended or come from a different relation.
pub fn lineage(plan: &LogicalPlan, column: &ColumnRef) -> Option<(String, String)> {
    if column.is_derived() || !plan.has_column(column) {
        return None;
    }
    match plan.node() {
        PlanNode::Get { table } => Some((table.to_string(), column.name.to_string())),
        PlanNode::Union => None,
        PlanNode::Join { kind, .. } => {
            let (left, right) = (&plan.inputs()[0], &plan.inputs()[1]);
            if left.has_column(column) {
                lineage(left, column)
            } else if *kind == JoinKind::Inner {
                lineage(right, column)
            } else {
                None
            }
        }
        PlanNode::Project(exprs) => exprs
            .iter()
            .any(|e| matches!(e, ProjectExpr::Column(c) if c == column))
            .then(|| lineage(&plan.inputs()[0], column))
            .flatten(),
        PlanNode::Aggregate { group_by, aggregates } => (group_by.contains(column)
            || aggregates
                .iter()
                .any(|a| a.func == AggFunc::Any && &a.input == column))
        .then(|| lineage(&plan.inputs()[0], column))
        .flatten(),
        PlanNode::Select(_) | PlanNode::Sort(_) => lineage(&plan.inputs()[0], column),
    }
}

/// Computes node dependencies, memoized for the lifetime of the value.
///
/// Create one per optimization pass: the memo is keyed by node identity and
/// holds the nodes alive, so entries never alias a different plan.
type Memo = HashMap<*const LogicalPlan, (Arc<LogicalPlan>, Arc<PlanDependencies>)>;

pub struct Propagator<'a> {
    store: &'a MetadataStore,
    memo: RefCell<Memo>,
}

impl<'a> Propagator<'a> {
    pub fn new(store: &'a MetadataStore) -> Propagator<'a> {
        Propagator {
            store,
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn dependencies_of(&self, plan: &Arc<LogicalPlan>) -> Arc<PlanDependencies> {
        let key = Arc::as_ptr(plan);
        if let Some((_, deps)) = self.memo.borrow().get(&key) {
            return deps.clone();
        }
        let deps = Arc::new(self.compute(plan));
        self.memo.borrow_mut().insert(key, (plan.clone(), deps.clone()));
        deps
    }

    fn compute(&self, plan: &Arc<LogicalPlan>) -> PlanDependencies {
        let outputs = plan.output_columns();
        let out_set: ColumnSet = outputs.iter().cloned().collect();
        let deps = match plan.node() {
            PlanNode::Get { table } => self.base(table, &out_set),
            PlanNode::Select(pred) => {
                let mut d = (*self.dependencies_of(&plan.inputs()[0])).clone();
                let keeps_inds = matches!(pred.comparison, Comparison::IsNotNull);
                d.inds
                    .retain(|i| keeps_inds && i.to.contains(&pred.column));
                d
            }
            PlanNode::Sort(_) => (*self.dependencies_of(&plan.inputs()[0])).clone(),
            PlanNode::Project(_) => self.dependencies_of(&plan.inputs()[0]).restricted(&out_set),
            PlanNode::Aggregate { group_by, aggregates } => {
                let input = self.dependencies_of(&plan.inputs()[0]);
                if group_by.is_empty() {
                    let mut d = PlanDependencies::default();
                    for c in &outputs {
                        d.uccs.insert(BTreeSet::from([c.clone()]));
                    }
                    d
                } else {
                    let mut carried: ColumnSet = group_by.iter().cloned().collect();
                    carried.extend(
                        aggregates
                            .iter()
                            .filter(|a| a.func == AggFunc::Any)
                            .map(|a| a.input.clone()),
                    );
                    let mut d = input.restricted(&carried);
                    let groups: ColumnSet = group_by.iter().cloned().collect();
                    d.inds.retain(|i| i.to.iter().all(|c| groups.contains(c)));
                    d.uccs.insert(groups);
                    d
                }
            }
            PlanNode::Union => PlanDependencies {
                inds: self.dependencies_of(&plan.inputs()[0]).inds.clone(),
                ..PlanDependencies::default()
            },
            PlanNode::Join { kind, condition } => self.join(plan, *kind, condition),
        };
        let mut deps = deps.with_ucc_fds(&outputs);
        minimize_uccs(&mut deps.uccs);
        deps
    }

    fn base(&self, table: &str, columns: &ColumnSet) -> PlanDependencies {
        let col = |c: &String| ColumnRef::new(table, c);
        let all_present = |cs: &mut dyn Iterator<Item = &String>| {
            for c in cs {
                if !columns.contains(&col(c)) {
                    return false;
                }
            }
            true
        };
        let mut d = PlanDependencies::default();
        for dep in self.store.valid_for_table(table) {
            match dep {
                Dependency::Ucc { table: t, columns: cs } if t == table => {
                    if all_present(&mut cs.iter()) {
                        d.uccs.insert(cs.iter().map(col).collect());
                    }
                }
                Dependency::Fd {
                    table: t,
                    determinant,
                    dependents,
                } if t == table => {
                    if all_present(&mut determinant.iter().chain(dependents)) {
                        d.add_fd(determinant.iter().map(col).collect(), dependents.iter().map(col));
                    }
                }
                Dependency::Od {
                    table: t,
                    ordering,
                    ordered,
                } if t == table => {
                    if all_present(&mut ordering.iter().chain(ordered)) {
                        d.ods.insert((ordering.iter().map(col).collect(), ordered.iter().map(col).collect()));
                    }
                }
                Dependency::Ind {
                    from_table,
                    from_columns,
                    to_table,
                    to_columns,
                } if to_table == table && all_present(&mut to_columns.iter()) => {
                    d.inds.insert(NodeInd {
                        from_table: from_table.clone(),
                        from_columns: from_columns.clone(),
                        to: to_columns.iter().map(col).collect(),
                    });
                }
                _ => {}
            }
        }
        d
    }

    fn join(&self, plan: &Arc<LogicalPlan>, kind: JoinKind, condition: &JoinCondition) -> PlanDependencies {
        let (left, right) = (&plan.inputs()[0], &plan.inputs()[1]);
        let (ld, rd) = (self.dependencies_of(left), self.dependencies_of(right));
        let (lcols, rcols) = (left.output_columns(), right.output_columns());

        // Whether every row of one side finds a partner: its key has an IND
        // into the other side's key.
        let keeps_all_rows = |side: &LogicalPlan, keys: &[ColumnRef], other: &PlanDependencies, other_keys: &[ColumnRef]| {
            let mut lineages = Vec::new();
            for k in keys {
                match lineage(side, k) {
                    Some((t, c)) => lineages.push((t, c)),
                    None => return false,
                }
            }
            let table = lineages[0].0.clone();
            if lineages.iter().any(|(t, _)| *t != table) {
                return false;
            }
            let from: Vec<String> = lineages.into_iter().map(|(_, c)| c).collect();
            other.has_ind(&table, &from, other_keys)
        };

        let mut d = PlanDependencies::default();
        let degrade = |d: &mut PlanDependencies, uccs: &BTreeSet<ColumnSet>, cols: &[ColumnRef], keys: Option<&[ColumnRef]>| {
            for u in uccs {
                if keys.is_none_or(|k| k.iter().all(|c| u.contains(c))) {
                    d.add_fd(u.clone(), cols.iter().cloned());
                }
            }
        };
        let forward_fds = |d: &mut PlanDependencies, from: &PlanDependencies, keys: Option<&[ColumnRef]>| {
            for (l, r) in &from.fds {
                if keys.is_none_or(|k| k.iter().all(|c| l.contains(c))) {
                    d.add_fd(l.clone(), r.iter().cloned());
                }
            }
        };

        match (kind, condition) {
            (JoinKind::Semi, JoinCondition::Equi { left: lk, right: rk }) => {
                d.uccs = ld.uccs.clone();
                d.fds = ld.fds.clone();
                d.ods = ld.ods.clone();
                if keeps_all_rows(left, lk, &rd, rk) {
                    d.inds = ld.inds.clone();
                }
            }
            (JoinKind::Inner, JoinCondition::Equi { left: lk, right: rk }) => {
                let right_unique = rd.is_unique(rk);
                let left_unique = ld.is_unique(lk);
                if right_unique {
                    d.uccs.extend(ld.uccs.iter().cloned());
                } else {
                    degrade(&mut d, &ld.uccs, &lcols, None);
                }
                if left_unique {
                    d.uccs.extend(rd.uccs.iter().cloned());
                } else {
                    degrade(&mut d, &rd.uccs, &rcols, None);
                }
                forward_fds(&mut d, &ld, None);
                forward_fds(&mut d, &rd, None);
                d.ods.extend(ld.ods.iter().cloned());
                d.ods.extend(rd.ods.iter().cloned());
                for (a, x) in lk.iter().zip(rk) {
                    d.add_fd(BTreeSet::from([a.clone()]), [x.clone()]);
                    d.add_fd(BTreeSet::from([x.clone()]), [a.clone()]);
                    d.ods.insert((vec![a.clone()], vec![x.clone()]));
                    d.ods.insert((vec![x.clone()], vec![a.clone()]));
                    let swap = |c: &ColumnRef| -> Option<ColumnRef> {
                        if c == a {
                            Some(x.clone())
                        } else if c == x {
                            Some(a.clone())
                        } else {
                            None
                        }
                    };
                    for (ordering, ordered) in ld.ods.iter().chain(rd.ods.iter()) {
                        if let [key] = ordering.as_slice() {
                            if let Some(other) = swap(key) {
                                d.ods.insert((vec![other], ordered.clone()));
                            }
                        }
                    }
                }
                if keeps_all_rows(left, lk, &rd, rk) {
                    d.inds.extend(ld.inds.iter().cloned());
                }
                if keeps_all_rows(right, rk, &ld, lk) {
                    d.inds.extend(rd.inds.iter().cloned());
                }
                d.ods.retain(|(a, b)| a != b);
            }
            (JoinKind::Inner, JoinCondition::Theta { .. }) => {
                degrade(&mut d, &ld.uccs, &lcols, None);
                degrade(&mut d, &rd.uccs, &rcols, None);
                forward_fds(&mut d, &ld, None);
                forward_fds(&mut d, &rd, None);
                d.ods.extend(ld.ods.iter().cloned());
                d.ods.extend(rd.ods.iter().cloned());
            }
            (JoinKind::Left, JoinCondition::Equi { right: rk, .. }) => {
                degrade(&mut d, &ld.uccs, &lcols, None);
                forward_fds(&mut d, &ld, None);
                // Null-extended rows carry nulls in every right column, so
                // right-side FDs only survive when their determinant includes
                // the join keys, which are never null in matched rows.
                degrade(&mut d, &rd.uccs, &rcols, Some(rk));
                forward_fds(&mut d, &rd, Some(rk));
                d.ods.extend(ld.ods.iter().cloned());
                d.inds.extend(ld.inds.iter().cloned());
            }
            _ => {}
        }
        d
    }

    /// Renders `plan` with the dependencies of each node appended.
    pub fn annotate(&self, plan: &Arc<LogicalPlan>) -> String {
        let mut memo: HashMap<*const LogicalPlan, String> = HashMap::new();
        collect_annotations(self, plan, &mut memo);
        plan.display_with(&|node| {
            memo.get(&(node as *const LogicalPlan))
                .filter(|s| !s.is_empty())
                .cloned()
        })
    }
}

fn collect_annotations(p: &Propagator<'_>, plan: &Arc<LogicalPlan>, out: &mut HashMap<*const LogicalPlan, String>) {
    let deps = p.dependencies_of(plan);
    let mut s = String::new();
    for (i, line) in deps.describe().iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{line}");
    }
    out.insert(Arc::as_ptr(plan), s);
    if let PlanNode::Select(pred) = plan.node() {
        for sq in pred.subqueries() {
            collect_annotations(p, &sq.input, out);
        }
    }
    for input in plan.inputs() {
        collect_annotations(p, input, out);
    }
}

fn minimize_uccs(uccs: &mut BTreeSet<ColumnSet>) {
    let all: Vec<ColumnSet> = uccs.iter().cloned().collect();
    uccs.retain(|u| !all.iter().any(|o| o != u && o.is_subset(u)));
}
