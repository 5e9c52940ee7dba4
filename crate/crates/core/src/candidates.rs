//! Dependency candidates derived from workload plans.
//!
//! For every plan the generator looks for the shapes the rewrites act on and
//! emits the dependencies that would let them fire:
//!
//! | origin | shape | candidates |
//! |--------|-------|------------|
//! | `O1` | aggregate grouping by ≥ 2 columns of one table | `FD {c} -> rest`, `UCC c` per grouping column |
//! | `O2` | inner equi-join with a side unused above it | `UCC` on that side's keys |
//! | `O3eq` | as `O2`, single key, side filtered by `p = v` | `UCC p`, `UCC key` |
//! | `O3range` | as `O2`, single key, side filtered by one range or equality on `p` | `OD key |-> p`, `IND fact_key ⊆ key`, `UCC key` |
//!
//! Plans go through predicate pushdown first, like in the optimizer, so the
//! shapes match what the rewrites will see.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::catalog::{Dependency, MetadataStore, Verdict};
use crate::optimizer::{all_columns, pushdown, selection_chain, unused, visit_required};
use crate::plan::{ColumnRef, JoinCondition, JoinKind, LogicalPlan, PlanNode};
use crate::propagation::lineage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    O1,
    O2,
    O3Eq,
    O3Range,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::O1 => "O1",
            Origin::O2 => "O2",
            Origin::O3Eq => "O3eq",
            Origin::O3Range => "O3range",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Pending,
    Valid,
    Rejected,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pending => "pending",
            Status::Valid => "valid",
            Status::Rejected => "rejected",
            Status::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: usize,
    pub dependency: Dependency,
    pub origins: BTreeSet<Origin>,
    /// Ids of candidates whose rejection makes validating this one pointless.
    pub depends_on: BTreeSet<usize>,
    pub status: Status,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let origins: Vec<String> = self.origins.iter().map(|o| o.to_string()).collect();
        write!(f, "#{} {} origin={}", self.id, self.dependency, origins.join(","))?;
        if !self.depends_on.is_empty() {
            let deps: Vec<String> = self.depends_on.iter().map(|d| format!("#{d}")).collect();
            write!(f, " depends_on={}", deps.join(","))?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Collector {
    candidates: Vec<Candidate>,
    index: BTreeMap<Dependency, usize>,
}

impl Collector {
    /// Adds (or merges) a candidate and returns its id, unless the store
    /// already has a verdict for it.
    fn add(&mut self, store: &MetadataStore, dep: Dependency, origin: Origin) -> Option<usize> {
        if dep.check().is_err() || store.verdict(&dep).is_some() {
            return None;
        }
        if let Some(&id) = self.index.get(&dep) {
            self.candidates[id].origins.insert(origin);
            return Some(id);
        }
        let id = self.candidates.len();
        self.index.insert(dep.clone(), id);
        self.candidates.push(Candidate {
            id,
            dependency: dep,
            origins: BTreeSet::from([origin]),
            depends_on: BTreeSet::new(),
            status: Status::Pending,
        });
        Some(id)
    }
}

/// Base columns of `columns` if they all come from one table.
fn base_columns(plan: &LogicalPlan, columns: &[ColumnRef]) -> Option<(String, Vec<String>)> {
    let mut table = None;
    let mut out = Vec::new();
    for c in columns {
        let (t, col) = lineage(plan, c)?;
        if table.get_or_insert_with(|| t.clone()) != &t {
            return None;
        }
        out.push(col);
    }
    Some((table?, out))
}

/// Emits the candidates of every plan, deduplicated, in discovery order of
/// first occurrence. Dependencies with a verdict in `store` are left out.
pub fn generate(plans: &[Arc<LogicalPlan>], store: &MetadataStore) -> Vec<Candidate> {
    let mut c = Collector::default();
    for plan in plans {
        let plan = pushdown(plan);
        visit_required(&plan, &all_columns(&plan), &mut |node, required| match node.node() {
            PlanNode::Aggregate { group_by, .. } => group_by_candidates(&mut c, store, node, group_by),
            PlanNode::Join {
                kind: JoinKind::Inner,
                condition: JoinCondition::Equi { left, right },
            } => join_candidates(&mut c, store, node, left, right, required),
            _ => {}
        });
    }
    c.candidates
}

fn group_by_candidates(c: &mut Collector, store: &MetadataStore, node: &LogicalPlan, group_by: &[ColumnRef]) {
    let input = &node.inputs()[0];
    let mut by_table: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for g in group_by {
        if let Some((t, col)) = lineage(input, g) {
            let cols = by_table.entry(t).or_default();
            if !cols.contains(&col) {
                cols.push(col);
            }
        }
    }
    for (table, cols) in by_table {
        if cols.len() < 2 {
            continue;
        }
        for col in &cols {
            let rest = cols.iter().filter(|o| *o != col);
            c.add(store, Dependency::fd(&table, [col], rest), Origin::O1);
            c.add(store, Dependency::ucc(&table, [col]), Origin::O1);
        }
    }
}

fn join_candidates(
    c: &mut Collector,
    store: &MetadataStore,
    node: &Arc<LogicalPlan>,
    left: &[ColumnRef],
    right: &[ColumnRef],
    required: &BTreeSet<ColumnRef>,
) {
    let (l, r) = (&node.inputs()[0], &node.inputs()[1]);
    for (fact, fact_keys, side, side_keys) in [(l, left, r, right), (r, right, l, left)] {
        if !unused(side, required) {
            continue;
        }
        let Some((side_table, key_cols)) = base_columns(side, side_keys) else {
            continue;
        };
        c.add(store, Dependency::ucc(&side_table, key_cols.clone()), Origin::O2);
        let ([fact_key], [key]) = (fact_keys, key_cols.as_slice()) else {
            continue;
        };
        let (preds, _) = selection_chain(side);
        for pred in &preds {
            if !pred.is_constant_equality() {
                continue;
            }
            if let Some((t, p)) = lineage(side, &pred.column) {
                if t == side_table {
                    c.add(store, Dependency::ucc(&t, [p]), Origin::O3Eq);
                    c.add(store, Dependency::ucc(&side_table, [key]), Origin::O3Eq);
                }
            }
        }
        let [pred] = preds.as_slice() else {
            continue;
        };
        if !pred.is_constant_range() {
            continue;
        }
        let (Some((t, p)), Some((fact_table, fact_col))) = (lineage(side, &pred.column), lineage(fact, fact_key)) else {
            continue;
        };
        if t != side_table || p == *key {
            continue;
        }
        let od = Dependency::od(&side_table, [key], [&p]);
        if store.verdict(&od) == Some(Verdict::Rejected) {
            continue;
        }
        let od_id = c.add(store, od, Origin::O3Range);
        let ind = Dependency::ind(&fact_table, [fact_col], &side_table, [key]);
        if let Some(ind_id) = c.add(store, ind, Origin::O3Range) {
            if let Some(od_id) = od_id {
                c.candidates[ind_id].depends_on.insert(od_id);
            }
        }
        c.add(store, Dependency::ucc(&side_table, [key]), Origin::O3Range);
    }
}

/// Validation order: ODs, INDs, UCCs, FDs; ties by table and columns.
pub fn order(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        (a.dependency.kind(), &a.dependency).cmp(&(b.dependency.kind(), &b.dependency))
    });
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::build;
    use crate::storage::{DataType, Database, Schema, Table};

    fn db() -> Database {
        let mut db = Database::new();
        let empty = |name: &str, cols: &[(&str, DataType)]| {
            Table::from_columns(
                name,
                Schema::new(cols.iter().map(|(n, t)| (*n, *t))),
                vec![vec![]; cols.len()],
                4,
            )
            .unwrap()
        };
        db.add(empty(
            "date_dim",
            &[("d_sk", DataType::Int), ("d_date", DataType::Date), ("d_year", DataType::Int)],
        ));
        db.add(empty(
            "sales",
            &[
                ("s_sold_date", DataType::Int),
                ("s_customer", DataType::Int),
                ("s_sales_price", DataType::Int),
            ],
        ));
        db.add(empty("customer", &[("c_sk", DataType::Int), ("c_name", DataType::Utf8)]));
        db
    }

    const QUERY: &str = "\
aggregate group=[c_sk,c_name] aggs=[sum(s_sales_price)]
  join inner on=[s_customer=c_sk]
    join inner on=[d_sk=s_sold_date]
      select d_date = 2000-01-01
        get date_dim
      get sales
    get customer
";

    fn deps(cands: &[Candidate]) -> Vec<String> {
        cands.iter().map(|c| c.dependency.to_string()).collect()
    }

    #[test]
    fn example_query_candidates() {
        let db = db();
        let cands = generate(&[build(QUERY, &db).unwrap()], &MetadataStore::new());
        let d = deps(&cands);
        for expected in [
            "UCC date_dim(d_date)",
            "UCC date_dim(d_sk)",
            "UCC customer(c_sk)",
            "FD customer(c_sk) -> (c_name)",
        ] {
            assert!(d.contains(&expected.to_string()), "{expected} missing from {d:?}");
        }
    }

    #[test]
    fn range_variant_candidates() {
        let db = db();
        let q = QUERY.replace("d_date = 2000-01-01", "d_year = 2000");
        let cands = generate(&[build(&q, &db).unwrap()], &MetadataStore::new());
        let find = |text: &str| cands.iter().find(|c| c.dependency.to_string() == text).unwrap();
        let od = find("OD date_dim(d_sk) |-> (d_year)");
        let ind = find("IND sales(s_sold_date) -> date_dim(d_sk)");
        find("UCC date_dim(d_sk)");
        assert_eq!(ind.depends_on, BTreeSet::from([od.id]));
        assert!(ind.origins.contains(&Origin::O3Range));
    }

    #[test]
    fn no_joins_single_grouping_column() {
        let db = db();
        let plan = build("aggregate group=[c_sk] aggs=[]\n  get customer", &db).unwrap();
        assert!(generate(&[plan], &MetadataStore::new()).is_empty());
    }

    #[test]
    fn idempotent_over_repeated_plans() {
        let db = db();
        let p = build(QUERY, &db).unwrap();
        let once = generate(std::slice::from_ref(&p), &MetadataStore::new());
        let twice = generate(&[p.clone(), p], &MetadataStore::new());
        assert_eq!(once, twice);
    }

    #[test]
    fn known_dependencies_are_not_emitted() {
        let db = db();
        let mut store = MetadataStore::new();
        store.declare(Dependency::ucc("date_dim", ["d_sk"])).unwrap();
        store
            .record(Dependency::ucc("date_dim", ["d_date"]), Verdict::Rejected)
            .unwrap();
        let d = deps(&generate(&[build(QUERY, &db).unwrap()], &store));
        assert!(!d.contains(&"UCC date_dim(d_sk)".to_string()));
        assert!(!d.contains(&"UCC date_dim(d_date)".to_string()));
    }

    fn cand(id: usize, dep: Dependency) -> Candidate {
        Candidate {
            id,
            dependency: dep,
            origins: BTreeSet::new(),
            depends_on: BTreeSet::new(),
            status: Status::Pending,
        }
    }

    #[test]
    fn order_by_kind() {
        let input = vec![
            cand(0, Dependency::ucc("a", ["x"])),
            cand(1, Dependency::od("b", ["x"], ["y"])),
            cand(2, Dependency::ind("c", ["x"], "d", ["y"])),
            cand(3, Dependency::fd("d", ["x"], ["y"])),
        ];
        let ids: Vec<usize> = order(input).iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![1, 2, 0, 3]);
        assert!(order(vec![]).is_empty());
        let ids: Vec<usize> = order(vec![cand(0, Dependency::ucc("z", ["a"])), cand(1, Dependency::ucc("b", ["a"]))])
            .iter()
            .map(|c| c.id)
            .collect();
        assert_eq!(ids, vec![1, 0]);
    }
}
