//! Brute-force oracles and random data/plan generators shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dqo_core::catalog::{Dependency, MetadataStore, Verdict};
use dqo_core::executor::{ExecConfig, Executor};
use dqo_core::plan::{
    AggFunc, AggregateExpr, ArithOp, ColumnRef, CompareOp, Comparison, JoinCondition, JoinKind, LogicalPlan, Operand,
    Predicate, ProjectExpr, SortKey,
};
use dqo_core::propagation::{PlanDependencies, Propagator};
use dqo_core::storage::{DataType, Database, Schema, Table, Value};
use dqo_core::validation::{ValidationConfig, Validator};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Oracles over plain rows
// ---------------------------------------------------------------------------

pub type Rows = Vec<Vec<Value>>;

fn project(rows: &Rows, cols: &[usize]) -> Vec<Vec<Value>> {
    rows.iter().map(|r| cols.iter().map(|&c| r[c].clone()).collect()).collect()
}

fn any_null(rows: &Rows, cols: &[usize]) -> bool {
    rows.iter().any(|r| cols.iter().any(|&c| r[c].is_null()))
}

/// No nulls and no two rows agree on `cols`.
pub fn ucc(rows: &Rows, cols: &[usize]) -> bool {
    !any_null(rows, cols) && distinct_tuples(rows, cols)
}

/// No two rows agree on `cols`, nulls comparing equal.
pub fn distinct_tuples(rows: &Rows, cols: &[usize]) -> bool {
    let mut tuples = project(rows, cols);
    tuples.sort();
    tuples.windows(2).all(|w| w[0] != w[1])
}

/// Rows equal on `det` are equal on `dep`, nulls comparing equal.
pub fn fd_holds(rows: &Rows, det: &[usize], dep: &[usize]) -> bool {
    let mut seen: BTreeMap<Vec<Value>, Vec<Value>> = BTreeMap::new();
    for r in rows {
        let k: Vec<Value> = det.iter().map(|&c| r[c].clone()).collect();
        let v: Vec<Value> = dep.iter().map(|&c| r[c].clone()).collect();
        if let Some(prev) = seen.insert(k, v.clone()) {
            if prev != v {
                return false;
            }
        }
    }
    true
}

/// The verdict FD validation must produce: confirmed exactly when the
/// determinant is a single null-free unique column.
pub fn fd_verdict(rows: &Rows, det: &[usize]) -> bool {
    det.len() == 1 && ucc(rows, det)
}

/// `a1 < a2 ⇒ b1 <= b2` over lexicographic tuples, with nulls rejected.
pub fn od(rows: &Rows, a: &[usize], b: &[usize]) -> bool {
    od_with_nulls(rows, a, b) && !any_null(rows, a) && !any_null(rows, b)
}

/// The order condition alone, treating null as the smallest value.
pub fn od_with_nulls(rows: &Rows, a: &[usize], b: &[usize]) -> bool {
    // Per distinct `a` tuple, the range of `b`; groups in ascending order
    // must have non-decreasing, non-overlapping ranges.
    let mut groups: BTreeMap<Vec<Value>, (Vec<Value>, Vec<Value>)> = BTreeMap::new();
    for r in rows {
        let k: Vec<Value> = a.iter().map(|&c| r[c].clone()).collect();
        let v: Vec<Value> = b.iter().map(|&c| r[c].clone()).collect();
        let e = groups.entry(k).or_insert_with(|| (v.clone(), v.clone()));
        if v < e.0 {
            e.0 = v.clone();
        }
        if v > e.1 {
            e.1 = v;
        }
    }
    let mut prev_max: Option<Vec<Value>> = None;
    for (_, (lo, hi)) in groups {
        if let Some(p) = &prev_max {
            if lo < *p {
                return false;
            }
        }
        if prev_max.as_ref().is_none_or(|p| hi > *p) {
            prev_max = Some(hi);
        }
    }
    true
}

/// Every `a` tuple of `r` occurs among the `x` tuples of `s`; nulls in `a`
/// reject.
pub fn ind(r: &Rows, a: &[usize], s: &Rows, x: &[usize]) -> bool {
    if any_null(r, a) {
        return false;
    }
    let domain: BTreeSet<Vec<Value>> = project(s, x).into_iter().collect();
    project(r, a).iter().all(|t| domain.contains(t))
}

/// Every `a` tuple of `r` occurs among the `x` tuples of `s`.
pub fn included(r: &Rows, a: &[usize], s: &Rows, x: &[usize]) -> bool {
    let domain: BTreeSet<Vec<Value>> = project(s, x).into_iter().collect();
    project(r, a).iter().filter(|t| !t.iter().any(Value::is_null)).all(|t| domain.contains(t))
}

/// Oracle verdict for a dependency over `db`.
pub fn oracle(db: &Database, dep: &Dependency) -> bool {
    let idx = |t: &Table, cols: &mut dyn Iterator<Item = &String>| -> Vec<usize> {
        cols.map(|c| t.column_index(c).unwrap()).collect()
    };
    match dep {
        Dependency::Ucc { table, columns } => {
            let t = db.table(table).unwrap();
            ucc(&t.rows(), &idx(t, &mut columns.iter()))
        }
        Dependency::Fd { table, determinant, .. } => {
            let t = db.table(table).unwrap();
            fd_verdict(&t.rows(), &idx(t, &mut determinant.iter()))
        }
        Dependency::Od { table, ordering, ordered } => {
            let t = db.table(table).unwrap();
            let rows = t.rows();
            od(&rows, &idx(t, &mut ordering.iter()), &idx(t, &mut ordered.iter()))
        }
        Dependency::Ind {
            from_table,
            from_columns,
            to_table,
            to_columns,
        } => {
            let (r, s) = (db.table(from_table).unwrap(), db.table(to_table).unwrap());
            ind(&r.rows(), &idx(r, &mut from_columns.iter()), &s.rows(), &idx(s, &mut to_columns.iter()))
        }
    }
}

// ---------------------------------------------------------------------------
// Random tables for validator checks
// ---------------------------------------------------------------------------

/// Row count between 1 and `max_rows`, log-uniform.
pub fn row_count(rng: &mut impl Rng, max_rows: usize) -> usize {
    let exp = rng.gen_range(0.0..(max_rows as f64).ln());
    (exp.exp() as usize).clamp(1, max_rows)
}

fn inject_nulls(rng: &mut impl Rng, col: &mut [Value]) {
    match rng.gen_range(0..6) {
        0 => {
            let i = rng.gen_range(0..col.len());
            col[i] = Value::Null;
        }
        1 => {
            for v in col.iter_mut() {
                if rng.gen_bool(0.1) {
                    *v = Value::Null;
                }
            }
        }
        _ => {}
    }
}

fn inject_duplicate(rng: &mut impl Rng, col: &mut [Value]) {
    if col.len() > 1 && rng.gen_bool(0.3) {
        let (i, j) = (rng.gen_range(0..col.len()), rng.gen_range(0..col.len()));
        col[i] = col[j].clone();
    }
}

/// A column with one of several shapes: sorted or shuffled keys (with or
/// without gaps), duplicates, low cardinality.
fn int_column(rng: &mut impl Rng, n: usize) -> Vec<Value> {
    let start = rng.gen_range(-5..20i64);
    let step = *[1i64, 1, 1, 2, 3].choose(rng).unwrap();
    let mut col: Vec<i64> = match rng.gen_range(0..5) {
        0 => (0..n as i64).map(|i| start + i * step).collect(),
        1 => {
            let mut v: Vec<i64> = (0..n as i64).map(|i| start + i * step).collect();
            v.shuffle(rng);
            v
        }
        2 => {
            let k = rng.gen_range(1..10);
            (0..n as i64).map(|i| start + i / k).collect()
        }
        3 => {
            let card = rng.gen_range(1..=n.max(1) as i64);
            (0..n).map(|_| start + rng.gen_range(0..card)).collect()
        }
        _ => {
            let mut v: Vec<i64> = (0..n as i64).map(|i| start + i * step).collect();
            // Locally shuffled: sorted across chunks, unsorted within.
            for w in v.chunks_mut(rng.gen_range(2..8)) {
                w.shuffle(rng);
            }
            v
        }
    };
    if rng.gen_bool(0.2) {
        col.sort_unstable();
    }
    let mut col: Vec<Value> = col.into_iter().map(Value::Int).collect();
    inject_duplicate(rng, &mut col);
    inject_nulls(rng, &mut col);
    col
}

/// Non-decreasing function of `base` with an occasional violation.
fn monotone_of(rng: &mut impl Rng, base: &[Value]) -> Vec<Value> {
    let k = rng.gen_range(1..20);
    let off = rng.gen_range(0..100);
    let mut col: Vec<Value> = base
        .iter()
        .map(|v| match v.as_i64() {
            Some(x) => Value::Int(x.div_euclid(k) + off),
            None => Value::Null,
        })
        .collect();
    if col.len() > 2 && rng.gen_bool(0.3) {
        let i = rng.gen_range(0..col.len());
        if let Value::Int(x) = col[i] {
            col[i] = Value::Int(x + rng.gen_range(-3..=3));
        }
    }
    col
}

pub struct ValidationCase {
    pub db: Database,
    /// Dependencies to validate.
    pub dependencies: Vec<Dependency>,
}

/// A random table `t` plus a referenced table `s` and a list of
/// candidate dependencies over them.
pub fn validation_case(rng: &mut impl Rng, max_rows: usize) -> ValidationCase {
    let n = row_count(rng, max_rows);
    let chunks = rng.gen_range(1..=50usize);
    let capacity = n.div_ceil(chunks).max(1);
    let a = int_column(rng, n);
    let b = if rng.gen_bool(0.6) { monotone_of(rng, &a) } else { int_column(rng, n) };
    let c = int_column(rng, n);
    let d: Vec<Value> = c
        .iter()
        .map(|v| match v.as_i64() {
            Some(x) => Value::str(&format!("s{:05}", x.rem_euclid(100_000))),
            None => Value::Null,
        })
        .collect();
    let e: Vec<Value> = a
        .iter()
        .map(|v| match v.as_i64() {
            Some(x) => Value::Date(10_000 + x as i32),
            None => Value::Null,
        })
        .collect();
    let mut columns = vec![a, b, c, d, e];
    if rng.gen_bool(0.3) {
        // Cluster the whole table by one column.
        let key = rng.gen_range(0..3);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| columns[key][x].cmp(&columns[key][y]));
        for col in columns.iter_mut() {
            *col = order.iter().map(|&i| col[i].clone()).collect();
        }
    }
    let t = Table::from_columns(
        "t",
        Schema::new([
            ("a", DataType::Int),
            ("b", DataType::Int),
            ("c", DataType::Int),
            ("d", DataType::Utf8),
            ("e", DataType::Date),
        ]),
        columns.clone(),
        capacity,
    )
    .unwrap();

    // Referenced table: either derived from `t.a` (so inclusion often
    // holds), or independent.
    let m = row_count(rng, (max_rows / 4).max(1));
    let x: Vec<Value> = match rng.gen_range(0..4) {
        0 | 1 => {
            let mut vals: Vec<Value> = columns[0].iter().filter(|v| !v.is_null()).cloned().collect();
            vals.sort();
            vals.dedup();
            if rng.gen_bool(0.3) && !vals.is_empty() {
                let i = rng.gen_range(0..vals.len());
                vals.remove(i);
            }
            if rng.gen_bool(0.3) {
                vals.shuffle(rng);
            }
            if vals.is_empty() {
                vals.push(Value::Int(0));
            }
            vals
        }
        2 => {
            let lo = rng.gen_range(-10..10i64);
            (lo..lo + m as i64).map(Value::Int).collect()
        }
        _ => int_column(rng, m),
    };
    let y: Vec<Value> = x
        .iter()
        .map(|v| v.as_i64().map_or(Value::Null, |i| Value::Int(i.rem_euclid(7))))
        .collect();
    let s_capacity = x.len().div_ceil(rng.gen_range(1..=20)).max(1);
    let s = Table::from_columns(
        "s",
        Schema::new([("x", DataType::Int), ("y", DataType::Int)]),
        vec![x, y],
        s_capacity,
    )
    .unwrap();

    let mut deps = Vec::new();
    for col in ["a", "b", "c", "d", "e"] {
        deps.push(Dependency::ucc("t", [col]));
    }
    deps.push(Dependency::ucc("t", ["a", "c"]));
    deps.push(Dependency::ucc("t", ["b", "d"]));
    deps.push(Dependency::ucc("s", ["x"]));
    for (det, dep) in [("a", "b"), ("c", "d"), ("b", "a"), ("e", "c")] {
        deps.push(Dependency::fd("t", [det], [dep]));
    }
    deps.push(Dependency::fd("t", ["a", "b"], ["c"]));
    for (x, y) in [("a", "b"), ("b", "a"), ("a", "e"), ("c", "d"), ("e", "a"), ("a", "c")] {
        deps.push(Dependency::od("t", [x], [y]));
    }
    deps.push(Dependency::od("t", ["a", "b"], ["c"]));
    deps.push(Dependency::od("s", ["x"], ["y"]));
    for col in ["a", "b", "c"] {
        deps.push(Dependency::ind("t", [col], "s", ["x"]));
    }
    deps.push(Dependency::ind("t", ["a", "b"], "s", ["x", "y"]));

    let mut db = Database::new();
    db.add(t);
    db.add(s);
    ValidationCase { db, dependencies: deps }
}

/// Validates every dependency of `case` and returns disagreements with the
/// oracle as readable lines.
pub fn disagreements(case: &ValidationCase, config: ValidationConfig) -> Vec<String> {
    let validator = Validator::new(&case.db, config);
    let store = MetadataStore::new();
    let mut out = Vec::new();
    for dep in &case.dependencies {
        let got = validator.validate(dep, &store).unwrap();
        let want = oracle(&case.db, dep);
        if (got.verdict == Verdict::Valid) != want {
            out.push(format!("{dep}: validator {} via {}, oracle {want}", got.verdict, got.path));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random star schemas and plans
// ---------------------------------------------------------------------------

/// A small star schema with randomized properties: dimension keys are
/// sometimes unique and sequential, sometimes shuffled or duplicated; the
/// fact foreign keys are sometimes clustered, sometimes out of domain.
pub fn random_star(rng: &mut impl Rng) -> Database {
    let capacity = rng.gen_range(3..64);
    let mut db = Database::new();

    // d1: date-like.
    let m1 = rng.gen_range(4..120usize);
    let mut k1: Vec<i64> = (1..=m1 as i64).collect();
    if rng.gen_bool(0.3) {
        k1.shuffle(rng);
    }
    if rng.gen_bool(0.15) {
        k1[0] = k1[m1 - 1];
    }
    let step = rng.gen_range(1..15);
    let noise = if rng.gen_bool(0.25) { 0.05 } else { 0.0 };
    let o1: Vec<Value> = k1
        .iter()
        .map(|&k| {
            if rng.gen_bool(noise) {
                Value::Int(rng.gen_range(0..10))
            } else {
                Value::Int(2000 + k / step)
            }
        })
        .collect();
    let u1: Vec<Value> = k1.iter().map(|&k| Value::Date(10_000 + k as i32 * 2)).collect();
    let g1: Vec<Value> = (0..m1).map(|_| Value::Int(rng.gen_range(0..4))).collect();
    let n1: Vec<Value> = (0..m1)
        .map(|_| if rng.gen_bool(0.2) { Value::Null } else { Value::Int(rng.gen_range(0..5)) })
        .collect();
    db.add(
        Table::from_columns(
            "d1",
            Schema::new([
                ("k1", DataType::Int),
                ("o1", DataType::Int),
                ("u1", DataType::Date),
                ("g1", DataType::Int),
                ("n1", DataType::Int),
            ]),
            vec![k1.iter().map(|&k| Value::Int(k)).collect(), o1, u1, g1, n1],
            capacity,
        )
        .unwrap(),
    );

    // d2: customer-like.
    let m2 = rng.gen_range(3..60usize);
    let mut k2: Vec<i64> = (1..=m2 as i64).map(|k| k * 10).collect();
    k2.shuffle(rng);
    if rng.gen_bool(0.15) {
        k2[1] = k2[0];
    }
    let s2: Vec<Value> = k2
        .iter()
        .map(|k| Value::str(&format!("name{}", if rng.gen_bool(0.05) { 0 } else { *k })))
        .collect();
    let g2: Vec<Value> = (0..m2)
        .map(|_| Value::str(["red", "green", "blue"][rng.gen_range(0..3)]))
        .collect();
    db.add(
        Table::from_columns(
            "d2",
            Schema::new([("k2", DataType::Int), ("s2", DataType::Utf8), ("g2", DataType::Utf8)]),
            vec![k2.iter().map(|&k| Value::Int(k)).collect(), s2, g2],
            capacity,
        )
        .unwrap(),
    );

    // f: fact.
    let n = rng.gen_range(1..600usize);
    let mut f1: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=m1 as i64)).collect();
    if rng.gen_bool(0.6) {
        f1.sort_unstable();
    }
    let mut f1: Vec<Value> = f1.into_iter().map(Value::Int).collect();
    if rng.gen_bool(0.15) {
        f1[n - 1] = Value::Int(m1 as i64 + 5);
    }
    if rng.gen_bool(0.1) {
        f1[0] = Value::Null;
    }
    let f2: Vec<Value> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.05) {
                Value::Null
            } else {
                {
                let hi = m2 as i64 + i64::from(rng.gen_bool(0.05));
                Value::Int(10 * rng.gen_range(1..=hi))
            }
            }
        })
        .collect();
    let m: Vec<Value> = (0..n).map(|_| Value::Int(rng.gen_range(-50..500))).collect();
    let c: Vec<Value> = (0..n).map(|_| Value::Int(rng.gen_range(0..3))).collect();
    db.add(
        Table::from_columns(
            "f",
            Schema::new([
                ("f1", DataType::Int),
                ("f2", DataType::Int),
                ("m", DataType::Int),
                ("c", DataType::Int),
            ]),
            vec![f1, f2, m, c],
            capacity,
        )
        .unwrap(),
    );
    db
}

fn col(t: &str, c: &str) -> ColumnRef {
    ColumnRef::new(t, c)
}

fn pick_value(rng: &mut impl Rng, db: &Database, table: &str, column: &str) -> Option<Value> {
    let t = db.table(table).unwrap();
    let idx = t.column_index(column).unwrap();
    let vals: Vec<&Value> = t.column_values(idx).filter(|v| !v.is_null()).collect();
    if vals.is_empty() || rng.gen_bool(0.05) {
        return None;
    }
    Some(vals[rng.gen_range(0..vals.len())].clone())
}

fn constant_pred(rng: &mut impl Rng, db: &Database, table: &str, column: &str) -> Option<Predicate> {
    let v = pick_value(rng, db, table, column)?;
    let cmp = match rng.gen_range(0..6) {
        0..=2 => Comparison::Compare(CompareOp::Eq, Operand::Constant(v)),
        3 => Comparison::Compare(*[CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge].choose(rng).unwrap(), Operand::Constant(v)),
        4 => {
            let w = pick_value(rng, db, table, column)?;
            let (lo, hi) = if v <= w { (v, w) } else { (w, v) };
            Comparison::Between(Operand::Constant(lo), Operand::Constant(hi))
        }
        _ => Comparison::IsNotNull,
    };
    Some(Predicate::new(col(table, column), cmp))
}

fn d1_side(rng: &mut impl Rng, db: &Database) -> Arc<LogicalPlan> {
    let mut p = LogicalPlan::get_from(db, "d1").unwrap();
    let preds = *[0, 1, 1, 1, 2].choose(rng).unwrap();
    for _ in 0..preds {
        let c = *["k1", "o1", "u1", "g1", "n1", "o1", "u1", "o1", "u1"].choose(rng).unwrap();
        if let Some(pred) = constant_pred(rng, db, "d1", c) {
            p = LogicalPlan::select(p, pred).unwrap();
        }
    }
    p
}

fn d2_side(rng: &mut impl Rng, db: &Database) -> Arc<LogicalPlan> {
    let mut p = LogicalPlan::get_from(db, "d2").unwrap();
    if rng.gen_bool(0.7) {
        let c = *["k2", "s2", "g2"].choose(rng).unwrap();
        if let Some(pred) = constant_pred(rng, db, "d2", c) {
            p = LogicalPlan::select(p, pred).unwrap();
        }
    }
    p
}

fn join(rng: &mut impl Rng, fact: Arc<LogicalPlan>, side: Arc<LogicalPlan>, fk: ColumnRef, key: ColumnRef) -> Arc<LogicalPlan> {
    let kind = match rng.gen_range(0..10) {
        0 => JoinKind::Left,
        1 => JoinKind::Semi,
        _ => JoinKind::Inner,
    };
    if kind == JoinKind::Inner && rng.gen_bool(0.5) {
        LogicalPlan::equi_join(kind, side, fact, vec![key], vec![fk]).unwrap()
    } else {
        LogicalPlan::equi_join(kind, fact, side, vec![fk], vec![key]).unwrap()
    }
}

/// A random plan over a [`random_star`] database: the fact table joined to
/// zero, one, or two filtered dimensions, topped by an aggregate,
/// projection, sort, or union.
pub fn random_plan(rng: &mut impl Rng, db: &Database) -> Arc<LogicalPlan> {
    let mut fact = LogicalPlan::get_from(db, "f").unwrap();
    if rng.gen_bool(0.3) {
        let c = *["m", "c", "f1"].choose(rng).unwrap();
        if let Some(pred) = constant_pred(rng, db, "f", c) {
            fact = LogicalPlan::select(fact, pred).unwrap();
        }
    }
    let mut plan = fact;
    let shape = rng.gen_range(0..6);
    if shape != 0 && shape != 3 {
        let side = d1_side(rng, db);
        plan = join(rng, plan, side, col("f", "f1"), col("d1", "k1"));
    }
    if shape >= 3 {
        let side = d2_side(rng, db);
        plan = join(rng, plan, side, col("f", "f2"), col("d2", "k2"));
    }
    if shape == 0 && rng.gen_bool(0.5) {
        // Theta join against a small dimension slice.
        let side = LogicalPlan::select(
            LogicalPlan::get_from(db, "d1").unwrap(),
            Predicate::new(col("d1", "k1"), Comparison::Compare(CompareOp::Le, Operand::Constant(Value::Int(3)))),
        )
        .unwrap();
        let op = *[CompareOp::Lt, CompareOp::Ge, CompareOp::Eq].choose(rng).unwrap();
        plan = LogicalPlan::join(
            JoinKind::Inner,
            plan,
            side,
            JoinCondition::Theta {
                left: col("f", "c"),
                op,
                right: col("d1", "g1"),
            },
        )
        .unwrap();
    }
    top(rng, db, plan)
}

fn top(rng: &mut impl Rng, db: &Database, plan: Arc<LogicalPlan>) -> Arc<LogicalPlan> {
    let mut cols = plan.output_columns();
    let choice = rng.gen_range(0..10);
    if choice <= 5 && rng.gen_bool(0.4) {
        // Typical star query: dimensions only filter.
        cols.retain(|c| &*c.table == "f");
    }
    match choice {
        0..=5 => {
            // Group by a random subset, preferring dimension attributes.
            let mut group: Vec<ColumnRef> = cols
                .iter()
                .filter(|c| rng.gen_bool(if &*c.table == "f" { 0.4 } else { 0.15 }))
                .cloned()
                .collect();
            group.truncate(4);
            let measures: Vec<&ColumnRef> = cols
                .iter()
                .filter(|c| plan.field(c).is_some_and(|f| f.dtype == DataType::Int))
                .collect();
            let mut aggs = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                let func = *[AggFunc::Sum, AggFunc::Count, AggFunc::Min, AggFunc::Max].choose(rng).unwrap();
                let input = if func == AggFunc::Sum {
                    match measures.choose(rng) {
                        Some(c) => (*c).clone(),
                        None => continue,
                    }
                } else {
                    cols.choose(rng).unwrap().clone()
                };
                let a = AggregateExpr::new(func, input);
                if !aggs.contains(&a) && !group.contains(&a.output_column()) {
                    aggs.push(a);
                }
            }
            LogicalPlan::aggregate(plan, group, aggs).unwrap()
        }
        6 => {
            let mut exprs: Vec<ProjectExpr> = cols
                .iter()
                .filter(|_| rng.gen_bool(0.5))
                .map(|c| ProjectExpr::Column(c.clone()))
                .collect();
            if exprs.is_empty() {
                exprs.push(ProjectExpr::Column(cols[0].clone()));
            }
            if plan.has_column(&col("f", "m")) && rng.gen_bool(0.5) {
                exprs.push(ProjectExpr::Arith {
                    input: col("f", "m"),
                    op: ArithOp::Mul,
                    constant: 3,
                    alias: Arc::from("m3"),
                });
            }
            LogicalPlan::project(plan, exprs).unwrap()
        }
        7 => {
            let keys = vec![SortKey {
                column: cols.choose(rng).unwrap().clone(),
                descending: rng.gen_bool(0.5),
            }];
            LogicalPlan::sort(plan, keys).unwrap()
        }
        8 => {
            // Union of the fact keys with themselves under another filter.
            let key = ProjectExpr::Column(col("f", "f1"));
            let left = LogicalPlan::project(plan.clone(), vec![key.clone()]).ok();
            let other = LogicalPlan::select(
                LogicalPlan::get_from(db, "f").unwrap(),
                Predicate::new(col("f", "c"), Comparison::Compare(CompareOp::Eq, Operand::Constant(Value::Int(1)))),
            )
            .unwrap();
            let right = LogicalPlan::project(other, vec![key]).unwrap();
            match left {
                Some(l) => LogicalPlan::union(l, right).unwrap(),
                None => plan,
            }
        }
        _ => plan,
    }
}

// ---------------------------------------------------------------------------
// Plan-level checks
// ---------------------------------------------------------------------------

pub fn execute(db: &Database, plan: &Arc<LogicalPlan>) -> Rows {
    Executor::new(db, ExecConfig::default()).unwrap().run(plan).unwrap().rows()
}

pub fn sorted(mut rows: Rows) -> Rows {
    rows.sort();
    rows
}

/// Every node of `plan`, subquery plans included.
pub fn nodes(plan: &Arc<LogicalPlan>) -> Vec<Arc<LogicalPlan>> {
    let mut out = vec![plan.clone()];
    if let dqo_core::plan::PlanNode::Select(pred) = plan.node() {
        for sq in pred.subqueries() {
            out.extend(nodes(&sq.input));
        }
    }
    for input in plan.inputs() {
        out.extend(nodes(input));
    }
    out
}

/// Brute-force check of every dependency propagated to `node` against its
/// materialized output; returns the violations.
pub fn propagation_violations(db: &Database, node: &Arc<LogicalPlan>, deps: &PlanDependencies) -> Vec<String> {
    let rows = execute(db, node);
    let fields = node.output_columns();
    let idx = |c: &ColumnRef| fields.iter().position(|f| f == c).expect("propagated column is an output");
    let mut out = Vec::new();
    for u in &deps.uccs {
        let cols: Vec<usize> = u.iter().map(idx).collect();
        if !distinct_tuples(&rows, &cols) {
            out.push(format!("UCC {u:?}"));
        }
    }
    for (det, dep) in &deps.fds {
        let (d, e): (Vec<usize>, Vec<usize>) = (det.iter().map(idx).collect(), dep.iter().map(idx).collect());
        if !fd_holds(&rows, &d, &e) {
            out.push(format!("FD {det:?} -> {dep:?}"));
        }
    }
    for (a, b) in &deps.ods {
        let (ai, bi): (Vec<usize>, Vec<usize>) = (a.iter().map(idx).collect(), b.iter().map(idx).collect());
        if !od_with_nulls(&rows, &ai, &bi) {
            out.push(format!("OD {a:?} -> {b:?}"));
        }
    }
    for i in &deps.inds {
        let r = db.table(&i.from_table).unwrap();
        let a: Vec<usize> = i.from_columns.iter().map(|c| r.column_index(c).unwrap()).collect();
        let x: Vec<usize> = i.to.iter().map(idx).collect();
        if !included(&r.rows(), &a, &rows, &x) {
            out.push(format!("IND {i:?}"));
        }
    }
    out
}

pub fn dependencies(store: &MetadataStore, plan: &Arc<LogicalPlan>) -> Arc<PlanDependencies> {
    Propagator::new(store).dependencies_of(plan)
}

// ---------------------------------------------------------------------------
// Randomized plan suite
// ---------------------------------------------------------------------------

pub struct PlanCase {
    pub db: Database,
    pub plan: Arc<LogicalPlan>,
    /// Dependencies discovered for `plan` on `db`.
    pub store: MetadataStore,
    pub optimized: dqo_core::optimizer::Optimized,
}

pub fn plan_case(seed: u64) -> PlanCase {
    let mut rng = rng(seed);
    let db = random_star(&mut rng);
    let plan = random_plan(&mut rng, &db);
    let engine = dqo_core::engine::Engine::new(db.clone());
    engine.discover(std::slice::from_ref(&plan)).expect("discovery");
    let store = engine.catalog().store().clone();
    let optimized = dqo_core::optimizer::Optimizer::new(&db, &store).optimize(&plan);
    PlanCase {
        db,
        plan,
        store,
        optimized,
    }
}

/// Result multiset mismatch between the original and optimized plan.
pub fn equivalence_failure(case: &PlanCase) -> Option<String> {
    let want = sorted(execute(&case.db, &case.plan));
    let got = sorted(execute(&case.db, &case.optimized.plan));
    (want != got).then(|| {
        format!(
            "{} vs {} rows\noriginal:\n{}optimized:\n{}",
            want.len(),
            got.len(),
            case.plan.display_with(&|_| None),
            case.optimized.plan.display_with(&|_| None)
        )
    })
}

/// Propagated dependencies that fail on some node of the original or
/// optimized plan; also returns the number of dependencies checked.
pub fn propagation_failures(case: &PlanCase) -> (Vec<String>, usize) {
    let mut failures = Vec::new();
    let mut checked = 0;
    for root in [&case.plan, &case.optimized.plan] {
        for node in nodes(root) {
            let deps = dependencies(&case.store, &node);
            checked += deps.uccs.len() + deps.fds.len() + deps.ods.len() + deps.inds.len();
            for v in propagation_violations(&case.db, &node, &deps) {
                failures.push(format!("{v} at\n{}", node.display_with(&|_| None)));
            }
        }
    }
    (failures, checked)
}

/// O-3 predicates whose estimate differs from the semi-join they replaced;
/// also returns the number of rewrites compared.
pub fn estimate_mismatches(case: &PlanCase) -> (Vec<String>, usize) {
    let est = dqo_core::optimizer::Estimator::new(&case.db);
    let mut out = Vec::new();
    for r in &case.optimized.predicate_rewrites {
        let semi = LogicalPlan::equi_join(
            JoinKind::Semi,
            r.fact.clone(),
            r.side.clone(),
            vec![r.fact_key.clone()],
            vec![r.side_key.clone()],
        )
        .expect("semi-join of a rewritten join");
        let (a, b) = (est.estimate(&r.result), est.estimate(&semi));
        if a != b {
            out.push(format!("predicate {a} vs semi-join {b}"));
        }
    }
    (out, case.optimized.predicate_rewrites.len())
}
