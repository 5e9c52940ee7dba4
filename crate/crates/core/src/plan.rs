//! Logical query plans and the textual plan format.
//!
//! Plans are immutable trees of [`LogicalPlan`] nodes behind `Arc`. Every
//! node carries its bound output fields. Columns are identified by
//! [`ColumnRef`], the pair of originating base table and column name; columns
//! computed by aggregates or projections carry an empty table.
//!
//! # Text format
//!
//! One node per line, children indented by two spaces below their parent:
//!
//! ```text
//! aggregate group=[c_sk,c_name] aggs=[sum(s_sales_price)]
//!   join inner on=[s_customer=c_sk]
//!     join inner on=[d_sk=s_sold_date]
//!       select d_date = 2000-01-01
//!         get date_dim
//!       get sales
//!     get customer
//! ```
//!
//! | line | meaning |
//! |------|---------|
//! | `get <table>` | base table scan |
//! | `select <col> <op> <operand>` | `op` is one of `= < <= > >=` |
//! | `select <col> between <operand> and <operand>` | inclusive range |
//! | `select <col> is not null` | null filter |
//! | `join inner\|semi\|left on=[l=r,...]` | equi-join, left keys from the first child |
//! | `join inner theta=[l<r]` | theta join with `< <= > >=` |
//! | `aggregate group=[..] aggs=[f(col),..]` | `f` is one of `sum min max count any` |
//! | `project cols=[col,alias=col*3,..]` | pass-through or `+ - *` with an integer |
//! | `sort keys=[col,col desc]` | ordering |
//! | `union` | bag union of two children |
//! | `subquery $N` | scalar subquery block, only as a child of `select` |
//!
//! Constants are typed by the filtered column: integers, `YYYY-MM-DD` dates,
//! and `'quoted'` strings (a doubled quote escapes a quote). A subquery
//! operand is written `$N.value(col)`, `$N.min(col)` or `$N.max(col)` and
//! refers to the `subquery $N` block listed before the select's input.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::storage::{format_date, parse_date, DataType, Database, Schema, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("duplicate output column `{0}`")]
    DuplicateColumn(String),
    #[error("arity mismatch: {0}")]
    ArityMismatch(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("subquery reference: {0}")]
    Subquery(String),
}

pub type Result<T, E = PlanError> = std::result::Result<T, E>;

/// A column by origin: base table and name, or `""` for computed columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: Arc<str>,
    pub name: Arc<str>,
}

impl ColumnRef {
    pub fn new(table: &str, name: &str) -> ColumnRef {
        ColumnRef {
            table: Arc::from(table),
            name: Arc::from(name),
        }
    }

    pub fn derived(name: &str) -> ColumnRef {
        ColumnRef::new("", name)
    }

    pub fn is_derived(&self) -> bool {
        self.table.is_empty()
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Field {
    pub column: ColumnRef,
    pub dtype: DataType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn parse(s: &str) -> Option<CompareOp> {
        Some(match s {
            "=" => CompareOp::Eq,
            "<" => CompareOp::Lt,
            "<=" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" => CompareOp::Ge,
            _ => return None,
        })
    }

    pub fn eval(self, l: &Value, r: &Value) -> bool {
        if l.is_null() || r.is_null() {
            return false;
        }
        match self {
            CompareOp::Eq => l == r,
            CompareOp::Lt => l < r,
            CompareOp::Le => l <= r,
            CompareOp::Gt => l > r,
            CompareOp::Ge => l >= r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubqueryAgg {
    /// The single value of a one-row result.
    Value,
    Min,
    Max,
}

impl SubqueryAgg {
    fn name(self) -> &'static str {
        match self {
            SubqueryAgg::Value => "value",
            SubqueryAgg::Min => "min",
            SubqueryAgg::Max => "max",
        }
    }
}

/// An uncorrelated scalar subquery: `agg(column)` over `input`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScalarSubquery {
    pub input: Arc<LogicalPlan>,
    pub column: ColumnRef,
    pub agg: SubqueryAgg,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Constant(Value),
    Subquery(Arc<ScalarSubquery>),
}

impl Operand {
    pub fn subquery(&self) -> Option<&Arc<ScalarSubquery>> {
        match self {
            Operand::Subquery(s) => Some(s),
            Operand::Constant(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Comparison {
    Compare(CompareOp, Operand),
    Between(Operand, Operand),
    IsNotNull,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub column: ColumnRef,
    pub comparison: Comparison,
}

impl Predicate {
    pub fn new(column: ColumnRef, comparison: Comparison) -> Predicate {
        Predicate { column, comparison }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match &self.comparison {
            Comparison::Compare(_, o) => vec![o],
            Comparison::Between(lo, hi) => vec![lo, hi],
            Comparison::IsNotNull => vec![],
        }
    }

    pub fn subqueries(&self) -> Vec<&Arc<ScalarSubquery>> {
        self.operands().into_iter().filter_map(Operand::subquery).collect()
    }

    pub fn has_subquery(&self) -> bool {
        !self.subqueries().is_empty()
    }

    /// Equality against a constant.
    pub fn is_constant_equality(&self) -> bool {
        matches!(&self.comparison, Comparison::Compare(CompareOp::Eq, Operand::Constant(_)))
    }

    /// Equality or range restriction with constant operands.
    pub fn is_constant_range(&self) -> bool {
        matches!(
            &self.comparison,
            Comparison::Compare(_, Operand::Constant(_)) | Comparison::Between(Operand::Constant(_), Operand::Constant(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JoinKind {
    Inner,
    Semi,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum JoinCondition {
    Equi {
        left: Vec<ColumnRef>,
        right: Vec<ColumnRef>,
    },
    Theta {
        left: ColumnRef,
        op: CompareOp,
        right: ColumnRef,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Sum,
    Min,
    Max,
    Count,
    /// Some value of the group; only introduced by group-by reduction.
    Any,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Count => "count",
            AggFunc::Any => "any",
        }
    }

    fn parse(s: &str) -> Option<AggFunc> {
        Some(match s {
            "sum" => AggFunc::Sum,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            "count" => AggFunc::Count,
            "any" => AggFunc::Any,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AggregateExpr {
    pub func: AggFunc,
    pub input: ColumnRef,
}

impl AggregateExpr {
    pub fn new(func: AggFunc, input: ColumnRef) -> AggregateExpr {
        AggregateExpr { func, input }
    }

    /// `any(x)` reproduces `x` itself; other functions produce a new column.
    pub fn output_column(&self) -> ColumnRef {
        match self.func {
            AggFunc::Any => self.input.clone(),
            f => ColumnRef::derived(&format!("{}({})", f.name(), self.input.name)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl ArithOp {
    fn symbol(self) -> char {
        match self {
            ArithOp::Add => '+',
            ArithOp::Sub => '-',
            ArithOp::Mul => '*',
        }
    }

    pub fn apply(self, v: i64, c: i64) -> i64 {
        match self {
            ArithOp::Add => v.wrapping_add(c),
            ArithOp::Sub => v.wrapping_sub(c),
            ArithOp::Mul => v.wrapping_mul(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProjectExpr {
    Column(ColumnRef),
    Arith {
        input: ColumnRef,
        op: ArithOp,
        constant: i64,
        alias: Arc<str>,
    },
}

impl ProjectExpr {
    pub fn output_column(&self) -> ColumnRef {
        match self {
            ProjectExpr::Column(c) => c.clone(),
            ProjectExpr::Arith { alias, .. } => ColumnRef::derived(alias),
        }
    }

    pub fn input(&self) -> &ColumnRef {
        match self {
            ProjectExpr::Column(c) => c,
            ProjectExpr::Arith { input, .. } => input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SortKey {
    pub column: ColumnRef,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PlanNode {
    Get {
        table: Arc<str>,
    },
    Select(Predicate),
    Join {
        kind: JoinKind,
        condition: JoinCondition,
    },
    Aggregate {
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggregateExpr>,
    },
    Project(Vec<ProjectExpr>),
    Union,
    Sort(Vec<SortKey>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogicalPlan {
    node: PlanNode,
    inputs: Vec<Arc<LogicalPlan>>,
    fields: Vec<Field>,
}

fn lookup<'a>(fields: &'a [Field], column: &ColumnRef) -> Result<&'a Field> {
    fields
        .iter()
        .find(|f| &f.column == column)
        .ok_or_else(|| PlanError::UnknownColumn(column.name.to_string()))
}

fn check_unique(fields: &[Field]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in fields {
        if !seen.insert(&f.column) {
            return Err(PlanError::DuplicateColumn(f.column.name.to_string()));
        }
    }
    Ok(())
}

fn check_operand(column: &Field, operand: &Operand) -> Result<()> {
    match operand {
        Operand::Constant(v) => {
            if v.is_null() || !v.conforms_to(column.dtype) {
                return Err(PlanError::TypeMismatch(format!(
                    "constant {v:?} compared with {} column `{}`",
                    column.dtype, column.column
                )));
            }
        }
        Operand::Subquery(sq) => {
            let field = lookup(sq.input.fields(), &sq.column)?;
            if field.dtype != column.dtype {
                return Err(PlanError::TypeMismatch(format!(
                    "subquery column `{}` ({}) compared with `{}` ({})",
                    sq.column, field.dtype, column.column, column.dtype
                )));
            }
        }
    }
    Ok(())
}

impl LogicalPlan {
    pub fn get(table: &str, schema: &Schema) -> Arc<LogicalPlan> {
        let fields = schema
            .columns
            .iter()
            .map(|c| Field {
                column: ColumnRef::new(table, &c.name),
                dtype: c.dtype,
            })
            .collect();
        Arc::new(LogicalPlan {
            node: PlanNode::Get {
                table: Arc::from(table),
            },
            inputs: vec![],
            fields,
        })
    }

    pub fn get_from(db: &Database, table: &str) -> Result<Arc<LogicalPlan>> {
        let t = db
            .table(table)
            .map_err(|_| PlanError::UnknownTable(table.to_string()))?;
        Ok(LogicalPlan::get(table, t.schema()))
    }

    pub fn select(input: Arc<LogicalPlan>, predicate: Predicate) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Select(predicate), vec![input])
    }

    pub fn join(
        kind: JoinKind,
        left: Arc<LogicalPlan>,
        right: Arc<LogicalPlan>,
        condition: JoinCondition,
    ) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Join { kind, condition }, vec![left, right])
    }

    pub fn equi_join(
        kind: JoinKind,
        left: Arc<LogicalPlan>,
        right: Arc<LogicalPlan>,
        left_keys: Vec<ColumnRef>,
        right_keys: Vec<ColumnRef>,
    ) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::join(
            kind,
            left,
            right,
            JoinCondition::Equi {
                left: left_keys,
                right: right_keys,
            },
        )
    }

    pub fn aggregate(
        input: Arc<LogicalPlan>,
        group_by: Vec<ColumnRef>,
        aggregates: Vec<AggregateExpr>,
    ) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Aggregate { group_by, aggregates }, vec![input])
    }

    pub fn project(input: Arc<LogicalPlan>, exprs: Vec<ProjectExpr>) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Project(exprs), vec![input])
    }

    pub fn union(left: Arc<LogicalPlan>, right: Arc<LogicalPlan>) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Union, vec![left, right])
    }

    pub fn sort(input: Arc<LogicalPlan>, keys: Vec<SortKey>) -> Result<Arc<LogicalPlan>> {
        LogicalPlan::build(PlanNode::Sort(keys), vec![input])
    }

    /// Rebuilds this node over new inputs, re-binding its columns.
    pub fn with_inputs(&self, inputs: Vec<Arc<LogicalPlan>>) -> Result<Arc<LogicalPlan>> {
        if let PlanNode::Get { .. } = self.node {
            return Ok(Arc::new(self.clone()));
        }
        LogicalPlan::build(self.node.clone(), inputs)
    }

    /// Binds `node` over `inputs`, checking every referenced column.
    pub fn build(node: PlanNode, inputs: Vec<Arc<LogicalPlan>>) -> Result<Arc<LogicalPlan>> {
        let arity = match node {
            PlanNode::Get { .. } => 0,
            PlanNode::Join { .. } | PlanNode::Union => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(PlanError::ArityMismatch(format!(
                "node expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        let fields = match &node {
            PlanNode::Get { table } => {
                return Err(PlanError::UnknownTable(format!("{table} (use LogicalPlan::get)")))
            }
            PlanNode::Select(pred) => {
                let input = &inputs[0];
                let field = lookup(input.fields(), &pred.column)?;
                for operand in pred.operands() {
                    check_operand(field, operand)?;
                }
                input.fields.clone()
            }
            PlanNode::Join { kind, condition } => {
                let (l, r) = (&inputs[0], &inputs[1]);
                match condition {
                    JoinCondition::Equi { left, right } => {
                        if left.is_empty() || left.len() != right.len() {
                            return Err(PlanError::ArityMismatch(format!(
                                "join with {} left and {} right keys",
                                left.len(),
                                right.len()
                            )));
                        }
                        for (lk, rk) in left.iter().zip(right) {
                            let (lf, rf) = (lookup(l.fields(), lk)?, lookup(r.fields(), rk)?);
                            if lf.dtype != rf.dtype {
                                return Err(PlanError::TypeMismatch(format!(
                                    "join key `{lk}` ({}) vs `{rk}` ({})",
                                    lf.dtype, rf.dtype
                                )));
                            }
                        }
                    }
                    JoinCondition::Theta { left, right, .. } => {
                        if *kind != JoinKind::Inner {
                            return Err(PlanError::ArityMismatch(
                                "theta conditions are only supported for inner joins".into(),
                            ));
                        }
                        let (lf, rf) = (lookup(l.fields(), left)?, lookup(r.fields(), right)?);
                        if lf.dtype != rf.dtype {
                            return Err(PlanError::TypeMismatch(format!(
                                "theta operands `{left}` and `{right}`"
                            )));
                        }
                    }
                }
                let mut fields = l.fields.clone();
                if *kind != JoinKind::Semi {
                    fields.extend(r.fields.iter().cloned());
                }
                fields
            }
            PlanNode::Aggregate { group_by, aggregates } => {
                let input = &inputs[0];
                let mut fields = Vec::new();
                for g in group_by {
                    fields.push(lookup(input.fields(), g)?.clone());
                }
                for agg in aggregates {
                    let f = lookup(input.fields(), &agg.input)?;
                    let dtype = match agg.func {
                        AggFunc::Count => DataType::Int,
                        AggFunc::Sum if f.dtype != DataType::Int => {
                            return Err(PlanError::TypeMismatch(format!(
                                "sum over {} column `{}`",
                                f.dtype, agg.input
                            )))
                        }
                        _ => f.dtype,
                    };
                    fields.push(Field {
                        column: agg.output_column(),
                        dtype,
                    });
                }
                fields
            }
            PlanNode::Project(exprs) => {
                let input = &inputs[0];
                let mut fields = Vec::new();
                for e in exprs {
                    let f = lookup(input.fields(), e.input())?;
                    if let ProjectExpr::Arith { .. } = e {
                        if !f.dtype.is_integral() {
                            return Err(PlanError::TypeMismatch(format!(
                                "arithmetic on {} column `{}`",
                                f.dtype,
                                e.input()
                            )));
                        }
                    }
                    fields.push(Field {
                        column: e.output_column(),
                        dtype: f.dtype,
                    });
                }
                fields
            }
            PlanNode::Union => {
                let (l, r) = (&inputs[0], &inputs[1]);
                let lt: Vec<_> = l.fields.iter().map(|f| f.dtype).collect();
                let rt: Vec<_> = r.fields.iter().map(|f| f.dtype).collect();
                if lt != rt {
                    return Err(PlanError::ArityMismatch(format!(
                        "union of {lt:?} and {rt:?}"
                    )));
                }
                l.fields.clone()
            }
            PlanNode::Sort(keys) => {
                for k in keys {
                    lookup(inputs[0].fields(), &k.column)?;
                }
                inputs[0].fields.clone()
            }
        };
        check_unique(&fields)?;
        Ok(Arc::new(LogicalPlan {
            node,
            inputs,
            fields,
        }))
    }

    pub fn node(&self) -> &PlanNode {
        &self.node
    }

    pub fn inputs(&self) -> &[Arc<LogicalPlan>] {
        &self.inputs
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn output_columns(&self) -> Vec<ColumnRef> {
        self.fields.iter().map(|f| f.column.clone()).collect()
    }

    pub fn has_column(&self, column: &ColumnRef) -> bool {
        self.fields.iter().any(|f| &f.column == column)
    }

    pub fn field(&self, column: &ColumnRef) -> Option<&Field> {
        self.fields.iter().find(|f| &f.column == column)
    }

    /// Structural hash of the tree, used as plan-cache key.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Base tables read anywhere in the plan, including subqueries.
    pub fn tables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let PlanNode::Get { table } = &p.node {
                out.insert(table.to_string());
            }
        });
        out
    }

    /// Pre-order traversal over all nodes, descending into subqueries.
    pub fn visit(&self, f: &mut dyn FnMut(&LogicalPlan)) {
        f(self);
        if let PlanNode::Select(pred) = &self.node {
            for sq in pred.subqueries() {
                sq.input.visit(f);
            }
        }
        for input in &self.inputs {
            input.visit(f);
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Renders the tree, appending `annotate(node)` after each line.
    pub fn display_with(&self, annotate: &dyn Fn(&LogicalPlan) -> Option<String>) -> String {
        let mut out = String::new();
        self.write_tree(&mut out, 0, annotate);
        out
    }

    fn write_tree(&self, out: &mut String, depth: usize, annotate: &dyn Fn(&LogicalPlan) -> Option<String>) {
        let indent = "  ".repeat(depth);
        let mut subqueries: Vec<Arc<LogicalPlan>> = Vec::new();
        let line = match &self.node {
            PlanNode::Get { table } => format!("get {table}"),
            PlanNode::Select(pred) => {
                let mut ids = |sq: &ScalarSubquery| -> usize {
                    match subqueries.iter().position(|p| *p == sq.input) {
                        Some(i) => i,
                        None => {
                            subqueries.push(sq.input.clone());
                            subqueries.len() - 1
                        }
                    }
                };
                let mut operand = |o: &Operand| match o {
                    Operand::Constant(v) => format_literal(v),
                    Operand::Subquery(sq) => {
                        format!("${}.{}({})", ids(sq), sq.agg.name(), sq.column)
                    }
                };
                match &pred.comparison {
                    Comparison::Compare(op, o) => {
                        format!("select {} {} {}", pred.column, op.symbol(), operand(o))
                    }
                    Comparison::Between(lo, hi) => {
                        let lo = operand(lo);
                        let hi = operand(hi);
                        format!("select {} between {lo} and {hi}", pred.column)
                    }
                    Comparison::IsNotNull => format!("select {} is not null", pred.column),
                }
            }
            PlanNode::Join { kind, condition } => {
                let kind = match kind {
                    JoinKind::Inner => "inner",
                    JoinKind::Semi => "semi",
                    JoinKind::Left => "left",
                };
                match condition {
                    JoinCondition::Equi { left, right } => {
                        let keys: Vec<String> =
                            left.iter().zip(right).map(|(l, r)| format!("{l}={r}")).collect();
                        format!("join {kind} on=[{}]", keys.join(","))
                    }
                    JoinCondition::Theta { left, op, right } => {
                        format!("join {kind} theta=[{left}{}{right}]", op.symbol())
                    }
                }
            }
            PlanNode::Aggregate { group_by, aggregates } => {
                let group: Vec<String> = group_by.iter().map(|c| c.to_string()).collect();
                let aggs: Vec<String> = aggregates
                    .iter()
                    .map(|a| format!("{}({})", a.func.name(), a.input))
                    .collect();
                format!("aggregate group=[{}] aggs=[{}]", group.join(","), aggs.join(","))
            }
            PlanNode::Project(exprs) => {
                let cols: Vec<String> = exprs
                    .iter()
                    .map(|e| match e {
                        ProjectExpr::Column(c) => c.to_string(),
                        ProjectExpr::Arith {
                            input,
                            op,
                            constant,
                            alias,
                        } => format!("{alias}={input}{}{constant}", op.symbol()),
                    })
                    .collect();
                format!("project cols=[{}]", cols.join(","))
            }
            PlanNode::Union => "union".to_string(),
            PlanNode::Sort(keys) => {
                let keys: Vec<String> = keys
                    .iter()
                    .map(|k| {
                        if k.descending {
                            format!("{} desc", k.column)
                        } else {
                            k.column.to_string()
                        }
                    })
                    .collect();
                format!("sort keys=[{}]", keys.join(","))
            }
        };
        out.push_str(&indent);
        out.push_str(&line);
        if let Some(note) = annotate(self) {
            let _ = write!(out, "  -- {note}");
        }
        out.push('\n');
        for (i, sq) in subqueries.iter().enumerate() {
            let _ = writeln!(out, "{indent}  subquery ${i}");
            sq.write_tree(out, depth + 2, annotate);
        }
        for input in &self.inputs {
            input.write_tree(out, depth + 1, annotate);
        }
    }
}

impl fmt::Display for LogicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with(&|_| None))
    }
}

pub fn format_literal(v: &Value) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::Int(i) => i.to_string(),
        Value::Date(d) => format_date(*d),
        Value::Utf8(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct RawNode {
    line: usize,
    text: String,
    children: Vec<RawNode>,
}

fn strip_comment(line: &str) -> &str {
    // `--` outside quotes starts an annotation.
    let mut in_quote = false;
    let bytes = line.as_bytes();
    for i in 0..bytes.len() {
        match bytes[i] {
            b'\'' => in_quote = !in_quote,
            b'-' if !in_quote && bytes.get(i + 1) == Some(&b'-') => return &line[..i],
            _ => {}
        }
    }
    line
}

fn raw_tree(text: &str) -> Result<RawNode> {
    let lines: Vec<(usize, usize, String)> = text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = strip_comment(l).trim_end();
            if l.trim().is_empty() || l.trim_start().starts_with('#') {
                return None;
            }
            let indent = l.len() - l.trim_start().len();
            Some((i + 1, indent, l.trim().to_string()))
        })
        .collect();
    if lines.is_empty() {
        return Err(PlanError::Parse {
            line: 0,
            message: "empty plan".into(),
        });
    }
    let mut pos = 0;
    let root = raw_node(&lines, &mut pos)?;
    if let Some((line, _, _)) = lines.get(pos) {
        return Err(PlanError::Parse {
            line: *line,
            message: "more than one root node".into(),
        });
    }
    Ok(root)
}

fn raw_node(lines: &[(usize, usize, String)], pos: &mut usize) -> Result<RawNode> {
    let (line, indent, text) = lines[*pos].clone();
    *pos += 1;
    let mut children = Vec::new();
    let mut child_indent = None;
    while let Some(&(l, i, _)) = lines.get(*pos) {
        if i <= indent {
            break;
        }
        match child_indent {
            None => child_indent = Some(i),
            Some(ci) if ci != i => {
                return Err(PlanError::Parse {
                    line: l,
                    message: "inconsistent indentation".into(),
                })
            }
            _ => {}
        }
        children.push(raw_node(lines, pos)?);
    }
    Ok(RawNode { line, text, children })
}

/// Splits on whitespace outside single quotes.
fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    for ch in s.chars() {
        if ch == '\'' {
            in_quote = !in_quote;
            cur.push(ch);
        } else if ch.is_whitespace() && !in_quote {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// The comma-separated items of `key=[...]` (commas inside parens kept).
fn bracket_items(text: &str, key: &str) -> Option<Vec<String>> {
    let start = text.find(&format!("{key}=["))? + key.len() + 2;
    let end = start + text[start..].find(']')?;
    let body = &text[start..end];
    if body.trim().is_empty() {
        return Some(vec![]);
    }
    let mut items = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for ch in body.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                items.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    items.push(cur.trim().to_string());
    Some(items)
}

fn resolve(fields: &[Field], name: &str) -> Result<ColumnRef> {
    let (table, col) = match name.split_once('.') {
        Some((t, c)) if !name.contains('(') => (Some(t), c),
        _ => (None, name),
    };
    let mut matches = fields
        .iter()
        .filter(|f| &*f.column.name == col && table.is_none_or(|t| &*f.column.table == t));
    let first = matches
        .next()
        .ok_or_else(|| PlanError::UnknownColumn(name.to_string()))?;
    if matches.next().is_some() {
        return Err(PlanError::AmbiguousColumn(name.to_string()));
    }
    Ok(first.column.clone())
}

fn parse_literal(text: &str, dtype: DataType) -> Option<Value> {
    match dtype {
        DataType::Int => text.parse().ok().map(Value::Int),
        DataType::Date => parse_date(text).map(Value::Date),
        DataType::Utf8 => {
            let inner = text.strip_prefix('\'')?.strip_suffix('\'')?;
            Some(Value::str(&inner.replace("''", "'")))
        }
    }
}

struct Parser<'a> {
    db: &'a Database,
}

impl Parser<'_> {
    fn err(line: usize, message: impl Into<String>) -> PlanError {
        PlanError::Parse {
            line,
            message: message.into(),
        }
    }

    fn node(&self, raw: &RawNode) -> Result<Arc<LogicalPlan>> {
        let tokens = tokenize(&raw.text);
        let keyword = tokens[0].as_str();
        let line = raw.line;
        let expect_children = |n: usize| -> Result<()> {
            if raw.children.len() != n {
                return Err(Parser::err(
                    line,
                    format!("`{keyword}` expects {n} children, found {}", raw.children.len()),
                ));
            }
            Ok(())
        };
        match keyword {
            "get" => {
                expect_children(0)?;
                let table = tokens.get(1).ok_or_else(|| Parser::err(line, "missing table"))?;
                LogicalPlan::get_from(self.db, table)
            }
            "select" => self.select(raw, &tokens),
            "join" => {
                expect_children(2)?;
                let left = self.node(&raw.children[0])?;
                let right = self.node(&raw.children[1])?;
                let kind = match tokens.get(1).map(String::as_str) {
                    Some("inner") => JoinKind::Inner,
                    Some("semi") => JoinKind::Semi,
                    Some("left") => JoinKind::Left,
                    other => return Err(Parser::err(line, format!("unknown join kind {other:?}"))),
                };
                let condition = if let Some(keys) = bracket_items(&raw.text, "on") {
                    let mut lk = Vec::new();
                    let mut rk = Vec::new();
                    for item in keys {
                        let (l, r) = item
                            .split_once('=')
                            .ok_or_else(|| Parser::err(line, format!("bad join key `{item}`")))?;
                        lk.push(resolve(left.fields(), l.trim())?);
                        rk.push(resolve(right.fields(), r.trim())?);
                    }
                    JoinCondition::Equi { left: lk, right: rk }
                } else if let Some(items) = bracket_items(&raw.text, "theta") {
                    let [item] = items.as_slice() else {
                        return Err(Parser::err(line, "theta expects one condition"));
                    };
                    let split = item
                        .find(['<', '>', '='])
                        .ok_or_else(|| Parser::err(line, "theta condition lacks operator"))?;
                    let op_len = if item[split + 1..].starts_with('=') { 2 } else { 1 };
                    let op = CompareOp::parse(&item[split..split + op_len])
                        .ok_or_else(|| Parser::err(line, "bad theta operator"))?;
                    JoinCondition::Theta {
                        left: resolve(left.fields(), item[..split].trim())?,
                        op,
                        right: resolve(right.fields(), item[split + op_len..].trim())?,
                    }
                } else {
                    return Err(Parser::err(line, "join needs on=[..] or theta=[..]"));
                };
                LogicalPlan::join(kind, left, right, condition)
            }
            "aggregate" => {
                expect_children(1)?;
                let input = self.node(&raw.children[0])?;
                let group = bracket_items(&raw.text, "group")
                    .ok_or_else(|| Parser::err(line, "aggregate needs group=[..]"))?;
                let aggs = bracket_items(&raw.text, "aggs").unwrap_or_default();
                let group_by = group
                    .iter()
                    .map(|g| resolve(input.fields(), g))
                    .collect::<Result<Vec<_>>>()?;
                let aggregates = aggs
                    .iter()
                    .map(|a| {
                        let (func, rest) = a
                            .split_once('(')
                            .ok_or_else(|| Parser::err(line, format!("bad aggregate `{a}`")))?;
                        let func = AggFunc::parse(func.trim())
                            .ok_or_else(|| Parser::err(line, format!("unknown aggregate `{func}`")))?;
                        let col = rest
                            .strip_suffix(')')
                            .ok_or_else(|| Parser::err(line, format!("bad aggregate `{a}`")))?;
                        Ok(AggregateExpr::new(func, resolve(input.fields(), col.trim())?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                LogicalPlan::aggregate(input, group_by, aggregates)
            }
            "project" => {
                expect_children(1)?;
                let input = self.node(&raw.children[0])?;
                let items = bracket_items(&raw.text, "cols")
                    .ok_or_else(|| Parser::err(line, "project needs cols=[..]"))?;
                let exprs = items
                    .iter()
                    .map(|item| match item.split_once('=') {
                        None => Ok(ProjectExpr::Column(resolve(input.fields(), item)?)),
                        Some((alias, expr)) => {
                            let split = expr
                                .find(['+', '-', '*'])
                                .ok_or_else(|| Parser::err(line, format!("bad expression `{expr}`")))?;
                            let op = match &expr[split..split + 1] {
                                "+" => ArithOp::Add,
                                "-" => ArithOp::Sub,
                                _ => ArithOp::Mul,
                            };
                            let constant = expr[split + 1..]
                                .trim()
                                .parse()
                                .map_err(|_| Parser::err(line, format!("bad constant in `{expr}`")))?;
                            Ok(ProjectExpr::Arith {
                                input: resolve(input.fields(), expr[..split].trim())?,
                                op,
                                constant,
                                alias: Arc::from(alias.trim()),
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                LogicalPlan::project(input, exprs)
            }
            "sort" => {
                expect_children(1)?;
                let input = self.node(&raw.children[0])?;
                let items = bracket_items(&raw.text, "keys")
                    .ok_or_else(|| Parser::err(line, "sort needs keys=[..]"))?;
                let keys = items
                    .iter()
                    .map(|item| {
                        let mut parts = item.split_whitespace();
                        let col = parts.next().unwrap_or("");
                        let descending = match parts.next() {
                            None | Some("asc") => false,
                            Some("desc") => true,
                            Some(o) => return Err(Parser::err(line, format!("bad sort order `{o}`"))),
                        };
                        Ok(SortKey {
                            column: resolve(input.fields(), col)?,
                            descending,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                LogicalPlan::sort(input, keys)
            }
            "union" => {
                expect_children(2)?;
                LogicalPlan::union(self.node(&raw.children[0])?, self.node(&raw.children[1])?)
            }
            "subquery" => Err(Parser::err(line, "subquery block outside a select")),
            other => Err(Parser::err(line, format!("unknown node `{other}`"))),
        }
    }

    fn select(&self, raw: &RawNode, tokens: &[String]) -> Result<Arc<LogicalPlan>> {
        let line = raw.line;
        let Some((input_raw, blocks)) = raw.children.split_last() else {
            return Err(Parser::err(line, "select needs an input"));
        };
        let mut subqueries: HashMap<String, Arc<LogicalPlan>> = HashMap::new();
        for block in blocks {
            let toks = tokenize(&block.text);
            match (toks.first().map(String::as_str), toks.get(1), block.children.as_slice()) {
                (Some("subquery"), Some(id), [child]) if id.starts_with('$') => {
                    if subqueries.insert(id.clone(), self.node(child)?).is_some() {
                        return Err(PlanError::Subquery(format!("{id} defined twice")));
                    }
                }
                _ => return Err(Parser::err(block.line, "expected `subquery $N` with one child")),
            }
        }
        let input = self.node(input_raw)?;
        let column_name = tokens.get(1).ok_or_else(|| Parser::err(line, "missing column"))?;
        let column = resolve(input.fields(), column_name)?;
        let dtype = input.field(&column).expect("resolved").dtype;
        let mut used = BTreeSet::new();
        let mut operand = |text: &str| -> Result<Operand> {
            if let Some(rest) = text.strip_prefix('$') {
                let (id, call) = rest
                    .split_once('.')
                    .ok_or_else(|| Parser::err(line, format!("bad subquery operand `{text}`")))?;
                let id = format!("${id}");
                let plan = subqueries
                    .get(&id)
                    .ok_or_else(|| PlanError::Subquery(format!("{id} is not defined")))?;
                used.insert(id);
                let (agg, col) = call
                    .split_once('(')
                    .and_then(|(a, c)| Some((a, c.strip_suffix(')')?)))
                    .ok_or_else(|| Parser::err(line, format!("bad subquery operand `{text}`")))?;
                let agg = match agg {
                    "value" => SubqueryAgg::Value,
                    "min" => SubqueryAgg::Min,
                    "max" => SubqueryAgg::Max,
                    _ => return Err(Parser::err(line, format!("unknown subquery aggregate `{agg}`"))),
                };
                Ok(Operand::Subquery(Arc::new(ScalarSubquery {
                    column: resolve(plan.fields(), col)?,
                    input: plan.clone(),
                    agg,
                })))
            } else {
                parse_literal(text, dtype).map(Operand::Constant).ok_or_else(|| {
                    PlanError::TypeMismatch(format!("`{text}` is not a {dtype} literal"))
                })
            }
        };
        let rest: Vec<&str> = tokens[2..].iter().map(String::as_str).collect();
        let comparison = match rest.as_slice() {
            ["is", "not", "null"] => Comparison::IsNotNull,
            ["between", lo, "and", hi] => Comparison::Between(operand(lo)?, operand(hi)?),
            [op, value] => {
                let op = CompareOp::parse(op)
                    .ok_or_else(|| Parser::err(line, format!("unknown comparator `{op}`")))?;
                Comparison::Compare(op, operand(value)?)
            }
            _ => return Err(Parser::err(line, format!("cannot parse predicate `{}`", raw.text))),
        };
        if used.len() != subqueries.len() {
            return Err(PlanError::Subquery("unused subquery block".into()));
        }
        LogicalPlan::select(input, Predicate::new(column, comparison))
    }
}

/// Parses and binds a plan in the text format against `db`.
pub fn build(text: &str, db: &Database) -> Result<Arc<LogicalPlan>> {
    let raw = raw_tree(text)?;
    Parser { db }.node(&raw)
}

/// A named plan of a workload file.
#[derive(Debug, Clone)]
pub struct NamedPlan {
    pub name: String,
    pub plan: Arc<LogicalPlan>,
}

/// Parses a workload file: plans separated by `query <name>` header lines.
pub fn build_workload(text: &str, db: &Database) -> Result<Vec<NamedPlan>> {
    let mut out = Vec::new();
    let mut current: Option<(String, usize, String)> = None;
    let flush = |cur: Option<(String, usize, String)>, out: &mut Vec<NamedPlan>| -> Result<()> {
        if let Some((name, start, body)) = cur {
            let plan = build(&body, db).map_err(|e| match e {
                PlanError::Parse { line, message } => PlanError::Parse {
                    line: line + start,
                    message: format!("query {name}: {message}"),
                },
                other => other,
            })?;
            out.push(NamedPlan { name, plan });
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(name) = line.trim().strip_prefix("query ") {
            flush(current.take(), &mut out)?;
            current = Some((name.trim().to_string(), i + 1, String::new()));
        } else if let Some((_, _, body)) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        } else if !line.trim().is_empty() && !line.trim_start().starts_with('#') {
            return Err(PlanError::Parse {
                line: i + 1,
                message: "expected `query <name>`".into(),
            });
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

pub fn format_workload(plans: &[NamedPlan]) -> String {
    plans
        .iter()
        .map(|p| format!("query {}\n{}\n", p.name, p.plan))
        .collect()
}
