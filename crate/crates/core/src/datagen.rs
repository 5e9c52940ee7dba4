//! Synthetic star schema: a `sales` fact table clustered by date, a
//! `date_dim` with a sequential key, and a `customer` table whose key is
//! unique but shuffled.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Dependency, MetadataStore};
use crate::storage::{DataType, Database, Schema, StorageError, Table, Value};

/// A targeted violation for negative tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// One `s_sold_date` outside the domain of `d_sk`.
    Ind,
    /// The dates of the first and last `date_dim` rows swapped, so `d_sk`
    /// no longer orders `d_date`, `d_year`, or `d_moy`.
    Od,
    /// One duplicated `c_sk`.
    Ucc,
}

impl FromStr for Violation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ind" => Ok(Violation::Ind),
            "od" => Ok(Violation::Od),
            "ucc" => Ok(Violation::Ucc),
            other => Err(format!("unknown violation `{other}` (expected ind, od, or ucc)")),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::Ind => "ind",
            Violation::Od => "od",
            Violation::Ucc => "ucc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarConfig {
    pub scale: usize,
    pub seed: u64,
    pub violate: Option<Violation>,
    pub chunk_capacity: usize,
}

impl Default for StarConfig {
    fn default() -> Self {
        StarConfig {
            scale: 1,
            seed: 7,
            violate: None,
            chunk_capacity: crate::storage::DEFAULT_CHUNK_CAPACITY,
        }
    }
}

pub const DAYS_PER_SCALE: usize = 365;
pub const CUSTOMERS_PER_SCALE: usize = 1_000;
pub const SALES_PER_SCALE: usize = 100_000;
const REGIONS: [&str; 5] = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "OCEANIA"];

fn first_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

fn epoch_days(d: NaiveDate) -> i32 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")).num_days() as i32
}

pub fn generate_star_schema(config: &StarConfig) -> Result<Database, StorageError> {
    let scale = config.scale.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let days = scale * DAYS_PER_SCALE;
    let customers = scale * CUSTOMERS_PER_SCALE;
    let sales = scale * SALES_PER_SCALE;
    let capacity = config.chunk_capacity;

    let (mut d_sk, mut d_date, mut d_year, mut d_moy) = (vec![], vec![], vec![], vec![]);
    for i in 0..days {
        let date = first_day() + Duration::days(i as i64);
        d_sk.push(Value::Int(i as i64 + 1));
        d_date.push(Value::Date(epoch_days(date)));
        d_year.push(Value::Int(date.year() as i64));
        d_moy.push(Value::Int(date.month() as i64));
    }
    if config.violate == Some(Violation::Od) {
        let last = d_year.len() - 1;
        d_date.swap(0, last);
        d_year.swap(0, last);
        d_moy.swap(0, last);
        if d_year[0] == d_year[last] {
            d_year[0] = Value::Int(date_year_bound(days) + 1);
        }
    }
    let date_dim = Table::from_columns(
        "date_dim",
        Schema::new([
            ("d_sk", DataType::Int),
            ("d_date", DataType::Date),
            ("d_year", DataType::Int),
            ("d_moy", DataType::Int),
        ]),
        vec![d_sk, d_date, d_year, d_moy],
        capacity,
    )?;

    let mut keys: Vec<i64> = (1..=customers as i64).collect();
    keys.shuffle(&mut rng);
    let mut c_sk: Vec<Value> = keys.iter().map(|&k| Value::Int(k)).collect();
    let c_name: Vec<Value> = keys.iter().map(|k| Value::str(&format!("Customer#{k:09}"))).collect();
    let c_region: Vec<Value> = (0..customers)
        .map(|_| Value::str(REGIONS[rng.gen_range(0..REGIONS.len())]))
        .collect();
    if config.violate == Some(Violation::Ucc) && customers > 1 {
        c_sk[customers - 1] = c_sk[0].clone();
    }
    let customer = Table::from_columns(
        "customer",
        Schema::new([
            ("c_sk", DataType::Int),
            ("c_name", DataType::Utf8),
            ("c_region", DataType::Utf8),
        ]),
        vec![c_sk, c_name, c_region],
        capacity,
    )?;

    let mut dates: Vec<i64> = (0..sales).map(|_| rng.gen_range(1..=days as i64)).collect();
    dates.sort_unstable();
    if config.violate == Some(Violation::Ind) {
        *dates.last_mut().expect("sales rows") = days as i64 + 1;
    }
    let s_sold_date = dates.into_iter().map(Value::Int).collect();
    let s_customer = (0..sales)
        .map(|_| Value::Int(rng.gen_range(1..=customers as i64)))
        .collect();
    let s_quantity = (0..sales).map(|_| Value::Int(rng.gen_range(1..=100))).collect();
    let s_sales_price = (0..sales).map(|_| Value::Int(rng.gen_range(1..=1_000))).collect();
    let sales = Table::from_columns(
        "sales",
        Schema::new([
            ("s_sold_date", DataType::Int),
            ("s_customer", DataType::Int),
            ("s_quantity", DataType::Int),
            ("s_sales_price", DataType::Int),
        ]),
        vec![s_sold_date, s_customer, s_quantity, s_sales_price],
        capacity,
    )?;

    let mut db = Database::new();
    db.add(date_dim);
    db.add(customer);
    db.add(sales);
    Ok(db)
}

fn date_year_bound(days: usize) -> i64 {
    (first_day() + Duration::days(days as i64 - 1)).year() as i64
}

/// Primary and foreign keys that hold on the generated data.
pub fn declared_constraints(violate: Option<Violation>) -> MetadataStore {
    let mut store = MetadataStore::new();
    let mut declare = |d: Dependency| store.declare(d).expect("well-formed constraint");
    declare(Dependency::ucc("date_dim", ["d_sk"]));
    if violate != Some(Violation::Ucc) {
        declare(Dependency::ucc("customer", ["c_sk"]));
        declare(Dependency::ind("sales", ["s_customer"], "customer", ["c_sk"]));
    }
    if violate != Some(Violation::Ind) {
        declare(Dependency::ind("sales", ["s_sold_date"], "date_dim", ["d_sk"]));
    }
    store
}

/// The example workload over the star schema, with filter constants that
/// exist at `scale`.
pub fn star_workload(scale: usize) -> String {
    let scale = scale.max(1);
    let year = 2000 + (scale as i64 - 1) / 2;
    let day = format!("{year}-03-15");
    format!(
        "\
# Revenue per customer on one day.
query customer_day
aggregate group=[c_sk,c_name] aggs=[sum(s_sales_price)]
  join inner on=[s_customer=c_sk]
    join inner on=[d_sk=s_sold_date]
      select d_date = {day}
        get date_dim
      get sales
    get customer

# December quantities per customer.
query december
aggregate group=[s_customer] aggs=[sum(s_quantity)]
  join inner on=[d_sk=s_sold_date]
    select d_moy = 12
      get date_dim
    get sales

# Revenue of one year.
query year_total
aggregate group=[] aggs=[sum(s_sales_price),count(s_quantity)]
  join inner on=[d_sk=s_sold_date]
    select d_year = {year}
      get date_dim
    get sales

# Daily revenue from one region.
query region_daily
aggregate group=[s_sold_date] aggs=[sum(s_sales_price)]
  join inner on=[s_customer=c_sk]
    get sales
    select c_region = 'ASIA'
      get customer

# Quantity per customer and region in one year.
query customer_year
aggregate group=[c_sk,c_name,c_region] aggs=[sum(s_quantity)]
  join inner on=[s_customer=c_sk]
    join inner on=[d_sk=s_sold_date]
      select d_year = {year}
        get date_dim
      get sales
    get customer
"
    )
}

/// Writes `<table>.csv` and `<table>.schema` for every table, plus
/// `constraints.txt` and `workload.txt`.
pub fn write_star_schema(config: &StarConfig, dir: &Path) -> Result<Database, StorageError> {
    let db = generate_star_schema(config)?;
    std::fs::create_dir_all(dir).map_err(|source| StorageError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for table in db.tables() {
        table.write_csv(&dir.join(format!("{}.csv", table.name())))?;
        write(&dir.join(format!("{}.schema", table.name())), &table.schema().to_text())?;
    }
    write(&dir.join("constraints.txt"), &declared_constraints(config.violate).to_text())?;
    write(&dir.join("workload.txt"), &star_workload(config.scale))?;
    Ok(db)
}

fn write(path: &Path, text: &str) -> Result<(), StorageError> {
    std::fs::write(path, text).map_err(|source| StorageError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::build_workload;

    fn small(violate: Option<Violation>) -> Database {
        generate_star_schema(&StarConfig {
            violate,
            ..StarConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sizes_and_keys() {
        let db = small(None);
        assert_eq!(db.table("date_dim").unwrap().row_count(), 365);
        assert_eq!(db.table("customer").unwrap().row_count(), 1_000);
        let sales = db.table("sales").unwrap();
        assert_eq!(sales.row_count(), 100_000);
        let dates: Vec<&Value> = sales.column_values(0).collect();
        assert!(dates.windows(2).all(|w| w[0] <= w[1]));
        assert!(dates.iter().all(|v| (1..=365).contains(&v.as_i64().unwrap())));
    }

    #[test]
    fn violations() {
        let db = small(Some(Violation::Ind));
        let sales = db.table("sales").unwrap();
        let outside = sales.column_values(0).filter(|v| v.as_i64().unwrap() > 365).count();
        assert_eq!(outside, 1);
        let db = small(Some(Violation::Od));
        let dates: Vec<&Value> = db.table("date_dim").unwrap().column_values(1).collect();
        assert!(dates[0] > dates[364]);
        let db = small(Some(Violation::Ucc));
        let customer = db.table("customer").unwrap();
        let mut keys: Vec<&Value> = customer.column_values(0).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 999);
    }

    #[test]
    fn deterministic() {
        let a = small(None);
        let b = small(None);
        for name in ["date_dim", "customer", "sales"] {
            assert_eq!(a.table(name).unwrap().rows(), b.table(name).unwrap().rows());
        }
    }

    #[test]
    fn workload_builds() {
        let db = small(None);
        let plans = build_workload(&star_workload(1), &db).unwrap();
        assert_eq!(plans.len(), 5);
    }
}
