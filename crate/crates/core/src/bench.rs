//! Workload latency per optimization mode.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{Engine, EngineError, Mode, Result};
use crate::plan::NamedPlan;

#[derive(Debug, Clone, Serialize)]
pub struct QueryBench {
    pub query: String,
    pub mode: String,
    pub mean_micros: f64,
    /// Rows produced by all operators together.
    pub rows_total: usize,
    pub chunks_scanned: usize,
    pub chunks_pruned_static: usize,
    pub chunks_pruned_dynamic: usize,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchReport {
    pub entries: Vec<QueryBench>,
    pub discovery_micros: f64,
    pub candidates: usize,
    pub valid: usize,
    pub repetitions: usize,
}

impl BenchReport {
    /// Sum of per-query mean latencies for `mode`.
    pub fn total_micros(&self, mode: Mode) -> f64 {
        let name = mode.to_string();
        self.entries.iter().filter(|e| e.mode == name).map(|e| e.mean_micros).sum()
    }

    pub fn entry(&self, query: &str, mode: Mode) -> Option<&QueryBench> {
        let name = mode.to_string();
        self.entries.iter().find(|e| e.query == query && e.mode == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<10} {:>12} {:>10} {:>8} {:>8} {:>8}  rules\n",
            "query", "mode", "mean_us", "rows", "scanned", "static", "dynamic"
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{:<16} {:<10} {:>12.1} {:>10} {:>8} {:>8} {:>8}  {}\n",
                e.query,
                e.mode,
                e.mean_micros,
                e.rows_total,
                e.chunks_scanned,
                e.chunks_pruned_static,
                e.chunks_pruned_dynamic,
                e.rules.join(",")
            ));
        }
        let modes: BTreeMap<String, f64> = self
            .entries
            .iter()
            .fold(BTreeMap::new(), |mut m, e| {
                *m.entry(e.mode.clone()).or_default() += e.mean_micros;
                m
            });
        for (mode, total) in modes {
            out.push_str(&format!("total {mode}: {total:.1} us\n"));
        }
        out.push_str(&format!(
            "discovery: {:.1} us, {} candidates, {} valid\n",
            self.discovery_micros, self.candidates, self.valid
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Runs every query `repetitions` times per mode and checks that all modes
/// return the same rows. Discovered mode first runs discovery from scratch
/// over the workload.
pub fn bench(engine: &mut Engine, workload: &[NamedPlan], modes: &[Mode], repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(EngineError::Usage("repetitions must be at least 1".into()));
    }
    if modes.is_empty() {
        return Err(EngineError::Usage("no modes selected".into()));
    }
    let mut report = BenchReport {
        repetitions,
        ..BenchReport::default()
    };
    if modes.contains(&Mode::Discovered) {
        engine.reset_discovery();
        let plans: Vec<_> = workload.iter().map(|q| q.plan.clone()).collect();
        let discovery = engine.discover(&plans)?;
        report.discovery_micros = discovery.micros;
        report.candidates = discovery.candidates.len();
        report.valid = discovery.valid_count();
    }
    let executor = engine.executor()?;
    for q in workload {
        let mut reference: Option<(Mode, Vec<Vec<crate::storage::Value>>)> = None;
        for &mode in modes {
            let optimized = engine.optimize(&q.plan, mode);
            let graph = executor.schedule(&optimized.plan)?;
            let mut micros = 0.0;
            let mut last = None;
            for _ in 0..repetitions {
                let result = executor.execute(&graph)?;
                micros += result.metrics.micros;
                last = Some(result);
            }
            let result = last.expect("at least one repetition");
            let rows = result.sorted_rows();
            match &reference {
                None => reference = Some((mode, rows)),
                Some((m, r)) if *r != rows => {
                    return Err(EngineError::ResultMismatch {
                        query: q.name.clone(),
                        left: *m,
                        right: mode,
                    })
                }
                Some(_) => {}
            }
            let m = &result.metrics;
            report.entries.push(QueryBench {
                query: q.name.clone(),
                mode: mode.to_string(),
                mean_micros: micros / repetitions as f64,
                rows_total: m.total_rows(),
                chunks_scanned: m.chunks_scanned,
                chunks_pruned_static: m.chunks_pruned_static,
                chunks_pruned_dynamic: m.chunks_pruned_dynamic,
                rules: optimized
                    .fired
                    .iter()
                    .map(|f| f.rule.to_string())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{declared_constraints, generate_star_schema, star_workload, StarConfig};

    #[test]
    fn discovered_mode_moves_fewer_rows() {
        let db = generate_star_schema(&StarConfig {
            chunk_capacity: 8_192,
            ..StarConfig::default()
        })
        .unwrap();
        let mut engine = Engine::new(db).with_constraints(declared_constraints(None));
        let workload = engine.workload(&star_workload(1)).unwrap();
        let report = bench(&mut engine, &workload, &Mode::ALL, 1).unwrap();
        assert_eq!(report.entries.len(), 15);
        let base = report.entry("customer_day", Mode::Baseline).unwrap();
        let disc = report.entry("customer_day", Mode::Discovered).unwrap();
        assert!(disc.rows_total < base.rows_total);
        assert!(disc.chunks_pruned_dynamic > 0);
        assert!(report.to_table().contains("total discovered"));
    }

    #[test]
    fn zero_repetitions_is_usage_error() {
        let mut engine = Engine::new(crate::storage::Database::new());
        assert!(matches!(bench(&mut engine, &[], &[Mode::Baseline], 0), Err(EngineError::Usage(_))));
    }
}
