//! Run reports and their CSV, JSON and human-readable renderings.
//!
//! CSV schema (one row per level plus a `summary` row per run):
//!
//! ```text
//! schema_version,run,system,level,demand_accesses,demand_hits,demand_misses,buffer_hits,
//! prefetch_issued,prefetch_filled,useful_prefetch_hits,prefetch_dropped,writebacks,
//! summed_hit_latency,summed_demand_miss_latency,miss_ratio,mpki,avg_hit_latency,
//! avg_miss_latency,total_instructions,records,amat,dram_reads,dram_writes,nvram_reads,
//! nvram_writes,coverage,accuracy
//! ```
//!
//! Level rows leave the run-wide columns empty and the summary row leaves the per-level
//! columns empty. `coverage`/`accuracy` are filled only in comparison output, with `n/a`
//! when the metric is undefined. Stream-buffer hits count as avoided L1 misses.
//!
//! No IPC or speedup is reported: the simulator replays memory accesses in order without
//! a core model, so only memory-side metrics are meaningful.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::TraceSource;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyConfig, PrefetchSystem};
use crate::metrics::{
    coverage_accuracy, Counters, CoverageAccuracy, DerivedMetrics, Level, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Human,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "human" => Ok(ReportFormat::Human),
            other => Err(Error::Validation(format!(
                "unknown report format {other:?} (expected csv, json or human)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub system: PrefetchSystem,
    pub hierarchy: HierarchyConfig,
    /// Trace the run consumed, when it came from a file or generator spec.
    pub trace: Option<TraceSource>,
    pub counters: Counters,
    pub derived: DerivedMetrics,
}

impl RunReport {
    pub fn new(hierarchy: HierarchyConfig, trace: Option<TraceSource>, counters: Counters) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: hierarchy.prefetch_system,
            derived: counters.derive(),
            hierarchy,
            trace,
            counters,
        }
    }

    /// Recomputes every derived value and checks it against the stored one.
    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Integrity(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.system != self.hierarchy.prefetch_system {
            return Err(Error::Integrity(
                "system disagrees with embedded config".into(),
            ));
        }
        for level in Level::ALL {
            self.counters.level(level).check(level)?;
        }
        let c = &self.counters;
        if c.l2.demand_accesses != c.l1d.demand_misses + c.l1i.demand_misses {
            return Err(Error::Integrity("L2 accesses != L1 misses".into()));
        }
        if c.hmc.demand_accesses != c.l2.demand_misses {
            return Err(Error::Integrity("HMC accesses != L2 misses".into()));
        }
        let fresh = c.derive();
        if fresh != self.derived {
            return Err(Error::Integrity(format!(
                "stored derived metrics do not match counters (amat {} vs {})",
                self.derived.amat, fresh.amat
            )));
        }
        Ok(())
    }

    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        self.check()?;
        match format {
            ReportFormat::Json => to_json(self),
            ReportFormat::Csv => {
                let mut w = csv_writer();
                write_run_rows(&mut w, "run", self, None)?;
                finish_csv(w)
            }
            ReportFormat::Human => Ok(human_run(self)),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Integrity(format!("json encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub const CSV_HEADER: [&str; 28] = [
    "schema_version",
    "run",
    "system",
    "level",
    "demand_accesses",
    "demand_hits",
    "demand_misses",
    "buffer_hits",
    "prefetch_issued",
    "prefetch_filled",
    "useful_prefetch_hits",
    "prefetch_dropped",
    "writebacks",
    "summed_hit_latency",
    "summed_demand_miss_latency",
    "miss_ratio",
    "mpki",
    "avg_hit_latency",
    "avg_miss_latency",
    "total_instructions",
    "records",
    "amat",
    "dram_reads",
    "dram_writes",
    "nvram_reads",
    "nvram_writes",
    "coverage",
    "accuracy",
];

type CsvWriter = csv::Writer<Vec<u8>>;

fn csv_writer() -> CsvWriter {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    w
}

fn finish_csv(w: CsvWriter) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Integrity(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Integrity(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

fn write_run_rows(
    w: &mut CsvWriter,
    run: &str,
    report: &RunReport,
    paired: Option<&BTreeMap<Level, CoverageAccuracy>>,
) -> Result<()> {
    let c = &report.counters;
    let d = &report.derived;
    let system = report.system.name();
    let err = |e: csv::Error| Error::Integrity(format!("csv encoding: {e}"));
    for level in Level::ALL {
        let s = c.level(level);
        let m = match level {
            Level::L1d => &d.l1d,
            Level::L1i => &d.l1i,
            Level::L2 => &d.l2,
            Level::Hmc => &d.hmc,
        };
        let (cov, acc) = match paired.and_then(|p| p.get(&level)) {
            Some(ca) => (opt(ca.coverage), opt(ca.accuracy)),
            None => (String::new(), String::new()),
        };
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            run.to_string(),
            system.to_string(),
            level.name().to_string(),
        ];
        row.extend(
            [
                s.demand_accesses,
                s.demand_hits,
                s.demand_misses,
                s.buffer_hits,
                s.prefetch_issued,
                s.prefetch_filled,
                s.useful_prefetch_hits,
                s.prefetch_dropped,
                s.writebacks,
                s.summed_hit_latency,
                s.summed_demand_miss_latency,
            ]
            .map(|v| v.to_string()),
        );
        row.extend(
            [m.miss_ratio, m.mpki, m.avg_hit_latency, m.avg_miss_latency].map(|v| v.to_string()),
        );
        row.extend(std::iter::repeat_n(String::new(), 7));
        row.push(cov);
        row.push(acc);
        w.write_record(&row).map_err(err)?;
    }
    let mut row = vec![
        SCHEMA_VERSION.to_string(),
        run.to_string(),
        system.to_string(),
        "summary".to_string(),
    ];
    row.extend(std::iter::repeat_n(String::new(), 15));
    row.push(c.total_instructions.to_string());
    row.push(c.records.to_string());
    row.push(d.amat.to_string());
    row.extend(
        [
            c.media.dram_reads,
            c.media.dram_writes,
            c.media.nvram_reads,
            c.media.nvram_writes,
        ]
        .map(|v| v.to_string()),
    );
    row.push(String::new());
    row.push(String::new());
    w.write_record(&row).map_err(err)?;
    Ok(())
}

fn human_run(r: &RunReport) -> String {
    let c = &r.counters;
    let d = &r.derived;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "system {}  records {}  instructions {}  AMAT {:.3} cycles",
        r.system.name(),
        c.records,
        c.total_instructions,
        d.amat
    );
    let _ = writeln!(
        s,
        "{:<6}{:>12}{:>12}{:>10}{:>10}{:>12}{:>12}{:>12}",
        "level", "accesses", "misses", "ratio", "MPKI", "miss lat", "pf issued", "buf hits"
    );
    for level in Level::ALL {
        let st = c.level(level);
        let m = match level {
            Level::L1d => &d.l1d,
            Level::L1i => &d.l1i,
            Level::L2 => &d.l2,
            Level::Hmc => &d.hmc,
        };
        let _ = writeln!(
            s,
            "{:<6}{:>12}{:>12}{:>10.4}{:>10.3}{:>12.2}{:>12}{:>12}",
            level.name(),
            st.demand_accesses,
            st.demand_misses,
            m.miss_ratio,
            m.mpki,
            m.avg_miss_latency,
            st.prefetch_issued,
            st.buffer_hits
        );
    }
    let _ = writeln!(
        s,
        "media  DRAM r/w {}/{}  NVRAM r/w {}/{}",
        c.media.dram_reads, c.media.dram_writes, c.media.nvram_reads, c.media.nvram_writes
    );
    s
}

/// Baseline and prefetching runs of the same trace with per-level coverage and accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub baseline: RunReport,
    pub with_prefetch: RunReport,
    pub levels: BTreeMap<Level, CoverageAccuracy>,
}

impl ComparisonReport {
    pub fn new(baseline: RunReport, with_prefetch: RunReport) -> Self {
        let levels = Level::ALL
            .into_iter()
            .map(|level| {
                let without = baseline.counters.level(level).demand_misses;
                let with = with_prefetch.counters.level(level);
                (
                    level,
                    coverage_accuracy(without, with.demand_misses, with.prefetch_issued),
                )
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            baseline,
            with_prefetch,
            levels,
        }
    }

    pub fn level(&self, level: Level) -> &CoverageAccuracy {
        &self.levels[&level]
    }

    pub fn check(&self) -> Result<()> {
        self.baseline.check()?;
        self.with_prefetch.check()?;
        if self.baseline.trace != self.with_prefetch.trace
            || self.baseline.counters.records != self.with_prefetch.counters.records
        {
            return Err(Error::Integrity("paired runs used different traces".into()));
        }
        let fresh = Self::new(self.baseline.clone(), self.with_prefetch.clone());
        if fresh.levels != self.levels {
            return Err(Error::Integrity(
                "stored coverage/accuracy do not match counters".into(),
            ));
        }
        Ok(())
    }

    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        self.check()?;
        match format {
            ReportFormat::Json => to_json(self),
            ReportFormat::Csv => {
                let mut w = csv_writer();
                write_run_rows(&mut w, "baseline", &self.baseline, None)?;
                write_run_rows(
                    &mut w,
                    "with_prefetch",
                    &self.with_prefetch,
                    Some(&self.levels),
                )?;
                finish_csv(w)
            }
            ReportFormat::Human => {
                let mut s = String::from("== baseline\n");
                s.push_str(&human_run(&self.baseline));
                s.push_str("== with prefetch\n");
                s.push_str(&human_run(&self.with_prefetch));
                s.push_str(
                    "level  coverage  accuracy  (stream-buffer hits count as avoided L1 misses)\n",
                );
                for (level, ca) in &self.levels {
                    let _ = writeln!(
                        s,
                        "{:<6} {:>9} {:>9}{}",
                        level.name(),
                        ca.coverage.map_or("n/a".into(), |v| format!("{v:.4}")),
                        ca.accuracy.map_or("n/a".into(), |v| format!("{v:.4}")),
                        if ca.pollution { "  (pollution)" } else { "" }
                    );
                }
                Ok(s)
            }
        }
    }
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    /// `(dotted key, value)` pairs in sweep declaration order.
    pub params: Vec<(String, toml::Value)>,
    pub report: RunReport,
}

impl SweepPoint {
    /// `key=value` pairs joined by `;`, used as the CSV `run` column.
    pub fn label(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Every point of a sweep in Cartesian-product order (last key varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub schema_version: u32,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn new(points: Vec<SweepPoint>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            points,
        }
    }

    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        for p in &self.points {
            p.report.check()?;
        }
        match format {
            ReportFormat::Json => to_json(self),
            ReportFormat::Csv => {
                let mut w = csv_writer();
                for p in &self.points {
                    write_run_rows(&mut w, &p.label(), &p.report, None)?;
                }
                finish_csv(w)
            }
            ReportFormat::Human => {
                let mut s = String::new();
                for p in &self.points {
                    let _ = writeln!(s, "== {}", p.label());
                    s.push_str(&human_run(&p.report));
                }
                Ok(s)
            }
        }
    }
}

pub fn parse_run_report(json: &str) -> Result<RunReport> {
    let r: RunReport =
        serde_json::from_str(json).map_err(|e| Error::Validation(format!("report json: {e}")))?;
    r.check()?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero() -> RunReport {
        RunReport::new(HierarchyConfig::default(), None, Counters::default())
    }

    #[test]
    fn zero_report_csv_has_full_header_and_zero_rows() {
        let csv = zero().emit(ReportFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 5);
        assert!(rows[0].starts_with("1,run,no_prefetch,l1d,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,"));
        assert!(rows[4].contains("summary"));
        assert!(rows[4].ends_with(",0,0,0,0,0,0,0,,"));
    }

    #[test]
    fn json_round_trip_is_identical() {
        let mut c = Counters::default();
        c.l1d.record_hit(6);
        c.l1d.record_miss(388);
        c.l2.record_miss(385);
        c.hmc.record_miss(374);
        c.total_instructions = 7;
        c.records = 2;
        let r = RunReport::new(HierarchyConfig::default(), None, c);
        let text = r.emit(ReportFormat::Json).unwrap();
        let back = parse_run_report(&text).unwrap();
        assert_eq!(back.emit(ReportFormat::Json).unwrap(), text);
    }

    #[test]
    fn tampered_amat_is_an_integrity_error() {
        let mut r = zero();
        r.derived.amat = 1.0;
        assert!(matches!(
            r.emit(ReportFormat::Json),
            Err(Error::Integrity(_))
        ));
        let mut r = zero();
        r.counters.l1d.demand_hits = 3;
        assert!(matches!(
            r.emit(ReportFormat::Csv),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn no_ipc_anywhere() {
        let r = zero();
        for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Human] {
            assert!(!r.emit(f).unwrap().to_lowercase().contains("ipc"));
        }
    }

    #[test]
    fn comparison_of_identical_runs() {
        let mut c = Counters::default();
        c.l1d.record_miss(388);
        c.l2.record_miss(385);
        c.hmc.record_miss(374);
        c.total_instructions = 1;
        c.records = 1;
        let r = RunReport::new(HierarchyConfig::default(), None, c);
        let cmp = ComparisonReport::new(r.clone(), r);
        for level in [Level::L1d, Level::L2, Level::Hmc] {
            assert_eq!(cmp.level(level).coverage, Some(0.0));
            assert_eq!(cmp.level(level).accuracy, None);
        }
        let csv = cmp.emit(ReportFormat::Csv).unwrap();
        assert!(csv.contains(",0,n/a\n"));
    }
}
