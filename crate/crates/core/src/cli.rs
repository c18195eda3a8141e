//! Library side of the command-line driver: run, compare, generate and sweep.

use std::path::Path;

use crate::config::{ExperimentConfig, RunMode};
use crate::error::{Error, Result};
use crate::hierarchy::{simulate, PrefetchSystem};
use crate::report::{ComparisonReport, ReportFormat, RunReport, SweepPoint, SweepReport};
use crate::trace::{encode_binary, generate, write_text_trace, MemoryAccess, TraceGenSpec};

/// Output of one experiment, whichever mode produced it.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Run(Box<RunReport>),
    Compare(Box<ComparisonReport>),
    Sweep(SweepReport),
}

impl Outcome {
    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        match self {
            Outcome::Run(r) => r.emit(format),
            Outcome::Compare(c) => c.emit(format),
            Outcome::Sweep(s) => s.emit(format),
        }
    }

    /// One-line summary for stderr.
    pub fn summary(&self) -> String {
        match self {
            Outcome::Run(r) => run_summary(r),
            Outcome::Compare(c) => {
                let hmc = c.level(crate::metrics::Level::Hmc);
                format!(
                    "baseline AMAT {:.3}, {} AMAT {:.3}, HMC coverage {}",
                    c.baseline.derived.amat,
                    c.with_prefetch.system.name(),
                    c.with_prefetch.derived.amat,
                    hmc.coverage.map_or("n/a".into(), |v| format!("{v:.4}"))
                )
            }
            Outcome::Sweep(s) => format!("{} sweep points", s.points.len()),
        }
    }
}

fn run_summary(r: &RunReport) -> String {
    format!(
        "{}: {} records, AMAT {:.3} cycles, HMC MPKI {:.3}",
        r.system.name(),
        r.counters.records,
        r.derived.amat,
        r.derived.hmc.mpki
    )
}

fn run_on(trace: &[MemoryAccess], cfg: &ExperimentConfig) -> Result<RunReport> {
    let counters = simulate(trace, &cfg.hierarchy)?;
    Ok(RunReport::new(
        cfg.hierarchy.clone(),
        Some(cfg.trace.clone()),
        counters,
    ))
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<RunReport> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let trace = cfg.trace.load()?;
    run_on(&trace, &cfg)
}

/// Runs the trace without prefetching and with the configured system.
pub fn run_paired(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    if cfg.hierarchy.prefetch_system == PrefetchSystem::NoPrefetch {
        return Err(Error::Config(
            "paired runs need a prefetching system (hmc or hmc_plus_l1)".into(),
        ));
    }
    let trace = cfg.trace.load()?;
    let mut base_cfg = cfg.clone();
    base_cfg.hierarchy = cfg
        .hierarchy
        .clone()
        .with_system(PrefetchSystem::NoPrefetch);
    let baseline = run_on(&trace, &base_cfg)?;
    let with = run_on(&trace, &cfg)?;
    Ok(ComparisonReport::new(baseline, with))
}

/// Cartesian product of the sweep values, last key varying fastest.
pub fn sweep_tuples(cfg: &ExperimentConfig) -> Vec<Vec<(String, toml::Value)>> {
    let mut tuples: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for p in &cfg.sweep {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                p.values.iter().map(move |v| {
                    let mut t = t.clone();
                    t.push((p.key.clone(), v.clone()));
                    t
                })
            })
            .collect();
    }
    tuples
}

fn sweep_point(
    base: &ExperimentConfig,
    trace: &[MemoryAccess],
    params: Vec<(String, toml::Value)>,
) -> Result<SweepPoint> {
    let attempt = || -> Result<RunReport> {
        let mut cfg = base.clone();
        for (k, v) in &params {
            cfg = cfg.with_override(k, v)?;
        }
        cfg.hierarchy.validate()?;
        run_on(trace, &cfg)
    };
    match attempt() {
        Ok(report) => Ok(SweepPoint { params, report }),
        Err(e) => {
            let point = SweepPoint {
                params,
                report: RunReport::new(base.hierarchy.clone(), None, Default::default()),
            };
            Err(Error::Sweep {
                tuple: point.label(),
                source: Box::new(e),
            })
        }
    }
}

/// Runs every sweep point on the same trace. Output order is the product order no matter
/// how the points are scheduled.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let trace = cfg.trace.load()?;
    let tuples = sweep_tuples(&cfg);

    #[cfg(feature = "parallel")]
    let points: Vec<Result<SweepPoint>> = {
        use rayon::prelude::*;
        tuples
            .into_par_iter()
            .map(|t| sweep_point(&cfg, &trace, t))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<Result<SweepPoint>> = tuples
        .into_iter()
        .map(|t| sweep_point(&cfg, &trace, t))
        .collect();

    Ok(SweepReport::new(points.into_iter().collect::<Result<_>>()?))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.mode {
        RunMode::Single => run_single(cfg).map(|r| Outcome::Run(Box::new(r))),
        RunMode::Paired => run_paired(cfg).map(|c| Outcome::Compare(Box::new(c))),
        RunMode::Sweep => run_sweep(cfg).map(Outcome::Sweep),
    }
}

/// Writes to `path`, or to stdout when absent.
pub fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Generates a trace and writes it as text or as 25-byte binary records.
pub fn gen_trace(spec: &TraceGenSpec, path: &Path, binary: bool) -> Result<usize> {
    let records = generate(spec)?;
    if binary {
        std::fs::write(path, encode_binary(&records)).map_err(|e| Error::io(path, e))?;
    } else {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_text_trace(std::io::BufWriter::new(file), &records)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(records.len())
}
