//! Counters, derived metrics (MPKI, miss latency, AMAT) and paired-run coverage/accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L1d,
    L1i,
    L2,
    Hmc,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1d, Level::L1i, Level::L2, Level::Hmc];

    pub fn name(self) -> &'static str {
        match self {
            Level::L1d => "l1d",
            Level::L1i => "l1i",
            Level::L2 => "l2",
            Level::Hmc => "hmc",
        }
    }
}

/// Raw per-level counters. Demand counters never include prefetch traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelStats {
    pub demand_accesses: u64,
    pub demand_hits: u64,
    pub demand_misses: u64,
    /// Demand hits served from a stream buffer instead of the cache proper (subset of hits).
    pub buffer_hits: u64,
    /// Prefetch requests sent after deduplication.
    pub prefetch_issued: u64,
    /// Blocks installed by prefetch fills.
    pub prefetch_filled: u64,
    /// Demand hits on a prefetched block not referenced before.
    pub useful_prefetch_hits: u64,
    /// Prefetch candidates dropped as already resident or in flight.
    pub prefetch_dropped: u64,
    pub writebacks: u64,
    pub summed_hit_latency: u64,
    pub summed_demand_miss_latency: u64,
}

impl LevelStats {
    pub fn record_hit(&mut self, latency: u64) {
        self.demand_accesses += 1;
        self.demand_hits += 1;
        self.summed_hit_latency += latency;
    }

    pub fn record_miss(&mut self, latency: u64) {
        self.demand_accesses += 1;
        self.demand_misses += 1;
        self.summed_demand_miss_latency += latency;
    }

    pub fn check(&self, level: Level) -> Result<()> {
        if self.demand_hits + self.demand_misses != self.demand_accesses {
            return Err(Error::Integrity(format!(
                "{}: hits {} + misses {} != accesses {}",
                level.name(),
                self.demand_hits,
                self.demand_misses,
                self.demand_accesses
            )));
        }
        if self.buffer_hits > self.demand_hits {
            return Err(Error::Integrity(format!(
                "{}: buffer hits exceed demand hits",
                level.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaCounters {
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub nvram_reads: u64,
    pub nvram_writes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelMetrics {
    pub miss_ratio: f64,
    pub mpki: f64,
    /// Mean latency of a demand access that misses this level, measured from this level.
    pub avg_miss_latency: f64,
    pub avg_hit_latency: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedMetrics {
    pub l1d: LevelMetrics,
    pub l1i: LevelMetrics,
    pub l2: LevelMetrics,
    pub hmc: LevelMetrics,
    /// Mean total latency of an L1 demand access (data and instruction side).
    pub amat: f64,
}

/// Per-level counters and media traffic of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counters {
    pub l1d: LevelStats,
    pub l1i: LevelStats,
    pub l2: LevelStats,
    pub hmc: LevelStats,
    pub media: MediaCounters,
    pub total_instructions: u64,
    pub records: u64,
}

impl Counters {
    pub fn level(&self, level: Level) -> &LevelStats {
        match level {
            Level::L1d => &self.l1d,
            Level::L1i => &self.l1i,
            Level::L2 => &self.l2,
            Level::Hmc => &self.hmc,
        }
    }

    pub fn level_mut(&mut self, level: Level) -> &mut LevelStats {
        match level {
            Level::L1d => &mut self.l1d,
            Level::L1i => &mut self.l1i,
            Level::L2 => &mut self.l2,
            Level::Hmc => &mut self.hmc,
        }
    }

    /// Sum of the total latencies of every L1 demand access.
    pub fn total_l1_latency(&self) -> u64 {
        [&self.l1d, &self.l1i]
            .iter()
            .map(|s| s.summed_hit_latency + s.summed_demand_miss_latency)
            .sum()
    }

    pub fn l1_accesses(&self) -> u64 {
        self.l1d.demand_accesses + self.l1i.demand_accesses
    }

    /// Derived metrics; ratios over an empty denominator are reported as 0.
    pub fn derive(&self) -> DerivedMetrics {
        let level = |s: &LevelStats| LevelMetrics {
            miss_ratio: ratio(s.demand_misses, s.demand_accesses),
            mpki: ratio(s.demand_misses * 1000, self.total_instructions),
            avg_miss_latency: ratio(s.summed_demand_miss_latency, s.demand_misses),
            avg_hit_latency: ratio(s.summed_hit_latency, s.demand_hits),
        };
        DerivedMetrics {
            l1d: level(&self.l1d),
            l1i: level(&self.l1i),
            l2: level(&self.l2),
            hmc: level(&self.hmc),
            amat: ratio(self.total_l1_latency(), self.l1_accesses()),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn mpki(misses: u64, instructions: u64) -> Result<f64> {
    if instructions == 0 {
        return Err(Error::Validation(
            "MPKI is undefined for zero instructions".into(),
        ));
    }
    Ok(misses as f64 * 1000.0 / instructions as f64)
}

/// `access_time + miss_ratio * miss_latency`.
pub fn amat(access_time: f64, miss_ratio: f64, miss_latency: f64) -> f64 {
    assert!(
        (0.0..=1.0).contains(&miss_ratio),
        "miss ratio {miss_ratio} outside [0, 1]"
    );
    access_time + miss_ratio * miss_latency
}

/// Recursive AMAT over `(access_time, miss_ratio)` per level, top first. The last level's
/// miss ratio is ignored: its access time terminates the recursion.
pub fn amat_recursive(levels: &[(f64, f64)]) -> f64 {
    match levels {
        [] => 0.0,
        [(t, _)] => *t,
        [(t, r), rest @ ..] => amat(*t, *r, amat_recursive(rest)),
    }
}

/// Prefetch coverage and accuracy of one level from a paired run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageAccuracy {
    pub misses_without: u64,
    pub misses_with: u64,
    pub issued: u64,
    /// `None` when the baseline has no misses.
    pub coverage: Option<f64>,
    /// `None` when no prefetch was issued.
    pub accuracy: Option<f64>,
    /// The prefetching run missed more than the baseline.
    pub pollution: bool,
}

pub fn coverage_accuracy(misses_without: u64, misses_with: u64, issued: u64) -> CoverageAccuracy {
    let eliminated = misses_without as f64 - misses_with as f64;
    CoverageAccuracy {
        misses_without,
        misses_with,
        issued,
        coverage: (misses_without > 0).then(|| eliminated / misses_without as f64),
        accuracy: (issued > 0).then(|| eliminated / issued as f64),
        pollution: misses_with > misses_without,
    }
}
