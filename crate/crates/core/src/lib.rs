//! Trace-driven simulator of a cache hierarchy backed by NVRAM through a hybrid memory
//! controller (HMC): L1I/L1D and L2 caches, an SRAM sector cache with a tag directory in
//! the controller, a DRAM cache, and next-line and stride prefetchers at L1 and at the HMC.
//!
//! ```
//! use hmcsim::{simulate, HierarchyConfig, PrefetchSystem, Pattern, TraceGenSpec, generate};
//!
//! let spec = TraceGenSpec { pattern: Pattern::Sequential, count: 1000, ..Default::default() };
//! let trace = generate(&spec).unwrap();
//! let cfg = HierarchyConfig::default().with_system(PrefetchSystem::Hmc);
//! let counters = simulate(&trace, &cfg).unwrap();
//! assert_eq!(counters.records, 1000);
//! ```

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod hierarchy;
pub mod hmc;
pub mod metrics;
pub mod prefetch;
pub mod report;
pub mod trace;

pub use cache::{Cache, CacheGeometry, Outcome};
pub use config::{ExperimentConfig, RunMode, TraceFormat, TraceSource};
pub use error::{Error, Result};
pub use hierarchy::{
    simulate, AccessOutcome, Hierarchy, HierarchyConfig, PrefetchSystem, ServedLevel,
};
pub use hmc::{Hmc, HmcConfig, ServedBy};
pub use metrics::{coverage_accuracy, mpki, Counters, CoverageAccuracy, DerivedMetrics, Level};
pub use report::{ComparisonReport, ReportFormat, RunReport, SweepReport};
pub use trace::{
    decode_binary, encode_binary, generate, parse_text_trace, AccessKind, MemoryAccess, Pattern,
    TraceGenSpec,
};
