//! The L1I/L1D + L2 + HMC hierarchy and the prefetching systems attached to it.
//!
//! Latency model: a hit costs tag + data at the level that serves it, a miss costs the
//! tag lookup before the request moves down. Fill and write-back work is not charged to
//! the demand access. Prefetches complete off the critical path but change state.

use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheGeometry, FillScope, Outcome, Victim};
use crate::error::{Error, Result};
use crate::hmc::{Hmc, HmcConfig, HmcPrefetchConfig, ServedBy};
use crate::metrics::{Counters, LevelStats};
use crate::prefetch::{
    validate_buffers, Dedup, Direction, NextLineConfig, NextLinePrefetcher, Origin,
    PrefetchRequest, StreamBufferSet, StrideConfig, StrideEngine, Trigger,
};
use crate::trace::{AccessKind, MemoryAccess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetchSystem {
    NoPrefetch,
    Hmc,
    HmcPlusL1,
}

impl PrefetchSystem {
    pub fn name(self) -> &'static str {
        match self {
            PrefetchSystem::NoPrefetch => "no_prefetch",
            PrefetchSystem::Hmc => "hmc",
            PrefetchSystem::HmcPlusL1 => "hmc_plus_l1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1PrefetchConfig {
    pub next_line: NextLineConfig,
    pub next_line_buffers: u32,
    pub next_line_buffer_entries: u32,
    pub stride: StrideConfig,
    /// Whether L1 prefetch reads that miss below also allocate in L2 and the HMC cache.
    pub fill_lower_levels: bool,
}

impl Default for L1PrefetchConfig {
    fn default() -> Self {
        Self {
            next_line: NextLineConfig {
                trigger: Trigger::OnPrefetchHit,
                depth: 2,
                direction: Direction::Both,
            },
            next_line_buffers: 8,
            next_line_buffer_entries: 32,
            stride: StrideConfig {
                depth: 4,
                table_entries: 64,
                buffers: 8,
                buffer_entries: 32,
            },
            fill_lower_levels: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefetchConfig {
    pub l1: L1PrefetchConfig,
    pub hmc: HmcPrefetchConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Physical address space (NVRAM capacity) in bytes.
    pub address_space: u64,
    pub l1d: CacheGeometry,
    pub l1i: CacheGeometry,
    pub l2: CacheGeometry,
    pub hmc: HmcConfig,
    pub prefetch_system: PrefetchSystem,
    pub prefetch: PrefetchConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            address_space: 1 << 36,
            l1d: CacheGeometry::l1(),
            l1i: CacheGeometry::l1(),
            l2: CacheGeometry::l2(),
            hmc: HmcConfig::default(),
            prefetch_system: PrefetchSystem::NoPrefetch,
            prefetch: PrefetchConfig::default(),
        }
    }
}

impl HierarchyConfig {
    pub fn with_system(mut self, system: PrefetchSystem) -> Self {
        self.prefetch_system = system;
        self
    }

    /// Sets every prefetcher depth, at L1 and at the HMC.
    pub fn with_depths(mut self, depth: u32) -> Self {
        self.prefetch.l1.next_line.depth = depth;
        self.prefetch.l1.stride.depth = depth;
        self.prefetch.hmc.next_line.depth = depth;
        self.prefetch.hmc.stride.depth = depth.min(self.prefetch.hmc.stride.depth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.l1d.validate("l1d")?;
        self.l1i.validate("l1i")?;
        self.l2.validate("l2")?;
        self.hmc.validate()?;
        self.prefetch.l1.stride.validate("prefetch.l1.stride")?;
        self.prefetch.hmc.stride.validate("prefetch.hmc.stride")?;
        validate_buffers(
            "prefetch.l1.next_line",
            self.prefetch.l1.next_line_buffers,
            self.prefetch.l1.next_line_buffer_entries,
        )?;
        if self.l1d.block_size != self.l2.block_size
            || self.l2.block_size != self.hmc.cache.block_size
        {
            return Err(Error::Validation(
                "l1d, l2 and hmc must share one block size".into(),
            ));
        }
        if self.l1d.blocks_per_line != 1
            || self.l1i.blocks_per_line != 1
            || self.l2.blocks_per_line != 1
        {
            return Err(Error::Validation(
                "only the HMC cache may be sectored".into(),
            ));
        }
        if self.address_space == 0 || !self.address_space.is_multiple_of(self.hmc.sector_bytes()) {
            return Err(Error::Validation(
                "address_space must be a positive multiple of the HMC sector size".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedLevel {
    L1,
    L2,
    Hmc,
    DramCache,
    Nvram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub served_level: ServedLevel,
    pub total_latency: u64,
    pub l1_hit: bool,
    /// The L1 miss was covered by a stream buffer.
    pub stream_buffer_hit: bool,
    pub l2_hit: Option<bool>,
    pub hmc_hit: Option<bool>,
}

/// L1 data-side prefetching: next-line and stride engines, each with its own stream buffers.
struct L1Prefetcher {
    next_line: NextLinePrefetcher,
    nl_buffers: StreamBufferSet,
    stride: StrideEngine,
    block: u64,
}

impl L1Prefetcher {
    fn new(cfg: &L1PrefetchConfig, block: u64, addr_limit: u64) -> Self {
        Self {
            next_line: NextLinePrefetcher::new(cfg.next_line.clone(), block, addr_limit),
            nl_buffers: StreamBufferSet::new(
                cfg.next_line_buffers as usize,
                cfg.next_line_buffer_entries as usize,
                block,
                addr_limit,
            ),
            stride: StrideEngine::new(&cfg.stride, block, addr_limit),
            block,
        }
    }

    fn holds(&self, addr: u64) -> bool {
        self.nl_buffers.contains(addr) || self.stride.buffers().contains(addr)
    }

    /// Probes both buffer sets; on a hit returns which engine owned the block and the
    /// replenishment request.
    fn probe(&mut self, addr: u64) -> Option<(Origin, Vec<PrefetchRequest>)> {
        if let Some(reqs) = self.stride.probe(addr) {
            return Some((Origin::Stride, reqs));
        }
        let id = self.nl_buffers.probe(addr)?;
        let reqs = self
            .nl_buffers
            .advance(id)
            .map(|a| PrefetchRequest {
                addr: a,
                origin: Origin::NextLine,
                trigger_pc: 0,
                stream: Some(id),
            })
            .into_iter()
            .collect();
        Some((Origin::NextLine, reqs))
    }

    /// Routes next-line candidates into stream buffers: a candidate extends the buffer
    /// whose head it is, otherwise it opens a new stream.
    fn assign_next_line(
        &mut self,
        trigger: u64,
        reqs: Vec<PrefetchRequest>,
    ) -> Vec<PrefetchRequest> {
        let line = trigger - trigger % self.block;
        let mut out = Vec::with_capacity(reqs.len());
        for mut r in reqs {
            let step = if r.addr > line {
                self.block as i64
            } else {
                -(self.block as i64)
            };
            let existing = self
                .nl_buffers
                .buffers()
                .iter()
                .position(|b| b.valid && b.stride == step && b.next_addr == r.addr);
            let id = existing.unwrap_or_else(|| self.nl_buffers.allocate(r.addr, step, 0));
            self.nl_buffers.advance(id);
            r.stream = Some(id);
            out.push(r);
        }
        out
    }

    fn observe(
        &mut self,
        pc: u64,
        addr: u64,
        outcome: Outcome,
        stride_replenished: bool,
    ) -> Vec<PrefetchRequest> {
        let mut out = Vec::new();
        if outcome != Outcome::HitDemand {
            let nl = self.next_line.observe(addr, outcome, pc);
            out.extend(self.assign_next_line(addr, nl));
        }
        out.extend(self.stride.observe_with(pc, addr, stride_replenished));
        out
    }

    fn accept(&mut self, req: &PrefetchRequest) {
        match req.origin {
            Origin::Stride => self.stride.accept(req),
            Origin::NextLine => {
                if let Some(id) = req.stream {
                    self.nl_buffers.push(id, req.addr);
                }
            }
        }
    }
}

pub struct Hierarchy {
    cfg: HierarchyConfig,
    l1d: Cache,
    l1i: Cache,
    l2: Cache,
    hmc: Hmc,
    l1_prefetch: Option<L1Prefetcher>,
    dedup: Dedup,
    l1d_stats: LevelStats,
    l1i_stats: LevelStats,
    l2_stats: LevelStats,
    instructions: u64,
    records: u64,
}

impl Hierarchy {
    pub fn new(cfg: HierarchyConfig) -> Result<Self> {
        cfg.validate()?;
        let hmc_prefetch = cfg.prefetch_system != PrefetchSystem::NoPrefetch;
        let l1_prefetch = (cfg.prefetch_system == PrefetchSystem::HmcPlusL1)
            .then(|| L1Prefetcher::new(&cfg.prefetch.l1, cfg.l1d.block_size, cfg.address_space));
        Ok(Self {
            l1d: Cache::new(cfg.l1d.clone())?,
            l1i: Cache::new(cfg.l1i.clone())?,
            l2: Cache::new(cfg.l2.clone())?,
            hmc: Hmc::new(
                cfg.hmc.clone(),
                &cfg.prefetch.hmc,
                hmc_prefetch,
                cfg.address_space,
            )?,
            l1_prefetch,
            dedup: Dedup::default(),
            l1d_stats: LevelStats::default(),
            l1i_stats: LevelStats::default(),
            l2_stats: LevelStats::default(),
            instructions: 0,
            records: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn hmc(&self) -> &Hmc {
        &self.hmc
    }

    pub fn l1d(&self) -> &Cache {
        &self.l1d
    }

    pub fn l2(&self) -> &Cache {
        &self.l2
    }

    /// Number of blocks currently held in L1 stream buffers.
    pub fn stream_buffer_occupancy(&self) -> usize {
        self.l1_prefetch.as_ref().map_or(0, |p| {
            p.nl_buffers.resident_entries() + p.stride.buffers().resident_entries()
        })
    }

    pub fn counters(&self) -> Counters {
        Counters {
            l1d: self.l1d_stats,
            l1i: self.l1i_stats,
            l2: self.l2_stats,
            hmc: self.hmc.stats,
            media: self.hmc.media,
            total_instructions: self.instructions,
            records: self.records,
        }
    }

    /// Every dirty 64 B block held anywhere in the hierarchy, with DRAM sectors expanded.
    pub fn dirty_blocks(&self) -> Vec<u64> {
        let block = self.cfg.l1d.block_size;
        let sector = self.cfg.hmc.sector_bytes();
        let (hmc_blocks, dram_sectors) = self.hmc.dirty_blocks();
        let mut out: Vec<u64> = self
            .l1d
            .dirty_blocks()
            .chain(self.l1i.dirty_blocks())
            .chain(self.l2.dirty_blocks())
            .chain(hmc_blocks)
            .chain(
                dram_sectors
                    .into_iter()
                    .flat_map(|s| (0..sector / block).map(move |b| s + b * block)),
            )
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Walks one record through the hierarchy.
    pub fn access(&mut self, rec: &MemoryAccess) -> AccessOutcome {
        self.records += 1;
        self.instructions = rec.icount;
        let is_inst = rec.kind == AccessKind::IFetch;
        let block = rec.addr - rec.addr % self.cfg.l1d.block_size;

        let l1 = if is_inst {
            &mut self.l1i
        } else {
            &mut self.l1d
        };
        let hit = l1.lookup(rec.addr, rec.kind, true);
        let l1_tag = l1.geometry().tag_latency;
        if hit.outcome.is_hit() {
            self.stats_l1(is_inst).record_hit(hit.latency);
            if !is_inst {
                self.l1_prefetch_step(rec.pc, rec.addr, hit.outcome, None);
            }
            return AccessOutcome {
                served_level: ServedLevel::L1,
                total_latency: hit.latency,
                l1_hit: true,
                stream_buffer_hit: false,
                l2_hit: None,
                hmc_hit: None,
            };
        }

        if !is_inst {
            if let Some((origin, replenish)) =
                self.l1_prefetch.as_mut().and_then(|p| p.probe(block))
            {
                let latency = l1_tag + self.cfg.l2.tag_latency;
                let stats = &mut self.l1d_stats;
                stats.record_hit(latency);
                stats.buffer_hits += 1;
                stats.useful_prefetch_hits += 1;
                let victim = self
                    .l1d
                    .fill(block, FillScope::Block, false, rec.kind.is_write());
                self.handle_l1_victim(victim, false);
                self.l1_prefetch_step(
                    rec.pc,
                    rec.addr,
                    Outcome::HitOnPrefetchedBlock,
                    Some((origin, replenish)),
                );
                return AccessOutcome {
                    served_level: ServedLevel::L1,
                    total_latency: latency,
                    l1_hit: false,
                    stream_buffer_hit: true,
                    l2_hit: None,
                    hmc_hit: None,
                };
            }
        }

        let mut latency = l1_tag;
        let l2_res = self.l2.lookup(block, AccessKind::Read, true);
        let (served_level, l2_hit, hmc_hit) = if l2_res.outcome.is_hit() {
            latency += l2_res.latency;
            self.l2_stats.record_hit(l2_res.latency);
            (ServedLevel::L2, true, None)
        } else {
            let h = self.hmc.access(block, AccessKind::Read, rec.pc);
            self.l2_stats.record_miss(l2_res.latency + h.latency);
            latency += l2_res.latency + h.latency;
            let victim = self.l2.fill(block, FillScope::Block, false, false);
            self.handle_l2_victim(victim);
            let level = match h.served_by {
                ServedBy::HmcCache => ServedLevel::Hmc,
                ServedBy::DramCache => ServedLevel::DramCache,
                ServedBy::Nvram => ServedLevel::Nvram,
            };
            (level, false, Some(h.served_by == ServedBy::HmcCache))
        };

        let l1 = if is_inst {
            &mut self.l1i
        } else {
            &mut self.l1d
        };
        let victim = l1.fill(block, FillScope::Block, false, rec.kind.is_write());
        self.handle_l1_victim(victim, is_inst);
        self.stats_l1(is_inst).record_miss(latency);
        if !is_inst {
            self.l1_prefetch_step(rec.pc, rec.addr, Outcome::Miss, None);
        }
        AccessOutcome {
            served_level,
            total_latency: latency,
            l1_hit: false,
            stream_buffer_hit: false,
            l2_hit: Some(l2_hit),
            hmc_hit,
        }
    }

    fn stats_l1(&mut self, is_inst: bool) -> &mut LevelStats {
        if is_inst {
            &mut self.l1i_stats
        } else {
            &mut self.l1d_stats
        }
    }

    fn handle_l1_victim(&mut self, victim: Option<Victim>, is_inst: bool) {
        let Some(v) = victim else { return };
        if v.dirty_blocks.is_empty() {
            return;
        }
        self.stats_l1(is_inst).writebacks += 1;
        for b in v.dirty_blocks {
            let victim = self.l2.fill(b, FillScope::Block, false, true);
            self.handle_l2_victim(victim);
        }
    }

    fn handle_l2_victim(&mut self, victim: Option<Victim>) {
        let Some(v) = victim else { return };
        if v.dirty_blocks.is_empty() {
            return;
        }
        self.l2_stats.writebacks += 1;
        for b in v.dirty_blocks {
            self.hmc.writeback(b);
        }
    }

    fn l1_prefetch_step(
        &mut self,
        pc: u64,
        addr: u64,
        outcome: Outcome,
        buffer_hit: Option<(Origin, Vec<PrefetchRequest>)>,
    ) {
        let Some(pf) = self.l1_prefetch.as_mut() else {
            return;
        };
        let (mut reqs, stride_replenished) = match buffer_hit {
            Some((origin, replenish)) => (replenish, origin == Origin::Stride),
            None => (Vec::new(), false),
        };
        reqs.extend(pf.observe(pc, addr, outcome, stride_replenished));
        if reqs.is_empty() {
            return;
        }
        let before = self.dedup.dropped;
        let l1d = &self.l1d;
        let pf_ref = &*pf;
        let reqs = self
            .dedup
            .filter(reqs, |a| l1d.contains_block(a) || pf_ref.holds(a));
        self.l1d_stats.prefetch_dropped += self.dedup.dropped - before;
        for r in reqs {
            self.l1d_stats.prefetch_issued += 1;
            self.fetch_for_l1_prefetch(r.addr);
            if let Some(pf) = self.l1_prefetch.as_mut() {
                pf.accept(&r);
            }
            self.l1d_stats.prefetch_filled += 1;
            self.dedup.complete(r.addr);
        }
    }

    /// Brings a block up for an L1 prefetch. Demand counters are not touched.
    fn fetch_for_l1_prefetch(&mut self, block: u64) {
        if self.l2.contains_block(block) {
            return;
        }
        let allocate = self.cfg.prefetch.l1.fill_lower_levels;
        self.hmc.upper_prefetch_read(block, allocate);
        if allocate {
            let victim = self.l2.fill(block, FillScope::Block, false, false);
            self.handle_l2_victim(victim);
        }
    }

    /// Runs a whole trace, validating record order and addresses.
    pub fn run<I>(&mut self, trace: I) -> Result<Counters>
    where
        I: IntoIterator<Item = Result<MemoryAccess>>,
    {
        let mut prev = 0u64;
        for (i, rec) in trace.into_iter().enumerate() {
            let rec = rec?;
            if rec.icount < prev {
                return Err(Error::Validation(format!(
                    "record {i}: icount {} is lower than previous icount {prev}",
                    rec.icount
                )));
            }
            if rec.addr >= self.cfg.address_space {
                return Err(Error::Validation(format!(
                    "record {i}: address {:#x} outside the {:#x}-byte address space",
                    rec.addr, self.cfg.address_space
                )));
            }
            prev = rec.icount;
            self.access(&rec);
        }
        Ok(self.counters())
    }
}

/// Simulates `trace` on a fresh hierarchy built from `cfg`.
pub fn simulate(trace: &[MemoryAccess], cfg: &HierarchyConfig) -> Result<Counters> {
    Hierarchy::new(cfg.clone())?.run(trace.iter().copied().map(Ok))
}
