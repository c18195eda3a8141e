//! Hybrid memory controller: SRAM sector cache, SRAM tag directory, DRAM cache and NVRAM.
//!
//! Demand flow: sector-cache lookup; on a miss the tag directory decides whether the
//! sector is read from the DRAM cache or from NVRAM. Either way the whole sector is
//! installed in the sector cache. Dirty sector-cache victims are staged in the DRAM
//! cache, and dirty DRAM-cache victims are written to NVRAM, both off the critical path.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheGeometry, FillScope, Outcome, Victim};
use crate::error::{Error, Result};
use crate::metrics::{LevelStats, MediaCounters};
use crate::prefetch::{
    Dedup, Direction, NextLineConfig, NextLinePrefetcher, PrefetchRequest, StrideConfig,
    StrideEngine, Trigger,
};
use crate::trace::AccessKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramConfig {
    pub total_size: u64,
    pub ways: u32,
    pub channels: u32,
    pub read_latency: u64,
    pub write_latency: u64,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            total_size: 64 << 20,
            ways: 16,
            channels: 2,
            read_latency: 33,
            write_latency: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvramConfig {
    pub read_latency: u64,
    pub write_latency: u64,
}

impl Default for NvramConfig {
    fn default() -> Self {
        Self {
            read_latency: 353,
            write_latency: 86,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub cache: CacheGeometry,
    pub directory_latency: u64,
    pub dram: DramConfig,
    pub nvram: NvramConfig,
    /// Also install NVRAM demand fills in the DRAM cache.
    pub dram_allocate_on_demand_fill: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            cache: CacheGeometry::hmc(),
            directory_latency: 4,
            dram: DramConfig::default(),
            nvram: NvramConfig::default(),
            dram_allocate_on_demand_fill: false,
        }
    }
}

impl HmcConfig {
    pub fn sector_bytes(&self) -> u64 {
        self.cache.line_bytes()
    }

    fn dram_geometry(&self) -> CacheGeometry {
        CacheGeometry {
            total_size: self.dram.total_size,
            block_size: self.sector_bytes(),
            blocks_per_line: 1,
            ways: self.dram.ways,
            tag_latency: self.directory_latency,
            data_latency: self.dram.read_latency,
            write_back: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate("hmc.cache")?;
        self.dram_geometry().validate("hmc.dram")?;
        if self.dram.channels == 0 {
            return Err(Error::Validation(
                "hmc.dram: channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Prefetch engines attached to the sector cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcPrefetchConfig {
    pub next_line: NextLineConfig,
    /// Optional stride engine; off (depth 0) by default.
    pub stride: StrideConfig,
}

impl Default for HmcPrefetchConfig {
    fn default() -> Self {
        Self {
            next_line: NextLineConfig {
                trigger: Trigger::OnPrefetchHit,
                depth: 2,
                direction: Direction::Ascending,
            },
            stride: StrideConfig {
                depth: 0,
                table_entries: 64,
                buffers: 8,
                buffer_entries: 32,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedBy {
    HmcCache,
    DramCache,
    Nvram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmcEvent {
    CacheTag,
    CacheData,
    DirectoryLookup,
    DramRead {
        sector: u64,
    },
    NvramRead {
        sector: u64,
    },
    Fill {
        sector: u64,
        prefetch: bool,
    },
    Eviction {
        sector: u64,
        dirty_blocks: u32,
    },
    /// Sector written into the DRAM cache (off the critical path).
    DramWrite {
        sector: u64,
    },
    DramEviction {
        sector: u64,
        dirty: bool,
    },
    /// Sector written back to NVRAM (off the critical path).
    NvramWrite {
        sector: u64,
    },
    PrefetchIssue {
        sector: u64,
    },
}

impl HmcEvent {
    /// Cycles this event adds to the access that caused it.
    pub fn critical_latency(&self, cfg: &HmcConfig) -> u64 {
        match self {
            HmcEvent::CacheTag => cfg.cache.tag_latency,
            HmcEvent::CacheData => cfg.cache.data_latency,
            HmcEvent::DirectoryLookup => cfg.directory_latency,
            HmcEvent::DramRead { .. } => cfg.dram.read_latency,
            HmcEvent::NvramRead { .. } => cfg.nvram.read_latency,
            _ => 0,
        }
    }

    /// Cycles spent by background work (write-backs).
    pub fn background_latency(&self, cfg: &HmcConfig) -> u64 {
        match self {
            HmcEvent::DramWrite { .. } => cfg.dram.write_latency,
            HmcEvent::NvramWrite { .. } => cfg.nvram.write_latency,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmcAccessOutcome {
    pub served_by: ServedBy,
    pub cache_outcome: Outcome,
    pub latency: u64,
    pub events: Vec<HmcEvent>,
}

/// Complete tag store of the DRAM cache kept in SRAM: sector address to DRAM set.
#[derive(Debug, Default)]
pub struct TagDirectory {
    entries: HashMap<u64, u64>,
}

impl TagDirectory {
    pub fn contains(&self, sector: u64) -> bool {
        self.entries.contains_key(&sector)
    }

    pub fn location(&self, sector: u64) -> Option<u64> {
        self.entries.get(&sector).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sectors(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }
}

pub struct Hmc {
    cfg: HmcConfig,
    cache: Cache,
    directory: TagDirectory,
    dram: Cache,
    next_line: NextLinePrefetcher,
    stride: StrideEngine,
    prefetch_enabled: bool,
    dedup: Dedup,
    pub stats: LevelStats,
    pub media: MediaCounters,
}

impl Hmc {
    pub fn new(
        cfg: HmcConfig,
        prefetch: &HmcPrefetchConfig,
        prefetch_enabled: bool,
        addr_limit: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        prefetch.stride.validate("hmc.prefetch.stride")?;
        let sector = cfg.sector_bytes();
        Ok(Self {
            cache: Cache::new(cfg.cache.clone())?,
            dram: Cache::new(cfg.dram_geometry())?,
            directory: TagDirectory::default(),
            next_line: NextLinePrefetcher::new(prefetch.next_line.clone(), sector, addr_limit),
            stride: StrideEngine::new(&prefetch.stride, sector, addr_limit),
            prefetch_enabled,
            dedup: Dedup::default(),
            stats: LevelStats::default(),
            media: MediaCounters::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &HmcConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn dram(&self) -> &Cache {
        &self.dram
    }

    pub fn directory(&self) -> &TagDirectory {
        &self.directory
    }

    pub fn sector_of(&self, addr: u64) -> u64 {
        addr - addr % self.cfg.sector_bytes()
    }

    /// DRAM channel a sector maps to (sector-interleaved).
    pub fn channel_of(&self, sector: u64) -> u32 {
        ((sector / self.cfg.sector_bytes()) % self.cfg.dram.channels as u64) as u32
    }

    /// Demand access plus the prefetches it triggers.
    pub fn access(&mut self, block_addr: u64, kind: AccessKind, pc: u64) -> HmcAccessOutcome {
        let mut out = self.demand_access(block_addr, kind);
        if self.prefetch_enabled {
            let mut reqs = self.next_line.observe(block_addr, out.cache_outcome, pc);
            reqs.extend(self.stride.observe(pc, block_addr));
            out.events.extend(self.issue_prefetches(reqs));
        }
        out
    }

    /// Demand access without prefetch side effects.
    pub fn demand_access(&mut self, block_addr: u64, kind: AccessKind) -> HmcAccessOutcome {
        assert_eq!(
            block_addr % self.cfg.cache.block_size,
            0,
            "HMC demand access {block_addr:#x} is not block aligned"
        );
        let sector = self.sector_of(block_addr);
        let res = self.cache.lookup(block_addr, kind, true);
        let mut events = vec![HmcEvent::CacheTag];
        let served_by = if res.outcome.is_hit() {
            events.push(HmcEvent::CacheData);
            if res.outcome == Outcome::HitOnPrefetchedBlock {
                self.stats.useful_prefetch_hits += 1;
            }
            ServedBy::HmcCache
        } else {
            let served = self.fetch_sector(sector, &mut events);
            if served == ServedBy::Nvram && self.cfg.dram_allocate_on_demand_fill {
                self.dram_install(sector, false, &mut events);
            }
            events.push(HmcEvent::Fill {
                sector,
                prefetch: false,
            });
            let victim = self
                .cache
                .fill(block_addr, FillScope::WholeLine, false, kind.is_write());
            self.handle_cache_victim(victim, &mut events);
            served
        };
        let latency = events.iter().map(|e| e.critical_latency(&self.cfg)).sum();
        if res.outcome.is_hit() {
            self.stats.record_hit(latency);
        } else {
            self.stats.record_miss(latency);
        }
        HmcAccessOutcome {
            served_by,
            cache_outcome: res.outcome,
            latency,
            events,
        }
    }

    /// Directory lookup and media read for a sector missing from the sector cache.
    fn fetch_sector(&mut self, sector: u64, events: &mut Vec<HmcEvent>) -> ServedBy {
        events.push(HmcEvent::DirectoryLookup);
        if self.directory.contains(sector) {
            self.dram.lookup(sector, AccessKind::Read, true);
            self.media.dram_reads += 1;
            events.push(HmcEvent::DramRead { sector });
            ServedBy::DramCache
        } else {
            self.media.nvram_reads += 1;
            events.push(HmcEvent::NvramRead { sector });
            ServedBy::Nvram
        }
    }

    fn handle_cache_victim(&mut self, victim: Option<Victim>, events: &mut Vec<HmcEvent>) {
        let Some(v) = victim else { return };
        events.push(HmcEvent::Eviction {
            sector: v.line_addr,
            dirty_blocks: v.dirty_blocks.len() as u32,
        });
        if v.is_dirty() {
            self.stats.writebacks += 1;
            self.dram_install(v.line_addr, true, events);
        }
    }

    /// Places a sector in the DRAM cache and its directory, writing back a dirty victim.
    pub fn dram_install(
        &mut self,
        sector: u64,
        dirty: bool,
        events: &mut Vec<HmcEvent>,
    ) -> Option<HmcEvent> {
        debug_assert_eq!(sector % self.cfg.sector_bytes(), 0);
        self.media.dram_writes += 1;
        events.push(HmcEvent::DramWrite { sector });
        let victim = self.dram.fill(sector, FillScope::Block, false, dirty);
        self.directory
            .entries
            .insert(sector, self.dram.map(sector).set);
        let v = victim?;
        self.directory.entries.remove(&v.line_addr);
        events.push(HmcEvent::DramEviction {
            sector: v.line_addr,
            dirty: v.is_dirty(),
        });
        if v.is_dirty() {
            self.media.nvram_writes += 1;
            let wb = HmcEvent::NvramWrite {
                sector: v.line_addr,
            };
            events.push(wb);
            Some(wb)
        } else {
            None
        }
    }

    /// Prefetches a whole sector into the sector cache. Never allocates in the DRAM cache.
    pub fn prefetch(&mut self, sector: u64) -> Vec<HmcEvent> {
        let mut events = Vec::new();
        if self.cache.contains_full_line(sector) {
            return events;
        }
        self.fetch_sector(sector, &mut events);
        events.push(HmcEvent::Fill {
            sector,
            prefetch: true,
        });
        let before = (0..self.cfg.cache.blocks_per_line as u64)
            .filter(|b| {
                self.cache
                    .contains_block(sector + b * self.cfg.cache.block_size)
            })
            .count() as u64;
        let victim = self.cache.fill(sector, FillScope::WholeLine, true, false);
        self.stats.prefetch_filled += self.cfg.cache.blocks_per_line as u64 - before;
        self.handle_cache_victim(victim, &mut events);
        events
    }

    fn issue_prefetches(&mut self, reqs: Vec<PrefetchRequest>) -> Vec<HmcEvent> {
        let before = self.dedup.dropped;
        let cache = &self.cache;
        let reqs = self.dedup.filter(reqs, |a| cache.contains_full_line(a));
        self.stats.prefetch_dropped += self.dedup.dropped - before;
        let mut events = Vec::new();
        for r in reqs {
            self.stats.prefetch_issued += 1;
            events.push(HmcEvent::PrefetchIssue { sector: r.addr });
            events.extend(self.prefetch(r.addr));
            self.stride.accept(&r);
            self.dedup.complete(r.addr);
        }
        events
    }

    /// Read on behalf of an upper-level prefetch. Counts media traffic but no demand
    /// statistics; `allocate` installs a missing sector in the sector cache.
    pub fn upper_prefetch_read(&mut self, block_addr: u64, allocate: bool) -> ServedBy {
        if self.cache.contains_block(block_addr) {
            return ServedBy::HmcCache;
        }
        let sector = self.sector_of(block_addr);
        let mut events = Vec::new();
        let served = self.fetch_sector(sector, &mut events);
        if allocate {
            let victim = self
                .cache
                .fill(block_addr, FillScope::WholeLine, false, false);
            self.handle_cache_victim(victim, &mut events);
        }
        served
    }

    /// Write-back of a dirty 64 B block from the level above.
    pub fn writeback(&mut self, block_addr: u64) -> Vec<HmcEvent> {
        let mut events = Vec::new();
        let victim = self.cache.fill(block_addr, FillScope::Block, false, true);
        self.handle_cache_victim(victim, &mut events);
        events
    }

    /// True when the directory and the DRAM cache hold exactly the same sectors.
    pub fn directory_coherent(&self) -> bool {
        let mut dram: Vec<u64> = self.dram.resident_lines().collect();
        let mut dir: Vec<u64> = self.directory.sectors().collect();
        dram.sort_unstable();
        dir.sort_unstable();
        dram == dir
            && dir
                .iter()
                .all(|&s| self.directory.location(s) == Some(self.dram.map(s).set))
    }

    /// Dirty 64 B blocks held in the sector cache, plus dirty sectors held in DRAM.
    pub fn dirty_blocks(&self) -> (Vec<u64>, Vec<u64>) {
        (
            self.cache.dirty_blocks().collect(),
            self.dram.dirty_blocks().collect(),
        )
    }
}
