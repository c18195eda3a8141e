//! Set-associative cache with optional sectoring, true LRU and write-back/write-allocate.
//!
//! A line holds `blocks_per_line` independently valid blocks. With one block per line
//! this is an ordinary cache. Each block carries a valid, dirty and prefetch bit; the
//! prefetch bit is set when a prefetch fill brought the block in and cleared on the
//! first demand reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::AccessKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheGeometry {
    pub total_size: u64,
    pub block_size: u64,
    pub blocks_per_line: u32,
    pub ways: u32,
    pub tag_latency: u64,
    pub data_latency: u64,
    pub write_back: bool,
}

impl CacheGeometry {
    /// 32 KB, 64 B blocks, 8-way, 3/3 cycles.
    pub fn l1() -> Self {
        Self {
            total_size: 32 << 10,
            block_size: 64,
            blocks_per_line: 1,
            ways: 8,
            tag_latency: 3,
            data_latency: 3,
            write_back: true,
        }
    }

    /// 2 MB, 64 B blocks, 16-way, 11/11 cycles.
    pub fn l2() -> Self {
        Self {
            total_size: 2 << 20,
            block_size: 64,
            blocks_per_line: 1,
            ways: 16,
            tag_latency: 11,
            data_latency: 11,
            write_back: true,
        }
    }

    /// 8 MB sector cache, 256 B lines of four 64 B blocks, 16-way, 17/17 cycles.
    pub fn hmc() -> Self {
        Self {
            total_size: 8 << 20,
            block_size: 64,
            blocks_per_line: 4,
            ways: 16,
            tag_latency: 17,
            data_latency: 17,
            write_back: true,
        }
    }

    pub fn line_bytes(&self) -> u64 {
        self.block_size * self.blocks_per_line as u64
    }

    pub fn sets(&self) -> u64 {
        self.total_size / (self.line_bytes() * self.ways as u64)
    }

    pub fn hit_latency(&self) -> u64 {
        self.tag_latency + self.data_latency
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("{name}: {msg}")));
        if !self.total_size.is_power_of_two() || !self.block_size.is_power_of_two() {
            return fail("total_size and block_size must be powers of two".into());
        }
        if ![1, 2, 4, 8].contains(&self.blocks_per_line) {
            return fail(format!(
                "blocks_per_line must be 1, 2, 4 or 8, got {}",
                self.blocks_per_line
            ));
        }
        if self.ways == 0 || self.ways > 255 {
            return fail(format!("ways must be in 1..=255, got {}", self.ways));
        }
        let per_set = self.line_bytes() * self.ways as u64;
        if self.total_size < per_set || !self.total_size.is_multiple_of(per_set) {
            return fail(format!(
                "total_size {} is not a positive multiple of line_bytes * ways = {per_set}",
                self.total_size
            ));
        }
        if !self.write_back {
            return fail("only write-back caches are modeled".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mapping {
    pub set: u64,
    pub tag: u64,
    pub block: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheLine {
    pub tag: u64,
    pub valid: u8,
    pub dirty: u8,
    pub prefetch: u8,
    /// 0 = most recently used.
    pub lru_rank: u8,
}

impl CacheLine {
    pub fn is_allocated(&self) -> bool {
        self.valid != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    HitDemand,
    HitOnPrefetchedBlock,
    Miss,
}

impl Outcome {
    pub fn is_hit(self) -> bool {
        self != Outcome::Miss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupResult {
    pub outcome: Outcome,
    /// Tag + data on a hit, tag only on a miss.
    pub latency: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillScope {
    Block,
    WholeLine,
}

/// A line pushed out by a fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Victim {
    pub line_addr: u64,
    pub valid_blocks: u32,
    /// Byte addresses of the dirty blocks that must be written back.
    pub dirty_blocks: Vec<u64>,
    /// Blocks that were prefetched and never referenced.
    pub unused_prefetches: u32,
}

impl Victim {
    pub fn is_dirty(&self) -> bool {
        !self.dirty_blocks.is_empty()
    }
}

pub struct Cache {
    geom: CacheGeometry,
    sets: u64,
    ways: usize,
    lines: Vec<CacheLine>,
}

impl Cache {
    pub fn new(geom: CacheGeometry) -> Result<Self> {
        geom.validate("cache")?;
        let sets = geom.sets();
        let ways = geom.ways as usize;
        let mut lines = vec![CacheLine::default(); sets as usize * ways];
        for set in lines.chunks_mut(ways) {
            for (rank, line) in set.iter_mut().enumerate() {
                line.lru_rank = rank as u8;
            }
        }
        Ok(Self {
            geom,
            sets,
            ways,
            lines,
        })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    pub fn map(&self, addr: u64) -> Mapping {
        let line_bytes = self.geom.line_bytes();
        let line = addr / line_bytes;
        Mapping {
            set: line % self.sets,
            tag: line / self.sets,
            block: ((addr % line_bytes) / self.geom.block_size) as u32,
        }
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr - addr % self.geom.line_bytes()
    }

    pub fn block_addr(&self, addr: u64) -> u64 {
        addr - addr % self.geom.block_size
    }

    fn full_mask(&self) -> u8 {
        ((1u16 << self.geom.blocks_per_line) - 1) as u8
    }

    fn set_range(&self, set: u64) -> std::ops::Range<usize> {
        let start = set as usize * self.ways;
        start..start + self.ways
    }

    fn find(&self, m: &Mapping) -> Option<usize> {
        self.set_range(m.set)
            .find(|&i| self.lines[i].is_allocated() && self.lines[i].tag == m.tag)
    }

    fn touch(&mut self, set: u64, idx: usize) {
        let old = self.lines[idx].lru_rank;
        for i in self.set_range(set) {
            if self.lines[i].lru_rank < old {
                self.lines[i].lru_rank += 1;
            }
        }
        self.lines[idx].lru_rank = 0;
    }

    /// Demand lookup. Updates prefetch/dirty bits and, when `touch_lru`, recency on a hit.
    pub fn lookup(&mut self, addr: u64, kind: AccessKind, touch_lru: bool) -> LookupResult {
        let m = self.map(addr);
        let bit = 1u8 << m.block;
        let hit = self.find(&m).filter(|&i| self.lines[i].valid & bit != 0);
        let Some(idx) = hit else {
            return LookupResult {
                outcome: Outcome::Miss,
                latency: self.geom.tag_latency,
            };
        };
        let line = &mut self.lines[idx];
        let outcome = if line.prefetch & bit != 0 {
            line.prefetch &= !bit;
            Outcome::HitOnPrefetchedBlock
        } else {
            Outcome::HitDemand
        };
        if kind.is_write() {
            line.dirty |= bit;
        }
        if touch_lru {
            self.touch(m.set, idx);
        }
        LookupResult {
            outcome,
            latency: self.geom.hit_latency(),
        }
    }

    /// True when the block holding `addr` is valid. No state change.
    pub fn contains_block(&self, addr: u64) -> bool {
        let m = self.map(addr);
        self.find(&m)
            .is_some_and(|i| self.lines[i].valid & (1 << m.block) != 0)
    }

    /// True when a line for `addr`'s tag is allocated, whatever its block states.
    pub fn contains_line(&self, addr: u64) -> bool {
        self.find(&self.map(addr)).is_some()
    }

    /// True when every block of `addr`'s line is valid.
    pub fn contains_full_line(&self, addr: u64) -> bool {
        let m = self.map(addr);
        let full = self.full_mask();
        self.find(&m).is_some_and(|i| self.lines[i].valid == full)
    }

    pub fn is_dirty(&self, addr: u64) -> bool {
        let m = self.map(addr);
        self.find(&m)
            .is_some_and(|i| self.lines[i].dirty & (1 << m.block) != 0)
    }

    /// Installs `addr`'s block (or its whole line) and makes the line MRU.
    ///
    /// Blocks already valid keep their dirty and prefetch state; `is_prefetch` marks only
    /// the blocks this fill makes valid. `is_write_allocate` dirties the addressed block.
    pub fn fill(
        &mut self,
        addr: u64,
        scope: FillScope,
        is_prefetch: bool,
        is_write_allocate: bool,
    ) -> Option<Victim> {
        let m = self.map(addr);
        let bit = 1u8 << m.block;
        let mask = match scope {
            FillScope::Block => bit,
            FillScope::WholeLine => self.full_mask(),
        };

        if let Some(idx) = self.find(&m) {
            let line = &mut self.lines[idx];
            let fresh = mask & !line.valid;
            line.valid |= mask;
            if is_prefetch {
                line.prefetch |= fresh;
            }
            if is_write_allocate {
                line.dirty |= bit;
                line.prefetch &= !bit;
            }
            self.touch(m.set, idx);
            return None;
        }

        let range = self.set_range(m.set);
        let idx = range
            .clone()
            .filter(|&i| !self.lines[i].is_allocated())
            .min_by_key(|&i| self.lines[i].lru_rank)
            .or_else(|| range.max_by_key(|&i| self.lines[i].lru_rank))
            .expect("set has at least one way");

        let old = self.lines[idx];
        let victim = old.is_allocated().then(|| {
            let base = (old.tag * self.sets + m.set) * self.geom.line_bytes();
            Victim {
                line_addr: base,
                valid_blocks: old.valid.count_ones(),
                dirty_blocks: (0..self.geom.blocks_per_line)
                    .filter(|b| old.dirty & (1 << b) != 0)
                    .map(|b| base + b as u64 * self.geom.block_size)
                    .collect(),
                unused_prefetches: old.prefetch.count_ones(),
            }
        });

        self.lines[idx] = CacheLine {
            tag: m.tag,
            valid: mask,
            dirty: if is_write_allocate { bit } else { 0 },
            prefetch: if is_prefetch && !is_write_allocate {
                mask
            } else {
                0
            },
            lru_rank: old.lru_rank,
        };
        self.touch(m.set, idx);
        victim
    }

    /// Drops the line holding `addr`, returning it as a victim if it was allocated.
    pub fn invalidate(&mut self, addr: u64) -> Option<Victim> {
        let m = self.map(addr);
        let idx = self.find(&m)?;
        let old = self.lines[idx];
        let base = (old.tag * self.sets + m.set) * self.geom.line_bytes();
        self.lines[idx].valid = 0;
        self.lines[idx].dirty = 0;
        self.lines[idx].prefetch = 0;
        Some(Victim {
            line_addr: base,
            valid_blocks: old.valid.count_ones(),
            dirty_blocks: (0..self.geom.blocks_per_line)
                .filter(|b| old.dirty & (1 << b) != 0)
                .map(|b| base + b as u64 * self.geom.block_size)
                .collect(),
            unused_prefetches: old.prefetch.count_ones(),
        })
    }

    /// Line addresses of every allocated line, in set/way order.
    pub fn resident_lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_allocated())
            .map(|(i, l)| (l.tag * self.sets + (i / self.ways) as u64) * self.geom.line_bytes())
    }

    /// Byte addresses of every dirty block.
    pub fn dirty_blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.lines.iter().enumerate().flat_map(move |(i, l)| {
            let base = (l.tag * self.sets + (i / self.ways) as u64) * self.geom.line_bytes();
            (0..self.geom.blocks_per_line)
                .filter(move |b| l.dirty & (1 << b) != 0)
                .map(move |b| base + b as u64 * self.geom.block_size)
        })
    }

    /// The lines of one set, for invariant checks.
    pub fn set_lines(&self, set: u64) -> &[CacheLine] {
        &self.lines[self.set_range(set)]
    }

    pub fn num_sets(&self) -> u64 {
        self.sets
    }
}
