//! Next-line and IP-indexed stride prefetchers, stream buffers and request deduplication.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cache::Outcome;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    OnMiss,
    Always,
    /// Misses and first references to prefetched blocks (tagged prefetching).
    OnPrefetchHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascending,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextLineConfig {
    pub trigger: Trigger,
    /// Lines fetched ahead per trigger; 0 disables the engine.
    pub depth: u32,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideConfig {
    /// Requests issued when a stream is first confirmed; 0 disables the engine.
    pub depth: u32,
    pub table_entries: u32,
    pub buffers: u32,
    pub buffer_entries: u32,
}

impl StrideConfig {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !self.table_entries.is_power_of_two() || self.table_entries > 1 << 16 {
            return Err(Error::Validation(format!(
                "{name}: table_entries must be a power of two no larger than 65536"
            )));
        }
        validate_buffers(name, self.buffers, self.buffer_entries)
    }
}

pub(crate) fn validate_buffers(name: &str, buffers: u32, entries: u32) -> Result<()> {
    if buffers == 0 || entries == 0 {
        return Err(Error::Validation(format!(
            "{name}: stream buffer count and size must be positive"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    NextLine,
    Stride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchRequest {
    /// Aligned to the owning level's line size.
    pub addr: u64,
    pub origin: Origin,
    pub trigger_pc: u64,
    /// Stream buffer the fill is destined for, when the level uses stream buffers.
    pub stream: Option<usize>,
}

/// Candidate address `base + k * step`, or `None` when it leaves `[0, limit)`.
fn offset_addr(base: u64, step: i64, k: i64, limit: u64) -> Option<u64> {
    let addr = base as i128 + step as i128 * k as i128;
    (0..limit as i128).contains(&addr).then_some(addr as u64)
}

pub struct NextLinePrefetcher {
    cfg: NextLineConfig,
    granularity: u64,
    addr_limit: u64,
    last_line: Option<u64>,
    last_delta_negative: bool,
}

impl NextLinePrefetcher {
    pub fn new(cfg: NextLineConfig, granularity: u64, addr_limit: u64) -> Self {
        Self {
            cfg,
            granularity,
            addr_limit,
            last_line: None,
            last_delta_negative: false,
        }
    }

    pub fn config(&self) -> &NextLineConfig {
        &self.cfg
    }

    pub fn granularity(&self) -> u64 {
        self.granularity
    }

    fn triggers(&self, outcome: Outcome) -> bool {
        match self.cfg.trigger {
            Trigger::OnMiss => outcome == Outcome::Miss,
            Trigger::Always => true,
            Trigger::OnPrefetchHit => outcome != Outcome::HitDemand,
        }
    }

    /// Observes one access at the owning level and returns the lines to prefetch.
    pub fn observe(&mut self, addr: u64, outcome: Outcome, pc: u64) -> Vec<PrefetchRequest> {
        let line = addr - addr % self.granularity;
        let delta_negative = self.last_line.is_some_and(|last| line < last);
        let descending = delta_negative && self.last_delta_negative;
        if self.last_line != Some(line) {
            self.last_delta_negative = delta_negative;
            self.last_line = Some(line);
        }

        if self.cfg.depth == 0 || !self.triggers(outcome) {
            return Vec::new();
        }
        let g = self.granularity as i64;
        let mut steps = vec![g];
        if self.cfg.direction == Direction::Both && descending {
            steps.push(-g);
        }
        let mut out = Vec::new();
        for step in steps {
            for k in 1..=self.cfg.depth as i64 {
                if let Some(a) = offset_addr(line, step, k, self.addr_limit) {
                    out.push(PrefetchRequest {
                        addr: a,
                        origin: Origin::NextLine,
                        trigger_pc: pc,
                        stream: None,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamBuffer {
    /// Address the next request for this stream will target (unaligned, stride-exact).
    pub next_addr: u64,
    pub stride: i64,
    pub entries: VecDeque<u64>,
    pub valid: bool,
    owner: u64,
}

/// A fixed set of FIFO stream buffers with round-robin replacement.
pub struct StreamBufferSet {
    buffers: Vec<StreamBuffer>,
    capacity: usize,
    next_victim: usize,
    block: u64,
    addr_limit: u64,
}

impl StreamBufferSet {
    pub fn new(count: usize, capacity: usize, block: u64, addr_limit: u64) -> Self {
        let empty = StreamBuffer {
            next_addr: 0,
            stride: 0,
            entries: VecDeque::with_capacity(capacity),
            valid: false,
            owner: 0,
        };
        Self {
            buffers: vec![empty; count],
            capacity,
            next_victim: 0,
            block,
            addr_limit,
        }
    }

    pub fn buffers(&self) -> &[StreamBuffer] {
        &self.buffers
    }

    fn align(&self, addr: u64) -> u64 {
        addr - addr % self.block
    }

    /// Claims a buffer for a new stream starting at `start`.
    pub fn allocate(&mut self, start: u64, stride: i64, owner: u64) -> usize {
        let id = self.next_victim;
        self.next_victim = (self.next_victim + 1) % self.buffers.len();
        let buf = &mut self.buffers[id];
        buf.next_addr = start;
        buf.stride = stride;
        buf.entries.clear();
        buf.valid = true;
        buf.owner = owner;
        id
    }

    pub fn owned_by(&self, id: usize, owner: u64) -> bool {
        self.buffers[id].valid && self.buffers[id].owner == owner
    }

    /// Block address of the stream's next request, advancing the stream past it.
    ///
    /// Strides smaller than a block step repeatedly until a new block is reached.
    pub fn advance(&mut self, id: usize) -> Option<u64> {
        let block = self.block;
        let limit = self.addr_limit;
        let buf = &mut self.buffers[id];
        if !buf.valid || buf.stride == 0 {
            return None;
        }
        let current = buf.next_addr - buf.next_addr % block;
        let mut next = buf.next_addr;
        loop {
            next = offset_addr(next, buf.stride, 1, limit).unwrap_or(u64::MAX);
            if next == u64::MAX || next - next % block != current {
                break;
            }
        }
        if current >= limit {
            buf.valid = false;
            return None;
        }
        if next == u64::MAX {
            // Stream ran off the address space: this is its last request.
            buf.stride = 0;
        } else {
            buf.next_addr = next;
        }
        Some(current)
    }

    /// Records a completed prefetch fill; drops the oldest entry when full.
    pub fn push(&mut self, id: usize, addr: u64) {
        let block = self.align(addr);
        let cap = self.capacity;
        let buf = &mut self.buffers[id];
        if !buf.valid {
            return;
        }
        if buf.entries.len() == cap {
            buf.entries.pop_front();
        }
        buf.entries.push_back(block);
    }

    pub fn contains(&self, addr: u64) -> bool {
        let block = self.align(addr);
        self.buffers
            .iter()
            .any(|b| b.valid && b.entries.contains(&block))
    }

    /// On a hit, retires the entries up to and including `addr`'s block and returns the buffer.
    pub fn probe(&mut self, addr: u64) -> Option<usize> {
        let block = self.align(addr);
        let (id, pos) = self.buffers.iter().enumerate().find_map(|(id, b)| {
            b.valid
                .then(|| b.entries.iter().position(|&e| e == block))
                .flatten()
                .map(|pos| (id, pos))
        })?;
        self.buffers[id].entries.drain(..=pos);
        Some(id)
    }

    pub fn resident_entries(&self) -> usize {
        self.buffers
            .iter()
            .filter(|b| b.valid)
            .map(|b| b.entries.len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrideState {
    Initial,
    Transient,
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrideEntry {
    pub pc_tag: u16,
    pub last_addr: u64,
    pub stride: i64,
    pub state: StrideState,
    stream: Option<usize>,
}

/// Folds a program counter into 16 bits.
pub fn pc_hash(pc: u64) -> u16 {
    (pc ^ (pc >> 16) ^ (pc >> 32) ^ (pc >> 48)) as u16
}

/// IP-indexed stride detector feeding a set of stream buffers.
pub struct StrideEngine {
    depth: u32,
    table: Vec<Option<StrideEntry>>,
    buffers: StreamBufferSet,
    addr_limit: u64,
}

impl StrideEngine {
    pub fn new(cfg: &StrideConfig, block: u64, addr_limit: u64) -> Self {
        Self {
            depth: cfg.depth,
            table: vec![None; cfg.table_entries as usize],
            buffers: StreamBufferSet::new(
                cfg.buffers as usize,
                cfg.buffer_entries as usize,
                block,
                addr_limit,
            ),
            addr_limit,
        }
    }

    pub fn entry(&self, pc: u64) -> Option<&StrideEntry> {
        let h = pc_hash(pc);
        self.table[h as usize % self.table.len()]
            .as_ref()
            .filter(|e| e.pc_tag == h)
    }

    pub fn buffers(&self) -> &StreamBufferSet {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut StreamBufferSet {
        &mut self.buffers
    }

    fn request(&self, addr: u64, pc: u64, stream: usize) -> PrefetchRequest {
        PrefetchRequest {
            addr,
            origin: Origin::Stride,
            trigger_pc: pc,
            stream: Some(stream),
        }
    }

    fn start_stream(&mut self, pc: u64, addr: u64, stride: i64) -> (usize, Vec<PrefetchRequest>) {
        let mut out = Vec::new();
        let block = self.buffers.block;
        let mut start = addr;
        loop {
            match offset_addr(start, stride, 1, self.addr_limit) {
                Some(a) => start = a,
                None => return (usize::MAX, out),
            }
            if start / block != addr / block {
                break;
            }
        }
        let id = self.buffers.allocate(start, stride, pc_hash(pc) as u64);
        for _ in 0..self.depth {
            match self.buffers.advance(id) {
                Some(a) => out.push(self.request(a, pc, id)),
                None => break,
            }
        }
        (id, out)
    }

    /// Trains on one demand access of `pc`.
    pub fn observe(&mut self, pc: u64, addr: u64) -> Vec<PrefetchRequest> {
        self.observe_with(pc, addr, false)
    }

    /// As [`observe`](Self::observe); `replenished` means a hit in this engine's buffers
    /// already issued this access's extension request.
    pub fn observe_with(&mut self, pc: u64, addr: u64, replenished: bool) -> Vec<PrefetchRequest> {
        let h = pc_hash(pc);
        let slot = h as usize % self.table.len();
        let entry = match self.table[slot] {
            Some(e) if e.pc_tag == h => e,
            _ => {
                self.table[slot] = Some(StrideEntry {
                    pc_tag: h,
                    last_addr: addr,
                    stride: 0,
                    state: StrideState::Initial,
                    stream: None,
                });
                return Vec::new();
            }
        };
        let delta = addr.wrapping_sub(entry.last_addr) as i64;
        if delta == 0 {
            return Vec::new();
        }
        let mut e = entry;
        e.last_addr = addr;
        let mut out = Vec::new();
        match e.state {
            StrideState::Initial => {
                e.stride = delta;
                e.state = StrideState::Transient;
            }
            StrideState::Transient if delta == e.stride => {
                e.state = StrideState::Steady;
                if self.depth > 0 {
                    let (id, reqs) = self.start_stream(pc, addr, delta);
                    e.stream = (id != usize::MAX).then_some(id);
                    out = reqs;
                }
            }
            StrideState::Transient => {
                e.stride = delta;
                e.state = StrideState::Initial;
            }
            StrideState::Steady if delta == e.stride => {
                if self.depth > 0 {
                    let live = e.stream.filter(|&id| self.buffers.owned_by(id, h as u64));
                    match live {
                        Some(_) if replenished => {}
                        Some(id) => {
                            if let Some(a) = self.buffers.advance(id) {
                                out.push(self.request(a, pc, id));
                            }
                        }
                        None => {
                            let (id, reqs) = self.start_stream(pc, addr, delta);
                            e.stream = (id != usize::MAX).then_some(id);
                            out = reqs;
                        }
                    }
                }
            }
            StrideState::Steady => {
                e.stride = delta;
                e.state = StrideState::Transient;
            }
        }
        self.table[slot] = Some(e);
        out
    }

    /// Probes the stream buffers; a hit yields the replenishment request.
    pub fn probe(&mut self, addr: u64) -> Option<Vec<PrefetchRequest>> {
        let id = self.buffers.probe(addr)?;
        let pc = self.buffers.buffers[id].owner;
        Some(
            self.buffers
                .advance(id)
                .map(|a| self.request(a, pc, id))
                .into_iter()
                .collect(),
        )
    }

    pub fn accept(&mut self, req: &PrefetchRequest) {
        if let Some(id) = req.stream {
            self.buffers.push(id, req.addr);
        }
    }
}

/// Drops requests for blocks already resident or already requested.
#[derive(Debug, Default)]
pub struct Dedup {
    in_flight: HashSet<u64>,
    pub dropped: u64,
}

impl Dedup {
    pub fn filter(
        &mut self,
        requests: Vec<PrefetchRequest>,
        resident: impl Fn(u64) -> bool,
    ) -> Vec<PrefetchRequest> {
        let mut out = Vec::with_capacity(requests.len());
        for r in requests {
            if resident(r.addr) || !self.in_flight.insert(r.addr) {
                self.dropped += 1;
                continue;
            }
            out.push(r);
        }
        out
    }

    /// Marks a request's fill as done.
    pub fn complete(&mut self, addr: u64) {
        self.in_flight.remove(&addr);
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIMIT: u64 = 1 << 40;

    fn nl(trigger: Trigger, depth: u32, g: u64, direction: Direction) -> NextLinePrefetcher {
        NextLinePrefetcher::new(
            NextLineConfig {
                trigger,
                depth,
                direction,
            },
            g,
            LIMIT,
        )
    }

    fn stride(depth: u32) -> StrideEngine {
        StrideEngine::new(
            &StrideConfig {
                depth,
                table_entries: 64,
                buffers: 8,
                buffer_entries: 32,
            },
            64,
            LIMIT,
        )
    }

    fn addrs(reqs: &[PrefetchRequest]) -> Vec<u64> {
        reqs.iter().map(|r| r.addr).collect()
    }

    #[test]
    fn next_line_on_miss() {
        let mut p = nl(Trigger::OnMiss, 2, 64, Direction::Ascending);
        assert_eq!(
            addrs(&p.observe(0x1000, Outcome::Miss, 0)),
            vec![0x1040, 0x1080]
        );
        assert!(p.observe(0x1000, Outcome::HitDemand, 0).is_empty());
    }

    #[test]
    fn next_line_selective_trigger_at_sector_granularity() {
        let mut p = nl(Trigger::OnPrefetchHit, 1, 256, Direction::Ascending);
        assert_eq!(
            addrs(&p.observe(0x2000, Outcome::HitOnPrefetchedBlock, 0)),
            vec![0x2100]
        );
        assert!(p.observe(0x2040, Outcome::HitDemand, 0).is_empty());
        assert_eq!(addrs(&p.observe(0x2040, Outcome::Miss, 0)), vec![0x2100]);
    }

    #[test]
    fn next_line_always_trigger() {
        let mut p = nl(Trigger::Always, 1, 64, Direction::Ascending);
        assert_eq!(addrs(&p.observe(0x0, Outcome::HitDemand, 0)), vec![0x40]);
    }

    #[test]
    fn next_line_descending_needs_a_run() {
        let mut p = nl(Trigger::OnMiss, 2, 64, Direction::Both);
        assert_eq!(
            addrs(&p.observe(0x1000, Outcome::Miss, 0)),
            vec![0x1040, 0x1080]
        );
        // One negative delta is not yet a run.
        assert_eq!(
            addrs(&p.observe(0x0FC0, Outcome::Miss, 0)),
            vec![0x1000, 0x1040]
        );
        assert_eq!(
            addrs(&p.observe(0x0F80, Outcome::Miss, 0)),
            vec![0x0FC0, 0x1000, 0x0F40, 0x0F00]
        );
        let mut asc = nl(Trigger::OnMiss, 1, 64, Direction::Ascending);
        asc.observe(0x1000, Outcome::Miss, 0);
        asc.observe(0x0FC0, Outcome::Miss, 0);
        assert_eq!(addrs(&asc.observe(0x0F80, Outcome::Miss, 0)), vec![0x0FC0]);
    }

    #[test]
    fn next_line_drops_out_of_range() {
        let mut p = NextLinePrefetcher::new(
            NextLineConfig {
                trigger: Trigger::OnMiss,
                depth: 4,
                direction: Direction::Ascending,
            },
            64,
            0x1000,
        );
        assert_eq!(
            addrs(&p.observe(0xF40, Outcome::Miss, 0)),
            vec![0xF80, 0xFC0]
        );
    }

    #[test]
    fn next_line_depth_zero_is_silent() {
        let mut p = nl(Trigger::Always, 0, 64, Direction::Both);
        for a in [0x3000u64, 0x2000, 0x1000, 0x0] {
            assert!(p.observe(a, Outcome::Miss, 0).is_empty());
        }
    }

    #[test]
    fn stride_confirms_on_third_access() {
        let mut s = stride(4);
        assert!(s.observe(0x400, 0x1000).is_empty());
        assert!(s.observe(0x400, 0x1040).is_empty());
        assert_eq!(s.entry(0x400).unwrap().state, StrideState::Transient);
        assert_eq!(
            addrs(&s.observe(0x400, 0x1080)),
            vec![0x10C0, 0x1100, 0x1140, 0x1180]
        );
        assert_eq!(s.entry(0x400).unwrap().state, StrideState::Steady);
        // Each further confirmation extends the stream by one.
        assert_eq!(addrs(&s.observe(0x400, 0x10C0)), vec![0x11C0]);
    }

    #[test]
    fn stride_broken_before_steady() {
        let mut s = stride(4);
        assert!(s.observe(0x400, 0x1000).is_empty());
        assert!(s.observe(0x400, 0x1040).is_empty());
        assert!(s.observe(0x400, 0x2000).is_empty());
        assert_eq!(s.entry(0x400).unwrap().state, StrideState::Initial);
    }

    #[test]
    fn stride_zero_never_emits() {
        let mut s = stride(4);
        for _ in 0..10 {
            assert!(s.observe(0x400, 0x1000).is_empty());
        }
    }

    #[test]
    fn steady_mismatch_demotes_to_transient() {
        let mut s = stride(2);
        for a in [0x0u64, 0x100, 0x200] {
            s.observe(0x8, a);
        }
        assert!(s.observe(0x8, 0x9000).is_empty());
        let e = s.entry(0x8).unwrap();
        assert_eq!(e.state, StrideState::Transient);
        assert_eq!(e.stride, 0x9000 - 0x200);
    }

    #[test]
    fn negative_stride_stream() {
        let mut s = stride(2);
        s.observe(0x8, 0x10000);
        s.observe(0x8, 0xFF00);
        assert_eq!(addrs(&s.observe(0x8, 0xFE00)), vec![0xFD00, 0xFC00]);
    }

    #[test]
    fn small_stride_requests_distinct_blocks() {
        let mut s = stride(2);
        s.observe(0x8, 0x1000);
        s.observe(0x8, 0x1010);
        assert_eq!(addrs(&s.observe(0x8, 0x1020)), vec![0x1040, 0x1080]);
    }

    #[test]
    fn pc_aliasing_replaces_entry() {
        let mut s = stride(4);
        let a = 0x400u64;
        // Same slot (low 6 bits of hash), different tag.
        let b = a + 64;
        assert_eq!(pc_hash(a) % 64, pc_hash(b) % 64);
        s.observe(a, 0x0);
        s.observe(a, 0x40);
        s.observe(b, 0x5000);
        assert!(s.entry(a).is_none());
        assert_eq!(s.entry(b).unwrap().state, StrideState::Initial);
    }

    #[test]
    fn stream_buffer_probe_retires_and_replenishes() {
        let mut s = stride(2);
        s.observe(0x400, 0x1000);
        s.observe(0x400, 0x1040);
        let reqs = s.observe(0x400, 0x1080);
        assert_eq!(addrs(&reqs), vec![0x10C0, 0x1100]);
        for r in &reqs {
            s.accept(r);
        }
        let repl = s.probe(0x10C0).unwrap();
        assert_eq!(addrs(&repl), vec![0x1140]);
        let live: Vec<_> = s.buffers().buffers().iter().filter(|b| b.valid).collect();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].entries, VecDeque::from(vec![0x1100]));
        assert!(s.probe(0x9000).is_none());
    }

    #[test]
    fn probe_with_no_buffers_misses() {
        let mut set = StreamBufferSet::new(8, 32, 64, LIMIT);
        assert!(set.probe(0x1000).is_none());
    }

    #[test]
    fn buffer_capacity_drops_oldest() {
        let mut set = StreamBufferSet::new(8, 32, 64, LIMIT);
        let id = set.allocate(0, 64, 1);
        for i in 0..33u64 {
            set.push(id, i * 64);
        }
        let b = &set.buffers()[id];
        assert_eq!(b.entries.len(), 32);
        assert_eq!(b.entries.front(), Some(&64));
        assert!(!set.contains(0));
    }

    #[test]
    fn buffers_allocate_round_robin() {
        let mut set = StreamBufferSet::new(8, 32, 64, LIMIT);
        let ids: Vec<usize> = (0..10).map(|i| set.allocate(i * 0x1000, 64, i)).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5, 6, 7, 0, 1]);
        assert_eq!(set.buffers().len(), 8);
    }

    #[test]
    fn dedup_rules() {
        let req = |addr| PrefetchRequest {
            addr,
            origin: Origin::NextLine,
            trigger_pc: 0,
            stream: None,
        };
        let mut d = Dedup::default();
        let out = d.filter(vec![req(0x40), req(0x80), req(0x40)], |a| a == 0x80);
        assert_eq!(addrs(&out), vec![0x40]);
        assert_eq!(d.dropped, 2);
        assert!(d.filter(vec![req(0x40)], |_| false).is_empty());
        d.complete(0x40);
        assert_eq!(addrs(&d.filter(vec![req(0x40)], |_| false)), vec![0x40]);
    }
}
