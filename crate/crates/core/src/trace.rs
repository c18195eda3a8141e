//! Trace records, the text and binary trace formats, and synthetic workload generators.
//!
//! Text format, one record per line:
//!
//! ```text
//! # comment
//! <icount> <R|W|I> <hex addr> <hex pc>
//! ```
//!
//! Binary format: fixed 25-byte little-endian records laid out as
//! `icount: u64 | kind: u8 | addr: u64 | pc: u64`, kind 0 = read, 1 = write, 2 = ifetch.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atomic access granularity of the generators.
pub const GEN_BLOCK: u64 = 64;

/// Size in bytes of one binary trace record.
pub const BINARY_RECORD_BYTES: usize = 25;

/// Program counters used by the generators. Each pattern is issued by one static load,
/// key-value GETs and SETs use two distinct ones.
pub const GEN_PC: u64 = 0x40_0000;
pub const KV_GET_PC: u64 = 0x40_1000;
pub const KV_SET_PC: u64 = 0x40_2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
    IFetch,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        self == AccessKind::Write
    }

    fn letter(self) -> char {
        match self {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
            AccessKind::IFetch => 'I',
        }
    }

    fn code(self) -> u8 {
        match self {
            AccessKind::Read => 0,
            AccessKind::Write => 1,
            AccessKind::IFetch => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AccessKind::Read),
            1 => Some(AccessKind::Write),
            2 => Some(AccessKind::IFetch),
            _ => None,
        }
    }
}

/// One trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryAccess {
    /// Cumulative committed instructions at the time of the access.
    pub icount: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub pc: u64,
}

impl MemoryAccess {
    pub fn new(icount: u64, kind: AccessKind, addr: u64, pc: u64) -> Self {
        Self {
            icount,
            kind,
            addr,
            pc,
        }
    }
}

impl fmt::Display for MemoryAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:#x} {:#x}",
            self.icount,
            self.kind.letter(),
            self.addr,
            self.pc
        )
    }
}

fn parse_hex(field: &str) -> Option<u64> {
    let digits = field
        .strip_prefix("0x")
        .or_else(|| field.strip_prefix("0X"))
        .unwrap_or(field);
    u64::from_str_radix(digits, 16).ok()
}

fn parse_line(line: &str, lineno: usize) -> Result<MemoryAccess> {
    let bad = |msg: &str| Error::Parse {
        line: lineno,
        msg: format!("{msg}: {line:?}"),
    };
    let mut fields = line.split_whitespace();
    let (Some(icount), Some(kind), Some(addr), Some(pc), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(bad("expected `<icount> <R|W|I> <hex addr> <hex pc>`"));
    };
    let icount = icount.parse::<u64>().map_err(|_| bad("bad icount"))?;
    let kind = match kind {
        "R" => AccessKind::Read,
        "W" => AccessKind::Write,
        "I" => AccessKind::IFetch,
        _ => return Err(bad("bad access kind")),
    };
    let addr = parse_hex(addr).ok_or_else(|| bad("bad address"))?;
    let pc = parse_hex(pc).ok_or_else(|| bad("bad pc"))?;
    Ok(MemoryAccess::new(icount, kind, addr, pc))
}

/// Streaming reader over a text trace.
pub struct TextTraceReader<R> {
    lines: std::io::Lines<R>,
    lineno: usize,
    prev_icount: u64,
}

impl<R: BufRead> TextTraceReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            lineno: 0,
            prev_icount: 0,
        }
    }
}

impl<R: BufRead> Iterator for TextTraceReader<R> {
    type Item = Result<MemoryAccess>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.lineno + 1,
                        msg: e.to_string(),
                    }))
                }
            };
            self.lineno += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec = match parse_line(trimmed, self.lineno) {
                Ok(rec) => rec,
                Err(e) => return Some(Err(e)),
            };
            if rec.icount < self.prev_icount {
                return Some(Err(Error::IcountRegression {
                    index: self.lineno,
                    icount: rec.icount,
                    prev: self.prev_icount,
                }));
            }
            self.prev_icount = rec.icount;
            return Some(Ok(rec));
        }
    }
}

/// Parses a whole text trace held in memory.
pub fn parse_text_trace(text: &str) -> Result<Vec<MemoryAccess>> {
    TextTraceReader::new(text.as_bytes()).collect()
}

pub fn write_text_trace<W: Write>(mut out: W, records: &[MemoryAccess]) -> std::io::Result<()> {
    for rec in records {
        writeln!(out, "{rec}")?;
    }
    Ok(())
}

pub fn encode_binary(records: &[MemoryAccess]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * BINARY_RECORD_BYTES);
    for rec in records {
        out.extend_from_slice(&rec.icount.to_le_bytes());
        out.push(rec.kind.code());
        out.extend_from_slice(&rec.addr.to_le_bytes());
        out.extend_from_slice(&rec.pc.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<MemoryAccess>> {
    let whole = bytes.len() / BINARY_RECORD_BYTES * BINARY_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Truncated { offset: whole });
    }
    let word = |chunk: &[u8], at: usize| {
        u64::from_le_bytes(chunk[at..at + 8].try_into().expect("8-byte slice"))
    };
    bytes
        .chunks_exact(BINARY_RECORD_BYTES)
        .enumerate()
        .map(|(i, chunk)| {
            let kind = AccessKind::from_code(chunk[8]).ok_or_else(|| Error::BadRecord {
                offset: i * BINARY_RECORD_BYTES + 8,
                msg: format!("unknown access kind {}", chunk[8]),
            })?;
            Ok(MemoryAccess::new(
                word(chunk, 0),
                kind,
                word(chunk, 9),
                word(chunk, 17),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Sequential,
    Strided,
    RandomUniform,
    Zipfian,
    PointerChase,
    KvMix,
}

/// Parameters of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceGenSpec {
    pub pattern: Pattern,
    pub base_addr: u64,
    pub footprint: u64,
    pub count: u64,
    /// Byte stride, strided pattern only.
    pub stride: i64,
    pub zipf_exponent: f64,
    /// Probability that a record (or key-value operation) is a read.
    pub read_ratio: f64,
    /// Object size of the key-value pattern.
    pub value_size: u64,
    /// Mean instructions between consecutive memory accesses.
    pub instrs_per_access: f64,
    pub seed: u64,
}

impl Default for TraceGenSpec {
    fn default() -> Self {
        Self {
            pattern: Pattern::Sequential,
            base_addr: 0,
            footprint: 32 << 20,
            count: 100_000,
            stride: 256,
            zipf_exponent: 0.99,
            read_ratio: 1.0,
            value_size: 4096,
            instrs_per_access: 4.0,
            seed: 1,
        }
    }
}

impl TraceGenSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.footprint < GEN_BLOCK {
            return fail(format!(
                "footprint must be at least {GEN_BLOCK} bytes, got {}",
                self.footprint
            ));
        }
        if self.count == 0 {
            return fail("count must be positive".into());
        }
        if self.base_addr.checked_add(self.footprint).is_none() {
            return fail("base_addr + footprint overflows the address space".into());
        }
        if self.pattern == Pattern::Strided && self.stride == 0 {
            return fail("strided pattern needs a non-zero stride".into());
        }
        if matches!(self.pattern, Pattern::Zipfian | Pattern::KvMix)
            && !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite())
        {
            return fail(format!(
                "zipf_exponent must be a positive real, got {}",
                self.zipf_exponent
            ));
        }
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return fail(format!(
                "read_ratio must lie in [0, 1], got {}",
                self.read_ratio
            ));
        }
        if !(self.instrs_per_access >= 1.0 && self.instrs_per_access.is_finite()) {
            return fail(format!(
                "instrs_per_access must be >= 1, got {}",
                self.instrs_per_access
            ));
        }
        if self.pattern == Pattern::KvMix
            && (self.value_size < GEN_BLOCK
                || !self.value_size.is_multiple_of(GEN_BLOCK)
                || self.value_size > self.footprint)
        {
            return fail(format!(
                "value_size must be a multiple of {GEN_BLOCK} no larger than the footprint, got {}",
                self.value_size
            ));
        }
        Ok(())
    }

    fn blocks(&self) -> u64 {
        self.footprint / GEN_BLOCK
    }
}

/// Full-period permutation of `0..n` without materializing it.
#[derive(Debug, Clone, Copy)]
struct Scramble {
    n: u64,
    offset: u64,
}

impl Scramble {
    // Prime, so coprime with every n below it.
    const MULT: u64 = 2_654_435_761;

    fn apply(&self, i: u64) -> u64 {
        let mult = if self.n.is_multiple_of(Self::MULT) {
            1
        } else {
            Self::MULT
        };
        ((i as u128 * mult as u128 + self.offset as u128) % self.n as u128) as u64
    }
}

enum PatternState {
    Sequential {
        next: u64,
    },
    Strided {
        k: u64,
    },
    RandomUniform,
    Zipfian(Zipf<f64>),
    PointerChase {
        next: Vec<u32>,
        cur: u32,
    },
    KvMix {
        popularity: Zipf<f64>,
        scramble: Scramble,
        blocks_per_value: u64,
        // (object base, next block, blocks left, kind, pc)
        op: Option<(u64, u64, u64, AccessKind, u64)>,
    },
}

/// Deterministic streaming generator for a [`TraceGenSpec`].
pub struct TraceGenerator {
    spec: TraceGenSpec,
    rng: ChaCha8Rng,
    gap: Geometric,
    state: PatternState,
    emitted: u64,
    icount: u64,
}

impl TraceGenerator {
    pub fn new(spec: TraceGenSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let gap = Geometric::new(1.0 / spec.instrs_per_access)
            .map_err(|e| Error::Validation(format!("instrs_per_access: {e}")))?;
        let blocks = spec.blocks();
        let zipf = |n: u64| {
            Zipf::new(n as f64, spec.zipf_exponent)
                .map_err(|e| Error::Validation(format!("zipf: {e}")))
        };
        let state = match spec.pattern {
            Pattern::Sequential => PatternState::Sequential { next: 0 },
            Pattern::Strided => PatternState::Strided { k: 0 },
            Pattern::RandomUniform => PatternState::RandomUniform,
            Pattern::Zipfian => PatternState::Zipfian(zipf(blocks)?),
            Pattern::PointerChase => {
                if blocks > u32::MAX as u64 {
                    return Err(Error::Validation(
                        "pointer_chase footprint too large".into(),
                    ));
                }
                // Sattolo's algorithm: a single cycle through every block.
                let mut order: Vec<u32> = (0..blocks as u32).collect();
                for i in (1..order.len()).rev() {
                    let j = rng.random_range(0..i);
                    order.swap(i, j);
                }
                let mut next = vec![0u32; order.len()];
                for w in 0..order.len() {
                    next[order[w] as usize] = order[(w + 1) % order.len()];
                }
                PatternState::PointerChase {
                    next,
                    cur: order[0],
                }
            }
            Pattern::KvMix => {
                let objects = spec.footprint / spec.value_size;
                PatternState::KvMix {
                    popularity: zipf(objects)?,
                    scramble: Scramble {
                        n: objects,
                        offset: rng.random_range(0..objects),
                    },
                    blocks_per_value: spec.value_size / GEN_BLOCK,
                    op: None,
                }
            }
        };
        Ok(Self {
            spec,
            rng,
            gap,
            state,
            emitted: 0,
            icount: 0,
        })
    }

    fn read_or_write(&mut self) -> AccessKind {
        if self.spec.read_ratio >= 1.0 || self.rng.random::<f64>() < self.spec.read_ratio {
            AccessKind::Read
        } else {
            AccessKind::Write
        }
    }

    fn next_access(&mut self) -> (u64, AccessKind, u64) {
        let blocks = self.spec.blocks();
        let base = self.spec.base_addr;
        match &mut self.state {
            PatternState::Sequential { next } => {
                let block = *next;
                *next = (*next + 1) % blocks;
                let kind = self.read_or_write();
                (base + block * GEN_BLOCK, kind, GEN_PC)
            }
            PatternState::Strided { k } => {
                let offset = (*k as i128 * self.spec.stride as i128)
                    .rem_euclid(self.spec.footprint as i128) as u64;
                *k += 1;
                let kind = self.read_or_write();
                (base + offset, kind, GEN_PC)
            }
            PatternState::RandomUniform => {
                let block = self.rng.random_range(0..blocks);
                let kind = self.read_or_write();
                (base + block * GEN_BLOCK, kind, GEN_PC)
            }
            PatternState::Zipfian(zipf) => {
                let rank = zipf.sample(&mut self.rng) as u64;
                let kind = self.read_or_write();
                (base + (rank - 1) * GEN_BLOCK, kind, GEN_PC)
            }
            PatternState::PointerChase { next, cur } => {
                let block = *cur as u64;
                *cur = next[*cur as usize];
                let kind = self.read_or_write();
                (base + block * GEN_BLOCK, kind, GEN_PC)
            }
            PatternState::KvMix {
                popularity,
                scramble,
                blocks_per_value,
                op,
            } => {
                if op.is_none() {
                    let rank = popularity.sample(&mut self.rng) as u64;
                    let object = scramble.apply(rank - 1);
                    let is_get = self.spec.read_ratio >= 1.0
                        || self.rng.random::<f64>() < self.spec.read_ratio;
                    let (kind, pc) = if is_get {
                        (AccessKind::Read, KV_GET_PC)
                    } else {
                        (AccessKind::Write, KV_SET_PC)
                    };
                    *op = Some((
                        base + object * self.spec.value_size,
                        0,
                        *blocks_per_value,
                        kind,
                        pc,
                    ));
                }
                let (obj, block, left, kind, pc) = op.as_mut().expect("op in progress");
                let rec = (*obj + *block * GEN_BLOCK, *kind, *pc);
                *block += 1;
                *left -= 1;
                if *left == 0 {
                    *op = None;
                }
                rec
            }
        }
    }
}

impl Iterator for TraceGenerator {
    type Item = MemoryAccess;

    fn next(&mut self) -> Option<MemoryAccess> {
        if self.emitted == self.spec.count {
            return None;
        }
        self.emitted += 1;
        self.icount += 1 + self.gap.sample(&mut self.rng);
        let (addr, kind, pc) = self.next_access();
        Some(MemoryAccess::new(self.icount, kind, addr, pc))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.count - self.emitted) as usize;
        (left, Some(left))
    }
}

pub fn generate(spec: &TraceGenSpec) -> Result<Vec<MemoryAccess>> {
    Ok(TraceGenerator::new(spec.clone())?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(pattern: Pattern) -> TraceGenSpec {
        TraceGenSpec {
            pattern,
            count: 3,
            footprint: 1 << 20,
            ..TraceGenSpec::default()
        }
    }

    #[test]
    fn parses_single_record() {
        let t = parse_text_trace("100 R 0x1000 0x400").unwrap();
        assert_eq!(
            t,
            vec![MemoryAccess::new(100, AccessKind::Read, 0x1000, 0x400)]
        );
    }

    #[test]
    fn empty_and_comment_only_streams() {
        assert!(parse_text_trace("").unwrap().is_empty());
        assert!(parse_text_trace("# header\n\n   \n").unwrap().is_empty());
    }

    #[test]
    fn icount_regression_names_line() {
        let err = parse_text_trace("100 R 0x1000 0x400\n90 W 0x2000 0x404").unwrap_err();
        match err {
            Error::IcountRegression {
                index,
                icount,
                prev,
            } => {
                assert_eq!((index, icount, prev), (2, 90, 100));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_text_trace("# c\n1 R 0x0 0x0\n2 X 0x40 0x0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_text_trace("1 R 0x0").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_text_trace("1 R 0xzz 0x0").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn text_writer_round_trips() {
        let recs = vec![
            MemoryAccess::new(1, AccessKind::IFetch, 0x40, 0x40),
            MemoryAccess::new(9, AccessKind::Write, 0xdead_beef, 0x400),
        ];
        let mut out = Vec::new();
        write_text_trace(&mut out, &recs).unwrap();
        assert_eq!(
            parse_text_trace(std::str::from_utf8(&out).unwrap()).unwrap(),
            recs
        );
    }

    #[test]
    fn binary_widths() {
        assert!(encode_binary(&[]).is_empty());
        let one = encode_binary(&[MemoryAccess::new(5, AccessKind::Write, 0x1000, 0x400)]);
        assert_eq!(one.len(), BINARY_RECORD_BYTES);
        let mut bytes = one.clone();
        bytes.push(0);
        assert!(matches!(
            decode_binary(&bytes),
            Err(Error::Truncated { offset: 25 })
        ));
        let mut bad = one;
        bad[8] = 7;
        assert!(matches!(
            decode_binary(&bad),
            Err(Error::BadRecord { offset: 8, .. })
        ));
    }

    #[test]
    fn sequential_and_strided_addresses() {
        let addrs: Vec<u64> = generate(&spec(Pattern::Sequential))
            .unwrap()
            .iter()
            .map(|r| r.addr)
            .collect();
        assert_eq!(addrs, vec![0, 64, 128]);

        let strided = TraceGenSpec {
            base_addr: 0x1000,
            stride: 0x100,
            ..spec(Pattern::Strided)
        };
        let addrs: Vec<u64> = generate(&strided).unwrap().iter().map(|r| r.addr).collect();
        assert_eq!(addrs, vec![0x1000, 0x1100, 0x1200]);
    }

    #[test]
    fn negative_stride_wraps_inside_footprint() {
        let s = TraceGenSpec {
            base_addr: 0x10_0000,
            footprint: 0x1000,
            stride: -0x100,
            count: 3,
            ..spec(Pattern::Strided)
        };
        let addrs: Vec<u64> = generate(&s).unwrap().iter().map(|r| r.addr).collect();
        assert_eq!(addrs, vec![0x10_0000, 0x10_0F00, 0x10_0E00]);
    }

    #[test]
    fn pointer_chase_visits_every_block_once_per_cycle() {
        let s = TraceGenSpec {
            footprint: 64 * 64,
            count: 64,
            ..spec(Pattern::PointerChase)
        };
        let mut addrs: Vec<u64> = generate(&s).unwrap().iter().map(|r| r.addr).collect();
        addrs.sort_unstable();
        addrs.dedup();
        assert_eq!(addrs.len(), 64);
    }

    #[test]
    fn kv_mix_emits_whole_values_with_op_pcs() {
        let s = TraceGenSpec {
            footprint: 1 << 20,
            value_size: 256,
            count: 400,
            read_ratio: 0.5,
            ..spec(Pattern::KvMix)
        };
        let t = generate(&s).unwrap();
        for op in t.chunks(4) {
            assert_eq!(op[0].addr % 256, 0);
            for (i, r) in op.iter().enumerate() {
                assert_eq!(r.addr, op[0].addr + 64 * i as u64);
                assert_eq!(r.kind, op[0].kind);
                let pc = if r.kind == AccessKind::Read {
                    KV_GET_PC
                } else {
                    KV_SET_PC
                };
                assert_eq!(r.pc, pc);
            }
        }
        assert!(t.iter().any(|r| r.kind == AccessKind::Write));
        assert!(t.iter().any(|r| r.kind == AccessKind::Read));
    }

    #[test]
    fn icount_gap_mean_matches_spec() {
        let s = TraceGenSpec {
            count: 50_000,
            instrs_per_access: 5.0,
            ..spec(Pattern::RandomUniform)
        };
        let t = generate(&s).unwrap();
        let mean = t.last().unwrap().icount as f64 / t.len() as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean gap {mean}");
        assert!(t.windows(2).all(|w| w[0].icount < w[1].icount));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let cases = [
            TraceGenSpec {
                footprint: 0,
                ..spec(Pattern::Sequential)
            },
            TraceGenSpec {
                count: 0,
                ..spec(Pattern::Sequential)
            },
            TraceGenSpec {
                stride: 0,
                ..spec(Pattern::Strided)
            },
            TraceGenSpec {
                zipf_exponent: 0.0,
                ..spec(Pattern::Zipfian)
            },
            TraceGenSpec {
                read_ratio: 1.5,
                ..spec(Pattern::Sequential)
            },
            TraceGenSpec {
                value_size: 100,
                ..spec(Pattern::KvMix)
            },
            TraceGenSpec {
                instrs_per_access: 0.5,
                ..spec(Pattern::Sequential)
            },
        ];
        for c in cases {
            assert!(matches!(generate(&c), Err(Error::Validation(_))), "{c:?}");
        }
    }

    #[test]
    fn scramble_is_a_permutation() {
        for n in [1u64, 7, 64, 1000] {
            let s = Scramble { n, offset: 3 % n };
            let mut seen: Vec<u64> = (0..n).map(|i| s.apply(i)).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
