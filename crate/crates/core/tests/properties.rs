use std::collections::VecDeque;

use hmcsim::cache::FillScope;
use hmcsim::trace::write_text_trace;
use hmcsim::{
    decode_binary, encode_binary, generate, parse_text_trace, simulate, AccessKind, Cache,
    CacheGeometry, Hierarchy, HierarchyConfig, MemoryAccess, Pattern, PrefetchSystem, ServedLevel,
    TraceGenSpec,
};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = AccessKind> {
    prop_oneof![
        Just(AccessKind::Read),
        Just(AccessKind::Write),
        Just(AccessKind::IFetch)
    ]
}

fn records() -> impl Strategy<Value = Vec<MemoryAccess>> {
    prop::collection::vec((0u64..1000, kind(), any::<u64>(), any::<u64>()), 0..200).prop_map(|v| {
        let mut icount = 0;
        v.into_iter()
            .map(|(d, k, a, p)| {
                icount += d;
                MemoryAccess::new(icount, k, a, p)
            })
            .collect()
    })
}

fn pattern() -> impl Strategy<Value = Pattern> {
    prop_oneof![
        Just(Pattern::Sequential),
        Just(Pattern::Strided),
        Just(Pattern::RandomUniform),
        Just(Pattern::Zipfian),
        Just(Pattern::PointerChase),
        Just(Pattern::KvMix),
    ]
}

fn spec() -> impl Strategy<Value = TraceGenSpec> {
    (
        pattern(),
        0u64..4096,
        6u32..24,
        1u64..3000,
        prop_oneof![Just(64i64), Just(-192), Just(256), Just(4096), Just(8)],
        0.3f64..1.6,
        0.0f64..=1.0,
        0u32..3,
        any::<u64>(),
    )
        .prop_map(
            |(pattern, base, fp, count, stride, s, rr, vs, seed)| TraceGenSpec {
                pattern,
                base_addr: base * 64,
                footprint: 1 << fp.max(8),
                count,
                stride,
                zipf_exponent: s,
                read_ratio: rr,
                value_size: 64 << vs,
                seed,
                ..Default::default()
            },
        )
}

fn system() -> impl Strategy<Value = PrefetchSystem> {
    prop_oneof![
        Just(PrefetchSystem::NoPrefetch),
        Just(PrefetchSystem::Hmc),
        Just(PrefetchSystem::HmcPlusL1)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip(recs in records()) {
        prop_assert_eq!(decode_binary(&encode_binary(&recs)).unwrap(), recs);
    }

    #[test]
    fn text_round_trip(recs in records()) {
        let mut buf = Vec::new();
        write_text_trace(&mut buf, &recs).unwrap();
        prop_assert_eq!(parse_text_trace(std::str::from_utf8(&buf).unwrap()).unwrap(), recs);
    }

    #[test]
    fn generator_is_deterministic_and_bounded(spec in spec()) {
        let a = generate(&spec).unwrap();
        prop_assert_eq!(&a, &generate(&spec).unwrap());
        prop_assert_eq!(a.len() as u64, spec.count);
        let mut prev = 0;
        for r in &a {
            prop_assert!(r.addr >= spec.base_addr && r.addr < spec.base_addr + spec.footprint);
            prop_assert!(r.icount > prev || prev == 0);
            prev = r.icount;
        }
    }

    #[test]
    fn lru_matches_move_to_front(
        ways in prop_oneof![Just(1u32), Just(2), Just(4), Just(8)],
        set_bits in 0u32..3,
        blocks in prop::collection::vec(0u64..48, 1..400),
    ) {
        let sets = 1u64 << set_bits;
        let geom = CacheGeometry {
            total_size: sets * ways as u64 * 64,
            block_size: 64,
            blocks_per_line: 1,
            ways,
            tag_latency: 1,
            data_latency: 1,
            write_back: true,
        };
        let mut cache = Cache::new(geom).unwrap();
        let mut model = vec![VecDeque::new(); sets as usize];
        for b in blocks {
            let list: &mut VecDeque<u64> = &mut model[(b % sets) as usize];
            let pos = list.iter().position(|&x| x == b);
            let want_victim = match pos {
                Some(i) => { list.remove(i); list.push_front(b); None }
                None => {
                    list.push_front(b);
                    (list.len() > ways as usize).then(|| list.pop_back().unwrap() * 64)
                }
            };
            let hit = cache.lookup(b * 64, AccessKind::Read, true).outcome.is_hit();
            prop_assert_eq!(hit, pos.is_some());
            if !hit {
                let v = cache.fill(b * 64, FillScope::Block, false, false).map(|v| v.line_addr);
                prop_assert_eq!(v, want_victim);
            }
        }
    }

    #[test]
    fn disabled_engines_match_no_prefetch(spec in spec()) {
        let trace = generate(&spec).unwrap();
        let a = simulate(&trace, &HierarchyConfig::default()).unwrap();
        let cfg = HierarchyConfig::default().with_system(PrefetchSystem::HmcPlusL1).with_depths(0);
        let b = simulate(&trace, &cfg).unwrap();
        prop_assert_eq!(a.derive(), b.derive());
        prop_assert_eq!(a.media, b.media);
        for level in hmcsim::Level::ALL {
            let (x, y) = (a.level(level), b.level(level));
            prop_assert_eq!(
                (x.demand_accesses, x.demand_misses, x.summed_demand_miss_latency, x.writebacks),
                (y.demand_accesses, y.demand_misses, y.summed_demand_miss_latency, y.writebacks)
            );
        }
    }

    #[test]
    fn directory_stays_coherent(spec in spec(), sys in system()) {
        let trace = generate(&spec).unwrap();
        let mut h = Hierarchy::new(HierarchyConfig::default().with_system(sys)).unwrap();
        for r in &trace {
            h.access(r);
        }
        prop_assert!(h.hmc().directory_coherent());
    }

    /// Without prefetching, the latency of a read is fixed by the level that served it.
    #[test]
    fn latency_decomposes_by_level(spec in spec()) {
        let trace = generate(&TraceGenSpec { read_ratio: 1.0, ..spec }).unwrap();
        let mut h = Hierarchy::new(HierarchyConfig::default()).unwrap();
        for r in &trace {
            let o = h.access(r);
            let want = match o.served_level {
                ServedLevel::L1 => 3 + 3,
                ServedLevel::L2 => 3 + 11 + 11,
                ServedLevel::Hmc => 3 + 11 + 17 + 17,
                ServedLevel::DramCache => 3 + 11 + 17 + 4 + 33,
                ServedLevel::Nvram => 3 + 11 + 17 + 4 + 353,
            };
            prop_assert_eq!(o.total_latency, want, "{:?}", o);
        }
    }

    #[test]
    fn amat_is_mean_access_latency(spec in spec(), sys in system()) {
        let trace = generate(&spec).unwrap();
        let mut h = Hierarchy::new(HierarchyConfig::default().with_system(sys)).unwrap();
        let total: u64 = trace.iter().map(|r| h.access(r).total_latency).sum();
        let d = h.counters().derive();
        prop_assert_eq!(d.amat, total as f64 / trace.len() as f64);
    }

    #[test]
    fn counters_are_consistent(spec in spec(), sys in system()) {
        let trace = generate(&spec).unwrap();
        let c = simulate(&trace, &HierarchyConfig::default().with_system(sys)).unwrap();
        let report = hmcsim::RunReport::new(HierarchyConfig::default().with_system(sys), None, c);
        prop_assert!(report.check().is_ok());
    }

    /// A single-pc constant stride is covered by the stride engine once it reaches steady state.
    #[test]
    fn stride_steady_state_coverage(
        stride in prop_oneof![Just(128i64), Just(256), Just(512), Just(-256), Just(1024)],
        seed in any::<u64>(),
    ) {
        let spec = TraceGenSpec {
            pattern: Pattern::Strided,
            stride,
            count: 2000,
            seed,
            ..Default::default()
        };
        let trace = generate(&spec).unwrap();
        let mut h = Hierarchy::new(HierarchyConfig::default().with_system(PrefetchSystem::HmcPlusL1)).unwrap();
        let mut misses = 0;
        for (i, r) in trace.iter().enumerate() {
            let o = h.access(r);
            if i >= 3 && !o.l1_hit && !o.stream_buffer_hit {
                misses += 1;
            }
        }
        prop_assert!(misses * 20 <= trace.len(), "{} steady-state misses", misses);
    }
}
