use e2edrive::dataset::*;
use e2edrive::vision::RawFrame;
use proptest::prelude::*;

fn arb_source() -> impl Strategy<Value = Source> {
    prop::sample::select(vec![Source::ExpertCenter, Source::ExpertRecovery, Source::ExpertBraking, Source::Human])
}

fn arb_sample() -> impl Strategy<Value = Sample> {
    (
        prop::collection::vec(any::<u8>(), 6 * 4 * 3),
        -1.0f32..=1.0,
        -1.0f32..=1.0,
        arb_source(),
        0.0f64..1e4,
    )
        .prop_map(|(px, steering, throttle, source, timestamp)| Sample {
            frame: RawFrame::new(6, 4, px).unwrap(),
            steering,
            throttle,
            source,
            timestamp,
        })
}

#[test]
fn shard_header_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = SampleStore::create(dir.path(), 6, 4).unwrap();
    let s = Sample {
        frame: RawFrame::filled(6, 4, [1, 2, 3]),
        steering: 0.25,
        throttle: -0.5,
        source: Source::Human,
        timestamp: 2.0,
    };
    for _ in 0..3 {
        store.append(&s).unwrap();
    }
    store.flush().unwrap();
    let shard = &store.manifest().shards[0];
    let bytes = std::fs::read(dir.path().join(&shard.file)).unwrap();
    assert_eq!(&bytes[..4], &SHARD_MAGIC[..]);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 6);
    assert_eq!(u16::from_le_bytes(bytes[14..16].try_into().unwrap()), 4);
    let record = 6 * 4 * 3 + 4 + 4 + 1 + 8 + 4;
    assert_eq!(bytes.len(), 16 + 3 * record);
    let r0 = &bytes[16..16 + record];
    let crc = u32::from_le_bytes(r0[record - 4..].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&r0[..record - 4]));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["total"], 3);
}

#[test]
fn gross_out_of_range_controls_rejected() {
    assert_eq!(normalize_controls(-100.0, 60.0).unwrap(), (-1.0, 1.0));
    assert_eq!(normalize_controls(50.0, -30.0).unwrap(), (0.5, -0.5));
    assert!(normalize_controls(106.0, 0.0).is_err());
    assert!(normalize_controls(0.0, -63.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn store_round_trip_is_bit_exact(samples in prop::collection::vec(arb_sample(), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = SampleStore::create(dir.path(), 6, 4).unwrap();
            for s in &samples {
                store.append(s).unwrap();
            }
            store.flush().unwrap();
        }
        let store = SampleStore::open(dir.path()).unwrap();
        let back = store.read_all().unwrap();
        prop_assert_eq!(store.manifest().shards.iter().map(|s| s.frames).sum::<usize>(), store.manifest().total);
        prop_assert_eq!(back, samples);
    }

    #[test]
    fn normalization_round_trips(raw_s in -100.0f32..=100.0, raw_t in -60.0f32..=60.0) {
        let (s, t) = normalize_controls(raw_s, raw_t).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s) && (-1.0..=1.0).contains(&t));
        let (bs, bt) = denormalize_controls(s, t);
        prop_assert!((bs - raw_s).abs() <= 1e-6 * 100.0);
        prop_assert!((bt - raw_t).abs() <= 1e-6 * 60.0);
    }

    #[test]
    fn splits_are_disjoint_exhaustive_deterministic(
        sources in prop::collection::vec(arb_source(), 2..600),
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let s = split_indices(&sources, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..sources.len()).collect::<Vec<_>>());
        prop_assert!(!s.train.is_empty() && !s.val.is_empty());
        prop_assert_eq!(&s, &split_indices(&sources, frac, seed).unwrap());
        if s.stratified {
            for src in [Source::ExpertCenter, Source::ExpertRecovery, Source::ExpertBraking, Source::Human] {
                if sources.contains(&src) {
                    prop_assert!(s.val.iter().any(|&i| sources[i] == src));
                    prop_assert!(s.train.iter().any(|&i| sources[i] == src));
                }
            }
        }
    }
}
