//! Round-trip fuzzing, rate checks, and the frozen cross-component fixture.

use std::path::PathBuf;

use proptest::prelude::*;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rangecoder::{decode_stream, encode_stream, parse_tables, CdfTable, TOTAL_MASS};

/// Allocate TOTAL_MASS over positive weights: floor shares, remainder to the
/// first entries, every entry at least 1.
fn counts_from_weights(weights: &[u32]) -> Vec<u32> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut counts: Vec<u32> = weights
        .iter()
        .map(|&w| ((w as u64 * TOTAL_MASS as u64 / total).max(1)) as u32)
        .collect();
    let mut diff = TOTAL_MASS as i64 - counts.iter().map(|&c| c as i64).sum::<i64>();
    let mut i = 0;
    while diff != 0 {
        let step = if diff > 0 { 1 } else { -1 };
        if counts[i] as i64 + step >= 1 {
            counts[i] = (counts[i] as i64 + step) as u32;
            diff -= step;
        }
        i = (i + 1) % counts.len();
    }
    counts
}

fn table(weights: &[u32]) -> CdfTable {
    CdfTable::new(0, 0, counts_from_weights(weights)).unwrap()
}

fn theoretical_bits(indices: &[i32], ids: &[u32], tables: &[CdfTable]) -> f64 {
    indices
        .iter()
        .zip(ids)
        .map(|(&i, &id)| {
            let c = tables[id as usize].counts[i as usize] as f64;
            -(c / TOTAL_MASS as f64).log2()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fuzz_roundtrip(
        weight_sets in prop::collection::vec(
            prop::collection::vec(1u32..1000, 2..40), 1..4),
        picks in prop::collection::vec((0usize..4, 0usize..64), 0..500),
    ) {
        let tables: Vec<CdfTable> = weight_sets.iter().map(|w| table(w)).collect();
        let mut ids = Vec::new();
        let mut idx = Vec::new();
        for &(t, s) in &picks {
            let t = t % tables.len();
            ids.push(t as u32);
            idx.push((s % tables[t].n_entries()) as i32);
        }
        let coded = encode_stream(&idx, &ids, &tables).unwrap();
        let back = decode_stream(&coded, &ids, &tables, idx.len()).unwrap();
        prop_assert_eq!(back, idx);
    }
}

#[test]
fn entropy_rate_dyadic_table() {
    // (1/2, 1/4, 1/8, 1/8): entropy exactly 1.75 bits/symbol
    let t = [table(&[8, 4, 2, 2])];
    assert_eq!(t[0].counts, vec![32768, 16384, 8192, 8192]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dist = WeightedIndex::new([8u32, 4, 2, 2]).unwrap();
    let n = 10_000usize;
    let idx: Vec<i32> = (0..n).map(|_| dist.sample(&mut rng) as i32).collect();
    let ids = vec![0u32; n];
    let coded = encode_stream(&idx, &ids, &t).unwrap();
    let bits_per_symbol = (coded.len() * 8) as f64 / n as f64;
    assert!(
        (bits_per_symbol - 1.75).abs() <= 1.75 * 0.01,
        "got {bits_per_symbol} bits/symbol"
    );
    assert_eq!(decode_stream(&coded, &ids, &t, n).unwrap(), idx);
}

#[test]
fn overhead_within_bound_on_long_streams() {
    // actual bytes <= theoretical + 32 bits + 1% for streams >= 1000 symbols
    let tables = [table(&[100, 30, 10, 3, 1]), table(&[1, 1, 1, 1, 1, 1, 1])];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2000usize;
        let mut ids = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        for _ in 0..n {
            let t = (rand::Rng::gen_range(&mut rng, 0..2)) as usize;
            let dist = WeightedIndex::new(&tables[t].counts).unwrap();
            ids.push(t as u32);
            idx.push(dist.sample(&mut rng) as i32);
        }
        let coded = encode_stream(&idx, &ids, &tables).unwrap();
        let actual = (coded.len() * 8) as f64;
        let theory = theoretical_bits(&idx, &ids, &tables);
        assert!(
            actual <= theory * 1.01 + 32.0,
            "seed {seed}: {actual} bits vs theoretical {theory}"
        );
        assert_eq!(decode_stream(&coded, &ids, &tables, n).unwrap(), idx);
    }
}

#[test]
fn encode_is_deterministic_across_calls() {
    let t = [table(&[5, 3, 1, 1])];
    let idx = vec![0, 1, 2, 3, 1, 0, 0, 2];
    let ids = vec![0u32; idx.len()];
    let a = encode_stream(&idx, &ids, &t).unwrap();
    let b = encode_stream(&idx, &ids, &t).unwrap();
    assert_eq!(a, b);
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .join("tests")
        .join("fixtures")
}

/// Frozen cross-component vector: the table blob was written by the caller's
/// serializer, the coded bytes by this coder.  The stream holds the symbols
/// [0, 1, -1, 2] as entry indices [2, 3, 1, 4] under a table with s_min -2.
#[test]
fn frozen_fixture_roundtrip() {
    let dir = fixture_dir();
    let blob = std::fs::read(dir.join("rc_fixture_tables.bin")).unwrap();
    let coded = std::fs::read(dir.join("rc_fixture_coded.bin")).unwrap();
    let tables = parse_tables(&blob).unwrap();
    assert_eq!(tables.len(), 1);
    assert_eq!(tables[0].s_min, -2);

    let ids = vec![0u32; 4];
    let indices = decode_stream(&coded, &ids, &tables, 4).unwrap();
    let symbols: Vec<i32> = indices.iter().map(|&i| i + tables[0].s_min).collect();
    assert_eq!(symbols, vec![0, 1, -1, 2]);
    assert_eq!(encode_stream(&indices, &ids, &tables).unwrap(), coded);
}
