//! Retrieval metrics checked against an independent brute-force
//! enumeration of average precision.

use concord_core::retrieval::{hamming, map_at_k, HashCode, RetrievalIndex};
use concord_core::rng::SeededRng;

fn random_code(rng: &mut SeededRng, k: usize) -> HashCode {
    HashCode::new(
        (0..k)
            .map(|_| if rng.uniform(0.0, 1.0) < 0.5 { -1 } else { 1 })
            .collect(),
    )
    .unwrap()
}

/// Brute-force AP: repeatedly select the closest remaining item by a
/// linear scan (distance, then id), walking the precision sum by hand.
fn brute_force_ap(query: &HashCode, labels: u64, index: &RetrievalIndex, k: usize) -> f64 {
    let n = index.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let depth = k.min(n);
    for pos in 0..depth {
        // Selection scan instead of a sort.
        let mut best = 0usize;
        for cand in 1..remaining.len() {
            let (ci, bi) = (remaining[cand], remaining[best]);
            let cd = hamming(query, &index.codes()[ci]).unwrap();
            let bd = hamming(query, &index.codes()[bi]).unwrap();
            if cd < bd || (cd == bd && index.ids()[ci] < index.ids()[bi]) {
                best = cand;
            }
        }
        let item = remaining.swap_remove(best);
        if labels & index.labels()[item] != 0 {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
        }
    }
    precision_sum / hits.max(1) as f64
}

#[test]
fn map_at_k_matches_brute_force_enumeration() {
    let mut rng = SeededRng::new(40, 0);
    for trial in 0..60 {
        let n = 5 + rng.below(96);
        let bits = 8 + 8 * rng.below(4);
        let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut rng, bits)).collect();
        let labels: Vec<u64> = (0..n).map(|_| 1u64 << rng.below(5)).collect();
        // Shuffled, non-contiguous ids exercise the tie rule.
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 % (n as u64 * 7)).collect();
        let index = RetrievalIndex::new(codes, labels, ids).unwrap();
        let k = 1 + rng.below(n + 10);
        let queries: Vec<(HashCode, u64)> = (0..4)
            .map(|_| (random_code(&mut rng, bits), 1u64 << rng.below(5)))
            .collect();
        let got = map_at_k(&queries, &index, k).unwrap();
        let want: f64 = queries
            .iter()
            .map(|(q, l)| brute_force_ap(q, *l, &index, k))
            .sum::<f64>()
            / queries.len() as f64;
        assert!(
            (got - want).abs() < 1e-12,
            "trial {trial}: map {got} vs brute force {want}"
        );
        assert!((0.0..=1.0).contains(&got), "map out of range: {got}");
    }
}

#[test]
fn perfect_index_reaches_map_one() {
    // Every query's code is in the index with a matching label and all
    // other items are maximally distant with disjoint labels.
    let mut rng = SeededRng::new(41, 0);
    let bits = 16;
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for i in 0..6 {
        let c = random_code(&mut rng, bits);
        codes.push(c.clone());
        labels.push(1u64 << (i % 2));
    }
    let ids: Vec<u64> = (0..6).collect();
    let index = RetrievalIndex::new(codes.clone(), labels.clone(), ids).unwrap();
    // Query with k=1: its own code ranks first (distance 0, lowest id in
    // ties is itself only if unique code).
    let queries: Vec<(HashCode, u64)> = (0..6).map(|i| (codes[i].clone(), labels[i])).collect();
    let m = map_at_k(&queries, &index, 1).unwrap();
    assert!((m - 1.0).abs() < 1e-12, "{m}");
}
