use std::sync::Arc;

use proptest::prelude::*;
use uxsim_core::llm::hash_embed;
use uxsim_core::memory::{
    load_jsonl, LoopProfile, MemoryKind, MemoryPiece, MemoryStream, NewMemory, Profiles, RetrievalWeights,
};

/// Exhaustive reference: score every piece from first principles, sort, cut.
fn oracle(pieces: &[MemoryPiece], query: &[f32], now: u32, w: &RetrievalWeights, k: usize) -> Vec<u64> {
    let mut scored: Vec<(f64, u64)> = pieces
        .iter()
        .map(|p| {
            let e = p.embedding.as_ref().unwrap();
            let dot: f64 = e.iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            let na: f64 = e.iter().map(|a| f64::from(*a) * f64::from(*a)).sum::<f64>().sqrt();
            let nb: f64 = query.iter().map(|b| f64::from(*b) * f64::from(*b)).sum::<f64>().sqrt();
            let cos = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            let age = now.saturating_sub(p.step);
            let recency = 0.99f64.powi(age as i32);
            let s = w.w_importance * (p.importance / 10.0) + w.w_relevance * cos + w.w_recency * recency;
            (s, p.id)
        })
        .collect();
    // Highest score first; among equals the larger id wins.
    for i in 0..scored.len() {
        for j in i + 1..scored.len() {
            let (a, b) = (scored[i], scored[j]);
            if b.0 > a.0 || (b.0 == a.0 && b.1 > a.1) {
                scored.swap(i, j);
            }
        }
    }
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn arb_piece() -> impl Strategy<Value = (u32, u8, Vec<i8>)> {
    (0u32..30, 0u8..=10, proptest::collection::vec(-3i8..=3, 4))
}

fn stream_of(specs: &[(u32, u8, Vec<i8>)]) -> MemoryStream {
    let s = MemoryStream::new();
    let mut sorted = specs.to_vec();
    sorted.sort_by_key(|p| p.0);
    for (i, (step, imp, emb)) in sorted.iter().enumerate() {
        let v: Vec<f32> = emb.iter().map(|x| f32::from(*x)).collect();
        s.append(NewMemory::new(MemoryKind::Observation, format!("memory {i}"), *step, f64::from(*imp)).with_embedding(v))
            .unwrap();
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn retrieve_matches_brute_force(
        specs in proptest::collection::vec(arb_piece(), 0..25),
        query in proptest::collection::vec(-3i8..=3, 4),
        now in 0u32..40,
    ) {
        let s = stream_of(&specs);
        let q: Vec<f32> = query.iter().map(|x| f32::from(*x)).collect();
        let pieces = s.export_trace();
        for profile in [LoopProfile::Fast, LoopProfile::Slow] {
            let w = Profiles::default().get(profile);
            let got: Vec<u64> = s.retrieve(Some(&q), now, &w, 10).iter().map(|p| p.id).collect();
            prop_assert_eq!(got, oracle(&pieces, &q, now, &w, 10));
        }
        let by_recency: Vec<u64> = s
            .retrieve(None, now, &RetrievalWeights::new(0.0, 0.0, 1.0), pieces.len())
            .iter()
            .map(|p| p.id)
            .collect();
        prop_assert_eq!(by_recency, (1..=pieces.len() as u64).rev().collect::<Vec<_>>());
    }
}

#[test]
fn k_zero_and_k_beyond_size() {
    let s = stream_of(&[(0, 5, vec![1, 0, 0, 0]), (1, 5, vec![0, 1, 0, 0])]);
    let w = Profiles::default().fast;
    assert!(s.retrieve(Some(&[1.0, 0.0, 0.0, 0.0]), 1, &w, 0).is_empty());
    assert_eq!(s.retrieve(Some(&[1.0, 0.0, 0.0, 0.0]), 1, &w, 50).len(), 2);
}

#[test]
fn recency_only_prefers_newest_and_importance_only_normalizes() {
    let s = MemoryStream::new();
    for step in 0..5 {
        s.append(NewMemory::new(MemoryKind::Plan, format!("p{step}"), step, 10.0)).unwrap();
    }
    let top = s.retrieve(None, 5, &RetrievalWeights::new(0.0, 0.0, 1.0), 1);
    assert_eq!(top[0].text, "p4");

    let piece = &s.export_trace()[0];
    let v = uxsim_core::memory::score(piece, None, 9, &RetrievalWeights::new(1.0, 0.0, 0.0)).value;
    assert_eq!(v, 1.0);
}

#[test]
fn fast_profile_keeps_recent_pieces_on_top() {
    // One old piece with maximal importance and relevance; the rest are
    // recent, middling and unrelated. With weights (1, 1, 3) and 0.99 decay
    // the old piece loses once it is about 85 steps older than the rest.
    let s = MemoryStream::new();
    let q = hash_embed("navy parka");
    s.append(NewMemory::new(MemoryKind::Observation, "navy parka", 0, 10.0).with_embedding(q.clone()))
        .unwrap();
    for step in 116..120 {
        s.append(
            NewMemory::new(MemoryKind::Observation, format!("checkout step {step}"), step, 3.0)
                .with_embedding(hash_embed("checkout page button")),
        )
        .unwrap();
    }
    let now = 120;
    let fast = Profiles::default().fast;
    let pieces = s.export_trace();
    let top: Vec<u64> = s.retrieve(Some(&q), now, &fast, 4).iter().map(|p| p.id).collect();
    assert_eq!(top, oracle(&pieces, &q, now, &fast, 4));
    assert!(!top.contains(&1), "{top:?}");

    let slow = Profiles::default().slow;
    assert_eq!(s.retrieve(Some(&q), now, &slow, 1)[0].id, 1);
}

#[test]
fn slow_profile_ranks_jacket_memories_first() {
    let s = MemoryStream::new();
    let texts = [
        "The search results show a navy jacket for $39.99",
        "I wonder what to cook for dinner tonight",
        "The page header has a cart link",
        "This jacket has a hood and pockets",
        "The weather is nice for a walk",
    ];
    for (i, t) in texts.iter().enumerate() {
        s.append(NewMemory::new(MemoryKind::Observation, *t, i as u32, 5.0).with_embedding(hash_embed(t)))
            .unwrap();
    }
    let q = hash_embed("jacket");
    let top = s.retrieve(Some(&q), 5, &Profiles::default().slow, 2);
    let mut got: Vec<&str> = top.iter().map(|p| p.text.as_str()).collect();
    got.sort();
    assert_eq!(got, vec!["The search results show a navy jacket for $39.99", "This jacket has a hood and pockets"]);
}

#[test]
fn missing_embedding_scores_zero_relevance_with_warning() {
    let s = MemoryStream::new();
    s.append(NewMemory::new(MemoryKind::Wonder, "no vector", 0, 0.0)).unwrap();
    let out = s.retrieve(Some(&[1.0; 4]), 0, &RetrievalWeights::new(0.0, 1.0, 0.0), 1);
    assert_eq!(out.len(), 1);
    assert_eq!(s.warnings().len(), 1);
}

#[test]
fn concurrent_appends_keep_ids_dense() {
    let s = Arc::new(MemoryStream::new());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let s = s.clone();
            std::thread::spawn(move || {
                for i in 0..250 {
                    s.append(NewMemory::new(MemoryKind::Reflection, format!("t{t} m{i}"), i, 1.0)).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let trace = s.export_trace();
    assert_eq!(trace.len(), 1000);
    for (i, p) in trace.iter().enumerate() {
        assert_eq!(p.id, i as u64 + 1);
    }
    assert!(trace.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let s = stream_of(&[(0, 2, vec![1, 2, 3, 4]), (3, 9, vec![0, 0, 0, 1])]);
    s.append(NewMemory::new(MemoryKind::Action, "For action 1, I will: click", 3, 5.0)).unwrap();
    s.save(&path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), s.export_trace());
}
