use memrecon::memory::{top_k_indices, InsertOutcome};
use memrecon::{MemoryBank, MemoryConfig, ReadMode, Tensor, TokenGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: usize = 4;
const C: usize = 6;

fn grid(rng: &mut ChaCha8Rng, rows: usize, frame: usize) -> TokenGrid {
    let data = (0..rows * C).map(|_| rng.gen_range(-2.0..2.0)).collect();
    TokenGrid::new(Tensor::new(data, &[rows, C]).unwrap(), frame)
}

fn random_bank(rng: &mut ChaCha8Rng, config: MemoryConfig, frames: usize) -> MemoryBank {
    let mut bank = MemoryBank::new(config).unwrap();
    for f in 0..frames {
        bank.working_insert(grid(rng, P, f), grid(rng, P, f)).unwrap();
    }
    bank
}

fn bounds_hold(bank: &MemoryBank) -> bool {
    bank.working.len() <= bank.config.working_max_frames && bank.long_term.len() <= bank.config.lt_max_tokens
}

/// Stable sort by descending accumulated attention, first `k`, ascending.
fn oracle_keep(acc: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..acc.len()).collect();
    idx.sort_by(|a, b| acc[*b].total_cmp(&acc[*a]));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_matches_stable_sort(acc in prop::collection::vec(0u8..6, 1..60), k in 1usize..70) {
        let acc: Vec<f64> = acc.into_iter().map(f64::from).collect();
        prop_assert_eq!(top_k_indices(&acc, k), oracle_keep(&acc, k));
    }

    #[test]
    fn infer_read_rows_are_distributions(seed in any::<u64>(), frames in 1usize..9, clip in any::<bool>(), thr in 1e-4f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = MemoryConfig {
            gate_enabled: false,
            clip_enabled: clip,
            clip_threshold: thr,
            lt_max_tokens: 8,
            ..MemoryConfig::default()
        };
        let mut bank = random_bank(&mut rng, config, frames);
        let q = grid(&mut rng, 3, 99);
        let (fused, rec) = bank.read(&q, &mut ReadMode::Infer).unwrap();
        let (rows, n) = rec.weights.dims2().unwrap();
        prop_assert_eq!(n, bank.total_tokens());
        let w = rec.weights.data();
        for r in 0..rows {
            let row = &w[r * n..(r + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if clip && !rec.fallback_rows.contains(&r) {
                prop_assert!(row.iter().all(|&x| x == 0.0 || x >= thr));
            }
        }
        prop_assert_eq!(fused.tokens.shape(), q.tokens.shape());
        let (again, rec2) = bank.clone().read(&q, &mut ReadMode::Infer).unwrap();
        prop_assert_eq!(again.tokens.data(), fused.tokens.data());
        prop_assert_eq!(rec2.weights.data(), rec.weights.data());
        prop_assert!(bounds_hold(&bank));
    }

    #[test]
    fn train_read_reproducible_with_seed(seed in any::<u64>(), frames in 1usize..8, p in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = random_bank(&mut rng, MemoryConfig::training(), frames);
        let q = grid(&mut rng, 3, 99);
        let read = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let (out, rec) = bank.clone().read(&q, &mut ReadMode::Train { dropout: p, rng: &mut r }).unwrap();
            (out.tokens.data().to_vec(), rec.weights.data().to_vec())
        };
        let a = read(seed ^ 1);
        prop_assert_eq!(&a, &read(seed ^ 1));
        let n = bank.total_tokens();
        for row in a.1.chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiers_stay_bounded(seed in any::<u64>(), ops in prop::collection::vec(0u8..4, 1..40), lt_max in 1usize..20, gate in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = MemoryConfig { gate_enabled: gate, lt_max_tokens: lt_max, ..MemoryConfig::default() };
        let mut bank = MemoryBank::new(config).unwrap();
        for (f, op) in ops.into_iter().enumerate() {
            match op {
                0 | 1 => {
                    bank.working_insert(grid(&mut rng, P, f), grid(&mut rng, P, f)).unwrap();
                }
                2 if bank.total_tokens() > 0 => {
                    bank.read(&grid(&mut rng, 2, f), &mut ReadMode::Infer).unwrap();
                }
                2 => {}
                _ => {
                    let k = rng.gen_range(1..6);
                    bank.inject_long_term(grid(&mut rng, k, f).tokens, grid(&mut rng, k, f).tokens, f).unwrap();
                }
            }
            prop_assert!(bounds_hold(&bank));
            prop_assert_eq!(bank.long_term.origin.len(), bank.long_term.len());
        }
    }

    #[test]
    fn consolidation_keeps_most_attended(seed in any::<u64>(), n in 3usize..40, levels in 1u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lt_max = n - 1;
        let config = MemoryConfig { gate_enabled: false, lt_max_tokens: lt_max, ..MemoryConfig::default() };
        let mut bank = MemoryBank::new(config).unwrap();
        // keys encode each token's original index
        let keys: Vec<f64> = (0..n).flat_map(|i| std::iter::once(i as f64).chain(std::iter::repeat(0.0).take(C - 1))).collect();
        let keys = Tensor::new(keys, &[n, C]).unwrap();
        bank.long_term.keys = Some(keys.clone());
        bank.long_term.values = Some(keys);
        bank.long_term.acc_attn = (0..n).map(|_| f64::from(rng.gen_range(0..levels))).collect();
        bank.long_term.origin = (0..n).map(|patch| memrecon::memory::TokenOrigin { frame: 0, patch }).collect();
        let expect = oracle_keep(&bank.long_term.acc_attn, lt_max / 2);
        let event = bank.consolidate().unwrap().expect("over budget");
        prop_assert_eq!(event.after, expect.len());
        let kept: Vec<usize> = bank.long_term.keys.as_ref().unwrap().data().chunks(C).map(|r| r[0] as usize).collect();
        prop_assert_eq!(kept, expect);
    }
}

#[test]
fn singleton_read_returns_value_plus_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bank = MemoryBank::new(MemoryConfig::default()).unwrap();
    let k = grid(&mut rng, 1, 0);
    let v = grid(&mut rng, 1, 0);
    bank.working_insert(k, v.clone()).unwrap();
    let q = grid(&mut rng, 1, 1);
    let (out, rec) = bank.read(&q, &mut ReadMode::Infer).unwrap();
    assert_eq!(rec.weights.data(), &[1.0]);
    for ((o, a), b) in out.tokens.data().iter().zip(v.tokens.data()).zip(q.tokens.data()) {
        assert!((o - (a + b)).abs() < 1e-12);
    }
}

#[test]
fn clipping_hand_row() {
    // logits giving softmax [0.9996, 0.0003, 0.0001]
    let p = [0.9996f64, 0.0003, 0.0001];
    let c = 4usize;
    let s = (c as f64).sqrt();
    let mut bank = MemoryBank::new(MemoryConfig { gate_enabled: false, ..MemoryConfig::default() }).unwrap();
    for (f, pi) in p.iter().enumerate() {
        let key = Tensor::new(vec![pi.ln() * s, 0.0, 0.0, 0.0], &[1, c]).unwrap();
        let val = Tensor::new(vec![0.0, f as f64, 0.0, 0.0], &[1, c]).unwrap();
        bank.working_insert(TokenGrid::new(key, f), TokenGrid::new(val, f)).unwrap();
    }
    let q = TokenGrid::new(Tensor::new(vec![1.0, 0.0, 0.0, 0.0], &[1, c]).unwrap(), 9);
    let (_, rec) = bank.read(&q, &mut ReadMode::Infer).unwrap();
    assert_eq!(rec.weights.data(), &[1.0, 0.0, 0.0]);
    assert_eq!(rec.clipped_count, 2);
}

#[test]
fn six_frames_drain_the_first_into_long_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bank = MemoryBank::new(MemoryConfig::default()).unwrap();
    for f in 1..=6 {
        let out = bank.working_insert(grid(&mut rng, P, f), grid(&mut rng, P, f)).unwrap();
        assert!(matches!(out, InsertOutcome::Inserted { .. }));
    }
    let held: Vec<usize> = bank.working.iter().map(|e| e.frame_index).collect();
    assert_eq!(held, vec![2, 3, 4, 5, 6]);
    assert_eq!(bank.long_term.len(), P);
    assert!(bank.long_term.origin.iter().all(|o| o.frame == 1));
}

#[test]
fn consolidation_hand_case_and_token_count() {
    let mut bank = MemoryBank::new(MemoryConfig { lt_max_tokens: 2, topk_keep: Some(2), ..MemoryConfig::default() }).unwrap();
    let t = Tensor::new((0..3 * C).map(|i| (i / C) as f64).collect(), &[3, C]).unwrap();
    bank.long_term.keys = Some(t.clone());
    bank.long_term.values = Some(t);
    bank.long_term.acc_attn = vec![5.0, 1.0, 3.0];
    bank.long_term.origin = (0..3).map(|patch| memrecon::memory::TokenOrigin { frame: 0, patch }).collect();
    bank.consolidate().unwrap();
    let kept: Vec<f64> = bank.long_term.keys.as_ref().unwrap().data().chunks(C).map(|r| r[0]).collect();
    assert_eq!(kept, vec![0.0, 2.0]);
    assert_eq!(bank.long_term.acc_attn, vec![5.0, 3.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bank = MemoryBank::new(MemoryConfig { gate_enabled: false, ..MemoryConfig::default() }).unwrap();
    for f in 0..3 {
        bank.working_insert(grid(&mut rng, 16, f), grid(&mut rng, 16, f)).unwrap();
    }
    bank.inject_long_term(grid(&mut rng, 40, 9).tokens, grid(&mut rng, 40, 9).tokens, 9).unwrap();
    assert_eq!(bank.total_tokens(), 88);
}

#[test]
fn empty_bank_read_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bank = MemoryBank::new(MemoryConfig::default()).unwrap();
    assert!(matches!(bank.read(&grid(&mut rng, 1, 0), &mut ReadMode::Infer), Err(memrecon::Error::EmptyMemory)));
}
