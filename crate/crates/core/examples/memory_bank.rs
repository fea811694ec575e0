//! Drives the two-tier memory by hand: gated inserts, draining into the
//! long-term tier, clipped reads, and consolidation by accumulated attention.
//!
//! cargo run --release --example memory_bank

use memrecon::memory::InsertOutcome;
use memrecon::{MemoryBank, MemoryConfig, ReadMode, Tensor, TokenGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: usize = 16;
const C: usize = 8;

fn grid(rng: &mut ChaCha8Rng, frame: usize) -> TokenGrid {
    TokenGrid::new(Tensor::new((0..P * C).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[P, C]).unwrap(), frame)
}

fn main() -> memrecon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = MemoryConfig { lt_max_tokens: 48, ..MemoryConfig::default() };
    let mut bank = MemoryBank::new(config)?;

    let first = grid(&mut rng, 0);
    bank.working_insert(first.clone(), first.clone())?;
    let again = bank.working_insert(TokenGrid::new(first.tokens.clone(), 1), first.clone())?;
    println!("re-inserting frame 0: {again:?}");

    for f in 1..14 {
        let key = grid(&mut rng, f);
        let out = bank.working_insert(key.clone(), key)?;
        let q = grid(&mut rng, 100 + f);
        let (_, rec) = bank.read(&q, &mut ReadMode::Infer)?;
        let working: Vec<usize> = bank.working.iter().map(|e| e.frame_index).collect();
        let note = match out {
            InsertOutcome::Inserted { consolidated: true, .. } => "  consolidated",
            InsertOutcome::Inserted { drained: true, .. } => "  drained",
            _ => "",
        };
        println!(
            "frame {f:2}: working {working:?}, long-term {:3}, total {:3}, clipped {:5.1}%{note}",
            bank.long_term.len(),
            bank.total_tokens(),
            100.0 * rec.clipped_fraction()
        );
    }
    for ev in &bank.stats.consolidations {
        println!("consolidation at frame {}: {} -> {} tokens", ev.frame_index, ev.before, ev.after);
    }
    let mut by_frame = std::collections::BTreeMap::new();
    for o in &bank.long_term.origin {
        *by_frame.entry(o.frame).or_insert(0) += 1;
    }
    println!("surviving long-term tokens by frame: {by_frame:?}");
    Ok(())
}
