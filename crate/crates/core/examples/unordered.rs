//! Shuffles a rendered sequence and recovers a processing order from
//! pairwise confidence, by spanning tree and by greedy next-best view.
//!
//! cargo run --release --example unordered -- [checkpoint_dir]

use memrecon::checkpoint;
use memrecon::pipeline::{max_spanning_tree, reconstruct_unordered, ConfidenceScore, Strategy};
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, SceneParams};
use memrecon::{MemoryConfig, Model, ModelConfig};
use rand::seq::SliceRandom;

fn main() -> memrecon::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(d) => checkpoint::load(d.as_ref())?.0,
        None => Model::new(ModelConfig::default(), &mut stream(0, Stream::Init))?,
    };
    let scene = generate_scene(5, &SceneParams { n_frames: 8, image_size: model.config.image_size, ..SceneParams::default() })?;
    let mut perm: Vec<usize> = (0..scene.len()).collect();
    perm.shuffle(&mut stream(5, Stream::Eval));
    let frames: Vec<_> = perm.iter().map(|&i| scene.frames[i].clone()).collect();
    println!("input holds capture frames {perm:?}");
    for (strategy, kind) in [
        (Strategy::Mst, ConfidenceScore::Sigmoid),
        (Strategy::NextBest, ConfidenceScore::Sigmoid),
        (Strategy::Mst, ConfidenceScore::Exponential),
    ] {
        let (rec, graph) = reconstruct_unordered(&model, &frames, &MemoryConfig::default(), strategy, kind)?;
        let capture: Vec<usize> = rec.order.iter().map(|&i| perm[i]).collect();
        println!("{strategy:?}/{kind:?}: start {:?}, capture order {capture:?}", graph.best_pair());
        if strategy == Strategy::Mst {
            let tree: Vec<(usize, usize)> = max_spanning_tree(&graph).iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            println!("  tree edges (capture indices) {tree:?}");
        }
    }
    Ok(())
}
