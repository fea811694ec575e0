//! Compares autodiff gradients of the full training loss with a
//! finite-difference stencil on the micro model, tensor by tensor.
//!
//! cargo run --release --example gradcheck -- [seed]

use memrecon::memory::MemoryBank;
use memrecon::objective::{self, LossConfig};
use memrecon::pipeline::run_sequence;
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, sample_clip, SceneParams};
use memrecon::tensor::gradcheck::check_gradients;
use memrecon::train::training_memory;
use memrecon::{MemoryConfig, Model, ModelConfig, Pointmap, Tensor};

fn main() -> memrecon::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    let cfg = ModelConfig::micro();
    let model = Model::new(cfg.clone(), &mut stream(seed, Stream::Init))?;
    let scene = generate_scene(seed, &SceneParams { n_frames: 3, image_size: cfg.image_size, ..SceneParams::default() })?;
    let clip = sample_clip(&scene, 0, 1, 3)?;
    let memory = training_memory(&MemoryConfig::default());
    let loss = |params: &[Tensor]| {
        let mut m = model.clone();
        m.set_params(params.to_vec())?;
        let frames: Vec<_> = clip.frames.iter().collect();
        let run = run_sequence(&m, &frames, &[0, 1, 2], MemoryBank::new(memory.clone())?, None)?;
        let preds = run.all_predictions();
        let pairs: Vec<_> = preds.iter().map(|p| (&p.pointmap, &p.confidence)).collect();
        let gts: Vec<&Pointmap> = preds.iter().map(|p| &clip.gt_pointmaps[p.frame_index]).collect();
        Ok(objective::total_loss(&pairs, &gts, &LossConfig::default())?.total)
    };
    let t = std::time::Instant::now();
    let g = check_gradients(&model.params(), 3e-4, loss)?;
    for ((name, p), err) in model.named_params().iter().zip(&g.tensor_rel_err) {
        println!("{name:<32} {:>6}  {err:.2e}", p.len());
    }
    let worst = g.tensor_rel_err.iter().copied().fold(0.0, f64::max);
    println!("{} elements in {:.1} s, worst tensor rel-err {worst:.2e}", g.checked, t.elapsed().as_secs_f64());
    Ok(())
}
