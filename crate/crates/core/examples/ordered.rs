//! Reconstructs a rendered sequence in capture order and reports memory
//! growth, per-step time and the aligned metrics.
//!
//! cargo run --release --example ordered -- [checkpoint_dir] [n_frames]
//!
//! Without a checkpoint an untrained model is used, which shows the
//! mechanics but not useful geometry.

use memrecon::checkpoint;
use memrecon::pipeline::reconstruct_ordered;
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, SceneParams};
use memrecon::{app, MemoryConfig, Model, ModelConfig};

fn main() -> memrecon::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|a| a != "-");
    let n: usize = args.next().map_or(30, |s| s.parse().expect("n_frames"));
    let model = match ckpt {
        Some(d) => checkpoint::load(d.as_ref())?.0,
        None => Model::new(ModelConfig::default(), &mut stream(0, Stream::Init))?,
    };
    let scene = generate_scene(11, &SceneParams { n_frames: n, image_size: model.config.image_size, ..SceneParams::default() })?;
    let rec = reconstruct_ordered(&model, &scene.frames, &MemoryConfig::default())?;
    for (f, s) in rec.memory.frames.iter().zip(&rec.step_seconds) {
        println!(
            "frame {:3}  inserted {:5}  working {:4}  long-term {:4}  clipped {:5.1}%  {:.1} ms",
            f.frame_index,
            f.inserted,
            f.working_tokens,
            f.long_term_tokens,
            100.0 * f.clipped_fraction,
            1e3 * s
        );
    }
    let m = app::evaluate_reconstruction(&rec, &scene)?;
    println!(
        "acc {:.4} ({:.2}% of diameter)  comp {:.4}  nc {:.3}  consolidations {}",
        m.acc_mean,
        100.0 * m.acc_mean / scene.diameter,
        m.comp_mean,
        m.nc_mean,
        rec.memory.consolidations.len()
    );
    Ok(())
}
