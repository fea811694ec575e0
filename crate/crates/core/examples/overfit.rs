//! Overfits the toy model on one fixed 5-frame clip and reports the loss
//! curve and post-alignment accuracy relative to the scene diameter.
//!
//! cargo run --release --example overfit -- [steps] [lr]

use memrecon::config::RunConfig;
use memrecon::eval;
use memrecon::optim::AdamWConfig;
use memrecon::pipeline::reconstruct_ordered;
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, sample_clip, SceneParams};
use memrecon::train::{train, TrainData};
use memrecon::Model;

fn main() -> memrecon::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(600, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("lr"));
    let cfg = RunConfig {
        epochs: 1,
        steps_per_epoch: steps,
        optimizer: AdamWConfig { lr, weight_decay: 0.0, ..AdamWConfig::default() },
        ..RunConfig::default()
    };
    let scene = generate_scene(cfg.seed, &SceneParams { n_frames: 5, ..SceneParams::default() })?;
    let clip = sample_clip(&scene, 0, 1, 5)?;
    let model = Model::new(cfg.model.clone(), &mut stream(cfg.seed, Stream::Init))?;
    println!("parameters: {}", model.num_params());
    let t = std::time::Instant::now();
    let out = train(model, &cfg, TrainData::FixedClip(&clip), &mut |l| {
        if l.step % 50 == 0 {
            println!("step {:5}  total {:10.3}  conf {:10.3}  scale {:.4}", l.step, l.loss_total, l.loss_conf, l.loss_scale);
        }
    })?;
    println!("{:.3} s/step", t.elapsed().as_secs_f64() / steps as f64);
    let rec = reconstruct_ordered(&out.model, &clip.frames, &cfg.memory)?;
    let preds: Vec<_> = rec.frames.iter().map(|f| f.prediction.pointmap.clone()).collect();
    let views: Vec<[f64; 3]> = clip.poses.iter().map(|p| [p.translation[0], p.translation[1], p.translation[2]]).collect();
    let report = eval::evaluate(&preds, &clip.gt_pointmaps, &views)?;
    println!(
        "accuracy mean {:.4} ({:.2}% of diameter {:.3}), completion {:.4}, nc {:.3}",
        report.acc_mean,
        100.0 * report.acc_mean / clip.diameter,
        clip.diameter,
        report.comp_mean,
        report.nc_mean
    );
    Ok(())
}
