//! Trains a small model on 20-frame scenes, then runs the clip, long-term
//! memory and memory-size ablations on held-out sequences.
//!
//! cargo run --release --example ablation -- [steps] [checkpoint_dir]

use std::path::PathBuf;

use memrecon::app::{self, AblationConfig, Suite};
use memrecon::checkpoint;
use memrecon::rng::{stream, Stream};
use memrecon::train::{train, TrainData};
use memrecon::Model;

fn main() -> memrecon::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(800, |s| s.parse().expect("steps"));
    let ckpt: Option<PathBuf> = args.next().map(PathBuf::from);
    let cfg = app::ablation_training_config(steps, 0);
    let model = match ckpt.as_ref().filter(|d| d.join("manifest.json").is_file()) {
        Some(d) => checkpoint::load(d)?.0,
        None => {
            let scenes = app::generate_scenes(cfg.seed, cfg.data.n_scenes, &cfg.data.scene)?;
            let model = Model::new(cfg.model.clone(), &mut stream(cfg.seed, Stream::Init))?;
            let t = std::time::Instant::now();
            let out = train(model, &cfg, TrainData::Scenes(&scenes), &mut |l| {
                if l.step % 100 == 0 {
                    println!("step {:5}  T={}  total {:10.3}", l.step, l.interval, l.loss_total);
                }
            })?;
            println!("trained {steps} steps in {:.1} s", t.elapsed().as_secs_f64());
            if let Some(d) = &ckpt {
                checkpoint::save(&out.model, d, steps as u64, serde_json::to_value(&cfg)?)?;
            }
            out.model
        }
    };
    let ab = AblationConfig::default();
    for suite in [Suite::Lm, Suite::Clip, Suite::Memsize] {
        let r = app::run_ablation(&model, suite, &ab)?;
        println!("{suite:?}");
        for row in &r.rows {
            println!(
                "  {:<14} acc {:.4}  comp {:.4}  nc {:.3}  tokens {}/{}",
                row.setting, row.acc_mean, row.comp_mean, row.nc_mean, row.max_total_tokens, row.token_bound
            );
        }
    }
    Ok(())
}
