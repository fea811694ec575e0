//! Prints the frame-interval schedule over training progress and the
//! clips it samples from one scene.
//!
//! cargo run --release --example curriculum -- [t_min] [t_max]

use memrecon::objective::{active_ratio, curriculum_interval, CurriculumConfig};
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, sample_clip_random, SceneParams};

fn main() -> memrecon::Result<()> {
    let mut args = std::env::args().skip(1);
    let t_min: usize = args.next().map_or(1, |s| s.parse().expect("t_min"));
    let t_max: usize = args.next().map_or(9, |s| s.parse().expect("t_max"));
    let cfg = CurriculumConfig { t_min, t_max, n_frames: 5 };
    let scene = generate_scene(0, &SceneParams { n_frames: 5 + 4 * t_max, image_size: 16, ..SceneParams::default() })?;
    let mut rng = stream(0, Stream::Data);
    for k in 0..=20 {
        let eta = k as f64 / 20.0;
        let t = curriculum_interval(eta, &cfg)?;
        let clip = sample_clip_random(&scene, t, cfg.n_frames, &mut rng)?;
        let span = clip.poses.last().map_or(0.0, |p| p.translation.norm());
        println!("eta {eta:.2}  ratio {:.2}  T {t}  last camera {span:.2} from first", active_ratio(eta)?);
    }
    Ok(())
}
