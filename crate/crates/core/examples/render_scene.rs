//! Renders a procedural scene, writes it in the gen-data layout, and dumps
//! the fused ground-truth cloud as a PLY file.
//!
//! cargo run --release --example render_scene -- [seed] [out_dir]

use std::path::PathBuf;

use memrecon::io::ply::{write_ply, PointCloud};
use memrecon::scenes::{dump_scene, generate_scene, SceneParams, Trajectory};

fn main() -> memrecon::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("memrecon_scene"), PathBuf::from);
    for trajectory in [Trajectory::Orbit, Trajectory::Forward, Trajectory::RandomWalk] {
        let params = SceneParams { n_frames: 10, trajectory, ..SceneParams::default() };
        let s = generate_scene(seed, &params)?;
        let valid: usize = s.gt_pointmaps.iter().map(|m| m.valid_count()).sum();
        let depth: Vec<f64> = s.depths.iter().flatten().copied().filter(|d| *d > 0.0).collect();
        let (lo, hi) = depth.iter().fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(*d), b.max(*d)));
        println!(
            "{trajectory:?}: {} frames, {valid} valid pixels, depth {lo:.2}..{hi:.2}, diameter {:.2}",
            s.len(),
            s.diameter
        );
    }
    let s = generate_scene(seed, &SceneParams::default())?;
    let dir = out.join("scene_0000");
    dump_scene(&s, &dir)?;
    let points = s.all_gt_points();
    let cloud = PointCloud { quality: vec![1.0; points.len()], points, grid: None };
    write_ply(&out.join("gt.ply"), &cloud)?;
    println!("wrote {} and {}", dir.display(), out.join("gt.ply").display());
    Ok(())
}
