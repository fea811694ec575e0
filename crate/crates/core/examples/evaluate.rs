//! Scores perturbed copies of a ground-truth reconstruction to show what
//! accuracy, completion and normal consistency respond to.
//!
//! cargo run --release --example evaluate

use memrecon::eval::{evaluate, Similarity};
use memrecon::rng::{stream, Stream};
use memrecon::scenes::{generate_scene, SceneParams};
use memrecon::Pointmap;
use rand_distr::{Distribution, Normal};

fn map_points(maps: &[Pointmap], f: &mut dyn FnMut([f64; 3]) -> [f64; 3]) -> Vec<Pointmap> {
    maps.iter()
        .map(|m| {
            let pts: Vec<[f64; 3]> = (0..m.valid.len()).map(|i| f(m.point(i))).collect();
            Pointmap::from_points(m.width(), m.height(), &pts, m.valid.clone()).unwrap()
        })
        .collect()
}

fn main() -> memrecon::Result<()> {
    let s = generate_scene(3, &SceneParams { n_frames: 6, ..SceneParams::default() })?;
    let views: Vec<[f64; 3]> = s.poses.iter().map(|p| [p.translation[0], p.translation[1], p.translation[2]]).collect();
    let (c, t) = (0.6f64.cos(), 0.6f64.sin());
    let sim = Similarity { scale: 2.5, rotation: [[c, -t, 0.0], [t, c, 0.0], [0.0, 0.0, 1.0]], translation: [1.0, -3.0, 0.5] };
    let mut rng = stream(3, Stream::Eval);
    let mut cases: Vec<(&str, Vec<Pointmap>)> = vec![("exact", s.gt_pointmaps.clone())];
    cases.push(("similarity transformed", map_points(&s.gt_pointmaps, &mut |p| sim.apply(&p))));
    for sigma in [0.01, 0.05] {
        let noise = Normal::new(0.0, sigma * s.diameter).unwrap();
        let name = if sigma < 0.02 { "noise 1% of diameter" } else { "noise 5% of diameter" };
        cases.push((name, map_points(&s.gt_pointmaps, &mut |p| p.map(|v| v + noise.sample(&mut rng)))));
    }
    cases.push(("scaled by 1.2", map_points(&s.gt_pointmaps, &mut |p| p.map(|v| v * 1.2))));
    let half: Vec<Pointmap> = s.gt_pointmaps.iter().enumerate().map(|(k, m)| if k < 3 { m.clone() } else { s.gt_pointmaps[0].clone() }).collect();
    cases.push(("half the frames missing", half));
    for (name, pred) in cases {
        let m = evaluate(&pred, &s.gt_pointmaps, &views)?;
        println!(
            "{name:<24} acc {:.4}  comp {:.4}  nc {:.3}  scale {:.3}",
            m.acc_mean, m.comp_mean, m.nc_mean, m.alignment.scale
        );
    }
    Ok(())
}
