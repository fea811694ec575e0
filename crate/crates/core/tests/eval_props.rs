use memrecon::eval::{accuracy, align_similarity, alignment_residual, completion, evaluate, nearest_distances, Similarity};
use memrecon::Pointmap;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 6..60)
}

fn similarity() -> impl Strategy<Value = Similarity> {
    (prop::array::uniform3(-3.0f64..3.0), 0.2f64..5.0, prop::array::uniform3(-10.0f64..10.0)).prop_map(|(axis, scale, t)| {
        let r = Rotation3::new(Vector3::from(axis));
        let m = r.matrix();
        Similarity {
            scale,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: t,
        }
    })
}

fn well_spread(pts: &[[f64; 3]]) -> bool {
    let n = pts.len() as f64;
    let mu = pts.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for p in pts {
        let d = Vector3::from(*p) - mu;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    ev.min() > 1e-2 * ev.max()
}

fn brute(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

fn sphere_map(n: usize, rot: &Rotation3<f64>) -> Pointmap {
    let pts: Vec<[f64; 3]> = (0..n * n)
        .map(|i| {
            let th = 0.3 + 2.5 * (i / n) as f64 / (n - 1) as f64;
            let ph = 0.2 + 2.0 * (i % n) as f64 / (n - 1) as f64;
            let p = rot * Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            [p[0], p[1], p[2]]
        })
        .collect();
    Pointmap::from_points(n, n, &pts, vec![true; n * n]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residual_invariant_under_preapplied_similarity(gt in cloud(), noise in cloud(), sim in similarity()) {
        prop_assume!(well_spread(&gt));
        let pred: Vec<[f64; 3]> = gt.iter().zip(noise.iter().cycle()).map(|(g, e)| [g[0] + 0.1 * e[0], g[1] + 0.1 * e[1], g[2] + 0.1 * e[2]]).collect();
        let base = alignment_residual(&align_similarity(&pred, &gt).unwrap(), &pred, &gt);
        let moved = sim.apply_all(&pred);
        let again = alignment_residual(&align_similarity(&moved, &gt).unwrap(), &moved, &gt);
        prop_assert!((base - again).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn known_similarity_is_recovered(pred in cloud(), sim in similarity()) {
        prop_assume!(well_spread(&pred));
        let gt = sim.apply_all(&pred);
        let est = align_similarity(&pred, &gt).unwrap();
        prop_assert!((est.scale - sim.scale).abs() < 1e-6 * sim.scale);
        prop_assert!(alignment_residual(&est, &pred, &gt) < 1e-12 * sim.scale * sim.scale * 100.0);
    }

    #[test]
    fn distances_match_brute_force(a in cloud(), b in cloud()) {
        let fast = nearest_distances(&a, &b).unwrap();
        prop_assert_eq!(&fast, &brute(&a, &b));
        let acc = accuracy(&a, &b).unwrap();
        let mut sorted = brute(&a, &b);
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        prop_assert!((acc.mean - mean).abs() < 1e-12 * (1.0 + mean));
        prop_assert_eq!(accuracy(&a, &a).unwrap().mean, 0.0);
        prop_assert_eq!(completion(&a, &a).unwrap().median, 0.0);
    }

    #[test]
    fn normal_consistency_ignores_global_rotation(axis in prop::array::uniform3(-3.0f64..3.0)) {
        let gt = vec![sphere_map(24, &Rotation3::identity())];
        let rotated = vec![sphere_map(24, &Rotation3::new(Vector3::from(axis)))];
        let view = [[0.0, 0.0, 0.0]];
        let plain = evaluate(&gt, &gt, &view).unwrap();
        let r = evaluate(&rotated, &gt, &view).unwrap();
        prop_assert!((plain.nc_mean - r.nc_mean).abs() < 1e-6);
        prop_assert!(r.nc_mean > 0.999);
        prop_assert!(r.acc_mean < 1e-6);
    }
}

#[test]
fn identical_clouds_align_to_identity() {
    let pts: Vec<[f64; 3]> = (0..30).map(|i| { let t = i as f64; [t.sin(), (1.3 * t).cos(), 0.1 * t] }).collect();
    let s = align_similarity(&pts, &pts).unwrap();
    assert!((s.scale - 1.0).abs() < 1e-9);
    for i in 0..3 {
        for j in 0..3 {
            assert!((s.rotation[i][j] - f64::from(i == j)).abs() < 1e-9);
        }
        assert!(s.translation[i].abs() < 1e-9);
    }
}

#[test]
fn mirrored_cloud_keeps_proper_rotation() {
    let pts: Vec<[f64; 3]> = (0..40).map(|i| { let t = i as f64; [t.sin(), (0.7 * t).cos(), (0.3 * t).sin() * 2.0] }).collect();
    let mirrored: Vec<[f64; 3]> = pts.iter().map(|p| [-p[0], p[1], p[2]]).collect();
    let s = align_similarity(&pts, &mirrored).unwrap();
    let r = nalgebra::Matrix3::from_fn(|i, j| s.rotation[i][j]);
    assert!((r.determinant() - 1.0).abs() < 1e-9);
    assert!(alignment_residual(&s, &pts, &mirrored) > 1e-3);
}

#[test]
fn constant_offset_has_zero_accuracy_after_alignment() {
    let gt = sphere_map(16, &Rotation3::identity());
    let shifted: Vec<[f64; 3]> = (0..gt.valid.len()).map(|i| { let p = gt.point(i); [p[0] + 2.0, p[1] - 1.0, p[2] + 0.5] }).collect();
    let pred = Pointmap::from_points(16, 16, &shifted, gt.valid.clone()).unwrap();
    let m = evaluate(&[pred], &[gt], &[[0.0; 3]]).unwrap();
    assert!(m.acc_mean < 1e-9 && m.comp_mean < 1e-9);
    m.validate().unwrap();
}
