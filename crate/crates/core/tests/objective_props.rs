use memrecon::objective::{active_ratio, curriculum_interval, loss_conf, loss_scale, normalize_pointmaps, CurriculumConfig};
use memrecon::{ConfidenceMap, Pointmap, Tensor};
use proptest::prelude::*;

fn map(pts: &[[f64; 3]], valid: Vec<bool>) -> Pointmap {
    Pointmap::from_points(pts.len(), 1, pts, valid).unwrap()
}

fn points() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 2..30)
}

fn norms(m: &Pointmap) -> f64 {
    let v = m.valid_points();
    v.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).sum::<f64>() / v.len() as f64
}

/// Interval oracle written from the piecewise definition.
fn expected_interval(eta: f64, t_min: usize, t_max: usize) -> usize {
    let a = if eta < 0.75 { (2.0 * eta).min(1.0) } else { (4.0 - 4.0 * eta).max(0.5) };
    let t = t_min as f64 + a * (t_max - t_min) as f64;
    let lo = t.floor();
    (if t - lo >= 0.5 { lo + 1.0 } else { lo }) as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalization_is_idempotent(pts in points(), scale in 0.1f64..20.0) {
        prop_assume!(pts.iter().any(|p| p.iter().any(|v| v.abs() > 1e-3)));
        let gt = vec![map(&pts, vec![true; pts.len()])];
        let pred: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] * scale, p[1] * scale + 0.1, p[2] * scale]).collect();
        let pred = vec![map(&pred, vec![true; pts.len()])];
        let once = normalize_pointmaps(&pred, &gt).unwrap();
        prop_assert!((norms(&once.gt[0]) - 1.0).abs() < 1e-9);
        prop_assert!((norms(&once.pred[0]) - 1.0).abs() < 1e-9);
        let twice = normalize_pointmaps(&once.pred, &once.gt).unwrap();
        for (a, b) in twice.gt[0].points.data().iter().zip(once.gt[0].points.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in twice.pred[0].points.data().iter().zip(once.pred[0].points.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_hinge_is_relu(p in 0.0f64..10.0, g in 0.0f64..10.0) {
        let l = loss_scale(&Tensor::scalar(p), &Tensor::scalar(g)).unwrap().item().unwrap();
        prop_assert_eq!(l, (p - g).max(0.0));
    }

    #[test]
    fn perfect_prediction_at_unit_confidence_rate(pts in points(), alpha in 0.01f64..1.0) {
        let n = pts.len();
        let m = map(&pts, vec![true; n]);
        let conf = ConfidenceMap::from_raw(Tensor::zeros(&[1, n])).unwrap();
        let l = loss_conf(&m, &conf, &m, alpha).unwrap().item().unwrap();
        prop_assert!((l + alpha * std::f64::consts::LN_2 * n as f64).abs() < 1e-9);
    }

    #[test]
    fn curriculum_interval_bounds(eta in 0.0f64..=1.0, t_min in 1usize..6, span in 0usize..10) {
        let cfg = CurriculumConfig { t_min, t_max: t_min + span, ..CurriculumConfig::default() };
        let t = curriculum_interval(eta, &cfg).unwrap();
        prop_assert!(t >= t_min && t <= t_min + span);
        prop_assert_eq!(t, expected_interval(eta, t_min, t_min + span));
        let a = active_ratio(eta).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        if (0.5..=0.75).contains(&eta) {
            prop_assert_eq!(t, t_min + span);
        }
    }
}

#[test]
fn curriculum_examples() {
    let cfg = CurriculumConfig { t_min: 1, t_max: 9, ..CurriculumConfig::default() };
    assert_eq!(curriculum_interval(0.0, &cfg).unwrap(), 1);
    assert_eq!(curriculum_interval(0.5, &cfg).unwrap(), 9);
    assert_eq!(curriculum_interval(1.0, &cfg).unwrap(), 5);
    assert!(active_ratio(1.5).is_err());
    assert!(active_ratio(-0.1).is_err());
}

#[test]
fn masked_pixels_do_not_count() {
    let pts = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [50.0, 50.0, 50.0]];
    let valid = vec![true, true, false];
    let gt = vec![map(&pts, valid.clone())];
    let norm = normalize_pointmaps(&gt.clone(), &gt).unwrap();
    assert!((norm.scale_gt.item().unwrap() - 1.5).abs() < 1e-12);
    let zeros = vec![map(&[[0.0; 3]; 3], valid)];
    assert!(normalize_pointmaps(&zeros, &gt).is_err());
}
