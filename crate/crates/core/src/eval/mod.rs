//! Reconstruction metrics after similarity alignment: accuracy,
//! completion and normal consistency.

pub mod kdtree;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Pointmap;
use kdtree::KdTree;

pub const REPORT_VERSION: u32 = 1;
pub const MAX_CORRESPONDENCES: usize = 100_000;
pub const NC_DEFINITION: &str = "unsigned |n_pred . n_gt| of forward-difference grid normals, gt normal at nearest gt point";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity { scale: 1.0, rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    fn r(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.r() * Vector3::from(*p) * self.scale + Vector3::from(self.translation);
        [q[0], q[1], q[2]]
    }

    pub fn apply_all(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let r = self.r() * self.scale;
        let t = Vector3::from(self.translation);
        pts.iter()
            .map(|p| {
                let q = r * Vector3::from(*p) + t;
                [q[0], q[1], q[2]]
            })
            .collect()
    }
}

fn centroid(pts: &[[f64; 3]]) -> Vector3<f64> {
    pts.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / pts.len() as f64
}

fn spread_rank_ok(pts: &[[f64; 3]], mu: &Vector3<f64>) -> bool {
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = Vector3::from(*p) - mu;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[0] > 0.0 && ev[1] > 1e-12 * ev[0]
}

/// Least-squares `s, R, t` minimizing `sum |s R p_i + t - g_i|^2` (Umeyama),
/// with `det R = +1`. Correspondences are index-aligned.
pub fn align_similarity(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth correspondences", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::Rank(format!("{} correspondences, need at least 3", pred.len())));
    }
    let mp = centroid(pred);
    let mg = centroid(gt);
    if !spread_rank_ok(pred, &mp) || !spread_rank_ok(gt, &mg) {
        return Err(Error::Rank("points are collinear or coincident".into()));
    }
    let n = pred.len() as f64;
    let mut sigma = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let dp = Vector3::from(*p) - mp;
        let dg = Vector3::from(*g) - mg;
        sigma += dg * dp.transpose();
        var_p += dp.norm_squared();
    }
    sigma /= n;
    var_p /= n;
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rot = u * s * v_t;
    let d = svd.singular_values;
    let scale = (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_p;
    let t = mg - rot * mp * scale;
    Ok(Similarity {
        scale,
        rotation: [
            [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
            [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
            [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
        ],
        translation: [t[0], t[1], t[2]],
    })
}

/// Mean squared residual after applying `sim`.
pub fn alignment_residual(sim: &Similarity, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let a = sim.apply_all(pred);
    a.iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|k| (p[k] - g[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / pred.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

pub fn summarize(values: &mut [f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyCloud);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) };
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(Summary { mean, median })
}

/// Distances from each `from` point to its nearest `to` point.
pub fn nearest_distances(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(to);
    Ok(from.par_iter().map(|q| tree.nearest(q).expect("non-empty").1.sqrt()).collect())
}

pub fn accuracy(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Summary> {
    summarize(&mut nearest_distances(pred, gt)?)
}

pub fn completion(gt: &[[f64; 3]], pred: &[[f64; 3]]) -> Result<Summary> {
    summarize(&mut nearest_distances(gt, pred)?)
}

/// Unit normals from forward grid differences, `(point, normal)` per pixel
/// whose right and lower neighbours are valid. Oriented toward `viewpoint`.
pub fn grid_normals(map: &Pointmap, viewpoint: [f64; 3]) -> Vec<([f64; 3], [f64; 3])> {
    let (w, h) = (map.width(), map.height());
    let mut out = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let i = y * w + x;
            if !(map.valid[i] && map.valid[i + 1] && map.valid[i + w]) {
                continue;
            }
            let p = Vector3::from(map.point(i));
            let dx = Vector3::from(map.point(i + 1)) - p;
            let dy = Vector3::from(map.point(i + w)) - p;
            let Some(mut n) = dx.cross(&dy).try_normalize(1e-12) else { continue };
            if n.dot(&(Vector3::from(viewpoint) - p)) < 0.0 {
                n = -n;
            }
            out.push((map.point(i), [n[0], n[1], n[2]]));
        }
    }
    out
}

/// Normal agreement between aligned prediction and ground truth maps.
pub fn normal_consistency(pred: &[Pointmap], gt: &[Pointmap], viewpoints: &[[f64; 3]]) -> Result<Summary> {
    let pn: Vec<_> = pred.iter().zip(viewpoints).flat_map(|(m, v)| grid_normals(m, *v)).collect();
    let gn: Vec<_> = gt.iter().zip(viewpoints).flat_map(|(m, v)| grid_normals(m, *v)).collect();
    if pn.is_empty() || gn.is_empty() {
        return Err(Error::Degenerate("no pixel has a valid 2x2 neighbourhood".into()));
    }
    let gpts: Vec<[f64; 3]> = gn.iter().map(|(p, _)| *p).collect();
    let tree = KdTree::new(&gpts);
    let mut nc: Vec<f64> = pn
        .par_iter()
        .map(|(p, n)| {
            let (j, _) = tree.nearest(p).expect("non-empty");
            let g = gn[j].1;
            (n[0] * g[0] + n[1] * g[1] + n[2] * g[2]).abs()
        })
        .collect();
    summarize(&mut nc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub version: u32,
    pub acc_mean: f64,
    pub acc_median: f64,
    pub comp_mean: f64,
    pub comp_median: f64,
    pub nc_mean: f64,
    pub nc_median: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub alignment: Similarity,
    pub nc_definition: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let ok = self.version == REPORT_VERSION
            && [self.acc_mean, self.acc_median, self.comp_mean, self.comp_median].iter().all(|v| v.is_finite() && *v >= 0.0)
            && [self.nc_mean, self.nc_median].iter().all(|v| (-1.0..=1.0).contains(v))
            && self.alignment.scale.is_finite();
        let r = Matrix3::from_fn(|i, j| self.alignment.rotation[i][j]);
        if !ok || (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::Format("metrics report fails its schema checks".into()));
        }
        Ok(())
    }
}

/// Pixel correspondences valid in both maps, strided down to `max` pairs.
pub fn correspondences(pred: &[Pointmap], gt: &[Pointmap], max: usize) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth frames", pred.len(), gt.len())));
    }
    let mut pairs = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        if p.valid.len() != g.valid.len() {
            return Err(Error::Dimension("prediction and ground-truth grids differ".into()));
        }
        for i in 0..p.valid.len() {
            if p.valid[i] && g.valid[i] {
                pairs.push((p.point(i), g.point(i)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let stride = pairs.len().div_ceil(max.max(1));
    Ok(pairs.into_iter().step_by(stride).unzip())
}

fn transform_map(sim: &Similarity, m: &Pointmap) -> Result<Pointmap> {
    let pts: Vec<[f64; 3]> = (0..m.valid.len()).map(|i| sim.apply(&m.point(i))).collect();
    Pointmap::from_points(m.width(), m.height(), &pts, m.valid.clone())
}

/// Aligns `pred` to `gt` and computes every metric. `viewpoints` are the
/// ground-truth camera centers used to orient normals.
pub fn evaluate(pred: &[Pointmap], gt: &[Pointmap], viewpoints: &[[f64; 3]]) -> Result<MetricsReport> {
    let (cp, cg) = correspondences(pred, gt, MAX_CORRESPONDENCES)?;
    let sim = align_similarity(&cp, &cg)?;
    let aligned: Vec<Pointmap> = pred.iter().map(|m| transform_map(&sim, m)).collect::<Result<_>>()?;
    let pred_pts: Vec<[f64; 3]> = aligned.iter().flat_map(Pointmap::valid_points).collect();
    let gt_pts: Vec<[f64; 3]> = gt.iter().flat_map(Pointmap::valid_points).collect();
    if gt_pts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let acc = accuracy(&pred_pts, &gt_pts)?;
    let comp = completion(&gt_pts, &pred_pts)?;
    let nc = normal_consistency(&aligned, gt, viewpoints)?;
    let report = MetricsReport {
        version: REPORT_VERSION,
        acc_mean: acc.mean,
        acc_median: acc.median,
        comp_mean: comp.mean,
        comp_median: comp.median,
        nc_mean: nc.mean,
        nc_median: nc.median,
        n_pred: pred_pts.len(),
        n_gt: gt_pts.len(),
        alignment: sim,
        nc_definition: NC_DEFINITION.to_string(),
    };
    Ok(report)
}
