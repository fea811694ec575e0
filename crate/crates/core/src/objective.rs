//! Training objective: confidence-weighted pointmap regression plus a
//! scale hinge, and the frame-interval curriculum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConfidenceMap, Pointmap};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the `-log C` confidence regularizer.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.4 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("loss: alpha {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub t_min: usize,
    pub t_max: usize,
    pub n_frames: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig { t_min: 1, t_max: 4, n_frames: 5 }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::Config(format!(
                "curriculum: need 1 <= t_min ({}) <= t_max ({})",
                self.t_min, self.t_max
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::Config("curriculum: n_frames must be >= 2".into()));
        }
        Ok(())
    }
}

fn valid_mask(p: &Pointmap) -> Vec<f64> {
    p.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

/// Mean distance to the origin over valid pixels of every map, as a
/// differentiable scalar.
pub fn mean_distance(maps: &[&Pointmap], masks: &[&[bool]]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    let mut count = 0usize;
    for (m, mask) in maps.iter().zip(masks) {
        let w: Vec<f64> = mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        count += mask.iter().filter(|v| **v).count();
        let s = m.points.norm_last()?.mul_const(&w)?.sum()?;
        total = Some(match total {
            Some(t) => t.add(&s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) if count > 0 => t,
        _ => return Err(Error::EmptyGroundTruth),
    };
    total.scale(1.0 / count as f64)
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub pred: Vec<Pointmap>,
    pub gt: Vec<Pointmap>,
    pub scale_pred: Tensor,
    pub scale_gt: Tensor,
}

/// Divides each set by its own mean distance to the origin over the valid
/// pixels of `gt` (predicted maps are masked the same way).
pub fn normalize_pointmaps(pred: &[Pointmap], gt: &[Pointmap]) -> Result<Normalized> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predictions vs {} ground-truth maps", pred.len(), gt.len())));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.points.shape() != g.points.shape() {
            return Err(Error::Dimension(format!(
                "prediction {:?} vs ground truth {:?}",
                p.points.shape(),
                g.points.shape()
            )));
        }
    }
    let masks: Vec<&[bool]> = gt.iter().map(|g| g.valid.as_slice()).collect();
    let scale_pred = mean_distance(&pred.iter().collect::<Vec<_>>(), &masks)?;
    let scale_gt = mean_distance(&gt.iter().collect::<Vec<_>>(), &masks)?;
    for (name, s) in [("prediction", &scale_pred), ("ground truth", &scale_gt)] {
        if s.item()? <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate(format!("{name} points all at the origin")));
        }
    }
    let rescale = |maps: &[Pointmap], s: &Tensor| -> Result<Vec<Pointmap>> {
        maps.iter()
            .zip(gt)
            .map(|(m, g)| Pointmap::new(m.points.div_scalar(s)?, g.valid.clone()))
            .collect()
    };
    Ok(Normalized {
        pred: rescale(pred, &scale_pred)?,
        gt: rescale(gt, &scale_gt)?,
        scale_pred,
        scale_gt,
    })
}

/// `sum_valid C * |x - x_gt| - alpha * log C` for one map.
pub fn loss_conf(pred: &Pointmap, conf: &ConfidenceMap, gt: &Pointmap, alpha: f64) -> Result<Tensor> {
    if gt.valid_count() == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    if conf.mapped.len() != gt.valid.len() {
        return Err(Error::Dimension("confidence map does not match pointmap".into()));
    }
    let reg = pred.points.sub(&gt.points)?.norm_last()?;
    let per_pixel = conf.mapped.mul(&reg)?.sub(&conf.mapped.log()?.scale(alpha)?)?;
    per_pixel.mul_const(&valid_mask(gt))?.sum()
}

/// `max(0, scale_pred - scale_gt)`.
pub fn loss_scale(scale_pred: &Tensor, scale_gt: &Tensor) -> Result<Tensor> {
    scale_pred.sub(&scale_gt.detach())?.relu()
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub conf: Tensor,
    pub scale: Tensor,
    pub total: Tensor,
}

/// Full objective over a list of predictions (any mix of streams) and their
/// ground truth. Normalization is joint over the whole list.
pub fn total_loss(preds: &[(&Pointmap, &ConfidenceMap)], gt: &[&Pointmap], cfg: &LossConfig) -> Result<LossTerms> {
    let pred_maps: Vec<Pointmap> = preds.iter().map(|(p, _)| (*p).clone()).collect();
    let gt_maps: Vec<Pointmap> = gt.iter().map(|g| (*g).clone()).collect();
    let norm = normalize_pointmaps(&pred_maps, &gt_maps)?;
    let mut conf: Option<Tensor> = None;
    for ((p, g), (_, c)) in norm.pred.iter().zip(&norm.gt).zip(preds) {
        let l = loss_conf(p, c, g, cfg.alpha)?;
        conf = Some(match conf {
            Some(acc) => acc.add(&l)?,
            None => l,
        });
    }
    let conf = conf.expect("non-empty list checked by normalize");
    let scale = loss_scale(&norm.scale_pred, &norm.scale_gt)?;
    let total = conf.add(&scale)?;
    Ok(LossTerms { conf, scale, total })
}

/// Active ratio of the training progress `eta`.
pub fn active_ratio(eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::OutOfRange(format!("training progress {eta} outside [0, 1]")));
    }
    Ok(if eta < 0.75 { (2.0 * eta).min(1.0) } else { (4.0 - 4.0 * eta).max(0.5) })
}

/// Frame interval at progress `eta`, rounded half up.
pub fn curriculum_interval(eta: f64, cfg: &CurriculumConfig) -> Result<usize> {
    cfg.validate()?;
    let a = active_ratio(eta)?;
    let t = cfg.t_min as f64 + a * (cfg.t_max - cfg.t_min) as f64;
    Ok((t + 0.5).floor() as usize)
}
