use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image, row-major HWC, channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[P, patch*patch*3]` rows in raster patch order, values mapped to `[-1, 1]`.
    pub fn patches(&self, patch: usize) -> Result<Tensor> {
        if patch == 0 || self.width % patch != 0 || self.height % patch != 0 {
            return Err(Error::Config(format!(
                "image {}x{} not divisible into {patch}px patches",
                self.width, self.height
            )));
        }
        let (gw, gh) = (self.width / patch, self.height / patch);
        let row = patch * patch * 3;
        let mut out = Vec::with_capacity(gw * gh * row);
        for py in 0..gh {
            for px in 0..gw {
                for iy in 0..patch {
                    for ix in 0..patch {
                        let p = self.pixel(px * patch + ix, py * patch + iy);
                        out.extend(p.iter().map(|v| (v - 0.5) / 0.5));
                    }
                }
            }
        }
        Tensor::new(out, &[gw * gh, row])
    }
}

#[derive(Debug, Clone)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub frame_index: usize,
}

impl TokenGrid {
    pub fn new(tokens: Tensor, frame_index: usize) -> Self {
        TokenGrid { tokens, frame_index }
    }

    pub fn detach(&self) -> TokenGrid {
        TokenGrid { tokens: self.tokens.detach(), frame_index: self.frame_index }
    }
}

/// Dense per-pixel 3D points, `[H, W, 3]`.
#[derive(Debug, Clone)]
pub struct Pointmap {
    pub points: Tensor,
    pub valid: Vec<bool>,
}

impl Pointmap {
    pub fn new(points: Tensor, valid: Vec<bool>) -> Result<Self> {
        let s = points.shape();
        if s.len() != 3 || s[2] != 3 || valid.len() != s[0] * s[1] {
            return Err(Error::Dimension(format!(
                "pointmap shape {s:?} with {} validity flags",
                valid.len()
            )));
        }
        Ok(Pointmap { points, valid })
    }

    pub fn from_points(width: usize, height: usize, pts: &[[f64; 3]], valid: Vec<bool>) -> Result<Self> {
        let data = pts.iter().flatten().copied().collect();
        Pointmap::new(Tensor::new(data, &[height, width, 3])?, valid)
    }

    pub fn height(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let d = self.points.data();
        [d[3 * i], d[3 * i + 1], d[3 * i + 2]]
    }

    pub fn valid_points(&self) -> Vec<[f64; 3]> {
        (0..self.valid.len()).filter(|&i| self.valid[i]).map(|i| self.point(i)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn detach(&self) -> Pointmap {
        Pointmap { points: self.points.detach(), valid: self.valid.clone() }
    }
}

/// Raw confidence `raw` and its mapping `1 + exp(raw)`, both `[H, W]`.
#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    pub raw: Tensor,
    pub mapped: Tensor,
}

impl ConfidenceMap {
    pub fn from_raw(raw: Tensor) -> Result<Self> {
        let mapped = raw.exp()?.add_scalar(1.0)?;
        Ok(ConfidenceMap { raw, mapped })
    }

    pub fn detach(&self) -> ConfidenceMap {
        ConfidenceMap { raw: self.raw.detach(), mapped: self.mapped.detach() }
    }

    /// Mean over pixels of `(C - 1) / C`, the logistic of the raw value.
    pub fn mean_sigmoid(&self) -> f64 {
        let m = self.mapped.data();
        m.iter().map(|c| (c - 1.0) / c).sum::<f64>() / m.len().max(1) as f64
    }

    pub fn mean_mapped(&self) -> f64 {
        let m = self.mapped.data();
        m.iter().sum::<f64>() / m.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_raw_maps_to_two() {
        let c = ConfidenceMap::from_raw(Tensor::zeros(&[2, 2])).unwrap();
        assert!(c.mapped.data().iter().all(|v| *v == 2.0));
        assert_eq!(c.mean_sigmoid(), 0.5);
    }

    #[test]
    fn patch_layout() {
        let mut data = vec![0.0; 4 * 4 * 3];
        // pixel (x=2, y=1) red channel -> patch 1, inner index (1*2+0)
        data[(4 + 2) * 3] = 1.0;
        let img = Image::new(4, 4, data).unwrap();
        let p = img.patches(2).unwrap();
        assert_eq!(p.shape(), &[4, 12]);
        assert_eq!(p.data()[12 + 2 * 3], 1.0);
        assert_eq!(p.data()[0], -1.0);
        assert!(img.patches(3).is_err());
    }
}
