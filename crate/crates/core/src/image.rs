//! RGB images with channels in `[0, 1]`, and their tensor and PPM forms.

use std::path::Path;

use crate::diffusion::Tensor;
use crate::mask::PolygonMask;
use crate::pnm::{self, PnmError, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, channel-last.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, idx: usize) -> [f64; 3] {
        [self.data[3 * idx], self.data[3 * idx + 1], self.data[3 * idx + 2]]
    }

    pub fn set_pixel(&mut self, idx: usize, rgb: [f64; 3]) {
        self.data[3 * idx..3 * idx + 3].copy_from_slice(&rgb);
    }

    /// Paint every foreground cell of `mask`.
    pub fn fill_mask(&mut self, mask: &PolygonMask, rgb: [f64; 3]) {
        for (i, &c) in mask.cells().iter().enumerate() {
            if c != 0 {
                self.set_pixel(i, rgb);
            }
        }
    }

    /// Mean color over `mask`, or `None` when it is empty.
    pub fn region_mean(&self, mask: &PolygonMask) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (i, &c) in mask.cells().iter().enumerate() {
            if c != 0 {
                let p = self.pixel(i);
                for k in 0..3 {
                    sum[k] += p[k];
                }
                n += 1;
            }
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }

    /// Tensor of shape `[h, w, 3]` with values mapped to `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|v| 2.0 * v - 1.0).collect();
        Tensor::from_vec(&[self.height, self.width, 3], data).expect("image shape")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor), clamping to the valid range.
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        assert!(s.len() == 3 && s[2] == 3, "expected an [h, w, 3] tensor");
        let data = t.as_slice().iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
        Self { width: s[1], height: s[0], data }
    }

    pub fn to_raster(&self) -> Raster {
        let data = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Raster { width: self.width, height: self.height, channels: 3, data }
    }

    pub fn from_raster(r: &Raster) -> Self {
        assert_eq!(r.channels, 3, "expected an RGB raster");
        Self { width: r.width, height: r.height, data: r.data.iter().map(|&b| b as f64 / 255.0).collect() }
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), PnmError> {
        let r = self.to_raster();
        pnm::write_ppm(path, r.width, r.height, r.data)
    }

    pub fn load_ppm(path: &Path) -> Result<Self, PnmError> {
        Ok(Self::from_raster(&pnm::read_ppm(path)?))
    }
}
