//! Binary grids: polygon rasterization, IoU and connected components.

use thiserror::Error;

use crate::geometry::{normalized_polygon, GeometryError, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mask dimensions must be positive")]
    EmptyGrid,
}

/// Row-major binary grid; cell `(col, row)` has center `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolygonMask {
    width: usize,
    height: usize,
    cells: Vec<u8>,
}

impl PolygonMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, cells: vec![0; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, cells: vec![1; width * height] }
    }

    /// Build from arbitrary cell values; anything nonzero is foreground.
    pub fn from_cells(width: usize, height: usize, cells: Vec<u8>) -> Self {
        assert_eq!(cells.len(), width * height, "cell count must equal width * height");
        Self { width, height, cells: cells.into_iter().map(|c| u8::from(c != 0)).collect() }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height);
        for row in 0..height {
            for col in 0..width {
                m.cells[row * width + col] = u8::from(f(col, row));
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col] != 0
    }

    pub fn set(&mut self, col: usize, row: usize, on: bool) {
        self.cells[row * self.width + col] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&c| c == 0)
    }

    fn check_same(&self, other: &Self) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        self.check_same(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| a | b).collect();
        Ok(Self { width: self.width, height: self.height, cells })
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize, MaskError> {
        self.check_same(other)?;
        Ok(self.cells.iter().zip(&other.cells).filter(|(a, b)| **a & **b != 0).count())
    }

    /// Axis-aligned pixel box `(min_col, min_row, max_col, max_row)`, inclusive.
    pub fn cell_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for row in 0..self.height {
            for col in 0..self.width {
                if self.get(col, row) {
                    b = Some(match b {
                        None => (col, row, col, row),
                        Some((c0, r0, c1, r1)) => (c0.min(col), r0.min(row), c1.max(col), r1.max(row)),
                    });
                }
            }
        }
        b
    }

    /// Area-average onto a `factor`-times coarser grid, then threshold at 0.5.
    pub fn downsample(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        Self::from_fn(w, h, |col, row| {
            let mut on = 0usize;
            let mut total = 0usize;
            for r in row * factor..((row + 1) * factor).min(self.height) {
                for c in col * factor..((col + 1) * factor).min(self.width) {
                    total += 1;
                    on += usize::from(self.get(c, r));
                }
            }
            2 * on >= total
        })
    }

    /// 4-connected foreground components, each as its own mask.
    pub fn components(&self) -> Vec<PolygonMask> {
        let mut label = vec![usize::MAX; self.cells.len()];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.cells.len() {
            if self.cells[start] == 0 || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Self::zeros(self.width, self.height);
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                comp.cells[i] = 1;
                let (col, row) = (i % self.width, i / self.width);
                let mut visit = |j: usize| {
                    if self.cells[j] != 0 && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                };
                if col > 0 {
                    visit(i - 1);
                }
                if col + 1 < self.width {
                    visit(i + 1);
                }
                if row > 0 {
                    visit(i - self.width);
                }
                if row + 1 < self.height {
                    visit(i + self.width);
                }
            }
            out.push(comp);
        }
        out
    }

    /// The largest 4-connected component (first one on ties), if any.
    pub fn largest_component(&self) -> Option<PolygonMask> {
        let comps = self.components();
        let mut best: Option<PolygonMask> = None;
        for c in comps {
            if best.as_ref().is_none_or(|b| c.count() > b.count()) {
                best = Some(c);
            }
        }
        best
    }
}

/// Rasterize a polygon: a cell is on iff its center is inside the
/// angularly normalized polygon under the even-odd rule.
pub fn rasterize(points: &[Point], width: usize, height: usize) -> Result<PolygonMask, MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::EmptyGrid);
    }
    let poly = normalized_polygon(points)?;
    Ok(rasterize_normalized(&poly, width, height))
}

/// Scanline fill of an already-normalized polygon.
///
/// Crossings use the half-open rule `(a.y > py) != (b.y > py)`; a center at
/// `px` is inside when it lies in `[x_{2m}, x_{2m+1})` of the sorted
/// crossings, which is the same parity test as ray casting to `+x`.
pub(crate) fn rasterize_normalized(poly: &[Point], width: usize, height: usize) -> PolygonMask {
    let mut mask = PolygonMask::zeros(width, height);
    let n = poly.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let py = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if (a.y > py) != (b.y > py) {
                xs.push(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0], pair[1]);
            // first center >= lo, first center >= hi
            let start = ((lo - 0.5).ceil().max(0.0)) as usize;
            let end = ((hi - 0.5).ceil().max(0.0) as usize).min(width);
            for col in start..end {
                mask.cells[row * width + col] = 1;
            }
        }
    }
    mask
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both masks are empty.
pub fn polygon_iou(a: &PolygonMask, b: &PolygonMask) -> Result<f64, MaskError> {
    a.check_same(b)?;
    let mut inter = 0usize;
    let mut uni = 0usize;
    for (x, y) in a.cells.iter().zip(&b.cells) {
        inter += usize::from(x & y);
        uni += usize::from(x | y);
    }
    Ok(if uni == 0 { 0.0 } else { inter as f64 / uni as f64 })
}
