//! Layout adherence: palette-based detection of generated objects matched
//! against the scene's primitives.

use serde::Serialize;
use thiserror::Error;

use crate::image::RgbImage;
use crate::mask::{polygon_iou, MaskError, PolygonMask};
use crate::palette::{color_token, quantize, PALETTE};
use crate::scene::LayoutScene;

/// Detected regions smaller than this many pixels are treated as noise.
pub const MIN_COMPONENT_AREA: usize = 4;
pub const DEFAULT_IOU_TOLERANCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("primitive {index} ({appearance}) names no palette color")]
    UnknownPaletteToken { index: usize, appearance: String },
    #[error("image is {image:?} but the scene canvas is {scene:?}")]
    CanvasMismatch { image: (usize, usize), scene: (usize, usize) },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// One connected region of a single palette color.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub color: usize,
    pub mask: PolygonMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimitiveMatch {
    pub primitive: usize,
    pub detection: usize,
    pub color: &'static str,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutAdherenceReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// No detections at all; precision is reported as 0.
    pub zero_detections: bool,
    pub matches: Vec<PrimitiveMatch>,
}

impl LayoutAdherenceReport {
    fn from_counts(tp: usize, fp: usize, fn_: usize, matches: Vec<PrimitiveMatch>) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp, tp + fp + fn_),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            zero_detections: tp + fp == 0,
            matches,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Connected palette-colored regions of at least [`MIN_COMPONENT_AREA`] pixels,
/// ordered by color then scan order.
pub fn detect_regions(image: &RgbImage) -> Vec<Detection> {
    let labels: Vec<Option<usize>> = (0..image.width * image.height).map(|i| quantize(image.pixel(i))).collect();
    let mut out = Vec::new();
    for color in 0..PALETTE.len() {
        let cells = labels.iter().map(|l| u8::from(*l == Some(color))).collect();
        let m = PolygonMask::from_cells(image.width, image.height, cells);
        if m.is_empty() {
            continue;
        }
        out.extend(
            m.components()
                .into_iter()
                .filter(|c| c.count() >= MIN_COMPONENT_AREA)
                .map(|mask| Detection { color, mask }),
        );
    }
    out
}

/// Greedy one-to-one matching by descending IoU between detections and
/// primitives of the same color with IoU at least `tolerance`.
pub fn evaluate_layout_adherence(
    image: &RgbImage,
    scene: &LayoutScene,
    tolerance: f64,
) -> Result<LayoutAdherenceReport, EvalError> {
    if (image.width, image.height) != (scene.canvas_w, scene.canvas_h) {
        return Err(EvalError::CanvasMismatch {
            image: (image.width, image.height),
            scene: (scene.canvas_w, scene.canvas_h),
        });
    }
    let mut truth = Vec::with_capacity(scene.primitives.len());
    for (index, p) in scene.primitives.iter().enumerate() {
        let (color, _) = color_token(p.appearance.tokens())
            .ok_or_else(|| EvalError::UnknownPaletteToken { index, appearance: p.appearance.text() })?;
        truth.push((color, p.rasterize(scene.canvas_w, scene.canvas_h)?));
    }
    let dets = detect_regions(image);

    let mut pairs = Vec::new();
    for (gi, (color, gm)) in truth.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            if d.color == *color {
                let iou = polygon_iou(&d.mask, gm)?;
                if iou >= tolerance && iou > 0.0 {
                    pairs.push((iou, gi, di));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; truth.len()];
    let mut det_used = vec![false; dets.len()];
    let mut matches = Vec::new();
    for (iou, gi, di) in pairs {
        if !gt_used[gi] && !det_used[di] {
            gt_used[gi] = true;
            det_used[di] = true;
            matches.push(PrimitiveMatch { primitive: gi, detection: di, color: PALETTE[truth[gi].0].0, iou });
        }
    }
    matches.sort_by_key(|m| m.primitive);
    let tp = matches.len();
    Ok(LayoutAdherenceReport::from_counts(tp, dets.len() - tp, truth.len() - tp, matches))
}

/// Median of a non-empty slice; NaN for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
