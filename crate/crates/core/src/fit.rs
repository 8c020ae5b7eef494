//! Particle swarm fitting of k-vertex polygons to binary instance masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{normalize_vertices, PathParams, Point, DEFAULT_MAX_VERTICES, MIN_VERTICES};
use crate::mask::{polygon_iou, rasterize, PolygonMask};
use crate::scene::{AppearanceDescription, LayoutScene, PathClipPrimitive, SceneError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("mask has no foreground cells")]
    EmptyMask,
    #[error("mask {index}: {source}")]
    AtIndex { index: usize, source: Box<FitError> },
    #[error("{masks} masks but {captions} captions")]
    LengthMismatch { masks: usize, captions: usize },
    #[error("mask {index} is {got:?}, expected {expected:?}")]
    DimensionMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("invalid PSO configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("fitted polygon is degenerate: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub k: usize,
    pub seed: u64,
    /// Largest per-coordinate speed as a fraction of the canvas diagonal.
    pub velocity_clamp: f64,
    /// Initial jitter as a fraction of the canvas diagonal.
    pub init_jitter: f64,
    pub max_vertices: usize,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 64,
            iterations: 200,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            k: 4,
            seed: 0,
            velocity_clamp: 0.2,
            init_jitter: 0.05,
            max_vertices: DEFAULT_MAX_VERTICES,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: String| Err(FitError::InvalidConfig(m));
        if self.swarm_size < 2 {
            return bad(format!("swarm_size {} < 2", self.swarm_size));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return bad(format!("inertia {} outside (0, 1)", self.inertia));
        }
        if self.k < MIN_VERTICES || self.k > self.max_vertices {
            return bad(format!("k {} outside [{MIN_VERTICES}, {}]", self.k, self.max_vertices));
        }
        if !(self.velocity_clamp > 0.0) || self.cognitive < 0.0 || self.social < 0.0 || self.init_jitter < 0.0 {
            return bad("coefficients must be non-negative and the velocity clamp positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

fn to_points(position: &[f64]) -> Vec<Point> {
    position.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

fn iou_of(position: &[f64], mask: &PolygonMask) -> f64 {
    match rasterize(&to_points(position), mask.width(), mask.height()) {
        Ok(cand) => polygon_iou(&cand, mask).unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

/// IoU between the candidate polygon and the mask; degenerate candidates score 0.
pub fn fitness(position: &[f64], mask: &PolygonMask) -> Result<f64, FitError> {
    if mask.is_empty() {
        return Err(FitError::EmptyMask);
    }
    Ok(iou_of(position, mask))
}

/// Bounding-box corners of the foreground, with extra points spread along
/// the edges until there are `k`.
fn box_polygon(mask: &PolygonMask, k: usize) -> Vec<f64> {
    let (c0, r0, c1, r1) = mask.cell_bounds().expect("nonempty mask");
    let (x0, y0, x1, y1) = (c0 as f64, r0 as f64, (c1 + 1) as f64, (r1 + 1) as f64);
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let extra = k - 4;
    let mut out = Vec::with_capacity(2 * k);
    for (e, &(ax, ay)) in corners.iter().enumerate() {
        out.extend([ax, ay]);
        // edges 0, 1, ... get one midpoint each while extras remain
        if e < extra {
            let (bx, by) = corners[(e + 1) % 4];
            out.extend([(ax + bx) / 2.0, (ay + by) / 2.0]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub path: PathParams,
    /// IoU of the returned polygon against the mask.
    pub iou: f64,
    /// Global-best fitness after initialization and after each iteration.
    pub history: Vec<f64>,
}

/// Maximize IoU over free vertex positions with a global-best swarm.
/// A mask with several components is fitted to its largest one.
pub fn fit_polygon(mask: &PolygonMask, cfg: &PsoConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if mask.is_empty() {
        return Err(FitError::EmptyMask);
    }
    let comps = mask.components();
    let target = if comps.len() > 1 {
        log::warn!("mask has {} components; fitting the largest", comps.len());
        mask.largest_component().expect("nonempty")
    } else {
        mask.clone()
    };
    let (w, h) = (target.width() as f64, target.height() as f64);
    let diag = w.hypot(h);
    let vmax = cfg.velocity_clamp * diag;
    let dims = 2 * cfg.k;
    let clamp = |pos: &mut [f64]| {
        for (i, v) in pos.iter_mut().enumerate() {
            *v = v.clamp(0.0, if i % 2 == 0 { w } else { h });
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, (cfg.init_jitter * diag).max(f64::MIN_POSITIVE)).expect("finite sigma");
    let base = box_polygon(&target, cfg.k);
    let mut swarm: Vec<Particle> = (0..cfg.swarm_size)
        .map(|i| {
            let mut position = base.clone();
            if i > 0 {
                position.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
                clamp(&mut position);
            }
            let velocity = (0..dims).map(|_| rng.random_range(-0.1..0.1) * vmax).collect();
            let f = iou_of(&position, &target);
            Particle { best_position: position.clone(), position, velocity, best_fitness: f }
        })
        .collect();

    let mut g = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.best_fitness > swarm[g].best_fitness {
            g = i;
        }
    }
    let mut gbest = swarm[g].best_position.clone();
    let mut gfit = swarm[g].best_fitness;
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(gfit);

    for _ in 0..cfg.iterations {
        for p in swarm.iter_mut() {
            for d in 0..dims {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * p.velocity[d]
                    + cfg.cognitive * r1 * (p.best_position[d] - p.position[d])
                    + cfg.social * r2 * (gbest[d] - p.position[d]);
                p.velocity[d] = v.clamp(-vmax, vmax);
                p.position[d] += p.velocity[d];
            }
            clamp(&mut p.position);
            let f = iou_of(&p.position, &target);
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
        }
        // synchronous global-best update at the iteration barrier
        for p in &swarm {
            if p.best_fitness > gfit {
                gfit = p.best_fitness;
                gbest.clone_from(&p.best_position);
            }
        }
        history.push(gfit);
    }

    let points = normalize_vertices(&to_points(&gbest));
    let path = PathParams::from_points(points).map_err(|e| FitError::Degenerate(e.to_string()))?;
    let iou = iou_of(&path.clip_points().iter().flat_map(|p| [p.x, p.y]).collect::<Vec<_>>(), &target);
    Ok(FitResult { path, iou, history })
}

/// Per-mask outcome of [`fit_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFit {
    pub k: usize,
    pub iou: f64,
}

/// One primitive per mask, each with the best vertex count in
/// `[4, cfg.max_vertices]` (ties go to fewer vertices). The canvas is taken
/// from the masks, and is 0 x 0 for an empty list.
pub fn fit_scene(
    masks: &[PolygonMask],
    captions: &[String],
    cfg: &PsoConfig,
) -> Result<(LayoutScene, Vec<MaskFit>), FitError> {
    fit_scene_with_k(masks, captions, cfg, MIN_VERTICES..=cfg.max_vertices)
}

/// [`fit_scene`] restricted to vertex counts in `ks`.
pub fn fit_scene_with_k(
    masks: &[PolygonMask],
    captions: &[String],
    cfg: &PsoConfig,
    ks: std::ops::RangeInclusive<usize>,
) -> Result<(LayoutScene, Vec<MaskFit>), FitError> {
    if ks.is_empty() || *ks.start() < MIN_VERTICES || *ks.end() > cfg.max_vertices {
        return Err(FitError::InvalidConfig(format!(
            "vertex range {}..={} outside [{MIN_VERTICES}, {}]",
            ks.start(),
            ks.end(),
            cfg.max_vertices
        )));
    }
    if masks.len() != captions.len() {
        return Err(FitError::LengthMismatch { masks: masks.len(), captions: captions.len() });
    }
    let dims = masks.first().map_or((0, 0), |m| (m.width(), m.height()));
    let mut scene = LayoutScene::new(dims.0, dims.1, captions.join(", "));
    let mut fits = Vec::with_capacity(masks.len());
    for (index, (mask, caption)) in masks.iter().zip(captions).enumerate() {
        let got = (mask.width(), mask.height());
        if got != dims {
            return Err(FitError::DimensionMismatch { index, expected: dims, got });
        }
        let wrap = |e: FitError| FitError::AtIndex { index, source: Box::new(e) };
        let mut best: Option<(FitResult, usize)> = None;
        for k in ks.clone() {
            let r = fit_polygon(mask, &PsoConfig { k, ..*cfg }).map_err(wrap)?;
            if best.as_ref().is_none_or(|(b, _)| r.iou > b.iou) {
                best = Some((r, k));
            }
        }
        let (r, k) = best.expect("at least one k");
        let appearance = AppearanceDescription::parse(caption)?;
        scene.primitives.push(PathClipPrimitive::new(r.path, appearance));
        fits.push(MaskFit { k, iou: r.iou });
    }
    Ok((scene, fits))
}
