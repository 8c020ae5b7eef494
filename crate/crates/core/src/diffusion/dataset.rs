//! Procedural scenes of flat-colored polygons on a black background.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{PathParams, Point};
use crate::image::RgbImage;
use crate::mask::PolygonMask;
use crate::palette::{shape_name, BACKGROUND, PALETTE};
use crate::scene::{AppearanceDescription, LayoutScene, PathClipPrimitive, DEFAULT_MAX_TOKENS};

/// Smallest accepted polygon area, in pixels, at a 32 px canvas.
const MIN_AREA: usize = 12;

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: RgbImage,
    pub scene: LayoutScene,
}

/// `n` samples with 1 to 3 polygons each.
pub fn make_synthetic_dataset(n: usize, seed: u64, canvas: usize) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=3);
            make_scene(&mut rng, canvas, k)
        })
        .collect()
}

/// `n` samples with exactly `objects` polygons each.
pub fn make_fixed_count_dataset(n: usize, seed: u64, canvas: usize, objects: usize) -> Vec<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| make_scene(&mut rng, canvas, objects)).collect()
}

/// Paint each primitive with the palette color named in its appearance.
/// Primitives without a palette token are skipped.
pub fn render_scene(scene: &LayoutScene) -> RgbImage {
    let mut img = RgbImage::filled(scene.canvas_w, scene.canvas_h, BACKGROUND);
    for p in &scene.primitives {
        let Some((ci, _)) = crate::palette::color_token(p.appearance.tokens()) else { continue };
        if let Ok(m) = p.rasterize(scene.canvas_w, scene.canvas_h) {
            img.fill_mask(&m, PALETTE[ci].1);
        }
    }
    img
}

fn random_polygon(rng: &mut ChaCha8Rng, canvas: usize) -> Vec<Point> {
    let s = canvas as f64 / 32.0;
    let k = rng.random_range(4..=6);
    let cx = rng.random_range(8.0..24.0) * s;
    let cy = rng.random_range(8.0..24.0) * s;
    let radius = rng.random_range(5.0..9.0) * s;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut angles: Vec<f64> = (0..k)
        .map(|i| i as f64 * std::f64::consts::TAU / k as f64 + phase + rng.random_range(-0.3..0.3))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let r = radius * rng.random_range(0.7..1.0);
            let c = canvas as f64;
            Point::new((cx + r * a.cos()).clamp(0.0, c), (cy + r * a.sin()).clamp(0.0, c))
        })
        .collect()
}

fn make_scene(rng: &mut ChaCha8Rng, canvas: usize, objects: usize) -> SyntheticSample {
    let min_area = MIN_AREA * canvas * canvas / (32 * 32);
    'retry: loop {
        let colors = sample(rng, PALETTE.len(), objects.min(PALETTE.len())).into_vec();
        let mut union = PolygonMask::zeros(canvas, canvas);
        let mut prims = Vec::with_capacity(objects);
        for &ci in &colors {
            let mut placed = None;
            for _ in 0..50 {
                let Ok(path) = PathParams::from_points(random_polygon(rng, canvas)) else { continue };
                let Ok(m) = crate::mask::rasterize(path.clip_points(), canvas, canvas) else { continue };
                if m.count() >= min_area && union.intersection_count(&m).unwrap() == 0 {
                    placed = Some((path, m));
                    break;
                }
            }
            let Some((path, m)) = placed else { continue 'retry };
            union = union.union(&m).unwrap();
            let tokens = vec![shape_name(path.vertex_count()).to_string(), PALETTE[ci].0.to_string()];
            let appearance = AppearanceDescription::from_tokens(tokens, DEFAULT_MAX_TOKENS).expect("two tokens");
            prims.push(PathClipPrimitive::new(path, appearance));
        }
        let mut caption = String::from("a");
        for p in &prims {
            caption.push(' ');
            caption.push_str(&p.appearance.tokens()[1]);
            caption.push(' ');
            caption.push_str(&p.appearance.tokens()[0]);
        }
        let mut scene = LayoutScene::new(canvas, canvas, caption);
        scene.primitives = prims;
        let image = render_scene(&scene);
        return SyntheticSample { image, scene };
    }
}
