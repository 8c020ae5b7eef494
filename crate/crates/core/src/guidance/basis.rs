use nalgebra::DMatrix;

use super::GuidanceError;
use crate::diffusion::{FeatureMap, Trajectory};
use crate::linalg::Matrix;

/// How many singular directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    Fixed(usize),
    /// Smallest rank retaining `energy` of the spectrum, capped at `max`.
    Energy { max: usize, energy: f64 },
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Energy { max: 16, energy: 0.9 }
    }
}

/// Orthonormal rows `B_t` (top right singular vectors) and the column mean
/// removed before the decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBasis {
    pub t: usize,
    pub mean: Vec<f64>,
    pub rows: Matrix,
    /// All singular values, non-increasing.
    pub singular_values: Vec<f64>,
}

impl SemanticBasis {
    pub fn rank(&self) -> usize {
        self.rows.rows()
    }

    /// `Σ_{k<r} σ_k² / Σ σ_k²`.
    pub fn retained_energy(&self, r: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 1.0;
        }
        self.singular_values.iter().take(r).map(|s| s * s).sum::<f64>() / total
    }
}

/// Per-position coordinates `S[i, j] = B (F[i, j] − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureCoordinates {
    pub height: usize,
    pub width: usize,
    pub rank: usize,
    pub data: Vec<f64>,
}

impl StructureCoordinates {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.rank..(pos + 1) * self.rank]
    }
}

/// Basis from the pooled positions of several feature maps.
pub fn semantic_basis_from_maps(t: usize, maps: &[&FeatureMap], rank: RankRule) -> Result<SemanticBasis, GuidanceError> {
    let first = maps.first().ok_or(GuidanceError::EmptyRuns)?;
    let c = first.channels;
    for m in maps {
        if (m.height, m.width, m.channels) != (first.height, first.width, c) {
            return Err(GuidanceError::ShapeMismatch(format!(
                "feature maps {}x{}x{} and {}x{}x{}",
                first.height, first.width, c, m.height, m.width, m.channels
            )));
        }
    }
    let n = maps.len() * first.positions();
    let mut mean = vec![0.0; c];
    for m in maps {
        for p in 0..m.positions() {
            for (a, v) in mean.iter_mut().zip(m.at(p)) {
                *a += v;
            }
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, c);
    let mut row = 0;
    for m in maps {
        for p in 0..m.positions() {
            for (k, v) in m.at(p).iter().enumerate() {
                centered[(row, k)] = v - mean[k];
            }
            row += 1;
        }
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let available = singular_values.len();
    let r = match rank {
        RankRule::Fixed(r) => {
            if r > available || r == 0 {
                return Err(GuidanceError::RankTooLarge { r, max: available });
            }
            r
        }
        RankRule::Energy { max, energy } => {
            let total: f64 = singular_values.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            let mut r = available;
            for (i, s) in singular_values.iter().enumerate() {
                acc += s * s;
                if total == 0.0 || acc >= energy * total {
                    r = i + 1;
                    break;
                }
            }
            r.min(max).max(1)
        }
    };
    let mut rows = Matrix::zeros(r, c);
    for (k, &i) in order.iter().take(r).enumerate() {
        for j in 0..c {
            rows[(k, j)] = v_t[(i, j)];
        }
    }
    Ok(SemanticBasis { t, mean, rows, singular_values })
}

/// One basis per recorded timestep, pooling the same timestep across runs.
pub fn compute_semantic_basis(runs: &[Trajectory], rank: RankRule) -> Result<Vec<SemanticBasis>, GuidanceError> {
    let first = runs.first().ok_or(GuidanceError::EmptyRuns)?;
    let mut out = Vec::with_capacity(first.steps.len());
    for step in &first.steps {
        let maps: Vec<&FeatureMap> = runs
            .iter()
            .map(|r| r.features_at(step.t).ok_or(GuidanceError::MissingFeatures(step.t)))
            .collect::<Result<_, _>>()?;
        out.push(semantic_basis_from_maps(step.t, &maps, rank)?);
    }
    Ok(out)
}

pub fn project_features(f: &FeatureMap, b: &SemanticBasis) -> Result<StructureCoordinates, GuidanceError> {
    if f.channels != b.mean.len() {
        return Err(GuidanceError::ShapeMismatch(format!("{} feature channels, basis over {}", f.channels, b.mean.len())));
    }
    let r = b.rank();
    let mut data = vec![0.0; f.positions() * r];
    let mut centered = vec![0.0; f.channels];
    for p in 0..f.positions() {
        for ((c, v), m) in centered.iter_mut().zip(f.at(p)).zip(&b.mean) {
            *c = v - m;
        }
        for k in 0..r {
            data[p * r + k] = b.rows.row(k).iter().zip(&centered).map(|(x, y)| x * y).sum();
        }
    }
    Ok(StructureCoordinates { height: f.height, width: f.width, rank: r, data })
}
