use std::f64::consts::PI;

use super::GroundingError;

/// Fourier features of a path-parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEmbedding(pub Vec<f64>);

impl PathEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `[sin(f_0 x_0), cos(f_0 x_0), sin(f_1 x_0), ..., cos(f_{n-1} x_last)]`
/// with `f_j = 2^j π`. Inputs are expected in `[0, 1]`.
pub fn fourier_encode(tau: &[f64], num_freqs: usize) -> Result<PathEmbedding, GroundingError> {
    if tau.is_empty() || num_freqs == 0 {
        return Err(GroundingError::EmptyInput);
    }
    let mut out = Vec::with_capacity(2 * num_freqs * tau.len());
    for &x in tau {
        let mut f = PI;
        for _ in 0..num_freqs {
            let (s, c) = (f * x).sin_cos();
            out.push(s);
            out.push(c);
            f *= 2.0;
        }
    }
    Ok(PathEmbedding(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_give_sin_zero_cos_one() {
        let e = fourier_encode(&[0.0; 5], 3).unwrap();
        assert_eq!(e.len(), 30);
        for pair in e.values().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn half_with_one_frequency() {
        let e = fourier_encode(&[0.5], 1).unwrap();
        assert!((e.values()[0] - 1.0).abs() < 1e-12);
        assert!(e.values()[1].abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(fourier_encode(&[], 4), Err(GroundingError::EmptyInput)));
        assert!(matches!(fourier_encode(&[0.1], 0), Err(GroundingError::EmptyInput)));
    }

    #[test]
    fn distinct_grid_points_encode_distinctly() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        for nf in 1..=4 {
            let encs: Vec<Vec<f64>> = grid.iter().map(|&x| fourier_encode(&[x], nf).unwrap().0).collect();
            for i in 0..encs.len() {
                for j in i + 1..encs.len() {
                    let d: f64 = encs[i].iter().zip(&encs[j]).map(|(a, b)| (a - b).abs()).sum();
                    assert!(d > 1e-6, "{} and {} collide at nf={nf}", grid[i], grid[j]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_and_lipschitz(x in 0.0f64..1.0, y in 0.0f64..1.0, nf in 1usize..8) {
            let a = fourier_encode(&[x], nf).unwrap();
            let b = fourier_encode(&[y], nf).unwrap();
            let fmax = PI * 2f64.powi(nf as i32 - 1);
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!(u.abs() <= 1.0 && v.abs() <= 1.0);
                prop_assert!((u - v).abs() <= fmax * (x - y).abs() + 1e-12);
            }
        }
    }
}
