use super::GroundingError;
use crate::linalg::{dot, Matrix};
use crate::mask::PolygonMask;

/// Queries, keys and values of one single-head attention call.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub scale: f64,
}

impl AttentionInputs {
    /// Validates shapes and sets `scale = 1 / sqrt(d)`.
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self, GroundingError> {
        let d = q.cols();
        if d == 0 {
            return Err(GroundingError::DimensionMismatch("query width is 0".into()));
        }
        check_kv(d, &k, &v)?;
        Ok(Self { q, k, v, scale: 1.0 / (d as f64).sqrt() })
    }
}

fn check_kv(d: usize, k: &Matrix, v: &Matrix) -> Result<(), GroundingError> {
    if k.cols() != d {
        return Err(GroundingError::DimensionMismatch(format!("key width {} != query width {d}", k.cols())));
    }
    if k.rows() != v.rows() {
        return Err(GroundingError::DimensionMismatch(format!("{} keys but {} values", k.rows(), v.rows())));
    }
    if k.rows() == 0 {
        return Err(GroundingError::EmptyInput);
    }
    Ok(())
}

/// One query row against `k`/`v`: writes the softmax weights into `weights`
/// and adds the weighted values to `out`.
pub fn attend_row(q: &[f64], k: &Matrix, v: &Matrix, scale: f64, weights: &mut [f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (j, w) in weights.iter_mut().enumerate() {
        *w = dot(q, k.row(j)) * scale;
        max = max.max(*w);
    }
    let mut sum = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    for (j, w) in weights.iter_mut().enumerate() {
        *w /= sum;
        for (o, &vv) in out.iter_mut().zip(v.row(j)) {
            *o += *w * vv;
        }
    }
}

/// `softmax(Q Kᵀ · scale) V` with a row-wise, max-shifted softmax.
pub fn cross_attention(inp: &AttentionInputs) -> Result<Matrix, GroundingError> {
    check_kv(inp.q.cols(), &inp.k, &inp.v)?;
    let mut out = Matrix::zeros(inp.q.rows(), inp.v.cols());
    let mut w = vec![0.0; inp.k.rows()];
    for i in 0..inp.q.rows() {
        attend_row(inp.q.row(i), &inp.k, &inp.v, inp.scale, &mut w, out.row_mut(i));
    }
    Ok(out)
}

/// Cross-attention whose rows outside `mask` are exactly zero.
pub fn masked_cross_attention(inp: &AttentionInputs, mask: &PolygonMask) -> Result<Matrix, GroundingError> {
    check_kv(inp.q.cols(), &inp.k, &inp.v)?;
    check_grid(inp.q.rows(), mask)?;
    let mut out = Matrix::zeros(inp.q.rows(), inp.v.cols());
    let mut w = vec![0.0; inp.k.rows()];
    for (i, &m) in mask.cells().iter().enumerate() {
        if m != 0 {
            attend_row(inp.q.row(i), &inp.k, &inp.v, inp.scale, &mut w, out.row_mut(i));
        }
    }
    Ok(out)
}

fn check_grid(n_pix: usize, mask: &PolygonMask) -> Result<(), GroundingError> {
    if n_pix != mask.width() * mask.height() {
        return Err(GroundingError::DimensionMismatch(format!(
            "{n_pix} query rows for a {}x{} mask",
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

/// Projected keys and values of one primitive together with its mask.
#[derive(Debug, Clone)]
pub struct TokenGroup {
    pub keys: Matrix,
    pub values: Matrix,
    pub mask: PolygonMask,
}

/// Sum of every primitive's masked attention, plus attention to the global
/// tokens at positions no primitive covers.
pub fn compose_scene_attention(
    q: &Matrix,
    primitives: &[TokenGroup],
    global: Option<(&Matrix, &Matrix)>,
    scale: f64,
) -> Result<Matrix, GroundingError> {
    let d_v = primitives
        .first()
        .map(|g| g.values.cols())
        .or(global.map(|(_, v)| v.cols()))
        .ok_or(GroundingError::EmptyInput)?;
    let mut out = Matrix::zeros(q.rows(), d_v);
    let mut covered = vec![false; q.rows()];
    for g in primitives {
        check_kv(q.cols(), &g.keys, &g.values)?;
        check_grid(q.rows(), &g.mask)?;
        if g.values.cols() != d_v {
            return Err(GroundingError::DimensionMismatch("value widths differ between groups".into()));
        }
        let mut w = vec![0.0; g.keys.rows()];
        for (i, &m) in g.mask.cells().iter().enumerate() {
            if m != 0 {
                covered[i] = true;
                attend_row(q.row(i), &g.keys, &g.values, scale, &mut w, out.row_mut(i));
            }
        }
    }
    if let Some((k, v)) = global {
        check_kv(q.cols(), k, v)?;
        if v.cols() != d_v {
            return Err(GroundingError::DimensionMismatch("global value width differs".into()));
        }
        let mut w = vec![0.0; k.rows()];
        for (i, &c) in covered.iter().enumerate() {
            if !c {
                attend_row(q.row(i), k, v, scale, &mut w, out.row_mut(i));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn single_key_returns_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random(1, 3, &mut rng);
        let inp = AttentionInputs::new(random(5, 4, &mut rng), random(1, 4, &mut rng), v.clone()).unwrap();
        let out = cross_attention(&inp).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert!((out[(i, j)] - v[(0, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_logits_average_values() {
        let v = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]);
        let inp = AttentionInputs::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2), v).unwrap();
        let out = cross_attention(&inp).unwrap();
        assert_eq!(out.row(0), &[2.0, 2.0]);
    }

    #[test]
    fn hand_softmax() {
        let mut inp = AttentionInputs::new(
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![2f64.ln()], vec![0.0]]),
            Matrix::identity(2),
        )
        .unwrap();
        inp.scale = 1.0;
        let out = cross_attention(&inp).unwrap();
        assert!((out[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut inp = AttentionInputs::new(
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[vec![1000.0], vec![999.0]]),
            Matrix::identity(2),
        )
        .unwrap();
        inp.scale = 1.0;
        let out = cross_attention(&inp).unwrap();
        let e = 1.0 / (1.0 + (-1f64).exp());
        assert!((out[(0, 0)] - e).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        assert!(AttentionInputs::new(Matrix::zeros(2, 3), Matrix::zeros(2, 4), Matrix::zeros(2, 1)).is_err());
        assert!(AttentionInputs::new(Matrix::zeros(2, 3), Matrix::zeros(2, 3), Matrix::zeros(3, 1)).is_err());
        let inp = AttentionInputs::new(Matrix::zeros(6, 2), Matrix::zeros(1, 2), Matrix::zeros(1, 2)).unwrap();
        assert!(masked_cross_attention(&inp, &PolygonMask::ones(2, 2)).is_err());
    }

    #[test]
    fn mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inp = AttentionInputs::new(random(12, 4, &mut rng), random(3, 4, &mut rng), random(3, 5, &mut rng)).unwrap();
        let zero = masked_cross_attention(&inp, &PolygonMask::zeros(4, 3)).unwrap();
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));
        let full = masked_cross_attention(&inp, &PolygonMask::ones(4, 3)).unwrap();
        assert_eq!(full, cross_attention(&inp).unwrap());
    }

    #[test]
    fn compose_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random(16, 4, &mut rng);
        let (gk, gv) = (random(2, 4, &mut rng), random(2, 3, &mut rng));
        let a = TokenGroup { keys: random(2, 4, &mut rng), values: random(2, 3, &mut rng), mask: PolygonMask::ones(4, 4) };
        let scale = 0.5;
        let mut inp = AttentionInputs::new(q.clone(), a.keys.clone(), a.values.clone()).unwrap();
        inp.scale = scale;
        let out = compose_scene_attention(&q, std::slice::from_ref(&a), Some((&gk, &gv)), scale).unwrap();
        assert_eq!(out, masked_cross_attention(&inp, &a.mask).unwrap());

        let none = compose_scene_attention(&q, &[], Some((&gk, &gv)), scale).unwrap();
        let mut ginp = AttentionInputs::new(q.clone(), gk.clone(), gv.clone()).unwrap();
        ginp.scale = scale;
        assert_eq!(none, cross_attention(&ginp).unwrap());

        let left = PolygonMask::from_fn(4, 4, |c, _| c < 2);
        let right = PolygonMask::from_fn(4, 4, |c, _| c >= 2);
        let ga = TokenGroup { mask: left.clone(), ..a.clone() };
        let gb = TokenGroup { keys: random(3, 4, &mut rng), values: random(3, 3, &mut rng), mask: right.clone() };
        let both = compose_scene_attention(&q, &[ga.clone(), gb.clone()], None, scale).unwrap();
        let only_a = compose_scene_attention(&q, &[ga], None, scale).unwrap();
        let only_b = compose_scene_attention(&q, &[gb], None, scale).unwrap();
        for i in 0..16 {
            let expect = if left.cells()[i] != 0 { only_a.row(i) } else { only_b.row(i) };
            assert_eq!(both.row(i), expect);
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_shift_invariant(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random(1, 3, &mut rng);
            let k = random(4, 3, &mut rng);
            let v = Matrix::identity(4);
            let mut w = vec![0.0; 4];
            let mut out = vec![0.0; 4];
            attend_row(q.row(0), &k, &v, 1.0, &mut w, &mut out);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            // Appending a constant coordinate to every key adds `shift` to every logit.
            let q2 = Matrix::from_vec(1, 4, [q.row(0), &[1.0]].concat());
            let mut k2 = Matrix::zeros(4, 4);
            for j in 0..4 {
                k2.row_mut(j).copy_from_slice(&[k.row(j), &[shift]].concat());
            }
            let mut out2 = vec![0.0; 4];
            attend_row(q2.row(0), &k2, &v, 1.0, &mut w, &mut out2);
            for (a, b) in out.iter().zip(&out2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn perturbing_values_stays_inside_mask(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.random_range(2..9), rng.random_range(2..9));
            let cells: Vec<u8> = (0..w * h).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let mask = PolygonMask::from_cells(w, h, cells);
            let q = random(w * h, 4, &mut rng);
            let k = random(3, 4, &mut rng);
            let v = random(3, 2, &mut rng);
            let v2 = random(3, 2, &mut rng);
            let a = masked_cross_attention(&AttentionInputs::new(q.clone(), k.clone(), v).unwrap(), &mask).unwrap();
            let b = masked_cross_attention(&AttentionInputs::new(q, k, v2).unwrap(), &mask).unwrap();
            for i in 0..w * h {
                if mask.cells()[i] == 0 {
                    prop_assert!(a.row(i).iter().chain(b.row(i)).all(|&x| x == 0.0));
                }
            }
        }
    }
}
