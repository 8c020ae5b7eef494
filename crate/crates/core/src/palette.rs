//! Named saturated colors used by the synthetic data and the evaluator.

/// `(name, rgb)` pairs; the background is black and is not a palette entry.
pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("cyan", [0.0, 1.0, 1.0]),
];

pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

pub fn index_of(name: &str) -> Option<usize> {
    PALETTE.iter().position(|(n, _)| *n == name)
}

pub fn color_of(name: &str) -> Option<[f64; 3]> {
    index_of(name).map(|i| PALETTE[i].1)
}

/// First token of `tokens` that names a palette color.
pub fn color_token(tokens: &[String]) -> Option<(usize, &str)> {
    tokens.iter().find_map(|t| index_of(t).map(|i| (i, t.as_str())))
}

/// Nearest palette entry to `rgb` in Euclidean distance; `None` when the
/// background is nearest.
pub fn quantize(rgb: [f64; 3]) -> Option<usize> {
    let d = |c: [f64; 3]| (0..3).map(|k| (rgb[k] - c[k]).powi(2)).sum::<f64>();
    let mut best = (d(BACKGROUND), None);
    for (i, (_, c)) in PALETTE.iter().enumerate() {
        let di = d(*c);
        if di < best.0 {
            best = (di, Some(i));
        }
    }
    best.1
}

/// Shape word for a polygon with `k` vertices.
pub fn shape_name(k: usize) -> &'static str {
    match k {
        3 => "triangle",
        4 => "quadrilateral",
        5 => "pentagon",
        6 => "hexagon",
        _ => "polygon",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_quantize() {
        assert_eq!(color_of("blue"), Some([0.0, 0.0, 1.0]));
        assert_eq!(color_of("mauve"), None);
        assert_eq!(quantize([0.9, 0.1, 0.05]), Some(0));
        assert_eq!(quantize([0.1, 0.1, 0.1]), None);
        assert_eq!(quantize([0.8, 0.7, 0.2]), Some(3));
        let toks = vec!["pentagon".to_string(), "cyan".to_string()];
        assert_eq!(color_token(&toks), Some((5, "cyan")));
    }
}
