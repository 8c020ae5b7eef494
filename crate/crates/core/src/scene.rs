//! Path Clip primitives and the layout scenes built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::css::{self, CssError};
use crate::geometry::{GeometryError, PathParams};
use crate::mask::{self, MaskError, PolygonMask};

/// Default upper bound on appearance tokens per primitive.
pub const DEFAULT_MAX_TOKENS: usize = 16;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("appearance description is empty")]
    EmptyAppearance,
    #[error("appearance token {0:?} contains a bracket")]
    BadToken(String),
    #[error("appearance has {got} tokens, limit is {max}")]
    TooManyTokens { got: usize, max: usize },
    #[error("canvas dimensions must be positive, got {0}x{1}")]
    BadCanvas(i64, i64),
    #[error("object {index}: {source}")]
    Css { index: usize, source: CssError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Textual appearance: the category word followed by free descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AppearanceDescription {
    tokens: Vec<String>,
}

impl AppearanceDescription {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        Self::parse_with_limit(text, DEFAULT_MAX_TOKENS)
    }

    pub fn parse_with_limit(text: &str, max_tokens: usize) -> Result<Self, SceneError> {
        Self::from_tokens(text.split_whitespace().map(str::to_owned).collect(), max_tokens)
    }

    pub fn from_tokens(tokens: Vec<String>, max_tokens: usize) -> Result<Self, SceneError> {
        if tokens.is_empty() || tokens.iter().any(|t| t.is_empty()) {
            return Err(SceneError::EmptyAppearance);
        }
        if let Some(bad) = tokens.iter().find(|t| t.contains(['[', ']']) || t.contains(char::is_whitespace)) {
            return Err(SceneError::BadToken(bad.clone()));
        }
        if tokens.len() > max_tokens {
            return Err(SceneError::TooManyTokens { got: tokens.len(), max: max_tokens });
        }
        Ok(Self { tokens })
    }

    pub fn category(&self) -> &str {
        &self.tokens[0]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// One object: polygon path parameters bound to an appearance description.
#[derive(Debug, Clone, PartialEq)]
pub struct PathClipPrimitive {
    pub path: PathParams,
    pub appearance: AppearanceDescription,
}

impl PathClipPrimitive {
    pub fn new(path: PathParams, appearance: AppearanceDescription) -> Self {
        Self { path, appearance }
    }

    /// Rasterize this primitive's polygon onto a `width x height` grid.
    pub fn rasterize(&self, width: usize, height: usize) -> Result<PolygonMask, MaskError> {
        mask::rasterize(self.path.clip_points(), width, height)
    }

    pub fn to_css(&self) -> String {
        css::serialize_css(self)
    }
}

/// The planning-stage output: a canvas, a global caption and its objects.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutScene {
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub global_caption: String,
    pub primitives: Vec<PathClipPrimitive>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    canvas: [i64; 2],
    caption: String,
    objects: Vec<ObjectEntry>,
}

#[derive(Serialize, Deserialize)]
struct ObjectEntry {
    css: String,
    #[serde(default)]
    appearance: String,
}

impl LayoutScene {
    pub fn new(canvas_w: usize, canvas_h: usize, global_caption: impl Into<String>) -> Self {
        Self { canvas_w, canvas_h, global_caption: global_caption.into(), primitives: Vec::new() }
    }

    /// One mask per primitive at canvas resolution.
    pub fn masks(&self) -> Result<Vec<PolygonMask>, MaskError> {
        self.primitives.iter().map(|p| p.rasterize(self.canvas_w, self.canvas_h)).collect()
    }

    pub fn to_json(&self) -> String {
        let file = SceneFile {
            canvas: [self.canvas_w as i64, self.canvas_h as i64],
            caption: self.global_caption.clone(),
            objects: self
                .primitives
                .iter()
                .map(|p| ObjectEntry { css: p.to_css(), appearance: p.appearance.text() })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scene serializes")
    }

    /// Parse the scene JSON format. A non-empty `appearance` field overrides
    /// the description embedded in the object's CSS name.
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        let [w, h] = file.canvas;
        if w <= 0 || h <= 0 {
            return Err(SceneError::BadCanvas(w, h));
        }
        let mut scene = LayoutScene::new(w as usize, h as usize, file.caption);
        for (index, obj) in file.objects.into_iter().enumerate() {
            let mut prim = css::parse_css(&obj.css).map_err(|source| SceneError::Css { index, source })?;
            if !obj.appearance.trim().is_empty() {
                prim.appearance = AppearanceDescription::parse(&obj.appearance)?;
            }
            scene.primitives.push(prim);
        }
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| SceneError::Io { path: path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appearance_category_is_first_word() {
        let a = AppearanceDescription::parse("cat  fluffy orange").unwrap();
        assert_eq!(a.category(), "cat");
        assert_eq!(a.tokens().len(), 3);
        assert_eq!(a.text(), "cat fluffy orange");
    }

    #[test]
    fn appearance_limits() {
        assert!(matches!(AppearanceDescription::parse("  "), Err(SceneError::EmptyAppearance)));
        assert!(matches!(
            AppearanceDescription::parse_with_limit("a b c", 2),
            Err(SceneError::TooManyTokens { got: 3, max: 2 })
        ));
    }

    #[test]
    fn scene_json_round_trip() {
        let text = r#"{"canvas": [64, 48], "caption": "a cat on a mat",
            "objects": [{"css": "cat [cx: 1px, cy: 1px, w: 1px, h: 1px, clip-path: polygon(24px 24px, 40px 24px, 32px 40px, 24px 32px)]",
                         "appearance": "cat orange"}]}"#;
        let scene = LayoutScene::from_json(text).unwrap();
        assert_eq!(scene.canvas_w, 64);
        assert_eq!(scene.primitives[0].appearance.text(), "cat orange");
        assert_eq!(scene.primitives[0].path.cx(), 32.0);
        let again = LayoutScene::from_json(&scene.to_json()).unwrap();
        assert_eq!(again, scene);
    }

    #[test]
    fn scene_json_bad_object_is_indexed() {
        let text = r#"{"canvas": [8, 8], "caption": "", "objects": [{"css": "cat [cx: 1px]"}]}"#;
        assert!(matches!(LayoutScene::from_json(text), Err(SceneError::Css { index: 0, .. })));
    }
}
