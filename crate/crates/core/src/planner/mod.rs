//! Planning stage: prompt construction, completion backends and response
//! parsing into [`LayoutScene`] values.

mod backend;

pub use backend::{fixture_key, MockBackend, PlannerBackend, RemoteBackend, RemoteConfig};

use thiserror::Error;

use crate::css::{parse_css, CssError};
use crate::mask::polygon_iou;
use crate::scene::LayoutScene;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("prompt needs at least one exemplar")]
    EmptyExemplars,
    #[error("exemplar {index} has an invalid layout: {reason}")]
    InvalidExemplar { index: usize, reason: String },
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("response contains no primitives")]
    NoPrimitivesFound,
    /// `block` is 1-based.
    #[error("block {block}: {source}")]
    Block { block: usize, source: CssError },
    #[error("block {block}: {reason}")]
    BlockGeometry { block: usize, reason: String },
    #[error("no fixture for prompt at {0}")]
    MissingFixture(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_INSTRUCTION: &str = "You plan image layouts. Split the description into separate objects. \
For each object write one line of the form `name [cx: Npx, cy: Npx, w: Npx, h: Npx, clip-path: polygon(Xpx Ypx, ...)]` \
where the name starts with the object category followed by its appearance words, \
the polygon has 4 to 6 vertices in absolute canvas pixels and the box encloses the polygon. \
Objects should not overlap.";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub task_instruction: String,
    /// `(input prompt, output layout)` pairs.
    pub exemplars: Vec<(String, String)>,
    pub inference_condition: String,
}

impl PromptTemplate {
    pub fn new(task_instruction: impl Into<String>, exemplars: Vec<(String, String)>, user_text: impl Into<String>) -> Self {
        Self { task_instruction: task_instruction.into(), exemplars, inference_condition: user_text.into() }
    }

    /// The shipped instruction and exemplars for the palette-shape domain.
    pub fn with_defaults(user_text: impl Into<String>) -> Self {
        Self::new(DEFAULT_INSTRUCTION, default_exemplars(), user_text)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.task_instruction.trim().is_empty() {
            return Err(PlannerError::EmptyInstruction);
        }
        if self.exemplars.is_empty() {
            return Err(PlannerError::EmptyExemplars);
        }
        for (index, (_, layout)) in self.exemplars.iter().enumerate() {
            let blocks = split_blocks(layout);
            if blocks.is_empty() {
                return Err(PlannerError::InvalidExemplar { index, reason: "no primitives".into() });
            }
            for b in blocks {
                let text = b.map_err(|e| PlannerError::InvalidExemplar { index, reason: e.to_string() })?;
                parse_css(text).map_err(|e| PlannerError::InvalidExemplar { index, reason: e.to_string() })?;
            }
        }
        Ok(())
    }

    pub fn render(&self) -> Result<String, PlannerError> {
        build_prompt(&self.inference_condition, &self.exemplars, &self.task_instruction)
    }
}

pub fn default_exemplars() -> Vec<(String, String)> {
    vec![
        (
            "a red quadrilateral and a blue pentagon".to_string(),
            "quadrilateral red [cx: 9.00px, cy: 10.00px, w: 10.00px, h: 12.00px, clip-path: polygon(4.00px 4.00px, 14.00px 4.00px, 14.00px 16.00px, 4.00px 16.00px)]\n\
             pentagon blue [cx: 22.50px, cy: 22.00px, w: 13.00px, h: 12.00px, clip-path: polygon(22.00px 16.00px, 29.00px 20.00px, 27.00px 28.00px, 18.00px 28.00px, 16.00px 21.00px)]"
                .to_string(),
        ),
        (
            "a green hexagon".to_string(),
            "hexagon green [cx: 16.00px, cy: 16.00px, w: 16.00px, h: 14.00px, clip-path: polygon(12.00px 9.00px, 20.00px 9.00px, 24.00px 16.00px, 20.00px 23.00px, 12.00px 23.00px, 8.00px 16.00px)]"
                .to_string(),
        ),
    ]
}

/// Instruction, exemplar blocks in order, then the open inference block.
pub fn build_prompt(user_text: &str, exemplars: &[(String, String)], instruction: &str) -> Result<String, PlannerError> {
    let t = PromptTemplate::new(instruction, exemplars.to_vec(), user_text);
    t.validate()?;
    let mut out = String::new();
    out.push_str(instruction.trim());
    out.push_str("\n\n");
    for (input, output) in exemplars {
        out.push_str("Input: ");
        out.push_str(input.trim());
        out.push_str("\nOutput:\n");
        out.push_str(output.trim());
        out.push_str("\n\n");
    }
    out.push_str("Input: ");
    out.push_str(user_text.trim());
    out.push_str("\nOutput:");
    Ok(out)
}

/// One primitive per line in canonical CSS form.
pub fn scene_to_layout_text(scene: &LayoutScene) -> String {
    scene.primitives.iter().map(|p| p.to_css()).collect::<Vec<_>>().join("\n")
}

const LIST_MARKERS: &[char] = &['-', '*', '•', '.', ')', ' ', '\t', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9'];

/// Slices of `text` that look like `name [ ... ]`, in order. An opening
/// bracket without its match yields an error for that block.
fn split_blocks(text: &str) -> Vec<Result<&str, CssError>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut seg_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let line_start = text[seg_start..i].rfind('\n').map_or(seg_start, |p| seg_start + p + 1);
        let mut name_start = line_start;
        let head = &text[line_start..i];
        if let Some(p) = head.find("Output:") {
            name_start += p + "Output:".len();
        }
        let trimmed = text[name_start..i].trim_start_matches(LIST_MARKERS);
        name_start = i - trimmed.len();
        let mut depth = 0usize;
        let mut close = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            match b {
                b'[' if depth > 0 => break,
                b'[' => depth += 1,
                b']' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        match close {
            Some(j) => {
                out.push(Ok(&text[name_start..=j]));
                seg_start = j + 1;
                i = j + 1;
            }
            None => {
                out.push(Err(CssError::UnbalancedBrackets { offset: i - name_start }));
                let next = text[i..].find('\n').map_or(bytes.len(), |p| i + p + 1);
                seg_start = next;
                i = next;
            }
        }
    }
    out
}

/// Parse every `name [ ... ]` block of a completion into a scene.
/// Vertices are clamped to the canvas and `caption` becomes the global caption.
pub fn parse_response(text: &str, canvas_w: usize, canvas_h: usize, caption: &str) -> Result<LayoutScene, PlannerError> {
    let mut scene = LayoutScene::new(canvas_w, canvas_h, caption);
    for (i, block) in split_blocks(text).into_iter().enumerate() {
        let block_no = i + 1;
        let css = block.map_err(|source| PlannerError::Block { block: block_no, source })?;
        let mut prim = parse_css(css).map_err(|source| PlannerError::Block { block: block_no, source })?;
        prim.path = prim
            .path
            .clamped(canvas_w as f64, canvas_h as f64)
            .map_err(|e| PlannerError::BlockGeometry { block: block_no, reason: e.to_string() })?;
        scene.primitives.push(prim);
    }
    if scene.primitives.is_empty() {
        return Err(PlannerError::NoPrimitivesFound);
    }
    Ok(scene)
}

/// Build the prompt, ask the backend and parse the reply.
pub fn plan(
    backend: &dyn PlannerBackend,
    template: &PromptTemplate,
    canvas_w: usize,
    canvas_h: usize,
) -> Result<LayoutScene, PlannerError> {
    let prompt = template.render()?;
    let reply = backend.complete(&prompt)?;
    parse_response(&reply, canvas_w, canvas_h, &template.inference_condition)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneWarning {
    OutOfCanvas { primitive: usize, vertex: usize, x: f64, y: f64 },
    Overlap { a: usize, b: usize, iou: f64 },
    Duplicate { a: usize, b: usize, appearance: String },
    Degenerate { primitive: usize, reason: String },
}

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.7;

/// Report problems without touching the scene.
pub fn validate_scene(scene: &LayoutScene, overlap_threshold: f64) -> Vec<SceneWarning> {
    let mut warnings = Vec::new();
    let (cw, ch) = (scene.canvas_w as f64, scene.canvas_h as f64);
    for (i, p) in scene.primitives.iter().enumerate() {
        for (k, v) in p.path.clip_points().iter().enumerate() {
            if v.x < 0.0 || v.y < 0.0 || v.x > cw || v.y > ch {
                warnings.push(SceneWarning::OutOfCanvas { primitive: i, vertex: k, x: v.x, y: v.y });
            }
        }
    }
    let masks: Vec<_> = scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| match p.rasterize(scene.canvas_w, scene.canvas_h) {
            Ok(m) => Some(m),
            Err(e) => {
                warnings.push(SceneWarning::Degenerate { primitive: i, reason: e.to_string() });
                None
            }
        })
        .collect();
    for a in 0..masks.len() {
        for b in a + 1..masks.len() {
            if let (Some(ma), Some(mb)) = (&masks[a], &masks[b]) {
                let iou = polygon_iou(ma, mb).unwrap_or(0.0);
                if iou > overlap_threshold {
                    warnings.push(SceneWarning::Overlap { a, b, iou });
                }
            }
            let (pa, pb) = (&scene.primitives[a].appearance, &scene.primitives[b].appearance);
            if pa == pb {
                warnings.push(SceneWarning::Duplicate { a, b, appearance: pa.text() });
            }
        }
    }
    warnings
}
