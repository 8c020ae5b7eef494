//! The CSS-style text form of a Path Clip primitive.
//!
//! ```text
//! cat orange [cx: 32.00px, cy: 32.00px, w: 16.00px, h: 16.00px, clip-path: polygon(24.00px 24.00px, ...)]
//! ```
//!
//! The words before `[` are the appearance description (category first).
//! Every number carries a `px` suffix. The `cx/cy/w/h` declarations must be
//! present but the box is recomputed from the clip points, which are absolute
//! canvas coordinates. `clip path` (with a space) is accepted for `clip-path`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{GeometryError, PathParams, Point, DEFAULT_MAX_VERTICES, MIN_VERTICES};
use crate::scene::{AppearanceDescription, PathClipPrimitive, SceneError, DEFAULT_MAX_TOKENS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CssError {
    #[error("missing field `{field}` (declaration block ends at byte {offset})")]
    MissingField { field: &'static str, offset: usize },
    #[error("malformed number at byte {offset}")]
    MalformedNumber { offset: usize },
    #[error("polygon has {count} vertices at byte {offset}, allowed range is {min}..={max}")]
    VertexCountOutOfRange { count: usize, min: usize, max: usize, offset: usize },
    #[error("unbalanced bracket at byte {offset}")]
    UnbalancedBrackets { offset: usize },
    #[error("expected {expected} at byte {offset}")]
    Unexpected { expected: &'static str, offset: usize },
    #[error("unknown field `{name}` at byte {offset}")]
    UnknownField { name: String, offset: usize },
    #[error("duplicate field `{field}` at byte {offset}")]
    DuplicateField { field: &'static str, offset: usize },
    #[error("bad appearance description at byte {offset}: {reason}")]
    BadAppearance { reason: String, offset: usize },
    #[error("invalid polygon at byte {offset}: {source}")]
    Geometry { source: GeometryError, offset: usize },
}

impl CssError {
    /// Byte offset of the failure within the parsed text.
    pub fn offset(&self) -> usize {
        match self {
            CssError::MissingField { offset, .. }
            | CssError::MalformedNumber { offset }
            | CssError::VertexCountOutOfRange { offset, .. }
            | CssError::UnbalancedBrackets { offset }
            | CssError::Unexpected { offset, .. }
            | CssError::UnknownField { offset, .. }
            | CssError::DuplicateField { offset, .. }
            | CssError::BadAppearance { offset, .. }
            | CssError::Geometry { offset, .. } => *offset,
        }
    }
}

/// Limits applied while parsing.
#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_vertices: usize,
    pub max_tokens: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { max_vertices: DEFAULT_MAX_VERTICES, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

pub fn parse_css(text: &str) -> Result<PathClipPrimitive, CssError> {
    parse_css_with(text, ParseOptions::default())
}

pub fn parse_css_with(text: &str, opts: ParseOptions) -> Result<PathClipPrimitive, CssError> {
    check_brackets(text)?;
    Parser { src: text.as_bytes(), pos: 0, opts }.primitive()
}

/// Canonical single-line form with two decimals on every number.
pub fn serialize_css(p: &PathClipPrimitive) -> String {
    let path = &p.path;
    let mut out = String::new();
    write!(
        out,
        "{} [cx: {:.2}px, cy: {:.2}px, w: {:.2}px, h: {:.2}px, clip-path: polygon(",
        p.appearance.text(),
        path.cx(),
        path.cy(),
        path.w(),
        path.h()
    )
    .unwrap();
    for (i, v) in path.clip_points().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{:.2}px {:.2}px", v.x, v.y).unwrap();
    }
    out.push_str(")]");
    out
}

fn check_brackets(text: &str) -> Result<(), CssError> {
    let mut stack: Vec<(u8, usize)> = Vec::new();
    for (i, b) in text.bytes().enumerate() {
        match b {
            b'[' | b'(' => stack.push((b, i)),
            b']' | b')' => {
                let open = if b == b']' { b'[' } else { b'(' };
                match stack.pop() {
                    Some((o, _)) if o == open => {}
                    _ => return Err(CssError::UnbalancedBrackets { offset: i }),
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some((_, offset)) => Err(CssError::UnbalancedBrackets { offset }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Cx,
    Cy,
    W,
    H,
    ClipPath,
}

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::Cx => "cx",
            Field::Cy => "cy",
            Field::W => "w",
            Field::H => "h",
            Field::ClipPath => "clip-path",
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    opts: ParseOptions,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, byte: u8, expected: &'static str) -> Result<(), CssError> {
        self.skip_ws();
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CssError::Unexpected { expected, offset: self.pos })
        }
    }

    fn primitive(&mut self) -> Result<PathClipPrimitive, CssError> {
        self.skip_ws();
        let name_start = self.pos;
        while self.peek().is_some_and(|b| b != b'[') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[name_start..self.pos]).expect("slice of a str on ascii boundary");
        let appearance = AppearanceDescription::parse_with_limit(name, self.opts.max_tokens).map_err(|e| {
            CssError::BadAppearance {
                reason: match e {
                    SceneError::EmptyAppearance => "missing object name".to_owned(),
                    other => other.to_string(),
                },
                offset: name_start,
            }
        })?;
        self.expect(b'[', "'['")?;

        let mut scalars: [Option<f64>; 4] = [None; 4];
        let mut polygon: Option<(Vec<Point>, usize)> = None;
        loop {
            self.skip_ws();
            if self.peek() == Some(b']') {
                break;
            }
            let (field, field_at) = self.field_name()?;
            self.expect(b':', "':'")?;
            self.skip_ws();
            match field {
                Field::ClipPath => {
                    if polygon.is_some() {
                        return Err(CssError::DuplicateField { field: field.name(), offset: field_at });
                    }
                    polygon = Some(self.polygon()?);
                }
                _ => {
                    let slot = &mut scalars[field as usize];
                    if slot.is_some() {
                        return Err(CssError::DuplicateField { field: field.name(), offset: field_at });
                    }
                    *slot = Some(self.length()?);
                }
            }
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => break,
                _ => return Err(CssError::Unexpected { expected: "',' or ']'", offset: self.pos }),
            }
        }
        let close = self.pos;
        self.pos += 1;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(CssError::Unexpected { expected: "end of input", offset: self.pos });
        }

        for field in [Field::Cx, Field::Cy, Field::W, Field::H] {
            if scalars[field as usize].is_none() {
                return Err(CssError::MissingField { field: field.name(), offset: close });
            }
        }
        let (points, poly_at) =
            polygon.ok_or(CssError::MissingField { field: Field::ClipPath.name(), offset: close })?;
        let path = PathParams::from_points(points).map_err(|source| CssError::Geometry { source, offset: poly_at })?;
        Ok(PathClipPrimitive::new(path, appearance))
    }

    fn ident(&mut self) -> &str {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii")
    }

    fn field_name(&mut self) -> Result<(Field, usize), CssError> {
        let at = self.pos;
        let word = self.ident().to_ascii_lowercase();
        let field = match word.as_str() {
            "cx" => Field::Cx,
            "cy" => Field::Cy,
            "w" => Field::W,
            "h" => Field::H,
            "clip-path" => Field::ClipPath,
            "clip" => {
                // the two-word spelling `clip path`
                let save = self.pos;
                self.skip_ws();
                if self.ident().eq_ignore_ascii_case("path") {
                    Field::ClipPath
                } else {
                    self.pos = save;
                    return Err(CssError::UnknownField { name: word, offset: at });
                }
            }
            "" => return Err(CssError::Unexpected { expected: "field name", offset: at }),
            _ => return Err(CssError::UnknownField { name: word, offset: at }),
        };
        Ok((field, at))
    }

    /// `number px`, with the unit glued to the number.
    fn length(&mut self) -> Result<f64, CssError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'+' | b'-')) {
            self.pos += 1;
        }
        let mut digits = 0;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            return Err(CssError::MalformedNumber { offset: start });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                return Err(CssError::MalformedNumber { offset: start });
            }
        }
        let lexeme = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = lexeme.parse().map_err(|_| CssError::MalformedNumber { offset: start })?;
        if !value.is_finite() || !self.src[self.pos..].starts_with(b"px") {
            return Err(CssError::MalformedNumber { offset: start });
        }
        self.pos += 2;
        if self.peek().is_some_and(|b| b.is_ascii_alphanumeric()) {
            return Err(CssError::MalformedNumber { offset: start });
        }
        Ok(value)
    }

    fn polygon(&mut self) -> Result<(Vec<Point>, usize), CssError> {
        let at = self.pos;
        if !self.ident().eq_ignore_ascii_case("polygon") {
            return Err(CssError::Unexpected { expected: "polygon(", offset: at });
        }
        self.expect(b'(', "'('")?;
        let mut points = Vec::new();
        loop {
            self.skip_ws();
            let x = self.length()?;
            self.skip_ws();
            let y = self.length()?;
            points.push(Point::new(x, y));
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(CssError::Unexpected { expected: "',' or ')'", offset: self.pos }),
            }
        }
        let (min, max) = (MIN_VERTICES, self.opts.max_vertices);
        if points.len() < min || points.len() > max {
            return Err(CssError::VertexCountOutOfRange { count: points.len(), min, max, offset: at });
        }
        Ok((points, at))
    }
}
