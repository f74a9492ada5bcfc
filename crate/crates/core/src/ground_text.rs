//! Text format for boxes and point lists embedded in free text.
//!
//! ```text
//! bbox2d := "<bbox>"     "[" num "," num "," num "," num "]"  "</bbox>"
//! bbox3d := "<bbox3d>"   "[" num ("," num){8} "]"             "</bbox3d>"
//! points := "<points3d>" "[" point ("," point)* "]"           "</points3d>"
//! point  := "(" num "," num "," num ")"
//! ```
//!
//! Whitespace is allowed around brackets, parentheses and commas. `bbox3d`
//! carries `x_c, y_c, z_c, w, h, l, pitch, roll, yaw` in that order. Anything
//! that is not a complete opening tag is plain text.
//!
//! The batch parser is a thin wrapper over [`StreamParser`], so both agree on
//! every input by construction.

use std::ops::Range;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::Box2D;
use crate::geom3d::Box3D;

/// Longest numeric literal accepted inside a tag.
const MAX_NUMBER_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    BBox2D,
    BBox3D,
    Points3D,
}

impl TagKind {
    pub const ALL: [TagKind; 3] = [TagKind::BBox2D, TagKind::BBox3D, TagKind::Points3D];

    pub fn open_tag(self) -> &'static str {
        match self {
            TagKind::BBox2D => "<bbox>",
            TagKind::BBox3D => "<bbox3d>",
            TagKind::Points3D => "<points3d>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            TagKind::BBox2D => "</bbox>",
            TagKind::BBox3D => "</bbox3d>",
            TagKind::Points3D => "</points3d>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum TokenKind {
    Text(String),
    #[serde(rename = "bbox2d")]
    BBox2D(Box2D),
    #[serde(rename = "bbox3d")]
    BBox3D(Box3D),
    #[serde(rename = "points3d", with = "points_serde")]
    Points3D(Vec<Point3<f64>>),
    /// Only produced by lenient parsing; `raw` is the offending source text.
    Malformed {
        reason: String,
        raw: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingToken {
    #[serde(flatten)]
    pub kind: TokenKind,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StreamEvent {
    TextDelta {
        text: String,
        span: Range<usize>,
    },
    #[serde(rename = "bbox_opened")]
    BBoxOpened {
        kind: TagKind,
        offset: usize,
    },
    #[serde(rename = "bbox_completed")]
    BBoxCompleted {
        bbox: Box2D,
        span: Range<usize>,
    },
    #[serde(rename = "bbox3d_completed")]
    BBox3DCompleted {
        bbox: Box3D,
        span: Range<usize>,
    },
    #[serde(rename = "points3d_completed")]
    Points3DCompleted {
        #[serde(with = "points_serde")]
        points: Vec<Point3<f64>>,
        span: Range<usize>,
    },
    MalformedSpan {
        reason: String,
        span: Range<usize>,
    },
}

impl StreamEvent {
    pub fn text_delta(text: impl Into<String>, start: usize) -> Self {
        let text = text.into();
        let span = start..start + text.len();
        StreamEvent::TextDelta { text, span }
    }

    pub fn span(&self) -> Option<Range<usize>> {
        match self {
            StreamEvent::BBoxOpened { .. } => None,
            StreamEvent::TextDelta { span, .. }
            | StreamEvent::BBoxCompleted { span, .. }
            | StreamEvent::BBox3DCompleted { span, .. }
            | StreamEvent::Points3DCompleted { span, .. }
            | StreamEvent::MalformedSpan { span, .. } => Some(span.clone()),
        }
    }
}

mod points_serde {
    use nalgebra::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pts: &[Point3<f64>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point3<f64>>, D::Error> {
        let v = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(v.into_iter().map(Point3::from).collect())
    }
}

/// Merges runs of adjacent text deltas. Two event streams describe the same
/// input exactly when their coalesced forms are equal.
pub fn coalesce_text(events: impl IntoIterator<Item = StreamEvent>) -> Vec<StreamEvent> {
    let mut out: Vec<StreamEvent> = Vec::new();
    for ev in events {
        if let StreamEvent::TextDelta { text, span } = &ev {
            if text.is_empty() {
                continue;
            }
            if let Some(StreamEvent::TextDelta {
                text: prev,
                span: prev_span,
            }) = out.last_mut()
            {
                prev.push_str(text);
                prev_span.end = span.end;
                continue;
            }
        }
        out.push(ev);
    }
    out
}

// ---------------------------------------------------------------------------
// Incremental parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BodyState {
    BeforeList,
    /// After `[` (or `,` between points) in a points list.
    ExpectPoint {
        first: bool,
    },
    ExpectNumber,
    InNumber,
    AfterNumber,
    AfterPoint,
    AfterList,
    Closing(usize),
}

#[derive(Debug, Clone)]
struct Body {
    kind: TagKind,
    start: usize,
    state: BodyState,
    number: String,
    values: Vec<f64>,
    points: Vec<Point3<f64>>,
}

impl Body {
    fn new(kind: TagKind, start: usize) -> Self {
        Self {
            kind,
            start,
            state: BodyState::BeforeList,
            number: String::new(),
            values: Vec::new(),
            points: Vec::new(),
        }
    }

    fn arity(&self) -> usize {
        match self.kind {
            TagKind::BBox2D => 4,
            TagKind::BBox3D => 9,
            TagKind::Points3D => 3,
        }
    }

    /// The byte that closes the innermost number list.
    fn list_closer(&self) -> u8 {
        match self.kind {
            TagKind::Points3D => b')',
            _ => b']',
        }
    }

    fn finish_number(&mut self) -> Result<(), String> {
        let v: f64 = self
            .number
            .parse()
            .map_err(|_| format!("invalid number {:?}", self.number))?;
        if !v.is_finite() {
            return Err(format!("number out of range {:?}", self.number));
        }
        self.number.clear();
        if self.values.len() == self.arity() {
            return Err(format!("expected {} values", self.arity()));
        }
        self.values.push(v);
        Ok(())
    }

    fn close_list(&mut self) -> Result<BodyState, String> {
        if self.values.len() != self.arity() {
            return Err(format!("expected {} values, found {}", self.arity(), self.values.len()));
        }
        if self.kind == TagKind::Points3D {
            let v = std::mem::take(&mut self.values);
            self.points.push(Point3::new(v[0], v[1], v[2]));
            Ok(BodyState::AfterPoint)
        } else {
            Ok(BodyState::AfterList)
        }
    }

    fn after_comma(&self) -> Result<BodyState, String> {
        if self.values.len() >= self.arity() {
            Err(format!("expected {} values", self.arity()))
        } else {
            Ok(BodyState::ExpectNumber)
        }
    }

    /// Advances by one byte. `Ok(true)` means the closing tag just completed.
    fn step(&mut self, b: u8) -> Result<bool, String> {
        use BodyState::*;
        let ws = b.is_ascii_whitespace();
        let num_start = b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.');
        let num_char = num_start || matches!(b, b'e' | b'E');
        let closer = self.list_closer();
        self.state = match self.state {
            BeforeList if ws => BeforeList,
            BeforeList if b == b'[' => match self.kind {
                TagKind::Points3D => ExpectPoint { first: true },
                _ => ExpectNumber,
            },
            BeforeList => return Err("expected '['".into()),
            ExpectPoint { .. } if ws => self.state,
            ExpectPoint { .. } if b == b'(' => ExpectNumber,
            ExpectPoint { first: true } if b == b']' => return Err("empty point list".into()),
            ExpectPoint { .. } => return Err("expected '('".into()),
            ExpectNumber if ws => ExpectNumber,
            ExpectNumber if num_start => {
                self.number.push(b as char);
                InNumber
            }
            ExpectNumber => return Err("expected a number".into()),
            InNumber if num_char => {
                if self.number.len() >= MAX_NUMBER_LEN {
                    return Err("number too long".into());
                }
                self.number.push(b as char);
                InNumber
            }
            InNumber if ws => {
                self.finish_number()?;
                AfterNumber
            }
            InNumber if b == b',' => {
                self.finish_number()?;
                self.after_comma()?
            }
            InNumber if b == closer => {
                self.finish_number()?;
                self.close_list()?
            }
            InNumber => return Err("unexpected character in number".into()),
            AfterNumber if ws => AfterNumber,
            AfterNumber if b == b',' => self.after_comma()?,
            AfterNumber if b == closer => self.close_list()?,
            AfterNumber => return Err(format!("expected ',' or '{}'", closer as char)),
            AfterPoint if ws => AfterPoint,
            AfterPoint if b == b',' => ExpectPoint { first: false },
            AfterPoint if b == b']' => AfterList,
            AfterPoint => return Err("expected ',' or ']'".into()),
            AfterList if ws => AfterList,
            AfterList if b == b'<' => Closing(1),
            AfterList => return Err(format!("expected {}", self.kind.close_tag())),
            Closing(i) => {
                let tag = self.kind.close_tag().as_bytes();
                if b != tag[i] {
                    return Err(format!("expected {}", self.kind.close_tag()));
                }
                if i + 1 == tag.len() {
                    return Ok(true);
                }
                Closing(i + 1)
            }
        };
        Ok(false)
    }

    fn into_event(self, end: usize) -> StreamEvent {
        let span = self.start..end;
        let malformed = |e: Error| StreamEvent::MalformedSpan {
            reason: e.to_string(),
            span: span.clone(),
        };
        match self.kind {
            TagKind::BBox2D => {
                let v = &self.values;
                match Box2D::new(v[0], v[1], v[2], v[3]) {
                    Ok(bbox) => StreamEvent::BBoxCompleted { bbox, span },
                    Err(e) => malformed(e),
                }
            }
            TagKind::BBox3D => {
                let mut a = [0.0; 9];
                a.copy_from_slice(&self.values);
                match Box3D::from_array(a) {
                    Ok(bbox) => StreamEvent::BBox3DCompleted { bbox, span },
                    Err(e) => malformed(e),
                }
            }
            TagKind::Points3D => StreamEvent::Points3DCompleted {
                points: self.points,
                span,
            },
        }
    }
}

#[derive(Debug, Clone)]
enum Mode {
    Text,
    /// Bytes so far are a proper prefix of at least one opening tag.
    OpenTag {
        buf: Vec<u8>,
        start: usize,
    },
    Body(Body),
}

/// Chunk-wise parser for the grounding format.
///
/// Chunks may split tags, numbers and UTF-8 sequences anywhere; the event
/// stream is the same for every chunking of the same input. Text is released
/// in word runs that end where whitespace meets a non-whitespace byte,
/// before an opening tag, or at
/// [`finish`](Self::finish), so delta boundaries depend only on the content.
#[derive(Debug, Clone)]
pub struct StreamParser {
    pos: usize,
    text: Vec<u8>,
    text_start: usize,
    mode: Mode,
}

impl Default for StreamParser {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamParser {
    pub fn new() -> Self {
        Self {
            pos: 0,
            text: Vec::new(),
            text_start: 0,
            mode: Mode::Text,
        }
    }

    /// Bytes consumed so far.
    pub fn offset(&self) -> usize {
        self.pos
    }

    /// Whether a tag has been opened and not yet resolved.
    pub fn inside_tag(&self) -> bool {
        matches!(self.mode, Mode::Body(_))
    }

    pub fn feed(&mut self, chunk: &str) -> Vec<StreamEvent> {
        self.feed_bytes(chunk.as_bytes())
    }

    pub fn feed_bytes(&mut self, chunk: &[u8]) -> Vec<StreamEvent> {
        let mut out = Vec::new();
        for &b in chunk {
            self.step(b, &mut out);
        }
        self.flush_text(false, &mut out);
        out
    }

    /// Feeds bytes until an event matching `stop` is produced. Returns the
    /// events and how many bytes of `chunk` were consumed; the rest is
    /// untouched and must be fed again later.
    pub fn feed_until(
        &mut self,
        chunk: &[u8],
        mut stop: impl FnMut(&StreamEvent) -> bool,
    ) -> (Vec<StreamEvent>, usize) {
        let mut out = Vec::new();
        for (i, &b) in chunk.iter().enumerate() {
            let before = out.len();
            self.step(b, &mut out);
            if out[before..].iter().any(&mut stop) {
                self.flush_text(false, &mut out);
                return (out, i + 1);
            }
        }
        self.flush_text(false, &mut out);
        (out, chunk.len())
    }

    /// Ends the stream: pending text is released and an unterminated tag is
    /// reported as malformed. The parser is reset afterwards.
    pub fn finish(&mut self) -> Vec<StreamEvent> {
        let mut out = Vec::new();
        match std::mem::replace(&mut self.mode, Mode::Text) {
            Mode::Text => {}
            Mode::OpenTag { buf, start } => self.push_text(&buf, start),
            Mode::Body(body) => out.push(StreamEvent::MalformedSpan {
                reason: format!("unterminated {}", body.kind.open_tag()),
                span: body.start..self.pos,
            }),
        }
        self.flush_text(true, &mut out);
        let consumed = self.pos;
        *self = Self::new();
        self.pos = consumed;
        self.text_start = consumed;
        out
    }

    fn push_text(&mut self, bytes: &[u8], start: usize) {
        if self.text.is_empty() {
            self.text_start = start;
        }
        self.text.extend_from_slice(bytes);
    }

    fn step(&mut self, b: u8, out: &mut Vec<StreamEvent>) {
        let at = self.pos;
        self.pos += 1;
        self.dispatch(b, at, out);
    }

    fn dispatch(&mut self, b: u8, at: usize, out: &mut Vec<StreamEvent>) {
        match &mut self.mode {
            Mode::Text => {
                if b == b'<' {
                    self.mode = Mode::OpenTag {
                        buf: vec![b],
                        start: at,
                    };
                } else {
                    self.push_text(&[b], at);
                }
            }
            Mode::OpenTag { buf, start } => {
                buf.push(b);
                let start = *start;
                let full = TagKind::ALL
                    .into_iter()
                    .find(|k| k.open_tag().as_bytes() == buf.as_slice());
                if let Some(kind) = full {
                    self.flush_text(true, out);
                    out.push(StreamEvent::BBoxOpened { kind, offset: start });
                    self.mode = Mode::Body(Body::new(kind, start));
                } else if !TagKind::ALL.iter().any(|k| k.open_tag().as_bytes().starts_with(buf)) {
                    // Not a tag. Only the first byte can be '<', so the
                    // current byte is the only one that may start a new tag.
                    buf.pop();
                    let buf = std::mem::take(buf);
                    self.mode = Mode::Text;
                    self.push_text(&buf, start);
                    self.dispatch(b, at, out);
                }
            }
            Mode::Body(body) => match body.step(b) {
                Ok(false) => {}
                Ok(true) => {
                    let Mode::Body(body) = std::mem::replace(&mut self.mode, Mode::Text) else {
                        unreachable!()
                    };
                    out.push(body.into_event(at + 1));
                }
                Err(reason) => {
                    out.push(StreamEvent::MalformedSpan {
                        reason,
                        span: body.start..at,
                    });
                    self.mode = Mode::Text;
                    self.dispatch(b, at, out);
                }
            },
        }
    }

    /// Emits buffered text as one delta per word run, where a run ends at
    /// whitespace followed by a non-whitespace byte. Unless `all`, the last
    /// run stays buffered because it may still grow.
    fn flush_text(&mut self, all: bool, out: &mut Vec<StreamEvent>) {
        let mut cuts: Vec<usize> = (1..self.text.len())
            .filter(|&i| self.text[i - 1].is_ascii_whitespace() && !self.text[i].is_ascii_whitespace())
            .collect();
        if all && !self.text.is_empty() {
            cuts.push(self.text.len());
        }
        let mut from = 0;
        for cut in cuts {
            let span = self.text_start + from..self.text_start + cut;
            let text = String::from_utf8_lossy(&self.text[from..cut]).into_owned();
            out.push(StreamEvent::TextDelta { text, span });
            from = cut;
        }
        self.text.drain(..from);
        self.text_start += from;
    }
}

// ---------------------------------------------------------------------------
// Batch parsing and serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// First malformed tag is an error.
    Strict,
    /// Malformed tags become [`TokenKind::Malformed`] tokens.
    #[default]
    Lenient,
}

/// Strict parse.
pub fn parse(text: &str) -> Result<Vec<GroundingToken>> {
    parse_with(text, ParseMode::Strict)
}

/// Lenient parse; never fails and the token spans tile the input.
pub fn parse_lenient(text: &str) -> Vec<GroundingToken> {
    parse_with(text, ParseMode::Lenient).expect("lenient parsing is infallible")
}

pub fn parse_with(text: &str, mode: ParseMode) -> Result<Vec<GroundingToken>> {
    let mut parser = StreamParser::new();
    let mut events = parser.feed(text);
    events.extend(parser.finish());
    let mut tokens = Vec::new();
    for ev in coalesce_text(events) {
        let (kind, span) = match ev {
            StreamEvent::BBoxOpened { .. } => continue,
            StreamEvent::TextDelta { text, span } => (TokenKind::Text(text), span),
            StreamEvent::BBoxCompleted { bbox, span } => (TokenKind::BBox2D(bbox), span),
            StreamEvent::BBox3DCompleted { bbox, span } => (TokenKind::BBox3D(bbox), span),
            StreamEvent::Points3DCompleted { points, span } => (TokenKind::Points3D(points), span),
            StreamEvent::MalformedSpan { reason, span } => {
                if mode == ParseMode::Strict {
                    return Err(Error::parse(span.start, reason));
                }
                let raw = text[span.clone()].to_string();
                (TokenKind::Malformed { reason, raw }, span)
            }
        };
        tokens.push(GroundingToken { kind, span });
    }
    Ok(tokens)
}

/// Shortest round-trip decimal with at least one fractional digit.
pub fn format_number(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

fn join_numbers(values: &[f64]) -> String {
    values.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join(", ")
}

pub fn bbox2d_text(b: &Box2D) -> String {
    format!("<bbox>[{}]</bbox>", join_numbers(&b.to_array()))
}

pub fn bbox3d_text(b: &Box3D) -> String {
    format!("<bbox3d>[{}]</bbox3d>", join_numbers(&b.to_array()))
}

pub fn points3d_text(points: &[Point3<f64>]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Serialize("point list is empty".into()));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Serialize("point list has non-finite coordinates".into()));
    }
    let body = points
        .iter()
        .map(|p| format!("({})", join_numbers(&[p.x, p.y, p.z])))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("<points3d>[{body}]</points3d>"))
}

pub fn serialize_kind(kind: &TokenKind) -> Result<String> {
    Ok(match kind {
        TokenKind::Text(t) => t.clone(),
        TokenKind::BBox2D(b) => bbox2d_text(b),
        TokenKind::BBox3D(b) => bbox3d_text(b),
        TokenKind::Points3D(p) => points3d_text(p)?,
        TokenKind::Malformed { raw, .. } => raw.clone(),
    })
}

/// Canonical text for a token list. Spans are ignored.
pub fn serialize(tokens: &[GroundingToken]) -> Result<String> {
    tokens.iter().try_fold(String::new(), |mut acc, t| {
        acc.push_str(&serialize_kind(&t.kind)?);
        Ok(acc)
    })
}

/// Token kinds with empty text dropped and adjacent text merged; two token
/// lists carry the same content exactly when these are equal.
pub fn semantic_content(tokens: &[GroundingToken]) -> Vec<TokenKind> {
    let mut out: Vec<TokenKind> = Vec::new();
    for t in tokens {
        match (&t.kind, out.last_mut()) {
            (TokenKind::Text(s), _) if s.is_empty() => {}
            (TokenKind::Text(s), Some(TokenKind::Text(prev))) => prev.push_str(s),
            (k, _) => out.push(k.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b2(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn kinds(text: &str) -> Vec<TokenKind> {
        parse(text).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn parses_documented_bbox() {
        assert_eq!(
            kinds("<bbox>[10, 20, 30, 40]</bbox>"),
            vec![TokenKind::BBox2D(b2(10.0, 20.0, 30.0, 40.0))]
        );
    }

    #[test]
    fn empty_input() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn text_around_box() {
        let toks = parse("a <bbox>[0,0,1,1]</bbox> b").unwrap();
        assert_eq!(
            toks,
            vec![
                GroundingToken {
                    kind: TokenKind::Text("a ".into()),
                    span: 0..2
                },
                GroundingToken {
                    kind: TokenKind::BBox2D(b2(0.0, 0.0, 1.0, 1.0)),
                    span: 2..24
                },
                GroundingToken {
                    kind: TokenKind::Text(" b".into()),
                    span: 24..26
                },
            ]
        );
    }

    #[test]
    fn whitespace_is_optional() {
        assert_eq!(
            kinds("<bbox> [ 1 ,2,  3 , 4 ] </bbox>"),
            vec![TokenKind::BBox2D(b2(1.0, 2.0, 3.0, 4.0))]
        );
        assert_eq!(
            kinds("<points3d>[ (1,2,3) ,(4 , 5,6 ) ]</points3d>"),
            vec![TokenKind::Points3D(vec![
                Point3::new(1.0, 2.0, 3.0),
                Point3::new(4.0, 5.0, 6.0)
            ])]
        );
    }

    #[test]
    fn parses_3d_box() {
        let t = kinds("<bbox3d>[0.5, -1, 4e0, 1, 2, 3, 0.1, -0.2, 0.25]</bbox3d>");
        assert_eq!(
            t,
            vec![TokenKind::BBox3D(
                Box3D::from_array([0.5, -1.0, 4.0, 1.0, 2.0, 3.0, 0.1, -0.2, 0.25]).unwrap()
            )]
        );
    }

    #[test]
    fn strict_errors_carry_offsets() {
        let cases = [
            ("ab<bbox>[1, 2, 3]</bbox>", 2),
            ("<bbox>[1, 2, 3, 4, 5]</bbox>", 0),
            ("x <bbox>[1, two, 3, 4]</bbox>", 2),
            ("<bbox>[3, 0, 1, 1]</bbox>", 0),
            ("<bbox3d>[0,0,1,1,1,1,0,0,2]</bbox3d>", 0),
            ("<points3d>[]</points3d>", 0),
            ("<bbox>[1, 2, 3, 4]", 0),
            ("<bbox>[1..5, 2, 3, 4]</bbox>", 0),
        ];
        for (text, offset) in cases {
            match parse(text) {
                Err(Error::Parse { offset: o, .. }) => assert_eq!(o, offset, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn lenient_keeps_every_byte() {
        let text = "see <bbox>[1, 2, oops]</bbox> and <bbox>[1.0, 2.0, 3.0, 4.0]</bbox><bb";
        let toks = parse_lenient(text);
        let mut cursor = 0;
        for t in &toks {
            assert_eq!(t.span.start, cursor);
            cursor = t.span.end;
        }
        assert_eq!(cursor, text.len());
        assert!(matches!(toks[1].kind, TokenKind::Malformed { .. }));
        assert_eq!(serialize(&toks).unwrap().len(), text.len());
    }

    #[test]
    fn non_tags_are_text() {
        for text in [
            "a < b",
            "<b>bold</b>",
            "<bbox",
            "<<bbox>[1.0, 2.0, 3.0, 4.0]</bbox>",
            "1 <3",
        ] {
            let toks = parse(text).unwrap();
            assert_eq!(serialize(&toks).unwrap(), text);
        }
        assert_eq!(kinds("<<bbox>[1,2,3,4]</bbox>")[0], TokenKind::Text("<".into()));
    }

    #[test]
    fn malformed_tail_restarts_at_offending_byte() {
        let toks = parse_lenient("<bbox>[1, 2<bbox>[1, 2, 3, 4]</bbox>");
        assert!(matches!(toks[0].kind, TokenKind::Malformed { .. }));
        assert_eq!(toks[0].span, 0..11);
        assert_eq!(toks[1].kind, TokenKind::BBox2D(b2(1.0, 2.0, 3.0, 4.0)));
    }

    #[test]
    fn canonical_serialization() {
        let toks = vec![GroundingToken {
            kind: TokenKind::BBox2D(b2(10.0, 20.0, 30.0, 40.0)),
            span: 0..0,
        }];
        assert_eq!(serialize(&toks).unwrap(), "<bbox>[10.0, 20.0, 30.0, 40.0]</bbox>");
        assert_eq!(serialize(&[]).unwrap(), "");
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(format_number(-0.0), "-0.0");
        assert_eq!(format_number(1e-7), "0.0000001");
        assert_eq!(format_number(123456789.0), "123456789.0");
    }

    #[test]
    fn serialize_is_idempotent_on_canonical_text() {
        let text = "go <bbox>[1, 2.5, 3, 4]</bbox> then <bbox3d>[0,0,2,1,1,1,0,0,0.5]</bbox3d>.";
        let canon = serialize(&parse(text).unwrap()).unwrap();
        assert_eq!(serialize(&parse(&canon).unwrap()).unwrap(), canon);
        assert_eq!(
            semantic_content(&parse(&canon).unwrap()),
            semantic_content(&parse(text).unwrap())
        );
    }

    #[test]
    fn serialize_rejects_bad_points() {
        let empty = TokenKind::Points3D(vec![]);
        assert!(matches!(serialize_kind(&empty), Err(Error::Serialize(_))));
        let nan = TokenKind::Points3D(vec![Point3::new(f64::NAN, 0.0, 1.0)]);
        assert!(serialize_kind(&nan).is_err());
    }

    #[test]
    fn stream_example_split_tag() {
        let mut p = StreamParser::new();
        let mut ev = p.feed("<bb");
        assert!(ev.is_empty());
        ev.extend(p.feed("ox>[1, 2, 3"));
        ev.extend(p.feed(", 4]</bbox>"));
        ev.extend(p.finish());
        assert_eq!(
            ev,
            vec![
                StreamEvent::BBoxOpened {
                    kind: TagKind::BBox2D,
                    offset: 0
                },
                StreamEvent::BBoxCompleted {
                    bbox: b2(1.0, 2.0, 3.0, 4.0),
                    span: 0..25
                },
            ]
        );
    }

    #[test]
    fn stream_plain_text() {
        let mut p = StreamParser::new();
        assert_eq!(p.feed("hello wor"), vec![StreamEvent::text_delta("hello ", 0)]);
        assert_eq!(p.feed("ld"), vec![]);
        assert_eq!(p.finish(), vec![StreamEvent::text_delta("world", 6)]);
    }

    #[test]
    fn stream_holds_back_split_code_points() {
        let s = "é<bbox>[1,2,3,4]</bbox>ü";
        let bytes = s.as_bytes();
        let mut p = StreamParser::new();
        let mut ev = p.feed_bytes(&bytes[..1]);
        assert!(ev.is_empty());
        ev.extend(p.feed_bytes(&bytes[1..]));
        ev.extend(p.finish());
        let mut q = StreamParser::new();
        let mut whole = q.feed(s);
        whole.extend(q.finish());
        assert_eq!(ev, whole);
        assert_eq!(ev[0], StreamEvent::text_delta("é", 0));
    }

    #[test]
    fn finish_reports_unterminated_tag() {
        let mut p = StreamParser::new();
        p.feed("x <bbox3d>[1, 2");
        let ev = p.finish();
        assert_eq!(
            ev,
            vec![StreamEvent::MalformedSpan {
                reason: "unterminated <bbox3d>".into(),
                span: 2..15
            }]
        );
    }

    #[test]
    fn feed_until_stops_after_completion() {
        let mut p = StreamParser::new();
        let input = b"a<bbox>[1,2,3,4]</bbox> tail";
        let (ev, used) = p.feed_until(input, |e| matches!(e, StreamEvent::BBoxCompleted { .. }));
        assert_eq!(used, 23);
        assert!(matches!(ev.last(), Some(StreamEvent::BBoxCompleted { .. })));
        assert_eq!(p.feed_bytes(&input[used..]), vec![StreamEvent::text_delta(" ", 23)]);
        assert_eq!(p.finish(), vec![StreamEvent::text_delta("tail", 24)]);
    }

    #[test]
    fn long_numbers_are_rejected() {
        let text = format!("<bbox>[{}, 1, 2, 3]</bbox>", "1".repeat(100));
        assert!(parse(&text).is_err());
    }
}
