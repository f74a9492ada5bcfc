//! Region insertion around 2D box literals.
//!
//! At training time the layout is built directly from grounded text: each
//! box literal is followed by a region slot derived from the ground-truth
//! box, marked as a gradient barrier. At decode time [`ProtocolState`] pauses
//! generation as soon as a box literal completes, waits for the caller to
//! insert the predicted region, and then resumes. Both paths produce the same
//! segment skeleton; only the slot provenance flags differ.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::Box2D;
use crate::ground_text::{bbox2d_text, StreamEvent, StreamParser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "segment", rename_all = "snake_case")]
pub enum SequenceSegment {
    TextSpan {
        text: String,
    },
    BoxLiteral {
        bbox: Box2D,
    },
    RegionSlot {
        source: RegionSource,
        gradient_barrier: bool,
        region: Box2D,
    },
}

impl SequenceSegment {
    pub fn text(text: impl Into<String>) -> Self {
        SequenceSegment::TextSpan { text: text.into() }
    }

    pub fn ground_truth_slot(region: Box2D) -> Self {
        SequenceSegment::RegionSlot {
            source: RegionSource::GroundTruth,
            gradient_barrier: true,
            region,
        }
    }

    pub fn predicted_slot(region: Box2D) -> Self {
        SequenceSegment::RegionSlot {
            source: RegionSource::Predicted,
            gradient_barrier: false,
            region,
        }
    }

    /// Text this segment contributes to the grounded string; slots contribute
    /// nothing.
    pub fn rendered(&self) -> String {
        match self {
            SequenceSegment::TextSpan { text } => text.clone(),
            SequenceSegment::BoxLiteral { bbox } => bbox2d_text(bbox),
            SequenceSegment::RegionSlot { .. } => String::new(),
        }
    }
}

/// Concatenates the text and box literals of a layout.
pub fn render(segments: &[SequenceSegment]) -> String {
    segments.iter().map(SequenceSegment::rendered).collect()
}

/// Layout with slot provenance stripped, for comparing train and decode
/// sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum Skeleton {
    Text(String),
    Box(Box2D),
    Slot(Box2D),
}

impl std::fmt::Display for Skeleton {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Skeleton::Text(t) => write!(f, "TEXT {t:?}"),
            Skeleton::Box(b) => write!(f, "BOX {}", bbox2d_text(b)),
            Skeleton::Slot(b) => write!(f, "SLOT {}", bbox2d_text(b)),
        }
    }
}

pub fn skeleton(segments: &[SequenceSegment]) -> Vec<Skeleton> {
    let mut out: Vec<Skeleton> = Vec::new();
    for s in segments {
        match s {
            SequenceSegment::TextSpan { text } if text.is_empty() => {}
            SequenceSegment::TextSpan { text } => match out.last_mut() {
                Some(Skeleton::Text(prev)) => prev.push_str(text),
                _ => out.push(Skeleton::Text(text.clone())),
            },
            SequenceSegment::BoxLiteral { bbox } => out.push(Skeleton::Box(*bbox)),
            SequenceSegment::RegionSlot { region, .. } => out.push(Skeleton::Slot(*region)),
        }
    }
    out
}

/// Checks the layout invariants: each slot directly follows a box literal
/// (its region may be a jittered copy of that box), and ground-truth slots are
/// gradient barriers.
pub fn validate_segments(segments: &[SequenceSegment]) -> Result<()> {
    for (i, s) in segments.iter().enumerate() {
        if let SequenceSegment::RegionSlot {
            source,
            gradient_barrier,
            ..
        } = s
        {
            match i.checked_sub(1).map(|j| &segments[j]) {
                Some(SequenceSegment::BoxLiteral { .. }) => {}
                _ => {
                    return Err(Error::ProtocolViolation(format!(
                        "region slot {i} is not preceded by its box literal"
                    )))
                }
            }
            if *source == RegionSource::GroundTruth && !gradient_barrier {
                return Err(Error::ProtocolViolation(format!(
                    "ground-truth slot {i} must be a gradient barrier"
                )));
            }
        }
    }
    Ok(())
}

/// Teacher-forced layout: the text is cut at each mention end, where the
/// mention's box literal and a ground-truth region slot are inserted.
///
/// Mentions are `(byte range, box)` pairs, sorted and non-overlapping.
pub fn build_training_sequence(text: &str, mentions: &[(Range<usize>, Box2D)]) -> Result<Vec<SequenceSegment>> {
    let mut prev_end = 0;
    for (i, (range, _)) in mentions.iter().enumerate() {
        if range.start > range.end || range.end > text.len() {
            return Err(Error::InvalidMentions(format!(
                "mention {i} range {range:?} is outside the {}-byte text",
                text.len()
            )));
        }
        if !text.is_char_boundary(range.start) || !text.is_char_boundary(range.end) {
            return Err(Error::InvalidMentions(format!(
                "mention {i} range {range:?} splits a character"
            )));
        }
        if i > 0 && range.start < prev_end {
            return Err(Error::InvalidMentions(format!(
                "mention {i} overlaps or precedes the previous mention"
            )));
        }
        prev_end = range.end;
    }

    let mut out = Vec::with_capacity(mentions.len() * 3 + 1);
    let mut cursor = 0;
    for (range, bbox) in mentions {
        if range.end > cursor {
            out.push(SequenceSegment::text(&text[cursor..range.end]));
        }
        out.push(SequenceSegment::BoxLiteral { bbox: *bbox });
        out.push(SequenceSegment::ground_truth_slot(*bbox));
        cursor = range.end;
    }
    if cursor < text.len() {
        out.push(SequenceSegment::text(&text[cursor..]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Generating,
    AwaitingRegion(Box2D),
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Continue,
    PauseForRegion(Box2D),
}

/// Decode-time state for one generation stream.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    phase: Phase,
    segments: Vec<SequenceSegment>,
    parser: StreamParser,
    /// Raw output seen so far, used to recover the source of non-2D tags.
    transcript: String,
    /// Bytes received after a completed box, replayed on resume.
    deferred: Vec<u8>,
}

impl Default for ProtocolState {
    fn default() -> Self {
        Self::new()
    }
}

impl ProtocolState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Generating,
            segments: Vec::new(),
            parser: StreamParser::new(),
            transcript: String::new(),
            deferred: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn segments(&self) -> &[SequenceSegment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<SequenceSegment> {
        self.segments
    }

    /// Accepts decoder output. Once a 2D box literal completes the state moves
    /// to [`Phase::AwaitingRegion`] and any bytes after it are held until the
    /// region has been inserted.
    pub fn on_decode(&mut self, chunk: &str) -> Result<(Vec<StreamEvent>, Action)> {
        match self.phase {
            Phase::Generating => {}
            Phase::AwaitingRegion(_) => {
                return Err(Error::ProtocolViolation(
                    "decoder output received while a region insertion is pending".into(),
                ))
            }
            Phase::Finished => return Err(Error::ProtocolViolation("stream already finished".into())),
        }
        let mut input = std::mem::take(&mut self.deferred);
        input.extend_from_slice(chunk.as_bytes());
        self.run(&input)
    }

    /// Acknowledges the region for the pending box literal and replays any
    /// held-back output.
    pub fn on_region_inserted(&mut self, region: &Box2D) -> Result<(Vec<StreamEvent>, Action)> {
        let Phase::AwaitingRegion(expected) = self.phase else {
            return Err(Error::ProtocolViolation(
                "region inserted while no box literal is pending".into(),
            ));
        };
        if *region != expected {
            return Err(Error::ProtocolViolation(format!(
                "inserted region {} does not match pending box {}",
                bbox2d_text(region),
                bbox2d_text(&expected)
            )));
        }
        self.segments.push(SequenceSegment::predicted_slot(*region));
        self.phase = Phase::Generating;
        let input = std::mem::take(&mut self.deferred);
        self.run(&input)
    }

    /// Ends the stream, flushing partial structures.
    pub fn finish(&mut self) -> Result<Vec<StreamEvent>> {
        if let Phase::AwaitingRegion(_) = self.phase {
            return Err(Error::ProtocolViolation(
                "stream ended while a region insertion is pending".into(),
            ));
        }
        let events = self.parser.finish();
        for ev in &events {
            self.absorb(ev);
        }
        self.phase = Phase::Finished;
        Ok(events)
    }

    fn run(&mut self, input: &[u8]) -> Result<(Vec<StreamEvent>, Action)> {
        let start = self.parser.offset();
        let (mut events, used) = self
            .parser
            .feed_until(input, |e| matches!(e, StreamEvent::BBoxCompleted { .. }));
        self.transcript.push_str(&String::from_utf8_lossy(&input[..used]));
        debug_assert_eq!(self.parser.offset(), start + used);
        self.deferred = input[used..].to_vec();

        let mut action = Action::Continue;
        for ev in &mut events {
            if let StreamEvent::BBoxCompleted { bbox, span } = ev {
                if bbox.area() <= 0.0 {
                    *ev = StreamEvent::MalformedSpan {
                        reason: "degenerate region (zero area)".into(),
                        span: span.clone(),
                    };
                } else {
                    action = Action::PauseForRegion(*bbox);
                }
            }
            self.absorb(ev);
        }
        if let Action::PauseForRegion(b) = action {
            self.phase = Phase::AwaitingRegion(b);
        } else if !self.deferred.is_empty() {
            // a degenerate box stopped the feed; keep going
            let rest = std::mem::take(&mut self.deferred);
            let (more, next) = self.run(&rest)?;
            events.extend(more);
            action = next;
        }
        Ok((events, action))
    }

    fn absorb(&mut self, ev: &StreamEvent) {
        match ev {
            StreamEvent::BBoxOpened { .. } => {}
            StreamEvent::TextDelta { text, .. } => self.push_text(text),
            StreamEvent::BBoxCompleted { bbox, .. } => self.segments.push(SequenceSegment::BoxLiteral { bbox: *bbox }),
            StreamEvent::BBox3DCompleted { span, .. }
            | StreamEvent::Points3DCompleted { span, .. }
            | StreamEvent::MalformedSpan { span, .. } => {
                let raw = self.transcript.get(span.clone()).unwrap_or_default().to_string();
                self.push_text(&raw);
            }
        }
    }

    fn push_text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(SequenceSegment::TextSpan { text: prev }) = self.segments.last_mut() {
            prev.push_str(text);
        } else {
            self.segments.push(SequenceSegment::text(text));
        }
    }
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReplayStep {
    /// Decoder output.
    Chunk { text: String },
    /// Region insertion; `region` defaults to the pending box.
    Ack {
        #[serde(default)]
        region: Option<Box2D>,
    },
}

/// Drives a [`ProtocolState`] through a scripted decode.
pub fn replay(steps: &[ReplayStep]) -> Result<Vec<SequenceSegment>> {
    let mut state = ProtocolState::new();
    for (i, step) in steps.iter().enumerate() {
        let res = match step {
            ReplayStep::Chunk { text } => state.on_decode(text),
            ReplayStep::Ack { region } => {
                let region = match (region, state.phase()) {
                    (Some(r), _) => *r,
                    (None, Phase::AwaitingRegion(b)) => b,
                    (None, _) => {
                        return Err(Error::ProtocolViolation(format!(
                            "step {}: acknowledgment with no pending box",
                            i + 1
                        )))
                    }
                };
                state.on_region_inserted(&region)
            }
        };
        res.map_err(|e| match e {
            Error::ProtocolViolation(m) => Error::ProtocolViolation(format!("step {}: {m}", i + 1)),
            other => other,
        })?;
    }
    state.finish()?;
    Ok(state.into_segments())
}

/// Feeds `text` in pieces of `chunk_len` bytes (split on char boundaries),
/// acknowledging every pause with the predicted box.
pub fn decode_scripted(text: &str, chunk_len: usize) -> Result<Vec<SequenceSegment>> {
    let mut state = ProtocolState::new();
    let mut rest = text;
    let step = chunk_len.max(1);
    loop {
        let mut cut = step.min(rest.len());
        while !rest.is_char_boundary(cut) {
            cut += 1;
        }
        let (chunk, tail) = rest.split_at(cut);
        rest = tail;
        let (_, mut action) = state.on_decode(chunk)?;
        while let Action::PauseForRegion(b) = action {
            action = state.on_region_inserted(&b)?.1;
        }
        if rest.is_empty() {
            break;
        }
    }
    state.finish()?;
    Ok(state.into_segments())
}
