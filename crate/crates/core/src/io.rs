//! Line-delimited JSON files.
//!
//! Every reader reports failures as [`Error::Record`] carrying the file path,
//! the 1-based line and the absolute byte offset of the offending input.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::geom2d::Box2D;
use crate::geom3d::Box3D;

/// A decoded line with its position in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Located<T> {
    pub line: usize,
    pub offset: usize,
    pub value: T,
}

/// Decodes one JSON value per non-blank line of `text`.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<Located<T>>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(value) => out.push(Located {
                line: i + 1,
                offset: start,
                value,
            }),
            Err(e) => {
                return Err(Error::Record {
                    path: path.to_string(),
                    line: i + 1,
                    offset: start + e.column().saturating_sub(1).min(line.len()),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<Located<T>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Reads values, discarding positions.
pub fn read_values<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|l| l.value).collect())
}

/// One JSON document per line, `\n` terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).map_err(|e| Error::Serialize(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_text(path, &to_jsonl(items)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Shared layout of prediction and ground-truth lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub image_id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box2d: Option<Box2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box3d: Option<Box3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore: Option<bool>,
}

impl BoxRecord {
    pub fn from_detection_3d(d: &Detection<Box3D>) -> Self {
        Self {
            image_id: d.image_id.clone(),
            category: d.category.clone(),
            score: Some(d.score),
            box2d: None,
            box3d: Some(d.bbox),
            ignore: None,
        }
    }

    pub fn from_ground_truth_3d(g: &GroundTruth<Box3D>) -> Self {
        Self {
            image_id: g.image_id.clone(),
            category: g.category.clone(),
            score: None,
            box2d: None,
            box3d: Some(g.bbox),
            ignore: g.ignore.then_some(true),
        }
    }
}

fn record_error(path: &str, l: &Located<BoxRecord>, message: &str) -> Error {
    Error::Record {
        path: path.to_string(),
        line: l.line,
        offset: l.offset,
        message: message.to_string(),
    }
}

fn pick<B: Copy>(path: &str, l: &Located<BoxRecord>, field: fn(&BoxRecord) -> Option<B>, name: &str) -> Result<B> {
    field(&l.value).ok_or_else(|| record_error(path, l, &format!("missing {name}")))
}

fn to_detections<B: Copy>(
    path: &str,
    lines: &[Located<BoxRecord>],
    field: fn(&BoxRecord) -> Option<B>,
    name: &str,
) -> Result<Vec<Detection<B>>> {
    lines
        .iter()
        .map(|l| {
            let score = l.value.score.ok_or_else(|| record_error(path, l, "missing score"))?;
            if !score.is_finite() {
                return Err(record_error(path, l, "score is not finite"));
            }
            Ok(Detection {
                image_id: l.value.image_id.clone(),
                category: l.value.category.clone(),
                bbox: pick(path, l, field, name)?,
                score,
            })
        })
        .collect()
}

fn to_ground_truth<B: Copy>(
    path: &str,
    lines: &[Located<BoxRecord>],
    field: fn(&BoxRecord) -> Option<B>,
    name: &str,
) -> Result<Vec<GroundTruth<B>>> {
    lines
        .iter()
        .map(|l| {
            Ok(GroundTruth {
                image_id: l.value.image_id.clone(),
                category: l.value.category.clone(),
                bbox: pick(path, l, field, name)?,
                ignore: l.value.ignore.unwrap_or(false),
            })
        })
        .collect()
}

fn b2(r: &BoxRecord) -> Option<Box2D> {
    r.box2d
}

fn b3(r: &BoxRecord) -> Option<Box3D> {
    r.box3d
}

pub fn parse_predictions_3d(text: &str, path: &str) -> Result<Vec<Detection<Box3D>>> {
    to_detections(path, &parse_jsonl(text, path)?, b3, "box3d")
}

pub fn parse_ground_truth_3d(text: &str, path: &str) -> Result<Vec<GroundTruth<Box3D>>> {
    to_ground_truth(path, &parse_jsonl(text, path)?, b3, "box3d")
}

pub fn parse_predictions_2d(text: &str, path: &str) -> Result<Vec<Detection<Box2D>>> {
    to_detections(path, &parse_jsonl(text, path)?, b2, "box2d")
}

pub fn parse_ground_truth_2d(text: &str, path: &str) -> Result<Vec<GroundTruth<Box2D>>> {
    to_ground_truth(path, &parse_jsonl(text, path)?, b2, "box2d")
}

fn read(path: &Path) -> Result<(String, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok((text, path.display().to_string()))
}

pub fn read_predictions_3d(path: &Path) -> Result<Vec<Detection<Box3D>>> {
    let (t, p) = read(path)?;
    parse_predictions_3d(&t, &p)
}

pub fn read_ground_truth_3d(path: &Path) -> Result<Vec<GroundTruth<Box3D>>> {
    let (t, p) = read(path)?;
    parse_ground_truth_3d(&t, &p)
}

pub fn read_predictions_2d(path: &Path) -> Result<Vec<Detection<Box2D>>> {
    let (t, p) = read(path)?;
    parse_predictions_2d(&t, &p)
}

pub fn read_ground_truth_2d(path: &Path) -> Result<Vec<GroundTruth<Box2D>>> {
    let (t, p) = read(path)?;
    parse_ground_truth_2d(&t, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::GCoTRecord;

    #[test]
    fn reads_predictions() {
        let text = "\n{\"image_id\":\"a\",\"category\":\"c\",\"score\":0.5,\"box3d\":[0,0,5,1,1,1,0,0,0]}\n";
        let d = parse_predictions_3d(text, "p.jsonl").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.5);
        assert_eq!(d[0].bbox.to_array()[2], 5.0);
    }

    #[test]
    fn error_positions() {
        let text = "{\"image_id\":\"a\",\"category\":\"c\",\"box2d\":[0,0,1,1]}\n{\"image_id\":\"a\",\"category\":\"c\",\"box2d\":[2,0,1,1]}\n";
        let g = parse_ground_truth_2d(text, "g.jsonl");
        match g {
            Err(Error::Record { path, line, offset, .. }) => {
                assert_eq!(path, "g.jsonl");
                assert_eq!(line, 2);
                assert!(offset >= 52 && offset < text.len(), "{offset}");
            }
            other => panic!("{other:?}"),
        }
        // valid JSON but a prediction without a score
        let p = parse_predictions_2d(text.lines().next().unwrap(), "p");
        assert!(matches!(p, Err(Error::Record { line: 1, offset: 0, .. })));
        let p = parse_predictions_3d("{\"image_id\":\"a\",\"category\":\"c\",\"score\":1}", "p");
        assert!(matches!(p, Err(Error::Record { ref message, .. }) if message.contains("box3d")));
        let p = parse_predictions_3d("{\"image_id\":\"a\",\"category\":\"c\",\"bogus\":1}", "p");
        assert!(p.is_err());
    }

    #[test]
    fn round_trip_records() {
        let recs = vec![GCoTRecord {
            id: Some("q1".into()),
            answer_correct: true,
            predicted_box: None,
            gt_box: Box2D::new(0.0, 0.0, 2.0, 3.0).unwrap(),
        }];
        let text = to_jsonl(&recs).unwrap();
        let back: Vec<GCoTRecord> = parse_jsonl(&text, "r").unwrap().into_iter().map(|l| l.value).collect();
        assert_eq!(back, recs);
    }
}
