//! Training-record construction from annotated scenes.
//!
//! Three record kinds are produced: grounded reasoning text with region
//! slots after every mention, detect-then-lift sequences (2D box, region,
//! 3D box per object) and dense point supervision for a region. Records can
//! be grouped into multi-turn conversations and their region slots jittered.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{sample_region_points, transform_to_reference, CameraIntrinsics, DepthMap, Pose};
use crate::error::{Error, Result};
use crate::geom2d::{jitter_with_rng, Box2D, JitterParams};
use crate::geom3d::Box3D;
use crate::ground_text::{bbox3d_text, points3d_text};
use crate::io::{read_jsonl, Located};
use crate::region_protocol::{build_training_sequence, render, validate_segments, SequenceSegment};

pub const DEFAULT_MAX_OBJECTS: usize = 20;
pub const DEFAULT_POINTS: usize = 100;
pub const DEFAULT_MAX_ROUNDS: usize = 10;

const QUESTIONS: &str = include_str!("../data/questions.txt");
const GROUNDING: &str = include_str!("../data/grounding.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    pub description: String,
    pub box2d: Box2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box3d: Option<Box3D>,
}

/// A reasoning passage whose byte ranges refer to scene objects by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reasoning {
    pub text: String,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedScene {
    pub image_id: String,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<SceneObject>,
    pub depth: Option<DepthMap>,
    pub pose: Option<Pose>,
    pub reasoning: Option<Reasoning>,
}

impl AnnotatedScene {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (w, h) = (self.intrinsics.width as f64, self.intrinsics.height as f64);
        for (i, o) in self.objects.iter().enumerate() {
            if o.description.trim().is_empty() {
                return Err(Error::InvalidBox(format!("object {i} has an empty description")));
            }
            let b = &o.box2d;
            if b.x1() < 0.0 || b.y1() < 0.0 || b.x2() > w || b.y2() > h {
                return Err(Error::InvalidBox(format!(
                    "object {i} box {:?} exceeds the {}x{} image",
                    b.to_array(),
                    self.intrinsics.width,
                    self.intrinsics.height
                )));
            }
        }
        if let Some(r) = &self.reasoning {
            if let Some(m) = r.mentions.iter().find(|m| m.object >= self.objects.len()) {
                return Err(Error::InvalidMentions(format!(
                    "mention refers to object {} of {}",
                    m.object,
                    self.objects.len()
                )));
            }
        }
        Ok(())
    }

    /// Object indices by descending 2D area; equal areas keep input order.
    pub fn objects_by_area(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.objects.len()).collect();
        idx.sort_by(|&a, &b| self.objects[b].box2d.area().total_cmp(&self.objects[a].box2d.area()));
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    GroundedCot,
    DetectCot,
    PointSupervision,
}

impl RecordKind {
    fn key(self) -> &'static str {
        match self {
            RecordKind::GroundedCot => "grounded_cot",
            RecordKind::DetectCot => "detect_cot",
            RecordKind::PointSupervision => "point_supervision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub kind: RecordKind,
    /// Rendered grounded text; box literals included, slots omitted.
    pub text: String,
    pub segments: Vec<SequenceSegment>,
    pub metadata: BTreeMap<String, String>,
}

impl TrainingRecord {
    pub fn new(kind: RecordKind, segments: Vec<SequenceSegment>, metadata: BTreeMap<String, String>) -> Result<Self> {
        validate_segments(&segments)?;
        Ok(Self {
            kind,
            text: render(&segments),
            segments,
            metadata,
        })
    }
}

fn base_metadata(scene: &AnnotatedScene) -> BTreeMap<String, String> {
    BTreeMap::from([("image_id".to_string(), scene.image_id.clone())])
}

fn template_lines(source: &str) -> impl Iterator<Item = &str> {
    source
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Question templates per record kind, in file order.
pub fn question_templates(kind: RecordKind) -> Vec<&'static str> {
    template_lines(QUESTIONS)
        .filter_map(|l| l.split_once('|'))
        .filter(|(k, _)| *k == kind.key())
        .map(|(_, q)| q)
        .collect()
}

fn grounding_templates() -> Vec<&'static str> {
    template_lines(GROUNDING).collect()
}

/// Grounded reasoning record. Uses the scene's reasoning passage when
/// present; otherwise writes one templated sentence per object (largest
/// first, up to `max_objects`) with the description as the mention.
pub fn make_grounded_cot(scene: &AnnotatedScene, max_objects: usize, seed: u64) -> Result<TrainingRecord> {
    let mut meta = base_metadata(scene);
    let segments = if let Some(r) = &scene.reasoning {
        let mut mentions: Vec<(Range<usize>, Box2D)> =
            r.mentions
                .iter()
                .map(|m| {
                    let obj = scene.objects.get(m.object).ok_or_else(|| {
                        Error::InvalidMentions(format!("mention refers to missing object {}", m.object))
                    })?;
                    Ok((m.start..m.end, obj.box2d))
                })
                .collect::<Result<_>>()?;
        mentions.sort_by_key(|(r, _)| (r.start, r.end));
        if let Some(m) = r.mentions.first() {
            meta.insert("desc".into(), scene.objects[m.object].description.clone());
        }
        build_training_sequence(&r.text, &mentions)?
    } else {
        let order = scene.objects_by_area();
        if order.is_empty() {
            return Err(Error::NothingToGenerate(format!(
                "scene {} has no objects",
                scene.image_id
            )));
        }
        let templates = grounding_templates();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::new();
        let mut mentions = Vec::new();
        for &i in order.iter().take(max_objects.max(1)) {
            let obj = &scene.objects[i];
            let t = templates[rng.random_range(0..templates.len())];
            let (head, tail) = t.split_once("{desc}").unwrap_or((t, ""));
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(head);
            let start = text.len();
            text.push_str(&obj.description);
            mentions.push((start..text.len(), obj.box2d));
            text.push_str(tail);
        }
        meta.insert("desc".into(), scene.objects[order[0]].description.clone());
        build_training_sequence(&text, &mentions)?
    };
    TrainingRecord::new(RecordKind::GroundedCot, segments, meta)
}

/// Object filter applied before detect-then-lift selection.
pub type ObjectFilter<'a> = &'a (dyn Fn(&SceneObject) -> bool + Sync);

pub fn keep_all(_: &SceneObject) -> bool {
    true
}

/// Detect-then-lift record: for each selected 3D-annotated object, largest
/// 2D box first, a box literal, its region slot and the 3D box target. The
/// target is expressed in the reference frame when the scene has a pose.
pub fn make_detect_cot(scene: &AnnotatedScene, max_objects: usize, filter: ObjectFilter<'_>) -> Result<TrainingRecord> {
    let selected: Vec<(usize, Box3D)> = scene
        .objects_by_area()
        .into_iter()
        .filter(|&i| filter(&scene.objects[i]))
        .filter_map(|i| scene.objects[i].box3d.map(|b| (i, b)))
        .take(max_objects)
        .collect();
    if selected.is_empty() {
        return Err(Error::NothingToGenerate(format!(
            "scene {} has no selectable 3D-annotated objects",
            scene.image_id
        )));
    }
    let mut segments = Vec::with_capacity(selected.len() * 3);
    for &(i, b3) in &selected {
        let b2 = scene.objects[i].box2d;
        let target = scene.pose.as_ref().map_or(b3, |p| transform_to_reference(p, &b3));
        segments.push(SequenceSegment::BoxLiteral { bbox: b2 });
        segments.push(SequenceSegment::ground_truth_slot(b2));
        segments.push(SequenceSegment::text(bbox3d_text(&target)));
    }
    let mut meta = base_metadata(scene);
    meta.insert("desc".into(), scene.objects[selected[0].0].description.clone());
    meta.insert("objects".into(), selected.len().to_string());
    TrainingRecord::new(RecordKind::DetectCot, segments, meta)
}

/// Region-conditioned point record: `n` depth-backed points from `region`.
pub fn make_point_supervision(scene: &AnnotatedScene, region: &Box2D, n: usize, seed: u64) -> Result<TrainingRecord> {
    let depth = scene
        .depth
        .as_ref()
        .ok_or_else(|| Error::NothingToGenerate(format!("scene {} has no depth map", scene.image_id)))?;
    let points = sample_region_points(depth, &scene.intrinsics, region, n, seed)?;
    let segments = vec![
        SequenceSegment::BoxLiteral { bbox: *region },
        SequenceSegment::ground_truth_slot(*region),
        SequenceSegment::text(points3d_text(&points)?),
    ];
    let mut meta = base_metadata(scene);
    meta.insert("points".into(), points.len().to_string());
    meta.insert("seed".into(), seed.to_string());
    TrainingRecord::new(RecordKind::PointSupervision, segments, meta)
}

/// Jitters every region slot with one shared seeded stream. Box literals and
/// text, hence the supervised targets, are left untouched.
pub fn augment_record(r: &TrainingRecord, p: &JitterParams, image_w: f64, image_h: f64) -> TrainingRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = r.clone();
    for s in &mut out.segments {
        if let SequenceSegment::RegionSlot { region, .. } = s {
            *region = jitter_with_rng(region, p, image_w, image_h, &mut rng);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub answer: TrainingRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub image_id: String,
    pub turns: Vec<Turn>,
}

/// Groups records into conversations of at most `max_rounds` turns, one
/// record per turn in input order. Records beyond the cap spill into further
/// conversations.
pub fn assemble_conversation(records: &[TrainingRecord], max_rounds: usize) -> Vec<ConversationRecord> {
    let mut counters: BTreeMap<RecordKind, usize> = BTreeMap::new();
    records
        .chunks(max_rounds.max(1))
        .map(|chunk| ConversationRecord {
            image_id: chunk[0].metadata.get("image_id").cloned().unwrap_or_default(),
            turns: chunk
                .iter()
                .map(|r| {
                    let templates = question_templates(r.kind);
                    let n = counters.entry(r.kind).or_default();
                    let t = templates[*n % templates.len()];
                    *n += 1;
                    let desc = r.metadata.get("desc").map_or("object", String::as_str);
                    Turn {
                        question: t.replace("{desc}", desc),
                        answer: r.clone(),
                    }
                })
                .collect(),
        })
        .collect()
}

/// One scene line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub image_id: String,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<DepthRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<Reasoning>,
}

/// Raw little-endian `f32` raster, optional one-byte mask, metric scale.
/// Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRef {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl ManifestScene {
    pub fn load(&self, base: &Path) -> Result<AnnotatedScene> {
        let depth = match &self.depth {
            Some(d) => Some(DepthMap::read_raw(
                &base.join(&d.path),
                d.mask.as_ref().map(|m| base.join(m)).as_deref(),
                self.intrinsics.width,
                self.intrinsics.height,
                d.scale,
            )?),
            None => None,
        };
        let scene = AnnotatedScene {
            image_id: self.image_id.clone(),
            intrinsics: self.intrinsics,
            objects: self.objects.clone(),
            depth,
            pose: self
                .pose
                .map(|p| Pose::from_parts(p.rotation, p.translation))
                .transpose()?,
            reasoning: self.reasoning.clone(),
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<AnnotatedScene>> {
    Ok(load_manifest_located(path)?.into_iter().map(|l| l.value).collect())
}

/// Like [`load_manifest`], keeping each scene's line position.
pub fn load_manifest_located(path: &Path) -> Result<Vec<Located<AnnotatedScene>>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let lines: Vec<Located<ManifestScene>> = read_jsonl(path)?;
    lines
        .into_iter()
        .map(|l| {
            let value = l.value.load(base).map_err(|e| Error::Record {
                path: path.display().to_string(),
                line: l.line,
                offset: l.offset,
                message: e.to_string(),
            })?;
            Ok(Located {
                line: l.line,
                offset: l.offset,
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Cot,
    Detect,
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub kind: GenKind,
    pub seed: u64,
    /// `(center_frac, size_frac)` applied to region slots.
    pub jitter: Option<(f64, f64)>,
    pub max_objects: usize,
    pub points: usize,
    pub jobs: usize,
}

impl GenConfig {
    pub fn new(kind: GenKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            jitter: None,
            max_objects: DEFAULT_MAX_OBJECTS,
            points: DEFAULT_POINTS,
            jobs: 1,
        }
    }
}

/// Independent seed for the `index`-th scene (in image-id order).
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

fn generate_scene(scene: &AnnotatedScene, cfg: &GenConfig, seed: u64) -> Result<Vec<TrainingRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = match cfg.kind {
        GenKind::Cot => vec![make_grounded_cot(scene, cfg.max_objects, rng.next_u64())?],
        GenKind::Detect => match make_detect_cot(scene, cfg.max_objects, &keep_all) {
            Ok(r) => vec![r],
            Err(Error::NothingToGenerate(m)) => {
                warn!("skipping: {m}");
                Vec::new()
            }
            Err(e) => return Err(e),
        },
        GenKind::Points => scene
            .objects_by_area()
            .into_iter()
            .take(cfg.max_objects)
            .map(|i| make_point_supervision(scene, &scene.objects[i].box2d, cfg.points, rng.next_u64()))
            .collect::<Result<_>>()?,
    };
    match (cfg.jitter, cfg.kind) {
        (Some((c, s)), GenKind::Cot | GenKind::Detect) => {
            let (w, h) = (scene.intrinsics.width as f64, scene.intrinsics.height as f64);
            records
                .iter()
                .map(|r| Ok(augment_record(r, &JitterParams::new(c, s, rng.next_u64())?, w, h)))
                .collect()
        }
        _ => Ok(records),
    }
}

/// Generates records for every scene in image-id order. Each scene draws
/// from its own seed stream, so the output does not depend on `jobs`.
pub fn generate(scenes: &[AnnotatedScene], cfg: &GenConfig) -> Result<Vec<TrainingRecord>> {
    if let Some((c, s)) = cfg.jitter {
        JitterParams::new(c, s, 0)?;
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by(|&a, &b| scenes[a].image_id.cmp(&scenes[b].image_id));
    let work = |k: usize| {
        let scene = &scenes[order[k]];
        generate_scene(scene, cfg, scene_seed(cfg.seed, k as u64)).map_err(|e| Error::Scene {
            image_id: scene.image_id.clone(),
            source: Box::new(e),
        })
    };
    let per_scene: Vec<Result<Vec<TrainingRecord>>> = if cfg.jobs <= 1 {
        (0..order.len()).map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..order.len()).into_par_iter().map(work).collect())
    };
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}
