//! C interface to `gr3dkit`.
//!
//! Conventions:
//! - Every function returns a [`Gr3dStatus`]; outputs go through pointers.
//! - On failure, [`gr3d_last_error`] returns a message for the calling thread.
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with [`gr3d_string_free`].
//! - Structured data crosses the boundary as flat `double` buffers or as
//!   line-delimited JSON in the same layout the command-line tool reads and
//!   writes.
//! - Stream parsers and protocol states are opaque handles with matching
//!   `_new` / `_free` functions. A handle must not be used from two threads at
//!   once; distinct handles are independent.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gr3dkit::camera::{normalize_intrinsics, sample_region_points, CameraIntrinsics, DepthMap};
use gr3dkit::error::Error;
use gr3dkit::eval::{self, ApInterpolation, EvalConfig, GCoTRecord};
use gr3dkit::geom2d::{iou2d, Box2D};
use gr3dkit::geom3d::{iou3d, Box3D};
use gr3dkit::ground_text::{self, GroundingToken, ParseMode, StreamEvent, StreamParser};
use gr3dkit::io::{self, parse_jsonl};
use gr3dkit::region_protocol::{Action, ProtocolState};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gr3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidBox = 4,
    DegenerateGeometry = 5,
    ParseError = 6,
    ProtocolViolation = 7,
    NoValidDepth = 8,
    EmptyInput = 9,
    Io = 10,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> Gr3dStatus {
    match e {
        Error::InvalidBox(_) | Error::EmptyAfterClamp | Error::InvalidRotation(_) => Gr3dStatus::InvalidBox,
        Error::DegenerateGeometry(_) => Gr3dStatus::DegenerateGeometry,
        Error::Parse { .. } | Error::Record { .. } | Error::Serialize(_) => Gr3dStatus::ParseError,
        Error::ProtocolViolation(_) | Error::InvalidMentions(_) => Gr3dStatus::ProtocolViolation,
        Error::NoValidDepth => Gr3dStatus::NoValidDepth,
        Error::EmptyEvaluation | Error::NothingToGenerate(_) => Gr3dStatus::EmptyInput,
        Error::Io { .. } => Gr3dStatus::Io,
        Error::Scene { source, .. } => status_of(source),
        _ => Gr3dStatus::InvalidArgument,
    }
}

struct Failure(Gr3dStatus, String);

type FfiResult<T> = std::result::Result<T, Failure>;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and converts panics into a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> Gr3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            Gr3dStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            Gr3dStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(Gr3dStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(Gr3dStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(Gr3dStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let out = out_ref(out, "output string")?;
    let c = CString::new(s).map_err(|_| invalid("output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

fn box2d(v: &[f64]) -> FfiResult<Box2D> {
    Ok(Box2D::new(v[0], v[1], v[2], v[3])?)
}

fn box3d(v: &[f64]) -> FfiResult<Box3D> {
    let mut a = [0.0; 9];
    a.copy_from_slice(&v[..9]);
    Ok(Box3D::from_array(a)?)
}

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> FfiResult<String> {
    Ok(io::to_jsonl(items)?)
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gr3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gr3d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// 3D IoU of two 9-number boxes `[x, y, z, w, h, l, pitch, roll, yaw]`.
///
/// # Safety
/// `a` and `b` must point to 9 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_iou3d(a: *const f64, b: *const f64, out: *mut f64) -> Gr3dStatus {
    guard(|| {
        let a = box3d(slice(a, 9, "a")?)?;
        let b = box3d(slice(b, 9, "b")?)?;
        *out_ref(out, "out")? = iou3d(&a, &b)?;
        Ok(())
    })
}

/// Row-major `n x m` IoU matrix between `n` and `m` packed 9-number boxes.
/// Degenerate pairs are written as 0.
///
/// # Safety
/// `a` holds `9 n` doubles, `b` holds `9 m`, `out` has room for `n m`.
#[no_mangle]
pub unsafe extern "C" fn gr3d_iou3d_matrix(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    out: *mut f64,
) -> Gr3dStatus {
    guard(|| {
        let a: Vec<Box3D> = slice(a, 9 * n, "a")?
            .chunks_exact(9)
            .map(box3d)
            .collect::<FfiResult<_>>()?;
        let b: Vec<Box3D> = slice(b, 9 * m, "b")?
            .chunks_exact(9)
            .map(box3d)
            .collect::<FfiResult<_>>()?;
        if n * m == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, n * m);
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i * m + j] = iou3d(x, y).unwrap_or(0.0);
            }
        }
        Ok(())
    })
}

/// IoU of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` must point to 4 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_iou2d(a: *const f64, b: *const f64, out: *mut f64) -> Gr3dStatus {
    guard(|| {
        let a = box2d(slice(a, 4, "a")?)?;
        let b = box2d(slice(b, 4, "b")?)?;
        *out_ref(out, "out")? = iou2d(&a, &b)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gr3dNormalized {
    pub width: u32,
    pub height: u32,
    pub scale: f64,
}

/// Image size after rescaling to a 1000 px focal length.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_normalize_intrinsics(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    out: *mut Gr3dNormalized,
) -> Gr3dStatus {
    guard(|| {
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height)?;
        let n = normalize_intrinsics(&k);
        *out_ref(out, "out")? = Gr3dNormalized {
            width: n.width,
            height: n.height,
            scale: n.scale,
        };
        Ok(())
    })
}

/// Parses grounded text into tokens, one JSON object per line. With
/// `strict` false, malformed spans become `malformed` tokens.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_parse(text: *const c_char, strict: bool, out: *mut *mut c_char) -> Gr3dStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
        let tokens = ground_text::parse_with(text, mode)?;
        put_string(out, to_jsonl(&tokens)?)
    })
}

/// Inverse of [`gr3d_parse`]: renders token lines back to grounded text.
///
/// # Safety
/// `tokens_jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_serialize(tokens_jsonl: *const c_char, out: *mut *mut c_char) -> Gr3dStatus {
    guard(|| {
        let src = c_str(tokens_jsonl, "tokens")?;
        let tokens: Vec<GroundingToken> = parse_jsonl(src, "<tokens>")?.into_iter().map(|l| l.value).collect();
        put_string(out, ground_text::serialize(&tokens)?)
    })
}

/// Detection AP. `kind` is `"3d"` or `"2d"`; prediction and ground-truth
/// text use the command-line file format. `thresholds` may be NULL for the
/// default sweep. The JSON report is byte-identical to the command line's.
///
/// # Safety
/// String arguments must be NUL-terminated (or NULL where allowed); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_evaluate(
    kind: *const c_char,
    pred_jsonl: *const c_char,
    gt_jsonl: *const c_char,
    thresholds: *const c_char,
    all_points: bool,
    jobs: usize,
    out: *mut *mut c_char,
) -> Gr3dStatus {
    guard(|| {
        let kind = c_str(kind, "kind")?;
        let pred = c_str(pred_jsonl, "predictions")?;
        let gt = c_str(gt_jsonl, "ground truth")?;
        let cfg = EvalConfig {
            thresholds: if thresholds.is_null() {
                eval::default_thresholds()
            } else {
                eval::parse_thresholds(c_str(thresholds, "thresholds")?)?
            },
            interpolation: if all_points {
                ApInterpolation::AllPoints
            } else {
                ApInterpolation::Point101
            },
            jobs: jobs.max(1),
        };
        let report = match kind {
            "3d" => eval::evaluate_3d(
                &io::parse_predictions_3d(pred, "<pred>")?,
                &io::parse_ground_truth_3d(gt, "<gt>")?,
                &cfg,
            )?,
            "2d" => eval::evaluate_2d(
                &io::parse_predictions_2d(pred, "<pred>")?,
                &io::parse_ground_truth_2d(gt, "<gt>")?,
                &cfg,
            )?,
            other => return Err(invalid(format!("unknown evaluation kind {other:?}"))),
        };
        put_string(out, report.to_json())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gr3dGcotReport {
    pub a_acc: f64,
    pub g_acc: f64,
    pub consistency: f64,
    pub num_records: usize,
}

/// Grounded-reasoning accuracy over record lines.
///
/// # Safety
/// `records_jsonl` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_evaluate_gcot(records_jsonl: *const c_char, out: *mut Gr3dGcotReport) -> Gr3dStatus {
    guard(|| {
        let src = c_str(records_jsonl, "records")?;
        let recs: Vec<GCoTRecord> = parse_jsonl(src, "<records>")?.into_iter().map(|l| l.value).collect();
        let r = eval::evaluate_gcot(&recs)?;
        *out_ref(out, "out")? = Gr3dGcotReport {
            a_acc: r.a_acc,
            g_acc: r.g_acc,
            consistency: r.consistency,
            num_records: r.num_records,
        };
        Ok(())
    })
}

/// Samples up to `n` depth-backed 3D points inside `region` (`[x1, y1, x2,
/// y2]`). `depth` is a row-major `width x height` raster in meters; `mask`
/// may be NULL, otherwise zero bytes mark invalid pixels. Points are written
/// as `x, y, z` triples into `out_xyz` (room for `3 n` doubles) and their
/// number into `out_count`.
///
/// # Safety
/// Buffers must have the sizes described above.
#[no_mangle]
pub unsafe extern "C" fn gr3d_sample_region_points(
    depth: *const f32,
    mask: *const u8,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    region: *const f64,
    n: usize,
    seed: u64,
    out_xyz: *mut f64,
    out_count: *mut usize,
) -> Gr3dStatus {
    guard(|| {
        let len = width as usize * height as usize;
        let values = slice(depth, len, "depth")?.iter().map(|&v| v as f64).collect();
        let mask = if mask.is_null() {
            None
        } else {
            Some(slice(mask, len, "mask")?.iter().map(|&b| b != 0).collect())
        };
        let map = DepthMap::new(width, height, values, mask)?;
        let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height)?;
        let region = box2d(slice(region, 4, "region")?)?;
        let pts = sample_region_points(&map, &k, &region, n, seed)?;
        let count = out_ref(out_count, "out_count")?;
        if !pts.is_empty() {
            if out_xyz.is_null() {
                return Err(null("out_xyz"));
            }
            let out = std::slice::from_raw_parts_mut(out_xyz, 3 * pts.len());
            for (o, p) in out.chunks_exact_mut(3).zip(&pts) {
                o.copy_from_slice(&[p.x, p.y, p.z]);
            }
        }
        *count = pts.len();
        Ok(())
    })
}

/// Opaque incremental parser.
pub struct Gr3dStreamParser(StreamParser);

#[no_mangle]
pub extern "C" fn gr3d_stream_parser_new() -> *mut Gr3dStreamParser {
    Box::into_raw(Box::new(Gr3dStreamParser(StreamParser::new())))
}

/// # Safety
/// `p` must come from [`gr3d_stream_parser_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gr3d_stream_parser_free(p: *mut Gr3dStreamParser) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn events_json(events: &[StreamEvent]) -> FfiResult<String> {
    to_jsonl(events)
}

/// Feeds `len` bytes; events completed so far are returned as JSON lines.
///
/// # Safety
/// `p` must be a live parser, `chunk` must hold `len` bytes and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_stream_parser_feed(
    p: *mut Gr3dStreamParser,
    chunk: *const u8,
    len: usize,
    out: *mut *mut c_char,
) -> Gr3dStatus {
    guard(|| {
        let p = out_ref(p, "parser")?;
        let events = p.0.feed_bytes(slice(chunk, len, "chunk")?);
        put_string(out, events_json(&events)?)
    })
}

/// Flushes the parser at end of input.
///
/// # Safety
/// `p` must be a live parser and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_stream_parser_finish(p: *mut Gr3dStreamParser, out: *mut *mut c_char) -> Gr3dStatus {
    guard(|| {
        let p = out_ref(p, "parser")?;
        let events = p.0.finish();
        put_string(out, events_json(&events)?)
    })
}

/// Opaque region-insertion protocol state.
pub struct Gr3dProtocol(ProtocolState);

/// What the decoder should do after a protocol call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gr3dAction {
    /// True when generation must pause until a region is inserted.
    pub paused: bool,
    /// The pending box when `paused`.
    pub region: [f64; 4],
}

fn action(a: Action) -> Gr3dAction {
    match a {
        Action::Continue => Gr3dAction::default(),
        Action::PauseForRegion(b) => Gr3dAction {
            paused: true,
            region: b.to_array(),
        },
    }
}

#[no_mangle]
pub extern "C" fn gr3d_protocol_new() -> *mut Gr3dProtocol {
    Box::into_raw(Box::new(Gr3dProtocol(ProtocolState::new())))
}

/// # Safety
/// `p` must come from [`gr3d_protocol_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gr3d_protocol_free(p: *mut Gr3dProtocol) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Consumes decoder output. `events` (may be NULL) receives the parse
/// events as JSON lines.
///
/// # Safety
/// `p` must be live, `chunk` NUL-terminated and `out_action` writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_protocol_decode(
    p: *mut Gr3dProtocol,
    chunk: *const c_char,
    out_action: *mut Gr3dAction,
    events: *mut *mut c_char,
) -> Gr3dStatus {
    guard(|| {
        let p = out_ref(p, "protocol")?;
        let (ev, a) = p.0.on_decode(c_str(chunk, "chunk")?)?;
        *out_ref(out_action, "out_action")? = action(a);
        if !events.is_null() {
            put_string(events, events_json(&ev)?)?;
        }
        Ok(())
    })
}

/// Inserts the region for the pending box and resumes decoding.
///
/// # Safety
/// `p` must be live, `region` must hold 4 doubles and `out_action` writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_protocol_insert_region(
    p: *mut Gr3dProtocol,
    region: *const f64,
    out_action: *mut Gr3dAction,
    events: *mut *mut c_char,
) -> Gr3dStatus {
    guard(|| {
        let p = out_ref(p, "protocol")?;
        let region = box2d(slice(region, 4, "region")?)?;
        let (ev, a) = p.0.on_region_inserted(&region)?;
        *out_ref(out_action, "out_action")? = action(a);
        if !events.is_null() {
            put_string(events, events_json(&ev)?)?;
        }
        Ok(())
    })
}

/// Ends decoding and returns the segment layout as JSON lines.
///
/// # Safety
/// `p` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gr3d_protocol_finish(p: *mut Gr3dProtocol, out: *mut *mut c_char) -> Gr3dStatus {
    guard(|| {
        let p = out_ref(p, "protocol")?;
        p.0.finish()?;
        put_string(out, to_jsonl(p.0.segments())?)
    })
}
