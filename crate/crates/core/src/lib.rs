//! Deterministic, weight-free toolkit for grounded visual reasoning data.
//!
//! The crate covers the pieces of a grounding-capable vision-language
//! pipeline that do not depend on neural weights:
//!
//! - [`geom2d`] / [`geom3d`]: pixel boxes and oriented camera-frame 3D boxes,
//!   including exact polytope-clipping 3D IoU.
//! - [`camera`]: pinhole intrinsics, focal-length normalization, dense depth
//!   point sampling and multi-view reference transforms.
//! - [`ground_text`]: the `<bbox>` / `<bbox3d>` / `<points3d>` text format,
//!   with a batch parser, a canonical serializer and a chunk-invariant
//!   incremental parser.
//! - [`region_protocol`]: the region-insertion state machine used at decode
//!   time and the teacher-forced layout used at training time.
//! - [`eval`]: greedy IoU matching, interpolated AP over IoU thresholds, and
//!   the answer/grounding/consistency triple.
//! - [`datagen`]: training record construction and conversation assembly.
//! - [`io`]: line-delimited record formats shared by the CLI and FFI layer.

pub mod camera;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geom2d;
pub mod geom3d;
pub mod ground_text;
pub mod io;
pub mod region_protocol;

pub use camera::{CameraIntrinsics, DepthMap, Pose};
pub use error::{Error, Result};
pub use geom2d::{Box2D, JitterParams};
pub use geom3d::{Box3D, EulerAngles, RotationMatrix};
