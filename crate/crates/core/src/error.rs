//! Crate-wide error type and result alias.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- geometry ----
    #[error("degenerate box ({xmin}, {ymin}, {xmax}, {ymax}): extents must be strictly positive")]
    DegenerateBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("non-finite box coordinate in ({xmin}, {ymin}, {xmax}, {ymax})")]
    NonFiniteBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("coordinate {value} cannot be represented as an exact rational")]
    InexactCoordinate { value: f64 },

    // ---- raster ----
    #[error("raster dimensions {width}x{height} must both be at least 1")]
    EmptyRaster { width: u32, height: u32 },
    #[error("pixel buffer holds {got} bytes, expected {expected} for {width}x{height}x3")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("upscale factor must be at least 1")]
    ZeroFactor,
    #[error("{path}: unsupported pixel format, expected 8-bit 3-channel RGB")]
    UnsupportedPixelFormat { path: PathBuf },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    // ---- external process protocols ----
    #[error("empty external command")]
    EmptyCommand,
    #[error("external command `{command}` failed with {status}{stderr}")]
    CommandFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("upscaler produced no output for tile `{tile_id}` (expected {path})")]
    MissingUpscaleOutput { tile_id: String, path: PathBuf },
    #[error(
        "upscaler output for tile `{tile_id}` is {got_w}x{got_h}, expected {want_w}x{want_h}"
    )]
    UpscaleDimensionMismatch {
        tile_id: String,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("{file}:{line}: invalid detection record: {reason}")]
    DetectionParse {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: invalid tile label record: {reason}")]
    TileLabelParse {
        file: String,
        line: usize,
        reason: String,
    },

    // ---- tiling ----
    #[error("tile size {tile_size} must exceed overlap {overlap}")]
    TileSizeNotAboveOverlap { tile_size: u32, overlap: u32 },
    #[error("placement `{tile_id}` ({offset_x},{offset_y} {w}x{h}) exceeds parent extent {parent_w}x{parent_h}")]
    PlacementOutOfBounds {
        tile_id: String,
        offset_x: u32,
        offset_y: u32,
        w: u32,
        h: u32,
        parent_w: u32,
        parent_h: u32,
    },
    #[error("duplicate tile id `{tile_id}` in manifest for scene `{scene_id}`")]
    DuplicateTileId { tile_id: String, scene_id: String },
    #[error("placement `{tile_id}` references unknown parent `{parent}`")]
    UnresolvedParent { tile_id: String, parent: String },
    #[error("unknown tile id `{tile_id}` in scene `{scene_id}`")]
    UnknownTileId { tile_id: String, scene_id: String },
    #[error("placement chain is empty")]
    EmptyChain,
    #[error("placement chain broken at `{tile_id}`: {reason}")]
    InvalidChain { tile_id: String, reason: String },
    #[error("manifest for scene `{scene_id}` is inconsistent: {reason}")]
    InvalidManifest { scene_id: String, reason: String },

    // ---- labels ----
    #[error("{path}: not a GeoJSON feature collection")]
    NotAFeatureCollection { path: PathBuf },
    #[error("class map line {line}: {reason}")]
    ClassMapParse { line: usize, reason: String },
    #[error("classes present in data but absent from the class map: {ids:?}")]
    UnmappedClasses { ids: Vec<i64> },
    #[error("split fraction {fraction} must lie strictly between 0 and 1")]
    BadSplitFraction { fraction: f64 },
    #[error("cannot split an empty scene list")]
    EmptySplit,
    #[error("visible fraction {value} must lie in [0, 1]")]
    BadVisibleFraction { value: f64 },

    // ---- detect_io ----
    #[error("confidence {value} outside (0, 1]")]
    BadConfidence { value: f64 },
    #[error("invalid mock detector parameters: {reason}")]
    BadMockParams { reason: String },

    // ---- eval ----
    #[error("invalid threshold grid: {reason}")]
    BadThresholdGrid { reason: String },
    #[error("average precision needs at least one PR point")]
    EmptyPrCurve,

    // ---- synth ----
    #[error("invalid synthesis spec: {reason}")]
    BadSynthSpec { reason: String },
    #[error("could not place object {index} after {attempts} attempts; scene too crowded")]
    InfeasiblePacking { index: usize, attempts: usize },

    // ---- pipeline / serialization ----
    #[error("invalid pipeline config: {reason}")]
    BadPipelineConfig { reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
